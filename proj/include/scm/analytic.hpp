#pragma once

// Exact solutions on an open link.
//
// With z_i = exp(-x_i / omega) the velocity law becomes the lower-triangular
// linear system
//
//   dz_i/dt = -(V_i/omega) z_i + (V_i/(kappa omega)) sum_{j ahead of i} z_j,
//
// solved front to back as a chain of first-order linear equations. Every
// solution is a sum of t^d exp(-V_j t / omega) terms, one exponential per
// distinct maximum speed, with the degree raised for repeated speeds.
//
// Each row is stored normalised by the vehicle's own z at the segment start
// and in segment-local time tau = t - t_start:
//
//   z_i(t) / z_i(t_start) = sum_j sum_d c_{i,j,d} tau^d exp(-V_j tau / omega)
//
// so a row never depends on the absolute scale of the positions.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scm/error.hpp"
#include "scm/model.hpp"
#include "scm/trace.hpp"

namespace scm {

/// Internal precision for coefficient tables.
using coeff_t = long double;

struct ZState {
    std::vector<double> z;
};

inline ZState to_z(std::span<const double> positions, double omega)
{
    validate_positions(positions);
    ZState out;
    out.z.reserve(positions.size());
    for (double x : positions)
        out.z.push_back(std::exp(-x / omega));
    return out;
}

inline std::vector<double> from_z(const ZState& state, double omega)
{
    std::vector<double> x;
    x.reserve(state.z.size());
    for (std::size_t i = 0; i < state.z.size(); ++i) {
        const double z = state.z[i];
        if (!(z > 0.0) || !std::isfinite(z))
            throw ValidationError("z[" + std::to_string(i) + "] must be finite and > 0");
        x.push_back(-omega * std::log(z));
    }
    return x;
}

/// One exponential of a row: poly(tau) * exp(-rate * tau).
struct RateTerm {
    std::size_t owner = 0; ///< smallest vehicle id with this maximum speed
    coeff_t rate = 0.0L;   ///< V_owner / omega
    std::vector<coeff_t> poly;
};

struct CoefficientRow {
    double x_start = 0.0;
    std::vector<RateTerm> terms; ///< sorted by owner
};

/// Flattened view of one coefficient c_{i,j,d}.
struct Coefficient {
    std::size_t owner = 0;
    std::size_t degree = 0;
    double value = 0.0;
};

struct AnalyticSegment {
    double t_start = 0.0;
    double t_end = std::numeric_limits<double>::infinity();
    std::vector<std::size_t> order;    ///< vehicle ids front to back
    std::vector<CoefficientRow> rows;  ///< indexed by vehicle id
    std::vector<std::string> warnings; ///< ill-conditioning notes from the solve

    std::vector<Coefficient> coefficients(std::size_t id) const
    {
        std::vector<Coefficient> out;
        for (const auto& term : rows.at(id).terms)
            for (std::size_t d = 0; d < term.poly.size(); ++d)
                out.push_back({term.owner, d, static_cast<double>(term.poly[d])});
        return out;
    }
};

struct PiecewiseTrajectory {
    std::vector<AnalyticSegment> segments;
    std::vector<PassingEvent> events;
    std::vector<VehicleSpec> vehicles;
    ModelParams params;
    double t_end = std::numeric_limits<double>::infinity();
};

struct Snapshot {
    double t = 0.0;
    std::vector<double> positions;  ///< by vehicle id
    std::vector<double> velocities; ///< by vehicle id
    std::vector<std::size_t> order; ///< front to back
};

struct PassingSolverOptions {
    double grid_step = 0.05;         ///< scan step for sign changes [s]
    double min_grid_step = 0.05 / 1024.0;
    double time_tolerance = 1e-10;   ///< bisection width [s]
    double overlap_tolerance = 1e-9; ///< gap below -tol at t_p counts as an earlier crossing [m]
    bool permissive = false;         ///< accept initial states with Gamma > 1
};

/// The scan grid was too coarse to isolate the first crossing.
class EventIsolationError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

namespace detail {

struct LogZ {
    coeff_t slow_rate = 0.0L; ///< smallest rate among live terms
    coeff_t log_sum = 0.0L;   ///< ln z = -slow_rate * tau + log_sum
};

inline coeff_t horner(const std::vector<coeff_t>& poly, coeff_t tau)
{
    coeff_t acc = 0.0L;
    for (std::size_t d = poly.size(); d-- > 0;)
        acc = acc * tau + poly[d];
    return acc;
}

inline bool is_zero(const std::vector<coeff_t>& poly)
{
    return std::all_of(poly.begin(), poly.end(), [](coeff_t c) { return c == 0.0L; });
}

inline coeff_t slowest_rate(const CoefficientRow& row)
{
    coeff_t slow = std::numeric_limits<coeff_t>::infinity();
    for (const auto& term : row.terms)
        if (!is_zero(term.poly))
            slow = std::min(slow, term.rate);
    return slow;
}

inline LogZ log_z(const CoefficientRow& row, coeff_t tau)
{
    const coeff_t slow = slowest_rate(row);
    coeff_t sum = 0.0L;
    for (const auto& term : row.terms)
        sum += horner(term.poly, tau) * std::exp(-(term.rate - slow) * tau);
    if (!(sum > 0.0L) || !std::isfinite(sum))
        throw NumericalError("analytic row lost positivity at tau=" + std::to_string(double(tau)));
    return {slow, std::log(sum)};
}

/// d ln z / d tau of a row.
inline coeff_t log_z_rate(const CoefficientRow& row, coeff_t tau)
{
    const coeff_t slow = slowest_rate(row);
    coeff_t num = 0.0L;
    coeff_t den = 0.0L;
    for (const auto& term : row.terms) {
        const coeff_t damp = std::exp(-(term.rate - slow) * tau);
        coeff_t dpoly = 0.0L;
        for (std::size_t d = term.poly.size(); d-- > 1;)
            dpoly = dpoly * tau + static_cast<coeff_t>(d) * term.poly[d];
        const coeff_t value = horner(term.poly, tau);
        num += (dpoly - term.rate * value) * damp;
        den += value * damp;
    }
    return num / den;
}

inline coeff_t row_position(const CoefficientRow& row, coeff_t tau, coeff_t omega)
{
    const auto lz = log_z(row, tau);
    return row.x_start + omega * (lz.slow_rate * tau - lz.log_sum);
}

/// x_front - x_back, combined before rounding so equal-rate parts cancel exactly.
inline double row_gap(const CoefficientRow& front, const CoefficientRow& back, coeff_t tau,
                      coeff_t omega)
{
    const auto a = log_z(front, tau);
    const auto b = log_z(back, tau);
    const coeff_t log_ratio = -(a.slow_rate - b.slow_rate) * tau + (a.log_sum - b.log_sum);
    return static_cast<double>(static_cast<coeff_t>(front.x_start) - back.x_start
                               - omega * log_ratio);
}

struct FleetRates {
    std::vector<std::size_t> owner;
    std::vector<coeff_t> rate;
};

inline FleetRates fleet_rates(std::span<const VehicleSpec> specs, double omega)
{
    FleetRates out;
    out.owner.resize(specs.size());
    out.rate.resize(specs.size());
    for (std::size_t i = 0; i < specs.size(); ++i) {
        std::size_t owner = i;
        for (std::size_t j = 0; j < i; ++j)
            if (specs[j].v_max == specs[i].v_max) {
                owner = j;
                break;
            }
        out.owner[i] = owner;
        out.rate[i] = static_cast<coeff_t>(specs[owner].v_max) / static_cast<coeff_t>(omega);
    }
    return out;
}

inline RateTerm& term_for(std::vector<RateTerm>& terms, std::size_t owner, coeff_t rate)
{
    auto it = std::lower_bound(terms.begin(), terms.end(), owner,
                               [](const RateTerm& t, std::size_t o) { return t.owner < o; });
    if (it == terms.end() || it->owner != owner)
        it = terms.insert(it, RateTerm{owner, rate, {}});
    return *it;
}

inline void add_scaled(std::vector<coeff_t>& into, const std::vector<coeff_t>& from, coeff_t scale)
{
    if (into.size() < from.size())
        into.resize(from.size(), 0.0L);
    for (std::size_t d = 0; d < from.size(); ++d)
        into[d] += scale * from[d];
}

/// Row of vehicle `id` given the already solved rows of the vehicles ahead of it.
inline CoefficientRow solve_row(std::size_t id, double x_start,
                                std::span<const std::size_t> ahead,
                                const std::vector<CoefficientRow>& rows,
                                std::span<const VehicleSpec> specs, const ModelParams& params,
                                const FleetRates& rates, std::vector<std::string>& warnings)
{
    const coeff_t omega = params.omega;
    const coeff_t own_rate = rates.rate[id];
    const std::size_t own_owner = rates.owner[id];
    const double v_own = specs[id].v_max;

    // Forcing (V_i/(kappa omega)) sum_j z_j, expressed in this row's normalisation.
    std::vector<RateTerm> forcing;
    const coeff_t gain = static_cast<coeff_t>(v_own) / (static_cast<coeff_t>(params.kappa) * omega);
    for (std::size_t j : ahead) {
        const auto& leader = rows[j];
        const coeff_t weight =
            std::exp((static_cast<coeff_t>(x_start) - static_cast<coeff_t>(leader.x_start)) / omega);
        if (weight == 0.0L)
            continue;
        for (const auto& term : leader.terms)
            add_scaled(term_for(forcing, term.owner, term.rate).poly, term.poly, gain * weight);
    }

    CoefficientRow row;
    row.x_start = x_start;
    coeff_t particular_at_zero = 0.0L;
    for (const auto& f : forcing) {
        if (is_zero(f.poly))
            continue;
        std::vector<coeff_t> q;
        if (f.owner == own_owner) {
            // Resonance: integrate the polynomial, degree goes up by one.
            q.assign(f.poly.size() + 1, 0.0L);
            for (std::size_t d = 0; d < f.poly.size(); ++d)
                q[d + 1] = f.poly[d] / static_cast<coeff_t>(d + 1);
        } else {
            const double v_other = specs[f.owner].v_max;
            if (std::abs(v_own - v_other) < 1e-9 * v_own)
                warnings.push_back("vehicles " + std::to_string(id) + " and "
                                   + std::to_string(f.owner)
                                   + " have nearly equal maximum speeds; coefficients are"
                                     " ill-conditioned");
            // q' + (a_i - a_k) q = p, solved from the top degree down.
            const coeff_t delta = own_rate - f.rate;
            q.assign(f.poly.size(), 0.0L);
            for (std::size_t d = f.poly.size(); d-- > 0;) {
                const coeff_t carry = d + 1 < q.size() ? static_cast<coeff_t>(d + 1) * q[d + 1] : 0.0L;
                q[d] = (f.poly[d] - carry) / delta;
            }
        }
        particular_at_zero += q[0];
        add_scaled(term_for(row.terms, f.owner, f.rate).poly, q, 1.0L);
    }
    // Homogeneous part fixes z_i(t_start) / z_i(t_start) = 1.
    auto& own = term_for(row.terms, own_owner, own_rate).poly;
    if (own.empty())
        own.push_back(0.0L);
    own[0] += 1.0L - particular_at_zero;
    return row;
}

/// Re-expresses a row relative to a later start `shift` (segment-local time).
inline CoefficientRow rebase_row(const CoefficientRow& row, coeff_t shift, coeff_t omega)
{
    const auto lz = log_z(row, shift);
    CoefficientRow out;
    out.x_start = static_cast<double>(row.x_start + omega * (lz.slow_rate * shift - lz.log_sum));
    for (const auto& term : row.terms) {
        const coeff_t factor = std::exp(-(term.rate - lz.slow_rate) * shift - lz.log_sum);
        const std::size_t n = term.poly.size();
        std::vector<coeff_t> shifted(n, 0.0L);
        // P(tau + shift) by Taylor expansion.
        for (std::size_t m = 0; m < n; ++m) {
            coeff_t binom = 1.0L;
            coeff_t power = 1.0L;
            coeff_t acc = 0.0L;
            for (std::size_t d = m; d < n; ++d) {
                acc += term.poly[d] * binom * power;
                binom = binom * static_cast<coeff_t>(d + 1) / static_cast<coeff_t>(d + 1 - m);
                power *= shift;
            }
            shifted[m] = acc * factor;
        }
        if (!is_zero(shifted))
            out.terms.push_back(RateTerm{term.owner, term.rate, std::move(shifted)});
    }
    return out;
}

inline void check_open_scenario(const Scenario& scenario, bool permissive)
{
    validate(scenario);
    if (is_ring(scenario.topology))
        throw ValidationError("analytic solutions exist only on an open link; use the numeric"
                              " engine for ring scenarios");
    if (!permissive) {
        LinkState state;
        for (const auto& v : scenario.vehicles)
            state.positions.push_back(v.x0);
        check_admissible(state, scenario.vehicles, scenario.params);
    }
}

/// Solves a segment. Rows of vehicles at ranks < `first_changed` are carried
/// over from `previous` (re-based to `t_start`); everything from that rank on
/// is solved afresh from `x_start`.
inline AnalyticSegment solve_segment(std::vector<std::size_t> order,
                                     std::span<const double> x_start, double t_start,
                                     std::span<const VehicleSpec> specs, const ModelParams& params,
                                     const AnalyticSegment* previous, std::size_t first_changed)
{
    AnalyticSegment seg;
    seg.t_start = t_start;
    seg.order = std::move(order);
    seg.rows.resize(specs.size());
    const auto rates = fleet_rates(specs, params.omega);

    std::size_t begin = 0;
    if (previous != nullptr) {
        const coeff_t shift = static_cast<coeff_t>(t_start) - previous->t_start;
        for (; begin < first_changed; ++begin) {
            const std::size_t id = seg.order[begin];
            seg.rows[id] = rebase_row(previous->rows[id], shift, params.omega);
        }
    }
    for (std::size_t r = begin; r < seg.order.size(); ++r) {
        const std::size_t id = seg.order[r];
        seg.rows[id] = solve_row(id, x_start[id], std::span(seg.order).first(r), seg.rows, specs,
                                 params, rates, seg.warnings);
    }
    return seg;
}

} // namespace detail

/// Positions (by vehicle id) of a segment at absolute time t.
inline std::vector<double> segment_positions(const AnalyticSegment& segment, double t,
                                             double omega)
{
    const coeff_t tau = static_cast<coeff_t>(t) - segment.t_start;
    std::vector<double> x(segment.rows.size());
    for (std::size_t id = 0; id < segment.rows.size(); ++id)
        x[id] = static_cast<double>(detail::row_position(segment.rows[id], tau, omega));
    return x;
}

inline Snapshot evaluate(const AnalyticSegment& segment, std::span<const VehicleSpec> specs,
                         const ModelParams& params, double t)
{
    Snapshot snap;
    snap.t = t;
    snap.order = segment.order;
    snap.positions = segment_positions(segment, t, params.omega);

    LinkState ranked;
    std::vector<VehicleSpec> ranked_specs;
    for (std::size_t id : segment.order) {
        ranked.positions.push_back(snap.positions[id]);
        ranked_specs.push_back(specs[id]);
    }
    const auto v = velocities(ranked, ranked_specs, params);
    snap.velocities.resize(v.size());
    for (std::size_t r = 0; r < v.size(); ++r)
        snap.velocities[segment.order[r]] = v[r];
    return snap;
}

/// Closed-form solution for a fixed ordering, valid for all t >= 0 when kappa <= 1
/// (otherwise only until the first pass).
inline AnalyticSegment solve_blocking(const Scenario& scenario, bool permissive = false)
{
    detail::check_open_scenario(scenario, permissive);
    std::vector<std::size_t> order(scenario.vehicles.size());
    std::vector<double> x(scenario.vehicles.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
        x[i] = scenario.vehicles[i].x0;
    }
    return detail::solve_segment(std::move(order), x, 0.0, scenario.vehicles, scenario.params,
                                 nullptr, 0);
}

struct DetectedPass {
    PassingEvent event;
    std::size_t rank = 0; ///< rank of the passed vehicle before the swap
};

/// Earliest crossing of an adjacent pair with a faster follower in
/// [t_start, min(t_end, horizon)]. Sign changes of the gap are located on a
/// uniform grid, bisected, and confirmed with the passing condition so that a
/// tangential approach (gap -> 0 without a completed pass) is not reported.
inline std::optional<DetectedPass> next_passing_event(const AnalyticSegment& segment,
                                                      std::span<const VehicleSpec> specs,
                                                      const ModelParams& params, double horizon,
                                                      const PassingSolverOptions& options = {})
{
    const double t_stop = std::min(segment.t_end, horizon);
    if (!(t_stop > segment.t_start))
        return std::nullopt;

    const auto& order = segment.order;
    std::vector<std::size_t> candidates;
    for (std::size_t r = 0; r + 1 < order.size(); ++r)
        if (specs[order[r + 1]].v_max > specs[order[r]].v_max)
            candidates.push_back(r);
    if (candidates.empty())
        return std::nullopt;

    const coeff_t omega = params.omega;
    auto gap = [&](std::size_t r, double t) {
        return detail::row_gap(segment.rows[order[r]], segment.rows[order[r + 1]],
                               static_cast<coeff_t>(t) - segment.t_start, omega);
    };

    std::vector<double> previous(candidates.size());
    for (std::size_t c = 0; c < candidates.size(); ++c)
        previous[c] = gap(candidates[c], segment.t_start);

    const double h = options.grid_step;
    double lo_t = segment.t_start;
    for (std::size_t k = 1;; ++k) {
        const double hi_t = std::min(segment.t_start + static_cast<double>(k) * h, t_stop);
        std::optional<DetectedPass> best;
        for (std::size_t c = 0; c < candidates.size(); ++c) {
            const std::size_t r = candidates[c];
            const double current = gap(r, hi_t);
            const bool crossed = previous[c] >= 0.0 && current < 0.0;
            previous[c] = current;
            if (!crossed)
                continue;

            double a = lo_t;
            double b = hi_t;
            while (b - a > options.time_tolerance) {
                const double mid = 0.5 * (a + b);
                if (mid <= a || mid >= b)
                    break;
                (gap(r, mid) >= 0.0 ? a : b) = mid;
            }
            const double t_p = b;

            // Congestion on the leader from everything ahead of it at t_p.
            const auto x = segment_positions(segment, t_p, params.omega);
            LinkState ahead;
            std::vector<VehicleSpec> ahead_specs;
            for (std::size_t q = 0; q <= r; ++q) {
                ahead.positions.push_back(x[order[q]]);
                ahead_specs.push_back(specs[order[q]]);
            }
            const double gamma_leader = congestion_factors_fast(ahead, ahead_specs, params).back();
            if (!passing_condition(params.kappa, gamma_leader, specs[order[r]].v_max,
                                   specs[order[r + 1]].v_max))
                continue;

            if (!best || t_p < best->event.t)
                best = DetectedPass{{t_p, order[r + 1], order[r]}, r};
        }

        if (best) {
            for (std::size_t r = 0; r + 1 < order.size(); ++r) {
                if (r == best->rank)
                    continue;
                if (gap(r, best->event.t) < -options.overlap_tolerance)
                    throw EventIsolationError(
                        "two crossings inside one scan step near t="
                        + std::to_string(best->event.t) + " s; refine the grid");
            }
            return best;
        }
        if (hi_t >= t_stop)
            return std::nullopt;
        lo_t = hi_t;
    }
}

/// Piecewise-analytic solution with passing: solve, find the next pass, swap the
/// pair, re-solve the pair and everyone behind it from the positions at t_p.
inline PiecewiseTrajectory solve_passing(const Scenario& scenario, double horizon,
                                         const PassingSolverOptions& options = {})
{
    if (!(horizon >= 0.0) || !std::isfinite(horizon))
        throw ValidationError("horizon must be finite and >= 0");
    PiecewiseTrajectory traj;
    traj.vehicles = scenario.vehicles;
    traj.params = scenario.params;
    traj.t_end = horizon;
    traj.segments.push_back(solve_blocking(scenario, options.permissive));

    const std::size_t n = scenario.vehicles.size();
    const std::size_t max_events = n * (n - 1) / 2;
    PassingSolverOptions scan = options;

    while (true) {
        auto& current = traj.segments.back();
        std::optional<DetectedPass> pass;
        while (true) {
            try {
                pass = next_passing_event(current, scenario.vehicles, scenario.params, horizon, scan);
                break;
            } catch (const EventIsolationError&) {
                if (scan.grid_step / 2.0 < scan.min_grid_step)
                    throw;
                scan.grid_step /= 2.0;
            }
        }
        if (!pass) {
            current.t_end = horizon;
            break;
        }
        if (traj.events.size() == max_events)
            throw NumericalError("more passing events than vehicle pairs; order relation violated");

        const double t_p = pass->event.t;
        current.t_end = t_p;
        traj.events.push_back(pass->event);

        auto order = current.order;
        std::swap(order[pass->rank], order[pass->rank + 1]);
        const auto x = segment_positions(current, t_p, scenario.params.omega);
        auto next = detail::solve_segment(std::move(order), x, t_p, scenario.vehicles,
                                          scenario.params, &current, pass->rank);
        traj.segments.push_back(std::move(next));
    }
    return traj;
}

inline const AnalyticSegment& segment_at(const PiecewiseTrajectory& traj, double t)
{
    if (traj.segments.empty())
        throw ValidationError("trajectory has no segments");
    if (!(t >= traj.segments.front().t_start) || !(t <= traj.t_end))
        throw ValidationError("t=" + std::to_string(t) + " is outside the trajectory span [0, "
                              + std::to_string(traj.t_end) + "]");
    auto it = std::upper_bound(traj.segments.begin(), traj.segments.end(), t,
                               [](double value, const AnalyticSegment& s) { return value < s.t_start; });
    return *(it - 1);
}

inline Snapshot evaluate(const PiecewiseTrajectory& traj, double t)
{
    return evaluate(segment_at(traj, t), traj.vehicles, traj.params, t);
}

/// Samples a trajectory at the given times into a trace (events up to the last time).
inline SimTrace sample_trajectory(const PiecewiseTrajectory& traj, std::span<const double> times)
{
    SimTrace trace;
    trace.topology = OpenLink{};
    for (double t : times) {
        auto snap = evaluate(traj, t);
        trace.times.push_back(t);
        trace.positions.push_back(std::move(snap.positions));
        trace.velocities.push_back(std::move(snap.velocities));
    }
    const double last = times.empty() ? 0.0 : times.back();
    for (const auto& e : traj.events)
        if (e.t <= last)
            trace.events.push_back(e);
    return trace;
}

/// 0, step, 2 step, ..., t_end (t_end always included).
inline std::vector<double> uniform_times(double t_end, double step)
{
    if (!(step > 0.0) || !(t_end >= 0.0) || !std::isfinite(t_end))
        throw ValidationError("sample grid needs step > 0 and a finite t_end >= 0");
    std::vector<double> times;
    for (std::size_t k = 0;; ++k) {
        const double t = static_cast<double>(k) * step;
        if (t >= t_end - 1e-9 * step) {
            times.push_back(t_end);
            break;
        }
        times.push_back(t);
    }
    return times;
}

} // namespace scm
