#pragma once

// Equilibria, fundamental diagram, linear string stability and executable
// checks of the model's qualitative properties.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "scm/error.hpp"
#include "scm/model.hpp"
#include "scm/numeric.hpp"
#include "scm/trace.hpp"

namespace scm {

// ---------------------------------------------------------------------------
// ring equilibrium and fundamental diagram

struct RingEquilibrium {
    double v_eq = 0.0;         ///< [m/s], clamped at 0
    bool over_capacity = false; ///< closed form went negative before clamping
};

/// Uniformly spaced identical vehicles on a ring, gap 1/rho, summed in closed
/// form as a geometric series over the N - 1 other vehicles.
inline RingEquilibrium ring_equilibrium_velocity(double rho, const ModelParams& params,
                                                 double length, double v_max)
{
    validate(params);
    if (!(rho > 0.0) || !std::isfinite(rho))
        throw ValidationError("rho must be finite and > 0");
    if (!(length > 0.0) || !std::isfinite(length))
        throw ValidationError("ring length must be finite and > 0");
    if (!(v_max > 0.0) || !std::isfinite(v_max))
        throw ValidationError("v_max must be finite and > 0");
    if (rho * length < 1.0 - 1e-12)
        throw ValidationError("rho * L must be at least one vehicle");

    const double ratio = -std::expm1(-length / params.omega) / -std::expm1(-1.0 / (rho * params.omega));
    const double v = v_max * (1.0 + 1.0 / params.kappa - ratio / params.kappa);
    if (v < 0.0)
        return {0.0, true};
    return {v, false};
}

struct DiagramPoint {
    double rho = 0.0;
    double v_eq = 0.0;
    double q = 0.0;
};

struct DiagramSeries {
    std::vector<DiagramPoint> points;
    std::size_t peak_index = 0;

    double peak_rho() const { return points.at(peak_index).rho; }
    double peak_q() const { return points.at(peak_index).q; }
};

inline DiagramSeries fundamental_diagram(const ModelParams& params, double v_max, double length,
                                         std::span<const double> rho_grid)
{
    if (rho_grid.empty())
        throw ValidationError("density grid is empty");
    DiagramSeries series;
    for (std::size_t k = 0; k < rho_grid.size(); ++k) {
        if (k > 0 && !(rho_grid[k] > rho_grid[k - 1]))
            throw ValidationError("density grid must be strictly ascending");
        const double rho = rho_grid[k];
        const double v = ring_equilibrium_velocity(rho, params, length, v_max).v_eq;
        series.points.push_back({rho, v, rho * v});
        if (series.points.back().q > series.points[series.peak_index].q)
            series.peak_index = k;
    }
    return series;
}

/// START:STOP:STEP grid, STOP included when it lies on the grid.
inline std::vector<double> density_grid(double start, double stop, double step)
{
    if (!(step > 0.0) || !(start > 0.0) || !(stop >= start))
        throw ValidationError("density grid needs 0 < start <= stop and step > 0");
    std::vector<double> grid;
    const auto count = static_cast<std::size_t>(std::floor((stop - start) / step + 1e-9));
    for (std::size_t k = 0; k <= count; ++k)
        grid.push_back(start + static_cast<double>(k) * step);
    return grid;
}

// ---------------------------------------------------------------------------
// open-link platoon equilibrium and string stability

struct EquilibriumSpec {
    double v_eq = 0.0;
    /// gaps[n - 1] = s_n = x_{n-1} - x_n for followers n = 1..N-1 (open link),
    /// or a single entry L/N on a ring.
    std::vector<double> gaps;
};

namespace detail {

inline void check_platoon(std::span<const VehicleSpec> specs, const ModelParams& params)
{
    validate(params);
    validate_specs(specs);
    const double v0 = specs.front().v_max;
    for (std::size_t n = 1; n < specs.size(); ++n)
        if (!(specs[n].v_max > v0))
            throw ValidationError("vehicle " + std::to_string(n) + " has V=" + std::to_string(specs[n].v_max)
                                  + " <= leader V_0=" + std::to_string(v0)
                                  + "; it splits from the platoon and has no equilibrium gap");
}

/// sum_{i<n} exp(-s_{n,i}/omega), with s_{n,i} the distance from vehicle i to n.
inline double ahead_weight(std::span<const double> gaps, std::size_t n, double omega)
{
    double total = 0.0;
    double distance = 0.0;
    for (std::size_t i = n; i-- > 0;) {
        distance += gaps[i]; // gaps[i] = s_{i+1}
        total += std::exp(-distance / omega);
    }
    return total;
}

} // namespace detail

/// Gaps of the open-link platoon cruising at the leader's speed V_0, found front
/// to back by bisection on each follower's velocity equation.
inline EquilibriumSpec platoon_equilibrium_gaps(std::span<const VehicleSpec> specs,
                                                const ModelParams& params)
{
    detail::check_platoon(specs, params);
    const double v0 = specs.front().v_max;
    EquilibriumSpec eq;
    eq.v_eq = v0;
    std::vector<double> gaps;
    for (std::size_t n = 1; n < specs.size(); ++n) {
        const double vn = specs[n].v_max;
        auto excess = [&](double s) {
            gaps.push_back(s);
            const double w = detail::ahead_weight(gaps, n, params.omega);
            gaps.pop_back();
            return vn * (1.0 - w / params.kappa) - v0;
        };
        if (excess(0.0) >= 0.0)
            throw NumericalError("vehicle " + std::to_string(n)
                                 + " has no positive equilibrium gap: with kappa="
                                 + std::to_string(params.kappa) + " it passes instead of queueing");
        double lo = 0.0;
        double hi = params.omega;
        while (excess(hi) < 0.0) {
            lo = hi;
            hi *= 2.0;
            if (!std::isfinite(hi))
                throw NumericalError("equilibrium gap bracket diverged for vehicle " + std::to_string(n));
        }
        while (hi - lo > 1e-12) {
            const double mid = 0.5 * (lo + hi);
            if (mid <= lo || mid >= hi)
                break;
            (excess(mid) < 0.0 ? lo : hi) = mid;
        }
        gaps.push_back(0.5 * (lo + hi));
    }
    eq.gaps = std::move(gaps);
    return eq;
}

/// Linearised gap dynamics dY/dt = A Y about a platoon equilibrium;
/// A[n-1][j-1] = -(V_n/(kappa omega)) sum_{0<=i<j} exp(-s_{n,i}/omega) for 1 <= j <= n.
inline std::vector<std::vector<double>> linearized_gap_matrix(std::span<const VehicleSpec> specs,
                                                               const ModelParams& params,
                                                               const EquilibriumSpec& eq)
{
    const std::size_t m = specs.size() - 1;
    std::vector<std::vector<double>> a(m, std::vector<double>(m, 0.0));
    for (std::size_t n = 1; n <= m; ++n) {
        const double gain = -specs[n].v_max / (params.kappa * params.omega);
        // distances s_{n,i} for i = n-1 down to 0
        std::vector<double> weight(n);
        double distance = 0.0;
        for (std::size_t i = n; i-- > 0;) {
            distance += eq.gaps[i];
            weight[i] = std::exp(-distance / params.omega);
        }
        double partial = 0.0;
        for (std::size_t j = 1; j <= n; ++j) {
            partial += weight[j - 1];
            a[n - 1][j - 1] = gain * partial;
        }
    }
    return a;
}

struct StabilityReport {
    std::vector<double> eigenvalues;                ///< lambda_n, n = 1..N-1 [1/s]
    std::vector<std::optional<double>> fitted_rates; ///< measured decay rate per follower
    std::vector<std::optional<double>> relative_errors;
};

/// lambda_n = (V_0 - V_n) / omega.
inline StabilityReport string_stability_eigenvalues(std::span<const VehicleSpec> specs,
                                                    const ModelParams& params)
{
    detail::check_platoon(specs, params);
    StabilityReport report;
    for (std::size_t n = 1; n < specs.size(); ++n)
        report.eigenvalues.push_back((specs.front().v_max - specs[n].v_max) / params.omega);
    return report;
}

struct DecayFitWindow {
    double lower = 1e-6; ///< fraction of s_n^eq
    double upper = 1e-1;
};

/// Least-squares slope of ln|y_n(t)| over the samples where |y_n| lies inside
/// the window, y_n being the gap deviation from equilibrium. Followers with
/// fewer than three samples in the window get no fit.
inline StabilityReport measure_decay_rates(const SimTrace& trace, const EquilibriumSpec& eq,
                                           std::span<const double> predicted = {},
                                           const DecayFitWindow& window = {})
{
    const std::size_t followers = eq.gaps.size();
    if (trace.vehicles() != followers + 1)
        throw ValidationError("trace has " + std::to_string(trace.vehicles())
                              + " vehicles but the equilibrium describes "
                              + std::to_string(followers + 1));
    StabilityReport report;
    report.eigenvalues.assign(predicted.begin(), predicted.end());
    bool any = false;
    for (std::size_t n = 1; n <= followers; ++n) {
        const double s_eq = eq.gaps[n - 1];
        double st = 0.0, sy = 0.0, stt = 0.0, sty = 0.0;
        std::size_t count = 0;
        for (std::size_t k = 0; k < trace.samples(); ++k) {
            const double y = trace.positions[k][n - 1] - trace.positions[k][n] - s_eq;
            const double mag = std::abs(y);
            if (mag < window.lower * s_eq || mag > window.upper * s_eq)
                continue;
            const double t = trace.times[k];
            const double ly = std::log(mag);
            st += t;
            sy += ly;
            stt += t * t;
            sty += t * ly;
            ++count;
        }
        std::optional<double> rate;
        if (count >= 3) {
            const double c = static_cast<double>(count);
            const double denom = c * stt - st * st;
            if (denom > 0.0)
                rate = (c * sty - st * sy) / denom;
        }
        report.fitted_rates.push_back(rate);
        if (rate && n - 1 < predicted.size() && predicted[n - 1] != 0.0)
            report.relative_errors.push_back(std::abs(*rate - predicted[n - 1]) / std::abs(predicted[n - 1]));
        else
            report.relative_errors.push_back(std::nullopt);
        any = any || rate.has_value();
    }
    if (!any)
        throw ValidationError("decay fit window is empty for every follower (perturbation too small"
                              " or too large)");
    return report;
}

/// Open-link platoon at equilibrium (leader at `leader_x`) with vehicle
/// `displaced` moved forward by `displacement` metres.
inline Scenario perturbed_platoon(std::span<const VehicleSpec> specs, const ModelParams& params,
                                  const EquilibriumSpec& eq, std::size_t displaced,
                                  double displacement, double leader_x = 0.0)
{
    Scenario scenario;
    scenario.params = params;
    double x = leader_x;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        if (i > 0)
            x -= eq.gaps[i - 1];
        VehicleSpec v = specs[i];
        v.id = i;
        v.x0 = x + (i == displaced ? displacement : 0.0);
        scenario.vehicles.push_back(v);
    }
    return scenario;
}

struct DecayExperiment {
    double relative_displacement = 0.05; ///< initial push, as a fraction of the follower's gap
    double decades = 14.0;               ///< horizon in units of 1/|lambda_n|
    double dt = 0.01;
    DecayFitWindow window;
};

/// Measures each follower's gap decay rate from its own run: follower n alone is
/// pushed forward, so gaps ahead of it stay at equilibrium and y_n decays as a
/// single exponential (a joint perturbation mixes in t^k e^{lambda t} terms when
/// followers share a speed).
inline StabilityReport measure_string_stability(std::span<const VehicleSpec> specs, const ModelParams& params,
                                                const DecayExperiment& experiment = {})
{
    const auto eq = platoon_equilibrium_gaps(specs, params);
    auto report = string_stability_eigenvalues(specs, params);
    for (std::size_t n = 1; n < specs.size(); ++n) {
        const double lambda = report.eigenvalues[n - 1];
        const auto scenario = perturbed_platoon(specs, params, eq, n,
                                                experiment.relative_displacement * eq.gaps[n - 1]);
        IntegratorConfig config;
        config.dt = experiment.dt;
        config.horizon = experiment.decades / std::abs(lambda);
        const auto trace = simulate(scenario, config);
        std::vector<double> predicted(report.eigenvalues.begin(), report.eigenvalues.end());
        std::optional<double> rate;
        try {
            rate = measure_decay_rates(trace, eq, predicted, experiment.window).fitted_rates[n - 1];
        } catch (const ValidationError&) {
        }
        report.fitted_rates.push_back(rate);
        if (rate)
            report.relative_errors.push_back(std::abs(*rate - lambda) / std::abs(lambda));
        else
            report.relative_errors.push_back(std::nullopt);
    }
    return report;
}

// ---------------------------------------------------------------------------
// property checks

enum class Verdict { Pass, Fail, NotApplicable };

inline const char* to_string(Verdict v)
{
    switch (v) {
    case Verdict::Pass:
        return "pass";
    case Verdict::Fail:
        return "FAIL";
    case Verdict::NotApplicable:
        return "n/a";
    }
    return "?";
}

struct PropertyCheck {
    char key = '?';
    std::string name;
    Verdict verdict = Verdict::NotApplicable;
    std::string detail; ///< first counterexample or summary
};

struct TheoremReport {
    std::vector<PropertyCheck> checks;
    std::optional<double> last_event_time;

    bool all_hold() const
    {
        return std::none_of(checks.begin(), checks.end(),
                            [](const PropertyCheck& c) { return c.verdict == Verdict::Fail; });
    }
    const PropertyCheck& at(char key) const
    {
        for (const auto& c : checks)
            if (c.key == key)
                return c;
        throw std::out_of_range(std::string("no check ") + key);
    }
};

struct TheoremOptions {
    double velocity_floor = -1e-12;  ///< (a) lowest admissible velocity [m/s]
    double split_margin_per_omega = 0.01; ///< (g) required gap growth, in units of omega
};

/// Runs checks (a)-(g) against a completed trace of `scenario`:
///   a  velocities never negative
///   b  every pass has the faster vehicle overtaking the slower one
///   c  kappa <= 1 produces no passes
///   d  no pair swaps twice (order changes are finite; reports the last one)
///   e  above the sorting threshold the final order is sorted by V
///   f  two vehicles: a pass happens iff kappa > V_1 / (V_1 - V_0)
///   g  a trailing vehicle as slow as the leader drifts away from the platoon
inline TheoremReport verify_theorems(const SimTrace& trace, const Scenario& scenario,
                                     const TheoremOptions& options = {})
{
    const auto& specs = scenario.vehicles;
    const auto& params = scenario.params;
    const std::size_t n = specs.size();
    if (trace.samples() == 0 || trace.vehicles() != n)
        throw ValidationError("trace does not match the scenario");
    const bool ring = is_ring(scenario.topology);
    TheoremReport report;

    {
        PropertyCheck c{'a', "non-negative velocity", Verdict::Pass, {}};
        double lowest = trace.velocities[0][0];
        for (std::size_t k = 0; k < trace.samples(); ++k)
            for (std::size_t i = 0; i < n; ++i) {
                const double v = trace.velocities[k][i];
                lowest = std::min(lowest, v);
                if (v < options.velocity_floor && c.verdict == Verdict::Pass) {
                    c.verdict = Verdict::Fail;
                    c.detail = "vehicle " + std::to_string(i) + " at t=" + std::to_string(trace.times[k])
                               + " has v=" + std::to_string(v);
                }
            }
        if (c.verdict == Verdict::Pass)
            c.detail = "min velocity " + std::to_string(lowest);
        report.checks.push_back(c);
    }

    {
        PropertyCheck c{'b', "no overtaking by a slower vehicle", Verdict::Pass,
                        std::to_string(trace.events.size()) + " pass(es)"};
        for (const auto& e : trace.events)
            if (!(specs[e.passer].v_max > specs[e.passed].v_max)) {
                c.verdict = Verdict::Fail;
                c.detail = "vehicle " + std::to_string(e.passer) + " (V=" + std::to_string(specs[e.passer].v_max)
                           + ") passed vehicle " + std::to_string(e.passed)
                           + " (V=" + std::to_string(specs[e.passed].v_max) + ") at t=" + std::to_string(e.t);
                break;
            }
        if (ring)
            c = {'b', c.name, Verdict::NotApplicable, "passes are not tracked on a ring"};
        report.checks.push_back(c);
    }

    {
        PropertyCheck c{'c', "no passing when kappa <= 1", Verdict::NotApplicable, "kappa > 1"};
        if (ring) {
            c.detail = "passes are not tracked on a ring";
        } else if (params.kappa <= 1.0) {
            c.verdict = trace.events.empty() ? Verdict::Pass : Verdict::Fail;
            c.detail = trace.events.empty() ? "0 passes"
                                            : "pass at t=" + std::to_string(trace.events.front().t);
        }
        report.checks.push_back(c);
    }

    {
        PropertyCheck c{'d', "order settles (each pair swaps at most once)", Verdict::Pass, {}};
        std::set<std::pair<std::size_t, std::size_t>> seen;
        for (const auto& e : trace.events) {
            auto key = std::minmax(e.passer, e.passed);
            if (!seen.insert(key).second && c.verdict == Verdict::Pass) {
                c.verdict = Verdict::Fail;
                c.detail = "vehicles " + std::to_string(key.first) + " and " + std::to_string(key.second)
                           + " swapped again at t=" + std::to_string(e.t);
            }
        }
        if (!trace.events.empty())
            report.last_event_time = trace.events.back().t;
        if (c.verdict == Verdict::Pass)
            c.detail = report.last_event_time
                           ? "no events after t=" + std::to_string(*report.last_event_time)
                           : "no events";
        if (ring)
            c = {'d', c.name, Verdict::NotApplicable, "passes are not tracked on a ring"};
        report.checks.push_back(c);
    }

    const auto regime = classify_regime(specs, params);
    const auto& final_x = trace.positions.back();
    {
        PropertyCheck c{'e', "fleet ends sorted by V above the sorting threshold",
                        Verdict::NotApplicable, "kappa not above the threshold"};
        if (ring) {
            c.detail = "open link only";
        } else if (regime.regime == Regime::PassingTotal) {
            std::vector<std::size_t> ids(n);
            for (std::size_t i = 0; i < n; ++i)
                ids[i] = i;
            std::stable_sort(ids.begin(), ids.end(),
                             [&](std::size_t a, std::size_t b) { return final_x[a] > final_x[b]; });
            c.verdict = Verdict::Pass;
            c.detail = "sorted at t=" + std::to_string(trace.times.back());
            for (std::size_t r = 0; r + 1 < n; ++r)
                if (specs[ids[r]].v_max < specs[ids[r + 1]].v_max) {
                    c.verdict = Verdict::Fail;
                    c.detail = "vehicle " + std::to_string(ids[r]) + " still ahead of faster vehicle "
                               + std::to_string(ids[r + 1]) + " at t=" + std::to_string(trace.times.back());
                    break;
                }
        }
        report.checks.push_back(c);
    }

    {
        PropertyCheck c{'f', "two-vehicle passing threshold", Verdict::NotApplicable,
                        "needs exactly two vehicles with a faster follower"};
        if (!ring && n == 2 && specs[1].v_max > specs[0].v_max) {
            const double threshold = specs[1].v_max / (specs[1].v_max - specs[0].v_max);
            const bool expected = params.kappa > threshold;
            const bool passed = !trace.events.empty();
            c.verdict = expected == passed ? Verdict::Pass : Verdict::Fail;
            c.detail = "kappa=" + std::to_string(params.kappa) + " threshold=" + std::to_string(threshold)
                       + (passed ? ", passed" : ", no pass");
        }
        report.checks.push_back(c);
    }

    {
        PropertyCheck c{'g', "slow trailing vehicle leaves the platoon", Verdict::NotApplicable,
                        "no trailing vehicle with V_n = V_0 behind faster followers"};
        if (!ring && params.kappa <= 1.0 && n >= 3) {
            const double v0 = specs[0].v_max;
            std::size_t trailing = 0;
            for (std::size_t k = 1; k < n; ++k) {
                if (specs[k].v_max == v0) {
                    trailing = k >= 2 ? k : 0;
                    break;
                }
                if (!(specs[k].v_max > v0))
                    break;
            }
            if (trailing > 0 && trace.samples() >= 3) {
                const double t_end = trace.times.back();
                const auto mid = static_cast<std::size_t>(
                    std::lower_bound(trace.times.begin(), trace.times.end(), 0.5 * t_end) - trace.times.begin());
                auto gap = [&](std::size_t k) {
                    return trace.positions[k][trailing - 1] - trace.positions[k][trailing];
                };
                const double growth = gap(trace.samples() - 1) - gap(mid);
                const double margin = options.split_margin_per_omega * params.omega;
                c.verdict = growth > margin ? Verdict::Pass : Verdict::Fail;
                c.detail = "vehicle " + std::to_string(trailing) + " gap grew by " + std::to_string(growth)
                           + " m over the second half (margin " + std::to_string(margin) + " m)";
            }
        }
        report.checks.push_back(c);
    }
    return report;
}

} // namespace scm
