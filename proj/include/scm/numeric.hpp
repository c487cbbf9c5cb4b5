#pragma once

// Fixed-step RK4 integration of the velocity law on open links and rings.
//
// The integrated variable is the lag behind free flow, eta_i = x_i(0) + V_i t - x_i,
// with d eta_i / dt = V_i Gamma_i. An unobstructed vehicle therefore moves at
// exactly V_i and the state stays small for most of a run.
//
// On an open link the engine keeps a front-to-back order. A step whose end
// state shows an adjacent pair inverted is located on the cubic Hermite dense
// output, re-integrated up to the crossing, and the pair is swapped there if
// the follower really is faster at contact (a tangential touch is not a pass).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scm/error.hpp"
#include "scm/model.hpp"
#include "scm/trace.hpp"

namespace scm {

struct IntegratorConfig {
    double dt = 0.01;             ///< step [s]
    double horizon = 0.0;         ///< end time [s]
    std::size_t sample_every = 1; ///< keep every k-th step in the trace
    bool adaptive = false;        ///< step doubling inside each dt
    double tolerance = 1e-8;      ///< relative tolerance of the adaptive mode
    bool permissive = false;      ///< accept initial states with Gamma > 1
    /// Follower must out-run its leader by this fraction of its V at contact
    /// for a crossing to count as a pass.
    double contact_velocity_tolerance = 1e-12;
};

inline void validate(const IntegratorConfig& config)
{
    if (!(std::isfinite(config.dt) && config.dt > 0.0))
        throw ValidationError("dt must be finite and > 0");
    if (!(std::isfinite(config.horizon) && config.horizon >= 0.0))
        throw ValidationError("horizon must be finite and >= 0");
    if (config.sample_every < 1)
        throw ValidationError("sample_every must be >= 1");
    if (config.adaptive && !(config.tolerance > 0.0))
        throw ValidationError("adaptive tolerance must be > 0");
}

/// dx/dt for a state. On an open link slot k is the k-th vehicle from the front.
inline std::vector<double> derivative(const LinkState& state, std::span<const VehicleSpec> specs,
                                      const ModelParams& params)
{
    return velocities(state, specs, params);
}

namespace detail {

class Integrator {
public:
    Integrator(const Scenario& scenario, const IntegratorConfig& config)
        : specs_(scenario.vehicles), params_(scenario.params), topology_(scenario.topology),
          config_(config), ring_(is_ring(scenario.topology)), n_(scenario.vehicles.size()),
          eta_(n_, 0.0), order_(n_)
    {
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        ranked_.topology = topology_;
        ranked_.positions.resize(n_);
        ranked_specs_.resize(n_);
        for (std::size_t r = 0; r < n_; ++r)
            ranked_specs_[r] = specs_[order_[r]];
    }

    const std::vector<double>& eta() const { return eta_; }
    std::vector<double> positions(double t, std::span<const double> eta) const
    {
        std::vector<double> x(n_);
        for (std::size_t i = 0; i < n_; ++i)
            x[i] = specs_[i].x0 + specs_[i].v_max * t - eta[i];
        return x;
    }

    /// Velocities by vehicle id.
    std::vector<double> velocities_at(double t, std::span<const double> eta)
    {
        const auto gamma = congestion(t, eta);
        std::vector<double> v(n_);
        for (std::size_t i = 0; i < n_; ++i)
            v[i] = gamma[i] == 0.0 ? specs_[i].v_max : specs_[i].v_max * (1.0 - gamma[i]);
        return v;
    }

    const std::vector<PassingEvent>& events() const { return events_; }

    /// Integrates from t_from to t_to, handling any passes on the way.
    void advance(double t_from, double t_to, std::size_t step_index)
    {
        double t = t_from;
        step_index_ = step_index;
        while (t < t_to) {
            double h = t_to - t;
            std::vector<double> next;
            if (config_.adaptive)
                next = adaptive_step(t, h);
            else
                next = rk4(t, eta_, h);
            check_finite(next, step_index);

            if (!ring_) {
                if (auto crossing = first_pass(t, h, next)) {
                    const double theta = crossing->second;
                    eta_ = theta > 0.0 ? rk4(t, eta_, theta) : eta_;
                    check_finite(eta_, step_index);
                    const std::size_t r = crossing->first;
                    events_.push_back({t + theta, order_[r + 1], order_[r]});
                    std::swap(order_[r], order_[r + 1]);
                    std::swap(ranked_specs_[r], ranked_specs_[r + 1]);
                    t += theta;
                    continue;
                }
            }
            eta_ = std::move(next);
            t = (h == t_to - t) ? t_to : t + h;
        }
    }

private:
    std::vector<double> congestion(double t, std::span<const double> eta)
    {
        for (std::size_t r = 0; r < n_; ++r) {
            const std::size_t id = ring_ ? r : order_[r];
            const double x = specs_[id].x0 + specs_[id].v_max * t - eta[id];
            if (!std::isfinite(x))
                throw NumericalError("non-finite position for vehicle " + std::to_string(id) + " at step "
                                     + std::to_string(step_index_));
            ranked_.positions[r] = ring_ ? scm::detail::wrap(x, ring_length(topology_)) : x;
        }
        auto by_rank = congestion_factors_fast(ranked_, ring_ ? specs_ : ranked_specs_, params_);
        if (ring_)
            return by_rank;
        std::vector<double> by_id(n_);
        for (std::size_t r = 0; r < n_; ++r)
            by_id[order_[r]] = by_rank[r];
        return by_id;
    }

    std::vector<double> rates(double t, std::span<const double> eta)
    {
        auto gamma = congestion(t, eta);
        for (std::size_t i = 0; i < n_; ++i)
            gamma[i] *= specs_[i].v_max;
        return gamma;
    }

    std::vector<double> rk4(double t, std::span<const double> eta, double h)
    {
        const auto k1 = rates(t, eta);
        std::vector<double> tmp(n_);
        for (std::size_t i = 0; i < n_; ++i)
            tmp[i] = eta[i] + 0.5 * h * k1[i];
        const auto k2 = rates(t + 0.5 * h, tmp);
        for (std::size_t i = 0; i < n_; ++i)
            tmp[i] = eta[i] + 0.5 * h * k2[i];
        const auto k3 = rates(t + 0.5 * h, tmp);
        for (std::size_t i = 0; i < n_; ++i)
            tmp[i] = eta[i] + h * k3[i];
        const auto k4 = rates(t + h, tmp);
        std::vector<double> out(n_);
        for (std::size_t i = 0; i < n_; ++i)
            out[i] = eta[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        return out;
    }

    /// Step doubling; shrinks `h` until the two estimates agree, grows the
    /// suggestion for the next call.
    std::vector<double> adaptive_step(double t, double& h)
    {
        if (adaptive_h_ > 0.0)
            h = std::min(h, adaptive_h_);
        for (int attempt = 0; attempt < 60; ++attempt) {
            const auto full = rk4(t, eta_, h);
            const auto half = rk4(t, eta_, 0.5 * h);
            auto both = rk4(t + 0.5 * h, half, 0.5 * h);
            const auto x = positions(t + h, both);
            double err = 0.0;
            for (std::size_t i = 0; i < n_; ++i)
                err = std::max(err, std::abs(both[i] - full[i])
                                        / (config_.tolerance * (1.0 + std::abs(x[i]))));
            if (err <= 1.0 || !std::isfinite(err)) {
                const double grow = err > 0.0 ? 0.9 * std::pow(err, -0.2) : 4.0;
                adaptive_h_ = h * std::clamp(grow, 1.0, 4.0);
                for (std::size_t i = 0; i < n_; ++i)
                    both[i] += (both[i] - full[i]) / 15.0;
                return both;
            }
            h *= std::clamp(0.9 * std::pow(err, -0.2), 0.1, 0.5);
        }
        throw NumericalError("adaptive step size underflow at t=" + std::to_string(t));
    }

    /// (rank of the passed vehicle, time offset of the crossing) of the first
    /// confirmed pass inside [t, t + h], if any.
    std::optional<std::pair<std::size_t, double>> first_pass(double t, double h,
                                                             std::span<const double> next)
    {
        const auto x0 = positions(t, eta_);
        const auto x1 = positions(t + h, next);
        std::vector<std::size_t> inverted;
        for (std::size_t r = 0; r + 1 < n_; ++r)
            if (x0[order_[r]] - x0[order_[r + 1]] >= 0.0 && x1[order_[r]] - x1[order_[r + 1]] < 0.0)
                inverted.push_back(r);
        if (inverted.empty())
            return std::nullopt;

        const auto v0 = velocities_at(t, eta_);
        const auto v1 = velocities_at(t + h, next);
        std::vector<std::pair<double, std::size_t>> roots;
        for (std::size_t r : inverted) {
            const std::size_t a = order_[r];
            const std::size_t b = order_[r + 1];
            const double g0 = x0[a] - x0[b];
            const double g1 = x1[a] - x1[b];
            const double d0 = v0[a] - v0[b];
            const double d1 = v1[a] - v1[b];
            auto hermite = [&](double theta) {
                const double s = theta / h;
                const double s2 = s * s;
                const double s3 = s2 * s;
                return (2 * s3 - 3 * s2 + 1) * g0 + (s3 - 2 * s2 + s) * h * d0
                       + (-2 * s3 + 3 * s2) * g1 + (s3 - s2) * h * d1;
            };
            double lo = 0.0;
            double hi = h;
            for (int it = 0; it < 200 && hi - lo > 1e-13; ++it) {
                const double mid = 0.5 * (lo + hi);
                (hermite(mid) >= 0.0 ? lo : hi) = mid;
            }
            roots.emplace_back(hi, r);
        }
        std::sort(roots.begin(), roots.end());

        for (const auto& [theta, r] : roots) {
            const auto at_contact = theta > 0.0 ? rk4(t, eta_, theta) : eta_;
            const auto v = velocities_at(t + theta, at_contact);
            const std::size_t leader = order_[r];
            const std::size_t follower = order_[r + 1];
            if (v[follower] - v[leader] > config_.contact_velocity_tolerance * specs_[follower].v_max)
                return std::make_pair(r, theta);
        }
        return std::nullopt;
    }

    void check_finite(std::span<const double> eta, std::size_t step_index) const
    {
        for (std::size_t i = 0; i < n_; ++i)
            if (!std::isfinite(eta[i]))
                throw NumericalError("non-finite state for vehicle " + std::to_string(i)
                                     + " at step " + std::to_string(step_index));
    }

    std::vector<VehicleSpec> specs_;
    ModelParams params_;
    Topology topology_;
    std::size_t step_index_ = 0;
    IntegratorConfig config_;
    bool ring_;
    std::size_t n_;
    std::vector<double> eta_;
    std::vector<std::size_t> order_;
    LinkState ranked_;
    std::vector<VehicleSpec> ranked_specs_;
    std::vector<PassingEvent> events_;
    double adaptive_h_ = 0.0;
};

} // namespace detail

inline SimTrace simulate(const Scenario& scenario, const IntegratorConfig& config)
{
    validate(scenario);
    validate(config);
    if (!config.permissive) {
        LinkState initial;
        initial.topology = scenario.topology;
        for (const auto& v : scenario.vehicles)
            initial.positions.push_back(is_ring(scenario.topology)
                                            ? scm::detail::wrap(v.x0, ring_length(scenario.topology))
                                            : v.x0);
        check_admissible(initial, scenario.vehicles, scenario.params);
    }

    detail::Integrator engine(scenario, config);
    SimTrace trace;
    trace.topology = scenario.topology;

    auto record = [&](double t) {
        trace.times.push_back(t);
        trace.positions.push_back(engine.positions(t, engine.eta()));
        trace.velocities.push_back(engine.velocities_at(t, engine.eta()));
    };

    const double dt = config.dt;
    const double horizon = config.horizon;
    std::size_t steps = 0;
    if (horizon > 0.0) {
        steps = static_cast<std::size_t>(std::ceil(horizon / dt - 1e-9));
        steps = std::max<std::size_t>(steps, 1);
    }

    record(0.0);
    for (std::size_t k = 1; k <= steps; ++k) {
        const double t_from = std::min(static_cast<double>(k - 1) * dt, horizon);
        const double t_to = k == steps ? horizon : std::min(static_cast<double>(k) * dt, horizon);
        engine.advance(t_from, t_to, k);
        if (k % config.sample_every == 0 || k == steps)
            record(t_to);
    }
    trace.events = engine.events();
    return trace;
}

/// Ring with a dense arc [0, fraction L) at rho_jam and the remaining vehicles
/// spread evenly over the rest, total count round(rho_global L).
inline Scenario build_two_region_ring(double length, double rho_global, double jam_fraction,
                                      double rho_jam, const VehicleSpec& prototype,
                                      const ModelParams& params)
{
    if (!(std::isfinite(length) && length > 0.0))
        throw ValidationError("ring length must be > 0");
    if (!(rho_global > 0.0) || !std::isfinite(rho_global))
        throw ValidationError("global density must be > 0");
    if (!(jam_fraction >= 0.0 && jam_fraction <= 1.0))
        throw ValidationError("jam fraction must lie in [0, 1]");
    if (jam_fraction > 0.0 && !(rho_jam > 0.0 && std::isfinite(rho_jam)))
        throw ValidationError("jam density must be > 0");

    const auto total = static_cast<std::size_t>(std::llround(rho_global * length));
    if (total < 1)
        throw ValidationError("density " + std::to_string(rho_global) + " on a ring of "
                              + std::to_string(length) + " m gives no vehicles");

    std::size_t jammed = 0;
    if (jam_fraction > 0.0)
        jammed = static_cast<std::size_t>(std::floor(rho_jam * jam_fraction * length + 1e-9));
    if (jammed > total)
        throw ValidationError("jam arc holds " + std::to_string(jammed) + " vehicles but the ring has only "
                              + std::to_string(total));

    Scenario scenario;
    scenario.topology = Ring{length};
    scenario.params = params;
    auto add = [&](double x) {
        VehicleSpec v = prototype;
        v.id = scenario.vehicles.size();
        v.x0 = x;
        scenario.vehicles.push_back(v);
    };

    if (jam_fraction == 1.0) {
        if (static_cast<std::size_t>(std::llround(rho_jam * length)) != total)
            throw ValidationError("a jam covering the whole ring must have the global density");
        jammed = 0;
    }
    if (jammed == 0 || jam_fraction == 1.0) {
        const double spacing = length / static_cast<double>(total);
        for (std::size_t i = 0; i < total; ++i)
            add((static_cast<double>(i) + 0.5) * spacing);
        return scenario;
    }

    const double arc = jam_fraction * length;
    const double jam_spacing = arc / static_cast<double>(jammed);
    for (std::size_t i = 0; i < jammed; ++i)
        add((static_cast<double>(i) + 0.5) * jam_spacing);
    const std::size_t rest = total - jammed;
    if (rest > 0) {
        const double rest_spacing = (length - arc) / static_cast<double>(rest);
        for (std::size_t i = 0; i < rest; ++i)
            add(arc + (static_cast<double>(i) + 0.5) * rest_spacing);
    }
    return scenario;
}

} // namespace scm
