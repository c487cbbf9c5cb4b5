#pragma once

// Scalar capacity model: vehicle state, congestion factors and velocity law.
//
//   dx_i/dt = V_i (1 - Gamma_i)
//   Gamma_i = (1/kappa) sum_{j ahead of i} exp((x_i - x_j) / omega)
//
// On an open link "ahead" is index order (vehicle 0 leads, Gamma_0 = 0).
// On a ring every other vehicle is ahead, at its forward wrapped distance.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "scm/error.hpp"

namespace scm {

struct VehicleSpec {
    std::size_t id = 0;
    double v_max = 1.0; ///< maximum free-flow speed [m/s]
    double x0 = 0.0;    ///< initial position [m]
};

struct ModelParams {
    double kappa = 1.0; ///< capacity, dimensionless
    double omega = 1.0; ///< horizon length [m]

    bool operator==(const ModelParams&) const = default;
};

struct OpenLink {
    bool operator==(const OpenLink&) const = default;
};

struct Ring {
    double length = 0.0; ///< circumference [m]
    bool operator==(const Ring&) const = default;
};

using Topology = std::variant<OpenLink, Ring>;

inline bool is_ring(const Topology& topology) { return std::holds_alternative<Ring>(topology); }

inline double ring_length(const Topology& topology)
{
    return std::get<Ring>(topology).length;
}

/// Positions at one instant. On an open link entry k is the k-th vehicle from
/// the front; on a ring positions may be unwrapped.
struct LinkState {
    double t = 0.0;
    std::vector<double> positions;
    Topology topology = OpenLink{};
};

struct Scenario {
    Topology topology = OpenLink{};
    ModelParams params;
    std::vector<VehicleSpec> vehicles;
};

enum class Regime { Blocking, PassingPartial, PassingTotal };

inline const char* to_string(Regime regime)
{
    switch (regime) {
    case Regime::Blocking:
        return "blocking";
    case Regime::PassingPartial:
        return "passing-partial";
    case Regime::PassingTotal:
        return "passing-total";
    }
    return "?";
}

struct RegimeClassification {
    Regime regime = Regime::Blocking;
    /// No two vehicles differ in V: nothing can ever pass, whatever kappa is.
    bool equal_speeds = false;
    /// max over ordered pairs with V_j > V_i of V_j / (V_j - V_i); NaN when equal_speeds.
    double sort_threshold = std::numeric_limits<double>::quiet_NaN();
};

// ---------------------------------------------------------------------------
// validation

inline void validate(const ModelParams& params)
{
    if (!(std::isfinite(params.kappa) && params.kappa > 0.0))
        throw ValidationError("kappa must be finite and > 0, got " + std::to_string(params.kappa));
    if (!(std::isfinite(params.omega) && params.omega > 0.0))
        throw ValidationError("omega must be finite and > 0, got " + std::to_string(params.omega));
}

inline void validate(const Topology& topology)
{
    if (const auto* ring = std::get_if<Ring>(&topology)) {
        if (!(std::isfinite(ring->length) && ring->length > 0.0))
            throw ValidationError("ring length must be finite and > 0, got "
                                  + std::to_string(ring->length));
    }
}

inline void validate_positions(std::span<const double> positions)
{
    if (positions.empty())
        throw ValidationError("state has no vehicles");
    for (std::size_t i = 0; i < positions.size(); ++i)
        if (!std::isfinite(positions[i]))
            throw ValidationError("position of vehicle slot " + std::to_string(i) + " is not finite");
}

inline void validate_specs(std::span<const VehicleSpec> specs)
{
    if (specs.empty())
        throw ValidationError("fleet is empty");
    for (std::size_t i = 0; i < specs.size(); ++i) {
        const auto& s = specs[i];
        if (s.id != i)
            throw ValidationError("vehicle ids must be contiguous 0..N-1; slot " + std::to_string(i)
                                  + " has id " + std::to_string(s.id));
        if (!(std::isfinite(s.v_max) && s.v_max > 0.0))
            throw ValidationError("vehicle " + std::to_string(i) + ": v_max must be finite and > 0");
        if (!std::isfinite(s.x0))
            throw ValidationError("vehicle " + std::to_string(i) + ": x0 is not finite");
    }
}

/// Full check of a scenario's static data. Open links need vehicle 0 in front
/// and positions non-increasing with id.
inline void validate(const Scenario& scenario)
{
    validate(scenario.params);
    validate(scenario.topology);
    validate_specs(scenario.vehicles);
    if (!is_ring(scenario.topology)) {
        for (std::size_t i = 1; i < scenario.vehicles.size(); ++i)
            if (scenario.vehicles[i].x0 > scenario.vehicles[i - 1].x0)
                throw ValidationError("open link: vehicle " + std::to_string(i)
                                      + " starts ahead of vehicle " + std::to_string(i - 1)
                                      + " (ids must be numbered front to back)");
    }
}

namespace detail {

inline void check_state(const LinkState& state, std::span<const VehicleSpec> specs,
                        const ModelParams& params)
{
    validate(params);
    validate(state.topology);
    validate_positions(state.positions);
    if (specs.size() != state.positions.size())
        throw ValidationError("state has " + std::to_string(state.positions.size())
                              + " positions but fleet has " + std::to_string(specs.size())
                              + " vehicles");
    if (const auto* ring = std::get_if<Ring>(&state.topology))
        for (std::size_t i = 0; i < state.positions.size(); ++i)
            if (state.positions[i] < 0.0 || state.positions[i] >= ring->length)
                throw ValidationError("ring position " + std::to_string(i) + " = "
                                      + std::to_string(state.positions[i]) + " lies outside [0, L)");
}

/// Forward distance from `from` to `to` on a ring, in [0, L).
inline double forward_distance(double from, double to, double length)
{
    double d = std::fmod(to - from, length);
    if (d < 0.0)
        d += length;
    if (d >= length)
        d = 0.0;
    return d;
}

inline double wrap(double x, double length)
{
    double w = std::fmod(x, length);
    if (w < 0.0)
        w += length;
    if (w >= length)
        w = 0.0;
    return w;
}

} // namespace detail

// ---------------------------------------------------------------------------
// congestion kernels

/// Direct O(N^2) evaluation, accumulated in extended precision. Reference
/// implementation for the fast kernel.
inline std::vector<double> congestion_factors_naive(const LinkState& state,
                                                    std::span<const VehicleSpec> specs,
                                                    const ModelParams& params)
{
    detail::check_state(state, specs, params);
    const auto& x = state.positions;
    const std::size_t n = x.size();
    const long double omega = params.omega;
    std::vector<double> gamma(n, 0.0);

    if (const auto* ring = std::get_if<Ring>(&state.topology)) {
        for (std::size_t i = 0; i < n; ++i) {
            long double sum = 0.0L;
            for (std::size_t j = 0; j < n; ++j) {
                if (j == i)
                    continue;
                const long double d = detail::forward_distance(x[i], x[j], ring->length);
                sum += std::exp(-d / omega);
            }
            gamma[i] = static_cast<double>(sum / params.kappa);
        }
        return gamma;
    }

    for (std::size_t i = 1; i < n; ++i) {
        long double sum = 0.0L;
        for (std::size_t j = 0; j < i; ++j)
            sum += std::exp((static_cast<long double>(x[i]) - x[j]) / omega);
        gamma[i] = static_cast<double>(sum / params.kappa);
    }
    return gamma;
}

/// O(N) open link / O(N log N) ring evaluation.
///
/// Open link: G_i = kappa * Gamma_i obeys G_i = exp((x_i - x_{i-1})/omega) (1 + G_{i-1}),
/// i.e. a prefix sum of exp(-x_j/omega) rescaled at every step by the current
/// vehicle, so no term ever leaves the representable range.
///
/// Ring: after sorting by wrapped position p_0 <= ... <= p_{N-1}, the sum splits
/// into vehicles further along (suffix recurrence) and vehicles reached by
/// wrapping once, exp(-(L - p_k + p_0)/omega) * sum_{m<k} exp(-(p_m - p_0)/omega).
inline std::vector<double> congestion_factors_fast(const LinkState& state,
                                                   std::span<const VehicleSpec> specs,
                                                   const ModelParams& params)
{
    detail::check_state(state, specs, params);
    const auto& x = state.positions;
    const std::size_t n = x.size();
    const long double omega = params.omega;
    std::vector<double> gamma(n, 0.0);

    if (const auto* ring = std::get_if<Ring>(&state.topology)) {
        const double length = ring->length;
        std::vector<double> p(n);
        for (std::size_t i = 0; i < n; ++i)
            p[i] = detail::wrap(x[i], length);
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        if (!std::is_sorted(order.begin(), order.end(),
                            [&](std::size_t a, std::size_t b) { return p[a] < p[b]; }))
            std::stable_sort(order.begin(), order.end(),
                             [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });

        std::vector<long double> acc(n, 0.0L);
        long double suffix = 0.0L;
        for (std::size_t k = n; k-- > 1;) {
            const long double step = static_cast<long double>(p[order[k]]) - p[order[k - 1]];
            suffix = std::exp(-step / omega) * (1.0L + suffix);
            acc[k - 1] = suffix;
        }
        const long double p0 = p[order[0]];
        long double head = 0.0L;
        for (std::size_t k = 0; k < n; ++k) {
            const long double pk = p[order[k]];
            if (k > 0)
                acc[k] += std::exp(-(length - pk + p0) / omega) * head;
            head += std::exp(-(pk - p0) / omega);
        }
        for (std::size_t k = 0; k < n; ++k)
            gamma[order[k]] = static_cast<double>(acc[k] / params.kappa);
        return gamma;
    }

    long double g = 0.0L;
    for (std::size_t i = 1; i < n; ++i) {
        g = std::exp((static_cast<long double>(x[i]) - x[i - 1]) / omega) * (1.0L + g);
        gamma[i] = static_cast<double>(g / params.kappa);
    }
    return gamma;
}

/// v_i = V_i (1 - Gamma_i) for an already computed congestion vector.
inline std::vector<double> velocities_from_congestion(std::span<const VehicleSpec> specs,
                                                      std::span<const double> gamma)
{
    std::vector<double> v(gamma.size());
    for (std::size_t i = 0; i < gamma.size(); ++i)
        v[i] = gamma[i] == 0.0 ? specs[i].v_max : specs[i].v_max * (1.0 - gamma[i]);
    return v;
}

inline std::vector<double> velocities(const LinkState& state, std::span<const VehicleSpec> specs,
                                      const ModelParams& params)
{
    const auto gamma = congestion_factors_fast(state, specs, params);
    return velocities_from_congestion(specs, gamma);
}

/// Throws unless every Gamma_i <= 1 (velocity law would go negative otherwise).
inline void check_admissible(const LinkState& state, std::span<const VehicleSpec> specs,
                             const ModelParams& params)
{
    const auto gamma = congestion_factors_fast(state, specs, params);
    std::string offenders;
    std::size_t count = 0;
    for (std::size_t i = 0; i < gamma.size(); ++i) {
        if (gamma[i] > 1.0 + 1e-12) {
            if (count < 8)
                offenders += (count ? ", " : "") + std::to_string(specs[i].id) + " (Gamma="
                             + std::to_string(gamma[i]) + ")";
            ++count;
        }
    }
    if (count > 0)
        throw ValidationError("initial state is over capacity for " + std::to_string(count)
                              + " vehicle(s): " + offenders + (count > 8 ? ", ..." : "")
                              + "; pass the permissive flag to run it anyway");
}

// ---------------------------------------------------------------------------
// passing and regimes

/// Whether a faster follower that has just caught up with its leader completes
/// the pass: kappa (1 - Gamma_leader) > V_follower / (V_follower - V_leader).
inline bool passing_condition(double kappa, double gamma_leader, double v_leader,
                              double v_follower)
{
    if (!(v_follower > v_leader))
        throw ValidationError("passing condition needs a strictly faster follower (V_follower="
                              + std::to_string(v_follower)
                              + ", V_leader=" + std::to_string(v_leader) + ")");
    return kappa * (1.0 - gamma_leader) > v_follower / (v_follower - v_leader);
}

inline RegimeClassification classify_regime(std::span<const VehicleSpec> specs,
                                            const ModelParams& params)
{
    validate(params);
    if (specs.empty())
        throw ValidationError("cannot classify an empty fleet");

    std::vector<double> speeds;
    speeds.reserve(specs.size());
    for (const auto& s : specs)
        speeds.push_back(s.v_max);
    std::sort(speeds.begin(), speeds.end());
    speeds.erase(std::unique(speeds.begin(), speeds.end()), speeds.end());

    RegimeClassification out;
    if (speeds.size() < 2) {
        out.equal_speeds = true;
        out.regime = Regime::Blocking;
        return out;
    }
    // For a fixed faster V_j the ratio is largest against the next slower speed.
    double threshold = 0.0;
    for (std::size_t k = 1; k < speeds.size(); ++k)
        threshold = std::max(threshold, speeds[k] / (speeds[k] - speeds[k - 1]));
    out.sort_threshold = threshold;

    if (params.kappa <= 1.0)
        out.regime = Regime::Blocking;
    else if (params.kappa > threshold)
        out.regime = Regime::PassingTotal;
    else
        out.regime = Regime::PassingPartial;
    return out;
}

/// Density at which an infinite uniformly spaced queue has Gamma = 1.
inline double max_jam_density(const ModelParams& params)
{
    validate(params);
    return 1.0 / (params.omega * std::log1p(1.0 / params.kappa));
}

} // namespace scm
