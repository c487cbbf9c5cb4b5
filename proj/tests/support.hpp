#pragma once

// Test-only generators and reference implementations. The oracles here share
// no code with the library: plain O(N^2) sums, a textbook RK4 on positions,
// bisection and golden-section search.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <random>
#include <vector>

#include "scm/model.hpp"

namespace scm::testing {

// ---------------------------------------------------------------------------
// generators

class Gen {
public:
    explicit Gen(std::uint64_t seed) : rng_(seed) {}

    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
    std::size_t index(std::size_t lo, std::size_t hi) // inclusive
    {
        return std::uniform_int_distribution<std::size_t>(lo, hi)(rng_);
    }
    bool coin(double p = 0.5) { return uniform(0.0, 1.0) < p; }

    /// Distinct speeds in [lo, hi], at least `min_sep` apart.
    std::vector<double> distinct_speeds(std::size_t n, double lo, double hi, double min_sep = 0.05)
    {
        std::vector<double> v;
        while (v.size() < n) {
            const double c = uniform(lo, hi);
            if (std::all_of(v.begin(), v.end(), [&](double s) { return std::abs(s - c) >= min_sep; }))
                v.push_back(c);
        }
        return v;
    }

    /// Open-link fleet front to back with gaps in [gap_lo, gap_hi].
    std::vector<VehicleSpec> fleet(const std::vector<double>& speeds, double gap_lo, double gap_hi)
    {
        std::vector<VehicleSpec> out;
        double x = uniform(-50.0, 50.0);
        for (std::size_t i = 0; i < speeds.size(); ++i) {
            if (i > 0)
                x -= uniform(gap_lo, gap_hi);
            out.push_back({i, speeds[i], x});
        }
        return out;
    }

    std::mt19937_64& engine() { return rng_; }

private:
    std::mt19937_64 rng_;
};

/// Every initial Gamma_i <= 1, by direct summation.
inline bool admissible(const std::vector<VehicleSpec>& specs, const ModelParams& p)
{
    for (std::size_t i = 1; i < specs.size(); ++i) {
        long double g = 0.0L;
        for (std::size_t j = 0; j < i; ++j)
            g += std::exp(static_cast<long double>(specs[i].x0 - specs[j].x0) / p.omega);
        if (g / p.kappa > 1.0L)
            return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// oracles

/// Gamma_i by the defining double sum, open link, index order = front to back.
inline std::vector<long double> gamma_oracle(const std::vector<double>& x, const ModelParams& p)
{
    std::vector<long double> g(x.size(), 0.0L);
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = 0; j < i; ++j)
            g[i] += std::exp((static_cast<long double>(x[i]) - x[j]) / p.omega) / p.kappa;
    return g;
}

/// Gamma_i on a ring: every other vehicle once, at its forward distance.
inline std::vector<long double> ring_gamma_oracle(const std::vector<double>& x, double length,
                                                  const ModelParams& p)
{
    std::vector<long double> g(x.size(), 0.0L);
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = 0; j < x.size(); ++j) {
            if (i == j)
                continue;
            long double d = std::fmod(static_cast<long double>(x[j]) - x[i], static_cast<long double>(length));
            if (d < 0)
                d += length;
            g[i] += std::exp(-d / p.omega) / p.kappa;
        }
    return g;
}

/// Textbook RK4 on positions for an open link in fixed index order. Valid while
/// no vehicle passes another (index order is the physical order).
class OracleRk4 {
public:
    OracleRk4(std::vector<VehicleSpec> specs, ModelParams p) : specs_(std::move(specs)), p_(p)
    {
        for (const auto& s : specs_)
            x_.push_back(s.x0);
    }

    std::vector<long double> rhs(const std::vector<long double>& x) const
    {
        std::vector<long double> v(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            long double g = 0.0L;
            for (std::size_t j = 0; j < i; ++j)
                g += std::exp((x[i] - x[j]) / p_.omega);
            v[i] = specs_[i].v_max * (1.0L - g / p_.kappa);
        }
        return v;
    }

    std::vector<long double> step(const std::vector<long double>& x, long double h) const
    {
        auto axpy = [](const std::vector<long double>& a, const std::vector<long double>& b, long double s) {
            std::vector<long double> r(a.size());
            for (std::size_t i = 0; i < a.size(); ++i)
                r[i] = a[i] + s * b[i];
            return r;
        };
        const auto k1 = rhs(x);
        const auto k2 = rhs(axpy(x, k1, h / 2));
        const auto k3 = rhs(axpy(x, k2, h / 2));
        const auto k4 = rhs(axpy(x, k3, h));
        std::vector<long double> r(x.size());
        for (std::size_t i = 0; i < x.size(); ++i)
            r[i] = x[i] + h / 6 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]);
        return r;
    }

    /// Integrates to `t` with steps of `dt` (last step shortened).
    void run_to(long double t, long double dt)
    {
        while (t_ < t - 1e-15L) {
            const long double h = std::min(dt, t - t_);
            x_ = step(x_, h);
            t_ += h;
        }
    }

    /// First time gap(leader, follower) changes sign, located by bisecting a
    /// single RK4 substep from the last state before the crossing.
    std::optional<long double> first_crossing(std::size_t leader, std::size_t follower, long double horizon,
                                              long double dt)
    {
        while (t_ < horizon) {
            const long double h = std::min(dt, horizon - t_);
            auto next = step(x_, h);
            if (next[leader] - next[follower] < 0) {
                long double lo = 0, hi = h;
                for (int k = 0; k < 200 && hi - lo > 1e-13L; ++k) {
                    const long double mid = (lo + hi) / 2;
                    auto m = step(x_, mid);
                    (m[leader] - m[follower] < 0 ? hi : lo) = mid;
                }
                return t_ + (lo + hi) / 2;
            }
            x_ = std::move(next);
            t_ += h;
        }
        return std::nullopt;
    }

    const std::vector<long double>& x() const { return x_; }
    long double t() const { return t_; }

private:
    std::vector<VehicleSpec> specs_;
    ModelParams p_;
    std::vector<long double> x_;
    long double t_ = 0.0L;
};

/// Root of a monotone function on [lo, hi] by bisection.
inline double bisect(const std::function<double(double)>& f, double lo, double hi, double tol = 1e-13)
{
    const bool rising = f(hi) > f(lo);
    for (int k = 0; k < 400 && hi - lo > tol; ++k) {
        const double mid = 0.5 * (lo + hi);
        ((f(mid) > 0) == rising ? hi : lo) = mid;
    }
    return 0.5 * (lo + hi);
}

/// Maximiser of a unimodal function on [lo, hi].
inline double golden_max(const std::function<double(double)>& f, double lo, double hi, double tol = 1e-10)
{
    const double r = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    double c = b - r * (b - a), d = a + r * (b - a);
    double fc = f(c), fd = f(d);
    while (b - a > tol) {
        if (fc > fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    return 0.5 * (a + b);
}

/// Ring equilibrium velocity by summing Gamma directly over N-1 uniformly
/// spaced vehicles.
inline long double ring_veq_direct(std::size_t n, double length, const ModelParams& p, double v_max)
{
    const long double s = static_cast<long double>(length) / n;
    long double sum = 0.0L;
    for (std::size_t j = 1; j < n; ++j)
        sum += std::exp(-static_cast<long double>(j) * s / p.omega);
    return v_max * (1.0L - sum / p.kappa);
}

inline double rel_err(double a, double b)
{
    const double scale = std::max(std::abs(a), std::abs(b));
    return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

} // namespace scm::testing
