#include <cmath>
#include <limits>
#include <vector>

#include <gtest/gtest.h>

#include "scm/model.hpp"
#include "support.hpp"

using namespace scm;
using scm::testing::Gen;

namespace {

std::vector<VehicleSpec> specs_at(const std::vector<double>& x, double v = 5.0)
{
    std::vector<VehicleSpec> s;
    for (std::size_t i = 0; i < x.size(); ++i)
        s.push_back({i, v, x[i]});
    return s;
}

LinkState open_state(const std::vector<double>& x) { return {0.0, x, OpenLink{}}; }

} // namespace

TEST(Congestion, LeaderAloneHasNoCongestion)
{
    const auto specs = specs_at({3.0});
    EXPECT_EQ(congestion_factors_naive(open_state({3.0}), specs, {1, 10}), std::vector<double>{0.0});
    EXPECT_EQ(congestion_factors_fast(open_state({3.0}), specs, {1, 10}), std::vector<double>{0.0});
}

TEST(Congestion, OneHorizonBehindGivesInverseE)
{
    const auto specs = specs_at({10.0, 0.0});
    for (auto g : {congestion_factors_naive(open_state({10.0, 0.0}), specs, {1, 10}),
                   congestion_factors_fast(open_state({10.0, 0.0}), specs, {1, 10})}) {
        EXPECT_EQ(g[0], 0.0);
        EXPECT_NEAR(g[1], std::exp(-1.0), 1e-15);
        EXPECT_NEAR(g[1], 0.367879, 1e-6);
    }
}

TEST(Congestion, KappaCoincidentVehiclesAheadSaturate)
{
    for (int kappa : {1, 2, 5, 10}) {
        std::vector<double> x(static_cast<std::size_t>(kappa) + 1, 42.0);
        const auto specs = specs_at(x);
        const auto g = congestion_factors_naive(open_state(x), specs, {static_cast<double>(kappa), 10});
        EXPECT_NEAR(g.back(), 1.0, 1e-15) << "kappa=" << kappa;
        const auto f = congestion_factors_fast(open_state(x), specs, {static_cast<double>(kappa), 10});
        EXPECT_NEAR(f.back(), 1.0, 1e-15);
    }
}

TEST(Congestion, RejectsBadStates)
{
    const auto specs = specs_at({0.0, -1.0});
    EXPECT_THROW(congestion_factors_naive(open_state({0.0, std::nan("")}), specs, {1, 10}), ValidationError);
    EXPECT_THROW(congestion_factors_fast(open_state({std::numeric_limits<double>::infinity(), 0.0}), specs, {1, 10}),
                 ValidationError);
    EXPECT_THROW(congestion_factors_naive(open_state({}), {}, {1, 10}), ValidationError);
    EXPECT_THROW(congestion_factors_fast(open_state({}), {}, {1, 10}), ValidationError);
}

TEST(Congestion, FastMatchesNaiveOnRandomFleetOf100)
{
    Gen gen(11);
    std::vector<double> x(100);
    double pos = 0.0;
    for (auto& xi : x) {
        xi = pos;
        pos -= gen.uniform(0.0, 30.0);
    }
    const auto specs = specs_at(x);
    const ModelParams p{gen.uniform(0.5, 10.0), gen.uniform(1.0, 50.0)};
    const auto naive = congestion_factors_naive(open_state(x), specs, p);
    const auto fast = congestion_factors_fast(open_state(x), specs, p);
    for (std::size_t i = 0; i < x.size(); ++i)
        EXPECT_LE(scm::testing::rel_err(naive[i], fast[i]), 1e-12) << i;
}

TEST(Congestion, MillionMetreSpreadStaysFinite)
{
    Gen gen(5);
    std::vector<double> x{0.0};
    while (x.back() > -1e6)
        x.push_back(x.back() - gen.uniform(0.0, 2e4));
    const auto specs = specs_at(x);
    const ModelParams p{1.0, 10.0};
    const auto fast = congestion_factors_fast(open_state(x), specs, p);
    const auto oracle = scm::testing::gamma_oracle(x, p);
    for (std::size_t i = 0; i < x.size(); ++i) {
        ASSERT_TRUE(std::isfinite(fast[i]));
        EXPECT_LE(scm::testing::rel_err(fast[i], static_cast<double>(oracle[i])), 1e-12);
    }
}

TEST(Congestion, RingKernelsMatchDirectSum)
{
    Gen gen(7);
    for (int trial = 0; trial < 20; ++trial) {
        const double length = gen.uniform(50.0, 2000.0);
        const auto n = gen.index(1, 300);
        std::vector<double> x(n);
        for (auto& xi : x)
            xi = gen.uniform(0.0, length);
        const ModelParams p{gen.uniform(0.5, 20.0), gen.uniform(1.0, 30.0)};
        const LinkState s{0.0, x, Ring{length}};
        const auto specs = specs_at(x);
        const auto oracle = scm::testing::ring_gamma_oracle(x, length, p);
        const auto naive = congestion_factors_naive(s, specs, p);
        const auto fast = congestion_factors_fast(s, specs, p);
        for (std::size_t i = 0; i < n; ++i) {
            EXPECT_LE(scm::testing::rel_err(naive[i], static_cast<double>(oracle[i])), 1e-12);
            EXPECT_LE(scm::testing::rel_err(fast[i], static_cast<double>(oracle[i])), 1e-12);
        }
    }
}

TEST(Congestion, RingPositionsOutsideRangeAreRejected)
{
    const auto specs = specs_at({0.0, 5.0});
    EXPECT_THROW(congestion_factors_naive({0.0, {0.0, 100.0}, Ring{100.0}}, specs, {1, 10}), ValidationError);
    EXPECT_THROW(congestion_factors_fast({0.0, {-0.5, 10.0}, Ring{100.0}}, specs, {1, 10}), ValidationError);
}

TEST(Velocity, FreeFlowIsExactlyVmax)
{
    const std::vector<VehicleSpec> specs{{0, 5.3, 0.0}};
    EXPECT_EQ(velocities(open_state({0.0}), specs, {1, 10})[0], 5.3);
    const std::vector<double> gamma{0.0};
    EXPECT_EQ(velocities_from_congestion(specs, gamma)[0], 5.3);
}

TEST(Velocity, FullCongestionStops)
{
    const std::vector<VehicleSpec> specs{{0, 6.0, 0.0}};
    const std::vector<double> gamma{1.0};
    EXPECT_EQ(velocities_from_congestion(specs, gamma)[0], 0.0);
}

TEST(Velocity, SubstitutionExample)
{
    const std::vector<VehicleSpec> specs{{0, 4.0, 10.0}, {1, 6.0, 0.0}};
    const auto v = velocities(open_state({10.0, 0.0}), specs, {1, 10});
    EXPECT_EQ(v[0], 4.0);
    EXPECT_NEAR(v[1], 6.0 * (1.0 - std::exp(-1.0)), 1e-14);
    EXPECT_NEAR(v[1], 3.79272, 1e-5);
}

TEST(Velocity, AdmissibilityCheck)
{
    const std::vector<VehicleSpec> specs{{0, 4.0, 0.0}, {1, 6.0, 0.0}, {2, 6.0, 0.0}};
    EXPECT_THROW(check_admissible(open_state({0.0, 0.0, 0.0}), specs, {1, 10}), ValidationError);
    EXPECT_NO_THROW(check_admissible(open_state({0.0, 0.0, 0.0}), specs, {2, 10}));
}

TEST(PassingCondition, ThresholdAtThreeForFourAndSix)
{
    EXPECT_FALSE(passing_condition(2.9, 0.0, 4.0, 6.0));
    EXPECT_FALSE(passing_condition(3.0, 0.0, 4.0, 6.0));
    EXPECT_TRUE(passing_condition(3.01, 0.0, 4.0, 6.0));
    EXPECT_TRUE(passing_condition(10.0, 0.0, 4.0, 6.0));
}

TEST(PassingCondition, KappaOneNeverPasses)
{
    Gen gen(3);
    for (int k = 0; k < 1000; ++k) {
        const double v0 = gen.uniform(0.1, 20.0);
        const double v1 = v0 + gen.uniform(1e-6, 20.0);
        EXPECT_FALSE(passing_condition(1.0, gen.uniform(0.0, 1.0), v0, v1));
    }
}

TEST(PassingCondition, HalfCongestedLeader)
{
    EXPECT_FALSE(passing_condition(4.0, 0.5, 4.0, 6.0));
}

TEST(PassingCondition, RejectsSlowerOrEqualFollower)
{
    EXPECT_THROW(passing_condition(10.0, 0.0, 6.0, 4.0), ValidationError);
    EXPECT_THROW(passing_condition(10.0, 0.0, 5.0, 5.0), ValidationError);
}

TEST(Regime, TableExamples)
{
    const std::vector<VehicleSpec> fleet{{0, 4.0, 0.0}, {1, 6.0, -10.0}};
    EXPECT_EQ(classify_regime(fleet, {1.0, 10}).regime, Regime::Blocking);
    EXPECT_EQ(classify_regime(fleet, {10.0, 10}).regime, Regime::PassingTotal);
    EXPECT_EQ(classify_regime(fleet, {2.0, 10}).regime, Regime::PassingPartial);
    EXPECT_EQ(classify_regime(fleet, {3.0, 10}).regime, Regime::PassingPartial);
    EXPECT_DOUBLE_EQ(classify_regime(fleet, {2.0, 10}).sort_threshold, 3.0);
}

TEST(Regime, KappaOneIsBlockingForAnyFleet)
{
    Gen gen(9);
    for (int k = 0; k < 200; ++k) {
        const auto n = gen.index(1, 8);
        std::vector<VehicleSpec> fleet;
        for (std::size_t i = 0; i < n; ++i)
            fleet.push_back({i, gen.uniform(0.5, 30.0), -10.0 * static_cast<double>(i)});
        EXPECT_EQ(classify_regime(fleet, {1.0, 10}).regime, Regime::Blocking);
        EXPECT_EQ(classify_regime(fleet, {gen.uniform(0.01, 1.0), 10}).regime, Regime::Blocking);
    }
}

TEST(Regime, EqualSpeedsAreFlagged)
{
    const std::vector<VehicleSpec> fleet{{0, 5.0, 0.0}, {1, 5.0, -10.0}, {2, 5.0, -20.0}};
    const auto r = classify_regime(fleet, {50.0, 10});
    EXPECT_EQ(r.regime, Regime::Blocking);
    EXPECT_TRUE(r.equal_speeds);
    EXPECT_TRUE(std::isnan(r.sort_threshold));
}

TEST(Regime, ThresholdIsMaxOverAllPairs)
{
    // brute force over ordered pairs
    Gen gen(21);
    for (int k = 0; k < 300; ++k) {
        const auto n = gen.index(2, 7);
        const auto speeds = gen.distinct_speeds(n, 1.0, 10.0, 1e-3);
        std::vector<VehicleSpec> fleet;
        for (std::size_t i = 0; i < n; ++i)
            fleet.push_back({i, speeds[i], -10.0 * static_cast<double>(i)});
        double brute = 0.0;
        for (double vi : speeds)
            for (double vj : speeds)
                if (vj > vi)
                    brute = std::max(brute, vj / (vj - vi));
        EXPECT_NEAR(classify_regime(fleet, {2.0, 10}).sort_threshold, brute, 1e-12 * brute);
    }
}

TEST(Regime, InvariantUnderSpeedRescaling)
{
    Gen gen(4);
    for (int k = 0; k < 500; ++k) {
        const auto n = gen.index(1, 6);
        std::vector<VehicleSpec> fleet, scaled;
        // speeds on a coarse lattice keep the ratios exact under power-of-two scaling
        const double factor = std::ldexp(1.0, static_cast<int>(gen.index(0, 8)) - 4);
        for (std::size_t i = 0; i < n; ++i) {
            const double v = static_cast<double>(gen.index(1, 12));
            fleet.push_back({i, v, -10.0 * static_cast<double>(i)});
            scaled.push_back({i, v * factor, -10.0 * static_cast<double>(i)});
        }
        const ModelParams p{gen.uniform(0.2, 15.0), 10};
        EXPECT_EQ(classify_regime(fleet, p).regime, classify_regime(scaled, p).regime);
    }
}

TEST(JamDensity, MatchesBisectionOnLongUniformQueue)
{
    for (auto [kappa, omega, expected] : {std::tuple{10.0, 10.0, 1.0492}, std::tuple{1.0, 10.0, 0.14427}}) {
        // Gamma of the last vehicle in a 20 000-vehicle uniform queue of density rho
        auto gamma_minus_one = [&](double rho) {
            long double sum = 0.0L;
            for (int j = 1; j <= 20000; ++j)
                sum += std::exp(-static_cast<long double>(j) / (rho * omega));
            return static_cast<double>(sum / kappa - 1.0L);
        };
        const double oracle = scm::testing::bisect(gamma_minus_one, 0.01, 50.0);
        const double rho = max_jam_density({kappa, omega});
        EXPECT_NEAR(rho, oracle, 1e-9) << "kappa=" << kappa;
        EXPECT_NEAR(rho, expected, 5e-5);
    }
}

TEST(JamDensity, IncreasesWithKappaWithoutBound)
{
    double prev = 0.0;
    for (double kappa = 0.1; kappa < 1e6; kappa *= 1.7) {
        const double rho = max_jam_density({kappa, 10});
        EXPECT_GT(rho, prev);
        prev = rho;
    }
    EXPECT_GT(prev, 1e4);
}

TEST(JamDensity, AlgebraicIdentity)
{
    Gen gen(8);
    for (int k = 0; k < 1000; ++k) {
        const ModelParams p{gen.uniform(0.01, 100.0), gen.uniform(0.1, 100.0)};
        EXPECT_NEAR(max_jam_density(p) * p.omega * std::log1p(1.0 / p.kappa), 1.0, 1e-15);
    }
}

TEST(Validation, RejectsBadParameters)
{
    EXPECT_THROW(validate(ModelParams{0.0, 10.0}), ValidationError);
    EXPECT_THROW(validate(ModelParams{1.0, -1.0}), ValidationError);
    EXPECT_THROW(validate(ModelParams{std::nan(""), 10.0}), ValidationError);
    EXPECT_THROW(validate(Topology{Ring{0.0}}), ValidationError);
    const std::vector<VehicleSpec> bad_ids{{0, 5.0, 0.0}, {2, 5.0, -1.0}};
    EXPECT_THROW(validate_specs(bad_ids), ValidationError);
    const std::vector<VehicleSpec> bad_speed{{0, 0.0, 0.0}};
    EXPECT_THROW(validate_specs(bad_speed), ValidationError);
    Scenario unordered{OpenLink{}, {1, 10}, {{0, 5.0, 0.0}, {1, 5.0, 3.0}}};
    EXPECT_THROW(validate(unordered), ValidationError);
}

// --- properties over random fleets ------------------------------------------

TEST(CoreProperties, CongestionNonNegativeAndLeaderFree)
{
    Gen gen(101);
    for (int k = 0; k < 300; ++k) {
        const auto n = gen.index(1, 60);
        std::vector<double> x(n);
        double pos = gen.uniform(-1e3, 1e3);
        for (auto& xi : x) {
            xi = pos;
            pos -= gen.coin(0.1) ? 0.0 : gen.uniform(0.0, 40.0);
        }
        const auto specs = specs_at(x);
        const ModelParams p{gen.uniform(0.1, 20.0), gen.uniform(0.5, 40.0)};
        const auto g = congestion_factors_fast(open_state(x), specs, p);
        EXPECT_EQ(g[0], 0.0);
        for (double gi : g)
            EXPECT_GE(gi, 0.0);
    }
}

TEST(CoreProperties, VelocitiesBoundedWhenAdmissible)
{
    Gen gen(102);
    int checked = 0;
    while (checked < 300) {
        const auto n = gen.index(1, 30);
        const auto speeds = gen.distinct_speeds(n, 1.0, 20.0, 0.0);
        const ModelParams p{gen.uniform(0.2, 10.0), gen.uniform(1.0, 20.0)};
        const auto specs = gen.fleet(speeds, 0.0, 30.0);
        if (!scm::testing::admissible(specs, p))
            continue;
        ++checked;
        std::vector<double> x;
        for (const auto& s : specs)
            x.push_back(s.x0);
        const auto v = velocities(open_state(x), specs, p);
        for (std::size_t i = 0; i < n; ++i) {
            EXPECT_GE(v[i], -1e-12);
            EXPECT_LE(v[i], specs[i].v_max);
        }
    }
}

TEST(CoreProperties, FastEqualsNaiveUpToTenThousand)
{
    Gen gen(103);
    for (std::size_t n : {1u, 2u, 17u, 500u, 3000u, 10000u}) {
        std::vector<double> x(n);
        double pos = 0.0;
        for (auto& xi : x) {
            xi = pos;
            pos -= gen.uniform(0.0, 25.0);
        }
        const auto specs = specs_at(x);
        const ModelParams p{gen.uniform(0.5, 10.0), gen.uniform(1.0, 30.0)};
        const auto naive = congestion_factors_naive(open_state(x), specs, p);
        const auto fast = congestion_factors_fast(open_state(x), specs, p);
        double worst = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            worst = std::max(worst, scm::testing::rel_err(naive[i], fast[i]));
        EXPECT_LE(worst, 1e-12) << "N=" << n;
    }
}
