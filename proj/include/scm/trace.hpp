#pragma once

#include <cstddef>
#include <vector>

#include "scm/model.hpp"

namespace scm {

/// Vehicle `passer` moved from directly behind `passed` to directly ahead of it at `t`.
struct PassingEvent {
    double t = 0.0;
    std::size_t passer = 0;
    std::size_t passed = 0;

    bool operator==(const PassingEvent&) const = default;
};

/// Time-sampled solution. Row k of `positions`/`velocities` belongs to `times[k]`,
/// column i to vehicle id i. Ring positions are unwrapped (cumulative distance).
struct SimTrace {
    std::vector<double> times;
    std::vector<std::vector<double>> positions;
    std::vector<std::vector<double>> velocities;
    Topology topology = OpenLink{};
    std::vector<PassingEvent> events;

    std::size_t samples() const { return times.size(); }
    std::size_t vehicles() const { return positions.empty() ? 0 : positions.front().size(); }

    bool operator==(const SimTrace&) const = default;
};

} // namespace scm
