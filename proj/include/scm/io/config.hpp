#pragma once

// Scenario configuration files (YAML). See docs/scenario-format.md for the schema.
//
// Parsing collects every problem it finds, each with a line/column and the
// dotted path of the offending field. Unknown keys are errors unless the
// parser runs in permissive mode, where they become warnings.

#include <charconv>
#include <cmath>
#include <cstddef>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "scm/error.hpp"
#include "scm/model.hpp"
#include "scm/numeric.hpp"

namespace scm::io {

inline constexpr int kSchemaVersion = 1;

struct UniformPlacement {
    bool operator==(const UniformPlacement&) const = default;
};

struct TwoRegionPlacement {
    double fraction = 0.0;
    double rho_jam = 0.0;
    bool operator==(const TwoRegionPlacement&) const = default;
};

using Placement = std::variant<UniformPlacement, TwoRegionPlacement>;

struct GeneratorSpec {
    std::optional<std::size_t> count;
    std::optional<double> density;
    Placement placement = UniformPlacement{};
    std::vector<double> v_max; ///< one value for the whole fleet or one per vehicle
    bool operator==(const GeneratorSpec&) const = default;
};

struct ExplicitVehicle {
    double v_max = 0.0;
    double x0 = 0.0;
    bool operator==(const ExplicitVehicle&) const = default;
};

struct IntegratorOverrides {
    std::optional<double> dt;
    std::optional<double> horizon;
    std::optional<std::size_t> sample_every;
    std::optional<bool> adaptive;
    std::optional<double> tolerance;
    bool operator==(const IntegratorOverrides&) const = default;
};

struct ScenarioConfig {
    int schema_version = kSchemaVersion;
    Topology topology = OpenLink{};
    ModelParams params;
    std::vector<ExplicitVehicle> vehicles;
    std::optional<GeneratorSpec> generator;
    IntegratorOverrides integrator;
    std::vector<std::string> outputs;
    bool operator==(const ScenarioConfig&) const = default;
};

inline const std::set<std::string>& known_outputs()
{
    static const std::set<std::string> names{"trace", "events", "timespace_svg", "minmax_svg"};
    return names;
}

struct Diagnostic {
    std::string path;
    int line = 0; ///< 1-based, 0 when unknown
    int column = 0;
    std::string message;

    std::string str() const
    {
        std::string out;
        if (line > 0)
            out = "line " + std::to_string(line) + ", col " + std::to_string(column) + ": ";
        if (!path.empty())
            out += path + ": ";
        return out + message;
    }
};

struct ParseOptions {
    bool permissive = false; ///< unknown keys become warnings
};

struct ParseResult {
    std::optional<ScenarioConfig> config;
    std::vector<Diagnostic> errors;
    std::vector<Diagnostic> warnings;

    bool ok() const { return config.has_value() && errors.empty(); }

    std::string error_text() const
    {
        std::string out;
        for (const auto& e : errors)
            out += e.str() + "\n";
        return out;
    }
};

namespace detail {

class ConfigReader {
public:
    explicit ConfigReader(const ParseOptions& options, ParseResult& result)
        : options_(options), result_(result)
    {
    }

    void error(const YAML::Node& node, const std::string& path, const std::string& message)
    {
        result_.errors.push_back(located(node, path, message));
    }

    void check_keys(const YAML::Node& map, const std::string& path,
                    const std::set<std::string>& allowed)
    {
        for (const auto& kv : map) {
            const auto key = kv.first.as<std::string>();
            if (allowed.count(key))
                continue;
            auto d = located(kv.first, join(path, key), "unknown key");
            if (options_.permissive)
                result_.warnings.push_back(std::move(d));
            else
                result_.errors.push_back(std::move(d));
        }
    }

    std::optional<double> number(const YAML::Node& node, const std::string& path)
    {
        if (!node.IsScalar()) {
            error(node, path, "expected a number");
            return std::nullopt;
        }
        const auto text = node.Scalar();
        double value = 0.0;
        const auto* end = text.data() + text.size();
        auto [ptr, ec] = std::from_chars(text.data(), end, value);
        if (ec != std::errc() || ptr != end || !std::isfinite(value)) {
            error(node, path, "expected a finite number, got '" + text + "'");
            return std::nullopt;
        }
        return value;
    }

    std::optional<double> positive(const YAML::Node& node, const std::string& path)
    {
        auto v = number(node, path);
        if (v && !(*v > 0.0)) {
            error(node, path, "must be > 0");
            return std::nullopt;
        }
        return v;
    }

    std::optional<long long> integer(const YAML::Node& node, const std::string& path, long long min)
    {
        if (!node.IsScalar()) {
            error(node, path, "expected an integer");
            return std::nullopt;
        }
        const auto text = node.Scalar();
        long long value = 0;
        const auto* end = text.data() + text.size();
        auto [ptr, ec] = std::from_chars(text.data(), end, value);
        if (ec != std::errc() || ptr != end) {
            error(node, path, "expected an integer, got '" + text + "'");
            return std::nullopt;
        }
        if (value < min) {
            error(node, path, "must be >= " + std::to_string(min));
            return std::nullopt;
        }
        return value;
    }

    std::optional<bool> boolean(const YAML::Node& node, const std::string& path)
    {
        if (node.IsScalar()) {
            const auto& s = node.Scalar();
            if (s == "true")
                return true;
            if (s == "false")
                return false;
        }
        error(node, path, "expected true or false");
        return std::nullopt;
    }

    static std::string join(const std::string& path, const std::string& key)
    {
        return path.empty() ? key : path + "." + key;
    }

private:
    static Diagnostic located(const YAML::Node& node, const std::string& path, const std::string& message)
    {
        Diagnostic d;
        d.path = path;
        d.message = message;
        const auto mark = node.Mark();
        if (mark.line >= 0) {
            d.line = mark.line + 1;
            d.column = mark.column + 1;
        }
        return d;
    }

    const ParseOptions& options_;
    ParseResult& result_;
};

} // namespace detail

inline ParseResult parse_scenario(const std::string& text, const ParseOptions& options = {})
{
    ParseResult result;
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::ParserException& e) {
        result.errors.push_back({"", e.mark.line + 1, e.mark.column + 1, e.msg});
        return result;
    }
    if (!root.IsMap()) {
        result.errors.push_back({"", 1, 1, "scenario must be a mapping"});
        return result;
    }

    detail::ConfigReader in(options, result);
    ScenarioConfig cfg;
    in.check_keys(root, "", {"schema_version", "topology", "params", "vehicles", "generator",
                             "integrator", "outputs"});

    if (auto node = root["schema_version"]) {
        if (auto v = in.integer(node, "schema_version", 0)) {
            cfg.schema_version = static_cast<int>(*v);
            if (*v != kSchemaVersion)
                in.error(node, "schema_version",
                         "unsupported version " + std::to_string(*v) + " (expected "
                             + std::to_string(kSchemaVersion) + ")");
        }
    } else {
        in.error(root, "schema_version", "missing");
    }

    if (auto node = root["topology"]) {
        if (node.IsScalar() && node.Scalar() == "open") {
            cfg.topology = OpenLink{};
        } else if (node.IsMap()) {
            in.check_keys(node, "topology", {"ring"});
            if (auto ring = node["ring"]) {
                if (auto len = in.positive(ring, "topology.ring"))
                    cfg.topology = Ring{*len};
            } else {
                in.error(node, "topology", "expected 'open' or {ring: L}");
            }
        } else {
            in.error(node, "topology", "expected 'open' or {ring: L}");
        }
    } else {
        in.error(root, "topology", "missing");
    }

    if (auto node = root["params"]; node && node.IsMap()) {
        in.check_keys(node, "params", {"kappa", "omega"});
        for (const char* key : {"kappa", "omega"}) {
            const std::string path = std::string("params.") + key;
            if (auto field = node[key]) {
                if (auto v = in.positive(field, path))
                    (std::string(key) == "kappa" ? cfg.params.kappa : cfg.params.omega) = *v;
            } else {
                in.error(node, path, "missing");
            }
        }
    } else {
        in.error(node ? node : root, "params", node ? "expected a mapping" : "missing");
    }

    const auto vehicles = root["vehicles"];
    const auto generator = root["generator"];
    if (vehicles && generator)
        in.error(generator, "generator", "give either 'vehicles' or 'generator', not both");
    if (!vehicles && !generator)
        in.error(root, "vehicles", "missing: give an explicit 'vehicles' list or a 'generator'");

    if (vehicles) {
        if (!vehicles.IsSequence() || vehicles.size() == 0) {
            in.error(vehicles, "vehicles", "expected a non-empty list");
        } else {
            for (std::size_t i = 0; i < vehicles.size(); ++i) {
                const auto item = vehicles[i];
                const std::string path = "vehicles[" + std::to_string(i) + "]";
                if (!item.IsMap()) {
                    in.error(item, path, "expected {v_max, x0}");
                    continue;
                }
                in.check_keys(item, path, {"v_max", "x0"});
                ExplicitVehicle v;
                if (auto f = item["v_max"]) {
                    if (auto x = in.positive(f, path + ".v_max"))
                        v.v_max = *x;
                } else {
                    in.error(item, path + ".v_max", "missing");
                }
                if (auto f = item["x0"]) {
                    if (auto x = in.number(f, path + ".x0"))
                        v.x0 = *x;
                } else {
                    in.error(item, path + ".x0", "missing");
                }
                cfg.vehicles.push_back(v);
            }
            if (!is_ring(cfg.topology))
                for (std::size_t i = 1; i < cfg.vehicles.size(); ++i)
                    if (cfg.vehicles[i].x0 > cfg.vehicles[i - 1].x0)
                        in.error(vehicles[i], "vehicles[" + std::to_string(i) + "].x0",
                                 "open-link vehicles must be listed front to back");
        }
    }

    if (generator) {
        if (!generator.IsMap()) {
            in.error(generator, "generator", "expected a mapping");
        } else {
            in.check_keys(generator, "generator", {"count", "density", "placement", "v_max"});
            GeneratorSpec gen;
            if (auto f = generator["count"])
                if (auto v = in.integer(f, "generator.count", 1))
                    gen.count = static_cast<std::size_t>(*v);
            if (auto f = generator["density"])
                gen.density = in.positive(f, "generator.density");
            if (auto f = generator["placement"]) {
                if (f.IsScalar() && f.Scalar() == "uniform") {
                    gen.placement = UniformPlacement{};
                } else if (f.IsMap() && f["two_region"]) {
                    in.check_keys(f, "generator.placement", {"two_region"});
                    const auto tr = f["two_region"];
                    TwoRegionPlacement p;
                    if (!tr.IsMap()) {
                        in.error(tr, "generator.placement.two_region", "expected {fraction, rho_jam}");
                    } else {
                        in.check_keys(tr, "generator.placement.two_region", {"fraction", "rho_jam"});
                        if (auto v = tr["fraction"]) {
                            if (auto x = in.number(v, "generator.placement.two_region.fraction")) {
                                if (*x < 0.0 || *x > 1.0)
                                    in.error(v, "generator.placement.two_region.fraction", "must lie in [0, 1]");
                                p.fraction = *x;
                            }
                        } else {
                            in.error(tr, "generator.placement.two_region.fraction", "missing");
                        }
                        if (auto v = tr["rho_jam"]) {
                            if (auto x = in.positive(v, "generator.placement.two_region.rho_jam"))
                                p.rho_jam = *x;
                        } else {
                            in.error(tr, "generator.placement.two_region.rho_jam", "missing");
                        }
                    }
                    gen.placement = p;
                    if (!is_ring(cfg.topology))
                        in.error(f, "generator.placement", "two_region placement needs a ring topology");
                } else {
                    in.error(f, "generator.placement", "expected 'uniform' or {two_region: {...}}");
                }
            }
            if (auto f = generator["v_max"]) {
                if (f.IsSequence()) {
                    for (std::size_t i = 0; i < f.size(); ++i)
                        if (auto v = in.positive(f[i], "generator.v_max[" + std::to_string(i) + "]"))
                            gen.v_max.push_back(*v);
                    if (f.size() == 0)
                        in.error(f, "generator.v_max", "list is empty");
                } else if (auto v = in.positive(f, "generator.v_max")) {
                    gen.v_max.push_back(*v);
                }
            } else {
                in.error(generator, "generator.v_max", "missing");
            }

            if (is_ring(cfg.topology)) {
                if (gen.count.has_value() == gen.density.has_value())
                    in.error(generator, "generator", "a ring generator needs exactly one of count or density");
            } else if (!gen.count || !gen.density) {
                in.error(generator, "generator", "an open-link generator needs both count and density");
            }
            cfg.generator = gen;
        }
    }

    if (auto node = root["integrator"]) {
        if (!node.IsMap()) {
            in.error(node, "integrator", "expected a mapping");
        } else {
            in.check_keys(node, "integrator", {"dt", "horizon", "sample_every", "adaptive", "tolerance"});
            auto& o = cfg.integrator;
            if (auto f = node["dt"])
                o.dt = in.positive(f, "integrator.dt");
            if (auto f = node["horizon"]) {
                o.horizon = in.number(f, "integrator.horizon");
                if (o.horizon && *o.horizon < 0.0) {
                    in.error(f, "integrator.horizon", "must be >= 0");
                    o.horizon.reset();
                }
            }
            if (auto f = node["sample_every"])
                if (auto v = in.integer(f, "integrator.sample_every", 1))
                    o.sample_every = static_cast<std::size_t>(*v);
            if (auto f = node["adaptive"])
                o.adaptive = in.boolean(f, "integrator.adaptive");
            if (auto f = node["tolerance"])
                o.tolerance = in.positive(f, "integrator.tolerance");
        }
    }

    if (auto node = root["outputs"]) {
        if (!node.IsSequence()) {
            in.error(node, "outputs", "expected a list");
        } else {
            for (std::size_t i = 0; i < node.size(); ++i) {
                const auto item = node[i];
                if (!item.IsScalar() || !known_outputs().count(item.Scalar()))
                    in.error(item, "outputs[" + std::to_string(i) + "]",
                             "unknown product (known: trace, events, timespace_svg, minmax_svg)");
                else
                    cfg.outputs.push_back(item.Scalar());
            }
        }
    }

    if (result.errors.empty())
        result.config = std::move(cfg);
    return result;
}

namespace detail {

inline std::string number_text(double v)
{
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

} // namespace detail

/// Canonical text of a config; parse(emit(c)) == c.
inline std::string emit_scenario(const ScenarioConfig& cfg)
{
    using detail::number_text;
    YAML::Emitter out;
    out << YAML::BeginMap;
    out << YAML::Key << "schema_version" << YAML::Value << cfg.schema_version;
    out << YAML::Key << "topology" << YAML::Value;
    if (const auto* ring = std::get_if<Ring>(&cfg.topology))
        out << YAML::BeginMap << YAML::Key << "ring" << YAML::Value << number_text(ring->length)
            << YAML::EndMap;
    else
        out << "open";
    out << YAML::Key << "params" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "kappa" << YAML::Value << number_text(cfg.params.kappa);
    out << YAML::Key << "omega" << YAML::Value << number_text(cfg.params.omega);
    out << YAML::EndMap;

    if (!cfg.vehicles.empty()) {
        out << YAML::Key << "vehicles" << YAML::Value << YAML::BeginSeq;
        for (const auto& v : cfg.vehicles)
            out << YAML::Flow << YAML::BeginMap << YAML::Key << "v_max" << YAML::Value
                << number_text(v.v_max) << YAML::Key << "x0" << YAML::Value << number_text(v.x0)
                << YAML::EndMap;
        out << YAML::EndSeq;
    }
    if (cfg.generator) {
        const auto& g = *cfg.generator;
        out << YAML::Key << "generator" << YAML::Value << YAML::BeginMap;
        if (g.count)
            out << YAML::Key << "count" << YAML::Value << *g.count;
        if (g.density)
            out << YAML::Key << "density" << YAML::Value << number_text(*g.density);
        out << YAML::Key << "placement" << YAML::Value;
        if (const auto* tr = std::get_if<TwoRegionPlacement>(&g.placement))
            out << YAML::BeginMap << YAML::Key << "two_region" << YAML::Value << YAML::BeginMap
                << YAML::Key << "fraction" << YAML::Value << number_text(tr->fraction) << YAML::Key
                << "rho_jam" << YAML::Value << number_text(tr->rho_jam) << YAML::EndMap << YAML::EndMap;
        else
            out << "uniform";
        out << YAML::Key << "v_max" << YAML::Value;
        if (g.v_max.size() == 1) {
            out << number_text(g.v_max.front());
        } else {
            out << YAML::Flow << YAML::BeginSeq;
            for (double v : g.v_max)
                out << number_text(v);
            out << YAML::EndSeq;
        }
        out << YAML::EndMap;
    }

    const auto& o = cfg.integrator;
    if (o.dt || o.horizon || o.sample_every || o.adaptive || o.tolerance) {
        out << YAML::Key << "integrator" << YAML::Value << YAML::BeginMap;
        if (o.dt)
            out << YAML::Key << "dt" << YAML::Value << number_text(*o.dt);
        if (o.horizon)
            out << YAML::Key << "horizon" << YAML::Value << number_text(*o.horizon);
        if (o.sample_every)
            out << YAML::Key << "sample_every" << YAML::Value << *o.sample_every;
        if (o.adaptive)
            out << YAML::Key << "adaptive" << YAML::Value << (*o.adaptive ? "true" : "false");
        if (o.tolerance)
            out << YAML::Key << "tolerance" << YAML::Value << number_text(*o.tolerance);
        out << YAML::EndMap;
    }
    if (!cfg.outputs.empty()) {
        out << YAML::Key << "outputs" << YAML::Value << YAML::Flow << YAML::BeginSeq;
        for (const auto& name : cfg.outputs)
            out << name;
        out << YAML::EndSeq;
    }
    out << YAML::EndMap;
    return std::string(out.c_str()) + "\n";
}

/// Expands a config into a concrete scenario (generators are materialised here).
inline Scenario build_scenario(const ScenarioConfig& cfg)
{
    Scenario scenario;
    scenario.topology = cfg.topology;
    scenario.params = cfg.params;
    validate(scenario.params);
    validate(scenario.topology);

    if (!cfg.generator) {
        for (std::size_t i = 0; i < cfg.vehicles.size(); ++i)
            scenario.vehicles.push_back({i, cfg.vehicles[i].v_max, cfg.vehicles[i].x0});
        validate(scenario);
        return scenario;
    }

    const auto& g = *cfg.generator;
    if (g.v_max.empty())
        throw ValidationError("generator.v_max is missing");
    std::size_t count = 0;
    if (const auto* ring = std::get_if<Ring>(&cfg.topology)) {
        const double density = g.density ? *g.density : static_cast<double>(*g.count) / ring->length;
        if (const auto* tr = std::get_if<TwoRegionPlacement>(&g.placement)) {
            scenario = build_two_region_ring(ring->length, density, tr->fraction, tr->rho_jam,
                                             VehicleSpec{0, g.v_max.front(), 0.0}, cfg.params);
            count = scenario.vehicles.size();
        } else {
            count = g.count ? *g.count : static_cast<std::size_t>(std::llround(density * ring->length));
            if (count == 0)
                throw ValidationError("generator produces no vehicles");
            const double spacing = ring->length / static_cast<double>(count);
            for (std::size_t i = 0; i < count; ++i)
                scenario.vehicles.push_back({i, g.v_max.front(), (static_cast<double>(i) + 0.5) * spacing});
        }
    } else {
        count = *g.count;
        const double spacing = 1.0 / *g.density;
        for (std::size_t i = 0; i < count; ++i)
            scenario.vehicles.push_back({i, g.v_max.front(), -static_cast<double>(i) * spacing});
    }
    if (g.v_max.size() != 1) {
        if (g.v_max.size() != count)
            throw ValidationError("generator.v_max lists " + std::to_string(g.v_max.size())
                                  + " speeds for " + std::to_string(count) + " vehicles");
        for (std::size_t i = 0; i < count; ++i)
            scenario.vehicles[i].v_max = g.v_max[i];
    }
    validate(scenario);
    return scenario;
}

/// Integrator settings: `base` with the config's overrides applied.
inline IntegratorConfig integrator_config(const ScenarioConfig& cfg, IntegratorConfig base = {})
{
    const auto& o = cfg.integrator;
    if (o.dt)
        base.dt = *o.dt;
    if (o.horizon)
        base.horizon = *o.horizon;
    if (o.sample_every)
        base.sample_every = *o.sample_every;
    if (o.adaptive)
        base.adaptive = *o.adaptive;
    if (o.tolerance)
        base.tolerance = *o.tolerance;
    return base;
}

} // namespace scm::io
