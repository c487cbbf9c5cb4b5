#pragma once

// Command-line front end. `run` is the whole program minus process setup, so
// tests can drive it with argument vectors and capture both streams.
//
// Exit codes: 0 success, 1 invalid input or I/O failure, 2 numerical failure,
// 3 a property check failed (verify).

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include "scm/analysis.hpp"
#include "scm/analytic.hpp"
#include "scm/error.hpp"
#include "scm/io/config.hpp"
#include "scm/io/csv.hpp"
#include "scm/io/svg.hpp"
#include "scm/numeric.hpp"

namespace scm::cli {

enum ExitCode : int { Ok = 0, BadInput = 1, NumericFailure = 2, PropertyViolation = 3 };

namespace detail {

namespace fs = std::filesystem;

struct Options {
    std::string config;
    std::string out;
    std::optional<double> horizon;
    std::optional<double> dt;
    std::optional<std::size_t> sample_every;
    bool svg = false;
    std::size_t every_kth = 50;
    std::string rho = "0.01:1.2:0.01";
    std::optional<double> kappa;
    std::optional<double> omega;
    std::optional<double> vmax;
    std::optional<double> length;
    std::size_t parallel = 1;
    bool permissive = false;
    std::vector<std::string> grid;
    double density = 0.5;
    double jam_fraction = 0.3;
    double rho_jam = 1.03;
};

inline std::string num(double v)
{
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

inline double parse_number(const std::string& text, const std::string& what)
{
    double v = 0.0;
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || ptr != end || !std::isfinite(v))
        throw ValidationError(what + ": '" + text + "' is not a number");
    return v;
}

inline std::string read_file(const std::string& path)
{
    std::ifstream file(path, std::ios::binary);
    if (!file)
        throw IoError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << file.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, const std::string& text)
{
    std::ofstream file(path, std::ios::binary);
    if (!file)
        throw IoError("cannot open '" + path + "' for writing");
    file.write(text.data(), static_cast<std::streamsize>(text.size()));
    file.close();
    if (!file)
        throw IoError("failed writing '" + path + "'");
}

/// `dir/stem` + suffix, next to the main product.
inline std::string sibling(const std::string& out, const std::string& suffix)
{
    fs::path p(out);
    return (p.parent_path() / (p.stem().string() + suffix)).string();
}

inline io::ScenarioConfig load_config(const Options& o, std::ostream& err)
{
    if (o.config.empty())
        throw ValidationError("--config is required");
    io::ParseOptions po;
    po.permissive = o.permissive;
    auto parsed = io::parse_scenario(read_file(o.config), po);
    for (const auto& w : parsed.warnings)
        err << o.config << ": warning: " << w.str() << "\n";
    if (!parsed.ok()) {
        std::string msg = o.config + ": " + std::to_string(parsed.errors.size()) + " error(s)\n";
        for (const auto& e : parsed.errors)
            msg += "  " + e.str() + "\n";
        msg.pop_back();
        throw ValidationError(msg);
    }
    auto cfg = *parsed.config;
    if (o.kappa)
        cfg.params.kappa = *o.kappa;
    if (o.omega)
        cfg.params.omega = *o.omega;
    if (o.length) {
        if (!is_ring(cfg.topology))
            throw ValidationError("--L applies to ring scenarios only");
        cfg.topology = Ring{*o.length};
    }
    if (o.vmax) {
        if (cfg.generator)
            cfg.generator->v_max = {*o.vmax};
        for (auto& v : cfg.vehicles)
            v.v_max = *o.vmax;
    }
    return cfg;
}

inline IntegratorConfig integrator(const io::ScenarioConfig& cfg, const Options& o)
{
    auto c = io::integrator_config(cfg);
    if (o.horizon)
        c.horizon = *o.horizon;
    if (o.dt)
        c.dt = *o.dt;
    if (o.sample_every)
        c.sample_every = *o.sample_every;
    c.permissive = o.permissive;
    return c;
}

inline bool wants(const io::ScenarioConfig& cfg, const std::string& product)
{
    return std::find(cfg.outputs.begin(), cfg.outputs.end(), product) != cfg.outputs.end();
}

/// Trace to --out (or stdout), then the optional side products.
inline void emit_trace(const SimTrace& trace, const io::ScenarioConfig* cfg, const Options& o,
                       std::ostream& out, std::ostream& err)
{
    const bool timespace = o.svg || (cfg && wants(*cfg, "timespace_svg"));
    const bool minmax = o.svg || (cfg && wants(*cfg, "minmax_svg"));
    const bool events = cfg && wants(*cfg, "events");
    if (o.out.empty()) {
        if (timespace || minmax || events)
            throw ValidationError("figures and event files need --out to name their location");
        io::write_trace(trace, out);
        return;
    }
    io::write_trace(trace, o.out);
    err << "wrote " << o.out << "\n";
    if (events) {
        io::write_events(trace.events, sibling(o.out, ".events.csv"));
        err << "wrote " << sibling(o.out, ".events.csv") << "\n";
    }
    if (timespace) {
        write_file(sibling(o.out, ".timespace.svg"), io::render_timespace_svg(trace, o.every_kth));
        err << "wrote " << sibling(o.out, ".timespace.svg") << "\n";
    }
    if (minmax) {
        write_file(sibling(o.out, ".minmax.svg"), io::render_minmax_svg(trace));
        err << "wrote " << sibling(o.out, ".minmax.svg") << "\n";
    }
}

inline std::vector<double> parse_range(const std::string& text)
{
    std::vector<double> parts;
    std::size_t start = 0;
    while (true) {
        const auto colon = text.find(':', start);
        parts.push_back(parse_number(text.substr(start, colon - start), "--rho"));
        if (colon == std::string::npos)
            break;
        start = colon + 1;
    }
    if (parts.size() != 3)
        throw ValidationError("--rho expects START:STOP:STEP, got '" + text + "'");
    return density_grid(parts[0], parts[1], parts[2]);
}

// ---------------------------------------------------------------------------
// subcommands

inline int cmd_simulate(const Options& o, std::ostream& out, std::ostream& err)
{
    const auto cfg = load_config(o, err);
    const auto scenario = io::build_scenario(cfg);
    const auto config = integrator(cfg, o);
    const auto trace = simulate(scenario, config);
    emit_trace(trace, &cfg, o, out, err);
    err << scenario.vehicles.size() << " vehicles, " << trace.samples() << " samples, "
        << trace.events.size() << " passing event(s)\n";
    return Ok;
}

inline int cmd_solve(const Options& o, std::ostream& out, std::ostream& err)
{
    const auto cfg = load_config(o, err);
    const auto scenario = io::build_scenario(cfg);
    const auto config = integrator(cfg, o);
    PassingSolverOptions po;
    po.permissive = o.permissive;
    const auto traj = solve_passing(scenario, config.horizon, po);
    for (const auto& segment : traj.segments)
        for (const auto& w : segment.warnings)
            err << "warning: " << w << "\n";
    const auto times = uniform_times(config.horizon, config.dt * static_cast<double>(config.sample_every));
    const auto trace = sample_trajectory(traj, times);
    emit_trace(trace, &cfg, o, out, err);
    err << traj.segments.size() << " analytic segment(s), " << traj.events.size() << " passing event(s)\n";
    return Ok;
}

inline int cmd_diagram(const Options& o, std::ostream& out, std::ostream& err)
{
    ModelParams params{o.kappa.value_or(10.0), o.omega.value_or(10.0)};
    const double vmax = o.vmax.value_or(6.0);
    const double length = o.length.value_or(1000.0);
    const auto grid = parse_range(o.rho);
    const auto series = fundamental_diagram(params, vmax, length, grid);
    if (o.out.empty()) {
        if (o.svg)
            throw ValidationError("--svg needs --out");
        io::write_diagram(series, out);
    } else {
        io::write_diagram(series, o.out);
        err << "wrote " << o.out << "\n";
        if (o.svg) {
            write_file(sibling(o.out, ".svg"), io::render_diagram_svg(series));
            err << "wrote " << sibling(o.out, ".svg") << "\n";
        }
    }
    err << "peak flow " << num(series.peak_q()) << " veh/s at rho=" << num(series.peak_rho()) << " veh/m\n";
    return Ok;
}

inline int cmd_stability(const Options& o, std::ostream& out, std::ostream& err)
{
    const auto cfg = load_config(o, err);
    const auto scenario = io::build_scenario(cfg);
    if (is_ring(scenario.topology))
        throw ValidationError("stability needs an open-link platoon");
    DecayExperiment experiment;
    if (o.dt)
        experiment.dt = *o.dt;
    const auto report = measure_string_stability(scenario.vehicles, scenario.params, experiment);
    std::string text = "vehicle,lambda,fitted,relative_error\n";
    for (std::size_t n = 1; n < scenario.vehicles.size(); ++n) {
        text += std::to_string(n) + "," + num(report.eigenvalues[n - 1]) + ",";
        if (report.fitted_rates[n - 1])
            text += num(*report.fitted_rates[n - 1]) + "," + num(*report.relative_errors[n - 1]);
        else
            text += ",";
        text += "\n";
    }
    if (o.out.empty()) {
        out << text;
    } else {
        write_file(o.out, text);
        err << "wrote " << o.out << "\n";
    }
    return Ok;
}

inline int cmd_verify(const Options& o, std::ostream& out, std::ostream& err)
{
    const auto cfg = load_config(o, err);
    const auto scenario = io::build_scenario(cfg);
    const auto config = integrator(cfg, o);
    const auto trace = simulate(scenario, config);
    const auto report = verify_theorems(trace, scenario);
    std::string text;
    text += "regime: " + std::string(to_string(classify_regime(scenario.vehicles, scenario.params).regime)) + "\n";
    text += "passing events: " + std::to_string(trace.events.size()) + "\n";
    for (const auto& c : report.checks)
        text += std::string(1, c.key) + " " + to_string(c.verdict) + "  " + c.name + " (" + c.detail + ")\n";
    if (o.out.empty()) {
        out << text;
    } else {
        write_file(o.out, text);
        err << "wrote " << o.out << "\n";
    }
    if (!report.all_hold()) {
        for (const auto& c : report.checks)
            if (c.verdict == Verdict::Fail)
                err << o.config << ": check " << c.key << " failed: " << c.detail << "\n";
        return PropertyViolation;
    }
    return Ok;
}

inline int cmd_jamwave(const Options& o, std::ostream& out, std::ostream& err)
{
    const ModelParams params{o.kappa.value_or(10.0), o.omega.value_or(10.0)};
    const double length = o.length.value_or(1000.0);
    const auto scenario = build_two_region_ring(length, o.density, o.jam_fraction, o.rho_jam,
                                                VehicleSpec{0, o.vmax.value_or(6.0), 0.0}, params);
    IntegratorConfig config;
    config.horizon = o.horizon.value_or(500.0);
    config.dt = o.dt.value_or(0.01);
    config.sample_every = o.sample_every.value_or(100);
    config.permissive = o.permissive;
    const auto trace = simulate(scenario, config);
    if (!o.out.empty() || o.svg)
        emit_trace(trace, nullptr, o, out, err);
    const auto& v = trace.velocities.back();
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    const auto eq = ring_equilibrium_velocity(o.density, params, length, o.vmax.value_or(6.0));
    err << scenario.vehicles.size() << " vehicles; at t=" << num(trace.times.back()) << " s: min v "
        << num(*lo) << ", max v " << num(*hi) << ", spread " << num(*hi - *lo) << " m/s (equilibrium "
        << num(eq.v_eq) << ")\n";
    return Ok;
}

// ---------------------------------------------------------------------------
// sweep

struct Axis {
    std::string key;
    std::vector<double> values;
};

inline Axis parse_axis(const std::string& text)
{
    const auto eq = text.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ValidationError("--grid expects KEY=V1,V2,..., got '" + text + "'");
    Axis axis{text.substr(0, eq), {}};
    static const std::vector<std::string> keys{"kappa", "omega", "rho", "vmax", "L"};
    if (std::find(keys.begin(), keys.end(), axis.key) == keys.end())
        throw ValidationError("--grid: unknown parameter '" + axis.key + "' (known: kappa, omega, rho, vmax, L)");
    std::stringstream ss(text.substr(eq + 1));
    std::string item;
    while (std::getline(ss, item, ','))
        axis.values.push_back(parse_number(item, "--grid " + axis.key));
    if (axis.values.empty())
        throw ValidationError("--grid " + axis.key + " has no values");
    return axis;
}

/// Sets one grid parameter; rejects values the schema would reject.
inline void substitute(io::ScenarioConfig& cfg, const std::string& key, double value)
{
    auto positive = [&] {
        if (!(value > 0.0))
            throw ValidationError(key + "=" + num(value) + " must be > 0");
    };
    if (key == "kappa") {
        positive();
        cfg.params.kappa = value;
    } else if (key == "omega") {
        positive();
        cfg.params.omega = value;
    } else if (key == "rho") {
        positive();
        if (!cfg.generator)
            throw ValidationError("rho needs a generator in the template");
        cfg.generator->density = value;
        if (is_ring(cfg.topology))
            cfg.generator->count.reset();
    } else if (key == "vmax") {
        positive();
        if (cfg.generator)
            cfg.generator->v_max = {value};
        for (auto& v : cfg.vehicles)
            v.v_max = value;
    } else if (key == "L") {
        positive();
        if (!is_ring(cfg.topology))
            throw ValidationError("L applies to ring templates only");
        cfg.topology = Ring{value};
    }
}

inline std::string sha256_hex(const std::string& data)
{
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int length = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &length, EVP_sha256(), nullptr) != 1)
        throw IoError("sha256 failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < length; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 15];
    }
    return out;
}

inline std::string utc_timestamp()
{
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

struct Cell {
    std::vector<std::pair<std::string, double>> params;
    std::string name;
    nlohmann::ordered_json record;
    int code = Ok;
};

inline int cmd_sweep(const Options& o, std::ostream& out, std::ostream& err)
{
    if (o.out.empty())
        throw ValidationError("sweep needs --out DIR");
    if (o.grid.empty())
        throw ValidationError("sweep needs at least one --grid KEY=V1,V2,...");
    if (o.parallel < 1)
        throw ValidationError("--parallel must be >= 1");
    const auto base = load_config(o, err);

    std::vector<Axis> axes;
    for (const auto& g : o.grid)
        axes.push_back(parse_axis(g));

    std::vector<Cell> cells(1);
    for (const auto& axis : axes) {
        std::vector<Cell> next;
        for (const auto& cell : cells)
            for (double v : axis.values) {
                Cell c = cell;
                c.params.emplace_back(axis.key, v);
                c.name += (c.name.empty() ? "" : "_") + axis.key + "=" + num(v);
                next.push_back(std::move(c));
            }
        cells = std::move(next);
    }

    const fs::path root(o.out);
    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec)
        throw IoError("cannot create '" + o.out + "': " + ec.message());

    auto run_cell = [&](Cell& cell) {
        auto& rec = cell.record;
        rec["cell"] = cell.name;
        for (const auto& [k, v] : cell.params)
            rec["params"][k] = v;
        try {
            auto cfg = base;
            for (const auto& [k, v] : cell.params)
                substitute(cfg, k, v);
            const auto scenario = io::build_scenario(cfg);
            const auto trace = simulate(scenario, integrator(cfg, o));
            fs::create_directories(root / cell.name);
            std::ostringstream csv;
            io::write_trace(trace, csv);
            std::ostringstream ev;
            io::write_events(trace.events, ev);
            write_file((root / cell.name / "trace.csv").string(), csv.str());
            write_file((root / cell.name / "events.csv").string(), ev.str());
            rec["status"] = "ok";
            rec["vehicles"] = scenario.vehicles.size();
            rec["passing_events"] = trace.events.size();
            rec["outputs"]["trace.csv"] = sha256_hex(csv.str());
            rec["outputs"]["events.csv"] = sha256_hex(ev.str());
        } catch (const ValidationError& e) {
            rec["status"] = "failed";
            rec["error"] = e.what();
            cell.code = BadInput;
        } catch (const IoError& e) {
            rec["status"] = "failed";
            rec["error"] = e.what();
            cell.code = BadInput;
        } catch (const NumericalError& e) {
            rec["status"] = "failed";
            rec["error"] = e.what();
            cell.code = NumericFailure;
        }
    };

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t k; (k = next.fetch_add(1)) < cells.size();)
            run_cell(cells[k]);
    };
    const auto workers = std::min(o.parallel, cells.size());
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < workers; ++w)
        pool.emplace_back(worker);
    worker();
    for (auto& t : pool)
        t.join();

    nlohmann::ordered_json manifest;
    manifest["generated_at"] = utc_timestamp();
    manifest["template"] = o.config;
    for (const auto& axis : axes)
        manifest["grid"][axis.key] = axis.values;
    manifest["runs"] = nlohmann::ordered_json::array();
    int code = Ok;
    std::size_t failed = 0;
    for (const auto& cell : cells) {
        manifest["runs"].push_back(cell.record);
        if (cell.code != Ok) {
            ++failed;
            code = std::max(code, cell.code);
            err << "cell " << cell.name << " failed: " << cell.record["error"].get<std::string>() << "\n";
        }
    }
    write_file((root / "manifest.json").string(), manifest.dump(2) + "\n");
    out << cells.size() - failed << "/" << cells.size() << " cells completed; manifest "
        << (root / "manifest.json").string() << "\n";
    return code;
}

// ---------------------------------------------------------------------------

inline void common(CLI::App* sub, Options& o, bool config_required)
{
    auto* c = sub->add_option("--config", o.config, "scenario file (YAML)");
    if (config_required)
        c->required();
    sub->add_option("--out", o.out, "output path (default: standard output)");
    sub->add_flag("--permissive", o.permissive, "warn on unknown keys; accept initial states with Gamma > 1");
    sub->add_option("--kappa", o.kappa, "capacity override");
    sub->add_option("--omega", o.omega, "horizon override [m]");
    sub->add_option("--vmax", o.vmax, "maximum speed override for every vehicle [m/s]");
    sub->add_option("--L", o.length, "ring length override [m]");
}

inline void timing(CLI::App* sub, Options& o)
{
    sub->add_option("--horizon", o.horizon, "end time [s]");
    sub->add_option("--dt", o.dt, "step [s]");
    sub->add_option("--sample-every", o.sample_every, "record every K-th step")->check(CLI::PositiveNumber);
}

inline void figures(CLI::App* sub, Options& o)
{
    sub->add_flag("--svg", o.svg, "also write time-space and min/max velocity SVGs");
    sub->add_option("--every-kth", o.every_kth, "plot every K-th vehicle in the time-space figure")
        ->check(CLI::PositiveNumber);
}

} // namespace detail

/// `args` excludes the program name.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout,
               std::ostream& err = std::cerr)
{
    using namespace detail;
    Options o;
    CLI::App app{"Scalar capacity model of lane-free traffic"};
    app.name("scm");
    app.require_subcommand(1, 1);

    auto* simulate_cmd = app.add_subcommand("simulate", "integrate a scenario numerically (RK4)");
    common(simulate_cmd, o, true);
    timing(simulate_cmd, o);
    figures(simulate_cmd, o);

    auto* solve_cmd = app.add_subcommand("solve", "piecewise closed-form solution of an open-link scenario");
    common(solve_cmd, o, true);
    timing(solve_cmd, o);
    figures(solve_cmd, o);

    auto* diagram_cmd = app.add_subcommand("diagram", "ring equilibrium flow versus density");
    common(diagram_cmd, o, false);
    diagram_cmd->add_option("--rho", o.rho, "density grid START:STOP:STEP [veh/m]");
    diagram_cmd->add_flag("--svg", o.svg, "also write the diagram as SVG");

    auto* stability_cmd = app.add_subcommand("stability", "predicted and measured platoon gap decay rates");
    common(stability_cmd, o, true);
    stability_cmd->add_option("--dt", o.dt, "step [s]");

    auto* verify_cmd = app.add_subcommand("verify", "simulate and check the model's qualitative properties");
    common(verify_cmd, o, true);
    timing(verify_cmd, o);

    auto* jamwave_cmd = app.add_subcommand("jamwave", "ring with a dense arc relaxing to equilibrium");
    common(jamwave_cmd, o, false);
    timing(jamwave_cmd, o);
    figures(jamwave_cmd, o);
    jamwave_cmd->add_option("--density", o.density, "global density [veh/m]");
    jamwave_cmd->add_option("--jam-fraction", o.jam_fraction, "share of the ring covered by the jam");
    jamwave_cmd->add_option("--rho-jam", o.rho_jam, "density inside the jam [veh/m]");

    auto* sweep_cmd = app.add_subcommand("sweep", "run a template scenario over a parameter grid");
    common(sweep_cmd, o, true);
    timing(sweep_cmd, o);
    sweep_cmd->add_option("--grid", o.grid, "KEY=V1,V2,... (repeatable; keys kappa, omega, rho, vmax, L)");
    sweep_cmd->add_option("--parallel", o.parallel, "concurrent runs");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? Ok : BadInput;
    }

    try {
        if (*simulate_cmd)
            return cmd_simulate(o, out, err);
        if (*solve_cmd)
            return cmd_solve(o, out, err);
        if (*diagram_cmd)
            return cmd_diagram(o, out, err);
        if (*stability_cmd)
            return cmd_stability(o, out, err);
        if (*verify_cmd)
            return cmd_verify(o, out, err);
        if (*jamwave_cmd)
            return cmd_jamwave(o, out, err);
        return cmd_sweep(o, out, err);
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << "\n";
        return BadInput;
    } catch (const IoError& e) {
        err << "error: " << e.what() << "\n";
        return BadInput;
    } catch (const NumericalError& e) {
        err << "numerical failure: " << e.what() << "\n";
        return NumericFailure;
    }
}

} // namespace scm::cli
