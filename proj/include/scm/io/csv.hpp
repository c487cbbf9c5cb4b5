#pragma once

// CSV sinks and sources. Numbers are written in shortest round-trip form, so
// reading a file back reproduces every double bit for bit. LF line endings.

#include <charconv>
#include <cstddef>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "scm/analysis.hpp"
#include "scm/error.hpp"
#include "scm/trace.hpp"

namespace scm::io {

inline constexpr std::string_view kTraceHeader = "t,vehicle_id,x,v";
inline constexpr std::string_view kEventsHeader = "t,passer,passed";
inline constexpr std::string_view kDiagramHeader = "rho,v_eq,q";

namespace detail {

inline void put(std::string& out, double v)
{
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    out.append(buf, ptr);
}

inline void put(std::string& out, std::size_t v)
{
    char buf[24];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    out.append(buf, ptr);
}

inline void flush(std::ostream& sink, std::string& buffer, const std::string& what)
{
    sink.write(buffer.data(), static_cast<std::streamsize>(buffer.size()));
    buffer.clear();
    if (!sink)
        throw IoError("failed writing " + what);
}

template <class T>
T field(std::string_view text, std::size_t line, const char* name)
{
    T value{};
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc() || ptr != end)
        throw IoError("line " + std::to_string(line) + ": bad " + name + " '" + std::string(text) + "'");
    return value;
}

inline std::vector<std::string_view> split(std::string_view line)
{
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        out.push_back(line.substr(start, comma - start));
        if (comma == std::string_view::npos)
            return out;
        start = comma + 1;
    }
}

template <class Fn>
void write_file(const std::string& path, Fn&& body)
{
    std::ofstream file(path, std::ios::binary);
    if (!file)
        throw IoError("cannot open '" + path + "' for writing");
    body(file);
    file.close();
    if (!file)
        throw IoError("failed writing '" + path + "'");
}

} // namespace detail

/// Rows sorted by (t, vehicle_id).
inline void write_trace(const SimTrace& trace, std::ostream& sink)
{
    if (trace.samples() == 0 || trace.vehicles() == 0)
        throw ValidationError("write_trace: trace is empty");
    std::string buf(kTraceHeader);
    buf += '\n';
    for (std::size_t k = 0; k < trace.samples(); ++k) {
        for (std::size_t i = 0; i < trace.vehicles(); ++i) {
            detail::put(buf, trace.times[k]);
            buf += ',';
            detail::put(buf, i);
            buf += ',';
            detail::put(buf, trace.positions[k][i]);
            buf += ',';
            detail::put(buf, trace.velocities[k][i]);
            buf += '\n';
        }
        if (buf.size() > (1u << 20))
            detail::flush(sink, buf, "trace");
    }
    detail::flush(sink, buf, "trace");
}

inline void write_trace(const SimTrace& trace, const std::string& path)
{
    detail::write_file(path, [&](std::ostream& os) { write_trace(trace, os); });
}

/// Topology and events are not part of the file; the caller supplies the former.
inline SimTrace read_trace(std::istream& source, Topology topology = OpenLink{})
{
    SimTrace trace;
    trace.topology = topology;
    std::string line;
    if (!std::getline(source, line) || line != kTraceHeader)
        throw IoError("trace header must be exactly '" + std::string(kTraceHeader) + "'");
    std::size_t lineno = 1;
    std::size_t expected_id = 0;
    while (std::getline(source, line)) {
        ++lineno;
        if (line.empty())
            continue;
        const auto cols = detail::split(line);
        if (cols.size() != 4)
            throw IoError("line " + std::to_string(lineno) + ": expected 4 fields");
        const auto t = detail::field<double>(cols[0], lineno, "t");
        const auto id = detail::field<std::size_t>(cols[1], lineno, "vehicle_id");
        const auto x = detail::field<double>(cols[2], lineno, "x");
        const auto v = detail::field<double>(cols[3], lineno, "v");
        if (id == 0) {
            if (!trace.times.empty() && expected_id != trace.vehicles())
                throw IoError("line " + std::to_string(lineno) + ": incomplete sample before this row");
            if (!trace.times.empty() && !(t > trace.times.back()))
                throw IoError("line " + std::to_string(lineno) + ": times must increase");
            trace.times.push_back(t);
            trace.positions.emplace_back();
            trace.velocities.emplace_back();
            expected_id = 0;
        }
        if (trace.times.empty() || id != expected_id || t != trace.times.back())
            throw IoError("line " + std::to_string(lineno) + ": rows must be sorted by (t, vehicle_id)");
        if (trace.times.size() > 1 && id >= trace.positions.front().size())
            throw IoError("line " + std::to_string(lineno) + ": vehicle count changed");
        trace.positions.back().push_back(x);
        trace.velocities.back().push_back(v);
        ++expected_id;
    }
    if (source.bad())
        throw IoError("failed reading trace");
    if (trace.times.empty())
        throw IoError("trace has no rows");
    if (trace.positions.back().size() != trace.positions.front().size())
        throw IoError("last sample is incomplete");
    return trace;
}

inline SimTrace read_trace(const std::string& path, Topology topology = OpenLink{})
{
    std::ifstream file(path, std::ios::binary);
    if (!file)
        throw IoError("cannot open '" + path + "' for reading");
    return read_trace(file, topology);
}

inline void write_events(const std::vector<PassingEvent>& events, std::ostream& sink)
{
    std::string buf(kEventsHeader);
    buf += '\n';
    for (const auto& e : events) {
        detail::put(buf, e.t);
        buf += ',';
        detail::put(buf, e.passer);
        buf += ',';
        detail::put(buf, e.passed);
        buf += '\n';
    }
    detail::flush(sink, buf, "events");
}

inline void write_events(const std::vector<PassingEvent>& events, const std::string& path)
{
    detail::write_file(path, [&](std::ostream& os) { write_events(events, os); });
}

inline void write_diagram(const DiagramSeries& series, std::ostream& sink)
{
    std::string buf(kDiagramHeader);
    buf += '\n';
    for (const auto& p : series.points) {
        detail::put(buf, p.rho);
        buf += ',';
        detail::put(buf, p.v_eq);
        buf += ',';
        detail::put(buf, p.q);
        buf += '\n';
    }
    detail::flush(sink, buf, "diagram");
}

inline void write_diagram(const DiagramSeries& series, const std::string& path)
{
    detail::write_file(path, [&](std::ostream& os) { write_diagram(series, os); });
}

} // namespace scm::io
