#pragma once

// Static SVG 1.1 figures. Output depends only on the input data: coordinates
// are printed with a fixed two-decimal format and no timestamps are embedded.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "scm/analysis.hpp"
#include "scm/error.hpp"
#include "scm/trace.hpp"

namespace scm::io {

namespace detail {

inline constexpr double kWidth = 800.0;
inline constexpr double kHeight = 500.0;
inline constexpr double kLeft = 80.0;
inline constexpr double kRight = 20.0;
inline constexpr double kTop = 40.0;
inline constexpr double kBottom = 60.0;

inline std::string fmt(double v)
{
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    // "-0.00" and "0.00" must render identically
    if (std::string_view(buf) == "-0.00")
        return "0.00";
    return buf;
}

inline std::string label(double v)
{
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.6g", std::abs(v) < 1e-12 ? 0.0 : v);
    return buf;
}

inline std::string escape(const std::string& text)
{
    std::string out;
    for (char c : text) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

/// 1, 2 or 5 times a power of ten, giving roughly `target` intervals.
inline double nice_step(double span, int target = 5)
{
    if (!(span > 0.0))
        return 1.0;
    const double raw = span / target;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    const double norm = raw / mag;
    const double nice = norm < 1.5 ? 1.0 : norm < 3.5 ? 2.0 : norm < 7.5 ? 5.0 : 10.0;
    return nice * mag;
}

struct Range {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();

    void add(double v)
    {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }

    /// Degenerate or empty ranges are widened so the mapping stays finite.
    void settle()
    {
        if (!std::isfinite(lo) || !std::isfinite(hi)) {
            lo = 0.0;
            hi = 1.0;
        } else if (hi - lo < 1e-12 * std::max(1.0, std::abs(hi))) {
            const double pad = std::max(1.0, std::abs(hi)) * 0.05;
            lo -= pad;
            hi += pad;
        }
    }
};

class Plot {
public:
    Plot(Range x, Range y, const std::string& title, const std::string& x_label, const std::string& y_label)
        : x_(x), y_(y)
    {
        x_.settle();
        y_.settle();
        out_ += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
        out_ += "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" + fmt(kWidth)
                + "\" height=\"" + fmt(kHeight) + "\" viewBox=\"0 0 " + fmt(kWidth) + " " + fmt(kHeight)
                + "\">\n";
        out_ += "<rect x=\"0\" y=\"0\" width=\"" + fmt(kWidth) + "\" height=\"" + fmt(kHeight)
                + "\" fill=\"white\"/>\n";
        out_ += "<text x=\"" + fmt(kWidth / 2) + "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">"
                + escape(title) + "</text>\n";
        axes(x_label, y_label);
    }

    double px(double x) const { return kLeft + (x - x_.lo) / (x_.hi - x_.lo) * (kWidth - kLeft - kRight); }
    double py(double y) const { return kHeight - kBottom - (y - y_.lo) / (y_.hi - y_.lo) * (kHeight - kTop - kBottom); }

    void polyline(const std::vector<double>& xs, const std::vector<double>& ys, const std::string& cls,
                  const std::string& stroke)
    {
        if (xs.size() == 1) {
            circle(xs[0], ys[0], cls, stroke);
            return;
        }
        out_ += "<polyline class=\"" + cls + "\" fill=\"none\" stroke=\"" + stroke
                + "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t k = 0; k < xs.size(); ++k) {
            if (k > 0)
                out_ += ' ';
            out_ += fmt(px(xs[k])) + "," + fmt(py(ys[k]));
        }
        out_ += "\"/>\n";
    }

    /// One path; `breaks[k]` starts a new subpath at point k.
    void path(const std::vector<double>& xs, const std::vector<double>& ys, const std::vector<bool>& breaks,
              const std::string& cls, const std::string& stroke)
    {
        if (xs.size() == 1) {
            circle(xs[0], ys[0], cls, stroke);
            return;
        }
        out_ += "<path class=\"" + cls + "\" fill=\"none\" stroke=\"" + stroke + "\" stroke-width=\"1\" d=\"";
        for (std::size_t k = 0; k < xs.size(); ++k) {
            if (k > 0)
                out_ += ' ';
            out_ += (k == 0 || breaks[k]) ? "M" : "L";
            out_ += fmt(px(xs[k])) + "," + fmt(py(ys[k]));
        }
        out_ += "\"/>\n";
    }

    void circle(double x, double y, const std::string& cls, const std::string& fill)
    {
        out_ += "<circle class=\"" + cls + "\" cx=\"" + fmt(px(x)) + "\" cy=\"" + fmt(py(y))
                + "\" r=\"2.5\" fill=\"" + fill + "\"/>\n";
    }

    void legend(const std::vector<std::pair<std::string, std::string>>& entries)
    {
        double y = kTop + 14.0;
        for (const auto& [name, colour] : entries) {
            const double x = kWidth - kRight - 140.0;
            out_ += "<line x1=\"" + fmt(x) + "\" y1=\"" + fmt(y) + "\" x2=\"" + fmt(x + 24) + "\" y2=\"" + fmt(y)
                    + "\" stroke=\"" + colour + "\" stroke-width=\"2\"/>\n";
            out_ += "<text x=\"" + fmt(x + 30) + "\" y=\"" + fmt(y + 4)
                    + "\" font-family=\"sans-serif\" font-size=\"12\">" + escape(name) + "</text>\n";
            y += 18.0;
        }
    }

    std::string finish()
    {
        out_ += "</svg>\n";
        return std::move(out_);
    }

private:
    void axes(const std::string& x_label, const std::string& y_label)
    {
        const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
        out_ += "<g class=\"axes\" stroke=\"black\" stroke-width=\"1\">\n";
        out_ += "<line x1=\"" + fmt(x0) + "\" y1=\"" + fmt(y0) + "\" x2=\"" + fmt(x1) + "\" y2=\"" + fmt(y0) + "\"/>\n";
        out_ += "<line x1=\"" + fmt(x0) + "\" y1=\"" + fmt(y0) + "\" x2=\"" + fmt(x0) + "\" y2=\"" + fmt(y1) + "\"/>\n";
        out_ += "</g>\n";

        std::string ticks = "<g class=\"ticks\" font-family=\"sans-serif\" font-size=\"11\">\n";
        const double xs = nice_step(x_.hi - x_.lo);
        for (auto k = std::llround(std::ceil(x_.lo / xs - 1e-9)); k <= std::llround(std::floor(x_.hi / xs + 1e-9)); ++k) {
            const double v = static_cast<double>(k) * xs;
            const double p = px(v);
            ticks += "<line x1=\"" + fmt(p) + "\" y1=\"" + fmt(y0) + "\" x2=\"" + fmt(p) + "\" y2=\""
                     + fmt(y0 + 5) + "\" stroke=\"black\"/>\n";
            ticks += "<text x=\"" + fmt(p) + "\" y=\"" + fmt(y0 + 18) + "\" text-anchor=\"middle\">" + label(v)
                     + "</text>\n";
        }
        const double ys = nice_step(y_.hi - y_.lo);
        for (auto k = std::llround(std::ceil(y_.lo / ys - 1e-9)); k <= std::llround(std::floor(y_.hi / ys + 1e-9)); ++k) {
            const double v = static_cast<double>(k) * ys;
            const double p = py(v);
            ticks += "<line x1=\"" + fmt(x0 - 5) + "\" y1=\"" + fmt(p) + "\" x2=\"" + fmt(x0) + "\" y2=\"" + fmt(p)
                     + "\" stroke=\"black\"/>\n";
            ticks += "<text x=\"" + fmt(x0 - 8) + "\" y=\"" + fmt(p + 4) + "\" text-anchor=\"end\">" + label(v)
                     + "</text>\n";
        }
        ticks += "</g>\n";
        out_ += ticks;

        out_ += "<text class=\"xlabel\" x=\"" + fmt((x0 + x1) / 2) + "\" y=\"" + fmt(kHeight - 16)
                + "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">" + escape(x_label)
                + "</text>\n";
        out_ += "<text class=\"ylabel\" x=\"18\" y=\"" + fmt((y0 + y1) / 2)
                + "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" transform=\"rotate(-90 18 "
                + fmt((y0 + y1) / 2) + ")\">" + escape(y_label) + "</text>\n";
    }

    Range x_, y_;
    std::string out_;
};

inline void check_trace(const SimTrace& trace)
{
    if (trace.samples() == 0 || trace.vehicles() == 0)
        throw ValidationError("cannot plot an empty trace");
}

} // namespace detail

/// Trajectories of vehicles 0, k, 2k, ... Ring positions are wrapped to [0, L),
/// with a new subpath wherever a vehicle crosses the seam.
inline std::string render_timespace_svg(const SimTrace& trace, std::size_t every_kth)
{
    detail::check_trace(trace);
    if (every_kth == 0)
        throw ValidationError("every_kth must be >= 1");
    const bool ring = is_ring(trace.topology);
    const double length = ring ? ring_length(trace.topology) : 0.0;

    std::vector<std::size_t> selected;
    for (std::size_t i = 0; i < trace.vehicles(); i += every_kth)
        selected.push_back(i);

    detail::Range tr, xr;
    for (double t : trace.times)
        tr.add(t);
    if (ring) {
        xr.add(0.0);
        xr.add(length);
    } else {
        for (std::size_t i : selected)
            for (std::size_t k = 0; k < trace.samples(); ++k)
                xr.add(trace.positions[k][i]);
    }

    detail::Plot plot(tr, xr, "Time-space diagram (every " + std::to_string(every_kth) + ". vehicle)",
                      "time t [s]", ring ? "position on ring x mod L [m]" : "position x [m]");
    for (std::size_t i : selected) {
        std::vector<double> xs(trace.samples()), ys(trace.samples());
        std::vector<bool> breaks(trace.samples(), false);
        for (std::size_t k = 0; k < trace.samples(); ++k) {
            xs[k] = trace.times[k];
            const double x = trace.positions[k][i];
            ys[k] = ring ? scm::detail::wrap(x, length) : x;
            if (ring && k > 0)
                breaks[k] = std::floor(x / length) != std::floor(trace.positions[k - 1][i] / length);
        }
        plot.path(xs, ys, breaks, "trajectory", "#1f4e9c");
    }
    return plot.finish();
}

/// Slowest and fastest momentary velocity across the fleet at each sample.
inline std::string render_minmax_svg(const SimTrace& trace)
{
    detail::check_trace(trace);
    std::vector<double> lo(trace.samples()), hi(trace.samples());
    detail::Range tr, vr;
    for (std::size_t k = 0; k < trace.samples(); ++k) {
        const auto& v = trace.velocities[k];
        lo[k] = *std::min_element(v.begin(), v.end());
        hi[k] = *std::max_element(v.begin(), v.end());
        tr.add(trace.times[k]);
        vr.add(lo[k]);
        vr.add(hi[k]);
    }
    detail::Plot plot(tr, vr, "Minimum and maximum velocity", "time t [s]", "velocity v [m/s]");
    plot.polyline(trace.times, hi, "vmax", "#c0392b");
    plot.polyline(trace.times, lo, "vmin", "#1f4e9c");
    plot.legend({{"max velocity", "#c0392b"}, {"min velocity", "#1f4e9c"}});
    return plot.finish();
}

inline std::string render_diagram_svg(const DiagramSeries& series)
{
    if (series.points.empty())
        throw ValidationError("cannot plot an empty diagram");
    std::vector<double> rho, q;
    detail::Range rr, qr;
    qr.add(0.0);
    for (const auto& p : series.points) {
        rho.push_back(p.rho);
        q.push_back(p.q);
        rr.add(p.rho);
        qr.add(p.q);
    }
    detail::Plot plot(rr, qr, "Flow versus density", "density rho [veh/m]", "flow Q [veh/s]");
    plot.polyline(rho, q, "flow", "#1f4e9c");
    return plot.finish();
}

} // namespace scm::io
