// SPDX-License-Identifier: Apache-2.0
#include "epl/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <tuple>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "epl/csv.hpp"

namespace epl {
namespace {

double parse_number(const std::string& text, const std::string& what)
{
    try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used == text.size()) return v;
    } catch (const std::exception&) {
    }
    throw FormatError(what + ": not a number: '" + text + "'");
}

std::uint64_t parse_count(const std::string& text, const std::string& what)
{
    const double v = parse_number(text, what);
    if (v < 0 || v != std::floor(v)) throw FormatError(what + ": not a count: '" + text + "'");
    return static_cast<std::uint64_t>(v);
}

std::ofstream open_out(const std::filesystem::path& file)
{
    if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + file.string());
    return out;
}

void close_out(std::ofstream& out, const std::filesystem::path& file)
{
    out.close();
    if (!out) throw Error("write failed: " + file.string());
}

double mean_of(const std::vector<double>& v)
{
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v)
{
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double sq = 0.0;
    for (double x : v) sq += (x - m) * (x - m);
    return std::sqrt(sq / static_cast<double>(v.size() - 1));
}

std::string xml_escape(const std::string& s)
{
    std::string out;
    for (char c : s) {
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

}  // namespace

double sparsity_percent(const Mask& mask)
{
    return 100.0 * static_cast<double>(mask.surviving()) / static_cast<double>(mask.total());
}

std::vector<AccuracyRow> accuracy_rows(const std::string& curve, const std::vector<SeedRun>& runs)
{
    std::vector<AccuracyRow> rows;
    for (const auto& run : runs) {
        if (run.failed) continue;
        for (std::size_t r = 0; r < run.accuracy.size(); ++r) {
            rows.push_back({curve, r, sparsity_percent(run.masks.at(r)), run.seed, run.accuracy[r]});
        }
    }
    return rows;
}

void write_accuracy_csv(const std::filesystem::path& file, const std::vector<AccuracyRow>& rows)
{
    auto out = open_out(file);
    out << kAccuracyHeader << '\n';
    for (const auto& r : rows) fmt::print(out, "{},{},{},{},{}\n", r.curve, r.round, r.sparsity, r.seed, r.accuracy);
    close_out(out, file);
}

std::vector<AccuracyRow> read_accuracy_csv(const std::filesystem::path& file)
{
    const auto t = read_csv(file, kAccuracyHeader);
    const auto src = file.string();
    std::vector<AccuracyRow> rows;
    for (const auto& f : t.rows) {
        rows.push_back({f[0], static_cast<std::size_t>(parse_count(f[1], src)), parse_number(f[2], src),
                        parse_count(f[3], src), parse_number(f[4], src)});
    }
    return rows;
}

void write_perturb_csv(std::ostream& out, const std::vector<PerturbRow>& rows)
{
    out << kPerturbHeader << '\n';
    for (const auto& r : rows) {
        if (r.variant.find(',') != std::string::npos || r.params.find(',') != std::string::npos) {
            throw Error("perturb row fields must not contain commas");
        }
        fmt::print(out, "{},{},{},{},{},{},{}\n", r.variant, r.params, r.eff_mean, r.eff_std, r.sparsity, r.seed,
                   r.final_acc ? fmt::format("{}", *r.final_acc) : std::string());
    }
}

void write_perturb_csv(const std::filesystem::path& file, const std::vector<PerturbRow>& rows)
{
    auto out = open_out(file);
    write_perturb_csv(out, rows);
    close_out(out, file);
}

std::vector<PerturbRow> read_perturb_csv(const std::filesystem::path& file)
{
    const auto t = read_csv(file, kPerturbHeader);
    const auto src = file.string();
    std::vector<PerturbRow> rows;
    for (const auto& f : t.rows) {
        PerturbRow r{f[0], f[1], parse_number(f[2], src), parse_number(f[3], src), parse_number(f[4], src),
                     parse_count(f[5], src), std::nullopt};
        if (!f[6].empty()) r.final_acc = parse_number(f[6], src);
        rows.push_back(std::move(r));
    }
    return rows;
}

std::vector<CurveBand> curve_bands(const std::vector<AccuracyRow>& rows)
{
    std::map<std::pair<std::string, std::size_t>, std::vector<const AccuracyRow*>> groups;
    for (const auto& r : rows) groups[{r.curve, r.round}].push_back(&r);
    std::vector<CurveBand> out;
    for (const auto& [key, members] : groups) {
        std::vector<double> acc;
        for (const auto* m : members) acc.push_back(m->accuracy);
        out.push_back({key.first, key.second, members.front()->sparsity, mean_of(acc), sample_std(acc), acc.size()});
    }
    return out;
}

void write_curve_bands(const std::filesystem::path& file, const std::vector<CurveBand>& bands)
{
    auto out = open_out(file);
    out << kCurveBandHeader << '\n';
    for (const auto& b : bands) {
        fmt::print(out, "{},{},{},{},{},{},{},{}\n", b.curve, b.round, b.sparsity, b.mean, b.stddev,
                   b.mean - b.stddev, b.mean + b.stddev, b.seeds);
    }
    close_out(out, file);
}

ScatterReport scatter_report(const std::vector<PerturbRow>& rows, std::optional<double> sparsity)
{
    ScatterReport rep;
    if (!sparsity) {
        double lowest = std::numeric_limits<double>::infinity();
        for (const auto& r : rows)
            if (r.final_acc) lowest = std::min(lowest, r.sparsity);
        if (!std::isfinite(lowest)) throw Error("scatter: no rows with a final accuracy");
        sparsity = lowest;
    }
    rep.sparsity = *sparsity;

    std::map<std::pair<std::string, std::string>, std::pair<std::vector<double>, std::vector<double>>> groups;
    for (const auto& r : rows) {
        if (!r.final_acc || std::fabs(r.sparsity - *sparsity) > 1e-9 * std::max(1.0, std::fabs(*sparsity))) continue;
        auto& g = groups[{r.variant, r.params}];
        g.first.push_back(r.eff_std);
        g.second.push_back(*r.final_acc);
    }
    for (const auto& [key, g] : groups) {
        rep.points.push_back({key.first, key.second, mean_of(g.first), mean_of(g.second), g.first.size()});
    }
    if (rep.points.size() < 3) {
        throw Error(fmt::format("scatter: need at least 3 perturbation specs at sparsity {}, found {}", *sparsity,
                                rep.points.size()));
    }
    std::vector<double> xs, ys;
    for (const auto& p : rep.points) {
        xs.push_back(p.eff_std);
        ys.push_back(p.mean_acc);
    }
    rep.correlation = pearson(xs, ys);
    return rep;
}

void write_scatter(const std::filesystem::path& points_file, const std::filesystem::path& stats_file,
                   const ScatterReport& report)
{
    auto out = open_out(points_file);
    out << kScatterHeader << '\n';
    for (const auto& p : report.points) {
        fmt::print(out, "{},{},{},{},{}\n", p.variant, p.params, p.eff_std, p.mean_acc, p.seeds);
    }
    close_out(out, points_file);
    auto stats = open_out(stats_file);
    stats << kScatterStatsHeader << '\n';
    fmt::print(stats, "{},{},{},{}\n", report.sparsity, report.points.size(), report.correlation.r,
               report.correlation.p);
    close_out(stats, stats_file);
}

const std::vector<std::string>& telemetry_metric_names()
{
    static const std::vector<std::string> names = {"train_loss",     "eval_loss", "eval_acc", "mean_abs_w",
                                                   "sign_flip_frac", "grad_l2",   "l2_init",  "cos_init",
                                                   "l2_final",       "cos_final"};
    return names;
}

std::vector<TelemetrySummaryRow> telemetry_summary(const std::vector<std::vector<TelemetryRecord>>& runs)
{
    const std::size_t m = telemetry_metric_names().size();
    struct Acc {
        std::size_t runs = 0;
        std::vector<double> sum;
        std::vector<std::size_t> count;
    };
    std::map<std::uint64_t, Acc> by_iter;
    for (const auto& run : runs) {
        for (const auto& rec : run) {
            auto& a = by_iter[rec.iteration];
            if (a.sum.empty()) {
                a.sum.assign(m, 0.0);
                a.count.assign(m, 0);
            }
            ++a.runs;
            const std::optional<double> v[] = {rec.train_loss,     rec.eval_loss, rec.eval_accuracy, rec.mean_abs_weight,
                                               rec.sign_flip_fraction, rec.grad_l2, rec.l2_from_init, rec.cos_from_init,
                                               rec.l2_from_final,  rec.cos_from_final};
            for (std::size_t i = 0; i < m; ++i) {
                if (v[i]) {
                    a.sum[i] += *v[i];
                    ++a.count[i];
                }
            }
        }
    }
    std::vector<TelemetrySummaryRow> out;
    for (const auto& [it, a] : by_iter) {
        TelemetrySummaryRow row{it, a.runs, {}};
        for (std::size_t i = 0; i < m; ++i) {
            row.means.push_back(a.count[i] ? std::optional(a.sum[i] / static_cast<double>(a.count[i])) : std::nullopt);
        }
        out.push_back(std::move(row));
    }
    return out;
}

void write_telemetry_summary(const std::filesystem::path& file, const std::vector<TelemetrySummaryRow>& rows)
{
    auto out = open_out(file);
    out << "iteration,runs";
    for (const auto& n : telemetry_metric_names()) out << ',' << n;
    out << '\n';
    for (const auto& r : rows) {
        fmt::print(out, "{},{}", r.iteration, r.runs);
        for (const auto& v : r.means) out << ',' << (v ? fmt::format("{}", *v) : std::string());
        out << '\n';
    }
    close_out(out, file);
}

std::string svg_plot(const PlotSpec& spec, const std::vector<PlotSeries>& series)
{
    constexpr double kW = 640, kH = 420, kLeft = 70, kRight = 170, kTop = 40, kBottom = 50;
    static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

    auto tx = [&](double x) { return spec.log_x ? std::log10(x) : x; };
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    for (const auto& s : series) {
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (spec.log_x && !(s.x[i] > 0)) continue;
            x0 = std::min(x0, tx(s.x[i]));
            x1 = std::max(x1, tx(s.x[i]));
            const double lo = s.lower.empty() ? s.y[i] : s.lower[i];
            const double hi = s.upper.empty() ? s.y[i] : s.upper[i];
            if (std::isfinite(lo)) y0 = std::min(y0, lo);
            if (std::isfinite(hi)) y1 = std::max(y1, hi);
        }
    }
    if (!std::isfinite(x0)) x0 = 0, x1 = 1;
    if (!std::isfinite(y0)) y0 = 0, y1 = 1;
    if (x1 == x0) x0 -= 0.5, x1 += 0.5;
    if (y1 == y0) y0 -= 0.5, y1 += 0.5;
    const double pad = 0.05 * (y1 - y0);
    y0 -= pad;
    y1 += pad;

    const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
    auto px = [&](double x) {
        double u = (tx(x) - x0) / (x1 - x0);
        if (spec.reverse_x) u = 1.0 - u;
        return kLeft + u * pw;
    };
    auto py = [&](double y) { return kTop + (1.0 - (y - y0) / (y1 - y0)) * ph; };

    std::ostringstream svg;
    fmt::print(svg, "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" font-family=\"sans-serif\" "
                    "font-size=\"11\">\n",
               kW, kH);
    fmt::print(svg, "<rect width=\"{}\" height=\"{}\" fill=\"white\"/>\n", kW, kH);
    fmt::print(svg, "<text x=\"{}\" y=\"22\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n", kLeft + pw / 2,
               xml_escape(spec.title));
    fmt::print(svg, "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n", kLeft, kTop,
               pw, ph);
    for (int i = 0; i <= 4; ++i) {
        const double yv = y0 + (y1 - y0) * i / 4.0;
        fmt::print(svg, "<text x=\"{}\" y=\"{:.1f}\" text-anchor=\"end\">{:.3g}</text>\n", kLeft - 6, py(yv) + 4, yv);
        const double xv = x0 + (x1 - x0) * i / 4.0;
        const double xl = spec.log_x ? std::pow(10.0, xv) : xv;
        fmt::print(svg, "<text x=\"{:.1f}\" y=\"{}\" text-anchor=\"middle\">{:.3g}</text>\n", px(xl), kTop + ph + 16, xl);
    }
    fmt::print(svg, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", kLeft + pw / 2, kH - 10,
               xml_escape(spec.x_label));
    fmt::print(svg, "<text transform=\"translate(16 {}) rotate(-90)\" text-anchor=\"middle\">{}</text>\n",
               kTop + ph / 2, xml_escape(spec.y_label));

    for (std::size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        const char* color = kColors[si % std::size(kColors)];
        if (!s.lower.empty() && !s.upper.empty()) {
            std::string pts;
            for (std::size_t i = 0; i < s.x.size(); ++i) pts += fmt::format("{:.1f},{:.1f} ", px(s.x[i]), py(s.upper[i]));
            for (std::size_t i = s.x.size(); i-- > 0;) pts += fmt::format("{:.1f},{:.1f} ", px(s.x[i]), py(s.lower[i]));
            fmt::print(svg, "<polygon points=\"{}\" fill=\"{}\" fill-opacity=\"0.2\" stroke=\"none\"/>\n", pts, color);
        }
        if (s.line && s.x.size() > 1) {
            std::string pts;
            for (std::size_t i = 0; i < s.x.size(); ++i) pts += fmt::format("{:.1f},{:.1f} ", px(s.x[i]), py(s.y[i]));
            fmt::print(svg, "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"/>\n", pts, color);
        }
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.y[i])) continue;
            fmt::print(svg, "<circle cx=\"{:.1f}\" cy=\"{:.1f}\" r=\"2.5\" fill=\"{}\"/>\n", px(s.x[i]), py(s.y[i]),
                       color);
        }
        const double ly = kTop + 12 + 16 * static_cast<double>(si);
        fmt::print(svg, "<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{}\"/>\n", kW - kRight + 12, ly - 9,
                   color);
        fmt::print(svg, "<text x=\"{}\" y=\"{}\">{}</text>\n", kW - kRight + 26, ly, xml_escape(s.name));
    }
    svg << "</svg>\n";
    return svg.str();
}

}  // namespace epl
