// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include <gtest/gtest.h>

#include "epl/report.hpp"

using namespace epl;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name)
{
    return fs::path(::testing::TempDir()) / ("epl-report-" + name);
}

std::string slurp(const fs::path& file)
{
    std::ifstream in(file);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

PerturbRow prow(std::string variant, std::string params, double eff, double sparsity, std::uint64_t seed,
                std::optional<double> acc)
{
    return {std::move(variant), std::move(params), eff / 2, eff, sparsity, seed, acc};
}

}  // namespace

TEST(Sparsity, PercentRemaining)
{
    Mask m;
    m.entries["a"] = {{4}, {1, 0, 1, 1}};
    m.entries["b"] = {{2, 2}, {0, 0, 0, 1}};
    EXPECT_DOUBLE_EQ(sparsity_percent(m), 50.0);
}

TEST(AccuracyCsv, RowsFromRunsAndRoundTrip)
{
    SeedRun ok;
    ok.seed = 3;
    Mask dense, half;
    dense.entries["w"] = {{4}, {1, 1, 1, 1}};
    half.entries["w"] = {{4}, {1, 0, 0, 1}};
    ok.masks = {dense, half};
    ok.accuracy = {0.1 + 0.2, 1.0 / 3.0};
    SeedRun bad;
    bad.seed = 4;
    bad.failed = true;
    const auto rows = accuracy_rows("k=250", {ok, bad});
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[1].sparsity, 50.0);
    EXPECT_EQ(rows[1].round, 1u);

    const auto file = temp_file("acc.csv");
    write_accuracy_csv(file, rows);
    EXPECT_EQ(slurp(file).substr(0, std::string(kAccuracyHeader).size()), kAccuracyHeader);
    const auto back = read_accuracy_csv(file);
    ASSERT_EQ(back.size(), rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        EXPECT_EQ(back[i].curve, rows[i].curve);
        EXPECT_EQ(back[i].round, rows[i].round);
        EXPECT_EQ(back[i].sparsity, rows[i].sparsity);
        EXPECT_EQ(back[i].seed, rows[i].seed);
        EXPECT_EQ(back[i].accuracy, rows[i].accuracy);  // shortest round-trip formatting is exact
    }
}

TEST(AccuracyCsv, RejectsWrongHeaderAndBadNumbers)
{
    const auto file = temp_file("bad.csv");
    std::ofstream(file) << "curve,round,sparsity,seed\nx,0,100,1\n";
    EXPECT_THROW(read_accuracy_csv(file), FormatError);
    std::ofstream(file, std::ios::trunc) << kAccuracyHeader << "\nx,0.5,100,1,0.9\n";
    EXPECT_THROW(read_accuracy_csv(file), FormatError);
    std::ofstream(file, std::ios::trunc) << kAccuracyHeader << "\nx,0,abc,1,0.9\n";
    EXPECT_THROW(read_accuracy_csv(file), FormatError);
}

TEST(CurveBands, MeanAndSampleStdPerCurveAndRound)
{
    const std::vector<AccuracyRow> rows{
        {"b", 0, 100, 1, 0.5}, {"a", 1, 80, 1, 0.2}, {"a", 1, 80, 2, 0.4}, {"a", 1, 80, 3, 0.9}, {"a", 0, 100, 1, 0.7},
    };
    const auto bands = curve_bands(rows);
    ASSERT_EQ(bands.size(), 3u);
    EXPECT_EQ(bands[0].curve, "a");
    EXPECT_EQ(bands[0].round, 0u);
    EXPECT_EQ(bands[0].stddev, 0.0);  // a single seed has no spread
    EXPECT_EQ(bands[1].seeds, 3u);
    EXPECT_NEAR(bands[1].mean, 0.5, 1e-15);
    // deviations -0.3, -0.1, 0.4: sum of squares 0.26 over n - 1 = 2
    EXPECT_NEAR(bands[1].stddev, std::sqrt(0.13), 1e-15);
    EXPECT_EQ(bands[1].sparsity, 80.0);
    EXPECT_EQ(bands[2].curve, "b");

    const auto file = temp_file("bands.csv");
    write_curve_bands(file, bands);
    const auto text = slurp(file);
    EXPECT_EQ(text.substr(0, text.find('\n')), kCurveBandHeader);
    EXPECT_NE(text.find("a,0,100,0.7,0,0.7,0.7,1\n"), std::string::npos) << text;
}

TEST(PerturbCsv, RoundTripWithMissingAccuracy)
{
    const std::vector<PerturbRow> rows{prow("noise", "k=250;n=2", 0.125, 26.2144, 1, 0.61),
                                       prow("none", "k=250", 0.0, 26.2144, 2, std::nullopt)};
    const auto file = temp_file("perturb.csv");
    write_perturb_csv(file, rows);
    const auto back = read_perturb_csv(file);
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[0].params, "k=250;n=2");
    EXPECT_EQ(back[0].eff_std, 0.125);
    EXPECT_EQ(back[0].eff_mean, 0.0625);
    EXPECT_EQ(back[0].sparsity, 26.2144);
    EXPECT_EQ(back[0].final_acc, 0.61);
    EXPECT_FALSE(back[1].final_acc.has_value());
    EXPECT_THROW(write_perturb_csv(file, {prow("a,b", "", 0, 1, 1, 0.5)}), Error);
}

TEST(Scatter, PerfectlyAntiCorrelatedPoints)
{
    std::vector<PerturbRow> rows;
    // three specs at 20% remaining, two seeds each, acc = 0.9 - eff_std exactly in the means
    for (int s = 0; s < 3; ++s) {
        const double eff = 0.1 * (s + 1);
        rows.push_back(prow("noise", "n=" + std::to_string(s), eff - 0.01, 20.0, 1, 0.9 - eff + 0.01));
        rows.push_back(prow("noise", "n=" + std::to_string(s), eff + 0.01, 20.0, 2, 0.9 - eff - 0.01));
    }
    rows.push_back(prow("none", "", 0.0, 51.2, 1, 0.2));             // other sparsity
    rows.push_back(prow("shuffle", "", 0.3, 20.0, 1, std::nullopt));  // not retrained
    const auto rep = scatter_report(rows);
    EXPECT_EQ(rep.sparsity, 20.0);
    ASSERT_EQ(rep.points.size(), 3u);
    EXPECT_EQ(rep.points[0].seeds, 2u);
    EXPECT_NEAR(rep.points[1].eff_std, 0.2, 1e-15);
    EXPECT_NEAR(rep.correlation.r, -1.0, 1e-12);
    EXPECT_LT(rep.correlation.p, 1e-6);

    EXPECT_EQ(scatter_report(rows, 20.0).points.size(), 3u);
    EXPECT_THROW(scatter_report(rows, 51.2), Error);  // one point
    EXPECT_THROW(scatter_report({prow("none", "", 0, 20, 1, std::nullopt)}), Error);

    const auto pts = temp_file("scatter.csv"), stats = temp_file("scatter-stats.csv");
    write_scatter(pts, stats, rep);
    const auto text = slurp(stats);
    EXPECT_EQ(text.substr(0, text.find('\n')), kScatterStatsHeader);
    EXPECT_EQ(text.substr(text.find('\n') + 1, 5), "20,3,");
}

TEST(TelemetrySummary, MeansOverRunsWithOptionalColumns)
{
    TelemetryRecord a0, a5, b0;
    a0.iteration = b0.iteration = 0;
    a5.iteration = 5;
    a0.train_loss = 2.0;
    b0.train_loss = 3.0;
    a0.l2_from_final = 4.0;  // only one run has it
    a5.train_loss = 1.0;
    const auto rows = telemetry_summary({{a0, a5}, {b0}});
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[0].iteration, 0u);
    EXPECT_EQ(rows[0].runs, 2u);
    ASSERT_EQ(rows[0].means.size(), telemetry_metric_names().size());
    EXPECT_EQ(rows[0].means[0], 2.5);
    EXPECT_EQ(rows[0].means[8], 4.0);
    EXPECT_EQ(rows[0].means[7], 1.0);  // cos_init defaults to 1
    EXPECT_EQ(rows[1].runs, 1u);
    EXPECT_FALSE(rows[1].means[9].has_value());

    const auto file = temp_file("telemetry.csv");
    write_telemetry_summary(file, rows);
    const auto text = slurp(file);
    EXPECT_EQ(text.substr(0, text.find('\n')),
              "iteration,runs,train_loss,eval_loss,eval_acc,mean_abs_w,sign_flip_frac,grad_l2,l2_init,cos_init,"
              "l2_final,cos_final");
    EXPECT_NE(text.find("\n5,1,1,"), std::string::npos);
    EXPECT_EQ(text.back(), '\n');
    EXPECT_NE(text.find(",,\n"), std::string::npos);  // missing final-distance columns stay empty
}

TEST(Svg, WellFormedDocumentWithSeriesAndBands)
{
    PlotSeries a{"k=0 <dense>", {100, 80, 64}, {0.7, 0.69, 0.66}, {0.68, 0.67, 0.6}, {0.72, 0.7, 0.7}, true};
    PlotSeries b{"points", {100, 51.2}, {0.5, 0.55}, {}, {}, false};
    const std::string svg = svg_plot({"accuracy & sparsity", "% remaining", "acc", true, true}, {a, b});
    EXPECT_EQ(svg.rfind("<svg", 0), 0u);
    EXPECT_NE(svg.find("</svg>"), std::string::npos);
    EXPECT_NE(svg.find("k=0 &lt;dense&gt;"), std::string::npos);
    EXPECT_NE(svg.find("accuracy &amp; sparsity"), std::string::npos);
    EXPECT_EQ(svg.find("nan"), std::string::npos);
    EXPECT_EQ(svg.find("inf"), std::string::npos);
    // an empty plot still renders
    EXPECT_NE(svg_plot({"empty", "x", "y", false, false}, {}).find("</svg>"), std::string::npos);
}
