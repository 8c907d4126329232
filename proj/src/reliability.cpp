#include "retest/reliability.hpp"

#include <algorithm>
#include <cmath>

namespace retest::reliability {

std::string_view to_string(IccMode m) {
    return m == IccMode::within ? "within" : "residual";
}

std::string_view to_string(IccKind k) {
    return k == IccKind::icc31 ? "icc31" : "icc3k";
}

IccMode icc_mode_from_string(std::string_view s) {
    if (s == "within") return IccMode::within;
    if (s == "residual") return IccMode::residual;
    fail(errc::config, "unknown icc mode '" + std::string(s) + "'");
}

MeanSquares mean_squares(const std::vector<std::vector<double>>& rows,
                         int min_segments) {
    const int S = static_cast<int>(rows.size());
    if (S < std::max(2, min_segments))
        fail(errc::insufficient_data,
             "mean_squares: " + std::to_string(S) + " segments, need >= " +
                 std::to_string(std::max(2, min_segments)));
    const int k = static_cast<int>(rows.front().size());
    if (k < 2) fail(errc::insufficient_data, "mean_squares: need k >= 2 replicates");
    for (const auto& row : rows)
        if (static_cast<int>(row.size()) != k)
            fail(errc::invalid_input, "mean_squares: ragged replicate grid");

    double grand = 0;
    for (const auto& row : rows)
        for (double x : row) grand += x;
    grand /= double(S) * double(k);

    std::vector<double> row_mean(S, 0.0), col_mean(k, 0.0);
    for (int s = 0; s < S; ++s) {
        for (int r = 0; r < k; ++r) {
            row_mean[s] += rows[s][r];
            col_mean[r] += rows[s][r];
        }
        row_mean[s] /= k;
    }
    for (int r = 0; r < k; ++r) col_mean[r] /= S;

    double ss_b = 0, ss_w = 0, ss_r = 0, ss_res = 0, ss_total = 0;
    for (int s = 0; s < S; ++s) {
        const double dm = row_mean[s] - grand;
        ss_b += dm * dm;
        for (int r = 0; r < k; ++r) {
            const double x = rows[s][r];
            const double dw = x - row_mean[s];
            ss_w += dw * dw;
            const double de = x - row_mean[s] - col_mean[r] + grand;
            ss_res += de * de;
            const double dt = x - grand;
            ss_total += dt * dt;
        }
    }
    ss_b *= k;
    for (int r = 0; r < k; ++r) {
        const double dc = col_mean[r] - grand;
        ss_r += dc * dc;
    }
    ss_r *= S;

    // SS_total = SS_between_segments + SS_between_runs + SS_residual, and
    // SS_within = SS_between_runs + SS_residual.
    const double tol = 1e-9 * std::max(1.0, ss_total);
    if (std::abs(ss_total - (ss_b + ss_r + ss_res)) > tol ||
        std::abs(ss_w - (ss_r + ss_res)) > tol)
        fail(errc::internal, "mean_squares: sum-of-squares decomposition broke");

    MeanSquares ms;
    ms.n = S;
    ms.k = k;
    ms.ms_b = ss_b / double(S - 1);
    ms.ms_w = ss_w / (double(S) * double(k - 1));
    ms.ms_r = ss_r / double(k - 1);
    ms.ms_e = ss_res / (double(S - 1) * double(k - 1));
    return ms;
}

namespace {

double error_term(const MeanSquares& ms, IccMode mode) {
    return mode == IccMode::within ? ms.ms_w : ms.ms_e;
}

}  // namespace

double icc31(const MeanSquares& ms, IccMode mode) {
    const double err = error_term(ms, mode);
    const double denom = ms.ms_b + double(ms.k - 1) * err;
    if (denom <= 0.0)
        fail(errc::degenerate_variance,
             "icc31: zero variance denominator (metric should have been screened)");
    return (ms.ms_b - err) / denom;
}

double icc3k(const MeanSquares& ms, IccMode mode) {
    if (ms.ms_b <= 0.0)
        fail(errc::degenerate_variance,
             "icc3k: MS_B is zero (metric should have been screened)");
    return (ms.ms_b - error_term(ms, mode)) / ms.ms_b;
}

ReliabilityResult analyze(const ingest::ReplicateMatrix& matrix, IccMode mode,
                          const ThresholdConfig& cfg) {
    ReliabilityResult result;
    result.model_id = matrix.model_id;
    result.metric_id = matrix.spec.metric_id;
    result.pipeline = matrix.spec.pipeline;
    result.metric_class = matrix.spec.metric_class;
    result.mode = mode;
    result.mean_squares = mean_squares(matrix.complete_numeric_rows(), cfg.min_segments);
    result.icc31 = icc31(result.mean_squares, mode);
    result.icc3k = icc3k(result.mean_squares, mode);
    result.class31 = classify_reliability(result.icc31, cfg);
    result.class3k = classify_reliability(result.icc3k, cfg);
    return result;
}

ClassSummaryTable study1_summary(std::span<const ReliabilityResult> results,
                                 IccKind which, int n_not_calculated) {
    ClassSummaryTable table;
    table.which = which;
    table.n_not_calculated = n_not_calculated;
    for (int c = 0; c < kMetricClassCount; ++c)
        table.rows[c].metric_class = static_cast<MetricClass>(c);

    for (const auto& result : results) {
        if (table.model_id.empty()) {
            table.model_id = result.model_id;
        } else if (table.model_id != result.model_id) {
            fail(errc::invalid_input,
                 "study1_summary: results span more than one model");
        }
        auto& row = table.rows[static_cast<int>(result.metric_class)];
        const double value = result.icc(which);
        if (row.n == 0) {
            row.min = row.max = value;
        } else {
            row.min = std::min(row.min, value);
            row.max = std::max(row.max, value);
        }
        row.mean += value;  // finalised below
        ++row.n;
        const ReliabilityClass cls = result.cls(which);
        if (cls == ReliabilityClass::excellent || cls == ReliabilityClass::perfect)
            ++row.excellence_n;
        if (cls == ReliabilityClass::good) ++row.good_n;
        ++table.n_analyzed;
    }
    for (auto& row : table.rows)
        if (row.n > 0) row.mean /= row.n;
    return table;
}

std::array<int, kReliabilityClassCount> class_distribution(
    std::span<const ReliabilityResult> results, IccKind which) {
    std::array<int, kReliabilityClassCount> counts{};
    for (const auto& result : results)
        ++counts[static_cast<int>(result.cls(which))];
    return counts;
}

}  // namespace retest::reliability
