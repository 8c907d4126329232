#pragma once

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "retest/core.hpp"
#include "retest/ingest.hpp"

namespace retest::reliability {

// The within mode follows the one-way formulas (MS_W in the denominator);
// the residual mode treats runs as a fixed effect and substitutes the
// two-way residual MS_E.
enum class IccMode { within, residual };
enum class IccKind { icc31, icc3k };

std::string_view to_string(IccMode);
std::string_view to_string(IccKind);
IccMode icc_mode_from_string(std::string_view);

// Two-way mean squares of a balanced S x k replicate grid:
//   ms_b  between-segment mean square
//   ms_w  pooled within-segment mean square
//   ms_r  between-run mean square
//   ms_e  residual mean square after removing the run main effect
struct MeanSquares {
    double ms_b = 0;
    double ms_w = 0;
    double ms_e = 0;
    double ms_r = 0;
    int n = 0;  // segments
    int k = 0;  // replicates
};

// rows: S inner vectors of length k, complete segments only.
MeanSquares mean_squares(const std::vector<std::vector<double>>& rows,
                         int min_segments = 2);

// ICC(3,1) = (MS_B - MS_W) / (MS_B + (k-1) MS_W); may be negative, never
// truncated. errc::degenerate_variance on a zero denominator.
double icc31(const MeanSquares&, IccMode);

// ICC(3,k) = (MS_B - MS_W) / MS_B. errc::degenerate_variance when MS_B = 0.
double icc3k(const MeanSquares&, IccMode);

struct ReliabilityResult {
    std::string model_id;
    std::string metric_id;
    std::string pipeline;
    MetricClass metric_class = MetricClass::adaptive;
    MeanSquares mean_squares;
    double icc31 = 0;
    double icc3k = 0;
    IccMode mode = IccMode::within;
    ReliabilityClass class31 = ReliabilityClass::poor;
    ReliabilityClass class3k = ReliabilityClass::poor;

    double icc(IccKind which) const { return which == IccKind::icc31 ? icc31 : icc3k; }
    ReliabilityClass cls(IccKind which) const {
        return which == IccKind::icc31 ? class31 : class3k;
    }
};

// Full analysis of one pivoted (model, metric) matrix over its complete
// segments. Callers gate on screening first.
ReliabilityResult analyze(const ingest::ReplicateMatrix&, IccMode,
                          const ThresholdConfig&);

struct ModelResults {
    std::string model_id;
    std::vector<ReliabilityResult> results;
};

struct ClassSummaryRow {
    MetricClass metric_class = MetricClass::adaptive;
    int n = 0;
    double min = 0, max = 0, mean = 0;  // meaningful when n > 0
    int excellence_n = 0;               // excellent or perfect
    int good_n = 0;
};

// Table-2-shaped per-class summary for a single model: always all ten
// class rows, plus caption-level counts.
struct ClassSummaryTable {
    std::string model_id;
    IccKind which = IccKind::icc31;
    std::array<ClassSummaryRow, kMetricClassCount> rows{};
    int n_analyzed = 0;
    int n_not_calculated = 0;
};

ClassSummaryTable study1_summary(std::span<const ReliabilityResult> results,
                                 IccKind which, int n_not_calculated = 0);

// Counts per reliability class, indexed by the enum order poor..perfect.
std::array<int, kReliabilityClassCount> class_distribution(
    std::span<const ReliabilityResult> results, IccKind which);

}  // namespace retest::reliability
