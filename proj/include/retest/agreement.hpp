#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "retest/core.hpp"
#include "retest/ingest.hpp"

namespace retest::agreement {

enum class StatKind { mae, kappa };
std::string_view to_string(StatKind);

// Mean absolute error over segment-paired sequences; symmetric.
double mae(std::span<const double> a, std::span<const double> b);

// Cohen's kappa = (p_o - p_e) / (1 - p_e). Empty when both labelings are
// constant on the same label (p_e = 1), which leaves agreement beyond
// chance undefined.
std::optional<double> cohens_kappa(std::span<const std::string> a,
                                   std::span<const std::string> b);

// k x k statistics between every run of model A and every run of model B
// over their shared complete segments (16 entries for k = 4).
struct RunPairGrid {
    std::string model_a, model_b, metric_id;
    StatKind stat_kind = StatKind::mae;
    int k = 0;
    std::vector<std::optional<double>> values;  // k*k, entry (i,j) at i*k+j
    int n_segments = 0;                         // shared complete segments

    int n_undefined() const;
};

RunPairGrid run_pair_grid(const ingest::ReplicateMatrix& a,
                          const ingest::ReplicateMatrix& b,
                          const ThresholdConfig& cfg);

struct GridAggregate {
    double median = 0;        // midpoint convention for even counts
    double trimmed_mean = 0;  // cfg.trim_count dropped per tail
    int n_used = 0;
    int n_undefined = 0;
};

// Empty when every grid entry is undefined (incomparable pair).
std::optional<GridAggregate> aggregate_grid(const RunPairGrid&,
                                            const ThresholdConfig& cfg);

// median MAE / (max - min) of the pooled values. errc::degenerate_variance
// when the range is zero.
double nmae_range(double median_mae, std::span<const double> pooled_values);

// Population for the normalisation range.
enum class RangePool { both_models, model_a_only };

struct AgreementResult {
    std::string model_a, model_b, metric_id;
    StatKind stat_kind = StatKind::mae;
    double median_stat = 0;
    double trimmed_mean_stat = 0;
    std::optional<double> range_used;  // continuous only
    std::optional<double> nmae;        // continuous only
    std::optional<AgreementClass> agreement_class;
    int n_undefined_entries = 0;
    bool incomparable = false;
    std::string note;
};

// Full per-(metric, model pair) comparison: grid, aggregation, range
// normalisation, classification. Data-driven shortfalls (insufficient
// shared segments, all-undefined kappa grids) come back flagged
// incomparable instead of throwing.
AgreementResult compare_metric(const ingest::ReplicateMatrix& a,
                               const ingest::ReplicateMatrix& b,
                               const ThresholdConfig& cfg,
                               RangePool range_pool = RangePool::both_models);

// Intersects the two reliability tracks' RT-consistent sets into the
// Study 3 eligibility sets (single-inference and aggregated).
std::pair<std::vector<std::string>, std::vector<std::string>> study3_eligibility(
    std::span<const std::string> rt31, std::span<const std::string> rt3k);

// Table-13-shaped rollup: rows near-ideal..non-acceptable, one column per
// model pair plus the across-3-pairs (A-3P) count.
struct RollupTable {
    std::vector<std::string> pair_labels;
    // counts[row][pair]; row order near_ideal, moderate, low, non_acceptable
    std::array<std::vector<int>, kAgreementClassCount> counts;
    std::array<int, kAgreementClassCount> a3p{};
    std::vector<int> pair_totals;
    std::vector<int> pair_incomparable;
    int a3p_total = 0;
    int n_eligible = 0;
};

// Agreement class display order used by the rollup rows.
AgreementClass rollup_row_class(int row);

RollupTable a3p_rollup(std::span<const std::vector<AgreementResult>> per_pair,
                       std::span<const std::string> pair_labels);

}  // namespace retest::agreement
