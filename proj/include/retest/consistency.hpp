#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "retest/core.hpp"
#include "retest/reliability.hpp"

namespace retest::consistency {

// Pair concordance compares classes on the collapsed scale where perfect
// counts as excellent (the four interpretation classes). The adjacent
// tolerance option admits neighbouring classes and exists solely to probe
// how a nonzero two-of-three count could arise; it is off by default.
struct ConcordanceOptions {
    bool adjacent_tolerance = false;
};

struct ConsistencyRecord {
    std::string metric_id;
    MetricClass metric_class = MetricClass::adaptive;
    std::vector<std::optional<ReliabilityClass>> classes;  // by model order
    int concordant_pairs = 0;
    int n_models_present = 0;
    reliability::IccKind which = reliability::IccKind::icc31;
};

// One record per metric in the union of the models' calculated metrics.
// Pairs with either side missing never count as concordant.
std::vector<ConsistencyRecord> build_consistency_records(
    std::span<const reliability::ModelResults> by_model, reliability::IccKind which,
    const ConcordanceOptions& options = {});

// 5 x 5 class-correspondence counts for one model pair, with per-cell
// metric identities and pipeline labels for plotting.
struct CorrespondenceMatrix {
    std::string model_a, model_b;
    reliability::IccKind which = reliability::IccKind::icc31;
    std::array<std::array<int, kReliabilityClassCount>, kReliabilityClassCount>
        counts{};

    struct CellMetric {
        std::string metric_id;
        std::string pipeline;
    };
    std::array<std::array<std::vector<CellMetric>, kReliabilityClassCount>,
               kReliabilityClassCount>
        cell_metrics;

    int total() const;
    int diagonal_sum() const;    // strict five-class diagonal
    int concordant_sum() const;  // collapsed comparison scale
    bool empty_signal() const { return total() == 0; }
};

CorrespondenceMatrix correspondence_matrix(const reliability::ModelResults& a,
                                           const reliability::ModelResults& b,
                                           reliability::IccKind which);

// Metrics whose class is excellent-or-perfect in all three models (which
// implies three concordant pairs). errc::config unless records cover
// exactly three models.
std::vector<std::string> rt_consistent_metrics(
    std::span<const ConsistencyRecord> records);

// Tables 10-12 shape: per collapsed-class row, counts of metrics with
// 0/1/2/3 concordant pairs, from one model's perspective.
struct DistributionTable {
    std::string model_id;
    reliability::IccKind which = reliability::IccKind::icc31;
    // rows: excellent, good, moderate, poor; columns: 0..3 concordant pairs
    std::array<std::array<int, 4>, 4> counts{};
    std::array<int, 4> row_totals{};
    std::array<int, 4> column_totals{};
    int total = 0;
    int incomparable = 0;  // metrics with no class in this model
    bool strict_rule = true;
};

// Collapsed class shown in the distribution row order excellent..poor.
ReliabilityClass distribution_row_class(int row);

DistributionTable consistency_distribution(std::span<const ConsistencyRecord> records,
                                           size_t model_index,
                                           const std::string& model_id,
                                           bool strict_rule = true);

}  // namespace retest::consistency
