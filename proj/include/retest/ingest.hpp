#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "retest/core.hpp"

namespace retest::ingest {

enum class TableFormat { csv, jsonl };
enum class IndexOrdering { first_appearance, sorted };

TableFormat table_format_from_string(std::string_view);
TableFormat table_format_from_path(const std::filesystem::path&);

// Long-format measurement table plus its deduplicated index lists.
// Immutable once loaded; safe to share across parallel analyses.
struct Dataset {
    std::vector<MeasurementCell> cells;
    std::vector<std::string> models;
    std::vector<std::string> runs;
    std::vector<std::string> segments;
    std::vector<std::string> metrics;  // metrics present in the data
    MetricRegistry registry;
    bool has_registry = false;

    size_t k() const noexcept { return runs.size(); }
    bool empty() const noexcept { return cells.empty(); }

    int model_index(const std::string&) const;  // -1 when absent
    int run_index(const std::string&) const;
    int segment_index(const std::string&) const;
    int metric_index(const std::string&) const;

    // Cell indices for one (model, metric) slice; nullptr when the slice
    // holds no cells at all.
    const std::vector<uint32_t>* slice(const std::string& model_id,
                                       const std::string& metric_id) const;

    void rebuild_index();

private:
    std::unordered_map<std::string, int> model_ix_, run_ix_, segment_ix_, metric_ix_;
    std::map<std::pair<int, int>, std::vector<uint32_t>> slices_;
};

Dataset load_long_table(const std::filesystem::path& path, TableFormat format,
                        const MetricRegistry* registry = nullptr,
                        IndexOrdering ordering = IndexOrdering::first_appearance);

void write_long_table(const Dataset&, const std::filesystem::path& path,
                      TableFormat format = TableFormat::csv);

struct ExclusionRow {
    std::string model_id;
    std::string metric_id;
    int n_valid = 0;
    int n_violation = 0;
    int n_not_calculated = 0;
};

// Per-(model, metric) exclusion counts over the full model x registry
// cross product, so "N were not calculated" style captions reconcile.
struct ExclusionReport {
    std::vector<ExclusionRow> rows;

    int violations_total() const;
    // Metrics with zero valid cells for the model.
    int not_calculated_metrics(const std::string& model_id) const;
};

// Re-marks cells violating their MetricSpec as constraint_violation and
// counts violations per (model, metric). No cell is deleted.
std::pair<Dataset, ExclusionReport> validate_against_registry(Dataset dataset);

// S x k grid of values for one (model, metric) pair; the unit of
// reliability analysis.
struct ReplicateMatrix {
    std::string model_id;
    MetricSpec spec;
    std::vector<std::string> segment_ids;  // length S, dataset order
    std::vector<std::string> run_ids;      // length k, dataset order

    struct Entry {
        CellStatus status = CellStatus::not_calculated;
        std::optional<MetricValue> value;
    };
    std::vector<Entry> grid;     // S * k, row-major
    std::vector<char> complete;  // per segment: all k cells valid
    size_t n_cells_present = 0;  // cells that existed in the dataset

    size_t n_segments() const noexcept { return segment_ids.size(); }
    size_t k() const noexcept { return run_ids.size(); }
    const Entry& at(size_t s, size_t r) const { return grid[s * run_ids.size() + r]; }
    Entry& at(size_t s, size_t r) { return grid[s * run_ids.size() + r]; }

    // Metric absent for this model entirely (distinct from an error).
    bool empty_signal() const noexcept { return n_cells_present == 0; }

    size_t n_complete() const;
    size_t n_valid_cells() const;
    std::vector<size_t> complete_segment_rows() const;

    // All valid values, row-major (screening prevalence, range pooling).
    std::vector<const MetricValue*> valid_values() const;

    // Numeric grid over complete segments; errc::type_mismatch for
    // categorical metrics.
    std::vector<std::vector<double>> complete_numeric_rows() const;

    void recompute_completeness();
};

ReplicateMatrix pivot_replicates(const Dataset&, const std::string& model_id,
                                 const std::string& metric_id);

}  // namespace retest::ingest
