#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "retest/agreement.hpp"
#include "retest/consistency.hpp"
#include "retest/core.hpp"
#include "retest/ingest.hpp"
#include "retest/reliability.hpp"
#include "retest/screening.hpp"

namespace retest::report {

enum class Format { csv, json, markdown };
Format format_from_string(std::string_view);
std::string_view to_string(Format);
std::string_view extension(Format);

// One rendered table cell. Numbers render at the table precision with
// round-half-even; full cells render at shortest round-trip precision.
struct Cell {
    enum class Kind { text, integer, number, number_full, empty };
    Kind kind = Kind::empty;
    std::string text;
    long long i = 0;
    double d = 0;

    static Cell str(std::string s);
    static Cell integer(long long v);
    static Cell num(double v);
    static Cell full(double v);
    static Cell none();
};

struct Table {
    std::string name;  // output file stem
    std::vector<std::string> columns;
    std::vector<std::vector<Cell>> rows;
    std::vector<std::string> notes;  // rendered in json/markdown only
};

std::string render_table(const Table&, Format, int precision = 4);

struct PipelineConfig {
    std::filesystem::path data_path;
    std::optional<ingest::TableFormat> data_format;  // else inferred from path
    std::filesystem::path registry_path;
    std::optional<std::filesystem::path> thresholds_path;
    ThresholdConfig thresholds;  // after file/flag overrides
    reliability::IccMode icc_mode = reliability::IccMode::within;
    bool run_screening = true;
    bool run_study1 = true;
    bool run_study2 = true;
    bool run_study3 = true;
    std::filesystem::path out_dir;
    std::vector<Format> formats{Format::csv};
    uint64_t seed = 0;
    bool adjacent_class_tolerance = false;
    agreement::RangePool range_pool = agreement::RangePool::both_models;
    ingest::IndexOrdering ordering = ingest::IndexOrdering::first_appearance;
    int threads = 0;  // 0 = hardware concurrency
    bool stamp = false;
    int precision = 4;

    // Study 3 needs Study 2 needs Study 1.
    void validate() const;
};

struct ReportBundle {
    std::vector<std::string> models;
    size_t n_runs = 0;
    size_t n_segments = 0;
    size_t n_metric_universe = 0;
    size_t n_cells = 0;

    ingest::ExclusionReport exclusion;
    std::vector<screening::ScreenDecision> screening;  // model-major, registry order

    // Study 1 (kept, numeric metrics only).
    std::vector<reliability::ModelResults> study1;
    std::vector<reliability::ClassSummaryTable> study1_summaries;  // model x kind
    struct Distribution {
        std::string model_id;
        std::array<int, kReliabilityClassCount> counts31{};
        std::array<int, kReliabilityClassCount> counts3k{};
        int screened = 0;
        int not_calculated = 0;
        int kappa_only = 0;   // kept categorical metrics (no ICC path)
        int degenerate = 0;   // kept metrics whose ICC is undefined
    };
    std::vector<Distribution> distributions;

    struct Study2 {
        std::vector<consistency::ConsistencyRecord> records31, records3k;
        std::vector<consistency::CorrespondenceMatrix> matrices;  // pair x kind
        std::vector<consistency::DistributionTable> distributions;  // model x kind
        std::vector<std::string> rt31, rt3k;
        bool rt_available = false;  // exactly three models
    };
    std::optional<Study2> study2;

    struct Study3 {
        std::vector<std::string> eligible31, eligible3k;
        std::vector<std::string> pair_labels;
        std::vector<std::vector<agreement::AgreementResult>> pairs31, pairs3k;
        agreement::RollupTable rollup31, rollup3k;
    };
    std::optional<Study3> study3;

    std::vector<std::string> notices;
    std::vector<Table> tables;
    std::vector<std::pair<std::string, std::string>> json_sidecars;  // file -> body
    std::string manifest_json;

    const Table* find_table(const std::string& name) const;
};

// Pure compute: ingest -> validate -> screen -> studies -> tables.
ReportBundle run_pipeline(const PipelineConfig&);

// Writes every table (csv always, other requested formats additionally),
// sidecars and the run manifest under cfg.out_dir.
void write_outputs(const ReportBundle&, const PipelineConfig&);

// run_pipeline + write_outputs; on a mid-pipeline error the partial
// bundle is written to out_dir/quarantine before the error propagates.
ReportBundle run_and_write(const PipelineConfig&);

}  // namespace retest::report
