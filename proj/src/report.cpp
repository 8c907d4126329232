#include "retest/report.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "retest/csv.hpp"

namespace retest::report {

using nlohmann::json;
using reliability::IccKind;
using reliability::IccMode;

namespace {

constexpr std::string_view kToolVersion = "0.1.0";

std::string reliability_level_label(ReliabilityClass c) {
    switch (c) {
        case ReliabilityClass::perfect: return "Perfect reliability";
        case ReliabilityClass::excellent: return "Excellent reliability";
        case ReliabilityClass::good: return "Good reliability";
        case ReliabilityClass::moderate: return "Moderate reliability";
        case ReliabilityClass::poor: return "Poor reliability";
    }
    return "?";
}

std::string agreement_label(AgreementClass c) {
    switch (c) {
        case AgreementClass::near_ideal: return "near-ideal";
        case AgreementClass::moderate: return "moderate";
        case AgreementClass::low: return "low";
        case AgreementClass::non_acceptable: return "non-acceptable";
    }
    return "?";
}

std::string sanitize(std::string_view id) {
    std::string out;
    out.reserve(id.size());
    for (char c : id) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                        (c >= '0' && c <= '9') || c == '_' || c == '-';
        out.push_back(ok ? c : '_');
    }
    return out;
}

void parallel_for(size_t n, int threads, const std::function<void(size_t)>& fn) {
    if (n == 0) return;
    size_t n_threads = threads > 0 ? size_t(threads)
                                   : std::max(1u, std::thread::hardware_concurrency());
    n_threads = std::min(n_threads, n);
    if (n_threads <= 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<size_t> next{0};
    std::vector<std::exception_ptr> errors(n_threads);
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (size_t t = 0; t < n_threads; ++t) {
        pool.emplace_back([&, t] {
            try {
                while (true) {
                    const size_t i = next.fetch_add(1);
                    if (i >= n) break;
                    fn(i);
                }
            } catch (...) {
                errors[t] = std::current_exception();
                next.store(n);
            }
        });
    }
    for (auto& worker : pool) worker.join();
    for (auto& err : errors)
        if (err) std::rethrow_exception(err);
}

double round_half_even(double v, int precision) {
    double scale = 1.0;
    for (int i = 0; i < precision; ++i) scale *= 10.0;
    const double r = std::nearbyint(v * scale) / scale;
    return r == 0.0 ? 0.0 : r;
}

}  // namespace

Format format_from_string(std::string_view s) {
    if (s == "csv") return Format::csv;
    if (s == "json") return Format::json;
    if (s == "markdown" || s == "md") return Format::markdown;
    fail(errc::config, "unsupported output format '" + std::string(s) + "'");
}

std::string_view to_string(Format f) {
    switch (f) {
        case Format::csv: return "csv";
        case Format::json: return "json";
        case Format::markdown: return "markdown";
    }
    return "?";
}

std::string_view extension(Format f) {
    switch (f) {
        case Format::csv: return ".csv";
        case Format::json: return ".json";
        case Format::markdown: return ".md";
    }
    return "";
}

Cell Cell::str(std::string s) {
    Cell c;
    c.kind = Kind::text;
    c.text = std::move(s);
    return c;
}
Cell Cell::integer(long long v) {
    Cell c;
    c.kind = Kind::integer;
    c.i = v;
    return c;
}
Cell Cell::num(double v) {
    Cell c;
    c.kind = Kind::number;
    c.d = v;
    return c;
}
Cell Cell::full(double v) {
    Cell c;
    c.kind = Kind::number_full;
    c.d = v;
    return c;
}
Cell Cell::none() { return Cell{}; }

namespace {

std::string cell_text(const Cell& cell, int precision) {
    switch (cell.kind) {
        case Cell::Kind::text: return cell.text;
        case Cell::Kind::integer: return std::to_string(cell.i);
        case Cell::Kind::number: return io::format_fixed(cell.d, precision);
        case Cell::Kind::number_full: return io::format_double(cell.d);
        case Cell::Kind::empty: return "";
    }
    return "";
}

}  // namespace

std::string render_table(const Table& table, Format format, int precision) {
    std::ostringstream out;
    switch (format) {
        case Format::csv: {
            for (size_t c = 0; c < table.columns.size(); ++c)
                out << (c ? "," : "") << io::csv_escape(table.columns[c]);
            out << '\n';
            for (const auto& row : table.rows) {
                for (size_t c = 0; c < row.size(); ++c)
                    out << (c ? "," : "") << io::csv_escape(cell_text(row[c], precision));
                out << '\n';
            }
            break;
        }
        case Format::json: {
            json j{{"name", table.name}, {"columns", table.columns}};
            json rows = json::array();
            for (const auto& row : table.rows) {
                json jrow = json::array();
                for (const auto& cell : row) {
                    switch (cell.kind) {
                        case Cell::Kind::text: jrow.push_back(cell.text); break;
                        case Cell::Kind::integer: jrow.push_back(cell.i); break;
                        case Cell::Kind::number:
                            jrow.push_back(round_half_even(cell.d, precision));
                            break;
                        case Cell::Kind::number_full: jrow.push_back(cell.d); break;
                        case Cell::Kind::empty: jrow.push_back(nullptr); break;
                    }
                }
                rows.push_back(std::move(jrow));
            }
            j["rows"] = std::move(rows);
            j["notes"] = table.notes;
            out << j.dump(2) << '\n';
            break;
        }
        case Format::markdown: {
            out << "| ";
            for (size_t c = 0; c < table.columns.size(); ++c)
                out << table.columns[c] << " |" << (c + 1 < table.columns.size() ? " " : "");
            out << "\n|";
            for (size_t c = 0; c < table.columns.size(); ++c) out << " --- |";
            out << '\n';
            for (const auto& row : table.rows) {
                out << "| ";
                for (size_t c = 0; c < row.size(); ++c)
                    out << cell_text(row[c], precision) << " |" << (c + 1 < row.size() ? " " : "");
                out << '\n';
            }
            for (const auto& note : table.notes) out << "\n_" << note << "_\n";
            break;
        }
    }
    return out.str();
}

void PipelineConfig::validate() const {
    if (run_study3 && !run_study2)
        fail(errc::config, "study3 requires study2 outputs");
    if (run_study2 && !run_study1)
        fail(errc::config, "study2 requires study1 outputs");
    if (run_study1 && !run_screening)
        fail(errc::config, "study1 requires the screening stage");
    if (data_path.empty()) fail(errc::config, "no input data path configured");
    if (registry_path.empty()) fail(errc::config, "no registry path configured");
    if (precision < 0 || precision > 12)
        fail(errc::config, "render precision must lie in [0, 12]");
    if (threads < 0) fail(errc::config, "threads must be >= 0");
    thresholds.validate();
}

const Table* ReportBundle::find_table(const std::string& name) const {
    for (const auto& table : tables)
        if (table.name == name) return &table;
    return nullptr;
}

// ---- pipeline ---------------------------------------------------------------

namespace {

struct PipelineState {
    const PipelineConfig* cfg = nullptr;
    MetricRegistry registry;
    ingest::Dataset dataset;
    std::vector<std::optional<ingest::ReplicateMatrix>> matrices;  // model x metric
    // per (model, metric): analyzable numeric kept metric
    std::vector<char> kept_numeric;
    std::vector<char> kappa_only;
    std::vector<char> degenerate;
    size_t n_models = 0, n_metrics = 0;

    size_t ix(size_t m, size_t t) const { return m * n_metrics + t; }
};

Table make_exclusion_table(const ingest::ExclusionReport& report) {
    Table table;
    table.name = "exclusion";
    table.columns = {"model_id", "metric_id", "n_valid", "n_violation",
                     "n_not_calculated"};
    for (const auto& row : report.rows)
        table.rows.push_back({Cell::str(row.model_id), Cell::str(row.metric_id),
                              Cell::integer(row.n_valid), Cell::integer(row.n_violation),
                              Cell::integer(row.n_not_calculated)});
    return table;
}

Table make_screening_table(const std::vector<screening::ScreenDecision>& decisions) {
    Table table;
    table.name = "screening";
    table.columns = {"model_id", "metric_id", "prevalence", "n_complete_segments",
                     "decision"};
    for (const auto& d : decisions) {
        table.rows.push_back(
            {Cell::str(d.model_id), Cell::str(d.metric_id),
             d.prevalence ? Cell::full(*d.prevalence) : Cell::none(),
             Cell::integer(d.n_complete_segments),
             Cell::str(std::string(screening::to_string(d.decision)))});
    }
    return table;
}

Table make_reliability_detail(const std::vector<reliability::ModelResults>& by_model) {
    Table table;
    table.name = "reliability_detail";
    table.columns = {"model_id", "metric_id", "metric_class", "n", "k",
                     "ms_b", "ms_w", "ms_e", "icc31", "icc3k",
                     "class31", "class3k", "mode"};
    for (const auto& model : by_model) {
        for (const auto& r : model.results) {
            table.rows.push_back(
                {Cell::str(r.model_id), Cell::str(r.metric_id),
                 Cell::str(std::string(to_string(r.metric_class))),
                 Cell::integer(r.mean_squares.n), Cell::integer(r.mean_squares.k),
                 Cell::full(r.mean_squares.ms_b), Cell::full(r.mean_squares.ms_w),
                 Cell::full(r.mean_squares.ms_e), Cell::full(r.icc31),
                 Cell::full(r.icc3k), Cell::str(std::string(to_string(r.class31))),
                 Cell::str(std::string(to_string(r.class3k))),
                 Cell::str(std::string(reliability::to_string(r.mode)))});
        }
    }
    return table;
}

Table make_study1_summary_table(const reliability::ClassSummaryTable& summary,
                                const std::string& model_id) {
    Table table;
    table.name = "study1_" + sanitize(model_id) + "_" +
                 std::string(reliability::to_string(summary.which));
    table.columns = {"metric_class", "n", "min", "max", "mean", "excellence_n",
                     "good_n"};
    for (const auto& row : summary.rows) {
        table.rows.push_back(
            {Cell::str(std::string(to_string(row.metric_class))), Cell::integer(row.n),
             row.n > 0 ? Cell::num(row.min) : Cell::none(),
             row.n > 0 ? Cell::num(row.max) : Cell::none(),
             row.n > 0 ? Cell::num(row.mean) : Cell::none(),
             Cell::integer(row.excellence_n), Cell::integer(row.good_n)});
    }
    table.notes.push_back("model: " + model_id);
    table.notes.push_back("calculated metrics: " + std::to_string(summary.n_analyzed) +
                          " (" + std::to_string(summary.n_not_calculated) +
                          " were not calculated)");
    return table;
}

Table make_distribution_table(const std::vector<ReportBundle::Distribution>& dists,
                              size_t universe) {
    Table table;
    table.name = "distribution";
    table.columns = {"model_id", "icc_kind", "reliability_level", "count", "percent"};
    auto percent = [universe](int count) -> Cell {
        if (universe == 0) return Cell::none();
        return Cell::integer(
            llround(round_half_even(100.0 * count / double(universe), 0)));
    };
    for (const auto& dist : dists) {
        for (IccKind kind : {IccKind::icc31, IccKind::icc3k}) {
            const auto& counts =
                kind == IccKind::icc31 ? dist.counts31 : dist.counts3k;
            const std::string kind_name(reliability::to_string(kind));
            int analyzed = 0;
            for (int c = kReliabilityClassCount - 1; c >= 0; --c) {
                const auto cls = static_cast<ReliabilityClass>(c);
                table.rows.push_back({Cell::str(dist.model_id), Cell::str(kind_name),
                                      Cell::str(reliability_level_label(cls)),
                                      Cell::integer(counts[c]), percent(counts[c])});
                analyzed += counts[c];
            }
            const int screened = dist.screened;
            table.rows.push_back({Cell::str(dist.model_id), Cell::str(kind_name),
                                  Cell::str("Screened"), Cell::integer(screened),
                                  percent(screened)});
            table.rows.push_back({Cell::str(dist.model_id), Cell::str(kind_name),
                                  Cell::str("Non-numeric"),
                                  Cell::integer(dist.kappa_only),
                                  percent(dist.kappa_only)});
            table.rows.push_back({Cell::str(dist.model_id), Cell::str(kind_name),
                                  Cell::str("Degenerate"),
                                  Cell::integer(dist.degenerate),
                                  percent(dist.degenerate)});
            table.rows.push_back({Cell::str(dist.model_id), Cell::str(kind_name),
                                  Cell::str("Not calculated"),
                                  Cell::integer(dist.not_calculated),
                                  percent(dist.not_calculated)});
            const int total = analyzed + screened + dist.kappa_only +
                              dist.degenerate + dist.not_calculated;
            table.rows.push_back({Cell::str(dist.model_id), Cell::str(kind_name),
                                  Cell::str("Total"), Cell::integer(total),
                                  percent(total)});
        }
    }
    return table;
}

Table make_consistency_table(const std::vector<consistency::ConsistencyRecord>& records,
                             const std::vector<std::string>& models, IccKind which) {
    Table table;
    table.name = "consistency_" + std::string(reliability::to_string(which));
    table.columns = {"metric_id", "metric_class"};
    for (const auto& model : models) table.columns.push_back("class_" + sanitize(model));
    table.columns.push_back("n_models_present");
    table.columns.push_back("concordant_pairs");
    for (const auto& record : records) {
        std::vector<Cell> row{Cell::str(record.metric_id),
                              Cell::str(std::string(to_string(record.metric_class)))};
        for (const auto& cls : record.classes)
            row.push_back(cls ? Cell::str(std::string(to_string(*cls))) : Cell::none());
        row.push_back(Cell::integer(record.n_models_present));
        row.push_back(Cell::integer(record.concordant_pairs));
        table.rows.push_back(std::move(row));
    }
    return table;
}

Table make_consistency_distribution_table(const consistency::DistributionTable& dist) {
    Table table;
    table.name = "consistency_distribution_" + sanitize(dist.model_id) + "_" +
                 std::string(reliability::to_string(dist.which));
    table.columns = {"reliability_level", "concordant_0", "concordant_1",
                     "concordant_2", "concordant_3", "total"};
    for (int row = 0; row < 4; ++row) {
        table.rows.push_back(
            {Cell::str(reliability_level_label(consistency::distribution_row_class(row))),
             Cell::integer(dist.counts[row][0]), Cell::integer(dist.counts[row][1]),
             Cell::integer(dist.counts[row][2]), Cell::integer(dist.counts[row][3]),
             Cell::integer(dist.row_totals[row])});
    }
    table.rows.push_back({Cell::str("Total"), Cell::integer(dist.column_totals[0]),
                          Cell::integer(dist.column_totals[1]),
                          Cell::integer(dist.column_totals[2]),
                          Cell::integer(dist.column_totals[3]),
                          Cell::integer(dist.total)});
    table.notes.push_back("metrics without a class in this model: " +
                          std::to_string(dist.incomparable));
    if (dist.strict_rule) {
        table.notes.push_back(
            "strict pairwise class equality across three models cannot produce "
            "exactly two concordant pairs; the concordant_2 column is structurally "
            "zero under this rule");
    } else {
        table.notes.push_back(
            "adjacent-class tolerance enabled; two-pair counts are reachable");
    }
    return table;
}

std::pair<Table, std::string> make_correspondence_outputs(
    const consistency::CorrespondenceMatrix& matrix) {
    Table table;
    const std::string kind_name(reliability::to_string(matrix.which));
    table.name = "correspondence_" + sanitize(matrix.model_a) + "_" +
                 sanitize(matrix.model_b) + "_" + kind_name;
    table.columns = {"class_a_vs_b"};
    for (int c = 0; c < kReliabilityClassCount; ++c)
        table.columns.push_back(std::string(to_string(static_cast<ReliabilityClass>(c))));
    for (int a = 0; a < kReliabilityClassCount; ++a) {
        std::vector<Cell> row{
            Cell::str(std::string(to_string(static_cast<ReliabilityClass>(a))))};
        for (int b = 0; b < kReliabilityClassCount; ++b)
            row.push_back(Cell::integer(matrix.counts[a][b]));
        table.rows.push_back(std::move(row));
    }
    table.notes.push_back("rows: " + matrix.model_a + "; columns: " + matrix.model_b);
    table.notes.push_back("shared calculated metrics: " + std::to_string(matrix.total()) +
                          "; concordant: " + std::to_string(matrix.concordant_sum()));

    json sidecar{{"model_a", matrix.model_a},
                 {"model_b", matrix.model_b},
                 {"icc_kind", kind_name}};
    json cells = json::array();
    for (int a = 0; a < kReliabilityClassCount; ++a) {
        for (int b = 0; b < kReliabilityClassCount; ++b) {
            if (matrix.cell_metrics[a][b].empty()) continue;
            json metrics = json::array();
            auto sorted = matrix.cell_metrics[a][b];
            std::sort(sorted.begin(), sorted.end(),
                      [](const auto& x, const auto& y) { return x.metric_id < y.metric_id; });
            for (const auto& cm : sorted)
                metrics.push_back({{"metric_id", cm.metric_id}, {"pipeline", cm.pipeline}});
            cells.push_back(
                {{"class_a", std::string(to_string(static_cast<ReliabilityClass>(a)))},
                 {"class_b", std::string(to_string(static_cast<ReliabilityClass>(b)))},
                 {"metrics", std::move(metrics)}});
        }
    }
    sidecar["cells"] = std::move(cells);
    return {std::move(table), sidecar.dump(2) + "\n"};
}

Table make_rt_table(const std::vector<std::string>& metrics,
                    const MetricRegistry& registry, IccKind which) {
    Table table;
    table.name = "rt_consistent_" + std::string(reliability::to_string(which));
    table.columns = {"metric_id", "metric_class"};
    for (const auto& id : metrics) {
        const MetricSpec* spec = registry.find(id);
        table.rows.push_back(
            {Cell::str(id),
             Cell::str(spec ? std::string(to_string(spec->metric_class)) : "")});
    }
    return table;
}

Table make_agreement_detail(const ReportBundle::Study3& study3) {
    Table table;
    table.name = "agreement_detail";
    table.columns = {"model_pair",      "metric_id", "stat_kind",
                     "median",          "trimmed_mean", "range",
                     "nmae",            "agreement_class", "n_undefined_entries",
                     "track",           "note"};
    auto add = [&table](const std::vector<std::vector<agreement::AgreementResult>>& pairs,
                        const std::vector<std::string>& labels, const char* track) {
        for (size_t p = 0; p < pairs.size(); ++p) {
            for (const auto& r : pairs[p]) {
                table.rows.push_back(
                    {Cell::str(labels[p]), Cell::str(r.metric_id),
                     Cell::str(std::string(agreement::to_string(r.stat_kind))),
                     r.incomparable ? Cell::none() : Cell::full(r.median_stat),
                     r.incomparable ? Cell::none() : Cell::full(r.trimmed_mean_stat),
                     r.range_used ? Cell::full(*r.range_used) : Cell::none(),
                     r.nmae ? Cell::full(*r.nmae) : Cell::none(),
                     r.agreement_class
                         ? Cell::str(agreement_label(*r.agreement_class))
                         : Cell::none(),
                     Cell::integer(r.n_undefined_entries), Cell::str(track),
                     Cell::str(r.note)});
            }
        }
    };
    add(study3.pairs31, study3.pair_labels, "icc31");
    add(study3.pairs3k, study3.pair_labels, "icc3k");
    return table;
}

Table make_rollup_table(const ReportBundle::Study3& study3) {
    Table table;
    table.name = "agreement_rollup";
    table.columns = {"agreement_class"};
    const std::array<const char*, 3> pair_short{"A", "B", "C"};
    for (const char* track : {"icc31", "icc3k"}) {
        for (const char* p : pair_short)
            table.columns.push_back(std::string(track) + "_" + p);
        table.columns.push_back(std::string(track) + "_A-3P");
    }
    const auto& r31 = study3.rollup31;
    const auto& r3k = study3.rollup3k;
    for (int row = 0; row < kAgreementClassCount; ++row) {
        std::vector<Cell> cells{
            Cell::str(agreement_label(agreement::rollup_row_class(row)))};
        for (const auto* rollup : {&r31, &r3k}) {
            for (size_t p = 0; p < 3; ++p)
                cells.push_back(Cell::integer(
                    p < rollup->counts[row].size() ? rollup->counts[row][p] : 0));
            cells.push_back(Cell::integer(rollup->a3p[row]));
        }
        table.rows.push_back(std::move(cells));
    }
    std::vector<Cell> totals{Cell::str("Total")};
    for (const auto* rollup : {&r31, &r3k}) {
        for (size_t p = 0; p < 3; ++p)
            totals.push_back(Cell::integer(
                p < rollup->pair_totals.size() ? rollup->pair_totals[p] : 0));
        totals.push_back(Cell::integer(rollup->a3p_total));
    }
    table.rows.push_back(std::move(totals));
    for (size_t p = 0; p < study3.pair_labels.size() && p < 3; ++p)
        table.notes.push_back(std::string(pair_short[p]) + " = " +
                              study3.pair_labels[p]);
    for (const auto* rollup : {&r31, &r3k}) {
        for (size_t p = 0; p < rollup->pair_incomparable.size(); ++p)
            if (rollup->pair_incomparable[p] > 0)
                table.notes.push_back("incomparable metrics in pair " +
                                      study3.pair_labels[p] + ": " +
                                      std::to_string(rollup->pair_incomparable[p]));
    }
    return table;
}

std::string hash_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return "";
    std::ostringstream buf;
    buf << in.rdbuf();
    char hex[32];
    std::snprintf(hex, sizeof(hex), "%016llx",
                  static_cast<unsigned long long>(io::fnv1a64(buf.str())));
    return hex;
}

json config_echo(const PipelineConfig& cfg) {
    json formats = json::array();
    for (Format f : cfg.formats) formats.push_back(std::string(to_string(f)));
    return json{
        {"data", cfg.data_path.string()},
        {"registry", cfg.registry_path.string()},
        {"thresholds_file",
         cfg.thresholds_path ? json(cfg.thresholds_path->string()) : json(nullptr)},
        {"thresholds", json::parse(cfg.thresholds.to_json_text())},
        {"icc_mode", std::string(reliability::to_string(cfg.icc_mode))},
        {"studies",
         {{"study1", cfg.run_study1}, {"study2", cfg.run_study2},
          {"study3", cfg.run_study3}}},
        {"formats", std::move(formats)},
        {"seed", cfg.seed},
        {"adjacent_class_tolerance", cfg.adjacent_class_tolerance},
        {"range_pool", cfg.range_pool == agreement::RangePool::both_models
                           ? "both_models"
                           : "model_a_only"},
        {"ordering", cfg.ordering == ingest::IndexOrdering::first_appearance
                         ? "first_appearance"
                         : "sorted"},
        {"precision", cfg.precision},
    };
}

void build_manifest(const PipelineConfig& cfg, ReportBundle& bundle) {
    json manifest{{"tool", "retest"}, {"version", std::string(kToolVersion)}};
    json echo = config_echo(cfg);
    char hex[32];
    std::snprintf(hex, sizeof(hex), "%016llx",
                  static_cast<unsigned long long>(io::fnv1a64(echo.dump())));
    manifest["config"] = std::move(echo);
    manifest["config_hash"] = hex;
    manifest["input_data_hash"] = hash_file(cfg.data_path);

    json per_model = json::object();
    for (const auto& dist : bundle.distributions) {
        int analyzed = 0;
        for (int c : dist.counts31) analyzed += c;
        per_model[dist.model_id] = {
            {"analyzed", analyzed},
            {"screened", dist.screened},
            {"non_numeric", dist.kappa_only},
            {"degenerate", dist.degenerate},
            {"not_calculated", dist.not_calculated},
        };
    }
    manifest["universe"] = {
        {"n_models", bundle.models.size()},   {"n_runs", bundle.n_runs},
        {"n_segments", bundle.n_segments},    {"n_metrics", bundle.n_metric_universe},
        {"n_cells", bundle.n_cells},          {"per_model", std::move(per_model)},
    };
    if (bundle.study2 && bundle.study2->rt_available)
        manifest["study2"] = {
            {"rt_consistent_icc31", bundle.study2->rt31.size()},
            {"rt_consistent_icc3k", bundle.study2->rt3k.size()},
        };
    if (bundle.study3)
        manifest["study3"] = {
            {"eligible_icc31", bundle.study3->eligible31.size()},
            {"eligible_icc3k", bundle.study3->eligible3k.size()},
        };
    json outputs = json::array();
    for (const auto& table : bundle.tables) {
        outputs.push_back(table.name + ".csv");
        for (Format f : cfg.formats)
            if (f != Format::csv)
                outputs.push_back(table.name + std::string(extension(f)));
    }
    for (const auto& [name, body] : bundle.json_sidecars) outputs.push_back(name);
    manifest["outputs"] = std::move(outputs);
    manifest["notices"] = bundle.notices;
    if (cfg.stamp) {
        const auto now = std::chrono::system_clock::now().time_since_epoch();
        manifest["timestamp_unix_ms"] =
            std::chrono::duration_cast<std::chrono::milliseconds>(now).count();
    }
    bundle.manifest_json = manifest.dump(2) + "\n";
}

void build_pipeline(const PipelineConfig& cfg, ReportBundle& bundle) {
    cfg.validate();

    PipelineState state;
    state.cfg = &cfg;
    state.registry = MetricRegistry::from_json_file(cfg.registry_path);
    const ingest::TableFormat format =
        cfg.data_format.value_or(ingest::table_format_from_path(cfg.data_path));
    ingest::Dataset loaded =
        ingest::load_long_table(cfg.data_path, format, &state.registry, cfg.ordering);
    auto [dataset, exclusion] = ingest::validate_against_registry(std::move(loaded));
    state.dataset = std::move(dataset);
    bundle.exclusion = std::move(exclusion);

    bundle.models = state.dataset.models;
    bundle.n_runs = state.dataset.runs.size();
    bundle.n_segments = state.dataset.segments.size();
    bundle.n_metric_universe = state.registry.size();
    bundle.n_cells = state.dataset.cells.size();
    bundle.tables.push_back(make_exclusion_table(bundle.exclusion));

    if (state.dataset.empty())
        bundle.notices.push_back("no data: input contains zero measurement cells");

    if (!cfg.run_screening) {
        build_manifest(cfg, bundle);
        return;
    }

    state.n_models = state.dataset.models.size();
    state.n_metrics = state.registry.size();
    const size_t n_slots = state.n_models * state.n_metrics;
    state.matrices.assign(n_slots, std::nullopt);
    state.kept_numeric.assign(n_slots, 0);
    state.kappa_only.assign(n_slots, 0);
    state.degenerate.assign(n_slots, 0);
    bundle.screening.resize(n_slots);

    parallel_for(n_slots, cfg.threads, [&](size_t ix) {
        const size_t m = ix / state.n_metrics;
        const size_t t = ix % state.n_metrics;
        auto matrix = ingest::pivot_replicates(
            state.dataset, state.dataset.models[m],
            state.registry.specs()[t].metric_id);
        bundle.screening[ix] = screening::screen_metric(matrix, cfg.thresholds);
        if (bundle.screening[ix].decision == screening::Decision::kept) {
            if (matrix.spec.kind == MetricKind::categorical)
                state.kappa_only[ix] = 1;
            else
                state.kept_numeric[ix] = 1;
        }
        state.matrices[ix] = std::move(matrix);
    });
    bundle.tables.push_back(make_screening_table(bundle.screening));

    if (!cfg.run_study1) {
        build_manifest(cfg, bundle);
        return;
    }

    // ---- Study 1 ----
    std::vector<std::optional<reliability::ReliabilityResult>> slot_results(n_slots);
    parallel_for(n_slots, cfg.threads, [&](size_t ix) {
        if (!state.kept_numeric[ix]) return;
        try {
            slot_results[ix] = reliability::analyze(*state.matrices[ix], cfg.icc_mode,
                                                    cfg.thresholds);
        } catch (const error& e) {
            if (e.code() != errc::degenerate_variance) throw;
            state.degenerate[ix] = 1;  // ICC undefined for this slice
        }
    });

    for (size_t m = 0; m < state.n_models; ++m) {
        reliability::ModelResults model_results;
        model_results.model_id = state.dataset.models[m];
        for (size_t t = 0; t < state.n_metrics; ++t) {
            auto& result = slot_results[state.ix(m, t)];
            if (result) model_results.results.push_back(std::move(*result));
        }
        bundle.study1.push_back(std::move(model_results));
    }

    for (size_t m = 0; m < state.n_models; ++m) {
        ReportBundle::Distribution dist;
        dist.model_id = state.dataset.models[m];
        dist.counts31 = reliability::class_distribution(bundle.study1[m].results,
                                                        IccKind::icc31);
        dist.counts3k = reliability::class_distribution(bundle.study1[m].results,
                                                        IccKind::icc3k);
        int not_calculated = 0;
        for (size_t t = 0; t < state.n_metrics; ++t) {
            const size_t ix = state.ix(m, t);
            switch (bundle.screening[ix].decision) {
                case screening::Decision::not_calculated: ++not_calculated; break;
                case screening::Decision::screened_low_variance:
                case screening::Decision::screened_insufficient_n: ++dist.screened; break;
                case screening::Decision::kept:
                    if (state.kappa_only[ix]) ++dist.kappa_only;
                    if (state.degenerate[ix]) {
                        ++dist.degenerate;
                        bundle.notices.push_back(
                            "degenerate variance, no ICC: " + dist.model_id + "/" +
                            bundle.screening[ix].metric_id);
                    }
                    break;
            }
        }
        dist.not_calculated = not_calculated;

        int analyzed = 0;
        for (int c : dist.counts31) analyzed += c;
        if (size_t(analyzed + dist.screened + dist.kappa_only + dist.degenerate +
                   dist.not_calculated) != state.n_metrics)
            fail(errc::internal, "universe reconciliation failed for model " +
                                     dist.model_id);
        bundle.distributions.push_back(dist);

        for (IccKind kind : {IccKind::icc31, IccKind::icc3k}) {
            auto summary =
                reliability::study1_summary(bundle.study1[m].results, kind, not_calculated);
            summary.model_id = state.dataset.models[m];
            bundle.tables.push_back(
                make_study1_summary_table(summary, state.dataset.models[m]));
            bundle.study1_summaries.push_back(std::move(summary));
        }
    }
    bundle.tables.push_back(make_reliability_detail(bundle.study1));
    bundle.tables.push_back(
        make_distribution_table(bundle.distributions, state.n_metrics));

    // ---- Study 2 ----
    if (!cfg.run_study2) {
        build_manifest(cfg, bundle);
        return;
    }
    if (state.n_models < 2) {
        if (!state.dataset.empty())
            bundle.notices.push_back(
                "study2 skipped: needs >= 2 models, found " +
                std::to_string(state.n_models));
        for (IccKind kind : {IccKind::icc31, IccKind::icc3k}) {
            Table empty = make_consistency_table({}, state.dataset.models, kind);
            bundle.tables.push_back(std::move(empty));
        }
        build_manifest(cfg, bundle);
        return;
    }

    ReportBundle::Study2 study2;
    consistency::ConcordanceOptions options{cfg.adjacent_class_tolerance};
    study2.records31 = consistency::build_consistency_records(bundle.study1,
                                                              IccKind::icc31, options);
    study2.records3k = consistency::build_consistency_records(bundle.study1,
                                                              IccKind::icc3k, options);
    bundle.tables.push_back(make_consistency_table(study2.records31,
                                                   state.dataset.models,
                                                   IccKind::icc31));
    bundle.tables.push_back(make_consistency_table(study2.records3k,
                                                   state.dataset.models,
                                                   IccKind::icc3k));
    for (IccKind kind : {IccKind::icc31, IccKind::icc3k}) {
        const auto& records =
            kind == IccKind::icc31 ? study2.records31 : study2.records3k;
        for (size_t m = 0; m < state.n_models; ++m) {
            auto dist = consistency::consistency_distribution(
                records, m, state.dataset.models[m], !cfg.adjacent_class_tolerance);
            dist.which = kind;
            bundle.tables.push_back(make_consistency_distribution_table(dist));
            study2.distributions.push_back(std::move(dist));
        }
        for (size_t a = 0; a < state.n_models; ++a) {
            for (size_t b = a + 1; b < state.n_models; ++b) {
                auto matrix = consistency::correspondence_matrix(bundle.study1[a],
                                                                 bundle.study1[b], kind);
                auto [table, sidecar] = make_correspondence_outputs(matrix);
                bundle.json_sidecars.emplace_back(table.name + ".json", sidecar);
                bundle.tables.push_back(std::move(table));
                study2.matrices.push_back(std::move(matrix));
            }
        }
    }
    if (state.n_models == 3) {
        study2.rt31 = consistency::rt_consistent_metrics(study2.records31);
        study2.rt3k = consistency::rt_consistent_metrics(study2.records3k);
        study2.rt_available = true;
        bundle.tables.push_back(
            make_rt_table(study2.rt31, state.registry, IccKind::icc31));
        bundle.tables.push_back(
            make_rt_table(study2.rt3k, state.registry, IccKind::icc3k));
    } else {
        bundle.notices.push_back(
            "rt-consistency and study3 need exactly 3 models, found " +
            std::to_string(state.n_models));
    }
    bundle.study2 = std::move(study2);

    // ---- Study 3 ----
    if (!cfg.run_study3) {
        build_manifest(cfg, bundle);
        return;
    }
    if (!bundle.study2->rt_available) {
        build_manifest(cfg, bundle);
        return;
    }

    ReportBundle::Study3 study3;
    auto [eligible31, eligible3k] =
        agreement::study3_eligibility(bundle.study2->rt31, bundle.study2->rt3k);
    study3.eligible31 = std::move(eligible31);
    study3.eligible3k = std::move(eligible3k);
    if (study3.eligible31.empty() && study3.eligible3k.empty())
        bundle.notices.push_back(
            "study3: no eligible metrics, agreement analysis skipped");

    const std::array<std::pair<size_t, size_t>, 3> pairs{{{0, 1}, {0, 2}, {1, 2}}};
    for (const auto& [a, b] : pairs)
        study3.pair_labels.push_back(state.dataset.models[a] + "|" +
                                     state.dataset.models[b]);

    std::map<std::string, size_t> metric_pos;
    for (size_t t = 0; t < state.n_metrics; ++t)
        metric_pos[state.registry.specs()[t].metric_id] = t;

    auto run_track = [&](const std::vector<std::string>& eligible)
        -> std::vector<std::vector<agreement::AgreementResult>> {
        std::vector<std::vector<agreement::AgreementResult>> per_pair(pairs.size());
        const size_t n_tasks = pairs.size() * eligible.size();
        std::vector<std::optional<agreement::AgreementResult>> slots(n_tasks);
        parallel_for(n_tasks, cfg.threads, [&](size_t task) {
            const size_t p = task / eligible.size();
            const size_t e = task % eligible.size();
            const size_t t = metric_pos.at(eligible[e]);
            const auto& ma = *state.matrices[state.ix(pairs[p].first, t)];
            const auto& mb = *state.matrices[state.ix(pairs[p].second, t)];
            slots[task] =
                agreement::compare_metric(ma, mb, cfg.thresholds, cfg.range_pool);
        });
        for (size_t p = 0; p < pairs.size(); ++p)
            for (size_t e = 0; e < eligible.size(); ++e)
                per_pair[p].push_back(std::move(*slots[p * eligible.size() + e]));
        return per_pair;
    };
    study3.pairs31 = run_track(study3.eligible31);
    study3.pairs3k = run_track(study3.eligible3k);
    study3.rollup31 = agreement::a3p_rollup(study3.pairs31, study3.pair_labels);
    study3.rollup3k = agreement::a3p_rollup(study3.pairs3k, study3.pair_labels);

    bundle.tables.push_back(make_agreement_detail(study3));
    bundle.tables.push_back(make_rollup_table(study3));
    bundle.study3 = std::move(study3);

    build_manifest(cfg, bundle);
}

void write_text_file(const std::filesystem::path& path, const std::string& body) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(errc::config, "cannot write " + path.string());
    out << body;
}

}  // namespace

ReportBundle run_pipeline(const PipelineConfig& cfg) {
    ReportBundle bundle;
    build_pipeline(cfg, bundle);
    return bundle;
}

void write_outputs(const ReportBundle& bundle, const PipelineConfig& cfg) {
    if (cfg.out_dir.empty()) fail(errc::config, "no output directory configured");
    std::filesystem::create_directories(cfg.out_dir);
    for (const auto& table : bundle.tables) {
        write_text_file(cfg.out_dir / (table.name + ".csv"),
                        render_table(table, Format::csv, cfg.precision));
        for (Format f : cfg.formats) {
            if (f == Format::csv) continue;
            write_text_file(cfg.out_dir / (table.name + std::string(extension(f))),
                            render_table(table, f, cfg.precision));
        }
    }
    for (const auto& [name, body] : bundle.json_sidecars)
        write_text_file(cfg.out_dir / name, body);
    write_text_file(cfg.out_dir / "manifest.json", bundle.manifest_json);
}

ReportBundle run_and_write(const PipelineConfig& cfg) {
    ReportBundle bundle;
    try {
        build_pipeline(cfg, bundle);
    } catch (const std::exception& e) {
        if (!cfg.out_dir.empty()) {
            try {
                const auto quarantine = cfg.out_dir / "quarantine";
                std::filesystem::create_directories(quarantine);
                for (const auto& table : bundle.tables)
                    write_text_file(quarantine / (table.name + ".csv"),
                                    render_table(table, Format::csv, cfg.precision));
                write_text_file(quarantine / "error.txt", std::string(e.what()) + "\n");
            } catch (...) {
                // Quarantine is best effort; the original error wins.
            }
        }
        throw;
    }
    write_outputs(bundle, cfg);
    return bundle;
}

}  // namespace retest::report
