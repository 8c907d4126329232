#include "retest/ingest.hpp"

#include <algorithm>
#include <fstream>
#include <unordered_set>

#include <json.hpp>

#include "retest/csv.hpp"

namespace retest::ingest {

using nlohmann::json;

namespace {

constexpr std::string_view kCsvHeader =
    "model_id,run_id,segment_id,metric_id,value,status";

// Packed (model, run, segment, metric) key used for duplicate detection.
// Field widths bound the supported id counts; checked during interning.
constexpr int kModelBits = 16, kRunBits = 8, kSegmentBits = 20, kMetricBits = 20;

uint64_t pack_key(uint32_t m, uint32_t r, uint32_t s, uint32_t t) {
    return (uint64_t(m) << (kRunBits + kSegmentBits + kMetricBits)) |
           (uint64_t(r) << (kSegmentBits + kMetricBits)) |
           (uint64_t(s) << kMetricBits) | uint64_t(t);
}

struct Interner {
    std::vector<std::string> ids;
    std::unordered_map<std::string, uint32_t> index;
    int bits;
    std::string what;

    uint32_t intern(const std::string& id) {
        auto it = index.find(id);
        if (it != index.end()) return it->second;
        if (ids.size() >= (1ull << bits))
            fail(errc::integrity, "too many distinct " + what + " ids");
        uint32_t ix = static_cast<uint32_t>(ids.size());
        ids.push_back(id);
        index.emplace(id, ix);
        return ix;
    }
};

struct RawRow {
    std::string model_id, run_id, segment_id, metric_id;
    std::string value_text;
    bool value_is_string = false;  // jsonl distinguishes "1" from 1
    bool value_present = false;
    CellStatus status = CellStatus::valid;
    size_t line_no = 0;
};

MeasurementCell build_cell(const RawRow& row, const MetricRegistry* registry) {
    MeasurementCell cell;
    cell.model_id = row.model_id;
    cell.run_id = row.run_id;
    cell.segment_id = row.segment_id;
    cell.metric_id = row.metric_id;
    cell.status = row.status;

    const MetricSpec* spec = nullptr;
    if (registry) {
        spec = registry->find(row.metric_id);
        if (!spec)
            fail(errc::integrity, "line " + std::to_string(row.line_no) +
                                      ": unknown metric_id '" + row.metric_id + "'");
    }

    if (row.status == CellStatus::not_calculated) return cell;  // value ignored

    if (!row.value_present || row.value_text.empty()) {
        if (row.status == CellStatus::valid)
            fail(errc::parse_error, "line " + std::to_string(row.line_no) +
                                        ": empty value on a valid cell");
        return cell;  // excluded cell without a recoverable value
    }

    const MetricKind kind =
        spec ? spec->kind
             : (io::parse_double(row.value_text) && !row.value_is_string
                    ? MetricKind::continuous
                    : MetricKind::categorical);

    if (kind == MetricKind::continuous) {
        auto number = io::parse_double(row.value_text);
        if (!number) {
            if (row.status == CellStatus::valid)
                fail(errc::parse_error,
                     "line " + std::to_string(row.line_no) +
                         ": continuous value is not a finite decimal literal: '" +
                         row.value_text + "'");
            return cell;  // violation cell with an unusable payload
        }
        cell.value = MetricValue::number(*number);
    } else {
        cell.value = MetricValue::label(kind, row.value_text);
    }
    return cell;
}

std::vector<RawRow> read_csv_rows(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(errc::config, "cannot open " + path.string());

    std::vector<RawRow> rows;
    std::string line;
    size_t line_no = 0;

    if (!std::getline(in, line))
        fail(errc::parse_error, path.string() + ": missing header");
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kCsvHeader)
        fail(errc::parse_error, path.string() + ": header must be exactly '" +
                                    std::string(kCsvHeader) + "'");

    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        auto fields = io::try_split_csv_record(line);
        if (!fields || fields->size() != 6)
            fail(errc::parse_error,
                 path.string() + ": malformed row at line " + std::to_string(line_no));
        RawRow row;
        row.model_id = std::move((*fields)[0]);
        row.run_id = std::move((*fields)[1]);
        row.segment_id = std::move((*fields)[2]);
        row.metric_id = std::move((*fields)[3]);
        row.value_text = std::move((*fields)[4]);
        row.value_present = !row.value_text.empty();
        row.line_no = line_no;
        try {
            row.status = cell_status_from_string((*fields)[5]);
        } catch (const error&) {
            fail(errc::parse_error, path.string() + ": bad status at line " +
                                        std::to_string(line_no) + ": '" +
                                        (*fields)[5] + "'");
        }
        if (row.model_id.empty() || row.run_id.empty() || row.segment_id.empty() ||
            row.metric_id.empty())
            fail(errc::parse_error, path.string() + ": empty key field at line " +
                                        std::to_string(line_no));
        rows.push_back(std::move(row));
    }
    return rows;
}

std::vector<RawRow> read_jsonl_rows(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(errc::config, "cannot open " + path.string());

    std::vector<RawRow> rows;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object())
            fail(errc::parse_error,
                 path.string() + ": malformed row at line " + std::to_string(line_no));
        RawRow row;
        row.line_no = line_no;
        try {
            row.model_id = j.at("model_id").get<std::string>();
            row.run_id = j.at("run_id").get<std::string>();
            row.segment_id = j.at("segment_id").get<std::string>();
            row.metric_id = j.at("metric_id").get<std::string>();
            row.status = cell_status_from_string(j.at("status").get<std::string>());
        } catch (const json::exception&) {
            fail(errc::parse_error, path.string() + ": missing or mistyped field at line " +
                                        std::to_string(line_no));
        }
        if (j.contains("value") && !j.at("value").is_null()) {
            const auto& v = j.at("value");
            if (v.is_number()) {
                row.value_text = io::format_double(v.get<double>());
            } else if (v.is_string()) {
                row.value_text = v.get<std::string>();
                row.value_is_string = true;
            } else {
                fail(errc::parse_error, path.string() + ": value must be number, string or null at line " +
                                            std::to_string(line_no));
            }
            row.value_present = true;
        }
        if (row.model_id.empty() || row.run_id.empty() || row.segment_id.empty() ||
            row.metric_id.empty())
            fail(errc::parse_error, path.string() + ": empty key field at line " +
                                        std::to_string(line_no));
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace

TableFormat table_format_from_string(std::string_view s) {
    if (s == "csv") return TableFormat::csv;
    if (s == "jsonl") return TableFormat::jsonl;
    fail(errc::config, "unknown table format '" + std::string(s) + "'");
}

TableFormat table_format_from_path(const std::filesystem::path& path) {
    const auto ext = path.extension().string();
    if (ext == ".jsonl" || ext == ".ndjson") return TableFormat::jsonl;
    return TableFormat::csv;
}

int Dataset::model_index(const std::string& id) const {
    auto it = model_ix_.find(id);
    return it == model_ix_.end() ? -1 : it->second;
}
int Dataset::run_index(const std::string& id) const {
    auto it = run_ix_.find(id);
    return it == run_ix_.end() ? -1 : it->second;
}
int Dataset::segment_index(const std::string& id) const {
    auto it = segment_ix_.find(id);
    return it == segment_ix_.end() ? -1 : it->second;
}
int Dataset::metric_index(const std::string& id) const {
    auto it = metric_ix_.find(id);
    return it == metric_ix_.end() ? -1 : it->second;
}

const std::vector<uint32_t>* Dataset::slice(const std::string& model_id,
                                            const std::string& metric_id) const {
    const int m = model_index(model_id);
    const int t = metric_index(metric_id);
    if (m < 0 || t < 0) return nullptr;
    auto it = slices_.find({m, t});
    return it == slices_.end() ? nullptr : &it->second;
}

void Dataset::rebuild_index() {
    model_ix_.clear();
    run_ix_.clear();
    segment_ix_.clear();
    metric_ix_.clear();
    slices_.clear();
    for (size_t i = 0; i < models.size(); ++i) model_ix_[models[i]] = int(i);
    for (size_t i = 0; i < runs.size(); ++i) run_ix_[runs[i]] = int(i);
    for (size_t i = 0; i < segments.size(); ++i) segment_ix_[segments[i]] = int(i);
    for (size_t i = 0; i < metrics.size(); ++i) metric_ix_[metrics[i]] = int(i);
    for (size_t i = 0; i < cells.size(); ++i) {
        const auto& c = cells[i];
        slices_[{model_index(c.model_id), metric_index(c.metric_id)}].push_back(
            static_cast<uint32_t>(i));
    }
}

Dataset load_long_table(const std::filesystem::path& path, TableFormat format,
                        const MetricRegistry* registry, IndexOrdering ordering) {
    std::vector<RawRow> rows = format == TableFormat::csv ? read_csv_rows(path)
                                                          : read_jsonl_rows(path);

    Dataset ds;
    if (registry) {
        ds.registry = *registry;
        ds.has_registry = true;
    }

    Interner models{{}, {}, kModelBits, "model"};
    Interner runs{{}, {}, kRunBits, "run"};
    Interner segments{{}, {}, kSegmentBits, "segment"};
    Interner metrics{{}, {}, kMetricBits, "metric"};
    std::unordered_set<uint64_t> seen;
    seen.reserve(rows.size() * 2);

    ds.cells.reserve(rows.size());
    for (const auto& row : rows) {
        const uint32_t m = models.intern(row.model_id);
        const uint32_t r = runs.intern(row.run_id);
        const uint32_t s = segments.intern(row.segment_id);
        const uint32_t t = metrics.intern(row.metric_id);
        if (!seen.insert(pack_key(m, r, s, t)).second)
            fail(errc::integrity,
                 path.string() + ": duplicate (model,run,segment,metric) key at line " +
                     std::to_string(row.line_no) + ": (" + row.model_id + "," +
                     row.run_id + "," + row.segment_id + "," + row.metric_id + ")");
        ds.cells.push_back(build_cell(row, registry));
    }

    ds.models = std::move(models.ids);
    ds.runs = std::move(runs.ids);
    ds.segments = std::move(segments.ids);
    ds.metrics = std::move(metrics.ids);

    if (ordering == IndexOrdering::sorted) {
        std::sort(ds.models.begin(), ds.models.end());
        std::sort(ds.runs.begin(), ds.runs.end());
        std::sort(ds.segments.begin(), ds.segments.end());
        if (registry) {
            // Registry order, restricted to metrics actually present.
            std::unordered_set<std::string> present(ds.metrics.begin(), ds.metrics.end());
            ds.metrics.clear();
            for (const auto& spec : registry->specs())
                if (present.count(spec.metric_id)) ds.metrics.push_back(spec.metric_id);
        } else {
            std::sort(ds.metrics.begin(), ds.metrics.end());
        }
    }

    if (!ds.cells.empty() && ds.runs.size() < 2)
        fail(errc::integrity,
             path.string() + ": reliability needs replication (found " +
                 std::to_string(ds.runs.size()) + " run, need >= 2)");

    ds.rebuild_index();
    return ds;
}

void write_long_table(const Dataset& ds, const std::filesystem::path& path,
                      TableFormat format) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(errc::config, "cannot write " + path.string());

    auto value_text = [](const MeasurementCell& c) -> std::string {
        if (!c.value) return "";
        return c.value->is_number() ? io::format_double(c.value->as_number())
                                    : c.value->as_label();
    };

    if (format == TableFormat::csv) {
        out << kCsvHeader << '\n';
        for (const auto& c : ds.cells) {
            out << io::csv_escape(c.model_id) << ',' << io::csv_escape(c.run_id) << ','
                << io::csv_escape(c.segment_id) << ',' << io::csv_escape(c.metric_id)
                << ',' << io::csv_escape(value_text(c)) << ',' << to_string(c.status)
                << '\n';
        }
    } else {
        for (const auto& c : ds.cells) {
            json j{{"model_id", c.model_id},
                   {"run_id", c.run_id},
                   {"segment_id", c.segment_id},
                   {"metric_id", c.metric_id},
                   {"status", std::string(to_string(c.status))}};
            if (!c.value) {
                j["value"] = nullptr;
            } else if (c.value->is_number()) {
                j["value"] = c.value->as_number();
            } else {
                j["value"] = c.value->as_label();
            }
            out << j.dump() << '\n';
        }
    }
}

int ExclusionReport::violations_total() const {
    int total = 0;
    for (const auto& row : rows) total += row.n_violation;
    return total;
}

int ExclusionReport::not_calculated_metrics(const std::string& model_id) const {
    int count = 0;
    for (const auto& row : rows)
        if (row.model_id == model_id && row.n_valid == 0) ++count;
    return count;
}

std::pair<Dataset, ExclusionReport> validate_against_registry(Dataset dataset) {
    if (!dataset.has_registry)
        fail(errc::config, "validate_against_registry needs a loaded registry");

    for (auto& cell : dataset.cells) {
        if (cell.status != CellStatus::valid) continue;
        const MetricSpec& spec = dataset.registry.at(cell.metric_id);
        if (!cell.value || !satisfies(*cell.value, spec))
            cell.status = CellStatus::constraint_violation;
    }

    ExclusionReport report;
    const size_t n_metrics = dataset.registry.size();
    std::vector<ExclusionRow> rows(dataset.models.size() * n_metrics);
    std::unordered_map<std::string, size_t> metric_pos;
    for (size_t i = 0; i < n_metrics; ++i)
        metric_pos[dataset.registry.specs()[i].metric_id] = i;
    for (size_t m = 0; m < dataset.models.size(); ++m) {
        for (size_t t = 0; t < n_metrics; ++t) {
            auto& row = rows[m * n_metrics + t];
            row.model_id = dataset.models[m];
            row.metric_id = dataset.registry.specs()[t].metric_id;
        }
    }
    for (const auto& cell : dataset.cells) {
        const int m = dataset.model_index(cell.model_id);
        auto it = metric_pos.find(cell.metric_id);
        if (m < 0 || it == metric_pos.end()) continue;
        auto& row = rows[size_t(m) * n_metrics + it->second];
        switch (cell.status) {
            case CellStatus::valid: ++row.n_valid; break;
            case CellStatus::constraint_violation: ++row.n_violation; break;
            case CellStatus::not_calculated: ++row.n_not_calculated; break;
        }
    }
    report.rows = std::move(rows);
    return {std::move(dataset), std::move(report)};
}

size_t ReplicateMatrix::n_complete() const {
    size_t count = 0;
    for (char c : complete) count += c != 0;
    return count;
}

size_t ReplicateMatrix::n_valid_cells() const {
    size_t count = 0;
    for (const auto& e : grid)
        count += (e.status == CellStatus::valid && e.value.has_value());
    return count;
}

std::vector<size_t> ReplicateMatrix::complete_segment_rows() const {
    std::vector<size_t> rows;
    for (size_t s = 0; s < complete.size(); ++s)
        if (complete[s]) rows.push_back(s);
    return rows;
}

std::vector<const MetricValue*> ReplicateMatrix::valid_values() const {
    std::vector<const MetricValue*> values;
    values.reserve(grid.size());
    for (const auto& e : grid)
        if (e.status == CellStatus::valid && e.value) values.push_back(&*e.value);
    return values;
}

std::vector<std::vector<double>> ReplicateMatrix::complete_numeric_rows() const {
    if (spec.kind == MetricKind::categorical)
        fail(errc::type_mismatch,
             spec.metric_id + ": categorical metrics have no numeric view");
    std::vector<std::vector<double>> rows;
    const size_t kk = k();
    for (size_t s = 0; s < n_segments(); ++s) {
        if (!complete[s]) continue;
        std::vector<double> row(kk);
        for (size_t r = 0; r < kk; ++r) {
            const auto& e = at(s, r);
            auto encoded = e.value ? numeric_encoding(*e.value, spec) : std::nullopt;
            if (!encoded)
                fail(errc::type_mismatch, spec.metric_id + ": cell (" +
                                              segment_ids[s] + "," + run_ids[r] +
                                              ") has no numeric encoding");
            row[r] = *encoded;
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

void ReplicateMatrix::recompute_completeness() {
    const size_t kk = k();
    complete.assign(n_segments(), 0);
    for (size_t s = 0; s < n_segments(); ++s) {
        bool all_valid = kk > 0;
        for (size_t r = 0; r < kk; ++r) {
            const auto& e = at(s, r);
            if (e.status != CellStatus::valid || !e.value) {
                all_valid = false;
                break;
            }
        }
        complete[s] = all_valid ? 1 : 0;
    }
}

ReplicateMatrix pivot_replicates(const Dataset& ds, const std::string& model_id,
                                 const std::string& metric_id) {
    if (!ds.has_registry)
        fail(errc::config, "pivot_replicates needs a dataset loaded with a registry");
    if (ds.model_index(model_id) < 0)
        fail(errc::invalid_input, "unknown model_id '" + model_id + "'");

    ReplicateMatrix matrix;
    matrix.model_id = model_id;
    matrix.spec = ds.registry.at(metric_id);
    matrix.segment_ids = ds.segments;
    matrix.run_ids = ds.runs;
    matrix.grid.assign(ds.segments.size() * ds.runs.size(), {});

    if (const auto* cell_ids = ds.slice(model_id, metric_id)) {
        for (uint32_t ix : *cell_ids) {
            const auto& cell = ds.cells[ix];
            const int s = ds.segment_index(cell.segment_id);
            const int r = ds.run_index(cell.run_id);
            if (s < 0 || r < 0)
                fail(errc::internal, "dataset index lists out of sync with cells");
            auto& entry = matrix.at(size_t(s), size_t(r));
            entry.status = cell.status;
            entry.value = cell.value;
            ++matrix.n_cells_present;
        }
    }
    matrix.recompute_completeness();
    return matrix;
}

}  // namespace retest::ingest
