#include "retest/agreement.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_map>

namespace retest::agreement {

std::string_view to_string(StatKind s) {
    return s == StatKind::mae ? "mae" : "kappa";
}

double mae(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        fail(errc::invalid_input, "mae: sequences must be segment-paired");
    if (a.empty()) fail(errc::invalid_input, "mae: empty sequences");
    double total = 0;
    for (size_t i = 0; i < a.size(); ++i) total += std::abs(a[i] - b[i]);
    return total / double(a.size());
}

std::optional<double> cohens_kappa(std::span<const std::string> a,
                                   std::span<const std::string> b) {
    if (a.size() != b.size())
        fail(errc::invalid_input, "cohens_kappa: sequences must be segment-paired");
    if (a.empty()) fail(errc::invalid_input, "cohens_kappa: empty sequences");

    const double n = double(a.size());
    std::map<std::string, std::pair<size_t, size_t>> marginals;
    size_t agree = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        ++marginals[a[i]].first;
        ++marginals[b[i]].second;
        agree += a[i] == b[i];
    }

    // Both raters constant on the same label: p_e = 1 and kappa undefined.
    if (marginals.size() == 1) return std::nullopt;

    double p_e = 0;
    for (const auto& [label, counts] : marginals)
        p_e += (double(counts.first) / n) * (double(counts.second) / n);
    const double p_o = double(agree) / n;
    return (p_o - p_e) / (1.0 - p_e);
}

int RunPairGrid::n_undefined() const {
    int count = 0;
    for (const auto& v : values) count += !v.has_value();
    return count;
}

namespace {

// Row indices of segments complete in both matrices, keyed by segment id.
std::pair<std::vector<size_t>, std::vector<size_t>> shared_complete_rows(
    const ingest::ReplicateMatrix& a, const ingest::ReplicateMatrix& b) {
    std::unordered_map<std::string_view, size_t> b_rows;
    for (size_t s = 0; s < b.n_segments(); ++s)
        if (b.complete[s]) b_rows.emplace(b.segment_ids[s], s);

    std::vector<size_t> rows_a, rows_b;
    for (size_t s = 0; s < a.n_segments(); ++s) {
        if (!a.complete[s]) continue;
        auto it = b_rows.find(a.segment_ids[s]);
        if (it == b_rows.end()) continue;
        rows_a.push_back(s);
        rows_b.push_back(it->second);
    }
    return {std::move(rows_a), std::move(rows_b)};
}

}  // namespace

RunPairGrid run_pair_grid(const ingest::ReplicateMatrix& a,
                          const ingest::ReplicateMatrix& b,
                          const ThresholdConfig& cfg) {
    if (a.spec.metric_id != b.spec.metric_id || a.spec.kind != b.spec.kind)
        fail(errc::invalid_input, "run_pair_grid: matrices describe different metrics");
    if (a.k() != b.k())
        fail(errc::invalid_input, "run_pair_grid: replicate counts differ");

    RunPairGrid grid;
    grid.model_a = a.model_id;
    grid.model_b = b.model_id;
    grid.metric_id = a.spec.metric_id;
    grid.stat_kind =
        a.spec.kind == MetricKind::continuous ? StatKind::mae : StatKind::kappa;
    grid.k = static_cast<int>(a.k());

    auto [rows_a, rows_b] = shared_complete_rows(a, b);
    grid.n_segments = static_cast<int>(rows_a.size());
    if (grid.n_segments < cfg.min_segments)
        fail(errc::insufficient_data,
             grid.metric_id + " (" + grid.model_a + " vs " + grid.model_b + "): " +
                 std::to_string(grid.n_segments) +
                 " shared complete segments, need >= " +
                 std::to_string(cfg.min_segments));

    const int k = grid.k;
    grid.values.assign(size_t(k) * size_t(k), std::nullopt);

    if (grid.stat_kind == StatKind::mae) {
        // Column-major extraction once per run, then all k*k pairings.
        std::vector<std::vector<double>> cols_a(k), cols_b(k);
        for (int r = 0; r < k; ++r) {
            cols_a[r].reserve(rows_a.size());
            cols_b[r].reserve(rows_b.size());
            for (size_t i = 0; i < rows_a.size(); ++i) {
                auto va = numeric_encoding(*a.at(rows_a[i], r).value, a.spec);
                auto vb = numeric_encoding(*b.at(rows_b[i], r).value, b.spec);
                if (!va || !vb)
                    fail(errc::type_mismatch,
                         grid.metric_id + ": non-numeric cell in a continuous grid");
                cols_a[r].push_back(*va);
                cols_b[r].push_back(*vb);
            }
        }
        for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j)
                grid.values[size_t(i) * k + j] = mae(cols_a[i], cols_b[j]);
    } else {
        std::vector<std::vector<std::string>> cols_a(k), cols_b(k);
        for (int r = 0; r < k; ++r) {
            for (size_t i = 0; i < rows_a.size(); ++i) {
                cols_a[r].push_back(a.at(rows_a[i], r).value->as_label());
                cols_b[r].push_back(b.at(rows_b[i], r).value->as_label());
            }
        }
        for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j)
                grid.values[size_t(i) * k + j] = cohens_kappa(cols_a[i], cols_b[j]);
    }
    return grid;
}

std::optional<GridAggregate> aggregate_grid(const RunPairGrid& grid,
                                            const ThresholdConfig& cfg) {
    std::vector<double> defined;
    defined.reserve(grid.values.size());
    for (const auto& v : grid.values)
        if (v) defined.push_back(*v);

    GridAggregate agg;
    agg.n_undefined = static_cast<int>(grid.values.size() - defined.size());
    if (defined.empty()) return std::nullopt;
    agg.n_used = static_cast<int>(defined.size());

    std::sort(defined.begin(), defined.end());
    const size_t n = defined.size();
    agg.median = n % 2 == 1 ? defined[n / 2]
                            : 0.5 * (defined[n / 2 - 1] + defined[n / 2]);

    size_t trim = static_cast<size_t>(std::max(cfg.trim_count, 0));
    if (2 * trim >= n) trim = (n - 1) / 2;  // keep at least one entry
    double total = 0;
    for (size_t i = trim; i < n - trim; ++i) total += defined[i];
    agg.trimmed_mean = total / double(n - 2 * trim);
    return agg;
}

double nmae_range(double median_mae, std::span<const double> pooled_values) {
    if (pooled_values.empty())
        fail(errc::invalid_input, "nmae_range: empty pooled values");
    auto [lo, hi] = std::minmax_element(pooled_values.begin(), pooled_values.end());
    const double range = *hi - *lo;
    if (!(range > 0))
        fail(errc::degenerate_variance,
             "nmae_range: zero value range (metric should have been screened)");
    return median_mae / range;
}

AgreementResult compare_metric(const ingest::ReplicateMatrix& a,
                               const ingest::ReplicateMatrix& b,
                               const ThresholdConfig& cfg, RangePool range_pool) {
    AgreementResult result;
    result.model_a = a.model_id;
    result.model_b = b.model_id;
    result.metric_id = a.spec.metric_id;
    result.stat_kind =
        a.spec.kind == MetricKind::continuous ? StatKind::mae : StatKind::kappa;

    RunPairGrid grid;
    try {
        grid = run_pair_grid(a, b, cfg);
    } catch (const error& e) {
        if (e.code() != errc::insufficient_data) throw;
        result.incomparable = true;
        result.note = e.what();
        return result;
    }

    auto agg = aggregate_grid(grid, cfg);
    result.n_undefined_entries = grid.n_undefined();
    if (!agg) {
        result.incomparable = true;
        result.note = "all run-pair statistics undefined";
        return result;
    }
    result.median_stat = agg->median;
    result.trimmed_mean_stat = agg->trimmed_mean;

    if (result.stat_kind == StatKind::mae) {
        std::vector<double> pooled;
        auto pool_from = [&pooled](const ingest::ReplicateMatrix& m) {
            for (const MetricValue* v : m.valid_values()) {
                if (auto x = numeric_encoding(*v, m.spec)) pooled.push_back(*x);
            }
        };
        pool_from(a);
        if (range_pool == RangePool::both_models) pool_from(b);
        auto [lo, hi] = std::minmax_element(pooled.begin(), pooled.end());
        result.range_used = *hi - *lo;
        result.nmae = nmae_range(agg->median, pooled);
        result.agreement_class = classify_agreement_continuous(*result.nmae, cfg);
    } else {
        // A pair dominated by undefined entries is not interpretable.
        if (2 * result.n_undefined_entries > static_cast<int>(grid.values.size())) {
            result.incomparable = true;
            result.note = "more than half of the run-pair kappas undefined";
            return result;
        }
        result.agreement_class = classify_agreement_categorical(agg->median, cfg);
    }
    return result;
}

std::pair<std::vector<std::string>, std::vector<std::string>> study3_eligibility(
    std::span<const std::string> rt31, std::span<const std::string> rt3k) {
    std::vector<std::string> set31, set3k(rt3k.begin(), rt3k.end());
    std::sort(set3k.begin(), set3k.end());
    for (const auto& id : rt31)
        if (std::binary_search(set3k.begin(), set3k.end(), id)) set31.push_back(id);
    std::sort(set31.begin(), set31.end());
    return {std::move(set31), std::move(set3k)};
}

AgreementClass rollup_row_class(int row) {
    static constexpr std::array<AgreementClass, 4> order{
        AgreementClass::near_ideal, AgreementClass::moderate, AgreementClass::low,
        AgreementClass::non_acceptable};
    return order[row];
}

RollupTable a3p_rollup(std::span<const std::vector<AgreementResult>> per_pair,
                       std::span<const std::string> pair_labels) {
    if (per_pair.size() != pair_labels.size())
        fail(errc::invalid_input, "a3p_rollup: pair labels out of sync");

    RollupTable table;
    table.pair_labels.assign(pair_labels.begin(), pair_labels.end());
    const size_t n_pairs = per_pair.size();
    for (auto& row : table.counts) row.assign(n_pairs, 0);
    table.pair_totals.assign(n_pairs, 0);
    table.pair_incomparable.assign(n_pairs, 0);

    std::map<std::string, std::vector<std::optional<AgreementClass>>> by_metric;
    for (size_t p = 0; p < n_pairs; ++p) {
        for (const auto& result : per_pair[p]) {
            auto& classes = by_metric[result.metric_id];
            classes.resize(n_pairs);
            classes[p] = result.agreement_class;
        }
    }
    table.n_eligible = static_cast<int>(by_metric.size());

    auto row_of = [](AgreementClass c) {
        for (int row = 0; row < kAgreementClassCount; ++row)
            if (rollup_row_class(row) == c) return row;
        return kAgreementClassCount - 1;
    };

    for (const auto& [metric_id, classes] : by_metric) {
        for (size_t p = 0; p < n_pairs; ++p) {
            if (classes[p]) {
                ++table.counts[row_of(*classes[p])][p];
                ++table.pair_totals[p];
            } else {
                ++table.pair_incomparable[p];
            }
        }
        bool all_same = n_pairs > 0 && classes[0].has_value();
        for (size_t p = 1; all_same && p < n_pairs; ++p)
            all_same = classes[p].has_value() && *classes[p] == *classes[0];
        if (all_same) {
            ++table.a3p[row_of(*classes[0])];
            ++table.a3p_total;
        }
    }
    return table;
}

}  // namespace retest::agreement
