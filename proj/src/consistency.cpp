#include "retest/consistency.hpp"

#include <algorithm>
#include <cstdlib>
#include <map>

namespace retest::consistency {

using reliability::IccKind;
using reliability::ModelResults;

namespace {

bool concordant(ReliabilityClass a, ReliabilityClass b, const ConcordanceOptions& opt) {
    const int ca = static_cast<int>(collapse_perfect(a));
    const int cb = static_cast<int>(collapse_perfect(b));
    if (opt.adjacent_tolerance) return std::abs(ca - cb) <= 1;
    return ca == cb;
}

}  // namespace

std::vector<ConsistencyRecord> build_consistency_records(
    std::span<const ModelResults> by_model, IccKind which,
    const ConcordanceOptions& options) {
    if (by_model.size() < 2)
        fail(errc::config, "consistency comparison needs at least two models");

    struct MetricInfo {
        MetricClass metric_class;
        std::vector<std::optional<ReliabilityClass>> classes;
    };
    std::map<std::string, MetricInfo> by_metric;
    for (size_t m = 0; m < by_model.size(); ++m) {
        for (const auto& result : by_model[m].results) {
            auto [it, inserted] = by_metric.try_emplace(result.metric_id);
            if (inserted) {
                it->second.metric_class = result.metric_class;
                it->second.classes.resize(by_model.size());
            }
            it->second.classes[m] = result.cls(which);
        }
    }

    std::vector<ConsistencyRecord> records;
    records.reserve(by_metric.size());
    for (auto& [metric_id, info] : by_metric) {
        ConsistencyRecord record;
        record.metric_id = metric_id;
        record.metric_class = info.metric_class;
        record.classes = std::move(info.classes);
        record.which = which;
        for (const auto& c : record.classes) record.n_models_present += c.has_value();
        for (size_t i = 0; i < record.classes.size(); ++i)
            for (size_t j = i + 1; j < record.classes.size(); ++j)
                if (record.classes[i] && record.classes[j] &&
                    concordant(*record.classes[i], *record.classes[j], options))
                    ++record.concordant_pairs;
        records.push_back(std::move(record));
    }
    return records;
}

int CorrespondenceMatrix::total() const {
    int sum = 0;
    for (const auto& row : counts)
        for (int c : row) sum += c;
    return sum;
}

int CorrespondenceMatrix::diagonal_sum() const {
    int sum = 0;
    for (int i = 0; i < kReliabilityClassCount; ++i) sum += counts[i][i];
    return sum;
}

int CorrespondenceMatrix::concordant_sum() const {
    int sum = 0;
    for (int i = 0; i < kReliabilityClassCount; ++i)
        for (int j = 0; j < kReliabilityClassCount; ++j)
            if (collapse_perfect(static_cast<ReliabilityClass>(i)) ==
                collapse_perfect(static_cast<ReliabilityClass>(j)))
                sum += counts[i][j];
    return sum;
}

CorrespondenceMatrix correspondence_matrix(const ModelResults& a,
                                           const ModelResults& b, IccKind which) {
    CorrespondenceMatrix matrix;
    matrix.model_a = a.model_id;
    matrix.model_b = b.model_id;
    matrix.which = which;

    std::map<std::string, const reliability::ReliabilityResult*> b_results;
    for (const auto& result : b.results) b_results.emplace(result.metric_id, &result);

    for (const auto& result : a.results) {
        auto it = b_results.find(result.metric_id);
        if (it == b_results.end()) continue;
        const int ca = static_cast<int>(result.cls(which));
        const int cb = static_cast<int>(it->second->cls(which));
        ++matrix.counts[ca][cb];
        matrix.cell_metrics[ca][cb].push_back({result.metric_id, result.pipeline});
    }
    return matrix;
}

std::vector<std::string> rt_consistent_metrics(
    std::span<const ConsistencyRecord> records) {
    for (const auto& record : records)
        if (record.classes.size() != 3)
            fail(errc::config, "rt_consistent_metrics requires exactly three models");

    std::vector<std::string> metrics;
    for (const auto& record : records) {
        bool all_excellent = record.n_models_present == 3;
        for (const auto& c : record.classes)
            all_excellent = all_excellent && c &&
                            collapse_perfect(*c) == ReliabilityClass::excellent;
        if (all_excellent) metrics.push_back(record.metric_id);
    }
    std::sort(metrics.begin(), metrics.end());
    return metrics;
}

ReliabilityClass distribution_row_class(int row) {
    static constexpr std::array<ReliabilityClass, 4> order{
        ReliabilityClass::excellent, ReliabilityClass::good,
        ReliabilityClass::moderate, ReliabilityClass::poor};
    return order[row];
}

DistributionTable consistency_distribution(std::span<const ConsistencyRecord> records,
                                           size_t model_index,
                                           const std::string& model_id,
                                           bool strict_rule) {
    DistributionTable table;
    table.model_id = model_id;
    table.strict_rule = strict_rule;

    auto row_of = [](ReliabilityClass c) {
        for (int row = 0; row < 4; ++row)
            if (distribution_row_class(row) == collapse_perfect(c)) return row;
        return 3;
    };

    for (const auto& record : records) {
        table.which = record.which;
        if (model_index >= record.classes.size())
            fail(errc::invalid_input, "consistency_distribution: bad model index");
        const auto& cls = record.classes[model_index];
        if (!cls) {
            ++table.incomparable;
            continue;
        }
        const int pairs = std::clamp(record.concordant_pairs, 0, 3);
        ++table.counts[row_of(*cls)][pairs];
        ++table.row_totals[row_of(*cls)];
        ++table.column_totals[pairs];
        ++table.total;
    }
    return table;
}

}  // namespace retest::consistency
