#include "retest/screening.hpp"

#include <algorithm>
#include <map>

namespace retest::screening {

std::string_view to_string(Decision d) {
    switch (d) {
        case Decision::kept: return "kept";
        case Decision::screened_low_variance: return "screened_low_variance";
        case Decision::screened_insufficient_n: return "screened_insufficient_n";
        case Decision::not_calculated: return "not_calculated";
    }
    return "?";
}

std::optional<double> dominant_category_prevalence(const ingest::ReplicateMatrix& matrix) {
    const auto values = matrix.valid_values();
    if (values.empty()) return std::nullopt;

    size_t top = 0;
    if (values.front()->is_number()) {
        std::map<double, size_t> counts;
        for (const MetricValue* v : values) top = std::max(top, ++counts[v->as_number()]);
    } else {
        std::map<std::string, size_t> counts;
        for (const MetricValue* v : values) top = std::max(top, ++counts[v->as_label()]);
    }
    return double(top) / double(values.size());
}

ScreenDecision screen_metric(const ingest::ReplicateMatrix& matrix,
                             const ThresholdConfig& cfg) {
    ScreenDecision decision;
    decision.model_id = matrix.model_id;
    decision.metric_id = matrix.spec.metric_id;
    decision.n_complete_segments = static_cast<int>(matrix.n_complete());
    decision.prevalence = dominant_category_prevalence(matrix);

    if (!decision.prevalence) {
        decision.decision = Decision::not_calculated;
    } else if (decision.n_complete_segments < cfg.min_segments) {
        decision.decision = Decision::screened_insufficient_n;
    } else if (*decision.prevalence >= cfg.prevalence_cutoff) {
        decision.decision = Decision::screened_low_variance;
    } else {
        decision.decision = Decision::kept;
    }
    return decision;
}

}  // namespace retest::screening
