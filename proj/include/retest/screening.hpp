#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "retest/core.hpp"
#include "retest/ingest.hpp"

namespace retest::screening {

enum class Decision {
    kept,
    screened_low_variance,
    screened_insufficient_n,
    not_calculated,
};

std::string_view to_string(Decision);

struct ScreenDecision {
    std::string model_id;
    std::string metric_id;
    std::optional<double> prevalence;  // empty when the matrix has no valid cells
    int n_complete_segments = 0;
    Decision decision = Decision::not_calculated;
};

// Share of valid cells carrying the most frequent distinct value. For
// continuous metrics a "category" is an exact repeated value. Empty when
// there are no valid cells.
std::optional<double> dominant_category_prevalence(const ingest::ReplicateMatrix&);

// Precedence: not_calculated > insufficient_n > low_variance > kept.
ScreenDecision screen_metric(const ingest::ReplicateMatrix&, const ThresholdConfig&);

}  // namespace retest::screening
