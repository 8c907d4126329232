#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include "retest/error.hpp"

namespace retest {

enum class MetricKind { continuous, binary, categorical };

enum class CellStatus { valid, constraint_violation, not_calculated };

// Ordered worst to best; monotonicity checks rely on the underlying order.
enum class ReliabilityClass { poor, moderate, good, excellent, perfect };

// Ordered worst to best.
enum class AgreementClass { non_acceptable, low, moderate, near_ideal };

// The ten analysis classes used by every per-class summary, in fixed
// table row order.
enum class MetricClass {
    adaptive,
    affect_alignment,
    cognitive_style,
    engagement,
    intention,
    interactional_efficiency,
    personalization,
    relational_synchrony,
    safety,
    semantic_appropriateness,
};

inline constexpr int kMetricClassCount = 10;
inline constexpr int kReliabilityClassCount = 5;
inline constexpr int kAgreementClassCount = 4;

std::string_view to_string(MetricKind);
std::string_view to_string(CellStatus);
std::string_view to_string(ReliabilityClass);
std::string_view to_string(AgreementClass);
std::string_view to_string(MetricClass);

MetricKind metric_kind_from_string(std::string_view);
CellStatus cell_status_from_string(std::string_view);
ReliabilityClass reliability_class_from_string(std::string_view);
AgreementClass agreement_class_from_string(std::string_view);
MetricClass metric_class_from_string(std::string_view);

// One observed value. Exactly one payload is populated: a finite number
// for continuous metrics, a label for binary/categorical ones.
class MetricValue {
public:
    MetricValue() = default;

    static MetricValue number(double value);
    static MetricValue label(MetricKind kind, std::string label);

    MetricKind kind() const noexcept { return kind_; }
    bool is_number() const noexcept {
        return std::holds_alternative<double>(payload_);
    }
    double as_number() const;             // errc::type_mismatch on labels
    const std::string& as_label() const;  // errc::type_mismatch on numbers

    bool operator==(const MetricValue&) const = default;

private:
    MetricKind kind_ = MetricKind::continuous;
    std::variant<double, std::string> payload_ = 0.0;
};

// Registry entry: metric identity, pipeline/class membership, value kind
// and validity constraints.
struct MetricSpec {
    std::string metric_id;
    std::string pipeline;
    MetricClass metric_class = MetricClass::adaptive;
    MetricKind kind = MetricKind::continuous;
    std::optional<double> range_min;  // continuous only, inclusive
    std::optional<double> range_max;
    std::vector<std::string> allowed_labels;  // binary: exactly two

    void validate() const;  // errc::config on contradictions
};

// The atomic observation: one value produced by one model, one run, one
// segment, one metric.
struct MeasurementCell {
    std::string model_id;
    std::string run_id;
    std::string segment_id;
    std::string metric_id;
    std::optional<MetricValue> value;
    CellStatus status = CellStatus::valid;
};

// Every tunable cutpoint lives in one place so the studies can be re-run
// under alternative thresholds.
struct ThresholdConfig {
    double reliability_moderate = 0.5;
    double reliability_good = 0.75;
    double reliability_excellent = 0.9;
    double perfect_epsilon = 1e-9;  // icc >= 1 - eps classifies as perfect
    double prevalence_cutoff = 0.99;
    double nmae_near_ideal = 0.05;
    double nmae_moderate = 0.10;
    double nmae_low = 0.20;
    double kappa_near_ideal = 0.81;
    double kappa_moderate = 0.61;
    double kappa_low = 0.41;
    int trim_count = 2;    // entries trimmed per tail of a 16-entry grid
    int min_segments = 5;  // complete segments required for analysis

    void validate() const;
    void apply_json_text(std::string_view json_text);  // partial override
    static ThresholdConfig from_json_file(const std::filesystem::path&);
    std::string to_json_text() const;
};

ReliabilityClass classify_reliability(double icc, const ThresholdConfig& cfg);
AgreementClass classify_agreement_continuous(double nmae, const ThresholdConfig& cfg);
AgreementClass classify_agreement_categorical(double kappa_median, const ThresholdConfig& cfg);

// Comparison scale used for cross-model class concordance: a perfect
// score is an excellent score whose ICC happens to sit at unity.
ReliabilityClass collapse_perfect(ReliabilityClass c) noexcept;

// Checks a value against the spec's constraints (inclusive range bounds,
// label membership). A kind mismatch counts as a violation.
bool satisfies(const MetricValue& value, const MetricSpec& spec);

// Numeric encoding used by the reliability engine: continuous values pass
// through, binary labels map to 0/1 by allowed-label order. Categorical
// values have no numeric view.
std::optional<double> numeric_encoding(const MetricValue& value, const MetricSpec& spec);

class MetricRegistry {
public:
    MetricRegistry() = default;

    void add(MetricSpec spec);  // errc::config on duplicates or bad specs
    const MetricSpec* find(const std::string& metric_id) const;
    const MetricSpec& at(const std::string& metric_id) const;  // errc::integrity

    size_t size() const noexcept { return specs_.size(); }
    bool empty() const noexcept { return specs_.empty(); }
    const std::vector<MetricSpec>& specs() const noexcept { return specs_; }

    static MetricRegistry from_json_text(std::string_view json_text);
    static MetricRegistry from_json_file(const std::filesystem::path&);
    std::string to_json_text() const;

private:
    std::vector<MetricSpec> specs_;
    std::unordered_map<std::string, size_t> index_;
};

}  // namespace retest
