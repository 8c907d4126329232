#include "retest/core.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace retest {

using nlohmann::json;

std::string_view to_string(MetricKind k) {
    switch (k) {
        case MetricKind::continuous: return "continuous";
        case MetricKind::binary: return "binary";
        case MetricKind::categorical: return "categorical";
    }
    return "?";
}

std::string_view to_string(CellStatus s) {
    switch (s) {
        case CellStatus::valid: return "valid";
        case CellStatus::constraint_violation: return "constraint_violation";
        case CellStatus::not_calculated: return "not_calculated";
    }
    return "?";
}

std::string_view to_string(ReliabilityClass c) {
    switch (c) {
        case ReliabilityClass::poor: return "poor";
        case ReliabilityClass::moderate: return "moderate";
        case ReliabilityClass::good: return "good";
        case ReliabilityClass::excellent: return "excellent";
        case ReliabilityClass::perfect: return "perfect";
    }
    return "?";
}

std::string_view to_string(AgreementClass c) {
    switch (c) {
        case AgreementClass::non_acceptable: return "non_acceptable";
        case AgreementClass::low: return "low";
        case AgreementClass::moderate: return "moderate";
        case AgreementClass::near_ideal: return "near_ideal";
    }
    return "?";
}

std::string_view to_string(MetricClass c) {
    switch (c) {
        case MetricClass::adaptive: return "adaptive";
        case MetricClass::affect_alignment: return "affect_alignment";
        case MetricClass::cognitive_style: return "cognitive_style";
        case MetricClass::engagement: return "engagement";
        case MetricClass::intention: return "intention";
        case MetricClass::interactional_efficiency: return "interactional_efficiency";
        case MetricClass::personalization: return "personalization";
        case MetricClass::relational_synchrony: return "relational_synchrony";
        case MetricClass::safety: return "safety";
        case MetricClass::semantic_appropriateness: return "semantic_appropriateness";
    }
    return "?";
}

namespace {

template <typename E>
E parse_enum(std::string_view text, std::initializer_list<E> values,
             std::string_view what) {
    for (E v : values) {
        if (to_string(v) == text) return v;
    }
    fail(errc::parse_error,
         "unknown " + std::string(what) + ": '" + std::string(text) + "'");
}

}  // namespace

MetricKind metric_kind_from_string(std::string_view s) {
    return parse_enum(s,
                      {MetricKind::continuous, MetricKind::binary,
                       MetricKind::categorical},
                      "metric kind");
}

CellStatus cell_status_from_string(std::string_view s) {
    return parse_enum(s,
                      {CellStatus::valid, CellStatus::constraint_violation,
                       CellStatus::not_calculated},
                      "cell status");
}

ReliabilityClass reliability_class_from_string(std::string_view s) {
    return parse_enum(s,
                      {ReliabilityClass::poor, ReliabilityClass::moderate,
                       ReliabilityClass::good, ReliabilityClass::excellent,
                       ReliabilityClass::perfect},
                      "reliability class");
}

AgreementClass agreement_class_from_string(std::string_view s) {
    return parse_enum(s,
                      {AgreementClass::non_acceptable, AgreementClass::low,
                       AgreementClass::moderate, AgreementClass::near_ideal},
                      "agreement class");
}

MetricClass metric_class_from_string(std::string_view s) {
    return parse_enum(
        s,
        {MetricClass::adaptive, MetricClass::affect_alignment,
         MetricClass::cognitive_style, MetricClass::engagement,
         MetricClass::intention, MetricClass::interactional_efficiency,
         MetricClass::personalization, MetricClass::relational_synchrony,
         MetricClass::safety, MetricClass::semantic_appropriateness},
        "metric class");
}

MetricValue MetricValue::number(double value) {
    if (!std::isfinite(value))
        fail(errc::invalid_input, "continuous value must be finite");
    MetricValue v;
    v.kind_ = MetricKind::continuous;
    v.payload_ = value;
    return v;
}

MetricValue MetricValue::label(MetricKind kind, std::string label) {
    if (kind == MetricKind::continuous)
        fail(errc::invalid_input, "continuous values carry numbers, not labels");
    MetricValue v;
    v.kind_ = kind;
    v.payload_ = std::move(label);
    return v;
}

double MetricValue::as_number() const {
    if (!is_number())
        fail(errc::type_mismatch, "metric value holds a label, not a number");
    return std::get<double>(payload_);
}

const std::string& MetricValue::as_label() const {
    if (is_number())
        fail(errc::type_mismatch, "metric value holds a number, not a label");
    return std::get<std::string>(payload_);
}

void MetricSpec::validate() const {
    if (metric_id.empty()) fail(errc::config, "metric spec with empty metric_id");
    if (kind == MetricKind::continuous) {
        if (!allowed_labels.empty())
            fail(errc::config,
                 metric_id + ": continuous metrics take range bounds, not labels");
        if (range_min && range_max && !(*range_min < *range_max))
            fail(errc::config, metric_id + ": range_min must be below range_max");
        if ((range_min && !std::isfinite(*range_min)) ||
            (range_max && !std::isfinite(*range_max)))
            fail(errc::config, metric_id + ": range bounds must be finite");
    } else {
        if (range_min || range_max)
            fail(errc::config,
                 metric_id + ": label metrics take allowed_labels, not range bounds");
        if (kind == MetricKind::binary && allowed_labels.size() != 2)
            fail(errc::config,
                 metric_id + ": binary metrics need exactly two allowed labels");
        if (kind == MetricKind::categorical && allowed_labels.size() == 1)
            fail(errc::config,
                 metric_id + ": categorical metrics need zero or >=2 labels");
    }
}

void ThresholdConfig::validate() const {
    auto finite = [](double v) { return std::isfinite(v); };
    if (!finite(reliability_moderate) || !finite(reliability_good) ||
        !finite(reliability_excellent) || !finite(perfect_epsilon) ||
        !finite(prevalence_cutoff) || !finite(nmae_near_ideal) ||
        !finite(nmae_moderate) || !finite(nmae_low) || !finite(kappa_near_ideal) ||
        !finite(kappa_moderate) || !finite(kappa_low))
        fail(errc::config, "thresholds must be finite");
    if (!(reliability_moderate < reliability_good &&
          reliability_good < reliability_excellent))
        fail(errc::config, "reliability cutpoints must be strictly increasing");
    if (!(perfect_epsilon > 0 && perfect_epsilon < 0.1))
        fail(errc::config, "perfect_epsilon must be in (0, 0.1)");
    if (!(reliability_excellent < 1.0 - perfect_epsilon))
        fail(errc::config, "excellent cutpoint must sit below the perfect band");
    if (!(prevalence_cutoff > 0 && prevalence_cutoff <= 1))
        fail(errc::config, "prevalence_cutoff must be in (0, 1]");
    if (!(0 < nmae_near_ideal && nmae_near_ideal < nmae_moderate &&
          nmae_moderate < nmae_low))
        fail(errc::config, "nmae cutpoints must be strictly increasing");
    if (!(kappa_near_ideal > kappa_moderate && kappa_moderate > kappa_low))
        fail(errc::config, "kappa cutpoints must be strictly decreasing");
    if (kappa_near_ideal > 1 || kappa_low < -1)
        fail(errc::config, "kappa cutpoints must lie in [-1, 1]");
    if (trim_count < 0) fail(errc::config, "trim_count must be >= 0");
    if (min_segments < 2) fail(errc::config, "min_segments must be >= 2");
}

namespace {

json parse_json_text(std::string_view text, std::string_view what) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded())
        fail(errc::parse_error, "malformed JSON in " + std::string(what));
    return j;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(errc::config, "cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

}  // namespace

void ThresholdConfig::apply_json_text(std::string_view json_text) {
    json j = parse_json_text(json_text, "threshold config");
    if (!j.is_object()) fail(errc::config, "threshold config must be a JSON object");
    for (auto& [key, value] : j.items()) {
        auto set_real = [&](double& field) {
            if (!value.is_number()) fail(errc::config, "threshold '" + key + "' must be a number");
            field = value.get<double>();
        };
        auto set_int = [&](int& field) {
            if (!value.is_number_integer()) fail(errc::config, "threshold '" + key + "' must be an integer");
            field = value.get<int>();
        };
        if (key == "reliability_moderate") set_real(reliability_moderate);
        else if (key == "reliability_good") set_real(reliability_good);
        else if (key == "reliability_excellent") set_real(reliability_excellent);
        else if (key == "perfect_epsilon") set_real(perfect_epsilon);
        else if (key == "prevalence_cutoff") set_real(prevalence_cutoff);
        else if (key == "nmae_near_ideal") set_real(nmae_near_ideal);
        else if (key == "nmae_moderate") set_real(nmae_moderate);
        else if (key == "nmae_low") set_real(nmae_low);
        else if (key == "kappa_near_ideal") set_real(kappa_near_ideal);
        else if (key == "kappa_moderate") set_real(kappa_moderate);
        else if (key == "kappa_low") set_real(kappa_low);
        else if (key == "trim_count") set_int(trim_count);
        else if (key == "min_segments") set_int(min_segments);
        else fail(errc::config, "unknown threshold key '" + key + "'");
    }
    validate();
}

ThresholdConfig ThresholdConfig::from_json_file(const std::filesystem::path& path) {
    ThresholdConfig cfg;
    cfg.apply_json_text(read_file(path));
    return cfg;
}

std::string ThresholdConfig::to_json_text() const {
    json j{
        {"reliability_moderate", reliability_moderate},
        {"reliability_good", reliability_good},
        {"reliability_excellent", reliability_excellent},
        {"perfect_epsilon", perfect_epsilon},
        {"prevalence_cutoff", prevalence_cutoff},
        {"nmae_near_ideal", nmae_near_ideal},
        {"nmae_moderate", nmae_moderate},
        {"nmae_low", nmae_low},
        {"kappa_near_ideal", kappa_near_ideal},
        {"kappa_moderate", kappa_moderate},
        {"kappa_low", kappa_low},
        {"trim_count", trim_count},
        {"min_segments", min_segments},
    };
    return j.dump(2);
}

ReliabilityClass classify_reliability(double icc, const ThresholdConfig& cfg) {
    if (!std::isfinite(icc))
        fail(errc::invalid_input, "classify_reliability: icc must be finite");
    if (icc >= 1.0 - cfg.perfect_epsilon) return ReliabilityClass::perfect;
    if (icc >= cfg.reliability_excellent) return ReliabilityClass::excellent;
    if (icc >= cfg.reliability_good) return ReliabilityClass::good;
    if (icc >= cfg.reliability_moderate) return ReliabilityClass::moderate;
    return ReliabilityClass::poor;
}

AgreementClass classify_agreement_continuous(double nmae, const ThresholdConfig& cfg) {
    if (!std::isfinite(nmae) || nmae < 0)
        fail(errc::invalid_input, "classify_agreement_continuous: nmae must be finite and >= 0");
    if (nmae <= cfg.nmae_near_ideal) return AgreementClass::near_ideal;
    if (nmae <= cfg.nmae_moderate) return AgreementClass::moderate;
    if (nmae <= cfg.nmae_low) return AgreementClass::low;
    return AgreementClass::non_acceptable;
}

AgreementClass classify_agreement_categorical(double kappa_median, const ThresholdConfig& cfg) {
    if (!std::isfinite(kappa_median) || kappa_median < -1 || kappa_median > 1)
        fail(errc::invalid_input, "classify_agreement_categorical: kappa must lie in [-1, 1]");
    if (kappa_median >= cfg.kappa_near_ideal) return AgreementClass::near_ideal;
    if (kappa_median >= cfg.kappa_moderate) return AgreementClass::moderate;
    if (kappa_median >= cfg.kappa_low) return AgreementClass::low;
    return AgreementClass::non_acceptable;
}

ReliabilityClass collapse_perfect(ReliabilityClass c) noexcept {
    return c == ReliabilityClass::perfect ? ReliabilityClass::excellent : c;
}

bool satisfies(const MetricValue& value, const MetricSpec& spec) {
    if (value.kind() != spec.kind) return false;
    if (spec.kind == MetricKind::continuous) {
        if (!value.is_number()) return false;
        const double x = value.as_number();
        if (!std::isfinite(x)) return false;
        if (spec.range_min && x < *spec.range_min) return false;
        if (spec.range_max && x > *spec.range_max) return false;
        return true;
    }
    if (value.is_number()) return false;
    if (spec.allowed_labels.empty()) return true;  // unconstrained categorical
    const std::string& label = value.as_label();
    for (const auto& allowed : spec.allowed_labels)
        if (allowed == label) return true;
    return false;
}

std::optional<double> numeric_encoding(const MetricValue& value, const MetricSpec& spec) {
    if (spec.kind == MetricKind::continuous && value.is_number())
        return value.as_number();
    if (spec.kind == MetricKind::binary && !value.is_number()) {
        const std::string& label = value.as_label();
        if (spec.allowed_labels.size() == 2) {
            if (label == spec.allowed_labels[0]) return 0.0;
            if (label == spec.allowed_labels[1]) return 1.0;
        }
    }
    return std::nullopt;
}

void MetricRegistry::add(MetricSpec spec) {
    spec.validate();
    if (index_.count(spec.metric_id))
        fail(errc::config, "duplicate metric_id in registry: " + spec.metric_id);
    index_.emplace(spec.metric_id, specs_.size());
    specs_.push_back(std::move(spec));
}

const MetricSpec* MetricRegistry::find(const std::string& metric_id) const {
    auto it = index_.find(metric_id);
    return it == index_.end() ? nullptr : &specs_[it->second];
}

const MetricSpec& MetricRegistry::at(const std::string& metric_id) const {
    const MetricSpec* spec = find(metric_id);
    if (!spec) fail(errc::integrity, "metric_id not in registry: " + metric_id);
    return *spec;
}

MetricRegistry MetricRegistry::from_json_text(std::string_view json_text) {
    json j = parse_json_text(json_text, "metric registry");
    if (!j.is_array()) fail(errc::parse_error, "metric registry must be a JSON array");
    MetricRegistry registry;
    for (const auto& item : j) {
        if (!item.is_object())
            fail(errc::parse_error, "registry entries must be JSON objects");
        MetricSpec spec;
        spec.metric_id = item.value("metric_id", std::string());
        spec.pipeline = item.value("pipeline", std::string());
        if (!item.contains("metric_class") || !item.contains("kind"))
            fail(errc::parse_error,
                 "registry entry missing metric_class/kind: " + spec.metric_id);
        spec.metric_class =
            metric_class_from_string(item.at("metric_class").get<std::string>());
        spec.kind = metric_kind_from_string(item.at("kind").get<std::string>());
        if (item.contains("range_min") && !item.at("range_min").is_null())
            spec.range_min = item.at("range_min").get<double>();
        if (item.contains("range_max") && !item.at("range_max").is_null())
            spec.range_max = item.at("range_max").get<double>();
        if (item.contains("allowed_labels") && !item.at("allowed_labels").is_null())
            spec.allowed_labels =
                item.at("allowed_labels").get<std::vector<std::string>>();
        registry.add(std::move(spec));
    }
    return registry;
}

MetricRegistry MetricRegistry::from_json_file(const std::filesystem::path& path) {
    return from_json_text(read_file(path));
}

std::string MetricRegistry::to_json_text() const {
    json out = json::array();
    for (const auto& spec : specs_) {
        json item{
            {"metric_id", spec.metric_id},
            {"pipeline", spec.pipeline},
            {"metric_class", std::string(to_string(spec.metric_class))},
            {"kind", std::string(to_string(spec.kind))},
        };
        if (spec.range_min) item["range_min"] = *spec.range_min;
        if (spec.range_max) item["range_max"] = *spec.range_max;
        if (!spec.allowed_labels.empty()) item["allowed_labels"] = spec.allowed_labels;
        out.push_back(std::move(item));
    }
    return out.dump(2);
}

}  // namespace retest
