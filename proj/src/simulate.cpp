#include "retest/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>

#include <json.hpp>

#include "retest/csv.hpp"

namespace retest::sim {

using ingest::ReplicateMatrix;
using nlohmann::json;
using reliability::IccMode;

NoiseKind noise_kind_from_string(std::string_view s) {
    if (s == "gaussian") return NoiseKind::gaussian;
    if (s == "uniform") return NoiseKind::uniform;
    if (s == "heavy_tailed") return NoiseKind::heavy_tailed;
    fail(errc::config, "unknown noise kind '" + std::string(s) + "'");
}

void VarianceSpec::validate() const {
    if (n_segments < 2 || k < 2)
        fail(errc::config, "variance spec needs n_segments >= 2 and k >= 2");
    if (!(sigma_b_sq >= 0) || !(sigma_e_sq > 0) || !std::isfinite(mu))
        fail(errc::config, "variance spec needs sigma_b_sq >= 0, sigma_e_sq > 0, finite mu");
}

namespace {

std::string segment_name(int index, int width) {
    std::string digits = std::to_string(index + 1);
    if (static_cast<int>(digits.size()) < width)
        digits.insert(0, width - digits.size(), '0');
    return "seg_" + digits;
}

std::vector<std::string> default_segments(int n) {
    int width = static_cast<int>(std::to_string(n).size());
    std::vector<std::string> out;
    out.reserve(n);
    for (int s = 0; s < n; ++s) out.push_back(segment_name(s, width));
    return out;
}

std::vector<std::string> default_runs(int k) {
    std::vector<std::string> out;
    for (int r = 0; r < k; ++r) out.push_back("run_" + std::to_string(r + 1));
    return out;
}

ReplicateMatrix blank_matrix(std::string model_id, MetricSpec spec,
                             std::vector<std::string> segments,
                             std::vector<std::string> runs) {
    ReplicateMatrix m;
    m.model_id = std::move(model_id);
    m.spec = std::move(spec);
    m.segment_ids = std::move(segments);
    m.run_ids = std::move(runs);
    m.grid.assign(m.segment_ids.size() * m.run_ids.size(), {});
    return m;
}

double draw_noise(std::mt19937_64& rng, NoiseKind kind, double sigma) {
    if (sigma == 0) return 0;
    switch (kind) {
        case NoiseKind::gaussian: {
            std::normal_distribution<double> dist(0.0, sigma);
            return dist(rng);
        }
        case NoiseKind::uniform: {
            const double half_width = sigma * std::sqrt(3.0);
            std::uniform_real_distribution<double> dist(-half_width, half_width);
            return dist(rng);
        }
        case NoiseKind::heavy_tailed: {
            // Student t with 5 dof rescaled to unit variance.
            std::student_t_distribution<double> dist(5.0);
            return dist(rng) * sigma * std::sqrt(3.0 / 5.0);
        }
    }
    return 0;
}

}  // namespace

ingest::ReplicateMatrix gen_continuous(const VarianceSpec& spec) {
    spec.validate();
    MetricSpec mspec;
    mspec.metric_id = spec.metric_id;
    mspec.pipeline = "simulated";
    mspec.kind = MetricKind::continuous;

    ReplicateMatrix matrix =
        blank_matrix(spec.model_id, mspec, default_segments(spec.n_segments),
                     default_runs(spec.k));
    std::mt19937_64 rng(spec.seed);
    const double sigma_b = std::sqrt(spec.sigma_b_sq);
    const double sigma_e = std::sqrt(spec.sigma_e_sq);
    for (int s = 0; s < spec.n_segments; ++s) {
        const double b = draw_noise(rng, spec.noise, sigma_b);
        for (int r = 0; r < spec.k; ++r) {
            const double x = spec.mu + b + draw_noise(rng, spec.noise, sigma_e);
            auto& entry = matrix.at(s, r);
            entry.status = CellStatus::valid;
            entry.value = MetricValue::number(x);
        }
    }
    matrix.n_cells_present = matrix.grid.size();
    matrix.recompute_completeness();
    return matrix;
}

ingest::ReplicateMatrix gen_categorical(
    int n_segments, int k,
    const std::vector<std::pair<std::string, double>>& base_distribution,
    double flip_probability, uint64_t seed, std::string model_id,
    std::string metric_id) {
    if (n_segments < 1 || k < 1)
        fail(errc::config, "gen_categorical needs n_segments >= 1 and k >= 1");
    if (base_distribution.size() < 2)
        fail(errc::config, "gen_categorical needs at least two labels");
    if (!(flip_probability >= 0.0 && flip_probability <= 1.0))
        fail(errc::config, "flip_probability must lie in [0, 1]");
    double total = 0;
    std::set<std::string> unique;
    for (const auto& [label, p] : base_distribution) {
        if (label.empty() || !unique.insert(label).second)
            fail(errc::config, "gen_categorical labels must be unique and non-empty");
        if (!(p >= 0)) fail(errc::config, "gen_categorical probabilities must be >= 0");
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-9)
        fail(errc::config, "gen_categorical base distribution must sum to 1");

    MetricSpec mspec;
    mspec.metric_id = std::move(metric_id);
    mspec.pipeline = "simulated";
    mspec.kind = base_distribution.size() == 2 ? MetricKind::binary
                                               : MetricKind::categorical;
    for (const auto& [label, p] : base_distribution) mspec.allowed_labels.push_back(label);

    ReplicateMatrix matrix = blank_matrix(std::move(model_id), mspec,
                                          default_segments(n_segments),
                                          default_runs(k));
    std::mt19937_64 rng(seed);
    std::vector<double> weights;
    for (const auto& [label, p] : base_distribution) weights.push_back(p);
    std::discrete_distribution<int> latent_dist(weights.begin(), weights.end());
    std::bernoulli_distribution flip(flip_probability);
    std::uniform_int_distribution<int> any_label(
        0, static_cast<int>(base_distribution.size()) - 1);

    const auto& labels = matrix.spec.allowed_labels;
    for (int s = 0; s < n_segments; ++s) {
        const int latent = latent_dist(rng);
        for (int r = 0; r < k; ++r) {
            const int shown = flip(rng) ? any_label(rng) : latent;
            auto& entry = matrix.at(s, r);
            entry.status = CellStatus::valid;
            entry.value = MetricValue::label(matrix.spec.kind, labels[shown]);
        }
    }
    matrix.n_cells_present = matrix.grid.size();
    matrix.recompute_completeness();
    return matrix;
}

OracleMeanSquares oracle_mean_squares(const std::vector<std::vector<double>>& grid) {
    const size_t S = grid.size();
    if (S < 2) fail(errc::insufficient_data, "oracle: need at least two segments");
    const size_t k = grid.front().size();
    if (k < 2) fail(errc::insufficient_data, "oracle: need at least two replicates");
    for (const auto& row : grid)
        if (row.size() != k) fail(errc::invalid_input, "oracle: ragged grid");

    double sum = 0;
    for (size_t s = 0; s < S; ++s)
        for (size_t r = 0; r < k; ++r) sum += grid[s][r];
    const double grand = sum / (double(S) * double(k));

    double ss_between = 0;
    for (size_t s = 0; s < S; ++s) {
        double row_sum = 0;
        for (size_t r = 0; r < k; ++r) row_sum += grid[s][r];
        const double row_mean = row_sum / double(k);
        ss_between += (row_mean - grand) * (row_mean - grand);
    }
    ss_between *= double(k);

    double ss_within = 0;
    for (size_t s = 0; s < S; ++s) {
        double row_sum = 0;
        for (size_t r = 0; r < k; ++r) row_sum += grid[s][r];
        const double row_mean = row_sum / double(k);
        for (size_t r = 0; r < k; ++r)
            ss_within += (grid[s][r] - row_mean) * (grid[s][r] - row_mean);
    }

    double ss_runs = 0;
    for (size_t r = 0; r < k; ++r) {
        double col_sum = 0;
        for (size_t s = 0; s < S; ++s) col_sum += grid[s][r];
        const double col_mean = col_sum / double(S);
        ss_runs += (col_mean - grand) * (col_mean - grand);
    }
    ss_runs *= double(S);

    double ss_residual = 0;
    for (size_t s = 0; s < S; ++s) {
        double row_sum = 0;
        for (size_t r = 0; r < k; ++r) row_sum += grid[s][r];
        const double row_mean = row_sum / double(k);
        for (size_t r = 0; r < k; ++r) {
            double col_sum = 0;
            for (size_t s2 = 0; s2 < S; ++s2) col_sum += grid[s2][r];
            const double col_mean = col_sum / double(S);
            const double e = grid[s][r] - row_mean - col_mean + grand;
            ss_residual += e * e;
        }
    }

    OracleMeanSquares ms;
    ms.ms_b = ss_between / double(S - 1);
    ms.ms_w = ss_within / (double(S) * double(k - 1));
    ms.ms_r = ss_runs / double(k - 1);
    ms.ms_e = ss_residual / (double(S - 1) * double(k - 1));
    return ms;
}

double oracle_icc_bruteforce(const std::vector<std::vector<double>>& grid,
                             IccMode mode) {
    const OracleMeanSquares ms = oracle_mean_squares(grid);
    const double k = double(grid.front().size());
    const double err = mode == IccMode::within ? ms.ms_w : ms.ms_e;
    const double denom = ms.ms_b + (k - 1.0) * err;
    if (denom <= 0)
        fail(errc::degenerate_variance, "oracle: zero variance denominator");
    return (ms.ms_b - err) / denom;
}

double oracle_icc3k_bruteforce(const std::vector<std::vector<double>>& grid,
                               IccMode mode) {
    const OracleMeanSquares ms = oracle_mean_squares(grid);
    if (ms.ms_b <= 0) fail(errc::degenerate_variance, "oracle: MS_B is zero");
    const double err = mode == IccMode::within ? ms.ms_w : ms.ms_e;
    return (ms.ms_b - err) / ms.ms_b;
}

// ---- fixture manifest -------------------------------------------------------

namespace {

json optional_double_array(const std::vector<std::optional<double>>& xs) {
    json out = json::array();
    for (const auto& x : xs) {
        if (x) out.push_back(*x);
        else out.push_back(nullptr);
    }
    return out;
}

}  // namespace

std::string FixtureManifest::to_json_text() const {
    json j{{"models", models},
           {"runs", runs},
           {"n_segments", n_segments},
           {"seed", seed}};
    json metrics_json = json::array();
    for (const auto& plan : metrics) {
        json item{
            {"metric_id", plan.spec.metric_id},
            {"pipeline", plan.spec.pipeline},
            {"metric_class", std::string(to_string(plan.spec.metric_class))},
            {"kind", std::string(to_string(plan.spec.kind))},
        };
        if (plan.spec.range_min) item["range_min"] = *plan.spec.range_min;
        if (plan.spec.range_max) item["range_max"] = *plan.spec.range_max;
        if (!plan.spec.allowed_labels.empty())
            item["allowed_labels"] = plan.spec.allowed_labels;

        json gen;
        switch (plan.kind) {
            case MetricPlan::Kind::trend:
                gen["type"] = "trend";
                gen["icc31"] = optional_double_array(plan.icc31_target);
                gen["offset"] = plan.offset;
                gen["mu"] = plan.mu;
                gen["scale"] = plan.scale;
                if (!plan.violations.empty()) gen["violations"] = plan.violations;
                if (!plan.missing.empty()) gen["missing"] = plan.missing;
                break;
            case MetricPlan::Kind::constant:
                gen["type"] = "constant";
                if (plan.constant_value) gen["value"] = *plan.constant_value;
                if (plan.constant_label) gen["label"] = *plan.constant_label;
                gen["present"] = plan.present;
                break;
            case MetricPlan::Kind::label_pattern:
                gen["type"] = "label_pattern";
                gen["disagree_with_first"] = plan.disagree_with_first;
                gen["run_flips"] = plan.run_flips;
                gen["present"] = plan.present;
                break;
        }
        item["generator"] = std::move(gen);
        metrics_json.push_back(std::move(item));
    }
    j["metrics"] = std::move(metrics_json);
    return j.dump(2);
}

FixtureManifest FixtureManifest::from_json_text(std::string_view text) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object())
        fail(errc::parse_error, "fixture manifest must be a JSON object");

    FixtureManifest manifest;
    try {
        manifest.models = j.at("models").get<std::vector<std::string>>();
        manifest.runs = j.at("runs").get<std::vector<std::string>>();
        manifest.n_segments = j.at("n_segments").get<int>();
        manifest.seed = j.value("seed", 0ull);
        const size_t n_models = manifest.models.size();
        for (const auto& item : j.at("metrics")) {
            MetricPlan plan;
            plan.spec.metric_id = item.at("metric_id").get<std::string>();
            plan.spec.pipeline = item.value("pipeline", std::string("simulated"));
            plan.spec.metric_class =
                metric_class_from_string(item.at("metric_class").get<std::string>());
            plan.spec.kind = metric_kind_from_string(item.at("kind").get<std::string>());
            if (item.contains("range_min") && !item.at("range_min").is_null())
                plan.spec.range_min = item.at("range_min").get<double>();
            if (item.contains("range_max") && !item.at("range_max").is_null())
                plan.spec.range_max = item.at("range_max").get<double>();
            if (item.contains("allowed_labels") && !item.at("allowed_labels").is_null())
                plan.spec.allowed_labels =
                    item.at("allowed_labels").get<std::vector<std::string>>();

            const json& gen = item.at("generator");
            const std::string type = gen.at("type").get<std::string>();
            if (type == "trend") {
                plan.kind = MetricPlan::Kind::trend;
                for (const auto& target : gen.at("icc31")) {
                    if (target.is_null()) plan.icc31_target.emplace_back(std::nullopt);
                    else plan.icc31_target.emplace_back(target.get<double>());
                }
                plan.offset = gen.value("offset", std::vector<double>(n_models, 0.0));
                plan.mu = gen.value("mu", 0.0);
                plan.scale = gen.value("scale", 1.0);
                plan.violations = gen.value("violations", std::vector<int>(n_models, 0));
                plan.missing = gen.value("missing", std::vector<int>(n_models, 0));
            } else if (type == "constant") {
                plan.kind = MetricPlan::Kind::constant;
                if (gen.contains("value")) plan.constant_value = gen.at("value").get<double>();
                if (gen.contains("label")) plan.constant_label = gen.at("label").get<std::string>();
                plan.present = gen.value("present", std::vector<bool>(n_models, true));
            } else if (type == "label_pattern") {
                plan.kind = MetricPlan::Kind::label_pattern;
                plan.disagree_with_first =
                    gen.value("disagree_with_first", std::vector<int>(n_models, 0));
                plan.run_flips = gen.value("run_flips", std::vector<int>(n_models, 0));
                plan.present = gen.value("present", std::vector<bool>(n_models, true));
            } else {
                fail(errc::config, "unknown generator type '" + type + "'");
            }
            manifest.metrics.push_back(std::move(plan));
        }
    } catch (const json::exception& e) {
        fail(errc::parse_error, std::string("fixture manifest: ") + e.what());
    }
    manifest.validate();
    return manifest;
}

FixtureManifest FixtureManifest::from_json_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(errc::config, "cannot open " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    return from_json_text(text);
}

void FixtureManifest::validate() const {
    if (models.empty()) fail(errc::config, "fixture manifest: no models");
    if (runs.size() < 2) fail(errc::config, "fixture manifest: need >= 2 runs");
    if (n_segments < 2) fail(errc::config, "fixture manifest: need >= 2 segments");
    for (const auto& model : models)
        if (model.empty() || model.find('|') != std::string::npos ||
            model.find(',') != std::string::npos)
            fail(errc::config, "fixture manifest: model ids must be plain tokens");

    const size_t n_models = models.size();
    std::set<std::string> ids;
    for (const auto& plan : metrics) {
        plan.spec.validate();
        if (!ids.insert(plan.spec.metric_id).second)
            fail(errc::config, "fixture manifest: duplicate metric " + plan.spec.metric_id);
        auto check_size = [&](size_t size, const char* what) {
            if (size != n_models)
                fail(errc::config, "fixture manifest: " + plan.spec.metric_id + ": " +
                                       what + " must list one entry per model");
        };
        switch (plan.kind) {
            case MetricPlan::Kind::trend: {
                if (plan.spec.kind != MetricKind::continuous)
                    fail(errc::config, plan.spec.metric_id + ": trend metrics are continuous");
                check_size(plan.icc31_target.size(), "icc31");
                check_size(plan.offset.size(), "offset");
                check_size(plan.violations.size(), "violations");
                check_size(plan.missing.size(), "missing");
                bool any_present = false;
                for (const auto& target : plan.icc31_target) {
                    if (!target) continue;
                    any_present = true;
                    if (!(*target > 0.0 && *target <= 1.0))
                        fail(errc::config, plan.spec.metric_id + ": icc31 targets lie in (0, 1]");
                }
                if (!any_present)
                    fail(errc::config, plan.spec.metric_id + ": absent from every model");
                for (size_t m = 0; m < n_models; ++m) {
                    if (plan.violations[m] < 0 || plan.violations[m] > 8 ||
                        plan.missing[m] < 0 || plan.missing[m] > 8)
                        fail(errc::config, plan.spec.metric_id +
                                               ": violation/missing injections limited to 8");
                    if (plan.violations[m] > 0 && !plan.spec.range_max)
                        fail(errc::config, plan.spec.metric_id +
                                               ": violations need a range_max to violate");
                    if ((plan.violations[m] > 0 || plan.missing[m] > 0) && n_segments < 40)
                        fail(errc::config, plan.spec.metric_id +
                                               ": injections need >= 40 segments");
                }
                break;
            }
            case MetricPlan::Kind::constant: {
                check_size(plan.present.size(), "present");
                const bool want_number = plan.spec.kind == MetricKind::continuous;
                if (want_number != plan.constant_value.has_value() ||
                    want_number == plan.constant_label.has_value())
                    fail(errc::config, plan.spec.metric_id +
                                           ": constant payload must match the metric kind");
                break;
            }
            case MetricPlan::Kind::label_pattern: {
                if (plan.spec.allowed_labels.size() < 2)
                    fail(errc::config, plan.spec.metric_id +
                                           ": label patterns need an allowed label set");
                check_size(plan.disagree_with_first.size(), "disagree_with_first");
                check_size(plan.run_flips.size(), "run_flips");
                check_size(plan.present.size(), "present");
                for (size_t m = 0; m < n_models; ++m)
                    if (plan.disagree_with_first[m] < 0 ||
                        plan.disagree_with_first[m] > n_segments / 2 ||
                        plan.run_flips[m] < 0 || plan.run_flips[m] > n_segments / 2)
                        fail(errc::config, plan.spec.metric_id +
                                               ": pattern flips limited to n_segments/2");
                break;
            }
        }
    }
}

// ---- fixture construction ---------------------------------------------------

namespace {

std::vector<size_t> spread_positions(size_t S, size_t n) {
    std::vector<size_t> out;
    out.reserve(n);
    for (size_t j = 0; j < n; ++j) out.push_back(((2 * j + 1) * S) / (2 * n));
    std::set<size_t> unique(out.begin(), out.end());
    if (unique.size() != out.size())
        fail(errc::internal, "spread_positions produced duplicates");
    return out;
}

ReplicateMatrix build_trend(const FixtureManifest& manifest, const MetricPlan& plan,
                            size_t model_ix, const std::vector<std::string>& segments) {
    const int S = manifest.n_segments;
    const int k = static_cast<int>(manifest.runs.size());
    ReplicateMatrix matrix = blank_matrix(manifest.models[model_ix], plan.spec,
                                          segments, manifest.runs);

    const double tau = *plan.icc31_target[model_ix];
    std::vector<double> t(S), v(k);
    double v_t = 0, v_v = 0;
    for (int s = 0; s < S; ++s) {
        t[s] = (2.0 * s - (S - 1)) / double(S - 1);
        v_t += t[s] * t[s];
    }
    for (int r = 0; r < k; ++r) {
        v[r] = (2.0 * r - (k - 1)) / double(k - 1);
        v_v += v[r] * v[r];
    }

    double trend_amp, noise_amp;
    if (tau >= 1.0) {
        trend_amp = plan.scale;
        noise_amp = 0.0;
    } else {
        noise_amp = plan.scale * 0.25;
        const double rho = (1.0 + (k - 1) * tau) / (1.0 - tau);
        trend_amp = std::sqrt(rho * (S - 1) * noise_amp * noise_amp * v_v /
                              (double(k) * S * (k - 1)));
    }

    const double base = plan.mu + plan.offset[model_ix];
    for (int s = 0; s < S; ++s) {
        for (int r = 0; r < k; ++r) {
            const double x = base + trend_amp * t[s] + noise_amp * t[s] * v[r];
            auto& entry = matrix.at(s, r);
            entry.status = CellStatus::valid;
            entry.value = MetricValue::number(x);
        }
    }
    matrix.n_cells_present = matrix.grid.size();

    // Injections live in the tail segments: violations first, then missing
    // cells one block earlier, so they never collide.
    const int n_violations = plan.violations[model_ix];
    for (int j = 0; j < n_violations; ++j) {
        auto& entry = matrix.at(size_t(S - 1 - j), size_t(j % k));
        entry.status = CellStatus::constraint_violation;
        entry.value = MetricValue::number(*plan.spec.range_max + 1.0 + j);
    }
    const int n_missing = plan.missing[model_ix];
    for (int j = 0; j < n_missing; ++j) {
        auto& entry = matrix.at(size_t(S - 1 - 8 - j), size_t((j + 1) % k));
        entry.status = CellStatus::not_calculated;
        entry.value.reset();
    }
    matrix.recompute_completeness();
    return matrix;
}

ReplicateMatrix build_constant(const FixtureManifest& manifest, const MetricPlan& plan,
                               size_t model_ix,
                               const std::vector<std::string>& segments) {
    ReplicateMatrix matrix = blank_matrix(manifest.models[model_ix], plan.spec,
                                          segments, manifest.runs);
    const MetricValue value =
        plan.constant_value
            ? MetricValue::number(*plan.constant_value)
            : MetricValue::label(plan.spec.kind, *plan.constant_label);
    for (auto& entry : matrix.grid) {
        entry.status = CellStatus::valid;
        entry.value = value;
    }
    matrix.n_cells_present = matrix.grid.size();
    matrix.recompute_completeness();
    return matrix;
}

ReplicateMatrix build_label_pattern(const FixtureManifest& manifest,
                                    const MetricPlan& plan, size_t model_ix,
                                    const std::vector<std::string>& segments) {
    const size_t S = size_t(manifest.n_segments);
    const size_t k = manifest.runs.size();
    const auto& labels = plan.spec.allowed_labels;
    const size_t L = labels.size();
    ReplicateMatrix matrix = blank_matrix(manifest.models[model_ix], plan.spec,
                                          segments, manifest.runs);

    // Balanced block pattern shared by all models, then per-model latent
    // flips, then per-model run-level flips.
    std::vector<size_t> latent(S);
    for (size_t s = 0; s < S; ++s) latent[s] = (s * L) / S;
    for (size_t pos : spread_positions(S, size_t(plan.disagree_with_first[model_ix])))
        latent[pos] = (latent[pos] + 1) % L;

    for (size_t s = 0; s < S; ++s) {
        for (size_t r = 0; r < k; ++r) {
            auto& entry = matrix.at(s, r);
            entry.status = CellStatus::valid;
            entry.value = MetricValue::label(plan.spec.kind, labels[latent[s]]);
        }
    }
    size_t flip_ix = 0;
    for (size_t pos : spread_positions(S, size_t(plan.run_flips[model_ix]))) {
        auto& entry = matrix.at(pos, flip_ix % k);
        const size_t current = latent[pos];
        entry.value = MetricValue::label(plan.spec.kind, labels[(current + 1) % L]);
        ++flip_ix;
    }
    matrix.n_cells_present = matrix.grid.size();
    matrix.recompute_completeness();
    return matrix;
}

// --- independent (oracle-path) statistics used only for ground truth ---

std::optional<double> truth_prevalence(const ReplicateMatrix& matrix) {
    std::map<std::string, size_t> label_counts;
    std::map<double, size_t> number_counts;
    size_t n_valid = 0, top = 0;
    for (const auto& entry : matrix.grid) {
        if (entry.status != CellStatus::valid || !entry.value) continue;
        ++n_valid;
        size_t& slot = entry.value->is_number()
                           ? number_counts[entry.value->as_number()]
                           : label_counts[entry.value->as_label()];
        top = std::max(top, ++slot);
    }
    if (n_valid == 0) return std::nullopt;
    return double(top) / double(n_valid);
}

struct TruthCell {
    std::string decision;  // screening decision
    std::optional<double> prevalence;
    int n_complete = 0;
    int n_valid = 0;
    int n_violation = 0;
    int n_not_calculated = 0;
    bool kappa_only = false;  // categorical: no ICC path
    std::optional<double> icc31_within, icc3k_within, icc31_residual, icc3k_residual;
    std::optional<ReliabilityClass> class31, class3k;  // requested mode
};

void guard_icc_margin(double icc, const ThresholdConfig& cfg, const std::string& context) {
    if (icc >= 1.0 - cfg.perfect_epsilon) return;
    if (1.0 - icc < 1e-6)
        fail(errc::config, context + ": icc ambiguously close to the perfect band");
    for (double cut : {cfg.reliability_moderate, cfg.reliability_good,
                       cfg.reliability_excellent})
        if (std::abs(icc - cut) < 5e-3)
            fail(errc::config, context + ": icc " + io::format_double(icc) +
                                   " within 5e-3 of cutpoint " + io::format_double(cut));
}

void guard_nmae_margin(double nmae, const ThresholdConfig& cfg, const std::string& context) {
    for (double cut : {cfg.nmae_near_ideal, cfg.nmae_moderate, cfg.nmae_low})
        if (std::abs(nmae - cut) < 3e-3)
            fail(errc::config, context + ": nmae " + io::format_double(nmae) +
                                   " within 3e-3 of cutpoint " + io::format_double(cut));
}

void guard_kappa_margin(double kappa, const ThresholdConfig& cfg, const std::string& context) {
    for (double cut : {cfg.kappa_near_ideal, cfg.kappa_moderate, cfg.kappa_low})
        if (std::abs(kappa - cut) < 5e-3)
            fail(errc::config, context + ": kappa " + io::format_double(kappa) +
                                   " within 5e-3 of cutpoint " + io::format_double(cut));
}

TruthCell derive_truth(const ReplicateMatrix& matrix, const ThresholdConfig& cfg,
                       IccMode mode) {
    TruthCell truth;
    truth.prevalence = truth_prevalence(matrix);
    truth.n_complete = static_cast<int>(matrix.n_complete());
    for (const auto& entry : matrix.grid) {
        switch (entry.status) {
            case CellStatus::valid: ++truth.n_valid; break;
            case CellStatus::constraint_violation: ++truth.n_violation; break;
            case CellStatus::not_calculated: ++truth.n_not_calculated; break;
        }
    }

    if (!truth.prevalence) {
        truth.decision = "not_calculated";
        return truth;
    }
    if (truth.n_complete < cfg.min_segments) {
        truth.decision = "screened_insufficient_n";
        return truth;
    }
    if (*truth.prevalence >= cfg.prevalence_cutoff) {
        truth.decision = "screened_low_variance";
        return truth;
    }
    truth.decision = "kept";
    if (matrix.spec.kind == MetricKind::categorical) {
        truth.kappa_only = true;
        return truth;
    }

    const auto rows = matrix.complete_numeric_rows();
    truth.icc31_within = oracle_icc_bruteforce(rows, IccMode::within);
    truth.icc3k_within = oracle_icc3k_bruteforce(rows, IccMode::within);
    truth.icc31_residual = oracle_icc_bruteforce(rows, IccMode::residual);
    truth.icc3k_residual = oracle_icc3k_bruteforce(rows, IccMode::residual);
    const double icc31 =
        mode == IccMode::within ? *truth.icc31_within : *truth.icc31_residual;
    const double icc3k =
        mode == IccMode::within ? *truth.icc3k_within : *truth.icc3k_residual;
    const std::string context =
        matrix.model_id + "/" + matrix.spec.metric_id;
    guard_icc_margin(icc31, cfg, context + " icc31");
    guard_icc_margin(icc3k, cfg, context + " icc3k");
    truth.class31 = classify_reliability(icc31, cfg);
    truth.class3k = classify_reliability(icc3k, cfg);
    return truth;
}

// Shared complete segment rows between two matrices with identical
// segment lists.
std::vector<size_t> truth_shared_rows(const ReplicateMatrix& a,
                                      const ReplicateMatrix& b) {
    std::vector<size_t> rows;
    for (size_t s = 0; s < a.n_segments(); ++s)
        if (a.complete[s] && b.complete[s]) rows.push_back(s);
    return rows;
}

struct TruthAgreement {
    std::string stat_kind;
    double median = 0;
    double trimmed_mean = 0;
    std::optional<double> range;
    std::optional<double> nmae;
    AgreementClass cls = AgreementClass::non_acceptable;
};

double truth_median(std::vector<double> xs) {
    std::sort(xs.begin(), xs.end());
    const size_t n = xs.size();
    return n % 2 == 1 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

double truth_trimmed_mean(std::vector<double> xs, int trim_count) {
    std::sort(xs.begin(), xs.end());
    size_t trim = size_t(std::max(trim_count, 0));
    if (2 * trim >= xs.size()) trim = (xs.size() - 1) / 2;
    double total = 0;
    for (size_t i = trim; i < xs.size() - trim; ++i) total += xs[i];
    return total / double(xs.size() - 2 * trim);
}

TruthAgreement derive_agreement_truth(const ReplicateMatrix& a,
                                      const ReplicateMatrix& b,
                                      const ThresholdConfig& cfg) {
    TruthAgreement truth;
    const auto rows = truth_shared_rows(a, b);
    const size_t k = a.k();
    if (rows.size() < size_t(cfg.min_segments))
        fail(errc::internal, "fixture: eligible metric lost its shared segments");

    if (a.spec.kind == MetricKind::continuous) {
        truth.stat_kind = "mae";
        std::vector<double> entries;
        for (size_t i = 0; i < k; ++i) {
            for (size_t j = 0; j < k; ++j) {
                double total = 0;
                for (size_t s : rows)
                    total += std::abs(a.at(s, i).value->as_number() -
                                      b.at(s, j).value->as_number());
                entries.push_back(total / double(rows.size()));
            }
        }
        truth.median = truth_median(entries);
        truth.trimmed_mean = truth_trimmed_mean(entries, cfg.trim_count);
        double lo = 0, hi = 0;
        bool first = true;
        auto scan = [&](const ReplicateMatrix& m) {
            for (const auto& entry : m.grid) {
                if (entry.status != CellStatus::valid || !entry.value) continue;
                const double x = entry.value->as_number();
                if (first) { lo = hi = x; first = false; }
                lo = std::min(lo, x);
                hi = std::max(hi, x);
            }
        };
        scan(a);
        scan(b);
        truth.range = hi - lo;
        truth.nmae = truth.median / *truth.range;
        guard_nmae_margin(*truth.nmae, cfg,
                          a.spec.metric_id + " " + a.model_id + "|" + b.model_id);
        truth.cls = classify_agreement_continuous(*truth.nmae, cfg);
    } else {
        truth.stat_kind = "kappa";
        std::vector<double> entries;
        for (size_t i = 0; i < k; ++i) {
            for (size_t j = 0; j < k; ++j) {
                std::map<std::string, std::pair<size_t, size_t>> marginals;
                size_t agree = 0;
                for (size_t s : rows) {
                    const std::string& la = a.at(s, i).value->as_label();
                    const std::string& lb = b.at(s, j).value->as_label();
                    ++marginals[la].first;
                    ++marginals[lb].second;
                    agree += la == lb;
                }
                if (marginals.size() == 1) continue;  // undefined entry
                const double n = double(rows.size());
                double p_e = 0;
                for (const auto& [label, counts] : marginals)
                    p_e += (counts.first / n) * (counts.second / n);
                entries.push_back((agree / n - p_e) / (1.0 - p_e));
            }
        }
        if (entries.empty())
            fail(errc::internal, "fixture: eligible kappa metric fully undefined");
        truth.median = truth_median(entries);
        truth.trimmed_mean = truth_trimmed_mean(entries, cfg.trim_count);
        guard_kappa_margin(truth.median, cfg,
                           a.spec.metric_id + " " + a.model_id + "|" + b.model_id);
        truth.cls = classify_agreement_categorical(truth.median, cfg);
    }
    return truth;
}

}  // namespace

StudyFixture gen_study_fixture(const FixtureManifest& manifest,
                               const ThresholdConfig& cfg, IccMode mode) {
    manifest.validate();
    cfg.validate();

    const size_t n_models = manifest.models.size();
    const auto segments = default_segments(manifest.n_segments);

    StudyFixture fixture;
    for (const auto& plan : manifest.metrics) fixture.registry.add(plan.spec);

    // Post-validation matrices per (metric, model).
    std::vector<std::vector<std::optional<ReplicateMatrix>>> built(manifest.metrics.size());
    for (size_t t = 0; t < manifest.metrics.size(); ++t) {
        const MetricPlan& plan = manifest.metrics[t];
        built[t].resize(n_models);
        for (size_t m = 0; m < n_models; ++m) {
            switch (plan.kind) {
                case MetricPlan::Kind::trend:
                    if (plan.icc31_target[m])
                        built[t][m] = build_trend(manifest, plan, m, segments);
                    break;
                case MetricPlan::Kind::constant:
                    if (plan.present[m])
                        built[t][m] = build_constant(manifest, plan, m, segments);
                    break;
                case MetricPlan::Kind::label_pattern:
                    if (plan.present[m])
                        built[t][m] = build_label_pattern(manifest, plan, m, segments);
                    break;
            }
        }
    }

    // Ground truth per (model, metric).
    json truth;
    truth["models"] = manifest.models;
    truth["runs"] = manifest.runs;
    truth["n_segments"] = manifest.n_segments;
    truth["icc_mode"] = std::string(reliability::to_string(mode));
    truth["thresholds"] = json::parse(cfg.to_json_text());

    std::vector<std::vector<TruthCell>> cells(manifest.metrics.size());
    json metrics_truth = json::object();
    for (size_t t = 0; t < manifest.metrics.size(); ++t) {
        const MetricPlan& plan = manifest.metrics[t];
        cells[t].resize(n_models);
        json per_model = json::object();
        for (size_t m = 0; m < n_models; ++m) {
            TruthCell cell;
            if (built[t][m]) {
                cell = derive_truth(*built[t][m], cfg, mode);
            } else {
                cell.decision = "not_calculated";
            }
            json j{{"decision", cell.decision},
                   {"n_complete", cell.n_complete},
                   {"n_valid", cell.n_valid},
                   {"n_violation", cell.n_violation},
                   {"n_not_calculated", cell.n_not_calculated},
                   {"kappa_only", cell.kappa_only}};
            if (cell.prevalence) j["prevalence"] = *cell.prevalence;
            if (cell.icc31_within) {
                j["icc31_within"] = *cell.icc31_within;
                j["icc3k_within"] = *cell.icc3k_within;
                j["icc31_residual"] = *cell.icc31_residual;
                j["icc3k_residual"] = *cell.icc3k_residual;
                j["class31"] = std::string(to_string(*cell.class31));
                j["class3k"] = std::string(to_string(*cell.class3k));
            }
            per_model[manifest.models[m]] = std::move(j);
            cells[t][m] = std::move(cell);
        }
        metrics_truth[plan.spec.metric_id] = json{
            {"kind", std::string(to_string(plan.spec.kind))},
            {"metric_class", std::string(to_string(plan.spec.metric_class))},
            {"per_model", std::move(per_model)},
        };
    }
    truth["metrics"] = std::move(metrics_truth);

    // RT-consistent and eligibility sets (three-model studies only).
    std::vector<std::string> rt31, rt3k;
    if (n_models == 3) {
        for (size_t t = 0; t < manifest.metrics.size(); ++t) {
            bool all31 = true, all3k = true;
            for (size_t m = 0; m < n_models; ++m) {
                const TruthCell& cell = cells[t][m];
                const bool analyzable = cell.decision == "kept" && !cell.kappa_only;
                all31 = all31 && analyzable &&
                        collapse_perfect(*cell.class31) == ReliabilityClass::excellent;
                all3k = all3k && analyzable &&
                        collapse_perfect(*cell.class3k) == ReliabilityClass::excellent;
            }
            if (all31) rt31.push_back(manifest.metrics[t].spec.metric_id);
            if (all3k) rt3k.push_back(manifest.metrics[t].spec.metric_id);
        }
        std::sort(rt31.begin(), rt31.end());
        std::sort(rt3k.begin(), rt3k.end());
    }
    truth["rt_consistent_icc31"] = rt31;
    truth["rt_consistent_icc3k"] = rt3k;

    std::vector<std::string> eligible31;
    for (const auto& id : rt31)
        if (std::binary_search(rt3k.begin(), rt3k.end(), id)) eligible31.push_back(id);
    truth["eligible_icc31"] = eligible31;
    truth["eligible_icc3k"] = rt3k;

    if (n_models == 3) {
        std::map<std::string, size_t> metric_pos;
        for (size_t t = 0; t < manifest.metrics.size(); ++t)
            metric_pos[manifest.metrics[t].spec.metric_id] = t;

        json agreement = json::object();
        const std::array<std::pair<size_t, size_t>, 3> pairs{{{0, 1}, {0, 2}, {1, 2}}};
        for (const auto& [track, set] :
             {std::pair<std::string, const std::vector<std::string>*>{"icc31", &eligible31},
              {"icc3k", &rt3k}}) {
            json track_json = json::object();
            for (const auto& [ia, ib] : pairs) {
                const std::string pair_label =
                    manifest.models[ia] + "|" + manifest.models[ib];
                json pair_json = json::object();
                for (const auto& metric_id : *set) {
                    const size_t t = metric_pos.at(metric_id);
                    const TruthAgreement ta = derive_agreement_truth(
                        *built[t][ia], *built[t][ib], cfg);
                    json j{{"stat_kind", ta.stat_kind},
                           {"median", ta.median},
                           {"trimmed_mean", ta.trimmed_mean},
                           {"class", std::string(to_string(ta.cls))}};
                    if (ta.range) j["range"] = *ta.range;
                    if (ta.nmae) j["nmae"] = *ta.nmae;
                    pair_json[metric_id] = std::move(j);
                }
                track_json[pair_label] = std::move(pair_json);
            }
            agreement[track] = std::move(track_json);
        }
        truth["agreement"] = std::move(agreement);
    }

    // Assemble the dataset with pre-validation statuses: injected
    // violations are written as plain valid cells carrying the bad value,
    // which the pipeline's validator re-marks.
    ingest::Dataset& ds = fixture.dataset;
    ds.models = manifest.models;
    ds.runs = manifest.runs;
    ds.segments = segments;
    ds.registry = fixture.registry;
    ds.has_registry = true;
    for (size_t m = 0; m < n_models; ++m) {
        for (size_t t = 0; t < manifest.metrics.size(); ++t) {
            if (!built[t][m]) continue;
            const ReplicateMatrix& matrix = *built[t][m];
            for (size_t s = 0; s < matrix.n_segments(); ++s) {
                for (size_t r = 0; r < matrix.k(); ++r) {
                    const auto& entry = matrix.at(s, r);
                    MeasurementCell cell;
                    cell.model_id = manifest.models[m];
                    cell.run_id = manifest.runs[r];
                    cell.segment_id = segments[s];
                    cell.metric_id = matrix.spec.metric_id;
                    switch (entry.status) {
                        case CellStatus::valid:
                            cell.status = CellStatus::valid;
                            cell.value = entry.value;
                            break;
                        case CellStatus::constraint_violation:
                            cell.status = CellStatus::valid;  // validator flags it
                            cell.value = entry.value;
                            break;
                        case CellStatus::not_calculated:
                            cell.status = CellStatus::not_calculated;
                            break;
                    }
                    ds.cells.push_back(std::move(cell));
                }
            }
        }
    }
    for (size_t t = 0; t < manifest.metrics.size(); ++t) {
        bool present_somewhere = false;
        for (size_t m = 0; m < n_models; ++m)
            present_somewhere = present_somewhere || built[t][m].has_value();
        if (present_somewhere)
            ds.metrics.push_back(manifest.metrics[t].spec.metric_id);
    }
    ds.rebuild_index();

    fixture.ground_truth_json = truth.dump(2);
    return fixture;
}

void write_fixture(const StudyFixture& fixture, const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    ingest::write_long_table(fixture.dataset, out_dir / "data.csv",
                             ingest::TableFormat::csv);
    std::ofstream registry(out_dir / "registry.json", std::ios::binary);
    if (!registry) fail(errc::config, "cannot write registry.json");
    registry << fixture.registry.to_json_text() << '\n';
    std::ofstream truth(out_dir / "truth.json", std::ios::binary);
    if (!truth) fail(errc::config, "cannot write truth.json");
    truth << fixture.ground_truth_json << '\n';
}

// ---- canned manifests -------------------------------------------------------

namespace {

struct ManifestBuilder {
    FixtureManifest manifest;
    int counter = 0;

    explicit ManifestBuilder(int n_segments, uint64_t seed) {
        manifest.models = {"model_alpha", "model_beta", "model_gamma"};
        manifest.runs = {"A", "B", "C", "D"};
        manifest.n_segments = n_segments;
        manifest.seed = seed;
    }

    MetricClass next_class() {
        return static_cast<MetricClass>(counter % kMetricClassCount);
    }

    std::string next_id(const std::string& stem) {
        ++counter;
        std::string n = std::to_string(counter);
        if (n.size() < 3) n.insert(0, 3 - n.size(), '0');
        return stem + "_" + n;
    }

    MetricPlan base_plan(const std::string& stem, MetricKind kind) {
        MetricPlan plan;
        plan.spec.metric_class = next_class();
        plan.spec.metric_id = next_id(stem);
        plan.spec.pipeline = "pipe_" + std::string(to_string(plan.spec.metric_class));
        plan.spec.kind = kind;
        return plan;
    }

    void trend(const std::string& stem,
               std::vector<std::optional<double>> targets,
               std::vector<double> offsets = {0, 0, 0},
               std::vector<int> violations = {0, 0, 0},
               std::vector<int> missing = {0, 0, 0},
               std::optional<double> range_min = std::nullopt,
               std::optional<double> range_max = std::nullopt) {
        MetricPlan plan = base_plan(stem, MetricKind::continuous);
        plan.kind = MetricPlan::Kind::trend;
        plan.icc31_target = std::move(targets);
        plan.offset = std::move(offsets);
        plan.violations = std::move(violations);
        plan.missing = std::move(missing);
        plan.spec.range_min = range_min;
        plan.spec.range_max = range_max;
        manifest.metrics.push_back(std::move(plan));
    }

    void binary(const std::string& stem, std::vector<int> disagree,
                std::vector<int> run_flips = {0, 0, 0}) {
        MetricPlan plan = base_plan(stem, MetricKind::binary);
        plan.kind = MetricPlan::Kind::label_pattern;
        plan.spec.allowed_labels = {"no", "yes"};
        plan.disagree_with_first = std::move(disagree);
        plan.run_flips = std::move(run_flips);
        plan.present = {true, true, true};
        manifest.metrics.push_back(std::move(plan));
    }

    void categorical(const std::string& stem, std::vector<std::string> labels) {
        MetricPlan plan = base_plan(stem, MetricKind::categorical);
        plan.kind = MetricPlan::Kind::label_pattern;
        plan.spec.allowed_labels = std::move(labels);
        plan.disagree_with_first = {0, 0, 0};
        plan.run_flips = {0, 0, 0};
        plan.present = {true, true, true};
        manifest.metrics.push_back(std::move(plan));
    }

    void constant_number(const std::string& stem, double value) {
        MetricPlan plan = base_plan(stem, MetricKind::continuous);
        plan.kind = MetricPlan::Kind::constant;
        plan.constant_value = value;
        plan.present = {true, true, true};
        manifest.metrics.push_back(std::move(plan));
    }

    void constant_label(const std::string& stem, std::string label) {
        MetricPlan plan = base_plan(stem, MetricKind::binary);
        plan.kind = MetricPlan::Kind::constant;
        plan.spec.allowed_labels = {label, label + "_alt"};
        plan.constant_label = label;
        plan.present = {true, true, true};
        manifest.metrics.push_back(std::move(plan));
    }
};

constexpr double kExc = 0.95, kGood = 0.8, kMod = 0.6, kPoor = 0.3, kPerf = 1.0;

}  // namespace

FixtureManifest acceptance_manifest(uint64_t seed) {
    ManifestBuilder b(552, seed);

    for (int i = 0; i < 8; ++i)
        b.trend("exc", {kExc, kExc, kExc}, {0.0, 0.02, 0.04});

    b.trend("agree", {kPerf, kPerf, kPerf}, {0.0, 0.03, 0.06});
    b.trend("agree", {kPerf, kPerf, kPerf}, {0.0, 0.0, 0.0});
    b.trend("agree", {kPerf, kPerf, kPerf}, {0.0, 0.16, 0.32});
    b.trend("agree", {kPerf, kPerf, kPerf}, {0.0, 0.30, 0.60});
    b.trend("agree", {kPerf, kPerf, kPerf}, {0.0, 0.90, 1.80});
    b.trend("agree", {kPerf, kPerf, kPerf}, {0.0, 0.15, 0.30});

    b.binary("bink", {0, 6, 12});
    b.binary("bink", {0, 60, 120});
    b.binary("bink", {0, 0, 0});
    b.binary("bink", {0, 130, 260});

    for (int i = 0; i < 6; ++i) b.trend("good", {kGood, kGood, kGood});
    for (int i = 0; i < 5; ++i) b.trend("mixed", {kExc, kExc, kMod});
    for (int i = 0; i < 5; ++i) b.trend("modr", {kMod, kMod, kMod});
    for (int i = 0; i < 4; ++i) b.trend("poor", {kPoor, kPoor, kPoor});
    for (int i = 0; i < 3; ++i) b.trend("vary", {kPoor, kMod, kGood});

    b.binary("binf", {0, 0, 0}, {130, 130, 130});
    b.binary("binf", {0, 0, 0}, {260, 260, 260});

    b.constant_number("const", 2.5);
    b.constant_label("const", "no");

    b.trend("gap", {std::nullopt, kExc, kExc});
    b.trend("gap", {kExc, std::nullopt, kExc});

    b.trend("viol", {kExc, kExc, kExc}, {0.0, 0.0, 0.0}, {3, 0, 0}, {0, 0, 0},
            -5.0, 5.0);
    b.trend("miss", {kGood, kGood, kGood}, {0.0, 0.0, 0.0}, {0, 0, 0}, {0, 4, 0});

    b.categorical("cat", {"low", "mid", "high"});

    b.manifest.validate();
    return b.manifest;
}

FixtureManifest paper_scale_manifest(uint64_t seed) {
    ManifestBuilder b(552, seed);

    for (int i = 0; i < 20; ++i)
        b.trend("exc", {kExc, kExc, kExc}, {0.0, 0.02, 0.04});
    for (int i = 0; i < 5; ++i)
        b.trend("perf", {kPerf, kPerf, kPerf}, {0.0, 0.03, 0.06});
    for (int i = 0; i < 6; ++i) b.binary("bink", {0, 6, 12});

    for (int i = 0; i < 58; ++i) b.trend("good", {kGood, kGood, kGood});
    for (int i = 0; i < 35; ++i) b.trend("mixed", {kExc, kExc, kMod});
    for (int i = 0; i < 30; ++i) b.trend("modr", {kMod, kMod, kMod});
    for (int i = 0; i < 24; ++i) b.trend("poor", {kPoor, kPoor, kPoor});
    for (int i = 0; i < 12; ++i) b.trend("vary", {kPoor, kMod, kGood});
    for (int i = 0; i < 10; ++i) b.constant_number("const", 1.0);

    for (int i = 0; i < 4; ++i) b.trend("gap", {std::nullopt, kExc, kExc});
    for (int i = 0; i < 2; ++i) b.trend("gap", {kExc, std::nullopt, kExc});
    for (int i = 0; i < 2; ++i) b.trend("gap", {kExc, kExc, std::nullopt});

    for (int i = 0; i < 5; ++i) b.binary("binf", {0, 0, 0}, {260, 260, 260});

    b.manifest.validate();
    if (b.manifest.metrics.size() != 213)
        fail(errc::internal, "paper-scale manifest must hold 213 metrics");
    return b.manifest;
}

}  // namespace retest::sim
