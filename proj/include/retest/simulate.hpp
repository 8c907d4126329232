#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "retest/core.hpp"
#include "retest/ingest.hpp"
#include "retest/reliability.hpp"

namespace retest::sim {

enum class NoiseKind { gaussian, uniform, heavy_tailed };
NoiseKind noise_kind_from_string(std::string_view);

// Generative model behind the ICC estimand: x_{s,r} = mu + b_s + e_{s,r}
// with Var(b) = sigma_b_sq and Var(e) = sigma_e_sq.
struct VarianceSpec {
    double sigma_b_sq = 1.0;
    double sigma_e_sq = 1.0;
    double mu = 0.0;
    int n_segments = 0;
    int k = 0;
    uint64_t seed = 0;
    NoiseKind noise = NoiseKind::gaussian;
    std::string model_id = "sim_model";
    std::string metric_id = "sim_metric";

    double theoretical_icc31() const { return sigma_b_sq / (sigma_b_sq + sigma_e_sq); }
    void validate() const;
};

ingest::ReplicateMatrix gen_continuous(const VarianceSpec&);

// Per segment a latent label is drawn from base_distribution; each
// replicate keeps it with probability 1 - flip_probability, otherwise it
// is replaced by a uniform draw over the whole label set (so
// flip_probability = 1 yields pure label noise).
ingest::ReplicateMatrix gen_categorical(
    int n_segments, int k,
    const std::vector<std::pair<std::string, double>>& base_distribution,
    double flip_probability, uint64_t seed, std::string model_id = "sim_model",
    std::string metric_id = "sim_metric");

// Brute-force re-derivation of the replicate-grid mean squares by plain
// nested loops; kept free of any code shared with the reliability engine
// so it can serve as that engine's oracle.
struct OracleMeanSquares {
    double ms_b = 0, ms_w = 0, ms_e = 0, ms_r = 0;
};

OracleMeanSquares oracle_mean_squares(const std::vector<std::vector<double>>& grid);

// ICC(3,1) by the oracle path.
double oracle_icc_bruteforce(const std::vector<std::vector<double>>& grid,
                             reliability::IccMode mode);

// ICC(3,k) by the oracle path.
double oracle_icc3k_bruteforce(const std::vector<std::vector<double>>& grid,
                               reliability::IccMode mode);

// ---- engineered study fixtures -------------------------------------------

// Per-metric generator plan. Continuous "trend" metrics hit an exact
// target ICC through a deterministic segment trend plus a patterned
// zero-mean replicate disturbance; binary metrics use designed label
// patterns. Ground-truth labels are derived from the constructed data by
// the oracle path, never by the engine under test.
struct MetricPlan {
    MetricSpec spec;
    enum class Kind { trend, constant, label_pattern } kind = Kind::trend;

    // trend
    std::vector<std::optional<double>> icc31_target;  // per model; empty slot = absent
    std::vector<double> offset;                       // per model location shift
    double mu = 0.0;
    double scale = 1.0;
    std::vector<int> violations;  // out-of-range cells injected per model
    std::vector<int> missing;     // not_calculated cells injected per model

    // constant
    std::optional<double> constant_value;
    std::optional<std::string> constant_label;
    std::vector<bool> present;  // per model (constant / label_pattern)

    // label_pattern (binary or categorical)
    std::vector<int> disagree_with_first;  // latent flips vs model 0
    std::vector<int> run_flips;            // shown-label flips per model
};

struct FixtureManifest {
    std::vector<std::string> models;
    std::vector<std::string> runs;
    int n_segments = 0;
    uint64_t seed = 0;
    std::vector<MetricPlan> metrics;

    static FixtureManifest from_json_text(std::string_view);
    static FixtureManifest from_json_file(const std::filesystem::path&);
    std::string to_json_text() const;
    void validate() const;
};

struct StudyFixture {
    ingest::Dataset dataset;  // pre-validation statuses, as a loader would see
    MetricRegistry registry;
    std::string ground_truth_json;
};

// Builds the dataset plus a ground-truth sidecar holding the screening
// decision, both ICCs and classes per (model, metric), the RT-consistent
// and eligibility sets, and per-pair agreement statistics for eligible
// metrics. errc::config when a constructed statistic lands too close to a
// classification boundary.
StudyFixture gen_study_fixture(const FixtureManifest&,
                               const ThresholdConfig& cfg = {},
                               reliability::IccMode mode = reliability::IccMode::within);

void write_fixture(const StudyFixture&, const std::filesystem::path& out_dir);

// Canned manifests used by the test suites and the CLI presets.
FixtureManifest acceptance_manifest(uint64_t seed = 7);   // 3 x 4 x 552 x 50
FixtureManifest paper_scale_manifest(uint64_t seed = 11); // 3 x 4 x 552 x 213

}  // namespace retest::sim
