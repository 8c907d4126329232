#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include <json.hpp>

#include "retest/reliability.hpp"
#include "retest/simulate.hpp"

using namespace retest;
using namespace retest::sim;
using reliability::IccMode;

TEST_CASE("variance spec sanity") {
    VarianceSpec spec;
    spec.sigma_b_sq = 3;
    spec.sigma_e_sq = 1;
    spec.n_segments = 10;
    spec.k = 2;
    CHECK(spec.theoretical_icc31() == doctest::Approx(0.75));
    spec.sigma_b_sq = 0;
    CHECK(spec.theoretical_icc31() == doctest::Approx(0.0));

    VarianceSpec bad = spec;
    bad.sigma_e_sq = 0;
    CHECK_THROWS_AS(bad.validate(), error);
    bad = spec;
    bad.n_segments = 1;
    CHECK_THROWS_AS(bad.validate(), error);
}

TEST_CASE("continuous generation is seed-deterministic") {
    VarianceSpec spec;
    spec.sigma_b_sq = 2;
    spec.sigma_e_sq = 1;
    spec.n_segments = 20;
    spec.k = 3;
    spec.seed = 99;

    auto a = gen_continuous(spec);
    auto b = gen_continuous(spec);
    REQUIRE(a.grid.size() == b.grid.size());
    for (size_t i = 0; i < a.grid.size(); ++i)
        CHECK(a.grid[i].value->as_number() == b.grid[i].value->as_number());

    spec.seed = 100;
    auto c = gen_continuous(spec);
    bool any_different = false;
    for (size_t i = 0; i < a.grid.size(); ++i)
        any_different |= a.grid[i].value->as_number() != c.grid[i].value->as_number();
    CHECK(any_different);
}

TEST_CASE("single-run estimate lands near the theoretical icc") {
    for (double target : {0.25, 0.5, 0.75, 0.9}) {
        VarianceSpec spec;
        spec.sigma_b_sq = target / (1.0 - target);
        spec.sigma_e_sq = 1.0;
        spec.n_segments = 500;
        spec.k = 4;
        spec.seed = 4242;
        auto matrix = gen_continuous(spec);
        const double estimate =
            oracle_icc_bruteforce(matrix.complete_numeric_rows(), IccMode::within);
        CHECK(std::abs(estimate - target) <= 0.05);
    }
}

TEST_CASE("noise kinds preserve the variance ratio") {
    for (NoiseKind noise : {NoiseKind::gaussian, NoiseKind::uniform,
                            NoiseKind::heavy_tailed}) {
        VarianceSpec spec;
        spec.sigma_b_sq = 3.0;
        spec.sigma_e_sq = 1.0;  // theoretical icc31 = 0.75
        spec.n_segments = 2000;
        spec.k = 4;
        spec.seed = 7;
        spec.noise = noise;
        auto matrix = gen_continuous(spec);
        const double estimate =
            oracle_icc_bruteforce(matrix.complete_numeric_rows(), IccMode::within);
        CHECK(std::abs(estimate - 0.75) <= 0.05);
    }
}

TEST_CASE("categorical generation: zero flips mean perfect agreement") {
    auto matrix = gen_categorical(50, 4, {{"0", 0.5}, {"1", 0.5}}, 0.0, 5);
    for (size_t s = 0; s < matrix.n_segments(); ++s) {
        const std::string& first = matrix.at(s, 0).value->as_label();
        for (size_t r = 1; r < matrix.k(); ++r)
            CHECK(matrix.at(s, r).value->as_label() == first);
    }
    // 0/1 encoding gives a perfectly repeatable grid.
    const double icc =
        oracle_icc_bruteforce(matrix.complete_numeric_rows(), IccMode::within);
    CHECK(icc == doctest::Approx(1.0));
}

TEST_CASE("categorical generation: full noise yields chance-level kappa") {
    auto matrix = gen_categorical(4000, 2, {{"0", 0.5}, {"1", 0.5}}, 1.0, 11);
    // Kappa between the two runs, computed directly from counts.
    size_t agree = 0, a1 = 0, b1 = 0;
    const size_t S = matrix.n_segments();
    for (size_t s = 0; s < S; ++s) {
        const std::string& a = matrix.at(s, 0).value->as_label();
        const std::string& b = matrix.at(s, 1).value->as_label();
        agree += a == b;
        a1 += a == "1";
        b1 += b == "1";
    }
    const double p_o = double(agree) / S;
    const double pa = double(a1) / S, pb = double(b1) / S;
    const double p_e = pa * pb + (1 - pa) * (1 - pb);
    const double kappa = (p_o - p_e) / (1 - p_e);
    CHECK(std::abs(kappa) < 0.05);
}

TEST_CASE("skewed base distribution trips the screening gate most of the time") {
    ThresholdConfig cfg;
    int flagged = 0;
    const int trials = 200;
    for (int t = 0; t < trials; ++t) {
        auto matrix = gen_categorical(100, 4, {{"0", 0.99}, {"1", 0.01}}, 0.0,
                                      1000 + uint64_t(t));
        // Prevalence over all cells, counted directly.
        size_t zeros = 0;
        for (const auto& e : matrix.grid) zeros += e.value->as_label() == "0";
        const double prevalence =
            double(std::max(zeros, matrix.grid.size() - zeros)) / matrix.grid.size();
        flagged += prevalence >= cfg.prevalence_cutoff;
    }
    CHECK(flagged >= int(trials * 0.6));
}

TEST_CASE("fixture manifest json round trip") {
    FixtureManifest manifest = acceptance_manifest(123);
    const std::string text = manifest.to_json_text();
    FixtureManifest parsed = FixtureManifest::from_json_text(text);
    CHECK(parsed.to_json_text() == text);
    CHECK(parsed.models == manifest.models);
    CHECK(parsed.metrics.size() == manifest.metrics.size());
    CHECK(parsed.n_segments == 552);

    CHECK_THROWS_AS(FixtureManifest::from_json_text("[]"), error);
    CHECK_THROWS_AS(FixtureManifest::from_json_text(R"({"models": []})"), error);
}

TEST_CASE("fixture generation honours engineered reliability classes") {
    FixtureManifest manifest;
    manifest.models = {"a", "b", "c"};
    manifest.runs = {"r1", "r2", "r3", "r4"};
    manifest.n_segments = 60;
    auto trend = [&](const std::string& id, std::vector<std::optional<double>> targets) {
        MetricPlan plan;
        plan.spec.metric_id = id;
        plan.spec.pipeline = "pipe";
        plan.spec.metric_class = MetricClass::engagement;
        plan.spec.kind = MetricKind::continuous;
        plan.kind = MetricPlan::Kind::trend;
        plan.icc31_target = std::move(targets);
        plan.offset = {0, 0, 0};
        plan.violations = {0, 0, 0};
        plan.missing = {0, 0, 0};
        manifest.metrics.push_back(std::move(plan));
    };
    // Exactly seven universally excellent metrics.
    for (int i = 0; i < 7; ++i) trend("uni_" + std::to_string(i), {0.95, 0.95, 0.95});
    for (int i = 0; i < 4; ++i) trend("part_" + std::to_string(i), {0.95, 0.95, 0.6});
    trend("gap", {std::nullopt, 0.95, 0.95});

    StudyFixture fixture = gen_study_fixture(manifest);
    auto truth = nlohmann::json::parse(fixture.ground_truth_json);
    CHECK(truth.at("rt_consistent_icc31").size() == 7);
    CHECK(fixture.dataset.cells.size() == (12ull * 3 - 1) * 60 * 4);
    CHECK(fixture.registry.size() == 12);

    // Targets are recovered exactly by the oracle on the built data.
    for (int i = 0; i < 7; ++i) {
        const auto& cell =
            truth.at("metrics").at("uni_" + std::to_string(i)).at("per_model").at("a");
        CHECK(cell.at("decision") == "kept");
        CHECK(std::abs(cell.at("icc31_within").get<double>() - 0.95) < 1e-9);
        CHECK(cell.at("class31") == "excellent");
    }
    const auto& gap = truth.at("metrics").at("gap").at("per_model").at("a");
    CHECK(gap.at("decision") == "not_calculated");
}

TEST_CASE("fixture generation rejects boundary-hugging targets") {
    FixtureManifest manifest;
    manifest.models = {"a", "b", "c"};
    manifest.runs = {"r1", "r2"};
    manifest.n_segments = 60;
    MetricPlan plan;
    plan.spec.metric_id = "edge";
    plan.spec.pipeline = "pipe";
    plan.spec.metric_class = MetricClass::safety;
    plan.spec.kind = MetricKind::continuous;
    plan.kind = MetricPlan::Kind::trend;
    plan.icc31_target = {0.9002, 0.9002, 0.9002};  // glued to the excellent cutpoint
    plan.offset = {0, 0, 0};
    plan.violations = {0, 0, 0};
    plan.missing = {0, 0, 0};
    manifest.metrics.push_back(plan);
    CHECK_THROWS_AS(gen_study_fixture(manifest), error);
}

TEST_CASE("fixture injections show up in the ground truth") {
    FixtureManifest manifest;
    manifest.models = {"a", "b", "c"};
    manifest.runs = {"r1", "r2", "r3", "r4"};
    manifest.n_segments = 60;
    MetricPlan plan;
    plan.spec.metric_id = "injected";
    plan.spec.pipeline = "pipe";
    plan.spec.metric_class = MetricClass::adaptive;
    plan.spec.kind = MetricKind::continuous;
    plan.spec.range_min = -5.0;
    plan.spec.range_max = 5.0;
    plan.kind = MetricPlan::Kind::trend;
    plan.icc31_target = {0.95, 0.95, 0.95};
    plan.offset = {0, 0, 0};
    plan.violations = {3, 0, 0};
    plan.missing = {0, 4, 0};
    manifest.metrics.push_back(plan);

    StudyFixture fixture = gen_study_fixture(manifest);
    auto truth = nlohmann::json::parse(fixture.ground_truth_json);
    const auto& per_model = truth.at("metrics").at("injected").at("per_model");
    CHECK(per_model.at("a").at("n_violation") == 3);
    CHECK(per_model.at("a").at("n_complete") == 57);
    CHECK(per_model.at("b").at("n_not_calculated") == 4);
    CHECK(per_model.at("b").at("n_complete") == 56);
    CHECK(per_model.at("c").at("n_violation") == 0);

    // The emitted dataset carries violations as plain valid cells with
    // out-of-range values; only the validator may re-mark them.
    int out_of_range_valid = 0;
    for (const auto& cell : fixture.dataset.cells)
        if (cell.status == CellStatus::valid && cell.value &&
            cell.value->as_number() > 5.0)
            ++out_of_range_valid;
    CHECK(out_of_range_valid == 3);
}

TEST_CASE("binary run flips lower the icc below perfect") {
    FixtureManifest manifest;
    manifest.models = {"a", "b", "c"};
    manifest.runs = {"r1", "r2", "r3", "r4"};
    manifest.n_segments = 552;
    MetricPlan plan;
    plan.spec.metric_id = "flips";
    plan.spec.pipeline = "pipe";
    plan.spec.metric_class = MetricClass::intention;
    plan.spec.kind = MetricKind::binary;
    plan.spec.allowed_labels = {"no", "yes"};
    plan.kind = MetricPlan::Kind::label_pattern;
    plan.disagree_with_first = {0, 0, 0};
    plan.run_flips = {130, 130, 130};
    plan.present = {true, true, true};
    manifest.metrics.push_back(plan);

    StudyFixture fixture = gen_study_fixture(manifest);
    auto truth = nlohmann::json::parse(fixture.ground_truth_json);
    const double icc = truth.at("metrics").at("flips").at("per_model").at("a")
                           .at("icc31_within").get<double>();
    CHECK(icc < 1.0 - 1e-6);
    CHECK(icc > 0.75);
    CHECK(truth.at("metrics").at("flips").at("per_model").at("a").at("class31") ==
          "good");
}

TEST_CASE("empty manifest produces an empty dataset") {
    FixtureManifest manifest;
    manifest.models = {"a", "b", "c"};
    manifest.runs = {"r1", "r2"};
    manifest.n_segments = 10;
    StudyFixture fixture = gen_study_fixture(manifest);
    CHECK(fixture.dataset.cells.empty());
    CHECK(fixture.registry.empty());
}

TEST_CASE("canned manifests have the documented shapes") {
    FixtureManifest acceptance = acceptance_manifest();
    CHECK(acceptance.models.size() == 3);
    CHECK(acceptance.runs.size() == 4);
    CHECK(acceptance.n_segments == 552);
    CHECK(acceptance.metrics.size() == 50);

    FixtureManifest paper = paper_scale_manifest();
    CHECK(paper.metrics.size() == 213);
    std::set<MetricClass> classes;
    for (const auto& plan : paper.metrics) classes.insert(plan.spec.metric_class);
    CHECK(classes.size() == size_t(kMetricClassCount));
}

TEST_CASE("oracle rejects degenerate grids like the engine") {
    std::vector<std::vector<double>> constant{{2, 2}, {2, 2}};
    CHECK_THROWS_AS(oracle_icc_bruteforce(constant, IccMode::within), error);
    CHECK_THROWS_AS(oracle_icc3k_bruteforce(constant, IccMode::within), error);
    CHECK_THROWS_AS(oracle_mean_squares({{1, 2}}), error);
}
