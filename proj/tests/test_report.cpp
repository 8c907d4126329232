#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "retest/report.hpp"
#include "retest/simulate.hpp"

using namespace retest;
using namespace retest::report;
namespace fs = std::filesystem;

namespace {

fs::path test_dir() {
    static fs::path dir = [] {
        fs::path d = fs::temp_directory_path() / "retest_report_tests";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::map<std::string, std::string> read_dir(const fs::path& dir) {
    std::map<std::string, std::string> files;
    for (const auto& entry : fs::recursive_directory_iterator(dir))
        if (entry.is_regular_file())
            files[fs::relative(entry.path(), dir).string()] = read_file(entry.path());
    return files;
}

// Small engineered fixture shared by the pipeline tests.
sim::FixtureManifest small_manifest() {
    sim::FixtureManifest manifest;
    manifest.models = {"alpha", "beta", "gamma"};
    manifest.runs = {"A", "B", "C", "D"};
    manifest.n_segments = 60;
    auto trend = [&](const std::string& id, MetricClass mc,
                     std::vector<std::optional<double>> targets,
                     std::vector<double> offsets = {0, 0, 0}) {
        sim::MetricPlan plan;
        plan.spec.metric_id = id;
        plan.spec.pipeline = "pipe";
        plan.spec.metric_class = mc;
        plan.spec.kind = MetricKind::continuous;
        plan.kind = sim::MetricPlan::Kind::trend;
        plan.icc31_target = std::move(targets);
        plan.offset = std::move(offsets);
        plan.violations = {0, 0, 0};
        plan.missing = {0, 0, 0};
        manifest.metrics.push_back(std::move(plan));
    };
    trend("exc_a", MetricClass::engagement, {0.95, 0.95, 0.95});
    trend("exc_b", MetricClass::adaptive, {1.0, 1.0, 1.0}, {0.0, 0.02, 0.04});
    trend("good_a", MetricClass::safety, {0.8, 0.8, 0.8});
    trend("mixed", MetricClass::intention, {0.95, 0.95, 0.6});
    trend("poor", MetricClass::cognitive_style, {0.3, 0.3, 0.3});
    trend("gap", MetricClass::personalization, {std::nullopt, 0.95, 0.95});

    sim::MetricPlan constant;
    constant.spec.metric_id = "flatline";
    constant.spec.pipeline = "pipe";
    constant.spec.metric_class = MetricClass::affect_alignment;
    constant.spec.kind = MetricKind::continuous;
    constant.kind = sim::MetricPlan::Kind::constant;
    constant.constant_value = 3.0;
    constant.present = {true, true, true};
    manifest.metrics.push_back(constant);

    sim::MetricPlan binary;
    binary.spec.metric_id = "agree_flag";
    binary.spec.pipeline = "pipe";
    binary.spec.metric_class = MetricClass::relational_synchrony;
    binary.spec.kind = MetricKind::binary;
    binary.spec.allowed_labels = {"no", "yes"};
    binary.kind = sim::MetricPlan::Kind::label_pattern;
    binary.disagree_with_first = {0, 2, 4};
    binary.run_flips = {0, 0, 0};
    binary.present = {true, true, true};
    manifest.metrics.push_back(binary);

    return manifest;
}

PipelineConfig config_for(const fs::path& fixture_dir, const fs::path& out_dir) {
    PipelineConfig cfg;
    cfg.data_path = fixture_dir / "data.csv";
    cfg.registry_path = fixture_dir / "registry.json";
    cfg.out_dir = out_dir;
    return cfg;
}

const fs::path& small_fixture_dir() {
    static fs::path dir = [] {
        fs::path d = test_dir() / "small_fixture";
        auto fixture = sim::gen_study_fixture(small_manifest());
        sim::write_fixture(fixture, d);
        return d;
    }();
    return dir;
}

}  // namespace

TEST_CASE("render table in all three formats") {
    Table table;
    table.name = "demo";
    table.columns = {"name", "count", "score"};
    table.rows.push_back({Cell::str("plain"), Cell::integer(3), Cell::num(0.125)});
    table.rows.push_back({Cell::str("comma, quoted\""), Cell::integer(-1), Cell::full(0.1)});
    table.rows.push_back({Cell::str("empty"), Cell::none(), Cell::num(2.0)});
    table.notes.push_back("a caption note");

    const std::string csv = render_table(table, Format::csv, 2);
    CHECK(csv ==
          "name,count,score\n"
          "plain,3,0.12\n"
          "\"comma, quoted\"\"\",-1,0.1\n"
          "empty,,2.00\n");

    const std::string md = render_table(table, Format::markdown, 2);
    CHECK(md.find("| name | count | score |") != std::string::npos);
    CHECK(md.find("_a caption note_") != std::string::npos);

    auto parsed = nlohmann::json::parse(render_table(table, Format::json, 2));
    CHECK(parsed.at("name") == "demo");
    CHECK(parsed.at("rows").size() == 3);
    CHECK(parsed.at("rows")[0][2].get<double>() == doctest::Approx(0.12));
    CHECK(parsed.at("notes").size() == 1);
}

TEST_CASE("rendering rounds half to even") {
    Table table;
    table.name = "rounding";
    table.columns = {"x"};
    table.rows.push_back({Cell::num(0.125)});   // -> 0.12
    table.rows.push_back({Cell::num(0.375)});   // -> 0.38
    table.rows.push_back({Cell::num(-0.125)});  // -> -0.12
    const std::string csv = render_table(table, Format::csv, 2);
    CHECK(csv == "x\n0.12\n0.38\n-0.12\n");

    Table whole;
    whole.name = "whole";
    whole.columns = {"x"};
    whole.rows.push_back({Cell::num(2.5)});  // -> 2
    whole.rows.push_back({Cell::num(3.5)});  // -> 4
    CHECK(render_table(whole, Format::csv, 0) == "x\n2\n4\n");
}

TEST_CASE("config chain validation") {
    PipelineConfig cfg;
    cfg.data_path = "x.csv";
    cfg.registry_path = "r.json";
    cfg.run_study2 = false;  // study3 left on
    CHECK_THROWS_AS(cfg.validate(), error);
    cfg.run_study3 = false;
    CHECK_NOTHROW(cfg.validate());
    cfg.run_study1 = false;
    CHECK_NOTHROW(cfg.validate());
    cfg.run_study2 = true;
    CHECK_THROWS_AS(cfg.validate(), error);
}

TEST_CASE("pipeline recovers the engineered small fixture") {
    auto cfg = config_for(small_fixture_dir(), test_dir() / "out_small");
    ReportBundle bundle = run_pipeline(cfg);

    CHECK(bundle.models == std::vector<std::string>{"alpha", "beta", "gamma"});
    CHECK(bundle.n_metric_universe == 8);

    auto truth = nlohmann::json::parse(read_file(small_fixture_dir() / "truth.json"));

    // Screening decisions match the sidecar for every (model, metric).
    for (const auto& decision : bundle.screening) {
        const auto& expected = truth.at("metrics").at(decision.metric_id)
                                   .at("per_model").at(decision.model_id);
        CHECK(std::string(screening::to_string(decision.decision)) ==
              expected.at("decision").get<std::string>());
    }

    // Reliability classes match for every analyzed metric.
    for (const auto& model : bundle.study1) {
        for (const auto& result : model.results) {
            const auto& expected = truth.at("metrics").at(result.metric_id)
                                       .at("per_model").at(result.model_id);
            CHECK(std::string(to_string(result.class31)) ==
                  expected.at("class31").get<std::string>());
            CHECK(std::abs(result.icc31 - expected.at("icc31_within").get<double>()) <
                  1e-9);
        }
    }

    REQUIRE(bundle.study2.has_value());
    CHECK(bundle.study2->rt_available);
    CHECK(bundle.study2->rt31 ==
          truth.at("rt_consistent_icc31").get<std::vector<std::string>>());
    CHECK(bundle.study2->rt3k ==
          truth.at("rt_consistent_icc3k").get<std::vector<std::string>>());

    REQUIRE(bundle.study3.has_value());
    CHECK(bundle.study3->eligible31 ==
          truth.at("eligible_icc31").get<std::vector<std::string>>());

    // Agreement classes match per pair and track.
    for (size_t p = 0; p < bundle.study3->pair_labels.size(); ++p) {
        for (const auto& result : bundle.study3->pairs31[p]) {
            const auto& expected = truth.at("agreement").at("icc31")
                                       .at(bundle.study3->pair_labels[p])
                                       .at(result.metric_id);
            REQUIRE(result.agreement_class.has_value());
            const std::string got(to_string(*result.agreement_class));
            std::string want = expected.at("class").get<std::string>();
            CHECK(got == want);
        }
    }
}

TEST_CASE("pipeline outputs are byte-identical across runs and worker counts") {
    auto cfg1 = config_for(small_fixture_dir(), test_dir() / "det_a");
    cfg1.threads = 1;
    run_and_write(cfg1);
    auto cfg2 = config_for(small_fixture_dir(), test_dir() / "det_b");
    cfg2.threads = 4;
    run_and_write(cfg2);

    auto files_a = read_dir(test_dir() / "det_a");
    auto files_b = read_dir(test_dir() / "det_b");
    REQUIRE(files_a.size() == files_b.size());
    for (const auto& [name, body] : files_a) {
        REQUIRE(files_b.count(name) == 1);
        CHECK(files_b.at(name) == body);
    }
}

TEST_CASE("empty dataset produces empty tables and notices, not errors") {
    fs::path dir = test_dir() / "empty";
    fs::create_directories(dir);
    {
        std::ofstream data(dir / "data.csv");
        data << "model_id,run_id,segment_id,metric_id,value,status\n";
        std::ofstream registry(dir / "registry.json");
        registry << R"([{"metric_id": "m", "pipeline": "p", "metric_class": "safety",
                         "kind": "continuous"}])";
    }
    auto cfg = config_for(dir, test_dir() / "out_empty");
    ReportBundle bundle = run_and_write(cfg);
    CHECK(bundle.models.empty());
    bool has_notice = false;
    for (const auto& notice : bundle.notices)
        has_notice |= notice.find("no data") != std::string::npos;
    CHECK(has_notice);
    CHECK(fs::exists(test_dir() / "out_empty" / "manifest.json"));
    CHECK(fs::exists(test_dir() / "out_empty" / "screening.csv"));
}

TEST_CASE("subcommand scopes produce their table subsets") {
    auto cfg = config_for(small_fixture_dir(), test_dir() / "out_scope");
    cfg.run_study1 = cfg.run_study2 = cfg.run_study3 = false;
    ReportBundle bundle = run_pipeline(cfg);
    CHECK(bundle.find_table("screening"));
    CHECK(bundle.find_table("exclusion"));
    CHECK_FALSE(bundle.find_table("reliability_detail"));

    cfg.run_study1 = true;
    bundle = run_pipeline(cfg);
    CHECK(bundle.find_table("reliability_detail"));
    CHECK_FALSE(bundle.find_table("consistency_icc31"));

    cfg.run_study2 = true;
    bundle = run_pipeline(cfg);
    CHECK(bundle.find_table("consistency_icc31"));
    CHECK_FALSE(bundle.find_table("agreement_rollup"));

    cfg.run_study3 = true;
    bundle = run_pipeline(cfg);
    CHECK(bundle.find_table("agreement_rollup"));
}

TEST_CASE("quarantine receives partial outputs on failure") {
    fs::path dir = test_dir() / "broken";
    fs::create_directories(dir);
    {
        std::ofstream data(dir / "data.csv");
        data << "model_id,run_id,segment_id,metric_id,value,status\n"
             << "m1,A,s1,m,0.5,valid\n"
             << "m1,A,s1,m,0.6,valid\n";  // duplicate key
        std::ofstream registry(dir / "registry.json");
        registry << R"([{"metric_id": "m", "pipeline": "p", "metric_class": "safety",
                         "kind": "continuous"}])";
    }
    auto cfg = config_for(dir, test_dir() / "out_broken");
    CHECK_THROWS_AS(run_and_write(cfg), error);
    CHECK(fs::exists(test_dir() / "out_broken" / "quarantine" / "error.txt"));
}

TEST_CASE("extra formats write alongside the csv interchange") {
    auto cfg = config_for(small_fixture_dir(), test_dir() / "out_formats");
    cfg.formats = {Format::csv, Format::json, Format::markdown};
    run_and_write(cfg);
    CHECK(fs::exists(test_dir() / "out_formats" / "distribution.csv"));
    CHECK(fs::exists(test_dir() / "out_formats" / "distribution.json"));
    CHECK(fs::exists(test_dir() / "out_formats" / "distribution.md"));
}

TEST_CASE("manifest reconciles the metric universe") {
    auto cfg = config_for(small_fixture_dir(), test_dir() / "out_manifest");
    ReportBundle bundle = run_pipeline(cfg);
    auto manifest = nlohmann::json::parse(bundle.manifest_json);
    CHECK(manifest.at("universe").at("n_metrics") == 8);
    for (const auto& [model, buckets] : manifest.at("universe").at("per_model").items()) {
        const int total = buckets.at("analyzed").get<int>() +
                          buckets.at("screened").get<int>() +
                          buckets.at("non_numeric").get<int>() +
                          buckets.at("degenerate").get<int>() +
                          buckets.at("not_calculated").get<int>();
        CHECK(total == 8);
    }
    CHECK(manifest.contains("config_hash"));
    CHECK_FALSE(manifest.contains("timestamp_unix_ms"));

    cfg.stamp = true;
    ReportBundle stamped = run_pipeline(cfg);
    auto stamped_manifest = nlohmann::json::parse(stamped.manifest_json);
    CHECK(stamped_manifest.contains("timestamp_unix_ms"));
}

TEST_CASE("paper-scale fixture runs the full pipeline and reconciles") {
    const auto t0 = std::chrono::steady_clock::now();
    auto manifest = sim::paper_scale_manifest();
    auto fixture = sim::gen_study_fixture(manifest);
    fs::path dir = test_dir() / "paper_fixture";
    sim::write_fixture(fixture, dir);

    // 3 models x 4 runs x 552 segments x 213 metrics, minus the gaps.
    CHECK(fixture.dataset.cells.size() <= 3ull * 4 * 552 * 213);
    CHECK(fixture.dataset.cells.size() >= 3ull * 4 * 552 * 200);

    auto cfg = config_for(dir, test_dir() / "out_paper");
    ReportBundle bundle = run_and_write(cfg);

    REQUIRE(bundle.study2.has_value());
    CHECK(bundle.study2->rt31.size() == 31);
    CHECK(bundle.study2->rt3k.size() == 89);
    CHECK(bundle.study3->eligible31.size() == 31);
    CHECK(bundle.study3->eligible3k.size() == 89);

    // Distribution buckets reconcile to the 213-metric universe.
    for (const auto& dist : bundle.distributions) {
        int analyzed = 0;
        for (int c : dist.counts31) analyzed += c;
        CHECK(analyzed + dist.screened + dist.kappa_only + dist.degenerate +
                  dist.not_calculated ==
              213);
    }

    // Rollup pair totals cover every eligible metric.
    CHECK(bundle.study3->rollup31.n_eligible == 31);
    CHECK(bundle.study3->rollup3k.n_eligible == 89);

    const auto elapsed = std::chrono::duration_cast<std::chrono::seconds>(
        std::chrono::steady_clock::now() - t0);
    MESSAGE("paper-scale pipeline took ", elapsed.count(), "s");
    CHECK(elapsed.count() < 120);
}
