#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

namespace fs = std::filesystem;

namespace {

fs::path test_dir() {
    static fs::path dir = [] {
        fs::path d = fs::temp_directory_path() / "retest_cli_tests";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

int run_cli(const std::string& args) {
    const std::string command = std::string(RETEST_BIN) + " " + args +
                                " > /dev/null 2>&1";
    const int status = std::system(command.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void write_small_inputs(const fs::path& dir) {
    fs::create_directories(dir);
    std::ofstream data(dir / "data.csv");
    data << "model_id,run_id,segment_id,metric_id,value,status\n";
    for (int m = 0; m < 3; ++m)
        for (int s = 0; s < 8; ++s)
            for (int r = 0; r < 2; ++r)
                data << "model" << m << ",run" << r << ",seg" << s << ",score,"
                     << (s + 0.01 * r + 0.1 * m) << ",valid\n";
    std::ofstream registry(dir / "registry.json");
    registry << R"([{"metric_id": "score", "pipeline": "p",
                     "metric_class": "engagement", "kind": "continuous"}])";
}

}  // namespace

TEST_CASE("help exits zero") {
    CHECK(run_cli("--help") == 0);
    CHECK(run_cli("all --help") == 0);
}

TEST_CASE("missing required options exit with the config code") {
    CHECK(run_cli("all") == 3);
    CHECK(run_cli("study1 --data only.csv") == 3);
    CHECK(run_cli("bogus_subcommand") == 3);
}

TEST_CASE("missing input files exit with the config code") {
    CHECK(run_cli("all --data /nonexistent/in.csv --registry /nonexistent/r.json "
                  "--out-dir " + (test_dir() / "out_missing").string()) == 3);
}

TEST_CASE("data integrity problems exit with code 2") {
    fs::path dir = test_dir() / "dup";
    fs::create_directories(dir);
    {
        std::ofstream data(dir / "data.csv");
        data << "model_id,run_id,segment_id,metric_id,value,status\n"
             << "m1,A,s1,score,0.5,valid\n"
             << "m1,A,s1,score,0.7,valid\n";
        std::ofstream registry(dir / "registry.json");
        registry << R"([{"metric_id": "score", "pipeline": "p",
                         "metric_class": "safety", "kind": "continuous"}])";
    }
    CHECK(run_cli("validate --data " + (dir / "data.csv").string() + " --registry " +
                  (dir / "registry.json").string() + " --out-dir " +
                  (dir / "out").string()) == 2);
}

TEST_CASE("bad threshold overrides exit with the config code") {
    fs::path dir = test_dir() / "threshold";
    write_small_inputs(dir);
    std::ofstream thresholds(dir / "bad.json");
    thresholds << R"({"min_segments": 0})";
    thresholds.close();
    CHECK(run_cli("study1 --data " + (dir / "data.csv").string() + " --registry " +
                  (dir / "registry.json").string() + " --thresholds " +
                  (dir / "bad.json").string() + " --out-dir " +
                  (dir / "out").string()) == 3);
}

TEST_CASE("empty dataset succeeds with exit code zero") {
    fs::path dir = test_dir() / "empty";
    fs::create_directories(dir);
    {
        std::ofstream data(dir / "data.csv");
        data << "model_id,run_id,segment_id,metric_id,value,status\n";
        std::ofstream registry(dir / "registry.json");
        registry << R"([{"metric_id": "score", "pipeline": "p",
                         "metric_class": "safety", "kind": "continuous"}])";
    }
    CHECK(run_cli("all --data " + (dir / "data.csv").string() + " --registry " +
                  (dir / "registry.json").string() + " --out-dir " +
                  (dir / "out").string()) == 0);
    CHECK(fs::exists(dir / "out" / "manifest.json"));
}

TEST_CASE("study subcommands run end to end on a small dataset") {
    fs::path dir = test_dir() / "small";
    write_small_inputs(dir);
    const std::string common = " --data " + (dir / "data.csv").string() +
                               " --registry " + (dir / "registry.json").string() +
                               " --min-segments 5";
    CHECK(run_cli("validate" + common + " --out-dir " + (dir / "out_v").string()) == 0);
    CHECK(run_cli("screen" + common + " --out-dir " + (dir / "out_s").string()) == 0);
    CHECK(run_cli("study1" + common + " --out-dir " + (dir / "out_1").string()) == 0);
    CHECK(run_cli("all" + common + " --out-dir " + (dir / "out_all").string()) == 0);
    CHECK(fs::exists(dir / "out_1" / "reliability_detail.csv"));
    CHECK(fs::exists(dir / "out_all" / "consistency_icc31.csv"));

    // report renders every format.
    CHECK(run_cli("report" + common + " --out-dir " + (dir / "out_r").string()) == 0);
    CHECK(fs::exists(dir / "out_r" / "distribution.md"));
    CHECK(fs::exists(dir / "out_r" / "distribution.json"));
}

TEST_CASE("simulate preset then full pipeline round trips") {
    fs::path fixture_dir = test_dir() / "sim_fixture";
    CHECK(run_cli("simulate --preset acceptance --out-dir " + fixture_dir.string()) == 0);
    CHECK(fs::exists(fixture_dir / "data.csv"));
    CHECK(fs::exists(fixture_dir / "registry.json"));
    CHECK(fs::exists(fixture_dir / "truth.json"));
    CHECK(fs::exists(fixture_dir / "fixture_manifest.json"));

    CHECK(run_cli("all --data " + (fixture_dir / "data.csv").string() + " --registry " +
                  (fixture_dir / "registry.json").string() + " --out-dir " +
                  (test_dir() / "sim_out").string()) == 0);
    CHECK(fs::exists(test_dir() / "sim_out" / "agreement_rollup.csv"));

    // A manifest file can be replayed through the simulate subcommand.
    CHECK(run_cli("simulate --manifest " +
                  (fixture_dir / "fixture_manifest.json").string() + " --out-dir " +
                  (test_dir() / "sim_replay").string()) == 0);
}
