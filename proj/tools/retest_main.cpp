// Command line front end: runs the three-study reliability pipeline on a
// long-format measurement table, or generates synthetic fixtures with
// known ground truth.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "retest/report.hpp"
#include "retest/simulate.hpp"

namespace {

struct CommonOptions {
    std::string data;
    std::string registry;
    std::string thresholds;
    std::string icc_mode = "within";
    std::string out_dir = "retest_out";
    std::vector<std::string> formats;
    std::string ordering = "input";
    std::string range_pool = "both";
    std::optional<int> trim_count;
    std::optional<int> min_segments;
    std::optional<double> prevalence_cutoff;
    uint64_t seed = 0;
    bool adjacent_class_tolerance = false;
    int threads = 0;
    bool stamp = false;
    int precision = 4;
};

void add_common_options(CLI::App* cmd, CommonOptions& opts, bool needs_data) {
    auto* data = cmd->add_option("--data", opts.data, "long-format measurement table (csv or jsonl)");
    auto* registry = cmd->add_option("--registry", opts.registry, "metric registry JSON");
    if (needs_data) {
        data->required();
        registry->required();
    }
    cmd->add_option("--thresholds", opts.thresholds, "threshold overrides JSON file");
    cmd->add_option("--icc-mode", opts.icc_mode, "within|residual")
        ->check(CLI::IsMember({"within", "residual"}));
    cmd->add_option("--trim-count", opts.trim_count, "grid entries trimmed per tail");
    cmd->add_option("--min-segments", opts.min_segments, "complete segments required");
    cmd->add_option("--prevalence-cutoff", opts.prevalence_cutoff,
                    "dominant-category screening cutoff");
    cmd->add_option("--out-dir", opts.out_dir, "output directory");
    cmd->add_option("--format", opts.formats, "extra output formats (json, markdown)")
        ->delimiter(',');
    cmd->add_option("--seed", opts.seed, "seed for any sampling");
    cmd->add_flag("--adjacent-class-tolerance", opts.adjacent_class_tolerance,
                  "count neighbouring reliability classes as concordant");
    cmd->add_option("--order", opts.ordering, "index ordering: input|sorted")
        ->check(CLI::IsMember({"input", "sorted"}));
    cmd->add_option("--range-pool", opts.range_pool,
                    "nmae range population: both|model-a")
        ->check(CLI::IsMember({"both", "model-a"}));
    cmd->add_option("--threads", opts.threads, "worker threads (0 = auto)");
    cmd->add_flag("--stamp", opts.stamp, "embed a timestamp in the run manifest");
    cmd->add_option("--precision", opts.precision, "rendered decimal places");
}

retest::report::PipelineConfig to_config(const CommonOptions& opts, int studies) {
    retest::report::PipelineConfig cfg;
    cfg.data_path = opts.data;
    cfg.registry_path = opts.registry;
    if (!opts.thresholds.empty()) {
        cfg.thresholds_path = opts.thresholds;
        cfg.thresholds = retest::ThresholdConfig::from_json_file(opts.thresholds);
    }
    if (opts.trim_count) cfg.thresholds.trim_count = *opts.trim_count;
    if (opts.min_segments) cfg.thresholds.min_segments = *opts.min_segments;
    if (opts.prevalence_cutoff) cfg.thresholds.prevalence_cutoff = *opts.prevalence_cutoff;
    cfg.icc_mode = retest::reliability::icc_mode_from_string(opts.icc_mode);
    cfg.run_study1 = studies >= 1;
    cfg.run_study2 = studies >= 2;
    cfg.run_study3 = studies >= 3;
    cfg.out_dir = opts.out_dir;
    for (const auto& f : opts.formats)
        cfg.formats.push_back(retest::report::format_from_string(f));
    cfg.seed = opts.seed;
    cfg.adjacent_class_tolerance = opts.adjacent_class_tolerance;
    cfg.range_pool = opts.range_pool == "model-a"
                         ? retest::agreement::RangePool::model_a_only
                         : retest::agreement::RangePool::both_models;
    cfg.ordering = opts.ordering == "sorted"
                       ? retest::ingest::IndexOrdering::sorted
                       : retest::ingest::IndexOrdering::first_appearance;
    cfg.threads = opts.threads;
    cfg.stamp = opts.stamp;
    cfg.precision = opts.precision;
    return cfg;
}

int run_studies(const CommonOptions& opts, int studies) {
    auto cfg = to_config(opts, studies);
    auto bundle = retest::report::run_and_write(cfg);
    std::cout << "wrote " << bundle.tables.size() << " tables to "
              << cfg.out_dir.string() << "\n";
    for (const auto& notice : bundle.notices) std::cout << "notice: " << notice << "\n";
    return 0;
}

int run_simulate(const std::string& manifest_path, const std::string& preset,
                 const std::string& out_dir, std::optional<uint64_t> seed) {
    retest::sim::FixtureManifest manifest;
    if (!manifest_path.empty()) {
        manifest = retest::sim::FixtureManifest::from_json_file(manifest_path);
    } else if (preset == "acceptance") {
        manifest = retest::sim::acceptance_manifest(seed.value_or(7));
    } else if (preset == "paper-scale") {
        manifest = retest::sim::paper_scale_manifest(seed.value_or(11));
    } else {
        retest::fail(retest::errc::config,
                     "simulate needs --manifest or --preset {acceptance, paper-scale}");
    }
    if (seed) manifest.seed = *seed;
    auto fixture = retest::sim::gen_study_fixture(manifest);
    retest::sim::write_fixture(fixture, out_dir);
    std::ofstream manifest_out(std::filesystem::path(out_dir) / "fixture_manifest.json",
                               std::ios::binary);
    manifest_out << manifest.to_json_text() << '\n';
    std::cout << "wrote fixture (" << fixture.dataset.cells.size() << " cells, "
              << fixture.registry.size() << " metrics) to " << out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"retest: test-retest reliability and inter-model agreement analytics"};
    app.require_subcommand(1);

    CommonOptions opts;
    std::string sim_manifest, sim_preset, sim_out = "fixture_out";
    std::optional<uint64_t> sim_seed;

    struct Sub {
        const char* name;
        const char* help;
        int studies;  // 0 = validate, 1..3 = through study N
    };
    const Sub subs[] = {
        {"validate", "load the table and validate cells against the registry", 0},
        {"screen", "validate plus variance screening", 0},
        {"study1", "intra-model test-retest reliability (ICC)", 1},
        {"study2", "cross-model reliability-class consistency", 2},
        {"study3", "inter-model value agreement", 3},
        {"all", "full pipeline: validate, screen, studies 1-3", 3},
        {"report", "full pipeline rendered in every format", 3},
    };
    for (const auto& sub : subs) {
        auto* cmd = app.add_subcommand(sub.name, sub.help);
        add_common_options(cmd, opts, true);
    }

    auto* sim = app.add_subcommand("simulate", "generate a synthetic fixture with ground truth");
    sim->add_option("--manifest", sim_manifest, "fixture manifest JSON");
    sim->add_option("--preset", sim_preset, "canned manifest: acceptance|paper-scale")
        ->check(CLI::IsMember({"acceptance", "paper-scale"}));
    sim->add_option("--out-dir", sim_out, "fixture output directory");
    sim->add_option("--seed", sim_seed, "manifest seed override");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 3;
    }

    try {
        if (sim->parsed()) return run_simulate(sim_manifest, sim_preset, sim_out, sim_seed);
        const std::string name = app.get_subcommands().front()->get_name();
        if (name == "validate") {
            auto cfg = to_config(opts, 0);
            cfg.run_study1 = cfg.run_study2 = cfg.run_study3 = false;
            auto bundle = retest::report::run_and_write(cfg);
            std::cout << "validated " << bundle.n_cells << " cells; violations: "
                      << bundle.exclusion.violations_total() << "\n";
            return 0;
        }
        if (name == "screen") {
            auto cfg = to_config(opts, 0);
            cfg.run_study1 = cfg.run_study2 = cfg.run_study3 = false;
            auto bundle = retest::report::run_and_write(cfg);
            std::cout << "screening written for " << bundle.models.size() << " models\n";
            return 0;
        }
        if (name == "report") {
            auto cfg = to_config(opts, 3);
            cfg.formats = {retest::report::Format::csv, retest::report::Format::json,
                           retest::report::Format::markdown};
            retest::report::run_and_write(cfg);
            return 0;
        }
        int studies = name == "study1" ? 1 : name == "study2" ? 2 : 3;
        return run_studies(opts, studies);
    } catch (const retest::error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return retest::error::exit_code(e.code());
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 4;
    }
}
