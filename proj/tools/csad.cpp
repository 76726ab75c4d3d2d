// Command-line front end: stream building, single-cell training and evaluation,
// grid runs, reports and Weibull inspection.
//
// Exit codes: 0 success, 1 internal error, 2 config error, 3 data error,
// 4 training divergence.

#include "csad/experiment.hpp"
#include "csad/report.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <set>

namespace {

using namespace csad;
namespace fs = std::filesystem;

struct Common {
    std::string data_dir;
    std::string config = "configs/experiments.json";
    bool quiet = false;

    [[nodiscard]] fs::path data_root() const {
        return resolve_data_dir(data_dir.empty() ? std::nullopt : std::optional<std::string>(data_dir));
    }
};

void say(const std::string& s) { std::cout << s << std::endl; }

std::string fixed(double v, int digits = 4) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}

void print_episodes(const std::vector<EpisodeResult>& eps) {
    for (const auto& e : eps)
        say("  episode " + std::to_string(e.episode_index + 1) + ": " + (e.auc ? fixed(*e.auc) : std::string("n/a")) +
            " (" + std::to_string(e.n_samples) + " samples, " + std::to_string(e.n_anomalies) + " anomalies)");
    say("  mean AUC: " + fixed(mean_auc(eps)));
}

/// Stream spec from a spec file (needs schema_version) or from a build-stream manifest.
StreamSpec load_stream_spec(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ValidationError("cannot open stream spec " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(f, nullptr, true, true);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("stream spec " + path + " is not valid JSON: " + e.what());
    }
    if (!j.is_object() || !j.contains("schema_version"))
        throw ValidationError("stream spec " + path + ": missing schema_version");
    if (j["schema_version"] != kConfigSchemaVersion)
        throw ValidationError("stream spec " + path + ": unsupported schema_version " + j["schema_version"].dump());
    if (j.contains("spec")) j = j["spec"];
    StreamSpec s;
    try {
        s = j.get<StreamSpec>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("stream spec " + path + ": " + e.what());
    }
    parse_dataset_id(s.dataset);
    s.normalize();
    s.validate();
    return s;
}

/// Cell inputs from either --spec or (--experiment, --dataset, --seed).
struct CellInputs {
    StreamSpec spec;
    std::string dataset;
    std::uint64_t seed = 0;
    bool from_spec_file = false;
};

CellInputs cell_inputs(const ExperimentConfig& cfg, const std::string& spec_file, const std::string& dataset,
                       std::optional<std::uint64_t> seed) {
    CellInputs in;
    if (spec_file.empty()) {
        in.dataset = dataset;
        in.seed = seed.value_or(0);
        in.spec = resolve_stream_spec(cfg, dataset, in.seed);
        return in;
    }
    in.from_spec_file = true;
    in.spec = load_stream_spec(spec_file);
    in.dataset = in.spec.dataset;
    if (seed) in.spec.seed = *seed;
    in.seed = in.spec.seed;
    return in;
}

int cmd_build_stream(const Common& c, int experiment, const std::string& spec_file, const std::string& dataset,
                     std::optional<std::uint64_t> seed, const std::string& out) {
    const auto in = spec_file.empty() ? cell_inputs(find_experiment(load_experiment_file(c.config), experiment), "",
                                                    dataset, seed)
                                      : cell_inputs(ExperimentConfig{}, spec_file, dataset, seed);
    DataCache cache(c.data_root());
    const auto streams = build_cell_streams(cache.get(in.dataset, in.spec.normal_class), in.spec);
    const auto manifest = stream_manifest(streams.train, streams.validation, streams.test);
    if (!manifest.value("composition_ok", false)) warn("stream composition check reported violations");
    if (out.empty() || out == "-") {
        std::cout << manifest.dump(2) << '\n';
        return 0;
    }
    // A path without a .json extension names a directory.
    fs::path target(out);
    if (fs::is_directory(target) || target.extension() != ".json") {
        fs::create_directories(target);
        target /= "manifest.json";
    }
    atomic_write(target, manifest.dump(2) + "\n");
    if (!c.quiet) say("wrote " + target.string());
    return 0;
}

int cmd_train(const Common& c, int experiment, const std::string& spec_file, const std::string& dataset,
              const std::string& strategy, std::optional<std::uint64_t> seed, const std::string& checkpoint,
              const std::string& results) {
    const auto cfgs = load_experiment_file(c.config);
    const auto& cfg = find_experiment(cfgs, experiment);
    const auto& sc = cfg.strategy(parse_strategy(strategy));
    const auto in = cell_inputs(cfg, spec_file, dataset, seed);
    DataCache cache(c.data_root());
    const auto streams = build_cell_streams(cache.get(in.dataset, in.spec.normal_class), in.spec);
    auto outcome = run_cell(cfg, streams, in.dataset, sc, in.seed);
    if (in.from_spec_file) {
        // The stream no longer comes from the experiment config; hash what was actually used.
        auto id = cell_identity(cfg, in.dataset, sc, in.seed);
        id["stream"] = in.spec;
        outcome.record.config_hash = sha256_hex(id.dump());
        outcome.checkpoint.meta["config_hash"] = outcome.record.config_hash;
    }
    save_checkpoint(checkpoint, outcome.checkpoint);
    if (!results.empty()) write_result(results, outcome.record);
    if (!c.quiet) {
        say("experiment " + std::to_string(experiment) + " " + in.dataset + "/" + to_string(sc.name) + "/seed " +
            std::to_string(in.seed) + " (" + fixed(outcome.record.wall_clock_seconds, 1) + " s)");
        print_episodes(outcome.record.episodes);
        say("checkpoint: " + checkpoint);
    }
    return 0;
}

int cmd_evaluate(const Common& c, const std::string& checkpoint, const std::string& out) {
    const auto ck = load_checkpoint(checkpoint);
    if (!ck.meta.contains("stream") || !ck.meta.contains("dataset"))
        throw FormatError("checkpoint carries no stream description; it was not written by train");
    const auto spec = ck.meta["stream"].get<StreamSpec>();
    const auto dataset = ck.meta["dataset"].get<std::string>();
    const auto seed = ck.meta.value("seed", std::uint64_t{0});
    DataCache cache(c.data_root());
    const auto data = cache.get(dataset, spec.normal_class);
    const auto test = build_test_stream(data.test, spec.n_test_episodes, spec.seed, spec);
    const auto eps = evaluate_stream(ck.model, test, seed);
    if (!c.quiet) print_episodes(eps);
    if (!out.empty()) {
        ResultRecord r;
        r.dataset = dataset;
        r.strategy = ck.strategy;
        r.experiment_id = ck.meta.value("experiment_id", 0);
        r.seed = seed;
        r.episodes = eps;
        r.mean_auc = mean_auc(eps);
        r.config_hash = ck.meta.value("config_hash", std::string());
        atomic_write(out, nlohmann::json(r).dump(2) + "\n");
    }
    return 0;
}

int cmd_run_experiment(const Common& c, std::vector<int> ids, RunOptions opts) {
    const auto cfgs = load_experiment_file(c.config);
    if (ids.empty())
        for (const auto& e : cfgs) ids.push_back(e.id);
    for (const auto& s : opts.strategies) parse_strategy(s);
    for (const auto& d : opts.datasets) parse_dataset_id(d);
    opts.data_root = c.data_root();
    if (!c.quiet) opts.log = [](const std::string& m) { say(m); };
    DataCache cache(opts.data_root);
    std::set<std::string> classes;
    std::size_t ran = 0, skipped = 0, failed = 0;
    for (int id : ids) {
        const auto summary = run_experiment(find_experiment(cfgs, id), opts, &cache);
        ran += summary.ran;
        skipped += summary.skipped;
        failed += summary.failures.size();
        for (const auto& f : summary.failures) classes.insert(f.error_class);
    }
    say("cells run: " + std::to_string(ran) + ", skipped (already current): " + std::to_string(skipped) +
        ", failed: " + std::to_string(failed));
    if (failed == 0) return 0;
    say("failures are listed in " + (opts.results_root / "<experiment>" / "failures.json").string());
    return classes.size() == 1 ? exit_code_for(*classes.begin()) : 1;
}

int cmd_report(const Common& c, const std::string& results, const std::string& out) {
    const auto records = load_records(results);
    if (records.empty()) throw FormatError("no result records found under " + results);
    std::map<int, std::string> titles;
    if (fs::exists(c.config))
        for (const auto& e : load_experiment_file(c.config)) titles[e.id] = e.name;
    const auto bundle = emit_report(records, titles);
    const fs::path dir = out.empty() ? fs::path(results) / "report" : fs::path(out);
    write_report(bundle, dir);
    if (!c.quiet) say("wrote " + std::to_string(bundle.files.size()) + " files to " + dir.string());
    return 0;
}

int cmd_inspect_weibull(const std::string& checkpoint, int grid) {
    const auto ck = load_checkpoint(checkpoint);
    nlohmann::json j;
    j["strategy"] = ck.strategy;
    j["weibull"] = ck.weibull ? nlohmann::json(*ck.weibull) : nlohmann::json(nullptr);
    j["latent_mean"] = std::vector<double>(ck.z_bar.data(), ck.z_bar.data() + ck.z_bar.size());
    j["thresholds"] = ck.thresholds;
    j["acceptance_rates"] = ck.acceptance_rates;
    if (ck.weibull && grid > 1) {
        nlohmann::json curve = nlohmann::json::array();
        for (int i = 0; i < grid; ++i) {
            const double d = 2.0 * i / (grid - 1);
            curve.push_back({{"distance", d}, {"outlier_probability", outlier_probability_at(d, *ck.weibull)}});
        }
        j["curve"] = curve;
    }
    std::cout << j.dump(2) << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Continual semi-supervised anomaly detection"};
    app.require_subcommand(1);
    Common common;
    app.add_option("--data-dir", common.data_dir, "dataset root (default: $CSAD_DATA_DIR, then ./data)");
    app.add_option("--config", common.config, "experiment config file")->capture_default_str();
    app.add_flag("-q,--quiet", common.quiet, "suppress progress output and warnings");

    int experiment = 1;
    std::string dataset = "mnist", strategy = "or", out, checkpoint, results = "results", spec_file;
    std::optional<std::uint64_t> seed;
    int grid = 0;

    auto* build = app.add_subcommand("build-stream", "build the streams of one cell and print their manifest");
    build->add_option("--spec", spec_file, "stream spec file or manifest (instead of --experiment/--dataset)");
    build->add_option("--experiment", experiment)->capture_default_str();
    build->add_option("--dataset", dataset)->capture_default_str();
    build->add_option("--seed", seed, "stream seed (default: 0, or the seed in --spec)");
    build->add_option("--out", out, "manifest file (*.json) or directory (default: stdout)");

    auto* train = app.add_subcommand("train", "train one (experiment, dataset, strategy, seed) cell");
    train->add_option("--spec", spec_file, "stream spec file or manifest (instead of the experiment's stream)");
    train->add_option("--experiment", experiment, "experiment supplying model and strategy settings")
        ->capture_default_str();
    train->add_option("--dataset", dataset)->capture_default_str();
    train->add_option("--strategy", strategy)->capture_default_str();
    train->add_option("--seed", seed, "seed (default: 0, or the seed in --spec)");
    train->add_option("--checkpoint", checkpoint, "checkpoint output path")->required();
    std::string train_results;
    train->add_option("--results", train_results, "also write the result record under this root");

    auto* evaluate = app.add_subcommand("evaluate", "score a checkpoint on its test stream");
    evaluate->add_option("--checkpoint", checkpoint)->required();
    evaluate->add_option("--out", out, "write a result JSON here");

    auto* run = app.add_subcommand("run-experiment", "run experiment grid cells and persist results");
    std::vector<int> ids;
    RunOptions opts;
    std::string results_root = "results";
    run->add_option("--experiment", ids, "experiment ids (default: all)");
    run->add_option("--dataset", opts.datasets, "restrict to these datasets");
    run->add_option("--strategy", opts.strategies, "restrict to these strategies");
    run->add_option("--seeds", opts.seeds, "override the configured seeds");
    run->add_option("--results", results_root)->capture_default_str();
    run->add_option("--jobs", opts.jobs, "parallel cells")->capture_default_str();
    run->add_flag("--force", opts.force, "rerun cells whose results already exist");
    run->add_flag("--checkpoints", opts.save_checkpoints, "save a checkpoint next to each result");

    auto* report = app.add_subcommand("report", "render tables and charts from result records");
    report->add_option("--results", results)->capture_default_str();
    report->add_option("--out", out, "output directory (default: <results>/report)");

    auto* inspect = app.add_subcommand("inspect-weibull", "print the tail model stored in a checkpoint");
    inspect->add_option("checkpoint,--checkpoint", checkpoint)->required();
    inspect->add_option("--grid", grid, "also tabulate the outlier probability on this many distances");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }
    if (common.quiet) warnings_enabled() = false;

    try {
        if (*build) return cmd_build_stream(common, experiment, spec_file, dataset, seed, out);
        if (*train) return cmd_train(common, experiment, spec_file, dataset, strategy, seed, checkpoint, train_results);
        if (*evaluate) return cmd_evaluate(common, checkpoint, out);
        if (*run) {
            opts.results_root = results_root;
            return cmd_run_experiment(common, ids, opts);
        }
        if (*report) return cmd_report(common, results, out);
        if (*inspect) return cmd_inspect_weibull(checkpoint, grid);
    } catch (const std::exception& e) {
        const auto cls = error_class_of(e);
        std::cerr << "csad: " << cls << " error: " << e.what() << '\n';
        return exit_code_for(cls);
    }
    return 1;
}
