#include "csad/experiment.hpp"
#include "csad/report.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <unistd.h>

using namespace csad;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    static int counter = 0;
    const auto p = fs::temp_directory_path() /
                   ("csad_exp_" + std::to_string(::getpid()) + "_" + std::to_string(counter++) + "_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

void put_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}

// Small MNIST-shaped IDX pair; each class has its own bright band of rows.
void write_idx_split(const fs::path& dir, const std::string& prefix, std::uint32_t per_class, std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_int_distribution<int> noise(0, 60);
    std::vector<std::uint8_t> img, lbl;
    const std::uint32_t n = per_class * 10;
    put_be32(img, 0x803);
    put_be32(img, n);
    put_be32(img, 28);
    put_be32(img, 28);
    put_be32(lbl, 0x801);
    put_be32(lbl, n);
    for (std::uint32_t i = 0; i < n; ++i) {
        const int c = static_cast<int>(i % 10);
        for (int r = 0; r < 28; ++r)
            for (int col = 0; col < 28; ++col) {
                const bool band = r >= 2 * c + 4 && r < 2 * c + 8;
                img.push_back(static_cast<std::uint8_t>(band ? 255 - noise(rng) : noise(rng)));
            }
        lbl.push_back(static_cast<std::uint8_t>(c));
    }
    std::ofstream(dir / (prefix + "-images-idx3-ubyte"), std::ios::binary)
        .write(reinterpret_cast<const char*>(img.data()), static_cast<std::streamsize>(img.size()));
    std::ofstream(dir / (prefix + "-labels-idx1-ubyte"), std::ios::binary)
        .write(reinterpret_cast<const char*>(lbl.data()), static_cast<std::streamsize>(lbl.size()));
}

fs::path fixture_data() {
    static const fs::path root = [] {
        auto r = scratch("data");
        fs::create_directories(r / "mnist");
        write_idx_split(r / "mnist", "train", 40, 1);
        write_idx_split(r / "mnist", "t10k", 12, 2);
        return r;
    }();
    return root;
}

nlohmann::json tiny_config() {
    return nlohmann::json::parse(R"({
      "schema_version": 1,
      "defaults": {
        "datasets": ["mnist"],
        "seeds": [0],
        "stream": {"normal_class": 0, "n_experiences": 2, "alpha": 0.5, "gamma": 0.05, "zeta": 0.0,
                   "n_test_episodes": 3},
        "model": {"latent_dim": 2, "encoder_hidden": [16], "classifier": {"conv": [], "dense": [8]},
                  "batch_size": 32, "max_epochs": 1},
        "strategies": {"naive": {}, "joint": {}, "ewc": {"fisher_samples": 16},
                       "or": {"rejection_threshold": 0.5, "min_fit": 3}}
      },
      "experiments": [{"id": 1, "ablation": 1, "name": "tiny", "stream": {"alpha": 0.5}}]
    })");
}

ResultRecord fake_record(int exp, const std::string& ds, const std::string& st, std::uint64_t seed, double auc) {
    ResultRecord r;
    r.experiment_id = exp;
    r.dataset = ds;
    r.strategy = st;
    r.seed = seed;
    r.episodes = {{0, auc, 10, 5}, {1, auc, 10, 5}};
    r.mean_auc = auc;
    r.forgetting = {{0, auc + 0.1, auc}, {1, auc, auc}};
    return r;
}

}  // namespace

TEST(ExperimentConfig, ShippedGridCoversFifteenExperiments) {
    const auto cfgs = load_experiment_file(CSAD_SOURCE_DIR "/configs/experiments.json");
    ASSERT_EQ(cfgs.size(), 15u);
    StreamSpec base;
    base.alpha = 0.1;
    base.normalize();
    const std::map<int, std::vector<int>> ablations{{1, {1, 2, 3}}, {2, {4, 5, 6, 7}}, {3, {8, 9, 10, 11}}, {4, {12, 13, 14, 15}}};
    for (const auto& [ab, ids] : ablations)
        for (int id : ids) {
            const auto& c = find_experiment(cfgs, id);
            EXPECT_EQ(c.ablation, ab);
            EXPECT_EQ(c.strategies.size(), 4u);
            EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{0, 1, 2}));
            auto s = c.stream;
            s.normalize();
            // Only the ablated parameter departs from the defaults.
            EXPECT_EQ(ab == 1, s.alpha != base.alpha || id == 2) << id;
            EXPECT_EQ(ab == 2, s.beta != base.beta) << id;
            EXPECT_EQ(ab == 3, s.gamma != base.gamma || id == 8) << id;
            EXPECT_EQ(ab == 4, s.zeta != base.zeta) << id;
            EXPECT_EQ(s.lambda_classes, base.lambda_classes);
            EXPECT_FALSE(c.provenance.empty());
        }
}

TEST(ExperimentConfig, AblationOneDefaults) {
    const auto cfgs = load_experiment_file(CSAD_SOURCE_DIR "/configs/experiments.json");
    std::vector<double> alphas;
    for (int id : {1, 2, 3}) {
        auto s = resolve_stream_spec(find_experiment(cfgs, id), "mnist", 0);
        alphas.push_back(s.alpha);
        for (double b : s.beta) EXPECT_DOUBLE_EQ(b, 0.2);
        EXPECT_DOUBLE_EQ(s.gamma, 0.05);
        EXPECT_DOUBLE_EQ(s.zeta, 0.0);
        EXPECT_EQ(s.lambda_classes.front().size(), 9u);
    }
    EXPECT_EQ(alphas, (std::vector<double>{0.05, 0.10, 0.20}));
    const auto f = resolve_stream_spec(find_experiment(cfgs, 2), "fashion_mnist", 4);
    EXPECT_EQ(f.train_subsample, 10000u);
    EXPECT_EQ(f.seed, 4u);
}

TEST(ExperimentConfig, SchemaErrors) {
    auto j = tiny_config();
    j.erase("schema_version");
    EXPECT_THROW(parse_experiment_file(j), ValidationError);
    j = tiny_config();
    j["schema_version"] = 2;
    EXPECT_THROW(parse_experiment_file(j), ValidationError);
    j = tiny_config();
    j["experiments"].push_back(j["experiments"][0]);
    EXPECT_THROW(parse_experiment_file(j), ValidationError);
    j = tiny_config();
    j["experiments"][0]["stream"]["beta"] = {0.5, 0.6};
    EXPECT_THROW(parse_experiment_file(j), ValidationError);
    j = tiny_config();
    j["defaults"]["datasets"] = {"svhn"};
    EXPECT_THROW(parse_experiment_file(j), ValidationError);
    j = tiny_config();
    j["defaults"]["stream"].erase("normal_class");
    EXPECT_THROW(parse_experiment_file(j), ValidationError);
    j = tiny_config();
    j["experiments"][0]["ablation"] = 5;
    EXPECT_THROW(parse_experiment_file(j), ValidationError);
}

TEST(ExperimentConfig, HashTracksEveryInput) {
    const auto c = parse_experiment_file(tiny_config())[0];
    const auto& naive = c.strategy(StrategyName::naive);
    const auto h = config_hash(c, "mnist", naive, 0);
    EXPECT_EQ(h, config_hash(c, "mnist", naive, 0));
    EXPECT_NE(h, config_hash(c, "mnist", naive, 1));
    EXPECT_NE(h, config_hash(c, "fashion_mnist", naive, 0));
    EXPECT_NE(h, config_hash(c, "mnist", c.strategy(StrategyName::joint), 0));
    auto c2 = c;
    c2.model.latent_dim = 3;
    EXPECT_NE(h, config_hash(c2, "mnist", naive, 0));
}

TEST(Grid, CellCardinality) {
    auto j = tiny_config();
    j["defaults"]["datasets"] = {"mnist", "fashion_mnist", "cifar10"};
    const auto c = parse_experiment_file(j)[0];
    RunOptions o;
    EXPECT_EQ(enumerate_cells(c, o).size(), 12u);
    o.seeds = {0, 1, 2};
    EXPECT_EQ(enumerate_cells(c, o).size(), 36u);
    o.datasets = {"mnist"};
    o.strategies = {"or", "naive"};
    EXPECT_EQ(enumerate_cells(c, o).size(), 6u);
}

TEST(Grid, RunsPersistsAndIsIdempotent) {
    const auto c = parse_experiment_file(tiny_config())[0];
    RunOptions o;
    o.data_root = fixture_data();
    o.results_root = scratch("results");
    o.jobs = 2;
    warnings_enabled() = false;
    const auto first = run_experiment(c, o);
    EXPECT_EQ(first.ran, 4u);
    EXPECT_TRUE(first.failures.empty()) << (first.failures.empty() ? "" : first.failures[0].message);
    for (const auto* st : {"naive", "joint", "ewc", "or"}) {
        const auto p = result_path(o.results_root, 1, "mnist", st, 0);
        ASSERT_TRUE(fs::exists(p)) << p;
        auto csv = p;
        csv.replace_extension(".csv");
        EXPECT_TRUE(fs::exists(csv));
        const auto r = read_result(p);
        EXPECT_EQ(r.config_hash, config_hash(c, "mnist", c.strategy(parse_strategy(st)), 0));
        EXPECT_EQ(r.episodes.size(), 3u);
        EXPECT_EQ(r.forgetting.size(), 2u);
    }

    const auto second = run_experiment(c, o);
    EXPECT_EQ(second.ran, 0u);
    EXPECT_EQ(second.skipped, 4u);

    // Same inputs reproduce the same numbers.
    const auto before = read_result(result_path(o.results_root, 1, "mnist", "or", 0));
    o.force = true;
    o.jobs = 1;
    o.strategies = {"or"};
    const auto third = run_experiment(c, o);
    EXPECT_EQ(third.ran, 1u);
    const auto after = read_result(result_path(o.results_root, 1, "mnist", "or", 0));
    EXPECT_EQ(before.episodes.front().auc, after.episodes.front().auc);
    EXPECT_EQ(before.mean_auc, after.mean_auc);

    // A changed config makes existing results stale.
    auto c2 = c;
    c2.model.latent_dim = 3;
    o.force = false;
    EXPECT_EQ(run_experiment(c2, o).ran, 1u);
    warnings_enabled() = true;
}

TEST(Grid, FailuresAreRecordedAndOthersContinue) {
    auto j = tiny_config();
    j["defaults"]["datasets"] = {"cifar10", "mnist"};
    const auto c = parse_experiment_file(j)[0];
    RunOptions o;
    o.data_root = fixture_data();
    o.results_root = scratch("fail");
    o.strategies = {"naive"};
    warnings_enabled() = false;
    const auto s = run_experiment(c, o);
    warnings_enabled() = true;
    EXPECT_EQ(s.ran, 1u);
    ASSERT_EQ(s.failures.size(), 1u);
    EXPECT_EQ(s.failures[0].cell.dataset, "cifar10");
    EXPECT_EQ(s.failures[0].error_class, "data");
    EXPECT_EQ(s.failures[0].stage, "data");
    const auto manifest = o.results_root / "1" / "failures.json";
    ASSERT_TRUE(fs::exists(manifest));
    std::ifstream f(manifest);
    const auto mj = nlohmann::json::parse(f);
    EXPECT_EQ(mj.size(), 1u);
    EXPECT_EQ(mj[0]["dataset"], "cifar10");
}

TEST(Grid, ErrorClassesMapToExitCodes) {
    EXPECT_EQ(exit_code_for(error_class_of(ValidationError("x"))), 2);
    EXPECT_EQ(exit_code_for(error_class_of(FormatError("x"))), 3);
    EXPECT_EQ(exit_code_for(error_class_of(CapacityError("x"))), 3);
    EXPECT_EQ(exit_code_for(error_class_of(DivergenceError("x"))), 4);
    EXPECT_EQ(exit_code_for(error_class_of(std::runtime_error("x"))), 1);
}

TEST(Report, SingleRecordGivesOneCellTable) {
    const auto b = emit_report({fake_record(1, "mnist", "or", 0, 0.7)});
    const auto& md = b.files.at("report.md");
    EXPECT_NE(md.find("| Strategy | MNIST |"), std::string::npos);
    EXPECT_NE(md.find("| Outlier Rejection | **0.700 (0.000) [1]** |"), std::string::npos);
    EXPECT_EQ(b.files.count("experiment_1.svg"), 1u);
    EXPECT_EQ(b.files.count("summary.json"), 1u);
}

TEST(Report, MainTableMarksBestPerColumn) {
    // Values mirror the shape of the published main table.
    const std::map<std::string, std::map<std::string, double>> v{
        {"mnist", {{"naive", 0.645}, {"joint", 0.7}, {"ewc", 0.646}, {"or", 0.69}}},
        {"cifar10", {{"naive", 0.55}, {"joint", 0.52}, {"ewc", 0.58}, {"or", 0.54}}},
        {"fashion_mnist", {{"naive", 0.555}, {"joint", 0.401}, {"ewc", 0.6}, {"or", 0.61}}}};
    std::vector<ResultRecord> recs;
    for (const auto& [ds, m] : v)
        for (const auto& [st, a] : m) recs.push_back(fake_record(2, ds, st, 0, a));
    const auto md = emit_report(recs).files.at("report.md");
    EXPECT_NE(md.find("| Strategy | MNIST | CIFAR10 | Fashion MNIST |"), std::string::npos);
    EXPECT_NE(md.find("| Joint | **0.700 (0.000) [1]** | 0.520 (0.000) [1] | 0.401 (0.000) [1] |"), std::string::npos);
    EXPECT_NE(md.find("| EWC | 0.646 (0.000) [1] | **0.580 (0.000) [1]** | 0.600 (0.000) [1] |"), std::string::npos);
    EXPECT_NE(md.find("| Outlier Rejection | 0.690 (0.000) [1] | 0.540 (0.000) [1] | **0.610 (0.000) [1]** |"),
              std::string::npos);
    // Four strategy rows in the AUC table.
    const auto auc_table = md.substr(md.find("### Mean AUC"), md.find("### Mean forgetting") - md.find("### Mean AUC"));
    EXPECT_EQ(std::count(auc_table.begin(), auc_table.end(), '\n'), 2 + 2 + 4 + 1);
}

TEST(Report, MeansOverSeedsAndDeterministicFiles) {
    std::vector<ResultRecord> recs{fake_record(3, "mnist", "naive", 0, 0.6), fake_record(3, "mnist", "naive", 1, 0.8),
                                   fake_record(3, "mnist", "or", 0, 0.75)};
    const auto a = emit_report(recs);
    std::reverse(recs.begin(), recs.end());
    const auto b = emit_report(recs);
    EXPECT_EQ(a.files, b.files);
    EXPECT_NE(a.files.at("report.md").find("| Naive | 0.700 (0.141) [2] |"), std::string::npos);

    const auto root = scratch("report");
    for (const auto& r : recs) write_result(root / "results", r);
    const auto loaded = load_records(root / "results");
    EXPECT_EQ(loaded.size(), 3u);
    write_report(emit_report(loaded), root / "r1");
    write_report(emit_report(load_records(root / "results")), root / "r2");
    for (const auto& name : {"report.md", "summary.json", "experiment_3.svg"}) {
        std::ifstream f1(root / "r1" / name), f2(root / "r2" / name);
        const std::string s1{std::istreambuf_iterator<char>(f1), {}}, s2{std::istreambuf_iterator<char>(f2), {}};
        EXPECT_FALSE(s1.empty());
        EXPECT_EQ(s1, s2) << name;
    }
}

#ifdef CSAD_CLI_PATH
namespace {
int cli(const std::string& args) {
    const int rc = std::system((std::string(CSAD_CLI_PATH) + " " + args + " > /dev/null 2>&1").c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}
}  // namespace

TEST(Cli, ExitCodes) {
    const auto dir = scratch("cli");
    {
        std::ofstream f(dir / "cfg.json");
        f << tiny_config().dump();
        std::ofstream g(dir / "bad.json");
        g << R"({"experiments": []})";
    }
    const auto cfg = " --config " + (dir / "cfg.json").string();
    EXPECT_EQ(cli("--help"), 0);
    EXPECT_EQ(cli(""), 2);
    EXPECT_EQ(cli("frobnicate"), 2);
    EXPECT_EQ(cli("--config " + (dir / "bad.json").string() + " build-stream"), 2);
    EXPECT_EQ(cli("--data-dir " + (dir / "nowhere").string() + cfg + " build-stream"), 3);
    EXPECT_EQ(cli("--data-dir " + fixture_data().string() + cfg + " build-stream --out " + (dir / "m.json").string()), 0);
    EXPECT_TRUE(fs::exists(dir / "m.json"));
    EXPECT_EQ(cli("inspect-weibull --checkpoint " + (dir / "none.ckpt").string()), 3);

    const auto ck = (dir / "or.ckpt").string();
    EXPECT_EQ(cli("--data-dir " + fixture_data().string() + cfg + " train --strategy or --checkpoint " + ck), 0);
    EXPECT_EQ(cli("--data-dir " + fixture_data().string() + " evaluate --checkpoint " + ck + " --out " +
                  (dir / "eval.json").string()),
              0);
    EXPECT_EQ(cli("inspect-weibull --grid 11 --checkpoint " + ck), 0);
}

TEST(Cli, SpecFileDrivesBuildAndTrain) {
    const auto dir = scratch("cli_spec");
    const auto data = " --data-dir " + fixture_data().string();
    {
        std::ofstream f(dir / "cfg.json");
        f << tiny_config().dump();
        std::ofstream s(dir / "stream.json");
        s << R"({"schema_version": 1, "dataset": "mnist", "normal_class": 0, "n_experiences": 2, "alpha": 0.5, "n_test_episodes": 3,
                 "seed": 5})";
        std::ofstream bad(dir / "unversioned.json");
        bad << R"({"dataset": "mnist", "normal_class": 0})";
        std::ofstream nc(dir / "no_class.json");
        nc << R"({"schema_version": 1, "dataset": "mnist"})";
    }
    const auto cfg = " --config " + (dir / "cfg.json").string();
    EXPECT_EQ(cli(data + " build-stream --spec " + (dir / "stream.json").string() + " --out " + (dir / "m").string()), 0);
    ASSERT_TRUE(fs::exists(dir / "m" / "manifest.json"));
    std::ifstream mf(dir / "m" / "manifest.json");
    EXPECT_EQ(nlohmann::json::parse(mf)["spec"]["seed"], 5);

    const auto ck = (dir / "from_manifest.ckpt").string();
    EXPECT_EQ(cli(data + cfg + " train --strategy naive --spec " + (dir / "m" / "manifest.json").string() +
                  " --checkpoint " + ck),
              0);
    EXPECT_EQ(load_checkpoint(ck).meta["seed"], 5);
    EXPECT_EQ(cli("inspect-weibull " + ck), 0);
    EXPECT_EQ(cli(data + " build-stream --spec " + (dir / "unversioned.json").string()), 2);
    EXPECT_EQ(cli(data + " build-stream --spec " + (dir / "absent.json").string()), 2);
    EXPECT_EQ(cli(data + " build-stream --spec " + (dir / "no_class.json").string()), 2);
}

TEST(Cli, DataDirFromEnvironment) {
    const auto dir = scratch("cli_env");
    {
        std::ofstream f(dir / "cfg.json");
        f << tiny_config().dump();
    }
    const std::string cmd = "CSAD_DATA_DIR=" + fixture_data().string() + " " + CSAD_CLI_PATH + " --config " +
                            (dir / "cfg.json").string() + " build-stream --out " + (dir / "m.json").string() +
                            " > /dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    EXPECT_TRUE(WIFEXITED(rc) && WEXITSTATUS(rc) == 0);
    EXPECT_TRUE(fs::exists(dir / "m.json"));
}
#endif
