#pragma once
// Experiment configs, the per-cell pipeline (streams -> strategy -> evaluation)
// and the idempotent grid runner that persists one ResultRecord per cell.

#include "csad/checkpoint.hpp"
#include "csad/dataset.hpp"
#include "csad/strategies.hpp"

#include <atomic>
#include <chrono>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <thread>

namespace csad {

inline constexpr int kConfigSchemaVersion = 1;

struct ExperimentConfig {
    int id = 1;
    int ablation = 1;
    std::string name;
    StreamSpec stream;
    nlohmann::json dataset_overrides = nlohmann::json::object();  // dataset -> partial stream spec
    SSVAEConfig model;
    std::vector<StrategyConfig> strategies;
    std::vector<std::uint64_t> seeds{0, 1, 2};
    std::vector<std::string> datasets{"mnist", "fashion_mnist", "cifar10"};
    nlohmann::json provenance = nlohmann::json::object();  // parameter -> "stated" | "chosen"

    [[nodiscard]] const StrategyConfig& strategy(StrategyName n) const {
        for (const auto& s : strategies)
            if (s.name == n) return s;
        throw ValidationError("experiment " + std::to_string(id) + " does not define strategy " + to_string(n));
    }

    void validate() const {
        require(id >= 1, "experiment id must be >= 1");
        require(ablation >= 1 && ablation <= 4, "ablation must be in 1..4");
        require(!strategies.empty(), "experiment defines no strategies");
        require(!seeds.empty(), "experiment defines no seeds");
        require(!datasets.empty(), "experiment defines no datasets");
        for (const auto& d : datasets) parse_dataset_id(d);
        for (const auto& s : strategies) s.validate();
        StreamSpec s = stream;
        s.normalize();
        s.validate();
        for (auto it = dataset_overrides.begin(); it != dataset_overrides.end(); ++it) parse_dataset_id(it.key());
    }
};

namespace detail {

inline StrategyConfig strategy_from(const nlohmann::json& j, const std::string& key) {
    nlohmann::json sj = j.is_object() ? j : nlohmann::json::object();
    sj["name"] = key;
    return sj.get<StrategyConfig>();
}

}  // namespace detail

/// Builds one experiment from the file-level defaults patched with the entry.
inline ExperimentConfig experiment_from_json(const nlohmann::json& defaults, const nlohmann::json& entry) {
    nlohmann::json merged = defaults;
    for (const char* k : {"stream", "model", "strategies", "dataset_overrides"})
        if (!merged.contains(k)) merged[k] = nlohmann::json::object();
    for (const char* k : {"stream", "model", "strategies", "dataset_overrides"})
        if (entry.contains(k)) merged[k].merge_patch(entry[k]);
    for (const char* k : {"seeds", "datasets"})
        if (entry.contains(k)) merged[k] = entry[k];

    ExperimentConfig c;
    try {
        c.id = entry.at("id").get<int>();
        c.ablation = entry.at("ablation").get<int>();
        c.name = entry.value("name", "experiment " + std::to_string(c.id));
        c.stream = merged["stream"].get<StreamSpec>();
        c.dataset_overrides = merged["dataset_overrides"];
        c.model = merged["model"].get<SSVAEConfig>();
        for (auto it = merged["strategies"].begin(); it != merged["strategies"].end(); ++it)
            c.strategies.push_back(detail::strategy_from(it.value(), it.key()));
        if (merged.contains("seeds")) c.seeds = merged["seeds"].get<std::vector<std::uint64_t>>();
        if (merged.contains("datasets")) c.datasets = merged["datasets"].get<std::vector<std::string>>();
        c.provenance = entry.value("provenance", nlohmann::json::object());
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("experiment config: ") + e.what());
    }
    // Fixed strategy order keeps reports and cell enumeration stable.
    std::sort(c.strategies.begin(), c.strategies.end(),
              [](const StrategyConfig& a, const StrategyConfig& b) { return a.name < b.name; });
    c.validate();
    return c;
}

inline std::vector<ExperimentConfig> parse_experiment_file(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("schema_version"))
        throw ValidationError("experiment config: missing schema_version");
    if (j["schema_version"] != kConfigSchemaVersion)
        throw ValidationError("experiment config: unsupported schema_version " + j["schema_version"].dump());
    if (!j.contains("experiments") || !j["experiments"].is_array())
        throw ValidationError("experiment config: 'experiments' must be an array");
    const auto defaults = j.value("defaults", nlohmann::json::object());
    std::vector<ExperimentConfig> out;
    for (const auto& e : j["experiments"]) {
        out.push_back(experiment_from_json(defaults, e));
        for (std::size_t i = 0; i + 1 < out.size(); ++i)
            if (out[i].id == out.back().id)
                throw ValidationError("experiment config: duplicate id " + std::to_string(out.back().id));
    }
    return out;
}

inline std::vector<ExperimentConfig> load_experiment_file(const std::filesystem::path& p) {
    std::ifstream f(p);
    if (!f) throw ValidationError("cannot open config " + p.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(f, nullptr, true, true);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("config " + p.string() + " is not valid JSON: " + e.what());
    }
    return parse_experiment_file(j);
}

inline const ExperimentConfig& find_experiment(const std::vector<ExperimentConfig>& all, int id) {
    for (const auto& e : all)
        if (e.id == id) return e;
    throw ValidationError("no experiment with id " + std::to_string(id));
}

/// Stream spec for one (dataset, seed) cell: experiment defaults, then the dataset override.
inline StreamSpec resolve_stream_spec(const ExperimentConfig& c, const std::string& dataset, std::uint64_t seed) {
    nlohmann::json s = c.stream;
    if (c.dataset_overrides.contains(dataset)) s.merge_patch(c.dataset_overrides[dataset]);
    auto spec = s.get<StreamSpec>();
    spec.dataset = dataset;
    spec.seed = seed;
    spec.normalize();
    spec.validate();
    return spec;
}

inline SSVAEConfig resolve_model_config(const ExperimentConfig& c, const std::string& dataset) {
    SSVAEConfig m = c.model;
    const auto shape = image_shape_of(parse_dataset_id(dataset));
    m.input_dim = shape.size();
    m.image_shape = shape;
    m.validate();
    return m;
}

/// Everything that determines a cell's numbers.
inline nlohmann::json cell_identity(const ExperimentConfig& c, const std::string& dataset, const StrategyConfig& s,
                                    std::uint64_t seed) {
    return {{"schema_version", kConfigSchemaVersion},
            {"experiment_id", c.id},
            {"dataset", dataset},
            {"seed", seed},
            {"stream", resolve_stream_spec(c, dataset, seed)},
            {"model", resolve_model_config(c, dataset)},
            {"strategy", s}};
}

inline std::string config_hash(const ExperimentConfig& c, const std::string& dataset, const StrategyConfig& s,
                               std::uint64_t seed) {
    return sha256_hex(cell_identity(c, dataset, s, seed).dump());
}

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

struct BinaryPair {
    std::shared_ptr<const BinaryDataset> train;
    std::shared_ptr<const BinaryDataset> test;
};

/// Loads each dataset once and keeps its binary relabelling per normal class.
class DataCache {
public:
    explicit DataCache(std::filesystem::path root) : root_(std::move(root)) {}

    BinaryPair get(const std::string& dataset, int normal_class) {
        std::lock_guard lock(mu_);
        const auto key = dataset + "#" + std::to_string(normal_class);
        if (auto it = binary_.find(key); it != binary_.end()) return it->second;
        auto& raw = raw_for(dataset);
        BinaryPair p{std::make_shared<const BinaryDataset>(apply_anomaly_transform(raw.first, normal_class)),
                     std::make_shared<const BinaryDataset>(apply_anomaly_transform(raw.second, normal_class))};
        binary_.emplace(key, p);
        return p;
    }

private:
    std::pair<RawDataset, RawDataset>& raw_for(const std::string& dataset) {
        if (auto it = raw_.find(dataset); it != raw_.end()) return it->second;
        const auto id = parse_dataset_id(dataset);
        auto tr = load_dataset(root_, id, Split::train);
        auto te = load_dataset(root_, id, Split::test);
        return raw_.emplace(dataset, std::make_pair(std::move(tr), std::move(te))).first->second;
    }

    std::filesystem::path root_;
    std::mutex mu_;
    std::map<std::string, std::pair<RawDataset, RawDataset>> raw_;
    std::map<std::string, BinaryPair> binary_;
};

inline StreamBundle build_cell_streams(const BinaryPair& data, const StreamSpec& spec) {
    StreamBundle b;
    b.train = build_training_stream(data.train, spec);
    b.validation = build_validation_stream(b.train, spec.val_fraction);
    b.test = build_test_stream(data.test, spec.n_test_episodes, spec.seed, b.train.spec);
    return b;
}

// ---------------------------------------------------------------------------
// One cell
// ---------------------------------------------------------------------------

struct CellOutcome {
    ResultRecord record;
    Checkpoint checkpoint;
};

inline CellOutcome run_cell(const ExperimentConfig& c, const StreamBundle& streams, const std::string& dataset,
                            const StrategyConfig& sc, std::uint64_t seed) {
    const auto t0 = std::chrono::steady_clock::now();
    SSVAEModel model(resolve_model_config(c, dataset), derive_seed(seed, "init"));
    const RunContext ctx{seed, &streams.validation, &streams.test};
    const auto run = run_strategy(model, streams.train, ctx, sc);
    const auto final = evaluate_stream(model, streams.test, seed);

    CellOutcome out;
    auto& r = out.record;
    r.dataset = dataset;
    r.strategy = to_string(sc.name);
    r.experiment_id = c.id;
    r.seed = seed;
    r.episodes = final;
    r.mean_auc = mean_auc(final);
    r.config_hash = config_hash(c, dataset, sc, seed);
    r.forgetting = final_vs_during(run.during, final);
    r.strategy_config = sc;
    r.extra = run.diagnostics();
    r.extra["stream_content_hash"] = stream_manifest(streams.train, streams.validation, streams.test)["content_hash"];
    r.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    auto& ck = out.checkpoint;
    ck.model = std::move(model);
    ck.strategy = r.strategy;
    for (auto it = run.weibulls.rbegin(); it != run.weibulls.rend(); ++it)
        if (*it) {
            ck.weibull = **it;
            break;
        }
    ck.z_bar = run.z_bar;
    ck.acceptance_rates = run.acceptance_rates;
    ck.thresholds = run.thresholds;
    ck.rng_state = rng_state_string(Rng(derive_seed(seed, "replay", streams.train.size())));
    ck.meta = {{"experiment_id", c.id},
               {"dataset", dataset},
               {"seed", seed},
               {"stream", streams.train.spec},
               {"config_hash", r.config_hash}};
    return out;
}

// ---------------------------------------------------------------------------
// Grid
// ---------------------------------------------------------------------------

struct Cell {
    std::string dataset;
    StrategyConfig strategy;
    std::uint64_t seed = 0;
};

struct CellFailure {
    Cell cell;
    std::string stage;
    std::string error_class;  // config | data | divergence | internal
    std::string message;
};

struct RunOptions {
    std::filesystem::path data_root = "data";
    std::filesystem::path results_root = "results";
    bool force = false;
    bool save_checkpoints = false;
    unsigned jobs = 1;
    std::vector<std::string> datasets;    // empty -> all in the config
    std::vector<std::string> strategies;  // empty -> all in the config
    std::vector<std::uint64_t> seeds;     // empty -> config seeds
    std::function<void(const std::string&)> log;
};

struct RunSummary {
    std::size_t ran = 0;
    std::size_t skipped = 0;
    std::vector<CellFailure> failures;
    std::vector<ResultRecord> records;  // records written in this invocation
};

/// Dataset-major, then seed, then strategy.
inline std::vector<Cell> enumerate_cells(const ExperimentConfig& c, const RunOptions& o) {
    auto keep = [](const std::vector<std::string>& filter, const std::string& v) {
        return filter.empty() || std::find(filter.begin(), filter.end(), v) != filter.end();
    };
    const auto& seeds = o.seeds.empty() ? c.seeds : o.seeds;
    std::vector<Cell> cells;
    for (const auto& d : c.datasets) {
        if (!keep(o.datasets, d)) continue;
        for (auto seed : seeds)
            for (const auto& s : c.strategies) {
                const auto name = to_string(s.name);
                if (!keep(o.strategies, name) && !(name == "or" && keep(o.strategies, "outlier_rejection"))) continue;
                cells.push_back({d, s, seed});
            }
    }
    return cells;
}

inline std::string error_class_of(const std::exception& e) {
    if (dynamic_cast<const DivergenceError*>(&e)) return "divergence";
    if (dynamic_cast<const FormatError*>(&e) || dynamic_cast<const CapacityError*>(&e)) return "data";
    if (dynamic_cast<const ValidationError*>(&e)) return "config";
    return "internal";
}

inline int exit_code_for(const std::string& error_class) {
    if (error_class == "config") return 2;
    if (error_class == "data") return 3;
    if (error_class == "divergence") return 4;
    return 1;
}

/// A result file counts as done when it parses and carries the expected config hash.
inline bool result_is_current(const std::filesystem::path& p, const std::string& hash) {
    if (!std::filesystem::exists(p)) return false;
    try {
        return read_result(p).config_hash == hash;
    } catch (const std::exception&) {
        return false;
    }
}

inline nlohmann::json failures_json(const std::vector<CellFailure>& fs) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& f : fs)
        j.push_back({{"dataset", f.cell.dataset},
                     {"strategy", to_string(f.cell.strategy.name)},
                     {"seed", f.cell.seed},
                     {"stage", f.stage},
                     {"error_class", f.error_class},
                     {"message", f.message}});
    return j;
}

/// Runs every pending cell, skipping those whose result file is current unless
/// `force` is set. Failures are collected into <results>/<id>/failures.json and
/// do not stop the remaining cells.
inline RunSummary run_experiment(const ExperimentConfig& c, const RunOptions& o, DataCache* shared_cache = nullptr) {
    c.validate();
    const auto cells = enumerate_cells(c, o);
    std::unique_ptr<DataCache> own;
    DataCache* cache = shared_cache;
    if (!cache) {
        own = std::make_unique<DataCache>(o.data_root);
        cache = own.get();
    }

    RunSummary summary;
    std::mutex mu;
    std::atomic<std::size_t> next{0};
    auto log = [&](const std::string& m) {
        if (!o.log) return;
        std::lock_guard lock(mu);
        o.log(m);
    };

    auto worker = [&] {
        for (std::size_t i = next++; i < cells.size(); i = next++) {
            const auto& cell = cells[i];
            const auto label = "experiment " + std::to_string(c.id) + " " + cell.dataset + "/" +
                               to_string(cell.strategy.name) + "/seed " + std::to_string(cell.seed);
            std::string stage = "config";
            try {
                const auto spec = resolve_stream_spec(c, cell.dataset, cell.seed);
                const auto hash = config_hash(c, cell.dataset, cell.strategy, cell.seed);
                const auto path = result_path(o.results_root, c.id, cell.dataset, to_string(cell.strategy.name), cell.seed);
                if (!o.force && result_is_current(path, hash)) {
                    std::lock_guard lock(mu);
                    ++summary.skipped;
                    continue;
                }
                stage = "data";
                const auto data = cache->get(cell.dataset, spec.normal_class);
                stage = "stream";
                const auto streams = build_cell_streams(data, spec);
                stage = "train";
                log(label + ": running");
                auto outcome = run_cell(c, streams, cell.dataset, cell.strategy, cell.seed);
                stage = "persist";
                write_result(o.results_root, outcome.record);
                if (o.save_checkpoints) {
                    auto ck = path;
                    ck.replace_extension(".ckpt");
                    save_checkpoint(ck, outcome.checkpoint);
                }
                std::ostringstream msg;
                msg << label << ": mean AUC " << std::fixed << std::setprecision(4) << outcome.record.mean_auc << " ("
                    << std::setprecision(1) << outcome.record.wall_clock_seconds << " s)";
                log(msg.str());
                std::lock_guard lock(mu);
                ++summary.ran;
                summary.records.push_back(std::move(outcome.record));
            } catch (const std::exception& e) {
                const auto cls = error_class_of(e);
                log(label + ": failed during " + stage + " (" + cls + "): " + e.what());
                std::lock_guard lock(mu);
                summary.failures.push_back({cell, stage, cls, e.what()});
            }
        }
    };

    const unsigned n = std::max(1u, std::min<unsigned>(o.jobs, static_cast<unsigned>(std::max<std::size_t>(1, cells.size()))));
    if (n == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < n; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    auto key = [](const Cell& x) { return std::make_tuple(x.dataset, static_cast<int>(x.strategy.name), x.seed); };
    std::sort(summary.failures.begin(), summary.failures.end(),
              [&](const CellFailure& a, const CellFailure& b) { return key(a.cell) < key(b.cell); });
    std::sort(summary.records.begin(), summary.records.end(), [](const ResultRecord& a, const ResultRecord& b) {
        return std::tie(a.dataset, a.strategy, a.seed) < std::tie(b.dataset, b.strategy, b.seed);
    });
    const auto manifest = o.results_root / std::to_string(c.id) / "failures.json";
    if (!summary.failures.empty()) atomic_write(manifest, failures_json(summary.failures).dump(2) + "\n");
    else if (std::filesystem::exists(manifest)) std::filesystem::remove(manifest);
    return summary;
}

}  // namespace csad
