#pragma once
// ELBO anomaly scoring over test episodes and AUC-ROC.

#include "csad/ssvae.hpp"
#include "csad/stream.hpp"

#include <chrono>
#include <fstream>
#include <optional>

namespace csad {

class UndefinedAucError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// Area under the ROC curve (label 1 = anomaly, higher score = more anomalous).
/// Computed by sorting and sweeping tie groups with the trapezoid rule, which is the
/// Mann-Whitney statistic with half credit for ties.
inline double auc_roc(std::span<const double> scores, std::span<const int> labels) {
    require(scores.size() == labels.size(), "auc_roc: scores/labels size mismatch");
    std::size_t n_pos = 0;
    for (int y : labels) {
        require(y == 0 || y == 1, "auc_roc: labels must be 0/1");
        n_pos += static_cast<std::size_t>(y);
    }
    const std::size_t n_neg = labels.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) throw UndefinedAucError("auc_roc: only one class present");
    for (double s : scores)
        if (std::isnan(s)) throw ValidationError("auc_roc: NaN score");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    // Integer arithmetic: area * 2 = sum over tie groups of neg_g * (2*tp_before + pos_g).
    std::uint64_t tp = 0, twice_area = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        std::uint64_t pos_g = 0, neg_g = 0;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            (labels[order[j]] ? pos_g : neg_g) += 1;
            ++j;
        }
        twice_area += neg_g * (2 * tp + pos_g);
        tp += pos_g;
        i = j;
    }
    return static_cast<double>(twice_area) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

struct EpisodeResult {
    std::size_t episode_index = 0;
    std::optional<double> auc;  // missing when the episode holds a single class
    std::size_t n_samples = 0;
    std::size_t n_anomalies = 0;
};

inline double mean_auc(const std::vector<EpisodeResult>& eps) {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& e : eps)
        if (e.auc) {
            s += *e.auc;
            ++n;
        }
    return n ? s / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

/// Scores one episode's samples; the episode's ground truth is read only here.
inline EpisodeResult evaluate_episode(const SSVAEModel& model, const Experience& episode, std::uint64_t seed) {
    EpisodeResult r;
    r.episode_index = episode.index();
    const Matrix x = episode.x_unlabelled();
    const auto& y = GroundTruth::unlabelled_labels(episode);
    r.n_samples = y.size();
    r.n_anomalies = static_cast<std::size_t>(std::count(y.begin(), y.end(), 1));
    if (r.n_anomalies == 0 || r.n_anomalies == r.n_samples) {
        warn("evaluate: episode " + std::to_string(r.episode_index) + " holds a single class; AUC left missing");
        return r;
    }
    const Vector s = model.elbo_score(x, seed);
    r.auc = auc_roc(std::span<const double>(s.data(), static_cast<std::size_t>(s.size())), y);
    return r;
}

inline std::vector<EpisodeResult> evaluate_stream(const SSVAEModel& model, const Stream& test, std::uint64_t seed) {
    std::vector<EpisodeResult> out;
    out.reserve(test.size());
    for (const auto& ep : test.experiences) out.push_back(evaluate_episode(model, ep, derive_seed(seed, "eval", ep.index())));
    return out;
}

/// AUC of each test episode measured right after the matching training experience,
/// against the AUC at the end of the stream.
struct ForgettingEntry {
    std::size_t experience = 0;
    std::optional<double> during;
    std::optional<double> final;
    [[nodiscard]] std::optional<double> forgetting() const {
        if (during && final) return *during - *final;
        return std::nullopt;
    }
};

/// `during[e]` holds the episode-e result recorded after experience e; `final` is the
/// end-of-stream evaluation. One entry per experience.
inline std::vector<ForgettingEntry> final_vs_during(const std::vector<EpisodeResult>& during,
                                                    const std::vector<EpisodeResult>& final) {
    std::vector<ForgettingEntry> out;
    for (std::size_t e = 0; e < during.size(); ++e) {
        ForgettingEntry f;
        f.experience = e;
        f.during = during[e].auc;
        for (const auto& r : final)
            if (r.episode_index == during[e].episode_index) f.final = r.auc;
        out.push_back(f);
    }
    return out;
}

struct ResultRecord {
    std::string dataset;
    std::string strategy;
    int experiment_id = 0;
    std::uint64_t seed = 0;
    std::vector<EpisodeResult> episodes;
    double mean_auc = std::numeric_limits<double>::quiet_NaN();
    std::string config_hash;
    double wall_clock_seconds = 0.0;
    std::vector<ForgettingEntry> forgetting;
    nlohmann::json strategy_config;  // hyperparameters echoed for provenance
    nlohmann::json extra;            // acceptance-rate history and similar diagnostics
};

inline nlohmann::json optional_json(const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}
inline std::optional<double> optional_from(const nlohmann::json& j) {
    if (j.is_null()) return std::nullopt;
    return j.get<double>();
}

inline void to_json(nlohmann::json& j, const ResultRecord& r) {
    nlohmann::json eps = nlohmann::json::array();
    for (const auto& e : r.episodes)
        eps.push_back({{"episode", e.episode_index},
                       {"auc", optional_json(e.auc)},
                       {"n_samples", e.n_samples},
                       {"n_anomalies", e.n_anomalies}});
    nlohmann::json fg = nlohmann::json::array();
    for (const auto& f : r.forgetting)
        fg.push_back({{"experience", f.experience},
                      {"during", optional_json(f.during)},
                      {"final", optional_json(f.final)},
                      {"forgetting", optional_json(f.forgetting())}});
    j = nlohmann::json{{"schema_version", 1},
                       {"dataset", r.dataset},
                       {"strategy", r.strategy},
                       {"experiment_id", r.experiment_id},
                       {"seed", r.seed},
                       {"episodes", eps},
                       {"mean_auc", std::isnan(r.mean_auc) ? nlohmann::json(nullptr) : nlohmann::json(r.mean_auc)},
                       {"config_hash", r.config_hash},
                       {"wall_clock_seconds", r.wall_clock_seconds},
                       {"forgetting", fg},
                       {"strategy_config", r.strategy_config},
                       {"extra", r.extra}};
}

inline void from_json(const nlohmann::json& j, ResultRecord& r) {
    r.dataset = j.at("dataset").get<std::string>();
    r.strategy = j.at("strategy").get<std::string>();
    r.experiment_id = j.at("experiment_id").get<int>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.episodes.clear();
    for (const auto& e : j.at("episodes"))
        r.episodes.push_back({e.at("episode").get<std::size_t>(), optional_from(e.at("auc")),
                              e.at("n_samples").get<std::size_t>(), e.at("n_anomalies").get<std::size_t>()});
    r.mean_auc = j.at("mean_auc").is_null() ? std::numeric_limits<double>::quiet_NaN() : j.at("mean_auc").get<double>();
    r.config_hash = j.value("config_hash", std::string());
    r.wall_clock_seconds = j.value("wall_clock_seconds", 0.0);
    r.forgetting.clear();
    if (j.contains("forgetting"))
        for (const auto& f : j.at("forgetting"))
            r.forgetting.push_back({f.at("experience").get<std::size_t>(), optional_from(f.at("during")),
                                    optional_from(f.at("final"))});
    r.strategy_config = j.value("strategy_config", nlohmann::json::object());
    r.extra = j.value("extra", nlohmann::json::object());
}

/// One row per episode.
inline std::string result_csv(const ResultRecord& r) {
    std::ostringstream os;
    os.precision(17);
    os << "experiment_id,dataset,strategy,seed,episode,auc,n_samples,n_anomalies\n";
    for (const auto& e : r.episodes) {
        os << r.experiment_id << ',' << r.dataset << ',' << r.strategy << ',' << r.seed << ',' << e.episode_index
           << ',';
        if (e.auc) os << *e.auc;
        os << ',' << e.n_samples << ',' << e.n_anomalies << '\n';
    }
    return os.str();
}

/// Writes `content` to `path` via a temporary file and rename.
inline void atomic_write(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw Error("cannot open " + tmp.string() + " for writing");
        f << content;
        if (!f) throw Error("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

/// results/<experiment>/<dataset>/<strategy>/<seed>.json (and .csv alongside).
inline std::filesystem::path result_path(const std::filesystem::path& root, int experiment_id,
                                         const std::string& dataset, const std::string& strategy,
                                         std::uint64_t seed) {
    return root / std::to_string(experiment_id) / dataset / strategy / (std::to_string(seed) + ".json");
}

inline void write_result(const std::filesystem::path& root, const ResultRecord& r) {
    const auto p = result_path(root, r.experiment_id, r.dataset, r.strategy, r.seed);
    auto csv = p;
    csv.replace_extension(".csv");
    atomic_write(csv, result_csv(r));
    atomic_write(p, nlohmann::json(r).dump(2) + "\n");
}

inline ResultRecord read_result(const std::filesystem::path& p) {
    std::ifstream f(p);
    if (!f) throw Error("cannot open " + p.string());
    return nlohmann::json::parse(f).get<ResultRecord>();
}

}  // namespace csad
