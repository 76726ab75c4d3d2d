#pragma once
// Continual training regimes over a stream: naive fine-tuning, joint training,
// EWC, and generative replay with EVT outlier rejection.

#include "csad/eval.hpp"
#include "csad/evt.hpp"
#include "csad/trainer.hpp"

namespace csad {

enum class StrategyName { naive, joint, ewc, outlier_rejection };

inline std::string to_string(StrategyName s) {
    switch (s) {
        case StrategyName::naive: return "naive";
        case StrategyName::joint: return "joint";
        case StrategyName::ewc: return "ewc";
        case StrategyName::outlier_rejection: return "or";
    }
    return "?";
}

inline StrategyName parse_strategy(std::string_view s) {
    if (s == "naive") return StrategyName::naive;
    if (s == "joint") return StrategyName::joint;
    if (s == "ewc") return StrategyName::ewc;
    if (s == "or" || s == "outlier_rejection") return StrategyName::outlier_rejection;
    throw ValidationError("unknown strategy '" + std::string(s) + "'");
}

inline std::vector<double> default_threshold_grid() {
    std::vector<double> g;
    for (int i = 1; i <= 19; ++i) g.push_back(0.05 * i);
    return g;
}

struct StrategyConfig {
    StrategyName name = StrategyName::naive;
    double ewc_lambda = 100.0;
    std::size_t fisher_samples = 1024;
    double replay_ratio = 1.0;
    std::optional<double> rejection_threshold;  // nullopt -> validation sweep ("auto")
    double tail_fraction = 0.25;
    std::size_t min_fit = kMinWeibullFit;
    std::size_t max_attempts = 100;             // draw budget per requested replay sample
    std::vector<double> threshold_grid = default_threshold_grid();
    double fallback_threshold = 0.5;            // used when the sweep cannot score

    void validate() const {
        require(ewc_lambda >= 0.0, "ewc_lambda must be >= 0");
        require(fisher_samples >= 1, "fisher_samples must be >= 1");
        require(replay_ratio >= 0.0, "replay_ratio must be >= 0");
        if (rejection_threshold)
            require(*rejection_threshold > 0.0 && *rejection_threshold <= 1.0, "rejection_threshold must be in (0,1]");
        require(tail_fraction > 0.0 && tail_fraction <= 1.0, "tail_fraction must be in (0,1]");
        require(max_attempts >= 1, "max_attempts must be >= 1");
        require(!threshold_grid.empty(), "threshold_grid must be non-empty");
        for (double t : threshold_grid) require(t > 0.0 && t <= 1.0, "threshold_grid entries must be in (0,1]");
        require(fallback_threshold > 0.0 && fallback_threshold <= 1.0, "fallback_threshold must be in (0,1]");
    }
};

inline void to_json(nlohmann::json& j, const StrategyConfig& c) {
    j = nlohmann::json{{"name", to_string(c.name)},
                       {"ewc_lambda", c.ewc_lambda},
                       {"fisher_samples", c.fisher_samples},
                       {"replay_ratio", c.replay_ratio},
                       {"rejection_threshold",
                        c.rejection_threshold ? nlohmann::json(*c.rejection_threshold) : nlohmann::json("auto")},
                       {"tail_fraction", c.tail_fraction},
                       {"min_fit", c.min_fit},
                       {"max_attempts", c.max_attempts},
                       {"threshold_grid", c.threshold_grid},
                       {"fallback_threshold", c.fallback_threshold}};
}

inline void from_json(const nlohmann::json& j, StrategyConfig& c) {
    StrategyConfig d;
    c.name = parse_strategy(j.value("name", std::string("naive")));
    c.ewc_lambda = j.value("ewc_lambda", d.ewc_lambda);
    c.fisher_samples = j.value("fisher_samples", d.fisher_samples);
    c.replay_ratio = j.value("replay_ratio", d.replay_ratio);
    c.rejection_threshold.reset();
    if (j.contains("rejection_threshold")) {
        const auto& t = j.at("rejection_threshold");
        if (t.is_number()) c.rejection_threshold = t.get<double>();
        else if (!(t.is_string() && t.get<std::string>() == "auto"))
            throw ValidationError("rejection_threshold must be a number or \"auto\"");
    }
    c.tail_fraction = j.value("tail_fraction", d.tail_fraction);
    c.min_fit = j.value("min_fit", d.min_fit);
    c.max_attempts = j.value("max_attempts", d.max_attempts);
    c.threshold_grid = j.value("threshold_grid", d.threshold_grid);
    c.fallback_threshold = j.value("fallback_threshold", d.fallback_threshold);
}

// ---------------------------------------------------------------------------
// EWC
// ---------------------------------------------------------------------------
struct FisherDiag {
    nn::Grads importance;        // >= 0, parameter-shaped
    std::vector<Matrix> anchor;  // parameters at the end of the experience
};

/// Gradient of the per-sample loss: labelled rows use the labelled loss, unlabelled
/// rows the marginalised loss. `row` indexes labelled rows first.
inline nn::Grads per_sample_gradient(const SSVAEModel& model, const TrainingView& data, std::size_t row, Rng& rng) {
    auto g = model.zero_grads();
    const int L = model.config.latent_dim;
    const auto nl = static_cast<std::size_t>(data.x_labelled.rows());
    if (row < nl) {
        const Matrix x = data.x_labelled.row(static_cast<Eigen::Index>(row));
        const int y = data.y_labelled[row];
        model.loss_labelled(x, std::span<const int>(&y, 1), standard_normal(1, L, rng), &g);
    } else {
        const Matrix x = data.x_unlabelled.row(static_cast<Eigen::Index>(row - nl));
        std::vector<Matrix> noise;
        for (int k = 0; k < model.config.n_classes; ++k) noise.push_back(standard_normal(1, L, rng));
        model.loss_unlabelled(x, noise, &g);
    }
    return g;
}

/// Diagonal empirical Fisher: mean of squared per-sample gradients over up to
/// `n_samples` rows drawn without replacement.
inline FisherDiag compute_fisher(const SSVAEModel& model, const TrainingView& data, std::size_t n_samples,
                                 std::uint64_t seed) {
    require(!data.empty(), "compute_fisher: empty data");
    Rng rng(seed);
    const auto total = static_cast<std::size_t>(data.x_labelled.rows() + data.x_unlabelled.rows());
    std::vector<std::size_t> rows(total);
    std::iota(rows.begin(), rows.end(), 0);
    shuffle_in_place(rows, rng);
    rows.resize(std::min(n_samples, total));

    FisherDiag f;
    f.importance = model.zero_grads();
    for (auto r : rows) {
        const auto g = per_sample_gradient(model, data, r, rng);
        for (std::size_t i = 0; i < g.size(); ++i) f.importance[i].array() += g[i].array().square();
    }
    for (auto& m : f.importance) m /= static_cast<double>(rows.size());
    for (const auto* p : model.params()) f.anchor.push_back(*p);
    return f;
}

/// (lambda / 2) * sum_i F_i (theta_i - anchor_i)^2, summed over all anchors;
/// accumulates lambda * F * (theta - anchor) into `grads` when given.
inline double ewc_penalty(const SSVAEModel& model, std::span<const FisherDiag> fishers, double lambda,
                          nn::Grads* grads = nullptr) {
    const auto params = model.params();
    double pen = 0.0;
    for (const auto& f : fishers) {
        if (f.importance.size() != params.size() || f.anchor.size() != params.size())
            throw ValidationError("ewc_penalty: Fisher does not match the model's parameter list");
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (f.importance[i].rows() != params[i]->rows() || f.importance[i].cols() != params[i]->cols() ||
                f.anchor[i].rows() != params[i]->rows() || f.anchor[i].cols() != params[i]->cols())
                throw ValidationError("ewc_penalty: shape mismatch in parameter " + std::to_string(i));
            const auto diff = (params[i]->array() - f.anchor[i].array());
            pen += 0.5 * lambda * (f.importance[i].array() * diff.square()).sum();
            if (grads) (*grads)[i].array() += lambda * f.importance[i].array() * diff;
        }
    }
    return pen;
}

// ---------------------------------------------------------------------------
// Stream access
// ---------------------------------------------------------------------------

/// Forward-only access to a training stream: an experience can be taken once and
/// never revisited.
class ExperienceCursor {
public:
    explicit ExperienceCursor(const Stream& s) : stream_(&s) {}
    [[nodiscard]] bool done() const { return next_ >= stream_->size(); }
    [[nodiscard]] std::size_t position() const { return next_; }
    TrainingView take() {
        if (done()) throw ValidationError("experience cursor exhausted");
        return stream_->training_view(next_++);
    }

private:
    const Stream* stream_;
    std::size_t next_ = 0;
};

struct StrategyRun {
    std::vector<TrainingHistory> histories;  // one per training event
    std::vector<EpisodeResult> during;       // test episode e evaluated after experience e
    std::vector<std::optional<WeibullModel>> weibulls;
    std::vector<double> thresholds;
    std::vector<double> acceptance_rates;
    std::vector<std::size_t> replay_sizes;
    RowVector z_bar;
    std::vector<std::string> notes;

    [[nodiscard]] nlohmann::json diagnostics() const {
        nlohmann::json j;
        j["epochs_per_event"] = nlohmann::json::array();
        for (const auto& h : histories) j["epochs_per_event"].push_back(h.epochs.size());
        nlohmann::json w = nlohmann::json::array();
        for (const auto& m : weibulls) w.push_back(m ? nlohmann::json(*m) : nlohmann::json(nullptr));
        j["weibull"] = w;
        j["thresholds"] = thresholds;
        j["acceptance_rates"] = acceptance_rates;
        j["replay_sizes"] = replay_sizes;
        j["notes"] = notes;
        return j;
    }
};

struct RunContext {
    std::uint64_t seed = 0;
    const Stream* validation = nullptr;  // same experience count as the training stream
    const Stream* snapshot_test = nullptr;  // when set, episode e is scored after experience e
};

namespace detail {

inline TrainingView validation_view(const RunContext& ctx, std::size_t e) {
    if (!ctx.validation || e >= ctx.validation->size()) return {};
    return ctx.validation->training_view(e);
}

inline TrainOptions train_options(const RunContext& ctx, std::size_t e, const Penalty* pen = nullptr) {
    return {derive_seed(ctx.seed, "train", e), derive_seed(ctx.seed, "val-noise", e), pen};
}

inline void snapshot(const SSVAEModel& model, const RunContext& ctx, std::size_t e, StrategyRun& run) {
    if (!ctx.snapshot_test || e >= ctx.snapshot_test->size()) return;
    const auto& ep = ctx.snapshot_test->experiences[e];
    run.during.push_back(evaluate_episode(model, ep, derive_seed(ctx.seed, "eval", ep.index())));
}

inline TrainingView replay_view(const ReplaySet& r) {
    TrainingView v;
    v.x_labelled = r.x;
    v.y_labelled.assign(static_cast<std::size_t>(r.x.rows()), 0);
    v.x_unlabelled.resize(0, r.x.cols());
    return v;
}

}  // namespace detail

inline StrategyRun train_naive(SSVAEModel& model, const Stream& train, const RunContext& ctx) {
    require(!train.empty(), "train_naive: empty stream");
    StrategyRun run;
    ExperienceCursor cur(train);
    while (!cur.done()) {
        const auto e = cur.position();
        const auto view = cur.take();
        const auto val = detail::validation_view(ctx, e);
        run.histories.push_back(train_one_experience(model, view, &val, nullptr, detail::train_options(ctx, e)));
        detail::snapshot(model, ctx, e, run);
    }
    return run;
}

/// All experiences concatenated and trained as one. Reads the whole stream at once.
inline StrategyRun train_joint(SSVAEModel& model, const Stream& train, const RunContext& ctx) {
    require(!train.empty(), "train_joint: empty stream");
    StrategyRun run;
    TrainingView all = train.training_view(0);
    TrainingView val = detail::validation_view(ctx, 0);
    for (std::size_t e = 1; e < train.size(); ++e) {
        all = concat_views(all, train.training_view(e));
        val = concat_views(val, detail::validation_view(ctx, e));
    }
    run.histories.push_back(train_one_experience(model, all, &val, nullptr, detail::train_options(ctx, 0)));
    for (std::size_t e = 0; e < train.size(); ++e) detail::snapshot(model, ctx, e, run);
    return run;
}

inline StrategyRun train_ewc(SSVAEModel& model, const Stream& train, const RunContext& ctx, const StrategyConfig& cfg) {
    require(!train.empty(), "train_ewc: empty stream");
    StrategyRun run;
    std::vector<FisherDiag> fishers;
    const Penalty penalty = [&](const SSVAEModel& m, nn::Grads* g) {
        return ewc_penalty(m, fishers, cfg.ewc_lambda, g);
    };
    ExperienceCursor cur(train);
    while (!cur.done()) {
        const auto e = cur.position();
        const auto view = cur.take();
        const auto val = detail::validation_view(ctx, e);
        const bool active = cfg.ewc_lambda > 0.0 && !fishers.empty();
        run.histories.push_back(
            train_one_experience(model, view, &val, nullptr, detail::train_options(ctx, e, active ? &penalty : nullptr)));
        detail::snapshot(model, ctx, e, run);
        if (cfg.ewc_lambda > 0.0 && !cur.done())
            fishers.push_back(compute_fisher(model, view, cfg.fisher_samples, derive_seed(ctx.seed, "fisher", e)));
    }
    return run;
}

/// Validation AUC after training a copy of the model for one epoch on a replay set
/// generated at `threshold`. Returns nullopt when the validation set cannot score.
inline std::optional<double> threshold_score(const SSVAEModel& model, const WeibullModel& w, const RowVector& z_bar,
                                             double threshold, std::size_t n, const StrategyConfig& cfg,
                                             const TrainingView& val, std::uint64_t seed) {
    const auto n_anom = static_cast<std::size_t>(std::count(val.y_labelled.begin(), val.y_labelled.end(), 1));
    if (n_anom == 0 || n_anom == val.y_labelled.size()) return std::nullopt;
    Rng rng(derive_seed(seed, "sweep-replay"));
    const auto replay = sample_with_rejection(model, &w, z_bar, threshold, n, cfg.max_attempts, rng);
    if (replay.x.rows() == 0) return std::nullopt;
    SSVAEModel copy = model;
    copy.config.max_epochs = 1;
    train_one_experience(copy, detail::replay_view(replay), nullptr, nullptr,
                         {derive_seed(seed, "sweep-train"), 0, nullptr});
    const Vector s = copy.elbo_score(val.x_labelled, derive_seed(seed, "sweep-eval"));
    return auc_roc(std::span<const double>(s.data(), static_cast<std::size_t>(s.size())), val.y_labelled);
}

inline StrategyRun train_outlier_rejection(SSVAEModel& model, const Stream& train, const RunContext& ctx,
                                           const StrategyConfig& cfg) {
    require(!train.empty(), "train_outlier_rejection: empty stream");
    StrategyRun run;
    std::optional<TrainingView> replay;
    ExperienceCursor cur(train);
    while (!cur.done()) {
        const auto e = cur.position();
        const auto view = cur.take();
        const auto val = detail::validation_view(ctx, e);
        run.histories.push_back(
            train_one_experience(model, view, &val, replay ? &*replay : nullptr, detail::train_options(ctx, e)));
        detail::snapshot(model, ctx, e, run);
        replay.reset();
        if (cur.done()) break;

        const auto n = static_cast<std::size_t>(std::ceil(cfg.replay_ratio * static_cast<double>(view.y_labelled.size()) - 1e-9));
        if (n == 0) continue;

        std::optional<WeibullModel> weibull;
        RowVector z_bar = RowVector::Zero(model.config.latent_dim);
        std::vector<std::size_t> normal_rows;
        for (std::size_t r = 0; r < view.y_labelled.size(); ++r)
            if (view.y_labelled[r] == 0) normal_rows.push_back(r);
        try {
            if (normal_rows.empty()) throw FitError("no labelled normals in experience");
            const auto summary = compute_latent_summary(model, gather_rows(view.x_labelled, normal_rows));
            z_bar = summary.z_bar;
            weibull = fit_weibull(summary.distances, cfg.tail_fraction, cfg.min_fit);
        } catch (const FitError& err) {
            const std::string msg = "experience " + std::to_string(e) + ": Weibull fit failed (" + err.what() +
                                    "); replaying without rejection";
            warn(msg);
            run.notes.push_back(msg);
        }

        double threshold = 1.0;
        if (weibull) {
            if (cfg.rejection_threshold) {
                threshold = *cfg.rejection_threshold;
            } else {
                std::optional<double> best;
                for (std::size_t k = 0; k < cfg.threshold_grid.size(); ++k) {
                    const auto sc = threshold_score(model, *weibull, z_bar, cfg.threshold_grid[k], n, cfg, val,
                                                    derive_seed(ctx.seed, "sweep", e * 1000 + k));
                    if (sc && (!best || *sc > *best)) {
                        best = sc;
                        threshold = cfg.threshold_grid[k];
                    }
                }
                if (!best) {
                    threshold = cfg.fallback_threshold;
                    run.notes.push_back("experience " + std::to_string(e) +
                                        ": threshold sweep could not score validation data; using fallback " +
                                        std::to_string(threshold));
                }
            }
        }
        Rng rng(derive_seed(ctx.seed, "replay", e));
        const auto rs = sample_with_rejection(model, weibull ? &*weibull : nullptr, z_bar, threshold, n,
                                              cfg.max_attempts, rng);
        run.weibulls.push_back(weibull);
        run.thresholds.push_back(threshold);
        run.acceptance_rates.push_back(rs.acceptance_rate);
        run.replay_sizes.push_back(static_cast<std::size_t>(rs.x.rows()));
        run.z_bar = z_bar;
        if (rs.x.rows() > 0) replay = detail::replay_view(rs);
    }
    return run;
}

inline StrategyRun run_strategy(SSVAEModel& model, const Stream& train, const RunContext& ctx,
                                const StrategyConfig& cfg) {
    cfg.validate();
    switch (cfg.name) {
        case StrategyName::naive: return train_naive(model, train, ctx);
        case StrategyName::joint: return train_joint(model, train, ctx);
        case StrategyName::ewc: return train_ewc(model, train, ctx, cfg);
        case StrategyName::outlier_rejection: return train_outlier_rejection(model, train, ctx, cfg);
    }
    throw ValidationError("unknown strategy");
}

}  // namespace csad
