#pragma once
// Per-experience training: Adam on the total loss, optional strategy penalty,
// early stopping on validation loss with best-weights restore.

#include "csad/ssvae.hpp"
#include "csad/stream.hpp"

#include <functional>

namespace csad {

class DivergenceError : public NumericError {
public:
    using NumericError::NumericError;
};

/// Extra loss term supplied by a strategy (EWC). Returns the penalty value and,
/// when `grads` is non-null, accumulates its gradient.
using Penalty = std::function<double(const SSVAEModel&, nn::Grads*)>;

struct EpochRecord {
    LossBreakdown train;     // mean over batches
    double penalty = 0.0;    // mean over batches
    double val_loss = std::numeric_limits<double>::quiet_NaN();
};

struct TrainingHistory {
    std::vector<EpochRecord> epochs;
    int best_epoch = -1;
    bool early_stopped = false;
};

struct TrainOptions {
    std::uint64_t seed = 0;           // drives batch order and reparameterisation noise
    std::uint64_t val_seed = 0;       // fixed noise for validation losses
    const Penalty* penalty = nullptr;
};

/// Validation loss with fixed noise (comparable across epochs).
inline double validation_loss(const SSVAEModel& m, const TrainingView& val, std::uint64_t seed) {
    if (val.empty()) return std::numeric_limits<double>::quiet_NaN();
    Rng rng(seed);
    const int L = m.config.latent_dim;
    Matrix nl = standard_normal(val.x_labelled.rows(), L, rng);
    std::vector<Matrix> nu;
    for (int k = 0; k < m.config.n_classes; ++k) nu.push_back(standard_normal(val.x_unlabelled.rows(), L, rng));
    return m.total_loss(val.x_labelled, val.y_labelled, nl, val.x_unlabelled, nu).total;
}

inline TrainingView concat_views(const TrainingView& a, const TrainingView& b) {
    TrainingView out;
    out.x_labelled = vstack(a.x_labelled, b.x_labelled);
    out.y_labelled = a.y_labelled;
    out.y_labelled.insert(out.y_labelled.end(), b.y_labelled.begin(), b.y_labelled.end());
    out.x_unlabelled = vstack(a.x_unlabelled, b.x_unlabelled);
    if (out.x_labelled.cols() == 0 && out.x_unlabelled.cols() != 0) out.x_labelled.resize(0, out.x_unlabelled.cols());
    if (out.x_unlabelled.cols() == 0 && out.x_labelled.cols() != 0) out.x_unlabelled.resize(0, out.x_labelled.cols());
    return out;
}

/// Trains `model` on one experience (plus optional replay, concatenated into the
/// batches). Restores the best-validation weights at the end. On a non-finite
/// loss the last good weights are restored and DivergenceError is thrown.
inline TrainingHistory train_one_experience(SSVAEModel& model, const TrainingView& experience,
                                            const TrainingView* validation, const TrainingView* replay,
                                            const TrainOptions& opts) {
    require(!experience.empty() || (replay && !replay->empty()), "train_one_experience: empty experience");
    const TrainingView data = replay ? concat_views(experience, *replay) : experience;
    const auto& cfg = model.config;
    const int L = cfg.latent_dim;
    const Eigen::Index nl = data.x_labelled.rows(), nu = data.x_unlabelled.rows();
    const auto bs = static_cast<Eigen::Index>(cfg.batch_size);
    const Eigen::Index n_batches = std::max<Eigen::Index>(1, (nl + nu + bs - 1) / bs);

    Rng rng(opts.seed);
    nn::Adam adam(cfg.learning_rate);
    auto params = model.params();
    TrainingHistory hist;

    const bool has_val = validation && !validation->empty();
    double best_val = std::numeric_limits<double>::infinity();
    std::vector<Matrix> best_params;
    auto snapshot = [&] {
        std::vector<Matrix> s;
        for (auto* p : params) s.push_back(*p);
        return s;
    };
    auto restore = [&](const std::vector<Matrix>& s) {
        for (std::size_t i = 0; i < params.size(); ++i) *params[i] = s[i];
    };
    std::vector<Matrix> last_good = snapshot();
    int since_best = 0;

    std::vector<std::size_t> perm_l(static_cast<std::size_t>(nl)), perm_u(static_cast<std::size_t>(nu));
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        std::iota(perm_l.begin(), perm_l.end(), 0);
        std::iota(perm_u.begin(), perm_u.end(), 0);
        shuffle_in_place(perm_l, rng);
        shuffle_in_place(perm_u, rng);

        EpochRecord rec;
        try {
            for (Eigen::Index b = 0; b < n_batches; ++b) {
                const auto l0 = static_cast<std::size_t>(b * nl / n_batches), l1 = static_cast<std::size_t>((b + 1) * nl / n_batches);
                const auto u0 = static_cast<std::size_t>(b * nu / n_batches), u1 = static_cast<std::size_t>((b + 1) * nu / n_batches);
                std::span<const std::size_t> il(perm_l.data() + l0, l1 - l0), iu(perm_u.data() + u0, u1 - u0);
                const Matrix xl = gather_rows(data.x_labelled, il);
                std::vector<int> yl;
                yl.reserve(il.size());
                for (auto i : il) yl.push_back(data.y_labelled[i]);
                const Matrix xu = gather_rows(data.x_unlabelled, iu);
                if (xl.rows() == 0 && xu.rows() == 0) continue;
                const Matrix noise_l = standard_normal(xl.rows(), L, rng);
                std::vector<Matrix> noise_u;
                for (int k = 0; k < cfg.n_classes; ++k) noise_u.push_back(standard_normal(xu.rows(), L, rng));

                auto grads = model.zero_grads();
                const auto lb = model.total_loss(xl, yl, noise_l, xu, noise_u, &grads);
                double pen = 0.0;
                if (opts.penalty && *opts.penalty) pen = (*opts.penalty)(model, &grads);
                if (!std::isfinite(lb.total + pen)) throw NumericError("non-finite training loss");
                for (const auto& g : grads)
                    if (!g.allFinite()) throw NumericError("non-finite gradient");
                adam.step(params, grads);
                rec.train += lb;
                rec.penalty += pen;
            }
        } catch (const NumericError& e) {
            restore(has_val && !best_params.empty() ? best_params : last_good);
            throw DivergenceError(std::string("training diverged in epoch ") + std::to_string(epoch) + ": " +
                                  e.what());
        }
        const double inv = 1.0 / static_cast<double>(n_batches);
        rec.train.recon *= inv;
        rec.train.kl *= inv;
        rec.train.cls *= inv;
        rec.train.entropy *= inv;
        rec.train.total *= inv;
        rec.penalty *= inv;
        last_good = snapshot();

        if (has_val) {
            rec.val_loss = validation_loss(model, *validation, opts.val_seed);
            if (rec.val_loss < best_val) {
                best_val = rec.val_loss;
                best_params = last_good;
                hist.best_epoch = epoch;
                since_best = 0;
            } else {
                ++since_best;
            }
        } else {
            hist.best_epoch = epoch;
        }
        hist.epochs.push_back(rec);
        if (has_val && cfg.early_stop_patience > 0 && since_best >= cfg.early_stop_patience) {
            hist.early_stopped = true;
            break;
        }
    }
    if (has_val && !best_params.empty()) restore(best_params);
    return hist;
}

}  // namespace csad
