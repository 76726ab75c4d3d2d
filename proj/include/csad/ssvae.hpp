#pragma once
// M2-style semi-supervised VAE.
//
//   encoder    q(z | x, y)  : [x, onehot(y)] -> (mu, log_sigma)
//   classifier q(y | x)     : x -> softmax logits
//   decoder    p(x | z, y)  : [z, onehot(y)] -> Bernoulli means
//
// Per-sample bound, with the label-prior constant dropped:
//   L(x,y)      = beta * KL(q(z|x,y) || N(0,I)) + BCE(x, x_hat)
//   labelled    = L(x,y) + alpha * CE(y, q(y|x))
//   unlabelled  = sum_y q(y|x) L(x,y) - H(q(y|x))
//   total       = mean(labelled) + mean(unlabelled)

#include "csad/nn.hpp"

#include <json.hpp>

#include <optional>

namespace csad {

constexpr double kLogEps = 1e-7;

struct ClassifierSpec {
    std::vector<nn::ConvSpec> conv{{8, 3, 2}, {16, 3, 2}};  // used only when an image shape is known
    std::vector<int> dense{64};
};

struct SSVAEConfig {
    int input_dim = 784;
    int latent_dim = 32;
    std::vector<int> encoder_hidden{256, 128};
    std::vector<int> decoder_hidden;  // empty -> mirror of encoder_hidden
    ClassifierSpec classifier;
    std::optional<ImageShape> image_shape;
    int n_classes = 2;
    double beta_kl = 1.0;
    double alpha_cls = 1.0;
    double learning_rate = 1e-3;
    int batch_size = 64;
    int max_epochs = 10;
    int early_stop_patience = 3;
    int elbo_samples = 8;

    [[nodiscard]] std::vector<int> decoder_widths() const {
        if (!decoder_hidden.empty()) return decoder_hidden;
        return {encoder_hidden.rbegin(), encoder_hidden.rend()};
    }

    void validate() const {
        require(input_dim >= 1, "input_dim must be >= 1");
        require(latent_dim >= 1, "latent_dim must be >= 1");
        require(n_classes >= 2, "n_classes must be >= 2");
        require(beta_kl > 0.0, "beta_kl must be > 0");
        require(alpha_cls > 0.0, "alpha_cls must be > 0");
        require(learning_rate > 0.0, "learning_rate must be > 0");
        require(batch_size >= 1, "batch_size must be >= 1");
        require(max_epochs >= 1, "max_epochs must be >= 1");
        require(elbo_samples >= 1, "elbo_samples must be >= 1");
        if (image_shape) require(image_shape->size() == input_dim, "image_shape does not match input_dim");
    }
};

inline void to_json(nlohmann::json& j, const SSVAEConfig& c) {
    nlohmann::json conv = nlohmann::json::array();
    for (const auto& s : c.classifier.conv)
        conv.push_back({{"channels", s.channels}, {"kernel", s.kernel}, {"stride", s.stride}});
    j = nlohmann::json{{"input_dim", c.input_dim},
                       {"latent_dim", c.latent_dim},
                       {"encoder_hidden", c.encoder_hidden},
                       {"decoder_hidden", c.decoder_hidden},
                       {"classifier", {{"conv", conv}, {"dense", c.classifier.dense}}},
                       {"n_classes", c.n_classes},
                       {"beta_kl", c.beta_kl},
                       {"alpha_cls", c.alpha_cls},
                       {"learning_rate", c.learning_rate},
                       {"batch_size", c.batch_size},
                       {"max_epochs", c.max_epochs},
                       {"early_stop_patience", c.early_stop_patience},
                       {"elbo_samples", c.elbo_samples}};
    if (c.image_shape)
        j["image_shape"] = {c.image_shape->channels, c.image_shape->height, c.image_shape->width};
    else
        j["image_shape"] = nullptr;
}

inline void from_json(const nlohmann::json& j, SSVAEConfig& c) {
    SSVAEConfig d;
    c.input_dim = j.value("input_dim", d.input_dim);
    c.latent_dim = j.value("latent_dim", d.latent_dim);
    c.encoder_hidden = j.value("encoder_hidden", d.encoder_hidden);
    c.decoder_hidden = j.value("decoder_hidden", d.decoder_hidden);
    c.classifier = d.classifier;
    if (j.contains("classifier")) {
        const auto& cj = j["classifier"];
        if (cj.contains("conv")) {
            c.classifier.conv.clear();
            for (const auto& s : cj["conv"])
                c.classifier.conv.push_back({s.value("channels", 8), s.value("kernel", 3), s.value("stride", 2)});
        }
        c.classifier.dense = cj.value("dense", d.classifier.dense);
    }
    c.image_shape.reset();
    if (j.contains("image_shape") && j["image_shape"].is_array()) {
        const auto& s = j["image_shape"];
        c.image_shape = ImageShape{s.at(0).get<int>(), s.at(1).get<int>(), s.at(2).get<int>()};
    }
    c.n_classes = j.value("n_classes", d.n_classes);
    c.beta_kl = j.value("beta_kl", d.beta_kl);
    c.alpha_cls = j.value("alpha_cls", d.alpha_cls);
    c.learning_rate = j.value("learning_rate", d.learning_rate);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.max_epochs = j.value("max_epochs", d.max_epochs);
    c.early_stop_patience = j.value("early_stop_patience", d.early_stop_patience);
    c.elbo_samples = j.value("elbo_samples", d.elbo_samples);
}

/// Per-batch means of the loss components. `kl` already carries the beta weight
/// and `cls` the alpha weight; `entropy` is the mean classifier entropy.
struct LossBreakdown {
    double recon = 0.0;
    double kl = 0.0;
    double cls = 0.0;
    double entropy = 0.0;
    double total = 0.0;

    LossBreakdown& operator+=(const LossBreakdown& o) {
        recon += o.recon;
        kl += o.kl;
        cls += o.cls;
        entropy += o.entropy;
        total += o.total;
        return *this;
    }
};

inline LossBreakdown operator+(LossBreakdown a, const LossBreakdown& b) { return a += b; }

struct Encoded {
    Matrix mu;
    Matrix log_sigma;
};

struct Generated {
    Matrix x;  // decoded Bernoulli means
    Matrix z;  // latent draws
};

/// z = mu + exp(log_sigma) * noise.
inline Matrix reparameterize(const Matrix& mu, const Matrix& log_sigma, const Matrix& noise) {
    require(mu.rows() == log_sigma.rows() && mu.cols() == log_sigma.cols() && mu.rows() == noise.rows() &&
                mu.cols() == noise.cols(),
            "reparameterize: shape mismatch");
    return (mu.array() + log_sigma.array().exp() * noise.array()).matrix();
}

/// Closed-form KL(N(mu, sigma^2) || N(0, I)) per row.
inline Vector gaussian_kl(const Matrix& mu, const Matrix& log_sigma) {
    return (0.5 * (mu.array().square() + (2.0 * log_sigma.array()).exp() - 1.0) - log_sigma.array())
        .rowwise()
        .sum()
        .matrix();
}

inline Matrix softmax_rows(const Matrix& logits) {
    Matrix out = logits;
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
        const double m = out.row(i).maxCoeff();
        out.row(i) = (out.row(i).array() - m).exp();
        out.row(i) /= out.row(i).sum();
    }
    return out;
}

inline Matrix with_label(const Matrix& x, const Matrix& y_onehot) {
    Matrix out(x.rows(), x.cols() + y_onehot.cols());
    out << x, y_onehot;
    return out;
}

inline Matrix constant_label(Eigen::Index rows, int y, int n_classes) {
    Matrix out = Matrix::Zero(rows, n_classes);
    out.col(y).setOnes();
    return out;
}

class SSVAEModel {
public:
    SSVAEConfig config;
    nn::Network encoder;
    nn::Network classifier;
    nn::Network decoder;

    SSVAEModel() = default;

    SSVAEModel(SSVAEConfig cfg, std::uint64_t seed) : config(std::move(cfg)) {
        config.validate();
        const int L = config.latent_dim, K = config.n_classes;
        encoder = nn::make_mlp(config.input_dim + K, config.encoder_hidden, 2 * L);
        decoder = nn::make_mlp(L + K, config.decoder_widths(), config.input_dim);
        if (config.image_shape && !config.classifier.conv.empty())
            classifier = nn::make_conv_net(*config.image_shape, config.classifier.conv, config.classifier.dense, K);
        else
            classifier = nn::make_mlp(config.input_dim, config.classifier.dense, K);
        Rng rng(derive_seed(seed, "init"));
        // Near-zero final encoder layer: mu ~ 0 and sigma ~ 1 at initialisation.
        encoder.init(rng, 1e-2);
        classifier.init(rng);
        decoder.init(rng);
    }

    std::vector<Matrix*> params() {
        auto out = encoder.params();
        for (auto* p : classifier.params()) out.push_back(p);
        for (auto* p : decoder.params()) out.push_back(p);
        return out;
    }
    std::vector<const Matrix*> params() const {
        auto out = encoder.params();
        for (const auto* p : classifier.params()) out.push_back(p);
        for (const auto* p : decoder.params()) out.push_back(p);
        return out;
    }
    [[nodiscard]] nn::Grads zero_grads() const { return nn::zeros_like(params()); }

    [[nodiscard]] Encoded encode(const Matrix& x, const Matrix& y_onehot) const {
        const Matrix out = encoder.forward(with_label(x, y_onehot));
        const int L = config.latent_dim;
        Encoded e{out.leftCols(L), clamp_log_sigma(out.rightCols(L))};
        if (!e.mu.allFinite() || !e.log_sigma.allFinite())
            throw NumericError("encode: non-finite activations for batch of " + std::to_string(x.rows()));
        return e;
    }

    [[nodiscard]] Matrix classify(const Matrix& x) const { return softmax_rows(classifier.forward(x)); }

    [[nodiscard]] Matrix decode(const Matrix& z, const Matrix& y_onehot) const {
        return sigmoid(decoder.forward(with_label(z, y_onehot)));
    }

    [[nodiscard]] Generated generate(int y, std::size_t n, Rng& rng) const {
        Generated g;
        g.z = standard_normal(static_cast<Eigen::Index>(n), config.latent_dim, rng);
        if (n == 0) {
            g.x = Matrix(0, config.input_dim);
            return g;
        }
        g.x = decode(g.z, constant_label(static_cast<Eigen::Index>(n), y, config.n_classes));
        return g;
    }

    // -----------------------------------------------------------------------
    // Losses. `grads` (optional) receives d(mean loss)/d(params), accumulated.
    // -----------------------------------------------------------------------

    LossBreakdown loss_labelled(const Matrix& x, std::span<const int> y, const Matrix& noise,
                                nn::Grads* grads = nullptr, double weight = 1.0) const {
        require(x.rows() > 0, "loss_labelled: empty batch");
        require(static_cast<std::size_t>(x.rows()) == y.size(), "loss_labelled: x/y size mismatch");
        const auto n = static_cast<double>(x.rows());
        const Matrix yoh = one_hot(y, config.n_classes);

        nn::Trace ctrace;
        const Matrix q = softmax_rows(classifier.forward(x, grads ? &ctrace : nullptr));
        Vector ce(x.rows());
        Matrix dq = Matrix::Zero(q.rows(), q.cols());
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            const double qy = q(i, y[static_cast<std::size_t>(i)]);
            ce(i) = -std::log(std::clamp(qy, kLogEps, 1.0 - kLogEps));
            if (qy > kLogEps && qy < 1.0 - kLogEps) dq(i, y[static_cast<std::size_t>(i)]) = -1.0 / qy;
        }

        PathCache path;
        forward_path(x, yoh, noise, path, grads != nullptr);

        LossBreakdown lb;
        lb.recon = path.bce.mean();
        lb.kl = config.beta_kl * path.kl.mean();
        lb.cls = config.alpha_cls * ce.mean();
        lb.entropy = entropy(q).mean();
        lb.total = lb.recon + lb.kl + lb.cls;
        check_finite(lb, "loss_labelled", x.rows());

        if (grads) {
            const double c = weight / n;
            backward_path(path, Vector::Constant(x.rows(), c), *grads);
            classifier_backward(ctrace, q, dq * (c * config.alpha_cls), *grads);
        }
        return lb;
    }

    /// `noise[k]` is the reparameterisation noise used for label k.
    LossBreakdown loss_unlabelled(const Matrix& x, std::span<const Matrix> noise, nn::Grads* grads = nullptr,
                                  double weight = 1.0, Vector* per_sample = nullptr) const {
        require(x.rows() > 0, "loss_unlabelled: empty batch");
        require(noise.size() == static_cast<std::size_t>(config.n_classes), "loss_unlabelled: need one noise per class");
        const auto n = static_cast<double>(x.rows());
        const int K = config.n_classes;

        nn::Trace ctrace;
        const Matrix q = softmax_rows(classifier.forward(x, grads ? &ctrace : nullptr));

        std::vector<PathCache> paths(static_cast<std::size_t>(K));
        Matrix Ly(x.rows(), K);
        Vector recon = Vector::Zero(x.rows()), kl = Vector::Zero(x.rows());
        for (int k = 0; k < K; ++k) {
            auto& p = paths[static_cast<std::size_t>(k)];
            forward_path(x, constant_label(x.rows(), k, K), noise[static_cast<std::size_t>(k)], p, grads != nullptr);
            Ly.col(k) = p.bce + config.beta_kl * p.kl;
            recon += q.col(k).cwiseProduct(p.bce);
            kl += config.beta_kl * q.col(k).cwiseProduct(p.kl);
        }
        const Vector H = entropy(q);
        const Vector U = (q.cwiseProduct(Ly)).rowwise().sum() - H;
        if (per_sample) *per_sample = U;

        LossBreakdown lb;
        lb.recon = recon.mean();
        lb.kl = kl.mean();
        lb.entropy = H.mean();
        lb.total = U.mean();
        check_finite(lb, "loss_unlabelled", x.rows());

        if (grads) {
            const double c = weight / n;
            Matrix dq(q.rows(), K);
            for (Eigen::Index i = 0; i < q.rows(); ++i)
                for (int k = 0; k < K; ++k) {
                    const double qk = q(i, k);
                    const double clamped = std::clamp(qk, kLogEps, 1.0 - kLogEps);
                    dq(i, k) = c * (Ly(i, k) + std::log(clamped) + (clamped == qk ? 1.0 : 0.0));
                }
            for (int k = 0; k < K; ++k) backward_path(paths[static_cast<std::size_t>(k)], c * q.col(k), *grads);
            classifier_backward(ctrace, q, dq, *grads);
        }
        return lb;
    }

    /// Empty batches contribute zero; both empty is an error.
    LossBreakdown total_loss(const Matrix& xl, std::span<const int> yl, const Matrix& noise_l, const Matrix& xu,
                             std::span<const Matrix> noise_u, nn::Grads* grads = nullptr) const {
        if (xl.rows() == 0 && xu.rows() == 0) throw ValidationError("total_loss: both batches are empty");
        LossBreakdown lb;
        if (xl.rows() > 0) lb += loss_labelled(xl, yl, noise_l, grads);
        if (xu.rows() > 0) lb += loss_unlabelled(xu, noise_u, grads);
        return lb;
    }

    /// Negative unlabelled ELBO per row (higher = more anomalous), averaged over
    /// `elbo_samples` noise draws shared by every row, so identical rows score identically.
    [[nodiscard]] Vector elbo_score(const Matrix& x, std::uint64_t seed) const {
        const int K = config.n_classes, L = config.latent_dim, S = config.elbo_samples;
        Rng rng(derive_seed(seed, "elbo-score"));
        std::vector<std::vector<RowVector>> draws(static_cast<std::size_t>(S));
        for (auto& d : draws)
            for (int k = 0; k < K; ++k) d.push_back(standard_normal(1, L, rng));

        Vector scores = Vector::Zero(x.rows());
        constexpr Eigen::Index kChunk = 512;
        for (Eigen::Index start = 0; start < x.rows(); start += kChunk) {
            const Eigen::Index len = std::min(kChunk, x.rows() - start);
            const Matrix xb = x.middleRows(start, len);
            Vector acc = Vector::Zero(len);
            for (const auto& d : draws) {
                std::vector<Matrix> noise;
                for (const auto& row : d) noise.push_back(row.replicate(len, 1));
                Vector U;
                loss_unlabelled(xb, noise, nullptr, 1.0, &U);
                acc += U;
            }
            scores.segment(start, len) = acc / static_cast<double>(S);
        }
        return scores;
    }

private:
    struct PathCache {
        Matrix x, yoh, noise, mu, log_sigma, sigma, xhat;
        Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> logs_free;
        nn::Trace enc, dec;
        Vector bce, kl;
    };

    static Matrix clamp_log_sigma(const Matrix& ls) { return ls.cwiseMax(-10.0).cwiseMin(10.0); }

    static Matrix sigmoid(const Matrix& a) { return (1.0 / (1.0 + (-a.array()).exp())).matrix(); }

    static Vector entropy(const Matrix& q) {
        return -(q.array() * q.array().cwiseMax(kLogEps).cwiseMin(1.0 - kLogEps).log()).rowwise().sum().matrix();
    }

    static void check_finite(const LossBreakdown& lb, const char* where, Eigen::Index n) {
        if (!std::isfinite(lb.total))
            throw NumericError(std::string(where) + ": non-finite loss (recon=" + std::to_string(lb.recon) +
                               ", kl=" + std::to_string(lb.kl) + ", cls=" + std::to_string(lb.cls) +
                               ") on batch of " + std::to_string(n));
    }

    void forward_path(const Matrix& x, const Matrix& yoh, const Matrix& noise, PathCache& p, bool keep) const {
        const int L = config.latent_dim;
        const Matrix out = encoder.forward(with_label(x, yoh), keep ? &p.enc : nullptr);
        p.mu = out.leftCols(L);
        const Matrix raw_ls = out.rightCols(L);
        p.log_sigma = clamp_log_sigma(raw_ls);
        if (!p.mu.allFinite() || !p.log_sigma.allFinite())
            throw NumericError("encoder produced non-finite activations on batch of " + std::to_string(x.rows()));
        p.sigma = p.log_sigma.array().exp().matrix();
        require(noise.rows() == x.rows() && noise.cols() == L, "noise shape mismatch");
        const Matrix z = p.mu + p.sigma.cwiseProduct(noise);
        p.xhat = sigmoid(decoder.forward(with_label(z, yoh), keep ? &p.dec : nullptr));
        const auto pc = p.xhat.array().cwiseMax(kLogEps).cwiseMin(1.0 - kLogEps);
        p.bce = -(x.array() * pc.log() + (1.0 - x.array()) * (1.0 - pc).log()).rowwise().sum().matrix();
        p.kl = gaussian_kl(p.mu, p.log_sigma);
        if (keep) {
            p.x = x;
            p.yoh = yoh;
            p.noise = noise;
            p.logs_free = (raw_ls.array() > -10.0) && (raw_ls.array() < 10.0);
        }
    }

    /// coef(i) = d(loss)/d(L(x_i, y)) where L = bce + beta * kl.
    void backward_path(const PathCache& p, const Vector& coef, nn::Grads& grads) const {
        const int L = config.latent_dim;
        const std::size_t ne = encoder.layers.size() * 2, nc = classifier.layers.size() * 2;
        const auto free = (p.xhat.array() > kLogEps) && (p.xhat.array() < 1.0 - kLogEps);
        Matrix dlogits = free.select(p.xhat - p.x, 0.0);
        dlogits.array().colwise() *= coef.array();
        std::span<Matrix> gdec(grads.data() + ne + nc, decoder.layers.size() * 2);
        const Matrix ddec_in = decoder.backward(p.dec, dlogits, gdec, true);
        const Matrix dz = ddec_in.leftCols(L);

        Matrix dmu = dz;
        Matrix dls = dz.cwiseProduct(p.sigma).cwiseProduct(p.noise);
        const Vector ckl = config.beta_kl * coef;
        dmu += (p.mu.array().colwise() * ckl.array()).matrix();
        dls += ((p.sigma.array().square() - 1.0).colwise() * ckl.array()).matrix();
        dls = p.logs_free.select(dls, 0.0);

        Matrix dout(dmu.rows(), 2 * L);
        dout << dmu, dls;
        std::span<Matrix> genc(grads.data(), ne);
        encoder.backward(p.enc, dout, genc, false);
    }

    /// dq = d(loss)/d(q) per row; pushes through the softmax into the classifier.
    void classifier_backward(const nn::Trace& trace, const Matrix& q, const Matrix& dq, nn::Grads& grads) const {
        const std::size_t ne = encoder.layers.size() * 2, nc = classifier.layers.size() * 2;
        const Vector s = q.cwiseProduct(dq).rowwise().sum();
        Matrix dlogits = q.cwiseProduct(dq - s.replicate(1, q.cols()));
        std::span<Matrix> gcls(grads.data() + ne, nc);
        classifier.backward(trace, dlogits, gcls, false);
    }
};

}  // namespace csad
