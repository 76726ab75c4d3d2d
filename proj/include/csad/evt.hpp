#pragma once
// Weibull tail model over latent-mean distances of the normal class, and
// rejection sampling of replay latents.

#include "csad/ssvae.hpp"

#include <algorithm>

namespace csad {

/// Cosine distance in [0, 2]. A zero vector is treated as orthogonal to everything.
inline double cosine_distance(const Eigen::Ref<const RowVector>& a, const Eigen::Ref<const RowVector>& b) {
    const double na = a.norm(), nb = b.norm();
    if (na == 0.0 || nb == 0.0) return 1.0;
    const double c = a.dot(b) / (na * nb);
    return std::clamp(1.0 - c, 0.0, 2.0);
}

struct LatentSummary {
    RowVector z_bar;
    std::vector<double> distances;  // sorted ascending
    std::size_t n_correct = 0;
};

/// Latent mean and distances over the labelled normals the classifier gets right.
/// Uses encoder means computed with the normal label.
inline LatentSummary compute_latent_summary(const SSVAEModel& model, const Matrix& normals, int normal_label = 0) {
    require(normals.rows() > 0, "compute_latent_summary: no labelled normals");
    const Matrix q = model.classify(normals);
    std::vector<std::size_t> correct;
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
        Eigen::Index arg;
        q.row(i).maxCoeff(&arg);
        if (arg == normal_label) correct.push_back(static_cast<std::size_t>(i));
    }
    if (correct.empty()) throw FitError("compute_latent_summary: no correctly classified normals");
    const Matrix xc = gather_rows(normals, correct);
    const Matrix mu =
        model.encode(xc, constant_label(xc.rows(), normal_label, model.config.n_classes)).mu;
    LatentSummary s;
    s.z_bar = mu.colwise().mean();
    s.n_correct = correct.size();
    s.distances.reserve(correct.size());
    for (Eigen::Index i = 0; i < mu.rows(); ++i) s.distances.push_back(cosine_distance(mu.row(i), s.z_bar));
    std::sort(s.distances.begin(), s.distances.end());
    return s;
}

struct WeibullModel {
    double tau = 0.0;
    double kappa = 1.0;
    double lam = 1.0;
    std::size_t tail_size = 0;
    std::string distance_metric = "cosine";
};

inline void to_json(nlohmann::json& j, const WeibullModel& w) {
    j = nlohmann::json{{"tau", w.tau},
                       {"kappa", w.kappa},
                       {"lambda", w.lam},
                       {"tail_size", w.tail_size},
                       {"distance_metric", w.distance_metric}};
}
inline void from_json(const nlohmann::json& j, WeibullModel& w) {
    w.tau = j.at("tau").get<double>();
    w.kappa = j.at("kappa").get<double>();
    w.lam = j.at("lambda").get<double>();
    w.tail_size = j.at("tail_size").get<std::size_t>();
    w.distance_metric = j.value("distance_metric", std::string("cosine"));
}

struct WeibullFit {
    double kappa = 1.0;
    double lam = 1.0;
};

/// Two-parameter Weibull MLE on strictly positive samples.
/// The shape solves  sum(x^k ln x)/sum(x^k) - 1/k - mean(ln x) = 0, which is
/// increasing in k; it is bracketed, bisected and polished with Newton steps.
inline WeibullFit weibull_mle(std::span<const double> x) {
    require(x.size() >= 2, "weibull_mle: need at least two samples");
    std::vector<double> lx(x.size());
    double mean_log = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] > 0.0) || !std::isfinite(x[i])) throw FitError("weibull_mle: samples must be positive and finite");
        lx[i] = std::log(x[i]);
        mean_log += lx[i];
    }
    mean_log /= static_cast<double>(x.size());
    const auto [mn, mx] = std::minmax_element(lx.begin(), lx.end());
    if (*mx - *mn < 1e-12) throw FitError("weibull_mle: degenerate (all samples equal)");
    const double shift = *mx;  // x^k scaled by exp(-k*shift) to avoid overflow

    auto eval = [&](double k, double* deriv) {
        double s0 = 0.0, s1 = 0.0, s2 = 0.0;
        for (double l : lx) {
            const double w = std::exp(k * (l - shift));
            s0 += w;
            s1 += w * l;
            s2 += w * l * l;
        }
        const double a = s1 / s0;
        if (deriv) *deriv = s2 / s0 - a * a + 1.0 / (k * k);
        return a - 1.0 / k - mean_log;
    };

    double lo = 1e-3, hi = 1.0;
    while (eval(hi, nullptr) < 0.0) {
        lo = hi;
        hi *= 2.0;
        if (hi > 1e6) throw FitError("weibull_mle: shape did not bracket");
    }
    while (eval(lo, nullptr) > 0.0) {
        hi = lo;
        lo /= 2.0;
        if (lo < 1e-9) throw FitError("weibull_mle: shape did not bracket");
    }
    for (int it = 0; it < 60 && (hi - lo) > 1e-6 * hi; ++it) {
        const double mid = 0.5 * (lo + hi);
        (eval(mid, nullptr) < 0.0 ? lo : hi) = mid;
    }
    double k = 0.5 * (lo + hi);
    for (int it = 0; it < 20; ++it) {
        double d = 0.0;
        const double g = eval(k, &d);
        const double next = k - g / d;
        if (!(next > lo * 0.5) || !(next < hi * 2.0)) break;
        const bool done = std::abs(next - k) < 1e-14 * k;
        k = next;
        if (done) break;
    }
    double s = 0.0;
    for (double l : lx) s += std::exp(k * (l - shift));
    const double lam = std::exp(shift + std::log(s / static_cast<double>(lx.size())) / k);
    return {k, lam};
}

inline constexpr std::size_t kMinWeibullFit = 20;

/// Threshold at the (1 - tail_fraction) empirical quantile (lower order statistic),
/// then Weibull MLE on the exceedances d - tau for d > tau.
inline WeibullModel fit_weibull(std::span<const double> distances, double tail_fraction = 0.25,
                                std::size_t min_fit = kMinWeibullFit) {
    require(tail_fraction > 0.0 && tail_fraction <= 1.0, "fit_weibull: tail_fraction must be in (0, 1]");
    std::vector<double> d(distances.begin(), distances.end());
    std::sort(d.begin(), d.end());
    require(!d.empty(), "fit_weibull: no distances");
    const auto idx = static_cast<std::size_t>(std::floor((1.0 - tail_fraction) * static_cast<double>(d.size() - 1)));
    WeibullModel w;
    w.tau = d[idx];
    std::vector<double> exc;
    for (double v : d)
        if (v > w.tau) exc.push_back(v - w.tau);
    if (exc.size() < min_fit)
        throw FitError("fit_weibull: " + std::to_string(exc.size()) + " exceedances, need " + std::to_string(min_fit));
    const auto f = weibull_mle(exc);
    w.kappa = f.kappa;
    w.lam = f.lam;
    w.tail_size = exc.size();
    return w;
}

/// Weibull CDF of the distance beyond tau; zero at or below tau.
inline double outlier_probability_at(double d, const WeibullModel& w) {
    if (!(d > w.tau)) return 0.0;
    return -std::expm1(-std::pow((d - w.tau) / w.lam, w.kappa));
}

inline double outlier_probability(const Eigen::Ref<const RowVector>& z, const WeibullModel& w,
                                  const Eigen::Ref<const RowVector>& z_bar) {
    return outlier_probability_at(cosine_distance(z_bar, z), w);
}

struct ReplaySet {
    Matrix x;            // decoded samples
    Matrix z;            // accepted latents
    std::size_t attempts = 0;
    double acceptance_rate = 1.0;
    bool partial = false;
};

/// Draws z ~ N(0, I), keeps draws with outlier probability < threshold and decodes
/// only those with the normal label. At most n * max_attempts draws are made; a
/// shortfall is returned with a warning. `weibull == nullptr` accepts every draw.
inline ReplaySet sample_with_rejection(const SSVAEModel& model, const WeibullModel* weibull, const RowVector& z_bar,
                                       double threshold, std::size_t n, std::size_t max_attempts, Rng& rng,
                                       int normal_label = 0) {
    require(threshold > 0.0 && threshold <= 1.0, "sample_with_rejection: threshold must be in (0, 1]");
    require(max_attempts >= 1, "sample_with_rejection: max_attempts must be >= 1");
    const int L = model.config.latent_dim;
    ReplaySet out;
    out.z.resize(static_cast<Eigen::Index>(n), L);
    std::size_t accepted = 0;
    const std::size_t budget = n * max_attempts;
    while (accepted < n && out.attempts < budget) {
        const std::size_t batch = std::min<std::size_t>(std::max<std::size_t>(n - accepted, 64), budget - out.attempts);
        const Matrix z = standard_normal(static_cast<Eigen::Index>(batch), L, rng);
        for (Eigen::Index i = 0; i < z.rows() && accepted < n; ++i) {
            ++out.attempts;
            const bool ok = !weibull || outlier_probability(z.row(i), *weibull, z_bar) < threshold;
            if (ok) out.z.row(static_cast<Eigen::Index>(accepted++)) = z.row(i);
        }
    }
    out.z.conservativeResize(static_cast<Eigen::Index>(accepted), L);
    out.acceptance_rate = out.attempts ? static_cast<double>(accepted) / static_cast<double>(out.attempts) : 1.0;
    if (accepted < n) {
        out.partial = true;
        warn("replay: acceptance budget exhausted, generated " + std::to_string(accepted) + " of " +
             std::to_string(n) + " samples (acceptance rate " + std::to_string(out.acceptance_rate) + ")");
    }
    out.x = accepted ? model.decode(out.z, constant_label(out.z.rows(), normal_label, model.config.n_classes))
                     : Matrix(0, model.config.input_dim);
    return out;
}

}  // namespace csad
