#pragma once
// Fully synthetic drifting stream of near-binary "images". Each domain has a
// normal pattern of logits at +-base_logit; normals vary along a few shared
// latent factors plus isotropic logit noise and are squashed to [0,1].
// Consecutive domains differ by sign flips on a few pixels. Anomalies push a
// domain-specific pixel subset towards the opposite sign; the offset is scaled
// to a Mahalanobis distance of `separation` under the normal covariance.
// Test episode e is drawn from domain e.

#include "csad/stream.hpp"

namespace csad {

struct SyntheticSpec {
    int dim = 64;
    std::size_t n_experiences = 5;
    std::size_t normals_per_experience = 400;
    std::size_t test_normals = 150;
    std::size_t test_anomalies = 150;
    std::size_t n_test_episodes = 0;   // 0 -> one per experience
    double base_logit = 4.0;
    double noise = 0.5;                // per-pixel isotropic std in logit space
    int n_factors = 2;                 // latent factors shared by all domains
    double factor_scale = 1.5;         // per-pixel std of each factor loading
    int drift_pixels = 16;             // sign flips between consecutive domains
    int anomaly_pixels = 8;            // pixels moved by an anomaly
    double separation = 12.0;          // Mahalanobis distance of the anomaly offset
    double anomaly_toward_next = 0.0;  // share of anomaly pixels taken from the next domain's flips
    double alpha = 0.1;
    std::vector<double> beta;
    double gamma = 0.05;
    double zeta = 0.0;
    double val_fraction = 0.1;
    std::uint64_t seed = 0;
};

namespace detail {

inline RowVector squash(const RowVector& logits) {
    return (1.0 / (1.0 + (-logits.array()).exp())).matrix();
}

inline std::vector<int> pick_pixels(int dim, int k, Rng& rng) {
    std::vector<int> all(static_cast<std::size_t>(dim));
    std::iota(all.begin(), all.end(), 0);
    shuffle_in_place(all, rng);
    all.resize(static_cast<std::size_t>(std::min(k, dim)));
    return all;
}

}  // namespace detail

/// Normal means, factor loadings and anomaly offsets per domain (logit space).
struct SyntheticGeometry {
    std::vector<RowVector> normal_mean;
    Matrix loadings;                        // n_factors x dim
    std::vector<RowVector> anomaly_offset;  // Mahalanobis norm = separation
};

inline SyntheticGeometry synthetic_geometry(const SyntheticSpec& s) {
    Rng rng(derive_seed(s.seed, "synthetic-geometry"));
    SyntheticGeometry g;
    const auto n = s.n_experiences;
    RowVector m(s.dim);
    std::bernoulli_distribution coin(0.5);
    for (int i = 0; i < s.dim; ++i) m(i) = coin(rng) ? s.base_logit : -s.base_logit;
    std::vector<std::vector<int>> flips;
    for (std::size_t e = 0; e < n; ++e) {
        g.normal_mean.push_back(m);
        flips.push_back(detail::pick_pixels(s.dim, s.drift_pixels, rng));
        for (int i : flips.back()) m(i) = -m(i);
    }
    g.loadings = s.factor_scale * standard_normal(s.n_factors, s.dim, rng);
    Matrix cov = g.loadings.transpose() * g.loadings;
    cov.diagonal().array() += s.noise * s.noise;
    const Eigen::LDLT<Matrix> cov_ldlt(cov);
    const int k = std::min(s.anomaly_pixels, s.dim);
    for (std::size_t e = 0; e < n; ++e) {
        std::vector<int> px;
        if (e + 1 < n) {
            const auto from_next = static_cast<std::size_t>(
                std::min<double>(std::round(s.anomaly_toward_next * k), static_cast<double>(flips[e].size())));
            px.assign(flips[e].begin(), flips[e].begin() + static_cast<std::ptrdiff_t>(from_next));
        }
        for (int i : detail::pick_pixels(s.dim, s.dim, rng)) {
            if (static_cast<int>(px.size()) >= k) break;
            if (std::find(px.begin(), px.end(), i) == px.end()) px.push_back(i);
        }
        RowVector off = RowVector::Zero(s.dim);
        if (k > 0) {
            for (int i : px) off(i) = g.normal_mean[e](i) > 0 ? -1.0 : 1.0;
            const double maha = std::sqrt(off.dot(cov_ldlt.solve(off.transpose()).transpose()));
            off *= s.separation / maha;
        }
        g.anomaly_offset.push_back(off);
    }
    return g;
}

/// Training, validation and test streams over freshly generated data. The training
/// stream follows the same alpha/beta/gamma/zeta rounding rules as real streams.
inline StreamBundle make_synthetic_stream(const SyntheticSpec& in) {
    SyntheticSpec s = in;
    require(s.dim >= 1 && s.n_experiences >= 1 && s.normals_per_experience >= 1, "synthetic: invalid sizes");
    if (s.beta.empty()) s.beta.assign(s.n_experiences, 1.0 / static_cast<double>(s.n_experiences));
    if (s.n_test_episodes == 0) s.n_test_episodes = s.n_experiences;

    StreamSpec spec;
    spec.dataset = "synthetic";
    spec.normal_class = 0;
    spec.n_experiences = s.n_experiences;
    spec.alpha = s.alpha;
    spec.beta = s.beta;
    spec.gamma = s.gamma;
    spec.zeta = s.zeta;
    spec.seed = s.seed;
    spec.val_fraction = s.val_fraction;
    spec.n_test_episodes = s.n_test_episodes;
    spec.normalize();
    spec.validate();

    const auto geo = synthetic_geometry(s);
    Rng rng(derive_seed(s.seed, "synthetic-samples"));
    auto spread = [&] {
        RowVector v = s.noise * standard_normal(1, s.dim, rng);
        if (s.n_factors > 0) v += standard_normal(1, s.n_factors, rng) * geo.loadings;
        return v;
    };
    auto normal_sample = [&](std::size_t e) { return detail::squash(geo.normal_mean[e] + spread()); };
    auto anomaly_sample = [&](std::size_t e) {
        return detail::squash(geo.normal_mean[e] + geo.anomaly_offset[e] + spread());
    };
    auto anomaly_class = [](std::size_t e) { return 1 + static_cast<int>(e % 9); };

    const std::size_t total_normals = s.normals_per_experience * s.n_experiences;
    const std::size_t n_lab = round_half_up(s.alpha * static_cast<double>(total_normals));
    if (n_lab == 0) throw CapacityError("synthetic: alpha selects zero labelled normals");
    const auto lab_counts = detail::apportion(n_lab, spec.beta);
    std::vector<double> equal(s.n_experiences, 1.0);
    const auto unl_counts = detail::apportion(total_normals - n_lab, equal);

    // Rows per experience: labelled normals, labelled anomalies, unlabelled normals, unlabelled anomalies.
    struct Plan {
        std::size_t ln, la, un, ua;
    };
    std::vector<Plan> plan;
    std::size_t rows = 0;
    for (std::size_t e = 0; e < s.n_experiences; ++e) {
        Plan p{lab_counts[e], detail::anomalies_for(lab_counts[e], s.gamma), unl_counts[e],
               detail::anomalies_for(unl_counts[e], s.zeta)};
        rows += p.ln + p.la + p.un + p.ua;
        plan.push_back(p);
    }

    auto train_images = std::make_shared<Matrix>(static_cast<Eigen::Index>(rows), s.dim);
    auto train = std::make_shared<BinaryDataset>();
    train->name = "synthetic/train";
    train->shape = {1, 1, s.dim};
    std::size_t r = 0;
    std::vector<std::array<std::pair<std::size_t, std::size_t>, 4>> ranges;
    for (std::size_t e = 0; e < s.n_experiences; ++e) {
        std::array<std::pair<std::size_t, std::size_t>, 4> rg;
        const std::size_t counts[4] = {plan[e].ln, plan[e].la, plan[e].un, plan[e].ua};
        for (int part = 0; part < 4; ++part) {
            const bool anomalous = part % 2 == 1;
            rg[static_cast<std::size_t>(part)] = {r, r + counts[part]};
            for (std::size_t k = 0; k < counts[part]; ++k, ++r) {
                train_images->row(static_cast<Eigen::Index>(r)) = anomalous ? anomaly_sample(e) : normal_sample(e);
                train->original_class.push_back(anomalous ? anomaly_class(e) : 0);
                train->binary.push_back(anomalous ? 1 : 0);
            }
        }
        ranges.push_back(rg);
    }
    train->images = train_images;
    train->content_hash = sha256_hex(std::string_view(reinterpret_cast<const char*>(train_images->data()),
                                                      static_cast<std::size_t>(train_images->size()) * sizeof(double)));

    StreamBundle b;
    b.train.spec = spec;
    b.train.kind = StreamKind::train;
    Rng shuffle_rng(derive_seed(s.seed, "synthetic-shuffle"));
    for (std::size_t e = 0; e < s.n_experiences; ++e) {
        Experience exp(train, e);
        for (int part = 0; part < 4; ++part) {
            const auto [lo, hi] = ranges[e][static_cast<std::size_t>(part)];
            for (std::size_t i = lo; i < hi; ++i) {
                if (part < 2) exp.add_labelled(i, train->binary[i]);
                else exp.add_unlabelled(i);
            }
        }
        exp.shuffle(shuffle_rng);
        b.train.experiences.push_back(std::move(exp));
    }
    b.validation = build_validation_stream(b.train, s.val_fraction);

    const std::size_t per_ep = s.test_normals + s.test_anomalies;
    auto test_images = std::make_shared<Matrix>(static_cast<Eigen::Index>(per_ep * s.n_test_episodes), s.dim);
    auto test = std::make_shared<BinaryDataset>();
    test->name = "synthetic/test";
    test->shape = {1, 1, s.dim};
    r = 0;
    for (std::size_t ep = 0; ep < s.n_test_episodes; ++ep) {
        const auto e = ep % s.n_experiences;
        for (std::size_t k = 0; k < per_ep; ++k, ++r) {
            const bool anomalous = k >= s.test_normals;
            test_images->row(static_cast<Eigen::Index>(r)) = anomalous ? anomaly_sample(e) : normal_sample(e);
            test->original_class.push_back(anomalous ? anomaly_class(e) : 0);
            test->binary.push_back(anomalous ? 1 : 0);
        }
    }
    test->images = test_images;
    b.test.spec = spec;
    b.test.kind = StreamKind::test;
    for (std::size_t ep = 0; ep < s.n_test_episodes; ++ep) {
        Experience x(test, ep);
        for (std::size_t k = 0; k < per_ep; ++k) x.add_unlabelled(ep * per_ep + k);
        x.shuffle(shuffle_rng);
        b.test.experiences.push_back(std::move(x));
    }
    return b;
}

/// Bayes-optimal AUC of one episode: in logit space normals and anomalies are
/// Gaussians with a shared covariance whose means are `separation` apart in
/// Mahalanobis distance, so the best linear score separates them by that much.
inline double synthetic_bayes_auc(double separation) {
    return 0.5 * std::erfc(-separation / 2.0);
}

}  // namespace csad
