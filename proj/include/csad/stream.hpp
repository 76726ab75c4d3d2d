#pragma once
// Turns a 10-class dataset into a binary anomaly-detection problem and cuts it
// into training / validation / testing streams of disjoint experiences.
//
// Recipe parameters (StreamSpec):
//   alpha   overall fraction of normal training data that is labelled
//   beta    how the labelled normals are spread over the experiences
//   gamma   anomaly fraction of each experience's labelled set
//   zeta    anomaly fraction of each experience's unlabelled set
//   lambda  permitted anomalous classes per experience

#include "csad/augment.hpp"
#include "csad/dataset.hpp"

#include <json.hpp>

#include <map>
#include <memory>
#include <numeric>
#include <set>

namespace csad {

/// Binary view of a labelled dataset: 0 = normal, 1 = anomalous. The original
/// class id of every row is kept for lambda filtering and test stratification.
struct BinaryDataset {
    std::shared_ptr<const Matrix> images;
    std::vector<int> original_class;
    std::vector<int> binary;
    int normal_class = 0;
    std::string name;
    std::string content_hash;
    ImageShape shape;

    [[nodiscard]] std::size_t size() const { return binary.size(); }
    [[nodiscard]] Eigen::Index dim() const { return images->cols(); }
};

inline BinaryDataset apply_anomaly_transform(const RawDataset& raw, int normal_class) {
    require(normal_class >= 0 && normal_class <= 9, "normal_class must be in 0..9");
    BinaryDataset out;
    out.images = std::make_shared<const Matrix>(raw.images);
    out.original_class = raw.labels;
    out.binary.resize(raw.labels.size());
    std::size_t anomalies = 0;
    for (std::size_t i = 0; i < raw.labels.size(); ++i) {
        out.binary[i] = raw.labels[i] == normal_class ? 0 : 1;
        anomalies += static_cast<std::size_t>(out.binary[i]);
    }
    if (anomalies == 0) warn("apply_anomaly_transform: every sample belongs to the normal class");
    out.normal_class = normal_class;
    out.name = to_string(raw.name) + "/" + to_string(raw.split);
    out.content_hash = raw.content_hash;
    out.shape = image_shape_of(raw.name);
    return out;
}

struct StreamSpec {
    std::string dataset = "mnist";
    int normal_class = 0;
    std::size_t n_experiences = 5;
    double alpha = 0.1;
    std::vector<double> beta;                  // empty -> equal spread
    double gamma = 0.05;
    double zeta = 0.0;
    std::vector<std::vector<int>> lambda_classes;  // empty -> all anomalous classes everywhere
    std::uint64_t seed = 0;
    double val_fraction = 0.10;
    bool augment_normal_labelled = false;
    std::size_t n_test_episodes = 15;
    std::size_t train_subsample = 0;           // 0 -> use the full training split

    /// Fills the defaulted vectors (equal beta, all-classes lambda).
    void normalize() {
        if (beta.empty()) beta.assign(n_experiences, 1.0 / static_cast<double>(n_experiences));
        if (lambda_classes.empty()) {
            std::vector<int> all;
            for (int c = 0; c < 10; ++c)
                if (c != normal_class) all.push_back(c);
            lambda_classes.assign(n_experiences, all);
        }
    }

    void validate() const {
        require(n_experiences >= 1, "n_experiences must be >= 1");
        require(normal_class >= 0 && normal_class <= 9, "normal_class must be in 0..9");
        require(alpha > 0.0 && alpha <= 1.0, "alpha must be in (0,1]");
        require(gamma >= 0.0 && gamma < 1.0, "gamma must be in [0,1)");
        require(zeta >= 0.0 && zeta < 1.0, "zeta must be in [0,1)");
        require(val_fraction >= 0.0 && val_fraction < 1.0, "val_fraction must be in [0,1)");
        require(beta.size() == n_experiences, "|beta| must equal n_experiences");
        double sum = 0.0;
        for (double b : beta) {
            require(b >= 0.0, "beta entries must be non-negative");
            sum += b;
        }
        require(std::abs(sum - 1.0) <= 1e-9, "beta must sum to 1");
        require(lambda_classes.size() == n_experiences, "|lambda_classes| must equal n_experiences");
        for (const auto& lc : lambda_classes) {
            require(!lc.empty(), "lambda_classes entries must be non-empty");
            for (int c : lc) {
                require(c >= 0 && c <= 9, "lambda class ids must be in 0..9");
                require(c != normal_class, "normal_class may not appear in lambda_classes");
            }
        }
        require(n_test_episodes >= 1, "n_test_episodes must be >= 1");
    }
};

inline void to_json(nlohmann::json& j, const StreamSpec& s) {
    j = nlohmann::json{{"dataset", s.dataset},
                       {"normal_class", s.normal_class},
                       {"n_experiences", s.n_experiences},
                       {"alpha", s.alpha},
                       {"beta", s.beta},
                       {"gamma", s.gamma},
                       {"zeta", s.zeta},
                       {"lambda_classes", s.lambda_classes},
                       {"seed", s.seed},
                       {"val_fraction", s.val_fraction},
                       {"augment_normal_labelled", s.augment_normal_labelled},
                       {"n_test_episodes", s.n_test_episodes},
                       {"train_subsample", s.train_subsample}};
}

inline void from_json(const nlohmann::json& j, StreamSpec& s) {
    StreamSpec d;
    if (!j.contains("normal_class")) throw ValidationError("stream spec: normal_class is required");
    s.dataset = j.value("dataset", d.dataset);
    s.normal_class = j.at("normal_class").get<int>();
    s.n_experiences = j.value("n_experiences", d.n_experiences);
    s.alpha = j.value("alpha", d.alpha);
    s.beta = j.value("beta", d.beta);
    s.gamma = j.value("gamma", d.gamma);
    s.zeta = j.value("zeta", d.zeta);
    s.lambda_classes = j.value("lambda_classes", d.lambda_classes);
    s.seed = j.value("seed", d.seed);
    s.val_fraction = j.value("val_fraction", d.val_fraction);
    s.augment_normal_labelled = j.value("augment_normal_labelled", d.augment_normal_labelled);
    s.n_test_episodes = j.value("n_test_episodes", d.n_test_episodes);
    s.train_subsample = j.value("train_subsample", d.train_subsample);
}

/// What a training loop is allowed to see of one experience.
struct TrainingView {
    Matrix x_labelled;
    std::vector<int> y_labelled;  // 0 normal, 1 anomalous
    Matrix x_unlabelled;

    [[nodiscard]] bool empty() const { return x_labelled.rows() == 0 && x_unlabelled.rows() == 0; }
};

struct GroundTruth;

/// One disjoint chunk of a stream, stored as sample indices into the shared dataset.
/// The ground truth of the unlabelled part is private; only `GroundTruth` (the
/// evaluation side) can read it.
class Experience {
public:
    Experience() = default;
    Experience(std::shared_ptr<const BinaryDataset> data, std::size_t index)
        : data_(std::move(data)), index_(index) {}

    [[nodiscard]] std::size_t index() const { return index_; }
    [[nodiscard]] const std::vector<std::size_t>& labelled_indices() const { return labelled_idx_; }
    [[nodiscard]] const std::vector<int>& y_labelled() const { return labelled_y_; }
    [[nodiscard]] const std::vector<std::size_t>& unlabelled_indices() const { return unlabelled_idx_; }
    [[nodiscard]] const BinaryDataset& dataset() const { return *data_; }
    [[nodiscard]] std::shared_ptr<const BinaryDataset> dataset_ptr() const { return data_; }

    [[nodiscard]] Matrix x_labelled() const { return gather_rows(*data_->images, labelled_idx_); }
    [[nodiscard]] Matrix x_unlabelled() const { return gather_rows(*data_->images, unlabelled_idx_); }

    [[nodiscard]] TrainingView training_view() const {
        return {x_labelled(), labelled_y_, x_unlabelled()};
    }

    [[nodiscard]] std::size_t labelled_count(int y) const {
        return static_cast<std::size_t>(std::count(labelled_y_.begin(), labelled_y_.end(), y));
    }
    [[nodiscard]] std::size_t unlabelled_size() const { return unlabelled_idx_.size(); }
    [[nodiscard]] std::size_t labelled_size() const { return labelled_idx_.size(); }

    void add_labelled(std::size_t idx, int y) {
        labelled_idx_.push_back(idx);
        labelled_y_.push_back(y);
    }
    void add_unlabelled(std::size_t idx) {
        unlabelled_idx_.push_back(idx);
        hidden_y_unlabelled_.push_back(data_->binary.at(idx));
    }

    /// Shuffles the labelled and unlabelled orderings independently.
    void shuffle(Rng& rng) {
        std::vector<std::size_t> perm(labelled_idx_.size());
        std::iota(perm.begin(), perm.end(), 0);
        shuffle_in_place(perm, rng);
        std::vector<std::size_t> li(perm.size());
        std::vector<int> ly(perm.size());
        for (std::size_t i = 0; i < perm.size(); ++i) {
            li[i] = labelled_idx_[perm[i]];
            ly[i] = labelled_y_[perm[i]];
        }
        labelled_idx_ = std::move(li);
        labelled_y_ = std::move(ly);

        perm.resize(unlabelled_idx_.size());
        std::iota(perm.begin(), perm.end(), 0);
        shuffle_in_place(perm, rng);
        std::vector<std::size_t> ui(perm.size());
        std::vector<int> uy(perm.size());
        for (std::size_t i = 0; i < perm.size(); ++i) {
            ui[i] = unlabelled_idx_[perm[i]];
            uy[i] = hidden_y_unlabelled_[perm[i]];
        }
        unlabelled_idx_ = std::move(ui);
        hidden_y_unlabelled_ = std::move(uy);
    }

    /// Removes the labelled entries at the given positions (positions, not sample ids).
    void remove_labelled_positions(const std::set<std::size_t>& positions) {
        std::vector<std::size_t> li;
        std::vector<int> ly;
        for (std::size_t i = 0; i < labelled_idx_.size(); ++i) {
            if (positions.count(i)) continue;
            li.push_back(labelled_idx_[i]);
            ly.push_back(labelled_y_[i]);
        }
        labelled_idx_ = std::move(li);
        labelled_y_ = std::move(ly);
    }

private:
    friend struct GroundTruth;
    std::shared_ptr<const BinaryDataset> data_;
    std::size_t index_ = 0;
    std::vector<std::size_t> labelled_idx_;
    std::vector<int> labelled_y_;
    std::vector<std::size_t> unlabelled_idx_;
    std::vector<int> hidden_y_unlabelled_;
};

/// Evaluation-side access to hidden unlabelled labels.
struct GroundTruth {
    static const std::vector<int>& unlabelled_labels(const Experience& e) { return e.hidden_y_unlabelled_; }
    static std::vector<int> unlabelled_original_classes(const Experience& e) {
        std::vector<int> out;
        out.reserve(e.unlabelled_idx_.size());
        for (auto i : e.unlabelled_idx_) out.push_back(e.data_->original_class[i]);
        return out;
    }
};

enum class StreamKind { train, validation, test };

inline std::string to_string(StreamKind k) {
    switch (k) {
        case StreamKind::train: return "train";
        case StreamKind::validation: return "validation";
        case StreamKind::test: return "test";
    }
    return "?";
}

struct Stream {
    std::vector<Experience> experiences;
    StreamSpec spec;
    StreamKind kind = StreamKind::train;
    std::size_t rounding_residual = 0;  // samples by which the composition misses exact percentages

    [[nodiscard]] std::size_t size() const { return experiences.size(); }
    [[nodiscard]] bool empty() const { return experiences.empty(); }

    /// Training view of experience i; labelled normals are doubled by augmentation
    /// when the spec asks for it.
    [[nodiscard]] TrainingView training_view(std::size_t i) const {
        auto view = experiences.at(i).training_view();
        if (kind == StreamKind::train && spec.augment_normal_labelled) {
            std::vector<std::size_t> normal_rows;
            for (std::size_t r = 0; r < view.y_labelled.size(); ++r)
                if (view.y_labelled[r] == 0) normal_rows.push_back(r);
            if (!normal_rows.empty()) {
                Matrix normals = gather_rows(view.x_labelled, normal_rows);
                Rng rng(derive_seed(spec.seed, "augment", i));
                Matrix aug = augment_normal_labelled(normals, experiences[i].dataset().shape, rng);
                view.x_labelled = vstack(view.x_labelled, aug);
                view.y_labelled.insert(view.y_labelled.end(), normal_rows.size(), 0);
            }
        }
        return view;
    }
};

namespace detail {

/// Splits `total` into integer parts proportional to `weights` (largest remainder,
/// ties broken by position). Every part is within 1 of its exact share.
inline std::vector<std::size_t> apportion(std::size_t total, std::span<const double> weights) {
    const double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
    std::vector<std::size_t> out(weights.size(), 0);
    if (weights.empty() || wsum <= 0.0) return out;
    std::vector<std::pair<double, std::size_t>> rema;
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const double exact = static_cast<double>(total) * weights[i] / wsum;
        out[i] = static_cast<std::size_t>(std::floor(exact));
        assigned += out[i];
        rema.emplace_back(exact - std::floor(exact), i);
    }
    std::stable_sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t k = 0; assigned < total && k < rema.size(); ++k, ++assigned) ++out[rema[k].second];
    return out;
}

/// Anomalies needed so they form `rate` of a set that already has `base` normals.
inline std::size_t anomalies_for(std::size_t base, double rate) {
    if (rate <= 0.0) return 0;
    return round_half_up(static_cast<double>(base) * rate / (1.0 - rate));
}

/// Per-class pools of not-yet-used anomalous samples.
class AnomalyPools {
public:
    AnomalyPools(const BinaryDataset& data, std::span<const std::size_t> candidates, Rng& rng) {
        for (auto i : candidates)
            if (data.binary[i] == 1) pools_[data.original_class[i]].push_back(i);
        for (auto& [c, p] : pools_) shuffle_in_place(p, rng);
    }

    /// Draws `n` samples uniformly over the remaining samples of `classes`.
    std::vector<std::size_t> draw(std::size_t n, const std::vector<int>& classes, Rng& rng,
                                  const std::string& where) {
        std::vector<std::size_t> out;
        for (std::size_t k = 0; k < n; ++k) {
            std::size_t remaining = 0;
            for (int c : classes) remaining += pools_[c].size();
            if (remaining == 0) {
                std::ostringstream os;
                os << where << ": needs " << n << " anomalies but only " << k
                   << " were available in classes {";
                for (std::size_t j = 0; j < classes.size(); ++j) os << (j ? "," : "") << classes[j];
                os << "}";
                throw CapacityError(os.str());
            }
            std::uniform_int_distribution<std::size_t> pick(0, remaining - 1);
            std::size_t r = pick(rng);
            for (int c : classes) {
                auto& p = pools_[c];
                if (r < p.size()) {
                    out.push_back(p[r]);
                    p[r] = p.back();
                    p.pop_back();
                    break;
                }
                r -= p.size();
            }
        }
        return out;
    }

private:
    std::map<int, std::vector<std::size_t>> pools_;
};

/// Seeded stratified subset of `n` rows (proportional per original class).
inline std::vector<std::size_t> stratified_subset(const BinaryDataset& data, std::size_t n, Rng& rng) {
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < data.size(); ++i) by_class[data.original_class[i]].push_back(i);
    std::vector<double> w;
    for (auto& [c, v] : by_class) w.push_back(static_cast<double>(v.size()));
    auto take = apportion(n, w);
    std::vector<std::size_t> out;
    std::size_t k = 0;
    for (auto& [c, v] : by_class) {
        shuffle_in_place(v, rng);
        out.insert(out.end(), v.begin(), v.begin() + static_cast<std::ptrdiff_t>(take[k++]));
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace detail

/// Builds the training stream. Sample-disjoint across experiences.
inline Stream build_training_stream(std::shared_ptr<const BinaryDataset> data, StreamSpec spec) {
    spec.normalize();
    spec.validate();
    require(data->normal_class == spec.normal_class, "dataset normal class differs from spec");
    Rng rng(derive_seed(spec.seed, "train-stream"));

    std::vector<std::size_t> pool(data->size());
    std::iota(pool.begin(), pool.end(), 0);
    if (spec.train_subsample > 0 && spec.train_subsample < data->size())
        pool = detail::stratified_subset(*data, spec.train_subsample, rng);

    std::vector<std::size_t> normals;
    for (auto i : pool)
        if (data->binary[i] == 0) normals.push_back(i);
    shuffle_in_place(normals, rng);

    const std::size_t n_lab = round_half_up(spec.alpha * static_cast<double>(normals.size()));
    if (n_lab == 0) throw CapacityError("alpha selects zero labelled normals");
    const auto lab_counts = detail::apportion(n_lab, spec.beta);
    std::vector<double> equal(spec.n_experiences, 1.0);
    const auto unl_counts = detail::apportion(normals.size() - n_lab, equal);

    detail::AnomalyPools anomalies(*data, pool, rng);

    Stream s;
    s.spec = spec;
    s.kind = StreamKind::train;
    std::size_t lab_cursor = 0;
    std::size_t unl_cursor = n_lab;
    for (std::size_t e = 0; e < spec.n_experiences; ++e) {
        Experience exp(data, e);
        for (std::size_t k = 0; k < lab_counts[e]; ++k) exp.add_labelled(normals[lab_cursor++], 0);
        for (std::size_t k = 0; k < unl_counts[e]; ++k) exp.add_unlabelled(normals[unl_cursor++]);

        const std::string where = "experience " + std::to_string(e);
        for (auto i : anomalies.draw(detail::anomalies_for(lab_counts[e], spec.gamma), spec.lambda_classes[e],
                                     rng, where + " (labelled)"))
            exp.add_labelled(i, 1);
        for (auto i : anomalies.draw(detail::anomalies_for(unl_counts[e], spec.zeta), spec.lambda_classes[e],
                                     rng, where + " (unlabelled)"))
            exp.add_unlabelled(i);
        exp.shuffle(rng);
        s.experiences.push_back(std::move(exp));
    }
    return s;
}

/// Carves a per-experience stratified validation split out of the labelled data
/// of `train` (removed from `train` in place).
inline Stream build_validation_stream(Stream& train, double val_fraction) {
    require(val_fraction >= 0.0 && val_fraction < 1.0, "val_fraction must be in [0,1)");
    Stream val;
    val.spec = train.spec;
    val.kind = StreamKind::validation;
    for (auto& exp : train.experiences) {
        Rng rng(derive_seed(train.spec.seed, "validation", exp.index()));
        Experience v(exp.dataset_ptr(), exp.index());
        const auto& ly = exp.y_labelled();
        std::map<int, std::vector<std::size_t>> by_class;
        for (std::size_t i = 0; i < ly.size(); ++i) by_class[ly[i]].push_back(i);

        std::set<std::size_t> taken;
        if (ly.size() >= 2 * by_class.size() && !ly.empty()) {
            for (auto& [y, positions] : by_class) {
                shuffle_in_place(positions, rng);
                const auto k = round_half_up(static_cast<double>(positions.size()) * val_fraction);
                taken.insert(positions.begin(), positions.begin() + static_cast<std::ptrdiff_t>(k));
            }
        } else if (!ly.empty()) {
            warn("validation split: experience " + std::to_string(exp.index()) +
                 " too small to stratify; using a simple random split");
            std::vector<std::size_t> positions(ly.size());
            std::iota(positions.begin(), positions.end(), 0);
            shuffle_in_place(positions, rng);
            const auto k = round_half_up(static_cast<double>(ly.size()) * val_fraction);
            taken.insert(positions.begin(), positions.begin() + static_cast<std::ptrdiff_t>(k));
        }
        for (auto pos : taken) v.add_labelled(exp.labelled_indices()[pos], ly[pos]);
        exp.remove_labelled_positions(taken);
        val.experiences.push_back(std::move(v));
    }
    return val;
}

/// Equal-sized test episodes, stratified over the original 10-class targets.
inline Stream build_test_stream(std::shared_ptr<const BinaryDataset> test, std::size_t n_episodes,
                                std::uint64_t seed, StreamSpec spec = {}) {
    require(n_episodes >= 1, "n_episodes must be >= 1");
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < test->size(); ++i) by_class[test->original_class[i]].push_back(i);
    for (const auto& [c, v] : by_class)
        if (v.size() < n_episodes)
            throw ValidationError("test stratification: class " + std::to_string(c) + " has " +
                                  std::to_string(v.size()) + " samples for " + std::to_string(n_episodes) +
                                  " episodes");
    Rng rng(derive_seed(seed, "test-stream"));
    Stream s;
    s.spec = spec;
    s.spec.n_test_episodes = n_episodes;
    s.kind = StreamKind::test;
    for (std::size_t e = 0; e < n_episodes; ++e) s.experiences.emplace_back(test, e);
    std::size_t k = 0;
    for (auto& [c, v] : by_class) {
        shuffle_in_place(v, rng);
        for (auto i : v) s.experiences[k++ % n_episodes].add_unlabelled(i);
    }
    for (auto& e : s.experiences) e.shuffle(rng);
    return s;
}

// ---------------------------------------------------------------------------
// Composition validator shared by real and synthetic streams.
// ---------------------------------------------------------------------------
struct StreamReport {
    std::vector<std::string> violations;
    [[nodiscard]] bool ok() const { return violations.empty(); }
};

/// Checks alpha/beta/gamma/zeta composition (+-1 sample), disjointness and lambda
/// respect. `val` (optional) is folded back into the labelled counts.
inline StreamReport validate_stream(const Stream& train, const Stream* val = nullptr) {
    StreamReport rep;
    const auto& spec = train.spec;
    auto fail = [&](const std::string& m) { rep.violations.push_back(m); };
    if (train.size() != spec.n_experiences) fail("experience count differs from spec");

    std::set<std::size_t> seen;
    std::size_t labelled_normals = 0;
    std::size_t all_normals = 0;
    std::vector<std::size_t> lab_normals_per_exp;
    for (std::size_t e = 0; e < train.size(); ++e) {
        const auto& exp = train.experiences[e];
        const auto& data = exp.dataset();
        std::size_t ln = 0, la = 0, un = 0, ua = 0;
        auto visit_labelled = [&](const Experience& x) {
            for (std::size_t i = 0; i < x.labelled_size(); ++i) {
                const auto idx = x.labelled_indices()[i];
                if (!seen.insert(idx).second) fail("sample " + std::to_string(idx) + " appears twice");
                const int y = x.y_labelled()[i];
                if (y != data.binary[idx]) fail("labelled y disagrees with dataset for sample " + std::to_string(idx));
                if (y == 0) ++ln;
                else {
                    ++la;
                    const auto& lc = spec.lambda_classes.at(e);
                    if (std::find(lc.begin(), lc.end(), data.original_class[idx]) == lc.end())
                        fail("experience " + std::to_string(e) + ": anomaly class outside lambda");
                }
            }
        };
        visit_labelled(exp);
        if (val && e < val->size()) visit_labelled(val->experiences[e]);
        for (auto idx : exp.unlabelled_indices()) {
            if (!seen.insert(idx).second) fail("sample " + std::to_string(idx) + " appears twice");
            if (data.binary[idx] == 0) ++un;
            else {
                ++ua;
                const auto& lc = spec.lambda_classes.at(e);
                if (std::find(lc.begin(), lc.end(), data.original_class[idx]) == lc.end())
                    fail("experience " + std::to_string(e) + ": unlabelled anomaly class outside lambda");
            }
        }
        const auto le = static_cast<double>(ln + la);
        if (std::abs(static_cast<double>(la) - spec.gamma * le) > 1.0)
            fail("experience " + std::to_string(e) + ": labelled anomaly rate off by more than 1 sample");
        const auto ue = static_cast<double>(un + ua);
        if (std::abs(static_cast<double>(ua) - spec.zeta * ue) > 1.0)
            fail("experience " + std::to_string(e) + ": unlabelled anomaly rate off by more than 1 sample");
        labelled_normals += ln;
        all_normals += ln + un;
        lab_normals_per_exp.push_back(ln);
    }
    if (std::abs(static_cast<double>(labelled_normals) - spec.alpha * static_cast<double>(all_normals)) > 1.0)
        fail("overall labelled-normal fraction off by more than 1 sample");
    for (std::size_t e = 0; e < lab_normals_per_exp.size() && e < spec.beta.size(); ++e)
        if (std::abs(static_cast<double>(lab_normals_per_exp[e]) -
                     spec.beta[e] * static_cast<double>(labelled_normals)) > 1.0)
            fail("experience " + std::to_string(e) + ": labelled-normal share off by more than 1 sample");
    return rep;
}

// ---------------------------------------------------------------------------
// Manifest: spec echo, per-experience counts and index lists, content hash.
// ---------------------------------------------------------------------------
inline nlohmann::json experience_json(const Experience& e) {
    nlohmann::json j;
    j["index"] = e.index();
    j["labelled_normal"] = e.labelled_count(0);
    j["labelled_anomalous"] = e.labelled_count(1);
    const auto& hidden = GroundTruth::unlabelled_labels(e);
    const auto ua = static_cast<std::size_t>(std::count(hidden.begin(), hidden.end(), 1));
    j["unlabelled_normal"] = e.unlabelled_size() - ua;
    j["unlabelled_anomalous"] = ua;
    j["labelled_indices"] = e.labelled_indices();
    j["labelled_y"] = e.y_labelled();
    j["unlabelled_indices"] = e.unlabelled_indices();
    return j;
}

inline nlohmann::json stream_manifest(const Stream& train, const Stream& val, const Stream& test) {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["spec"] = train.spec;
    j["dataset"] = train.empty() ? "" : train.experiences.front().dataset().name;
    j["dataset_hash"] = train.empty() ? "" : train.experiences.front().dataset().content_hash;
    j["test_dataset_hash"] = test.empty() ? "" : test.experiences.front().dataset().content_hash;
    auto dump = [](const Stream& s) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& e : s.experiences) arr.push_back(experience_json(e));
        return arr;
    };
    j["train"] = dump(train);
    j["validation"] = dump(val);
    j["test"] = dump(test);
    const auto report = validate_stream(train, &val);
    j["composition_ok"] = report.ok();
    j["violations"] = report.violations;
    j["content_hash"] = sha256_hex(j.dump());
    return j;
}

/// Complete set of streams for one spec.
struct StreamBundle {
    Stream train;
    Stream validation;
    Stream test;
};

inline StreamBundle build_streams(const RawDataset& train_raw, const RawDataset& test_raw, StreamSpec spec) {
    spec.normalize();
    auto train_bin = std::make_shared<const BinaryDataset>(apply_anomaly_transform(train_raw, spec.normal_class));
    auto test_bin = std::make_shared<const BinaryDataset>(apply_anomaly_transform(test_raw, spec.normal_class));
    StreamBundle b;
    b.train = build_training_stream(train_bin, spec);
    b.validation = build_validation_stream(b.train, spec.val_fraction);
    b.test = build_test_stream(test_bin, spec.n_test_episodes, spec.seed, b.train.spec);
    return b;
}

}  // namespace csad
