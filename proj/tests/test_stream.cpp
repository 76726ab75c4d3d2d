#include "csad/augment.hpp"
#include "csad/stream.hpp"

#include <gtest/gtest.h>

#include <set>

using namespace csad;

namespace {

// Labelled dataset with `per_class[c]` samples of class c; pixels encode the row id.
std::shared_ptr<BinaryDataset> make_dataset(const std::vector<std::size_t>& per_class, int normal_class,
                                            int dim = 4) {
    RawDataset raw;
    std::size_t n = 0;
    for (auto k : per_class) n += k;
    raw.images = Matrix(static_cast<Eigen::Index>(n), dim);
    std::size_t r = 0;
    for (std::size_t c = 0; c < per_class.size(); ++c)
        for (std::size_t k = 0; k < per_class[c]; ++k, ++r) {
            raw.images.row(static_cast<Eigen::Index>(r)).setConstant(static_cast<double>(r % 256) / 255.0);
            raw.labels.push_back(static_cast<int>(c));
        }
    raw.content_hash = "fixture";
    auto out = std::make_shared<BinaryDataset>(apply_anomaly_transform(raw, normal_class));
    out->shape = {1, 2, dim / 2};
    return out;
}

StreamSpec base_spec(std::size_t n_exp) {
    StreamSpec s;
    s.n_experiences = n_exp;
    s.normal_class = 0;
    return s;
}

}  // namespace

TEST(AnomalyTransform, BinaryLabels) {
    RawDataset raw;
    raw.images = Matrix::Zero(3, 2);
    raw.labels = {3, 3, 5};
    const auto b = apply_anomaly_transform(raw, 3);
    EXPECT_EQ(b.binary, (std::vector<int>{0, 0, 1}));
    EXPECT_EQ(b.original_class, raw.labels);
}

TEST(AnomalyTransform, AllNormalWarns) {
    RawDataset raw;
    raw.images = Matrix::Zero(2, 2);
    raw.labels = {4, 4};
    testing::internal::CaptureStderr();
    const auto b = apply_anomaly_transform(raw, 4);
    const auto err = testing::internal::GetCapturedStderr();
    EXPECT_EQ(b.binary, (std::vector<int>{0, 0}));
    EXPECT_NE(err.find("normal class"), std::string::npos);
}

TEST(TrainingStream, TwoExperiencesNoAnomalies) {
    auto data = make_dataset({1000, 100, 100}, 0);
    auto spec = base_spec(2);
    spec.alpha = 0.1;
    spec.beta = {0.5, 0.5};
    spec.gamma = 0.0;
    spec.zeta = 0.0;
    const auto s = build_training_stream(data, spec);
    ASSERT_EQ(s.size(), 2u);
    for (const auto& e : s.experiences) {
        EXPECT_EQ(e.labelled_count(0), 50u);
        EXPECT_EQ(e.labelled_count(1), 0u);
        EXPECT_EQ(e.unlabelled_size(), 450u);
        const auto& hidden = GroundTruth::unlabelled_labels(e);
        EXPECT_EQ(std::count(hidden.begin(), hidden.end(), 1), 0);
    }
}

TEST(TrainingStream, LabelledAnomalyFraction) {
    auto data = make_dataset({1000, 50, 50}, 0);
    auto spec = base_spec(1);
    spec.alpha = 0.2;
    spec.beta = {1.0};
    spec.gamma = 0.05;
    const auto s = build_training_stream(data, spec);
    const auto& e = s.experiences[0];
    EXPECT_EQ(e.labelled_count(0), 200u);
    // 200 * 0.05 / 0.95 = 10.53 -> 11 anomalies, 5.2% of the labelled set.
    EXPECT_EQ(e.labelled_count(1), 11u);
    EXPECT_LE(std::abs(11.0 - 0.05 * 211.0), 1.0);
}

TEST(TrainingStream, AblationOneDefaults) {
    StreamSpec s;
    s.normalize();
    EXPECT_EQ(s.n_experiences, 5u);
    EXPECT_DOUBLE_EQ(s.gamma, 0.05);
    EXPECT_DOUBLE_EQ(s.zeta, 0.0);
    for (double b : s.beta) EXPECT_DOUBLE_EQ(b, 0.2);
    for (const auto& lc : s.lambda_classes) EXPECT_EQ(lc, (std::vector<int>{1, 2, 3, 4, 5, 6, 7, 8, 9}));
}

TEST(TrainingStream, InvalidSpecs) {
    auto data = make_dataset({100, 100}, 0);
    auto spec = base_spec(2);
    spec.beta = {0.5, 0.6};
    EXPECT_THROW(build_training_stream(data, spec), ValidationError);
    spec = base_spec(2);
    spec.lambda_classes = {{1}, {0}};
    EXPECT_THROW(build_training_stream(data, spec), ValidationError);
    spec = base_spec(2);
    spec.lambda_classes = {{1}, {}};
    EXPECT_THROW(build_training_stream(data, spec), ValidationError);
    spec = base_spec(2);
    spec.beta = {1.0};
    EXPECT_THROW(build_training_stream(data, spec), ValidationError);
}

TEST(TrainingStream, NotEnoughAnomaliesIsCapacityError) {
    auto data = make_dataset({1000, 3}, 0);
    auto spec = base_spec(1);
    spec.zeta = 0.5;
    spec.lambda_classes = {{1}};
    try {
        build_training_stream(data, spec);
        FAIL() << "expected CapacityError";
    } catch (const CapacityError& e) {
        EXPECT_NE(std::string(e.what()).find("{1}"), std::string::npos);
    }
}

TEST(TrainingStream, LambdaRestrictsClasses) {
    auto data = make_dataset({500, 200, 200, 200}, 0);
    auto spec = base_spec(3);
    spec.gamma = 0.2;
    spec.zeta = 0.2;
    spec.lambda_classes = {{1}, {2, 3}, {3}};
    const auto s = build_training_stream(data, spec);
    for (std::size_t e = 0; e < 3; ++e) {
        const auto& exp = s.experiences[e];
        for (std::size_t i = 0; i < exp.labelled_size(); ++i)
            if (exp.y_labelled()[i] == 1) {
                const int c = data->original_class[exp.labelled_indices()[i]];
                EXPECT_NE(std::find(spec.lambda_classes[e].begin(), spec.lambda_classes[e].end(), c),
                          spec.lambda_classes[e].end());
            }
        for (int c : GroundTruth::unlabelled_original_classes(exp))
            if (c != 0) {
                EXPECT_NE(std::find(spec.lambda_classes[e].begin(), spec.lambda_classes[e].end(), c),
                          spec.lambda_classes[e].end());
            }
    }
}

TEST(TrainingStream, SubsampleIsStratified) {
    auto data = make_dataset({600, 300, 100}, 0);
    auto spec = base_spec(2);
    spec.train_subsample = 500;
    spec.zeta = 0.1;
    const auto s = build_training_stream(data, spec);
    std::size_t normals = 0;
    for (const auto& e : s.experiences) {
        normals += e.labelled_count(0);
        const auto& hidden = GroundTruth::unlabelled_labels(e);
        normals += static_cast<std::size_t>(std::count(hidden.begin(), hidden.end(), 0));
    }
    EXPECT_EQ(normals, 300u);
}

TEST(ValidationStream, ExactStratification) {
    auto data = make_dataset({1000, 100}, 0);
    auto spec = base_spec(1);
    spec.alpha = 0.09;
    spec.gamma = 0.1;
    auto s = build_training_stream(data, spec);
    ASSERT_EQ(s.experiences[0].labelled_count(0), 90u);
    ASSERT_EQ(s.experiences[0].labelled_count(1), 10u);
    const auto v = build_validation_stream(s, 0.1);
    EXPECT_EQ(v.experiences[0].labelled_count(0), 9u);
    EXPECT_EQ(v.experiences[0].labelled_count(1), 1u);
    EXPECT_EQ(s.experiences[0].labelled_count(0), 81u);
    EXPECT_EQ(s.experiences[0].labelled_count(1), 9u);
    std::set<std::size_t> a(s.experiences[0].labelled_indices().begin(), s.experiences[0].labelled_indices().end());
    for (auto i : v.experiences[0].labelled_indices()) EXPECT_EQ(a.count(i), 0u);
}

TEST(ValidationStream, NoAnomaliesWhenGammaZero) {
    auto data = make_dataset({1000, 100}, 0);
    auto spec = base_spec(3);
    spec.gamma = 0.0;
    auto s = build_training_stream(data, spec);
    const auto v = build_validation_stream(s, 0.1);
    for (const auto& e : v.experiences) EXPECT_EQ(e.labelled_count(1), 0u);
}

TEST(ValidationStream, TinyExperienceFallsBack) {
    auto data = make_dataset({10, 50}, 0);
    auto spec = base_spec(5);
    spec.alpha = 0.2;  // 2 labelled normals over 5 experiences
    auto s = build_training_stream(data, spec);
    testing::internal::CaptureStderr();
    const auto v = build_validation_stream(s, 0.5);
    const auto err = testing::internal::GetCapturedStderr();
    EXPECT_NE(err.find("too small"), std::string::npos);
    EXPECT_EQ(v.size(), 5u);
}

TEST(TestStream, OneEpisodeHoldsEverything) {
    auto data = make_dataset({30, 40, 30}, 0);
    const auto t = build_test_stream(data, 1, 3);
    ASSERT_EQ(t.size(), 1u);
    EXPECT_EQ(t.experiences[0].unlabelled_size(), 100u);
}

TEST(TestStream, BalancedSetSplitsExactly) {
    auto data = make_dataset(std::vector<std::size_t>(10, 10), 0);
    const auto t = build_test_stream(data, 5, 11);
    ASSERT_EQ(t.size(), 5u);
    std::set<std::size_t> seen;
    for (const auto& e : t.experiences) {
        EXPECT_EQ(e.unlabelled_size(), 20u);
        std::map<int, int> counts;
        for (int c : GroundTruth::unlabelled_original_classes(e)) ++counts[c];
        for (int c = 0; c < 10; ++c) EXPECT_EQ(counts[c], 2);
        for (auto i : e.unlabelled_indices()) EXPECT_TRUE(seen.insert(i).second);
    }
}

TEST(TestStream, ProportionsWithinOne) {
    auto data = make_dataset({98, 113, 101, 87, 95, 104, 90, 99, 100, 103}, 0);
    const auto t = build_test_stream(data, 15, 5);
    for (const auto& e : t.experiences) {
        std::map<int, double> counts;
        for (int c : GroundTruth::unlabelled_original_classes(e)) counts[c] += 1;
        for (int c = 0; c < 10; ++c) {
            const double expected = static_cast<double>(data->size()) / 15.0 *
                                    (static_cast<double>(std::count(data->original_class.begin(),
                                                                    data->original_class.end(), c)) /
                                     static_cast<double>(data->size()));
            EXPECT_LE(std::abs(counts[c] - expected), 1.0);
        }
    }
}

TEST(TestStream, TooFewSamplesPerClass) {
    auto data = make_dataset({20, 3}, 0);
    EXPECT_THROW(build_test_stream(data, 5, 1), ValidationError);
}

TEST(Composition, FiftyRandomSpecs) {
    Rng rng(20240601);
    std::uniform_int_distribution<int> n_exp_d(1, 6), k_d(1, 9), cls(0, 9);
    std::uniform_real_distribution<double> alpha_d(0.02, 1.0), gamma_d(0.0, 0.3), zeta_d(0.0, 0.5), w(0.05, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        const int normal = cls(rng);
        std::vector<std::size_t> per_class(10, 200);
        per_class[static_cast<std::size_t>(normal)] = 100;
        auto data = make_dataset(per_class, normal);

        StreamSpec spec;
        spec.normal_class = normal;
        spec.n_experiences = static_cast<std::size_t>(n_exp_d(rng));
        spec.alpha = alpha_d(rng);
        spec.gamma = gamma_d(rng);
        spec.zeta = zeta_d(rng);
        spec.seed = rng();
        double sum = 0.0;
        for (std::size_t e = 0; e < spec.n_experiences; ++e) sum += spec.beta.emplace_back(w(rng));
        for (auto& b : spec.beta) b /= sum;
        sum = std::accumulate(spec.beta.begin(), spec.beta.end(), 0.0);
        spec.beta.back() += 1.0 - sum;
        for (std::size_t e = 0; e < spec.n_experiences; ++e) {
            std::vector<int> others;
            for (int c = 0; c < 10; ++c)
                if (c != normal) others.push_back(c);
            shuffle_in_place(others, rng);
            others.resize(static_cast<std::size_t>(k_d(rng)));
            std::sort(others.begin(), others.end());
            spec.lambda_classes.push_back(others);
        }

        auto train = build_training_stream(data, spec);
        ASSERT_TRUE(validate_stream(train).ok()) << "trial " << trial;
        const auto val = build_validation_stream(train, 0.1);
        const auto rep = validate_stream(train, &val);
        EXPECT_TRUE(rep.ok()) << "trial " << trial << ": " << (rep.ok() ? "" : rep.violations.front());

        // Independent recount of the composition.
        std::set<std::size_t> seen;
        std::size_t lab_normals = 0, normals = 0;
        for (std::size_t e = 0; e < train.size(); ++e) {
            std::size_t ln = 0, la = 0, un = 0, ua = 0;
            for (const Experience* x : std::array<const Experience*, 2>{&train.experiences[e], &val.experiences[e]})
                for (std::size_t i = 0; i < x->labelled_size(); ++i) {
                    const auto idx = x->labelled_indices()[i];
                    EXPECT_TRUE(seen.insert(idx).second);
                    (data->binary[idx] ? la : ln) += 1;
                }
            for (auto idx : train.experiences[e].unlabelled_indices()) {
                EXPECT_TRUE(seen.insert(idx).second);
                (data->binary[idx] ? ua : un) += 1;
            }
            EXPECT_LE(std::abs(static_cast<double>(la) - spec.gamma * static_cast<double>(ln + la)), 1.0);
            EXPECT_LE(std::abs(static_cast<double>(ua) - spec.zeta * static_cast<double>(un + ua)), 1.0);
            lab_normals += ln;
            normals += ln + un;
        }
        EXPECT_LE(std::abs(static_cast<double>(lab_normals) - spec.alpha * static_cast<double>(normals)), 1.0);

        auto train2 = build_training_stream(data, spec);
        const auto val2 = build_validation_stream(train2, 0.1);
        const auto test = build_test_stream(data, 5, spec.seed);
        const auto test2 = build_test_stream(data, 5, spec.seed);
        EXPECT_EQ(stream_manifest(train, val, test).dump(), stream_manifest(train2, val2, test2).dump());
    }
}

TEST(Composition, DifferentSeedsDiffer) {
    auto data = make_dataset({300, 200, 200}, 0);
    auto spec = base_spec(3);
    spec.seed = 1;
    auto a = build_training_stream(data, spec);
    spec.seed = 2;
    auto b = build_training_stream(data, spec);
    EXPECT_NE(a.experiences[0].labelled_indices(), b.experiences[0].labelled_indices());
}

TEST(Composition, ValidatorCatchesOverlap) {
    auto data = make_dataset({300, 200}, 0);
    auto s = build_training_stream(data, base_spec(2));
    s.experiences[1].add_unlabelled(s.experiences[0].unlabelled_indices()[0]);
    EXPECT_FALSE(validate_stream(s).ok());
}

TEST(Manifest, RecordsCountsAndHash) {
    auto data = make_dataset({300, 200, 200}, 0);
    auto spec = base_spec(2);
    spec.seed = 9;
    auto train = build_training_stream(data, spec);
    const auto val = build_validation_stream(train, 0.1);
    const auto test = build_test_stream(data, 3, 9);
    const auto m = stream_manifest(train, val, test);
    EXPECT_EQ(m["schema_version"], 1);
    EXPECT_EQ(m["train"].size(), 2u);
    EXPECT_EQ(m["test"].size(), 3u);
    EXPECT_TRUE(m["composition_ok"].get<bool>());
    EXPECT_EQ(m["content_hash"].get<std::string>().size(), 64u);
    const auto spec_back = m["spec"].get<StreamSpec>();
    EXPECT_EQ(spec_back.seed, 9u);
    EXPECT_EQ(spec_back.n_experiences, 2u);
}

TEST(Augment, ZeroImageIsFixed) {
    const ImageShape shape{1, 28, 28};
    Rng rng(1);
    const Matrix z = Matrix::Zero(3, 784);
    EXPECT_EQ(augment_normal_labelled(z, shape, rng), z);
}

TEST(Augment, ShapeRangeAndDeterminism) {
    const ImageShape shape{1, 28, 28};
    Rng src(2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Matrix x(5, 784);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = u(src);
    Rng a(77), b(77);
    const Matrix ya = augment_normal_labelled(x, shape, a);
    const Matrix yb = augment_normal_labelled(x, shape, b);
    ASSERT_EQ(ya.rows(), 5);
    ASSERT_EQ(ya.cols(), 784);
    EXPECT_GE(ya.minCoeff(), 0.0);
    EXPECT_LE(ya.maxCoeff(), 1.0);
    EXPECT_EQ(std::memcmp(ya.data(), yb.data(), sizeof(double) * static_cast<std::size_t>(ya.size())), 0);
    EXPECT_NE(ya, x);
}

TEST(Augment, OpsOnKnownImages) {
    const ImageShape shape{1, 3, 3};
    Matrix img = Matrix::Zero(1, 9);
    img(0, 4) = 1.0;  // centre pixel
    const Matrix sh = augment_ops::shift(img, shape, 1, 0);
    EXPECT_EQ(sh(0, 5), 1.0);
    EXPECT_EQ(sh.sum(), 1.0);
    const Matrix r = augment_ops::rotate(img, shape, 0.0);
    EXPECT_NEAR((r - img).cwiseAbs().maxCoeff(), 0.0, 1e-12);
    const Matrix c = augment_ops::contrast(img, 1.0);
    EXPECT_NEAR((c - img).cwiseAbs().maxCoeff(), 0.0, 1e-12);
}

TEST(Augment, TrainingViewDoublesLabelledNormals) {
    auto data = make_dataset({400, 100}, 0, 4);
    auto spec = base_spec(2);
    spec.augment_normal_labelled = true;
    auto s = build_training_stream(data, spec);
    const auto plain = s.experiences[0].training_view();
    const auto view = s.training_view(0);
    const auto normals = s.experiences[0].labelled_count(0);
    EXPECT_EQ(view.x_labelled.rows(), plain.x_labelled.rows() + static_cast<Eigen::Index>(normals));
    EXPECT_EQ(std::count(view.y_labelled.begin(), view.y_labelled.end(), 0),
              static_cast<std::ptrdiff_t>(2 * normals));
    const auto again = s.training_view(0);
    EXPECT_EQ(view.x_labelled, again.x_labelled);
}
