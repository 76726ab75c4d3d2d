#include "csad/eval.hpp"

#include <gtest/gtest.h>

#include <unistd.h>

using namespace csad;

namespace {

// O(n_pos * n_neg) pair count with half credit for ties.
double brute_force_auc(const std::vector<double>& s, const std::vector<int>& y) {
    double wins = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < s.size(); ++j)
            if (y[i] == 1 && y[j] == 0) {
                pairs += 1.0;
                wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
            }
    return wins / pairs;
}

double auc(const std::vector<double>& s, const std::vector<int>& y) { return auc_roc(s, y); }

}  // namespace

TEST(Auc, MatchesBruteForceOnRandomFixtures) {
    Rng rng(2024);
    std::uniform_int_distribution<int> n_d(2, 120), levels(1, 6), coin(0, 1);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int t = 0; t < 200; ++t) {
        const auto n = static_cast<std::size_t>(n_d(rng));
        std::vector<double> s(n);
        std::vector<int> y(n);
        // Half the fixtures use a handful of discrete score levels to force ties.
        const bool tied = t % 2 == 0;
        const int k = levels(rng);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = tied ? static_cast<double>(std::uniform_int_distribution<int>(0, k)(rng)) : g(rng);
            y[i] = coin(rng);
        }
        y[0] = 0;
        y[1] = 1;
        EXPECT_NEAR(auc(s, y), brute_force_auc(s, y), 1e-12) << "fixture " << t;
    }
}

TEST(Auc, PerfectAndReversedSeparation) {
    const std::vector<double> s{0.1, 0.2, 0.3, 0.8, 0.9};
    const std::vector<int> y{0, 0, 0, 1, 1};
    EXPECT_DOUBLE_EQ(auc(s, y), 1.0);
    const std::vector<int> flipped{1, 1, 1, 0, 0};
    EXPECT_DOUBLE_EQ(auc(s, flipped), 0.0);
}

TEST(Auc, ConstantScoresGiveHalf) {
    const std::vector<double> s(9, 3.0);
    const std::vector<int> y{0, 1, 0, 1, 1, 0, 0, 0, 1};
    EXPECT_DOUBLE_EQ(auc(s, y), 0.5);
}

TEST(Auc, InvariantUnderMonotoneTransform) {
    Rng rng(8);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> s(300), t(300);
    std::vector<int> y(300);
    for (std::size_t i = 0; i < s.size(); ++i) {
        y[i] = i % 3 == 0;
        s[i] = g(rng) + y[i];
        t[i] = std::exp(2.0 * s[i]) + 5.0;
    }
    EXPECT_DOUBLE_EQ(auc(s, y), auc(t, y));
}

TEST(Auc, LabelFlipComplements) {
    Rng rng(9);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> s(150);
    std::vector<int> y(150), f(150);
    for (std::size_t i = 0; i < s.size(); ++i) {
        s[i] = std::round(3.0 * g(rng));
        y[i] = i % 4 == 0;
        f[i] = 1 - y[i];
    }
    EXPECT_NEAR(auc(s, y) + auc(s, f), 1.0, 1e-15);
}

TEST(Auc, ErrorsOnBadInput) {
    const std::vector<double> s{0.1, 0.2};
    EXPECT_THROW(auc(s, {0, 0}), UndefinedAucError);
    EXPECT_THROW(auc(s, {1, 1}), UndefinedAucError);
    EXPECT_THROW(auc(s, {0, 2}), ValidationError);
    EXPECT_THROW(auc(s, {0}), ValidationError);
    EXPECT_THROW(auc({0.1, std::nan("")}, {0, 1}), ValidationError);
}

TEST(Episodes, MeanSkipsMissing) {
    std::vector<EpisodeResult> eps(3);
    eps[0].auc = 0.8;
    eps[2].auc = 0.6;
    EXPECT_DOUBLE_EQ(mean_auc(eps), 0.7);
    EXPECT_TRUE(std::isnan(mean_auc({EpisodeResult{}})));
}

TEST(Episodes, SingleClassEpisodeIsMissing) {
    auto ds = std::make_shared<BinaryDataset>();
    ds->images = std::make_shared<Matrix>(Matrix::Constant(4, 3, 0.5));
    ds->binary = {0, 0, 0, 0};
    ds->original_class = {0, 0, 0, 0};
    ds->shape = {1, 1, 3};
    Experience ep(ds, 0);
    for (std::size_t i = 0; i < 4; ++i) ep.add_unlabelled(i);
    SSVAEConfig c;
    c.input_dim = 3;
    c.latent_dim = 2;
    c.encoder_hidden = {4};
    const SSVAEModel model(c, 1);
    testing::internal::CaptureStderr();
    const auto r = evaluate_episode(model, ep, 5);
    const auto err = testing::internal::GetCapturedStderr();
    EXPECT_FALSE(r.auc.has_value());
    EXPECT_EQ(r.n_samples, 4u);
    EXPECT_EQ(r.n_anomalies, 0u);
    EXPECT_NE(err.find("single class"), std::string::npos);
}

TEST(Episodes, ScoreIsElboBased) {
    auto ds = std::make_shared<BinaryDataset>();
    Rng rng(4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Matrix x(20, 3);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = u(rng);
    ds->images = std::make_shared<Matrix>(x);
    for (int i = 0; i < 20; ++i) {
        ds->binary.push_back(i % 2);
        ds->original_class.push_back(i % 2);
    }
    ds->shape = {1, 1, 3};
    Experience ep(ds, 0);
    for (std::size_t i = 0; i < 20; ++i) ep.add_unlabelled(i);
    SSVAEConfig c;
    c.input_dim = 3;
    c.latent_dim = 2;
    c.encoder_hidden = {4};
    const SSVAEModel model(c, 2);
    const auto r = evaluate_episode(model, ep, 11);
    ASSERT_TRUE(r.auc.has_value());
    const Vector s = model.elbo_score(ep.x_unlabelled(), 11);
    const std::vector<double> sv(s.data(), s.data() + s.size());
    EXPECT_DOUBLE_EQ(*r.auc, brute_force_auc(sv, GroundTruth::unlabelled_labels(ep)));
}

TEST(Forgetting, PairsDuringWithFinal) {
    std::vector<EpisodeResult> during(2), final(2);
    during[0] = {0, 0.9, 10, 5};
    during[1] = {1, 0.8, 10, 5};
    final[0] = {0, 0.7, 10, 5};
    final[1] = {1, std::nullopt, 10, 0};
    const auto f = final_vs_during(during, final);
    ASSERT_EQ(f.size(), 2u);
    EXPECT_NEAR(*f[0].forgetting(), 0.2, 1e-15);
    EXPECT_FALSE(f[1].forgetting().has_value());
}

TEST(Results, JsonAndCsvRoundTrip) {
    ResultRecord r;
    r.dataset = "mnist";
    r.strategy = "or";
    r.experiment_id = 7;
    r.seed = 3;
    r.episodes = {{0, 0.75, 100, 40}, {1, std::nullopt, 90, 0}};
    r.mean_auc = 0.75;
    r.config_hash = "abc";
    r.forgetting = {{0, 0.8, 0.75}};
    r.extra = {{"acceptance_rates", {0.5, 0.25}}};

    const auto root = std::filesystem::temp_directory_path() / ("csad_eval_" + std::to_string(::getpid()));
    write_result(root, r);
    const auto p = result_path(root, 7, "mnist", "or", 3);
    EXPECT_TRUE(std::filesystem::exists(p));
    auto csv = p;
    csv.replace_extension(".csv");
    EXPECT_TRUE(std::filesystem::exists(csv));
    const auto back = read_result(p);
    EXPECT_EQ(nlohmann::json(back).dump(), nlohmann::json(r).dump());
    EXPECT_EQ(nlohmann::json(r)["schema_version"], 1);

    std::ifstream f(csv);
    std::string header, row1, row2;
    std::getline(f, header);
    std::getline(f, row1);
    std::getline(f, row2);
    EXPECT_EQ(header, "experiment_id,dataset,strategy,seed,episode,auc,n_samples,n_anomalies");
    EXPECT_EQ(row1, "7,mnist,or,3,0,0.75,100,40");
    EXPECT_EQ(row2, "7,mnist,or,3,1,,90,0");
    std::filesystem::remove_all(root);
}
