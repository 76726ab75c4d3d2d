#include "csad/checkpoint.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <unistd.h>

using namespace csad;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
    const auto d = fs::temp_directory_path() / ("csad_ckpt_" + std::to_string(::getpid()));
    fs::create_directories(d);
    return d / name;
}

Checkpoint sample_checkpoint() {
    SSVAEConfig c;
    c.input_dim = 64;
    c.latent_dim = 3;
    c.encoder_hidden = {8};
    c.image_shape = ImageShape{1, 8, 8};
    Checkpoint ck;
    ck.model = SSVAEModel(c, 42);
    ck.strategy = "or";
    ck.weibull = WeibullModel{0.11, 1.7, 0.23, 31, "cosine"};
    ck.z_bar = RowVector::LinSpaced(3, -0.5, 0.5);
    ck.acceptance_rates = {0.9, 0.75};
    ck.thresholds = {0.35, 0.5};
    Rng rng(5);
    rng.discard(17);
    ck.rng_state = rng_state_string(rng);
    ck.meta = {{"experience", 3}};
    return ck;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), {}};
}

}  // namespace

TEST(Checkpoint, BitExactRoundTrip) {
    const auto ck = sample_checkpoint();
    const auto p = temp_file("a.ckpt");
    save_checkpoint(p, ck);
    const auto back = load_checkpoint(p);
    EXPECT_TRUE(testing_support::same_params(ck.model, back.model));
    EXPECT_EQ(nlohmann::json(back.model.config).dump(), nlohmann::json(ck.model.config).dump());
    EXPECT_EQ(back.strategy, "or");
    ASSERT_TRUE(back.weibull.has_value());
    EXPECT_EQ(back.weibull->kappa, 1.7);
    EXPECT_EQ(back.z_bar, ck.z_bar);
    EXPECT_EQ(back.acceptance_rates, ck.acceptance_rates);
    EXPECT_EQ(back.thresholds, ck.thresholds);
    EXPECT_EQ(back.meta["experience"], 3);

    // The restored RNG continues the original sequence.
    Rng a(5);
    a.discard(17);
    Rng b = rng_from_state(back.rng_state);
    for (int i = 0; i < 10; ++i) EXPECT_EQ(a(), b());

    // Saving the loaded checkpoint reproduces the same bytes.
    const auto p2 = temp_file("b.ckpt");
    save_checkpoint(p2, back);
    EXPECT_EQ(slurp(p), slurp(p2));
    EXPECT_FALSE(fs::exists(fs::path(p.string() + ".tmp")));
}

TEST(Checkpoint, SameOutputsAfterReload) {
    const auto ck = sample_checkpoint();
    const auto p = temp_file("c.ckpt");
    save_checkpoint(p, ck);
    const auto back = load_checkpoint(p);
    Rng rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Matrix x(6, 64);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = u(rng);
    EXPECT_EQ(ck.model.elbo_score(x, 3), back.model.elbo_score(x, 3));
}

TEST(Checkpoint, MissingWeibullIsNull) {
    auto ck = sample_checkpoint();
    ck.weibull.reset();
    const auto p = temp_file("d.ckpt");
    save_checkpoint(p, ck);
    EXPECT_FALSE(load_checkpoint(p).weibull.has_value());
}

TEST(Checkpoint, FormatErrors) {
    const auto ck = sample_checkpoint();
    const auto p = temp_file("e.ckpt");
    save_checkpoint(p, ck);
    const std::string good = slurp(p);
    auto write = [&](const std::string& bytes) {
        std::ofstream f(p, std::ios::binary | std::ios::trunc);
        f << bytes;
    };

    std::string bad = good;
    bad[0] = 'X';
    write(bad);
    EXPECT_THROW(load_checkpoint(p), FormatError);

    bad = good;
    bad[8] = 9;  // version
    write(bad);
    EXPECT_THROW(load_checkpoint(p), FormatError);

    write(good.substr(0, good.size() - 5));
    EXPECT_THROW(load_checkpoint(p), FormatError);

    write(good.substr(0, 30));
    EXPECT_THROW(load_checkpoint(p), FormatError);

    EXPECT_THROW(load_checkpoint(temp_file("absent.ckpt")), FormatError);
    EXPECT_THROW(rng_from_state("not a state"), FormatError);
}

TEST(Checkpoint, ShapeMismatchIsFormatError) {
    auto ck = sample_checkpoint();
    const auto p = temp_file("f.ckpt");
    save_checkpoint(p, ck);
    std::string bytes = slurp(p);
    // First parameter block starts after magic, version, header length, header and count.
    std::uint64_t hlen = 0;
    std::memcpy(&hlen, bytes.data() + 12, 8);
    const std::size_t rows_at = 20 + hlen + 4;
    std::uint64_t rows = 0;
    std::memcpy(&rows, bytes.data() + rows_at, 8);
    ++rows;
    std::memcpy(bytes.data() + rows_at, &rows, 8);
    {
        std::ofstream f(p, std::ios::binary | std::ios::trunc);
        f << bytes;
    }
    EXPECT_THROW(load_checkpoint(p), FormatError);
}
