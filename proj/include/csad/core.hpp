#pragma once
// Shared numeric types, error hierarchy, seeding and hashing helpers.

#include <Eigen/Dense>

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <iostream>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace csad {

using Scalar = double;
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
using Rng = std::mt19937_64;

// ---------------------------------------------------------------------------
// Errors. Each maps onto a CLI exit code in tools/csad.cpp.
// ---------------------------------------------------------------------------
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class FormatError : public Error {        // malformed input files
public:
    using Error::Error;
};

class ValidationError : public Error {    // bad arguments / configs
public:
    using Error::Error;
};

class CapacityError : public Error {      // not enough samples to honour a stream recipe
public:
    using Error::Error;
};

class NumericError : public Error {       // non-finite activations or losses
public:
    using Error::Error;
};

class FitError : public Error {           // EVT fit impossible or degenerate
public:
    using Error::Error;
};

inline void require(bool cond, const std::string& what) {
    if (!cond) throw ValidationError(what);
}

// ---------------------------------------------------------------------------
// Logging. Warnings go to stderr; tests may silence them.
// ---------------------------------------------------------------------------
inline bool& warnings_enabled() {
    static bool enabled = true;
    return enabled;
}

inline void warn(const std::string& msg) {
    if (warnings_enabled()) std::cerr << "[csad warning] " << msg << '\n';
}

// ---------------------------------------------------------------------------
// Seeding. Independent streams are derived from one base seed so that adding
// a consumer in one stage never perturbs the draws of another.
// ---------------------------------------------------------------------------
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag) {
    std::uint64_t h = splitmix64(base);
    for (unsigned char c : tag) h = splitmix64(h ^ c);
    return h;
}

inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t index) {
    return splitmix64(derive_seed(base, tag) ^ splitmix64(index + 1));
}

inline Matrix standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    std::normal_distribution<Scalar> dist(0.0, 1.0);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
    return m;
}

// Deterministic for a given Rng state on one standard library.
template <typename T>
void shuffle_in_place(std::vector<T>& v, Rng& rng) {
    std::shuffle(v.begin(), v.end(), rng);
}

inline std::size_t round_half_up(double x) {
    return x <= 0.0 ? 0 : static_cast<std::size_t>(std::floor(x + 0.5));
}

// ---------------------------------------------------------------------------
// SHA-256 via OpenSSL; used for dataset content hashes and config hashes.
// ---------------------------------------------------------------------------
class Sha256 {
public:
    Sha256() : ctx_(EVP_MD_CTX_new()) {
        if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1)
            throw Error("sha256: OpenSSL digest init failed");
    }
    ~Sha256() { EVP_MD_CTX_free(ctx_); }
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    Sha256& update(const void* data, std::size_t n) {
        EVP_DigestUpdate(ctx_, data, n);
        return *this;
    }
    Sha256& update(std::string_view s) { return update(s.data(), s.size()); }

    std::string hex() {
        unsigned char out[EVP_MAX_MD_SIZE];
        unsigned int len = 0;
        EVP_DigestFinal_ex(ctx_, out, &len);
        std::ostringstream os;
        for (unsigned int i = 0; i < len; ++i)
            os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(out[i]);
        return os.str();
    }

private:
    EVP_MD_CTX* ctx_;
};

inline std::string sha256_hex(std::string_view s) { return Sha256().update(s).hex(); }

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

// Gather rows `idx` of `src` into a new matrix.
inline Matrix gather_rows(const Matrix& src, std::span<const std::size_t> idx) {
    Matrix out(static_cast<Eigen::Index>(idx.size()), src.cols());
    for (std::size_t i = 0; i < idx.size(); ++i)
        out.row(static_cast<Eigen::Index>(i)) = src.row(static_cast<Eigen::Index>(idx[i]));
    return out;
}

inline Matrix vstack(const Matrix& a, const Matrix& b) {
    if (a.rows() == 0) return b;
    if (b.rows() == 0) return a;
    Matrix out(a.rows() + b.rows(), a.cols());
    out << a, b;
    return out;
}

}  // namespace csad
