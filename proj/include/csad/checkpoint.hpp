#pragma once
// Versioned binary checkpoint: a JSON header (model config, strategy state,
// Weibull tail model, RNG state) followed by the raw parameter matrices.
//
// Layout (little-endian host order):
//   8 bytes  magic "CSADCKPT"
//   u32      format version
//   u64      header length, header bytes (JSON)
//   u32      parameter count, then per parameter: u64 rows, u64 cols, rows*cols doubles

#include "csad/evt.hpp"
#include "csad/ssvae.hpp"

#include <fstream>

namespace csad {

inline constexpr char kCheckpointMagic[8] = {'C', 'S', 'A', 'D', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    SSVAEModel model;
    std::string strategy;
    std::optional<WeibullModel> weibull;
    RowVector z_bar;
    std::vector<double> acceptance_rates;
    std::vector<double> thresholds;
    std::string rng_state;  // textual std::mt19937_64 state
    nlohmann::json meta = nlohmann::json::object();
};

inline std::string rng_state_string(const Rng& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

inline Rng rng_from_state(const std::string& s) {
    Rng rng;
    std::istringstream is(s);
    is >> rng;
    if (!is) throw FormatError("checkpoint: malformed RNG state");
    return rng;
}

namespace detail {
template <typename T>
void put(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T get(std::istream& is, const std::string& what) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw FormatError("checkpoint: truncated while reading " + what);
    return v;
}
}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    nlohmann::json h;
    h["config"] = ck.model.config;
    h["strategy"] = ck.strategy;
    h["weibull"] = ck.weibull ? nlohmann::json(*ck.weibull) : nlohmann::json(nullptr);
    h["z_bar"] = std::vector<double>(ck.z_bar.data(), ck.z_bar.data() + ck.z_bar.size());
    h["acceptance_rates"] = ck.acceptance_rates;
    h["thresholds"] = ck.thresholds;
    h["rng_state"] = ck.rng_state;
    h["meta"] = ck.meta;
    const std::string header = h.dump();

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw Error("cannot open " + tmp.string() + " for writing");
        os.write(kCheckpointMagic, sizeof kCheckpointMagic);
        detail::put(os, kCheckpointVersion);
        detail::put(os, static_cast<std::uint64_t>(header.size()));
        os.write(header.data(), static_cast<std::streamsize>(header.size()));
        const auto params = ck.model.params();
        detail::put(os, static_cast<std::uint32_t>(params.size()));
        for (const auto* p : params) {
            detail::put(os, static_cast<std::uint64_t>(p->rows()));
            detail::put(os, static_cast<std::uint64_t>(p->cols()));
            os.write(reinterpret_cast<const char*>(p->data()), static_cast<std::streamsize>(p->size() * sizeof(double)));
        }
        if (!os) throw Error("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("checkpoint: cannot open " + path.string());
    char magic[8];
    is.read(magic, sizeof magic);
    if (!is || !std::equal(std::begin(magic), std::end(magic), kCheckpointMagic))
        throw FormatError("checkpoint: bad magic in " + path.string());
    const auto version = detail::get<std::uint32_t>(is, "version");
    if (version != kCheckpointVersion)
        throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    const auto hlen = detail::get<std::uint64_t>(is, "header length");
    if (hlen > (1u << 30)) throw FormatError("checkpoint: implausible header length");
    std::string header(hlen, '\0');
    is.read(header.data(), static_cast<std::streamsize>(hlen));
    if (!is) throw FormatError("checkpoint: truncated header");

    nlohmann::json h;
    try {
        h = nlohmann::json::parse(header);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint: header is not valid JSON: ") + e.what());
    }
    Checkpoint ck;
    ck.model = SSVAEModel(h.at("config").get<SSVAEConfig>(), 0);
    ck.strategy = h.value("strategy", std::string());
    if (!h.at("weibull").is_null()) ck.weibull = h.at("weibull").get<WeibullModel>();
    const auto zb = h.at("z_bar").get<std::vector<double>>();
    ck.z_bar = Eigen::Map<const RowVector>(zb.data(), static_cast<Eigen::Index>(zb.size()));
    ck.acceptance_rates = h.value("acceptance_rates", std::vector<double>{});
    ck.thresholds = h.value("thresholds", std::vector<double>{});
    ck.rng_state = h.value("rng_state", std::string());
    ck.meta = h.value("meta", nlohmann::json::object());

    auto params = ck.model.params();
    const auto count = detail::get<std::uint32_t>(is, "parameter count");
    if (count != params.size())
        throw FormatError("checkpoint: " + std::to_string(count) + " parameter blocks, model expects " +
                          std::to_string(params.size()));
    for (auto* p : params) {
        const auto rows = detail::get<std::uint64_t>(is, "rows");
        const auto cols = detail::get<std::uint64_t>(is, "cols");
        if (rows != static_cast<std::uint64_t>(p->rows()) || cols != static_cast<std::uint64_t>(p->cols()))
            throw FormatError("checkpoint: parameter shape mismatch");
        is.read(reinterpret_cast<char*>(p->data()), static_cast<std::streamsize>(p->size() * sizeof(double)));
        if (!is) throw FormatError("checkpoint: truncated parameter data");
    }
    return ck;
}

}  // namespace csad
