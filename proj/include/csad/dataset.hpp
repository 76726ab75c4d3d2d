#pragma once
// Loaders for the MNIST / Fashion-MNIST IDX files and CIFAR-10 binary batches.
//
// Raw pixel bytes (ByteImages) and scaled matrices are distinct types: the only
// way to obtain [0,1] data is `scale(ByteImages)`, so scaling twice cannot
// happen through this API.

#include "csad/core.hpp"

#include <array>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>

namespace csad {

enum class DatasetId { mnist, fashion_mnist, cifar10 };
enum class Split { train, test };

inline std::string to_string(DatasetId id) {
    switch (id) {
        case DatasetId::mnist: return "mnist";
        case DatasetId::fashion_mnist: return "fashion_mnist";
        case DatasetId::cifar10: return "cifar10";
    }
    return "?";
}

inline DatasetId parse_dataset_id(std::string_view s) {
    if (s == "mnist") return DatasetId::mnist;
    if (s == "fashion_mnist" || s == "fashion-mnist" || s == "fmnist") return DatasetId::fashion_mnist;
    if (s == "cifar10" || s == "cifar-10") return DatasetId::cifar10;
    throw ValidationError("unknown dataset '" + std::string(s) + "'");
}

inline std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

struct ImageShape {
    int channels = 1;
    int height = 28;
    int width = 28;
    [[nodiscard]] int size() const { return channels * height * width; }
    bool operator==(const ImageShape&) const = default;
};

inline ImageShape image_shape_of(DatasetId id) {
    return id == DatasetId::cifar10 ? ImageShape{3, 32, 32} : ImageShape{1, 28, 28};
}

/// Unscaled pixel bytes as stored on disk, one image per row.
struct ByteImages {
    std::size_t count = 0;
    std::size_t pixels = 0;
    std::vector<std::uint8_t> bytes;  // count * pixels, row-major

    [[nodiscard]] std::span<const std::uint8_t> row(std::size_t i) const {
        return {bytes.data() + i * pixels, pixels};
    }
};

/// Divides every byte by 255.
inline Matrix scale(const ByteImages& raw) {
    Matrix m(static_cast<Eigen::Index>(raw.count), static_cast<Eigen::Index>(raw.pixels));
    for (std::size_t i = 0; i < raw.bytes.size(); ++i) m.data()[i] = raw.bytes[i] / 255.0;
    return m;
}

struct RawDataset {
    Matrix images;            // n_samples x n_pixels, values in [0,1]
    std::vector<int> labels;  // class ids 0..9
    DatasetId name = DatasetId::mnist;
    Split split = Split::train;
    std::string content_hash;  // sha256 over the raw bytes and labels

    [[nodiscard]] std::size_t size() const { return labels.size(); }
};

namespace detail {

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<std::uint8_t>& buf, std::size_t off) {
    return (std::uint32_t{buf[off]} << 24) | (std::uint32_t{buf[off + 1]} << 16) |
           (std::uint32_t{buf[off + 2]} << 8) | std::uint32_t{buf[off + 3]};
}

}  // namespace detail

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// Parses an IDX3 (unsigned byte) image file.
inline ByteImages load_idx_images(const std::filesystem::path& path) {
    auto buf = detail::read_file(path);
    if (buf.size() < 16) throw FormatError(path.string() + ": truncated IDX header");
    const auto magic = detail::read_be32(buf, 0);
    if (magic != kIdxImagesMagic) {
        std::ostringstream os;
        os << path.string() << ": bad IDX image magic 0x" << std::hex << magic;
        throw FormatError(os.str());
    }
    const std::size_t n = detail::read_be32(buf, 4);
    const std::size_t rows = detail::read_be32(buf, 8);
    const std::size_t cols = detail::read_be32(buf, 12);
    const std::size_t expected = 16 + n * rows * cols;
    if (buf.size() != expected)
        throw FormatError(path.string() + ": payload length " + std::to_string(buf.size() - 16) +
                          " does not match header (" + std::to_string(n * rows * cols) + ")");
    ByteImages out;
    out.count = n;
    out.pixels = rows * cols;
    out.bytes.assign(buf.begin() + 16, buf.end());
    return out;
}

/// Parses an IDX1 (unsigned byte) label file.
inline std::vector<int> load_idx_labels(const std::filesystem::path& path) {
    auto buf = detail::read_file(path);
    if (buf.size() < 8) throw FormatError(path.string() + ": truncated IDX header");
    const auto magic = detail::read_be32(buf, 0);
    if (magic != kIdxLabelsMagic) {
        std::ostringstream os;
        os << path.string() << ": bad IDX label magic 0x" << std::hex << magic;
        throw FormatError(os.str());
    }
    const std::size_t n = detail::read_be32(buf, 4);
    if (buf.size() != 8 + n)
        throw FormatError(path.string() + ": payload length " + std::to_string(buf.size() - 8) +
                          " does not match header (" + std::to_string(n) + ")");
    std::vector<int> labels(buf.begin() + 8, buf.end());
    for (int l : labels)
        if (l < 0 || l > 9) throw FormatError(path.string() + ": label out of range");
    return labels;
}

constexpr std::size_t kCifarRecord = 3073;
constexpr std::size_t kCifarPixels = 3072;

/// Parses one or more CIFAR-10 binary batch files (1 label byte + 3072 pixel bytes per record).
inline std::pair<ByteImages, std::vector<int>> load_cifar_batches(
    std::span<const std::filesystem::path> files) {
    ByteImages images;
    images.pixels = kCifarPixels;
    std::vector<int> labels;
    for (const auto& f : files) {
        auto buf = detail::read_file(f);
        if (buf.size() % kCifarRecord != 0)
            throw FormatError(f.string() + ": size " + std::to_string(buf.size()) +
                              " is not a multiple of 3073");
        const std::size_t n = buf.size() / kCifarRecord;
        for (std::size_t r = 0; r < n; ++r) {
            const auto* rec = buf.data() + r * kCifarRecord;
            if (rec[0] > 9) throw FormatError(f.string() + ": label out of range");
            labels.push_back(rec[0]);
            images.bytes.insert(images.bytes.end(), rec + 1, rec + kCifarRecord);
        }
        images.count += n;
    }
    return {std::move(images), std::move(labels)};
}

inline std::string content_hash(const ByteImages& images, const std::vector<int>& labels) {
    Sha256 h;
    h.update(images.bytes.data(), images.bytes.size());
    std::vector<std::uint8_t> lb(labels.begin(), labels.end());
    h.update(lb.data(), lb.size());
    return h.hex();
}

inline RawDataset make_raw_dataset(const ByteImages& images, std::vector<int> labels, DatasetId id,
                                   Split split) {
    if (images.count != labels.size())
        throw FormatError("image count " + std::to_string(images.count) + " != label count " +
                          std::to_string(labels.size()));
    RawDataset ds;
    ds.content_hash = content_hash(images, labels);
    ds.images = scale(images);
    ds.labels = std::move(labels);
    ds.name = id;
    ds.split = split;
    return ds;
}

/// Loads CIFAR-10 from a directory holding data_batch_{1..5}.bin and test_batch.bin.
inline RawDataset load_cifar10(const std::filesystem::path& dir, Split split) {
    std::vector<std::filesystem::path> files;
    if (split == Split::train) {
        for (int i = 1; i <= 5; ++i) files.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
    } else {
        files.push_back(dir / "test_batch.bin");
    }
    auto [images, labels] = load_cifar_batches(files);
    return make_raw_dataset(images, std::move(labels), DatasetId::cifar10, split);
}

inline RawDataset load_mnist_like(const std::filesystem::path& dir, DatasetId id, Split split) {
    const std::string prefix = split == Split::train ? "train" : "t10k";
    auto images = load_idx_images(dir / (prefix + "-images-idx3-ubyte"));
    auto labels = load_idx_labels(dir / (prefix + "-labels-idx1-ubyte"));
    return make_raw_dataset(images, std::move(labels), id, split);
}

/// Resolves the data root: explicit flag first, then CSAD_DATA_DIR, then ./data.
inline std::filesystem::path resolve_data_dir(const std::optional<std::string>& flag) {
    if (flag && !flag->empty()) return *flag;
    if (const char* env = std::getenv("CSAD_DATA_DIR"); env && *env) return env;
    return "data";
}

/// Expected layout: <root>/mnist, <root>/fashion_mnist (IDX files), <root>/cifar10 (batches).
inline RawDataset load_dataset(const std::filesystem::path& root, DatasetId id, Split split) {
    const auto dir = root / to_string(id);
    if (!std::filesystem::exists(dir)) throw FormatError("dataset directory missing: " + dir.string());
    if (id == DatasetId::cifar10) {
        if (std::filesystem::exists(dir / "cifar-10-batches-bin"))
            return load_cifar10(dir / "cifar-10-batches-bin", split);
        return load_cifar10(dir, split);
    }
    return load_mnist_like(dir, id, split);
}

/// One-hot encodes `labels`; every row sums to exactly 1.
inline Matrix one_hot(std::span<const int> labels, int n_classes) {
    require(n_classes > 0, "one_hot: n_classes must be positive");
    Matrix out = Matrix::Zero(static_cast<Eigen::Index>(labels.size()), n_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= n_classes)
            throw ValidationError("one_hot: label " + std::to_string(labels[i]) + " out of range [0," +
                                  std::to_string(n_classes) + ")");
        out(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
    }
    return out;
}

inline std::vector<int> argmax_rows(const Matrix& m) {
    std::vector<int> out(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        Eigen::Index j = 0;
        m.row(i).maxCoeff(&j);
        out[static_cast<std::size_t>(i)] = static_cast<int>(j);
    }
    return out;
}

}  // namespace csad
