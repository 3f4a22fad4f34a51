#pragma once

// MNIST-family datasets in the IDX container format.
//
// IDX is big-endian: a 4-byte magic (0x00000803 for 3-d unsigned-byte image
// tensors, 0x00000801 for 1-d label vectors), one 4-byte size per dimension,
// then raw bytes.

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "network.hpp"
#include "noise.hpp"
#include "oim.hpp"

namespace oimep {

inline constexpr std::uint32_t idx_images_magic = 0x00000803;
inline constexpr std::uint32_t idx_labels_magic = 0x00000801;

enum class Split { train, test };

struct Dataset {
    RowMatrix images; ///< N x (rows * cols), pixels in [0, 1]
    std::vector<int> labels;
    std::string name;
    Split split = Split::train;
    int rows = 0;
    int cols = 0;

    std::size_t size() const noexcept { return labels.size(); }
    Eigen::Index n_inputs() const noexcept { return images.cols(); }
};

/// Mismatched or malformed IDX pair. `kind` tells the failure modes apart.
class IdxError : public FormatError {
  public:
    enum class Kind { bad_magic, truncated, count_mismatch, unreadable };

    IdxError(Kind kind, const std::string& msg) : FormatError(msg), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

  private:
    Kind kind_;
};

namespace detail {

inline std::vector<unsigned char> read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IdxError(IdxError::Kind::unreadable, "cannot open " + p.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t off, const std::string& what) {
    if (buf.size() < off + 4) throw IdxError(IdxError::Kind::truncated, what + ": truncated header");
    return (std::uint32_t{buf[off]} << 24) | (std::uint32_t{buf[off + 1]} << 16) | (std::uint32_t{buf[off + 2]} << 8) |
           std::uint32_t{buf[off + 3]};
}

inline void put_be32(std::vector<unsigned char>& buf, std::uint32_t v) {
    buf.push_back(static_cast<unsigned char>(v >> 24));
    buf.push_back(static_cast<unsigned char>(v >> 16));
    buf.push_back(static_cast<unsigned char>(v >> 8));
    buf.push_back(static_cast<unsigned char>(v));
}

} // namespace detail

inline Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
    const auto img = detail::read_file(images_path);
    const auto lab = detail::read_file(labels_path);
    const std::string iname = images_path.string(), lname = labels_path.string();

    if (detail::read_be32(img, 0, iname) != idx_images_magic)
        throw IdxError(IdxError::Kind::bad_magic, iname + ": not an IDX image file (bad magic)");
    if (detail::read_be32(lab, 0, lname) != idx_labels_magic)
        throw IdxError(IdxError::Kind::bad_magic, lname + ": not an IDX label file (bad magic)");

    const std::size_t n = detail::read_be32(img, 4, iname);
    const std::size_t rows = detail::read_be32(img, 8, iname);
    const std::size_t cols = detail::read_be32(img, 12, iname);
    const std::size_t n_labels = detail::read_be32(lab, 4, lname);
    if (n != n_labels)
        throw IdxError(IdxError::Kind::count_mismatch, "image count " + std::to_string(n) + " != label count " +
                                                           std::to_string(n_labels));
    const std::size_t pix = rows * cols;
    if (img.size() < 16 + n * pix) throw IdxError(IdxError::Kind::truncated, iname + ": truncated pixel data");
    if (lab.size() < 8 + n) throw IdxError(IdxError::Kind::truncated, lname + ": truncated label data");

    Dataset d;
    d.rows = static_cast<int>(rows);
    d.cols = static_cast<int>(cols);
    d.images.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(pix));
    d.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < pix; ++k)
            d.images(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = img[16 + i * pix + k] / 255.0;
        d.labels[i] = lab[8 + i];
    }
    d.name = images_path.stem().string();
    return d;
}

/// Writes raw bytes as an IDX image/label pair (test fixtures, subsets).
inline void write_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                      const std::vector<std::uint8_t>& pixels, const std::vector<std::uint8_t>& labels, int rows,
                      int cols) {
    const std::size_t n = labels.size();
    if (pixels.size() != n * static_cast<std::size_t>(rows * cols))
        throw DimensionError("write_idx: pixel count does not match labels * rows * cols");
    std::vector<unsigned char> img, lab;
    detail::put_be32(img, idx_images_magic);
    detail::put_be32(img, static_cast<std::uint32_t>(n));
    detail::put_be32(img, static_cast<std::uint32_t>(rows));
    detail::put_be32(img, static_cast<std::uint32_t>(cols));
    img.insert(img.end(), pixels.begin(), pixels.end());
    detail::put_be32(lab, idx_labels_magic);
    detail::put_be32(lab, static_cast<std::uint32_t>(n));
    lab.insert(lab.end(), labels.begin(), labels.end());
    std::ofstream(images_path, std::ios::binary).write(reinterpret_cast<const char*>(img.data()), std::streamsize(img.size()));
    std::ofstream(labels_path, std::ios::binary).write(reinterpret_cast<const char*>(lab.data()), std::streamsize(lab.size()));
}

/// Rows of `d` in the given order.
inline Dataset subset(const Dataset& d, const std::vector<std::size_t>& indices) {
    Dataset out;
    out.name = d.name;
    out.split = d.split;
    out.rows = d.rows;
    out.cols = d.cols;
    out.images.resize(static_cast<Eigen::Index>(indices.size()), d.images.cols());
    out.labels.reserve(indices.size());
    for (std::size_t r = 0; r < indices.size(); ++r) {
        out.images.row(static_cast<Eigen::Index>(r)) = d.images.row(static_cast<Eigen::Index>(indices[r]));
        out.labels.push_back(d.labels[indices[r]]);
    }
    return out;
}

/// Seeded class-balanced draw of `per_class` examples of each of `n_classes`
/// classes. Returned indices are grouped by sampling order, not by class.
inline std::vector<std::size_t> balanced_indices(const std::vector<int>& labels, int n_classes, std::size_t per_class,
                                                 std::uint64_t seed) {
    std::vector<std::size_t> order(labels.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    fisher_yates(order, seed);
    std::vector<std::size_t> taken(static_cast<std::size_t>(n_classes), 0), out;
    out.reserve(per_class * static_cast<std::size_t>(n_classes));
    for (auto i : order) {
        const int c = labels[i];
        if (c < 0 || c >= n_classes) continue;
        if (taken[static_cast<std::size_t>(c)] < per_class) {
            ++taken[static_cast<std::size_t>(c)];
            out.push_back(i);
        }
    }
    for (int c = 0; c < n_classes; ++c)
        if (taken[static_cast<std::size_t>(c)] < per_class)
            throw FormatError("balanced subset: class " + std::to_string(c) + " has only " +
                              std::to_string(taken[static_cast<std::size_t>(c)]) + " examples, need " +
                              std::to_string(per_class));
    return out;
}

/// The 1,000 / 100 MNIST subset: 100 train and 10 test examples per class.
/// Train and test are drawn from their own source splits, so they never share
/// an example.
inline std::pair<Dataset, Dataset> make_mnist100(const Dataset& train, const Dataset& test, std::uint64_t seed) {
    Dataset tr = subset(train, balanced_indices(train.labels, 10, 100, derive_seed(seed, {0x747261696eULL})));
    Dataset te = subset(test, balanced_indices(test.labels, 10, 10, derive_seed(seed, {0x74657374ULL})));
    tr.name = "mnist100";
    te.name = "mnist100";
    tr.split = Split::train;
    te.split = Split::test;
    return {std::move(tr), std::move(te)};
}

/// +1 at `label`, `low` elsewhere.
inline Vector encode_target(int label, Eigen::Index n_y, double low = -1.0) {
    if (label < 0 || label >= n_y)
        throw DimensionError("encode_target: label " + std::to_string(label) + " outside [0, " + std::to_string(n_y) + ")");
    Vector t = Vector::Constant(n_y, low);
    t[label] = 1.0;
    return t;
}

inline Example make_example(const Dataset& d, std::size_t i, Eigen::Index n_y, double low = -1.0) {
    Example ex;
    ex.x = d.images.row(static_cast<Eigen::Index>(i)).transpose();
    ex.label = d.labels[i];
    ex.target = encode_target(ex.label, n_y, low);
    return ex;
}

/// Standard file names inside a dataset directory.
struct IdxPaths {
    std::filesystem::path train_images, train_labels, test_images, test_labels;
};

inline IdxPaths idx_paths(const std::filesystem::path& dir) {
    return {dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte", dir / "t10k-images-idx3-ubyte",
            dir / "t10k-labels-idx1-ubyte"};
}

/// Data root from $OIMEP_DATA_DIR, falling back to ./data.
inline std::filesystem::path default_data_dir() {
    if (const char* env = std::getenv("OIMEP_DATA_DIR"); env && *env) return env;
    return "data";
}

} // namespace oimep
