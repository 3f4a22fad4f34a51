#pragma once

// Binary checkpoint. All integers and floats are little-endian.
//
//   offset  type        field
//   0       char[8]     magic "OIMEPCKP"
//   8       u32         format version (1)
//   12      u32 x 3     n_x, n_h, n_y
//   24      u64         completed epochs
//   32      u64         master seed
//   40      u32         length L of the config text
//   44      char[L]     resolved run config (key = value lines, see config.hpp)
//   ...     f64[]       w_xh (n_x*n_h, row-major), w_hy (n_h*n_y, row-major), b_h, b_y
//   ...     u8          1 if a momentum buffer follows, else 0
//   ...     f64[]       momentum buffer, same layout as the parameters
//
// Any trailing bytes are an error.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "config.hpp"
#include "errors.hpp"
#include "network.hpp"
#include "train.hpp"

namespace oimep {

inline constexpr std::array<char, 8> checkpoint_magic{'O', 'I', 'M', 'E', 'P', 'C', 'K', 'P'};
inline constexpr std::uint32_t checkpoint_version = 1;

struct Checkpoint {
    RunConfig config;
    TrainState state;
};

namespace detail {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <class T>
void put_le(std::vector<unsigned char>& buf, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    buf.insert(buf.end(), b, b + sizeof(T));
}

class Reader {
  public:
    explicit Reader(const std::vector<unsigned char>& b) : buf_(b) {}

    template <class T>
    T get(const char* what) {
        need(sizeof(T), what);
        unsigned char b[sizeof(T)];
        std::memcpy(b, buf_.data() + pos_, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
        pos_ += sizeof(T);
        T v;
        std::memcpy(&v, b, sizeof(T));
        return v;
    }

    std::string bytes(std::size_t n, const char* what) {
        need(n, what);
        std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == buf_.size(); }

  private:
    void need(std::size_t n, const char* what) {
        if (buf_.size() - pos_ < n) throw FormatError(std::string("checkpoint truncated while reading ") + what);
    }
    const std::vector<unsigned char>& buf_;
    std::size_t pos_ = 0;
};

inline void put_params(std::vector<unsigned char>& buf, const ParamSet& p) {
    const Vector flat = p.flatten();
    for (Eigen::Index i = 0; i < flat.size(); ++i) put_le<double>(buf, flat[i]);
}

inline void get_params(Reader& r, ParamSet& p) {
    for (Eigen::Index k = 0; k < p.count(); ++k) p.at_flat(k) = r.get<double>("parameters");
}

} // namespace detail

inline std::vector<unsigned char> serialize_checkpoint(const Checkpoint& c) {
    const NetworkParams& net = c.state.net;
    net.check_consistent();
    std::vector<unsigned char> buf(checkpoint_magic.begin(), checkpoint_magic.end());
    detail::put_le<std::uint32_t>(buf, checkpoint_version);
    detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(net.n_x()));
    detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(net.n_h()));
    detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(net.n_y()));
    detail::put_le<std::uint64_t>(buf, c.state.epoch);
    detail::put_le<std::uint64_t>(buf, c.config.ep.seed);
    const std::string text = to_text(c.config);
    detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(text.size()));
    buf.insert(buf.end(), text.begin(), text.end());
    detail::put_params(buf, net);
    const bool has_momentum = c.state.sgd.velocity.same_shape(net) && c.state.sgd.velocity.count() > 0;
    buf.push_back(has_momentum ? 1 : 0);
    if (has_momentum) detail::put_params(buf, c.state.sgd.velocity);
    return buf;
}

inline Checkpoint deserialize_checkpoint(const std::vector<unsigned char>& buf) {
    detail::Reader r(buf);
    const std::string magic = r.bytes(checkpoint_magic.size(), "magic");
    if (std::memcmp(magic.data(), checkpoint_magic.data(), checkpoint_magic.size()) != 0)
        throw FormatError("not a checkpoint file (bad magic)");
    const auto version = r.get<std::uint32_t>("version");
    if (version != checkpoint_version)
        throw FormatError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(checkpoint_version) + ")");
    const auto n_x = r.get<std::uint32_t>("n_x");
    const auto n_h = r.get<std::uint32_t>("n_h");
    const auto n_y = r.get<std::uint32_t>("n_y");
    if (n_x == 0 || n_h == 0 || n_y == 0) throw FormatError("checkpoint has an empty layer");
    Checkpoint c;
    c.state.epoch = r.get<std::uint64_t>("epoch");
    const auto seed = r.get<std::uint64_t>("seed");
    const auto len = r.get<std::uint32_t>("config length");
    c.config = parse_config(r.bytes(len, "config"));
    if (c.config.ep.seed != seed) throw FormatError("checkpoint seed does not match its embedded config");
    if (c.config.n_h != static_cast<int>(n_h)) throw FormatError("checkpoint n_h does not match its embedded config");
    c.state.net = NetworkParams::zeros(n_x, n_h, n_y);
    detail::get_params(r, c.state.net);
    const auto flag = r.get<std::uint8_t>("momentum flag");
    if (flag > 1) throw FormatError("checkpoint momentum flag is corrupt");
    if (flag == 1) {
        c.state.sgd.velocity = EpGradient::zeros(n_x, n_h, n_y);
        detail::get_params(r, c.state.sgd.velocity);
    }
    if (!r.done()) throw FormatError("checkpoint has trailing bytes");
    return c;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
    const auto buf = serialize_checkpoint(c);
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw FormatError("cannot write checkpoint " + tmp.string());
        out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        if (!out) throw FormatError("short write on checkpoint " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open checkpoint " + path.string());
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(buf);
}

} // namespace oimep
