#pragma once

// Counter-based random streams.
//
// Generator: Philox4x32 with 10 rounds (Salmon et al., SC'11), implemented here
// so that streams are bit-identical across platforms and standard libraries.
//
// Stream layout for path p under master seed s:
//   key     = (lo32(s), hi32(s))
//   counter = (lo32(n), hi32(n), lo32(p), hi32(p))  where n is the block index
// Each block yields four 32-bit words. Uniforms use two words each
// (53-bit mantissa), normals use the Box-Muller transform on one block,
// giving two standard normals per block.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace horn {

class Philox4x32 {
public:
    using Counter = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    static Counter block(Counter ctr, Key key) {
        for (int round = 0; round < 10; ++round) {
            if (round > 0) {
                key[0] += kW0;
                key[1] += kW1;
            }
            const std::uint64_t p0 = static_cast<std::uint64_t>(kM0) * ctr[0];
            const std::uint64_t p1 = static_cast<std::uint64_t>(kM1) * ctr[2];
            const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
            const auto lo0 = static_cast<std::uint32_t>(p0);
            const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
            const auto lo1 = static_cast<std::uint32_t>(p1);
            ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        }
        return ctr;
    }

private:
    static constexpr std::uint32_t kM0 = 0xD2511F53u;
    static constexpr std::uint32_t kM1 = 0xCD9E8D57u;
    static constexpr std::uint32_t kW0 = 0x9E3779B9u;
    static constexpr std::uint32_t kW1 = 0xBB67AE85u;
};

/// Per-path random stream keyed by (master seed, path index).
class PathStream {
public:
    PathStream() = default;
    PathStream(std::uint64_t master_seed, std::uint64_t path_index)
        : key_{static_cast<std::uint32_t>(master_seed), static_cast<std::uint32_t>(master_seed >> 32)},
          path_(path_index) {}

    /// Next raw block of four 32-bit words.
    Philox4x32::Counter next_block() {
        const Philox4x32::Counter ctr{static_cast<std::uint32_t>(block_), static_cast<std::uint32_t>(block_ >> 32),
                                      static_cast<std::uint32_t>(path_), static_cast<std::uint32_t>(path_ >> 32)};
        ++block_;
        return Philox4x32::block(ctr, key_);
    }

    /// Uniform on the open interval (0, 1).
    double uniform() {
        if (!have_uniform_) {
            const auto w = next_block();
            spare_uniform_ = to_open_unit(w[2], w[3]);
            have_uniform_ = true;
            return to_open_unit(w[0], w[1]);
        }
        have_uniform_ = false;
        return spare_uniform_;
    }

    double normal() {
        if (have_normal_) {
            have_normal_ = false;
            return spare_normal_;
        }
        const auto w = next_block();
        const double u1 = to_open_unit(w[0], w[1]);
        const double u2 = to_open_unit(w[2], w[3]);
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_normal_ = radius * std::sin(angle);
        have_normal_ = true;
        return radius * std::cos(angle);
    }

    template <class Span>
    void fill_normal(Span& out) {
        for (auto& v : out) v = normal();
    }

    [[nodiscard]] std::uint64_t blocks_used() const { return block_; }
    [[nodiscard]] std::uint64_t path_index() const { return path_; }

private:
    static double to_open_unit(std::uint32_t a, std::uint32_t b) {
        const std::uint64_t bits = (static_cast<std::uint64_t>(a >> 5) << 26) | (b >> 6);  // 53 bits
        return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
    }

    Philox4x32::Key key_{0u, 0u};
    std::uint64_t path_ = 0;
    std::uint64_t block_ = 0;
    double spare_normal_ = 0.0;
    double spare_uniform_ = 0.0;
    bool have_normal_ = false;
    bool have_uniform_ = false;
};

}  // namespace horn
