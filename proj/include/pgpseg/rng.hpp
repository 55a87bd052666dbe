#pragma once

// Counter-based random number generation (Philox4x32-10).
//
// Every random draw in the project comes from a Philox4x32-10 stream keyed by
// (seed, stream id). Streams are independent of generation order, so adding a
// consumer never shifts the values another consumer sees. Stream ids are
// usually derived from purpose strings via FNV-1a (see stream_id()).

#include <cstdint>
#include <cmath>
#include <string>
#include <vector>

namespace pgpseg {

/// FNV-1a 64-bit hash, used to derive RNG stream ids from names.
inline std::uint64_t fnv1a64(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ull) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

/// Stream id from a purpose name plus an optional numeric salt.
inline std::uint64_t stream_id(const std::string& name, std::uint64_t salt = 0) {
    std::uint64_t h = fnv1a64(name);
    h ^= salt + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    return h;
}

/// Philox4x32-10 counter-based PRNG.
///
/// Key = 64-bit seed (split into two 32-bit words), counter block =
/// {ctr_lo, ctr_hi, stream_lo, stream_hi}. Each block yields four 32-bit
/// outputs. Matches the Random123 reference outputs for philox4x32-10.
class Philox {
public:
    Philox(std::uint64_t seed, std::uint64_t stream)
        : key0_(static_cast<std::uint32_t>(seed)),
          key1_(static_cast<std::uint32_t>(seed >> 32)),
          s0_(static_cast<std::uint32_t>(stream)),
          s1_(static_cast<std::uint32_t>(stream >> 32)) {}

    /// Raw block function: 10 rounds on a 4x32 counter with a 2x32 key.
    static void block(std::uint32_t ctr[4], std::uint32_t k0, std::uint32_t k1) {
        for (int r = 0; r < 10; ++r) {
            if (r > 0) {
                k0 += 0x9E3779B9u;
                k1 += 0xBB67AE85u;
            }
            const std::uint64_t p0 = 0xD2511F53ull * ctr[0];
            const std::uint64_t p1 = 0xCD9E8D57ull * ctr[2];
            const std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32);
            const std::uint32_t lo0 = static_cast<std::uint32_t>(p0);
            const std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32);
            const std::uint32_t lo1 = static_cast<std::uint32_t>(p1);
            ctr[0] = hi1 ^ ctr[1] ^ k0;
            ctr[1] = lo1;
            ctr[2] = hi0 ^ ctr[3] ^ k1;
            ctr[3] = lo0;
        }
    }

    std::uint32_t next_u32() {
        if (buf_pos_ == 4) {
            buf_[0] = static_cast<std::uint32_t>(counter_);
            buf_[1] = static_cast<std::uint32_t>(counter_ >> 32);
            buf_[2] = s0_;
            buf_[3] = s1_;
            block(buf_, key0_, key1_);
            ++counter_;
            buf_pos_ = 0;
        }
        return buf_[buf_pos_++];
    }

    std::uint64_t next_u64() {
        const std::uint64_t lo = next_u32();
        const std::uint64_t hi = next_u32();
        return (hi << 32) | lo;
    }

    /// Uniform double in [0,1) with 53 random bits.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller; the second value of each pair is cached.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        // u1 in (0,1] so log() is safe.
        const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    /// Uniform integer in [0, n) via 128-bit multiply-shift.
    std::int64_t uniform_int(std::int64_t n) {
        const unsigned __int128 prod =
            static_cast<unsigned __int128>(next_u64()) * static_cast<unsigned __int128>(n);
        return static_cast<std::int64_t>(prod >> 64);
    }

    /// Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::int64_t i = static_cast<std::int64_t>(v.size()) - 1; i > 0; --i) {
            const std::int64_t j = uniform_int(i + 1);
            std::swap(v[i], v[j]);
        }
    }

private:
    std::uint32_t key0_, key1_, s0_, s1_;
    std::uint64_t counter_ = 0;
    std::uint32_t buf_[4] = {};
    int buf_pos_ = 4;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace pgpseg
