#ifndef DRIVEGEN_RNG_HPP
#define DRIVEGEN_RNG_HPP

// Deterministic random streams. std::mt19937_64 has a fully specified
// sequence, but the standard distributions do not, so the transforms here
// (uniform, Lemire bounded int, Box-Muller normal) are hand-rolled to keep
// every draw reproducible across compilers.

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include "common.hpp"

namespace dg {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Stable per-index substream seed (scene seeds, per-view noise, ...).
inline uint64_t derive_seed(uint64_t base, uint64_t index) {
    return splitmix64(base ^ splitmix64(index + 1));
}

class RngStream {
public:
    explicit RngStream(uint64_t seed = 0) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() {
        return double(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform();
    }

    // Uniform integer in [0, n).
    uint64_t uniform_int(uint64_t n) {
        require(n > 0, ErrorKind::InvalidArgument, "uniform_int: n must be > 0");
        return uint64_t((static_cast<unsigned __int128>(engine_()) * n) >> 64);
    }

    // Standard normal via Box-Muller; draws come in pairs.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Textual state round-trips exactly (mt19937_64 streaming is portable).
    std::string save_state() const {
        std::ostringstream os;
        os << engine_ << " " << (has_spare_ ? 1 : 0) << " ";
        os.precision(17);
        os << spare_;
        return os.str();
    }

    void load_state(const std::string& s) {
        std::istringstream is(s);
        int spare_flag = 0;
        is >> engine_ >> spare_flag >> spare_;
        require(bool(is), ErrorKind::Format, "corrupt RNG state");
        has_spare_ = spare_flag != 0;
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace dg

#endif
