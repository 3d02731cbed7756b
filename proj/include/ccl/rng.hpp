#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace ccl {

// Deterministic random stream. Wraps mt19937_64 but converts to doubles by
// hand so that identical seeds yield bit-identical draws on every platform
// (std::normal_distribution makes no such promise). Copying the object
// snapshots its state; the copy continues the stream identically.
class RandomStream {
public:
    explicit RandomStream(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // standard normal via Box-Muller, one spare value cached
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    std::size_t uniform_index(std::size_t n) { return static_cast<std::size_t>(next_u64() % n); }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

inline RandomStream seeded_rng(std::uint64_t seed) { return RandomStream(seed); }

}  // namespace ccl
