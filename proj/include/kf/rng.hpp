#pragma once

#include <cmath>
#include <cstdint>

namespace kf {

// Counter-based Gaussian stream. A (seed, stream, step) triple always yields
// the same variate, so parallel sampling is reproducible regardless of
// scheduling. splitmix64 is the mixing function; Box-Muller on top.

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// uniform in (0,1): never returns 0 or 1
inline double u01(std::uint64_t bits) {
    return (static_cast<double>(bits >> 11) + 0.5) * 0x1p-53;
}

class gaussian_stream {
public:
    gaussian_stream(std::uint64_t seed, std::uint64_t stream)
        : key_(splitmix64(seed ^ splitmix64(stream * 0x9e3779b97f4a7c15ull + 1))) {}

    double next() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = u01(splitmix64(key_ ^ splitmix64(ctr_++)));
        double u2 = u01(splitmix64(key_ ^ splitmix64(ctr_++)));
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

private:
    std::uint64_t key_;
    std::uint64_t ctr_ = 0;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

} // namespace kf
