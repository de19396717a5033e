#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "nvdyn/common.hpp"

namespace nvdyn {

// Seeded random stream with hand-rolled samplers. std::mt19937_64 has a
// standard-specified sequence, but the std distributions do not, so all
// sampling is implemented here to make seeded outputs reproducible across
// standard libraries.
class RandomStream {
  public:
    explicit RandomStream(std::uint64_t seed) : engine_(seed) {}

    // Deterministic independent substream for batch index `index`.
    static RandomStream substream(std::uint64_t seed, std::uint64_t index) {
        return RandomStream(mix(seed ^ mix(index + 0x9e3779b97f4a7c15ull)));
    }

    std::uint64_t raw() { return engine_(); }

    // Uniform on the open interval (0, 1).
    double uniform() {
        return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Exponential waiting time for a process with the given rate (1/s).
    double exponential(double rate) {
        if (!(rate > 0.0)) throw DomainError("exponential rate must be > 0");
        return -std::log(uniform()) / rate;
    }

    // Box-Muller transform; second value cached.
    double normal(double mean = 0.0, double sd = 1.0) {
        if (have_spare_) {
            have_spare_ = false;
            return mean + sd * spare_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double th = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(th);
        have_spare_ = true;
        return mean + sd * r * std::cos(th);
    }

    // Knuth's product method, chunked so exp(-mean) never underflows.
    long poisson(double mean) {
        if (mean < 0.0 || !std::isfinite(mean)) throw DomainError("poisson mean must be finite and >= 0");
        long total = 0;
        while (mean > 500.0) {
            total += poisson_small(500.0);
            mean -= 500.0;
        }
        return total + poisson_small(mean);
    }

  private:
    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ull;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    long poisson_small(double mean) {
        if (mean == 0.0) return 0;
        const double limit = std::exp(-mean);
        long k = 0;
        double prod = uniform();
        while (prod > limit) {
            ++k;
            prod *= uniform();
        }
        return k;
    }

    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace nvdyn
