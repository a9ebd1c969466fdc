#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>

namespace plmcmc {

/// splitmix64 finalizer; used to derive independent stream seeds.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Seed for the stream identified by (run seed, sample index, chain index, round).
/// Streams are reproducible and independent of evaluation order.
inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t sample = 0,
                                 std::uint64_t chain = 0, std::uint64_t round = 0) {
    std::uint64_t h = mix64(seed);
    h = mix64(h ^ mix64(sample + 0x517cc1b727220a95ULL));
    h = mix64(h ^ mix64(chain + 0x2545f4914f6cdd1dULL));
    h = mix64(h ^ mix64(round + 0x9e6c63d0876a9a47ULL));
    return h;
}

/// Random stream with explicit, implementation-pinned draw algorithms so that
/// runs replay bit-identically for a given seed (std::*_distribution is
/// implementation-defined and avoided throughout).
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    /// Uniform draw in the open interval (0, 1).
    double uniform01() {
        return (static_cast<double>(eng_() >> 11) + 0.5) * 0x1.0p-53;
    }

    /// Uniform integer in [0, n). n must be positive.
    int uniform_int(int n) {
        return static_cast<int>(eng_() % static_cast<std::uint64_t>(n));
    }

    /// Standard normal via Box-Muller; the spare variate is cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform01();
        double u2 = uniform01();
        double r = std::sqrt(-2.0 * std::log(u1));
        double t = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(t);
        has_spare_ = true;
        return r * std::cos(t);
    }

    /// Standard logistic (location 0, scale 1) via inverse CDF.
    double logistic() {
        double u = uniform01();
        return std::log(u / (1.0 - u));
    }

    void fill_normal(std::span<double> out, double scale = 1.0) {
        for (double& v : out) v = scale * normal();
    }

  private:
    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace plmcmc
