#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace pumba {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Seeded generator with hand-rolled value mappings so that streams do not
// depend on libstdc++ distribution internals. Same seed, same sequence,
// on any standard library.
class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed), eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    // [0, 1)
    double uniform() {
        return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // integer in [0, n)
    uint64_t uniform_index(uint64_t n) {
        return n == 0 ? 0 : eng_() % n;
    }

    // standard normal via Box-Muller, one spare cached
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Independent child stream; deterministic function of (seed, stream).
    Rng fork(uint64_t stream) const {
        return Rng(splitmix64(seed_ ^ splitmix64(stream + 1)));
    }

    uint64_t seed() const { return seed_; }

    // mt19937_64 state round trip, used by checkpoint resume
    std::string save_state() const {
        std::ostringstream os;
        os << eng_;
        if (has_spare_) os << " 1 " << spare_;
        else os << " 0 0";
        return os.str();
    }

    void restore_state(const std::string& s) {
        std::istringstream is(s);
        is >> eng_;
        int flag = 0;
        is >> flag >> spare_;
        has_spare_ = (flag == 1);
    }

private:
    uint64_t seed_;
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace pumba
