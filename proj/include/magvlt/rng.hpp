#pragma once
#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

namespace magvlt::nd {

// splitmix64; used to derive child seeds so parallel streams never overlap.
inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// mt19937_64 is bit-exact across platforms by [rand.eng.mers]; the
// distribution helpers below are hand-rolled because the std::*_distribution
// classes are not (libstdc++ vs libc++ differ). Bitwise reproducibility of
// every artifact depends on this.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : seed_(seed), eng_(seed) {}

    uint64_t seed() const { return seed_; }
    uint64_t u64() { return eng_(); }

    // uniform in [0,1) with 53 random bits
    double uniform() { return double(eng_() >> 11) * 0x1.0p-53; }

    // uniform integer in [0,n), unbiased via rejection
    int below(int n) {
        if (n <= 0) throw std::invalid_argument("Rng::below: n must be positive");
        uint64_t un = uint64_t(n);
        uint64_t lim = UINT64_MAX - UINT64_MAX % un;
        uint64_t x;
        do { x = eng_(); } while (x >= lim);
        return int(x % un);
    }

    // inclusive range
    int range_int(int lo, int hi) {
        if (lo > hi) throw std::invalid_argument("Rng::range_int: lo > hi");
        return lo + below(hi - lo + 1);
    }

    bool coin() { return (eng_() >> 63) != 0; }

    // Box-Muller, both values used
    double gauss() {
        if (have_spare_) { have_spare_ = false; return spare_; }
        double u1 = uniform(), u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // standard Gumbel: -log(-log u), u clamped away from {0,1}
    double gumbel() {
        double u = uniform();
        if (u < 1e-300) u = 1e-300;
        double l = -std::log(u);
        if (l < 1e-300) l = 1e-300;
        return -std::log(l);
    }

    // independent child stream; tag picks the purpose (data, init, decode, ...)
    Rng child(uint64_t tag) const { return Rng(mix64(seed_ ^ mix64(tag))); }

    // Full stream state (engine plus the Box-Muller spare) as text, so a
    // resumed run continues the exact sequence.
    std::string state_string() const {
        std::ostringstream os;
        os << seed_ << ' ' << (have_spare_ ? 1 : 0) << ' ';
        os.precision(17);
        os << spare_ << ' ' << eng_;
        return os.str();
    }

    void set_state_string(const std::string& s) {
        std::istringstream is(s);
        int hs = 0;
        is >> seed_ >> hs >> spare_ >> eng_;
        if (!is) throw std::invalid_argument("Rng: bad state string");
        have_spare_ = hs != 0;
    }

private:
    uint64_t seed_;
    std::mt19937_64 eng_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace magvlt::nd
