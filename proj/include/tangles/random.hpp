#pragma once

// Portable randomness. std::mt19937_64 is fully specified by the standard,
// but the std distributions are not, so bounded integers and unit reals are
// derived here from raw engine output:
//   * bounded(n): modulo of the raw draw, redrawing values in the biased
//     tail of the 64-bit range;
//   * unit(): top 53 bits scaled by 2^-53, in [0, 1).
// Same seed, same sequence on every platform.

#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace tangles {

class Rng {
  public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next() { return engine_(); }

    /// Uniform integer in [0, n). n must be > 0.
    uint64_t bounded(uint64_t n) {
        if (n == 0) throw std::invalid_argument("Rng::bounded: empty range");
        const uint64_t limit = UINT64_MAX - (UINT64_MAX % n + 1) % n;
        uint64_t x;
        do {
            x = engine_();
        } while (x > limit);
        return x % n;
    }

    double unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Partial Fisher-Yates: the first k elements of `items` become a uniform
    /// sample without replacement, in selection order.
    template <typename T>
    void partial_shuffle(std::vector<T>& items, size_t k) {
        if (k > items.size()) throw std::invalid_argument("Rng::partial_shuffle: k exceeds size");
        for (size_t i = 0; i < k; ++i) {
            const size_t j = i + static_cast<size_t>(bounded(items.size() - i));
            std::swap(items[i], items[j]);
        }
    }

    template <typename T>
    void shuffle(std::vector<T>& items) {
        partial_shuffle(items, items.size());
    }

  private:
    std::mt19937_64 engine_;
};

}  // namespace tangles
