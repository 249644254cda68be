#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace cgl {

// Derives an independent stream seed from a base seed and a tag. Used to
// give every consumer (weight init, path sampling, partition shuffle,
// sub-group selection, ...) its own stream so that consuming one stream
// never shifts another.
std::uint64_t mix_seed(std::uint64_t seed, std::string_view tag);
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

// Deterministic RNG. The engine is std::mt19937_64 (its sequence is pinned
// by the standard); all distributions are implemented here by hand because
// the std distribution objects are implementation-defined and would break
// replay across toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform01() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [lo, hi], inclusive. Unbiased via rejection.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

    // Standard normal via Box-Muller. No cached spare: the state is exactly
    // the engine state, which keeps checkpointing trivial.
    double gaussian();
    double gaussian(double mean, double stddev) { return mean + stddev * gaussian(); }

    // Fisher-Yates.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            auto j = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i) - 1));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Engine state as text (standardized mt19937_64 stream format).
    std::string state() const;
    void set_state(const std::string& s);

private:
    std::mt19937_64 gen_;
};

} // namespace cgl
