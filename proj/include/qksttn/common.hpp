#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace qksttn {

// Error taxonomy. Every module throws one of these; the CLI maps them to
// exit codes and names the failing stage.
struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct domain_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct shape_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ingest_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct capacity_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct divergence_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Deterministically derive a child seed from (seed, stream). All randomness
// in a run flows from one root seed through this function, so realizations,
// folds, grid cells etc. get independent, reproducible streams.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    return splitmix64(seed ^ splitmix64(stream + 0x51ed2701ULL));
}

// Seeded generator handed to every stochastic operation. Independent
// streams are split off with child(); the construction seed is retained so
// splitting does not depend on how much the parent has been consumed.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

    std::mt19937_64& engine() { return engine_; }
    std::uint64_t seed() const { return seed_; }

    double normal(double mean = 0.0, double stddev = 1.0) {
        std::normal_distribution<double> d(mean, stddev);
        return d(engine_);
    }
    double uniform(double lo = 0.0, double hi = 1.0) {
        std::uniform_real_distribution<double> d(lo, hi);
        return d(engine_);
    }
    std::uint64_t integer(std::uint64_t n) {  // uniform in [0, n)
        std::uniform_int_distribution<std::uint64_t> d(0, n - 1);
        return d(engine_);
    }

    Rng child(std::uint64_t stream) const {
        return Rng(derive_seed(seed_, stream));
    }

  private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
};

// In-place Fisher-Yates using the given engine.
template <typename T>
void shuffle_vec(std::vector<T>& v, std::mt19937_64& eng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::uniform_int_distribution<std::size_t> d(0, i - 1);
        std::swap(v[i - 1], v[d(eng)]);
    }
}

// Deterministic parallel map: results[i] = fn(i). Output is identical for
// any thread count because each index owns its slot and any reduction the
// caller performs afterwards runs serially in index order.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn, unsigned threads = 0) {
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::size_t chunk = (n + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
        std::size_t lo = t * chunk, hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn] {
            for (std::size_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace qksttn
