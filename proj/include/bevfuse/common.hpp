#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace bevfuse {

inline constexpr double kPi = 3.14159265358979323846;

// All library errors carry a short domain tag so the CLI can emit
// "ERROR <domain>: <message>" lines.
class Error : public std::runtime_error {
public:
    Error(std::string domain, const std::string& message)
        : std::runtime_error(message), domain_(std::move(domain)) {}

    const std::string& domain() const { return domain_; }

private:
    std::string domain_;
};

[[noreturn]] inline void fail(const std::string& domain, const std::string& message) {
    throw Error(domain, message);
}

// One-line machine-parsable form used by the CLI.
inline std::string format_error(const Error& e) {
    return "ERROR " + e.domain() + ": " + e.what();
}

inline void require(bool condition, const std::string& domain, const std::string& message) {
    if (!condition) fail(domain, message);
}

// splitmix64, used to derive independent stream seeds from (master, id).
inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
    std::uint64_t s = master ^ (0x9e3779b97f4a7c15ull * (stream + 1));
    std::uint64_t a = splitmix64(s);
    std::uint64_t b = splitmix64(s);
    return a ^ (b << 1);
}

// Deterministic RNG with portable distributions. std:: distributions are
// implementation-defined, so uniform/normal are spelled out here to keep
// generated datasets byte-identical across toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x853c49e6748fea9bull) {}

    std::uint64_t next_u64() { return splitmix64(state_); }

    // [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // [0, n)
    std::uint64_t uniform_index(std::uint64_t n) {
        return n == 0 ? 0 : next_u64() % n;
    }

    double normal() {
        // Box-Muller; cache the second draw.
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        const double mag = std::sqrt(-2.0 * std::log(u1));
        spare_ = mag * std::sin(2.0 * kPi * u2);
        has_spare_ = true;
        return mag * std::cos(2.0 * kPi * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Gumbel(0,1) draws for the softmax sampling path.
    double gumbel() {
        double u = uniform();
        if (u < 1e-300) u = 1e-300;
        return -std::log(-std::log(u));
    }

private:
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Worker count for per-frame / per-scene parallel sections. BEVFUSE_THREADS
// caps it; every parallel site must stay deterministic (independent work
// items, ordered reduction by the caller).
inline int worker_count() {
    unsigned hw = std::thread::hardware_concurrency();
    int n = hw == 0 ? 1 : static_cast<int>(hw);
    if (const char* env = std::getenv("BEVFUSE_THREADS")) {
        const int cap = std::atoi(env);
        if (cap >= 1 && cap < n) n = cap;
        if (cap >= 1 && cap >= n) n = cap;
    }
    return n < 1 ? 1 : n;
}

// Runs fn(i) for i in [0, n). Work items must be independent; result order
// is the caller's responsibility (index-addressed output buffers).
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    const int workers = worker_count();
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::exception_ptr first_error;
    std::mutex error_mutex;
    const std::size_t threads = std::min<std::size_t>(workers, n);
    std::atomic<std::size_t> next{0};
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n) break;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace bevfuse
