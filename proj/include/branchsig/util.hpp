#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>

namespace branchsig {

// Parse failures carry the byte offset of the first offending character.
struct ParseError : std::runtime_error {
  std::size_t offset;
  ParseError(const std::string& msg, std::size_t off)
      : std::runtime_error(msg + " (byte " + std::to_string(off) + ")"), offset(off) {}
};

// Lookup of an absent basis element / channel / word.
struct KeyError : std::runtime_error {
  explicit KeyError(const std::string& msg) : std::runtime_error(msg) {}
};

// NaN/overflow or a numerical method failing its own contract.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// All randomness flows from one 64-bit seed; independent streams are derived
// by splitmix64 mixing so substreams never overlap by construction.
// Gaussians use hand-rolled Box-Muller over explicitly built uniforms:
// std::mt19937_64 is bit-exact per the standard, std::normal_distribution is not.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), gen_(splitmix64(seed)) {}

  Rng derive(std::uint64_t stream) const {
    return Rng(splitmix64(seed_ ^ splitmix64(stream + 0x243f6a8885a308d3ULL)));
  }

  std::uint64_t bits() { return gen_(); }

  // uniform on [0,1) with 53 random bits
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Worker cap for embarrassingly parallel loops: BRANCHSIG_THREADS, else
// hardware concurrency. Results must not depend on the schedule; callers give
// every index its own output slot (and its own derived rng stream).
unsigned thread_count();

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace branchsig
