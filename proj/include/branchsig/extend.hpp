#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "branchsig/sigcore.hpp"
#include "branchsig/trees.hpp"

namespace branchsig {

// Fractional Brownian motion sample request. rho is a row-major dim x dim
// correlation across components (empty = identity); Cov(B^a_t, B^b_t) =
// rho_ab t^{2H}.
struct FbmSpec {
  double hurst = 0.1;
  double horizon = 1.0;
  long steps = 1000;
  int dim = 1;
  std::vector<double> rho;
};

struct FbmResult {
  SampledPath path;
  bool used_fallback = false;  // circulant embedding rejected, dense factorization used
};

// Standard Brownian motion on a uniform grid, channels labeled 1..dim.
SampledPath sample_bm(int dim, long steps, double horizon, std::uint64_t seed);

// Davies-Harte circulant embedding (FFT) with eigenvalue tolerance 1e-10;
// falls back to a dense covariance square root when the embedding fails.
FbmResult sample_fbm(const FbmSpec& spec, std::uint64_t seed, bool force_fallback = false);

struct RoughVolParams {
  double a = 0.1;
  double b = 3.0;
  double lambda1 = 1e-4;
  double lambda2 = 3.0;
  double s0 = 1.0;
  double v0 = 0.8;
  double hurst = 0.1;
  double horizon = 1.0;
  long steps = 1000;
  std::uint64_t seed = 0;
};

struct RoughVolResult {
  SampledPath stock;    // 1 channel
  SampledPath vol;      // 1 channel
  SampledPath drivers;  // channels (B, B^H) labeled 1, 2
  long clamp_count = 0;  // Euler steps where V < 0 was floored before V^b
};

// Euler-Maruyama for
//   dS/S = -1/2 l1 (a^2(V-a)V^b / sqrt(a(V-a)^2+a) + a(V-a)^2 + a) dt
//          + l2 (a(V-a)^2 + a) dB
//   dV   = l1 a(1+V) dt + l2 (a V^b dB + a V0^b dB^H)
// A zero horizon collapses to single-point paths at the initial state.
RoughVolResult simulate_roughvol(const RoughVolParams& params);

// Path whose channels are indexed by decorated trees; level-1 channels are
// the original path's channels, bitwise.
struct ExtendedPath {
  SampledPath base;  // channel c carries channel_trees[c]
  std::vector<Tree> channel_trees;
  int level = 1;

  int channel_of(const Tree& t) const;  // -1 when absent
};

enum class BmCorrection {
  bracket,   // -1/2 rho_ab (t - t0), the deterministic Brownian bracket
  realized,  // -1/2 sum dB^a dB^b accumulated on the grid
};

// Level-2 extension of a BM sample. rho as in FbmSpec (empty = identity).
ExtendedPath extend_bm(const SampledPath& p, BmCorrection mode = BmCorrection::bracket,
                       const std::vector<double>& rho = {});

// Level-3 extension of an fBm sample from the closed forms:
//   [a]_b        -> -1/2 rho_ab (t^{2H} - s^{2H})
//   [[a]_b]_c    -> -H rho_ac  int_s^t B^b_r r^{2H-1} dr
//   [a b]_c      -> -H rho_bc int B^a r^{2H-1} dr - H rho_ac int B^b r^{2H-1} dr
// with s the path's first time and left-point integrals on the grid.
ExtendedPath extend_fbm(const SampledPath& p, const FbmSpec& spec);

// Per-tree pairing defect <bsig(p), h> - <sig_chen(ext), psi(h)> for all
// trees |h| <= level over p's channel labels. Missing letter channels in the
// extension raise KeyError.
std::vector<std::pair<Tree, double>> hk_residual(const SampledPath& p, const ExtendedPath& ext,
                                                 int level);

}  // namespace branchsig
