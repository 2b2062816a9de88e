#include "branchsig/extend.hpp"

#include <fftw3.h>

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <map>
#include <mutex>
#include <stdexcept>

#include "branchsig/util.hpp"

namespace branchsig {

namespace {

// FFTW's planner is not thread-safe; executions on private buffers are.
std::mutex fftw_mu;

void fft_forward(std::vector<std::complex<double>>& a) {
  fftw_plan plan;
  auto* buf = reinterpret_cast<fftw_complex*>(a.data());
  {
    std::lock_guard<std::mutex> lock(fftw_mu);
    plan = fftw_plan_dft_1d(static_cast<int>(a.size()), buf, buf, FFTW_FORWARD, FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  {
    std::lock_guard<std::mutex> lock(fftw_mu);
    fftw_destroy_plan(plan);
  }
}

// autocovariance of unit-spacing fractional Gaussian noise
double fgn_autocov(double hurst, long k) {
  const double h2 = 2.0 * hurst;
  const double kk = static_cast<double>(k < 0 ? -k : k);
  return 0.5 * (std::pow(kk + 1.0, h2) - 2.0 * std::pow(kk, h2) + std::pow(std::abs(kk - 1.0), h2));
}

struct EmbeddingKey {
  double hurst;
  long n;
  bool operator<(const EmbeddingKey& o) const {
    if (hurst != o.hurst) return hurst < o.hurst;
    return n < o.n;
  }
};

std::mutex embed_mu;
std::map<EmbeddingKey, std::vector<double>> embed_cache;  // circulant eigenvalues, or empty = rejected

// eigenvalues of the 2n-circulant embedding of the fGn covariance; empty when
// a genuinely negative eigenvalue (below -1e-10 relative) rejects the embedding
std::vector<double> circulant_eigenvalues(double hurst, long n) {
  {
    std::lock_guard<std::mutex> lock(embed_mu);
    auto it = embed_cache.find(EmbeddingKey{hurst, n});
    if (it != embed_cache.end()) return it->second;
  }
  const long m = 2 * n;
  std::vector<std::complex<double>> c(static_cast<std::size_t>(m));
  for (long j = 0; j <= n; ++j) c[static_cast<std::size_t>(j)] = fgn_autocov(hurst, j);
  for (long j = 1; j < n; ++j) c[static_cast<std::size_t>(m - j)] = fgn_autocov(hurst, j);
  fft_forward(c);

  std::vector<double> lambda(static_cast<std::size_t>(m));
  double max_l = 0.0;
  for (std::size_t i = 0; i < lambda.size(); ++i) {
    lambda[i] = c[i].real();
    max_l = std::max(max_l, std::abs(lambda[i]));
  }
  const double tol = 1e-10 * std::max(1.0, max_l);
  bool ok = true;
  for (double& l : lambda) {
    if (l < -tol) {
      ok = false;
      break;
    }
    if (l < 0.0) l = 0.0;
  }
  if (!ok) lambda.clear();
  std::lock_guard<std::mutex> lock(embed_mu);
  embed_cache.emplace(EmbeddingKey{hurst, n}, lambda);
  return lambda;
}

// unit-spacing fGn by Davies-Harte; empty return means embedding rejected
std::vector<double> fgn_davies_harte(double hurst, long n, Rng& rng) {
  const std::vector<double> lambda = circulant_eigenvalues(hurst, n);
  if (lambda.empty()) return {};
  const long m = 2 * n;
  const double inv_m = 1.0 / static_cast<double>(m);
  std::vector<std::complex<double>> z(static_cast<std::size_t>(m));
  z[0] = std::sqrt(lambda[0] * inv_m) * rng.gaussian();
  z[static_cast<std::size_t>(n)] =
      std::sqrt(lambda[static_cast<std::size_t>(n)] * inv_m) * rng.gaussian();
  for (long j = 1; j < n; ++j) {
    const double s = std::sqrt(0.5 * lambda[static_cast<std::size_t>(j)] * inv_m);
    const double g1 = rng.gaussian(), g2 = rng.gaussian();
    z[static_cast<std::size_t>(j)] = std::complex<double>(s * g1, s * g2);
    z[static_cast<std::size_t>(m - j)] = std::complex<double>(s * g1, -s * g2);
  }
  fft_forward(z);
  std::vector<double> fgn(static_cast<std::size_t>(n));
  for (long k = 0; k < n; ++k) fgn[static_cast<std::size_t>(k)] = z[static_cast<std::size_t>(k)].real();
  return fgn;
}

std::mutex sqrt_mu;
std::map<std::pair<double, long>, Eigen::MatrixXd> fgn_sqrt_cache;

// dense fallback: symmetric square root of the unit-spacing fGn covariance
std::vector<double> fgn_covariance_root(double hurst, long n, Rng& rng) {
  Eigen::MatrixXd root;
  {
    std::lock_guard<std::mutex> lock(sqrt_mu);
    auto it = fgn_sqrt_cache.find({hurst, n});
    if (it != fgn_sqrt_cache.end()) root = it->second;
  }
  if (root.size() == 0) {
    Eigen::MatrixXd cov(n, n);
    for (long i = 0; i < n; ++i)
      for (long j = 0; j < n; ++j) cov(i, j) = fgn_autocov(hurst, i - j);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    Eigen::VectorXd vals = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    root = es.eigenvectors() * vals.asDiagonal() * es.eigenvectors().transpose();
    std::lock_guard<std::mutex> lock(sqrt_mu);
    fgn_sqrt_cache.emplace(std::make_pair(hurst, n), root);
  }
  Eigen::VectorXd g(n);
  for (long i = 0; i < n; ++i) g(i) = rng.gaussian();
  Eigen::VectorXd x = root * g;
  return std::vector<double>(x.data(), x.data() + n);
}

// symmetric square root of a correlation matrix (PSD up to 1e-10)
std::vector<double> correlation_root(const std::vector<double>& rho, int d) {
  Eigen::MatrixXd r(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) r(i, j) = rho[static_cast<std::size_t>(i) * d + j];
  if (!r.isApprox(r.transpose(), 1e-12))
    throw std::invalid_argument("correlation matrix must be symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(r);
  if (es.eigenvalues().minCoeff() < -1e-10)
    throw std::invalid_argument("correlation matrix must be positive semidefinite");
  Eigen::MatrixXd root =
      es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
      es.eigenvectors().transpose();
  return std::vector<double>(root.data(), root.data() + d * d);
}

std::vector<double> identity_rho(int d) {
  std::vector<double> rho(static_cast<std::size_t>(d) * d, 0.0);
  for (int i = 0; i < d; ++i) rho[static_cast<std::size_t>(i) * d + i] = 1.0;
  return rho;
}

void check_rho(const std::vector<double>& rho, int d) {
  if (rho.size() != static_cast<std::size_t>(d) * static_cast<std::size_t>(d))
    throw std::invalid_argument("correlation matrix must be dim x dim");
}

std::vector<double> uniform_times(long steps, double horizon) {
  std::vector<double> t(static_cast<std::size_t>(steps) + 1);
  for (long k = 0; k <= steps; ++k)
    t[static_cast<std::size_t>(k)] = horizon * static_cast<double>(k) / static_cast<double>(steps);
  return t;
}

std::vector<int> spatial_labels(int d) {
  std::vector<int> out;
  for (int i = 1; i <= d; ++i) out.push_back(i);
  return out;
}

}  // namespace

SampledPath sample_bm(int dim, long steps, double horizon, std::uint64_t seed) {
  if (dim < 1) throw std::invalid_argument("dimension must be >= 1");
  if (steps < 1) throw std::invalid_argument("steps must be >= 1");
  if (!(horizon > 0.0)) throw std::invalid_argument("horizon must be > 0");
  Rng root(seed);
  const double sdt = std::sqrt(horizon / static_cast<double>(steps));
  std::vector<double> vals(static_cast<std::size_t>(steps + 1) * dim, 0.0);
  for (int c = 0; c < dim; ++c) {
    Rng rng = root.derive(static_cast<std::uint64_t>(c));
    double b = 0.0;
    for (long k = 1; k <= steps; ++k) {
      b += sdt * rng.gaussian();
      vals[static_cast<std::size_t>(k) * dim + c] = b;
    }
  }
  return SampledPath(uniform_times(steps, horizon), std::move(vals), spatial_labels(dim));
}

FbmResult sample_fbm(const FbmSpec& spec, std::uint64_t seed, bool force_fallback) {
  if (!(spec.hurst > 0.0 && spec.hurst < 1.0))
    throw std::invalid_argument("hurst must lie in (0,1)");
  if (!(spec.horizon > 0.0)) throw std::invalid_argument("horizon must be > 0");
  if (spec.steps < 1) throw std::invalid_argument("steps must be >= 1");
  if (spec.dim < 1) throw std::invalid_argument("dimension must be >= 1");
  std::vector<double> rho = spec.rho.empty() ? identity_rho(spec.dim) : spec.rho;
  check_rho(rho, spec.dim);

  const long n = spec.steps;
  const int d = spec.dim;
  Rng root(seed);
  bool fallback = false;
  std::vector<std::vector<double>> fgn(static_cast<std::size_t>(d));
  for (int c = 0; c < d; ++c) {
    Rng rng = root.derive(static_cast<std::uint64_t>(c));
    if (!force_fallback) fgn[static_cast<std::size_t>(c)] = fgn_davies_harte(spec.hurst, n, rng);
    if (fgn[static_cast<std::size_t>(c)].empty()) {
      fallback = true;
      fgn[static_cast<std::size_t>(c)] = fgn_covariance_root(spec.hurst, n, rng);
    }
  }

  std::vector<double> mix = correlation_root(rho, d);
  const double scale = std::pow(spec.horizon / static_cast<double>(n), spec.hurst);
  std::vector<double> vals(static_cast<std::size_t>(n + 1) * d, 0.0);
  std::vector<double> level(static_cast<std::size_t>(d), 0.0);
  for (long k = 0; k < n; ++k) {
    for (int a = 0; a < d; ++a) {
      double inc = 0.0;
      for (int b = 0; b < d; ++b)
        inc += mix[static_cast<std::size_t>(a) * d + b] * fgn[static_cast<std::size_t>(b)][static_cast<std::size_t>(k)];
      level[static_cast<std::size_t>(a)] += scale * inc;
      vals[static_cast<std::size_t>(k + 1) * d + a] = level[static_cast<std::size_t>(a)];
    }
  }
  return FbmResult{SampledPath(uniform_times(n, spec.horizon), std::move(vals), spatial_labels(d)),
                   fallback};
}

RoughVolResult simulate_roughvol(const RoughVolParams& p) {
  if (p.steps < 1) throw std::invalid_argument("steps must be >= 1");
  if (p.horizon < 0.0) throw std::invalid_argument("horizon must be >= 0");
  if (!(p.a > 0.0)) throw std::invalid_argument("parameter a must be > 0");

  if (p.horizon == 0.0) {
    std::vector<double> t{0.0};
    return RoughVolResult{SampledPath(t, {p.s0}, {1}), SampledPath(t, {p.v0}, {1}),
                          SampledPath(t, {0.0, 0.0}, {1, 2}), 0};
  }

  Rng root(p.seed);
  SampledPath bm = sample_bm(1, p.steps, p.horizon, root.derive(1).seed());
  FbmSpec fspec;
  fspec.hurst = p.hurst;
  fspec.horizon = p.horizon;
  fspec.steps = p.steps;
  fspec.dim = 1;
  SampledPath fbm = sample_fbm(fspec, root.derive(2).seed()).path;

  const long n = p.steps;
  const double dt = p.horizon / static_cast<double>(n);
  std::vector<double> sv(static_cast<std::size_t>(n + 1)), vv(static_cast<std::size_t>(n + 1));
  sv[0] = p.s0;
  vv[0] = p.v0;
  long clamps = 0;
  const double v0b = std::pow(std::max(p.v0, 0.0), p.b);
  double s = p.s0, v = p.v0;
  for (long k = 0; k < n; ++k) {
    const double db = bm.values[static_cast<std::size_t>(k + 1)] - bm.values[static_cast<std::size_t>(k)];
    const double dbh = fbm.values[static_cast<std::size_t>(k + 1)] - fbm.values[static_cast<std::size_t>(k)];
    double vfloor = v;
    if (v < 0.0) {
      vfloor = 0.0;
      ++clamps;
    }
    const double vb = std::pow(vfloor, p.b);
    const double vm = v - p.a;
    const double q = p.a * vm * vm + p.a;  // a(V-a)^2 + a > 0
    const double f1 = s * (-0.5) * p.lambda1 * (p.a * p.a * vm * vb / std::sqrt(q) + q);
    const double g1 = s * p.lambda2 * q;
    const double f2 = p.lambda1 * p.a * (1.0 + v);
    const double g2 = p.lambda2 * p.a * vb;
    const double h = p.lambda2 * p.a * v0b;
    s += f1 * dt + g1 * db;
    v += f2 * dt + g2 * db + h * dbh;
    if (!std::isfinite(s) || !std::isfinite(v))
      throw NumericError("rough-vol Euler step " + std::to_string(k + 1) +
                         " produced a non-finite state");
    sv[static_cast<std::size_t>(k + 1)] = s;
    vv[static_cast<std::size_t>(k + 1)] = v;
  }

  std::vector<double> drivers(static_cast<std::size_t>(n + 1) * 2);
  for (long k = 0; k <= n; ++k) {
    drivers[static_cast<std::size_t>(k) * 2] = bm.values[static_cast<std::size_t>(k)];
    drivers[static_cast<std::size_t>(k) * 2 + 1] = fbm.values[static_cast<std::size_t>(k)];
  }
  std::vector<double> times = bm.times;
  return RoughVolResult{SampledPath(times, std::move(sv), {1}),
                        SampledPath(times, std::move(vv), {1}),
                        SampledPath(times, std::move(drivers), {1, 2}), clamps};
}

int ExtendedPath::channel_of(const Tree& t) const {
  for (std::size_t c = 0; c < channel_trees.size(); ++c)
    if (channel_trees[c] == t) return static_cast<int>(c);
  return -1;
}

namespace {

// channel scaffold: trees of sizes 1..level over p's labels, level-1 channels
// copied bitwise from p
ExtendedPath extension_scaffold(const SampledPath& p, int level) {
  ExtendedPath ext;
  ext.level = level;
  for (int n = 1; n <= level; ++n) {
    std::vector<Tree> ts = enumerate_trees(n, p.channel_labels);
    ext.channel_trees.insert(ext.channel_trees.end(), ts.begin(), ts.end());
  }
  const std::size_t n = p.points();
  const std::size_t e = ext.channel_trees.size();
  std::vector<double> vals(n * e, 0.0);
  for (std::size_t c = 0; c < e; ++c) {
    const Tree& t = ext.channel_trees[c];
    if (t.size() != 1) continue;
    const int src = p.channel_of_label(t.label());
    for (std::size_t i = 0; i < n; ++i)
      vals[i * e + c] = p.values[i * static_cast<std::size_t>(p.dim()) + static_cast<std::size_t>(src)];
  }
  std::vector<int> labels(e);
  for (std::size_t c = 0; c < e; ++c) labels[c] = static_cast<int>(c);
  ext.base = SampledPath(p.times, std::move(vals), std::move(labels));
  return ext;
}

}  // namespace

ExtendedPath extend_bm(const SampledPath& p, BmCorrection mode, const std::vector<double>& rho_in) {
  p.validate();
  if (p.points() < 2) throw std::invalid_argument("extension needs at least 2 samples");
  const int d = p.dim();
  std::vector<double> rho = rho_in.empty() ? identity_rho(d) : rho_in;
  check_rho(rho, d);

  ExtendedPath ext = extension_scaffold(p, 2);
  const std::size_t n = p.points();
  const std::size_t e = ext.channel_trees.size();
  for (std::size_t c = 0; c < e; ++c) {
    const Tree& t = ext.channel_trees[c];
    if (t.size() != 2) continue;
    const int leaf = p.channel_of_label(t.children().front().label());
    const int rct = p.channel_of_label(t.label());
    if (mode == BmCorrection::bracket) {
      const double r = rho[static_cast<std::size_t>(leaf) * d + rct];
      for (std::size_t i = 1; i < n; ++i)
        ext.base.value(i, static_cast<int>(c)) = -0.5 * r * (p.times[i] - p.times[0]);
    } else {
      double acc = 0.0;
      for (std::size_t i = 1; i < n; ++i) {
        const double da = p.value(i, leaf) - p.value(i - 1, leaf);
        const double db = p.value(i, rct) - p.value(i - 1, rct);
        acc += -0.5 * da * db;
        ext.base.value(i, static_cast<int>(c)) = acc;
      }
    }
  }
  return ext;
}

ExtendedPath extend_fbm(const SampledPath& p, const FbmSpec& spec) {
  p.validate();
  if (p.points() < 2) throw std::invalid_argument("extension needs at least 2 samples");
  if (!(spec.hurst > 0.0 && spec.hurst < 1.0))
    throw std::invalid_argument("hurst must lie in (0,1)");
  const int d = p.dim();
  if (spec.dim != d) throw std::invalid_argument("spec dimension does not match path");
  std::vector<double> rho = spec.rho.empty() ? identity_rho(d) : spec.rho;
  check_rho(rho, d);

  const double H = spec.hurst;
  const double h2 = 2.0 * H;
  const std::size_t n = p.points();

  // left-point weighted integrals Q_x(t_k) = sum_{l<k} B^x(t_l) t_l^{2H-1} dt_l;
  // a t_l = 0 term is dropped (integrand limit 0 for paths started at 0)
  std::vector<std::vector<double>> q(static_cast<std::size_t>(d),
                                     std::vector<double>(n, 0.0));
  for (int x = 0; x < d; ++x) {
    double acc = 0.0;
    for (std::size_t i = 1; i < n; ++i) {
      const double tl = p.times[i - 1];
      if (tl != 0.0) acc += p.value(i - 1, x) * std::pow(tl, h2 - 1.0) * (p.times[i] - tl);
      q[static_cast<std::size_t>(x)][i] = acc;
    }
  }

  const double t0p = std::pow(p.times[0], h2);
  ExtendedPath ext = extension_scaffold(p, 3);
  const std::size_t e = ext.channel_trees.size();
  for (std::size_t c = 0; c < e; ++c) {
    const Tree& t = ext.channel_trees[c];
    if (t.size() == 2) {
      const int leaf = p.channel_of_label(t.children().front().label());
      const int rct = p.channel_of_label(t.label());
      const double r = rho[static_cast<std::size_t>(leaf) * d + rct];
      for (std::size_t i = 1; i < n; ++i)
        ext.base.value(i, static_cast<int>(c)) = -0.5 * r * (std::pow(p.times[i], h2) - t0p);
    } else if (t.size() == 3) {
      const int rct = p.channel_of_label(t.label());
      if (t.children().size() == 1) {  // chain [[a]_b]_c
        const Tree& mid = t.children().front();
        const int b = p.channel_of_label(mid.label());
        const int a = p.channel_of_label(mid.children().front().label());
        const double r = rho[static_cast<std::size_t>(a) * d + rct];
        for (std::size_t i = 1; i < n; ++i)
          ext.base.value(i, static_cast<int>(c)) = -H * r * q[static_cast<std::size_t>(b)][i];
      } else {  // cherry [a b]_c
        const int a = p.channel_of_label(t.children()[0].label());
        const int b = p.channel_of_label(t.children()[1].label());
        const double rbc = rho[static_cast<std::size_t>(b) * d + rct];
        const double rac = rho[static_cast<std::size_t>(a) * d + rct];
        for (std::size_t i = 1; i < n; ++i)
          ext.base.value(i, static_cast<int>(c)) =
              -H * (rbc * q[static_cast<std::size_t>(a)][i] + rac * q[static_cast<std::size_t>(b)][i]);
      }
    }
  }
  return ext;
}

std::vector<std::pair<Tree, double>> hk_residual(const SampledPath& p, const ExtendedPath& ext,
                                                 int level) {
  if (level < 1) throw std::invalid_argument("level must be >= 1");
  if (ext.base.times != p.times)
    throw std::invalid_argument("extension grid does not match the path grid");

  const BranchedSignature bs = bsig(p, level);
  const TruncatedSignature sig = sig_chen(ext.base, level);
  auto resolver = [&ext](const Tree& t) { return ext.channel_of(t); };

  std::vector<std::pair<Tree, double>> out;
  for (const Tree& h : bs.basis()) {
    const double lhs = bs.tree_value(h);
    const double rhs = eval_pairing(sig, psi(h), resolver);
    out.emplace_back(h, lhs - rhs);
  }
  return out;
}

}  // namespace branchsig
