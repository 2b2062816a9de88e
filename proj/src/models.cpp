#include "branchsig/models.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "branchsig/hopf.hpp"
#include "branchsig/util.hpp"

namespace branchsig {

namespace {

std::vector<int> model_letter_positions(const std::string& key, const SampledPath& p, int level) {
  const Word w = parse_word(key);
  if (w.length() > level)
    throw std::invalid_argument("weight key '" + key + "' longer than model level");
  std::vector<int> pos;
  for (const Tree& t : w.letters()) {
    if (t.size() != 1)
      throw std::invalid_argument("classical model keys must be words of plain letters: " + key);
    const int c = p.channel_of_label(t.label());
    if (c < 0) throw KeyError("weight key '" + key + "' names unknown channel");
    pos.push_back(c);
  }
  return pos;
}

}  // namespace

SampledPath sig_model_eval(const SigModelCoeffs& c, const SampledPath& p) {
  p.validate();
  if (c.level < 1) throw std::invalid_argument("model level must be >= 1");
  std::vector<std::vector<int>> keys;
  std::vector<double> ws;
  for (const auto& [key, wgt] : c.weights) {
    keys.push_back(model_letter_positions(key, p, c.level));
    ws.push_back(wgt);
  }

  const std::size_t n = p.points();
  const std::size_t d = static_cast<std::size_t>(p.dim());
  std::vector<double> out(n);
  out[0] = c.intercept;
  TruncatedSignature acc(c.level, p.channel_labels);
  std::vector<double> dx(d);
  for (std::size_t i = 1; i < n; ++i) {
    for (std::size_t ch = 0; ch < d; ++ch)
      dx[ch] = p.values[i * d + ch] - p.values[(i - 1) * d + ch];
    acc.concat_exp(dx);
    double v = c.intercept;
    for (std::size_t k = 0; k < keys.size(); ++k) v += ws[k] * acc.entry(keys[k]);
    out[i] = v;
  }
  return SampledPath(p.times, std::move(out), {1});
}

SampledPath bsig_model_eval(const SigModelCoeffs& c, const SampledPath& p) {
  p.validate();
  if (c.level < 1) throw std::invalid_argument("model level must be >= 1");
  std::vector<Forest> keys;
  std::vector<double> ws;
  for (const auto& [key, wgt] : c.weights) {
    const Forest f = parse_forest(key);
    if (f.nodes() > c.level)
      throw std::invalid_argument("weight key '" + key + "' above model level");
    // every decoration in the forest must name a path channel
    std::vector<const Tree*> stack;
    for (const Tree& t : f.trees()) stack.push_back(&t);
    while (!stack.empty()) {
      const Tree* cur = stack.back();
      stack.pop_back();
      if (p.channel_of_label(cur->label()) < 0)
        throw KeyError("weight key '" + key + "' names unknown channel");
      for (const Tree& ch : cur->children()) stack.push_back(&ch);
    }
    keys.push_back(f);
    ws.push_back(wgt);
  }

  const std::size_t n = p.points();
  const std::size_t d = static_cast<std::size_t>(p.dim());
  std::vector<double> out(n);
  out[0] = c.intercept;
  BranchedSignature acc(c.level, p.channel_labels);
  std::vector<double> dx(d);
  for (std::size_t i = 1; i < n; ++i) {
    for (std::size_t ch = 0; ch < d; ++ch)
      dx[ch] = p.values[i * d + ch] - p.values[(i - 1) * d + ch];
    acc.advance(dx);
    double v = c.intercept;
    for (std::size_t k = 0; k < keys.size(); ++k) v += ws[k] * acc.value(keys[k]);
    out[i] = v;
  }
  return SampledPath(p.times, std::move(out), {1});
}

SampledPath iterate_sig_model(const std::vector<SigModelCoeffs>& layers, const SampledPath& p,
                              bool branched, bool augment) {
  if (layers.empty()) throw std::invalid_argument("need at least one layer");
  SampledPath cur = p;
  for (std::size_t j = 0; j < layers.size(); ++j) {
    SampledPath input = cur;
    if (j > 0 && augment) {
      // (original channels, previous output) with a fresh label
      int fresh = 0;
      for (int lab : p.channel_labels) fresh = std::max(fresh, lab);
      ++fresh;
      const std::size_t n = p.points();
      const std::size_t d = static_cast<std::size_t>(p.dim());
      std::vector<double> vals(n * (d + 1));
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t ch = 0; ch < d; ++ch) vals[i * (d + 1) + ch] = p.values[i * d + ch];
        vals[i * (d + 1) + d] = cur.values[i];
      }
      std::vector<int> labels = p.channel_labels;
      labels.push_back(fresh);
      input = SampledPath(p.times, std::move(vals), std::move(labels));
    }
    cur = branched ? bsig_model_eval(layers[j], input) : sig_model_eval(layers[j], input);
  }
  return cur;
}

std::vector<double> shuffle_residual(const SampledPath& p) {
  p.validate();
  const std::size_t n = p.points();
  const std::size_t d = static_cast<std::size_t>(p.dim());
  std::vector<double> integral(d * d, 0.0);  // I_jk = int (Xj - Xj_0) dXk, left-point
  std::vector<double> acc(d * d, 0.0);
  for (std::size_t i = 1; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const double aj_prev = p.values[(i - 1) * d + j] - p.values[j];
      for (std::size_t k = 0; k < d; ++k)
        integral[j * d + k] += aj_prev * (p.values[i * d + k] - p.values[(i - 1) * d + k]);
    }
    for (std::size_t j = 0; j < d; ++j) {
      const double aj = p.values[i * d + j] - p.values[j];
      for (std::size_t k = 0; k < d; ++k) {
        const double ak = p.values[i * d + k] - p.values[k];
        const double r = aj * ak - integral[j * d + k] - integral[k * d + j];
        acc[j * d + k] += r * r;
      }
    }
  }
  for (double& v : acc) v /= static_cast<double>(n);
  return acc;
}

LinearFit fit_linear(const std::vector<double>& x, std::size_t rows, std::size_t cols,
                     const std::vector<double>& y) {
  if (rows == 0 || x.size() != rows * cols || y.size() != rows)
    throw std::invalid_argument("design matrix shape mismatch");
  Eigen::MatrixXd a(rows, cols + 1);
  for (std::size_t i = 0; i < rows; ++i) {
    a(static_cast<Eigen::Index>(i), 0) = 1.0;
    for (std::size_t j = 0; j < cols; ++j)
      a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j + 1)) = x[i * cols + j];
  }
  Eigen::Map<const Eigen::VectorXd> yv(y.data(), static_cast<Eigen::Index>(rows));

  LinearFit fit;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::VectorXd beta;
  if (qr.rank() < static_cast<Eigen::Index>(cols + 1)) {
    // rank-deficient: tiny Tikhonov damping scaled to the Gram trace
    fit.ridge_used = true;
    Eigen::MatrixXd gram = a.transpose() * a;
    const double damp = 1e-10 * std::max(1.0, gram.trace() / static_cast<double>(cols + 1));
    gram.diagonal().array() += damp;
    beta = gram.ldlt().solve(a.transpose() * yv);
  } else {
    beta = qr.solve(yv);
  }
  fit.coeffs.assign(beta.data(), beta.data() + beta.size());
  fit.mse = (a * beta - yv).squaredNorm() / static_cast<double>(rows);
  return fit;
}

double linear_predict(const LinearFit& fit, const double* features, std::size_t cols) {
  if (fit.coeffs.size() != cols + 1) throw std::invalid_argument("coefficient count mismatch");
  double v = fit.coeffs[0];
  for (std::size_t j = 0; j < cols; ++j) v += fit.coeffs[j + 1] * features[j];
  return v;
}

std::size_t ExtensionModel::mlp_param_count() const {
  std::size_t count = 0;
  int prev = in_dim;
  for (int w : widths) {
    count += static_cast<std::size_t>(w) * static_cast<std::size_t>(prev) + static_cast<std::size_t>(w);
    prev = w;
  }
  count += static_cast<std::size_t>(out_channels) * static_cast<std::size_t>(prev) +
           static_cast<std::size_t>(out_channels);
  return count;
}

std::size_t ExtensionModel::param_count() const {
  const std::size_t f1 = static_cast<std::size_t>(d1()) + static_cast<std::size_t>(d1()) * d1();
  const std::size_t f2 = static_cast<std::size_t>(d2()) + static_cast<std::size_t>(d2()) * d2();
  return mlp_param_count() + f1 + 1 + f2 + 1;
}

ExtensionModel init_extension_model(int in_dim, const std::vector<int>& widths, int out_channels,
                                    std::uint64_t seed) {
  if (in_dim < 1 || out_channels < 1) throw std::invalid_argument("bad model dimensions");
  for (int w : widths)
    if (w < 1) throw std::invalid_argument("bad hidden width");
  ExtensionModel m;
  m.in_dim = in_dim;
  m.widths = widths;
  m.out_channels = out_channels;
  m.params.assign(m.param_count(), 0.0);

  Rng rng = Rng(seed).derive(0x6d6c70);  // parameter stream
  std::size_t off = 0;
  int prev = in_dim;
  std::vector<int> outs = widths;
  outs.push_back(out_channels);
  for (int w : outs) {
    const double s = std::sqrt(6.0 / static_cast<double>(prev + w));
    for (int i = 0; i < w * prev; ++i) m.params[off + static_cast<std::size_t>(i)] = s * (2.0 * rng.uniform() - 1.0);
    off += static_cast<std::size_t>(w) * prev;
    off += static_cast<std::size_t>(w);  // biases stay zero
    prev = w;
  }
  // heads: small random to break symmetry, biases zero
  for (; off < m.params.size(); ++off) m.params[off] = 0.01 * (2.0 * rng.uniform() - 1.0);
  const std::size_t f1 = static_cast<std::size_t>(m.d1()) + static_cast<std::size_t>(m.d1()) * m.d1();
  m.params[m.mlp_param_count() + f1] = 0.0;  // head1 bias
  m.params[m.params.size() - 1] = 0.0;       // head2 bias
  return m;
}

namespace {

// offsets into the flat parameter vector
struct Layout {
  struct Layer {
    std::size_t w, b;
    int rows, cols;
  };
  std::vector<Layer> layers;
  std::size_t h1w, h1b, h2w, h2b;
  std::size_t f1, f2;  // head feature sizes
};

Layout make_layout(const ExtensionModel& m) {
  Layout lay;
  std::size_t off = 0;
  int prev = m.in_dim;
  std::vector<int> outs = m.widths;
  outs.push_back(m.out_channels);
  for (int w : outs) {
    Layout::Layer l;
    l.w = off;
    off += static_cast<std::size_t>(w) * prev;
    l.b = off;
    off += static_cast<std::size_t>(w);
    l.rows = w;
    l.cols = prev;
    lay.layers.push_back(l);
    prev = w;
  }
  lay.f1 = static_cast<std::size_t>(m.d1()) + static_cast<std::size_t>(m.d1()) * m.d1();
  lay.f2 = static_cast<std::size_t>(m.d2()) + static_cast<std::size_t>(m.d2()) * m.d2();
  lay.h1w = off;
  lay.h1b = off + lay.f1;
  lay.h2w = lay.h1b + 1;
  lay.h2b = lay.h2w + lay.f2;
  return lay;
}

}  // namespace

SampledPath extension_channels(const ExtensionModel& model, const SampledPath& input) {
  input.validate();
  if (input.dim() != model.in_dim) throw std::invalid_argument("input dimension mismatch");
  const Layout lay = make_layout(model);
  const std::size_t n = input.points();
  const int m = model.out_channels;
  std::vector<double> out(n * static_cast<std::size_t>(m));
  std::vector<double> cur, next;
  for (std::size_t i = 0; i < n; ++i) {
    cur.assign(input.values.begin() + static_cast<std::ptrdiff_t>(i * input.channel_labels.size()),
               input.values.begin() + static_cast<std::ptrdiff_t>((i + 1) * input.channel_labels.size()));
    for (std::size_t l = 0; l < lay.layers.size(); ++l) {
      const auto& L = lay.layers[l];
      next.assign(static_cast<std::size_t>(L.rows), 0.0);
      for (int r = 0; r < L.rows; ++r) {
        double v = model.params[L.b + static_cast<std::size_t>(r)];
        const double* wrow = model.params.data() + L.w + static_cast<std::size_t>(r) * L.cols;
        for (int c = 0; c < L.cols; ++c) v += wrow[c] * cur[static_cast<std::size_t>(c)];
        next[static_cast<std::size_t>(r)] = (l + 1 < lay.layers.size()) ? std::tanh(v) : v;
      }
      cur.swap(next);
    }
    for (int c = 0; c < m; ++c) out[i * static_cast<std::size_t>(m) + static_cast<std::size_t>(c)] = cur[static_cast<std::size_t>(c)];
  }
  std::vector<int> labels;
  for (int c = 1; c <= m; ++c) labels.push_back(c);
  return SampledPath(input.times, std::move(out), std::move(labels));
}

LossBreakdown extension_loss(const ExtensionModel& model, const SampledPath& input,
                             const std::vector<double>& target, double lambda_p, double lambda_s,
                             std::vector<double>* grad) {
  input.validate();
  if (input.dim() != model.in_dim) throw std::invalid_argument("input dimension mismatch");
  if (target.size() != input.points()) throw std::invalid_argument("target length mismatch");
  if (model.params.size() != model.param_count())
    throw std::invalid_argument("parameter vector size mismatch");

  const Layout lay = make_layout(model);
  const std::size_t P = input.points();
  const int din = model.in_dim;
  const int m = model.out_channels;
  const int D1 = model.d1();
  const int D2 = model.d2();
  const double invP = 1.0 / static_cast<double>(P);
  const std::size_t nl = lay.layers.size();
  const double* pp = model.params.data();

  // ---- forward ----
  // per-layer activations for every grid point (layer 0 = inputs)
  std::vector<std::vector<double>> acts(nl + 1);
  acts[0].resize(P * static_cast<std::size_t>(din));
  for (std::size_t i = 0; i < P; ++i)
    for (int c = 0; c < din; ++c)
      acts[0][i * static_cast<std::size_t>(din) + static_cast<std::size_t>(c)] = input.value(i, c);
  for (std::size_t l = 0; l < nl; ++l) {
    const auto& L = lay.layers[l];
    acts[l + 1].assign(P * static_cast<std::size_t>(L.rows), 0.0);
    const bool hidden = l + 1 < nl;
    for (std::size_t i = 0; i < P; ++i) {
      const double* x = acts[l].data() + i * static_cast<std::size_t>(L.cols);
      double* y = acts[l + 1].data() + i * static_cast<std::size_t>(L.rows);
      for (int r = 0; r < L.rows; ++r) {
        double v = pp[L.b + static_cast<std::size_t>(r)];
        const double* wrow = pp + L.w + static_cast<std::size_t>(r) * L.cols;
        for (int c = 0; c < L.cols; ++c) v += wrow[c] * x[c];
        y[r] = hidden ? std::tanh(v) : v;
      }
    }
  }
  const std::vector<double>& U = acts[nl];  // P x m

  // depth-2 left-point prefix signature of Z = (x, U)
  std::vector<double> S1(P * static_cast<std::size_t>(D1), 0.0);
  std::vector<double> S2(P * static_cast<std::size_t>(D1) * D1, 0.0);
  std::vector<double> z_prev(static_cast<std::size_t>(D1)), z_cur(static_cast<std::size_t>(D1));
  auto load_z = [&](std::size_t i, std::vector<double>& z) {
    for (int c = 0; c < din; ++c) z[static_cast<std::size_t>(c)] = input.value(i, c);
    for (int c = 0; c < m; ++c)
      z[static_cast<std::size_t>(din + c)] = U[i * static_cast<std::size_t>(m) + static_cast<std::size_t>(c)];
  };
  for (std::size_t i = 1; i < P; ++i) {
    load_z(i - 1, z_prev);
    load_z(i, z_cur);
    const double* s1p = S1.data() + (i - 1) * static_cast<std::size_t>(D1);
    const double* s2p = S2.data() + (i - 1) * static_cast<std::size_t>(D1) * D1;
    double* s1 = S1.data() + i * static_cast<std::size_t>(D1);
    double* s2 = S2.data() + i * static_cast<std::size_t>(D1) * D1;
    for (int a = 0; a < D1; ++a) {
      const double dz = z_cur[static_cast<std::size_t>(a)] - z_prev[static_cast<std::size_t>(a)];
      s1[a] = s1p[a] + dz;
    }
    for (int a = 0; a < D1; ++a) {
      const double sa = s1p[a];
      for (int b = 0; b < D1; ++b) {
        const double dz = z_cur[static_cast<std::size_t>(b)] - z_prev[static_cast<std::size_t>(b)];
        s2[a * D1 + b] = s2p[a * D1 + b] + sa * dz;
      }
    }
  }

  // head 1 -> Xhat
  std::vector<double> xhat(P);
  const double* h1w = pp + lay.h1w;
  const double h1b = pp[lay.h1b];
  for (std::size_t i = 0; i < P; ++i) {
    double v = h1b;
    const double* s1 = S1.data() + i * static_cast<std::size_t>(D1);
    const double* s2 = S2.data() + i * static_cast<std::size_t>(D1) * D1;
    for (int a = 0; a < D1; ++a) v += h1w[a] * s1[a];
    for (int a = 0; a < D1 * D1; ++a) v += h1w[D1 + a] * s2[a];
    xhat[i] = v;
  }

  // depth-2 prefix signature of Pz = (x, Xhat)
  std::vector<double> T1(P * static_cast<std::size_t>(D2), 0.0);
  std::vector<double> T2(P * static_cast<std::size_t>(D2) * D2, 0.0);
  std::vector<double> p_prev(static_cast<std::size_t>(D2)), p_cur(static_cast<std::size_t>(D2));
  auto load_p = [&](std::size_t i, std::vector<double>& z) {
    for (int c = 0; c < din; ++c) z[static_cast<std::size_t>(c)] = input.value(i, c);
    z[static_cast<std::size_t>(din)] = xhat[i];
  };
  for (std::size_t i = 1; i < P; ++i) {
    load_p(i - 1, p_prev);
    load_p(i, p_cur);
    const double* t1p = T1.data() + (i - 1) * static_cast<std::size_t>(D2);
    const double* t2p = T2.data() + (i - 1) * static_cast<std::size_t>(D2) * D2;
    double* t1 = T1.data() + i * static_cast<std::size_t>(D2);
    double* t2 = T2.data() + i * static_cast<std::size_t>(D2) * D2;
    for (int a = 0; a < D2; ++a)
      t1[a] = t1p[a] + (p_cur[static_cast<std::size_t>(a)] - p_prev[static_cast<std::size_t>(a)]);
    for (int a = 0; a < D2; ++a) {
      const double sa = t1p[a];
      for (int b = 0; b < D2; ++b)
        t2[a * D2 + b] = t2p[a * D2 + b] +
                         sa * (p_cur[static_cast<std::size_t>(b)] - p_prev[static_cast<std::size_t>(b)]);
    }
  }

  // head 2 -> Vhat, physics loss
  std::vector<double> vhat(P);
  const double* h2w = pp + lay.h2w;
  const double h2b = pp[lay.h2b];
  double physics = 0.0;
  for (std::size_t i = 0; i < P; ++i) {
    double v = h2b;
    const double* t1 = T1.data() + i * static_cast<std::size_t>(D2);
    const double* t2 = T2.data() + i * static_cast<std::size_t>(D2) * D2;
    for (int a = 0; a < D2; ++a) v += h2w[a] * t1[a];
    for (int a = 0; a < D2 * D2; ++a) v += h2w[D2 + a] * t2[a];
    vhat[i] = v;
    const double e = v - target[i];
    physics += e * e;
  }
  physics *= invP;

  // shuffle defect over the learned channels, left-point from the first sample
  std::vector<double> I(P * static_cast<std::size_t>(m) * m, 0.0);
  for (std::size_t i = 1; i < P; ++i) {
    const double* ip = I.data() + (i - 1) * static_cast<std::size_t>(m) * m;
    double* ic = I.data() + i * static_cast<std::size_t>(m) * m;
    for (int j = 0; j < m; ++j) {
      const double aj = U[(i - 1) * static_cast<std::size_t>(m) + static_cast<std::size_t>(j)] -
                        U[static_cast<std::size_t>(j)];
      for (int k = 0; k < m; ++k) {
        const double du = U[i * static_cast<std::size_t>(m) + static_cast<std::size_t>(k)] -
                          U[(i - 1) * static_cast<std::size_t>(m) + static_cast<std::size_t>(k)];
        ic[j * m + k] = ip[j * m + k] + aj * du;
      }
    }
  }
  double shuffle = 0.0;
  for (std::size_t i = 1; i < P; ++i) {
    const double* ic = I.data() + i * static_cast<std::size_t>(m) * m;
    for (int j = 0; j < m; ++j) {
      const double aj = U[i * static_cast<std::size_t>(m) + static_cast<std::size_t>(j)] -
                        U[static_cast<std::size_t>(j)];
      for (int k = 0; k < m; ++k) {
        const double ak = U[i * static_cast<std::size_t>(m) + static_cast<std::size_t>(k)] -
                          U[static_cast<std::size_t>(k)];
        const double r = aj * ak - ic[j * m + k] - ic[k * m + j];
        shuffle += r * r;
      }
    }
  }
  shuffle *= invP;

  LossBreakdown out;
  out.physics = physics;
  out.shuffle = shuffle;
  out.total = lambda_p * physics + lambda_s * shuffle;
  if (!grad) return out;

  // ---- backward ----
  grad->assign(model.params.size(), 0.0);
  double* gp = grad->data();

  std::vector<double> bar_vhat(P);
  for (std::size_t i = 0; i < P; ++i)
    bar_vhat[i] = lambda_p * 2.0 * (vhat[i] - target[i]) * invP;

  // head 2 and the T recursion
  std::vector<double> bar_xhat(P, 0.0);
  {
    double* gw = gp + lay.h2w;
    for (std::size_t i = 0; i < P; ++i) {
      const double bv = bar_vhat[i];
      gp[lay.h2b] += bv;
      const double* t1 = T1.data() + i * static_cast<std::size_t>(D2);
      const double* t2 = T2.data() + i * static_cast<std::size_t>(D2) * D2;
      for (int a = 0; a < D2; ++a) gw[a] += bv * t1[a];
      for (int a = 0; a < D2 * D2; ++a) gw[D2 + a] += bv * t2[a];
    }
    std::vector<double> bar_t1(static_cast<std::size_t>(D2), 0.0);
    std::vector<double> bar_t2(static_cast<std::size_t>(D2) * D2, 0.0);
    std::vector<double> bar_dp(static_cast<std::size_t>(D2));
    for (std::size_t i = P; i-- > 1;) {
      const double bv = bar_vhat[i];
      for (int a = 0; a < D2; ++a) bar_t1[static_cast<std::size_t>(a)] += bv * h2w[a];
      for (int a = 0; a < D2 * D2; ++a) bar_t2[static_cast<std::size_t>(a)] += bv * h2w[D2 + a];
      const double* t1p = T1.data() + (i - 1) * static_cast<std::size_t>(D2);
      load_p(i, p_cur);
      load_p(i - 1, p_prev);
      for (int b = 0; b < D2; ++b) {
        double s = bar_t1[static_cast<std::size_t>(b)];
        for (int a = 0; a < D2; ++a) s += bar_t2[static_cast<std::size_t>(a * D2 + b)] * t1p[a];
        bar_dp[static_cast<std::size_t>(b)] = s;
      }
      // path adjoint: only the Xhat coordinate feeds parameters
      bar_xhat[i] += bar_dp[static_cast<std::size_t>(din)];
      bar_xhat[i - 1] -= bar_dp[static_cast<std::size_t>(din)];
      for (int a = 0; a < D2; ++a) {
        double s = 0.0;
        for (int b = 0; b < D2; ++b) s += bar_t2[static_cast<std::size_t>(a * D2 + b)] *
                                          (p_cur[static_cast<std::size_t>(b)] - p_prev[static_cast<std::size_t>(b)]);
        bar_t1[static_cast<std::size_t>(a)] += s;
      }
    }
  }

  // head 1 and the S recursion
  std::vector<double> bar_u(P * static_cast<std::size_t>(m), 0.0);
  {
    double* gw = gp + lay.h1w;
    for (std::size_t i = 0; i < P; ++i) {
      const double bx = bar_xhat[i];
      if (bx == 0.0) continue;
      gp[lay.h1b] += bx;
      const double* s1 = S1.data() + i * static_cast<std::size_t>(D1);
      const double* s2 = S2.data() + i * static_cast<std::size_t>(D1) * D1;
      for (int a = 0; a < D1; ++a) gw[a] += bx * s1[a];
      for (int a = 0; a < D1 * D1; ++a) gw[D1 + a] += bx * s2[a];
    }
    std::vector<double> bar_s1(static_cast<std::size_t>(D1), 0.0);
    std::vector<double> bar_s2(static_cast<std::size_t>(D1) * D1, 0.0);
    std::vector<double> bar_dz(static_cast<std::size_t>(D1));
    for (std::size_t i = P; i-- > 1;) {
      const double bx = bar_xhat[i];
      for (int a = 0; a < D1; ++a) bar_s1[static_cast<std::size_t>(a)] += bx * h1w[a];
      for (int a = 0; a < D1 * D1; ++a) bar_s2[static_cast<std::size_t>(a)] += bx * h1w[D1 + a];
      const double* s1p = S1.data() + (i - 1) * static_cast<std::size_t>(D1);
      load_z(i, z_cur);
      load_z(i - 1, z_prev);
      for (int b = 0; b < D1; ++b) {
        double s = bar_s1[static_cast<std::size_t>(b)];
        for (int a = 0; a < D1; ++a) s += bar_s2[static_cast<std::size_t>(a * D1 + b)] * s1p[a];
        bar_dz[static_cast<std::size_t>(b)] = s;
      }
      for (int c = 0; c < m; ++c) {
        bar_u[i * static_cast<std::size_t>(m) + static_cast<std::size_t>(c)] +=
            bar_dz[static_cast<std::size_t>(din + c)];
        bar_u[(i - 1) * static_cast<std::size_t>(m) + static_cast<std::size_t>(c)] -=
            bar_dz[static_cast<std::size_t>(din + c)];
      }
      for (int a = 0; a < D1; ++a) {
        double s = 0.0;
        for (int b = 0; b < D1; ++b) s += bar_s2[static_cast<std::size_t>(a * D1 + b)] *
                                          (z_cur[static_cast<std::size_t>(b)] - z_prev[static_cast<std::size_t>(b)]);
        bar_s1[static_cast<std::size_t>(a)] += s;
      }
    }
  }

  // shuffle loss adjoints into U
  {
    const double c4 = lambda_s * 4.0 * invP;
    // direct A-terms
    for (std::size_t i = 1; i < P; ++i) {
      const double* ic = I.data() + i * static_cast<std::size_t>(m) * m;
      for (int j = 0; j < m; ++j) {
        const double aj = U[i * static_cast<std::size_t>(m) + static_cast<std::size_t>(j)] -
                          U[static_cast<std::size_t>(j)];
        double s = 0.0;
        for (int k = 0; k < m; ++k) {
          const double ak = U[i * static_cast<std::size_t>(m) + static_cast<std::size_t>(k)] -
                            U[static_cast<std::size_t>(k)];
          const double r = aj * ak - ic[j * m + k] - ic[k * m + j];
          s += r * ak;
        }
        bar_u[i * static_cast<std::size_t>(m) + static_cast<std::size_t>(j)] += c4 * s;
        bar_u[static_cast<std::size_t>(j)] -= c4 * s;
      }
    }
    // integral recursion, reverse
    std::vector<double> bar_i(static_cast<std::size_t>(m) * m, 0.0);
    for (std::size_t i = P; i-- > 1;) {
      const double* ic = I.data() + i * static_cast<std::size_t>(m) * m;
      for (int j = 0; j < m; ++j) {
        const double aj = U[i * static_cast<std::size_t>(m) + static_cast<std::size_t>(j)] -
                          U[static_cast<std::size_t>(j)];
        for (int k = 0; k < m; ++k) {
          const double ak = U[i * static_cast<std::size_t>(m) + static_cast<std::size_t>(k)] -
                            U[static_cast<std::size_t>(k)];
          const double r = aj * ak - ic[j * m + k] - ic[k * m + j];
          bar_i[static_cast<std::size_t>(j * m + k)] -= c4 * r;  // -(R_jk + R_kj) collapses by symmetry
        }
      }
      for (int j = 0; j < m; ++j) {
        const double ajp = U[(i - 1) * static_cast<std::size_t>(m) + static_cast<std::size_t>(j)] -
                           U[static_cast<std::size_t>(j)];
        for (int k = 0; k < m; ++k) {
          const double bi = bar_i[static_cast<std::size_t>(j * m + k)];
          if (bi == 0.0) continue;
          const double du = U[i * static_cast<std::size_t>(m) + static_cast<std::size_t>(k)] -
                            U[(i - 1) * static_cast<std::size_t>(m) + static_cast<std::size_t>(k)];
          bar_u[(i - 1) * static_cast<std::size_t>(m) + static_cast<std::size_t>(j)] += bi * du;
          bar_u[i * static_cast<std::size_t>(m) + static_cast<std::size_t>(k)] += bi * ajp;
          bar_u[(i - 1) * static_cast<std::size_t>(m) + static_cast<std::size_t>(k)] -= bi * ajp;
          bar_u[static_cast<std::size_t>(j)] -= bi * du;
        }
      }
    }
  }

  // MLP backward per grid point
  {
    std::vector<double> delta, delta_prev;
    for (std::size_t i = 0; i < P; ++i) {
      delta.assign(bar_u.begin() + static_cast<std::ptrdiff_t>(i * static_cast<std::size_t>(m)),
                   bar_u.begin() + static_cast<std::ptrdiff_t>((i + 1) * static_cast<std::size_t>(m)));
      for (std::size_t l = nl; l-- > 0;) {
        const auto& L = lay.layers[l];
        const double* x = acts[l].data() + i * static_cast<std::size_t>(L.cols);
        double* gw = gp + L.w;
        double* gb = gp + L.b;
        delta_prev.assign(static_cast<std::size_t>(L.cols), 0.0);
        for (int r = 0; r < L.rows; ++r) {
          const double d = delta[static_cast<std::size_t>(r)];
          if (d == 0.0) continue;
          gb[r] += d;
          double* wrow = gw + static_cast<std::size_t>(r) * L.cols;
          const double* prow = pp + L.w + static_cast<std::size_t>(r) * L.cols;
          for (int c = 0; c < L.cols; ++c) {
            wrow[c] += d * x[c];
            delta_prev[static_cast<std::size_t>(c)] += d * prow[c];
          }
        }
        if (l > 0) {
          const double* y = acts[l].data() + i * static_cast<std::size_t>(L.cols);
          for (int c = 0; c < L.cols; ++c)
            delta_prev[static_cast<std::size_t>(c)] *= (1.0 - y[c] * y[c]);
        }
        delta.swap(delta_prev);
      }
    }
  }

  return out;
}

TrainResult train_extension(const SampledPath& drivers, const SampledPath& target,
                            const TrainConfig& cfg) {
  drivers.validate();
  target.validate();
  if (target.dim() != 1) throw std::invalid_argument("target must have one channel");
  if (target.times != drivers.times) throw std::invalid_argument("target grid mismatch");
  if (cfg.epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (!(cfg.lr > 0.0)) throw std::invalid_argument("learning rate must be > 0");
  if (cfg.lambda_p < 0.0 || cfg.lambda_s < 0.0 || (cfg.lambda_p == 0.0 && cfg.lambda_s == 0.0))
    throw std::invalid_argument("loss weights must be >= 0 and not both zero");

  const SampledPath input = time_extend(drivers);
  TrainResult res;
  res.model = init_extension_model(input.dim(), cfg.widths, cfg.channels, cfg.seed);

  const std::size_t np = res.model.params.size();
  std::vector<double> grad(np), m1(np, 0.0), m2(np, 0.0);
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double b1t = 1.0, b2t = 1.0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const LossBreakdown lb =
        extension_loss(res.model, input, target.values, cfg.lambda_p, cfg.lambda_s, &grad);
    if (!std::isfinite(lb.total))
      throw NumericError("training loss diverged at epoch " + std::to_string(epoch));
    res.physics_history.push_back(lb.physics);
    res.shuffle_history.push_back(lb.shuffle);

    const double lr =
        cfg.lr * std::pow(cfg.lr_decay, static_cast<double>(epoch / std::max(1, cfg.decay_every)));
    b1t *= b1;
    b2t *= b2;
    for (std::size_t i = 0; i < np; ++i) {
      m1[i] = b1 * m1[i] + (1.0 - b1) * grad[i];
      m2[i] = b2 * m2[i] + (1.0 - b2) * grad[i] * grad[i];
      const double mhat = m1[i] / (1.0 - b1t);
      const double vhat = m2[i] / (1.0 - b2t);
      res.model.params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }

  res.learned = extension_channels(res.model, input);
  return res;
}

std::vector<double> prefix_sig2_features(const SampledPath& p) {
  p.validate();
  const std::size_t n = p.points();
  const std::size_t d = static_cast<std::size_t>(p.dim());
  const std::size_t f = d + d * d;
  std::vector<double> out(n * f, 0.0);
  std::vector<double> s1(d, 0.0), s2(d * d, 0.0);
  for (std::size_t i = 1; i < n; ++i) {
    // left-point: second level uses the prefix before this step
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t b = 0; b < d; ++b) {
        const double db = p.values[i * d + b] - p.values[(i - 1) * d + b];
        s2[a * d + b] += s1[a] * db;
      }
    }
    for (std::size_t a = 0; a < d; ++a) s1[a] += p.values[i * d + a] - p.values[(i - 1) * d + a];
    double* row = out.data() + i * f;
    for (std::size_t a = 0; a < d; ++a) row[a] = s1[a];
    for (std::size_t a = 0; a < d * d; ++a) row[d + a] = s2[a];
  }
  return out;
}

CalibrationReport calibrate(const CalibrationConfig& cfg) {
  const RoughVolResult sim = simulate_roughvol(cfg.sim);
  if (sim.drivers.points() < 2)
    throw std::invalid_argument("calibration needs a non-degenerate horizon");

  const TrainResult tr = train_extension(sim.drivers, sim.vol, cfg.train);

  CalibrationReport rep;
  rep.model = tr.model;
  rep.physics_history = tr.physics_history;
  rep.shuffle_history = tr.shuffle_history;
  rep.clamp_count = sim.clamp_count;
  rep.times = sim.drivers.times;
  rep.vol_true = sim.vol.values;
  rep.stock_true = sim.stock.values;

  // shuffle defect matrix of the trained channels
  rep.shuffle_dim = tr.learned.dim();
  rep.shuffle_matrix = shuffle_residual(tr.learned);
  double acc = 0.0;
  for (double v : rep.shuffle_matrix) acc += v;
  rep.shuffle_mse = acc / static_cast<double>(rep.shuffle_matrix.size());

  // features: depth-2 prefix signatures of X and of (X, U)
  const SampledPath x3 = time_extend(sim.drivers);
  const std::size_t P = x3.points();
  const std::size_t dw = static_cast<std::size_t>(x3.dim()) + static_cast<std::size_t>(tr.learned.dim());
  std::vector<double> joint(P * dw);
  for (std::size_t i = 0; i < P; ++i) {
    for (int c = 0; c < x3.dim(); ++c) joint[i * dw + static_cast<std::size_t>(c)] = x3.value(i, c);
    for (int c = 0; c < tr.learned.dim(); ++c)
      joint[i * dw + static_cast<std::size_t>(x3.dim() + c)] = tr.learned.value(i, c);
  }
  std::vector<int> jlabels(dw);
  for (std::size_t c = 0; c < dw; ++c) jlabels[c] = static_cast<int>(c);
  const SampledPath xu(x3.times, std::move(joint), std::move(jlabels));

  const std::vector<double> f_without = prefix_sig2_features(x3);
  const std::vector<double> f_with = prefix_sig2_features(xu);
  const std::size_t c_without = static_cast<std::size_t>(x3.dim()) + static_cast<std::size_t>(x3.dim()) * x3.dim();
  const std::size_t c_with = dw + dw * dw;

  auto run_fit = [&](const std::vector<double>& feats, std::size_t cols,
                     const std::vector<double>& y, std::vector<double>& pred) {
    LinearFit fit = fit_linear(feats, P, cols, y);
    pred.resize(P);
    for (std::size_t i = 0; i < P; ++i)
      pred[i] = linear_predict(fit, feats.data() + i * cols, cols);
    rep.ridge_used = rep.ridge_used || fit.ridge_used;
    return fit.mse;
  };

  rep.mse_vol_without = run_fit(f_without, c_without, sim.vol.values, rep.vol_without);
  rep.mse_vol_with = run_fit(f_with, c_with, sim.vol.values, rep.vol_with);
  rep.mse_stock_without = run_fit(f_without, c_without, sim.stock.values, rep.stock_without);
  rep.mse_stock_with = run_fit(f_with, c_with, sim.stock.values, rep.stock_with);
  return rep;
}

}  // namespace branchsig
