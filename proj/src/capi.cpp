#include "branchsig.h"

#include <cstring>
#include <exception>
#include <new>
#include <string>
#include <utility>
#include <vector>

#include "branchsig/extend.hpp"
#include "branchsig/hopf.hpp"
#include "branchsig/models.hpp"
#include "branchsig/sigcore.hpp"
#include "branchsig/trees.hpp"
#include "branchsig/util.hpp"

using namespace branchsig;

struct bs_path {
  SampledPath p;
};
struct bs_ext {
  ExtendedPath e;
  std::vector<std::string> tree_keys;
};
struct bs_table {
  std::vector<std::pair<std::string, double>> rows;
};
struct bs_calib {
  CalibrationReport rep;
};

namespace {

thread_local std::string g_last_error;

template <typename F>
bs_status wrap(F&& body) {
  try {
    body();
    return BS_OK;
  } catch (const ParseError& e) {
    g_last_error = e.what();
    return BS_EPARSE;
  } catch (const KeyError& e) {
    g_last_error = e.what();
    return BS_EKEY;
  } catch (const NumericError& e) {
    g_last_error = e.what();
    return BS_ENUMERIC;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return BS_EINVAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return BS_EINVAL;
  }
}

bs_status require(bool ok, const char* msg) {
  if (ok) return BS_OK;
  g_last_error = msg;
  return BS_EINVAL;
}

std::vector<double> rho_vector(const double* rho, int dim) {
  if (!rho) return {};
  return std::vector<double>(rho, rho + static_cast<std::size_t>(dim) * dim);
}

char* dup_string(const std::string& s) {
  char* out = new char[s.size() + 1];
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

bs_ext* make_ext(ExtendedPath&& e) {
  bs_ext* h = new bs_ext{std::move(e), {}};
  h->tree_keys.reserve(h->e.channel_trees.size());
  for (const Tree& t : h->e.channel_trees) h->tree_keys.push_back(to_string(t));
  return h;
}

}  // namespace

extern "C" {

const char* bs_last_error(void) { return g_last_error.c_str(); }
const char* bs_version(void) { return "0.1.0"; }

void bs_path_free(bs_path* p) { delete p; }
void bs_ext_free(bs_ext* e) { delete e; }
void bs_table_free(bs_table* t) { delete t; }
void bs_calib_free(bs_calib* c) { delete c; }
void bs_string_free(char* s) { delete[] s; }

bs_status bs_path_create(const double* times, const double* values, const int* labels,
                         size_t points, int dim, bs_path** out) {
  if (bs_status st = require(times && values && labels && out && points > 0 && dim > 0,
                             "bs_path_create: bad arguments"))
    return st;
  return wrap([&] {
    SampledPath p(std::vector<double>(times, times + points),
                  std::vector<double>(values, values + points * static_cast<std::size_t>(dim)),
                  std::vector<int>(labels, labels + dim));
    p.validate();
    *out = new bs_path{std::move(p)};
  });
}

size_t bs_path_points(const bs_path* p) { return p ? p->p.points() : 0; }
int bs_path_dim(const bs_path* p) { return p ? p->p.dim() : 0; }
int bs_path_label(const bs_path* p, int channel) {
  if (!p || channel < 0 || channel >= p->p.dim()) return -1;
  return p->p.channel_labels[static_cast<std::size_t>(channel)];
}
const double* bs_path_times_ptr(const bs_path* p) { return p ? p->p.times.data() : nullptr; }
const double* bs_path_values_ptr(const bs_path* p) { return p ? p->p.values.data() : nullptr; }

bs_status bs_sample_bm(int dim, long steps, double horizon, uint64_t seed, bs_path** out) {
  if (bs_status st = require(out != nullptr, "bs_sample_bm: out is NULL")) return st;
  return wrap([&] { *out = new bs_path{sample_bm(dim, steps, horizon, seed)}; });
}

bs_status bs_sample_fbm(double hurst, double horizon, long steps, int dim, const double* rho,
                        uint64_t seed, int force_fallback, bs_path** out, int* used_fallback) {
  if (bs_status st = require(out != nullptr, "bs_sample_fbm: out is NULL")) return st;
  return wrap([&] {
    FbmSpec spec;
    spec.hurst = hurst;
    spec.horizon = horizon;
    spec.steps = steps;
    spec.dim = dim;
    spec.rho = rho_vector(rho, dim);
    FbmResult res = sample_fbm(spec, seed, force_fallback != 0);
    if (used_fallback) *used_fallback = res.used_fallback ? 1 : 0;
    *out = new bs_path{std::move(res.path)};
  });
}

void bs_roughvol_params_init(bs_roughvol_params* p) {
  if (!p) return;
  RoughVolParams d;
  p->a = d.a;
  p->b = d.b;
  p->lambda1 = d.lambda1;
  p->lambda2 = d.lambda2;
  p->s0 = d.s0;
  p->v0 = d.v0;
  p->hurst = d.hurst;
  p->horizon = d.horizon;
  p->steps = d.steps;
  p->seed = d.seed;
}

bs_status bs_simulate_roughvol(const bs_roughvol_params* params, bs_path** stock, bs_path** vol,
                               bs_path** drivers, long* clamp_count) {
  if (bs_status st = require(params != nullptr, "bs_simulate_roughvol: params is NULL")) return st;
  return wrap([&] {
    RoughVolParams rp;
    rp.a = params->a;
    rp.b = params->b;
    rp.lambda1 = params->lambda1;
    rp.lambda2 = params->lambda2;
    rp.s0 = params->s0;
    rp.v0 = params->v0;
    rp.hurst = params->hurst;
    rp.horizon = params->horizon;
    rp.steps = params->steps;
    rp.seed = params->seed;
    RoughVolResult res = simulate_roughvol(rp);
    if (clamp_count) *clamp_count = res.clamp_count;
    if (stock) *stock = new bs_path{std::move(res.stock)};
    if (vol) *vol = new bs_path{std::move(res.vol)};
    if (drivers) *drivers = new bs_path{std::move(res.drivers)};
  });
}

bs_status bs_extend_bm(const bs_path* p, int mode, const double* rho, bs_ext** out) {
  if (bs_status st = require(p && out, "bs_extend_bm: bad arguments")) return st;
  if (bs_status st = require(mode == 0 || mode == 1, "bs_extend_bm: mode must be 0 or 1"))
    return st;
  return wrap([&] {
    *out = make_ext(extend_bm(p->p, mode == 0 ? BmCorrection::bracket : BmCorrection::realized,
                              rho_vector(rho, p->p.dim())));
  });
}

bs_status bs_extend_fbm(const bs_path* p, double hurst, const double* rho, bs_ext** out) {
  if (bs_status st = require(p && out, "bs_extend_fbm: bad arguments")) return st;
  return wrap([&] {
    FbmSpec spec;
    spec.hurst = hurst;
    spec.dim = p->p.dim();
    spec.rho = rho_vector(rho, p->p.dim());
    *out = make_ext(extend_fbm(p->p, spec));
  });
}

bs_status bs_ext_create(const bs_path* p, const char* const* tree_names, int n_channels,
                        bs_ext** out) {
  if (bs_status st = require(p && tree_names && out && n_channels > 0 &&
                                 n_channels == p->p.dim(),
                             "bs_ext_create: bad arguments"))
    return st;
  return wrap([&] {
    ExtendedPath ext;
    ext.level = 1;
    for (int c = 0; c < n_channels; ++c) {
      const Tree t = parse_tree(tree_names[c]);
      for (const Tree& seen : ext.channel_trees)
        if (seen == t) throw std::invalid_argument("duplicate extension channel '" +
                                                   std::string(tree_names[c]) + "'");
      if (t.size() > ext.level) ext.level = t.size();
      ext.channel_trees.push_back(t);
    }
    std::vector<int> labels(static_cast<std::size_t>(n_channels));
    for (int c = 0; c < n_channels; ++c) labels[static_cast<std::size_t>(c)] = c;
    ext.base = SampledPath(p->p.times, p->p.values, std::move(labels));
    *out = make_ext(std::move(ext));
  });
}

int bs_ext_level(const bs_ext* e) { return e ? e->e.level : 0; }
int bs_ext_channels(const bs_ext* e) {
  return e ? static_cast<int>(e->e.channel_trees.size()) : 0;
}
const char* bs_ext_channel_tree(const bs_ext* e, int channel) {
  if (!e || channel < 0 || channel >= static_cast<int>(e->tree_keys.size())) return nullptr;
  return e->tree_keys[static_cast<std::size_t>(channel)].c_str();
}
bs_status bs_ext_path(const bs_ext* e, bs_path** out) {
  if (bs_status st = require(e && out, "bs_ext_path: bad arguments")) return st;
  return wrap([&] { *out = new bs_path{e->e.base}; });
}

size_t bs_table_size(const bs_table* t) { return t ? t->rows.size() : 0; }
const char* bs_table_key(const bs_table* t, size_t i) {
  if (!t || i >= t->rows.size()) return nullptr;
  return t->rows[i].first.c_str();
}
double bs_table_value(const bs_table* t, size_t i) {
  if (!t || i >= t->rows.size()) return 0.0;
  return t->rows[i].second;
}

bs_status bs_sig_entries(const bs_path* p, int level, int method, bs_table** out) {
  if (bs_status st = require(p && out, "bs_sig_entries: bad arguments")) return st;
  if (bs_status st = require(method == 0 || method == 1, "bs_sig_entries: method must be 0 or 1"))
    return st;
  return wrap([&] {
    TruncatedSignature sig = method == 0 ? sig_chen(p->p, level) : sig_ito(p->p, level);
    *out = new bs_table{sig.entries()};
  });
}

bs_status bs_bsig_entries(const bs_path* p, int level, int include_forests, bs_table** out) {
  if (bs_status st = require(p && out, "bs_bsig_entries: bad arguments")) return st;
  return wrap([&] {
    BranchedSignature b = bsig(p->p, level);
    *out = new bs_table{b.entries(include_forests != 0)};
  });
}

bs_status bs_hk_residual(const bs_path* p, const bs_ext* ext, int level, bs_table** out) {
  if (bs_status st = require(p && ext && out, "bs_hk_residual: bad arguments")) return st;
  return wrap([&] {
    std::vector<std::pair<Tree, double>> res = hk_residual(p->p, ext->e, level);
    auto* t = new bs_table{};
    t->rows.reserve(res.size());
    for (const auto& [tree, v] : res) t->rows.emplace_back(to_string(tree), v);
    *out = t;
  });
}

bs_status bs_shuffle_residual(const bs_path* p, bs_table** out) {
  if (bs_status st = require(p && out, "bs_shuffle_residual: bad arguments")) return st;
  return wrap([&] {
    std::vector<double> mat = shuffle_residual(p->p);
    const int d = p->p.dim();
    auto* t = new bs_table{};
    t->rows.reserve(mat.size());
    for (int j = 0; j < d; ++j)
      for (int k = 0; k < d; ++k)
        t->rows.emplace_back(std::to_string(p->p.channel_labels[static_cast<std::size_t>(j)]) +
                                 "|" +
                                 std::to_string(p->p.channel_labels[static_cast<std::size_t>(k)]),
                             mat[static_cast<std::size_t>(j) * d + k]);
    *out = t;
  });
}

bs_status bs_psi_text(const char* forest, char** out) {
  if (bs_status st = require(forest && out, "bs_psi_text: bad arguments")) return st;
  return wrap([&] { *out = dup_string(format_tensor_sum(psi(parse_forest(forest)))); });
}

bs_status bs_coproduct_text(const char* forest, int reduced, char** out) {
  if (bs_status st = require(forest && out, "bs_coproduct_text: bad arguments")) return st;
  return wrap([&] {
    const Forest f = parse_forest(forest);
    *out = dup_string(format_split_sum(reduced ? reduced_coproduct(f) : coproduct(f)));
  });
}

bs_status bs_antipode_text(const char* forest, char** out) {
  if (bs_status st = require(forest && out, "bs_antipode_text: bad arguments")) return st;
  return wrap([&] {
    const HopfSum s = antipode(parse_forest(forest));
    std::string text;
    for (const auto& [f, coeff] : s) {
      text += std::to_string(coeff);
      text += '\t';
      text += to_string(f);
      text += '\n';
    }
    *out = dup_string(text);
  });
}

void bs_train_params_init(bs_train_params* p) {
  if (!p) return;
  TrainConfig d;
  p->epochs = d.epochs;
  p->lr = d.lr;
  p->lr_decay = d.lr_decay;
  p->decay_every = d.decay_every;
  p->lambda_p = d.lambda_p;
  p->lambda_s = d.lambda_s;
  p->seed = d.seed;
  p->widths = nullptr;
  p->n_widths = 0;
  p->channels = d.channels;
}

bs_status bs_calibrate(const bs_roughvol_params* sim, const bs_train_params* train,
                       bs_calib** out) {
  if (bs_status st = require(sim && train && out, "bs_calibrate: bad arguments")) return st;
  if (bs_status st =
          require(!train->widths ? train->n_widths == 0 : train->n_widths > 0,
                  "bs_calibrate: widths/n_widths mismatch"))
    return st;
  return wrap([&] {
    CalibrationConfig cfg;
    cfg.sim.a = sim->a;
    cfg.sim.b = sim->b;
    cfg.sim.lambda1 = sim->lambda1;
    cfg.sim.lambda2 = sim->lambda2;
    cfg.sim.s0 = sim->s0;
    cfg.sim.v0 = sim->v0;
    cfg.sim.hurst = sim->hurst;
    cfg.sim.horizon = sim->horizon;
    cfg.sim.steps = sim->steps;
    cfg.sim.seed = sim->seed;
    cfg.train.epochs = train->epochs;
    cfg.train.lr = train->lr;
    cfg.train.lr_decay = train->lr_decay;
    cfg.train.decay_every = train->decay_every;
    cfg.train.lambda_p = train->lambda_p;
    cfg.train.lambda_s = train->lambda_s;
    cfg.train.seed = train->seed;
    if (train->widths)
      cfg.train.widths.assign(train->widths, train->widths + train->n_widths);
    cfg.train.channels = train->channels;
    *out = new bs_calib{calibrate(cfg)};
  });
}

bs_status bs_calib_stat(const bs_calib* c, const char* name, double* out) {
  if (bs_status st = require(c && name && out, "bs_calib_stat: bad arguments")) return st;
  const CalibrationReport& r = c->rep;
  const std::string n = name;
  double v = 0.0;
  if (n == "mse_vol_with")
    v = r.mse_vol_with;
  else if (n == "mse_vol_without")
    v = r.mse_vol_without;
  else if (n == "mse_stock_with")
    v = r.mse_stock_with;
  else if (n == "mse_stock_without")
    v = r.mse_stock_without;
  else if (n == "shuffle_mse")
    v = r.shuffle_mse;
  else if (n == "shuffle_dim")
    v = static_cast<double>(r.shuffle_dim);
  else if (n == "clamp_count")
    v = static_cast<double>(r.clamp_count);
  else if (n == "ridge_used")
    v = r.ridge_used ? 1.0 : 0.0;
  else {
    g_last_error = "unknown stat '" + n + "'";
    return BS_EKEY;
  }
  *out = v;
  return BS_OK;
}

bs_status bs_calib_series(const bs_calib* c, const char* name, const double** data, size_t* len) {
  if (bs_status st = require(c && name && data && len, "bs_calib_series: bad arguments"))
    return st;
  const CalibrationReport& r = c->rep;
  const std::string n = name;
  const std::vector<double>* v = nullptr;
  if (n == "times")
    v = &r.times;
  else if (n == "vol_true")
    v = &r.vol_true;
  else if (n == "vol_with")
    v = &r.vol_with;
  else if (n == "vol_without")
    v = &r.vol_without;
  else if (n == "stock_true")
    v = &r.stock_true;
  else if (n == "stock_with")
    v = &r.stock_with;
  else if (n == "stock_without")
    v = &r.stock_without;
  else if (n == "physics_history")
    v = &r.physics_history;
  else if (n == "shuffle_history")
    v = &r.shuffle_history;
  else if (n == "shuffle_matrix")
    v = &r.shuffle_matrix;
  else {
    g_last_error = "unknown series '" + n + "'";
    return BS_EKEY;
  }
  *data = v->data();
  *len = v->size();
  return BS_OK;
}

}  // extern "C"
