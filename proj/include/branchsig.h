#ifndef BRANCHSIG_H
#define BRANCHSIG_H

/* C interface to the branched-signature library. All functions returning
 * bs_status leave a thread-local message readable via bs_last_error() on
 * failure. Handles are freed with the matching *_free; passing NULL to a
 * *_free is a no-op. Pointers returned by accessors stay valid until the
 * owning handle is freed. */

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum bs_status {
  BS_OK = 0,
  BS_EINVAL = 1,   /* bad argument or inconsistent input */
  BS_EPARSE = 2,   /* malformed tree/forest/word text */
  BS_ENUMERIC = 3, /* numeric failure (divergence, non-finite state) */
  BS_EKEY = 4,     /* unknown channel, label, or stat name */
} bs_status;

const char* bs_last_error(void);
const char* bs_version(void);

typedef struct bs_path bs_path;   /* sampled multi-channel path */
typedef struct bs_ext bs_ext;     /* path with tree-indexed channels */
typedef struct bs_table bs_table; /* ordered (string key, double) pairs */
typedef struct bs_calib bs_calib; /* calibration report */

void bs_path_free(bs_path* p);
void bs_ext_free(bs_ext* e);
void bs_table_free(bs_table* t);
void bs_calib_free(bs_calib* c);
void bs_string_free(char* s);

/* ---- paths ---- */

/* times strictly increasing (length points); values row-major points x dim;
 * labels distinct and >= 0 (length dim). */
bs_status bs_path_create(const double* times, const double* values, const int* labels,
                         size_t points, int dim, bs_path** out);
size_t bs_path_points(const bs_path* p);
int bs_path_dim(const bs_path* p);
int bs_path_label(const bs_path* p, int channel);
const double* bs_path_times_ptr(const bs_path* p);
const double* bs_path_values_ptr(const bs_path* p); /* row-major points x dim */

/* ---- simulation ---- */

/* Brownian motion on a uniform grid, channels labeled 1..dim. */
bs_status bs_sample_bm(int dim, long steps, double horizon, uint64_t seed, bs_path** out);

/* Fractional Brownian motion via circulant embedding; rho is row-major
 * dim x dim or NULL for identity. used_fallback (optional) reports whether
 * the dense-factorization fallback was taken. force_fallback != 0 skips the
 * embedding. */
bs_status bs_sample_fbm(double hurst, double horizon, long steps, int dim, const double* rho,
                        uint64_t seed, int force_fallback, bs_path** out, int* used_fallback);

typedef struct bs_roughvol_params {
  double a;
  double b;
  double lambda1;
  double lambda2;
  double s0;
  double v0;
  double hurst;
  double horizon;
  long steps;
  uint64_t seed;
} bs_roughvol_params;

void bs_roughvol_params_init(bs_roughvol_params* p); /* defaults */

/* Rough-volatility Euler scheme. Outputs: 1-channel stock and vol paths and
 * the 2-channel driver path (B, B^H) labeled 1, 2. clamp_count (optional)
 * counts Euler steps where the vol was floored at zero. Any out pointer may
 * be NULL to skip that output. */
bs_status bs_simulate_roughvol(const bs_roughvol_params* params, bs_path** stock, bs_path** vol,
                               bs_path** drivers, long* clamp_count);

/* ---- extensions ---- */

/* Level-2 extension of a Brownian sample. mode 0: deterministic bracket
 * correction; mode 1: realized covariation on the grid. rho row-major
 * dim x dim or NULL. */
bs_status bs_extend_bm(const bs_path* p, int mode, const double* rho, bs_ext** out);

/* Level-3 extension of a fractional Brownian sample. */
bs_status bs_extend_fbm(const bs_path* p, double hurst, const double* rho, bs_ext** out);

/* Extension from explicit data: channel c of p carries the serialized tree
 * tree_names[c]. Trees must be distinct; the level is the largest node
 * count. */
bs_status bs_ext_create(const bs_path* p, const char* const* tree_names, int n_channels,
                        bs_ext** out);

int bs_ext_level(const bs_ext* e);
int bs_ext_channels(const bs_ext* e);
const char* bs_ext_channel_tree(const bs_ext* e, int channel); /* serialized tree */
/* The extension as a plain path (copy); channel order matches channel_tree. */
bs_status bs_ext_path(const bs_ext* e, bs_path** out);

/* ---- tables ---- */

size_t bs_table_size(const bs_table* t);
const char* bs_table_key(const bs_table* t, size_t i);
double bs_table_value(const bs_table* t, size_t i);

/* ---- signatures ---- */

/* Truncated signature entries keyed by serialized words ("" is the unit),
 * sorted by (length, serialization). method 0: piecewise-linear Chen;
 * method 1: left-point iterated sums. */
bs_status bs_sig_entries(const bs_path* p, int level, int method, bs_table** out);

/* Branched signature entries keyed by serialized forests, sorted by
 * (node count, serialization). include_forests != 0 adds composite forests
 * (products of tree entries) and the unit "". */
bs_status bs_bsig_entries(const bs_path* p, int level, int include_forests, bs_table** out);

/* Per-tree defect <bsig(p), h> - <sig(ext), psi(h)> for all trees
 * |h| <= level over p's channels, keyed by serialized tree. */
bs_status bs_hk_residual(const bs_path* p, const bs_ext* ext, int level, bs_table** out);

/* d x d matrix of mean squared integration-by-parts defects, keyed
 * "<label_j>|<label_k>" in row-major label order. */
bs_status bs_shuffle_residual(const bs_path* p, bs_table** out);

/* ---- Hopf-algebra text operations ---- */

/* Hairer-Kelly word expansion of a forest. Output lines "<coeff>\t<WORD>".
 * Caller frees *out with bs_string_free. */
bs_status bs_psi_text(const char* forest, char** out);

/* Coproduct (reduced != 0: both unit terms dropped) of a forest. Output
 * lines "<coeff>\t<FOREST>\t<FOREST>" with "" for the unit. */
bs_status bs_coproduct_text(const char* forest, int reduced, char** out);

/* Antipode of a forest. Output lines "<coeff>\t<FOREST>". */
bs_status bs_antipode_text(const char* forest, char** out);

/* ---- calibration ---- */

typedef struct bs_train_params {
  int epochs;
  double lr;
  double lr_decay;
  int decay_every;
  double lambda_p;
  double lambda_s;
  uint64_t seed;
  const int* widths; /* hidden layer sizes; NULL selects {64, 32, 16} */
  int n_widths;
  int channels;
} bs_train_params;

void bs_train_params_init(bs_train_params* p); /* defaults */

/* Simulates, trains the learned extension, and fits the with/without
 * regressions. */
bs_status bs_calibrate(const bs_roughvol_params* sim, const bs_train_params* train,
                       bs_calib** out);

/* Named scalars: mse_vol_with, mse_vol_without, mse_stock_with,
 * mse_stock_without, shuffle_mse, shuffle_dim, clamp_count, ridge_used.
 * Unknown names give BS_EKEY. */
bs_status bs_calib_stat(const bs_calib* c, const char* name, double* out);

/* Named series: times, vol_true, vol_with, vol_without, stock_true,
 * stock_with, stock_without, physics_history, shuffle_history,
 * shuffle_matrix (row-major shuffle_dim x shuffle_dim). */
bs_status bs_calib_series(const bs_calib* c, const char* name, const double** data, size_t* len);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* BRANCHSIG_H */
