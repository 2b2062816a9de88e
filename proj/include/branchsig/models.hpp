#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "branchsig/extend.hpp"
#include "branchsig/sigcore.hpp"

namespace branchsig {

// Linear model on truncated signature entries. Weight keys are words
// ("1|2", single letters plain) for the classical evaluator, forests
// ("2(1)", "1*2") for the branched one; the intercept is the empty-word
// coefficient.
struct SigModelCoeffs {
  int level = 2;
  double intercept = 0.0;
  std::vector<std::pair<std::string, double>> weights;
};

// Evaluates the model at every grid time via running Chen prefix signatures
// of the piecewise-linear path. Output is a fresh 1-channel path (label 1).
SampledPath sig_model_eval(const SigModelCoeffs& c, const SampledPath& p);

// Same shape but over left-point branched prefix values; keys are forests.
SampledPath bsig_model_eval(const SigModelCoeffs& c, const SampledPath& p);

// Feeds p through the layers in order. After the first layer the input is the
// previous 1-channel output; with augment=true it is instead (p, output) with
// the output labeled max(p's labels)+1.
SampledPath iterate_sig_model(const std::vector<SigModelCoeffs>& layers, const SampledPath& p,
                              bool branched = false, bool augment = false);

// d x d matrix of mean squared integration-by-parts defects over the grid:
// cell (j,k) averages [dXj dXk - int dXj dXk - int dXk dXj]^2 with left-point
// integrals from the first sample.
std::vector<double> shuffle_residual(const SampledPath& p);

struct LinearFit {
  std::vector<double> coeffs;  // intercept first
  double mse = 0.0;
  bool ridge_used = false;  // rank-deficient design; tiny-damping fallback applied
};

// Least squares through a column-pivoted Householder QR; X row-major
// rows x cols, intercept added internally.
LinearFit fit_linear(const std::vector<double>& x, std::size_t rows, std::size_t cols,
                     const std::vector<double>& y);

double linear_predict(const LinearFit& fit, const double* features, std::size_t cols);

// MLP (t, B, B^H) -> channels with tanh hidden layers, plus the two linear
// heads over depth-2 left-point prefix signatures: head1 on (X, U) emits the
// learned proxy Xhat, head2 on (X, Xhat) emits the target estimate. All
// parameters live in one flat vector.
struct ExtensionModel {
  int in_dim = 3;
  std::vector<int> widths;
  int out_channels = 9;
  std::vector<double> params;

  int d1() const { return in_dim + out_channels; }
  int d2() const { return in_dim + 1; }
  std::size_t mlp_param_count() const;
  std::size_t param_count() const;
};

ExtensionModel init_extension_model(int in_dim, const std::vector<int>& widths, int out_channels,
                                    std::uint64_t seed);

struct LossBreakdown {
  double total = 0.0;
  double physics = 0.0;
  double shuffle = 0.0;
};

// Loss over the whole grid; input must carry in_dim channels (time-extended
// drivers), target one value per grid point. grad, when given, receives
// d(total)/d(params) (same length as model.params).
LossBreakdown extension_loss(const ExtensionModel& model, const SampledPath& input,
                             const std::vector<double>& target, double lambda_p, double lambda_s,
                             std::vector<double>* grad);

// MLP forward only: the learned channels on the grid, labeled 1..out_channels.
SampledPath extension_channels(const ExtensionModel& model, const SampledPath& input);

struct TrainConfig {
  int epochs = 500;
  double lr = 1e-2;
  double lr_decay = 0.5;
  int decay_every = 500;
  double lambda_p = 1.0;
  double lambda_s = 1.0;
  std::uint64_t seed = 0;
  std::vector<int> widths = {64, 32, 16};
  int channels = 9;
};

struct TrainResult {
  ExtensionModel model;
  std::vector<double> physics_history;
  std::vector<double> shuffle_history;
  SampledPath learned;  // extension channels at the trained parameters
};

// Full-batch Adam (beta 0.9/0.999, eps 1e-8) with stepwise lr decay.
// Bitwise deterministic for a fixed seed and config.
TrainResult train_extension(const SampledPath& drivers, const SampledPath& target,
                            const TrainConfig& cfg);

// Depth-2 left-point prefix features [S1(i), S2(i)] per grid point, row-major
// rows = points, cols = d + d^2.
std::vector<double> prefix_sig2_features(const SampledPath& p);

struct CalibrationConfig {
  RoughVolParams sim;
  TrainConfig train;
};

struct CalibrationReport {
  double mse_vol_with = 0.0, mse_vol_without = 0.0;
  double mse_stock_with = 0.0, mse_stock_without = 0.0;
  double shuffle_mse = 0.0;  // mean over cells of shuffle_matrix
  int shuffle_dim = 0;
  std::vector<double> shuffle_matrix;
  std::vector<double> physics_history, shuffle_history;
  long clamp_count = 0;
  bool ridge_used = false;
  std::vector<double> times;
  std::vector<double> vol_true, vol_with, vol_without;
  std::vector<double> stock_true, stock_with, stock_without;
  ExtensionModel model;
};

// Simulates the rough-vol model, trains the learned extension on (drivers, V),
// then regresses V and S on depth-2 prefix-signature features of the driver
// path with and without the learned channels.
CalibrationReport calibrate(const CalibrationConfig& cfg);

}  // namespace branchsig
