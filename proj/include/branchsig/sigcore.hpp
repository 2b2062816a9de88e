#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "branchsig/hopf.hpp"
#include "branchsig/trees.hpp"

namespace branchsig {

// Piecewise-linear sample: shared strictly-increasing time grid, row-major
// channel values, and integer channel labels (distinct, >= 0). Labels name
// channels in words/trees; positions index the dense storage.
struct SampledPath {
  std::vector<double> times;
  std::vector<double> values;  // points x dim, row-major
  std::vector<int> channel_labels;

  SampledPath() = default;
  SampledPath(std::vector<double> t, std::vector<double> v, std::vector<int> labels);

  std::size_t points() const { return times.size(); }
  int dim() const { return static_cast<int>(channel_labels.size()); }
  double value(std::size_t i, int c) const { return values[i * channel_labels.size() + c]; }
  double& value(std::size_t i, int c) { return values[i * channel_labels.size() + c]; }
  int channel_of_label(int label) const;  // -1 when absent

  void validate() const;
};

// Prepends the time grid as channel label 0.
SampledPath time_extend(const SampledPath& p);

// Dense truncated tensor-algebra element: level k holds all d^k words of
// length k in row-major letter order; the empty word is implicitly 1.
class TruncatedSignature {
 public:
  TruncatedSignature(int level, std::vector<int> channel_labels);  // identity

  int level() const { return level_; }
  int dim() const { return static_cast<int>(channel_labels_.size()); }
  const std::vector<int>& channel_labels() const { return channel_labels_; }

  std::vector<double>& level_entries(int k) { return levels_[static_cast<std::size_t>(k) - 1]; }
  const std::vector<double>& level_entries(int k) const {
    return levels_[static_cast<std::size_t>(k) - 1];
  }

  // entry by channel positions; empty word gives 1
  double entry(const std::vector<int>& word_positions) const;
  // entry by a word of single-node letters resolved through channel labels
  double word_value(const Word& w) const;

  // Chen-concatenates the tensor exponential of one linear segment.
  void concat_exp(const std::vector<double>& dx);

  // ("<WORD>", value) plus ("", 1), sorted by (length, serialization)
  std::vector<std::pair<std::string, double>> entries() const;

 private:
  int level_;
  std::vector<int> channel_labels_;
  std::vector<std::vector<double>> levels_;
};

// Signature of the piecewise-linear interpolation: per-segment tensor
// exponentials combined by Chen's identity. Needs >= 2 samples, level >= 1.
TruncatedSignature sig_chen(const SampledPath& p, int level);

// Left-point (Ito-style) iterated sums on the sample grid.
TruncatedSignature sig_ito(const SampledPath& p, int level);

// Chen concatenation of signatures over adjoining windows.
TruncatedSignature chen_concat(const TruncatedSignature& a, const TruncatedSignature& b);

// Branched signature: tree entries by the left-point recursion
// B_tau(t+) = B_tau(t) + prod_children B_child(t) * dX^root(t); forest values
// multiply tree values, so the character property holds by construction.
class BranchedSignature {
 public:
  BranchedSignature(int level, std::vector<int> channel_labels);  // unit element

  int level() const { return level_; }
  const std::vector<int>& channel_labels() const { return channel_labels_; }
  const std::vector<Tree>& basis() const { return basis_; }

  double tree_value(const Tree& t) const;
  double& tree_slot(std::size_t basis_index) { return values_[basis_index]; }
  double value(const Forest& f) const;  // product over factors; unit -> 1

  // One left-point step with displacement dx (indexed by channel position).
  void advance(const std::vector<double>& dx);

  // forests |f| <= level (with product values when composite), or trees only
  std::vector<std::pair<std::string, double>> entries(bool include_composite_forests) const;

 private:
  int level_;
  std::vector<int> channel_labels_;
  std::vector<Tree> basis_;
  std::vector<double> values_;
  std::vector<std::vector<std::size_t>> child_indices_;
  std::vector<int> root_channel_;
};

BranchedSignature bsig(const SampledPath& p, int level);

// <sig, sum>: letters resolve to channel positions via the resolver
// (return -1 for unknown -> KeyError). Word length above the truncation
// level is an error.
double eval_pairing(const TruncatedSignature& sig, const TensorSum& s,
                    const std::function<int(const Tree&)>& channel_of);

}  // namespace branchsig
