#include "branchsig/sigcore.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

#include "branchsig/util.hpp"

namespace branchsig {

SampledPath::SampledPath(std::vector<double> t, std::vector<double> v, std::vector<int> labels)
    : times(std::move(t)), values(std::move(v)), channel_labels(std::move(labels)) {
  validate();
}

int SampledPath::channel_of_label(int label) const {
  for (std::size_t c = 0; c < channel_labels.size(); ++c)
    if (channel_labels[c] == label) return static_cast<int>(c);
  return -1;
}

void SampledPath::validate() const {
  if (times.empty()) throw std::invalid_argument("path needs at least one sample");
  if (channel_labels.empty()) throw std::invalid_argument("path needs at least one channel");
  if (values.size() != times.size() * channel_labels.size())
    throw std::invalid_argument("value buffer size does not match points x channels");
  for (std::size_t i = 1; i < times.size(); ++i)
    if (!(times[i] > times[i - 1]))
      throw std::invalid_argument("times must be strictly increasing (index " +
                                  std::to_string(i) + ")");
  for (double v : times)
    if (!std::isfinite(v)) throw std::invalid_argument("non-finite time value");
  for (double v : values)
    if (!std::isfinite(v)) throw std::invalid_argument("non-finite path value");
  for (std::size_t a = 0; a < channel_labels.size(); ++a) {
    if (channel_labels[a] < 0) throw std::invalid_argument("channel label must be >= 0");
    for (std::size_t b = a + 1; b < channel_labels.size(); ++b)
      if (channel_labels[a] == channel_labels[b])
        throw std::invalid_argument("duplicate channel label " +
                                    std::to_string(channel_labels[a]));
  }
}

SampledPath time_extend(const SampledPath& p) {
  if (p.channel_of_label(0) >= 0)
    throw std::invalid_argument("path already has a channel labeled 0");
  const std::size_t n = p.points();
  const std::size_t d = static_cast<std::size_t>(p.dim());
  std::vector<int> labels;
  labels.push_back(0);
  labels.insert(labels.end(), p.channel_labels.begin(), p.channel_labels.end());
  std::vector<double> vals(n * (d + 1));
  for (std::size_t i = 0; i < n; ++i) {
    vals[i * (d + 1)] = p.times[i];
    for (std::size_t c = 0; c < d; ++c) vals[i * (d + 1) + 1 + c] = p.values[i * d + c];
  }
  return SampledPath(p.times, std::move(vals), std::move(labels));
}

TruncatedSignature::TruncatedSignature(int level, std::vector<int> channel_labels)
    : level_(level), channel_labels_(std::move(channel_labels)) {
  if (level_ < 1) throw std::invalid_argument("signature level must be >= 1");
  if (channel_labels_.empty()) throw std::invalid_argument("signature needs >= 1 channel");
  const std::size_t d = channel_labels_.size();
  std::size_t sz = 1;
  for (int k = 1; k <= level_; ++k) {
    sz *= d;
    levels_.emplace_back(sz, 0.0);
  }
}

double TruncatedSignature::entry(const std::vector<int>& word_positions) const {
  if (word_positions.empty()) return 1.0;
  if (static_cast<int>(word_positions.size()) > level_)
    throw std::invalid_argument("word longer than signature level");
  const std::size_t d = channel_labels_.size();
  std::size_t idx = 0;
  for (int c : word_positions) {
    if (c < 0 || static_cast<std::size_t>(c) >= d)
      throw KeyError("channel position out of range");
    idx = idx * d + static_cast<std::size_t>(c);
  }
  return levels_[word_positions.size() - 1][idx];
}

double TruncatedSignature::word_value(const Word& w) const {
  std::vector<int> pos;
  pos.reserve(w.letters().size());
  for (const Tree& t : w.letters()) {
    if (t.size() != 1) throw KeyError("word letter is not a single-node tree: " + t.key());
    int c = -1;
    for (std::size_t i = 0; i < channel_labels_.size(); ++i)
      if (channel_labels_[i] == t.label()) c = static_cast<int>(i);
    if (c < 0) throw KeyError("no channel labeled " + std::to_string(t.label()));
    pos.push_back(c);
  }
  return entry(pos);
}

std::vector<std::pair<std::string, double>> TruncatedSignature::entries() const {
  std::vector<std::pair<std::string, double>> out;
  out.emplace_back("", 1.0);
  const std::size_t d = channel_labels_.size();
  std::vector<std::size_t> word;
  for (int k = 1; k <= level_; ++k) {
    word.assign(static_cast<std::size_t>(k), 0);
    const auto& lvl = levels_[static_cast<std::size_t>(k) - 1];
    for (std::size_t idx = 0; idx < lvl.size(); ++idx) {
      std::string key;
      for (int j = 0; j < k; ++j) {
        if (j) key += '|';
        key += std::to_string(channel_labels_[word[static_cast<std::size_t>(j)]]);
      }
      out.emplace_back(std::move(key), lvl[idx]);
      for (int j = k - 1; j >= 0; --j) {  // odometer over letter positions
        if (++word[static_cast<std::size_t>(j)] < d) break;
        word[static_cast<std::size_t>(j)] = 0;
      }
    }
    // per-level keys re-sorted by serialization (labels may be multi-digit)
    std::sort(out.end() - static_cast<std::ptrdiff_t>(lvl.size()), out.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
  }
  return out;
}

namespace {

void check_sig_input(const SampledPath& p, int level) {
  if (level < 1) throw std::invalid_argument("signature level must be >= 1");
  if (p.points() < 2) throw std::invalid_argument("signature needs at least 2 samples");
  p.validate();
}

// acc <- acc (x) seg truncated at the shared level (both over the same channels)
void concat_into(TruncatedSignature& acc, const TruncatedSignature& seg) {
  const int n = acc.level();
  for (int k = n; k >= 1; --k) {
    auto& target = acc.level_entries(k);
    const std::size_t dk = target.size();
    // j = 0 term keeps target as-is; j = k term adds seg level k
    for (int j = 1; j < k; ++j) {
      const auto& left = acc.level_entries(j);
      const auto& right = seg.level_entries(k - j);
      for (std::size_t a = 0; a < left.size(); ++a) {
        const double la = left[a];
        if (la == 0.0) continue;
        double* t = target.data() + a * right.size();
        for (std::size_t b = 0; b < right.size(); ++b) t[b] += la * right[b];
      }
    }
    const auto& sk = seg.level_entries(k);
    for (std::size_t i = 0; i < dk; ++i) target[i] += sk[i];
  }
}

// tensor exponential of a single displacement, truncated
TruncatedSignature segment_exp(const std::vector<double>& dx, int level,
                               const std::vector<int>& labels) {
  TruncatedSignature seg(level, labels);
  seg.level_entries(1) = dx;
  for (int k = 2; k <= level; ++k) {
    const auto& prev = seg.level_entries(k - 1);
    auto& cur = seg.level_entries(k);
    const double inv = 1.0 / k;
    for (std::size_t a = 0; a < prev.size(); ++a) {
      const double pa = prev[a] * inv;
      double* t = cur.data() + a * dx.size();
      for (std::size_t b = 0; b < dx.size(); ++b) t[b] = pa * dx[b];
    }
  }
  return seg;
}

}  // namespace

void TruncatedSignature::concat_exp(const std::vector<double>& dx) {
  if (dx.size() != channel_labels_.size())
    throw std::invalid_argument("segment dimension mismatch");
  concat_into(*this, segment_exp(dx, level_, channel_labels_));
}

TruncatedSignature sig_chen(const SampledPath& p, int level) {
  check_sig_input(p, level);
  const std::size_t d = static_cast<std::size_t>(p.dim());
  TruncatedSignature acc(level, p.channel_labels);
  std::vector<double> dx(d);
  for (std::size_t i = 0; i + 1 < p.points(); ++i) {
    for (std::size_t c = 0; c < d; ++c)
      dx[c] = p.values[(i + 1) * d + c] - p.values[i * d + c];
    acc.concat_exp(dx);
  }
  return acc;
}

TruncatedSignature sig_ito(const SampledPath& p, int level) {
  check_sig_input(p, level);
  const std::size_t d = static_cast<std::size_t>(p.dim());
  TruncatedSignature acc(level, p.channel_labels);
  std::vector<double> dx(d);
  for (std::size_t i = 0; i + 1 < p.points(); ++i) {
    for (std::size_t c = 0; c < d; ++c)
      dx[c] = p.values[(i + 1) * d + c] - p.values[i * d + c];
    // only the last letter integrates: I_{w.c} += I_w(t_i) dx_c
    for (int k = level; k >= 1; --k) {
      auto& target = acc.level_entries(k);
      if (k == 1) {
        for (std::size_t c = 0; c < d; ++c) target[c] += dx[c];
      } else {
        const auto& prev = acc.level_entries(k - 1);
        for (std::size_t a = 0; a < prev.size(); ++a) {
          const double pa = prev[a];
          if (pa == 0.0) continue;
          double* t = target.data() + a * d;
          for (std::size_t c = 0; c < d; ++c) t[c] += pa * dx[c];
        }
      }
    }
  }
  return acc;
}

TruncatedSignature chen_concat(const TruncatedSignature& a, const TruncatedSignature& b) {
  if (a.level() != b.level()) throw std::invalid_argument("level mismatch in concatenation");
  if (a.channel_labels() != b.channel_labels())
    throw std::invalid_argument("channel mismatch in concatenation");
  TruncatedSignature out = a;
  concat_into(out, b);
  return out;
}

BranchedSignature::BranchedSignature(int level, std::vector<int> channel_labels)
    : level_(level), channel_labels_(std::move(channel_labels)) {
  if (level_ < 1) throw std::invalid_argument("branched signature level must be >= 1");
  for (int n = 1; n <= level_; ++n) {
    std::vector<Tree> ts = enumerate_trees(n, channel_labels_);
    basis_.insert(basis_.end(), ts.begin(), ts.end());
  }
  values_.assign(basis_.size(), 0.0);

  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < basis_.size(); ++i) index.emplace(basis_[i].key(), i);
  child_indices_.resize(basis_.size());
  root_channel_.resize(basis_.size());
  for (std::size_t i = 0; i < basis_.size(); ++i) {
    int c = -1;
    for (std::size_t j = 0; j < channel_labels_.size(); ++j)
      if (channel_labels_[j] == basis_[i].label()) c = static_cast<int>(j);
    root_channel_[i] = c;
    for (const Tree& ch : basis_[i].children()) child_indices_[i].push_back(index.at(ch.key()));
  }
}

double BranchedSignature::tree_value(const Tree& t) const {
  for (std::size_t i = 0; i < basis_.size(); ++i)
    if (basis_[i] == t) return values_[i];
  throw KeyError("tree outside the truncated basis: " + t.key());
}

double BranchedSignature::value(const Forest& f) const {
  double v = 1.0;
  for (const Tree& t : f.trees()) v *= tree_value(t);
  return v;
}

std::vector<std::pair<std::string, double>> BranchedSignature::entries(
    bool include_composite_forests) const {
  std::vector<std::pair<std::string, double>> out;
  out.emplace_back("", 1.0);
  if (!include_composite_forests) {
    std::size_t i = 0;
    for (int n = 1; n <= level_; ++n) {  // per-degree blocks sorted by serialization
      std::vector<std::pair<std::string, double>> block;
      while (i < basis_.size() && basis_[i].size() == n) {
        block.emplace_back(basis_[i].key(), values_[i]);
        ++i;
      }
      std::sort(block.begin(), block.end(),
                [](const auto& a, const auto& b) { return a.first < b.first; });
      out.insert(out.end(), block.begin(), block.end());
    }
    return out;
  }
  for (int n = 1; n <= level_; ++n) {
    std::vector<Forest> fs = enumerate_forests(n, channel_labels_);
    std::vector<std::pair<std::string, double>> block;
    for (const Forest& f : fs) block.emplace_back(f.key(), value(f));
    std::sort(block.begin(), block.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    out.insert(out.end(), block.begin(), block.end());
  }
  return out;
}

void BranchedSignature::advance(const std::vector<double>& dx) {
  if (dx.size() != channel_labels_.size())
    throw std::invalid_argument("segment dimension mismatch");
  // descending over the basis: children are strictly smaller, so their
  // slots still hold time-t values when a parent integrates
  for (std::size_t r = basis_.size(); r-- > 0;) {
    double integrand = 1.0;
    for (std::size_t ci : child_indices_[r]) integrand *= values_[ci];
    values_[r] += integrand * dx[static_cast<std::size_t>(root_channel_[r])];
  }
}

BranchedSignature bsig(const SampledPath& p, int level) {
  check_sig_input(p, level);
  BranchedSignature acc(level, p.channel_labels);
  const std::size_t d = static_cast<std::size_t>(p.dim());
  std::vector<double> dx(d);
  for (std::size_t i = 0; i + 1 < p.points(); ++i) {
    for (std::size_t c = 0; c < d; ++c)
      dx[c] = p.values[(i + 1) * d + c] - p.values[i * d + c];
    acc.advance(dx);
  }
  return acc;
}

double eval_pairing(const TruncatedSignature& sig, const TensorSum& s,
                    const std::function<int(const Tree&)>& channel_of) {
  double total = 0.0;
  std::vector<int> pos;
  for (const auto& [w, k] : s) {
    if (k == 0) continue;
    if (w.length() > sig.level())
      throw std::invalid_argument("word of length " + std::to_string(w.length()) +
                                  " exceeds signature level " + std::to_string(sig.level()));
    pos.clear();
    for (const Tree& t : w.letters()) {
      const int c = channel_of(t);
      if (c < 0) throw KeyError("no channel for letter " + t.key());
      pos.push_back(c);
    }
    total += static_cast<double>(k) * sig.entry(pos);
  }
  return total;
}

}  // namespace branchsig
