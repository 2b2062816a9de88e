#include "branchsig/hopf.hpp"

#include <mutex>
#include <stdexcept>
#include <unordered_map>

namespace branchsig {

namespace {

void add_term(SplitSum& s, const Forest& l, const Forest& r, long long k) {
  if (k == 0) return;
  auto it = s.emplace(std::make_pair(l, r), 0LL).first;
  it->second += k;
  if (it->second == 0) s.erase(it);
}

SplitSum split_product(const SplitSum& a, const SplitSum& b) {
  SplitSum out;
  for (const auto& [pa, ka] : a)
    for (const auto& [pb, kb] : b)
      add_term(out, pa.first * pb.first, pa.second * pb.second, ka * kb);
  return out;
}

std::mutex memo_mu;
std::unordered_map<std::string, SplitSum> coproduct_memo;
std::unordered_map<std::string, HopfSum> antipode_memo;
std::unordered_map<std::string, TensorSum> psi_memo;
std::unordered_map<std::string, TensorSum> shuffle_memo;

template <typename M>
bool memo_get(M& memo, const std::string& key, typename M::mapped_type& out) {
  std::lock_guard<std::mutex> lock(memo_mu);
  auto it = memo.find(key);
  if (it == memo.end()) return false;
  out = it->second;
  return true;
}

template <typename M>
void memo_put(M& memo, const std::string& key, const typename M::mapped_type& val) {
  std::lock_guard<std::mutex> lock(memo_mu);
  memo.emplace(key, val);
}

}  // namespace

SplitSum coproduct(const Tree& t) {
  SplitSum out;
  if (memo_get(coproduct_memo, t.key(), out)) return out;

  SplitSum acc;
  add_term(acc, Forest(), Forest(), 1);  // coproduct of the empty child forest
  for (const Tree& c : t.children()) acc = split_product(acc, coproduct(c));

  add_term(out, Forest(t), Forest(), 1);
  for (const auto& [pair, k] : acc)
    add_term(out, pair.first, Forest(Tree(t.label(), pair.second.trees())), k);

  memo_put(coproduct_memo, t.key(), out);
  return out;
}

SplitSum coproduct(const Forest& f) {
  SplitSum acc;
  add_term(acc, Forest(), Forest(), 1);
  for (const Tree& t : f.trees()) acc = split_product(acc, coproduct(t));
  return acc;
}

SplitSum reduced_coproduct(const Forest& f) {
  if (f.empty()) throw std::invalid_argument("reduced coproduct undefined on the unit forest");
  SplitSum out = coproduct(f);
  add_term(out, f, Forest(), -1);
  add_term(out, Forest(), f, -1);
  return out;
}

HopfSum antipode(const Forest& f) {
  if (f.empty()) return HopfSum{{Forest(), 1}};
  HopfSum out;
  if (memo_get(antipode_memo, f.key(), out)) return out;

  out[f] = -1;
  for (const auto& [pair, k] : reduced_coproduct(f)) {
    // left factor is strictly smaller, so the recursion terminates
    for (const auto& [g, c] : antipode(pair.first)) {
      long long& slot = out[g * pair.second];
      slot -= k * c;
      if (slot == 0) out.erase(g * pair.second);
    }
  }

  memo_put(antipode_memo, f.key(), out);
  return out;
}

namespace {

void add_word(TensorSum& s, const Word& w, long long k) {
  if (k == 0) return;
  auto it = s.emplace(w, 0LL).first;
  it->second += k;
  if (it->second == 0) s.erase(it);
}

}  // namespace

TensorSum shuffle(const Word& u, const Word& v) {
  if (u.empty()) return TensorSum{{v, 1}};
  if (v.empty()) return TensorSum{{u, 1}};

  const std::string key = u.key() + "\x1f" + v.key();
  TensorSum out;
  if (memo_get(shuffle_memo, key, out)) return out;

  std::vector<Tree> uh(u.letters().begin(), u.letters().end() - 1);
  std::vector<Tree> vh(v.letters().begin(), v.letters().end() - 1);
  for (const auto& [w, k] : shuffle(Word(uh), v)) add_word(out, w.append(u.letters().back()), k);
  for (const auto& [w, k] : shuffle(u, Word(vh))) add_word(out, w.append(v.letters().back()), k);

  memo_put(shuffle_memo, key, out);
  return out;
}

TensorSum shuffle(const TensorSum& a, const TensorSum& b) {
  TensorSum out;
  for (const auto& [u, ka] : a)
    for (const auto& [v, kb] : b)
      for (const auto& [w, k] : shuffle(u, v)) add_word(out, w, ka * kb * k);
  return out;
}

std::vector<std::pair<Word, Word>> deconcatenate(const Word& w) {
  std::vector<std::pair<Word, Word>> out;
  const auto& ls = w.letters();
  for (std::size_t i = 0; i <= ls.size(); ++i) {
    out.emplace_back(Word(std::vector<Tree>(ls.begin(), ls.begin() + i)),
                     Word(std::vector<Tree>(ls.begin() + i, ls.end())));
  }
  return out;
}

TensorSum psi(const Tree& t) {
  TensorSum out;
  if (memo_get(psi_memo, t.key(), out)) return out;

  add_word(out, Word({t}), 1);
  for (const auto& [pair, k] : reduced_coproduct(Forest(t))) {
    if (pair.second.factors() != 1)
      throw std::logic_error("reduced coproduct of a tree produced a non-tree right factor: " +
                             pair.second.key());
    const Tree& letter = pair.second.trees().front();
    for (const auto& [w, c] : psi(pair.first)) add_word(out, w.append(letter), k * c);
  }

  memo_put(psi_memo, t.key(), out);
  return out;
}

TensorSum psi(const Forest& f) {
  TensorSum out{{Word(), 1}};
  for (const Tree& t : f.trees()) out = shuffle(out, psi(t));
  return out;
}

std::string format_tensor_sum(const TensorSum& s) {
  std::string out;
  for (const auto& [w, k] : s) {  // map order is (degree, serialization)
    if (k == 0) continue;
    out += std::to_string(k);
    out += '\t';
    out += w.key();
    out += '\n';
  }
  return out;
}

std::string format_split_sum(const SplitSum& s) {
  std::string out;
  for (const auto& [pair, k] : s) {
    if (k == 0) continue;
    out += std::to_string(k);
    out += '\t';
    out += pair.first.key();
    out += '\t';
    out += pair.second.key();
    out += '\n';
  }
  return out;
}

}  // namespace branchsig
