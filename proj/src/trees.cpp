#include "branchsig/trees.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <thread>

#include "branchsig/util.hpp"

namespace branchsig {

namespace {

std::string serialize_tree(int label, const std::vector<Tree>& children) {
  std::string s = std::to_string(label);
  if (!children.empty()) {
    s += '(';
    for (std::size_t i = 0; i < children.size(); ++i) {
      if (i) s += ',';
      s += children[i].key();
    }
    s += ')';
  }
  return s;
}

void check_label(int label) {
  if (label < 0) throw std::invalid_argument("tree label must be >= 0");
}

}  // namespace

Tree::Tree(int label) : label_(label), size_(1) {
  check_label(label);
  key_ = std::to_string(label);
}

Tree::Tree(int label, std::vector<Tree> children)
    : label_(label), children_(std::move(children)) {
  check_label(label);
  // canonical form: children ascending by serialization
  std::sort(children_.begin(), children_.end(),
            [](const Tree& a, const Tree& b) { return a.key() < b.key(); });
  size_ = 1;
  for (const Tree& c : children_) size_ += c.size();
  key_ = serialize_tree(label_, children_);
}

Forest::Forest(Tree t) { trees_.push_back(std::move(t)); }

Forest::Forest(std::vector<Tree> trees) : trees_(std::move(trees)) {
  std::sort(trees_.begin(), trees_.end(),
            [](const Tree& a, const Tree& b) { return a.key() < b.key(); });
}

int Forest::nodes() const {
  int n = 0;
  for (const Tree& t : trees_) n += t.size();
  return n;
}

std::string Forest::key() const {
  std::string s;
  for (std::size_t i = 0; i < trees_.size(); ++i) {
    if (i) s += '*';
    s += trees_[i].key();
  }
  return s;
}

Forest Forest::operator*(const Forest& o) const {
  std::vector<Tree> all = trees_;
  all.insert(all.end(), o.trees_.begin(), o.trees_.end());
  return Forest(std::move(all));
}

Forest Forest::operator*(const Tree& t) const { return *this * Forest(t); }

bool Forest::operator==(const Forest& o) const { return key() == o.key(); }

bool Forest::operator<(const Forest& o) const {
  const int a = nodes(), b = o.nodes();
  if (a != b) return a < b;
  return key() < o.key();
}

int Word::degree() const {
  int n = 0;
  for (const Tree& t : letters_) n += t.size();
  return n;
}

std::string Word::key() const {
  std::string s;
  for (std::size_t i = 0; i < letters_.size(); ++i) {
    if (i) s += '|';
    s += letters_[i].key();
  }
  return s;
}

Word Word::append(const Tree& t) const {
  std::vector<Tree> ls = letters_;
  ls.push_back(t);
  return Word(std::move(ls));
}

bool Word::operator<(const Word& o) const {
  const int a = degree(), b = o.degree();
  if (a != b) return a < b;
  return key() < o.key();
}

std::string to_string(const Tree& t) { return t.key(); }
std::string to_string(const Forest& f) { return f.key(); }
std::string to_string(const Word& w) { return w.key(); }

namespace {

struct Parser {
  const std::string& s;
  std::size_t pos = 0;

  explicit Parser(const std::string& str) : s(str) {}

  bool done() const { return pos >= s.size(); }
  char peek() const { return s[pos]; }

  [[noreturn]] void fail(const std::string& msg) const { throw ParseError(msg, pos); }

  int label() {
    if (done() || s[pos] < '0' || s[pos] > '9') fail("expected decimal label");
    long v = 0;
    const std::size_t start = pos;
    while (!done() && s[pos] >= '0' && s[pos] <= '9') {
      v = v * 10 + (s[pos] - '0');
      if (v > 1000000000L) {
        pos = start;
        fail("label out of range");
      }
      ++pos;
    }
    return static_cast<int>(v);
  }

  Tree tree() {
    const int lab = label();
    if (!done() && peek() == '(') {
      ++pos;
      std::vector<Tree> children;
      children.push_back(tree());
      while (!done() && peek() == ',') {
        ++pos;
        children.push_back(tree());
      }
      if (done() || peek() != ')') fail("expected ')' or ','");
      ++pos;
      return Tree(lab, std::move(children));
    }
    return Tree(lab);
  }
};

}  // namespace

Tree parse_tree(const std::string& s) {
  Parser p(s);
  Tree t = p.tree();
  if (!p.done()) p.fail("trailing characters after tree");
  return t;
}

Forest parse_forest(const std::string& s) {
  if (s.empty()) return Forest();
  Parser p(s);
  std::vector<Tree> trees;
  trees.push_back(p.tree());
  while (!p.done() && p.peek() == '*') {
    ++p.pos;
    trees.push_back(p.tree());
  }
  if (!p.done()) p.fail("trailing characters after forest");
  return Forest(std::move(trees));
}

Word parse_word(const std::string& s) {
  Parser p(s);
  std::vector<Tree> letters;
  letters.push_back(p.tree());
  while (!p.done() && p.peek() == '|') {
    ++p.pos;
    letters.push_back(p.tree());
  }
  if (!p.done()) p.fail("trailing characters after word");
  return Word(std::move(letters));
}

namespace {

// Forests with exactly n nodes built from a non-decreasing choice over the
// ordered tree list, so each multiset appears once.
void forest_combos(int n, const std::vector<std::vector<Tree>>& trees_by_size,
                   std::size_t min_size, std::size_t min_index, std::vector<Tree>& acc,
                   std::vector<Forest>& out) {
  if (n == 0) {
    out.push_back(Forest(acc));
    return;
  }
  for (std::size_t sz = min_size; sz <= static_cast<std::size_t>(n); ++sz) {
    const auto& pool = trees_by_size[sz];
    const std::size_t start = (sz == min_size) ? min_index : 0;
    for (std::size_t i = start; i < pool.size(); ++i) {
      acc.push_back(pool[i]);
      forest_combos(n - static_cast<int>(sz), trees_by_size, sz, i, acc, out);
      acc.pop_back();
    }
  }
}

}  // namespace

std::vector<Tree> enumerate_trees(int n, const std::vector<int>& labels) {
  if (n < 1) throw std::invalid_argument("tree size must be >= 1");
  if (labels.empty()) throw std::invalid_argument("need at least one label");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    check_label(labels[i]);
    for (std::size_t j = i + 1; j < labels.size(); ++j)
      if (labels[i] == labels[j]) throw std::invalid_argument("duplicate decoration label");
  }

  // trees(k) = roots over forests(k-1); forests from multisets of smaller trees
  std::vector<std::vector<Tree>> by_size(static_cast<std::size_t>(n) + 1);
  for (int k = 1; k <= n; ++k) {
    std::vector<Forest> child_forests;
    if (k == 1) {
      child_forests.push_back(Forest());
    } else {
      std::vector<Tree> acc;
      forest_combos(k - 1, by_size, 1, 0, acc, child_forests);
    }
    std::vector<Tree>& out = by_size[static_cast<std::size_t>(k)];
    for (int lab : labels)
      for (const Forest& f : child_forests) out.push_back(Tree(lab, f.trees()));
    std::sort(out.begin(), out.end());
  }
  return by_size[static_cast<std::size_t>(n)];
}

std::vector<Tree> enumerate_trees(int n, int d, int first_label) {
  if (d < 1) throw std::invalid_argument("need at least one label");
  std::vector<int> labels;
  for (int i = 0; i < d; ++i) labels.push_back(first_label + i);
  return enumerate_trees(n, labels);
}

std::vector<Forest> enumerate_forests(int n, const std::vector<int>& labels) {
  if (n < 1) throw std::invalid_argument("forest size must be >= 1");
  std::vector<std::vector<Tree>> by_size(static_cast<std::size_t>(n) + 1);
  for (int k = 1; k <= n; ++k) by_size[static_cast<std::size_t>(k)] = enumerate_trees(k, labels);
  std::vector<Forest> out;
  std::vector<Tree> acc;
  forest_combos(n, by_size, 1, 0, acc, out);
  std::sort(out.begin(), out.end());
  return out;
}

unsigned thread_count() {
  if (const char* env = std::getenv("BRANCHSIG_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<unsigned>(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw ? hw : 1;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
  const unsigned workers = std::min<std::size_t>(thread_count(), n ? n : 1);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&]() {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        body(i);
      }
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace branchsig
