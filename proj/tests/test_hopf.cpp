#include <map>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "branchsig/hopf.hpp"
#include "branchsig/trees.hpp"
#include "branchsig/util.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace branchsig;

namespace {

// forests with total node count in [1, nmax] over labels 1..d
std::vector<Forest> small_forests(int nmax, int d) {
  std::vector<int> labels;
  for (int i = 1; i <= d; ++i) labels.push_back(i);
  std::vector<Forest> out;
  for (int n = 1; n <= nmax; ++n)
    for (const Forest& f : enumerate_forests(n, labels)) out.push_back(f);
  return out;
}

SplitSum split_of(std::initializer_list<std::tuple<const char*, const char*, long long>> terms) {
  SplitSum s;
  for (const auto& [l, r, c] : terms) s[{parse_forest(l), parse_forest(r)}] += c;
  return s;
}

TensorSum tensor_of(std::initializer_list<std::pair<const char*, long long>> terms) {
  TensorSum s;
  for (const auto& [w, c] : terms) s[*w ? parse_word(w) : Word()] += c;
  return s;
}

HopfSum hopf_of(std::initializer_list<std::pair<const char*, long long>> terms) {
  HopfSum s;
  for (const auto& [f, c] : terms) s[parse_forest(f)] += c;
  return s;
}

// convolution-style product of two split sums, componentwise on both factors
SplitSum split_product(const SplitSum& a, const SplitSum& b) {
  SplitSum out;
  for (const auto& [pa, ca] : a)
    for (const auto& [pb, cb] : b) {
      const auto key = std::make_pair(pa.first * pb.first, pa.second * pb.second);
      out[key] += ca * cb;
      if (out[key] == 0) out.erase(key);
    }
  return out;
}

// three-way splits keyed by serialization, for coassociativity
using TripleSum = std::map<std::tuple<std::string, std::string, std::string>, long long>;

TripleSum expand_left(const SplitSum& s) {  // (coproduct (x) id) applied to s
  TripleSum out;
  for (const auto& [pair, c] : s)
    for (const auto& [inner, ci] : coproduct(pair.first)) {
      const auto key =
          std::make_tuple(inner.first.key(), inner.second.key(), pair.second.key());
      out[key] += c * ci;
      if (out[key] == 0) out.erase(key);
    }
  return out;
}

TripleSum expand_right(const SplitSum& s) {  // (id (x) coproduct)
  TripleSum out;
  for (const auto& [pair, c] : s)
    for (const auto& [inner, ci] : coproduct(pair.second)) {
      const auto key = std::make_tuple(pair.first.key(), inner.first.key(), inner.second.key());
      out[key] += c * ci;
      if (out[key] == 0) out.erase(key);
    }
  return out;
}

// counit projection of sum A(f(1)) f(2) (or mirrored); the antipode axiom
HopfSum antipode_convolution(const Forest& f, bool antipode_left) {
  HopfSum acc;
  for (const auto& [pair, c] : coproduct(f)) {
    const HopfSum side = antipode(antipode_left ? pair.first : pair.second);
    const Forest other = antipode_left ? pair.second : pair.first;
    for (const auto& [g, cg] : side) {
      const Forest prod = g * other;
      acc[prod] += c * cg;
      if (acc[prod] == 0) acc.erase(prod);
    }
  }
  return acc;
}

}  // namespace

TEST_CASE("coproduct of primitives and small trees") {
  CHECK(coproduct(Tree(1)) == split_of({{"1", "", 1}, {"", "1", 1}}));

  const Tree chain3 = parse_tree("3(2(1))");
  CHECK(coproduct(chain3) == split_of({{"3(2(1))", "", 1},
                                       {"", "3(2(1))", 1},
                                       {"1", "3(2)", 1},
                                       {"2(1)", "3", 1}}));

  const Forest two_leaves = parse_forest("1*2");
  CHECK(coproduct(two_leaves) == split_of({{"1*2", "", 1},
                                           {"", "1*2", 1},
                                           {"1", "2", 1},
                                           {"2", "1", 1}}));

  // unit forest splits as unit (x) unit
  CHECK(coproduct(Forest()) == split_of({{"", "", 1}}));
}

TEST_CASE("coproduct equals the admissible-cut enumeration on every small forest") {
  for (const Forest& f : small_forests(4, 2))
    CHECK(oracles::to_oracle(coproduct(f)) == oracles::cut_coproduct(f));
  // a couple of deeper shapes with three labels
  for (const char* s : {"3(1,2)", "3(2(1))", "1(1,1,1)", "2(1(1),2)", "1*2(1)*3"})
    CHECK(oracles::to_oracle(coproduct(parse_forest(s))) ==
          oracles::cut_coproduct(parse_forest(s)));
}

TEST_CASE("reduced coproduct drops the two outer terms") {
  CHECK(reduced_coproduct(Forest(Tree(1))).empty());
  CHECK(reduced_coproduct(parse_forest("2(1)")) == split_of({{"1", "2", 1}}));
  CHECK(reduced_coproduct(parse_forest("3(2(1))")) ==
        split_of({{"1", "3(2)", 1}, {"2(1)", "3", 1}}));
  CHECK_THROWS_AS(reduced_coproduct(Forest()), std::invalid_argument);
}

TEST_CASE("coassociativity on every forest up to four nodes") {
  for (const Forest& f : small_forests(4, 2)) {
    const SplitSum d = coproduct(f);
    CHECK(expand_left(d) == expand_right(d));
  }
}

TEST_CASE("coproduct is multiplicative") {
  const auto fs = small_forests(3, 2);
  for (const Forest& f : fs)
    for (const Forest& g : fs) {
      if (f.nodes() + g.nodes() > 5) continue;
      CHECK(coproduct(f * g) == split_product(coproduct(f), coproduct(g)));
    }
}

TEST_CASE("antipode values on small forests") {
  CHECK(antipode(Forest()) == hopf_of({{"", 1}}));
  CHECK(antipode(Forest(Tree(1))) == hopf_of({{"1", -1}}));
  CHECK(antipode(parse_forest("2(1)")) == hopf_of({{"2(1)", -1}, {"1*2", 1}}));
}

TEST_CASE("antipode convolution collapses to the counit") {
  for (const Forest& f : small_forests(4, 2)) {
    CHECK(antipode_convolution(f, true).empty());   // non-unit forests have counit 0
    CHECK(antipode_convolution(f, false).empty());
  }
  CHECK(antipode_convolution(Forest(), true) == hopf_of({{"", 1}}));
  CHECK(antipode_convolution(Forest(), false) == hopf_of({{"", 1}}));
}

TEST_CASE("shuffle products with multiplicities") {
  const Word one = oracles::word_of_labels({1});
  const Word two = oracles::word_of_labels({2});

  CHECK(shuffle(one, one) == tensor_of({{"1|1", 2}}));
  CHECK(shuffle(one, two) == tensor_of({{"1|2", 1}, {"2|1", 1}}));
  CHECK(shuffle(oracles::word_of_labels({1, 2}), oracles::word_of_labels({3})) ==
        tensor_of({{"1|2|3", 1}, {"1|3|2", 1}, {"3|1|2", 1}}));

  // empty word is the unit
  CHECK(shuffle(Word(), oracles::word_of_labels({1, 2})) == tensor_of({{"1|2", 1}}));
}

TEST_CASE("shuffle equals brute-force interleaving and has binomial mass") {
  Rng rng(91);
  const auto random_word = [&](int len, int max_label) {
    std::vector<int> ls;
    for (int i = 0; i < len; ++i)
      ls.push_back(1 + static_cast<int>(rng.bits() % static_cast<unsigned>(max_label)));
    return oracles::word_of_labels(ls);
  };
  const auto binom = [](int n, int k) {
    long long v = 1;
    for (int i = 1; i <= k; ++i) v = v * (n - k + i) / i;
    return v;
  };
  for (int trial = 0; trial < 20; ++trial) {
    const int lu = static_cast<int>(rng.bits() % 4);
    const int lv = static_cast<int>(rng.bits() % 4);
    const Word u = random_word(lu, 3), v = random_word(lv, 3);
    const TensorSum s = shuffle(u, v);
    std::map<std::string, long long> got;
    long long mass = 0;
    for (const auto& [w, c] : s) {
      got[w.key()] = c;
      mass += c;
    }
    CHECK(got == oracles::brute_shuffle(u, v));
    CHECK(mass == binom(lu + lv, lu));
  }
}

TEST_CASE("shuffle is commutative and associative") {
  Rng rng(17);
  const auto random_word = [&](int len) {
    std::vector<Tree> ls;
    const std::vector<Tree> alphabet{Tree(1), Tree(2), Tree(2, {Tree(1)})};
    for (int i = 0; i < len; ++i) ls.push_back(alphabet[rng.bits() % alphabet.size()]);
    return Word(ls);
  };
  for (int trial = 0; trial < 12; ++trial) {
    const Word u = random_word(static_cast<int>(rng.bits() % 3));
    const Word v = random_word(static_cast<int>(rng.bits() % 3));
    const Word w = random_word(static_cast<int>(rng.bits() % 3));
    CHECK(shuffle(u, v) == shuffle(v, u));
    TensorSum su;
    su[u] = 1;
    CHECK(shuffle(shuffle(u, v), TensorSum{{w, 1}}) == shuffle(su, shuffle(v, w)));
  }
}

TEST_CASE("deconcatenation lists every split in order") {
  const auto empty = deconcatenate(Word());
  REQUIRE(empty.size() == 1);
  CHECK(empty[0].first.empty());
  CHECK(empty[0].second.empty());

  const Word w = oracles::word_of_labels({1, 2});
  const auto splits = deconcatenate(w);
  REQUIRE(splits.size() == 3);
  CHECK(splits[0].first.key() == "");
  CHECK(splits[0].second.key() == "1|2");
  CHECK(splits[1].first.key() == "1");
  CHECK(splits[1].second.key() == "2");
  CHECK(splits[2].first.key() == "1|2");
  CHECK(splits[2].second.key() == "");

  for (int len = 0; len <= 4; ++len) {
    std::vector<int> ls(static_cast<std::size_t>(len), 1);
    CHECK(deconcatenate(oracles::word_of_labels(ls)).size() == static_cast<std::size_t>(len) + 1);
  }
}

TEST_CASE("tree-to-word morphism on the four worked expansions") {
  CHECK(psi(Tree(1)) == tensor_of({{"1", 1}}));
  CHECK(psi(parse_tree("2(1)")) == tensor_of({{"2(1)", 1}, {"1|2", 1}}));
  CHECK(psi(parse_tree("3(1,2)")) == tensor_of({{"3(1,2)", 1},
                                                {"1|3(2)", 1},
                                                {"2|3(1)", 1},
                                                {"2|1|3", 1},
                                                {"1|2|3", 1}}));
  CHECK(psi(parse_tree("3(2(1))")) == tensor_of({{"3(2(1))", 1},
                                                 {"1|3(2)", 1},
                                                 {"2(1)|3", 1},
                                                 {"1|2|3", 1}}));
  // unit forest maps to the empty word
  CHECK(psi(Forest()) == tensor_of({{"", 1}}));
}

TEST_CASE("repeated decorations merge coefficients") {
  CHECK(psi(parse_tree("2(1,1)")) ==
        tensor_of({{"2(1,1)", 1}, {"1|2(1)", 2}, {"1|1|2", 2}}));
}

TEST_CASE("morphism respects the forest product") {
  const auto fs = small_forests(3, 2);
  for (const Forest& f : fs)
    for (const Forest& g : fs) {
      if (f.nodes() + g.nodes() > 5) continue;
      CHECK(psi(f * g) == shuffle(psi(f), psi(g)));
    }
}

TEST_CASE("morphism intertwines coproduct and deconcatenation") {
  // (psi (x) psi) of the coproduct vs all length-splits of psi, per tree
  using PairSum = std::map<std::pair<std::string, std::string>, long long>;
  for (int n = 1; n <= 4; ++n)
    for (const Tree& h : enumerate_trees(n, 2)) {
      PairSum lhs;
      for (const auto& [pair, c] : coproduct(h))
        for (const auto& [w1, c1] : psi(pair.first))
          for (const auto& [w2, c2] : psi(pair.second)) {
            const auto key = std::make_pair(w1.key(), w2.key());
            lhs[key] += c * c1 * c2;
            if (lhs[key] == 0) lhs.erase(key);
          }
      PairSum rhs;
      for (const auto& [w, c] : psi(h))
        for (const auto& [pre, suf] : deconcatenate(w)) {
          const auto key = std::make_pair(pre.key(), suf.key());
          rhs[key] += c;
          if (rhs[key] == 0) rhs.erase(key);
        }
      CHECK(lhs == rhs);
    }
}

TEST_CASE("morphism is graded with unit leading term") {
  for (int n = 1; n <= 4; ++n)
    for (const Tree& h : enumerate_trees(n, 2)) {
      const TensorSum s = psi(h);
      bool found_leading = false;
      for (const auto& [w, c] : s) {
        CHECK(w.degree() == n);
        if (w.length() == 1 && w.letters()[0] == h) {
          CHECK(c == 1);
          found_leading = true;
        }
      }
      CHECK(found_leading);
    }
}

TEST_CASE("formatted output is tab-separated and sorted") {
  CHECK(format_tensor_sum(psi(parse_tree("2(1)"))) == "1\t1|2\n1\t2(1)\n");
  const std::string split = format_split_sum(reduced_coproduct(parse_forest("2(1)")));
  CHECK(split == "1\t1\t2\n");
}
