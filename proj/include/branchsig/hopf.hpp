#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "branchsig/trees.hpp"

namespace branchsig {

// Integer-coefficient sums; all Hopf-algebra structure maps here are exact.
using HopfSum = std::map<Forest, long long>;
using SplitSum = std::map<std::pair<Forest, Forest>, long long>;  // f (1) (x) f (2)
using TensorSum = std::map<Word, long long>;

// Coproduct by root cuts: unit -> unit (x) unit, trees by the recursion
// D[h1..hn]_r = [h1..hn]_r (x) 1 + (Id (x) [.]_r) D(h1...hn),
// multiplicative over forest factors. Right factors of tree terms are trees.
SplitSum coproduct(const Tree& t);
SplitSum coproduct(const Forest& f);

// D'f = Df - f (x) 1 - 1 (x) f; rejects the unit forest.
SplitSum reduced_coproduct(const Forest& f);

// Antipode: A(1) = 1, A(f) = -f - sum A(f(1)) f(2) over D'f.
HopfSum antipode(const Forest& f);

// Shuffle product with multiplicities; mass of u shuffle v is C(|u|+|v|,|u|).
TensorSum shuffle(const Word& u, const Word& v);
TensorSum shuffle(const TensorSum& a, const TensorSum& b);

// All length-splits of w, (prefix,suffix), |w|+1 of them, outer ones empty.
std::vector<std::pair<Word, Word>> deconcatenate(const Word& w);

// Tree-to-word morphism: psi(h) = h + sum psi(h(1)) (x) h(2) over D'h with the
// right factor consumed as a single letter (checked to be a tree at runtime);
// extended to forests by psi(f g) = psi(f) shuffle psi(g).
TensorSum psi(const Tree& t);
TensorSum psi(const Forest& f);

// "<coeff>\t<WORD>" lines sorted by (degree, serialization), zero terms dropped.
std::string format_tensor_sum(const TensorSum& s);
// "<coeff>\t<FOREST>\t<FOREST>" lines; the unit forest prints as the empty string.
std::string format_split_sum(const SplitSum& s);

}  // namespace branchsig
