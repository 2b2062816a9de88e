#pragma once

#include <string>
#include <vector>

namespace branchsig {

// Decorated rooted tree with unordered children, kept in canonical form:
// children sorted ascending by their serialized strings, recursively.
// Serialization: LABEL or LABEL "(" child ("," child)* ")", no whitespace.
// Immutable after construction; the canonical string doubles as identity.
class Tree {
 public:
  explicit Tree(int label);                       // single node
  Tree(int label, std::vector<Tree> children);    // graft children under a new root
  int label() const { return label_; }
  const std::vector<Tree>& children() const { return children_; }
  int size() const { return size_; }              // node count
  const std::string& key() const { return key_; }

  bool operator==(const Tree& o) const { return key_ == o.key_; }
  bool operator!=(const Tree& o) const { return key_ != o.key_; }
  // enumeration order: node count first, then serialization
  bool operator<(const Tree& o) const {
    if (size_ != o.size_) return size_ < o.size_;
    return key_ < o.key_;
  }

 private:
  int label_;
  std::vector<Tree> children_;
  int size_;
  std::string key_;
};

// Commutative monomial of trees; the empty forest is the unit.
// Factors sorted by Tree ordering so equal forests compare equal by key.
class Forest {
 public:
  Forest() = default;
  explicit Forest(Tree t);
  explicit Forest(std::vector<Tree> trees);

  bool empty() const { return trees_.empty(); }
  int factors() const { return static_cast<int>(trees_.size()); }
  int nodes() const;
  const std::vector<Tree>& trees() const { return trees_; }
  std::string key() const;  // "t1*t2*..." or "" for the unit

  Forest operator*(const Forest& o) const;
  Forest operator*(const Tree& t) const;

  bool operator==(const Forest& o) const;
  bool operator<(const Forest& o) const;  // (nodes, key)

 private:
  std::vector<Tree> trees_;
};

// Tensor word whose letters are trees, serialized "t1|t2|...".
// Degree grades by total node count, not letter count.
class Word {
 public:
  Word() = default;
  explicit Word(std::vector<Tree> letters) : letters_(std::move(letters)) {}

  bool empty() const { return letters_.empty(); }
  int length() const { return static_cast<int>(letters_.size()); }
  int degree() const;
  const std::vector<Tree>& letters() const { return letters_; }
  std::string key() const;

  Word append(const Tree& t) const;

  bool operator==(const Word& o) const { return key() == o.key(); }
  bool operator<(const Word& o) const;  // (degree, key)

 private:
  std::vector<Tree> letters_;
};

std::string to_string(const Tree& t);
std::string to_string(const Forest& f);
std::string to_string(const Word& w);

// Parsers for the exact grammar; reject whitespace, signs, empty children
// lists and trailing garbage with the byte offset of the failure.
Tree parse_tree(const std::string& s);
Forest parse_forest(const std::string& s);  // "" is the unit forest
Word parse_word(const std::string& s);

// All canonical trees with exactly n nodes over the given decoration labels,
// sorted in enumeration order. Labels must be distinct and >= 0.
std::vector<Tree> enumerate_trees(int n, const std::vector<int>& labels);
std::vector<Tree> enumerate_trees(int n, int d, int first_label = 1);

// All canonical forests with exactly n nodes (n >= 1) over the given labels.
std::vector<Forest> enumerate_forests(int n, const std::vector<int>& labels);

}  // namespace branchsig
