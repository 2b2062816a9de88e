// Acceptance harness: one PASS/FAIL line per criterion, exit code = number of
// failed criteria. Tolerances are pinned here, next to each check.
#include <sys/wait.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "branchsig/extend.hpp"
#include "branchsig/hopf.hpp"
#include "branchsig/models.hpp"
#include "branchsig/sigcore.hpp"
#include "branchsig/trees.hpp"
#include "branchsig/util.hpp"
#include "oracles.hpp"

using namespace branchsig;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

struct MeanSe {
  double mean = 0.0, se = 0.0;
};

MeanSe mean_se(const std::vector<double>& xs) {
  double m = 0.0;
  for (double x : xs) m += x;
  m /= static_cast<double>(xs.size());
  double v = 0.0;
  for (double x : xs) v += (x - m) * (x - m);
  v /= static_cast<double>(xs.size() - 1);
  return {m, std::sqrt(v / static_cast<double>(xs.size()))};
}

template <class M>
M drop_zeros(M m) {
  for (auto it = m.begin(); it != m.end();)
    it = (it->second == 0) ? m.erase(it) : std::next(it);
  return m;
}

// ---------------- criterion 1: word expansions of psi ----------------

bool crit1(std::string& detail) {
  const auto t0 = Clock::now();
  bool ok = true;
  int cases = 0;
  for (int a = 1; a <= 3; ++a) {
    {
      TensorSum want{{Word({Tree(a)}), 1}};
      ok = ok && drop_zeros(psi(Tree(a))) == want;
      ++cases;
    }
    for (int b = 1; b <= 3; ++b) {
      const Tree t2(b, {Tree(a)});
      TensorSum want;
      want[Word({t2})] += 1;
      want[Word({Tree(a), Tree(b)})] += 1;
      ok = ok && drop_zeros(psi(t2)) == drop_zeros(want);
      ++cases;
      for (int c = 1; c <= 3; ++c) {
        // cherry: 5 terms before repeated-decoration merging
        const Tree cherry(c, {Tree(a), Tree(b)});
        TensorSum wc;
        wc[Word({cherry})] += 1;
        wc[Word({Tree(a), Tree(c, {Tree(b)})})] += 1;
        wc[Word({Tree(b), Tree(c, {Tree(a)})})] += 1;
        wc[Word({Tree(a), Tree(b), Tree(c)})] += 1;
        wc[Word({Tree(b), Tree(a), Tree(c)})] += 1;
        ok = ok && drop_zeros(psi(cherry)) == drop_zeros(wc);
        ++cases;

        // chain: 4 terms
        const Tree chain(c, {Tree(b, {Tree(a)})});
        TensorSum wn;
        wn[Word({chain})] += 1;
        wn[Word({Tree(b, {Tree(a)}), Tree(c)})] += 1;
        wn[Word({Tree(a), Tree(c, {Tree(b)})})] += 1;
        wn[Word({Tree(a), Tree(b), Tree(c)})] += 1;
        ok = ok && drop_zeros(psi(chain)) == drop_zeros(wn);
        ++cases;
      }
    }
  }
  const double dt = since(t0);
  detail = "leaf/pair/cherry/chain expansions, " + std::to_string(cases) +
           " decoration cases exact, " + fmt(dt) + "s (limit 1s)";
  return ok && dt < 1.0;
}

// ---------------- criterion 2: exhaustive Hopf and morphism laws ----------------

SplitSum split_mul(const SplitSum& a, const SplitSum& b) {
  SplitSum out;
  for (const auto& [p1, c1] : a)
    for (const auto& [p2, c2] : b)
      out[{p1.first * p2.first, p1.second * p2.second}] += c1 * c2;
  return out;
}

bool crit2(std::string& detail) {
  const auto t0 = Clock::now();
  std::vector<std::vector<Forest>> by_nodes(6);
  by_nodes[0] = {Forest()};
  for (int n = 1; n <= 5; ++n) by_nodes[static_cast<std::size_t>(n)] = enumerate_forests(n, {1, 2});

  bool ok = true;
  long checks = 0;

  using Triple = std::array<std::string, 3>;
  for (int n = 0; n <= 5; ++n)
    for (const Forest& f : by_nodes[static_cast<std::size_t>(n)]) {
      const SplitSum cp = coproduct(f);

      // coassociativity
      std::map<Triple, long long> left, right;
      for (const auto& [pr, c] : cp) {
        for (const auto& [qq, c2] : coproduct(pr.first))
          left[{qq.first.key(), qq.second.key(), pr.second.key()}] += c * c2;
        for (const auto& [qq, c2] : coproduct(pr.second))
          right[{pr.first.key(), qq.first.key(), qq.second.key()}] += c * c2;
      }
      ok = ok && drop_zeros(left) == drop_zeros(right);

      // counit on both sides
      HopfSum lc, rc;
      for (const auto& [pr, c] : cp) {
        if (pr.first.empty()) lc[pr.second] += c;
        if (pr.second.empty()) rc[pr.first] += c;
      }
      const HopfSum self{{f, 1}};
      ok = ok && drop_zeros(lc) == self && drop_zeros(rc) == self;

      // antipode axiom on both sides
      HopfSum conv_l, conv_r;
      for (const auto& [pr, c] : cp) {
        for (const auto& [g, c2] : antipode(pr.first)) conv_l[g * pr.second] += c * c2;
        for (const auto& [g, c2] : antipode(pr.second)) conv_r[pr.first * g] += c * c2;
      }
      const HopfSum eps = f.empty() ? HopfSum{{Forest(), 1}} : HopfSum{};
      ok = ok && drop_zeros(conv_l) == eps && drop_zeros(conv_r) == eps;

      // psi is a coalgebra morphism into the deconcatenation coalgebra
      std::map<std::pair<std::string, std::string>, long long> dl, dr;
      for (const auto& [w, c] : psi(f))
        for (const auto& [u, v] : deconcatenate(w)) dl[{u.key(), v.key()}] += c;
      for (const auto& [pr, c] : cp)
        for (const auto& [w1, c1] : psi(pr.first))
          for (const auto& [w2, c2] : psi(pr.second)) dr[{w1.key(), w2.key()}] += c * c1 * c2;
      ok = ok && drop_zeros(dl) == drop_zeros(dr);

      checks += 5;
    }

  // pairwise laws: coproduct multiplicativity and psi as algebra morphism
  for (int i = 1; i + 1 <= 5; ++i)
    for (int j = i; i + j <= 5; ++j)
      for (std::size_t fi = 0; fi < by_nodes[static_cast<std::size_t>(i)].size(); ++fi)
        for (std::size_t gi = (i == j ? fi : 0); gi < by_nodes[static_cast<std::size_t>(j)].size();
             ++gi) {
          const Forest& f = by_nodes[static_cast<std::size_t>(i)][fi];
          const Forest& g = by_nodes[static_cast<std::size_t>(j)][gi];
          const Forest fg = f * g;
          ok = ok && drop_zeros(coproduct(fg)) == drop_zeros(split_mul(coproduct(f), coproduct(g)));
          ok = ok && drop_zeros(psi(fg)) == drop_zeros(shuffle(psi(f), psi(g)));
          checks += 2;
        }

  const double dt = since(t0);
  detail = "coassociativity/counit/antipode/psi laws, all forests <=5 nodes d=2, " +
           std::to_string(checks) + " exact checks, " + fmt(dt) + "s (limit 60s)";
  return ok && dt < 60.0;
}

// ---------------- criteria 3 and 4: shuffle identity, Chen identity ----------------

std::vector<Word> words_up_to(int maxlen, int d) {
  std::vector<Word> out;
  std::vector<std::vector<std::vector<Tree>>> by_len(static_cast<std::size_t>(maxlen) + 1);
  by_len[0] = {{}};
  for (int l = 1; l <= maxlen; ++l)
    for (const auto& shorter : by_len[static_cast<std::size_t>(l - 1)])
      for (int a = 1; a <= d; ++a) {
        auto next = shorter;
        next.push_back(Tree(a));
        by_len[static_cast<std::size_t>(l)].push_back(next);
        out.emplace_back(std::move(next));
      }
  return out;
}

bool crit3(std::string& detail) {
  const std::vector<Word> words = words_up_to(2, 3);
  double worst = 0.0;
  for (int seed = 1; seed <= 50; ++seed) {
    Rng rng(static_cast<std::uint64_t>(seed));
    const SampledPath p = oracles::random_pl_path(3, 64, rng);
    const TruncatedSignature s = sig_chen(p, 3);
    for (const Word& u : words)
      for (const Word& v : words) {
        if (u.length() + v.length() > 3) continue;
        const double lhs = s.word_value(u) * s.word_value(v);
        double rhs = 0.0;
        for (const auto& [w, c] : shuffle(u, v))
          rhs += static_cast<double>(c) * s.word_value(w);
        const double rel =
            std::fabs(lhs - rhs) / std::max({1.0, std::fabs(lhs), std::fabs(rhs)});
        worst = std::max(worst, rel);
      }
  }
  detail = "50 paths d=3 level 3, max relative violation " + fmt(worst) + " (tol 1e-9)";
  return worst <= 1e-9;
}

bool crit4(std::string& detail) {
  double worst = 0.0;
  for (int seed = 1; seed <= 50; ++seed) {
    Rng rng(static_cast<std::uint64_t>(seed));
    const SampledPath p = oracles::random_pl_path(3, 64, rng);
    const std::size_t mid = p.points() / 2;
    const auto slice = [&p](std::size_t from, std::size_t to) {
      std::vector<double> t(p.times.begin() + static_cast<long>(from),
                            p.times.begin() + static_cast<long>(to) + 1);
      std::vector<double> v(p.values.begin() + static_cast<long>(from * 3),
                            p.values.begin() + static_cast<long>((to + 1) * 3));
      return SampledPath(std::move(t), std::move(v), p.channel_labels);
    };
    const TruncatedSignature whole = sig_chen(p, 3);
    const TruncatedSignature glued =
        chen_concat(sig_chen(slice(0, mid), 3), sig_chen(slice(mid, p.points() - 1), 3));
    const auto we = whole.entries();
    const auto ge = glued.entries();
    for (std::size_t i = 0; i < we.size(); ++i)
      worst = std::max(worst, std::fabs(we[i].second - ge[i].second));
  }
  detail = "split-concatenation vs whole on the same corpus, max defect " + fmt(worst) +
           " (tol 1e-12)";
  return worst <= 1e-12;
}

// ---------------- criterion 5: quadrature oracle and Chen comparison ----------------

bool crit5(std::string& detail) {
  const SampledPath p = oracles::smooth_path_2d(10000);
  const BranchedSignature bs = bsig(p, 3);
  double worst = 0.0;
  for (int n = 1; n <= 3; ++n)
    for (const Tree& t : enumerate_trees(n, {1, 2}))
      worst = std::max(worst,
                       std::fabs(bs.tree_value(t) - oracles::tree_prefix_leftpoint(t, p).back()));

  // chain trees are words: left-point tree sums vs piecewise-linear Chen
  // integrals differ at first order, so halving the step contracts the gap
  const auto chen_defect = [](std::size_t n) {
    const SampledPath q = oracles::smooth_path_2d(n);
    const BranchedSignature b = bsig(q, 3);
    const TruncatedSignature s = sig_chen(q, 3);
    double d = 0.0;
    for (const Word& w : words_up_to(3, 2)) {
      Tree chain = w.letters().front();
      for (std::size_t i = 1; i < w.letters().size(); ++i)
        chain = Tree(w.letters()[i].label(), {chain});
      d = std::max(d, std::fabs(b.tree_value(chain) - s.word_value(w)));
    }
    return d;
  };
  const double coarse = chen_defect(5000), fine = chen_defect(10000);
  const double ratio = coarse / fine;
  detail = "quadrature gap " + fmt(worst) + " (tol 1e-5); Chen-defect contraction " + fmt(ratio) +
           "x (need >=1.5)";
  return worst <= 1e-5 && ratio >= 1.5;
}

// ---------------- criterion 6: left-point second level of Brownian motion ----------------

bool crit6(std::string& detail) {
  const Word w11({Tree(1), Tree(1)});
  std::vector<double> diffs;
  for (int seed = 0; seed < 1000; ++seed) {
    const SampledPath p = sample_bm(1, 500, 1.0, 10000 + static_cast<std::uint64_t>(seed));
    const TruncatedSignature s = sig_ito(p, 2);
    const double bt = p.values.back();
    diffs.push_back(s.word_value(w11) - (bt * bt / 2.0 - 0.5));
  }
  const MeanSe ms = mean_se(diffs);
  detail = "1000 paths, mean defect " + fmt(ms.mean) + " vs 4 SE = " + fmt(4.0 * ms.se);
  return std::fabs(ms.mean) <= 4.0 * ms.se;
}

// ---------------- criterion 7: pairing residual of the Brownian extension ----------------

bool crit7(std::string& detail) {
  const int seeds = 100;
  double fine_acc = 0.0, coarse_acc = 0.0;
  long fine_n = 0, coarse_n = 0;
  for (int s = 0; s < seeds; ++s) {
    const SampledPath fine = sample_bm(1, 4000, 1.0, 20000 + static_cast<std::uint64_t>(s));
    std::vector<double> t, v;
    for (std::size_t i = 0; i < fine.points(); i += 2) {
      t.push_back(fine.times[i]);
      v.push_back(fine.values[i]);
    }
    const SampledPath coarse(t, v, {1});
    for (const auto& [tree, r] : hk_residual(fine, extend_bm(fine), 2))
      if (tree.size() == 2) {
        fine_acc += std::fabs(r);
        ++fine_n;
      }
    for (const auto& [tree, r] : hk_residual(coarse, extend_bm(coarse), 2))
      if (tree.size() == 2) {
        coarse_acc += std::fabs(r);
        ++coarse_n;
      }
  }
  const double fine_mean = fine_acc / static_cast<double>(fine_n);
  const double ratio = (coarse_acc / static_cast<double>(coarse_n)) / fine_mean;
  detail = "mean two-node residual " + fmt(fine_mean) + " (tol 0.02), contraction " + fmt(ratio) +
           "x (need >=1.3)";
  return fine_mean <= 0.02 && ratio >= 1.3;
}

// ---------------- criterion 8: fbm covariance structure ----------------

bool crit8(std::string& detail) {
  bool ok = true;
  std::string var_part;
  for (const double hurst : {0.1, 0.5}) {
    const FbmSpec spec{hurst, 1.0, 32, 1, {}};
    double var = 0.0;
    for (int s = 0; s < 10000; ++s) {
      const double x = sample_fbm(spec, 30000 + static_cast<std::uint64_t>(s)).path.values.back();
      var += x * x;
    }
    var /= 10000.0;
    ok = ok && std::fabs(var - 1.0) <= 0.05;  // T = 1, so T^{2H} = 1
    var_part += " Var(H=" + fmt(hurst) + ")=" + fmt(var);
  }

  const double hurst = 0.1;
  const long steps = 64;
  const double dt = 1.0 / static_cast<double>(steps);
  const FbmSpec spec{hurst, 1.0, steps, 1, {}};
  double worst_z = 0.0;
  for (const long lag : {1L, 2L}) {
    std::vector<double> prods;
    for (int s = 0; s < 8000; ++s) {
      const SampledPath p = sample_fbm(spec, 40000 + static_cast<std::uint64_t>(s)).path;
      for (long i = 0; i + lag + 1 <= steps; i += 2 * lag + 1) {
        const double a =
            p.values[static_cast<std::size_t>(i + 1)] - p.values[static_cast<std::size_t>(i)];
        const double b = p.values[static_cast<std::size_t>(i + lag + 1)] -
                         p.values[static_cast<std::size_t>(i + lag)];
        prods.push_back(a * b);
      }
    }
    const MeanSe ms = mean_se(prods);
    const double k = static_cast<double>(lag);
    const double want = 0.5 *
                        (std::pow(k + 1, 2 * hurst) - 2 * std::pow(k, 2 * hurst) +
                         std::pow(k - 1, 2 * hurst)) *
                        std::pow(dt, 2 * hurst);
    worst_z = std::max(worst_z, std::fabs(ms.mean - want) / ms.se);
  }
  ok = ok && worst_z <= 4.0;
  detail = "terminal variance within 5% (" + var_part + " ); autocovariance max |z| = " +
           fmt(worst_z) + " (need <=4)";
  return ok;
}

// ---------------- criterion 9: iterated low-level composition ----------------

bool crit9(std::string& detail) {
  // classical: a level-2 functional of a level-2 functional against the
  // binomial expansion in direct level-4 entries
  const double alpha = 1.3, beta = -0.7;
  const SampledPath p = oracles::smooth_path_1d(500);
  SigModelCoeffs first, second;
  first.level = 2;
  first.weights = {{"1", alpha}, {"1|1", beta}};
  second.level = 2;
  second.weights = {{"1|1", 1.0}};
  const double got = iterate_sig_model({first, second}, p).values.back();
  const TruncatedSignature s = sig_chen(p, 4);
  const double want = alpha * alpha * s.word_value(parse_word("1|1")) +
                      3.0 * alpha * beta * s.word_value(parse_word("1|1|1")) +
                      3.0 * beta * beta * s.word_value(parse_word("1|1|1|1"));
  const double classical = std::fabs(got - want) / std::max(1.0, std::fabs(want));

  // branched: trees of a reconstructed channel match grafted trees of the
  // original path
  Rng rng(321);
  const SampledPath q = oracles::random_pl_path(2, 150, rng);
  double branched = 0.0;
  {
    SigModelCoeffs pick2;
    pick2.level = 1;
    pick2.weights = {{"2", 1.0}};
    const SampledPath phi = bsig_model_eval(pick2, q);
    const BranchedSignature outer = bsig(phi, 3);
    const BranchedSignature direct = bsig(q, 3);
    for (const auto& [inner, full] : std::vector<std::pair<const char*, const char*>>{
             {"1(1)", "2(2)"}, {"1(1(1))", "2(2(2))"}, {"1(1,1)", "2(2,2)"}}) {
      const double lhs = outer.tree_value(parse_tree(inner));
      const double rhs = direct.tree_value(parse_tree(full));
      branched = std::max(branched, std::fabs(lhs - rhs) / std::max(1.0, std::fabs(rhs)));
    }
  }
  {
    SigModelCoeffs graft;
    graft.level = 2;
    graft.weights = {{"1(2)", 1.0}};
    const SampledPath phi = bsig_model_eval(graft, q);
    const double lhs = bsig(phi, 2).tree_value(parse_tree("1(1)"));
    const double rhs = bsig(q, 4).tree_value(parse_tree("1(1(2),2)"));
    branched = std::max(branched, std::fabs(lhs - rhs) / std::max(1.0, std::fabs(rhs)));
  }
  detail = "classical rel gap " + fmt(classical) + " (tol 1e-8); branched rel gap " +
           fmt(branched) + " (tol 1e-10)";
  return classical <= 1e-8 && branched <= 1e-10;
}

// ---------------- criterion 10: loss gradient ----------------

bool crit10(std::string& detail) {
  const SampledPath drivers = sample_bm(2, 31, 1.0, 41);  // 32 grid points
  const SampledPath input = time_extend(drivers);
  std::vector<double> target(input.points());
  for (std::size_t i = 0; i < target.size(); ++i)
    target[i] = std::sin(3.0 * input.times[i]) + 0.2;
  ExtensionModel model = init_extension_model(3, {4, 3}, 2, 99);
  std::vector<double> grad;
  extension_loss(model, input, target, 0.7, 0.4, &grad);
  const double h = 1e-5;
  double worst = 0.0;
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    const double save = model.params[i];
    model.params[i] = save + h;
    const double up = extension_loss(model, input, target, 0.7, 0.4, nullptr).total;
    model.params[i] = save - h;
    const double dn = extension_loss(model, input, target, 0.7, 0.4, nullptr).total;
    model.params[i] = save;
    const double num = (up - dn) / (2.0 * h);
    worst = std::max(worst, std::fabs(num - grad[i]) /
                                std::max({1.0, std::fabs(num), std::fabs(grad[i])}));
  }
  detail = std::to_string(model.params.size()) + " parameters, worst relative error " +
           fmt(worst) + " (tol 1e-4)";
  return worst < 1e-4;
}

// ---------------- criterion 11: calibration ordering ----------------

bool crit11(std::string& detail) {
  const auto t0 = Clock::now();
  double vw = 0.0, vo = 0.0, sw = 0.0, so = 0.0, sh = 0.0;
  for (const std::uint64_t seed : {1, 2, 3}) {
    CalibrationConfig cfg;
    cfg.sim.steps = 1000;
    cfg.sim.hurst = 0.1;
    cfg.sim.seed = seed;
    cfg.train.seed = seed;
    cfg.train.epochs = 500;  // <= 2000
    const CalibrationReport rep = calibrate(cfg);
    vw += rep.mse_vol_with / 3.0;
    vo += rep.mse_vol_without / 3.0;
    sw += rep.mse_stock_with / 3.0;
    so += rep.mse_stock_without / 3.0;
    sh += rep.shuffle_mse / 3.0;
  }
  const double dt = since(t0);
  detail = "3 seeds: vol MSE " + fmt(vw) + " < " + fmt(vo) + ", stock MSE " + fmt(sw) + " < " +
           fmt(so) + ", shuffle mean " + fmt(sh) + " (tol 5e-2), " + fmt(dt) + "s (limit 600s)";
  return vw < vo && sw < so && sh <= 5e-2 && dt < 600.0;
}

// ---------------- criterion 12: bitwise determinism of the experiment ----------------

std::string slurp(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) return "<unreadable:" + file.string() + ">";
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool crit12(std::string& detail) {
  namespace fs = std::filesystem;
  const fs::path dir = "acceptance_scratch";
  fs::create_directories(dir);
  const std::string base = std::string(BRANCHSIG_CLI) +
                           " calibrate --steps 200 --epochs 50 --widths 8,4 --channels 3"
                           " --seed 5 --outdir ";
  const fs::path a = dir / "runA", b = dir / "runB";
  const int ra = std::system((base + "'" + a.string() + "' >/dev/null").c_str());
  const int rb = std::system((base + "'" + b.string() + "' >/dev/null").c_str());
  const bool ran = ra != -1 && rb != -1 && WIFEXITED(ra) && WEXITSTATUS(ra) == 0 &&
                   WIFEXITED(rb) && WEXITSTATUS(rb) == 0;
  const bool report_same = ran && slurp(a / "report.json") == slurp(b / "report.json");
  const bool losses_same = ran && slurp(a / "losses.csv") == slurp(b / "losses.csv");
  detail = std::string("two seeded runs: report.json ") +
           (report_same ? "identical" : "DIFFER") + ", loss history " +
           (losses_same ? "identical" : "DIFFER");
  return ran && report_same && losses_same;
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<bool(std::string&)> fn;
  };
  const std::vector<Criterion> criteria = {
      {"psi worked expansions (d=3, exact)", crit1},
      {"Hopf axiom and morphism suite (forests <=5, d=2, exact)", crit2},
      {"shuffle identity of the Chen signature", crit3},
      {"Chen split-concatenation identity", crit4},
      {"branched signature vs quadrature oracle", crit5},
      {"left-point Brownian second level defect", crit6},
      {"Brownian extension pairing residual", crit7},
      {"fbm variance and increment autocovariance", crit8},
      {"iterated low-level signature composition", crit9},
      {"training loss gradient vs finite differences", crit10},
      {"calibration MSE ordering with learned extension", crit11},
      {"bitwise-deterministic seeded experiment", crit12},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    std::string detail;
    bool pass = false;
    try {
      pass = criteria[i].fn(detail);
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    if (!pass) ++failures;
    std::printf("%s  criterion %2zu  %s — %s\n", pass ? "PASS" : "FAIL", i + 1,
                criteria[i].name, detail.c_str());
    std::fflush(stdout);
  }
  return failures;
}
