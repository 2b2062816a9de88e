// branchsig: command-line front end over the C API. File formats:
//   paths      CSV, header "t,<name>,...", channels labeled 1..d by position
//   matrices   headerless numeric CSV (e.g. --rho correlation files)
//   tables     JSON objects, insertion order = library order
// Every file-writing command drops "<out>.manifest.json" beside its output;
// stdout-only commands take --manifest to request one.

#include <openssl/evp.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "branchsig.h"
#include "json.hpp"

using json = nlohmann::ordered_json;

namespace {

[[noreturn]] void die(int code, const std::string& msg) {
  std::cerr << "error: " << msg << "\n";
  std::exit(code);
}

// C-API failures: numeric trouble exits 2, everything else is an input error
void check(bs_status st) {
  if (st == BS_OK) return;
  die(st == BS_ENUMERIC ? 2 : 1, bs_last_error());
}

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct PathHandle {
  bs_path* h = nullptr;
  ~PathHandle() { bs_path_free(h); }
};
struct ExtHandle {
  bs_ext* h = nullptr;
  ~ExtHandle() { bs_ext_free(h); }
};
struct TableHandle {
  bs_table* h = nullptr;
  ~TableHandle() { bs_table_free(h); }
};
struct CalibHandle {
  bs_calib* h = nullptr;
  ~CalibHandle() { bs_calib_free(h); }
};

// ---- CSV ----

struct Csv {
  std::vector<std::string> names;  // per channel, time column excluded
  std::vector<double> times;
  std::vector<double> values;  // row-major points x dim
  size_t points = 0;
  int dim = 0;
};

// minimal RFC-4180 split: quoted cells may hold commas and doubled quotes
std::vector<std::string> split_csv_line(const std::string& line, size_t lineno) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"' && cur.empty()) {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted) die(1, "line " + std::to_string(lineno) + ": unterminated quote");
  cells.push_back(cur);
  return cells;
}

std::string quote_csv_cell(const std::string& s) {
  if (s.find_first_of(",\"") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

double parse_cell(const std::string& cell, size_t lineno) {
  try {
    size_t pos = 0;
    const double v = std::stod(cell, &pos);
    while (pos < cell.size() && std::isspace(static_cast<unsigned char>(cell[pos]))) ++pos;
    if (pos != cell.size()) throw std::invalid_argument(cell);
    return v;
  } catch (const std::exception&) {
    die(1, "line " + std::to_string(lineno) + ": non-numeric cell '" + cell + "'");
  }
}

Csv read_csv(const std::string& file) {
  std::ifstream in(file);
  if (!in) die(1, "cannot open '" + file + "'");
  Csv csv;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells = split_csv_line(line, lineno);
    if (lineno == 1) {
      if (cells.size() < 2 || cells[0] != "t")
        die(1, "line 1: header must be t,<name>,...");
      csv.names.assign(cells.begin() + 1, cells.end());
      csv.dim = static_cast<int>(csv.names.size());
      continue;
    }
    if (cells.size() != csv.names.size() + 1)
      die(1, "line " + std::to_string(lineno) + ": expected " +
                 std::to_string(csv.names.size() + 1) + " cells, got " +
                 std::to_string(cells.size()));
    const double t = parse_cell(cells[0], lineno);
    if (!csv.times.empty() && !(t > csv.times.back()))
      die(1, "line " + std::to_string(lineno) + ": time not increasing");
    csv.times.push_back(t);
    for (size_t c = 1; c < cells.size(); ++c) csv.values.push_back(parse_cell(cells[c], lineno));
  }
  if (csv.dim == 0) die(1, "'" + file + "' has no header");
  if (csv.times.empty()) die(1, "'" + file + "' has no data rows");
  csv.points = csv.times.size();
  return csv;
}

void write_csv(const std::string& file, const std::vector<std::string>& names, size_t points,
               int dim, const double* times, const double* values) {
  std::ofstream out(file);
  if (!out) die(1, "cannot write '" + file + "'");
  out << "t";
  for (const std::string& n : names) out << "," << quote_csv_cell(n);
  out << "\n";
  for (size_t i = 0; i < points; ++i) {
    out << fmt17(times[i]);
    for (int c = 0; c < dim; ++c) out << "," << fmt17(values[i * static_cast<size_t>(dim) + c]);
    out << "\n";
  }
  if (!out) die(1, "write to '" + file + "' failed");
}

PathHandle path_from_csv(const std::string& file) {
  const Csv csv = read_csv(file);
  std::vector<int> labels;
  for (int c = 1; c <= csv.dim; ++c) labels.push_back(c);
  PathHandle p;
  check(bs_path_create(csv.times.data(), csv.values.data(), labels.data(), csv.points, csv.dim,
                       &p.h));
  return p;
}

// headerless square numeric CSV, dim x dim
std::vector<double> read_matrix_csv(const std::string& file, int dim) {
  std::ifstream in(file);
  if (!in) die(1, "cannot open '" + file + "'");
  std::vector<double> m;
  std::string line;
  size_t lineno = 0, rows = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> cells = split_csv_line(line, lineno);
    if (cells.size() != static_cast<size_t>(dim))
      die(1, "'" + file + "' line " + std::to_string(lineno) + ": expected " +
                 std::to_string(dim) + " cells");
    for (const std::string& c : cells) m.push_back(parse_cell(c, lineno));
    ++rows;
  }
  if (rows != static_cast<size_t>(dim))
    die(1, "'" + file + "': expected a " + std::to_string(dim) + "x" + std::to_string(dim) +
               " matrix, got " + std::to_string(rows) + " rows");
  return m;
}

// ---- manifest ----

std::string sha256_file(const std::string& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) die(1, "cannot hash '" + file + "'");
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0)
    EVP_DigestUpdate(ctx, buf, static_cast<size_t>(in.gcount()));
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int mdlen = 0;
  EVP_DigestFinal_ex(ctx, md, &mdlen);
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out = "sha256:";
  for (unsigned int i = 0; i < mdlen; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

struct Manifest {
  std::string command;
  json flags = json::object();
  bool has_seed = false;
  uint64_t seed = 0;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;

  void flag(const std::string& name, const std::string& v) { flags[name] = v; }
  void flag(const std::string& name, const char* v) { flags[name] = v; }
  void flag(const std::string& name, double v) { flags[name] = fmt17(v); }
  void flag(const std::string& name, long v) { flags[name] = std::to_string(v); }
  void flag(const std::string& name, int v) { flags[name] = std::to_string(v); }
  void flag(const std::string& name, bool v) { flags[name] = v ? "true" : "false"; }
  void flag_seed(uint64_t s) {
    has_seed = true;
    seed = s;
    flags["seed"] = std::to_string(s);
  }

  void write(const std::string& file) const {
    json m;
    m["command"] = command;
    m["flags"] = flags;
    if (has_seed)
      m["seed"] = seed;
    else
      m["seed"] = nullptr;
    m["version"] = bs_version();
    json jin = json::object(), jout = json::object();
    for (const std::string& f : inputs) jin[f] = sha256_file(f);
    for (const std::string& f : outputs) jout[f] = sha256_file(f);
    m["inputs"] = jin;
    m["outputs"] = jout;
    std::ofstream out(file);
    if (!out) die(1, "cannot write '" + file + "'");
    out << m.dump(2) << "\n";
  }

  // beside the output file, or at an explicit stdout-command location
  void finish(const std::string& out_file, const std::string& manifest_file) const {
    if (!out_file.empty())
      write(out_file + ".manifest.json");
    else if (!manifest_file.empty())
      write(manifest_file);
  }
};

void write_json(const std::string& file, const json& j) {
  std::ofstream out(file);
  if (!out) die(1, "cannot write '" + file + "'");
  out << j.dump(2) << "\n";
  if (!out) die(1, "write to '" + file + "' failed");
}

int count_nodes(const std::string& tree) {
  // node count == number of integer labels in the serialization
  int n = 0;
  for (size_t i = 0; i < tree.size(); ++i)
    if (std::isdigit(static_cast<unsigned char>(tree[i])) &&
        (i == 0 || !std::isdigit(static_cast<unsigned char>(tree[i - 1]))))
      ++n;
  return n;
}

// keys ordered by (degree, serialization) so goldens diff cleanly
json table_to_json(const bs_table* t) {
  const size_t n = bs_table_size(t);
  std::vector<std::pair<std::string, double>> rows;
  rows.reserve(n);
  for (size_t i = 0; i < n; ++i) rows.emplace_back(bs_table_key(t, i), bs_table_value(t, i));
  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    const int na = count_nodes(a.first), nb = count_nodes(b.first);
    return na != nb ? na < nb : a.first < b.first;
  });
  json j = json::object();
  for (const auto& [k, v] : rows) j[k] = v;
  return j;
}

void warn_fbm_regime(double hurst) {
  if (!(hurst > 0.25 && hurst <= 1.0 / 3.0 + 1e-12))
    std::cerr << "note: hurst " << hurst
              << " is outside (1/4, 1/3], the intended regime of the level-3 closed forms\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Branched and geometric path signatures over decorated rooted trees"};
  app.set_version_flag("--version", bs_version());
  app.require_subcommand(1);

  // ---- simulate ----
  struct {
    std::string model, rho_file, out;
    int dim = 1;
    bs_roughvol_params p;
    bool force_fallback = false;
  } sv;
  bs_roughvol_params_init(&sv.p);
  auto* simc = app.add_subcommand("simulate", "Sample stochastic driver paths");
  simc->add_option("--model", sv.model, "bm, fbm, or roughvol")
      ->required()
      ->check(CLI::IsMember({"bm", "fbm", "roughvol"}));
  simc->add_option("--dim", sv.dim, "components (bm/fbm)");
  simc->add_option("--hurst", sv.p.hurst, "Hurst index (fbm/roughvol)");
  simc->add_option("--steps", sv.p.steps, "grid steps");
  simc->add_option("--horizon", sv.p.horizon, "terminal time");
  simc->add_option("--seed", sv.p.seed, "RNG seed");
  simc->add_option("--rho", sv.rho_file, "component correlation, dim x dim CSV (fbm)");
  simc->add_flag("--force-fallback", sv.force_fallback,
                 "fbm: skip the circulant embedding, use the dense root");
  simc->add_option("--a", sv.p.a, "roughvol: vol-of-vol shape");
  simc->add_option("--b", sv.p.b, "roughvol: vol exponent");
  simc->add_option("--lambda1", sv.p.lambda1, "roughvol: drift scale");
  simc->add_option("--lambda2", sv.p.lambda2, "roughvol: noise scale");
  simc->add_option("--s0", sv.p.s0, "roughvol: initial stock");
  simc->add_option("--v0", sv.p.v0, "roughvol: initial vol");
  simc->add_option("--out", sv.out, "output CSV")->required();

  // ---- extend ----
  struct {
    std::string input, driver, correction = "bracket", rho_file, out;
    double hurst = 0.1;
  } ex;
  auto* extc = app.add_subcommand("extend", "Add bracket-correction channels indexed by trees");
  extc->add_option("--input", ex.input, "path CSV")->required();
  extc->add_option("--driver", ex.driver, "bm (level 2) or fbm (level 3)")
      ->required()
      ->check(CLI::IsMember({"bm", "fbm"}));
  extc->add_option("--correction", ex.correction, "bm second level: bracket or realized")
      ->check(CLI::IsMember({"bracket", "realized"}));
  extc->add_option("--hurst", ex.hurst, "Hurst index (fbm)");
  extc->add_option("--rho", ex.rho_file, "component correlation, dim x dim CSV");
  extc->add_option("--out", ex.out, "output CSV, columns named by trees")->required();

  // ---- sig / bsig ----
  struct {
    std::string input, out, manifest;
    int level = 2;
    bool ito = false;
  } sg;
  auto* sigc = app.add_subcommand("sig", "Truncated signature of a sampled path");
  sigc->add_option("--input", sg.input, "path CSV")->required();
  sigc->add_option("--level", sg.level, "truncation level");
  sigc->add_flag("--ito", sg.ito, "left-point iterated sums instead of piecewise-linear Chen");
  sigc->add_option("--out", sg.out, "output JSON (stdout when absent)");
  sigc->add_option("--manifest", sg.manifest, "manifest location for stdout output");

  struct {
    std::string input, out, manifest;
    int level = 3;
    bool forests = false;
  } bg;
  auto* bsigc = app.add_subcommand("bsig", "Branched signature of a sampled path");
  bsigc->add_option("--input", bg.input, "path CSV")->required();
  bsigc->add_option("--level", bg.level, "maximum tree size");
  bsigc->add_flag("--forests", bg.forests, "include composite forests");
  bsigc->add_option("--out", bg.out, "output JSON (stdout when absent)");
  bsigc->add_option("--manifest", bg.manifest, "manifest location for stdout output");

  // ---- psi / coproduct ----
  struct {
    std::string tree, manifest;
  } ps;
  auto* psic = app.add_subcommand("psi", "Word expansion of a forest");
  psic->add_option("--tree", ps.tree, "tree or forest, e.g. \"2(1)\"")->required();
  psic->add_option("--manifest", ps.manifest, "manifest location");

  struct {
    std::string forest, manifest;
    bool reduced = false;
  } cp;
  auto* copc = app.add_subcommand("coproduct", "Root-cut coproduct of a forest");
  copc->add_option("--forest", cp.forest, "forest, e.g. \"1*2(1)\"")->required();
  copc->add_flag("--reduced", cp.reduced, "drop both unit terms");
  copc->add_option("--manifest", cp.manifest, "manifest location");

  // ---- check-hk ----
  struct {
    std::string input, ext, driver = "bm", correction = "bracket", rho_file, out, manifest;
    int dim = 2;
    long steps = 4000;
    int seeds = 100;
    uint64_t seed = 0;
    int level = 0;  // 0 = extension level
    double hurst = 0.1;
    double horizon = 1.0;
  } hk;
  auto* hkc = app.add_subcommand(
      "check-hk", "Pairing defect between branched and extended-path signatures");
  hkc->add_option("--input", hk.input, "path CSV (file mode, with --ext)");
  hkc->add_option("--ext", hk.ext, "extension CSV whose columns are serialized trees");
  hkc->add_option("--driver", hk.driver, "seeded mode: bm or fbm")
      ->check(CLI::IsMember({"bm", "fbm"}));
  hkc->add_option("--dim", hk.dim, "seeded mode: components");
  hkc->add_option("--steps", hk.steps, "seeded mode: fine grid steps (halved for the ratio)");
  hkc->add_option("--seeds", hk.seeds, "seeded mode: number of paths");
  hkc->add_option("--seed", hk.seed, "seeded mode: first seed");
  hkc->add_option("--level", hk.level, "tree size cap (default: extension level)");
  hkc->add_option("--correction", hk.correction, "bm second level: bracket or realized")
      ->check(CLI::IsMember({"bracket", "realized"}));
  hkc->add_option("--hurst", hk.hurst, "Hurst index (fbm)");
  hkc->add_option("--horizon", hk.horizon, "seeded mode: terminal time");
  hkc->add_option("--rho", hk.rho_file, "component correlation, dim x dim CSV");
  hkc->add_option("--out", hk.out, "output JSON (stdout table otherwise)");
  hkc->add_option("--manifest", hk.manifest, "manifest location for stdout output");

  // ---- check-shuffle ----
  struct {
    std::string input, out, manifest;
  } sh;
  auto* shc = app.add_subcommand("check-shuffle", "Integration-by-parts defect matrix of a path");
  shc->add_option("--input", sh.input, "path CSV")->required();
  shc->add_option("--out", sh.out, "output JSON (stdout table otherwise)");
  shc->add_option("--manifest", sh.manifest, "manifest location for stdout output");

  // ---- calibrate ----
  struct {
    bs_roughvol_params sim;
    int epochs = 500;
    double lr = 1e-2;
    double lr_decay = 0.5;
    int decay_every = 500;
    double lambda_p = 1.0;
    double lambda_s = 1.0;
    std::vector<int> widths = {64, 32, 16};
    int channels = 9;
    uint64_t train_seed = 0;
    bool full_arch = false;
    std::string outdir;
  } cal;
  bs_roughvol_params_init(&cal.sim);
  auto* calc = app.add_subcommand(
      "calibrate", "Simulate, train the learned extension, and fit signature regressions");
  calc->add_option("--a", cal.sim.a, "vol-of-vol shape");
  calc->add_option("--b", cal.sim.b, "vol exponent");
  calc->add_option("--lambda1", cal.sim.lambda1, "drift scale");
  calc->add_option("--lambda2", cal.sim.lambda2, "noise scale");
  calc->add_option("--s0", cal.sim.s0, "initial stock");
  calc->add_option("--v0", cal.sim.v0, "initial vol");
  calc->add_option("--hurst", cal.sim.hurst, "Hurst index");
  calc->add_option("--horizon", cal.sim.horizon, "terminal time");
  calc->add_option("--steps", cal.sim.steps, "Euler steps");
  calc->add_option("--seed", cal.sim.seed, "simulation and training seed");
  auto* tseed =
      calc->add_option("--train-seed", cal.train_seed, "override the training seed only");
  calc->add_option("--epochs", cal.epochs, "training epochs");
  calc->add_option("--lr", cal.lr, "Adam learning rate");
  calc->add_option("--lr-decay", cal.lr_decay, "stepwise decay factor");
  calc->add_option("--decay-every", cal.decay_every, "epochs per decay step");
  calc->add_option("--lambda-p", cal.lambda_p, "target-fit weight");
  calc->add_option("--lambda-s", cal.lambda_s, "shuffle-penalty weight");
  auto* widthsopt =
      calc->add_option("--widths", cal.widths, "hidden layer sizes")->delimiter(',');
  calc->add_flag("--full-arch", cal.full_arch, "use the full 512,256,128,64,32,16 network")
      ->excludes(widthsopt);
  calc->add_option("--channels", cal.channels, "learned extension channels");
  calc->add_option("--outdir", cal.outdir,
                   "directory for report.json, losses.csv, shuffle_matrix.csv, "
                   "vol_pred.csv, stock_pred.csv")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  // ---------------- simulate ----------------
  if (simc->parsed()) {
    Manifest m;
    m.command = "simulate";
    m.flag("model", sv.model);
    if (sv.model == "roughvol") {
      PathHandle stock, vol, drivers;
      long clamps = 0;
      check(bs_simulate_roughvol(&sv.p, &stock.h, &vol.h, &drivers.h, &clamps));
      const size_t n = bs_path_points(stock.h);
      std::vector<double> vals(n * 4);
      const double* s = bs_path_values_ptr(stock.h);
      const double* v = bs_path_values_ptr(vol.h);
      const double* dr = bs_path_values_ptr(drivers.h);
      for (size_t i = 0; i < n; ++i) {
        vals[i * 4 + 0] = s[i];
        vals[i * 4 + 1] = v[i];
        vals[i * 4 + 2] = dr[i * 2 + 0];
        vals[i * 4 + 3] = dr[i * 2 + 1];
      }
      write_csv(sv.out, {"S", "V", "B", "BH"}, n, 4, bs_path_times_ptr(stock.h), vals.data());
      if (clamps > 0) std::cerr << "note: vol floored at zero on " << clamps << " steps\n";
      m.flag("a", sv.p.a);
      m.flag("b", sv.p.b);
      m.flag("lambda1", sv.p.lambda1);
      m.flag("lambda2", sv.p.lambda2);
      m.flag("s0", sv.p.s0);
      m.flag("v0", sv.p.v0);
      m.flag("hurst", sv.p.hurst);
    } else if (sv.model == "bm") {
      PathHandle p;
      check(bs_sample_bm(sv.dim, sv.p.steps, sv.p.horizon, sv.p.seed, &p.h));
      std::vector<std::string> names;
      for (int c = 1; c <= sv.dim; ++c) names.push_back("B" + std::to_string(c));
      write_csv(sv.out, names, bs_path_points(p.h), sv.dim, bs_path_times_ptr(p.h),
                bs_path_values_ptr(p.h));
      m.flag("dim", sv.dim);
    } else {
      const std::vector<double> rho =
          sv.rho_file.empty() ? std::vector<double>{} : read_matrix_csv(sv.rho_file, sv.dim);
      PathHandle p;
      int fell_back = 0;
      check(bs_sample_fbm(sv.p.hurst, sv.p.horizon, sv.p.steps, sv.dim,
                          rho.empty() ? nullptr : rho.data(), sv.p.seed,
                          sv.force_fallback ? 1 : 0, &p.h, &fell_back));
      if (fell_back)
        std::cerr << "note: circulant embedding rejected, dense factorization used\n";
      std::vector<std::string> names;
      for (int c = 1; c <= sv.dim; ++c) names.push_back("BH" + std::to_string(c));
      write_csv(sv.out, names, bs_path_points(p.h), sv.dim, bs_path_times_ptr(p.h),
                bs_path_values_ptr(p.h));
      m.flag("dim", sv.dim);
      m.flag("hurst", sv.p.hurst);
      if (!sv.rho_file.empty()) {
        m.flag("rho", sv.rho_file);
        m.inputs.push_back(sv.rho_file);
      }
      m.flag("force-fallback", sv.force_fallback);
    }
    m.flag("steps", sv.p.steps);
    m.flag("horizon", sv.p.horizon);
    m.flag_seed(sv.p.seed);
    m.flag("out", sv.out);
    m.outputs.push_back(sv.out);
    m.finish(sv.out, "");
    return 0;
  }

  // ---------------- extend ----------------
  if (extc->parsed()) {
    PathHandle p = path_from_csv(ex.input);
    const std::vector<double> rho = ex.rho_file.empty()
                                        ? std::vector<double>{}
                                        : read_matrix_csv(ex.rho_file, bs_path_dim(p.h));
    ExtHandle e;
    if (ex.driver == "bm") {
      check(bs_extend_bm(p.h, ex.correction == "bracket" ? 0 : 1,
                         rho.empty() ? nullptr : rho.data(), &e.h));
    } else {
      warn_fbm_regime(ex.hurst);
      check(bs_extend_fbm(p.h, ex.hurst, rho.empty() ? nullptr : rho.data(), &e.h));
    }
    PathHandle ext;
    check(bs_ext_path(e.h, &ext.h));
    std::vector<std::string> names;
    for (int c = 0; c < bs_ext_channels(e.h); ++c) names.push_back(bs_ext_channel_tree(e.h, c));
    write_csv(ex.out, names, bs_path_points(ext.h), bs_path_dim(ext.h), bs_path_times_ptr(ext.h),
              bs_path_values_ptr(ext.h));
    Manifest m;
    m.command = "extend";
    m.flag("input", ex.input);
    m.flag("driver", ex.driver);
    if (ex.driver == "bm") m.flag("correction", ex.correction);
    if (ex.driver == "fbm") m.flag("hurst", ex.hurst);
    if (!ex.rho_file.empty()) {
      m.flag("rho", ex.rho_file);
      m.inputs.push_back(ex.rho_file);
    }
    m.flag("out", ex.out);
    m.inputs.push_back(ex.input);
    m.outputs.push_back(ex.out);
    m.finish(ex.out, "");
    return 0;
  }

  // ---------------- sig / bsig ----------------
  if (sigc->parsed() || bsigc->parsed()) {
    const bool branched = bsigc->parsed();
    const std::string& input = branched ? bg.input : sg.input;
    PathHandle p = path_from_csv(input);
    TableHandle t;
    if (branched)
      check(bs_bsig_entries(p.h, bg.level, bg.forests ? 1 : 0, &t.h));
    else
      check(bs_sig_entries(p.h, sg.level, sg.ito ? 1 : 0, &t.h));
    json j;
    j["level"] = branched ? bg.level : sg.level;
    j["entries"] = table_to_json(t.h);
    const std::string& outf = branched ? bg.out : sg.out;
    if (outf.empty())
      std::cout << j.dump(2) << "\n";
    else
      write_json(outf, j);
    Manifest m;
    m.command = branched ? "bsig" : "sig";
    m.flag("input", input);
    m.flag("level", branched ? bg.level : sg.level);
    if (branched)
      m.flag("forests", bg.forests);
    else
      m.flag("ito", sg.ito);
    if (!outf.empty()) m.flag("out", outf);
    m.inputs.push_back(input);
    if (!outf.empty()) m.outputs.push_back(outf);
    m.finish(outf, branched ? bg.manifest : sg.manifest);
    return 0;
  }

  // ---------------- psi / coproduct ----------------
  if (psic->parsed()) {
    char* text = nullptr;
    check(bs_psi_text(ps.tree.c_str(), &text));
    std::cout << text;
    bs_string_free(text);
    Manifest m;
    m.command = "psi";
    m.flag("tree", ps.tree);
    m.finish("", ps.manifest);
    return 0;
  }
  if (copc->parsed()) {
    char* text = nullptr;
    check(bs_coproduct_text(cp.forest.c_str(), cp.reduced ? 1 : 0, &text));
    std::cout << text;
    bs_string_free(text);
    Manifest m;
    m.command = "coproduct";
    m.flag("forest", cp.forest);
    m.flag("reduced", cp.reduced);
    m.finish("", cp.manifest);
    return 0;
  }

  // ---------------- check-hk ----------------
  if (hkc->parsed()) {
    Manifest m;
    m.command = "check-hk";

    if (!hk.ext.empty()) {
      // file mode: residuals of one (path, extension) pair
      if (hk.input.empty()) die(1, "check-hk: --ext requires --input");
      PathHandle p = path_from_csv(hk.input);
      const Csv extcsv = read_csv(hk.ext);
      std::vector<int> labels;
      for (int c = 1; c <= extcsv.dim; ++c) labels.push_back(c);
      PathHandle extp;
      check(bs_path_create(extcsv.times.data(), extcsv.values.data(), labels.data(),
                           extcsv.points, extcsv.dim, &extp.h));
      std::vector<const char*> names;
      for (const std::string& n : extcsv.names) names.push_back(n.c_str());
      ExtHandle e;
      check(bs_ext_create(extp.h, names.data(), extcsv.dim, &e.h));
      const int level = hk.level > 0 ? hk.level : bs_ext_level(e.h);
      TableHandle t;
      check(bs_hk_residual(p.h, e.h, level, &t.h));
      if (hk.out.empty()) {
        std::cout << "tree\tresidual\n";
        for (size_t i = 0; i < bs_table_size(t.h); ++i)
          std::cout << bs_table_key(t.h, i) << "\t" << fmt17(bs_table_value(t.h, i)) << "\n";
      } else {
        json j;
        j["level"] = level;
        j["residuals"] = table_to_json(t.h);
        write_json(hk.out, j);
      }
      m.flag("input", hk.input);
      m.flag("ext", hk.ext);
      m.flag("level", level);
      m.inputs.push_back(hk.input);
      m.inputs.push_back(hk.ext);
      if (!hk.out.empty()) {
        m.flag("out", hk.out);
        m.outputs.push_back(hk.out);
      }
      m.finish(hk.out, hk.manifest);
      return 0;
    }

    // seeded mode: Monte-Carlo residual table with refinement ratios
    if (hk.steps < 2 || hk.steps % 2 != 0) die(1, "check-hk: --steps must be even and >= 2");
    if (hk.seeds < 1) die(1, "check-hk: --seeds must be >= 1");
    const std::vector<double> rho = hk.rho_file.empty()
                                        ? std::vector<double>{}
                                        : read_matrix_csv(hk.rho_file, hk.dim);
    const double* rp = rho.empty() ? nullptr : rho.data();
    if (hk.driver == "fbm") warn_fbm_regime(hk.hurst);

    std::vector<std::string> keys;
    std::vector<double> sum_fine, sum_coarse;
    for (int s = 0; s < hk.seeds; ++s) {
      const uint64_t seed = hk.seed + static_cast<uint64_t>(s);
      PathHandle fine;
      if (hk.driver == "bm")
        check(bs_sample_bm(hk.dim, hk.steps, hk.horizon, seed, &fine.h));
      else
        check(bs_sample_fbm(hk.hurst, hk.horizon, hk.steps, hk.dim, rp, seed, 0, &fine.h,
                            nullptr));
      // common-random-numbers comparison: the coarse path subsamples the fine one
      const size_t n = bs_path_points(fine.h);
      const double* ft = bs_path_times_ptr(fine.h);
      const double* fv = bs_path_values_ptr(fine.h);
      const size_t nc = (n - 1) / 2 + 1;
      std::vector<double> ct(nc), cv(nc * static_cast<size_t>(hk.dim));
      std::vector<int> labels;
      for (int c = 1; c <= hk.dim; ++c) labels.push_back(c);
      for (size_t i = 0; i < nc; ++i) {
        ct[i] = ft[2 * i];
        for (int c = 0; c < hk.dim; ++c)
          cv[i * static_cast<size_t>(hk.dim) + c] = fv[2 * i * static_cast<size_t>(hk.dim) + c];
      }
      PathHandle coarse;
      check(bs_path_create(ct.data(), cv.data(), labels.data(), nc, hk.dim, &coarse.h));

      for (int which = 0; which < 2; ++which) {
        const bs_path* path = which == 0 ? fine.h : coarse.h;
        ExtHandle e;
        if (hk.driver == "bm")
          check(bs_extend_bm(path, hk.correction == "bracket" ? 0 : 1, rp, &e.h));
        else
          check(bs_extend_fbm(path, hk.hurst, rp, &e.h));
        const int level = hk.level > 0 ? hk.level : bs_ext_level(e.h);
        TableHandle t;
        check(bs_hk_residual(path, e.h, level, &t.h));
        const size_t rows = bs_table_size(t.h);
        if (keys.empty()) {
          for (size_t i = 0; i < rows; ++i) keys.push_back(bs_table_key(t.h, i));
          sum_fine.assign(rows, 0.0);
          sum_coarse.assign(rows, 0.0);
        }
        if (rows != keys.size()) die(2, "check-hk: inconsistent residual tables");
        std::vector<double>& acc = which == 0 ? sum_fine : sum_coarse;
        for (size_t i = 0; i < rows; ++i) acc[i] += std::abs(bs_table_value(t.h, i));
      }
    }

    const double inv = 1.0 / static_cast<double>(hk.seeds);
    double agg_fine = 0.0, agg_coarse = 0.0;
    int agg_n = 0;
    json trees = json::object();
    std::ostringstream table;
    table << "tree\tmean|resid| n/2\tmean|resid| n\tratio\n";
    for (size_t i = 0; i < keys.size(); ++i) {
      const double mf = sum_fine[i] * inv;
      const double mc = sum_coarse[i] * inv;
      const bool has_ratio = mf > 0.0;
      table << keys[i] << "\t" << fmt17(mc) << "\t" << fmt17(mf) << "\t"
            << (has_ratio ? fmt17(mc / mf) : "-") << "\n";
      json row;
      row["coarse"] = mc;
      row["fine"] = mf;
      if (has_ratio)
        row["ratio"] = mc / mf;
      else
        row["ratio"] = nullptr;
      trees[keys[i]] = row;
      if (count_nodes(keys[i]) >= 2) {
        agg_fine += mf;
        agg_coarse += mc;
        ++agg_n;
      }
    }
    json summary;
    if (agg_n > 0) {
      const double mf = agg_fine / agg_n, mc = agg_coarse / agg_n;
      table << "mean(size>=2)\t" << fmt17(mc) << "\t" << fmt17(mf) << "\t"
            << (mf > 0.0 ? fmt17(mc / mf) : "-") << "\n";
      summary["coarse"] = mc;
      summary["fine"] = mf;
      if (mf > 0.0)
        summary["ratio"] = mc / mf;
      else
        summary["ratio"] = nullptr;
    }

    json j;
    j["driver"] = hk.driver;
    j["steps"] = hk.steps;
    j["seeds"] = hk.seeds;
    j["trees"] = trees;
    j["mean_size_ge_2"] = summary;
    if (hk.out.empty())
      std::cout << table.str();
    else
      write_json(hk.out, j);
    m.flag("driver", hk.driver);
    m.flag("dim", hk.dim);
    m.flag("steps", hk.steps);
    m.flag("seeds", hk.seeds);
    m.flag_seed(hk.seed);
    if (hk.driver == "bm") m.flag("correction", hk.correction);
    if (hk.driver == "fbm") m.flag("hurst", hk.hurst);
    m.flag("horizon", hk.horizon);
    if (!hk.rho_file.empty()) {
      m.flag("rho", hk.rho_file);
      m.inputs.push_back(hk.rho_file);
    }
    if (!hk.out.empty()) {
      m.flag("out", hk.out);
      m.outputs.push_back(hk.out);
    }
    m.finish(hk.out, hk.manifest);
    return 0;
  }

  // ---------------- check-shuffle ----------------
  if (shc->parsed()) {
    PathHandle p = path_from_csv(sh.input);
    TableHandle t;
    check(bs_shuffle_residual(p.h, &t.h));
    const size_t n = bs_table_size(t.h);
    double mean = 0.0;
    for (size_t i = 0; i < n; ++i) mean += bs_table_value(t.h, i);
    if (n > 0) mean /= static_cast<double>(n);
    if (sh.out.empty()) {
      std::cout << "pair\tmean_sq_defect\n";
      for (size_t i = 0; i < n; ++i)
        std::cout << bs_table_key(t.h, i) << "\t" << fmt17(bs_table_value(t.h, i)) << "\n";
      std::cout << "mean\t" << fmt17(mean) << "\n";
    } else {
      json j;
      j["dim"] = bs_path_dim(p.h);
      j["matrix"] = table_to_json(t.h);
      j["mean"] = mean;
      write_json(sh.out, j);
    }
    Manifest m;
    m.command = "check-shuffle";
    m.flag("input", sh.input);
    m.inputs.push_back(sh.input);
    if (!sh.out.empty()) {
      m.flag("out", sh.out);
      m.outputs.push_back(sh.out);
    }
    m.finish(sh.out, sh.manifest);
    return 0;
  }

  // ---------------- calibrate ----------------
  if (calc->parsed()) {
    if (cal.full_arch) cal.widths = {512, 256, 128, 64, 32, 16};
    bs_train_params tp;
    bs_train_params_init(&tp);
    tp.epochs = cal.epochs;
    tp.lr = cal.lr;
    tp.lr_decay = cal.lr_decay;
    tp.decay_every = cal.decay_every;
    tp.lambda_p = cal.lambda_p;
    tp.lambda_s = cal.lambda_s;
    tp.seed = tseed->count() > 0 ? cal.train_seed : cal.sim.seed;
    tp.widths = cal.widths.data();
    tp.n_widths = static_cast<int>(cal.widths.size());
    tp.channels = cal.channels;

    CalibHandle c;
    check(bs_calibrate(&cal.sim, &tp, &c.h));

    std::error_code ec;
    std::filesystem::create_directories(cal.outdir, ec);
    if (ec) die(1, "cannot create " + cal.outdir + ": " + ec.message());
    const std::string dir = cal.outdir + "/";

    auto series = [&](const char* name) {
      const double* data = nullptr;
      size_t len = 0;
      check(bs_calib_series(c.h, name, &data, &len));
      return std::vector<double>(data, data + len);
    };
    auto stat = [&](const char* name) {
      double v = 0.0;
      check(bs_calib_stat(c.h, name, &v));
      return v;
    };

    std::string widths_str;
    for (size_t i = 0; i < cal.widths.size(); ++i)
      widths_str += (i ? "," : "") + std::to_string(cal.widths[i]);

    const auto physics_hist = series("physics_history");
    const auto shuffle_hist = series("shuffle_history");

    json j;
    json& cfg = j["config"];
    cfg["a"] = cal.sim.a;
    cfg["b"] = cal.sim.b;
    cfg["lambda1"] = cal.sim.lambda1;
    cfg["lambda2"] = cal.sim.lambda2;
    cfg["s0"] = cal.sim.s0;
    cfg["v0"] = cal.sim.v0;
    cfg["hurst"] = cal.sim.hurst;
    cfg["horizon"] = cal.sim.horizon;
    cfg["steps"] = cal.sim.steps;
    cfg["epochs"] = cal.epochs;
    cfg["lr"] = cal.lr;
    cfg["lr_decay"] = cal.lr_decay;
    cfg["decay_every"] = cal.decay_every;
    cfg["lambda_p"] = cal.lambda_p;
    cfg["lambda_s"] = cal.lambda_s;
    cfg["widths"] = cal.widths;
    cfg["channels"] = cal.channels;
    cfg["train_seed"] = tp.seed;
    j["seed"] = cal.sim.seed;
    for (const char* name : {"mse_vol_with", "mse_vol_without", "mse_stock_with",
                             "mse_stock_without", "shuffle_mse"})
      j[name] = stat(name);
    j["final_physics_loss"] = physics_hist.back();
    j["final_shuffle_loss"] = shuffle_hist.back();
    j["shuffle_dim"] = static_cast<int>(stat("shuffle_dim"));
    j["clamp_count"] = static_cast<long>(stat("clamp_count"));
    j["ridge_used"] = stat("ridge_used") != 0.0;
    write_json(dir + "report.json", j);

    {
      std::ofstream f(dir + "losses.csv", std::ios::binary);
      f << "epoch,physics,shuffle\n";
      for (size_t i = 0; i < physics_hist.size(); ++i)
        f << i << "," << fmt17(physics_hist[i]) << "," << fmt17(shuffle_hist[i]) << "\n";
      if (!f.good()) die(1, "cannot write " + dir + "losses.csv");
    }
    {
      const auto mat = series("shuffle_matrix");
      const auto dim = static_cast<size_t>(stat("shuffle_dim"));
      std::ofstream f(dir + "shuffle_matrix.csv", std::ios::binary);
      for (size_t r = 0; r < dim; ++r) {
        for (size_t cidx = 0; cidx < dim; ++cidx)
          f << (cidx ? "," : "") << fmt17(mat[r * dim + cidx]);
        f << "\n";
      }
      if (!f.good()) die(1, "cannot write " + dir + "shuffle_matrix.csv");
    }
    const auto times = series("times");
    auto write_pred = [&](const std::string& file, const char* truth, const char* with_ext,
                          const char* without_ext) {
      const auto tr = series(truth), wi = series(with_ext), wo = series(without_ext);
      std::ofstream f(dir + file, std::ios::binary);
      f << "t,truth,with_ext,without_ext\n";
      for (size_t i = 0; i < times.size(); ++i)
        f << fmt17(times[i]) << "," << fmt17(tr[i]) << "," << fmt17(wi[i]) << ","
          << fmt17(wo[i]) << "\n";
      if (!f.good()) die(1, "cannot write " + dir + file);
    };
    write_pred("vol_pred.csv", "vol_true", "vol_with", "vol_without");
    write_pred("stock_pred.csv", "stock_true", "stock_with", "stock_without");

    Manifest m;
    m.command = "calibrate";
    m.flag("a", cal.sim.a);
    m.flag("b", cal.sim.b);
    m.flag("lambda1", cal.sim.lambda1);
    m.flag("lambda2", cal.sim.lambda2);
    m.flag("s0", cal.sim.s0);
    m.flag("v0", cal.sim.v0);
    m.flag("hurst", cal.sim.hurst);
    m.flag("horizon", cal.sim.horizon);
    m.flag("steps", cal.sim.steps);
    m.flag_seed(cal.sim.seed);
    m.flag("train-seed", std::to_string(tp.seed));
    m.flag("epochs", cal.epochs);
    m.flag("lr", cal.lr);
    m.flag("lr-decay", cal.lr_decay);
    m.flag("decay-every", cal.decay_every);
    m.flag("lambda-p", cal.lambda_p);
    m.flag("lambda-s", cal.lambda_s);
    m.flag("widths", widths_str);
    m.flag("channels", cal.channels);
    m.flag("outdir", cal.outdir);
    for (const char* f :
         {"report.json", "losses.csv", "shuffle_matrix.csv", "vol_pred.csv", "stock_pred.csv"})
      m.outputs.push_back(dir + f);
    m.finish("", dir + "manifest.json");
    return 0;
  }

  return 0;
}
