// Acceptance suite: one PASS/FAIL line per criterion, detail lines indented.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gbe/gla_graph.hpp"
#include "gbe/harness.hpp"
#include "gbe/lid.hpp"
#include "gbe/objective.hpp"
#include "oracles.hpp"

using namespace gbe;
namespace fs = std::filesystem;

namespace {

constexpr double kOpTolerance = 1e-3;
constexpr double kEndToEndTolerance = 1e-2;
constexpr double kGradcheckSeconds = 120;
constexpr int kOracleInstances = 1000;
constexpr double kOracleTolerance = 1e-6;
constexpr double kOracleSeconds = 60;
constexpr double kIdentityTolerance = 1e-6;
constexpr double kInvariantTolerance = 1e-6;
constexpr int kSeeds = 5;
constexpr double kTransferRatio = 3.0;
constexpr double kSecondsPerSeed = 600;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

int failures = 0;

void verdict(bool pass, const std::string& name, const std::string& detail) {
  if (!pass) ++failures;
  std::printf("%s %s: %s\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
}

void note(const std::string& line) {
  std::printf("  %s\n", line.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Tensor<double> to_tensor(const oracle::Matrix& m) {
  Tensor<double> t({static_cast<int>(m.size()), static_cast<int>(m.front().size())});
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m[i].size(); ++j) t.at({static_cast<int>(i), static_cast<int>(j)}) = m[i][j];
  return t;
}

ScoreMatrix to_scores(const oracle::Matrix& s, const oracle::Bits& t) {
  ScoreMatrix m;
  const auto rows = static_cast<Eigen::Index>(s.size()), cols = static_cast<Eigen::Index>(s.front().size());
  m.scores.resize(rows, cols);
  m.truth.resize(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) {
      m.scores(i, j) = s[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      m.truth(i, j) = static_cast<std::uint8_t>(t[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);
    }
  for (Eigen::Index j = 0; j < cols; ++j) m.label_ids.push_back(static_cast<int>(j));
  return m;
}

Tensor<double> reshaped(const Tensor<double>& t, Shape shape) {
  return Tensor<double>(std::move(shape), std::vector<double>(t.data().begin(), t.data().end()));
}

LabelVector to_labels(const std::vector<int>& y) { return LabelVector(y.begin(), y.end()); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void gradient_suite() {
  const auto start = Clock::now();
  const auto r = gradcheck(tiny_gradcheck_setup());
  const double secs = seconds_since(start);
  double worst_op = 0, worst_module = 0;
  bool coverage = !r.ops.empty() && !r.modules.empty();
  for (const auto& o : r.ops) {
    worst_op = std::max(worst_op, o.rel_error);
    coverage = coverage && o.coords > 0;
  }
  for (const auto& m : r.modules) {
    worst_module = std::max(worst_module, m.rel_error);
    coverage = coverage && m.coords > 0;
  }
  std::istringstream table(gradcheck_table(r));
  for (std::string line; std::getline(table, line);) note(line);
  const bool pass = worst_op < kOpTolerance && worst_module < kEndToEndTolerance && coverage && secs < kGradcheckSeconds;
  verdict(pass, "gradient-suite",
          fmt("max op rel err %.2e (< 1e-3), max end-to-end float32 rel err %.2e (< 1e-2), %.1f s (< 120 s)", worst_op,
              worst_module, secs));
}

void oracle_equivalence() {
  const auto start = Clock::now();
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> dim(1, 6), cls(2, 12);
  double worst_scores = 0, worst_rank = 0, worst_reg = 0, worst_prf = 0, worst_map = 0;
  for (int t = 0; t < kOracleInstances; ++t) {
    const int n = dim(rng), d = dim(rng), c = cls(rng);
    const auto s = oracle::random_matrix(n, d, rng);
    const auto e = oracle::random_matrix(c, d, rng, 2.0);
    const auto want_scores = oracle::class_scores(s, e);
    const auto got_scores = class_scores(constant(to_tensor(s)), constant(to_tensor(e))).value();
    for (std::size_t j = 0; j < want_scores.size(); ++j)
      worst_scores = std::max(worst_scores, std::abs(got_scores[j] - want_scores[j]));

    auto y = oracle::random_bits(1, c, 0.3, rng).front();
    y[0] = 1;
    y[1] = 0;
    const auto got_rank = rank_loss(constant(to_tensor(s)), to_labels(y), constant(to_tensor(e)));
    worst_rank = std::max(worst_rank, std::abs(got_rank->item() - oracle::rank_loss(want_scores, y)));
    worst_reg = std::max(worst_reg, std::abs(reg_loss(constant(to_tensor(s))).item() - oracle::reg_loss(s)));

    const int rows = 4 + t % 30, cols = c;
    const auto m = t % 3 == 0 ? oracle::random_tied_matrix(rows, cols, rng) : oracle::random_matrix(rows, cols, rng);
    auto truth = oracle::random_bits(rows, cols, 0.25, rng);
    truth[0][0] = 1;
    const auto sm = to_scores(m, truth);
    const int k = 1 + t % std::min(cols, 5);
    const auto got = topk_prf(sm, k);
    const auto want = oracle::topk_prf(m, truth, k);
    worst_prf = std::max({worst_prf, std::abs(got.precision - want.p), std::abs(got.recall - want.r),
                          std::abs(got.f1 - want.f1)});
    worst_map = std::max(worst_map, std::abs(mean_ap(sm).value - oracle::mean_ap(m, truth)));
  }
  const double secs = seconds_since(start);
  note(fmt("class_scores %.2e  rank_loss %.2e  reg_loss %.2e", worst_scores, worst_rank, worst_reg));
  note(fmt("topk_prf %.2e  mean_ap %.2e", worst_prf, worst_map));
  const double worst = std::max({worst_scores, worst_rank, worst_reg, worst_prf, worst_map});
  verdict(worst <= kOracleTolerance && secs < kOracleSeconds, "oracle-equivalence",
          fmt("%g instances per function, max abs deviation %.2e (<= 1e-6), %.1f s (< 60 s)", kOracleInstances, worst,
              secs));
}

void loss_identities() {
  auto e = constant(Tensor<double>({4, 3}, 0.0));
  e.mutable_value().at({0, 0}) = 1;
  e.mutable_value().at({1, 1}) = 1;
  e.mutable_value().at({2, 2}) = 1;
  e.mutable_value().at({3, 0}) = -1;
  const auto zero = constant(Tensor<double>({2, 3}));
  const double ln2 = rank_loss(zero, to_labels({1, 0, 1, 0}), e)->item();

  std::mt19937_64 rng(5);
  std::vector<Var<double>> groups;
  std::vector<LabelVector> ys{to_labels({1, 0, 0, 1}), to_labels({0, 1, 0, 0}), to_labels({1, 1, 1, 0})};
  double rank_weighted = 0, reg = 0;
  for (const auto& y : ys) {
    auto s = constant(to_tensor(oracle::random_matrix(2, 3, rng)));
    groups.push_back(s);
    rank_weighted += sample_weight(y) * rank_loss(s, y, e)->item();
    reg += reg_loss(s).item();
  }
  const double n = static_cast<double>(ys.size());
  const double at1 = total_loss(groups, ys, 1.0, e).loss.item();
  const double at0 = total_loss(groups, ys, 0.0, e).loss.item();
  const double d_ln2 = std::abs(ln2 - std::log(2.0));
  const double d1 = std::abs(at1 - reg / n), d0 = std::abs(at0 - rank_weighted / n);
  verdict(d_ln2 < kIdentityTolerance && d1 < kIdentityTolerance && d0 < kIdentityTolerance, "loss-identities",
          fmt("|L(S=0) - ln 2| %.1e, |L(lambda=1) - mean reg| %.1e, |L(lambda=0) - mean weighted rank| %.1e", d_ln2, d1,
              d0));
}

void structural_invariants(const Dataset& d) {
  std::mt19937_64 data(11);
  std::vector<std::string> broken;
  double worst = 0;

  for (int t = 0; t < 100; ++t) {
    const auto x = oracle::random_matrix(1 + t % 7, 1 + t % 5, data, 10.0);
    const auto y = softmax_rows(constant(to_tensor(x))).value();
    for (int i = 0; i < y.dim(0); ++i) {
      double total = 0;
      for (int j = 0; j < y.dim(1); ++j) total += y.at({i, j});
      worst = std::max(worst, std::abs(total - 1.0));
    }
  }
  if (worst > kInvariantTolerance) broken.emplace_back("softmax rows");

  ModelConfig cfg;
  cfg.groups = 4;
  cfg.embed_dim = 6;
  Rng rng(3);
  Lid<double> lid(cfg, rng);
  double attn_dev = 0;
  for (int t = 0; t < 20; ++t) {
    auto group = constant(to_tensor(oracle::random_matrix(6, 16, data)));
    auto tokens = lid.tokenize(constant(reshaped(group.value(), {6, 4, 4})));
    const auto a = lid.attention_enhance(tokens).attention.value();
    for (int i = 0; i < a.dim(0); ++i) {
      double total = 0;
      for (int j = 0; j < a.dim(1); ++j) total += a.at({i, j});
      attn_dev = std::max(attn_dev, std::abs(total - 1.0));
    }
  }
  if (attn_dev > kInvariantTolerance) broken.emplace_back("attention rows");

  double aff_dev = 0;
  for (int n = 1; n <= 64; ++n) {
    const auto a = build_affinity<double>(n);
    for (int i = 0; i < n; ++i) {
      double total = 0;
      for (int j = 0; j < n; ++j) total += a.at({i, j});
      aff_dev = std::max(aff_dev, std::abs(total - 1.0));
    }
  }
  if (aff_dev > kInvariantTolerance) broken.emplace_back("affinity rows");

  auto fused = constant(to_tensor(oracle::random_matrix(24, 9, data)));
  auto fused3 = constant(reshaped(fused.value(), {24, 3, 3}));
  if (!(concat_channels(split_groups(fused3, 4, 6)).value() == fused3.value())) broken.emplace_back("split/concat");

  GlaGraph<double> gla(cfg, rng);
  const auto locals = to_tensor(oracle::random_matrix(4, 6, data));
  auto gf = constant(reshaped(to_tensor(oracle::random_matrix(1, 6, data)), {6}));
  const std::vector<int> perm{3, 1, 0, 2};
  Tensor<double> permuted({4, 6});
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 6; ++j) permuted.at({i, j}) = locals.at({perm[static_cast<std::size_t>(i)], j});
  const auto s = gla.graph_forward(constant(locals), gf).value();
  const auto sp = gla.graph_forward(constant(permuted), gf).value();
  double perm_dev = 0;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 6; ++j)
      perm_dev = std::max(perm_dev, std::abs(sp.at({i, j}) - s.at({perm[static_cast<std::size_t>(i)], j})));
  if (perm_dev > kInvariantTolerance) broken.emplace_back("graph permutation");

  long leaked = 0, uncovered = 0;
  for (int r = 0; r < d.train_count; ++r)
    for (int u : d.table.unseen_ids) leaked += d.has_label(r, u);
  for (int r : test_rows(d)) {
    bool any = false;
    for (int u : d.table.unseen_ids) any = any || d.has_label(r, u);
    uncovered += !any;
  }
  const auto zsl_ids = protocol_ids(d.table, Protocol::Zsl);
  const bool zsl_columns = std::all_of(zsl_ids.begin(), zsl_ids.end(), [&](int id) {
    return std::find(d.table.unseen_ids.begin(), d.table.unseen_ids.end(), id) != d.table.unseen_ids.end();
  });
  if (leaked || uncovered || !zsl_columns) broken.emplace_back("zero-shot integrity");

  note(fmt("softmax %.1e  attention %.1e  affinity %.1e", worst, attn_dev, aff_dev));
  note(fmt("graph permutation %.1e  unseen labels in training rows %g  test rows without unseen label %g", perm_dev,
           static_cast<double>(leaked), static_cast<double>(uncovered)));
  std::string detail = broken.empty() ? "all invariants hold" : "violated:";
  for (const auto& b : broken) detail += " " + b;
  verdict(broken.empty(), "structural-invariants", detail);
}

struct SeedRuns {
  std::vector<double> full, gla_off, lid_off, baseline, seconds;
};

RunConfig desk_config(std::uint64_t seed, const std::string& variant) {
  RunConfig c;
  c.seed = seed;
  c.out_dir = fs::path("acceptance_runs") / (variant + "_seed" + std::to_string(seed));
  if (variant == "gla_off") c.model.switches.gla = false;
  if (variant == "lid_off") c.model.switches.lid = false;
  return c;
}

SeedRuns train_seeds(const Dataset& d) {
  SeedRuns out;
  for (int seed = 1; seed <= kSeeds; ++seed) {
    for (const std::string variant : {"full", "gla_off", "lid_off"}) {
      const auto r = train(desk_config(static_cast<std::uint64_t>(seed), variant), &d);
      note(variant + fmt(" seed %g: zsl mAP %.4f, gzsl mAP %.4f", seed, r.zsl_map, r.gzsl_map) +
           fmt(", %.1f s", r.seconds));
      if (variant == "full") {
        out.full.push_back(r.zsl_map);
        out.baseline.push_back(r.zsl_shuffle_mean);
        out.seconds.push_back(r.seconds);
      } else {
        (variant == "gla_off" ? out.gla_off : out.lid_off).push_back(r.zsl_map);
      }
    }
  }
  return out;
}

void transfer(const SeedRuns& runs) {
  const double m = median(runs.full), b = median(runs.baseline);
  const double slowest = *std::max_element(runs.seconds.begin(), runs.seconds.end());
  verdict(m >= kTransferRatio * b && slowest < kSecondsPerSeed, "zero-shot-transfer",
          fmt("median unseen mAP %.4f vs shuffle baseline %.4f (ratio %.2f, need >= 3)", m, b, m / b) +
              fmt(", slowest seed %.1f s (< 600 s)", slowest));
}

void ablation(const SeedRuns& runs) {
  const double full = median(runs.full), gla = median(runs.gla_off), lid = median(runs.lid_off);
  const auto all_on = ModuleSwitches{};
  std::vector<AblationRow> rows{{{"lid-off", {true, false, true, true}}, lid, 0},
                                {{"gla-off", {true, true, true, false}}, gla, 0},
                                {{"full", all_on}, full, 0}};
  std::istringstream table(ablation_table(rows));
  for (std::string line; std::getline(table, line);)
    if (line.rfind("mAP GZSL", 0) != 0) note(line);
  verdict(full >= gla && full >= lid, "ablation-direction",
          fmt("median unseen mAP full %.4f, gla-off %.4f, lid-off %.4f", full, gla, lid));
}

void determinism(const Dataset& d) {
  std::vector<fs::path> dirs;
  for (const char* name : {"determinism_a", "determinism_b"}) {
    RunConfig c;
    c.seed = 9;
    c.schedule.epochs = 2;
    c.schedule.decay_epochs = {1};
    c.out_dir = fs::path("acceptance_runs") / name;
    fs::remove_all(c.out_dir);
    train(c, &d);
    dirs.push_back(c.out_dir);
  }
  std::vector<std::string> differ;
  for (const char* f : {"loss_log.csv", "report_zsl.csv", "report_zsl.json", "report_gzsl.csv", "report_gzsl.json",
                        "checkpoint.gbet", "summary.json"}) {
    const auto a = slurp(dirs[0] / f), b = slurp(dirs[1] / f);
    if (a.empty() || a != b) differ.emplace_back(f);
  }
  std::string detail = differ.empty() ? "loss log, reports and checkpoint are bitwise identical across two runs"
                                      : "differing files:";
  for (const auto& f : differ) detail += " " + f;
  verdict(differ.empty(), "determinism", detail);
}

}  // namespace

int main() {
  const auto start = Clock::now();
  gradient_suite();
  oracle_equivalence();
  loss_identities();
  const auto d = gen_dataset(BenchmarkSpec{});
  structural_invariants(d);
  determinism(d);
  const auto runs = train_seeds(d);
  transfer(runs);
  ablation(runs);
  std::printf("%d criteria failed, total %.0f s\n", failures, seconds_since(start));
  return failures == 0 ? 0 : 1;
}
