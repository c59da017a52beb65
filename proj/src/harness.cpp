#include "gbe/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <thread>

#include "gbe/objective.hpp"
#include "gbe/serialize.hpp"

namespace gbe {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kSplitStream = 0x2545f4914f6cdd1dULL;
constexpr std::uint64_t kShuffleStream = 0x5851f42d4c957f2dULL;

std::string format(const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) { std::ofstream(path) << text; }

}  // namespace

// ---------------------------------------------------------------------------
// Config

void RunConfig::validate() const {
  std::vector<std::string> bad;
  const auto& m = model;
  if (m.groups < 1) bad.emplace_back("model.groups must be >= 1");
  if (m.embed_dim < 1) bad.emplace_back("model.embed_dim must be >= 1");
  if (m.c1 < 1 || m.c2 < 1 || m.c3 < 1) bad.emplace_back("model.c1/c2/c3 must be >= 1");
  if (m.in_channels < 1) bad.emplace_back("model.in_channels must be >= 1");
  if (!(m.slope > 0 && m.slope < 1)) bad.emplace_back("model.slope must lie in (0, 1)");
  if (fused_channels && *fused_channels != m.groups * m.embed_dim)
    bad.emplace_back("model.fused_channels (" + std::to_string(*fused_channels) + ") must equal groups * embed_dim (" +
                     std::to_string(m.groups * m.embed_dim) + ")");
  if (!(lambda >= 0 && lambda <= 1)) bad.emplace_back("lambda must lie in [0, 1]");
  if (schedule.epochs < 0) bad.emplace_back("schedule.epochs must be >= 0");
  for (int e : schedule.decay_epochs)
    if (e < 0 || e >= schedule.epochs)
      bad.emplace_back("schedule.decay_epochs entry " + std::to_string(e) + " must be < epochs (" +
                       std::to_string(schedule.epochs) + ")");
  if (!(schedule.decay_factor > 0)) bad.emplace_back("schedule.decay_factor must be positive");
  if (batch_size < 1) bad.emplace_back("batch_size must be >= 1");
  if (!(optimizer.lr > 0)) bad.emplace_back("optimizer.lr must be positive");
  if (optimizer.weight_decay < 0) bad.emplace_back("optimizer.weight_decay must be >= 0");
  if (!(optimizer.beta1 >= 0 && optimizer.beta1 < 1)) bad.emplace_back("optimizer.beta1 must lie in [0, 1)");
  if (!(optimizer.beta2 >= 0 && optimizer.beta2 < 1)) bad.emplace_back("optimizer.beta2 must lie in [0, 1)");
  if (!(optimizer.eps > 0)) bad.emplace_back("optimizer.eps must be positive");
  if (!(validation_fraction >= 0 && validation_fraction < 1)) bad.emplace_back("validation_fraction must lie in [0, 1)");
  if (ks.empty()) bad.emplace_back("ks must not be empty");
  for (int k : ks)
    if (k < 1) bad.emplace_back("ks entries must be >= 1");
  if (threads < 1) bad.emplace_back("threads must be >= 1");
  for (int g : sweep_groups)
    if (g < 1) bad.emplace_back("sweep.groups entries must be >= 1");
  for (double l : sweep_lambdas)
    if (!(l >= 0 && l <= 1)) bad.emplace_back("sweep.lambdas entries must lie in [0, 1]");
  if (!bad.empty()) {
    std::string msg = "invalid run config:";
    for (const auto& b : bad) msg += "\n  - " + b;
    throw ValidationError(msg);
  }
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  try {
    if (j.contains("model")) {
      const auto& m = j["model"];
      c.model.in_channels = m.value("in_channels", c.model.in_channels);
      c.model.c1 = m.value("c1", c.model.c1);
      c.model.c2 = m.value("c2", c.model.c2);
      c.model.c3 = m.value("c3", c.model.c3);
      c.model.groups = m.value("groups", c.model.groups);
      c.model.embed_dim = m.value("embed_dim", c.model.embed_dim);
      c.model.slope = m.value("slope", c.model.slope);
      c.model.attention_scale = m.value("attention_scale", c.model.attention_scale);
      c.model.gate_sigmoid = m.value("gate_sigmoid", c.model.gate_sigmoid);
      c.model.per_group_weights = m.value("per_group_weights", c.model.per_group_weights);
      c.model.learnable_affinity = m.value("learnable_affinity", c.model.learnable_affinity);
      if (m.contains("fused_channels")) c.fused_channels = m["fused_channels"].get<int>();
      const auto mode = m.value("reg_mode", std::string("within_rows"));
      if (mode == "within_rows")
        c.reg_mode = RegMode::WithinRows;
      else if (mode == "across_groups")
        c.reg_mode = RegMode::AcrossGroups;
      else
        throw ValidationError("invalid run config:\n  - model.reg_mode must be within_rows or across_groups");
    }
    if (j.contains("optimizer")) {
      const auto& o = j["optimizer"];
      c.optimizer.lr = o.value("lr", c.optimizer.lr);
      c.optimizer.weight_decay = o.value("weight_decay", c.optimizer.weight_decay);
      c.optimizer.beta1 = o.value("beta1", c.optimizer.beta1);
      c.optimizer.beta2 = o.value("beta2", c.optimizer.beta2);
      c.optimizer.eps = o.value("eps", c.optimizer.eps);
    }
    if (j.contains("schedule")) {
      const auto& s = j["schedule"];
      c.schedule.epochs = s.value("epochs", c.schedule.epochs);
      c.schedule.decay_epochs = s.value("decay_epochs", c.schedule.decay_epochs);
      c.schedule.decay_factor = s.value("decay_factor", c.schedule.decay_factor);
    }
    if (j.contains("ablation")) {
      const auto& a = j["ablation"];
      auto& sw = c.model.switches;
      sw.mlfef = a.value("mlfef", sw.mlfef);
      sw.lid = a.value("lid", sw.lid);
      sw.gem = a.value("gem", sw.gem);
      sw.gla = a.value("gla", sw.gla);
    }
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lambda = j.value("lambda", c.lambda);
    c.seed = j.value("seed", c.seed);
    if (j.contains("dataset")) c.dataset = j["dataset"].get<std::string>();
    if (j.contains("out_dir")) c.out_dir = j["out_dir"].get<std::string>();
    c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
    c.ks = j.value("ks", c.ks);
    c.threads = j.value("threads", c.threads);
    c.verbose = j.value("verbose", c.verbose);
    if (j.contains("benchmark")) c.benchmark = j["benchmark"].get<BenchmarkSpec>();
    if (j.contains("sweep")) {
      c.sweep_groups = j["sweep"].value("groups", c.sweep_groups);
      c.sweep_lambdas = j["sweep"].value("lambdas", c.sweep_lambdas);
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("invalid run config:\n  - ") + e.what());
  }
  return c;
}

json to_json(const RunConfig& c) {
  json model = {{"in_channels", c.model.in_channels},
                {"c1", c.model.c1},
                {"c2", c.model.c2},
                {"c3", c.model.c3},
                {"groups", c.model.groups},
                {"embed_dim", c.model.embed_dim},
                {"slope", c.model.slope},
                {"attention_scale", c.model.attention_scale},
                {"gate_sigmoid", c.model.gate_sigmoid},
                {"per_group_weights", c.model.per_group_weights},
                {"learnable_affinity", c.model.learnable_affinity},
                {"reg_mode", c.reg_mode == RegMode::WithinRows ? "within_rows" : "across_groups"}};
  if (c.fused_channels) model["fused_channels"] = *c.fused_channels;
  return {{"model", model},
          {"optimizer",
           {{"lr", c.optimizer.lr},
            {"weight_decay", c.optimizer.weight_decay},
            {"beta1", c.optimizer.beta1},
            {"beta2", c.optimizer.beta2},
            {"eps", c.optimizer.eps}}},
          {"schedule",
           {{"epochs", c.schedule.epochs},
            {"decay_epochs", c.schedule.decay_epochs},
            {"decay_factor", c.schedule.decay_factor}}},
          {"ablation",
           {{"mlfef", c.model.switches.mlfef},
            {"lid", c.model.switches.lid},
            {"gem", c.model.switches.gem},
            {"gla", c.model.switches.gla}}},
          {"batch_size", c.batch_size},
          {"lambda", c.lambda},
          {"seed", c.seed},
          {"dataset", c.dataset.string()},
          {"out_dir", c.out_dir.string()},
          {"validation_fraction", c.validation_fraction},
          {"ks", c.ks},
          {"threads", c.threads},
          {"verbose", c.verbose},
          {"benchmark", json(c.benchmark)},
          {"sweep", {{"groups", c.sweep_groups}, {"lambdas", c.sweep_lambdas}}}};
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("invalid run config:\n  - cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ValidationError("invalid run config:\n  - " + path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

// ---------------------------------------------------------------------------
// Scoring and evaluation

Protocol parse_protocol(const std::string& s) {
  if (s == "zsl") return Protocol::Zsl;
  if (s == "gzsl") return Protocol::Gzsl;
  throw UsageError("unknown protocol '" + s + "' (expected zsl or gzsl)");
}

std::string protocol_name(Protocol p) { return p == Protocol::Zsl ? "zsl" : "gzsl"; }

std::vector<int> protocol_ids(const ClassEmbeddingTable& table, Protocol p) {
  return p == Protocol::Zsl ? table.unseen_ids : table.all_ids();
}

std::vector<int> test_rows(const Dataset& d) {
  std::vector<int> rows(static_cast<std::size_t>(d.test_count));
  std::iota(rows.begin(), rows.end(), d.train_count);
  return rows;
}

ScoreMatrix build_score_matrix(const Dataset& d, const std::vector<int>& rows, const std::vector<int>& ids,
                               const ImageScorer& scorer, int threads) {
  ScoreMatrix m;
  m.label_ids = ids;
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto l = static_cast<Eigen::Index>(ids.size());
  m.scores = Eigen::MatrixXd::Zero(n, l);
  m.truth = ByteMatrix::Zero(n, l);
  auto work = [&](Eigen::Index begin, Eigen::Index end) {
    for (Eigen::Index i = begin; i < end; ++i) {
      const int r = rows[static_cast<std::size_t>(i)];
      const auto s = scorer(r, ids);
      if (static_cast<Eigen::Index>(s.size()) != l) throw DimensionError("scorer returned wrong score count");
      for (Eigen::Index j = 0; j < l; ++j) {
        m.scores(i, j) = s[static_cast<std::size_t>(j)];
        m.truth(i, j) = d.has_label(r, ids[static_cast<std::size_t>(j)]) ? 1 : 0;
      }
    }
  };
  if (threads <= 1 || n < 2) {
    work(0, n);
    return m;
  }
  std::vector<std::thread> pool;
  const Eigen::Index chunk = (n + threads - 1) / threads;
  for (Eigen::Index b = 0; b < n; b += chunk) pool.emplace_back(work, b, std::min(n, b + chunk));
  for (auto& t : pool) t.join();
  return m;
}

std::vector<float> channel_means(const Dataset& d) {
  const int c = d.images.dim(1);
  const std::size_t plane = static_cast<std::size_t>(d.images.dim(2)) * d.images.dim(3);
  std::vector<double> acc(static_cast<std::size_t>(c), 0.0);
  const auto& x = d.images.data();
  for (int i = 0; i < d.train_count; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const auto base = (static_cast<std::size_t>(i) * c + ch) * plane;
      for (std::size_t k = 0; k < plane; ++k) acc[ch] += x[base + k];
    }
  std::vector<float> means;
  for (double a : acc) means.push_back(static_cast<float>(a / (static_cast<double>(d.train_count) * plane)));
  return means;
}

Tensor<float> model_input(const Dataset& d, int row, const std::vector<float>& means) {
  auto img = d.image(row);
  const std::size_t plane = static_cast<std::size_t>(img.dim(1)) * img.dim(2);
  for (std::size_t k = 0; k < img.size(); ++k) img[k] -= means[k / plane];
  return img;
}

ImageScorer model_scorer(const Model<float>& model, const Dataset& d) {
  return [&model, &d, means = channel_means(d)](int row, const std::vector<int>& ids) {
    auto s = model.forward(constant(model_input(d, row, means)));
    auto scores = class_scores(s, d.table, ids);
    return std::vector<double>(scores.value().data().begin(), scores.value().data().end());
  };
}

std::vector<ReportRow> evaluate_scores(const ScoreMatrix& m, Protocol p, const std::vector<int>& ks) {
  const double map = mean_ap(m).value;
  std::vector<ReportRow> rows;
  for (int k : ks) {
    const auto prf = topk_prf(m, k);
    rows.push_back({protocol_name(p), k, prf.precision, prf.recall, prf.f1, map});
  }
  return rows;
}

std::vector<ReportRow> evaluate(const RunConfig& cfg, const fs::path& checkpoint, const Dataset& d, Protocol p,
                                const std::vector<int>& ks) {
  Model<float> model(cfg.model, cfg.seed);
  model.load(read_checkpoint(checkpoint));
  if (d.table.dim() != cfg.model.embed_dim)
    throw UsageError("evaluate: dataset embedding width " + std::to_string(d.table.dim()) + " != model embed_dim " +
                     std::to_string(cfg.model.embed_dim));
  const auto m = build_score_matrix(d, test_rows(d), protocol_ids(d.table, p), model_scorer(model, d), cfg.threads);
  return evaluate_scores(m, p, ks);
}

Baseline shuffle_baseline(const ScoreMatrix& m, int trials, std::uint64_t seed) {
  Rng rng(seed ^ kShuffleStream);
  std::vector<double> maps;
  ScoreMatrix s = m;
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(m.scores.rows()));
  for (int t = 0; t < trials; ++t) {
    for (Eigen::Index c = 0; c < m.scores.cols(); ++c) {
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      for (Eigen::Index r = 0; r < m.scores.rows(); ++r) s.scores(r, c) = m.scores(perm[static_cast<std::size_t>(r)], c);
    }
    maps.push_back(mean_ap(s).value);
  }
  Baseline b;
  b.mean = std::accumulate(maps.begin(), maps.end(), 0.0) / static_cast<double>(maps.size());
  double var = 0;
  for (double v : maps) var += (v - b.mean) * (v - b.mean);
  b.std = maps.size() > 1 ? std::sqrt(var / static_cast<double>(maps.size() - 1)) : 0.0;
  return b;
}

// ---------------------------------------------------------------------------
// Training

std::string loss_log_csv(const std::vector<EpochLog>& log) {
  std::string out = "epoch,lr,loss,rank_loss,reg_loss,skipped,val_map\n";
  char buf[256];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g,%d,%.9g\n", e.epoch, e.lr, e.loss, e.rank_loss, e.reg_loss,
                  e.skipped, e.val_map);
    out += buf;
  }
  return out;
}

TrainResult train(const RunConfig& cfg, const Dataset* data) {
  cfg.validate();
  Dataset owned;
  if (!data) {
    owned = read_dataset(cfg.dataset);
    data = &owned;
  }
  const Dataset& d = *data;
  if (d.table.dim() != cfg.model.embed_dim)
    throw ValidationError("invalid run config:\n  - model.embed_dim (" + std::to_string(cfg.model.embed_dim) +
                          ") must equal the dataset embedding width (" + std::to_string(d.table.dim()) + ")");
  const auto start = std::chrono::steady_clock::now();

  const fs::path out = cfg.out_dir;
  fs::create_directories(out);
  std::ofstream(out / "config.json") << to_json(cfg).dump(2) << '\n';
  std::string dataset_hash = d.checksum;
  if (dataset_hash.empty()) {
    auto bytes = encode_tensor(d.images);
    auto more = encode_tensor(d.labels);
    bytes.insert(bytes.end(), more.begin(), more.end());
    dataset_hash = sha256_hex(bytes);
  }
  write_text(out / "dataset_hash.txt", dataset_hash + "\n");

  Model<float> model(cfg.model, cfg.seed);
  const auto params = model.param_vars();
  Adam<float> adam(params, cfg.optimizer);
  adam.zero_grad();
  const auto seen_vectors = d.table.rows<float>(d.table.seen_ids);

  Rng rng(cfg.seed ^ kSplitStream);
  std::vector<int> rows(static_cast<std::size_t>(d.train_count));
  std::iota(rows.begin(), rows.end(), 0);
  std::shuffle(rows.begin(), rows.end(), rng);
  const auto n_val = static_cast<std::size_t>(std::lround(cfg.validation_fraction * static_cast<double>(rows.size())));
  std::vector<int> val_rows(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<int> train_rows(rows.begin() + static_cast<std::ptrdiff_t>(n_val), rows.end());
  std::sort(val_rows.begin(), val_rows.end());

  const auto means = channel_means(d);
  TrainResult result;
  for (int epoch = 0; epoch < cfg.schedule.epochs; ++epoch) {
    double lr = cfg.optimizer.lr;
    for (int e : cfg.schedule.decay_epochs)
      if (epoch >= e) lr *= cfg.schedule.decay_factor;
    adam.set_lr(lr);
    std::shuffle(train_rows.begin(), train_rows.end(), rng);

    EpochLog log;
    log.epoch = epoch + 1;
    log.lr = lr;
    double used_total = 0;
    for (std::size_t b = 0; b < train_rows.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      const auto e = std::min(train_rows.size(), b + static_cast<std::size_t>(cfg.batch_size));
      Tape<float> tape;
      TapeScope<float> scope(tape);
      std::vector<Var<float>> groups;
      std::vector<LabelVector> labels;
      for (auto i = b; i < e; ++i) {
        const int r = train_rows[i];
        groups.push_back(model.forward(constant(model_input(d, r, means))));
        labels.push_back(d.labels_over(r, d.table.seen_ids));
      }
      std::optional<TotalLoss<float>> total;
      try {
        total = total_loss(groups, labels, cfg.lambda, seen_vectors, cfg.reg_mode);
      } catch (const UsageError&) {
        log.skipped += static_cast<int>(e - b);
        continue;
      }
      log.skipped += total->skipped;
      tape.backward(total->loss);
      adam.step();
      log.loss += total->loss.item() * total->used;
      log.rank_loss += total->rank_mean * total->used;
      log.reg_loss += total->reg_mean * total->used;
      used_total += total->used;
    }
    if (used_total > 0) {
      log.loss /= used_total;
      log.rank_loss /= used_total;
      log.reg_loss /= used_total;
    }
    if (!val_rows.empty()) {
      const auto vm = build_score_matrix(d, val_rows, d.table.seen_ids, model_scorer(model, d), cfg.threads);
      try {
        log.val_map = mean_ap(vm).value;
      } catch (const UsageError&) {
        log.val_map = 0;
      }
    }
    if (cfg.verbose)
      std::fprintf(stderr, "[%s] epoch %d lr %.2e loss %.5f rank %.5f reg %.5f val_map %.4f\n", out.string().c_str(),
                   log.epoch, log.lr, log.loss, log.rank_loss, log.reg_loss, log.val_map);
    result.log.push_back(log);
  }

  write_checkpoint(out / "checkpoint", snapshot_params(model.params()));
  write_text(out / "loss_log.csv", loss_log_csv(result.log));

  const auto scorer = model_scorer(model, d);
  const auto rows_test = test_rows(d);
  const auto zsl_m = build_score_matrix(d, rows_test, protocol_ids(d.table, Protocol::Zsl), scorer, cfg.threads);
  const auto gzsl_m = build_score_matrix(d, rows_test, protocol_ids(d.table, Protocol::Gzsl), scorer, cfg.threads);
  result.zsl = evaluate_scores(zsl_m, Protocol::Zsl, cfg.ks);
  result.gzsl = evaluate_scores(gzsl_m, Protocol::Gzsl, cfg.ks);
  result.zsl_map = result.zsl.front().map;
  result.gzsl_map = result.gzsl.front().map;
  const auto base = shuffle_baseline(zsl_m, 20, cfg.seed);
  result.zsl_shuffle_mean = base.mean;
  result.zsl_shuffle_std = base.std;
  write_report(result.zsl, out / "report_zsl.csv", out / "report_zsl.json");
  write_report(result.gzsl, out / "report_gzsl.csv", out / "report_gzsl.json");
  json summary = {{"zsl_map", result.zsl_map},
                  {"gzsl_map", result.gzsl_map},
                  {"zsl_shuffle_baseline_mean", base.mean},
                  {"zsl_shuffle_baseline_std", base.std},
                  {"dataset_hash", dataset_hash}};
  std::ofstream(out / "summary.json") << summary.dump(2) << '\n';
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

// ---------------------------------------------------------------------------
// Gradient check

GradcheckSetup tiny_gradcheck_setup() {
  GradcheckSetup s;
  s.model.c1 = 4;
  s.model.c2 = 4;
  s.model.c3 = 8;
  s.model.groups = 2;
  s.model.embed_dim = 4;
  return s;
}

namespace {

std::string module_of(const std::string& param) { return param.substr(0, param.find('.')); }

std::vector<GradcheckRow> per_module(const std::vector<TensorCheck>& checks, double tol) {
  std::vector<GradcheckRow> rows;
  for (const auto& c : checks) {
    const auto mod = module_of(c.name);
    auto it = std::find_if(rows.begin(), rows.end(), [&](const GradcheckRow& r) { return r.name == mod; });
    if (it == rows.end()) {
      rows.push_back({mod, 0, tol, true, 0, 0});
      it = rows.end() - 1;
    }
    it->rel_error = std::max(it->rel_error, c.rel_error);
    it->coords += c.coords;
    it->kinks += c.kinks;
    it->pass = it->rel_error <= tol && it->coords > 0;
  }
  return rows;
}

template <typename Scalar>
struct ToyBatch {
  std::vector<Var<Scalar>> images;
  Var<Scalar> vectors;
  std::vector<LabelVector> labels;
};

ToyBatch<double> toy_batch(const GradcheckSetup& setup, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  ToyBatch<double> b;
  for (int i = 0; i < setup.batch; ++i) {
    Tensor<double> img({setup.model.in_channels, setup.image_size, setup.image_size});
    for (auto& v : img.data()) v = static_cast<float>(unit(rng));
    b.images.push_back(constant(std::move(img)));
  }
  Tensor<double> table({setup.num_classes, setup.model.embed_dim});
  for (int c = 0; c < setup.num_classes; ++c) {
    for (int j = 0; j < table.dim(1); ++j) table.matrix()(c, j) = normal(rng);
    table.matrix().row(c) /= table.matrix().row(c).norm();
    for (int j = 0; j < table.dim(1); ++j) table.matrix()(c, j) = static_cast<float>(table.matrix()(c, j));
  }
  b.vectors = constant(std::move(table));
  for (int i = 0; i < setup.batch; ++i) {
    LabelVector y(static_cast<std::size_t>(setup.num_classes), 0);
    y[static_cast<std::size_t>(i % setup.num_classes)] = 1;
    y[static_cast<std::size_t>((i + 2) % setup.num_classes)] = 1;
    b.labels.push_back(y);
  }
  return b;
}

ToyBatch<float> to_float(const ToyBatch<double>& b) {
  ToyBatch<float> out;
  for (const auto& img : b.images) out.images.push_back(constant(img.value().cast<float>()));
  out.vectors = constant(b.vectors.value().cast<float>());
  out.labels = b.labels;
  return out;
}

template <typename Scalar>
std::function<Var<Scalar>()> toy_loss(const Model<Scalar>& model, const ToyBatch<Scalar>& b, double lambda) {
  return [&model, &b, lambda] {
    std::vector<Var<Scalar>> groups;
    for (const auto& img : b.images) groups.push_back(model.forward(img));
    return total_loss(groups, b.labels, lambda, b.vectors).loss;
  };
}

}  // namespace

GradcheckReport gradcheck(const GradcheckSetup& setup, std::uint64_t seed) {
  GradcheckReport r;
  Model<float> model(setup.model, seed);
  const auto shadow = model.cast<double>();
  const auto batch = toy_batch(setup, seed);
  GradcheckOptions opts;
  opts.step = setup.step > 0 ? setup.step : 1e-6;
  opts.max_coords = 6;
  opts.seed = seed;
  opts.skip_kinks = true;
  const auto reference = toy_loss(shadow, batch, setup.lambda);
  if (setup.float32) {
    // 32-bit reverse-mode gradients against 64-bit central differences at
    // the same parameter values
    const auto fbatch = to_float(batch);
    const auto grads = backprop_gradients(model.params(), toy_loss(model, fbatch, setup.lambda));
    r.modules = per_module(compare_gradients(shadow.params(), reference, grads, opts), 1e-2);
  } else {
    r.modules = per_module(check_gradients(shadow.params(), reference, opts), 1e-4);
  }
  for (const auto& op : op_gradcheck_suite<double>(seed)) {
    GradcheckRow row{op.op, op.rel_error, 1e-3, op.rel_error <= 1e-3, op.coords, 0};
    if (!row.pass) r.failing_ops.push_back(op.op);
    r.ops.push_back(row);
  }
  r.pass = std::all_of(r.modules.begin(), r.modules.end(), [](const auto& m) { return m.pass; }) && r.failing_ops.empty();
  return r;
}

GradcheckReport gradcheck_params(const ParamList<double>& params, const std::function<Var<double>()>& loss_fn) {
  GradcheckReport r;
  r.modules = per_module(check_gradients<double>(params, loss_fn), 1e-4);
  r.pass = std::all_of(r.modules.begin(), r.modules.end(), [](const auto& m) { return m.pass; });
  return r;
}

std::string gradcheck_table(const GradcheckReport& r) {
  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-8s %-22s %12s %10s %7s %6s %s\n", "kind", "name", "max_rel_err", "tolerance",
                "coords", "kinks", "status");
  os << buf;
  auto emit = [&](const char* kind, const GradcheckRow& row) {
    std::snprintf(buf, sizeof buf, "%-8s %-22s %12.3e %10.1e %7d %6d %s\n", kind, row.name.c_str(), row.rel_error,
                  row.tolerance, row.coords, row.kinks, row.pass ? "PASS" : "FAIL");
    os << buf;
  };
  for (const auto& m : r.modules) emit("module", m);
  for (const auto& o : r.ops) emit("op", o);
  os << (r.pass ? "gradcheck: PASS\n" : "gradcheck: FAIL\n");
  for (const auto& op : r.failing_ops) os << "failing op: " << op << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Sweep and ablation

std::vector<SweepRow> sweep(const RunConfig& cfg, const Dataset* data) {
  const auto groups = cfg.sweep_groups.empty() ? std::vector<int>{cfg.model.groups} : cfg.sweep_groups;
  const auto lambdas = cfg.sweep_lambdas.empty() ? std::vector<double>{cfg.lambda} : cfg.sweep_lambdas;
  Dataset owned;
  if (!data) {
    owned = read_dataset(cfg.dataset);
    data = &owned;
  }
  std::vector<SweepRow> rows;
  for (int g : groups)
    for (double l : lambdas) {
      RunConfig c = cfg;
      c.model.groups = g;
      c.fused_channels.reset();
      c.lambda = l;
      c.out_dir = cfg.out_dir / ("n" + std::to_string(g) + "_lambda" + format("%g", l));
      const auto res = train(c, data);
      SweepRow row{g, l, res.zsl_map, res.gzsl_map, 0, 0};
      if (!res.log.empty()) {
        row.first_rank_loss = res.log.front().rank_loss;
        row.last_rank_loss = res.log.back().rank_loss;
      }
      rows.push_back(row);
    }
  fs::create_directories(cfg.out_dir);
  write_text(cfg.out_dir / "sweep.csv", sweep_csv(rows));
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "groups,lambda,zsl_map,gzsl_map,first_rank_loss,last_rank_loss\n";
  char buf[200];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%g,%.6f,%.6f,%.6f,%.6f\n", r.groups, r.lambda, r.zsl_map, r.gzsl_map,
                  r.first_rank_loss, r.last_rank_loss);
    out += buf;
  }
  return out;
}

std::vector<AblationVariant> ablation_lattice() {
  return {{"a", {false, false, false, false}}, {"b", {true, false, false, false}}, {"c", {true, true, false, false}},
          {"d", {true, false, true, false}},   {"e", {true, true, false, true}},    {"f", {true, false, true, true}},
          {"full", {true, true, true, true}}};
}

std::vector<AblationRow> ablate(const RunConfig& cfg, const Dataset* data, const std::vector<AblationVariant>& variants) {
  Dataset owned;
  if (!data) {
    owned = read_dataset(cfg.dataset);
    data = &owned;
  }
  std::vector<AblationRow> rows;
  for (const auto& v : variants) {
    RunConfig c = cfg;
    c.model.switches = v.switches;
    c.out_dir = cfg.out_dir / v.name;
    const auto res = train(c, data);
    rows.push_back({v, res.zsl_map, res.gzsl_map});
  }
  fs::create_directories(cfg.out_dir);
  std::string csv = "variant,mlfef,lid,gem,gla,zsl_map,gzsl_map\n";
  char buf[200];
  for (const auto& r : rows) {
    const auto& s = r.variant.switches;
    std::snprintf(buf, sizeof buf, "%s,%d,%d,%d,%d,%.6f,%.6f\n", r.variant.name.c_str(), s.mlfef, s.lid, s.gem, s.gla,
                  r.zsl_map, r.gzsl_map);
    csv += buf;
  }
  write_text(cfg.out_dir / "ablation.csv", csv);
  write_text(cfg.out_dir / "ablation.txt", ablation_table(rows));
  return rows;
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  char buf[64];
  auto cell = [&](const std::string& s) {
    std::snprintf(buf, sizeof buf, "%8s", s.c_str());
    os << buf;
  };
  os << "          ";
  for (const auto& r : rows) cell(r.variant.name);
  os << '\n';
  const std::pair<const char*, bool ModuleSwitches::*> flags[] = {
      {"ML-FEF    ", &ModuleSwitches::mlfef},
      {"LID-Module", &ModuleSwitches::lid},
      {"GE Module ", &ModuleSwitches::gem},
      {"GLA Graph ", &ModuleSwitches::gla}};
  for (const auto& [label, member] : flags) {
    os << label;
    for (const auto& r : rows) cell(r.variant.switches.*member ? "x" : "");
    os << '\n';
  }
  os << "mAP ZSL   ";
  for (const auto& r : rows) cell(format("%.2f", 100 * r.zsl_map));
  os << "\nmAP GZSL  ";
  for (const auto& r : rows) cell(format("%.2f", 100 * r.gzsl_map));
  os << '\n';
  return os.str();
}

}  // namespace gbe
