#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gbe/adam.hpp"
#include "gbe/data_synth.hpp"
#include "gbe/gradcheck.hpp"
#include "gbe/metrics.hpp"
#include "gbe/model.hpp"
#include "gbe/op_suite.hpp"

namespace gbe {

struct ScheduleConfig {
  int epochs = 20;
  std::vector<int> decay_epochs{7, 14};  // lr *= decay_factor once the 0-based epoch index reaches each entry
  double decay_factor = 0.1;
};

struct RunConfig {
  ModelConfig model;
  RegMode reg_mode = RegMode::WithinRows;
  AdamOptions optimizer{.lr = 1e-3};
  ScheduleConfig schedule;
  int batch_size = 32;
  double lambda = 0.1;
  std::uint64_t seed = 1;
  std::filesystem::path dataset;
  std::filesystem::path out_dir = "runs/default";
  double validation_fraction = 0.1;
  std::vector<int> ks{3, 5};
  int threads = 1;
  bool verbose = false;  // per-epoch progress on stderr
  std::optional<int> fused_channels; // when given, must equal groups * embed_dim
  BenchmarkSpec benchmark;            // used by gen-data
  std::vector<int> sweep_groups;
  std::vector<double> sweep_lambdas;

  // Throws ValidationError listing every violated field.
  void validate() const;
};

RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& cfg);
RunConfig load_run_config(const std::filesystem::path& path);

struct EpochLog {
  int epoch = 0;
  double lr = 0;
  double loss = 0;
  double rank_loss = 0;
  double reg_loss = 0;
  int skipped = 0;
  double val_map = 0;
};

struct TrainResult {
  std::vector<EpochLog> log;
  std::vector<ReportRow> zsl;
  std::vector<ReportRow> gzsl;
  double zsl_map = 0;
  double gzsl_map = 0;
  double zsl_shuffle_mean = 0;  // shuffled-score baseline of the final ZSL scores
  double zsl_shuffle_std = 0;
  double seconds = 0;
};

std::string loss_log_csv(const std::vector<EpochLog>& log);

// Trains on `data` (or cfg.dataset when null), writing checkpoint, loss log,
// config snapshot, dataset hash and ZSL/GZSL reports into cfg.out_dir.
TrainResult train(const RunConfig& cfg, const Dataset* data = nullptr);

enum class Protocol { Zsl, Gzsl };
Protocol parse_protocol(const std::string& s);
std::string protocol_name(Protocol p);

// Label ids scored under a protocol: unseen only (ZSL) or all classes (GZSL).
std::vector<int> protocol_ids(const ClassEmbeddingTable& table, Protocol p);

// Per-image scores for `rows` of the dataset over `ids`.
using ImageScorer = std::function<std::vector<double>(int row, const std::vector<int>& ids)>;
ScoreMatrix build_score_matrix(const Dataset& d, const std::vector<int>& rows, const std::vector<int>& ids,
                               const ImageScorer& scorer, int threads = 1);

// Per-channel pixel mean over the training images; model inputs are
// centred by it.
std::vector<float> channel_means(const Dataset& d);
Tensor<float> model_input(const Dataset& d, int row, const std::vector<float>& means);

ImageScorer model_scorer(const Model<float>& model, const Dataset& d);

std::vector<ReportRow> evaluate_scores(const ScoreMatrix& m, Protocol p, const std::vector<int>& ks);

std::vector<int> test_rows(const Dataset& d);

// Loads `checkpoint` (stem, without extension) into a model built from cfg
// and reports the test split under the protocol.
std::vector<ReportRow> evaluate(const RunConfig& cfg, const std::filesystem::path& checkpoint, const Dataset& d,
                                Protocol p, const std::vector<int>& ks);

struct Baseline {
  double mean = 0;
  double std = 0;
};

// mAP of the score matrix with each class column independently permuted
// across images, over `trials` permutations.
Baseline shuffle_baseline(const ScoreMatrix& m, int trials, std::uint64_t seed);

struct GradcheckRow {
  std::string name;  // module or op
  double rel_error = 0;
  double tolerance = 0;
  bool pass = true;
  int coords = 0;  // compared coordinates
  int kinks = 0;   // coordinates dropped as kink crossings
};

struct GradcheckReport {
  std::vector<GradcheckRow> modules;
  std::vector<GradcheckRow> ops;
  bool pass = true;
  std::vector<std::string> failing_ops;
};

struct GradcheckSetup {
  ModelConfig model;
  int image_size = 8;
  int num_classes = 6;
  int batch = 2;
  double lambda = 0.3;
  bool float32 = true;  // false: 64-bit shadow path
  double step = 0;      // finite-difference step on the 64-bit loss; 0 picks 1e-6
};

// Tiny default setup: 8x8 images, n = 2 groups, d_w = 4.
GradcheckSetup tiny_gradcheck_setup();

// End-to-end finite-difference check of total_loss against every parameter
// tensor (sampled coordinates), aggregated per module, plus the per-op
// battery so a failure can be traced to a named op.
GradcheckReport gradcheck(const GradcheckSetup& setup, std::uint64_t seed = 3);
GradcheckReport gradcheck_params(const ParamList<double>& params, const std::function<Var<double>()>& loss_fn);
std::string gradcheck_table(const GradcheckReport& r);

struct SweepRow {
  int groups = 0;
  double lambda = 0;
  double zsl_map = 0;
  double gzsl_map = 0;
  double first_rank_loss = 0;
  double last_rank_loss = 0;
};

std::vector<SweepRow> sweep(const RunConfig& cfg, const Dataset* data = nullptr);
std::string sweep_csv(const std::vector<SweepRow>& rows);

struct AblationVariant {
  std::string name;  // a..f or full
  ModuleSwitches switches;
};

// The switch lattice: a (none), b (+ML-FEF), c (+LID), d (+GEM),
// e (+LID +GLA), f (+GEM +GLA), full.
std::vector<AblationVariant> ablation_lattice();

struct AblationRow {
  AblationVariant variant;
  double zsl_map = 0;
  double gzsl_map = 0;
};

std::vector<AblationRow> ablate(const RunConfig& cfg, const Dataset* data = nullptr,
                                const std::vector<AblationVariant>& variants = ablation_lattice());
std::string ablation_table(const std::vector<AblationRow>& rows);

}  // namespace gbe
