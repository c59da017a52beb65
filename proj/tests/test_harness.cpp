#include "support.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "gbe/harness.hpp"
#include "gbe/serialize.hpp"

using namespace gbe;
namespace fs = std::filesystem;

namespace {

BenchmarkSpec tiny_spec() {
  BenchmarkSpec s;
  s.num_seen = 6;
  s.num_unseen = 3;
  s.embed_dim = 4;
  s.image_size = 16;
  s.grid = 2;
  s.max_labels_per_image = 2;
  s.train_count = 40;
  s.test_count = 12;
  return s;
}

RunConfig tiny_run(const fs::path& out) {
  RunConfig c;
  c.model.c1 = 4;
  c.model.c2 = 4;
  c.model.c3 = 8;
  c.model.groups = 2;
  c.model.embed_dim = 4;
  c.schedule.epochs = 2;
  c.schedule.decay_epochs = {1};
  c.batch_size = 8;
  c.optimizer.lr = 1e-3;
  c.validation_fraction = 0.2;
  c.ks = {1, 2};
  c.out_dir = out;
  return c;
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("gbe_harness_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(GBE_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

const Dataset& tiny_data() {
  static const Dataset d = gen_dataset(tiny_spec());
  return d;
}

}  // namespace

TEST_CASE("default run config is valid") { CHECK_NOTHROW(RunConfig{}.validate()); }

TEST_CASE("config validation lists every violated field") {
  RunConfig c;
  c.lambda = 1.5;
  c.batch_size = 0;
  c.model.slope = 2;
  c.fused_channels = 100;
  c.schedule.decay_epochs = {25};
  try {
    c.validate();
    FAIL("expected a ValidationError");
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    for (const char* field : {"lambda", "batch_size", "model.slope", "model.fused_channels", "decay_epochs"}) {
      INFO(field);
      CHECK(msg.find(field) != std::string::npos);
    }
  }
}

TEST_CASE("config json round trip and malformed input") {
  auto c = tiny_run("somewhere");
  c.reg_mode = RegMode::AcrossGroups;
  c.model.switches.gla = false;
  const auto back = run_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK(back.model.switches == c.model.switches);
  CHECK_THROWS_AS(run_config_from_json(nlohmann::json{{"model", {{"reg_mode", "sideways"}}}}), ValidationError);
  CHECK_THROWS_AS(run_config_from_json(nlohmann::json{{"batch_size", "many"}}), ValidationError);
  CHECK_THROWS_AS(load_run_config(scratch("missing.json")), ValidationError);
}

TEST_CASE("embedding width mismatch is rejected before training") {
  auto c = tiny_run(scratch("width"));
  c.model.embed_dim = 5;
  CHECK_THROWS_AS(train(c, &tiny_data()), ValidationError);
}

TEST_CASE("zero epochs writes the initial parameters") {
  auto c = tiny_run(scratch("zero"));
  c.schedule.epochs = 0;
  c.schedule.decay_epochs.clear();
  const auto r = train(c, &tiny_data());
  CHECK(r.log.empty());
  const auto saved = read_checkpoint(c.out_dir / "checkpoint");
  Model<float> init(c.model, c.seed);
  for (const auto& [name, v] : init.params()) {
    INFO(name);
    CHECK(saved.at(name) == v.value());
  }
  CHECK(fs::exists(c.out_dir / "report_zsl.csv"));
}

TEST_CASE("training is bitwise deterministic and evaluation reproduces the report") {
  auto a = tiny_run(scratch("det_a"));
  auto b = tiny_run(scratch("det_b"));
  const auto ra = train(a, &tiny_data());
  train(b, &tiny_data());
  for (const char* f : {"loss_log.csv", "report_zsl.csv", "report_gzsl.csv", "checkpoint.gbet", "dataset_hash.txt"}) {
    INFO(f);
    CHECK(slurp(a.out_dir / f) == slurp(b.out_dir / f));
  }
  CHECK(ra.log.size() == 2);
  CHECK(ra.log[1].lr == doctest::Approx(1e-4));
  const auto rows = evaluate(a, a.out_dir / "checkpoint", tiny_data(), Protocol::Zsl, a.ks);
  REQUIRE(rows.size() == ra.zsl.size());
  for (std::size_t i = 0; i < rows.size(); ++i) CHECK(rows[i].map == ra.zsl[i].map);
}

TEST_CASE("ZSL scores only unseen labels and GZSL scores all labels") {
  const auto& d = tiny_data();
  CHECK(protocol_ids(d.table, Protocol::Zsl) == d.table.unseen_ids);
  CHECK(protocol_ids(d.table, Protocol::Gzsl).size() == 9);
  CHECK_THROWS_AS(parse_protocol("fsl"), UsageError);
}

TEST_CASE("an oracle scorer reaches perfect metrics and the shuffle baseline does not") {
  const auto& d = tiny_data();
  const auto ids = protocol_ids(d.table, Protocol::Gzsl);
  auto oracle_scorer = [&d](int row, const std::vector<int>& label_ids) {
    std::vector<double> s;
    for (int id : label_ids) s.push_back(d.has_label(row, id) ? 1.0 : 0.0);
    return s;
  };
  const auto m = build_score_matrix(d, test_rows(d), ids, oracle_scorer, 2);
  CHECK(mean_ap(m).value == 1.0);
  CHECK(topk_prf(m, 1).precision == 1.0);
  const auto base = shuffle_baseline(m, 10, 1);
  CHECK(base.mean < 1.0);
  CHECK(base.std >= 0.0);
}

TEST_CASE("gradcheck passes on the tiny setup in both precisions") {
  auto setup = tiny_gradcheck_setup();
  const auto r32 = gradcheck(setup);
  INFO(gradcheck_table(r32));
  CHECK(r32.pass);
  CHECK(r32.failing_ops.empty());
  setup.float32 = false;
  CHECK(gradcheck(setup).pass);
}

TEST_CASE("an injected backward fault is reported under the op name") {
  ScopedBackwardFault fault("softmax_rows", 1.5);
  const auto r = gradcheck(tiny_gradcheck_setup());
  CHECK_FALSE(r.pass);
  CHECK(std::find(r.failing_ops.begin(), r.failing_ops.end(), "softmax_rows") != r.failing_ops.end());
  CHECK(gradcheck_table(r).find("failing op: softmax_rows") != std::string::npos);
}

TEST_CASE("gradcheck with no parameters passes vacuously") {
  const auto r = gradcheck_params({}, [] { return constant(Tensor<double>({1}, 2.0)); });
  CHECK(r.pass);
  CHECK(r.modules.empty());
}

TEST_CASE("ablation lattice and table layout") {
  const auto lattice = ablation_lattice();
  REQUIRE(lattice.size() == 7);
  CHECK(lattice.front().switches == ModuleSwitches{false, false, false, false});
  CHECK(lattice.back().name == "full");
  std::vector<AblationRow> rows{{lattice[0], 0.1234, 0.2}, {lattice[6], 0.5, 0.25}};
  const auto table = ablation_table(rows);
  CHECK(table.find("mAP ZSL") != std::string::npos);
  CHECK(table.find("12.34") != std::string::npos);
  CHECK(table.find("50.00") != std::string::npos);
}

TEST_CASE("sweep trains one run per grid point") {
  auto c = tiny_run(scratch("sweep"));
  c.schedule.epochs = 1;
  c.schedule.decay_epochs.clear();
  c.sweep_groups = {1, 2};
  c.sweep_lambdas = {0.0, 0.5};
  const auto rows = sweep(c, &tiny_data());
  CHECK(rows.size() == 4);
  CHECK(fs::exists(c.out_dir / "sweep.csv"));
  CHECK(fs::exists(c.out_dir / "n1_lambda0.5" / "report_zsl.csv"));
}

TEST_CASE("command line exit codes") {
  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("") == 2);
  CHECK(run_cli("train --bogus") == 2);

  const auto dir = scratch("cli");
  fs::create_directories(dir);
  std::ofstream(dir / "bad.json") << R"({"lambda": 3, "batch_size": -1})";
  CHECK(run_cli("train --config " + (dir / "bad.json").string()) == 2);

  auto d = gen_dataset(tiny_spec());
  write_dataset(d, dir / "data");
  {
    std::fstream f(dir / "data" / "images.gbet", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("XXXX", 4);
  }
  std::ofstream(dir / "ok.json") << R"({"model": {"embed_dim": 4}})";
  CHECK(run_cli("train --config " + (dir / "ok.json").string() + " --data " + (dir / "data").string()) == 3);
}
