#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "gbe/harness.hpp"
#include "gbe/serialize.hpp"

using namespace gbe;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string data;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "run config (JSON)")->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "override the config seed");
  app->add_option("--out", c.out, "output directory");
  app->add_option("--data", c.data, "dataset directory (overrides config)");
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_run_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.out_dir = c.out;
  if (!c.data.empty()) cfg.dataset = c.data;
  cfg.validate();
  return cfg;
}

void print_rows(const std::vector<ReportRow>& rows) { std::cout << report_csv(rows); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gbe: group-based embedding multi-label zero-shot learning"};
  app.require_subcommand(1);

  Common gen_opts, train_opts, eval_opts, sweep_opts, ablate_opts;
  auto* gen = app.add_subcommand("gen-data", "generate the synthetic benchmark");
  add_common(gen, gen_opts);

  auto* tr = app.add_subcommand("train", "train a model and report ZSL/GZSL");
  add_common(tr, train_opts);
  bool verbose = false;
  tr->add_flag("-v,--verbose", verbose, "per-epoch progress on stderr");

  auto* ev = app.add_subcommand("evaluate", "evaluate a checkpoint on the test split");
  add_common(ev, eval_opts);
  std::string checkpoint, protocol = "zsl";
  std::vector<int> ks;
  ev->add_option("--checkpoint", checkpoint, "checkpoint stem (without extension)")->required();
  ev->add_option("--protocol", protocol, "zsl or gzsl")->check(CLI::IsMember({"zsl", "gzsl"}));
  ev->add_option("--ks", ks, "top-k cut-offs")->delimiter(',');

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every module and op");
  std::uint64_t gc_seed = 3;
  bool gc_double = false;
  gc->add_option("--seed", gc_seed, "seed");
  gc->add_flag("--double", gc_double, "use the 64-bit shadow path");
  double gc_step = 0;
  gc->add_option("--step", gc_step, "finite-difference step");

  auto* sw = app.add_subcommand("sweep", "sweep group count and lambda");
  add_common(sw, sweep_opts);

  auto* ab = app.add_subcommand("ablate", "train the module-switch lattice");
  add_common(ab, ablate_opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) {
      auto cfg = resolve(gen_opts);
      auto spec = cfg.benchmark;
      if (gen_opts.seed) spec.seed = *gen_opts.seed;
      const std::filesystem::path dir = !gen_opts.out.empty() ? std::filesystem::path(gen_opts.out) : cfg.dataset;
      if (dir.empty()) throw ValidationError("gen-data: no output directory (use --out or set dataset in the config)");
      auto d = gen_dataset(spec);
      write_dataset(d, dir);
      std::cout << "wrote " << dir.string() << " (" << d.train_count << " train, " << d.test_count
                << " test, checksum " << d.checksum << ")\n";
    } else if (tr->parsed()) {
      auto cfg = resolve(train_opts);
      cfg.verbose = cfg.verbose || verbose;
      const auto r = train(cfg);
      auto rows = r.zsl;
      rows.insert(rows.end(), r.gzsl.begin(), r.gzsl.end());
      print_rows(rows);
      std::printf("zsl shuffle baseline: %.4f +- %.4f\n", r.zsl_shuffle_mean, r.zsl_shuffle_std);
      std::fprintf(stderr, "trained in %.1f s, outputs in %s\n", r.seconds, cfg.out_dir.string().c_str());
    } else if (ev->parsed()) {
      auto cfg = resolve(eval_opts);
      if (!ks.empty()) cfg.ks = ks;
      cfg.validate();
      const auto d = read_dataset(cfg.dataset);
      const auto p = parse_protocol(protocol);
      const auto rows = evaluate(cfg, checkpoint, d, p, cfg.ks);
      print_rows(rows);
      if (!eval_opts.out.empty()) {
        std::filesystem::create_directories(cfg.out_dir);
        write_report(rows, cfg.out_dir / ("report_" + protocol + ".csv"), cfg.out_dir / ("report_" + protocol + ".json"));
      }
    } else if (gc->parsed()) {
      auto setup = tiny_gradcheck_setup();
      setup.float32 = !gc_double;
      setup.step = gc_step;
      const auto r = gradcheck(setup, gc_seed);
      std::cout << gradcheck_table(r);
      return r.pass ? 0 : 1;
    } else if (sw->parsed()) {
      const auto cfg = resolve(sweep_opts);
      std::cout << sweep_csv(sweep(cfg));
    } else if (ab->parsed()) {
      const auto cfg = resolve(ablate_opts);
      std::cout << ablation_table(ablate(cfg));
    }
  } catch (const CorruptFileError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
