// Command-line front end: stream generation, lifelong runs per arm,
// re-evaluation of stored artifacts, theory sweeps, gradient checks and
// the update-vs-reextract benchmark. Reports are JSON + CSV; exit codes:
// 0 ok, 2 config error, 3 training divergence, 4 failed verdict.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "bicr/gradcheck.hpp"
#include "bicr/lifelong.hpp"
#include "bicr/report.hpp"
#include "bicr/theory.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir = "out";
  std::vector<std::string> overrides;
  std::string mode;
  std::int64_t seed = -1;
  bool seed_set = false;
};

bicr::ExperimentConfig resolve_config(const CommonArgs& args) {
  json doc = json::object();
  if (!args.config_path.empty()) doc = bicr::read_config_document(args.config_path);
  for (const auto& assignment : args.overrides) bicr::apply_override(doc, assignment);
  if (const char* env_seed = std::getenv("BICR_SEED")) {
    doc["seed"] = std::stoull(env_seed);
  }
  if (args.seed_set) doc["seed"] = static_cast<std::uint64_t>(args.seed);
  if (!args.mode.empty()) doc["mode"] = args.mode;
  return bicr::config_from_json(doc);
}

void add_common(CLI::App* cmd, CommonArgs& args, bool with_mode) {
  cmd->add_option("--config", args.config_path, "JSON config file");
  cmd->add_option("--out", args.out_dir, "output directory");
  cmd->add_option("--set", args.overrides, "config override, section.key=value");
  cmd->add_option("--seed", args.seed, "seed override")->each([&](const std::string&) {
    args.seed_set = true;
  });
  if (with_mode) {
    cmd->add_option("--mode", args.mode, "rfl|reindex|frozen|joint");
  }
}

double now_ms() {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

int cmd_generate(const CommonArgs& args) {
  auto cfg = resolve_config(args);
  bicr::Rng root(cfg.seed);
  bicr::Rng stream_rng = root.split(1);
  auto stream = bicr::make_stream(cfg.stream, stream_rng);
  fs::create_directories(args.out_dir);
  const std::string path = (fs::path(args.out_dir) / "stream.bin").string();
  bicr::save_stream(path, stream);

  json summary;
  summary["config"] = bicr::config_to_json(cfg);
  summary["stages"] = json::array();
  for (const auto& s : stream) {
    summary["stages"].push_back({{"stage", s.stage},
                                 {"train", s.train.size()},
                                 {"gallery", s.gallery.size()},
                                 {"query", s.query.size()}});
  }
  std::ofstream f(fs::path(args.out_dir) / "stream_summary.json");
  f << summary.dump(2) << "\n";
  std::cout << "wrote " << path << " (" << stream.size() << " stages)\n";
  return 0;
}

int cmd_run(const CommonArgs& args, const std::string& stream_path) {
  auto cfg = resolve_config(args);
  std::vector<bicr::StageData> stream;
  if (!stream_path.empty()) {
    stream = bicr::load_stream(stream_path);
    if (static_cast<int>(stream.size()) != cfg.stream.stages) {
      throw bicr::ConfigError("stream file has " + std::to_string(stream.size()) +
                              " stages, config expects " + std::to_string(cfg.stream.stages));
    }
  } else {
    bicr::Rng root(cfg.seed);
    bicr::Rng stream_rng = root.split(1);
    stream = bicr::make_stream(cfg.stream, stream_rng);
  }

  bicr::LifelongRunner runner(cfg, std::move(stream));
  auto outcome = runner.run();
  const std::string hash = bicr::write_run_report(args.out_dir, cfg, outcome);

  runner.store().persist((fs::path(args.out_dir) / "gallery_final.bin").string());
  const bicr::BiCTNetwork* fwd = runner.theta_fwd() ? &*runner.theta_fwd() : nullptr;
  const bicr::BiCTNetwork* bwd = runner.theta_bwd() ? &*runner.theta_bwd() : nullptr;
  bicr::save_checkpoint((fs::path(args.out_dir) / "checkpoint.bin").string(), cfg,
                        *runner.query_model(), *runner.classifier(), fwd, bwd,
                        static_cast<int>(outcome.stages.size()));

  std::cout << "mode=" << bicr::to_string(cfg.mode) << " seed=" << cfg.seed
            << " stages=" << outcome.stages.size() << "\n";
  for (const auto& s : outcome.stages) {
    std::cout << "  stage " << s.stage;
    if (std::isfinite(s.epsilon_used)) {
      std::cout << " eps_raw=" << s.epsilon_raw << " eps=" << s.epsilon_used;
    }
    double mean_map = 0.0;
    for (const auto& [ds, m] : s.eval) mean_map += m.map;
    std::cout << " mean_map=" << mean_map / s.eval.size() << "\n";
  }
  std::cout << "final mean_map=" << outcome.final_mean_map
            << " mean_r1=" << outcome.final_mean_r1;
  if (std::isfinite(outcome.af_map)) {
    std::cout << " af_map=" << outcome.af_map << " af_r1=" << outcome.af_r1;
  }
  std::cout << "\nclosed_raw_accesses=" << outcome.closed_raw_accesses << "\n";
  std::cout << "content_hash=" << hash << "\n";
  return 0;
}

int cmd_eval(const std::string& run_dir) {
  auto ckpt = bicr::load_checkpoint((fs::path(run_dir) / "checkpoint.bin").string());
  auto store = bicr::GalleryStore::load((fs::path(run_dir) / "gallery_final.bin").string());

  std::vector<bicr::StageData> stream;
  const fs::path stream_file = fs::path(run_dir) / "stream.bin";
  if (fs::exists(stream_file)) {
    stream = bicr::load_stream(stream_file.string());
  } else {
    bicr::Rng root(ckpt.cfg.seed);
    bicr::Rng stream_rng = root.split(1);
    stream = bicr::make_stream(ckpt.cfg.stream, stream_rng);
  }

  std::vector<const bicr::StageData*> datasets;
  for (const auto& s : stream) {
    if (s.stage <= static_cast<int>(store.current_version())) datasets.push_back(&s);
  }
  auto metrics = bicr::evaluate_stage(ckpt.query_model, store, datasets,
                                      static_cast<int>(store.current_version()));

  json out;
  out["source_run"] = run_dir;
  out["stage"] = store.current_version();
  double mean_map = 0.0, mean_r1 = 0.0;
  for (const auto& [ds, m] : metrics) {
    out["eval"][std::to_string(ds)] = {{"map", m.map}, {"r1", m.r1},
                                       {"evaluated", m.evaluated}, {"excluded", m.excluded}};
    mean_map += m.map;
    mean_r1 += m.r1;
    std::cout << "dataset " << ds << ": map=" << m.map << " r1=" << m.r1 << "\n";
  }
  mean_map /= metrics.size();
  mean_r1 /= metrics.size();
  out["mean_map"] = mean_map;
  out["mean_r1"] = mean_r1;
  std::cout << "mean_map=" << mean_map << " mean_r1=" << mean_r1
            << " (recomputed from fp32 checkpoint)\n";

  const fs::path report_path = fs::path(run_dir) / "report.json";
  if (fs::exists(report_path)) {
    std::ifstream f(report_path);
    json report = json::parse(f);
    const double orig = report["final"]["mean_map"].get<double>();
    out["run_report_mean_map"] = orig;
    std::cout << "run-report mean_map=" << orig << " |diff|=" << std::abs(orig - mean_map) << "\n";
  }
  std::ofstream f(fs::path(run_dir) / "eval_report.json");
  f << out.dump(2) << "\n";
  return 0;
}

int cmd_theory(const CommonArgs& args, int trials, int max_stages, int grid, int pairs) {
  auto cfg = resolve_config(args);
  fs::create_directories(args.out_dir);
  bicr::Rng rng(cfg.seed);

  json verdicts;
  bool failed = false;

  bicr::Rng sweep_rng = rng.split(1);
  auto sweep = bicr::error_accumulation_sweep(trials, max_stages, sweep_rng);
  {
    std::ofstream f(fs::path(args.out_dir) / "theory_error_sweep.csv");
    f << "trial,stages,e_b,e_f,e_d,diff\n" << std::setprecision(17);
    for (std::size_t i = 0; i < sweep.rows.size(); ++i) {
      const auto& r = sweep.rows[i];
      f << i << "," << r.stages << "," << r.e_b << "," << r.e_f << "," << r.e_d << "," << r.diff
        << "\n";
    }
  }
  if (trials == 0) {
    verdicts["error_nonnegativity"] = "skipped";
  } else {
    verdicts["error_nonnegativity"] = sweep.pass ? "pass" : "fail";
    verdicts["error_min_diff"] = sweep.min_diff;
    failed = failed || !sweep.pass;
    std::cout << "error accumulation sweep: trials=" << trials << " min_diff=" << sweep.min_diff
              << " -> " << (sweep.pass ? "pass" : "fail") << "\n";
  }

  bicr::Rng grid_rng = rng.split(2);
  bool diagonal_ok = true;
  {
    std::ofstream fa(fs::path(args.out_dir) / "theory_fusion_argmin.csv");
    fa << "pair,min_value,c_t,argmin_cells,on_diagonal\n" << std::setprecision(17);
    for (int p = 0; p < pairs; ++p) {
      bicr::Matrix f_prev = bicr::Matrix::randn(8, 16, grid_rng);
      bicr::Matrix f_cur = bicr::Matrix::randn(8, 16, grid_rng);
      const double c_t = grid_rng.uniform(0.0, 2.0);
      auto res = bicr::fusion_grid_sim(grid, f_prev, f_cur, c_t);
      bool on_diag = static_cast<int>(res.argmin_cells.size()) == grid;
      for (const auto& [i, j] : res.argmin_cells) on_diag = on_diag && i == j;
      diagonal_ok = diagonal_ok && on_diag;
      fa << p << "," << res.min_value << "," << res.c_t << "," << res.argmin_cells.size() << ","
         << (on_diag ? 1 : 0) << "\n";
      if (p == 0) {
        std::ofstream fsurf(fs::path(args.out_dir) / "theory_fusion_surface.csv");
        fsurf << "a1,a2,value\n" << std::setprecision(17);
        for (int i = 0; i < grid; ++i) {
          for (int j = 0; j < grid; ++j) {
            fsurf << static_cast<double>(i) / (grid - 1) << ","
                  << static_cast<double>(j) / (grid - 1) << "," << res.surface.at(i, j) << "\n";
          }
        }
      }
    }
  }
  if (pairs == 0) {
    verdicts["fusion_diagonal_argmin"] = "skipped";
  } else {
    verdicts["fusion_diagonal_argmin"] = diagonal_ok ? "pass" : "fail";
    failed = failed || !diagonal_ok;
    std::cout << "fusion grid (" << grid << "x" << grid << ", " << pairs
              << " pairs): " << (diagonal_ok ? "pass" : "fail") << "\n";
  }

  std::ofstream vf(fs::path(args.out_dir) / "theory_verdicts.json");
  vf << verdicts.dump(2) << "\n";
  return failed ? 4 : 0;
}

int cmd_gradcheck(const CommonArgs& args, const std::string& component, int seeds,
                  bool inject_bug) {
  auto cfg = resolve_config(args);
  auto result = bicr::run_gradient_checks(component, seeds, cfg.seed, inject_bug);
  bool pass = result.pass(1e-4);
  for (const auto& [name, err] : result.components) {
    std::printf("%-16s max_rel_err=%.3e %s\n", name.c_str(), err, err < 1e-4 ? "ok" : "FAIL");
  }
  std::printf("gradcheck %s (worst %.3e over %d seeds)\n", pass ? "pass" : "FAIL",
              result.worst(), seeds);
  return pass ? 0 : 4;
}

int cmd_bench(const CommonArgs& args, int n) {
  auto cfg = resolve_config(args);
  fs::create_directories(args.out_dir);
  bicr::Rng rng(cfg.seed);

  bicr::BiCTConfig bcfg = cfg.transfer.bict;
  bcfg.feature_dim = cfg.embedder.feature_dim;
  bicr::Rng theta_rng = rng.split(1);
  bicr::BiCTNetwork theta(bcfg, bicr::TransferDirection::Forward, 1, 2, theta_rng);
  theta.set_mode(bicr::Mode::Eval);

  bicr::EmbedderConfig deep_cfg{cfg.stream.input_dim, cfg.bench.deep_hidden_dim,
                                cfg.embedder.feature_dim, cfg.bench.deep_depth};
  bicr::Rng deep_rng = rng.split(2);
  bicr::Embedder deep(deep_cfg, deep_rng);

  bicr::GalleryStore store(cfg.embedder.feature_dim);
  store.advance_version(1);
  bicr::Rng feat_rng = rng.split(3);
  bicr::Matrix feats =
      bicr::L2NormalizeRows::apply(bicr::Matrix::randn(n, cfg.embedder.feature_dim, feat_rng));
  std::vector<int> ids(n);
  for (int i = 0; i < n; ++i) ids[i] = i;
  store.append_features(feats, ids, 1);

  bicr::Matrix raws = bicr::Matrix::randn(n, cfg.stream.input_dim, feat_rng);

  const double t0 = now_ms();
  store.update_all(theta, 0.5, 2);
  const double update_ms = now_ms() - t0;

  const double t1 = now_ms();
  bicr::Matrix reextracted = bicr::L2NormalizeRows::apply(deep.apply(raws));
  const double reextract_ms = now_ms() - t1;
  const double speedup = reextract_ms / update_ms;

  // Kernel lane: the parallel matmul against its serial reference.
  const int mk = 384;
  bicr::Rng mm_rng = rng.split(4);
  bicr::Matrix a = bicr::Matrix::randn(mk, mk, mm_rng);
  bicr::Matrix b = bicr::Matrix::randn(mk, mk, mm_rng);
  const double t2 = now_ms();
  bicr::Matrix serial = bicr::matmul_serial(a, b);
  const double serial_ms = now_ms() - t2;
  const double t3 = now_ms();
  bicr::Matrix parallel = bicr::matmul(a, b);
  const double parallel_ms = now_ms() - t3;
  const bool bitwise_equal = serial == parallel;

  json out;
  out["n"] = n;
  out["update_ms"] = update_ms;
  out["reextract_ms"] = reextract_ms;
  out["speedup"] = speedup;
  out["transfer_params"] = theta.parameter_count();
  out["deep_backbone_params"] = deep.parameter_count();
  out["param_ratio"] =
      static_cast<double>(theta.parameter_count()) / static_cast<double>(deep.parameter_count());
  out["matmul"] = {{"size", mk},
                   {"serial_ms", serial_ms},
                   {"parallel_ms", parallel_ms},
                   {"speedup", serial_ms / parallel_ms},
                   {"bitwise_equal", bitwise_equal}};
  std::ofstream f(fs::path(args.out_dir) / "bench.json");
  f << out.dump(2) << "\n";

  std::cout << "feature update: n=" << n << " update=" << update_ms
            << "ms reextract=" << reextract_ms << "ms speedup=" << speedup << "x\n";
  std::cout << "transfer params=" << theta.parameter_count()
            << " deep backbone params=" << deep.parameter_count() << "\n";
  std::cout << "matmul " << mk << "^3: serial=" << serial_ms << "ms parallel=" << parallel_ms
            << "ms speedup=" << serial_ms / parallel_ms
            << (bitwise_equal ? " (bitwise equal)" : " (MISMATCH)") << "\n";
  return bitwise_equal ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Re-indexing-free lifelong retrieval experiments"};
  app.require_subcommand(1);

  CommonArgs gen_args, run_args, theory_args, grad_args, bench_args;
  std::string run_stream_path, eval_run_dir = "out";
  int theory_trials = 1000, theory_max_stages = 8, theory_grid = 21, theory_pairs = 100;
  std::string grad_component = "all";
  int grad_seeds = 10;
  bool grad_inject = false;
  int bench_n = 10000;

  auto* gen = app.add_subcommand("generate", "generate a synthetic stream");
  add_common(gen, gen_args, false);

  auto* run = app.add_subcommand("run", "run the lifelong experiment");
  add_common(run, run_args, true);
  run->add_option("--stream", run_stream_path, "read the stream from a file instead of generating");

  auto* eval = app.add_subcommand("eval", "re-evaluate a finished run's artifacts");
  eval->add_option("--run", eval_run_dir, "run output directory");

  auto* theory = app.add_subcommand("theory", "numeric checks of the error/fusion analysis");
  add_common(theory, theory_args, false);
  theory->add_option("--trials", theory_trials, "error-sweep trials");
  theory->add_option("--max-stages", theory_max_stages, "max stage count in the sweep");
  theory->add_option("--grid", theory_grid, "fusion grid resolution");
  theory->add_option("--pairs", theory_pairs, "fusion feature pairs");

  auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  add_common(grad, grad_args, false);
  grad->add_option("--component", grad_component,
                   "all|kernels|bict|losses|bcd|bad|total or a single component");
  grad->add_option("--seeds", grad_seeds, "number of random seeds");
  grad->add_flag("--inject-grad-bug", grad_inject, "corrupt one gradient (sensitivity check)");

  auto* bench = app.add_subcommand("bench", "update-vs-reextract and kernel benchmarks");
  add_common(bench, bench_args, false);
  bench->add_option("--n", bench_n, "gallery size");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_generate(gen_args);
    if (run->parsed()) return cmd_run(run_args, run_stream_path);
    if (eval->parsed()) return cmd_eval(eval_run_dir);
    if (theory->parsed()) {
      return cmd_theory(theory_args, theory_trials, theory_max_stages, theory_grid, theory_pairs);
    }
    if (grad->parsed()) return cmd_gradcheck(grad_args, grad_component, grad_seeds, grad_inject);
    if (bench->parsed()) return cmd_bench(bench_args, bench_n);
  } catch (const bicr::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const bicr::TrainingDivergedError& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return 3;
  } catch (const bicr::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
