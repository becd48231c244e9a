#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ppmn/checkpoint.hpp"
#include "ppmn/data.hpp"
#include "ppmn/evaluator.hpp"
#include "ppmn/model.hpp"
#include "ppmn/model_check.hpp"
#include "ppmn/parallel.hpp"
#include "ppmn/run_config.hpp"
#include "ppmn/trainer.hpp"

namespace fs = std::filesystem;
using namespace ppmn;

namespace {

constexpr int kValidationError = 1;
constexpr int kNumericalError = 2;

void apply_threads(int threads) {
  if (threads <= 0) {
    if (const char* env = std::getenv("PPMN_THREADS")) threads = std::atoi(env);
  }
  if (threads > 0) set_num_threads(threads);
}

RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  RunConfig config = path.empty() ? RunConfig() : RunConfig::load(path);
  config.apply_overrides(overrides);
  return config;
}

int cmd_synth(std::size_t ids, std::size_t per_camera, std::uint64_t seed, const std::string& size,
              const std::string& out) {
  RunConfig config;
  config.set("synth.ids", std::to_string(ids));
  config.set("synth.per_camera", std::to_string(per_camera));
  config.set("synth.size", size);
  config.set("seed", std::to_string(seed));
  config.set("out", out);
  const IdentityDataset dataset = synth_dataset(ids, per_camera, seed, config.extent("synth.size"));
  fs::create_directories(out);
  write_dataset(dataset, out);
  config.write_resolved(fs::path(out) / "synth_config.txt");
  std::printf("wrote %zu identities, %zu images to %s\n", dataset.identities.size(), dataset.image_count(),
              out.c_str());
  return 0;
}

int cmd_train(const RunConfig& config) {
  const ModelConfig model_config = config.model();
  const TrainConfig train_config = config.train();
  if (config.get("data").empty()) throw ConfigError("train: 'data' (dataset root) is not set");
  const fs::path out = config.get("out");
  fs::create_directories(out);
  config.write_resolved(out / "resolved_config.txt");

  const IdentityDataset dataset = load_dataset(config.get("data"), model_config.input_size);
  const auto [train_set, test_set] =
      split_identities(dataset, config.count("train_ids"), config.count("test_ids"), config.u64("seed"));
  std::printf("train: %zu identities (%zu images), held out: %zu identities\n", train_set.identities.size(),
              train_set.image_count(), test_set.identities.size());

  PpmnModel model(model_config);
  auto hooks_for = [&](const std::string& stage) {
    TrainHooks hooks;
    hooks.on_log = [stage](const TracePoint& t) {
      std::printf("[%s] iter %5zu  lr %.6f  loss %.6f\n", stage.c_str(), t.iter, t.lr, t.loss);
      std::fflush(stdout);
    };
    hooks.on_checkpoint = [&, stage](std::size_t iter, const PpmnModel& m) {
      save_checkpoint(out / (stage + "_iter" + std::to_string(iter) + ".ckpt"), m.params());
    };
    return hooks;
  };

  const TrainResult stage1 = train(model, train_set, train_config, hooks_for("stage1"));
  save_checkpoint(out / "stage1.ckpt", model.params());
  write_trace_csv(out / "loss_stage1.csv", stage1, train_config.log_every);
  std::printf("stage1: loss %.6f -> %.6f (mean of last 25 iterations)\n", stage1.initial_loss(),
              stage1.final_loss());

  if (train_config.hnm.enabled) {
    const MinedNegatives mined = mine_hard_negatives(model, train_set, train_config.hnm.retain_fraction,
                                                     train_config.seed, train_config.hnm.max_candidates);
    std::printf("hnm: scored %zu negatives, retained %zu\n", mined.scored, mined.retained.size());
    std::vector<PairSample> pool = positive_pairs(train_set);
    pool.insert(pool.end(), mined.retained.begin(), mined.retained.end());
    const TrainConfig stage2 = stage2_config(train_config);
    const TrainResult result = train_on_pairs(model, train_set, std::move(pool), stage2, hooks_for("stage2"));
    save_checkpoint(out / "stage2.ckpt", model.params());
    write_trace_csv(out / "loss_stage2.csv", result, stage2.log_every);
    std::printf("stage2: loss %.6f -> %.6f\n", result.initial_loss(), result.final_loss());
  }
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data, std::optional<std::size_t> trials_flag,
             std::optional<std::uint64_t> seed_flag,
             const std::string& config_path, const std::string& out_dir, const std::vector<std::string>& overrides) {
  // The model geometry and identity split come from the training run.
  std::string path = config_path;
  const fs::path beside = fs::path(checkpoint).parent_path() / "resolved_config.txt";
  if (path.empty() && fs::exists(beside)) path = beside.string();
  RunConfig config = load_config(path, overrides);
  config.set("checkpoint", checkpoint);
  if (!data.empty()) config.set("data", data);
  if (trials_flag) config.set("trials", std::to_string(*trials_flag));
  if (seed_flag) config.set("eval_seed", std::to_string(*seed_flag));
  if (config.get("data").empty()) throw ConfigError("eval: --data is required");
  const std::size_t trials = config.count("trials");
  const std::uint64_t seed = config.u64("eval_seed");
  if (trials == 0) throw ConfigError("eval: --trials must be >= 1");

  PpmnModel model(config.model());
  load_checkpoint(checkpoint, model.params());
  const IdentityDataset dataset = load_dataset(config.get("data"), model.config().input_size);
  const IdentityDataset test_set =
      split_identities(dataset, config.count("train_ids"), config.count("test_ids"), config.u64("seed")).second;

  std::vector<CmcCurve> curves;
  for (std::size_t t = 0; t < trials; ++t) {
    const SingleShotSplit split = build_single_shot(test_set, mix_seed({seed, t}));
    curves.push_back(cmc_single_shot(model, test_set, split));
  }
  const TrialSummary summary = average_trials(curves);

  const fs::path out = out_dir.empty() ? fs::path(checkpoint).parent_path() : fs::path(out_dir);
  if (!out.empty()) fs::create_directories(out);
  config.write_resolved(out / "eval_config.txt");
  write_cmc_csv(out / "cmc.csv", summary.mean);
  std::printf("single-shot CMC: %zu probes, gallery %zu, %zu trial(s)\n", curves.front().probe_count,
              curves.front().gallery_size, trials);
  std::printf("%s", report_table(summary.mean).c_str());
  if (trials > 1) {
    std::printf("std (%%)  ");
    for (const ReportRow& row : report(summary.stddev)) std::printf("%9s", row.percent.c_str());
    std::printf("\n");
  }
  return 0;
}

int cmd_gradcheck(const RunConfig& config, bool corrupt) {
  const double tolerance = config.real("gradcheck.tolerance");
  PpmnModel model(config.model());
  GradCheckOptions options;
  options.max_coords = config.count("gradcheck.max_coords");
  options.eps_scale = config.real("gradcheck.eps_scale");
  if (corrupt) {
    options.hook = [](std::string_view, std::span<float> g) {
      for (float& v : g) v *= 1.05f;
    };
  }
  const auto groups = check_model_gradients(model, config.u64("seed"), config.count("gradcheck.batch"), options);
  bool ok = true;
  std::printf("%-24s %8s %8s %14s\n", "group", "coords", "kinks", "max rel err");
  for (const GroupCheck& g : groups) {
    const bool pass = g.checked > 0 && g.max_rel_error <= tolerance;
    ok = ok && pass;
    std::printf("%-24s %8zu %8zu %14.3e  %s\n", g.label.c_str(), g.checked, g.skipped_kinks, g.max_rel_error,
                pass ? "ok" : "FAIL");
  }
  const fs::path out = config.get("out");
  fs::create_directories(out);
  config.write_resolved(out / "gradcheck_config.txt");
  return ok ? 0 : kNumericalError;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pyramid person matching network: training, evaluation and checks"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "worker thread cap (default: PPMN_THREADS or all cores)");

  auto* synth = app.add_subcommand("synth", "write a synthetic two-camera dataset");
  std::size_t ids = 20, per_camera = 4;
  std::uint64_t synth_seed = 1;
  std::string synth_out, synth_size = "160x80";
  synth->add_option("--ids", ids, "number of identities")->capture_default_str();
  synth->add_option("--per-camera", per_camera, "images per identity and camera")->capture_default_str();
  synth->add_option("--seed", synth_seed, "generator seed")->capture_default_str();
  synth->add_option("--size", synth_size, "image size HxW")->capture_default_str();
  synth->add_option("--out", synth_out, "output directory")->required();

  auto* train_cmd = app.add_subcommand("train", "train a model; --key value overrides config entries");
  std::string train_config;
  train_cmd->add_option("--config", train_config, "flat key = value config file");
  train_cmd->add_option("--threads", threads, "worker thread cap");
  train_cmd->allow_extras();

  auto* eval_cmd = app.add_subcommand("eval", "single-shot CMC of a checkpoint");
  std::string checkpoint, data, eval_config, eval_out;
  std::optional<std::size_t> trials;
  std::optional<std::uint64_t> eval_seed;
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval_cmd->add_option("--data", data, "dataset root (default: the training run's)");
  eval_cmd->add_option("--trials", trials, "gallery draws to average (default: config 'trials')");
  eval_cmd->add_option("--seed", eval_seed, "gallery selection seed (default: config 'eval_seed')");
  eval_cmd->add_option("--config", eval_config, "config (default: resolved_config.txt beside the checkpoint)");
  eval_cmd->add_option("--out", eval_out, "output directory (default: the checkpoint's)");
  eval_cmd->add_option("--threads", threads, "worker thread cap");
  eval_cmd->allow_extras();

  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of every parameter group");
  std::string grad_config;
  std::uint64_t grad_seed = 1;
  bool corrupt = false;
  grad_cmd->add_option("--config", grad_config, "flat key = value config file");
  grad_cmd->add_option("--seed", grad_seed, "model and input seed")->capture_default_str();
  grad_cmd->add_option("--threads", threads, "worker thread cap");
  grad_cmd->add_flag("--corrupt-backward", corrupt, "test hook: perturb analytic gradients")->group("");
  grad_cmd->allow_extras();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kValidationError;
  }

  try {
    apply_threads(threads);
    if (*synth) return cmd_synth(ids, per_camera, synth_seed, synth_size, synth_out);
    if (*train_cmd) return cmd_train(load_config(train_config, train_cmd->remaining()));
    if (*eval_cmd) {
      return cmd_eval(checkpoint, data, trials, eval_seed, eval_config, eval_out, eval_cmd->remaining());
    }
    if (*grad_cmd) {
      RunConfig config = load_config(grad_config, grad_cmd->remaining());
      config.set("seed", std::to_string(grad_seed));
      return cmd_gradcheck(config, corrupt);
    }
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return kNumericalError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kValidationError;
  }
  return kValidationError;
}
