// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>
#include <string>
#include <vector>

#include "ppmn/checkpoint.hpp"
#include "ppmn/data.hpp"
#include "ppmn/evaluator.hpp"
#include "ppmn/model.hpp"
#include "ppmn/model_check.hpp"
#include "ppmn/ops.hpp"
#include "ppmn/run_config.hpp"
#include "ppmn/simd.hpp"
#include "ppmn/trainer.hpp"

#ifndef PPMN_CONFIG_DIR
#error "PPMN_CONFIG_DIR must name the configs directory"
#endif

namespace fs = std::filesystem;
using namespace ppmn;

namespace {

// Pinned thresholds.
constexpr double kConvTolerance = 1e-5;
constexpr double kDilationTolerance = 1e-6;
constexpr double kGradTolerance = 1e-3;
constexpr double kLossSanityBand = 0.15;
constexpr double kSeparableLoss = 1e-6;
constexpr double kLossRatio = 0.5;
constexpr double kRank1Target = 0.80;
constexpr double kHnmSlack = 0.02;
constexpr double kConvSeconds = 60.0;
constexpr double kGradSeconds = 120.0;
constexpr double kEndToEndSeconds = 600.0;

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void criterion(const std::string& name, const std::function<Outcome()>& body) {
  const auto start = std::chrono::steady_clock::now();
  Outcome out;
  try {
    out = body();
  } catch (const std::exception& e) {
    out = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!out.pass) ++failures;
  std::printf("%s  %-22s %8.1fs  %s\n", out.pass ? "PASS" : "FAIL", name.c_str(), secs, out.detail.c_str());
  std::fflush(stdout);
}

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

Tensor random_tensor(Shape shape, Rng& rng) {
  Tensor t(shape);
  for (float& v : t.data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

std::vector<float> random_vector(std::size_t n, Rng& rng) {
  std::vector<float> v(n);
  for (float& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
  return v;
}

ConvSpec square_conv(std::size_t out, std::size_t k, std::size_t stride, std::size_t pad, std::size_t rate) {
  ConvSpec s;
  s.out_channels = out;
  s.kernel = {k, k};
  s.stride = {stride, stride};
  s.padding = {pad, pad};
  s.rate = rate;
  return s;
}

RunConfig config_file(const std::string& name) { return RunConfig::load(fs::path(PPMN_CONFIG_DIR) / name); }

fs::path work_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("ppmn_acceptance_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<std::uint8_t> file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Synthesised at full resolution, written to disk and read back at the
// model's input size, the same route `ppmn synth` then `ppmn train` takes.
IdentityDataset synthetic_on_disk(std::size_t ids, std::size_t per_camera, std::uint64_t seed, Extent2 size,
                                  const fs::path& dir) {
  write_dataset(synth_dataset(ids, per_camera, seed), dir);
  return load_dataset(dir, size);
}

Tensor stack(const IdentityDataset& d, const std::vector<ImageRef>& refs) {
  const Extent2 size = d.image_size;
  Tensor out(Shape{refs.size(), 3, size.h, size.w});
  for (std::size_t i = 0; i < refs.size(); ++i) {
    copy_sample(d.identities[refs[i].identity].images[refs[i].image].image, 0, out, i);
  }
  return out;
}

double mean_rank1(const PpmnModel& model, const IdentityDataset& test_set, std::size_t trials, std::uint64_t seed) {
  std::vector<CmcCurve> curves;
  for (std::size_t t = 0; t < trials; ++t) {
    curves.push_back(cmc_single_shot(model, test_set, build_single_shot(test_set, mix_seed({seed, t}))));
  }
  return average_trials(curves).mean.front();
}

// ---- kernels -------------------------------------------------------------

std::vector<const simd::KernelTable*> available_tables() {
  std::vector<const simd::KernelTable*> tables{&simd::scalar_table()};
  if (const auto* t = simd::avx2_table()) tables.push_back(t);
  if (const auto* t = simd::neon_table()) tables.push_back(t);
  return tables;
}

Outcome conv_oracle() {
  const auto start = std::chrono::steady_clock::now();
  const simd::Isa before = simd::active().isa;
  Rng rng(2024);
  std::size_t cases = 0;
  double worst = 0.0;
  std::string isas;
  for (const simd::KernelTable* table : available_tables()) {
    simd::select(table->isa);
    isas += std::string(isas.empty() ? "" : "+") + table->name;
    for (std::size_t rate : {1, 2, 3}) {
      for (std::size_t stride : {1, 2}) {
        for (std::size_t k : {1, 3}) {
          for (int rep = 0; rep < 20; ++rep) {
            const std::size_t pad = rng.index(3);
            const Shape in{1 + rng.index(2), 1 + rng.index(5), 7 + rng.index(10), 7 + rng.index(10)};
            const ConvSpec spec = square_conv(1 + rng.index(6), k, stride, pad, rate);
            const Tensor x = random_tensor(in, rng);
            const Tensor w = random_tensor(Shape{spec.out_channels, in.c, k, k}, rng);
            const auto b = random_vector(spec.out_channels, rng);
            const Tensor fast = conv2d_forward(x, w, std::span<const float>(b), spec);
            const Tensor ref = conv2d_reference(x, w, std::span<const float>(b), spec);
            worst = std::max(worst, fast.shape() == ref.shape() ? max_abs_diff(fast, ref) : INFINITY);
            ++cases;
          }
        }
      }
    }
  }
  simd::select(before);
  const double secs = seconds_since(start);
  return {cases >= 200 && worst <= kConvTolerance && secs < kConvSeconds,
          fmt("%zu cases (%s), max |fast - reference| %.2e (<= %.0e), %.1fs (< %.0fs)", cases, isas.c_str(), worst,
              kConvTolerance, secs, kConvSeconds)};
}

Outcome dilation_identity() {
  Rng rng(77);
  double worst = 0.0;
  int cases = 0;
  for (; cases < 50; ++cases) {
    const std::size_t rate = 2 + cases % 2;
    const std::size_t pad = rng.index(4);
    const Shape in{1 + rng.index(2), 1 + rng.index(3), 8 + rng.index(8), 8 + rng.index(8)};
    const std::size_t out_c = 1 + rng.index(4);
    const Tensor x = random_tensor(in, rng);
    const Tensor w = random_tensor(Shape{out_c, in.c, 3, 3}, rng);
    const auto b = random_vector(out_c, rng);
    const Tensor inflated = dilate_kernel(w, rate);
    const std::size_t extent = inflated.shape().h;
    const Tensor atrous = conv2d_forward(x, w, std::span<const float>(b), square_conv(out_c, 3, 1, pad, rate));
    const Tensor plain = conv2d_forward(x, inflated, std::span<const float>(b), square_conv(out_c, extent, 1, pad, 1));
    worst = std::max(worst, atrous.shape() == plain.shape() ? max_abs_diff(atrous, plain) : INFINITY);
  }
  return {worst <= kDilationTolerance,
          fmt("%d cases at r in {2,3}, max |atrous - inflated| %.2e (<= %.0e)", cases, worst, kDilationTolerance)};
}

Outcome field_of_view() {
  const std::size_t expected[] = {3, 5, 7};
  bool ok = true;
  std::string got;
  for (std::size_t rate = 1; rate <= 3; ++rate) {
    const Extent2 e = square_conv(1, 3, 1, 0, rate).effective_kernel();
    ok = ok && e.h == expected[rate - 1] && e.w == expected[rate - 1];
    got += fmt("%sr=%zu:%zux%zu", got.empty() ? "" : " ", rate, e.h, e.w);
  }
  return {ok, got + " (expect 3/5/7)"};
}

// ---- model ---------------------------------------------------------------

Outcome whole_model_gradcheck() {
  const auto start = std::chrono::steady_clock::now();
  const RunConfig config = config_file("gradcheck.cfg");
  PpmnModel model(config.model());
  GradCheckOptions options;
  options.max_coords = config.count("gradcheck.max_coords");
  options.eps_scale = config.real("gradcheck.eps_scale");
  const auto groups = check_model_gradients(model, config.u64("seed"), config.count("gradcheck.batch"), options);
  bool ok = groups.size() == 6;
  double worst = 0.0;
  std::size_t coords = 0;
  for (const GroupCheck& g : groups) {
    ok = ok && g.checked > 0 && g.max_rel_error <= kGradTolerance;
    worst = std::max(worst, g.max_rel_error);
    coords += g.checked;
  }
  const double secs = seconds_since(start);
  const Extent2 in = model.config().input_size;
  return {ok && secs < kGradSeconds,
          fmt("%zux%zu input, rep %zu: %zu groups, %zu coords, max rel err %.2e (<= %.0e), %.1fs (< %.0fs)", in.h,
              in.w, model.config().rep_channels, groups.size(), coords, worst, kGradTolerance, secs, kGradSeconds)};
}

Outcome full_geometry() {
  const ModelConfig config = ModelConfig::full_geometry();
  const PpmnModel model(config);
  Rng rng(5);
  Tensor image(Shape{1, 3, config.input_size.h, config.input_size.w});
  for (float& v : image.data()) v = static_cast<float>(rng.uniform());
  const Tensor rep = model.represent(image);
  const auto branches = model.pyramid_match(rep, rep);
  const Shape expected{1, 1024, 10, 5};
  bool ok = rep.shape() == expected && branches.size() == 3;
  std::string shapes;
  for (const Tensor& b : branches) {
    ok = ok && b.shape().h == 10 && b.shape().w == 5;
    shapes += " " + b.shape().str();
  }
  return {ok, fmt("%zux%zu input: representation %s, branches%s", config.input_size.h, config.input_size.w,
                  rep.shape().str().c_str(), shapes.c_str())};
}

Outcome poly_schedule() {
  const TrainConfig t = RunConfig().train();
  const double a = poly_lr(0, 1000, t.base_lr, t.lr_power);
  const double b = poly_lr(1000, 1000, t.base_lr, t.lr_power);
  const double c = poly_lr(750, 1000, t.base_lr, t.lr_power);
  return {a == 0.01 && b == 0.0 && c == 0.005, fmt("lr(0)=%.17g lr(max)=%.17g lr(0.75 max)=%.17g", a, b, c)};
}

Outcome loss_sanity() {
  RunConfig config = config_file("desk_synthetic.cfg");
  const ModelConfig model_config = config.model();
  const PpmnModel model(model_config);
  const fs::path dir = work_dir("loss_sanity");
  const IdentityDataset d = synthetic_on_disk(20, 4, 1, model_config.input_size, dir);
  std::vector<PairSample> pairs = generate_pairs(d, config.real("negative_ratio"), 1);
  pairs.resize(config.count("batch_size"));
  std::vector<ImageRef> a, b;
  std::vector<int> labels;
  for (const PairSample& p : pairs) {
    a.push_back(p.a);
    b.push_back(p.b);
    labels.push_back(p.label);
  }
  const double fresh = pair_loss(model.forward_pair(stack(d, a), stack(d, b)), labels);
  const std::vector<int> sep_labels{1, 0, 1, 0};
  const Tensor sep_logits(Shape{4, 2, 1, 1}, std::vector<float>{-15, 15, 15, -15, -10, 20, 20, -10});
  const double separable = pair_loss(sep_logits, sep_labels);
  const bool ok = std::abs(fresh - std::log(2.0)) <= kLossSanityBand && separable <= kSeparableLoss;
  return {ok, fmt("fresh batch of %zu: %.4f (log 2 = %.4f, band %.2f); separable: %.2e (<= %.0e)", pairs.size(),
                  fresh, std::log(2.0), kLossSanityBand, separable, kSeparableLoss)};
}

// ---- synthetic experiment --------------------------------------------------

struct SeedRun {
  std::uint64_t seed = 0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  double stage1_rank1 = 0.0;
  double stage2_rank1 = 0.0;
  bool mining_ordered = false;
  std::size_t retained = 0;
  std::size_t discarded = 0;
  double stage1_seconds = 0.0;
};

SeedRun run_seed(std::uint64_t seed) {
  RunConfig config = config_file("desk_synthetic.cfg");
  config.set("seed", std::to_string(seed));
  const ModelConfig model_config = config.model();
  const TrainConfig train_config = config.train();
  const std::size_t trials = config.count("trials");
  const std::uint64_t eval_seed = config.u64("eval_seed");

  SeedRun r;
  r.seed = seed;
  const auto start = std::chrono::steady_clock::now();
  const IdentityDataset d = synthetic_on_disk(config.count("synth.ids"), config.count("synth.per_camera"), seed,
                                              model_config.input_size, work_dir("seed" + std::to_string(seed)));
  const auto [train_set, test_set] =
      split_identities(d, config.count("train_ids"), config.count("test_ids"), seed);

  PpmnModel model(model_config);
  const TrainResult stage1 = train(model, train_set, train_config);
  r.initial_loss = stage1.initial_loss();
  r.final_loss = stage1.final_loss();
  r.stage1_rank1 = mean_rank1(model, test_set, trials, eval_seed);
  r.stage1_seconds = seconds_since(start);

  const MinedNegatives mined = mine_hard_negatives(model, train_set, train_config.hnm.retain_fraction,
                                                   train_config.seed, train_config.hnm.max_candidates);
  const double weakest_kept = *std::min_element(mined.retained_p.begin(), mined.retained_p.end());
  const double hardest_dropped =
      mined.discarded_p.empty() ? -INFINITY : *std::max_element(mined.discarded_p.begin(), mined.discarded_p.end());
  r.mining_ordered = weakest_kept >= hardest_dropped;
  r.retained = mined.retained_p.size();
  r.discarded = mined.discarded_p.size();

  std::vector<PairSample> pool = positive_pairs(train_set);
  pool.insert(pool.end(), mined.retained.begin(), mined.retained.end());
  train_on_pairs(model, train_set, std::move(pool), stage2_config(train_config));
  r.stage2_rank1 = mean_rank1(model, test_set, trials, eval_seed);
  std::printf("  seed %llu: loss %.4f -> %.4f, rank-1 stage1 %.2f%% stage2 %.2f%%, mined %zu of %zu\n",
              static_cast<unsigned long long>(seed), r.initial_loss, r.final_loss, 100 * r.stage1_rank1,
              100 * r.stage2_rank1, r.retained, r.retained + r.discarded);
  std::fflush(stdout);
  return r;
}

std::vector<SeedRun> experiment;

Outcome synthetic_end_to_end() {
  for (std::uint64_t seed : {1, 2, 3}) experiment.push_back(run_seed(seed));
  bool losses = true;
  double rank1 = 0.0, secs = 0.0;
  std::string per_seed;
  for (const SeedRun& r : experiment) {
    losses = losses && r.final_loss <= kLossRatio * r.initial_loss;
    rank1 += r.stage1_rank1 / static_cast<double>(experiment.size());
    secs += r.stage1_seconds;
    per_seed += fmt(" %.3f/%.3f", r.final_loss, r.initial_loss);
  }
  return {losses && rank1 >= kRank1Target && secs <= kEndToEndSeconds,
          fmt("final/initial loss%s (<= %.0f%%); mean rank-1 %.2f%% (>= %.0f%%, random 10%%); stage-1 time %.0fs",
              per_seed.c_str(), 100 * kLossRatio, 100 * rank1, 100 * kRank1Target, secs)};
}

Outcome hnm_effect() {
  if (experiment.empty()) return {false, "synthetic experiment did not run"};
  bool ordered = true;
  double s1 = 0.0, s2 = 0.0;
  for (const SeedRun& r : experiment) {
    ordered = ordered && r.mining_ordered && r.retained > 0;
    s1 += r.stage1_rank1 / static_cast<double>(experiment.size());
    s2 += r.stage2_rank1 / static_cast<double>(experiment.size());
  }
  return {ordered && s2 >= s1 - kHnmSlack,
          fmt("retained >= discarded on every seed: %s; mean rank-1 stage1 %.2f%%, stage2 %.2f%% (>= stage1 - %.0f)",
              ordered ? "yes" : "no", 100 * s1, 100 * s2, 100 * kHnmSlack)};
}

// ---- evaluation ----------------------------------------------------------

// Rank of the true match counted directly: gallery entries that beat it,
// plus tied entries at a lower index.
std::vector<double> counted_cmc(const std::vector<std::vector<double>>& scores, const std::vector<std::size_t>& probes,
                                const std::vector<std::size_t>& gallery) {
  std::vector<double> hits(gallery.size(), 0.0);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const std::size_t truth = static_cast<std::size_t>(
        std::find(gallery.begin(), gallery.end(), probes[i]) - gallery.begin());
    std::size_t above = 0;
    for (std::size_t j = 0; j < gallery.size(); ++j) {
      above += scores[i][j] > scores[i][truth] || (scores[i][j] == scores[i][truth] && j < truth);
    }
    for (std::size_t k = above; k < gallery.size(); ++k) hits[k] += 1.0;
  }
  for (double& h : hits) h /= static_cast<double>(scores.size());
  return hits;
}

Outcome cmc_properties() {
  Rng rng(31);
  bool monotone = true, agree = true;
  std::vector<std::size_t> gallery(10);
  std::iota(gallery.begin(), gallery.end(), std::size_t{0});
  const int cases = 100;
  for (int c = 0; c < cases; ++c) {
    std::vector<std::size_t> probes;
    std::vector<std::vector<double>> scores;
    const bool coarse = c % 2 == 0;  // every other case is tie-heavy
    for (std::size_t i = 0; i < 20; ++i) {
      probes.push_back(rng.index(10));
      std::vector<double> row(10);
      for (double& s : row) s = coarse ? static_cast<double>(rng.index(3)) / 2.0 : rng.uniform();
      scores.push_back(row);
    }
    const CmcCurve curve = cmc_from_scores(scores, probes, gallery);
    monotone = monotone && std::is_sorted(curve.ranks.begin(), curve.ranks.end()) && curve.ranks.back() == 1.0;
    agree = agree && curve.ranks == counted_cmc(scores, probes, gallery);
  }

  IdentityDataset d;
  d.image_size = {2, 2};
  for (std::size_t i = 0; i < 10; ++i) {
    Identity id{"id" + std::to_string(i), {}};
    for (Camera cam : {Camera::A, Camera::B}) {
      for (int k = 0; k < 2; ++k) id.images.push_back({cam, Tensor(Shape{1, 3, 2, 2}), ""});
    }
    d.identities.push_back(std::move(id));
  }
  const CmcCurve oracle = cmc_single_shot(
      [](ImageRef p, ImageRef g) { return p.identity == g.identity ? 1.0 : 0.0; }, build_single_shot(d, 1));
  const bool perfect = oracle.ranks.front() == 1.0;
  return {monotone && agree && perfect,
          fmt("%d ten-identity cases: monotone %s, brute-force agreement %s; oracle rank-1 %.2f%%", cases,
              monotone ? "yes" : "no", agree ? "exact" : "NO", 100 * oracle.ranks.front())};
}

// ---- determinism ---------------------------------------------------------

// Stage 1, mining, stage 2 and evaluation on a tiny model; returns the
// directory holding the two checkpoints and the CMC CSV.
fs::path short_run(const std::string& name) {
  RunConfig config = config_file("gradcheck.cfg");
  config.apply_overrides({"--train_ids", "4", "--test_ids", "2", "--max_iters", "20", "--batch_size", "4",
                          "--hnm.enabled", "true", "--hnm.max_iters", "10", "--seed", "7"});
  const ModelConfig model_config = config.model();
  const TrainConfig train_config = config.train();
  const fs::path out = work_dir(name);
  const IdentityDataset d = synthetic_on_disk(6, 2, 7, model_config.input_size, out / "data");
  const auto [train_set, test_set] = split_identities(d, 4, 2, train_config.seed);

  PpmnModel model(model_config);
  train(model, train_set, train_config);
  save_checkpoint(out / "stage1.ckpt", model.params());
  const MinedNegatives mined =
      mine_hard_negatives(model, train_set, train_config.hnm.retain_fraction, train_config.seed);
  std::vector<PairSample> pool = positive_pairs(train_set);
  pool.insert(pool.end(), mined.retained.begin(), mined.retained.end());
  train_on_pairs(model, train_set, std::move(pool), stage2_config(train_config));
  save_checkpoint(out / "stage2.ckpt", model.params());

  std::vector<CmcCurve> curves;
  for (std::uint64_t t = 0; t < 3; ++t) {
    curves.push_back(cmc_single_shot(model, test_set, build_single_shot(test_set, mix_seed({1, t}))));
  }
  write_cmc_csv(out / "cmc.csv", average_trials(curves).mean);
  return out;
}

Outcome determinism() {
  const fs::path first = short_run("det_a");
  const fs::path second = short_run("det_b");
  bool ok = true;
  std::string detail;
  for (const char* file : {"stage1.ckpt", "stage2.ckpt", "cmc.csv"}) {
    const auto a = file_bytes(first / file);
    const auto b = file_bytes(second / file);
    const bool same = !a.empty() && a == b;
    ok = ok && same;
    detail += fmt("%s%s %zu B %s", detail.empty() ? "" : ", ", file, a.size(), same ? "identical" : "DIFFER");
  }
  return {ok, detail};
}

}  // namespace

int main() {
  std::printf("kernels: %s\n", simd::active().name);
  criterion("conv_oracle", conv_oracle);
  criterion("dilation_identity", dilation_identity);
  criterion("field_of_view", field_of_view);
  criterion("whole_model_gradcheck", whole_model_gradcheck);
  criterion("full_geometry", full_geometry);
  criterion("poly_schedule", poly_schedule);
  criterion("loss_sanity", loss_sanity);
  criterion("synthetic_end_to_end", synthetic_end_to_end);
  criterion("hnm_effect", hnm_effect);
  criterion("cmc_properties", cmc_properties);
  criterion("determinism", determinism);
  std::printf("%d criterion(s) failed\n", failures);
  return failures == 0 ? 0 : 1;
}
