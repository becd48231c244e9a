#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "ppmn/data.hpp"
#include "ppmn/gradcheck.hpp"
#include "ppmn/model.hpp"

namespace ppmn {

struct HnmConfig {
  bool enabled = false;
  double retain_fraction = 0.25;
  // Stage-2 schedule; 0 reuses the stage-1 value.
  std::size_t max_iters = 0;
  double base_lr = 0.0;
  // Scoring budget: above this many negatives a uniform subset is scored.
  std::size_t max_candidates = 1'000'000;
};

struct TrainConfig {
  std::size_t batch_size = 100;
  std::size_t max_iters = 500;
  double base_lr = 0.01;
  double lr_power = 0.5;
  double momentum = 0.9;
  double weight_decay = 0.0002;
  double negative_ratio = 3.0;
  // Original plus five shifted copies per image.
  bool augment = true;
  HnmConfig hnm;
  std::uint64_t seed = 1;
  std::size_t log_every = 10;
  std::size_t checkpoint_every = 0;  // 0: no intermediate checkpoints

  void validate() const;
};

// Mean cross-entropy over the batch from raw logits [n, 2, 1, 1], in
// log-sum-exp form. When `logit_grads` is given it receives d loss / d logits.
double pair_loss(const Tensor& logits, std::span<const int> labels, Tensor* logit_grads = nullptr);
double pair_loss(std::span<const PairScore> scores, std::span<const int> labels);

// The training loss as a gradient-check objective over the logits node.
class PairLossObjective final : public Objective {
 public:
  explicit PairLossObjective(std::vector<int> labels) : labels_(std::move(labels)) {}
  std::vector<std::string> outputs() const override;
  double evaluate(const ForwardCache<float>& cache, TensorMap<float>* output_grads) const override;
  double evaluate(const ForwardCache<double>& cache) const override;

 private:
  std::vector<int> labels_;
};

// base_lr * (1 - iter / max_iters)^power.
double poly_lr(std::size_t iter, std::size_t max_iters, double base_lr, double power);

// Momentum SGD with weight decay folded into the gradient; zeroes the
// gradients afterwards.
void sgd_step(ParamStore& params, double lr, double momentum, double weight_decay);

struct TracePoint {
  std::size_t iter = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct TrainResult {
  std::vector<TracePoint> trace;  // one point per iteration
  double initial_loss() const { return trace.empty() ? 0.0 : trace.front().loss; }
  // Mean over the last `window` iterations, smoothing minibatch noise.
  double final_loss(std::size_t window = 25) const;
};

struct TrainHooks {
  std::function<void(const TracePoint&)> on_log;  // every log_every iterations
  std::function<void(std::size_t iter, const PpmnModel&)> on_checkpoint;
};

// Stage-1 training: each epoch is a fresh generate_pairs draw.
TrainResult train(PpmnModel& model, const IdentityDataset& dataset, const TrainConfig& config,
                  const TrainHooks& hooks = {});
// Training over a fixed pair pool, reshuffled each epoch (stage 2).
TrainResult train_on_pairs(PpmnModel& model, const IdentityDataset& dataset, std::vector<PairSample> pool,
                           const TrainConfig& config, const TrainHooks& hooks = {});

// p(same) for each pair, scored from cached per-image representations.
std::vector<double> score_pairs(const PpmnModel& model, const IdentityDataset& dataset,
                                std::span<const PairSample> pairs, std::size_t batch_size = 64);

struct MinedNegatives {
  std::vector<PairSample> retained;  // hardest first
  std::vector<double> retained_p;
  std::vector<double> discarded_p;
  std::size_t scored = 0;
};

// Scores every cross-camera negative of `dataset`, orders them by p
// descending (ties by pair index) and keeps the top `retain_fraction`.
MinedNegatives mine_hard_negatives(const PpmnModel& model, const IdentityDataset& dataset, double retain_fraction,
                                   std::uint64_t seed, std::size_t max_candidates = 1'000'000);

// Stage-2 settings derived from a stage-1 config.
TrainConfig stage2_config(const TrainConfig& config);

void write_trace_csv(const std::filesystem::path& path, const TrainResult& result, std::size_t every);

}  // namespace ppmn
