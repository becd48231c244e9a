#include "ppmn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <tuple>

#include "ppmn/simd.hpp"

namespace ppmn {

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("train config: " + what); };
  if (batch_size == 0) fail("batch_size must be >= 1");
  if (max_iters == 0) fail("max_iters must be >= 1");
  if (!(base_lr > 0.0)) fail("base_lr must be > 0");
  if (lr_power < 0.0) fail("lr_power must be >= 0");
  if (momentum < 0.0 || momentum >= 1.0) fail("momentum must be in [0, 1)");
  if (weight_decay < 0.0) fail("weight_decay must be >= 0");
  if (negative_ratio < 0.0) fail("negative_ratio must be >= 0");
  if (!(hnm.retain_fraction > 0.0 && hnm.retain_fraction <= 1.0)) fail("hnm.retain_fraction must be in (0, 1]");
  if (hnm.base_lr < 0.0) fail("hnm.base_lr must be >= 0");
  if (log_every == 0) fail("log_every must be >= 1");
}

namespace {

template <typename T>
double pair_loss_impl(const BasicTensor<T>& logits, std::span<const int> labels, Tensor* logit_grads) {
  const std::size_t n = logits.shape().n;
  if (n == 0) throw std::invalid_argument("pair_loss: empty batch");
  if (logits.shape().sample_size() != 2) {
    throw ShapeError("pair_loss: expected two logits per pair, got " + logits.shape().str());
  }
  if (labels.size() != n) {
    throw std::invalid_argument("pair_loss: " + std::to_string(n) + " scores but " + std::to_string(labels.size()) +
                                " labels");
  }
  if (logit_grads != nullptr) *logit_grads = Tensor(logits.shape());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double s0 = logits.sample(i)[0];
    const double s1 = logits.sample(i)[1];
    const double hi = std::max(s0, s1);
    const double lse = hi + std::log(std::exp(s0 - hi) + std::exp(s1 - hi));
    const int label = labels[i];
    total += lse - (label == 1 ? s1 : s0);
    if (logit_grads != nullptr) {
      // d/ds1 = p - l, d/ds0 = l - p.
      const double p = std::exp(s1 - lse);
      const double g = (p - static_cast<double>(label)) / static_cast<double>(n);
      logit_grads->sample(i)[0] = static_cast<float>(-g);
      logit_grads->sample(i)[1] = static_cast<float>(g);
    }
  }
  return total / static_cast<double>(n);
}

}  // namespace

double pair_loss(const Tensor& logits, std::span<const int> labels, Tensor* logit_grads) {
  return pair_loss_impl(logits, labels, logit_grads);
}

std::vector<std::string> PairLossObjective::outputs() const { return {node_names::logits}; }

double PairLossObjective::evaluate(const ForwardCache<float>& cache, TensorMap<float>* output_grads) const {
  Tensor grads;
  const double loss = pair_loss_impl(cache.value(node_names::logits), labels_, &grads);
  if (output_grads != nullptr) output_grads->insert_or_assign(node_names::logits, std::move(grads));
  return loss;
}

double PairLossObjective::evaluate(const ForwardCache<double>& cache) const {
  return pair_loss_impl(cache.value(node_names::logits), labels_, nullptr);
}

double pair_loss(std::span<const PairScore> scores, std::span<const int> labels) {
  Tensor logits(Shape{scores.size(), 2, 1, 1});
  for (std::size_t i = 0; i < scores.size(); ++i) {
    logits.sample(i)[0] = scores[i].s0;
    logits.sample(i)[1] = scores[i].s1;
  }
  return pair_loss(logits, labels);
}

double poly_lr(std::size_t iter, std::size_t max_iters, double base_lr, double power) {
  if (max_iters == 0 || iter > max_iters) {
    throw std::invalid_argument("poly_lr: iteration " + std::to_string(iter) + " outside [0, " +
                                std::to_string(max_iters) + "]");
  }
  return base_lr * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(max_iters), power);
}

void sgd_step(ParamStore& params, double lr, double momentum, double weight_decay) {
  const auto& kernels = simd::active();
  for (auto& e : params.entries()) {
    if (e.grad.shape() != e.value.shape() || e.momentum.shape() != e.value.shape()) {
      throw ShapeError("sgd_step: buffers of '" + e.name + "' drifted from " + e.value.shape().str());
    }
    kernels.sgd_update(e.value.ptr(), e.momentum.ptr(), e.grad.ptr(), e.value.size(), static_cast<float>(lr),
                       static_cast<float>(momentum), static_cast<float>(weight_decay));
    e.grad.zero();
  }
}

double TrainResult::final_loss(std::size_t window) const {
  if (trace.empty()) return 0.0;
  const std::size_t k = std::min(window, trace.size());
  double sum = 0.0;
  for (std::size_t i = trace.size() - k; i < trace.size(); ++i) sum += trace[i].loss;
  return sum / static_cast<double>(k);
}

namespace {

// Seeded per-image translation offsets, fixed for the whole run.
class Augmenter {
 public:
  Augmenter(const IdentityDataset& dataset, std::uint64_t seed, bool enabled) : enabled_(enabled) {
    if (!enabled_) return;
    for (std::size_t i = 0; i < dataset.identities.size(); ++i) {
      for (std::size_t j = 0; j < dataset.identities[i].images.size(); ++j) {
        Rng rng(mix_seed({seed, i, j, 0xa06ULL}));
        offsets_.emplace(ImageRef{i, j}, draw_translations(dataset.image_size, rng));
      }
    }
  }

  // Variant 0 is the original image, 1..5 the shifted copies.
  void write(const IdentityDataset& dataset, ImageRef ref, Rng& rng, Tensor& batch, std::size_t slot) const {
    const Tensor& image = dataset.identities[ref.identity].images[ref.image].image;
    const std::size_t variant = enabled_ ? rng.index(6) : 0;
    if (variant == 0) {
      copy_sample(image, 0, batch, slot);
    } else {
      copy_sample(translate(image, offsets_.at(ref)[variant - 1]), 0, batch, slot);
    }
  }

 private:
  bool enabled_;
  std::map<ImageRef, std::array<Translation, 5>> offsets_;
};

TrainResult run_training(PpmnModel& model, const IdentityDataset& dataset,
                         const std::function<std::vector<PairSample>(std::size_t epoch)>& epoch_pairs,
                         const TrainConfig& config, const TrainHooks& hooks) {
  config.validate();
  if (dataset.identities.empty()) throw DataError("training set is empty");
  const Extent2 size = model.config().input_size;
  if (dataset.image_size != size) {
    throw ShapeError("dataset images are " + std::to_string(dataset.image_size.h) + "x" +
                     std::to_string(dataset.image_size.w) + " but the model expects " + std::to_string(size.h) +
                     "x" + std::to_string(size.w));
  }
  const Augmenter augmenter(dataset, config.seed, config.augment);
  Rng rng(mix_seed({config.seed, 0x7a1aULL}));
  model.params().zero_grads();

  TrainResult result;
  std::vector<PairSample> pairs;
  std::size_t cursor = 0;
  std::size_t epoch = 0;
  const std::size_t b = config.batch_size;
  Tensor batch_a(Shape{b, 3, size.h, size.w});
  Tensor batch_b(Shape{b, 3, size.h, size.w});
  std::vector<int> labels(b);

  for (std::size_t iter = 0; iter < config.max_iters; ++iter) {
    for (std::size_t slot = 0; slot < b; ++slot) {
      if (cursor == pairs.size()) {
        pairs = epoch_pairs(epoch++);
        cursor = 0;
        if (pairs.empty()) throw DataError("no training pairs available");
      }
      const PairSample& pair = pairs[cursor++];
      augmenter.write(dataset, pair.a, rng, batch_a, slot);
      augmenter.write(dataset, pair.b, rng, batch_b, slot);
      labels[slot] = pair.label;
    }

    const ForwardCache<float> cache = model.forward_train(batch_a, batch_b);
    Tensor logit_grads;
    const double loss = pair_loss(cache.value(node_names::logits), labels, &logit_grads);
    if (!std::isfinite(loss)) {
      throw NumericalError("training diverged: loss is " + std::to_string(loss) + " at iteration " +
                           std::to_string(iter));
    }
    model.backward(cache, logit_grads);
    const double lr = poly_lr(iter, config.max_iters, config.base_lr, config.lr_power);
    sgd_step(model.params(), lr, config.momentum, config.weight_decay);

    result.trace.push_back({iter, lr, loss});
    if (hooks.on_log && (iter % config.log_every == 0 || iter + 1 == config.max_iters)) {
      hooks.on_log(result.trace.back());
    }
    if (hooks.on_checkpoint && config.checkpoint_every > 0 && (iter + 1) % config.checkpoint_every == 0) {
      hooks.on_checkpoint(iter + 1, model);
    }
  }
  return result;
}

}  // namespace

TrainResult train(PpmnModel& model, const IdentityDataset& dataset, const TrainConfig& config,
                  const TrainHooks& hooks) {
  return run_training(
      model, dataset,
      [&](std::size_t epoch) { return generate_pairs(dataset, config.negative_ratio, mix_seed({config.seed, epoch})); },
      config, hooks);
}

TrainResult train_on_pairs(PpmnModel& model, const IdentityDataset& dataset, std::vector<PairSample> pool,
                           const TrainConfig& config, const TrainHooks& hooks) {
  if (pool.empty()) throw DataError("training pool is empty");
  return run_training(
      model, dataset,
      [&](std::size_t epoch) {
        std::vector<PairSample> pairs = pool;
        Rng rng(mix_seed({config.seed, epoch, 0x5e2ULL}));
        rng.shuffle(std::span<PairSample>(pairs));
        return pairs;
      },
      config, hooks);
}

std::vector<double> score_pairs(const PpmnModel& model, const IdentityDataset& dataset,
                                std::span<const PairSample> pairs, std::size_t batch_size) {
  if (batch_size == 0) throw std::invalid_argument("score_pairs: batch_size must be >= 1");
  const Extent2 size = model.config().input_size;

  // One representation per distinct image.
  std::vector<ImageRef> images;
  for (const PairSample& p : pairs) {
    images.push_back(p.a);
    images.push_back(p.b);
  }
  std::sort(images.begin(), images.end());
  images.erase(std::unique(images.begin(), images.end()), images.end());
  std::map<ImageRef, std::size_t> slot_of;
  for (std::size_t i = 0; i < images.size(); ++i) slot_of.emplace(images[i], i);

  Tensor reps;
  for (std::size_t begin = 0; begin < images.size(); begin += batch_size) {
    const std::size_t count = std::min(batch_size, images.size() - begin);
    Tensor batch(Shape{count, 3, size.h, size.w});
    for (std::size_t k = 0; k < count; ++k) {
      const ImageRef ref = images[begin + k];
      copy_sample(dataset.identities[ref.identity].images[ref.image].image, 0, batch, k);
    }
    Tensor out = model.represent(batch);
    if (reps.empty()) reps = Tensor(Shape{images.size(), out.shape().c, out.shape().h, out.shape().w});
    for (std::size_t k = 0; k < count; ++k) copy_sample(out, k, reps, begin + k);
  }

  std::vector<double> scores(pairs.size());
  for (std::size_t begin = 0; begin < pairs.size(); begin += batch_size) {
    const std::size_t count = std::min(batch_size, pairs.size() - begin);
    const Shape s{count, reps.shape().c, reps.shape().h, reps.shape().w};
    Tensor ra(s), rb(s);
    for (std::size_t k = 0; k < count; ++k) {
      copy_sample(reps, slot_of.at(pairs[begin + k].a), ra, k);
      copy_sample(reps, slot_of.at(pairs[begin + k].b), rb, k);
    }
    const auto out = model.score_representations(ra, rb);
    for (std::size_t k = 0; k < count; ++k) scores[begin + k] = out[k].p;
  }
  return scores;
}

MinedNegatives mine_hard_negatives(const PpmnModel& model, const IdentityDataset& dataset, double retain_fraction,
                                   std::uint64_t seed, std::size_t max_candidates) {
  if (!(retain_fraction > 0.0 && retain_fraction <= 1.0)) {
    throw std::invalid_argument("retain_fraction must be in (0, 1]");
  }
  std::vector<PairSample> candidates = negative_pairs(dataset);
  if (candidates.empty()) throw DataError("hard negative mining: no negative pairs");
  if (max_candidates > 0 && candidates.size() > max_candidates) {
    Rng rng(mix_seed({seed, 0x4e6ULL}));
    rng.shuffle(std::span<PairSample>(candidates));
    candidates.resize(max_candidates);
    std::sort(candidates.begin(), candidates.end(),
              [](const PairSample& x, const PairSample& y) { return std::tie(x.a, x.b) < std::tie(y.a, y.b); });
  }

  const std::vector<double> p = score_pairs(model, dataset, candidates);
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return p[x] > p[y]; });

  const auto keep = std::min(
      candidates.size(),
      std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(retain_fraction * static_cast<double>(order.size()) -
                                                                  1e-9))));
  MinedNegatives mined;
  mined.scored = candidates.size();
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (k < keep) {
      mined.retained.push_back(candidates[order[k]]);
      mined.retained_p.push_back(p[order[k]]);
    } else {
      mined.discarded_p.push_back(p[order[k]]);
    }
  }
  return mined;
}

TrainConfig stage2_config(const TrainConfig& config) {
  TrainConfig out = config;
  if (config.hnm.max_iters > 0) out.max_iters = config.hnm.max_iters;
  if (config.hnm.base_lr > 0.0) out.base_lr = config.hnm.base_lr;
  out.seed = mix_seed({config.seed, 2});
  return out;
}

void write_trace_csv(const std::filesystem::path& path, const TrainResult& result, std::size_t every) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "iter,lr,loss\n";
  out.precision(9);
  for (const TracePoint& t : result.trace) {
    if (every > 0 && t.iter % every != 0 && t.iter + 1 != result.trace.size()) continue;
    out << t.iter << ',' << t.lr << ',' << t.loss << '\n';
  }
}

}  // namespace ppmn
