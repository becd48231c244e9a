#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ppmn/graph.hpp"
#include "ppmn/ops.hpp"
#include "ppmn/tensor.hpp"

namespace ppmn {

struct ModelConfig {
  Extent2 input_size{160, 80};
  // Subtracted from every pixel before the backbone, centring [0, 1] inputs.
  double input_mean = 0.5;
  // Backbone: `backbone_stages` 3x3 stride-2 convolutions with relu. Stage i
  // has backbone_base_channels * 2^i channels except the last, which has
  // rep_channels.
  std::size_t backbone_stages = 4;
  std::size_t backbone_base_channels = 16;
  std::size_t rep_channels = 64;
  std::vector<std::size_t> pyramid_rates{1, 2, 3};
  std::size_t pyramid_kernel = 3;
  std::size_t branch_out_channels = 64;
  std::size_t fusion_out_channels = 64;
  PoolSpec pool{{2, 2}, {2, 2}};
  std::size_t fc_hidden = 1024;
  // Multiplies the fan-in init scale of the final two-unit layer so a fresh
  // model starts near p = 0.5.
  double head_init_gain = 0.1;
  std::uint64_t seed = 1;

  std::size_t backbone_stride() const { return std::size_t{1} << backbone_stages; }
  std::vector<std::size_t> backbone_channels() const;
  Extent2 representation_extent() const;
  Extent2 final_extent() const;
  void validate() const;

  // 1024 representation maps at 10x5 from a 160x80 input.
  static ModelConfig full_geometry();
};

// Output of the two-unit softmax for one pair.
struct PairScore {
  double p = 0.5;  // probability of "same person"
  float s0 = 0.0f;
  float s1 = 0.0f;
};

// Stable two-unit softmax: p = exp(s1) / (exp(s0) + exp(s1)).
PairScore pair_score(float s0, float s1);

// One labelled parameter group (the backbone, each pyramid branch, the
// fusion weights, the classifier head).
struct ParamGroup {
  std::string label;
  std::vector<std::string> params;
};

namespace node_names {
inline const std::string image_a = "image_a";
inline const std::string image_b = "image_b";
inline const std::string rep_a = "rep_a";
inline const std::string rep_b = "rep_b";
inline const std::string pair_concat = "pair_concat";
inline const std::string branch_concat = "branch_concat";
inline const std::string fusion = "fusion";
inline const std::string final_map = "final";
inline const std::string hidden = "hidden";
inline const std::string logits = "logits";
inline const std::string prob = "prob";
std::string branch(std::size_t index);
}  // namespace node_names

struct FusionResult {
  Tensor fused;  // after the learned 1x1 weighting and relu
  Tensor final;  // after max-pooling
};

class PpmnModel {
 public:
  // Builds the graph and draws seeded fan-in-scaled weights (biases zero).
  explicit PpmnModel(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  const Graph& graph() const { return graph_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  std::vector<ParamGroup> param_groups() const;

  // Shared-parameter towers over batches [n, 3, H, W].
  std::pair<Tensor, Tensor> extract_representations(const Tensor& image_a, const Tensor& image_b) const;
  Tensor represent(const Tensor& images) const;

  // One map per pyramid rate over the channel concatenation {R_A, R_B}.
  std::vector<Tensor> pyramid_match(const Tensor& rep_a, const Tensor& rep_b) const;
  FusionResult fuse_and_pool(std::span<const Tensor> branches) const;
  std::vector<PairScore> classify_pair(const Tensor& final_map) const;

  std::vector<PairScore> forward_pair(const Tensor& image_a, const Tensor& image_b) const;
  // Scores the matching head from precomputed representations.
  std::vector<PairScore> score_representations(const Tensor& rep_a, const Tensor& rep_b) const;

  // Forward pass retaining everything the backward pass needs.
  ForwardCache<float> forward_train(const Tensor& image_a, const Tensor& image_b) const;
  // Accumulates parameter gradients from d loss / d logits ([n, 2, 1, 1]).
  void backward(const ForwardCache<float>& cache, const Tensor& logit_grads,
                const ParamGradHook<float>& hook = {});

 private:
  void check_images(const Tensor& images) const;

  ModelConfig config_;
  Graph graph_;
  ParamStore params_;
};

std::vector<PairScore> scores_from_logits(const Tensor& logits);

}  // namespace ppmn
