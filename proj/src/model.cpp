#include "ppmn/model.hpp"

#include <algorithm>
#include <cmath>

#include "ppmn/rng.hpp"

namespace ppmn {

std::string node_names::branch(std::size_t index) { return "branch" + std::to_string(index + 1); }

std::vector<std::size_t> ModelConfig::backbone_channels() const {
  std::vector<std::size_t> channels;
  for (std::size_t i = 0; i < backbone_stages; ++i) {
    channels.push_back(i + 1 == backbone_stages ? rep_channels : backbone_base_channels << i);
  }
  return channels;
}

Extent2 ModelConfig::representation_extent() const {
  return {input_size.h / backbone_stride(), input_size.w / backbone_stride()};
}

Extent2 ModelConfig::final_extent() const {
  const Extent2 rep = representation_extent();
  return {(rep.h - pool.window.h) / pool.stride.h + 1, (rep.w - pool.window.w) / pool.stride.w + 1};
}

void ModelConfig::validate() const {
  if (backbone_stages == 0 || backbone_stages > 8) {
    throw ShapeError("model: backbone_stages must be in [1, 8]");
  }
  if (backbone_base_channels == 0 || rep_channels == 0 || branch_out_channels == 0 || fusion_out_channels == 0) {
    throw ShapeError("model: channel counts must be >= 1");
  }
  const std::size_t stride = backbone_stride();
  if (input_size.h == 0 || input_size.w == 0 || input_size.h % stride != 0 || input_size.w % stride != 0) {
    throw ShapeError("model: input " + std::to_string(input_size.h) + "x" + std::to_string(input_size.w) +
                     " is not divisible by the backbone stride " + std::to_string(stride));
  }
  if (pyramid_rates.empty() || std::find(pyramid_rates.begin(), pyramid_rates.end(), 0u) != pyramid_rates.end()) {
    throw ShapeError("model: pyramid rates must be non-empty and >= 1");
  }
  if (pyramid_kernel == 0 || pyramid_kernel % 2 == 0) {
    throw ShapeError("model: pyramid kernel must be odd so branches can keep the grid size");
  }
  if (fc_hidden < 2) {
    throw ShapeError("model: fc_hidden must be >= 2");
  }
  const Extent2 rep = representation_extent();
  if (pool.window.h == 0 || pool.window.w == 0 || pool.stride.h == 0 || pool.stride.w == 0 ||
      pool.window.h > rep.h || pool.window.w > rep.w) {
    throw ShapeError("model: pool window " + std::to_string(pool.window.h) + "x" + std::to_string(pool.window.w) +
                     " does not fit the " + std::to_string(rep.h) + "x" + std::to_string(rep.w) +
                     " representation grid");
  }
}

ModelConfig ModelConfig::full_geometry() {
  ModelConfig c;
  c.rep_channels = 1024;
  c.branch_out_channels = 1024;
  c.fusion_out_channels = 1024;
  return c;
}

PairScore pair_score(float s0, float s1) {
  // 1 / (1 + exp(s0 - s1)) never overflows towards NaN.
  const double d = static_cast<double>(s0) - static_cast<double>(s1);
  double p;
  if (d >= 0.0) {
    const double e = std::exp(-d);
    p = e / (1.0 + e);
  } else {
    p = 1.0 / (1.0 + std::exp(d));
  }
  return {p, s0, s1};
}

std::vector<PairScore> scores_from_logits(const Tensor& logits) {
  if (logits.shape().sample_size() != 2) {
    throw ShapeError("expected two logits per pair, got " + logits.shape().str());
  }
  std::vector<PairScore> scores;
  scores.reserve(logits.shape().n);
  for (std::size_t n = 0; n < logits.shape().n; ++n) {
    scores.push_back(pair_score(logits.sample(n)[0], logits.sample(n)[1]));
  }
  return scores;
}

namespace {

Tensor fan_in_normal(Shape shape, double gain, Rng& rng) {
  const double fan_in = static_cast<double>(shape.c * shape.h * shape.w);
  const double std = gain * std::sqrt(2.0 / fan_in);
  Tensor t(shape);
  for (float& v : t.data()) v = static_cast<float>(std * rng.normal());
  return t;
}

LayerNode make_node(std::string name, LayerKind kind, std::vector<std::string> inputs) {
  LayerNode node;
  node.name = std::move(name);
  node.kind = kind;
  node.inputs = std::move(inputs);
  return node;
}

}  // namespace

PpmnModel::PpmnModel(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  using namespace node_names;
  Rng rng(mix_seed({config_.seed, 0x5050'4d4eULL}));
  auto add_params = [&](const std::string& prefix, Shape weight_shape, double gain) {
    params_.add(prefix + ".weight", fan_in_normal(weight_shape, gain, rng));
    params_.add(prefix + ".bias", Tensor(Shape{weight_shape.n, 1, 1, 1}));
  };

  graph_.add_input(image_a);
  graph_.add_input(image_b);

  // Siamese towers bind one parameter set.
  const std::vector<std::size_t> channels = config_.backbone_channels();
  std::size_t in_c = 3;
  for (std::size_t i = 0; i < channels.size(); ++i) {
    const std::string prefix = "backbone.conv" + std::to_string(i + 1);
    add_params(prefix, Shape{channels[i], in_c, 3, 3}, 1.0);
    in_c = channels[i];
  }
  for (const auto& [tower, input, output] :
       {std::tuple{std::string("tower_a"), image_a, rep_a}, std::tuple{std::string("tower_b"), image_b, rep_b}}) {
    LayerNode center = make_node(tower + ".center", LayerKind::shift, {input});
    center.shift = -config_.input_mean;
    graph_.add(center);
    std::string prev = center.name;
    for (std::size_t i = 0; i < channels.size(); ++i) {
      const std::string prefix = "backbone.conv" + std::to_string(i + 1);
      LayerNode conv = make_node(tower + ".conv" + std::to_string(i + 1), LayerKind::conv, {prev});
      conv.conv = ConvSpec{channels[i], {3, 3}, {2, 2}, {1, 1}, 1};
      conv.weight = prefix + ".weight";
      conv.bias = prefix + ".bias";
      const std::string relu_name = i + 1 == channels.size() ? output : tower + ".relu" + std::to_string(i + 1);
      graph_.add(conv);
      graph_.add(make_node(relu_name, LayerKind::relu, {conv.name}));
      prev = relu_name;
    }
  }

  graph_.add(make_node(pair_concat, LayerKind::concat, {rep_a, rep_b}));

  // Pyramid matching: one atrous branch per rate, "same" padding.
  const std::size_t k = config_.pyramid_kernel;
  std::vector<std::string> branch_names;
  for (std::size_t i = 0; i < config_.pyramid_rates.size(); ++i) {
    const std::size_t rate = config_.pyramid_rates[i];
    const std::string prefix = "pyramid.branch" + std::to_string(i + 1);
    add_params(prefix, Shape{config_.branch_out_channels, 2 * config_.rep_channels, k, k}, 1.0);
    LayerNode conv = make_node(branch(i) + ".conv", LayerKind::conv, {pair_concat});
    const std::size_t pad = rate * (k - 1) / 2;
    conv.conv = ConvSpec{config_.branch_out_channels, {k, k}, {1, 1}, {pad, pad}, rate};
    conv.weight = prefix + ".weight";
    conv.bias = prefix + ".bias";
    graph_.add(conv);
    graph_.add(make_node(branch(i), LayerKind::relu, {conv.name}));
    branch_names.push_back(branch(i));
  }

  graph_.add(make_node(branch_concat, LayerKind::concat, branch_names));
  add_params("fusion",
             Shape{config_.fusion_out_channels, config_.branch_out_channels * config_.pyramid_rates.size(), 1, 1},
             1.0);
  LayerNode fuse = make_node("fusion.conv", LayerKind::conv, {branch_concat});
  fuse.conv = ConvSpec{config_.fusion_out_channels, {1, 1}, {1, 1}, {0, 0}, 1};
  fuse.weight = "fusion.weight";
  fuse.bias = "fusion.bias";
  graph_.add(fuse);
  graph_.add(make_node(fusion, LayerKind::relu, {fuse.name}));

  LayerNode pool = make_node(final_map, LayerKind::maxpool, {fusion});
  pool.pool = config_.pool;
  graph_.add(pool);

  const Extent2 fin = config_.final_extent();
  const std::size_t flat = config_.fusion_out_channels * fin.h * fin.w;
  add_params("classifier.fc1", Shape{config_.fc_hidden, flat, 1, 1}, 1.0);
  add_params("classifier.fc2", Shape{2, config_.fc_hidden, 1, 1}, config_.head_init_gain);
  LayerNode fc1 = make_node("fc1", LayerKind::fc, {final_map});
  fc1.fc_out = config_.fc_hidden;
  fc1.weight = "classifier.fc1.weight";
  fc1.bias = "classifier.fc1.bias";
  graph_.add(fc1);
  graph_.add(make_node(hidden, LayerKind::relu, {fc1.name}));
  LayerNode fc2 = make_node(logits, LayerKind::fc, {hidden});
  fc2.fc_out = 2;
  fc2.weight = "classifier.fc2.weight";
  fc2.bias = "classifier.fc2.bias";
  graph_.add(fc2);
  graph_.add(make_node(prob, LayerKind::softmax_pair, {logits}));

  graph_.check_bindings(params_);
}

std::vector<ParamGroup> PpmnModel::param_groups() const {
  std::vector<ParamGroup> groups;
  auto with_prefix = [&](const std::string& prefix) {
    std::vector<std::string> names;
    for (const auto& e : params_.entries()) {
      if (e.name.rfind(prefix, 0) == 0) names.push_back(e.name);
    }
    return names;
  };
  groups.push_back({"theta1 (backbone)", with_prefix("backbone.")});
  for (std::size_t i = 0; i < config_.pyramid_rates.size(); ++i) {
    groups.push_back({"theta2 (pyramid r=" + std::to_string(config_.pyramid_rates[i]) + ")",
                      with_prefix("pyramid.branch" + std::to_string(i + 1) + ".")});
  }
  groups.push_back({"theta3 (fusion)", with_prefix("fusion.")});
  groups.push_back({"theta4 (classifier)", with_prefix("classifier.")});
  return groups;
}

void PpmnModel::check_images(const Tensor& images) const {
  const Shape& s = images.shape();
  if (s.c != 3 || s.h != config_.input_size.h || s.w != config_.input_size.w || s.n == 0) {
    throw ShapeError("model expects images [n x 3 x " + std::to_string(config_.input_size.h) + " x " +
                     std::to_string(config_.input_size.w) + "], got " + s.str());
  }
}

std::pair<Tensor, Tensor> PpmnModel::extract_representations(const Tensor& image_a, const Tensor& image_b) const {
  return {represent(image_a), represent(image_b)};
}

Tensor PpmnModel::represent(const Tensor& images) const {
  check_images(images);
  const std::string out[] = {node_names::rep_a};
  TensorMap<float> inputs;
  inputs.emplace(node_names::image_a, images);
  auto cache = forward(graph_, params_, std::move(inputs), out);
  return std::move(cache.values.at(node_names::rep_a));
}

std::vector<Tensor> PpmnModel::pyramid_match(const Tensor& rep_a, const Tensor& rep_b) const {
  if (rep_a.shape() != rep_b.shape()) {
    throw ShapeError("pyramid_match: representations differ, " + rep_a.shape().str() + " vs " + rep_b.shape().str());
  }
  std::vector<std::string> outs;
  for (std::size_t i = 0; i < config_.pyramid_rates.size(); ++i) outs.push_back(node_names::branch(i));
  TensorMap<float> inputs;
  inputs.emplace(node_names::rep_a, rep_a);
  inputs.emplace(node_names::rep_b, rep_b);
  auto cache = forward(graph_, params_, std::move(inputs), outs);
  std::vector<Tensor> maps;
  for (const auto& name : outs) maps.push_back(std::move(cache.values.at(name)));
  return maps;
}

FusionResult PpmnModel::fuse_and_pool(std::span<const Tensor> branches) const {
  if (branches.size() != config_.pyramid_rates.size()) {
    throw ShapeError("fuse_and_pool: expected " + std::to_string(config_.pyramid_rates.size()) + " branch maps, got " +
                     std::to_string(branches.size()));
  }
  TensorMap<float> inputs;
  for (std::size_t i = 0; i < branches.size(); ++i) {
    if (branches[i].shape() != branches.front().shape()) {
      throw ShapeError("fuse_and_pool: branch shapes differ, " + branches.front().shape().str() + " vs " +
                       branches[i].shape().str());
    }
    inputs.emplace(node_names::branch(i), branches[i]);
  }
  const std::string outs[] = {node_names::fusion, node_names::final_map};
  auto cache = forward(graph_, params_, std::move(inputs), outs);
  return {std::move(cache.values.at(node_names::fusion)), std::move(cache.values.at(node_names::final_map))};
}

std::vector<PairScore> PpmnModel::classify_pair(const Tensor& final_map) const {
  TensorMap<float> inputs;
  inputs.emplace(node_names::final_map, final_map);
  const std::string outs[] = {node_names::logits};
  auto cache = forward(graph_, params_, std::move(inputs), outs);
  return scores_from_logits(cache.values.at(node_names::logits));
}

std::vector<PairScore> PpmnModel::forward_pair(const Tensor& image_a, const Tensor& image_b) const {
  return scores_from_logits(forward_train(image_a, image_b).value(node_names::logits));
}

std::vector<PairScore> PpmnModel::score_representations(const Tensor& rep_a, const Tensor& rep_b) const {
  if (rep_a.shape() != rep_b.shape()) {
    throw ShapeError("score_representations: " + rep_a.shape().str() + " vs " + rep_b.shape().str());
  }
  TensorMap<float> inputs;
  inputs.emplace(node_names::rep_a, rep_a);
  inputs.emplace(node_names::rep_b, rep_b);
  const std::string outs[] = {node_names::logits};
  auto cache = forward(graph_, params_, std::move(inputs), outs);
  return scores_from_logits(cache.values.at(node_names::logits));
}

ForwardCache<float> PpmnModel::forward_train(const Tensor& image_a, const Tensor& image_b) const {
  check_images(image_a);
  check_images(image_b);
  if (image_a.shape().n != image_b.shape().n) {
    throw ShapeError("forward_pair: batch sizes differ, " + image_a.shape().str() + " vs " + image_b.shape().str());
  }
  TensorMap<float> inputs;
  inputs.emplace(node_names::image_a, image_a);
  inputs.emplace(node_names::image_b, image_b);
  const std::string outs[] = {node_names::logits};
  return forward(graph_, params_, std::move(inputs), outs);
}

void PpmnModel::backward(const ForwardCache<float>& cache, const Tensor& logit_grads,
                         const ParamGradHook<float>& hook) {
  TensorMap<float> grads;
  grads.emplace(node_names::logits, logit_grads);
  ppmn::backward(graph_, params_, cache, grads, hook);
}

}  // namespace ppmn
