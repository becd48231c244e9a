#include "ppmn/graph.hpp"

#include <algorithm>

#include "ppmn/simd.hpp"

namespace ppmn {

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::shift:
      return "shift";
    case LayerKind::conv:
      return "conv";
    case LayerKind::relu:
      return "relu";
    case LayerKind::maxpool:
      return "maxpool";
    case LayerKind::fc:
      return "fc";
    case LayerKind::concat:
      return "concat";
    case LayerKind::softmax_pair:
      return "softmax_pair";
  }
  return "unknown";
}

template <typename T>
typename BasicParamStore<T>::Entry& BasicParamStore<T>::add(std::string name, BasicTensor<T> value) {
  if (contains(name)) {
    throw GraphError("parameter '" + name + "' already exists");
  }
  const Shape shape = value.shape();
  index_.emplace(name, entries_.size());
  entries_.push_back(Entry{std::move(name), std::move(value), BasicTensor<T>(shape), BasicTensor<T>(shape)});
  return entries_.back();
}

template <typename T>
typename BasicParamStore<T>::Entry& BasicParamStore<T>::at(std::string_view name) {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw GraphError("unknown parameter '" + std::string(name) + "'");
  }
  return entries_[it->second];
}

template <typename T>
const typename BasicParamStore<T>::Entry& BasicParamStore<T>::at(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw GraphError("unknown parameter '" + std::string(name) + "'");
  }
  return entries_[it->second];
}

template <typename T>
void BasicParamStore<T>::zero_grads() {
  for (Entry& e : entries_) e.grad.zero();
}

void Graph::add_input(std::string name) {
  if (std::find(inputs_.begin(), inputs_.end(), name) != inputs_.end() || has_node(name)) {
    throw GraphError("graph name '" + name + "' already in use");
  }
  inputs_.push_back(std::move(name));
}

void Graph::add(LayerNode node) {
  if (has_node(node.name) || std::find(inputs_.begin(), inputs_.end(), node.name) != inputs_.end()) {
    throw GraphError("graph name '" + node.name + "' already in use");
  }
  const bool single_input = node.kind != LayerKind::concat;
  if (node.inputs.empty() || (single_input && node.inputs.size() != 1)) {
    throw GraphError("node '" + node.name + "' (" + std::string(to_string(node.kind)) + ") has " +
                     std::to_string(node.inputs.size()) + " inputs");
  }
  if ((node.kind == LayerKind::conv || node.kind == LayerKind::fc) && (node.weight.empty() || node.bias.empty())) {
    throw GraphError("node '" + node.name + "' needs weight and bias bindings");
  }
  index_.emplace(node.name, nodes_.size());
  nodes_.push_back(std::move(node));
}

const LayerNode& Graph::node(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw GraphError("unknown node '" + std::string(name) + "'");
  }
  return nodes_[it->second];
}

std::vector<const LayerNode*> Graph::schedule(const std::set<std::string, std::less<>>& bound,
                                              std::span<const std::string> outputs) const {
  enum class Mark { none, active, done };
  std::vector<Mark> marks(nodes_.size(), Mark::none);
  std::vector<const LayerNode*> order;

  std::function<void(const std::string&)> visit = [&](const std::string& name) {
    if (bound.count(name) > 0) return;
    auto it = index_.find(name);
    if (it == index_.end()) {
      if (std::find(inputs_.begin(), inputs_.end(), name) != inputs_.end()) {
        throw GraphError("graph input '" + name + "' is not bound");
      }
      throw GraphError("reference to unknown name '" + name + "'");
    }
    const std::size_t idx = it->second;
    if (marks[idx] == Mark::done) return;
    if (marks[idx] == Mark::active) {
      throw GraphError("cycle detected through node '" + name + "'");
    }
    marks[idx] = Mark::active;
    for (const std::string& in : nodes_[idx].inputs) visit(in);
    marks[idx] = Mark::done;
    order.push_back(&nodes_[idx]);
  };

  if (outputs.empty()) {
    for (const LayerNode& n : nodes_) visit(n.name);
  } else {
    for (const std::string& out : outputs) visit(out);
  }
  return order;
}

template <typename T>
void Graph::check_bindings(const BasicParamStore<T>& params) const {
  for (const LayerNode& n : nodes_) {
    for (const std::string* binding : {&n.weight, &n.bias}) {
      if (!binding->empty() && !params.contains(*binding)) {
        throw GraphError("node '" + n.name + "' binds missing parameter '" + *binding + "'");
      }
    }
  }
}

template <typename T>
const BasicTensor<T>& ForwardCache<T>::value(std::string_view name) const {
  auto it = values.find(name);
  if (it == values.end()) {
    throw GraphError("forward cache has no value for '" + std::string(name) + "'");
  }
  return it->second;
}

template <typename T>
ForwardCache<T> forward(const Graph& graph, const BasicParamStore<T>& params, TensorMap<T> inputs,
                        std::span<const std::string> outputs) {
  ForwardCache<T> cache;
  std::set<std::string, std::less<>> bound;
  for (const auto& [name, _] : inputs) bound.insert(name);
  cache.values = std::move(inputs);
  cache.order = graph.schedule(bound, outputs);

  for (const LayerNode* node : cache.order) {
    const BasicTensor<T>& x = cache.value(node->inputs.front());
    BasicTensor<T> out;
    switch (node->kind) {
      case LayerKind::shift: {
        out = x;
        const T delta = static_cast<T>(node->shift);
        for (T& v : out.data()) v += delta;
        break;
      }
      case LayerKind::conv: {
        const auto& w = params.at(node->weight).value;
        const auto& b = params.at(node->bias).value;
        out = conv2d_forward<T>(x, w, b.data(), node->conv);
        break;
      }
      case LayerKind::relu:
        out = relu_forward(x);
        break;
      case LayerKind::maxpool: {
        MaxPoolResult<T> r = maxpool_forward(x, node->pool);
        out = std::move(r.output);
        cache.argmax[node->name] = std::move(r.argmax);
        break;
      }
      case LayerKind::fc: {
        const auto& w = params.at(node->weight).value;
        const auto& b = params.at(node->bias).value;
        out = fc_forward<T>(x, w, b.data());
        break;
      }
      case LayerKind::concat: {
        std::vector<const BasicTensor<T>*> parts;
        for (const std::string& in : node->inputs) parts.push_back(&cache.value(in));
        out = concat_channels<T>(parts);
        break;
      }
      case LayerKind::softmax_pair:
        out = softmax_pair_forward(x);
        break;
    }
    cache.values.insert_or_assign(node->name, std::move(out));
  }
  return cache;
}

namespace {

template <typename T>
void accumulate(TensorMap<T>& grads, const std::string& name, BasicTensor<T>&& g) {
  auto it = grads.find(name);
  if (it == grads.end()) {
    grads.emplace(name, std::move(g));
    return;
  }
  if (it->second.shape() != g.shape()) {
    throw ShapeError("gradient for '" + name + "' has shape " + g.shape().str() + " but expected " +
                     it->second.shape().str());
  }
  simd::add(g.ptr(), it->second.ptr(), g.size());
}

template <typename T>
void accumulate_param(BasicParamStore<T>& params, const std::string& name, std::span<T> contribution,
                      const ParamGradHook<T>& hook) {
  auto& entry = params.at(name);
  if (contribution.size() != entry.grad.size()) {
    throw ShapeError("gradient for parameter '" + name + "' has " + std::to_string(contribution.size()) +
                     " values but the parameter has " + std::to_string(entry.grad.size()));
  }
  if (hook) hook(name, contribution);
  simd::add(contribution.data(), entry.grad.ptr(), contribution.size());
}

}  // namespace

template <typename T>
TensorMap<T> backward(const Graph& graph, BasicParamStore<T>& params, const ForwardCache<T>& cache,
                      const TensorMap<T>& output_grads, const ParamGradHook<T>& hook) {
  (void)graph;
  if (cache.order.empty() && cache.values.empty()) {
    throw GraphError("backward called without a forward cache");
  }
  TensorMap<T> grads;
  for (const auto& [name, g] : output_grads) {
    const BasicTensor<T>& v = cache.value(name);
    if (v.shape() != g.shape()) {
      throw ShapeError("output gradient for '" + name + "' has shape " + g.shape().str() + ", output is " +
                       v.shape().str());
    }
    grads.insert_or_assign(name, g);
  }

  std::set<std::string, std::less<>> produced;
  for (const LayerNode* node : cache.order) produced.insert(node->name);

  for (auto it = cache.order.rbegin(); it != cache.order.rend(); ++it) {
    const LayerNode& node = **it;
    auto found = grads.find(node.name);
    if (found == grads.end()) continue;
    const BasicTensor<T> g = std::move(found->second);
    grads.erase(found);
    const std::string& in_name = node.inputs.front();
    const BasicTensor<T>& x = cache.value(in_name);

    switch (node.kind) {
      case LayerKind::shift:
        accumulate(grads, in_name, BasicTensor<T>(g));
        break;
      case LayerKind::conv: {
        const auto& w = params.at(node.weight).value;
        ConvGrads<T> cg = conv2d_backward(x, w, node.conv, g);
        accumulate_param<T>(params, node.weight, cg.weights.data(), hook);
        accumulate_param<T>(params, node.bias, cg.bias, hook);
        accumulate(grads, in_name, std::move(cg.input));
        break;
      }
      case LayerKind::relu:
        accumulate(grads, in_name, relu_backward(x, g));
        break;
      case LayerKind::maxpool: {
        auto am = cache.argmax.find(node.name);
        if (am == cache.argmax.end()) {
          throw GraphError("forward cache has no argmax map for '" + node.name + "'");
        }
        accumulate(grads, in_name, maxpool_backward<T>(am->second, x.shape(), g));
        break;
      }
      case LayerKind::fc: {
        const auto& w = params.at(node.weight).value;
        FcGrads<T> fg = fc_backward(x, w, g);
        accumulate_param<T>(params, node.weight, fg.weights.data(), hook);
        accumulate_param<T>(params, node.bias, fg.bias, hook);
        accumulate(grads, in_name, std::move(fg.input));
        break;
      }
      case LayerKind::concat: {
        std::vector<std::size_t> channels;
        for (const std::string& in : node.inputs) channels.push_back(cache.value(in).shape().c);
        auto parts = split_channels<T>(g, channels);
        for (std::size_t i = 0; i < parts.size(); ++i) accumulate(grads, node.inputs[i], std::move(parts[i]));
        break;
      }
      case LayerKind::softmax_pair:
        accumulate(grads, in_name, softmax_pair_backward(cache.value(node.name), g));
        break;
    }
  }

  TensorMap<T> input_grads;
  for (auto& [name, g] : grads) {
    if (produced.count(name) == 0) input_grads.emplace(name, std::move(g));
  }
  return input_grads;
}

template class BasicParamStore<float>;
template class BasicParamStore<double>;
template struct ForwardCache<float>;
template struct ForwardCache<double>;
template void Graph::check_bindings(const BasicParamStore<float>&) const;
template void Graph::check_bindings(const BasicParamStore<double>&) const;
template ForwardCache<float> forward(const Graph&, const BasicParamStore<float>&, TensorMap<float>,
                                     std::span<const std::string>);
template ForwardCache<double> forward(const Graph&, const BasicParamStore<double>&, TensorMap<double>,
                                      std::span<const std::string>);
template TensorMap<float> backward(const Graph&, BasicParamStore<float>&, const ForwardCache<float>&,
                                   const TensorMap<float>&, const ParamGradHook<float>&);
template TensorMap<double> backward(const Graph&, BasicParamStore<double>&, const ForwardCache<double>&,
                                    const TensorMap<double>&, const ParamGradHook<double>&);

}  // namespace ppmn
