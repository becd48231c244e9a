#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ppmn/ops.hpp"
#include "ppmn/tensor.hpp"

namespace ppmn {

// Malformed graph: unknown reference, cycle, unbound input, missing cache.
class GraphError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class LayerKind { shift, conv, relu, maxpool, fc, concat, softmax_pair };

std::string_view to_string(LayerKind kind);

struct LayerNode {
  std::string name;
  LayerKind kind = LayerKind::relu;
  std::vector<std::string> inputs;
  ConvSpec conv{};
  PoolSpec pool{};
  std::size_t fc_out = 0;
  // Constant added to every element by a shift node.
  double shift = 0.0;
  // Parameter bindings for conv and fc nodes. Several nodes may bind the
  // same names; they then share one storage.
  std::string weight;
  std::string bias;
};

// Named parameters in insertion order, each with gradient and momentum
// buffers of the same shape.
template <typename T>
class BasicParamStore {
 public:
  struct Entry {
    std::string name;
    BasicTensor<T> value;
    BasicTensor<T> grad;
    BasicTensor<T> momentum;
  };

  Entry& add(std::string name, BasicTensor<T> value);
  bool contains(std::string_view name) const { return index_.find(name) != index_.end(); }
  Entry& at(std::string_view name);
  const Entry& at(std::string_view name) const;

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  void zero_grads();

  // Values and momenta converted to U; gradients zeroed.
  template <typename U>
  BasicParamStore<U> cast() const {
    BasicParamStore<U> out;
    for (const Entry& e : entries_) {
      auto& added = out.add(e.name, e.value.template cast<U>());
      added.momentum = e.momentum.template cast<U>();
    }
    return out;
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

using ParamStore = BasicParamStore<float>;

class Graph {
 public:
  void add_input(std::string name);
  // Inputs may name nodes added later; ordering is resolved at run time.
  void add(LayerNode node);

  const std::vector<std::string>& inputs() const { return inputs_; }
  const std::vector<LayerNode>& nodes() const { return nodes_; }
  const LayerNode& node(std::string_view name) const;
  bool has_node(std::string_view name) const { return index_.find(name) != index_.end(); }

  // Topological order of the nodes needed to produce `outputs` when the
  // names in `bound` are supplied. Empty `outputs` means every node.
  std::vector<const LayerNode*> schedule(const std::set<std::string, std::less<>>& bound,
                                         std::span<const std::string> outputs) const;

  // Every parameter binding must resolve in `params`.
  template <typename T>
  void check_bindings(const BasicParamStore<T>& params) const;

 private:
  std::vector<std::string> inputs_;
  std::vector<LayerNode> nodes_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

template <typename T>
using TensorMap = std::map<std::string, BasicTensor<T>, std::less<>>;

template <typename T>
struct ForwardCache {
  // Bound inputs and every evaluated node output.
  TensorMap<T> values;
  std::map<std::string, std::vector<std::uint32_t>, std::less<>> argmax;
  std::vector<const LayerNode*> order;

  const BasicTensor<T>& value(std::string_view name) const;
};

// Evaluates the graph. `inputs` may bind graph inputs or override any node's
// output (e.g. feed cached representations straight into the matching head).
template <typename T>
ForwardCache<T> forward(const Graph& graph, const BasicParamStore<T>& params, TensorMap<T> inputs,
                        std::span<const std::string> outputs = {});

// Called with each parameter-gradient contribution before it is accumulated.
template <typename T>
using ParamGradHook = std::function<void(std::string_view param, std::span<T> contribution)>;

// Reverse pass. Parameter gradients accumulate (+=) into `params`, so shared
// bindings receive the sum over all uses. Returns gradients of the bound
// inputs that were reached.
template <typename T>
TensorMap<T> backward(const Graph& graph, BasicParamStore<T>& params, const ForwardCache<T>& cache,
                      const TensorMap<T>& output_grads, const ParamGradHook<T>& hook = {});

}  // namespace ppmn
