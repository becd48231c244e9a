#include <gtest/gtest.h>

#include <cmath>
#include <string>
#include <vector>

#include "ppmn/gradcheck.hpp"
#include "ppmn/graph.hpp"
#include "support.hpp"

using namespace ppmn;
using ppmn::testing::random_tensor;

namespace {

LayerNode node(std::string name, LayerKind kind, std::vector<std::string> inputs) {
  LayerNode n;
  n.name = std::move(name);
  n.kind = kind;
  n.inputs = std::move(inputs);
  return n;
}

LayerNode fc_node(std::string name, std::string input, std::size_t out, std::string param) {
  LayerNode n = node(std::move(name), LayerKind::fc, {std::move(input)});
  n.fc_out = out;
  n.weight = param + ".weight";
  n.bias = param + ".bias";
  return n;
}

LayerNode conv_node(std::string name, std::string input, ConvSpec spec, std::string param) {
  LayerNode n = node(std::move(name), LayerKind::conv, {std::move(input)});
  n.conv = spec;
  n.weight = param + ".weight";
  n.bias = param + ".bias";
  return n;
}

void add_params(ParamStore& params, const std::string& prefix, Shape weight, Rng& rng) {
  params.add(prefix + ".weight", random_tensor(weight, rng, -0.5, 0.5));
  params.add(prefix + ".bias", random_tensor(Shape{weight.n, 1, 1, 1}, rng, -0.1, 0.1));
}

std::vector<std::string> all_params(const ParamStore& params) {
  std::vector<std::string> names;
  for (const auto& e : params.entries()) names.push_back(e.name);
  return names;
}

}  // namespace

TEST(Graph, FcForwardMatchesHandComputation) {
  Graph g;
  g.add_input("x");
  g.add(fc_node("y", "x", 2, "fc"));
  ParamStore params;
  params.add("fc.weight", Tensor(Shape{2, 3, 1, 1}, {1, 2, 3, -1, 0, 1}));
  params.add("fc.bias", Tensor(Shape{2, 1, 1, 1}, {0.5f, -0.5f}));
  const auto cache = forward(g, params, {{"x", Tensor(Shape{1, 3, 1, 1}, {1, 1, 2})}});
  const Tensor& y = cache.value("y");
  EXPECT_FLOAT_EQ(y[0], 1 + 2 + 6 + 0.5f);
  EXPECT_FLOAT_EQ(y[1], -1 + 0 + 2 - 0.5f);
}

TEST(Graph, NodesMayBeAddedBeforeTheirInputs) {
  Graph g;
  g.add_input("x");
  g.add(node("z", LayerKind::relu, {"y"}));
  g.add(fc_node("y", "x", 2, "fc"));
  ParamStore params;
  Rng rng(3);
  add_params(params, "fc", Shape{2, 4, 1, 1}, rng);
  const auto cache = forward(g, params, {{"x", random_tensor(Shape{2, 4, 1, 1}, rng)}});
  ASSERT_EQ(cache.order.size(), 2u);
  EXPECT_EQ(cache.order[0]->name, "y");
  EXPECT_EQ(cache.order[1]->name, "z");
}

TEST(Graph, SharedBindingAccumulatesGradientOfBothUses) {
  // y = W a + W b with one shared W: dL/dW = g a^T + g b^T.
  Graph g;
  g.add_input("a");
  g.add_input("b");
  g.add(fc_node("ya", "a", 2, "shared"));
  g.add(fc_node("yb", "b", 2, "shared"));
  g.add(node("y", LayerKind::concat, {"ya", "yb"}));
  ParamStore params;
  Rng rng(5);
  add_params(params, "shared", Shape{2, 3, 1, 1}, rng);
  const Tensor a(Shape{1, 3, 1, 1}, {1, 2, 3});
  const Tensor b(Shape{1, 3, 1, 1}, {-1, 0.5f, 4});
  const auto cache = forward(g, params, {{"a", a}, {"b", b}});
  const Tensor up(Shape{1, 4, 1, 1}, {1, 2, 3, 4});
  backward(g, params, cache, {{"y", up}});
  const Tensor& gw = params.at("shared.weight").grad;
  for (std::size_t o = 0; o < 2; ++o) {
    for (std::size_t i = 0; i < 3; ++i) {
      EXPECT_FLOAT_EQ(gw[o * 3 + i], up[o] * a[i] + up[2 + o] * b[i]);
    }
  }
  EXPECT_FLOAT_EQ(params.at("shared.bias").grad[0], up[0] + up[2]);
}

TEST(Graph, BackwardReturnsInputGradients) {
  Graph g;
  g.add_input("x");
  g.add(fc_node("y", "x", 1, "fc"));
  ParamStore params;
  params.add("fc.weight", Tensor(Shape{1, 2, 1, 1}, {3, -2}));
  params.add("fc.bias", Tensor(Shape{1, 1, 1, 1}));
  const auto cache = forward(g, params, {{"x", Tensor(Shape{1, 2, 1, 1}, {1, 1})}});
  const auto grads = backward(g, params, cache, {{"y", Tensor(Shape{1, 1, 1, 1}, {2})}});
  ASSERT_TRUE(grads.contains("x"));
  EXPECT_FLOAT_EQ(grads.at("x")[0], 6.0f);
  EXPECT_FLOAT_EQ(grads.at("x")[1], -4.0f);
}

TEST(Graph, ShiftAddsConstantAndPassesGradientThrough) {
  Graph g;
  g.add_input("x");
  LayerNode s = node("y", LayerKind::shift, {"x"});
  s.shift = -0.5;
  g.add(s);
  ParamStore params;
  const auto cache = forward(g, params, {{"x", Tensor(Shape{1, 1, 1, 3}, {0, 0.5f, 1})}});
  const Tensor& y = cache.value("y");
  EXPECT_EQ(y[0], -0.5f);
  EXPECT_EQ(y[1], 0.0f);
  EXPECT_EQ(y[2], 0.5f);
  const auto grads = backward(g, params, cache, {{"y", Tensor(Shape{1, 1, 1, 3}, {1, -2, 3})}});
  const Tensor& gx = grads.at("x");
  EXPECT_EQ(gx[0], 1.0f);
  EXPECT_EQ(gx[1], -2.0f);
  EXPECT_EQ(gx[2], 3.0f);
}

TEST(Graph, RejectsCycles) {
  Graph g;
  g.add_input("x");
  g.add(node("a", LayerKind::concat, {"x", "b"}));
  g.add(node("b", LayerKind::relu, {"a"}));
  ParamStore params;
  EXPECT_THROW(forward(g, params, {{"x", Tensor(Shape{1, 1, 1, 1})}}), GraphError);
}

TEST(Graph, RejectsUnboundInputAndUnknownReference) {
  Graph g;
  g.add_input("x");
  g.add(node("r", LayerKind::relu, {"x"}));
  ParamStore params;
  EXPECT_THROW(forward(g, params, {}), GraphError);

  Graph h;
  h.add_input("x");
  h.add(node("r", LayerKind::relu, {"nowhere"}));
  EXPECT_THROW(forward(h, params, {{"x", Tensor(Shape{1, 1, 1, 1})}}), GraphError);
}

TEST(Graph, RejectsDuplicateNamesAndMissingBindings) {
  Graph g;
  g.add_input("x");
  EXPECT_THROW(g.add_input("x"), GraphError);
  g.add(node("r", LayerKind::relu, {"x"}));
  EXPECT_THROW(g.add(node("r", LayerKind::relu, {"x"})), GraphError);
  EXPECT_THROW(g.add(node("two", LayerKind::relu, {"x", "r"})), GraphError);
  g.add(fc_node("y", "x", 2, "fc"));
  ParamStore params;
  EXPECT_THROW(g.check_bindings(params), GraphError);
}

TEST(Graph, InputsOverrideNodeOutputs) {
  Graph g;
  g.add_input("x");
  g.add(node("r", LayerKind::relu, {"x"}));
  g.add(node("s", LayerKind::relu, {"r"}));
  ParamStore params;
  const Tensor fed(Shape{1, 2, 1, 1}, {-1, 3});
  const std::vector<std::string> outs{"s"};
  const auto cache = forward(g, params, {{"r", fed}}, outs);
  EXPECT_EQ(cache.value("s")[0], 0.0f);
  EXPECT_EQ(cache.value("s")[1], 3.0f);
}

TEST(Graph, RepeatedRunsAreBitwiseIdentical) {
  Graph g;
  g.add_input("x");
  g.add(conv_node("c", "x", ConvSpec{4, {3, 3}, {1, 1}, {2, 2}, 2}, "conv"));
  g.add(node("r", LayerKind::relu, {"c"}));
  ParamStore p1, p2;
  Rng r1(9), r2(9);
  add_params(p1, "conv", Shape{4, 3, 3, 3}, r1);
  add_params(p2, "conv", Shape{4, 3, 3, 3}, r2);
  Rng xr(1);
  const Tensor x = random_tensor(Shape{2, 3, 8, 6}, xr);
  const auto c1 = forward(g, p1, {{"x", x}});
  const auto c2 = forward(g, p2, {{"x", x}});
  const Tensor up = random_tensor(c1.value("r").shape(), xr);
  backward(g, p1, c1, {{"r", up}});
  backward(g, p2, c2, {{"r", up}});
  EXPECT_EQ(max_abs_diff(c1.value("r"), c2.value("r")), 0.0);
  EXPECT_EQ(max_abs_diff(p1.at("conv.weight").grad, p2.at("conv.weight").grad), 0.0);
}

TEST(GradCheck, LinearFcPassesTightly) {
  Graph g;
  g.add_input("x");
  g.add(fc_node("y", "x", 3, "fc"));
  ParamStore params;
  Rng rng(21);
  add_params(params, "fc", Shape{3, 5, 1, 1}, rng);
  const Tensor x = random_tensor(Shape{2, 5, 1, 1}, rng);
  const WeightedSum objective("y", random_tensor(Shape{2, 3, 1, 1}, rng));
  const auto names = all_params(params);
  const auto report = grad_check(g, params, {{"x", x}}, names, objective);
  ASSERT_EQ(report.params.size(), 2u);
  for (const auto& p : report.params) EXPECT_GT(p.checked, 0u) << p.name;
  EXPECT_LE(report.max_rel_error, 1e-4);
}

TEST(GradCheck, ReluAndDilatedConvChainPasses) {
  Graph g;
  g.add_input("x");
  g.add(conv_node("c1", "x", ConvSpec{3, {3, 3}, {1, 1}, {3, 3}, 3}, "conv1"));
  g.add(node("r1", LayerKind::relu, {"c1"}));
  g.add(conv_node("c2", "r1", ConvSpec{2, {3, 3}, {2, 2}, {1, 1}, 1}, "conv2"));
  ParamStore params;
  Rng rng(4);
  add_params(params, "conv1", Shape{3, 2, 3, 3}, rng);
  add_params(params, "conv2", Shape{2, 3, 3, 3}, rng);
  const Tensor x = random_tensor(Shape{1, 2, 9, 7}, rng);
  const Tensor u = random_tensor(Shape{1, 2, 5, 4}, rng);
  const WeightedSum objective("c2", u);
  const auto names = all_params(params);
  const auto report = grad_check(g, params, {{"x", x}}, names, objective);
  for (const auto& p : report.params) EXPECT_GT(p.checked, 0u) << p.name;
  EXPECT_LE(report.max_rel_error, 1e-3);
}

TEST(GradCheck, LeavesValuesUntouchedAndGradientsZero) {
  Graph g;
  g.add_input("x");
  g.add(fc_node("y", "x", 2, "fc"));
  ParamStore params;
  Rng rng(8);
  add_params(params, "fc", Shape{2, 3, 1, 1}, rng);
  const Tensor before = params.at("fc.weight").value;
  const auto names = all_params(params);
  grad_check(g, params, {{"x", random_tensor(Shape{1, 3, 1, 1}, rng)}}, names,
             WeightedSum("y", random_tensor(Shape{1, 2, 1, 1}, rng)));
  EXPECT_EQ(max_abs_diff(before, params.at("fc.weight").value), 0.0);
  for (float v : params.at("fc.weight").grad.data()) EXPECT_EQ(v, 0.0f);
}

TEST(GradCheck, DetectsCorruptedBackward) {
  Graph g;
  g.add_input("x");
  g.add(fc_node("y", "x", 2, "fc"));
  ParamStore params;
  Rng rng(2);
  add_params(params, "fc", Shape{2, 4, 1, 1}, rng);
  GradCheckOptions options;
  options.hook = [](std::string_view, std::span<float> c) {
    for (float& v : c) v *= 1.05f;
  };
  const auto names = all_params(params);
  const auto report = grad_check(g, params, {{"x", random_tensor(Shape{1, 4, 1, 1}, rng)}}, names,
                                 WeightedSum("y", random_tensor(Shape{1, 2, 1, 1}, rng)), options);
  EXPECT_GT(report.max_rel_error, 1e-2);
}

TEST(GradCheck, ScalarOutputRejectsVectorOutput) {
  Graph g;
  g.add_input("x");
  g.add(fc_node("y", "x", 2, "fc"));
  ParamStore params;
  Rng rng(6);
  add_params(params, "fc", Shape{2, 2, 1, 1}, rng);
  const auto names = all_params(params);
  EXPECT_THROW(grad_check(g, params, {{"x", random_tensor(Shape{1, 2, 1, 1}, rng)}}, names, ScalarOutput("y")),
               NumericalError);
}
