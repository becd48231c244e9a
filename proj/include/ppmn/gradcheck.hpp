#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ppmn/graph.hpp"

namespace ppmn {

// Scalar function of a graph's outputs. The float overload also produces
// the loss gradient with respect to each output it reads; the double
// overload is used for the finite-difference side of the check.
class Objective {
 public:
  virtual ~Objective() = default;
  virtual std::vector<std::string> outputs() const = 0;
  virtual double evaluate(const ForwardCache<float>& cache, TensorMap<float>* output_grads) const = 0;
  virtual double evaluate(const ForwardCache<double>& cache) const = 0;
};

// The loss is the single element of one output node. Throws NumericalError
// if that output has more than one element.
class ScalarOutput final : public Objective {
 public:
  explicit ScalarOutput(std::string output) : output_(std::move(output)) {}
  std::vector<std::string> outputs() const override { return {output_}; }
  double evaluate(const ForwardCache<float>& cache, TensorMap<float>* output_grads) const override;
  double evaluate(const ForwardCache<double>& cache) const override;

 private:
  std::string output_;
};

// Weighted sum <u, output> for a fixed weight tensor u. Linear in the output,
// so any finite-difference error comes from the graph itself.
class WeightedSum final : public Objective {
 public:
  WeightedSum(std::string output, Tensor weights) : output_(std::move(output)), weights_(std::move(weights)) {}
  std::vector<std::string> outputs() const override { return {output_}; }
  double evaluate(const ForwardCache<float>& cache, TensorMap<float>* output_grads) const override;
  double evaluate(const ForwardCache<double>& cache) const override;

 private:
  std::string output_;
  Tensor weights_;
};

struct GradCheckOptions {
  // Coordinates sampled per parameter tensor (all of them when smaller).
  std::size_t max_coords = 64;
  // Coordinates tried per tensor before giving up, counting kink skips.
  std::size_t max_attempts = 1024;
  // Perturbation is eps_scale times the tensor's RMS value (1 when zero).
  double eps_scale = 1e-2;
  // Denominator floor for the relative error.
  double abs_floor = 1e-6;
  std::uint64_t seed = 0;
  // Skip coordinates whose perturbation flips a relu sign or a max-pool
  // winner anywhere in the graph.
  bool skip_kinks = true;
  // Test hook applied to the analytic gradients.
  ParamGradHook<float> hook;
};

struct ParamCheck {
  std::string name;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

struct GradCheckReport {
  std::vector<ParamCheck> params;
  double max_rel_error = 0.0;
};

// Compares the float analytic gradients against central differences
// (f(p + eps) - f(p - eps)) / (2 eps) evaluated in double precision.
// Leaves the parameter values untouched and the gradients zeroed.
GradCheckReport grad_check(const Graph& graph, ParamStore& params, const TensorMap<float>& inputs,
                           std::span<const std::string> param_names, const Objective& objective,
                           const GradCheckOptions& options = {});

}  // namespace ppmn
