#include "ppmn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "ppmn/rng.hpp"

namespace ppmn {

namespace {

template <typename T>
const BasicTensor<T>& scalar_output(const ForwardCache<T>& cache, const std::string& name) {
  const BasicTensor<T>& out = cache.value(name);
  if (out.size() != 1) {
    throw NumericalError("objective output '" + name + "' is not a scalar: shape " + out.shape().str());
  }
  return out;
}

// Relu signs and pooling winners; two forward passes with equal signatures
// lie on the same linear piece of the network.
std::vector<std::uint32_t> activation_signature(const ForwardCache<double>& cache) {
  std::vector<std::uint32_t> sig;
  for (const LayerNode* node : cache.order) {
    if (node->kind == LayerKind::relu) {
      const TensorD& x = cache.value(node->inputs.front());
      for (double v : x.data()) sig.push_back(v > 0.0 ? 1u : 0u);
    } else if (node->kind == LayerKind::maxpool) {
      const auto& am = cache.argmax.at(node->name);
      sig.insert(sig.end(), am.begin(), am.end());
    }
  }
  return sig;
}

}  // namespace

double ScalarOutput::evaluate(const ForwardCache<float>& cache, TensorMap<float>* output_grads) const {
  const Tensor& out = scalar_output(cache, output_);
  if (output_grads != nullptr) {
    output_grads->insert_or_assign(output_, Tensor(out.shape(), 1.0f));
  }
  return out[0];
}

double ScalarOutput::evaluate(const ForwardCache<double>& cache) const {
  return scalar_output(cache, output_)[0];
}

double WeightedSum::evaluate(const ForwardCache<float>& cache, TensorMap<float>* output_grads) const {
  const Tensor& out = cache.value(output_);
  if (out.shape() != weights_.shape()) {
    throw ShapeError("weighted-sum objective: output " + out.shape().str() + " vs weights " +
                     weights_.shape().str());
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) sum += static_cast<double>(out[i]) * weights_[i];
  if (output_grads != nullptr) output_grads->insert_or_assign(output_, weights_);
  return sum;
}

double WeightedSum::evaluate(const ForwardCache<double>& cache) const {
  const TensorD& out = cache.value(output_);
  if (out.shape() != weights_.shape()) {
    throw ShapeError("weighted-sum objective: output " + out.shape().str() + " vs weights " +
                     weights_.shape().str());
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) sum += out[i] * static_cast<double>(weights_[i]);
  return sum;
}

GradCheckReport grad_check(const Graph& graph, ParamStore& params, const TensorMap<float>& inputs,
                           std::span<const std::string> param_names, const Objective& objective,
                           const GradCheckOptions& options) {
  const std::vector<std::string> outputs = objective.outputs();

  params.zero_grads();
  {
    ForwardCache<float> cache = forward(graph, params, inputs, outputs);
    TensorMap<float> output_grads;
    objective.evaluate(cache, &output_grads);
    backward(graph, params, cache, output_grads, options.hook);
  }
  std::map<std::string, Tensor, std::less<>> analytic;
  for (const std::string& name : param_names) analytic.emplace(name, params.at(name).grad);
  params.zero_grads();

  BasicParamStore<double> dparams = params.cast<double>();
  TensorMap<double> dinputs;
  for (const auto& [name, t] : inputs) dinputs.emplace(name, t.cast<double>());

  auto evaluate = [&](std::vector<std::uint32_t>* signature) {
    ForwardCache<double> cache = forward(graph, dparams, dinputs, outputs);
    if (signature != nullptr) *signature = activation_signature(cache);
    return objective.evaluate(cache);
  };
  std::vector<std::uint32_t> base_signature;
  evaluate(&base_signature);

  GradCheckReport report;
  Rng rng(options.seed);
  for (const std::string& name : param_names) {
    TensorD& value = dparams.at(name).value;
    const Tensor& grad = analytic.at(name);
    double sum_sq = 0.0;
    for (double v : value.data()) sum_sq += v * v;
    const double rms = std::sqrt(sum_sq / static_cast<double>(value.size()));
    const double eps = options.eps_scale * (rms > 0.0 ? rms : 1.0);

    std::vector<std::size_t> coords(value.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    rng.shuffle(std::span<std::size_t>(coords));

    ParamCheck check{name};
    std::size_t attempts = 0;
    for (std::size_t idx : coords) {
      if (check.checked >= options.max_coords || attempts++ >= options.max_attempts) break;
      const double original = value[idx];
      std::vector<std::uint32_t> sig_plus, sig_minus;
      value[idx] = original + eps;
      const double f_plus = evaluate(options.skip_kinks ? &sig_plus : nullptr);
      value[idx] = original - eps;
      const double f_minus = evaluate(options.skip_kinks ? &sig_minus : nullptr);
      value[idx] = original;
      if (options.skip_kinks && (sig_plus != base_signature || sig_minus != base_signature)) {
        ++check.skipped_kinks;
        continue;
      }
      const double numeric = (f_plus - f_minus) / (2.0 * eps);
      const double exact = grad[idx];
      const double abs_err = std::abs(exact - numeric);
      const double denom = std::max({std::abs(exact), std::abs(numeric), options.abs_floor});
      check.max_abs_error = std::max(check.max_abs_error, abs_err);
      check.max_rel_error = std::max(check.max_rel_error, abs_err / denom);
      ++check.checked;
    }
    report.max_rel_error = std::max(report.max_rel_error, check.max_rel_error);
    report.params.push_back(std::move(check));
  }
  return report;
}

}  // namespace ppmn
