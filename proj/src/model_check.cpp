#include "ppmn/model_check.hpp"

#include <algorithm>

#include "ppmn/rng.hpp"
#include "ppmn/trainer.hpp"

namespace ppmn {

std::vector<GroupCheck> check_model_gradients(PpmnModel& model, std::uint64_t seed, std::size_t batch,
                                              const GradCheckOptions& options) {
  const Extent2 size = model.config().input_size;
  Rng rng(mix_seed({seed, 0x6c6bULL}));
  TensorMap<float> inputs;
  for (const std::string& name : {node_names::image_a, node_names::image_b}) {
    Tensor images(Shape{batch, 3, size.h, size.w});
    for (float& v : images.data()) v = static_cast<float>(rng.uniform());
    inputs.emplace(name, std::move(images));
  }
  std::vector<int> labels(batch);
  for (std::size_t i = 0; i < batch; ++i) labels[i] = static_cast<int>(i % 2 == 0);
  const PairLossObjective objective(labels);

  std::vector<GroupCheck> out;
  for (const ParamGroup& group : model.param_groups()) {
    GradCheckOptions opts = options;
    opts.seed = mix_seed({seed, out.size()});
    const GradCheckReport report = grad_check(model.graph(), model.params(), inputs, group.params, objective, opts);
    GroupCheck check{group.label, report.max_rel_error, 0, 0};
    for (const ParamCheck& p : report.params) {
      check.checked += p.checked;
      check.skipped_kinks += p.skipped_kinks;
    }
    out.push_back(check);
  }
  return out;
}

}  // namespace ppmn
