#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ppmn/gradcheck.hpp"
#include "ppmn/model.hpp"

namespace ppmn {

struct GroupCheck {
  std::string label;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
};

// Gradient check of the pair loss over every parameter group, on a seeded
// random batch of `batch` image pairs with alternating labels.
std::vector<GroupCheck> check_model_gradients(PpmnModel& model, std::uint64_t seed, std::size_t batch,
                                              const GradCheckOptions& options);

}  // namespace ppmn
