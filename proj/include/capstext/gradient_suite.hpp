#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace capstext {

struct GradSuiteRow {
  std::string layer;
  std::size_t instances = 0;
  double max_rel_error = 0;
  std::string worst_param;
  double worst_analytic = 0, worst_numeric = 0;
};

/// Layers covered: gate, conv_plain, multi_filter_maxpool, primary_capsules,
/// squash, softmax, static_routing, dynamic_routing, margin_loss, decoder,
/// l2_penalty. The routing and decoder entries run the full model.
const std::vector<std::string>& gradient_suite_layers();

/// Central-difference check of one layer over `instances` random problems
/// (seeds base_seed, base_seed+1, ...), 64-bit throughout.
GradSuiteRow check_layer_gradients(const std::string& layer, std::size_t instances = 20,
                                   double eps = 1e-5, std::uint64_t base_seed = 0);

std::vector<GradSuiteRow> run_gradient_suite(std::size_t instances = 20, double eps = 1e-5,
                                             std::uint64_t base_seed = 0);

}  // namespace capstext
