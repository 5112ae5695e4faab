#pragma once

#include <functional>
#include <span>
#include <string>

#include "virt/tensor.hpp"

namespace virt {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  std::size_t components_checked = 0;
};

// Compares the tape gradient of a scalar f against central differences,
// returning max |analytic − numeric| / max(1, |analytic|) over every
// component. `f` must rebuild its graph from the current parameter values
// each call. Throws ContractError for non-scalar f or eps outside
// [1e-7, 1e-3].
double grad_check(const std::function<Tensor()>& f, Tensor theta, double eps = 1e-5);

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

GradCheckReport grad_check(const std::function<Tensor()>& f, std::span<const NamedParameter> params,
                           double eps = 1e-5);

}  // namespace virt
