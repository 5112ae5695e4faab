#include "virt/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "virt/error.hpp"

namespace virt {

namespace {

double evaluate(const std::function<Tensor()>& f) {
  NoGrad no_grad;
  Tensor value = f();
  if (value.numel() != 1) {
    throw ContractError("grad_check: objective is not scalar, shape " + shape_string(value.shape()));
  }
  return value.item();
}

}  // namespace

double grad_check(const std::function<Tensor()>& f, Tensor theta, double eps) {
  NamedParameter only{"theta", std::move(theta)};
  return grad_check(f, std::span<const NamedParameter>(&only, 1), eps).max_rel_error;
}

GradCheckReport grad_check(const std::function<Tensor()>& f, std::span<const NamedParameter> params,
                           double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) {
    throw ContractError("grad_check: step " + std::to_string(eps) + " outside [1e-7, 1e-3]");
  }
  std::vector<bool> restore_flags;
  for (const auto& p : params) {
    Tensor t = p.tensor;
    restore_flags.push_back(t.requires_grad());
    t.set_requires_grad(true);
    t.zero_grad();
  }

  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    Tensor loss;
    {
      TapeRecording recording(tape);
      loss = f();
    }
    if (loss.numel() != 1) {
      throw ContractError("grad_check: objective is not scalar, shape " + shape_string(loss.shape()));
    }
    if (loss.requires_grad()) tape.backward(loss);
    for (const auto& p : params) {
      auto g = p.tensor.grad();
      analytic.emplace_back(p.tensor.numel(), 0.0);
      std::copy(g.begin(), g.end(), analytic.back().begin());
    }
  }

  GradCheckReport report;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor t = params[k].tensor;
    auto values = t.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double original = values[i];
      values[i] = original + eps;
      const double up = evaluate(f);
      values[i] = original - eps;
      const double down = evaluate(f);
      values[i] = original;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[k][i];
      const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
      ++report.components_checked;
      if (report.worst_parameter.empty() || err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_parameter = params[k].name;
        report.worst_index = i;
      }
    }
    t.zero_grad();
    t.set_requires_grad(restore_flags[k]);
  }
  return report;
}

}  // namespace virt
