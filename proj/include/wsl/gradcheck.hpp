#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "wsl/tensor.hpp"

namespace wsl::tc {

struct GradCheckOptions {
  double step = 1e-5;
  // 0 checks every coordinate; otherwise a seeded random subset of this size.
  std::size_t coordinates = 0;
  std::uint64_t seed = 0;
  // Relative error is |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst;  // "param[index]: analytic vs numeric"
};

// Central differences of the scalar f() against supplied analytic gradients
// (one vector per parameter, same length as its data).
GradCheckResult compare_gradients(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                                  const std::vector<std::vector<double>>& analytic, const GradCheckOptions& opts = {});

// Runs backward on f() to get analytic gradients, then compare_gradients.
GradCheckResult finite_difference_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                                        const GradCheckOptions& opts = {});

}  // namespace wsl::tc
