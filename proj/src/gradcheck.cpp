#include "wsl/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "wsl/error.hpp"
#include "wsl/rng.hpp"

namespace wsl::tc {

GradCheckResult compare_gradients(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                                  const std::vector<std::vector<double>>& analytic, const GradCheckOptions& opts) {
  if (analytic.size() != params.size()) throw ValidationError("gradcheck: one gradient per parameter required");
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (analytic[p].size() != params[p].numel()) throw ValidationError("gradcheck: gradient length mismatch");
    for (std::size_t i = 0; i < params[p].numel(); ++i) coords.emplace_back(p, i);
  }
  if (opts.coordinates > 0 && opts.coordinates < coords.size()) {
    Rng rng = make_rng(opts.seed, 0x67636b);
    for (std::size_t i = 0; i < opts.coordinates; ++i) {
      const auto j = i + static_cast<std::size_t>(rng() % (coords.size() - i));
      std::swap(coords[i], coords[j]);
    }
    coords.resize(opts.coordinates);
  }

  NoGradGuard guard;
  GradCheckResult result;
  for (auto [p, i] : coords) {
    Tensor param = params[p];
    auto data = param.mutable_data();
    const double saved = data[i];
    data[i] = saved + opts.step;
    const double up = f().item();
    data[i] = saved - opts.step;
    const double down = f().item();
    data[i] = saved;
    const double numeric = (up - down) / (2.0 * opts.step);
    const double a = analytic[p][i];
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), opts.floor});
    ++result.checked;
    if (!(rel <= result.max_rel_error)) {
      result.max_rel_error = std::isnan(rel) ? INFINITY : rel;
      char buf[160];
      std::snprintf(buf, sizeof buf, "param %zu[%zu]: analytic %.10g vs numeric %.10g", p, i, a, numeric);
      result.worst = buf;
    }
  }
  return result;
}

GradCheckResult finite_difference_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                                        const GradCheckOptions& opts) {
  for (auto p : params) p.zero_grad();
  backward(f());
  std::vector<std::vector<double>> analytic;
  for (const auto& p : params) {
    if (p.has_grad()) {
      analytic.emplace_back(p.grad().begin(), p.grad().end());
    } else {
      analytic.emplace_back(p.numel(), 0.0);
    }
  }
  return compare_gradients(f, params, analytic, opts);
}

}  // namespace wsl::tc
