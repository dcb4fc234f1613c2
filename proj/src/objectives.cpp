#include "wsl/objectives.hpp"

#include <algorithm>
#include <cmath>

#include "wsl/error.hpp"
#include "wsl/ops.hpp"

namespace wsl::objectives {

using namespace wsl::tc;

namespace {

void require_finite(const Tensor& t, const char* what) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) throw ValidationError(std::string("loss input '") + what + "' is not finite");
  }
}

}  // namespace

LossValue gaussian_nll(const Tensor& y, const Tensor& mu, const Tensor& log_var) {
  if (y.shape() != mu.shape() || y.shape() != log_var.shape() || y.rank() != 2) {
    throw ValidationError("gaussian_nll: y, mu and log_var must share an [n, targets] shape; got " +
                          shape_str(y.shape()) + ", " + shape_str(mu.shape()) + ", " + shape_str(log_var.shape()));
  }
  require_finite(y, "target");
  require_finite(mu, "mu");
  require_finite(log_var, "log_var");
  const Tensor resid = square(sub(y, mu));
  const Tensor terms = scale(add(log_var, mul(resid, exp(neg(log_var)))), 0.5);
  const Tensor rows = mean_axis(terms, 1);
  LossValue out;
  out.per_sample.assign(rows.data().begin(), rows.data().end());
  out.scalar = mean(rows);
  return out;
}

LossValue focal_loss(const Tensor& logits, std::span<const std::size_t> targets, std::span<const double> alpha,
                     double gamma) {
  if (logits.rank() != 2) throw ValidationError("focal_loss: logits must be [n, classes]");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (targets.size() != n) throw ValidationError("focal_loss: one target per row required");
  if (alpha.size() != k) throw ValidationError("focal_loss: alpha needs one weight per class");
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw ValidationError("focal_loss: gamma must be >= 0");
  for (double a : alpha) {
    if (!(a > 0.0) || !std::isfinite(a)) throw ValidationError("focal_loss: alpha must be positive");
  }
  require_finite(logits, "logits");
  if (n == 0) throw ValidationError("focal_loss: empty batch");

  const auto z = logits.data();
  std::vector<double> probs(n * k), per(n), dldz_scale(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] >= k) {
      throw ValidationError("focal_loss: class index " + std::to_string(targets[i]) + " out of range");
    }
    const double* row = z.data() + i * k;
    const double mx = *std::max_element(row, row + k);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += (probs[i * k + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < k; ++j) probs[i * k + j] /= sum;
    const double p = probs[i * k + targets[i]];
    const double a = alpha[targets[i]];
    const double q = 1.0 - p;
    const double lp = std::log(std::max(p, kFocalFloor));
    per[i] = -a * std::pow(q, gamma) * lp;
    // p * dl/dp; the floor makes ln constant below 1e-12.
    double g = 0.0;
    if (p >= kFocalFloor) g -= a * std::pow(q, gamma);
    if (gamma > 0.0 && q > 0.0) g += a * gamma * std::pow(q, gamma - 1.0) * p * lp;
    dldz_scale[i] = g;
  }
  double total = 0.0;
  for (double v : per) total += v;

  LossValue out;
  out.per_sample = per;
  out.scalar = detail::make_result(
      "focal_loss", {1}, {total / double(n)}, {logits},
      [logits, n, k, probs = std::move(probs), g = std::move(dldz_scale), t = std::vector<std::size_t>(
                                                                                 targets.begin(), targets.end())](
          const Node& nd) {
        double* gz = detail::grad_ptr(logits);
        const double s = nd.grad[0] / double(n);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < k; ++j) {
            const double delta = j == t[i] ? 1.0 : 0.0;
            gz[i * k + j] += s * g[i] * (delta - probs[i * k + j]);
          }
      });
  return out;
}

std::vector<double> inverse_frequency_alpha(std::span<const std::size_t> labels, std::size_t classes) {
  std::vector<std::size_t> counts(classes, 0);
  for (auto l : labels) {
    if (l >= classes) throw ValidationError("inverse_frequency_alpha: label out of range");
    ++counts[l];
  }
  std::vector<double> alpha(classes, 1.0);
  for (std::size_t c = 0; c < classes; ++c) {
    if (counts[c] > 0) alpha[c] = double(labels.size()) / (double(classes) * double(counts[c]));
  }
  return alpha;
}

}  // namespace wsl::objectives
