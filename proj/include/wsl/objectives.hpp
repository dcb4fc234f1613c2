#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "wsl/tensor.hpp"

namespace wsl::objectives {

using tc::Tensor;

struct LossValue {
  Tensor scalar;                   // mean of per_sample, differentiable
  std::vector<double> per_sample;  // one value per row
};

// Heteroscedastic Gaussian NLL without the constant term. y, mu, log_var are
// [n, targets]; each row is averaged over targets, then rows are averaged.
LossValue gaussian_nll(const Tensor& y, const Tensor& mu, const Tensor& log_var);

inline constexpr double kFocalFloor = 1e-12;

// -alpha[t] (1 - p_t)^gamma ln max(p_t, 1e-12), p = softmax(logits) per row.
LossValue focal_loss(const Tensor& logits, std::span<const std::size_t> targets, std::span<const double> alpha,
                     double gamma);

// alpha_c = n / (K * n_c); classes without members get 1.
std::vector<double> inverse_frequency_alpha(std::span<const std::size_t> labels, std::size_t classes);

}  // namespace wsl::objectives
