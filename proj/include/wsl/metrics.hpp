#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace wsl::metrics {

struct RegressionMetrics {
  double mu_err = 0.0;     // mean(pred - target)
  double sigma_err = 0.0;  // population std of the differences
  double mae = 0.0;
};

RegressionMetrics regression_metrics(std::span<const double> pred, std::span<const double> target);

using Confusion = std::vector<std::vector<std::size_t>>;  // [true][predicted]

struct ClassificationMetrics {
  double auc = 0.0;
  double f1 = 0.0;
  double g_mean = 0.0;
  double mcc = 0.0;
  std::vector<bool> present;  // class has support in the targets
  bool warning = false;       // some class was absent and excluded
  Confusion confusion;
};

// scores: row-major [n, classes]; prediction is the per-row argmax (first on ties).
ClassificationMetrics classification_metrics(std::span<const double> scores, std::span<const std::size_t> targets,
                                             std::size_t classes = 3);

Confusion confusion_matrix(std::span<const std::size_t> predicted, std::span<const std::size_t> targets,
                           std::size_t classes);
// Generalized (K-class) Matthews correlation from a confusion matrix; 0 when undefined.
double mcc_from_confusion(const Confusion& c);

// Mann-Whitney AUC with midranks for ties. Needs both classes present.
double rank_auc(std::span<const double> scores, std::span<const bool> positive);

// Average ranks (1-based) with ties sharing their mean rank.
std::vector<double> midranks(std::span<const double> values);
double spearman(std::span<const double> a, std::span<const double> b);

struct SnrBin {
  double lo = 0.0, hi = 0.0;
  std::size_t count = 0;
  double mean = 0.0;  // NaN when empty
  bool empty() const { return count == 0; }
  double center() const { return 0.5 * (lo + hi); }
};

// Bins [edges[i], edges[i+1]); the last bin also takes values equal to its upper edge.
std::vector<SnrBin> snr_binned_report(std::span<const double> values, std::span<const double> snrs,
                                      std::span<const double> edges);

// Sum over parameters of |error| / (population std of that parameter's errors).
// errors[p][i] for parameter p and sample i.
std::vector<double> normalized_error_sum(const std::vector<std::vector<double>>& errors);

struct DensityCell {
  std::size_t ix = 0, iy = 0;
  double x_lo = 0.0, x_hi = 0.0, y_lo = 0.0, y_hi = 0.0;
  std::size_t count = 0;
  double mean_error = 0.0;  // NaN when empty
};

// Row-major over (ix, iy); points outside the edges are dropped.
std::vector<DensityCell> density_binned_report(std::span<const double> errors, std::span<const double> x,
                                               std::span<const double> y, std::span<const double> x_edges,
                                               std::span<const double> y_edges);

std::vector<double> linear_edges(double lo, double hi, std::size_t bins);

}  // namespace wsl::metrics
