#include "wsl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>

#include "wsl/error.hpp"

namespace wsl::metrics {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::size_t bin_of(double v, std::span<const double> edges) {
  if (!(v >= edges.front()) || !(v <= edges.back())) return edges.size();
  auto it = std::upper_bound(edges.begin(), edges.end(), v);
  std::size_t i = static_cast<std::size_t>(it - edges.begin());
  if (i == edges.size()) --i;  // v == last edge
  return i - 1;
}

void check_edges(std::span<const double> edges, const char* what) {
  if (edges.size() < 2) throw ValidationError(std::string(what) + ": need at least two bin edges");
  for (std::size_t i = 1; i < edges.size(); ++i) {
    if (!(edges[i] > edges[i - 1])) throw ValidationError(std::string(what) + ": bin edges must increase");
  }
}

}  // namespace

RegressionMetrics regression_metrics(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size() || pred.empty()) {
    throw ValidationError("regression_metrics: need equal, non-empty prediction and target arrays");
  }
  const double n = double(pred.size());
  RegressionMetrics m;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    m.mu_err += d;
    m.mae += std::abs(d);
  }
  m.mu_err /= n;
  m.mae /= n;
  double var = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i] - m.mu_err;
    var += d * d;
  }
  m.sigma_err = std::sqrt(var / n);
  return m;
}

Confusion confusion_matrix(std::span<const std::size_t> predicted, std::span<const std::size_t> targets,
                           std::size_t classes) {
  if (predicted.size() != targets.size()) throw ValidationError("confusion_matrix: length mismatch");
  Confusion c(classes, std::vector<std::size_t>(classes, 0));
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] >= classes || predicted[i] >= classes) throw ValidationError("confusion_matrix: class out of range");
    ++c[targets[i]][predicted[i]];
  }
  return c;
}

double mcc_from_confusion(const Confusion& c) {
  const std::size_t k = c.size();
  double s = 0.0, correct = 0.0;
  std::vector<double> t(k, 0.0), p(k, 0.0);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      const double v = double(c[i][j]);
      s += v;
      t[i] += v;
      p[j] += v;
      if (i == j) correct += v;
    }
  double pt = 0.0, pp = 0.0, tt = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    pt += p[i] * t[i];
    pp += p[i] * p[i];
    tt += t[i] * t[i];
  }
  const double denom = std::sqrt((s * s - pp) * (s * s - tt));
  if (!(denom > 0.0)) return 0.0;
  return (correct * s - pt) / denom;
}

std::vector<double> midranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = 0.5 * double(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double rank_auc(std::span<const double> scores, std::span<const bool> positive) {
  if (scores.size() != positive.size()) throw ValidationError("rank_auc: length mismatch");
  const auto ranks = midranks(scores);
  double pos = 0.0, rank_sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (positive[i]) {
      pos += 1.0;
      rank_sum += ranks[i];
    }
  }
  const double neg = double(scores.size()) - pos;
  if (pos == 0.0 || neg == 0.0) throw ValidationError("rank_auc: both classes must be present");
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw ValidationError("spearman: need two equal arrays of length >= 2");
  const auto ra = midranks(a);
  const auto rb = midranks(b);
  const double n = double(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return kNaN;
  return sab / std::sqrt(saa * sbb);
}

ClassificationMetrics classification_metrics(std::span<const double> scores, std::span<const std::size_t> targets,
                                             std::size_t classes) {
  const std::size_t n = targets.size();
  if (classes < 2 || scores.size() != n * classes || n == 0) {
    throw ValidationError("classification_metrics: scores must be [n, classes] with n > 0");
  }
  std::vector<std::size_t> predicted(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = scores.data() + i * classes;
    predicted[i] = static_cast<std::size_t>(std::max_element(row, row + classes) - row);
  }
  ClassificationMetrics m;
  m.confusion = confusion_matrix(predicted, targets, classes);
  m.present.assign(classes, false);
  for (auto t : targets) m.present[t] = true;
  std::size_t n_present = 0;
  for (bool p : m.present) n_present += p ? 1 : 0;
  m.warning = n_present < classes;

  double f1 = 0.0, log_recall = 0.0, auc = 0.0;
  bool zero_recall = false;
  std::size_t auc_classes = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    if (!m.present[c]) continue;
    double tp = double(m.confusion[c][c]), fp = 0.0, fn = 0.0;
    for (std::size_t j = 0; j < classes; ++j) {
      if (j == c) continue;
      fn += double(m.confusion[c][j]);
      fp += double(m.confusion[j][c]);
    }
    f1 += 2.0 * tp / (2.0 * tp + fp + fn);
    const double recall = tp / (tp + fn);
    if (recall == 0.0) zero_recall = true;
    else log_recall += std::log(recall);
    if (n_present >= 2) {
      std::vector<double> s(n);
      auto pos = std::make_unique<bool[]>(n);
      for (std::size_t i = 0; i < n; ++i) {
        s[i] = scores[i * classes + c];
        pos[i] = targets[i] == c;
      }
      auc += rank_auc(s, std::span<const bool>(pos.get(), n));
      ++auc_classes;
    }
  }
  m.f1 = f1 / double(n_present);
  m.g_mean = zero_recall ? 0.0 : std::exp(log_recall / double(n_present));
  m.auc = auc_classes ? auc / double(auc_classes) : kNaN;
  m.mcc = mcc_from_confusion(m.confusion);
  return m;
}

std::vector<SnrBin> snr_binned_report(std::span<const double> values, std::span<const double> snrs,
                                      std::span<const double> edges) {
  if (values.size() != snrs.size()) throw ValidationError("snr_binned_report: length mismatch");
  check_edges(edges, "snr_binned_report");
  std::vector<SnrBin> bins(edges.size() - 1);
  std::vector<double> sums(bins.size(), 0.0);
  for (std::size_t b = 0; b < bins.size(); ++b) {
    bins[b].lo = edges[b];
    bins[b].hi = edges[b + 1];
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::size_t b = bin_of(snrs[i], edges);
    if (b >= bins.size()) continue;
    ++bins[b].count;
    sums[b] += values[i];
  }
  for (std::size_t b = 0; b < bins.size(); ++b) bins[b].mean = bins[b].count ? sums[b] / double(bins[b].count) : kNaN;
  return bins;
}

std::vector<double> normalized_error_sum(const std::vector<std::vector<double>>& errors) {
  if (errors.empty()) throw ValidationError("normalized_error_sum: no parameters");
  const std::size_t n = errors.front().size();
  std::vector<double> out(n, 0.0);
  for (const auto& e : errors) {
    if (e.size() != n || n == 0) throw ValidationError("normalized_error_sum: ragged error arrays");
    const double mean = std::accumulate(e.begin(), e.end(), 0.0) / double(n);
    double var = 0.0;
    for (double v : e) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / double(n));
    if (!(sd > 0.0)) throw ValidationError("normalized_error_sum: a parameter has zero error spread");
    for (std::size_t i = 0; i < n; ++i) out[i] += std::abs(e[i]) / sd;
  }
  return out;
}

std::vector<DensityCell> density_binned_report(std::span<const double> errors, std::span<const double> x,
                                               std::span<const double> y, std::span<const double> x_edges,
                                               std::span<const double> y_edges) {
  if (errors.size() != x.size() || errors.size() != y.size()) {
    throw ValidationError("density_binned_report: length mismatch");
  }
  check_edges(x_edges, "density_binned_report");
  check_edges(y_edges, "density_binned_report");
  const std::size_t nx = x_edges.size() - 1, ny = y_edges.size() - 1;
  std::vector<DensityCell> cells(nx * ny);
  std::vector<double> sums(cells.size(), 0.0);
  for (std::size_t i = 0; i < nx; ++i)
    for (std::size_t j = 0; j < ny; ++j) {
      auto& c = cells[i * ny + j];
      c.ix = i;
      c.iy = j;
      c.x_lo = x_edges[i];
      c.x_hi = x_edges[i + 1];
      c.y_lo = y_edges[j];
      c.y_hi = y_edges[j + 1];
    }
  for (std::size_t k = 0; k < errors.size(); ++k) {
    const std::size_t i = bin_of(x[k], x_edges), j = bin_of(y[k], y_edges);
    if (i >= nx || j >= ny) continue;
    ++cells[i * ny + j].count;
    sums[i * ny + j] += errors[k];
  }
  for (std::size_t c = 0; c < cells.size(); ++c) {
    cells[c].mean_error = cells[c].count ? sums[c] / double(cells[c].count) : kNaN;
  }
  return cells;
}

std::vector<double> linear_edges(double lo, double hi, std::size_t bins) {
  if (bins == 0 || !(hi > lo)) throw ValidationError("linear_edges: need hi > lo and bins > 0");
  std::vector<double> e(bins + 1);
  for (std::size_t i = 0; i <= bins; ++i) e[i] = lo + (hi - lo) * double(i) / double(bins);
  e.back() = hi;
  return e;
}

}  // namespace wsl::metrics
