#include "wsl/catalog.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "wsl/error.hpp"
#include "wsl/rng.hpp"

namespace wsl::catalog {

double carbon_ratio(double c_h, double fe_h) {
  if (!std::isfinite(c_h) || !std::isfinite(fe_h)) throw ValidationError("carbon_ratio: non-finite abundance");
  return c_h - fe_h;
}

ClassLabel assign_label(double fe_h, double c_fe, const LabelRule& rule) {
  if (!std::isfinite(fe_h) || !std::isfinite(c_fe)) throw ValidationError("assign_label: non-finite input");
  if (fe_h >= rule.metal_poor_below) return ClassLabel::nmp;
  return c_fe >= rule.cemp_at_least ? ClassLabel::cemp : ClassLabel::cnmp;
}

ClassLabel label_from_code(int code) {
  if (code < 0 || code >= kNumClasses) throw ValidationError("invalid class code " + std::to_string(code));
  return static_cast<ClassLabel>(code);
}

std::array<std::size_t, 3> split_counts(std::size_t n, const SplitRatios& ratios) {
  if (n < 3) throw ValidationError("stratified_split: class has fewer than 3 samples");
  const double total = ratios.train + ratios.val + ratios.test;
  auto val = static_cast<std::size_t>(std::llround(double(n) * ratios.val / total));
  auto test = static_cast<std::size_t>(std::llround(double(n) * ratios.test / total));
  val = std::max<std::size_t>(val, 1);
  test = std::max<std::size_t>(test, 1);
  while (val + test > n - 1) {
    if (test >= val && test > 1) --test;
    else --val;
  }
  return {n - val - test, val, test};
}

std::vector<Split> stratified_split(std::span<const ClassLabel> labels, std::span<const std::uint64_t> keys,
                                    const SplitRatios& ratios, std::uint64_t seed) {
  if (labels.size() != keys.size()) throw ValidationError("stratified_split: labels and keys differ in length");
  std::vector<Split> out(labels.size(), Split::train);
  for (int c = 0; c < kNumClasses; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (static_cast<int>(labels[i]) == c) members.push_back(i);
    }
    if (members.empty()) continue;
    const auto counts = split_counts(members.size(), ratios);
    // Order by a keyed hash so the result is invariant to input order.
    auto rank = [&](std::size_t i) { return std::pair(mix64(seed ^ mix64(keys[i] + 0x9e3779b97f4a7c15ULL)), keys[i]); };
    std::sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) { return rank(a) < rank(b); });
    for (std::size_t j = 0; j < members.size(); ++j) {
      out[members[j]] = j < counts[0] ? Split::train : (j < counts[0] + counts[1] ? Split::val : Split::test);
    }
  }
  return out;
}

std::vector<Split> stratified_split(std::span<const ClassLabel> labels, const SplitRatios& ratios,
                                    std::uint64_t seed) {
  std::vector<std::uint64_t> keys(labels.size());
  std::iota(keys.begin(), keys.end(), std::uint64_t{0});
  return stratified_split(labels, keys, ratios, seed);
}

std::string_view class_name(ClassLabel c) {
  switch (c) {
    case ClassLabel::nmp: return "NMP";
    case ClassLabel::cemp: return "CEMP";
    case ClassLabel::cnmp: return "CnMP";
  }
  return "?";
}

std::string_view split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw ValidationError("unknown split '" + std::string(name) + "'");
}

}  // namespace wsl::catalog
