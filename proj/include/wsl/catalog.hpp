#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace wsl::catalog {

enum class ClassLabel : int { nmp = 0, cemp = 1, cnmp = 2 };
inline constexpr int kNumClasses = 3;

enum class Split : int { train = 0, val = 1, test = 2 };

// Metal-poor when [Fe/H] < metal_poor_below; carbon-enhanced when [C/Fe] >= cemp_at_least.
// Equality at the metallicity threshold is NMP, equality at the carbon threshold is CEMP.
struct LabelRule {
  double metal_poor_below = -1.0;
  double cemp_at_least = 0.7;
};

struct SplitRatios {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
};

double carbon_ratio(double c_h, double fe_h);
ClassLabel assign_label(double fe_h, double c_fe, const LabelRule& rule = {});
ClassLabel label_from_code(int code);

// Per-class stratified 7:1:2 assignment. The split of a sample depends only on
// (its key, its class, the class membership set, seed), never on input order.
std::vector<Split> stratified_split(std::span<const ClassLabel> labels, std::span<const std::uint64_t> keys,
                                    const SplitRatios& ratios, std::uint64_t seed);
std::vector<Split> stratified_split(std::span<const ClassLabel> labels, const SplitRatios& ratios,
                                    std::uint64_t seed);

// Target per-class split sizes (train, val, test) for a class with n members.
std::array<std::size_t, 3> split_counts(std::size_t n, const SplitRatios& ratios);

std::string_view class_name(ClassLabel c);
std::string_view split_name(Split s);
Split parse_split(std::string_view name);

}  // namespace wsl::catalog
