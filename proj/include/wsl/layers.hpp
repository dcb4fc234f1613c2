#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "wsl/ops.hpp"

namespace wsl::tc {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Ordered registry of trainable parameters and non-trainable buffers.
// Weights are drawn U(-sqrt(1/fan_in), sqrt(1/fan_in)) from a stream keyed
// by (seed, name), so adding a layer does not reshuffle existing ones.
class ParameterSet {
 public:
  explicit ParameterSet(std::uint64_t seed = 0) : seed_(seed) {}

  Tensor weight(const std::string& name, Shape shape, std::size_t fan_in);
  Tensor constant(const std::string& name, Shape shape, double value);
  Tensor buffer(const std::string& name, Shape shape, double value);

  const std::vector<NamedTensor>& params() const { return params_; }
  const std::vector<NamedTensor>& buffers() const { return buffers_; }
  Tensor find(const std::string& name) const;
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  Tensor& insert(std::vector<NamedTensor>& list, const std::string& name, Tensor t);

  std::uint64_t seed_;
  std::vector<NamedTensor> params_;
  std::vector<NamedTensor> buffers_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct Linear {
  Tensor weight, bias;
  static Linear make(ParameterSet& ps, const std::string& name, std::size_t in, std::size_t out, bool with_bias = true);
  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
};

struct Conv1d {
  Tensor weight, bias;
  std::size_t stride = 1, padding = 0;
  static Conv1d make(ParameterSet& ps, const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
                     std::size_t stride, std::size_t padding);
  Tensor operator()(const Tensor& x) const { return conv1d(x, weight, bias, stride, padding); }
};

struct Conv2d {
  Tensor weight, bias;
  std::size_t stride = 1, padding = 0;
  static Conv2d make(ParameterSet& ps, const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
                     std::size_t stride, std::size_t padding);
  Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, stride, padding); }
};

struct LayerNorm {
  Tensor gamma, beta;
  std::size_t axis = 0;
  static LayerNorm make(ParameterSet& ps, const std::string& name, std::size_t size, std::size_t axis);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta, axis); }
};

struct BatchNorm {
  Tensor gamma, beta;
  BatchNormState state;
  static BatchNorm make(ParameterSet& ps, const std::string& name, std::size_t channels);
  Tensor operator()(const Tensor& x, bool training) { return batch_norm(x, gamma, beta, state, training); }
};

struct GruDirection {
  Tensor w_ih, w_hh, b_ih, b_hh;
};

// Stacked bidirectional GRU over x [steps, features] -> [steps, 2*hidden].
struct BiGru {
  std::size_t hidden = 0;
  std::vector<GruDirection> forward_dirs, backward_dirs;
  static BiGru make(ParameterSet& ps, const std::string& name, std::size_t in, std::size_t hidden, std::size_t layers);
  Tensor operator()(const Tensor& x) const;
};

// Scaled dot-product self-attention with learned q/k/v/output projections.
struct MultiHeadAttention {
  Linear q, k, v, out;
  std::size_t heads = 1;
  static MultiHeadAttention make(ParameterSet& ps, const std::string& name, std::size_t dim, std::size_t heads);
  // probs, when given, receives one [steps, steps] attention matrix per head.
  Tensor operator()(const Tensor& x, std::vector<Tensor>* probs = nullptr) const;
};

}  // namespace wsl::tc
