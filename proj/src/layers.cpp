#include "wsl/layers.hpp"

#include <cmath>

#include "wsl/error.hpp"
#include "wsl/rng.hpp"

namespace wsl::tc {
namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

Tensor& ParameterSet::insert(std::vector<NamedTensor>& list, const std::string& name, Tensor t) {
  if (!index_.emplace(name, list.size()).second) throw ValidationError("duplicate parameter name '" + name + "'");
  list.push_back({name, std::move(t)});
  return list.back().tensor;
}

Tensor ParameterSet::weight(const std::string& name, Shape shape, std::size_t fan_in) {
  if (fan_in == 0) throw ValidationError("parameter '" + name + "' has zero fan-in");
  const double bound = std::sqrt(1.0 / double(fan_in));
  Rng rng = make_rng(seed_, fnv1a(name));
  std::vector<double> data(numel(shape));
  for (double& v : data) v = uniform(rng, -bound, bound);
  return insert(params_, name, Tensor::from(std::move(shape), std::move(data), true));
}

Tensor ParameterSet::constant(const std::string& name, Shape shape, double value) {
  return insert(params_, name, Tensor::full(std::move(shape), value, true));
}

Tensor ParameterSet::buffer(const std::string& name, Shape shape, double value) {
  return insert(buffers_, name, Tensor::full(std::move(shape), value, false));
}

Tensor ParameterSet::find(const std::string& name) const {
  for (const auto* list : {&params_, &buffers_}) {
    for (const auto& p : *list) {
      if (p.name == name) return p.tensor;
    }
  }
  throw ValidationError("no parameter named '" + name + "'");
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

Linear Linear::make(ParameterSet& ps, const std::string& name, std::size_t in, std::size_t out, bool with_bias) {
  Linear l;
  l.weight = ps.weight(name + ".weight", {out, in}, in);
  if (with_bias) l.bias = ps.constant(name + ".bias", {out}, 0.0);
  return l;
}

Conv1d Conv1d::make(ParameterSet& ps, const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
                    std::size_t stride, std::size_t padding) {
  Conv1d c;
  c.weight = ps.weight(name + ".weight", {out, in, kernel}, in * kernel);
  c.bias = ps.constant(name + ".bias", {out}, 0.0);
  c.stride = stride;
  c.padding = padding;
  return c;
}

Conv2d Conv2d::make(ParameterSet& ps, const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
                    std::size_t stride, std::size_t padding) {
  Conv2d c;
  c.weight = ps.weight(name + ".weight", {out, in, kernel, kernel}, in * kernel * kernel);
  c.bias = ps.constant(name + ".bias", {out}, 0.0);
  c.stride = stride;
  c.padding = padding;
  return c;
}

LayerNorm LayerNorm::make(ParameterSet& ps, const std::string& name, std::size_t size, std::size_t axis) {
  LayerNorm l;
  l.gamma = ps.constant(name + ".gamma", {size}, 1.0);
  l.beta = ps.constant(name + ".beta", {size}, 0.0);
  l.axis = axis;
  return l;
}

BatchNorm BatchNorm::make(ParameterSet& ps, const std::string& name, std::size_t channels) {
  BatchNorm b;
  b.gamma = ps.constant(name + ".gamma", {channels}, 1.0);
  b.beta = ps.constant(name + ".beta", {channels}, 0.0);
  b.state.running_mean = ps.buffer(name + ".running_mean", {channels}, 0.0);
  b.state.running_var = ps.buffer(name + ".running_var", {channels}, 1.0);
  return b;
}

BiGru BiGru::make(ParameterSet& ps, const std::string& name, std::size_t in, std::size_t hidden, std::size_t layers) {
  if (hidden == 0) throw ValidationError("GRU hidden size must be positive");
  if (layers == 0) throw ValidationError("GRU needs at least one layer");
  BiGru g;
  g.hidden = hidden;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t width = l == 0 ? in : 2 * hidden;
    for (int dir = 0; dir < 2; ++dir) {
      const std::string p = name + ".l" + std::to_string(l) + (dir == 0 ? ".fwd" : ".bwd");
      GruDirection d;
      d.w_ih = ps.weight(p + ".w_ih", {3 * hidden, width}, width);
      d.w_hh = ps.weight(p + ".w_hh", {3 * hidden, hidden}, hidden);
      d.b_ih = ps.constant(p + ".b_ih", {3 * hidden}, 0.0);
      d.b_hh = ps.constant(p + ".b_hh", {3 * hidden}, 0.0);
      (dir == 0 ? g.forward_dirs : g.backward_dirs).push_back(d);
    }
  }
  return g;
}

Tensor BiGru::operator()(const Tensor& x) const {
  if (x.rank() != 2) throw ValidationError("GRU input must be [steps, features], got " + shape_str(x.shape()));
  Tensor h = x;
  for (std::size_t l = 0; l < forward_dirs.size(); ++l) {
    const auto& f = forward_dirs[l];
    const auto& b = backward_dirs[l];
    Tensor hf = gru_scan(linear(h, f.w_ih, f.b_ih), f.w_hh, f.b_hh, false);
    Tensor hb = gru_scan(linear(h, b.w_ih, b.b_ih), b.w_hh, b.b_hh, true);
    h = concat({hf, hb}, 1);
  }
  return h;
}

MultiHeadAttention MultiHeadAttention::make(ParameterSet& ps, const std::string& name, std::size_t dim,
                                            std::size_t heads) {
  if (heads == 0 || dim % heads != 0) {
    throw ValidationError("attention dim " + std::to_string(dim) + " not divisible by " + std::to_string(heads) +
                          " heads");
  }
  MultiHeadAttention m;
  m.q = Linear::make(ps, name + ".q", dim, dim);
  m.k = Linear::make(ps, name + ".k", dim, dim);
  m.v = Linear::make(ps, name + ".v", dim, dim);
  m.out = Linear::make(ps, name + ".out", dim, dim);
  m.heads = heads;
  return m;
}

Tensor MultiHeadAttention::operator()(const Tensor& x, std::vector<Tensor>* probs) const {
  if (x.rank() != 2) throw ValidationError("attention input must be [steps, dim], got " + shape_str(x.shape()));
  const std::size_t dim = x.dim(1);
  const std::size_t hd = dim / heads;
  const Tensor qa = q(x), ka = k(x), va = v(x);
  std::vector<Tensor> parts;
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor qh = narrow(qa, 1, h * hd, hd);
    const Tensor kh = narrow(ka, 1, h * hd, hd);
    const Tensor vh = narrow(va, 1, h * hd, hd);
    const Tensor p = softmax(scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(double(hd))));
    if (probs) probs->push_back(p);
    parts.push_back(matmul(p, vh));
  }
  return out(heads == 1 ? parts.front() : concat(parts, 1));
}

}  // namespace wsl::tc
