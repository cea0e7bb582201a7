#include "mgnet/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string_view>

#include "mgnet/kernels.hpp"

namespace mgnet::ad {

Array::Array(int n_, int c_, int h_, int w_, Real fill) : n(n_), c(c_), h(h_), w(w_) {
  require(n > 0 && c > 0 && h > 0 && w > 0, "Array: extents must be positive");
  data.assign(static_cast<std::size_t>(n) * c * h * w, fill);
}

Array Array::from_dims(const std::vector<int>& dims, std::span<const Real> values) {
  Array a;
  switch (dims.size()) {
    case 1:
      a = Array(1, dims[0], 1, 1);
      break;
    case 2:
      a = Array(1, 1, dims[0], dims[1]);
      break;
    case 3:
      a = Array(1, dims[0], dims[1], dims[2]);
      break;
    case 4:
      a = Array(dims[0], dims[1], dims[2], dims[3]);
      break;
    default:
      throw ContractViolation("Array::from_dims: rank must be 1..4");
  }
  require(values.size() == a.size(), "Array::from_dims: value count does not match dims");
  std::copy(values.begin(), values.end(), a.data.begin());
  return a;
}

Array Array::from_tensor(const Tensor& t) {
  Array a(1, t.channels(), t.height(), t.width());
  std::copy(t.values().begin(), t.values().end(), a.data.begin());
  return a;
}

Array Array::from_tensors(std::span<const Tensor> batch) {
  require(!batch.empty(), "Array::from_tensors: empty batch");
  const Tensor& first = batch.front();
  Array a(static_cast<int>(batch.size()), first.channels(), first.height(), first.width());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    require(batch[i].same_shape(first), "Array::from_tensors: ragged batch");
    std::copy(batch[i].values().begin(), batch[i].values().end(),
              a.data.begin() + static_cast<std::ptrdiff_t>(i * a.sample_size()));
  }
  return a;
}

Tensor Array::to_tensor(int i) const {
  auto s = sample(i);
  return Tensor(h, w, c, std::vector<Real>(s.begin(), s.end()));
}

std::string Array::shape_string() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
         std::to_string(w) + ")";
}

const Array& Var::value() const {
  require(valid(), "Var: absent value");
  return tape_->node(id_).value;
}

const Array& Var::grad() const {
  require(valid(), "Var: absent value");
  return tape_->node(id_).grad;
}

Var Tape::constant(Array value) {
  Node node;
  node.op = "constant";
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::parameter(const std::string& name, Array value) {
  require(!params_.contains(name), "Tape::parameter: duplicate name " + name);
  Node node;
  node.op = "parameter";
  node.value = std::move(value);
  node.needs_grad = true;
  nodes_.push_back(std::move(node));
  const int id = static_cast<int>(nodes_.size()) - 1;
  params_[name] = id;
  return Var(this, id);
}

Var Tape::record(const char* op, std::vector<int> inputs, std::function<void(Node&)> forward,
                 std::function<void(Node&)> backward) {
  Node node;
  node.op = op;
  for (int id : inputs) {
    require(id >= 0 && id < static_cast<int>(nodes_.size()), "Tape::record: dangling input");
    node.needs_grad = node.needs_grad || nodes_[id].needs_grad;
  }
  node.inputs = std::move(inputs);
  node.forward = std::move(forward);
  node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  Node& added = nodes_.back();
  added.forward(added);
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::replay() {
  for (Node& node : nodes_) {
    if (node.forward) node.forward(node);
  }
}

void Tape::set_value(const Var& leaf, Array value) {
  Node& node = nodes_.at(leaf.id());
  require(!node.forward, "Tape::set_value: node is not a leaf");
  require(node.value.same_shape(value), "Tape::set_value: shape mismatch");
  node.value = std::move(value);
}

std::map<std::string, Array> Tape::backward(const Var& loss) {
  require(loss.tape() == this, "Tape::backward: loss belongs to another tape");
  require(loss.value().size() == 1, "Tape::backward: loss must be a scalar");
  for (Node& node : nodes_) {
    Array g = node.value;
    std::fill(g.data.begin(), g.data.end(), Real(0));
    node.grad = std::move(g);
  }
  nodes_[loss.id()].grad.data[0] = 1;
  for (int id = loss.id(); id >= 0; --id) {
    Node& node = nodes_[id];
    if (node.needs_grad && node.backward) node.backward(node);
  }
  std::map<std::string, Array> grads;
  for (const auto& [name, id] : params_) grads[name] = nodes_[id].grad;
  return grads;
}

namespace {

Tape* tape_of(std::initializer_list<const Var*> vars) {
  Tape* tape = nullptr;
  for (const Var* v : vars) {
    if (!v->valid()) continue;
    require(tape == nullptr || v->tape() == tape, "autodiff: inputs from different tapes");
    tape = v->tape();
  }
  require(tape != nullptr, "autodiff: no valid input");
  return tape;
}

Node& in(Tape* t, const Node& node, int k) { return t->node(node.inputs[k]); }

void require_same_shape(const Array& a, const Array& b, const char* op) {
  require(a.same_shape(b), std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                               b.shape_string());
}

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, PaddingMode padding) {
  Tape* t = tape_of({&x, &weight, &bias});
  const Array& wv = weight.value();
  const Array& xv = x.value();
  require(wv.h == wv.w && wv.h % 2 == 1, "ad::conv2d: weight window must be odd and square");
  require(xv.c == wv.c, "ad::conv2d: input has " + std::to_string(xv.c) +
                            " channels, weight expects " + std::to_string(wv.c));
  require(stride >= 1, "ad::conv2d: stride must be >= 1");
  const bool has_bias = bias.valid();
  if (has_bias) require(bias.value().size() == static_cast<std::size_t>(wv.n), "ad::conv2d: bias size");
  const kernels::ConvGeometry g{wv.c, wv.n, xv.h, xv.w, (wv.h - 1) / 2, stride, padding};
  std::vector<int> inputs{x.id(), weight.id()};
  if (has_bias) inputs.push_back(bias.id());

  auto forward = [t, g, has_bias](Node& self) {
    const Array& xin = in(t, self, 0).value;
    const Array& w = in(t, self, 1).value;
    std::span<const Real> b;
    if (has_bias) b = in(t, self, 2).value.data;
    Array out(xin.n, g.out_channels, g.out_height(), g.out_width());
    for (int i = 0; i < xin.n; ++i) kernels::conv2d_forward(g, xin.sample(i), w.data, b, out.sample(i));
    self.value = std::move(out);
  };
  auto backward = [t, g, has_bias](Node& self) {
    Node& xn = in(t, self, 0);
    Node& wn = in(t, self, 1);
    std::span<Real> gb;
    if (has_bias && in(t, self, 2).needs_grad) gb = in(t, self, 2).grad.data;
    for (int i = 0; i < self.value.n; ++i) {
      if (xn.needs_grad) kernels::conv2d_backward_input(g, self.grad.sample(i), wn.value.data, xn.grad.sample(i));
      if (wn.needs_grad || !gb.empty()) {
        std::vector<Real> scratch;
        std::span<Real> gw = wn.grad.data;
        if (!wn.needs_grad) {
          scratch.assign(wn.value.size(), 0);
          gw = scratch;
        }
        kernels::conv2d_backward_params(g, xn.value.sample(i), self.grad.sample(i), gw, gb);
      }
    }
  };
  return t->record("conv2d", std::move(inputs), forward, backward);
}

Var conv2d_channelwise(const Var& x, const Var& weight, const Var& bias, int stride,
                       PaddingMode padding) {
  Tape* t = tape_of({&x, &weight, &bias});
  const Array& wv = weight.value();
  const Array& xv = x.value();
  require(wv.n == 1 && wv.c == 1 && wv.h == wv.w && wv.h % 2 == 1,
          "ad::conv2d_channelwise: weight must be one odd square plane");
  require(stride >= 1, "ad::conv2d_channelwise: stride must be >= 1");
  const bool has_bias = bias.valid();
  if (has_bias) require(bias.value().size() == 1, "ad::conv2d_channelwise: bias must be a scalar");
  const kernels::ConvGeometry g{1, 1, xv.h, xv.w, (wv.h - 1) / 2, stride, padding};
  std::vector<int> inputs{x.id(), weight.id()};
  if (has_bias) inputs.push_back(bias.id());
  const std::size_t in_plane = static_cast<std::size_t>(xv.h) * xv.w;
  const std::size_t out_plane = static_cast<std::size_t>(g.out_height()) * g.out_width();

  auto forward = [t, g, has_bias, in_plane, out_plane](Node& self) {
    const Array& xin = in(t, self, 0).value;
    const Array& w = in(t, self, 1).value;
    std::span<const Real> b;
    if (has_bias) b = in(t, self, 2).value.data;
    Array out(xin.n, xin.c, g.out_height(), g.out_width());
    std::span<const Real> src = xin.data;
    std::span<Real> dst = out.data;
    for (int p = 0; p < xin.n * xin.c; ++p) {
      kernels::conv2d_forward(g, src.subspan(p * in_plane, in_plane), w.data, b,
                              dst.subspan(p * out_plane, out_plane));
    }
    self.value = std::move(out);
  };
  auto backward = [t, g, has_bias, in_plane, out_plane](Node& self) {
    Node& xn = in(t, self, 0);
    Node& wn = in(t, self, 1);
    std::vector<Real> gw(wn.value.size(), 0);
    std::vector<Real> gb(has_bias ? 1 : 0, 0);
    std::span<const Real> go = self.grad.data;
    for (int p = 0; p < xn.value.n * xn.value.c; ++p) {
      auto gop = go.subspan(p * out_plane, out_plane);
      if (xn.needs_grad) {
        kernels::conv2d_backward_input(g, gop, wn.value.data,
                                       std::span<Real>(xn.grad.data).subspan(p * in_plane, in_plane));
      }
      kernels::conv2d_backward_params(
          g, std::span<const Real>(xn.value.data).subspan(p * in_plane, in_plane), gop, gw, gb);
    }
    if (wn.needs_grad) {
      for (std::size_t k = 0; k < gw.size(); ++k) wn.grad.data[k] += gw[k];
    }
    if (has_bias && in(t, self, 2).needs_grad) in(t, self, 2).grad.data[0] += gb[0];
  };
  return t->record("conv2d_channelwise", std::move(inputs), forward, backward);
}

Var conv2d_transpose(const Var& x, const Var& weight, int stride, int out_h, int out_w) {
  Tape* t = tape_of({&x, &weight});
  const Array& wv = weight.value();
  const Array& xv = x.value();
  require(wv.h == wv.w && wv.h % 2 == 1, "ad::conv2d_transpose: weight window must be odd and square");
  require(xv.c == wv.n, "ad::conv2d_transpose: input channels must equal weight out channels");
  const kernels::ConvGeometry g{wv.c, wv.n, out_h, out_w, (wv.h - 1) / 2, stride, PaddingMode::Zero};
  require(g.out_height() == xv.h && g.out_width() == xv.w,
          "ad::conv2d_transpose: target size inconsistent with input and stride");

  auto forward = [t, g](Node& self) {
    const Array& xin = in(t, self, 0).value;
    const Array& w = in(t, self, 1).value;
    Array out(xin.n, g.in_channels, g.height, g.width);
    for (int i = 0; i < xin.n; ++i) kernels::conv2d_backward_input(g, xin.sample(i), w.data, out.sample(i));
    self.value = std::move(out);
  };
  auto backward = [t, g](Node& self) {
    Node& xn = in(t, self, 0);
    Node& wn = in(t, self, 1);
    std::vector<Real> scratch;
    for (int i = 0; i < self.value.n; ++i) {
      if (xn.needs_grad) {
        std::vector<Real> tmp(xn.value.sample_size());
        kernels::conv2d_forward(g, self.grad.sample(i), wn.value.data, {}, tmp);
        auto dst = xn.grad.sample(i);
        for (std::size_t k = 0; k < tmp.size(); ++k) dst[k] += tmp[k];
      }
      if (wn.needs_grad) {
        kernels::conv2d_backward_params(g, self.grad.sample(i), xn.value.sample(i), wn.grad.data, {});
      }
    }
  };
  return t->record("conv2d_transpose", {x.id(), weight.id()}, forward, backward);
}

Var relu(const Var& x) {
  Tape* t = x.tape();
  auto forward = [t](Node& self) {
    Array out = in(t, self, 0).value;
    for (Real& v : out.data) v = v > Real(0) ? v : Real(0);
    self.value = std::move(out);
  };
  auto backward = [t](Node& self) {
    Node& xn = in(t, self, 0);
    if (!xn.needs_grad) return;
    for (std::size_t k = 0; k < self.grad.size(); ++k) {
      if (xn.value.data[k] > Real(0)) xn.grad.data[k] += self.grad.data[k];
    }
  };
  return t->record("relu", {x.id()}, forward, backward);
}

Var add(const Var& a, const Var& b) {
  Tape* t = tape_of({&a, &b});
  require_same_shape(a.value(), b.value(), "ad::add");
  auto forward = [t](Node& self) {
    Array out = in(t, self, 0).value;
    const Array& bv = in(t, self, 1).value;
    for (std::size_t k = 0; k < out.size(); ++k) out.data[k] += bv.data[k];
    self.value = std::move(out);
  };
  auto backward = [t](Node& self) {
    for (int s = 0; s < 2; ++s) {
      Node& n = in(t, self, s);
      if (!n.needs_grad) continue;
      for (std::size_t k = 0; k < self.grad.size(); ++k) n.grad.data[k] += self.grad.data[k];
    }
  };
  return t->record("add", {a.id(), b.id()}, forward, backward);
}

Var sub(const Var& a, const Var& b) {
  Tape* t = tape_of({&a, &b});
  require_same_shape(a.value(), b.value(), "ad::sub");
  auto forward = [t](Node& self) {
    Array out = in(t, self, 0).value;
    const Array& bv = in(t, self, 1).value;
    for (std::size_t k = 0; k < out.size(); ++k) out.data[k] -= bv.data[k];
    self.value = std::move(out);
  };
  auto backward = [t](Node& self) {
    Node& an = in(t, self, 0);
    Node& bn = in(t, self, 1);
    for (std::size_t k = 0; k < self.grad.size(); ++k) {
      if (an.needs_grad) an.grad.data[k] += self.grad.data[k];
      if (bn.needs_grad) bn.grad.data[k] -= self.grad.data[k];
    }
  };
  return t->record("sub", {a.id(), b.id()}, forward, backward);
}

Var scale(const Var& x, Real factor) {
  Tape* t = x.tape();
  auto forward = [t, factor](Node& self) {
    Array out = in(t, self, 0).value;
    for (Real& v : out.data) v *= factor;
    self.value = std::move(out);
  };
  auto backward = [t, factor](Node& self) {
    Node& xn = in(t, self, 0);
    if (!xn.needs_grad) return;
    for (std::size_t k = 0; k < self.grad.size(); ++k) xn.grad.data[k] += factor * self.grad.data[k];
  };
  return t->record("scale", {x.id()}, forward, backward);
}

Var scalar_mul(const Var& s, const Var& x) {
  Tape* t = tape_of({&s, &x});
  require(s.value().size() == 1, "ad::scalar_mul: scale must have one element");
  auto forward = [t](Node& self) {
    const Real sv = in(t, self, 0).value.data[0];
    Array out = in(t, self, 1).value;
    for (Real& v : out.data) v *= sv;
    self.value = std::move(out);
  };
  auto backward = [t](Node& self) {
    Node& sn = in(t, self, 0);
    Node& xn = in(t, self, 1);
    const Real sv = sn.value.data[0];
    Real acc = 0;
    for (std::size_t k = 0; k < self.grad.size(); ++k) {
      acc += self.grad.data[k] * xn.value.data[k];
      if (xn.needs_grad) xn.grad.data[k] += sv * self.grad.data[k];
    }
    if (sn.needs_grad) sn.grad.data[0] += acc;
  };
  return t->record("scalar_mul", {s.id(), x.id()}, forward, backward);
}

Var weighted_sum(const Var& weights, const std::vector<Var>& terms) {
  require(!terms.empty(), "ad::weighted_sum: no terms");
  Tape* t = weights.tape();
  require(weights.value().size() == terms.size(), "ad::weighted_sum: one weight per term");
  std::vector<int> inputs{weights.id()};
  for (const Var& v : terms) {
    require(v.tape() == t, "ad::weighted_sum: inputs from different tapes");
    require_same_shape(v.value(), terms.front().value(), "ad::weighted_sum");
    inputs.push_back(v.id());
  }
  const int count = static_cast<int>(terms.size());
  auto forward = [t, count](Node& self) {
    // Exact-zero weights are skipped, so a one-hot weight vector returns the
    // selected term bitwise.
    const Array& w = in(t, self, 0).value;
    Array out(in(t, self, 1).value.n, in(t, self, 1).value.c, in(t, self, 1).value.h,
              in(t, self, 1).value.w);
    bool first = true;
    for (int j = 0; j < count; ++j) {
      if (w.data[j] == 0) continue;
      const Array& term = in(t, self, j + 1).value;
      if (first && w.data[j] == 1) {
        out.data = term.data;
      } else if (first) {
        for (std::size_t k = 0; k < out.size(); ++k) out.data[k] = w.data[j] * term.data[k];
      } else {
        for (std::size_t k = 0; k < out.size(); ++k) out.data[k] += w.data[j] * term.data[k];
      }
      first = false;
    }
    self.value = std::move(out);
  };
  auto backward = [t, count](Node& self) {
    Node& wn = in(t, self, 0);
    for (int j = 0; j < count; ++j) {
      Node& term = in(t, self, j + 1);
      const Real wj = wn.value.data[j];
      Real acc = 0;
      for (std::size_t k = 0; k < self.grad.size(); ++k) {
        acc += self.grad.data[k] * term.value.data[k];
        if (term.needs_grad) term.grad.data[k] += wj * self.grad.data[k];
      }
      if (wn.needs_grad) wn.grad.data[j] += acc;
    }
  };
  return t->record("weighted_sum", std::move(inputs), forward, backward);
}

Var weighted_pair(const Var& omega, const Var& a, const Var& b) {
  Tape* t = tape_of({&omega, &a, &b});
  require(omega.value().size() == 1, "ad::weighted_pair: omega must have one element");
  require_same_shape(a.value(), b.value(), "ad::weighted_pair");
  auto forward = [t](Node& self) {
    const Real w = in(t, self, 0).value.data[0];
    Array out = in(t, self, 1).value;
    const Array& bv = in(t, self, 2).value;
    if (w == 1) {
      self.value = std::move(out);
      return;
    }
    for (std::size_t k = 0; k < out.size(); ++k) out.data[k] = w * out.data[k] + (1 - w) * bv.data[k];
    self.value = std::move(out);
  };
  auto backward = [t](Node& self) {
    Node& wn = in(t, self, 0);
    Node& an = in(t, self, 1);
    Node& bn = in(t, self, 2);
    const Real w = wn.value.data[0];
    Real acc = 0;
    for (std::size_t k = 0; k < self.grad.size(); ++k) {
      const Real g = self.grad.data[k];
      acc += g * (an.value.data[k] - bn.value.data[k]);
      if (an.needs_grad) an.grad.data[k] += w * g;
      if (bn.needs_grad) bn.grad.data[k] += (1 - w) * g;
    }
    if (wn.needs_grad) wn.grad.data[0] += acc;
  };
  return t->record("weighted_pair", {omega.id(), a.id(), b.id()}, forward, backward);
}

Var softmax_vector(const Var& logits) {
  Tape* t = logits.tape();
  auto forward = [t](Node& self) {
    const Array& z = in(t, self, 0).value;
    Array out = z;
    const std::vector<Real> p = softmax(z.data);
    std::copy(p.begin(), p.end(), out.data.begin());
    self.value = std::move(out);
  };
  auto backward = [t](Node& self) {
    Node& zn = in(t, self, 0);
    if (!zn.needs_grad) return;
    Real dot = 0;
    for (std::size_t k = 0; k < self.grad.size(); ++k) dot += self.grad.data[k] * self.value.data[k];
    for (std::size_t k = 0; k < self.grad.size(); ++k) {
      zn.grad.data[k] += self.value.data[k] * (self.grad.data[k] - dot);
    }
  };
  return t->record("softmax_vector", {logits.id()}, forward, backward);
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, NormMode mode,
               std::span<const Real> running_mean, std::span<const Real> running_var, Real eps,
               BatchMoments* moments) {
  Tape* t = tape_of({&x, &gamma, &beta});
  const int channels = x.value().c;
  require(gamma.value().size() == static_cast<std::size_t>(channels) &&
              beta.value().size() == static_cast<std::size_t>(channels),
          "ad::batch_norm: gamma/beta need one entry per channel");
  std::vector<Real> rm;
  std::vector<Real> rv;
  if (mode == NormMode::Inference) {
    require(running_mean.size() == static_cast<std::size_t>(channels) &&
                running_var.size() == static_cast<std::size_t>(channels),
            "ad::batch_norm: running statistics need one entry per channel");
    rm.assign(running_mean.begin(), running_mean.end());
    rv.assign(running_var.begin(), running_var.end());
  }
  struct Saved {
    std::vector<Real> inv_std;
    Array xhat;
  };
  auto saved = std::make_shared<Saved>();

  auto forward = [t, mode, rm, rv, eps, moments, saved](Node& self) {
    const Array& xv = in(t, self, 0).value;
    const Array& g = in(t, self, 1).value;
    const Array& b = in(t, self, 2).value;
    const std::size_t plane = static_cast<std::size_t>(xv.h) * xv.w;
    const Real count = static_cast<Real>(plane * xv.n);
    saved->inv_std.assign(xv.c, 0);
    saved->xhat = xv;
    Array out = xv;
    if (moments) {
      moments->mean.assign(xv.c, 0);
      moments->var.assign(xv.c, 0);
    }
    for (int c = 0; c < xv.c; ++c) {
      Real mean = 0;
      Real var = 0;
      if (mode == NormMode::Training) {
        for (int i = 0; i < xv.n; ++i) {
          const Real* p = xv.data.data() + (static_cast<std::size_t>(i) * xv.c + c) * plane;
          for (std::size_t k = 0; k < plane; ++k) mean += p[k];
        }
        mean /= count;
        for (int i = 0; i < xv.n; ++i) {
          const Real* p = xv.data.data() + (static_cast<std::size_t>(i) * xv.c + c) * plane;
          for (std::size_t k = 0; k < plane; ++k) var += (p[k] - mean) * (p[k] - mean);
        }
        var /= count;
        if (moments) {
          moments->mean[c] = mean;
          moments->var[c] = var;
        }
      } else {
        mean = rm[c];
        var = rv[c];
      }
      const Real inv = Real(1) / std::sqrt(var + eps);
      saved->inv_std[c] = inv;
      for (int i = 0; i < xv.n; ++i) {
        const std::size_t base = (static_cast<std::size_t>(i) * xv.c + c) * plane;
        for (std::size_t k = 0; k < plane; ++k) {
          const Real xh = (xv.data[base + k] - mean) * inv;
          saved->xhat.data[base + k] = xh;
          out.data[base + k] = g.data[c] * xh + b.data[c];
        }
      }
    }
    self.value = std::move(out);
  };
  auto backward = [t, mode, saved](Node& self) {
    Node& xn = in(t, self, 0);
    Node& gn = in(t, self, 1);
    Node& bn = in(t, self, 2);
    const Array& xv = xn.value;
    const std::size_t plane = static_cast<std::size_t>(xv.h) * xv.w;
    const Real count = static_cast<Real>(plane * xv.n);
    for (int c = 0; c < xv.c; ++c) {
      Real sum_g = 0;
      Real sum_gx = 0;
      for (int i = 0; i < xv.n; ++i) {
        const std::size_t base = (static_cast<std::size_t>(i) * xv.c + c) * plane;
        for (std::size_t k = 0; k < plane; ++k) {
          sum_g += self.grad.data[base + k];
          sum_gx += self.grad.data[base + k] * saved->xhat.data[base + k];
        }
      }
      if (gn.needs_grad) gn.grad.data[c] += sum_gx;
      if (bn.needs_grad) bn.grad.data[c] += sum_g;
      if (!xn.needs_grad) continue;
      const Real scale_c = gn.value.data[c] * saved->inv_std[c];
      for (int i = 0; i < xv.n; ++i) {
        const std::size_t base = (static_cast<std::size_t>(i) * xv.c + c) * plane;
        for (std::size_t k = 0; k < plane; ++k) {
          const Real g = self.grad.data[base + k];
          if (mode == NormMode::Training) {
            xn.grad.data[base + k] +=
                scale_c * (g - sum_g / count - saved->xhat.data[base + k] * sum_gx / count);
          } else {
            xn.grad.data[base + k] += scale_c * g;
          }
        }
      }
    }
  };
  return t->record("batch_norm", {x.id(), gamma.id(), beta.id()}, forward, backward);
}

Var max_pool(const Var& x, int k, int stride) {
  Tape* t = x.tape();
  require(k >= 0 && stride >= 1, "ad::max_pool: invalid window or stride");
  auto where = std::make_shared<std::vector<int>>();
  auto forward = [t, k, stride, where](Node& self) {
    const Array& xv = in(t, self, 0).value;
    Array out(xv.n, xv.c, strided_extent(xv.h, stride), strided_extent(xv.w, stride));
    where->assign(out.size(), -1);
    const std::size_t per = out.sample_size();
    for (int i = 0; i < xv.n; ++i) {
      kernels::max_pool_forward(xv.c, xv.h, xv.w, k, stride, xv.sample(i), out.sample(i),
                                std::span<int>(*where).subspan(i * per, per));
    }
    self.value = std::move(out);
  };
  auto backward = [t, where](Node& self) {
    Node& xn = in(t, self, 0);
    if (!xn.needs_grad) return;
    const std::size_t per_out = self.value.sample_size();
    const std::size_t per_in = xn.value.sample_size();
    for (std::size_t o = 0; o < self.grad.size(); ++o) {
      const int src = (*where)[o];
      if (src >= 0) xn.grad.data[(o / per_out) * per_in + src] += self.grad.data[o];
    }
  };
  return t->record("max_pool", {x.id()}, forward, backward);
}

Var global_avg_pool(const Var& x) {
  Tape* t = x.tape();
  auto forward = [t](Node& self) {
    const Array& xv = in(t, self, 0).value;
    const std::size_t plane = static_cast<std::size_t>(xv.h) * xv.w;
    Array out(xv.n, xv.c, 1, 1);
    for (std::size_t p = 0; p < out.size(); ++p) {
      Real acc = 0;
      for (std::size_t k = 0; k < plane; ++k) acc += xv.data[p * plane + k];
      out.data[p] = acc / static_cast<Real>(plane);
    }
    self.value = std::move(out);
  };
  auto backward = [t](Node& self) {
    Node& xn = in(t, self, 0);
    if (!xn.needs_grad) return;
    const std::size_t plane = static_cast<std::size_t>(xn.value.h) * xn.value.w;
    for (std::size_t p = 0; p < self.grad.size(); ++p) {
      const Real g = self.grad.data[p] / static_cast<Real>(plane);
      for (std::size_t k = 0; k < plane; ++k) xn.grad.data[p * plane + k] += g;
    }
  };
  return t->record("global_avg_pool", {x.id()}, forward, backward);
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  Tape* t = tape_of({&x, &weight, &bias});
  const Array& wv = weight.value();
  const int features = static_cast<int>(x.value().sample_size());
  require(wv.n == 1 && wv.c == 1 && wv.w == features,
          "ad::linear: weight must be (1,1,out," + std::to_string(features) + ")");
  const int outputs = wv.h;
  const bool has_bias = bias.valid();
  if (has_bias) require(bias.value().size() == static_cast<std::size_t>(outputs), "ad::linear: bias size");
  std::vector<int> inputs{x.id(), weight.id()};
  if (has_bias) inputs.push_back(bias.id());
  auto forward = [t, features, outputs, has_bias](Node& self) {
    const Array& xv = in(t, self, 0).value;
    const Array& w = in(t, self, 1).value;
    Array out(xv.n, outputs, 1, 1);
    for (int i = 0; i < xv.n; ++i) {
      auto xs = xv.sample(i);
      for (int o = 0; o < outputs; ++o) {
        Real acc = has_bias ? in(t, self, 2).value.data[o] : Real(0);
        const Real* row = w.data.data() + static_cast<std::size_t>(o) * features;
        for (int f = 0; f < features; ++f) acc += row[f] * xs[f];
        out.data[static_cast<std::size_t>(i) * outputs + o] = acc;
      }
    }
    self.value = std::move(out);
  };
  auto backward = [t, features, outputs, has_bias](Node& self) {
    Node& xn = in(t, self, 0);
    Node& wn = in(t, self, 1);
    for (int i = 0; i < xn.value.n; ++i) {
      auto xs = xn.value.sample(i);
      auto gx = xn.grad.sample(i);
      for (int o = 0; o < outputs; ++o) {
        const Real g = self.grad.data[static_cast<std::size_t>(i) * outputs + o];
        const std::size_t row = static_cast<std::size_t>(o) * features;
        for (int f = 0; f < features; ++f) {
          if (wn.needs_grad) wn.grad.data[row + f] += g * xs[f];
          if (xn.needs_grad) gx[f] += g * wn.value.data[row + f];
        }
        if (has_bias && in(t, self, 2).needs_grad) in(t, self, 2).grad.data[o] += g;
      }
    }
  };
  return t->record("linear", std::move(inputs), forward, backward);
}

Var softmax_cross_entropy(const Var& logits, const std::vector<int>& labels) {
  Tape* t = logits.tape();
  const Array& z = logits.value();
  const int classes = static_cast<int>(z.sample_size());
  require(labels.size() == static_cast<std::size_t>(z.n), "ad::softmax_cross_entropy: one label per sample");
  for (int y : labels) require(y >= 0 && y < classes, "ad::softmax_cross_entropy: label out of range");
  auto probs = std::make_shared<std::vector<Real>>();
  auto forward = [t, labels, classes, probs](Node& self) {
    const Array& zv = in(t, self, 0).value;
    probs->assign(zv.size(), 0);
    Real total = 0;
    for (int i = 0; i < zv.n; ++i) {
      auto zs = zv.sample(i);
      const Real shift = *std::max_element(zs.begin(), zs.end());
      Real sum = 0;
      for (int k = 0; k < classes; ++k) sum += std::exp(zs[k] - shift);
      for (int k = 0; k < classes; ++k) {
        (*probs)[static_cast<std::size_t>(i) * classes + k] = std::exp(zs[k] - shift) / sum;
      }
      total += std::log(sum) + shift - zs[labels[i]];
    }
    self.value = Array::scalar(total / static_cast<Real>(zv.n));
  };
  auto backward = [t, labels, classes, probs](Node& self) {
    Node& zn = in(t, self, 0);
    if (!zn.needs_grad) return;
    const Real g = self.grad.data[0] / static_cast<Real>(zn.value.n);
    for (int i = 0; i < zn.value.n; ++i) {
      for (int k = 0; k < classes; ++k) {
        const std::size_t idx = static_cast<std::size_t>(i) * classes + k;
        zn.grad.data[idx] += g * ((*probs)[idx] - (k == labels[i] ? Real(1) : Real(0)));
      }
    }
  };
  return t->record("softmax_cross_entropy", {logits.id()}, forward, backward);
}

Var mean_square(const Var& x) {
  Tape* t = x.tape();
  auto forward = [t](Node& self) {
    const Array& xv = in(t, self, 0).value;
    Real acc = 0;
    for (Real v : xv.data) acc += v * v;
    self.value = Array::scalar(acc / static_cast<Real>(xv.size()));
  };
  auto backward = [t](Node& self) {
    Node& xn = in(t, self, 0);
    if (!xn.needs_grad) return;
    const Real g = 2 * self.grad.data[0] / static_cast<Real>(xn.value.size());
    for (std::size_t k = 0; k < xn.value.size(); ++k) xn.grad.data[k] += g * xn.value.data[k];
  };
  return t->record("mean_square", {x.id()}, forward, backward);
}

Var dot_const(const Var& x, const Array& coefficients) {
  Tape* t = x.tape();
  require_same_shape(x.value(), coefficients, "ad::dot_const");
  auto forward = [t, coefficients](Node& self) {
    const Array& xv = in(t, self, 0).value;
    Real acc = 0;
    for (std::size_t k = 0; k < xv.size(); ++k) acc += coefficients.data[k] * xv.data[k];
    self.value = Array::scalar(acc);
  };
  auto backward = [t, coefficients](Node& self) {
    Node& xn = in(t, self, 0);
    if (!xn.needs_grad) return;
    for (std::size_t k = 0; k < xn.value.size(); ++k) {
      xn.grad.data[k] += self.grad.data[0] * coefficients.data[k];
    }
  };
  return t->record("dot_const", {x.id()}, forward, backward);
}

Real Tape::relu_margin() const {
  Real margin = std::numeric_limits<Real>::infinity();
  for (const Node& node : nodes_) {
    if (std::string_view(node.op) != "relu") continue;
    for (Real v : nodes_[node.inputs[0]].value.data) {
      if (v != 0) margin = std::min(margin, std::abs(v));
    }
  }
  return margin;
}

GradCheckReport gradient_check(Tape& tape, const Var& loss, Real step) {
  GradCheckReport report;
  report.relu_margin = tape.relu_margin();
  const std::map<std::string, Array> grads = tape.backward(loss);
  for (const auto& [name, id] : tape.parameters()) {
    Array& value = tape.node(id).value;
    const Array& g = grads.at(name);
    Real diff2 = 0;
    Real g2 = 0;
    Real fd2 = 0;
    for (std::size_t k = 0; k < value.size(); ++k) {
      const Real saved = value.data[k];
      value.data[k] = saved + step;
      tape.replay();
      const Real plus = loss.value().data[0];
      value.data[k] = saved - step;
      tape.replay();
      const Real minus = loss.value().data[0];
      value.data[k] = saved;
      const Real fd = (plus - minus) / (2 * step);
      diff2 += (g.data[k] - fd) * (g.data[k] - fd);
      g2 += g.data[k] * g.data[k];
      fd2 += fd * fd;
    }
    const Real denom = std::max({std::sqrt(g2), std::sqrt(fd2), Real(1e-12)});
    const Real err = std::sqrt(diff2) / denom;
    report.relative_error[name] = err;
    if (err >= report.worst) {
      report.worst = err;
      report.worst_parameter = name;
    }
  }
  tape.replay();
  return report;
}

Var operator+(const Var& a, const Var& b) { return add(a, b); }
Var operator-(const Var& a, const Var& b) { return sub(a, b); }

}  // namespace mgnet::ad
