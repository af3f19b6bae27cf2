#pragma once

// Tape-based reverse-mode differentiation over dense tensors.
//
// Every op appends a node holding its value and, when any input requires a
// gradient, a closure that pushes the node's gradient into its inputs.
// backward() walks the tape from the root towards the leaves. Parameters are
// leaves that reference caller-owned tensors (no copy) and are memoized by
// name, so a parameter used at several time steps accumulates one gradient.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "afh/tensor.hpp"

namespace afh::ad {

template <typename T>
class Tape;

template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  const Tensor<T>& value() const { return tape->value(*this); }
  const std::vector<int>& shape() const { return value().shape; }
  std::size_t numel() const { return value().numel(); }
};

template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value) { return push(std::move(value), nullptr, false, {}); }

  /// Leaf bound to an external tensor that must outlive the tape.
  Var<T> param(const std::string& name, const Tensor<T>& ref) {
    if (auto it = param_ids_.find(name); it != param_ids_.end()) return {this, it->second};
    Node node;
    node.ref = &ref;
    node.needs_grad = track_params_;
    node.name = name;
    nodes_.push_back(std::move(node));
    const int id = static_cast<int>(nodes_.size()) - 1;
    param_ids_.emplace(name, id);
    return {this, id};
  }

  /// Appends an op result. `fn` is kept only when some input needs a gradient.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
    bool needs = false;
    for (const Var<T>& v : inputs) needs = needs || nodes_[v.id].needs_grad;
    return push(std::move(value), nullptr, needs, needs ? std::move(fn) : BackwardFn{});
  }

  bool needs_grad(Var<T> v) const { return nodes_[v.id].needs_grad; }
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }

  const Tensor<T>& value(Var<T> v) const { return value(v.id); }
  const Tensor<T>& value(int id) const {
    const Node& n = nodes_[id];
    return n.ref ? *n.ref : n.own;
  }

  /// Gradient buffer of a node, zero-allocated on first use.
  std::span<T> grad(int id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(value(id).numel(), T(0));
    return n.grad;
  }
  bool has_grad(int id) const { return !nodes_[id].grad.empty(); }

  /// When false, parameters are recorded as plain constants (inference mode).
  void set_track_params(bool on) { track_params_ = on; }

  void backward(Var<T> root) {
    if (value(root).numel() != 1) {
      throw ShapeError("backward needs a scalar loss, got shape " +
                       shape_string(value(root).shape));
    }
    if (!nodes_[root.id].needs_grad) return;
    grad(root.id)[0] += T(1);
    for (int id = root.id; id >= 0; --id) {
      Node& n = nodes_[id];
      if (n.backward && !n.grad.empty()) n.backward(*this, id);
    }
  }

  /// Gradients of every bound parameter, by name. Unreached parameters get zeros.
  NamedTensors<T> param_grads() const {
    NamedTensors<T> out;
    for (const auto& [name, id] : param_ids_) {
      Tensor<T> g(value(id).shape);
      if (!nodes_[id].grad.empty()) g.data = nodes_[id].grad;
      out.emplace(name, std::move(g));
    }
    return out;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> own;
    const Tensor<T>* ref = nullptr;
    std::vector<T> grad;
    BackwardFn backward;
    bool needs_grad = false;
    std::string name;
  };

  Var<T> push(Tensor<T> value, const Tensor<T>* ref, bool needs, BackwardFn fn) {
    Node node;
    node.own = std::move(value);
    node.ref = ref;
    node.needs_grad = needs;
    node.backward = std::move(fn);
    nodes_.push_back(std::move(node));
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
  std::unordered_map<std::string, int> param_ids_;
  bool track_params_ = true;
};

namespace detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
Eigen::Map<const RowMatrix<T>> cmat(const T* p, int rows, int cols) {
  return Eigen::Map<const RowMatrix<T>>(p, rows, cols);
}
template <typename T>
Eigen::Map<RowMatrix<T>> mat(T* p, int rows, int cols) {
  return Eigen::Map<RowMatrix<T>>(p, rows, cols);
}
template <typename T>
Eigen::Map<const Vector<T>> cvec(const T* p, int n) {
  return Eigen::Map<const Vector<T>>(p, n);
}
template <typename T>
Eigen::Map<Vector<T>> vec(T* p, int n) {
  return Eigen::Map<Vector<T>>(p, n);
}

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

// Elementwise unary op with derivative expressed through input x and output y.
template <typename T, typename F, typename D>
Var<T> unary(Var<T> a, F f, D dfdx) {
  Tape<T>& tape = *a.tape;
  const Tensor<T>& x = a.value();
  Tensor<T> y(x.shape);
  for (std::size_t i = 0; i < x.numel(); ++i) y.data[i] = f(x.data[i]);
  return tape.record(std::move(y), {a}, [a, dfdx](Tape<T>& t, int self) {
    const auto& xv = t.value(a).data;
    const auto& yv = t.value(self).data;
    auto gy = t.grad(self);
    auto gx = t.grad(a.id);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * dfdx(xv[i], yv[i]);
  });
}

}  // namespace detail

template <typename T>
Var<T> constant(Tape<T>& tape, Tensor<T> value) {
  return tape.constant(std::move(value));
}

/// y = W x (+ b), W: [out, in], x: any shape with `in` elements.
template <typename T>
Var<T> linear(Var<T> weight, Var<T> x, const Var<T>* bias = nullptr) {
  using namespace detail;
  Tape<T>& tape = *x.tape;
  const Tensor<T>& w = weight.value();
  require(w.shape.size() == 2, "linear weight must be 2-D");
  const int out = w.shape[0];
  const int in = w.shape[1];
  require(static_cast<int>(x.numel()) == in,
          "linear input has " + std::to_string(x.numel()) + " values, weight expects " +
              std::to_string(in));
  Tensor<T> y({out});
  vec(y.data.data(), out).noalias() = cmat(w.data.data(), out, in) * cvec(x.value().data.data(), in);
  if (bias) {
    require(static_cast<int>(bias->numel()) == out, "linear bias size mismatch");
    vec(y.data.data(), out) += cvec(bias->value().data.data(), out);
  }
  const Var<T> b = bias ? *bias : Var<T>{};
  auto fn = [weight, x, b, out, in](Tape<T>& t, int self) {
    auto gy = t.grad(self);
    auto gyv = cvec<T>(gy.data(), out);
    if (t.needs_grad(weight)) {
      mat(t.grad(weight.id).data(), out, in).noalias() +=
          gyv * cvec(t.value(x).data.data(), in).transpose();
    }
    if (t.needs_grad(x)) {
      vec(t.grad(x.id).data(), in).noalias() +=
          cmat(t.value(weight).data.data(), out, in).transpose() * gyv;
    }
    if (b.tape && t.needs_grad(b)) vec(t.grad(b.id).data(), out) += gyv;
  };
  if (bias) return tape.record(std::move(y), {weight, x, *bias}, std::move(fn));
  return tape.record(std::move(y), {weight, x}, std::move(fn));
}

template <typename T>
Var<T> linear(Var<T> weight, Var<T> bias, Var<T> x) {
  return linear(weight, x, &bias);
}

/// Same-size 2-D convolution (stride 1, zero padding k/2) of x: [C, H, W]
/// with weight [O, C, k, k] and bias [O], computed as an im2col GEMM.
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, Var<T> bias) {
  using namespace detail;
  Tape<T>& tape = *x.tape;
  const Tensor<T>& xin = x.value();
  const Tensor<T>& w = weight.value();
  require(xin.shape.size() == 3, "conv2d input must be [C,H,W]");
  require(w.shape.size() == 4 && w.shape[2] == w.shape[3], "conv2d weight must be [O,C,k,k]");
  const int channels = xin.shape[0], height = xin.shape[1], width = xin.shape[2];
  const int out_ch = w.shape[0], k = w.shape[2], pad = k / 2;
  require(w.shape[1] == channels, "conv2d channel mismatch: input " + std::to_string(channels) +
                                      ", weight " + std::to_string(w.shape[1]));
  require(static_cast<int>(bias.numel()) == out_ch, "conv2d bias size mismatch");
  const int pixels = height * width;
  const int rows = channels * k * k;

  std::vector<T> cols(static_cast<std::size_t>(rows) * pixels);
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* dst = cols.data() + static_cast<std::size_t>((c * k + ky) * k + kx) * pixels;
        const int x0 = std::min(width, std::max(0, pad - kx));
        const int x1 = std::max(x0, std::min(width, width + pad - kx));
        for (int yy = 0; yy < height; ++yy) {
          T* row = dst + yy * width;
          const int sy = yy + ky - pad;
          if (sy < 0 || sy >= height) {
            std::fill(row, row + width, T(0));
            continue;
          }
          const T* src = xin.data.data() + (static_cast<std::size_t>(c) * height + sy) * width;
          std::fill(row, row + x0, T(0));
          std::copy(src + x0 + kx - pad, src + x1 + kx - pad, row + x0);
          std::fill(row + x1, row + width, T(0));
        }
      }
    }
  }
  Tensor<T> y({out_ch, height, width});
  auto ym = mat(y.data.data(), out_ch, pixels);
  ym.noalias() = cmat(w.data.data(), out_ch, rows) * cmat(cols.data(), rows, pixels);
  ym.colwise() += cvec(bias.value().data.data(), out_ch);

  const bool keep_cols = tape.needs_grad(weight);
  return tape.record(
      std::move(y), {x, weight, bias},
      [x, weight, bias, channels, height, width, out_ch, k, pad, pixels, rows,
       cols = keep_cols ? std::move(cols) : std::vector<T>{}](Tape<T>& t, int self) {
        auto gy = cmat<T>(t.grad(self).data(), out_ch, pixels);
        if (t.needs_grad(bias)) {
          // Plain loop: Eigen's vectorized reduction order depends on buffer alignment.
          T* gb = t.grad(bias.id).data();
          const T* g = t.grad(self).data();
          for (int o = 0; o < out_ch; ++o) {
            T acc = 0;
            for (int i = 0; i < pixels; ++i) acc += g[static_cast<std::size_t>(o) * pixels + i];
            gb[o] += acc;
          }
        }
        if (t.needs_grad(weight)) {
          mat(t.grad(weight.id).data(), out_ch, rows).noalias() +=
              gy * cmat(cols.data(), rows, pixels).transpose();
        }
        if (t.needs_grad(x)) {
          RowMatrix<T> gcols =
              cmat(t.value(weight).data.data(), out_ch, rows).transpose() * gy;
          auto gx = t.grad(x.id);
          for (int c = 0; c < channels; ++c) {
            for (int ky = 0; ky < k; ++ky) {
              for (int kx = 0; kx < k; ++kx) {
                const T* src = gcols.data() + static_cast<std::size_t>((c * k + ky) * k + kx) * pixels;
                for (int yy = 0; yy < height; ++yy) {
                  const int sy = yy + ky - pad;
                  if (sy < 0 || sy >= height) continue;
                  T* dst = gx.data() + (static_cast<std::size_t>(c) * height + sy) * width;
                  const int x0 = std::max(0, pad - kx);
                  const int x1 = std::min(width, width + pad - kx);
                  for (int xx = x0; xx < x1; ++xx) dst[xx + kx - pad] += src[yy * width + xx];
                }
              }
            }
          }
        }
      });
}

template <typename T>
Var<T> relu(Var<T> a) {
  return detail::unary(a, [](T v) { return v < T(0) ? T(0) : v; },
                       [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
  return detail::unary(a, [](T v) { return T(1) / (T(1) + std::exp(-v)); },
                       [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> tanh(Var<T> a) {
  return detail::unary(a, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

/// Clamp to [0,1]; gradient passes where the input already lies in [0,1].
template <typename T>
Var<T> clamp01(Var<T> a) {
  return detail::unary(a, [](T v) { return std::clamp(v, T(0), T(1)); },
                       [](T v, T) { return (v >= T(0) && v <= T(1)) ? T(1) : T(0); });
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
  return detail::unary(a, [factor](T v) { return v * factor; },
                       [factor](T, T) { return factor; });
}

namespace detail {

template <typename T, typename F, typename Da, typename Db>
Var<T> binary(Var<T> a, Var<T> b, F f, Da da, Db db) {
  require(a.shape() == b.shape() || a.numel() == b.numel(),
          "elementwise shapes differ: " + shape_string(a.shape()) + " vs " +
              shape_string(b.shape()));
  Tape<T>& tape = *a.tape;
  const auto& av = a.value().data;
  const auto& bv = b.value().data;
  Tensor<T> y(a.shape());
  for (std::size_t i = 0; i < av.size(); ++i) y.data[i] = f(av[i], bv[i]);
  return tape.record(std::move(y), {a, b}, [a, b, da, db](Tape<T>& t, int self) {
    auto gy = t.grad(self);
    const auto& x = t.value(a).data;
    const auto& z = t.value(b).data;
    if (t.needs_grad(a)) {
      auto ga = t.grad(a.id);
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * da(x[i], z[i]);
    }
    if (t.needs_grad(b)) {
      auto gb = t.grad(b.id);
      for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * db(x[i], z[i]);
    }
  });
}

}  // namespace detail

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  return detail::binary(a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
                        [](T, T) { return T(1); });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  return detail::binary(a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
                        [](T, T) { return T(-1); });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  return detail::binary(a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; },
                        [](T x, T) { return x; });
}

/// Contiguous flat range [offset, offset + length).
template <typename T>
Var<T> slice(Var<T> a, int offset, int length) {
  detail::require(offset >= 0 && length >= 0 && offset + length <= static_cast<int>(a.numel()),
                  "slice out of range");
  const auto& av = a.value().data;
  Tensor<T> y({length});
  std::copy(av.begin() + offset, av.begin() + offset + length, y.data.begin());
  return a.tape->record(std::move(y), {a}, [a, offset](Tape<T>& t, int self) {
    auto gy = t.grad(self);
    auto ga = t.grad(a.id);
    for (std::size_t i = 0; i < gy.size(); ++i) ga[offset + i] += gy[i];
  });
}

/// Flat concatenation of two tensors. For channel-major [C,H,W] blocks with equal
/// H and W this is channel concatenation; pass `shape` to label the result.
template <typename T>
Var<T> concat(Var<T> a, Var<T> b, std::vector<int> shape = {}) {
  const auto& av = a.value().data;
  const auto& bv = b.value().data;
  const int na = static_cast<int>(av.size());
  if (shape.empty()) shape = {na + static_cast<int>(bv.size())};
  Tensor<T> y(std::move(shape));
  detail::require(y.numel() == av.size() + bv.size(), "concat shape mismatch");
  std::copy(av.begin(), av.end(), y.data.begin());
  std::copy(bv.begin(), bv.end(), y.data.begin() + na);
  return a.tape->record(std::move(y), {a, b}, [a, b, na](Tape<T>& t, int self) {
    auto gy = t.grad(self);
    if (t.needs_grad(a)) {
      auto ga = t.grad(a.id);
      for (int i = 0; i < na; ++i) ga[i] += gy[i];
    }
    if (t.needs_grad(b)) {
      auto gb = t.grad(b.id);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gy[na + i];
    }
  });
}

template <typename T>
Var<T> reshape(Var<T> a, std::vector<int> shape) {
  Tensor<T> y(std::move(shape), a.value().data);
  return a.tape->record(std::move(y), {a}, [a](Tape<T>& t, int self) {
    auto gy = t.grad(self);
    auto ga = t.grad(a.id);
    for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
  });
}

template <typename T>
Var<T> log_softmax(Var<T> a) {
  const auto& x = a.value().data;
  const T top = *std::max_element(x.begin(), x.end());
  T total = 0;
  for (T v : x) total += std::exp(v - top);
  const T lse = top + std::log(total);
  Tensor<T> y(a.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y.data[i] = x[i] - lse;
  return a.tape->record(std::move(y), {a}, [a](Tape<T>& t, int self) {
    auto gy = t.grad(self);
    const auto& ly = t.value(self).data;
    T sum_g = 0;
    for (T g : gy) sum_g += g;
    auto ga = t.grad(a.id);
    for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] - std::exp(ly[i]) * sum_g;
  });
}

/// Log-probabilities renormalized over entries with allowed[i] != 0.
template <typename T>
Var<T> log_renormalize(Var<T> a, const std::vector<unsigned char>& allowed) {
  detail::require(allowed.size() == a.numel(), "log_renormalize: mask size mismatch");
  const auto& x = a.value().data;
  T top = -std::numeric_limits<T>::infinity();
  for (std::size_t i = 0; i < x.size(); ++i)
    if (allowed[i]) top = std::max(top, x[i]);
  T total = 0;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (allowed[i]) total += std::exp(x[i] - top);
  const T lse = top + std::log(total);
  Tensor<T> y(a.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y.data[i] = x[i] - lse;
  return a.tape->record(std::move(y), {a}, [a, allowed](Tape<T>& t, int self) {
    auto gy = t.grad(self);
    const auto& ly = t.value(self).data;
    T sum_g = 0;
    for (T g : gy) sum_g += g;
    auto ga = t.grad(a.id);
    for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] - (allowed[i] ? std::exp(ly[i]) * sum_g : T(0));
  });
}

/// Single element as a scalar.
template <typename T>
Var<T> pick(Var<T> a, int index) {
  detail::require(index >= 0 && index < static_cast<int>(a.numel()), "pick index out of range");
  Tensor<T> y({1}, T(a.value().data[index]));
  return a.tape->record(std::move(y), {a}, [a, index](Tape<T>& t, int self) {
    t.grad(a.id)[index] += t.grad(self)[0];
  });
}

template <typename T>
Var<T> sum(Var<T> a) {
  T total = 0;
  for (T v : a.value().data) total += v;
  return a.tape->record(Tensor<T>({1}, total), {a}, [a](Tape<T>& t, int self) {
    const T g = t.grad(self)[0];
    for (T& v : t.grad(a.id)) v += g;
  });
}

/// Mean of (a - target)^2 over entries whose mask is nonzero; 0 when the mask is empty.
template <typename T>
Var<T> masked_mse(Var<T> a, const Tensor<T>& target, const std::vector<unsigned char>& mask) {
  detail::require(a.numel() == target.numel() && mask.size() == target.numel(),
                  "masked_mse size mismatch");
  const auto& x = a.value().data;
  std::size_t count = 0;
  T total = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!mask[i]) continue;
    const T d = x[i] - target.data[i];
    total += d * d;
    ++count;
  }
  const T inv = count ? T(1) / static_cast<T>(count) : T(0);
  return a.tape->record(Tensor<T>({1}, total * inv), {a},
                        [a, target, mask, inv](Tape<T>& t, int self) {
                          const T g = t.grad(self)[0] * T(2) * inv;
                          const auto& xv = t.value(a).data;
                          auto ga = t.grad(a.id);
                          for (std::size_t i = 0; i < ga.size(); ++i) {
                            if (mask[i]) ga[i] += g * (xv[i] - target.data[i]);
                          }
                        });
}

/// Sum of scalar nodes; an empty list yields the constant 0.
template <typename T>
Var<T> add_scalars(Tape<T>& tape, const std::vector<Var<T>>& terms) {
  if (terms.empty()) return tape.constant(Tensor<T>({1}, T(0)));
  Var<T> acc = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  return acc;
}

}  // namespace afh::ad
