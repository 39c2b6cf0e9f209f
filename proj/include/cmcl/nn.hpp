#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "cmcl/error.hpp"
#include "cmcl/rng.hpp"
#include "cmcl/tensor.hpp"
#include "cmcl/vocab.hpp"

namespace cmcl::nn {

// ---------------------------------------------------------------------------
// Initialization

template <typename T>
void glorot_uniform(Tensor<T>& t, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : t.value) v = static_cast<T>(rng.uniform(-limit, limit));
}

// ---------------------------------------------------------------------------
// Embedding

template <typename T>
Tensor<T> embed_lookup(const Tensor<T>& table, std::span<const TokenId> ids) {
  const std::size_t d = table.cols();
  auto out = Tensor<T>::matrix(ids.size(), d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= table.rows()) {
      throw Error("embed_lookup: id " + std::to_string(ids[i]) + " out of range for table with " +
                  std::to_string(table.rows()) + " rows");
    }
    std::copy_n(table.value.data() + ids[i] * d, d, out.value.data() + i * d);
  }
  return out;
}

// Scatter-adds output gradients into the table's gradient rows.
template <typename T>
void embed_backward(Tensor<T>& table, std::span<const TokenId> ids, const Tensor<T>& d_out) {
  table.ensure_grad();
  const std::size_t d = table.cols();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    kernel::axpy(T(1), d_out.value.data() + i * d, table.grad.data() + ids[i] * d, d);
  }
}

// ---------------------------------------------------------------------------
// LSTM

// Gate blocks are stacked in the order (input, forget, cell, output).
template <typename T>
struct LstmCellParams {
  Tensor<T> w_x;  // 4h x d
  Tensor<T> w_h;  // 4h x h
  Tensor<T> b;    // 4h

  static LstmCellParams make(const std::string& prefix, std::size_t input_dim, std::size_t hidden_dim) {
    return {Tensor<T>::matrix(4 * hidden_dim, input_dim, prefix + ".Wx"),
            Tensor<T>::matrix(4 * hidden_dim, hidden_dim, prefix + ".Wh"),
            Tensor<T>::vector(4 * hidden_dim, prefix + ".b")};
  }

  std::size_t input_dim() const { return w_x.cols(); }
  std::size_t hidden_dim() const { return w_h.cols(); }

  void validate() const {
    const std::size_t h = hidden_dim();
    if (w_h.rows() != 4 * h || w_x.rows() != 4 * h || b.size() != 4 * h) {
      throw Error("LSTM parameters '" + w_x.name + "' have inconsistent dimensions");
    }
  }

  // Glorot matrices, zero biases except the forget block at 1.
  void init(Rng& rng) {
    const std::size_t h = hidden_dim();
    glorot_uniform(w_x, input_dim(), 4 * h, rng);
    glorot_uniform(w_h, h, 4 * h, rng);
    std::fill(b.value.begin(), b.value.end(), T(0));
    std::fill(b.value.begin() + h, b.value.begin() + 2 * h, T(1));
  }

  std::array<Tensor<T>*, 3> tensors() { return {&w_x, &w_h, &b}; }
  std::array<const Tensor<T>*, 3> tensors() const { return {&w_x, &w_h, &b}; }
};

namespace detail {

template <typename T>
inline T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

// gates holds pre-activations on entry and activations on exit.
template <typename T>
void cell_forward(T* gates, const T* c_prev, T* c, T* tanh_c, T* h, std::size_t hidden) {
  T* gi = gates;
  T* gf = gates + hidden;
  T* gg = gates + 2 * hidden;
  T* go = gates + 3 * hidden;
  for (std::size_t j = 0; j < hidden; ++j) {
    gi[j] = sigmoid(gi[j]);
    gf[j] = sigmoid(gf[j]);
    gg[j] = std::tanh(gg[j]);
    go[j] = sigmoid(go[j]);
    c[j] = gf[j] * (c_prev ? c_prev[j] : T(0)) + gi[j] * gg[j];
    tanh_c[j] = std::tanh(c[j]);
    h[j] = go[j] * tanh_c[j];
  }
}

// dh, dc: gradients arriving at h and c of this step. Writes gate
// pre-activation gradients and the gradient flowing to c_prev.
template <typename T>
void cell_backward(const T* gates, const T* c_prev, const T* tanh_c, const T* dh, const T* dc, T* dpre, T* dc_prev,
                   std::size_t hidden) {
  const T* gi = gates;
  const T* gf = gates + hidden;
  const T* gg = gates + 2 * hidden;
  const T* go = gates + 3 * hidden;
  for (std::size_t j = 0; j < hidden; ++j) {
    const T d_o = dh[j] * tanh_c[j];
    const T d_c = dc[j] + dh[j] * go[j] * (T(1) - tanh_c[j] * tanh_c[j]);
    const T d_i = d_c * gg[j];
    const T d_f = d_c * (c_prev ? c_prev[j] : T(0));
    const T d_g = d_c * gi[j];
    dc_prev[j] = d_c * gf[j];
    dpre[j] = d_i * gi[j] * (T(1) - gi[j]);
    dpre[hidden + j] = d_f * gf[j] * (T(1) - gf[j]);
    dpre[2 * hidden + j] = d_g * (T(1) - gg[j] * gg[j]);
    dpre[3 * hidden + j] = d_o * go[j] * (T(1) - go[j]);
  }
}

}  // namespace detail

template <typename T>
struct LstmStep {
  std::vector<T> gates;  // activated (i, f, g, o)
  std::vector<T> c;
  std::vector<T> tanh_c;
  std::vector<T> h;
};

template <typename T>
LstmStep<T> lstm_cell(std::span<const T> x, std::span<const T> h_prev, std::span<const T> c_prev,
                      const LstmCellParams<T>& p) {
  const std::size_t hd = p.hidden_dim();
  if (x.size() != p.input_dim() || h_prev.size() != hd || c_prev.size() != hd) {
    throw Error("lstm_cell: dimension mismatch");
  }
  LstmStep<T> s{std::vector<T>(4 * hd), std::vector<T>(hd), std::vector<T>(hd), std::vector<T>(hd)};
  kernel::matvec(p.w_x.value.data(), p.b.value.data(), x.data(), s.gates.data(), 4 * hd, x.size());
  kernel::matvec_acc(p.w_h.value.data(), h_prev.data(), s.gates.data(), 4 * hd, hd);
  detail::cell_forward(s.gates.data(), c_prev.data(), s.c.data(), s.tanh_c.data(), s.h.data(), hd);
  return s;
}

template <typename T>
struct LstmCellGrads {
  std::vector<T> dx;
  std::vector<T> dh_prev;
  std::vector<T> dc_prev;
};

// Accumulates parameter gradients into p and returns input-side gradients.
template <typename T>
LstmCellGrads<T> lstm_cell_backward(LstmCellParams<T>& p, std::span<const T> x, std::span<const T> h_prev,
                                    std::span<const T> c_prev, const LstmStep<T>& step, std::span<const T> dh,
                                    std::span<const T> dc) {
  const std::size_t hd = p.hidden_dim();
  const std::size_t d = p.input_dim();
  std::vector<T> dpre(4 * hd);
  LstmCellGrads<T> g{std::vector<T>(d), std::vector<T>(hd), std::vector<T>(hd)};
  detail::cell_backward(step.gates.data(), c_prev.data(), step.tanh_c.data(), dh.data(), dc.data(), dpre.data(),
                        g.dc_prev.data(), hd);
  for (auto* t : p.tensors()) t->ensure_grad();
  kernel::outer_acc(dpre.data(), x.data(), p.w_x.grad.data(), 4 * hd, d);
  kernel::outer_acc(dpre.data(), h_prev.data(), p.w_h.grad.data(), 4 * hd, hd);
  kernel::axpy(T(1), dpre.data(), p.b.grad.data(), 4 * hd);
  kernel::matvec_t_acc(p.w_x.value.data(), dpre.data(), g.dx.data(), 4 * hd, d);
  kernel::matvec_t_acc(p.w_h.value.data(), dpre.data(), g.dh_prev.data(), 4 * hd, hd);
  return g;
}

// Activations of one LSTM direction over a sequence, indexed by position.
template <typename T>
struct DirectionTrace {
  Tensor<T> gates;  // n x 4h, activated
  Tensor<T> c;      // n x h
  Tensor<T> tanh_c;
  Tensor<T> h;
  bool reverse = false;
};

namespace detail {

inline std::ptrdiff_t prev_position(std::size_t t, std::size_t n, bool reverse) {
  if (reverse) return t + 1 < n ? static_cast<std::ptrdiff_t>(t + 1) : -1;
  return t > 0 ? static_cast<std::ptrdiff_t>(t - 1) : -1;
}

template <typename T>
DirectionTrace<T> run_direction(const Tensor<T>& x, const LstmCellParams<T>& p, bool reverse) {
  const std::size_t n = x.rows();
  const std::size_t d = p.input_dim();
  const std::size_t hd = p.hidden_dim();
  if (x.cols() != d) throw Error("LSTM input width " + std::to_string(x.cols()) + " != " + std::to_string(d));
  DirectionTrace<T> tr{Tensor<T>::matrix(n, 4 * hd), Tensor<T>::matrix(n, hd), Tensor<T>::matrix(n, hd),
                       Tensor<T>::matrix(n, hd), reverse};
  kernel::matmul_nt(p.w_x.value.data(), p.b.value.data(), x.value.data(), tr.gates.value.data(), n, 4 * hd, d);
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t t = reverse ? n - 1 - s : s;
    const auto prev = prev_position(t, n, reverse);
    T* g = tr.gates.value.data() + t * 4 * hd;
    const T* c_prev = nullptr;
    if (prev >= 0) {
      const T* h_prev = tr.h.value.data() + prev * hd;
      c_prev = tr.c.value.data() + prev * hd;
      kernel::matvec_acc(p.w_h.value.data(), h_prev, g, 4 * hd, hd);
    }
    cell_forward(g, c_prev, tr.c.value.data() + t * hd, tr.tanh_c.value.data() + t * hd,
                 tr.h.value.data() + t * hd, hd);
  }
  return tr;
}

// dh_in: n x h gradient on this direction's hidden states.
template <typename T>
void backward_direction(const Tensor<T>& x, LstmCellParams<T>& p, const DirectionTrace<T>& tr, const Tensor<T>& dh_in,
                        bool accumulate_params, Tensor<T>* dx) {
  const std::size_t n = x.rows();
  const std::size_t d = p.input_dim();
  const std::size_t hd = p.hidden_dim();
  auto dpre = Tensor<T>::matrix(n, 4 * hd);
  std::vector<T> dh(hd), dh_next(hd, T(0)), dc_next(hd, T(0)), dc_prev(hd);
  for (std::size_t s = n; s-- > 0;) {
    const std::size_t t = tr.reverse ? n - 1 - s : s;
    const auto prev = prev_position(t, n, tr.reverse);
    for (std::size_t j = 0; j < hd; ++j) dh[j] = dh_in.value[t * hd + j] + dh_next[j];
    const T* c_prev = prev >= 0 ? tr.c.value.data() + prev * hd : nullptr;
    T* dp = dpre.value.data() + t * 4 * hd;
    cell_backward(tr.gates.value.data() + t * 4 * hd, c_prev, tr.tanh_c.value.data() + t * hd, dh.data(),
                  dc_next.data(), dp, dc_prev.data(), hd);
    std::fill(dh_next.begin(), dh_next.end(), T(0));
    if (prev >= 0) kernel::matvec_t_acc(p.w_h.value.data(), dp, dh_next.data(), 4 * hd, hd);
    dc_next.swap(dc_prev);
  }
  if (accumulate_params) {
    for (auto* t : p.tensors()) t->ensure_grad();
    kernel::outer_acc_seq(dpre.value.data(), x.value.data(), p.w_x.grad.data(), n, 4 * hd, d);
    if (n > 1) {
      // forward: dpre[1..n) pairs with h[0..n-1); reverse: dpre[0..n-1) with h[1..n)
      const T* dp = dpre.value.data() + (tr.reverse ? 0 : 4 * hd);
      const T* hp = tr.h.value.data() + (tr.reverse ? hd : 0);
      kernel::outer_acc_seq(dp, hp, p.w_h.grad.data(), n - 1, 4 * hd, hd);
    }
    for (std::size_t t = 0; t < n; ++t) kernel::axpy(T(1), dpre.value.data() + t * 4 * hd, p.b.grad.data(), 4 * hd);
  }
  if (dx != nullptr) kernel::matmul_t_acc(p.w_x.value.data(), dpre.value.data(), dx->value.data(), n, 4 * hd, d);
}

}  // namespace detail

template <typename T>
struct BiLstmResult {
  DirectionTrace<T> fwd;
  DirectionTrace<T> bwd;
  Tensor<T> H;    // n x 2h, row i = [forward h_i ; backward h_i]
  Tensor<T> H_N;  // 2h, [forward h_{n-1} ; backward h_0]
};

template <typename T>
BiLstmResult<T> bilstm_forward(const Tensor<T>& x, const LstmCellParams<T>& fwd, const LstmCellParams<T>& bwd) {
  const std::size_t n = x.rows();
  if (n == 0 || x.empty()) throw Error("bilstm_forward: empty sequence");
  if (fwd.hidden_dim() != bwd.hidden_dim()) throw Error("bilstm_forward: direction widths differ");
  BiLstmResult<T> r{detail::run_direction(x, fwd, false), detail::run_direction(x, bwd, true), {}, {}};
  const std::size_t hd = fwd.hidden_dim();
  r.H = Tensor<T>::matrix(n, 2 * hd);
  for (std::size_t t = 0; t < n; ++t) {
    std::copy_n(r.fwd.h.value.data() + t * hd, hd, r.H.value.data() + t * 2 * hd);
    std::copy_n(r.bwd.h.value.data() + t * hd, hd, r.H.value.data() + t * 2 * hd + hd);
  }
  r.H_N = Tensor<T>::vector(2 * hd);
  std::copy_n(r.fwd.h.value.data() + (n - 1) * hd, hd, r.H_N.value.data());
  std::copy_n(r.bwd.h.value.data(), hd, r.H_N.value.data() + hd);
  return r;
}

// dH (n x 2h) and dH_N (2h) may each be absent (nullptr / empty span).
// Returns dX when need_dx, otherwise an empty tensor.
template <typename T>
Tensor<T> bilstm_backward(const Tensor<T>& x, LstmCellParams<T>& fwd, LstmCellParams<T>& bwd,
                          const BiLstmResult<T>& r, const Tensor<T>* dH, std::span<const T> dH_N,
                          bool accumulate_params, bool need_dx) {
  const std::size_t n = x.rows();
  const std::size_t hd = fwd.hidden_dim();
  auto dhf = Tensor<T>::matrix(n, hd);
  auto dhb = Tensor<T>::matrix(n, hd);
  if (dH != nullptr) {
    for (std::size_t t = 0; t < n; ++t) {
      std::copy_n(dH->value.data() + t * 2 * hd, hd, dhf.value.data() + t * hd);
      std::copy_n(dH->value.data() + t * 2 * hd + hd, hd, dhb.value.data() + t * hd);
    }
  }
  if (!dH_N.empty()) {
    kernel::axpy(T(1), dH_N.data(), dhf.value.data() + (n - 1) * hd, hd);
    kernel::axpy(T(1), dH_N.data() + hd, dhb.value.data(), hd);
  }
  Tensor<T> dx;
  if (need_dx) dx = Tensor<T>::matrix(n, x.cols());
  detail::backward_direction(x, fwd, r.fwd, dhf, accumulate_params, need_dx ? &dx : nullptr);
  detail::backward_direction(x, bwd, r.bwd, dhb, accumulate_params, need_dx ? &dx : nullptr);
  return dx;
}

// ---------------------------------------------------------------------------
// Dropout (inverted)

template <typename T>
struct DropoutResult {
  Tensor<T> out;
  std::vector<T> scale;  // per element 0 or 1/(1-rate); empty means identity
};

template <typename T>
DropoutResult<T> dropout(const Tensor<T>& x, double rate, Rng& rng, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) throw Error("dropout rate must be in [0, 1)");
  DropoutResult<T> r{Tensor<T>(x.shape), {}};
  if (!training || rate == 0.0) {
    r.out.value = x.value;
    return r;
  }
  const T keep = static_cast<T>(1.0 / (1.0 - rate));
  r.scale.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    r.scale[i] = rng.uniform() < rate ? T(0) : keep;
    r.out.value[i] = x.value[i] * r.scale[i];
  }
  return r;
}

template <typename T>
Tensor<T> dropout_backward(const DropoutResult<T>& r, const Tensor<T>& d_out) {
  Tensor<T> dx(d_out.shape);
  for (std::size_t i = 0; i < d_out.size(); ++i) {
    dx.value[i] = r.scale.empty() ? d_out.value[i] : d_out.value[i] * r.scale[i];
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Pooling over time

template <typename T>
struct MaxPoolResult {
  std::vector<T> value;
  std::vector<std::size_t> argmax;  // earliest row on ties
};

template <typename T>
MaxPoolResult<T> maxpool_time(const Tensor<T>& h) {
  if (h.rows() == 0 || h.empty()) throw Error("maxpool_time: empty sequence");
  const std::size_t k = h.cols();
  MaxPoolResult<T> r{std::vector<T>(h.row(0).begin(), h.row(0).end()), std::vector<std::size_t>(k, 0)};
  for (std::size_t t = 1; t < h.rows(); ++t) {
    const auto row = h.row(t);
    for (std::size_t j = 0; j < k; ++j) {
      if (row[j] > r.value[j]) {
        r.value[j] = row[j];
        r.argmax[j] = t;
      }
    }
  }
  return r;
}

template <typename T>
std::vector<T> avgpool_time(const Tensor<T>& h) {
  if (h.rows() == 0 || h.empty()) throw Error("avgpool_time: empty sequence");
  const std::size_t k = h.cols();
  std::vector<T> out(k, T(0));
  for (std::size_t t = 0; t < h.rows(); ++t) kernel::axpy(T(1), h.value.data() + t * k, out.data(), k);
  const T n = static_cast<T>(h.rows());
  for (auto& v : out) v /= n;
  return out;
}

// Both backward passes accumulate into dh (n x k).
template <typename T>
void maxpool_backward(std::span<const std::size_t> argmax, std::span<const T> d_out, Tensor<T>& dh) {
  const std::size_t k = dh.cols();
  for (std::size_t j = 0; j < d_out.size(); ++j) dh.value[argmax[j] * k + j] += d_out[j];
}

template <typename T>
void avgpool_backward(std::span<const T> d_out, Tensor<T>& dh) {
  const std::size_t k = dh.cols();
  const T inv = T(1) / static_cast<T>(dh.rows());
  for (std::size_t t = 0; t < dh.rows(); ++t) {
    for (std::size_t j = 0; j < k; ++j) dh.value[t * k + j] += d_out[j] * inv;
  }
}

// ---------------------------------------------------------------------------
// Affine map and softmax cross-entropy

template <typename T>
std::vector<T> affine(const Tensor<T>& w, const Tensor<T>& b, std::span<const T> x) {
  if (w.cols() != x.size() || b.size() != w.rows()) {
    throw Error("affine: shape mismatch for '" + w.name + "' (" + std::to_string(w.rows()) + "x" +
                std::to_string(w.cols()) + ", input " + std::to_string(x.size()) + ")");
  }
  std::vector<T> y(w.rows());
  kernel::matvec(w.value.data(), b.value.data(), x.data(), y.data(), w.rows(), w.cols());
  return y;
}

// Accumulates dW, db when accumulate_params; adds W^T dy into dx when dx is non-empty.
template <typename T>
void affine_backward(Tensor<T>& w, Tensor<T>& b, std::span<const T> x, std::span<const T> dy, std::span<T> dx,
                     bool accumulate_params = true) {
  if (accumulate_params) {
    w.ensure_grad();
    b.ensure_grad();
    kernel::outer_acc(dy.data(), x.data(), w.grad.data(), w.rows(), w.cols());
    kernel::axpy(T(1), dy.data(), b.grad.data(), b.size());
  }
  if (!dx.empty()) kernel::matvec_t_acc(w.value.data(), dy.data(), dx.data(), w.rows(), w.cols());
}

template <typename T>
std::vector<T> softmax(std::span<const T> logits) {
  const T m = *std::max_element(logits.begin(), logits.end());
  std::vector<T> p(logits.size());
  T sum = 0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    p[k] = std::exp(logits[k] - m);
    sum += p[k];
  }
  for (auto& v : p) v /= sum;
  return p;
}

template <typename T>
struct SoftmaxXent {
  std::vector<T> probs;
  T loss;
};

// loss = -log softmax(logits)[target], computed via log-sum-exp.
template <typename T>
SoftmaxXent<T> softmax_xent(std::span<const T> logits, std::size_t target) {
  if (logits.empty()) throw Error("softmax_xent: empty logits");
  if (target >= logits.size()) {
    throw Error("softmax_xent: target " + std::to_string(target) + " out of range for " +
                std::to_string(logits.size()) + " classes");
  }
  const T m = *std::max_element(logits.begin(), logits.end());
  SoftmaxXent<T> r{std::vector<T>(logits.size()), T(0)};
  T sum = 0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    r.probs[k] = std::exp(logits[k] - m);
    sum += r.probs[k];
  }
  for (auto& v : r.probs) v /= sum;
  r.loss = std::log(sum) - (logits[target] - m);
  return r;
}

// d loss / d logits = probs - onehot(target), times scale.
template <typename T>
std::vector<T> xent_grad(std::span<const T> probs, std::size_t target, T scale = T(1)) {
  std::vector<T> g(probs.size());
  for (std::size_t k = 0; k < probs.size(); ++k) g[k] = scale * (probs[k] - (k == target ? T(1) : T(0)));
  return g;
}

// ---------------------------------------------------------------------------
// Optimizer

template <typename T>
struct ParamGroup {
  std::string name;
  std::vector<Tensor<T>*> params;
  double lr = 0.0;
  bool frozen = false;
};

struct SgdStats {
  double grad_norm = 0.0;  // before clipping, over unfrozen groups
  double clip_scale = 1.0;
};

template <typename T>
double global_grad_norm(std::span<const ParamGroup<T>> groups) {
  double sq = 0.0;
  for (const auto& g : groups) {
    if (g.frozen) continue;
    for (const auto* p : g.params) {
      for (T v : p->grad) sq += static_cast<double>(v) * static_cast<double>(v);
    }
  }
  return std::sqrt(sq);
}

// Plain SGD with global norm clipping. Frozen groups are left bit-for-bit
// unchanged; every gradient buffer is zeroed afterwards. clip_norm <= 0
// disables clipping.
template <typename T>
SgdStats sgd_step(std::span<ParamGroup<T>> groups, double clip_norm) {
  for (const auto& g : groups) {
    if (g.frozen) continue;
    for (const auto* p : g.params) {
      for (T v : p->grad) {
        if (!std::isfinite(v)) throw DivergenceError("non-finite gradient in tensor '" + p->name + "'");
      }
    }
  }
  SgdStats stats;
  stats.grad_norm = global_grad_norm(std::span<const ParamGroup<T>>(groups.data(), groups.size()));
  if (clip_norm > 0.0 && stats.grad_norm > clip_norm) stats.clip_scale = clip_norm / stats.grad_norm;
  for (auto& g : groups) {
    if (!g.frozen) {
      const T step = static_cast<T>(g.lr * stats.clip_scale);
      for (auto* p : g.params) {
        if (!p->has_grad()) continue;
        for (std::size_t i = 0; i < p->size(); ++i) p->value[i] -= step * p->grad[i];
      }
    }
    for (auto* p : g.params) p->zero_grad();
  }
  return stats;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_tensor;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

// analytic_fn() accumulates analytic gradients into the params' grad
// buffers (zeroed first). numeric_loss(tensor, entry, delta) evaluates the
// loss with one entry shifted by delta, in whatever precision it likes.
// Central differences with step eps; max_entries_per_tensor > 0 checks a
// seeded random subset.
template <typename AnalyticFn, typename NumericFn>
GradCheckResult grad_check_with(AnalyticFn&& analytic_fn, NumericFn&& numeric_loss,
                                std::span<Tensor<double>* const> params, double eps = 1e-5,
                                std::size_t max_entries_per_tensor = 0, std::uint64_t seed = 0) {
  for (auto* p : params) {
    p->ensure_grad();
    p->zero_grad();
  }
  analytic_fn();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto* p : params) analytic.push_back(p->grad);

  GradCheckResult res;
  Rng rng(seed, 0x6772616443ULL);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto* p = params[pi];
    std::vector<std::size_t> idx;
    if (max_entries_per_tensor > 0 && p->size() > max_entries_per_tensor) {
      idx = rng.sample_without_replacement(p->size(), max_entries_per_tensor);
    } else {
      idx.resize(p->size());
      std::iota(idx.begin(), idx.end(), std::size_t{0});
    }
    for (std::size_t i : idx) {
      const auto lp = numeric_loss(pi, i, eps);
      const auto lm = numeric_loss(pi, i, -eps);
      const double numeric = static_cast<double>((lp - lm) / (2 * static_cast<decltype(lp)>(eps)));
      const double err = relative_error(analytic[pi][i], numeric);
      ++res.checked;
      if (err > res.max_rel_err) {
        res.max_rel_err = err;
        res.worst_analytic = analytic[pi][i];
        res.worst_numeric = numeric;
        res.worst_tensor = p->name + "[" + std::to_string(i) + "]";
      }
    }
  }
  for (std::size_t pi = 0; pi < params.size(); ++pi) params[pi]->grad = analytic[pi];
  return res;
}

// loss_fn() computes the loss and accumulates analytic gradients; the
// numeric side perturbs the double parameters in place.
template <typename LossFn>
GradCheckResult grad_check(LossFn&& loss_fn, std::span<Tensor<double>* const> params, double eps = 1e-5,
                           std::size_t max_entries_per_tensor = 0, std::uint64_t seed = 0) {
  auto numeric = [&](std::size_t pi, std::size_t i, double delta) {
    auto* p = params[pi];
    const double orig = p->value[i];
    p->value[i] = orig + delta;
    const double l = loss_fn();
    p->value[i] = orig;
    return l;
  };
  return grad_check_with(loss_fn, numeric, params, eps, max_entries_per_tensor, seed);
}

}  // namespace cmcl::nn
