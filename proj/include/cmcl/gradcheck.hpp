#pragma once

#include <cstdint>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "cmcl/corpus.hpp"
#include "cmcl/model.hpp"
#include "cmcl/nn.hpp"
#include "cmcl/rng.hpp"
#include "cmcl/tensor.hpp"

namespace cmcl::gradcheck {

struct SuiteOptions {
  std::size_t seeds = 20;
  double eps = 1e-5;
  double tolerance = 1e-4;
  std::size_t max_entries_per_tensor = 24;
  std::uint64_t base_seed = 0;
  bool inject_bug = false;  // corrupts one analytic gradient (negative control)
};

struct CaseReport {
  std::string op;
  std::size_t seeds = 0;
  std::size_t checked = 0;
  double max_rel_err = 0;
  std::string worst;
  bool pass = false;
};

inline const std::vector<std::string>& op_names() {
  static const std::vector<std::string> names{
      "embedding",  "lstm_cell", "bilstm",       "dropout",     "maxpool",   "avgpool",
      "affine",     "softmax_xent", "loss.lang", "loss.pos",    "loss.lm",   "loss.sentiment"};
  return names;
}

namespace detail {

using D = double;

inline Tensor<D> random_tensor(std::vector<std::size_t> shape, const std::string& name, Rng& rng, double scale = 0.5) {
  Tensor<D> t(std::move(shape), name);
  for (auto& v : t.value) v = rng.uniform(-scale, scale);
  return t;
}

inline std::size_t dim(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

// Scalar readout sum_i c_i y_i, so d/dy = c.
inline D readout(std::span<const D> y, std::span<const D> c) {
  D s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) s += c[i] * y[i];
  return s;
}

inline std::vector<D> coeffs(std::size_t n, Rng& rng) {
  std::vector<D> c(n);
  for (auto& v : c) v = rng.uniform(-1, 1);
  return c;
}

inline std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

struct Case {
  std::function<D()> loss;
  std::vector<Tensor<D>*> params;
};

inline nn::GradCheckResult check(Case& c, const SuiteOptions& o, std::uint64_t seed) {
  return nn::grad_check(c.loss, std::span<Tensor<D>* const>(c.params), o.eps, o.max_entries_per_tensor, seed);
}

inline nn::GradCheckResult run_embedding(Rng& rng, const SuiteOptions& o, std::uint64_t seed) {
  const std::size_t v = dim(rng, 3, 8), d = dim(rng, 2, 6), n = dim(rng, 1, 6);
  auto table = random_tensor({v, d}, "emb", rng);
  std::vector<TokenId> ids(n);
  for (auto& id : ids) id = static_cast<TokenId>(rng.below(v));
  const auto c = coeffs(n * d, rng);
  Case k;
  k.params = {&table};
  k.loss = [&] {
    const auto y = nn::embed_lookup(table, ids);
    auto dy = Tensor<D>::matrix(n, d);
    dy.value = c;
    nn::embed_backward(table, ids, dy);
    return readout(y.value, c);
  };
  return check(k, o, seed);
}

inline nn::GradCheckResult run_lstm_cell(Rng& rng, const SuiteOptions& o, std::uint64_t seed) {
  const std::size_t d = dim(rng, 2, 6), h = dim(rng, 1, 5);
  auto p = nn::LstmCellParams<D>::make("cell", d, h);
  for (auto* t : p.tensors()) {
    for (auto& v : t->value) v = rng.uniform(-0.5, 0.5);
  }
  auto x = random_tensor({d}, "x", rng, 1.0);
  auto h_prev = random_tensor({h}, "h_prev", rng, 1.0);
  auto c_prev = random_tensor({h}, "c_prev", rng, 1.0);
  const auto ch = coeffs(h, rng), cc = coeffs(h, rng);
  Case k;
  k.params = {&p.w_x, &p.w_h, &p.b, &x, &h_prev, &c_prev};
  k.loss = [&] {
    const auto s = nn::lstm_cell<D>(x.value, h_prev.value, c_prev.value, p);
    const auto g = nn::lstm_cell_backward<D>(p, x.value, h_prev.value, c_prev.value, s, ch, cc);
    for (std::size_t i = 0; i < d; ++i) x.grad[i] += g.dx[i];
    for (std::size_t i = 0; i < h; ++i) {
      h_prev.grad[i] += g.dh_prev[i];
      c_prev.grad[i] += g.dc_prev[i];
    }
    if (o.inject_bug) p.w_h.grad[0] *= 1.05;
    return readout(s.h, ch) + readout(s.c, cc);
  };
  return check(k, o, seed);
}

inline nn::GradCheckResult run_bilstm(Rng& rng, const SuiteOptions& o, std::uint64_t seed) {
  const std::size_t d = dim(rng, 2, 5), h = dim(rng, 1, 4), n = dim(rng, 1, 5);
  auto fwd = nn::LstmCellParams<D>::make("fwd", d, h);
  auto bwd = nn::LstmCellParams<D>::make("bwd", d, h);
  for (auto* cell : {&fwd, &bwd}) {
    for (auto* t : cell->tensors()) {
      for (auto& v : t->value) v = rng.uniform(-0.5, 0.5);
    }
  }
  auto x = random_tensor({n, d}, "x", rng, 1.0);
  auto dH = Tensor<D>::matrix(n, 2 * h);
  dH.value = coeffs(n * 2 * h, rng);
  const auto cN = coeffs(2 * h, rng);
  Case k;
  k.params = {&fwd.w_x, &fwd.w_h, &fwd.b, &bwd.w_x, &bwd.w_h, &bwd.b, &x};
  k.loss = [&] {
    const auto r = nn::bilstm_forward(x, fwd, bwd);
    const auto dx = nn::bilstm_backward<D>(x, fwd, bwd, r, &dH, cN, true, true);
    kernel::axpy(1.0, dx.value.data(), x.grad.data(), x.size());
    return readout(r.H.value, dH.value) + readout(r.H_N.value, cN);
  };
  return check(k, o, seed);
}

inline nn::GradCheckResult run_dropout(Rng& rng, const SuiteOptions& o, std::uint64_t seed) {
  const std::size_t n = dim(rng, 1, 5), d = dim(rng, 2, 8);
  auto x = random_tensor({n, d}, "x", rng, 1.0);
  const double rate = rng.uniform(0.1, 0.6);
  const std::uint64_t mask_seed = rng.next_u64();
  const auto c = coeffs(n * d, rng);
  Case k;
  k.params = {&x};
  k.loss = [&] {
    Rng mask_rng(mask_seed);
    const auto r = nn::dropout(x, rate, mask_rng, true);
    auto dy = Tensor<D>::matrix(n, d);
    dy.value = c;
    const auto dx = nn::dropout_backward(r, dy);
    kernel::axpy(1.0, dx.value.data(), x.grad.data(), x.size());
    return readout(r.out.value, c);
  };
  return check(k, o, seed);
}

inline nn::GradCheckResult run_pool(Rng& rng, const SuiteOptions& o, std::uint64_t seed, bool max) {
  const std::size_t n = dim(rng, 1, 6), d = dim(rng, 2, 8);
  auto x = random_tensor({n, d}, "x", rng, 1.0);
  const auto c = coeffs(d, rng);
  Case k;
  k.params = {&x};
  k.loss = [&] {
    auto dx = Tensor<D>::matrix(n, d);
    D y = 0;
    if (max) {
      const auto r = nn::maxpool_time(x);
      nn::maxpool_backward<D>(r.argmax, c, dx);
      y = readout(r.value, c);
    } else {
      const auto r = nn::avgpool_time(x);
      nn::avgpool_backward<D>(c, dx);
      y = readout(r, c);
    }
    kernel::axpy(1.0, dx.value.data(), x.grad.data(), x.size());
    return y;
  };
  return check(k, o, seed);
}

inline nn::GradCheckResult run_affine(Rng& rng, const SuiteOptions& o, std::uint64_t seed) {
  const std::size_t in = dim(rng, 1, 8), out = dim(rng, 1, 6);
  auto w = random_tensor({out, in}, "W", rng);
  auto b = random_tensor({out}, "b", rng);
  auto x = random_tensor({in}, "x", rng, 1.0);
  const auto c = coeffs(out, rng);
  Case k;
  k.params = {&w, &b, &x};
  k.loss = [&] {
    const auto y = nn::affine<D>(w, b, x.value);
    nn::affine_backward<D>(w, b, x.value, c, x.grad, true);
    return readout(y, c);
  };
  return check(k, o, seed);
}

inline nn::GradCheckResult run_softmax_xent(Rng& rng, const SuiteOptions& o, std::uint64_t seed) {
  const std::size_t kcls = dim(rng, 2, 8);
  auto logits = random_tensor({kcls}, "logits", rng, 3.0);
  const std::size_t target = rng.below(kcls);
  Case k;
  k.params = {&logits};
  k.loss = [&] {
    const auto r = nn::softmax_xent<D>(logits.value, target);
    const auto g = nn::xent_grad<D>(r.probs, target);
    kernel::axpy(1.0, g.data(), logits.grad.data(), kcls);
    return r.loss;
  };
  return check(k, o, seed);
}

// A micro model with every parameter drawn uniformly, and a small batch of
// fully labelled random samples.
inline nn::GradCheckResult run_model_loss(Rng& rng, const SuiteOptions& o, std::uint64_t seed, Task task) {
  ModelDims dims;
  dims.vocab = special::kCount + dim(rng, 2, 5);
  dims.emb = dim(rng, 2, 4);
  dims.hidden = dim(rng, 2, 4);
  dims.pos_tags = dim(rng, 2, 4);
  dims.lang_tags = dim(rng, 2, 3);
  auto m = HierModel<D>::create(dims);
  for (auto* t : m.tensors()) {
    for (auto& v : t->value) v = rng.uniform(-1.0, 1.0);
  }
  std::vector<EncodedSample> samples(dim(rng, 1, 2));
  for (auto& s : samples) {
    const std::size_t n = dim(rng, 1, 4);
    std::vector<std::uint32_t> pos(n), lang(n);
    for (std::size_t t = 0; t < n; ++t) {
      s.subword_ids.push_back(static_cast<TokenId>(special::kCount + rng.below(dims.vocab - special::kCount)));
      s.token_index.push_back(static_cast<std::uint32_t>(t));
      pos[t] = static_cast<std::uint32_t>(rng.below(dims.pos_tags));
      lang[t] = static_cast<std::uint32_t>(rng.below(dims.lang_tags));
    }
    s.pos_labels = pos;
    s.lang_labels = lang;
    s.sentiment = static_cast<std::uint32_t>(rng.below(dims.sentiment_classes));
  }
  std::vector<const EncodedSample*> batch;
  for (const auto& s : samples) batch.push_back(&s);
  const std::uint64_t loss_seed = rng.next_u64();

  // The finite-difference side runs on an extended-precision copy so that
  // entries near the 1e-8 floor are resolved; analytic gradients stay 64-bit.
  using X = long double;
  auto mirror = HierModel<X>::create(dims);
  mirror.dropout = m.dropout;
  auto src = m.tensors();
  auto dst = mirror.tensors();
  for (std::size_t t = 0; t < src.size(); ++t) {
    for (std::size_t i = 0; i < src[t]->size(); ++i) dst[t]->value[i] = static_cast<X>(src[t]->value[i]);
  }

  const auto heads = heads_for(task);
  const bool tagging = task == Task::lang || task == Task::pos || task == Task::pos_lang;
  std::vector<Tensor<D>*> params;
  std::vector<Tensor<X>*> mirrored;
  for (std::size_t t = 0; t < src.size(); ++t) {
    const auto& name = src[t]->name;
    const bool is_head = name.rfind("head.", 0) == 0;
    const bool own_head = (heads[0] && name.rfind("head.pos", 0) == 0) || (heads[1] && name.rfind("head.lang", 0) == 0) ||
                          (heads[2] && name.rfind("head.lm", 0) == 0) ||
                          (heads[3] && name.rfind("head.sentiment", 0) == 0);
    if ((is_head && !own_head) || (tagging && name.rfind("lstm2", 0) == 0)) continue;
    params.push_back(src[t]);
    mirrored.push_back(dst[t]);
  }

  auto analytic = [&] {
    Rng r(loss_seed);
    return task_loss<D>(m, task, std::span<const EncodedSample* const>(batch), true, r);
  };
  auto numeric = [&](std::size_t pi, std::size_t i, double delta) {
    auto& v = mirrored[pi]->value[i];
    const X orig = v;
    v = orig + static_cast<X>(delta);
    Rng r(loss_seed);
    const X l = task_loss<X>(mirror, task, std::span<const EncodedSample* const>(batch), true, r);
    v = orig;
    return l;
  };
  return nn::grad_check_with(analytic, numeric, std::span<Tensor<D>* const>(params), o.eps, o.max_entries_per_tensor,
                             seed);
}

}  // namespace detail

inline CaseReport run_case(const std::string& op, const SuiteOptions& o) {
  CaseReport rep;
  rep.op = op;
  for (std::size_t s = 0; s < o.seeds; ++s) {
    const std::uint64_t seed = o.base_seed + s;
    Rng rng(seed, fnv1a64(op));
    nn::GradCheckResult r;
    if (op == "embedding") r = detail::run_embedding(rng, o, seed);
    else if (op == "lstm_cell") r = detail::run_lstm_cell(rng, o, seed);
    else if (op == "bilstm") r = detail::run_bilstm(rng, o, seed);
    else if (op == "dropout") r = detail::run_dropout(rng, o, seed);
    else if (op == "maxpool") r = detail::run_pool(rng, o, seed, true);
    else if (op == "avgpool") r = detail::run_pool(rng, o, seed, false);
    else if (op == "affine") r = detail::run_affine(rng, o, seed);
    else if (op == "softmax_xent") r = detail::run_softmax_xent(rng, o, seed);
    else if (op == "loss.lang") r = detail::run_model_loss(rng, o, seed, Task::lang);
    else if (op == "loss.pos") r = detail::run_model_loss(rng, o, seed, Task::pos);
    else if (op == "loss.lm") r = detail::run_model_loss(rng, o, seed, Task::lm);
    else if (op == "loss.sentiment") r = detail::run_model_loss(rng, o, seed, Task::sentiment);
    else throw Error("gradcheck: unknown op '" + op + "'");
    ++rep.seeds;
    rep.checked += r.checked;
    if (r.max_rel_err >= rep.max_rel_err) {
      rep.max_rel_err = r.max_rel_err;
      rep.worst = r.worst_tensor + " (seed " + std::to_string(seed) + ", analytic " + detail::fmt_g(r.worst_analytic) +
                  ", numeric " + detail::fmt_g(r.worst_numeric) + ")";
    }
  }
  rep.pass = rep.max_rel_err < o.tolerance;
  return rep;
}

inline std::vector<CaseReport> run_suite(const SuiteOptions& o = {}) {
  std::vector<CaseReport> out;
  for (const auto& op : op_names()) out.push_back(run_case(op, o));
  return out;
}

inline bool all_pass(const std::vector<CaseReport>& reps) {
  for (const auto& r : reps) {
    if (!r.pass) return false;
  }
  return true;
}

}  // namespace cmcl::gradcheck
