#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "cmcl/corpus.hpp"
#include "cmcl/error.hpp"
#include "cmcl/nn.hpp"
#include "cmcl/rng.hpp"
#include "cmcl/tensor.hpp"
#include "cmcl/vocab.hpp"

namespace cmcl {

enum class Task { lang, pos, pos_lang, lm, sentiment };

inline std::string_view to_string(Task t) {
  switch (t) {
    case Task::lang: return "lang";
    case Task::pos: return "pos";
    case Task::pos_lang: return "pos+lang";
    case Task::lm: return "lm";
    case Task::sentiment: return "sentiment";
  }
  return "?";
}

inline Task parse_task(std::string_view name) {
  if (name == "lang") return Task::lang;
  if (name == "pos") return Task::pos;
  if (name == "pos+lang" || name == "pos_lang") return Task::pos_lang;
  if (name == "lm") return Task::lm;
  if (name == "sentiment") return Task::sentiment;
  throw ConfigError("unknown task '" + std::string(name) + "'");
}

struct ModelDims {
  std::size_t vocab = 0;
  std::size_t emb = 64;
  std::size_t hidden = 64;
  std::size_t pos_tags = 1;
  std::size_t lang_tags = 1;
  std::size_t sentiment_classes = kSentimentClasses;
  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

// Parameter groups in depth order; learning-rate ladders and freeze
// schedules index into this.
enum class Group : std::size_t { embedding = 0, lstm1 = 1, lstm2 = 2, heads = 3 };
inline constexpr std::size_t kGroupCount = 4;
inline constexpr std::array<std::string_view, kGroupCount> kGroupNames{"emb", "lstm1", "lstm2", "heads"};

// true = the group receives gradient updates
using GroupMask = std::array<bool, kGroupCount>;
inline constexpr GroupMask kAllGroups{true, true, true, true};

enum class Head : std::size_t { pos = 0, lang = 1, lm = 2, sentiment = 3 };
using HeadMask = std::array<bool, 4>;
inline constexpr HeadMask kAllHeads{true, true, true, true};

inline HeadMask heads_for(Task t) {
  switch (t) {
    case Task::lang: return {false, true, false, false};
    case Task::pos: return {true, false, false, false};
    case Task::pos_lang: return {true, true, false, false};
    case Task::lm: return {false, false, true, false};
    case Task::sentiment: return {false, false, false, true};
  }
  return kAllHeads;
}

// Embedding -> BiLSTM-1 (POS and language heads) -> dropout -> BiLSTM-2
// (language-model and sentiment heads).
template <typename T>
struct HierModel {
  ModelDims dims;
  double dropout = 0.2;

  Tensor<T> embedding;  // |V| x emb
  nn::LstmCellParams<T> lstm1_fwd, lstm1_bwd;  // emb -> hidden
  nn::LstmCellParams<T> lstm2_fwd, lstm2_bwd;  // 2*hidden -> hidden
  Tensor<T> pos_w, pos_b;
  Tensor<T> lang_w, lang_b;
  Tensor<T> lm_w, lm_b;
  Tensor<T> sentiment_w, sentiment_b;  // classes x 6*hidden

  // Zero-filled parameters with the right shapes.
  static HierModel create(const ModelDims& d) {
    if (d.vocab < special::kCount || d.emb == 0 || d.hidden == 0 || d.pos_tags == 0 || d.lang_tags == 0 ||
        d.sentiment_classes == 0) {
      throw Error("invalid model dimensions");
    }
    const std::size_t h2 = 2 * d.hidden;
    HierModel m;
    m.dims = d;
    m.embedding = Tensor<T>::matrix(d.vocab, d.emb, "emb");
    m.lstm1_fwd = nn::LstmCellParams<T>::make("lstm1.fwd", d.emb, d.hidden);
    m.lstm1_bwd = nn::LstmCellParams<T>::make("lstm1.bwd", d.emb, d.hidden);
    m.lstm2_fwd = nn::LstmCellParams<T>::make("lstm2.fwd", h2, d.hidden);
    m.lstm2_bwd = nn::LstmCellParams<T>::make("lstm2.bwd", h2, d.hidden);
    m.pos_w = Tensor<T>::matrix(d.pos_tags, h2, "head.pos.W");
    m.pos_b = Tensor<T>::vector(d.pos_tags, "head.pos.b");
    m.lang_w = Tensor<T>::matrix(d.lang_tags, h2, "head.lang.W");
    m.lang_b = Tensor<T>::vector(d.lang_tags, "head.lang.b");
    m.lm_w = Tensor<T>::matrix(d.vocab, h2, "head.lm.W");
    m.lm_b = Tensor<T>::vector(d.vocab, "head.lm.b");
    m.sentiment_w = Tensor<T>::matrix(d.sentiment_classes, 3 * h2, "head.sentiment.W");
    m.sentiment_b = Tensor<T>::vector(d.sentiment_classes, "head.sentiment.b");
    return m;
  }

  static HierModel init(const ModelDims& d, std::uint64_t seed) {
    auto m = create(d);
    const Rng root(seed, 0x696e6974ULL);
    Rng r0 = root.split(0);
    nn::glorot_uniform(m.embedding, d.vocab, d.emb, r0);
    std::uint64_t k = 1;
    for (auto* cell : {&m.lstm1_fwd, &m.lstm1_bwd, &m.lstm2_fwd, &m.lstm2_bwd}) {
      Rng r = root.split(k++);
      cell->init(r);
    }
    for (auto* w : {&m.pos_w, &m.lang_w, &m.lm_w, &m.sentiment_w}) {
      Rng r = root.split(k++);
      nn::glorot_uniform(*w, w->cols(), w->rows(), r);
    }
    return m;
  }

  std::vector<Tensor<T>*> tensors() {
    std::vector<Tensor<T>*> out{&embedding};
    for (auto* cell : {&lstm1_fwd, &lstm1_bwd, &lstm2_fwd, &lstm2_bwd}) {
      for (auto* t : cell->tensors()) out.push_back(t);
    }
    for (auto* t : {&pos_w, &pos_b, &lang_w, &lang_b, &lm_w, &lm_b, &sentiment_w, &sentiment_b}) out.push_back(t);
    return out;
  }

  std::vector<const Tensor<T>*> tensors() const {
    auto mut = const_cast<HierModel*>(this)->tensors();
    return {mut.begin(), mut.end()};
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto* t : tensors()) n += t->size();
    return n;
  }

  void zero_grad() {
    for (auto* t : tensors()) t->zero_grad();
  }

  std::vector<Tensor<T>*> group_tensors(Group g, const HeadMask& heads = kAllHeads) {
    switch (g) {
      case Group::embedding: return {&embedding};
      case Group::lstm1: {
        std::vector<Tensor<T>*> out;
        for (auto* cell : {&lstm1_fwd, &lstm1_bwd}) {
          for (auto* t : cell->tensors()) out.push_back(t);
        }
        return out;
      }
      case Group::lstm2: {
        std::vector<Tensor<T>*> out;
        for (auto* cell : {&lstm2_fwd, &lstm2_bwd}) {
          for (auto* t : cell->tensors()) out.push_back(t);
        }
        return out;
      }
      case Group::heads: {
        std::vector<Tensor<T>*> out;
        const std::array<std::array<Tensor<T>*, 2>, 4> all{
            {{&pos_w, &pos_b}, {&lang_w, &lang_b}, {&lm_w, &lm_b}, {&sentiment_w, &sentiment_b}}};
        for (std::size_t h = 0; h < 4; ++h) {
          if (heads[h]) out.insert(out.end(), all[h].begin(), all[h].end());
        }
        return out;
      }
    }
    return {};
  }
};

// Ordered [emb, lstm1, lstm2, heads]. With the default head mask the groups
// cover every tensor exactly once.
template <typename T>
std::vector<nn::ParamGroup<T>> param_groups(HierModel<T>& m, const HeadMask& heads = kAllHeads) {
  std::vector<nn::ParamGroup<T>> groups;
  for (std::size_t g = 0; g < kGroupCount; ++g) {
    groups.push_back({std::string(kGroupNames[g]), m.group_tensors(static_cast<Group>(g), heads), 0.0, false});
  }
  return groups;
}

// Cached activations of one pass through the stack.
template <typename T>
struct BiLstmTrace {
  std::vector<TokenId> ids;
  Tensor<T> x;
  nn::BiLstmResult<T> layer1;
  nn::DropoutResult<T> layer2_input;
  nn::BiLstmResult<T> layer2;
  bool has_layer2 = false;

  const Tensor<T>& H1() const { return layer1.H; }
  const Tensor<T>& H1_N() const { return layer1.H_N; }
  const Tensor<T>& H2() const { return layer2.H; }
  const Tensor<T>& H2_N() const { return layer2.H_N; }
};

// H_S = [H2_N ; maxpool(H2) ; avgpool(H2)]
template <typename T>
struct SentimentRep {
  std::vector<T> H_S;
  std::vector<std::size_t> max_argmax;
};

namespace detail {

// rng == nullptr means evaluation mode (no dropout).
template <typename T>
BiLstmTrace<T> run_stack(const HierModel<T>& m, std::span<const TokenId> ids, bool with_layer2, Rng* rng) {
  if (ids.empty()) throw Error("cannot run the model on an empty sample");
  for (TokenId id : ids) {
    if (id >= m.dims.vocab) {
      throw Error("vocab mismatch: id " + std::to_string(id) + " >= model vocabulary " + std::to_string(m.dims.vocab));
    }
  }
  BiLstmTrace<T> tr;
  tr.ids.assign(ids.begin(), ids.end());
  tr.x = nn::embed_lookup(m.embedding, ids);
  tr.layer1 = nn::bilstm_forward(tr.x, m.lstm1_fwd, m.lstm1_bwd);
  if (with_layer2) {
    Rng unused;
    tr.layer2_input = nn::dropout(tr.layer1.H, m.dropout, rng ? *rng : unused, rng != nullptr);
    tr.layer2 = nn::bilstm_forward(tr.layer2_input.out, m.lstm2_fwd, m.lstm2_bwd);
    tr.has_layer2 = true;
  }
  return tr;
}

// Backpropagates from layer-2 (dH2 / dH2_N) or layer-1 (dH1) gradients down
// to the embedding, touching only trainable groups.
template <typename T>
void backprop_stack(HierModel<T>& m, const BiLstmTrace<T>& tr, const Tensor<T>* dH2, std::span<const T> dH2_N,
                    const Tensor<T>* dH1, const GroupMask& trainable) {
  const bool need_l1 = trainable[0] || trainable[1];
  Tensor<T> dh1;
  if (tr.has_layer2 && (dH2 != nullptr || !dH2_N.empty())) {
    if (!trainable[2] && !need_l1) return;
    auto d_in = nn::bilstm_backward(tr.layer2_input.out, m.lstm2_fwd, m.lstm2_bwd, tr.layer2, dH2, dH2_N,
                                    trainable[2], need_l1);
    if (!need_l1) return;
    dh1 = nn::dropout_backward(tr.layer2_input, d_in);
    if (dH1 != nullptr) kernel::axpy(T(1), dH1->value.data(), dh1.value.data(), dh1.size());
  } else if (dH1 != nullptr) {
    if (!need_l1) return;
    dh1 = *dH1;
  } else {
    return;
  }
  auto dx = nn::bilstm_backward(tr.x, m.lstm1_fwd, m.lstm1_bwd, tr.layer1, &dh1, {}, trainable[1], trainable[0]);
  if (trainable[0]) nn::embed_backward(m.embedding, tr.ids, dx);
}

template <typename T>
SentimentRep<T> sentiment_rep(const BiLstmTrace<T>& tr) {
  const auto mx = nn::maxpool_time(tr.H2());
  const auto av = nn::avgpool_time(tr.H2());
  SentimentRep<T> rep;
  rep.H_S.reserve(tr.H2_N().size() + mx.value.size() + av.size());
  rep.H_S.insert(rep.H_S.end(), tr.H2_N().value.begin(), tr.H2_N().value.end());
  rep.H_S.insert(rep.H_S.end(), mx.value.begin(), mx.value.end());
  rep.H_S.insert(rep.H_S.end(), av.begin(), av.end());
  rep.max_argmax = mx.argmax;
  return rep;
}

inline bool any_below_heads(const GroupMask& g) { return g[0] || g[1] || g[2]; }
inline bool any_trainable(const GroupMask& g) { return g[0] || g[1] || g[2] || g[3]; }

}  // namespace detail

template <typename T>
struct TaggingOutput {
  Tensor<T> pos_probs;   // n x |T_pos|
  Tensor<T> lang_probs;  // n x |T_lang|
  BiLstmTrace<T> trace;
};

// Tagging heads read the clean layer-1 states; dropout only sits between the
// two LSTM layers, so training mode has no effect here.
template <typename T>
TaggingOutput<T> forward_tagging(const HierModel<T>& m, std::span<const TokenId> ids) {
  TaggingOutput<T> out;
  out.trace = detail::run_stack(m, ids, false, nullptr);
  const std::size_t n = ids.size();
  out.pos_probs = Tensor<T>::matrix(n, m.dims.pos_tags);
  out.lang_probs = Tensor<T>::matrix(n, m.dims.lang_tags);
  for (std::size_t t = 0; t < n; ++t) {
    const auto row = out.trace.H1().row(t);
    auto pp = nn::softmax<T>(nn::affine(m.pos_w, m.pos_b, row));
    auto lp = nn::softmax<T>(nn::affine(m.lang_w, m.lang_b, row));
    std::copy(pp.begin(), pp.end(), out.pos_probs.row(t).begin());
    std::copy(lp.begin(), lp.end(), out.lang_probs.row(t).begin());
  }
  return out;
}

template <typename T>
struct LmOutput {
  std::vector<T> probs;  // over the vocabulary
  BiLstmTrace<T> trace;
};

// Next-subword distribution from the terminal layer-2 state of the prefix.
// BOS is prepended unless the prefix already starts with it.
template <typename T>
LmOutput<T> forward_lm(const HierModel<T>& m, std::span<const TokenId> prefix, Rng* dropout_rng = nullptr) {
  if (prefix.empty()) throw Error("forward_lm: empty prefix");
  std::vector<TokenId> input;
  if (prefix.front() != special::kBos) input.push_back(special::kBos);
  input.insert(input.end(), prefix.begin(), prefix.end());
  LmOutput<T> out;
  out.trace = detail::run_stack(m, input, true, dropout_rng);
  out.probs = nn::softmax<T>(nn::affine(m.lm_w, m.lm_b, out.trace.H2_N().row(0)));
  return out;
}

struct LmExample {
  std::vector<TokenId> prefix;  // BOS + subwords before the target position
  TokenId target;
};

// k target positions drawn without replacement (all when k >= n), returned
// in position order.
inline std::vector<LmExample> make_lm_examples(std::span<const TokenId> ids, std::size_t k_prefixes, Rng& rng) {
  auto positions = rng.sample_without_replacement(ids.size(), std::min(k_prefixes, ids.size()));
  std::sort(positions.begin(), positions.end());
  std::vector<LmExample> out;
  out.reserve(positions.size());
  for (std::size_t p : positions) {
    LmExample ex;
    ex.prefix.reserve(p + 1);
    ex.prefix.push_back(special::kBos);
    ex.prefix.insert(ex.prefix.end(), ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(p));
    ex.target = ids[p];
    out.push_back(std::move(ex));
  }
  return out;
}

template <typename T>
struct SentimentOutput {
  std::vector<T> probs;
  BiLstmTrace<T> trace;
  SentimentRep<T> rep;
};

template <typename T>
SentimentOutput<T> forward_sentiment(const HierModel<T>& m, std::span<const TokenId> ids, Rng* dropout_rng = nullptr) {
  SentimentOutput<T> out;
  out.trace = detail::run_stack(m, ids, true, dropout_rng);
  out.rep = detail::sentiment_rep(out.trace);
  out.probs = nn::softmax<T>(nn::affine(m.sentiment_w, m.sentiment_b, std::span<const T>(out.rep.H_S)));
  return out;
}

struct TaskLossOptions {
  std::size_t k_prefixes = 4;
};

namespace detail {

inline void require_labels(const EncodedSample& s, Task task) {
  const bool ok = (task == Task::lang && s.lang_labels) || (task == Task::pos && s.pos_labels) ||
                  (task == Task::pos_lang && s.lang_labels && s.pos_labels) || task == Task::lm ||
                  (task == Task::sentiment && s.sentiment);
  if (!ok) throw Error("sample lacks labels for task '" + std::string(to_string(task)) + "'");
}

}  // namespace detail

// Mean cross-entropy over every prediction in the batch (positions for
// tagging, prefixes for LM, samples for sentiment). Gradients are added to
// the trainable groups only. With training set, dropout masks and LM target
// positions are drawn from rng; otherwise only LM positions are.
// Loss accumulator: at least double, wider when the model is.
template <typename T>
using LossT = std::conditional_t<(sizeof(T) > sizeof(double)), T, double>;

template <typename T>
LossT<T> task_loss(HierModel<T>& m, Task task, std::span<const EncodedSample* const> batch, bool training, Rng& rng,
                 const GroupMask& trainable = kAllGroups, const TaskLossOptions& opt = {}) {
  if (batch.empty()) throw Error("task_loss: empty batch");
  for (const auto* s : batch) detail::require_labels(*s, task);
  Rng* drop = training ? &rng : nullptr;
  const bool heads_on = trainable[3];
  const bool below = detail::any_below_heads(trainable);
  const bool backward = detail::any_trainable(trainable);
  const std::size_t h2 = 2 * m.dims.hidden;

  switch (task) {
    case Task::sentiment: {
      const T scale = T(1) / static_cast<T>(batch.size());
      LossT<T> total = 0;
      for (const auto* s : batch) {
        auto out = detail::run_stack(m, s->subword_ids, true, drop);
        const auto rep = detail::sentiment_rep(out);
        const auto logits = nn::affine(m.sentiment_w, m.sentiment_b, std::span<const T>(rep.H_S));
        const auto sx = nn::softmax_xent<T>(logits, *s->sentiment);
        total += static_cast<LossT<T>>(sx.loss);
        if (!backward) continue;
        const auto dl = nn::xent_grad<T>(sx.probs, *s->sentiment, scale);
        std::vector<T> dhs(below ? rep.H_S.size() : 0);
        nn::affine_backward<T>(m.sentiment_w, m.sentiment_b, rep.H_S, dl, dhs, heads_on);
        if (!below) continue;
        const std::size_t n = s->subword_ids.size();
        auto dH2 = Tensor<T>::matrix(n, h2);
        nn::maxpool_backward<T>(rep.max_argmax, std::span<const T>(dhs).subspan(h2, h2), dH2);
        nn::avgpool_backward<T>(std::span<const T>(dhs).subspan(2 * h2, h2), dH2);
        detail::backprop_stack<T>(m, out, &dH2, std::span<const T>(dhs).subspan(0, h2), nullptr, trainable);
      }
      return total / static_cast<double>(batch.size());
    }
    case Task::lm: {
      std::vector<LmExample> examples;
      for (const auto* s : batch) {
        auto ex = make_lm_examples(s->subword_ids, opt.k_prefixes, rng);
        examples.insert(examples.end(), std::make_move_iterator(ex.begin()), std::make_move_iterator(ex.end()));
      }
      const T scale = T(1) / static_cast<T>(examples.size());
      LossT<T> total = 0;
      for (const auto& ex : examples) {
        auto tr = detail::run_stack(m, ex.prefix, true, drop);
        const auto logits = nn::affine(m.lm_w, m.lm_b, tr.H2_N().row(0));
        const auto sx = nn::softmax_xent<T>(logits, ex.target);
        total += static_cast<LossT<T>>(sx.loss);
        if (!backward) continue;
        const auto dl = nn::xent_grad<T>(sx.probs, ex.target, scale);
        std::vector<T> dhn(below ? h2 : 0);
        nn::affine_backward<T>(m.lm_w, m.lm_b, tr.H2_N().row(0), dl, dhn, heads_on);
        if (below) detail::backprop_stack<T>(m, tr, nullptr, dhn, nullptr, trainable);
      }
      return total / static_cast<double>(examples.size());
    }
    case Task::lang:
    case Task::pos:
    case Task::pos_lang: {
      const bool do_pos = task != Task::lang;
      const bool do_lang = task != Task::pos;
      std::size_t positions = 0;
      for (const auto* s : batch) positions += s->subword_ids.size();
      const T scale = T(1) / static_cast<T>(positions);
      LossT<T> total = 0;
      for (const auto* s : batch) {
        auto tr = detail::run_stack(m, s->subword_ids, false, nullptr);
        const std::size_t n = s->subword_ids.size();
        auto dH1 = below ? Tensor<T>::matrix(n, h2) : Tensor<T>();
        auto head = [&](Tensor<T>& w, Tensor<T>& b, const std::vector<std::uint32_t>& labels) {
          for (std::size_t t = 0; t < n; ++t) {
            const auto row = tr.H1().row(t);
            const auto sx = nn::softmax_xent<T>(nn::affine(w, b, row), labels[t]);
            total += static_cast<LossT<T>>(sx.loss);
            if (!backward) continue;
            const auto dl = nn::xent_grad<T>(sx.probs, labels[t], scale);
            nn::affine_backward<T>(w, b, row, dl, below ? dH1.row(t) : std::span<T>(), heads_on);
          }
        };
        if (do_pos) head(m.pos_w, m.pos_b, *s->pos_labels);
        if (do_lang) head(m.lang_w, m.lang_b, *s->lang_labels);
        if (below) detail::backprop_stack<T>(m, tr, nullptr, {}, &dH1, trainable);
      }
      return total / static_cast<LossT<T>>(positions);
    }
  }
  return 0;
}

template <typename T>
std::size_t argmax(std::span<const T> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

template <typename T>
std::uint32_t predict_sentiment(const HierModel<T>& m, std::span<const TokenId> ids) {
  const auto out = forward_sentiment(m, ids);
  return static_cast<std::uint32_t>(argmax<T>(out.probs));
}

}  // namespace cmcl
