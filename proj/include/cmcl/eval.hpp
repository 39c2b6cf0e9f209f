#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "cmcl/error.hpp"

namespace cmcl {

// rows = gold, cols = predicted
struct ConfusionMatrix {
  std::size_t classes = 0;
  std::vector<std::uint64_t> counts;

  explicit ConfusionMatrix(std::size_t k = 0) : classes(k), counts(k * k, 0) {}
  std::uint64_t& at(std::size_t gold, std::size_t pred) { return counts[gold * classes + pred]; }
  std::uint64_t at(std::size_t gold, std::size_t pred) const { return counts[gold * classes + pred]; }

  std::uint64_t total() const {
    std::uint64_t n = 0;
    for (auto c : counts) n += c;
    return n;
  }
  std::uint64_t gold_count(std::size_t k) const {
    std::uint64_t n = 0;
    for (std::size_t j = 0; j < classes; ++j) n += at(k, j);
    return n;
  }
  std::uint64_t pred_count(std::size_t k) const {
    std::uint64_t n = 0;
    for (std::size_t i = 0; i < classes; ++i) n += at(i, k);
    return n;
  }
};

enum class Averaging { macro, weighted };

struct ClassifyMetrics {
  double accuracy = 0;
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  ConfusionMatrix confusion;
};

// Per-class P = TP/(TP+FP), R = TP/(TP+FN), with 0/0 taken as 0. F1 is the
// harmonic mean of the averaged P and R.
inline ClassifyMetrics classify_metrics(std::span<const std::uint32_t> gold, std::span<const std::uint32_t> pred,
                                        std::size_t classes, Averaging avg = Averaging::macro) {
  if (gold.size() != pred.size()) throw Error("classify_metrics: gold/pred length mismatch");
  if (gold.empty()) throw Error("classify_metrics: empty input");
  ClassifyMetrics m;
  m.confusion = ConfusionMatrix(classes);
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i] >= classes || pred[i] >= classes) throw Error("classify_metrics: class id out of range");
    ++m.confusion.at(gold[i], pred[i]);
  }
  const double total = static_cast<double>(gold.size());
  double correct = 0;
  for (std::size_t k = 0; k < classes; ++k) correct += static_cast<double>(m.confusion.at(k, k));
  m.accuracy = correct / total;

  auto ratio = [](double a, double b) { return b == 0 ? 0.0 : a / b; };
  for (std::size_t k = 0; k < classes; ++k) {
    const double tp = static_cast<double>(m.confusion.at(k, k));
    const double p = ratio(tp, static_cast<double>(m.confusion.pred_count(k)));
    const double r = ratio(tp, static_cast<double>(m.confusion.gold_count(k)));
    const double w = avg == Averaging::macro ? 1.0 / static_cast<double>(classes)
                                             : static_cast<double>(m.confusion.gold_count(k)) / total;
    m.precision += w * p;
    m.recall += w * r;
  }
  m.f1 = ratio(2 * m.precision * m.recall, m.precision + m.recall);
  return m;
}

// Micro accuracy over all positions of all sequences.
inline double tagging_accuracy(std::span<const std::vector<std::uint32_t>> gold,
                               std::span<const std::vector<std::uint32_t>> pred) {
  if (gold.size() != pred.size()) throw Error("tagging_accuracy: sequence count mismatch");
  std::size_t total = 0, correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i].size() != pred[i].size()) throw Error("tagging_accuracy: sequence length mismatch");
    for (std::size_t t = 0; t < gold[i].size(); ++t) correct += gold[i][t] == pred[i][t];
    total += gold[i].size();
  }
  if (total == 0) throw Error("tagging_accuracy: no predictions");
  return static_cast<double>(correct) / static_cast<double>(total);
}

inline double perplexity(std::span<const double> losses) {
  if (losses.empty()) throw Error("perplexity: no losses");
  double sum = 0;
  for (double l : losses) sum += l;
  return std::exp(sum / static_cast<double>(losses.size()));
}

}  // namespace cmcl
