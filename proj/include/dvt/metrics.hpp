#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dvt/tensor.hpp"

namespace dvt {

// counts[t][p]: rows with true class t predicted as p.
using ConfusionMatrix = std::vector<std::vector<std::size_t>>;

ConfusionMatrix confusion_matrix(const std::vector<int>& y_true, const std::vector<int>& y_pred,
                                 std::size_t classes);

double accuracy(const std::vector<int>& y_true, const std::vector<int>& y_pred);

// Mean of per-class F1 over the classes present in y_true. A class with
// P + R = 0 scores 0.
double unweighted_mean_f1(const std::vector<int>& y_true, const std::vector<int>& y_pred,
                          std::size_t classes);

enum class EntropyBase { bits, nats };

// Per-row entropy of probability vectors (N, K), with 0 log 0 = 0. Rows must
// sum to 1 within 1e-6.
std::vector<double> prediction_entropy(const Tensor& probabilities,
                                       EntropyBase base = EntropyBase::bits);

struct ClassScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

struct EvalReport {
  double accuracy = 0.0;
  double mean_f1 = 0.0;
  std::vector<ClassScores> per_class;
  ConfusionMatrix confusion;
  std::optional<std::vector<double>> entropy;
};

EvalReport evaluate(const std::vector<int>& y_true, const Tensor& probabilities);
std::string report_to_json(const EvalReport& report);

// Rows of: feature columns, true label, predicted label, entropy (bits).
std::string entropy_dump_csv(const Tensor& features, const std::vector<int>& y_true,
                             const Tensor& probabilities);

}  // namespace dvt
