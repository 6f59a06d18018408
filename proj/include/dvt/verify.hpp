#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dvt/losses.hpp"
#include "dvt/model.hpp"

namespace dvt {

struct CheckResult {
  std::string name;
  bool passed = false;
  double max_error = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

struct VerifyOptions {
  std::uint64_t seed = 0;
  std::size_t gradient_seeds = 5;
  double gradient_tolerance = 1e-4;
  double fd_step = 1e-5;
  std::size_t kl_pairs = 20;
  std::size_t kl_samples = 100000;
  double kl_standard_errors = 3.0;
  std::size_t gumbel_vectors = 10;
  std::size_t gumbel_draws = 100000;
  double gumbel_tolerance = 0.01;
};

// Small two-domain model with fixed noise, used for gradient checks. Every
// ReLU input on the batches is at least 1e-3 away from zero. Domain 0
// is Gaussian, domain 1 Bernoulli; input dims differ on odd seeds.
struct ToyProblem {
  DvtModel model;
  DomainBatch source;
  DomainBatch target;
  LossWeights weights;
};
ToyProblem make_toy_problem(std::uint64_t seed);

// Central-difference checks of every loss on toy problems; max_error is the
// worst relative error over all parameter coordinates.
CheckResult check_gradients(const VerifyOptions& opts);
// Closed-form KL against a Monte-Carlo estimate of E_q[log q - log p];
// max_error is the worst deviation in standard errors.
CheckResult check_kl_oracle(const VerifyOptions& opts);
// Argmax frequencies of Gumbel-Softmax samples against softmax(logits);
// max_error is the worst absolute frequency gap.
CheckResult check_gumbel_frequencies(const VerifyOptions& opts);

std::vector<CheckResult> run_verification(const VerifyOptions& opts);

}  // namespace dvt
