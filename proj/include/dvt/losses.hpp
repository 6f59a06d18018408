#pragma once

#include <optional>
#include <vector>

#include "dvt/autodiff.hpp"
#include "dvt/model.hpp"

namespace dvt {

struct LossWeights {
  double gamma = 0.1;  // unsupervised weight
  double rho = 1e4;    // classification weight
  double eta = 0.5;    // source weight in the two-domain objective
  double tau = 0.5;    // Gumbel-Softmax temperature

  void validate() const;
};

// Labelled rows with one N(0, I) draw per row, (B, J).
struct LabeledBatch {
  Tensor x;
  std::vector<int> labels;
  Tensor eps;

  bool empty() const { return labels.empty(); }
};

// Unlabelled rows with per-row N(0, I) draws (B, J) and Gumbel(0, 1) draws
// (B, K). When `st_anchor` is set, the straight-through class sample uses it
// as the frozen relaxed value (see straight_through); normally it is unset.
struct UnlabeledBatch {
  Tensor x;
  Tensor eps;
  Tensor gumbel;
  std::optional<Tensor> st_anchor;

  bool empty() const { return x.rank() == 0 || x.dim(0) == 0; }
};

struct DomainBatch {
  std::size_t domain = 0;
  LabeledBatch sup;
  UnlabeledBatch unsup;
};

// Unweighted batch means of each objective term, for traces.
struct LossTerms {
  double supervised = 0.0;
  double unsupervised = 0.0;
  double classification = 0.0;
};

// Negative labelled ELBO: -E_q[log p(x|z)] + KL(q(z|x) || N(mu_y, sigma_y^2 I)),
// averaged over the batch.
Var loss_supervised(const BoundModel& model, std::size_t domain, const Tensor& x,
                    const std::vector<int>& labels, const Tensor& eps);

// Negative unlabelled ELBO as reconstruction + KL(q(y|z) || p(y)) +
// KL(q(z|x) || p(z|y)), with y a straight-through Gumbel-Softmax sample.
Var loss_unsupervised(const BoundModel& model, std::size_t domain, const UnlabeledBatch& batch,
                      double tau);

// Batch mean of -log q(y|z) with z a reparameterised posterior sample.
Var loss_classification(const BoundModel& model, std::size_t domain, const Tensor& x,
                        const std::vector<int>& labels, const Tensor& eps);

// (1 - gamma) L_sup + gamma L_unsup + rho L_class. Terms with zero weight or
// an empty batch are skipped entirely.
Var loss_domain(const BoundModel& model, const DomainBatch& batch, const LossWeights& w,
                LossTerms* terms = nullptr);

// eta J_source + (1 - eta) J_target; a term with zero weight is not built.
Var loss_dvt(const BoundModel& model, const DomainBatch& source, const DomainBatch& target,
             const LossWeights& w, LossTerms* terms = nullptr);

// Relaxed Gumbel-Softmax class sample that loss_unsupervised would draw, for
// freezing the straight-through anchor in gradient checks.
Tensor relaxed_class_sample(const DvtModel& model, std::size_t domain, const UnlabeledBatch& batch,
                            double tau);

}  // namespace dvt
