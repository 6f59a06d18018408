#include "dvt/losses.hpp"

#include <cmath>

#include "dvt/distributions.hpp"
#include "dvt/error.hpp"

namespace dvt {
namespace {

void check_labels(std::string_view op, const std::vector<int>& labels, std::size_t rows,
                  std::size_t classes) {
  if (labels.size() != rows) {
    throw ShapeError(std::string(op) + ": " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(rows) + " rows");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw ConfigError(std::string(op) + ": label " + std::to_string(y) + " outside [0, " +
                        std::to_string(classes) + ")");
    }
  }
}

double batch_rows(const Tensor& x) { return static_cast<double>(x.dim(0)); }

Tensor one_hot(const std::vector<int>& labels, std::size_t classes) {
  Tensor t(Shape{labels.size(), classes});
  for (std::size_t i = 0; i < labels.size(); ++i) t.at(i, static_cast<std::size_t>(labels[i])) = 1.0;
  return t;
}

struct SupervisedPass {
  DiagGaussian q;
  Var z;
};

SupervisedPass encode_and_sample(const BoundModel& model, std::size_t domain, const Tensor& x,
                                 const Tensor& eps) {
  DiagGaussian q = model.encode(domain, x);
  return {q, sample_gaussian_reparam(q, eps)};
}

Var reconstruction(const BoundModel& model, std::size_t domain, Var z, const Tensor& x) {
  return neg(log_likelihood(model.decode(domain, z), x));
}

Var supervised_from(const BoundModel& model, std::size_t domain, const SupervisedPass& pass,
                    const Tensor& x, const std::vector<int>& labels) {
  const GmmPrior& prior = model.model().prior();
  Tensor targets = prior.means().take_rows(
      std::vector<std::size_t>(labels.begin(), labels.end()));
  Var kl = kl_diag_gaussians(pass.q, targets, prior.sigma());
  return add(reconstruction(model, domain, pass.z, x), mean(kl));
}

Var classification_from(const BoundModel& model, std::size_t domain, Var z,
                        const std::vector<int>& labels) {
  Tape& tape = model.tape();
  Var log_q = log_softmax(model.classify(domain, z).logits);
  Var picked = sum(mul(log_q, tape.constant(one_hot(labels, model.model().classes()))));
  return mul_scalar(picked, -1.0 / static_cast<double>(labels.size()));
}

// Weighted sum of the terms that are present; a lone term is returned as w * t.
Var weighted_sum(const std::vector<std::pair<double, Var>>& terms) {
  Var total = mul_scalar(terms.front().second, terms.front().first);
  for (std::size_t i = 1; i < terms.size(); ++i) {
    total = add(total, mul_scalar(terms[i].second, terms[i].first));
  }
  return total;
}

}  // namespace

void LossWeights::validate() const {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in [0, 1]");
  if (!(rho >= 0.0) || !std::isfinite(rho)) throw ConfigError("rho must be >= 0");
  if (!(eta >= 0.0 && eta <= 1.0)) throw ConfigError("eta must lie in [0, 1]");
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("tau must be > 0");
}

Var loss_supervised(const BoundModel& model, std::size_t domain, const Tensor& x,
                    const std::vector<int>& labels, const Tensor& eps) {
  check_labels("loss_supervised", labels, x.rows(), model.model().classes());
  return supervised_from(model, domain, encode_and_sample(model, domain, x, eps), x, labels);
}

Var loss_classification(const BoundModel& model, std::size_t domain, const Tensor& x,
                        const std::vector<int>& labels, const Tensor& eps) {
  check_labels("loss_classification", labels, x.rows(), model.model().classes());
  return classification_from(model, domain, encode_and_sample(model, domain, x, eps).z, labels);
}

Var loss_unsupervised(const BoundModel& model, std::size_t domain, const UnlabeledBatch& batch,
                      double tau) {
  const GmmPrior& prior = model.model().prior();
  const SupervisedPass pass = encode_and_sample(model, domain, batch.x, batch.eps);
  const double rows = batch_rows(batch.x);

  Var recon = reconstruction(model, domain, pass.z, batch.x);
  CategoricalLogits logits = model.classify(domain, pass.z);
  Var kl_y = mean(kl_categorical(logits, prior.pi()));

  Var relaxed = gumbel_softmax_sample(logits.logits, tau, batch.gumbel);
  Var y = straight_through(relaxed, batch.st_anchor ? *batch.st_anchor : relaxed.value());
  Var kl_z = mul_scalar(sum(mul(y, kl_to_components(pass.q, prior))), 1.0 / rows);
  return add(add(recon, kl_y), kl_z);
}

Var loss_domain(const BoundModel& model, const DomainBatch& batch, const LossWeights& w,
                LossTerms* terms) {
  w.validate();
  const bool has_sup = !batch.sup.empty();
  const bool has_unsup = !batch.unsup.empty();
  if (!has_sup && !has_unsup) throw ConfigError("loss_domain: both batches are empty");

  std::vector<std::pair<double, Var>> parts;
  if (has_sup && (w.gamma < 1.0 || w.rho > 0.0)) {
    check_labels("loss_domain", batch.sup.labels, batch.sup.x.rows(), model.model().classes());
    const SupervisedPass pass = encode_and_sample(model, batch.domain, batch.sup.x, batch.sup.eps);
    if (w.gamma < 1.0) {
      Var sup = supervised_from(model, batch.domain, pass, batch.sup.x, batch.sup.labels);
      if (terms) terms->supervised = sup.value().item();
      parts.emplace_back(1.0 - w.gamma, sup);
    }
    if (w.rho > 0.0) {
      Var cls = classification_from(model, batch.domain, pass.z, batch.sup.labels);
      if (terms) terms->classification = cls.value().item();
      parts.emplace_back(w.rho, cls);
    }
  }
  if (has_unsup && w.gamma > 0.0) {
    Var unsup = loss_unsupervised(model, batch.domain, batch.unsup, w.tau);
    if (terms) terms->unsupervised = unsup.value().item();
    parts.emplace_back(w.gamma, unsup);
  }
  if (parts.empty()) throw ConfigError("loss_domain: every term has zero weight");
  return weighted_sum(parts);
}

Var loss_dvt(const BoundModel& model, const DomainBatch& source, const DomainBatch& target,
             const LossWeights& w, LossTerms* terms) {
  w.validate();
  const DvtModel& m = model.model();
  if (source.domain >= m.domain_count() || target.domain >= m.domain_count()) {
    throw ConfigError("loss_dvt: model lacks the source or target domain");
  }
  std::vector<std::pair<double, Var>> parts;
  LossTerms src, tgt;
  if (w.eta > 0.0) parts.emplace_back(w.eta, loss_domain(model, source, w, &src));
  if (w.eta < 1.0) parts.emplace_back(1.0 - w.eta, loss_domain(model, target, w, &tgt));
  if (terms) {
    terms->supervised = w.eta * src.supervised + (1.0 - w.eta) * tgt.supervised;
    terms->unsupervised = w.eta * src.unsupervised + (1.0 - w.eta) * tgt.unsupervised;
    terms->classification = w.eta * src.classification + (1.0 - w.eta) * tgt.classification;
  }
  return weighted_sum(parts);
}

Tensor relaxed_class_sample(const DvtModel& model, std::size_t domain, const UnlabeledBatch& batch,
                            double tau) {
  Tape tape;
  BoundModel bound(tape, model, [](const ParamInfo&) { return false; });
  const SupervisedPass pass = encode_and_sample(bound, domain, batch.x, batch.eps);
  return gumbel_softmax_sample(bound.classify(domain, pass.z).logits, tau, batch.gumbel).value();
}

}  // namespace dvt
