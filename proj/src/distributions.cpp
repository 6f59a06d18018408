#include "dvt/distributions.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "dvt/error.hpp"

namespace dvt {

const char* to_string(LikelihoodKind kind) {
  return kind == LikelihoodKind::bernoulli ? "bernoulli" : "gaussian";
}

LikelihoodKind likelihood_from_string(std::string_view name) {
  if (name == "bernoulli") return LikelihoodKind::bernoulli;
  if (name == "gaussian") return LikelihoodKind::gaussian;
  throw ConfigError("unknown likelihood kind '" + std::string(name) + "'");
}

GmmPrior::GmmPrior(std::vector<double> pi, Tensor means, double sigma)
    : pi_(std::move(pi)), means_(std::move(means)), sigma_(sigma) {
  if (pi_.empty()) throw ConfigError("gmm prior: no components");
  if (means_.rank() != 2 || means_.dim(0) != pi_.size()) {
    throw ShapeError("gmm prior: means shape " + shape_string(means_.shape()) + " for " +
                     std::to_string(pi_.size()) + " components");
  }
  if (means_.dim(1) < pi_.size()) throw ConfigError("gmm prior: latent dim must be >= classes");
  if (!(sigma_ > 0.0) || !std::isfinite(sigma_)) throw ConfigError("gmm prior: sigma must be > 0");
  if (!means_.all_finite()) throw NumericError("gmm prior: non-finite means");
  double total = 0.0;
  for (double p : pi_) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw ConfigError("gmm prior: negative class weight");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-12) {
    throw ConfigError("gmm prior: class weights sum to " + std::to_string(total));
  }
}

Var sample_gaussian_reparam(const DiagGaussian& q, const Tensor& eps) {
  if (eps.shape() != q.mu.shape() || q.log_var.shape() != q.mu.shape()) {
    throw ShapeError("sample_gaussian_reparam: eps " + shape_string(eps.shape()) + ", mu " +
                     shape_string(q.mu.shape()) + ", log_var " + shape_string(q.log_var.shape()));
  }
  Var sd = exp(mul_scalar(q.log_var, 0.5));
  return add(q.mu, mul(sd, q.mu.tape->constant(eps)));
}

Var kl_diag_gaussians(const DiagGaussian& q, const Tensor& p_mu, double p_sigma) {
  if (!(p_sigma > 0.0)) throw NumericError("kl_diag_gaussians: p_sigma must be positive");
  if (q.log_var.shape() != q.mu.shape()) {
    throw ShapeError("kl_diag_gaussians: mu " + shape_string(q.mu.shape()) + " vs log_var " +
                     shape_string(q.log_var.shape()));
  }
  Tape& tape = *q.mu.tape;
  const double p_var = p_sigma * p_sigma;
  // 0.5 * sum_j [log p_var - log_var_j + (exp(log_var_j) + (mu_j - p_mu_j)^2) / p_var - 1]
  Var diff = sub(q.mu, tape.constant(p_mu));
  Var inner = add(mul_scalar(add(exp(q.log_var), square(diff)), 1.0 / p_var), neg(q.log_var));
  inner = add_scalar(inner, std::log(p_var) - 1.0);
  return mul_scalar(sum_last(inner), 0.5);
}

Var kl_to_components(const DiagGaussian& q, const GmmPrior& prior) {
  const Tensor& mu = q.mu.value();
  if (mu.rank() != 2 || mu.dim(1) != prior.latent_dim()) {
    throw ShapeError("kl_to_components: posterior shape " + shape_string(mu.shape()) +
                     " for latent dim " + std::to_string(prior.latent_dim()));
  }
  const double p_var = prior.sigma() * prior.sigma();
  const double j = static_cast<double>(prior.latent_dim());
  // Terms independent of the component, per row: sum_j [exp(lv) / p_var - lv] + J (log p_var - 1).
  Var common = sum_last(add(mul_scalar(exp(q.log_var), 1.0 / p_var), neg(q.log_var)));
  common = add_scalar(common, j * (std::log(p_var) - 1.0));
  Var dist = mul_scalar(sq_dist_to_rows(q.mu, prior.means()), 1.0 / p_var);  // (B, K)
  Var common_col = broadcast_last(common, prior.classes());
  return mul_scalar(add(dist, common_col), 0.5);
}

Var kl_categorical(const CategoricalLogits& q, std::span<const double> p) {
  const Tensor& lv = q.logits.value();
  if (lv.rank() < 1 || lv.cols() != p.size()) {
    throw ShapeError("kl_categorical: logits " + shape_string(lv.shape()) + " for " +
                     std::to_string(p.size()) + " classes");
  }
  std::vector<double> log_p(p.size());
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (!(p[k] > 0.0)) {
      throw NumericError("kl_categorical: prior probability of class " + std::to_string(k) +
                         " is not positive");
    }
    log_p[k] = std::log(p[k]);
  }
  Tape& tape = *q.logits.tape;
  Var log_q = log_softmax(q.logits);
  Var q_prob = softmax(q.logits);
  Var log_ratio = sub(log_q, tape.constant(Tensor(Shape{p.size()}, std::move(log_p))));
  return sum_last(mul(q_prob, log_ratio));
}

Var gumbel_softmax_sample(Var logits, double tau, const Tensor& g) {
  if (!(tau > 0.0)) throw ConfigError("gumbel_softmax_sample: tau must be positive");
  if (g.shape() != logits.shape()) {
    throw ShapeError("gumbel_softmax_sample: noise " + shape_string(g.shape()) + " vs logits " +
                     shape_string(logits.shape()));
  }
  return softmax(mul_scalar(add(logits, logits.tape->constant(g)), 1.0 / tau));
}

Var straight_through_onehot(Var relaxed) { return straight_through(relaxed, relaxed.value()); }

Var log_likelihood(const DecoderOutput& params, const Tensor& x) {
  const Tensor& loc = params.loc.value();
  if (loc.shape() != x.shape() || x.rank() < 1) {
    throw ShapeError("log_likelihood: decoder output " + shape_string(loc.shape()) +
                     " vs data " + shape_string(x.shape()));
  }
  Tape& tape = *params.loc.tape;
  const double batch = static_cast<double>(x.rank() == 1 ? 1 : x.size() / x.cols());
  Var xv = tape.constant(x);
  Var per_element;
  if (params.kind == LikelihoodKind::bernoulli) {
    for (double v : x.values()) {
      if (v < 0.0 || v > 1.0) {
        throw DataError("log_likelihood: bernoulli data must lie in [0, 1], got " +
                        std::to_string(v));
      }
    }
    // x log sigmoid(a) + (1 - x) log(1 - sigmoid(a)) = x a - softplus(a)
    per_element = sub(mul(xv, params.loc), softplus(params.loc));
  } else {
    if (params.log_var.shape() != x.shape()) {
      throw ShapeError("log_likelihood: gaussian log-variance " +
                       shape_string(params.log_var.shape()) + " vs data " +
                       shape_string(x.shape()));
    }
    // -0.5 [log 2pi + log_var + (x - mu)^2 exp(-log_var)]
    Var maha = mul(square(sub(xv, params.loc)), exp(neg(params.log_var)));
    per_element =
        mul_scalar(add_scalar(add(params.log_var, maha), std::log(2.0 * std::numbers::pi)), -0.5);
  }
  return mul_scalar(sum(per_element), 1.0 / batch);
}

}  // namespace dvt
