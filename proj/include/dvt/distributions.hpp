#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dvt/autodiff.hpp"
#include "dvt/tensor.hpp"

namespace dvt {

// Batch of diagonal Gaussians; mu and log_var are (B, J), or (J) for one.
struct DiagGaussian {
  Var mu;
  Var log_var;
};

// Unnormalised class scores, (B, K) or (K).
struct CategoricalLogits {
  Var logits;
};

enum class LikelihoodKind { bernoulli, gaussian };

const char* to_string(LikelihoodKind kind);
LikelihoodKind likelihood_from_string(std::string_view name);

// Decoder output. Bernoulli decoders keep the pre-sigmoid logits in `loc`
// (means are sigmoid(loc)); Gaussian decoders store the mean in `loc` and the
// log-variance in `log_var`.
struct DecoderOutput {
  LikelihoodKind kind = LikelihoodKind::bernoulli;
  Var loc;
  Var log_var;
};

// Fixed latent mixture: p(y) = Cat(pi), p(z|y) = N(means[y], sigma^2 I).
class GmmPrior {
 public:
  GmmPrior(std::vector<double> pi, Tensor means, double sigma);

  std::size_t classes() const { return pi_.size(); }
  std::size_t latent_dim() const { return means_.dim(1); }
  const std::vector<double>& pi() const { return pi_; }
  const Tensor& means() const { return means_; }
  double sigma() const { return sigma_; }

  friend bool operator==(const GmmPrior&, const GmmPrior&) = default;

 private:
  std::vector<double> pi_;
  Tensor means_;  // (K, J)
  double sigma_;
};

// mu + exp(log_var / 2) * eps.
Var sample_gaussian_reparam(const DiagGaussian& q, const Tensor& eps);

// KL(q || N(p_mu, p_sigma^2 I)) reduced over the trailing (latent) axis.
// `p_mu` matches q's shape, or is a single (J) mean shared by the batch.
Var kl_diag_gaussians(const DiagGaussian& q, const Tensor& p_mu, double p_sigma);

// (B, K) matrix of KL(q_b || N(means[k], sigma^2 I)) for every component.
Var kl_to_components(const DiagGaussian& q, const GmmPrior& prior);

// KL(softmax(logits) || p) reduced over the trailing (class) axis.
Var kl_categorical(const CategoricalLogits& q, std::span<const double> p);

// softmax((logits + g) / tau) over the trailing axis.
Var gumbel_softmax_sample(Var logits, double tau, const Tensor& g);

// One-hot of argmax(relaxed) forward, identity backward. Lowest index wins ties.
Var straight_through_onehot(Var relaxed);

// log p(x | decoder) summed over features and averaged over the batch.
Var log_likelihood(const DecoderOutput& params, const Tensor& x);

}  // namespace dvt
