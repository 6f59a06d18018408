#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dvt/autodiff.hpp"
#include "dvt/distributions.hpp"
#include "dvt/tensor.hpp"

namespace dvt {

enum class Activation { relu, none };

// Fully connected layer: y = act(x W + b), W is (in, out), b is (out).
struct Layer {
  Tensor weight;
  Tensor bias;
  Activation activation = Activation::relu;

  std::size_t in_dim() const { return weight.dim(0); }
  std::size_t out_dim() const { return weight.dim(1); }
  friend bool operator==(const Layer&, const Layer&) = default;
};

struct ArchConfig {
  // Widths of the shared encoder trunk (ReLU). The decoder mirrors them.
  std::vector<std::size_t> shared_hidden{32, 32};
  // Width of a per-domain input layer placed before the trunk. Zero means
  // "only when domains have different input dimensions", using the width of
  // the first shared layer.
  std::size_t adapter_width = 0;
  // Zero selects max(K, 8).
  std::size_t latent_dim = 0;
  bool shared_classifier = false;
  double mu_scale = 10.0;
  double sigma = 0.1;
  // Prior class probabilities; empty means uniform.
  std::vector<double> class_weights;

  friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

struct DomainSpec {
  std::string id;
  std::size_t input_dim = 0;
  LikelihoodKind likelihood = LikelihoodKind::gaussian;

  friend bool operator==(const DomainSpec&, const DomainSpec&) = default;
};

// Per-domain parameters. `adapter` is empty unless the model uses input adapters.
struct DomainNets {
  std::vector<Layer> adapter;
  Layer encoder_head;  // -> 2J (mean, log-variance)
  std::vector<Layer> classifier;
  std::vector<Layer> decoder;

  friend bool operator==(const DomainNets&, const DomainNets&) = default;
};

enum class ParamGroup { shared_encoder, encoder, classifier, decoder };

struct ParamInfo {
  std::string name;
  ParamGroup group;
  // Owning domain index, or -1 for parameters shared by all domains.
  int domain;
};

// Places component means at mu_scale times the first K unit vectors of R^J.
GmmPrior init_gmm_prior(std::size_t classes, std::size_t latent_dim, double mu_scale,
                        double sigma, std::vector<double> class_weights = {});

class DvtModel {
 public:
  DvtModel(ArchConfig arch, std::vector<DomainSpec> domains, std::size_t classes,
           std::vector<Layer> shared, std::vector<DomainNets> nets,
           std::vector<Layer> shared_classifier, GmmPrior prior,
           std::vector<std::uint64_t> seed_lineage);

  const ArchConfig& arch() const { return arch_; }
  const std::vector<DomainSpec>& domains() const { return domains_; }
  std::size_t domain_count() const { return domains_.size(); }
  std::size_t classes() const { return classes_; }
  std::size_t latent_dim() const { return prior_.latent_dim(); }
  const GmmPrior& prior() const { return prior_; }
  bool uses_adapters() const;

  // Throws ConfigError for unknown ids.
  std::size_t domain_index(std::string_view id) const;

  const std::vector<Layer>& shared_encoder() const { return shared_; }
  const DomainNets& nets(std::size_t domain) const;
  DomainNets& nets(std::size_t domain);
  // Classifier used by `domain`: its own, or the shared one.
  const std::vector<Layer>& classifier(std::size_t domain) const;

  // All parameter tensors in a fixed order, with matching metadata.
  std::vector<const Tensor*> parameters() const;
  std::vector<Tensor*> parameters();
  std::vector<ParamInfo> parameter_info() const;
  std::size_t parameter_count() const;

  std::vector<std::uint64_t>& seed_lineage() { return seed_lineage_; }
  const std::vector<std::uint64_t>& seed_lineage() const { return seed_lineage_; }

  friend bool operator==(const DvtModel&, const DvtModel&) = default;

 private:
  void validate() const;

  ArchConfig arch_;
  std::vector<DomainSpec> domains_;
  std::size_t classes_;
  std::vector<Layer> shared_;
  std::vector<DomainNets> nets_;
  std::vector<Layer> shared_classifier_;
  GmmPrior prior_;
  std::vector<std::uint64_t> seed_lineage_;
};

// Default: 2 shared + 1 domain-specific encoder layers, single-layer
// classifier per domain, decoder mirroring the encoder. Weights are drawn
// uniform(-a, a) with a = sqrt(6 / (in + out)); biases start at zero.
DvtModel build_model(const ArchConfig& arch, const std::vector<DomainSpec>& domains,
                     std::size_t classes, std::uint64_t seed);

// Copies `from`'s domain-specific parameters onto `to` where shapes agree.
void copy_domain_parameters(DvtModel& model, std::size_t from, std::size_t to);

Tensor flatten_parameters(const DvtModel& model);
void assign_parameters(DvtModel& model, const Tensor& flat);

using ParamFilter = std::function<bool(const ParamInfo&)>;

// A model whose parameters are leaves on a tape.
class BoundModel {
 public:
  // Parameters accepted by `trainable` become variables, the rest constants.
  BoundModel(Tape& tape, const DvtModel& model, const ParamFilter& trainable = {});
  // Parameters are consecutive segments of `flat` (see flatten_parameters).
  BoundModel(Tape& tape, const DvtModel& model, Var flat);

  Tape& tape() const { return *tape_; }
  const DvtModel& model() const { return *model_; }

  DiagGaussian encode(std::size_t domain, const Tensor& x) const;
  CategoricalLogits classify(std::size_t domain, Var z) const;
  DecoderOutput decode(std::size_t domain, Var z) const;

  // Gradients in parameters() order; zero tensors for frozen parameters.
  std::vector<Tensor> gradients(const Gradients& grads) const;

 private:
  Var apply(std::span<const Layer> layers, Var x) const;
  std::size_t param_offset(const Tensor* t) const;

  Tape* tape_;
  const DvtModel* model_;
  std::vector<Var> params_;
  std::vector<const Tensor*> tensors_;
};

// Deterministic inference through posterior means.
Tensor encode_mean(const DvtModel& model, std::size_t domain, const Tensor& x);
// Decoder means: sigmoid(logits) for Bernoulli, the mean head for Gaussian.
Tensor decode_mean(const DvtModel& model, std::size_t domain, const Tensor& z);
// softmax(classify(z)) for latent codes z.
Tensor classify_proba(const DvtModel& model, std::size_t domain, const Tensor& z);
// Class probabilities of inputs x, classified at their posterior means.
Tensor predict_proba(const DvtModel& model, std::size_t domain, const Tensor& x);
std::vector<int> argmax_rows(const Tensor& probabilities);

}  // namespace dvt
