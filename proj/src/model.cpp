#include "dvt/model.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "dvt/error.hpp"
#include "dvt/rng.hpp"

namespace dvt {
namespace {

Layer make_layer(Rng& rng, std::size_t in, std::size_t out, Activation act) {
  Layer layer{Tensor(Shape{in, out}), Tensor(Shape{out}), act};
  const double a = std::sqrt(6.0 / static_cast<double>(in + out));
  for (double& w : layer.weight.values()) w = (2.0 * rng.uniform() - 1.0) * a;
  return layer;
}

std::vector<Layer> make_stack(Rng& rng, std::size_t in, const std::vector<std::size_t>& widths,
                              std::size_t out) {
  std::vector<Layer> layers;
  std::size_t prev = in;
  for (std::size_t w : widths) {
    layers.push_back(make_layer(rng, prev, w, Activation::relu));
    prev = w;
  }
  layers.push_back(make_layer(rng, prev, out, Activation::none));
  return layers;
}

std::size_t decoder_out_dim(const DomainSpec& d) {
  return d.likelihood == LikelihoodKind::gaussian ? 2 * d.input_dim : d.input_dim;
}

bool heterogeneous(const std::vector<DomainSpec>& domains) {
  return std::any_of(domains.begin(), domains.end(),
                     [&](const DomainSpec& d) { return d.input_dim != domains[0].input_dim; });
}

std::size_t effective_adapter_width(const ArchConfig& arch, const std::vector<DomainSpec>& domains) {
  if (arch.adapter_width > 0) return arch.adapter_width;
  if (!heterogeneous(domains)) return 0;
  return arch.shared_hidden.empty() ? 32 : arch.shared_hidden.front();
}

}  // namespace

GmmPrior init_gmm_prior(std::size_t classes, std::size_t latent_dim, double mu_scale,
                        double sigma, std::vector<double> class_weights) {
  if (classes == 0) throw ConfigError("init_gmm_prior: need at least one class");
  if (latent_dim < classes) {
    throw ConfigError("init_gmm_prior: latent dim " + std::to_string(latent_dim) +
                      " is smaller than the number of classes " + std::to_string(classes));
  }
  if (!(mu_scale > 0.0)) throw ConfigError("init_gmm_prior: mu_scale must be positive");
  if (!(sigma > 0.0)) throw ConfigError("init_gmm_prior: sigma must be positive");
  if (class_weights.empty()) {
    class_weights.assign(classes, 1.0 / static_cast<double>(classes));
  } else if (class_weights.size() != classes) {
    throw ConfigError("init_gmm_prior: " + std::to_string(class_weights.size()) +
                      " class weights for " + std::to_string(classes) + " classes");
  }
  Tensor means(Shape{classes, latent_dim});
  for (std::size_t k = 0; k < classes; ++k) means.at(k, k) = mu_scale;
  return GmmPrior(std::move(class_weights), std::move(means), sigma);
}

DvtModel::DvtModel(ArchConfig arch, std::vector<DomainSpec> domains, std::size_t classes,
                   std::vector<Layer> shared, std::vector<DomainNets> nets,
                   std::vector<Layer> shared_classifier, GmmPrior prior,
                   std::vector<std::uint64_t> seed_lineage)
    : arch_(std::move(arch)),
      domains_(std::move(domains)),
      classes_(classes),
      shared_(std::move(shared)),
      nets_(std::move(nets)),
      shared_classifier_(std::move(shared_classifier)),
      prior_(std::move(prior)),
      seed_lineage_(std::move(seed_lineage)) {
  validate();
}

void DvtModel::validate() const {
  if (domains_.empty()) throw ConfigError("model: need at least one domain");
  if (nets_.size() != domains_.size()) throw ConfigError("model: domain/network count mismatch");
  if (prior_.classes() != classes_) throw ConfigError("model: prior/class count mismatch");
  const std::size_t j = prior_.latent_dim();
  for (std::size_t d = 0; d < domains_.size(); ++d) {
    for (std::size_t e = 0; e < d; ++e) {
      if (domains_[e].id == domains_[d].id) {
        throw ConfigError("model: duplicate domain id '" + domains_[d].id + "'");
      }
    }
    const DomainNets& n = nets_[d];
    if (n.encoder_head.out_dim() != 2 * j) {
      throw ShapeError("model: encoder head of '" + domains_[d].id + "' must output 2J = " +
                       std::to_string(2 * j));
    }
    const auto& cls = classifier(d);
    if (cls.empty() || cls.front().in_dim() != j || cls.back().out_dim() != classes_) {
      throw ShapeError("model: classifier of '" + domains_[d].id + "' must map J to K");
    }
    if (n.decoder.empty() || n.decoder.front().in_dim() != j ||
        n.decoder.back().out_dim() != decoder_out_dim(domains_[d])) {
      throw ShapeError("model: decoder of '" + domains_[d].id + "' does not match its domain");
    }
  }
}

bool DvtModel::uses_adapters() const { return !nets_.front().adapter.empty(); }

std::size_t DvtModel::domain_index(std::string_view id) const {
  for (std::size_t d = 0; d < domains_.size(); ++d) {
    if (domains_[d].id == id) return d;
  }
  throw ConfigError("unknown domain '" + std::string(id) + "'");
}

const DomainNets& DvtModel::nets(std::size_t domain) const {
  if (domain >= nets_.size()) throw ConfigError("unknown domain index " + std::to_string(domain));
  return nets_[domain];
}

DomainNets& DvtModel::nets(std::size_t domain) {
  if (domain >= nets_.size()) throw ConfigError("unknown domain index " + std::to_string(domain));
  return nets_[domain];
}

const std::vector<Layer>& DvtModel::classifier(std::size_t domain) const {
  return arch_.shared_classifier ? shared_classifier_ : nets(domain).classifier;
}

std::vector<ParamInfo> DvtModel::parameter_info() const {
  std::vector<ParamInfo> info;
  auto add_layers = [&info](const std::vector<Layer>& layers, const std::string& prefix,
                            ParamGroup group, int domain) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      info.push_back({prefix + "." + std::to_string(i) + ".weight", group, domain});
      info.push_back({prefix + "." + std::to_string(i) + ".bias", group, domain});
    }
  };
  add_layers(shared_, "shared", ParamGroup::shared_encoder, -1);
  for (std::size_t d = 0; d < nets_.size(); ++d) {
    const int di = static_cast<int>(d);
    const std::string& id = domains_[d].id;
    add_layers(nets_[d].adapter, id + ".adapter", ParamGroup::encoder, di);
    add_layers({nets_[d].encoder_head}, id + ".head", ParamGroup::encoder, di);
    add_layers(nets_[d].classifier, id + ".classifier", ParamGroup::classifier, di);
    add_layers(nets_[d].decoder, id + ".decoder", ParamGroup::decoder, di);
  }
  add_layers(shared_classifier_, "classifier", ParamGroup::classifier, -1);
  return info;
}

std::vector<const Tensor*> DvtModel::parameters() const {
  std::vector<const Tensor*> out;
  auto add_layers = [&out](const std::vector<Layer>& layers) {
    for (const Layer& l : layers) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
  };
  add_layers(shared_);
  for (const DomainNets& n : nets_) {
    add_layers(n.adapter);
    out.push_back(&n.encoder_head.weight);
    out.push_back(&n.encoder_head.bias);
    add_layers(n.classifier);
    add_layers(n.decoder);
  }
  add_layers(shared_classifier_);
  return out;
}

std::vector<Tensor*> DvtModel::parameters() {
  std::vector<Tensor*> out;
  for (const Tensor* t : std::as_const(*this).parameters()) out.push_back(const_cast<Tensor*>(t));
  return out;
}

std::size_t DvtModel::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor* t : parameters()) n += t->size();
  return n;
}

DvtModel build_model(const ArchConfig& arch, const std::vector<DomainSpec>& domains,
                     std::size_t classes, std::uint64_t seed) {
  if (domains.empty()) throw ConfigError("build_model: need at least one domain");
  if (classes == 0) throw ConfigError("build_model: need at least one class");
  for (const DomainSpec& d : domains) {
    if (d.input_dim == 0) throw ConfigError("build_model: domain '" + d.id + "' has no features");
  }
  const std::size_t j = arch.latent_dim ? arch.latent_dim : std::max<std::size_t>(classes, 8);
  GmmPrior prior = init_gmm_prior(classes, j, arch.mu_scale, arch.sigma, arch.class_weights);

  Rng rng(seed);
  const std::size_t adapter = effective_adapter_width(arch, domains);
  const std::size_t trunk_in = adapter ? adapter : domains.front().input_dim;

  std::vector<Layer> shared;
  std::size_t prev = trunk_in;
  for (std::size_t w : arch.shared_hidden) {
    shared.push_back(make_layer(rng, prev, w, Activation::relu));
    prev = w;
  }
  const std::size_t trunk_out = prev;

  // Decoder hidden widths mirror the encoder: trunk reversed, then the adapter.
  std::vector<std::size_t> decoder_hidden(arch.shared_hidden.rbegin(), arch.shared_hidden.rend());
  if (adapter) decoder_hidden.push_back(adapter);

  std::vector<DomainNets> nets;
  for (const DomainSpec& d : domains) {
    DomainNets n;
    if (adapter) n.adapter.push_back(make_layer(rng, d.input_dim, adapter, Activation::relu));
    n.encoder_head = make_layer(rng, trunk_out, 2 * j, Activation::none);
    if (!arch.shared_classifier) n.classifier.push_back(make_layer(rng, j, classes, Activation::none));
    n.decoder = make_stack(rng, j, decoder_hidden, decoder_out_dim(d));
    nets.push_back(std::move(n));
  }
  std::vector<Layer> shared_classifier;
  if (arch.shared_classifier) shared_classifier.push_back(make_layer(rng, j, classes, Activation::none));

  return DvtModel(arch, domains, classes, std::move(shared), std::move(nets),
                  std::move(shared_classifier), std::move(prior), {seed});
}

void copy_domain_parameters(DvtModel& model, std::size_t from, std::size_t to) {
  const DomainNets src = model.nets(from);
  DomainNets& dst = model.nets(to);
  auto copy = [](const std::vector<Layer>& s, std::vector<Layer>& d) {
    if (s.size() != d.size()) return;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i].weight.shape() == d[i].weight.shape()) d[i] = s[i];
    }
  };
  copy(src.adapter, dst.adapter);
  if (src.encoder_head.weight.shape() == dst.encoder_head.weight.shape()) {
    dst.encoder_head = src.encoder_head;
  }
  copy(src.classifier, dst.classifier);
  copy(src.decoder, dst.decoder);
}

Tensor flatten_parameters(const DvtModel& model) {
  std::vector<double> flat;
  flat.reserve(model.parameter_count());
  for (const Tensor* t : model.parameters()) flat.insert(flat.end(), t->values().begin(), t->values().end());
  return Tensor::vector(std::move(flat));
}

void assign_parameters(DvtModel& model, const Tensor& flat) {
  if (flat.rank() != 1 || flat.size() != model.parameter_count()) {
    throw ShapeError("assign_parameters: expected " + std::to_string(model.parameter_count()) +
                     " values, got shape " + shape_string(flat.shape()));
  }
  std::size_t offset = 0;
  for (Tensor* t : model.parameters()) {
    std::copy_n(flat.data() + offset, t->size(), t->data());
    offset += t->size();
  }
}

// ---- BoundModel -----------------------------------------------------------

BoundModel::BoundModel(Tape& tape, const DvtModel& model, const ParamFilter& trainable)
    : tape_(&tape), model_(&model), tensors_(model.parameters()) {
  const std::vector<ParamInfo> info = model.parameter_info();
  params_.reserve(tensors_.size());
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    const bool train = !trainable || trainable(info[i]);
    params_.push_back(train ? tape.variable(*tensors_[i]) : tape.constant(*tensors_[i]));
  }
}

BoundModel::BoundModel(Tape& tape, const DvtModel& model, Var flat)
    : tape_(&tape), model_(&model), tensors_(model.parameters()) {
  std::size_t offset = 0;
  for (const Tensor* t : tensors_) {
    params_.push_back(segment(flat, offset, t->shape()));
    offset += t->size();
  }
  if (offset != flat.value().size()) {
    throw ShapeError("BoundModel: flat parameter vector has " +
                     std::to_string(flat.value().size()) + " values, model needs " +
                     std::to_string(offset));
  }
}

std::size_t BoundModel::param_offset(const Tensor* t) const {
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    if (tensors_[i] == t) return i;
  }
  throw Error("BoundModel: layer does not belong to the bound model");
}

Var BoundModel::apply(std::span<const Layer> layers, Var x) const {
  for (const Layer& layer : layers) {
    const std::size_t w = param_offset(&layer.weight);
    Var h = add(matmul(x, params_[w]), params_[w + 1]);
    x = layer.activation == Activation::relu ? relu(h) : h;
  }
  return x;
}

DiagGaussian BoundModel::encode(std::size_t domain, const Tensor& x) const {
  const DomainNets& n = model_->nets(domain);
  const DomainSpec& spec = model_->domains()[domain];
  if (x.rank() != 2 || x.dim(1) != spec.input_dim) {
    throw ShapeError("encode: domain '" + spec.id + "' expects (B, " +
                     std::to_string(spec.input_dim) + ") inputs, got " + shape_string(x.shape()));
  }
  Var h = tape_->constant(x);
  h = apply(n.adapter, h);
  h = apply(model_->shared_encoder(), h);
  h = apply(std::span<const Layer>(&n.encoder_head, 1), h);
  const std::size_t j = model_->latent_dim();
  return DiagGaussian{slice_last(h, 0, j), slice_last(h, j, 2 * j)};
}

CategoricalLogits BoundModel::classify(std::size_t domain, Var z) const {
  if (z.value().rank() != 2 || z.value().dim(1) != model_->latent_dim()) {
    throw ShapeError("classify: expects (B, " + std::to_string(model_->latent_dim()) +
                     ") latents, got " + shape_string(z.shape()));
  }
  return CategoricalLogits{apply(model_->classifier(domain), z)};
}

DecoderOutput BoundModel::decode(std::size_t domain, Var z) const {
  if (z.value().rank() != 2 || z.value().dim(1) != model_->latent_dim()) {
    throw ShapeError("decode: expects (B, " + std::to_string(model_->latent_dim()) +
                     ") latents, got " + shape_string(z.shape()));
  }
  const DomainSpec& spec = model_->domains()[domain];
  Var out = apply(model_->nets(domain).decoder, z);
  if (spec.likelihood == LikelihoodKind::bernoulli) return DecoderOutput{spec.likelihood, out, {}};
  const std::size_t d = spec.input_dim;
  return DecoderOutput{spec.likelihood, slice_last(out, 0, d), slice_last(out, d, 2 * d)};
}

std::vector<Tensor> BoundModel::gradients(const Gradients& grads) const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const Var& p : params_) out.push_back(grads.of(p));
  return out;
}

// ---- inference ---------------------------------------------------------------

Tensor encode_mean(const DvtModel& model, std::size_t domain, const Tensor& x) {
  Tape tape;
  BoundModel bound(tape, model, [](const ParamInfo&) { return false; });
  return bound.encode(domain, x).mu.value();
}

Tensor decode_mean(const DvtModel& model, std::size_t domain, const Tensor& z) {
  Tape tape;
  BoundModel bound(tape, model, [](const ParamInfo&) { return false; });
  DecoderOutput out = bound.decode(domain, tape.constant(z));
  if (out.kind == LikelihoodKind::bernoulli) return sigmoid(out.loc).value();
  return out.loc.value();
}

Tensor classify_proba(const DvtModel& model, std::size_t domain, const Tensor& z) {
  Tape tape;
  BoundModel bound(tape, model, [](const ParamInfo&) { return false; });
  return softmax(bound.classify(domain, tape.constant(z)).logits).value();
}

Tensor predict_proba(const DvtModel& model, std::size_t domain, const Tensor& x) {
  return classify_proba(model, domain, encode_mean(model, domain, x));
}

std::vector<int> argmax_rows(const Tensor& probabilities) {
  const std::size_t cols = probabilities.cols();
  const std::size_t rows = cols ? probabilities.size() / cols : 0;
  std::vector<int> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = probabilities.data() + r * cols;
    out[r] = static_cast<int>(std::max_element(row, row + cols) - row);
  }
  return out;
}

}  // namespace dvt
