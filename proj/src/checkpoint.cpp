#include "dvt/checkpoint.hpp"

#include <fstream>
#include <json.hpp>
#include <sstream>

#include "dvt/error.hpp"
#include "dvt/io.hpp"

namespace dvt {
namespace {

using nlohmann::json;

json tensor_json(const Tensor& t) { return json{{"shape", t.shape()}, {"values", t.storage()}}; }

Tensor tensor_from(const json& j) {
  return Tensor(j.at("shape").get<Shape>(), j.at("values").get<std::vector<double>>());
}

json layer_json(const Layer& l) {
  return json{{"activation", l.activation == Activation::relu ? "relu" : "none"},
              {"weight", tensor_json(l.weight)},
              {"bias", tensor_json(l.bias)}};
}

Layer layer_from(const json& j) {
  const std::string act = j.at("activation").get<std::string>();
  if (act != "relu" && act != "none") throw DataError("checkpoint: unknown activation '" + act + "'");
  Layer l{tensor_from(j.at("weight")), tensor_from(j.at("bias")),
          act == "relu" ? Activation::relu : Activation::none};
  if (l.weight.rank() != 2 || l.bias.rank() != 1 || l.bias.dim(0) != l.weight.dim(1)) {
    throw DataError("checkpoint: layer weight " + shape_string(l.weight.shape()) +
                    " does not match bias " + shape_string(l.bias.shape()));
  }
  return l;
}

json layers_json(const std::vector<Layer>& layers) {
  json arr = json::array();
  for (const Layer& l : layers) arr.push_back(layer_json(l));
  return arr;
}

std::vector<Layer> layers_from(const json& j) {
  std::vector<Layer> out;
  for (const json& l : j) out.push_back(layer_from(l));
  return out;
}

}  // namespace

std::string checkpoint_to_json(const DvtModel& model) {
  const ArchConfig& a = model.arch();
  json doc;
  doc["format"] = "dvt-checkpoint";
  doc["version"] = 1;
  doc["classes"] = model.classes();
  doc["arch"] = {{"shared_hidden", a.shared_hidden},   {"adapter_width", a.adapter_width},
                 {"latent_dim", a.latent_dim},         {"shared_classifier", a.shared_classifier},
                 {"mu_scale", a.mu_scale},             {"sigma", a.sigma},
                 {"class_weights", a.class_weights}};
  json domains = json::array();
  for (const DomainSpec& d : model.domains()) {
    domains.push_back({{"id", d.id}, {"input_dim", d.input_dim}, {"likelihood", to_string(d.likelihood)}});
  }
  doc["domains"] = domains;
  const GmmPrior& p = model.prior();
  doc["prior"] = {{"pi", p.pi()}, {"means", tensor_json(p.means())}, {"sigma", p.sigma()}};
  doc["seed_lineage"] = model.seed_lineage();

  json nets = json::array();
  for (std::size_t d = 0; d < model.domain_count(); ++d) {
    const DomainNets& n = model.nets(d);
    nets.push_back({{"adapter", layers_json(n.adapter)},
                    {"head", layer_json(n.encoder_head)},
                    {"classifier", layers_json(n.classifier)},
                    {"decoder", layers_json(n.decoder)}});
  }
  std::vector<Layer> shared_classifier;
  if (a.shared_classifier) shared_classifier = model.classifier(0);
  doc["layers"] = {{"shared", layers_json(model.shared_encoder())},
                   {"domains", nets},
                   {"classifier", layers_json(shared_classifier)}};
  return doc.dump(1);
}

DvtModel checkpoint_from_json(const std::string& text) {
  try {
    const json doc = json::parse(text);
    if (doc.at("format").get<std::string>() != "dvt-checkpoint") {
      throw DataError("checkpoint: unexpected format tag");
    }
    if (doc.at("version").get<int>() != 1) throw DataError("checkpoint: unsupported version");
    const json& ja = doc.at("arch");
    ArchConfig arch;
    arch.shared_hidden = ja.at("shared_hidden").get<std::vector<std::size_t>>();
    arch.adapter_width = ja.at("adapter_width").get<std::size_t>();
    arch.latent_dim = ja.at("latent_dim").get<std::size_t>();
    arch.shared_classifier = ja.at("shared_classifier").get<bool>();
    arch.mu_scale = ja.at("mu_scale").get<double>();
    arch.sigma = ja.at("sigma").get<double>();
    arch.class_weights = ja.at("class_weights").get<std::vector<double>>();

    std::vector<DomainSpec> domains;
    for (const json& d : doc.at("domains")) {
      domains.push_back({d.at("id").get<std::string>(), d.at("input_dim").get<std::size_t>(),
                         likelihood_from_string(d.at("likelihood").get<std::string>())});
    }
    const json& jp = doc.at("prior");
    GmmPrior prior(jp.at("pi").get<std::vector<double>>(), tensor_from(jp.at("means")),
                   jp.at("sigma").get<double>());

    const json& jl = doc.at("layers");
    std::vector<DomainNets> nets;
    for (const json& n : jl.at("domains")) {
      nets.push_back(DomainNets{layers_from(n.at("adapter")), layer_from(n.at("head")),
                                layers_from(n.at("classifier")), layers_from(n.at("decoder"))});
    }
    return DvtModel(std::move(arch), std::move(domains), doc.at("classes").get<std::size_t>(),
                    layers_from(jl.at("shared")), std::move(nets), layers_from(jl.at("classifier")),
                    std::move(prior), doc.at("seed_lineage").get<std::vector<std::uint64_t>>());
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint: malformed document: ") + e.what());
  } catch (const ShapeError& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const DvtModel& model, const std::filesystem::path& path) {
  write_file_atomic(path, checkpoint_to_json(model));
}

DvtModel load_checkpoint(const std::filesystem::path& path) {
  return checkpoint_from_json(read_file(path));
}

}  // namespace dvt
