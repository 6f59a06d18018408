#include "dvt/config.hpp"

#include <charconv>
#include <set>
#include <sstream>

#include "dvt/error.hpp"

namespace dvt {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

class Reader {
 public:
  explicit Reader(std::map<std::string, std::string> kv) : kv_(std::move(kv)) {}

  bool has(const std::string& key, bool consume = false) {
    if (consume) used_.insert(key);
    return kv_.count(key) != 0;
  }

  std::string str(const std::string& key, const std::string& fallback) {
    used_.insert(key);
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
  }

  std::string required(const std::string& key) {
    if (!has(key)) throw ConfigError("config: missing required key '" + key + "'");
    return str(key, "");
  }

  double real(const std::string& key, double fallback) {
    used_.insert(key);
    if (!has(key)) return fallback;
    const std::string v = str(key, "");
    double out = 0.0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
      throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
    }
    return out;
  }

  std::size_t count(const std::string& key, std::size_t fallback) {
    used_.insert(key);
    if (!has(key)) return fallback;
    return parse_count(key, str(key, ""));
  }

  bool flag(const std::string& key, bool fallback) {
    used_.insert(key);
    if (!has(key)) return fallback;
    const std::string v = str(key, "");
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config: '" + key + "' expects true or false, got '" + v + "'");
  }

  std::vector<std::string> list(const std::string& key) {
    std::vector<std::string> out;
    std::stringstream ss(str(key, ""));
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(trim(item));
    return out;
  }

  std::vector<std::string> keys_with_prefix(const std::string& prefix) {
    std::vector<std::string> out;
    for (const auto& [k, v] : kv_) {
      if (k.rfind(prefix, 0) == 0) out.push_back(k);
    }
    return out;
  }

  void reject_unused() const {
    for (const auto& [k, v] : kv_) {
      if (!used_.count(k)) throw ConfigError("config: unknown key '" + k + "'");
    }
  }

  static std::size_t parse_count(const std::string& key, const std::string& v) {
    std::size_t out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
      throw ConfigError("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
    }
    return out;
  }

 private:
  std::map<std::string, std::string> kv_;
  std::set<std::string> used_;
};

}  // namespace

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> out;
  std::stringstream ss(text);
  std::string line;
  for (std::size_t n = 1; std::getline(ss, line); ++n) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(n) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(n) + ": empty key");
    if (!out.emplace(key, value).second) {
      throw ConfigError("config line " + std::to_string(n) + ": duplicate key '" + key + "'");
    }
  }
  return out;
}

LikelihoodKind RunConfig::likelihood_of(const std::string& domain) const {
  auto it = domain_likelihood.find(domain);
  return it == domain_likelihood.end() ? likelihood : it->second;
}

RunConfig run_config_from_text(const std::string& text, const std::filesystem::path& base_dir) {
  Reader r(parse_key_values(text));
  auto path = [&](const std::string& v) -> std::filesystem::path {
    if (v.empty()) return {};
    std::filesystem::path p(v);
    return p.is_absolute() ? p : base_dir / p;
  };
  RunConfig c;
  c.regime_name = r.required("regime");
  c.train.regime = regime_from_string(c.regime_name);
  c.manifest = path(r.required("manifest"));
  c.source = r.str("source", "");
  c.target = r.str("target", "");
  c.from_checkpoint = path(r.str("from_checkpoint", ""));
  c.out_dir = path(r.str("out_dir", "run"));

  TrainConfig& t = c.train;
  t.seed = r.count("seed", 0);
  t.steps = r.count("steps", t.steps);
  t.sup_batch_size = r.count("sup_batch_size", t.sup_batch_size);
  t.unsup_batch_size = r.count("unsup_batch_size", t.unsup_batch_size);
  t.adam.learning_rate = r.real("learning_rate", t.adam.learning_rate);
  t.adam.beta1 = r.real("beta1", t.adam.beta1);
  t.adam.beta2 = r.real("beta2", t.adam.beta2);
  t.adam.epsilon = r.real("epsilon", t.adam.epsilon);
  t.weights.gamma = r.real("gamma", t.weights.gamma);
  t.weights.rho = r.real("rho", t.weights.rho);
  t.weights.eta = r.real("eta", t.weights.eta);
  t.weights.tau = r.real("tau", t.weights.tau);
  const std::string early = r.str("early_stop", "off");
  if (early == "cycle_consistency") {
    t.early_stop.enabled = true;
  } else if (early != "off") {
    throw ConfigError("config: early_stop must be off or cycle_consistency, got '" + early + "'");
  }
  t.early_stop.patience = r.count("patience", t.early_stop.patience);
  t.early_stop.eval_every = r.count("eval_every", t.early_stop.eval_every);
  t.ensemble_size = r.count("ensemble_size", 1);
  t.warm_start = r.flag("warm_start", t.warm_start);
  c.threads = r.count("threads", 1);

  if (r.has("hidden", true)) {
    c.arch.shared_hidden.clear();
    for (const std::string& w : r.list("hidden")) c.arch.shared_hidden.push_back(Reader::parse_count("hidden", w));
  }
  c.arch.latent_dim = r.count("latent_dim", c.arch.latent_dim);
  c.arch.adapter_width = r.count("adapter_width", c.arch.adapter_width);
  c.arch.shared_classifier = r.flag("shared_classifier", c.arch.shared_classifier);
  c.arch.mu_scale = r.real("mu_scale", c.arch.mu_scale);
  c.arch.sigma = r.real("sigma", c.arch.sigma);
  if (r.has("class_weights", true)) {
    for (const std::string& w : r.list("class_weights")) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(w, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != w.size() || w.empty()) throw ConfigError("config: bad class weight '" + w + "'");
      c.arch.class_weights.push_back(v);
    }
  }
  c.likelihood = likelihood_from_string(r.str("likelihood", "gaussian"));
  for (const std::string& key : r.keys_with_prefix("likelihood.")) {
    c.domain_likelihood[key.substr(11)] = likelihood_from_string(r.str(key, ""));
  }
  c.eval_split = r.str("eval_split", "test");
  r.reject_unused();

  if (c.train.regime != Regime::transfer && c.source.empty()) {
    throw ConfigError("config: regime " + c.regime_name + " needs a 'source' domain");
  }
  if (c.train.regime != Regime::semi_supervised && c.target.empty()) {
    throw ConfigError("config: regime " + c.regime_name + " needs a 'target' domain");
  }
  if (c.threads < 1) throw ConfigError("config: threads must be >= 1");
  c.train.validate();
  return c;
}

}  // namespace dvt
