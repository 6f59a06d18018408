#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dvt/model.hpp"
#include "dvt/training.hpp"

namespace dvt {

// Flat `key = value` lines; `#` starts a comment, blank lines are ignored.
// Duplicate keys and malformed lines raise ConfigError naming the line.
std::map<std::string, std::string> parse_key_values(const std::string& text);

// Training run described by a config file. Keys (defaults in brackets):
//
//   regime            semi_supervised | transfer | multi_task  (required)
//   manifest          dataset manifest path, relative to the config file (required)
//   source            source domain id (required except for transfer)
//   target            target domain id (transfer, multi_task)
//   from_checkpoint   trained source checkpoint (transfer; or --from-checkpoint)
//   out_dir           output directory [run]
//   seed [0]  steps [15000]  sup_batch_size [512]  unsup_batch_size [100]
//   learning_rate [0.005]  beta1 [0.5]  beta2 [0.5]  epsilon [0.001]
//   gamma [0.1]  rho [10000]  eta [0.5]  tau [0.5]
//   early_stop        off | cycle_consistency [off]
//   patience [3]  eval_every [500]
//   ensemble_size [1]  threads [1]  warm_start [true]
//   hidden [32,32]  latent_dim [0 = max(K, 8)]  adapter_width [0]
//   shared_classifier [false]  mu_scale [10]  sigma [0.1]  class_weights [uniform]
//   likelihood        gaussian | bernoulli [gaussian], for every domain
//   likelihood.<id>   per-domain override
//   eval_split        split used for the report [test]
struct RunConfig {
  std::string regime_name;
  std::filesystem::path manifest;
  std::string source;
  std::string target;
  std::filesystem::path from_checkpoint;
  std::filesystem::path out_dir = "run";
  TrainConfig train;
  std::size_t threads = 1;
  ArchConfig arch;
  LikelihoodKind likelihood = LikelihoodKind::gaussian;
  std::map<std::string, LikelihoodKind> domain_likelihood;
  std::string eval_split = "test";

  LikelihoodKind likelihood_of(const std::string& domain) const;
};

// Paths are resolved against `base_dir`. Unknown keys are an error.
RunConfig run_config_from_text(const std::string& text, const std::filesystem::path& base_dir);

}  // namespace dvt
