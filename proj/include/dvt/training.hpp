#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dvt/data.hpp"
#include "dvt/losses.hpp"
#include "dvt/model.hpp"

namespace dvt {

enum class Regime { semi_supervised, transfer, multi_task };

const char* to_string(Regime regime);
Regime regime_from_string(std::string_view name);

struct AdamConfig {
  double learning_rate = 0.005;
  double beta1 = 0.5;
  double beta2 = 0.5;
  double epsilon = 0.001;
};

struct EarlyStop {
  bool enabled = false;  // cycle-consistency early stopping
  std::size_t patience = 3;
  std::size_t eval_every = 500;
};

struct TrainConfig {
  Regime regime = Regime::semi_supervised;
  LossWeights weights;
  AdamConfig adam;
  std::size_t steps = 15000;
  // Supervised rows are used whole when there are at most this many.
  std::size_t sup_batch_size = 512;
  std::size_t unsup_batch_size = 100;
  std::uint64_t seed = 0;
  EarlyStop early_stop;
  std::size_t ensemble_size = 10;
  // Transfer only: start the target-specific layers from the source ones.
  bool warm_start = true;

  void validate() const;
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t t = 0;
};

// One bias-corrected Adam update of `params` in place. The state is sized on
// first use.
void adam_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
               AdamState& state, const AdamConfig& cfg);

struct TraceRow {
  std::size_t step = 0;
  double loss = 0.0;
  LossTerms terms;
  std::optional<double> cycle;
};

struct TrainResult {
  DvtModel model;
  std::vector<TraceRow> trace;
  std::size_t steps_run = 0;
  std::optional<double> best_cycle;
};

// Trains the shared trunk and the dataset's domain on that domain alone.
TrainResult train_semi_supervised(const DvtModel& model, const Dataset& data,
                                  const TrainConfig& cfg);

// Trains only the target-specific layers; the shared trunk (and a shared
// classifier) stay frozen. `source` enables warm starting from its domain and
// cycle-consistency early stopping.
TrainResult train_transfer(const DvtModel& model, const Dataset& target, const TrainConfig& cfg,
                           const Dataset* source = nullptr);

// Joint training of every parameter on eta J_source + (1 - eta) J_target.
TrainResult train_multi_task(const DvtModel& model, const Dataset& source, const Dataset& target,
                             const TrainConfig& cfg);

// Unweighted mean F1 of C_S(G_T(F_T(G_S(x)))) against `labels`, where G are
// posterior-mean encoders, F_T the target decoder mean and C_S the source
// classifier.
double cycle_consistency_score(const DvtModel& model, std::size_t source, std::size_t target,
                               const Tensor& x, const std::vector<int>& labels);

struct EnsemblePrediction {
  std::vector<int> labels;
  Tensor probabilities;
};

// Mean of member class probabilities; ties go to the lowest class index.
EnsemblePrediction ensemble_predict(const std::vector<const DvtModel*>& models,
                                    const std::string& domain, const Tensor& x);

// Runs `train(seed + i)` for i < count on up to `threads` workers and returns
// results in member order.
std::vector<TrainResult> train_ensemble(const std::function<TrainResult(std::uint64_t)>& train,
                                        std::size_t count, std::uint64_t seed,
                                        std::size_t threads);

std::string trace_csv(const std::vector<TraceRow>& trace);

}  // namespace dvt
