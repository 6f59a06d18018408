#include "dvt/training.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <memory>
#include <mutex>
#include <sstream>
#include <thread>

#include "dvt/error.hpp"
#include "dvt/metrics.hpp"
#include "dvt/rng.hpp"

namespace dvt {

const char* to_string(Regime regime) {
  switch (regime) {
    case Regime::semi_supervised: return "semi_supervised";
    case Regime::transfer: return "transfer";
    case Regime::multi_task: return "multi_task";
  }
  return "?";
}

Regime regime_from_string(std::string_view name) {
  if (name == "semi_supervised") return Regime::semi_supervised;
  if (name == "transfer") return Regime::transfer;
  if (name == "multi_task") return Regime::multi_task;
  throw ConfigError("unknown regime '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
  weights.validate();
  if (steps < 1) throw ConfigError("steps must be >= 1");
  if (sup_batch_size < 1 || unsup_batch_size < 1) throw ConfigError("batch sizes must be >= 1");
  if (!(adam.learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(adam.epsilon > 0.0)) throw ConfigError("Adam epsilon must be > 0");
  if (early_stop.patience < 1 || early_stop.eval_every < 1) {
    throw ConfigError("early stopping needs patience >= 1 and eval_every >= 1");
  }
  if (ensemble_size < 1) throw ConfigError("ensemble_size must be >= 1");
}

void adam_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
               AdamState& state, const AdamConfig& cfg) {
  if (params.size() != grads.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " parameters, " +
                     std::to_string(grads.size()) + " gradients");
  }
  if (state.m.empty() && state.t == 0) {
    for (const Tensor* p : params) {
      state.m.emplace_back(p->shape());
      state.v.emplace_back(p->shape());
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam_step: state does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape() || state.m[i].shape() != grads[i].shape()) {
      throw ShapeError("adam_step: parameter " + std::to_string(i) + " has shape " +
                       shape_string(params[i]->shape()) + ", gradient " +
                       shape_string(grads[i].shape()));
    }
  }
  ++state.t;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    double* p = params[i]->data();
    double* m = state.m[i].data();
    double* v = state.v[i].data();
    const double* g = grads[i].data();
    for (std::size_t j = 0; j < grads[i].size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      p[j] -= cfg.learning_rate * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg.epsilon);
    }
  }
}

namespace {

void check_dataset(const DvtModel& model, const Dataset& data) {
  data.validate();
  if (data.size() == 0) throw DataError("dataset '" + data.domain_id + "' is empty");
  const std::size_t d = model.domain_index(data.domain_id);
  if (data.dim() != model.domains()[d].input_dim) {
    throw ShapeError("dataset '" + data.domain_id + "' has " + std::to_string(data.dim()) +
                     " features, the model expects " + std::to_string(model.domains()[d].input_dim));
  }
  if (data.class_count != model.classes()) {
    throw ConfigError("dataset '" + data.domain_id + "' has " + std::to_string(data.class_count) +
                      " classes, the model has " + std::to_string(model.classes()));
  }
}

class BatchSampler {
 public:
  BatchSampler(const DvtModel& model, const Dataset& data, const TrainConfig& cfg,
               std::uint64_t stream)
      : data_(&data),
        domain_(model.domain_index(data.domain_id)),
        latent_(model.latent_dim()),
        classes_(model.classes()),
        cfg_(&cfg),
        rng_(Rng::derive(cfg.seed, stream)),
        sup_(data.supervised_indices()),
        unsup_(data.unsupervised_indices()) {
    if (unsup_.empty()) {
      for (std::size_t i = 0; i < data.size(); ++i) unsup_.push_back(i);
    }
  }

  DomainBatch draw() {
    DomainBatch b;
    b.domain = domain_;
    const LossWeights& w = cfg_->weights;
    if (!sup_.empty() && (w.gamma < 1.0 || w.rho > 0.0)) {
      std::vector<std::size_t> rows = pick(sup_, cfg_->sup_batch_size);
      b.sup.x = data_->features.take_rows(rows);
      b.sup.labels = data_->labels_of(rows);
      b.sup.eps = rng_.normal_tensor(Shape{rows.size(), latent_});
    }
    if (w.gamma > 0.0) {
      std::vector<std::size_t> rows = pick(unsup_, cfg_->unsup_batch_size);
      b.unsup.x = data_->features.take_rows(rows);
      b.unsup.eps = rng_.normal_tensor(Shape{rows.size(), latent_});
      b.unsup.gumbel = rng_.gumbel_tensor(Shape{rows.size(), classes_});
    }
    return b;
  }

 private:
  std::vector<std::size_t> pick(const std::vector<std::size_t>& pool, std::size_t n) {
    if (pool.size() <= n) return pool;
    std::vector<std::size_t> rows;
    rows.reserve(n);
    for (std::size_t i : rng_.sample_without_replacement(pool.size(), n)) rows.push_back(pool[i]);
    return rows;
  }

  const Dataset* data_;
  std::size_t domain_;
  std::size_t latent_;
  std::size_t classes_;
  const TrainConfig* cfg_;
  Rng rng_;
  std::vector<std::size_t> sup_;
  std::vector<std::size_t> unsup_;
};

using StepLoss = std::function<Var(const BoundModel&, LossTerms*)>;
using CycleEval = std::function<double(const DvtModel&)>;

TrainResult run_training(DvtModel model, const ParamFilter& trainable, const TrainConfig& cfg,
                         const StepLoss& step_loss, const CycleEval& cycle) {
  const std::vector<ParamInfo> info = model.parameter_info();
  std::vector<std::size_t> active;
  for (std::size_t i = 0; i < info.size(); ++i) {
    if (trainable(info[i])) active.push_back(i);
  }
  if (active.empty()) throw ConfigError("training: no trainable parameters");

  TrainResult result{model, {}, 0, std::nullopt};
  result.trace.reserve(cfg.steps);
  AdamState state;
  const bool early = cfg.early_stop.enabled && cycle;
  std::optional<Tensor> best_params;
  std::size_t stale = 0;

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    TraceRow row;
    row.step = step;
    {
      Tape tape;
      BoundModel bound(tape, model, trainable);
      Var loss = step_loss(bound, &row.terms);
      row.loss = loss.value().item();
      if (!std::isfinite(row.loss)) {
        throw NumericError("training: non-finite loss at step " + std::to_string(step));
      }
      const std::vector<Tensor> all = bound.gradients(tape.backward(loss));
      std::vector<Tensor*> params = model.parameters();
      std::vector<Tensor*> p;
      std::vector<Tensor> g;
      for (std::size_t i : active) {
        p.push_back(params[i]);
        g.push_back(all[i]);
      }
      adam_step(p, g, state, cfg.adam);
    }
    result.steps_run = step + 1;
    if (early && (step + 1) % cfg.early_stop.eval_every == 0) {
      const double score = cycle(model);
      row.cycle = score;
      if (!result.best_cycle || score > *result.best_cycle) {
        result.best_cycle = score;
        best_params = flatten_parameters(model);
        stale = 0;
      } else if (++stale >= cfg.early_stop.patience) {
        result.trace.push_back(row);
        break;
      }
    }
    result.trace.push_back(row);
  }
  if (best_params) assign_parameters(model, *best_params);
  result.model = std::move(model);
  return result;
}

CycleEval make_cycle(std::size_t source, std::size_t target, const Dataset& source_data) {
  const std::vector<std::size_t> rows = source_data.supervised_indices();
  if (rows.empty()) return {};
  Tensor x = source_data.features.take_rows(rows);
  std::vector<int> labels = source_data.labels_of(rows);
  return [=](const DvtModel& m) { return cycle_consistency_score(m, source, target, x, labels); };
}

}  // namespace

TrainResult train_semi_supervised(const DvtModel& model, const Dataset& data,
                                  const TrainConfig& cfg) {
  cfg.validate();
  check_dataset(model, data);
  if (data.supervised_indices().empty()) {
    throw DataError("train_semi_supervised: dataset '" + data.domain_id +
                    "' has no supervised rows");
  }
  const int domain = static_cast<int>(model.domain_index(data.domain_id));
  const bool own_classifier = !model.arch().shared_classifier;
  ParamFilter trainable = [=](const ParamInfo& p) {
    return p.domain == domain || (p.domain == -1 && (p.group == ParamGroup::shared_encoder ||
                                                     !own_classifier));
  };
  auto sampler = std::make_shared<BatchSampler>(model, data, cfg, 1);
  StepLoss step = [sampler, &cfg](const BoundModel& bound, LossTerms* terms) {
    return loss_domain(bound, sampler->draw(), cfg.weights, terms);
  };
  return run_training(model, trainable, cfg, step, {});
}

TrainResult train_transfer(const DvtModel& model, const Dataset& target, const TrainConfig& cfg,
                           const Dataset* source) {
  cfg.validate();
  check_dataset(model, target);
  const std::size_t tgt = model.domain_index(target.domain_id);
  std::optional<std::size_t> src;
  if (source) {
    check_dataset(model, *source);
    src = model.domain_index(source->domain_id);
    if (*src == tgt) throw ConfigError("train_transfer: source and target are the same domain");
  } else if (model.domain_count() == 2) {
    src = 1 - tgt;
  }

  DvtModel start = model;
  if (cfg.warm_start && src) copy_domain_parameters(start, *src, tgt);
  const int domain = static_cast<int>(tgt);
  ParamFilter trainable = [=](const ParamInfo& p) { return p.domain == domain; };
  auto sampler = std::make_shared<BatchSampler>(start, target, cfg, 2);
  StepLoss step = [sampler, &cfg](const BoundModel& bound, LossTerms* terms) {
    return loss_domain(bound, sampler->draw(), cfg.weights, terms);
  };
  CycleEval cycle = (source && src) ? make_cycle(*src, tgt, *source) : CycleEval{};
  return run_training(std::move(start), trainable, cfg, step, cycle);
}

TrainResult train_multi_task(const DvtModel& model, const Dataset& source, const Dataset& target,
                             const TrainConfig& cfg) {
  cfg.validate();
  check_dataset(model, source);
  check_dataset(model, target);
  const std::size_t src = model.domain_index(source.domain_id);
  const std::size_t tgt = model.domain_index(target.domain_id);
  if (src == tgt) throw ConfigError("train_multi_task: source and target are the same domain");
  ParamFilter trainable = [](const ParamInfo&) { return true; };
  auto src_sampler = std::make_shared<BatchSampler>(model, source, cfg, 1);
  auto tgt_sampler = std::make_shared<BatchSampler>(model, target, cfg, 2);
  StepLoss step = [=, &cfg](const BoundModel& bound, LossTerms* terms) {
    DomainBatch a = src_sampler->draw();
    DomainBatch b = tgt_sampler->draw();
    return loss_dvt(bound, a, b, cfg.weights, terms);
  };
  return run_training(model, trainable, cfg, step, make_cycle(src, tgt, source));
}

double cycle_consistency_score(const DvtModel& model, std::size_t source, std::size_t target,
                               const Tensor& x, const std::vector<int>& labels) {
  const Tensor z = encode_mean(model, source, x);
  const Tensor x_target = decode_mean(model, target, z);
  const std::size_t expected = model.domains().at(target).input_dim;
  if (x_target.cols() != expected) {
    throw ShapeError("cycle consistency: target decoder emits " + std::to_string(x_target.cols()) +
                     " features, target encoder takes " + std::to_string(expected));
  }
  const Tensor z_back = encode_mean(model, target, x_target);
  const Tensor proba = classify_proba(model, source, z_back);
  return unweighted_mean_f1(labels, argmax_rows(proba), model.classes());
}

EnsemblePrediction ensemble_predict(const std::vector<const DvtModel*>& models,
                                    const std::string& domain, const Tensor& x) {
  if (models.empty()) throw ConfigError("ensemble_predict: no models");
  Tensor total;
  for (std::size_t i = 0; i < models.size(); ++i) {
    const DvtModel& m = *models[i];
    if (m.classes() != models.front()->classes()) {
      throw ConfigError("ensemble_predict: members disagree on the class count");
    }
    Tensor p = predict_proba(m, m.domain_index(domain), x);
    if (i == 0) {
      total = std::move(p);
    } else {
      for (std::size_t j = 0; j < total.size(); ++j) total[j] += p[j];
    }
  }
  const double n = static_cast<double>(models.size());
  for (std::size_t j = 0; j < total.size(); ++j) total[j] /= n;
  EnsemblePrediction out;
  out.labels = argmax_rows(total);
  out.probabilities = std::move(total);
  return out;
}

std::vector<TrainResult> train_ensemble(const std::function<TrainResult(std::uint64_t)>& train,
                                        std::size_t count, std::uint64_t seed,
                                        std::size_t threads) {
  if (count == 0) throw ConfigError("train_ensemble: count must be >= 1");
  std::vector<std::optional<TrainResult>> slots(count);
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        slots[i] = train(seed + i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(threads, count));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  std::vector<TrainResult> out;
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

std::string trace_csv(const std::vector<TraceRow>& trace) {
  std::ostringstream os;
  os.precision(17);
  os << "step,loss,supervised,unsupervised,classification,cycle\n";
  for (const TraceRow& r : trace) {
    os << r.step << ',' << r.loss << ',' << r.terms.supervised << ',' << r.terms.unsupervised << ','
       << r.terms.classification << ',';
    if (r.cycle) os << *r.cycle;
    os << '\n';
  }
  return os.str();
}

}  // namespace dvt
