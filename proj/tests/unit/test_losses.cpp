#include <gtest/gtest.h>

#include <cmath>

#include "dvt/error.hpp"
#include "dvt/losses.hpp"
#include "dvt/rng.hpp"
#include "dvt/verify.hpp"

using namespace dvt;

namespace {

ArchConfig toy_arch(std::size_t latent) {
  ArchConfig arch;
  arch.shared_hidden = {5, 4};
  arch.latent_dim = latent;
  return arch;
}

void zero_all(DvtModel& m) {
  for (Tensor* p : m.parameters()) {
    for (double& v : p->values()) v = 0.0;
  }
}

// Zero network whose encoder head emits (mu, log_var) through its bias.
DvtModel constant_encoder_model(std::size_t d, std::size_t k, std::size_t j, const std::vector<double>& mu,
                                double log_var, LikelihoodKind kind) {
  DvtModel m = build_model(toy_arch(j), {{"a", d, kind}}, k, 1);
  zero_all(m);
  Tensor& bias = m.nets(0).encoder_head.bias;
  for (std::size_t i = 0; i < j; ++i) {
    bias[i] = mu[i];
    bias[j + i] = log_var;
  }
  return m;
}

double value_of(const DvtModel& m, const std::function<Var(const BoundModel&)>& f) {
  Tape tape;
  BoundModel bound(tape, m);
  return f(bound).value().item();
}

std::vector<double> flat_gradient(const DvtModel& m, const std::function<Var(const BoundModel&)>& f) {
  Tape tape;
  BoundModel bound(tape, m);
  std::vector<double> out;
  for (const Tensor& g : bound.gradients(tape.backward(f(bound)))) {
    out.insert(out.end(), g.values().begin(), g.values().end());
  }
  return out;
}

}  // namespace

TEST(LossSupervised, EncoderAtClassComponentHasNoKl) {
  const std::size_t j = 3;
  const double sigma = 0.1;
  DvtModel m = constant_encoder_model(2, 2, j, {0, 10, 0}, 2.0 * std::log(sigma), LikelihoodKind::gaussian);
  Rng rng(1);
  const Tensor x = rng.normal_tensor(Shape{4, 2});
  const Tensor eps = rng.normal_tensor(Shape{4, j});
  const std::vector<int> labels{1, 1, 1, 1};
  Tape tape;
  BoundModel bound(tape, m);
  const double loss = loss_supervised(bound, 0, x, labels, eps).value().item();
  DiagGaussian q = bound.encode(0, x);
  const double recon = -log_likelihood(bound.decode(0, sample_gaussian_reparam(q, eps)), x).value().item();
  EXPECT_NEAR(loss, recon, 1e-12);
}

TEST(LossSupervised, HalfBernoulliDecoderCostsDLogTwo) {
  DvtModel m = constant_encoder_model(5, 2, 2, {10, 0}, 2.0 * std::log(0.1), LikelihoodKind::bernoulli);
  Rng rng(2);
  for (int trial = 0; trial < 3; ++trial) {
    Tensor x(Shape{3, 5});
    for (double& v : x.values()) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
    const double loss = value_of(m, [&](const BoundModel& b) {
      return loss_supervised(b, 0, x, {0, 0, 0}, rng.normal_tensor(Shape{3, 2}));
    });
    EXPECT_NEAR(loss, 5.0 * std::log(2.0), 1e-12);
  }
}

TEST(LossSupervised, LabelOutOfRangeIsAnError) {
  DvtModel m = build_model(toy_arch(2), {{"a", 2, LikelihoodKind::gaussian}}, 2, 1);
  Tape tape;
  BoundModel bound(tape, m);
  EXPECT_THROW(loss_supervised(bound, 0, Tensor(Shape{1, 2}), {2}, Tensor(Shape{1, 2})), ConfigError);
  EXPECT_THROW(loss_classification(bound, 0, Tensor(Shape{1, 2}), {-1}, Tensor(Shape{1, 2})), ConfigError);
}

TEST(LossSupervised, GradientMatchesFiniteDifferencesOnTwoFeatureToy) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    DvtModel m = build_model(toy_arch(2), {{"a", 2, LikelihoodKind::gaussian}}, 2, seed);
    Rng rng(seed + 10);
    // Zero biases put all-dead rows exactly on a ReLU kink.
    for (Tensor* p : m.parameters()) {
      if (p->rank() == 1) {
        for (double& v : p->values()) v = 0.1 * rng.normal();
      }
    }
    const Tensor x = rng.normal_tensor(Shape{5, 2});
    const Tensor eps = rng.normal_tensor(Shape{5, 2});
    const std::vector<int> labels{0, 1, 1, 0, 1};
    TapeFunction f = [&](Tape& t, Var flat) {
      return loss_supervised(BoundModel(t, m, flat), 0, x, labels, eps);
    };
    EXPECT_LT(finite_diff_check(f, flatten_parameters(m), 1e-5), 1e-4);
  }
}

TEST(LossUnsupervised, CertainClassifierAtComponentCostsReconPlusLogK) {
  const std::size_t k = 3, j = 3, d = 4;
  DvtModel m = constant_encoder_model(d, k, j, {0, 10, 0}, 2.0 * std::log(0.1), LikelihoodKind::bernoulli);
  Tensor& cb = m.nets(0).classifier.back().bias;
  cb[0] = -40.0;
  cb[1] = 40.0;
  cb[2] = -40.0;
  Rng rng(3);
  UnlabeledBatch batch;
  batch.x = Tensor(Shape{2, d}, 1.0);
  batch.eps = Tensor(Shape{2, j});
  batch.gumbel = rng.gumbel_tensor(Shape{2, k});
  const double loss = value_of(m, [&](const BoundModel& b) { return loss_unsupervised(b, 0, batch, 0.5); });
  EXPECT_NEAR(loss, d * std::log(2.0) + std::log(3.0), 1e-9);
}

TEST(LossUnsupervised, GradientOfAllParametersWithFrozenNoise) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const ToyProblem toy = make_toy_problem(seed);
    const Tensor x0 = flatten_parameters(toy.model);
    for (std::size_t d = 0; d < 2; ++d) {
      const UnlabeledBatch& batch = d == 0 ? toy.source.unsup : toy.target.unsup;
      TapeFunction f = [&](Tape& t, Var flat) {
        return loss_unsupervised(BoundModel(t, toy.model, flat), d, batch, toy.weights.tau);
      };
      EXPECT_LT(finite_diff_check(f, x0, 1e-5), 1e-4) << "seed " << seed << " domain " << d;
    }
  }
}

TEST(LossUnsupervised, SingleClassIsVanillaVae) {
  DvtModel m = build_model(toy_arch(2), {{"a", 3, LikelihoodKind::gaussian}}, 1, 4);
  Rng rng(4);
  UnlabeledBatch batch;
  batch.x = rng.normal_tensor(Shape{6, 3});
  batch.eps = rng.normal_tensor(Shape{6, 2});
  batch.gumbel = rng.gumbel_tensor(Shape{6, 1});
  const double unsup = value_of(m, [&](const BoundModel& b) { return loss_unsupervised(b, 0, batch, 0.5); });
  const double vae = value_of(m, [&](const BoundModel& b) {
    return loss_supervised(b, 0, batch.x, std::vector<int>(6, 0), batch.eps);
  });
  EXPECT_NEAR(unsup, vae, 1e-12 * std::abs(vae));
}

TEST(LossUnsupervised, ForwardValueUsesOneHotClassSample) {
  const ToyProblem toy = make_toy_problem(3);
  UnlabeledBatch batch = toy.source.unsup;
  batch.st_anchor.reset();
  const double tau = toy.weights.tau;
  const Tensor relaxed = relaxed_class_sample(toy.model, 0, batch, tau);
  const std::vector<int> picked = argmax_rows(relaxed);

  Tape tape;
  BoundModel bound(tape, toy.model);
  const double loss = loss_unsupervised(bound, 0, batch, tau).value().item();
  // Same three terms with y replaced by the one-hot argmax.
  DiagGaussian q = bound.encode(0, batch.x);
  Var z = sample_gaussian_reparam(q, batch.eps);
  Var recon = neg(log_likelihood(bound.decode(0, z), batch.x));
  Var kl_y = mean(kl_categorical(bound.classify(0, z), toy.model.prior().pi()));
  const Tensor klz = kl_to_components(q, toy.model.prior()).value();
  Tensor one_hot(klz.shape());
  for (std::size_t b = 0; b < picked.size(); ++b) one_hot.at(b, static_cast<std::size_t>(picked[b])) = 1.0;
  Var kl_z = mul_scalar(sum(mul(tape.constant(one_hot), tape.constant(klz))),
                        1.0 / static_cast<double>(picked.size()));
  EXPECT_EQ(loss, add(add(recon, kl_y), kl_z).value().item());
}

TEST(LossClassification, UniformClassifierCostsLogTwo) {
  DvtModel m = build_model(toy_arch(2), {{"a", 2, LikelihoodKind::gaussian}}, 2, 1);
  for (Layer& l : m.nets(0).classifier) {
    for (double& v : l.weight.values()) v = 0.0;
    for (double& v : l.bias.values()) v = 0.0;
  }
  Rng rng(5);
  const double loss = value_of(m, [&](const BoundModel& b) {
    return loss_classification(b, 0, rng.normal_tensor(Shape{4, 2}), {0, 1, 1, 0}, rng.normal_tensor(Shape{4, 2}));
  });
  EXPECT_NEAR(loss, std::log(2.0), 1e-15);
}

TEST(LossClassification, ConfidentCorrectClassifierCostsNearlyZero) {
  DvtModel m = build_model(toy_arch(2), {{"a", 2, LikelihoodKind::gaussian}}, 2, 1);
  Layer& c = m.nets(0).classifier.back();
  for (double& v : c.weight.values()) v = 0.0;
  c.bias[0] = 30.0;
  c.bias[1] = -30.0;
  Rng rng(6);
  const double loss = value_of(m, [&](const BoundModel& b) {
    return loss_classification(b, 0, rng.normal_tensor(Shape{3, 2}), {0, 0, 0}, rng.normal_tensor(Shape{3, 2}));
  });
  EXPECT_LT(loss, 1e-20);
  EXPECT_GE(loss, 0.0);
}

TEST(LossClassification, GradientMatchesFiniteDifferences) {
  const ToyProblem toy = make_toy_problem(8);
  TapeFunction f = [&](Tape& t, Var flat) {
    return loss_classification(BoundModel(t, toy.model, flat), 0, toy.source.sup.x, toy.source.sup.labels,
                               toy.source.sup.eps);
  };
  EXPECT_LT(finite_diff_check(f, flatten_parameters(toy.model), 1e-5), 1e-4);
}

TEST(LossDomain, GammaZeroIsSupervisedExactly) {
  const ToyProblem toy = make_toy_problem(1);
  LossWeights w = toy.weights;
  w.gamma = 0.0;
  w.rho = 0.0;
  const DomainBatch& b = toy.source;
  EXPECT_EQ(value_of(toy.model, [&](const BoundModel& m) { return loss_domain(m, b, w); }),
            value_of(toy.model, [&](const BoundModel& m) { return loss_supervised(m, 0, b.sup.x, b.sup.labels, b.sup.eps); }));
  EXPECT_EQ(flat_gradient(toy.model, [&](const BoundModel& m) { return loss_domain(m, b, w); }),
            flat_gradient(toy.model, [&](const BoundModel& m) { return loss_supervised(m, 0, b.sup.x, b.sup.labels, b.sup.eps); }));
}

TEST(LossDomain, GammaOneIsUnsupervisedExactly) {
  const ToyProblem toy = make_toy_problem(2);
  LossWeights w = toy.weights;
  w.gamma = 1.0;
  w.rho = 0.0;
  const DomainBatch& b = toy.target;
  EXPECT_EQ(value_of(toy.model, [&](const BoundModel& m) { return loss_domain(m, b, w); }),
            value_of(toy.model, [&](const BoundModel& m) { return loss_unsupervised(m, 1, b.unsup, w.tau); }));
  EXPECT_EQ(flat_gradient(toy.model, [&](const BoundModel& m) { return loss_domain(m, b, w); }),
            flat_gradient(toy.model, [&](const BoundModel& m) { return loss_unsupervised(m, 1, b.unsup, w.tau); }));
}

TEST(LossDomain, LinearInTheThreeTerms) {
  const ToyProblem toy = make_toy_problem(4);
  const DomainBatch& b = toy.source;
  const double s = value_of(toy.model, [&](const BoundModel& m) { return loss_supervised(m, 0, b.sup.x, b.sup.labels, b.sup.eps); });
  const double u = value_of(toy.model, [&](const BoundModel& m) { return loss_unsupervised(m, 0, b.unsup, toy.weights.tau); });
  const double c = value_of(toy.model, [&](const BoundModel& m) { return loss_classification(m, 0, b.sup.x, b.sup.labels, b.sup.eps); });
  for (double gamma : {0.0, 0.1, 0.25, 0.5, 0.9, 1.0}) {
    LossWeights w = toy.weights;
    w.gamma = gamma;
    w.rho = 1e4;
    const double expected = (1.0 - gamma) * s + gamma * u + 1e4 * c;
    const double got = value_of(toy.model, [&](const BoundModel& m) { return loss_domain(m, b, w); });
    EXPECT_NEAR(got, expected, 1e-12 * std::abs(expected)) << gamma;
  }
}

TEST(LossDomain, DefaultsAndErrors) {
  LossWeights w;
  EXPECT_EQ(w.gamma, 0.1);
  EXPECT_EQ(w.rho, 1e4);
  EXPECT_EQ(w.eta, 0.5);
  const ToyProblem toy = make_toy_problem(0);
  DomainBatch empty;
  Tape tape;
  BoundModel bound(tape, toy.model);
  EXPECT_THROW(loss_domain(bound, empty, w), ConfigError);
  w.gamma = 1.5;
  EXPECT_THROW(w.validate(), ConfigError);
}

TEST(LossDvt, EtaOneIsSourceLoss) {
  const ToyProblem toy = make_toy_problem(5);
  LossWeights w = toy.weights;
  w.eta = 1.0;
  EXPECT_EQ(value_of(toy.model, [&](const BoundModel& m) { return loss_dvt(m, toy.source, toy.target, w); }),
            value_of(toy.model, [&](const BoundModel& m) { return loss_domain(m, toy.source, w); }));
}

TEST(LossDvt, HalfIsMeanOfDomainLosses) {
  const ToyProblem toy = make_toy_problem(6);
  LossWeights w = toy.weights;
  w.eta = 0.5;
  const double s = value_of(toy.model, [&](const BoundModel& m) { return loss_domain(m, toy.source, w); });
  const double t = value_of(toy.model, [&](const BoundModel& m) { return loss_domain(m, toy.target, w); });
  const double both = value_of(toy.model, [&](const BoundModel& m) { return loss_dvt(m, toy.source, toy.target, w); });
  EXPECT_NEAR(both, 0.5 * (s + t), 1e-12 * std::abs(both));
}

TEST(LossDvt, EtaOneLeavesTargetParametersWithoutGradient) {
  const ToyProblem toy = make_toy_problem(7);
  LossWeights w = toy.weights;
  w.eta = 1.0;
  Tape tape;
  BoundModel bound(tape, toy.model);
  const std::vector<Tensor> g = bound.gradients(tape.backward(loss_dvt(bound, toy.source, toy.target, w)));
  const std::vector<ParamInfo> info = toy.model.parameter_info();
  for (std::size_t i = 0; i < info.size(); ++i) {
    if (info[i].domain != 1) continue;
    for (double v : g[i].values()) EXPECT_EQ(v, 0.0) << info[i].name;
  }
}

TEST(LossDvt, MissingDomainIsAnError) {
  const ToyProblem toy = make_toy_problem(0);
  DomainBatch bad = toy.target;
  bad.domain = 5;
  Tape tape;
  BoundModel bound(tape, toy.model);
  EXPECT_THROW(loss_dvt(bound, toy.source, bad, toy.weights), ConfigError);
}

TEST(Losses, FiniteOnRandomUnitInputsWithDefaultInit) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    DvtModel m = build_model(ArchConfig{}, {{"a", 4, LikelihoodKind::bernoulli}, {"b", 4, LikelihoodKind::gaussian}}, 3, seed);
    Rng rng(seed);
    DomainBatch batches[2];
    for (std::size_t d = 0; d < 2; ++d) {
      DomainBatch& b = batches[d];
      b.domain = d;
      b.sup.x = Tensor(Shape{4, 4});
      b.unsup.x = Tensor(Shape{6, 4});
      for (double& v : b.sup.x.values()) v = rng.uniform();
      for (double& v : b.unsup.x.values()) v = rng.uniform();
      b.sup.labels = {0, 1, 2, 1};
      b.sup.eps = rng.normal_tensor(Shape{4, m.latent_dim()});
      b.unsup.eps = rng.normal_tensor(Shape{6, m.latent_dim()});
      b.unsup.gumbel = rng.gumbel_tensor(Shape{6, 3});
    }
    const double v = value_of(m, [&](const BoundModel& b) { return loss_dvt(b, batches[0], batches[1], LossWeights{}); });
    EXPECT_TRUE(std::isfinite(v));
  }
}
