#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "dvt/checkpoint.hpp"
#include "dvt/error.hpp"
#include "dvt/losses.hpp"
#include "dvt/model.hpp"
#include "dvt/rng.hpp"

using namespace dvt;

namespace {

std::vector<DomainSpec> two_domains(std::size_t d0 = 2, std::size_t d1 = 2) {
  return {{"src", d0, LikelihoodKind::gaussian}, {"tgt", d1, LikelihoodKind::bernoulli}};
}

ArchConfig small_arch(std::size_t latent = 4) {
  ArchConfig arch;
  arch.shared_hidden = {6, 5};
  arch.latent_dim = latent;
  return arch;
}

void zero_all(DvtModel& m) {
  for (Tensor* p : m.parameters()) {
    for (double& v : p->values()) v = 0.0;
  }
}

}  // namespace

TEST(BuildModel, TwoDomainsShareTrunkWithDistinctHeads) {
  DvtModel m = build_model(small_arch(), two_domains(), 2, 1);
  EXPECT_EQ(m.domain_count(), 2u);
  EXPECT_EQ(m.latent_dim(), 4u);
  EXPECT_FALSE(m.uses_adapters());
  EXPECT_EQ(m.shared_encoder().size(), 2u);
  EXPECT_NE(m.nets(0).encoder_head, m.nets(1).encoder_head);
  EXPECT_EQ(m.nets(0).encoder_head.out_dim(), 8u);
  EXPECT_EQ(m.classifier(0).front().out_dim(), 2u);

  // Changing a shared weight moves the encoding of both domains.
  Rng rng(3);
  const Tensor x = rng.normal_tensor(Shape{3, 2});
  const Tensor before0 = encode_mean(m, 0, x), before1 = encode_mean(m, 1, x);
  for (double& w : m.parameters()[0]->values()) w += 0.5;
  EXPECT_NE(encode_mean(m, 0, x), before0);
  EXPECT_NE(encode_mean(m, 1, x), before1);

  for (const ParamInfo& p : m.parameter_info()) {
    if (p.group == ParamGroup::shared_encoder) EXPECT_EQ(p.domain, -1) << p.name;
  }
}

TEST(BuildModel, SameSeedIsBitIdentical) {
  EXPECT_EQ(build_model(small_arch(), two_domains(), 2, 9), build_model(small_arch(), two_domains(), 2, 9));
  EXPECT_NE(build_model(small_arch(), two_domains(), 2, 9), build_model(small_arch(), two_domains(), 2, 10));
}

TEST(BuildModel, HeterogeneousInputDims) {
  std::vector<DomainSpec> domains{{"a", 64, LikelihoodKind::bernoulli}, {"b", 256, LikelihoodKind::bernoulli}};
  DvtModel m = build_model(small_arch(), domains, 3, 1);
  EXPECT_TRUE(m.uses_adapters());
  Rng rng(1);
  const Tensor z = rng.normal_tensor(Shape{2, 4});
  EXPECT_EQ(decode_mean(m, 0, z).shape(), (Shape{2, 64}));
  EXPECT_EQ(decode_mean(m, 1, z).shape(), (Shape{2, 256}));
}

TEST(BuildModel, LatentSmallerThanClassesIsAnError) {
  EXPECT_THROW(build_model(small_arch(2), two_domains(), 3, 1), ConfigError);
}

TEST(BuildModel, DefaultLatentDim) {
  ArchConfig arch = small_arch(0);
  EXPECT_EQ(build_model(arch, two_domains(), 3, 1).latent_dim(), 8u);
  EXPECT_EQ(build_model(arch, two_domains(), 10, 1).latent_dim(), 10u);
}

TEST(Encode, ZeroWeightsGiveBiases) {
  DvtModel m = build_model(small_arch(), two_domains(), 2, 1);
  zero_all(m);
  Tensor& bias = m.nets(0).encoder_head.bias;
  for (std::size_t i = 0; i < bias.size(); ++i) bias[i] = 0.25 * static_cast<double>(i) - 1.0;
  Tape tape;
  BoundModel bound(tape, m);
  DiagGaussian q = bound.encode(0, Tensor::matrix({{1, 2}, {-3, 4}, {0, 0}}));
  ASSERT_EQ(q.mu.shape(), (Shape{3, 4}));
  for (std::size_t b = 0; b < 3; ++b) {
    for (std::size_t j = 0; j < 4; ++j) {
      EXPECT_EQ(q.mu.value().at(b, j), bias[j]);
      EXPECT_EQ(q.log_var.value().at(b, j), bias[4 + j]);
    }
  }
}

TEST(Encode, UnknownDomainAndBadWidthAreErrors) {
  DvtModel m = build_model(small_arch(), two_domains(), 2, 1);
  EXPECT_THROW(m.domain_index("nope"), ConfigError);
  EXPECT_THROW(encode_mean(m, 0, Tensor(Shape{2, 3})), ShapeError);
}

TEST(Encode, SharedWeightsGetGradientFromEveryDomain) {
  DvtModel m = build_model(small_arch(), two_domains(), 2, 5);
  Rng rng(5);
  for (std::size_t d = 0; d < 2; ++d) {
    Tape tape;
    BoundModel bound(tape, m);
    Tensor x = d == 0 ? rng.normal_tensor(Shape{4, 2}) : Tensor(Shape{4, 2}, 0.5);
    DiagGaussian q = bound.encode(d, x);
    const std::vector<Tensor> g = bound.gradients(tape.backward(add(sum(square(q.mu)), sum(q.log_var))));
    double norm = 0.0;
    for (double v : g[0].values()) norm += v * v;
    EXPECT_GT(norm, 0.0) << "domain " << d;
  }
}

TEST(Classify, ZeroWeightsGiveUniform) {
  DvtModel m = build_model(small_arch(), two_domains(), 2, 1);
  zero_all(m);
  Rng rng(2);
  const Tensor p = classify_proba(m, 0, rng.normal_tensor(Shape{3, 4}));
  ASSERT_EQ(p.shape(), (Shape{3, 2}));
  for (double v : p.values()) EXPECT_EQ(v, 0.5);
}

TEST(Classify, GradientsStayInOwnDomain) {
  DvtModel m = build_model(small_arch(), two_domains(), 2, 1);
  Rng rng(6);
  Tape tape;
  BoundModel bound(tape, m);
  Var loss = sum(square(bound.classify(0, tape.constant(rng.normal_tensor(Shape{3, 4}))).logits));
  const std::vector<Tensor> g = bound.gradients(tape.backward(loss));
  const std::vector<ParamInfo> info = m.parameter_info();
  bool own_nonzero = false;
  for (std::size_t i = 0; i < info.size(); ++i) {
    if (info[i].group != ParamGroup::classifier) continue;
    double norm = 0.0;
    for (double v : g[i].values()) norm += std::abs(v);
    if (info[i].domain == 1) EXPECT_EQ(norm, 0.0) << info[i].name;
    if (info[i].domain == 0 && norm > 0.0) own_nonzero = true;
  }
  EXPECT_TRUE(own_nonzero);
}

TEST(Decode, ZeroWeightBernoulliDecoderGivesHalf) {
  DvtModel m = build_model(small_arch(), two_domains(2, 3), 2, 1);
  zero_all(m);
  Rng rng(4);
  const Tensor mean = decode_mean(m, 1, rng.normal_tensor(Shape{2, 4}));
  ASSERT_EQ(mean.shape(), (Shape{2, 3}));
  for (double v : mean.values()) EXPECT_EQ(v, 0.5);
}

TEST(Decode, RoundTripForBothDomains) {
  DvtModel m = build_model(small_arch(), two_domains(2, 5), 2, 1);
  Rng rng(8);
  EXPECT_EQ(decode_mean(m, 0, encode_mean(m, 0, rng.normal_tensor(Shape{3, 2}))).shape(), (Shape{3, 2}));
  EXPECT_EQ(decode_mean(m, 1, encode_mean(m, 1, Tensor(Shape{3, 5}, 0.5))).shape(), (Shape{3, 5}));
  EXPECT_THROW(decode_mean(m, 0, Tensor(Shape{3, 3})), ShapeError);
}

TEST(GmmPriorInit, OneHotMeans) {
  GmmPrior p = init_gmm_prior(2, 2, 10.0, 0.1);
  EXPECT_EQ(p.means(), Tensor::matrix({{10, 0}, {0, 10}}));
  EXPECT_EQ(p.sigma(), 0.1);
}

TEST(GmmPriorInit, PairwiseDistances) {
  GmmPrior p = init_gmm_prior(4, 6, 10.0, 0.1);
  for (std::size_t a = 0; a < 4; ++a) {
    for (std::size_t b = a + 1; b < 4; ++b) {
      double d2 = 0.0;
      for (std::size_t j = 0; j < 6; ++j) {
        const double diff = p.means().at(a, j) - p.means().at(b, j);
        d2 += diff * diff;
      }
      EXPECT_NEAR(std::sqrt(d2), 10.0 * std::sqrt(2.0), 1e-12);
    }
  }
}

TEST(GmmPriorInit, UniformDefaultAndWeightChecks) {
  GmmPrior p = init_gmm_prior(3, 3, 10.0, 0.1);
  double total = 0.0;
  for (double v : p.pi()) {
    EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
    total += v;
  }
  EXPECT_NEAR(total, 1.0, 1e-12);
  EXPECT_THROW(init_gmm_prior(3, 3, 10.0, 0.1, {0.5, 0.5}), ConfigError);
  EXPECT_THROW(init_gmm_prior(2, 2, 10.0, 0.1, {0.7, 0.7}), ConfigError);
  EXPECT_THROW(init_gmm_prior(2, 2, 0.0, 0.1), ConfigError);
  EXPECT_THROW(init_gmm_prior(3, 2, 10.0, 0.1), ConfigError);
}

TEST(Parameters, FlattenAssignRoundTrip) {
  DvtModel m = build_model(small_arch(), two_domains(2, 3), 3, 2);
  DvtModel other = build_model(small_arch(), two_domains(2, 3), 3, 99);
  assign_parameters(other, flatten_parameters(m));
  EXPECT_EQ(flatten_parameters(other), flatten_parameters(m));
  EXPECT_THROW(assign_parameters(other, Tensor::vector({1, 2})), ShapeError);
}

TEST(Parameters, NamesAreUniqueAndOrdered) {
  ArchConfig arch = small_arch();
  arch.shared_classifier = true;
  DvtModel m = build_model(arch, two_domains(2, 3), 2, 2);
  const std::vector<ParamInfo> info = m.parameter_info();
  ASSERT_EQ(info.size(), m.parameters().size());
  std::set<std::string> names;
  for (const ParamInfo& p : info) EXPECT_TRUE(names.insert(p.name).second) << p.name;
  EXPECT_TRUE(m.uses_adapters());
  EXPECT_EQ(&m.classifier(0), &m.classifier(1));
}

TEST(Parameters, CopyDomainParameters) {
  DvtModel m = build_model(small_arch(), {{"a", 2, LikelihoodKind::gaussian}, {"b", 2, LikelihoodKind::gaussian}}, 2, 2);
  copy_domain_parameters(m, 0, 1);
  EXPECT_EQ(m.nets(0), m.nets(1));
}

TEST(Checkpoint, RoundTripIsBitExact) {
  ArchConfig arch = small_arch();
  arch.class_weights = {0.25, 0.75};
  DvtModel m = build_model(arch, two_domains(2, 3), 2, 17);
  m.parameters()[0]->values()[0] = 0.1 + 0.2;
  EXPECT_EQ(checkpoint_from_json(checkpoint_to_json(m)), m);
  const auto path = std::filesystem::temp_directory_path() / "dvt_model_ckpt_test.json";
  save_checkpoint(m, path);
  EXPECT_EQ(load_checkpoint(path), m);
  std::filesystem::remove(path);
}

TEST(Checkpoint, MalformedInputIsDataError) {
  EXPECT_THROW(checkpoint_from_json("{not json"), DataError);
  EXPECT_THROW(checkpoint_from_json("{\"format\": \"other\"}"), DataError);
  DvtModel m = build_model(small_arch(), two_domains(), 2, 1);
  std::string text = checkpoint_to_json(m);
  text.replace(text.find("\"input_dim\": 2"), 14, "\"input_dim\": 7");
  EXPECT_THROW(checkpoint_from_json(text), DataError);
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/ckpt.json"), IoError);
}
