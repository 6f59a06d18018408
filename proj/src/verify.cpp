#include "dvt/verify.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "dvt/distributions.hpp"
#include "dvt/error.hpp"
#include "dvt/rng.hpp"

namespace dvt {

namespace {

Tensor random_features(Rng& rng, std::size_t rows, std::size_t cols, LikelihoodKind kind) {
  Tensor x(Shape{rows, cols});
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = kind == LikelihoodKind::bernoulli ? rng.uniform() : rng.normal();
  }
  return x;
}

DomainBatch toy_batch(Rng& rng, const DvtModel& model, std::size_t domain, double tau) {
  const DomainSpec& spec = model.domains()[domain];
  const std::size_t j = model.latent_dim(), k = model.classes();
  const std::size_t n_sup = 2 + rng.below(4), n_unsup = 2 + rng.below(4);
  DomainBatch b;
  b.domain = domain;
  b.sup.x = random_features(rng, n_sup, spec.input_dim, spec.likelihood);
  for (std::size_t i = 0; i < n_sup; ++i) b.sup.labels.push_back(static_cast<int>(rng.below(k)));
  b.sup.eps = rng.normal_tensor(Shape{n_sup, j});
  b.unsup.x = random_features(rng, n_unsup, spec.input_dim, spec.likelihood);
  b.unsup.eps = rng.normal_tensor(Shape{n_unsup, j});
  b.unsup.gumbel = rng.gumbel_tensor(Shape{n_unsup, k});
  b.unsup.st_anchor = relaxed_class_sample(model, domain, b.unsup, tau);
  return b;
}

// Runs `h` through `layers` and returns the smallest |pre-activation| seen
// at a ReLU.
double relu_margin(const std::vector<Layer>& layers, Tensor& h) {
  double margin = std::numeric_limits<double>::infinity();
  for (const Layer& l : layers) {
    Tensor out(Shape{h.rows(), l.out_dim()});
    for (std::size_t r = 0; r < h.rows(); ++r) {
      for (std::size_t c = 0; c < l.out_dim(); ++c) {
        double a = l.bias[c];
        for (std::size_t i = 0; i < l.in_dim(); ++i) a += h.at(r, i) * l.weight.at(i, c);
        if (l.activation == Activation::relu) {
          margin = std::min(margin, std::abs(a));
          a = std::max(a, 0.0);
        }
        out.at(r, c) = a;
      }
    }
    h = std::move(out);
  }
  return margin;
}

double relu_margin(const DvtModel& model, std::size_t domain, const Tensor& x, const Tensor& eps) {
  const DomainNets& n = model.nets(domain);
  Tensor h = x;
  double margin = relu_margin(n.adapter, h);
  margin = std::min(margin, relu_margin(model.shared_encoder(), h));
  relu_margin({n.encoder_head}, h);
  const std::size_t j = model.latent_dim();
  Tensor z(Shape{x.rows(), j});
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t i = 0; i < j; ++i) z.at(r, i) = h.at(r, i) + std::exp(0.5 * h.at(r, j + i)) * eps.at(r, i);
  }
  Tensor dec = z;
  margin = std::min(margin, relu_margin(n.decoder, dec));
  margin = std::min(margin, relu_margin(model.classifier(domain), z));
  return margin;
}

double relu_margin(const DvtModel& model, const DomainBatch& b) {
  return std::min(relu_margin(model, b.domain, b.sup.x, b.sup.eps),
                  relu_margin(model, b.domain, b.unsup.x, b.unsup.eps));
}

std::string format_error(const std::string& what, double value) {
  std::ostringstream os;
  os << what << " " << value;
  return os.str();
}

}  // namespace

ToyProblem make_toy_problem(std::uint64_t seed) {
  Rng rng = Rng::derive(seed, 7);
  const std::size_t k = 2 + rng.below(2);
  const std::size_t j = k + rng.below(4 - k + 1);
  ArchConfig arch;
  arch.shared_hidden = {2 + rng.below(7), 2 + rng.below(7)};
  arch.latent_dim = j;
  arch.mu_scale = 1.0 + 9.0 * rng.uniform();
  arch.sigma = 0.1 + 0.9 * rng.uniform();
  const std::size_t d0 = 1 + rng.below(4);
  const std::size_t d1 = seed % 2 ? 1 + (d0 % 4) : d0;
  std::vector<DomainSpec> domains{{"a", d0, LikelihoodKind::gaussian},
                                  {"b", d1, LikelihoodKind::bernoulli}};
  LossWeights w;
  w.gamma = 0.1 + 0.8 * rng.uniform();
  w.rho = 1.0 + 99.0 * rng.uniform();
  w.eta = 0.2 + 0.6 * rng.uniform();
  w.tau = 0.3 + rng.uniform();
  DvtModel model = build_model(arch, domains, k, seed);
  // Finite differences are only meaningful away from ReLU kinks, so redraw
  // biases and batches until every ReLU input is well clear of zero.
  for (int attempt = 0; attempt < 1000; ++attempt) {
    for (Tensor* p : model.parameters()) {
      if (p->rank() == 1) {
        for (std::size_t i = 0; i < p->size(); ++i) (*p)[i] = 0.1 * rng.normal();
      }
    }
    DomainBatch a = toy_batch(rng, model, 0, w.tau);
    DomainBatch b = toy_batch(rng, model, 1, w.tau);
    if (std::min(relu_margin(model, a), relu_margin(model, b)) > 1e-3) {
      return {std::move(model), std::move(a), std::move(b), w};
    }
  }
  throw NumericError("make_toy_problem: no draw clear of ReLU kinks for seed " + std::to_string(seed));
}

CheckResult check_gradients(const VerifyOptions& opts) {
  CheckResult r{"gradients", true, 0.0, opts.gradient_tolerance, ""};
  std::string worst_case;
  for (std::size_t s = 0; s < opts.gradient_seeds; ++s) {
    const std::uint64_t seed = opts.seed + s;
    const ToyProblem toy = make_toy_problem(seed);
    const Tensor x0 = flatten_parameters(toy.model);
    const std::vector<std::pair<std::string, std::function<Var(const BoundModel&)>>> losses{
        {"loss_supervised",
         [&](const BoundModel& m) { return loss_supervised(m, 0, toy.source.sup.x, toy.source.sup.labels, toy.source.sup.eps); }},
        {"loss_unsupervised",
         [&](const BoundModel& m) { return loss_unsupervised(m, 1, toy.target.unsup, toy.weights.tau); }},
        {"loss_classification",
         [&](const BoundModel& m) { return loss_classification(m, 1, toy.target.sup.x, toy.target.sup.labels, toy.target.sup.eps); }},
        {"loss_domain", [&](const BoundModel& m) { return loss_domain(m, toy.source, toy.weights); }},
        {"loss_dvt",
         [&](const BoundModel& m) { return loss_dvt(m, toy.source, toy.target, toy.weights); }},
    };
    for (const auto& [name, loss] : losses) {
      TapeFunction f = [&](Tape& tape, Var flat) { return loss(BoundModel(tape, toy.model, flat)); };
      const double err = finite_diff_check(f, x0, opts.fd_step);
      if (err > r.max_error) {
        r.max_error = err;
        worst_case = name + " seed " + std::to_string(seed);
      }
      if (!(err <= opts.gradient_tolerance)) r.passed = false;
    }
  }
  r.detail = "worst: " + worst_case;
  return r;
}

CheckResult check_kl_oracle(const VerifyOptions& opts) {
  CheckResult r{"kl_oracle", true, 0.0, opts.kl_standard_errors, ""};
  Rng rng = Rng::derive(opts.seed, 11);
  for (std::size_t pair = 0; pair < opts.kl_pairs; ++pair) {
    const std::size_t j = 1 + rng.below(4);
    const double sigma = 0.2 + 1.8 * rng.uniform();
    Tensor mu(Shape{1, j}), lv(Shape{1, j}), m(Shape{1, j});
    for (std::size_t i = 0; i < j; ++i) {
      mu[i] = rng.normal();
      lv[i] = 2.0 * std::log(sigma) + rng.uniform() - 0.5;
      m[i] = mu[i] + sigma * rng.normal();
    }
    Tape tape;
    DiagGaussian q{tape.constant(mu), tape.constant(lv)};
    const double closed = kl_diag_gaussians(q, m, sigma).value().item();

    // log q(z) - log p(z); the 2 pi terms cancel.
    double total = 0.0, total_sq = 0.0;
    for (std::size_t n = 0; n < opts.kl_samples; ++n) {
      double ratio = 0.0;
      for (std::size_t i = 0; i < j; ++i) {
        const double sd = std::exp(0.5 * lv[i]);
        const double e = rng.normal();
        const double z = mu[i] + sd * e;
        const double dp = (z - m[i]) / sigma;
        ratio += -std::log(sd) - 0.5 * e * e + std::log(sigma) + 0.5 * dp * dp;
      }
      total += ratio;
      total_sq += ratio * ratio;
    }
    const double n = static_cast<double>(opts.kl_samples);
    const double mc = total / n;
    const double se = std::sqrt(std::max(0.0, total_sq / n - mc * mc) / (n - 1.0));
    const double dev = std::abs(closed - mc) / se;
    r.max_error = std::max(r.max_error, dev);
    if (!(dev <= opts.kl_standard_errors)) r.passed = false;
  }
  r.detail = format_error("worst deviation in standard errors:", r.max_error);
  return r;
}

CheckResult check_gumbel_frequencies(const VerifyOptions& opts) {
  CheckResult r{"gumbel_max", true, 0.0, opts.gumbel_tolerance, ""};
  Rng rng = Rng::derive(opts.seed, 13);
  const std::size_t sizes[] = {2, 5, 10};
  for (std::size_t v = 0; v < opts.gumbel_vectors; ++v) {
    const std::size_t k = sizes[v % 3];
    std::vector<double> logits(k);
    for (double& l : logits) l = 1.5 * rng.normal();
    const double top = *std::max_element(logits.begin(), logits.end());
    std::vector<double> expected(k);
    double z = 0.0;
    for (std::size_t c = 0; c < k; ++c) z += expected[c] = std::exp(logits[c] - top);
    for (double& p : expected) p /= z;

    Tensor repeated(Shape{opts.gumbel_draws, k});
    for (std::size_t n = 0; n < opts.gumbel_draws; ++n) {
      for (std::size_t c = 0; c < k; ++c) repeated.at(n, c) = logits[c];
    }
    Tape tape;
    const Tensor sample =
        gumbel_softmax_sample(tape.constant(repeated), 0.5, rng.gumbel_tensor(Shape{opts.gumbel_draws, k}))
            .value();
    std::vector<double> freq(k, 0.0);
    for (int c : argmax_rows(sample)) freq[static_cast<std::size_t>(c)] += 1.0;
    for (std::size_t c = 0; c < k; ++c) {
      const double gap = std::abs(freq[c] / static_cast<double>(opts.gumbel_draws) - expected[c]);
      r.max_error = std::max(r.max_error, gap);
      if (!(gap <= opts.gumbel_tolerance)) r.passed = false;
    }
  }
  r.detail = format_error("worst absolute frequency gap:", r.max_error);
  return r;
}

std::vector<CheckResult> run_verification(const VerifyOptions& opts) {
  return {check_gradients(opts), check_kl_oracle(opts), check_gumbel_frequencies(opts)};
}

}  // namespace dvt
