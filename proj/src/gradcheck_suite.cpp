#include "pitrans/gradcheck_suite.hpp"

#include <cmath>
#include <functional>

#include "pitrans/gan.hpp"
#include "pitrans/generator.hpp"
#include "pitrans/gradcheck.hpp"
#include "pitrans/ops.hpp"

namespace pitrans {

namespace {

constexpr double kEps = 1e-3;
/// Sites whose eps and eps/2 quotients disagree by more than this straddle a kink.
constexpr double kKinkTolerance = 5e-3;

Tensor random_tensor(Rng& rng, Shape shape, double sd = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.mutable_data()) v = static_cast<float>(rng.normal(0.0, sd));
  return t;
}

/// Values at least `gap` away from zero, so kinked ops are probed on smooth pieces.
Tensor away_from_zero(Rng& rng, Shape shape, double gap = 0.05) {
  Tensor t(std::move(shape));
  for (auto& v : t.mutable_data()) {
    const double mag = gap + rng.uniform(0.0, 1.0);
    v = static_cast<float>(rng.uniform() < 0.5 ? -mag : mag);
  }
  return t;
}

/// sum(op() * r) for a random r drawn once, which gives every output element its own weight.
std::function<Tensor()> projected(std::function<Tensor()> op, std::uint64_t seed) {
  auto weights = std::make_shared<Tensor>();
  return [op = std::move(op), weights, seed]() {
    Tensor y = op();
    if (!weights->defined()) {
      Rng rng(seed, "projection");
      *weights = random_tensor(rng, y.shape());
    }
    return sum(mul(y, *weights));
  };
}

std::vector<ProbeSite> sample_sites(const std::vector<Tensor>& leaves, std::size_t per_leaf, Rng& rng) {
  std::vector<ProbeSite> sites;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    const auto n = static_cast<std::size_t>(leaves[l].numel());
    if (n <= per_leaf) {
      for (std::size_t i = 0; i < n; ++i) sites.push_back({l, i});
    } else {
      for (std::size_t k = 0; k < per_leaf; ++k) sites.push_back({l, static_cast<std::size_t>(rng.below(n))});
    }
  }
  return sites;
}

class Suite {
 public:
  explicit Suite(std::uint64_t seed) : seed_(seed), rng_(seed, "gradcheck") {}

  void check(const std::string& name, std::function<Tensor()> op, std::vector<Tensor> leaves,
             double tolerance = 1e-2, std::size_t per_leaf = 48, double eps = kEps) {
    const std::uint64_t proj_seed = rng_.next_u64();
    auto f = projected(std::move(op), proj_seed);
    const auto sites = sample_sites(leaves, per_leaf, rng_);
    const GradcheckResult r = gradcheck_sites(f, leaves, sites, eps, kKinkTolerance);
    cases.push_back({name, r.max_rel_error, tolerance, r.probes, r.skipped});
  }

  /// For ops that already return a scalar loss.
  void check_scalar(const std::string& name, std::function<Tensor()> op, std::vector<Tensor> leaves,
                    double tolerance = 1e-2, std::size_t per_leaf = 48, double eps = kEps) {
    const auto sites = sample_sites(leaves, per_leaf, rng_);
    const GradcheckResult r = gradcheck_sites(op, leaves, sites, eps, kKinkTolerance);
    cases.push_back({name, r.max_rel_error, tolerance, r.probes, r.skipped});
  }

  Rng& rng() { return rng_; }
  std::uint64_t seed() const { return seed_; }
  std::vector<GradcheckCase> cases;

 private:
  std::uint64_t seed_;
  Rng rng_;
};

void primitives(Suite& s) {
  Rng& rng = s.rng();
  const Shape sh{2, 3, 4};
  Tensor a = random_tensor(rng, sh), b = random_tensor(rng, sh);
  s.check("add", [=] { return add(a, b); }, {a, b});
  s.check("sub", [=] { return sub(a, b); }, {a, b});
  s.check("mul", [=] { return mul(a, b); }, {a, b});
  s.check("add_scalar", [=] { return add_scalar(a, 0.7f); }, {a});
  s.check("mul_scalar", [=] { return mul_scalar(a, -1.3f); }, {a});

  Tensor k = away_from_zero(rng, sh);
  s.check("abs", [=] { return abs(k); }, {k});
  s.check("relu", [=] { return relu(k); }, {k});
  s.check("leaky_relu", [=] { return leaky_relu(k, 0.2f); }, {k});
  s.check("tanh", [=] { return tanh(a); }, {a});
  s.check("sigmoid", [=] { return sigmoid(a); }, {a});
  Tensor pos(sh);
  for (auto& v : pos.mutable_data()) v = static_cast<float>(rng.uniform(0.5, 2.0));
  s.check("log", [=] { return log(pos); }, {pos});
  s.check("exp", [=] { return exp(a); }, {a});
  s.check("gelu", [=] { return gelu(a); }, {a});
  s.check("sum", [=] { return sum(a); }, {a});
  s.check("mean", [=] { return mean(a); }, {a});

  s.check("reshape", [=] { return reshape(a, {4, 6}); }, {a});
  s.check("permute", [=] { return permute(a, {2, 0, 1}); }, {a});
  s.check("transpose", [=] { return transpose(a); }, {a});
  Tensor c = random_tensor(rng, {2, 2, 4});
  s.check("concat", [=] { return concat({a, c}, 1); }, {a, c});
  s.check("narrow", [=] { return narrow(a, 2, 1, 2); }, {a});
  s.check("index_select", [=] { return index_select(a, 1, {2, 0, 2}); }, {a});
  Tensor img = random_tensor(rng, {1, 2, 3, 3});
  s.check("upsample_nearest2x", [=] { return upsample_nearest2x(img); }, {img});
  s.check("softmax", [=] { return softmax(a, 2); }, {a});
  Tensor m1 = random_tensor(rng, {2, 3, 4}), m2 = random_tensor(rng, {2, 4, 5});
  s.check("matmul", [=] { return matmul(m1, m2); }, {m1, m2});

  Tensor x = random_tensor(rng, {2, 3, 6, 6});
  Tensor w = random_tensor(rng, {4, 3, 3, 3}, 0.3), bias = random_tensor(rng, {4}, 0.1);
  s.check("conv2d", [=] { return conv2d(x, w, bias, 1, 1); }, {x, w, bias});
  s.check("conv2d_stride2", [=] { return conv2d(x, w, bias, 2, 1); }, {x, w, bias});
  Tensor w1 = random_tensor(rng, {4, 3, 1, 1}, 0.3);
  s.check("conv2d_pointwise", [=] { return conv2d(x, w1, bias, 1, 0); }, {x, w1, bias});
  Tensor w4 = random_tensor(rng, {2, 3, 4, 4}, 0.3), b4 = random_tensor(rng, {2}, 0.1);
  s.check("conv2d_k4", [=] { return conv2d(x, w4, b4, 2, 1); }, {x, w4, b4});

  Tensor lx = random_tensor(rng, {3, 5}), lw = random_tensor(rng, {4, 5}, 0.5), lb = random_tensor(rng, {4});
  s.check("linear", [=] { return linear(lx, lw, lb); }, {lx, lw, lb});

  Tensor bx = random_tensor(rng, {3, 2, 3, 3});
  Tensor gamma = random_tensor(rng, {2}), beta = random_tensor(rng, {2});
  Tensor rm(Shape{2}), rv(Shape{2}, 1.0f);
  s.check("batch_norm_train",
          [=]() mutable { return batch_norm(bx, gamma, beta, rm, rv, true, 0.1f, 1e-5f); }, {bx, gamma, beta});
  Tensor rm2 = random_tensor(rng, {2}, 0.2), rv2(Shape{2}, 1.5f);
  s.check("batch_norm_eval",
          [=]() mutable { return batch_norm(bx, gamma, beta, rm2, rv2, false, 0.1f, 1e-5f); }, {bx, gamma, beta});

  Tensor logits = random_tensor(rng, {2, 1, 3, 3}, 2.0);
  s.check_scalar("bce_with_logits_1", [=] { return bce_with_logits(logits, 1.0f); }, {logits});
  s.check_scalar("bce_with_logits_0", [=] { return bce_with_logits(logits, 0.0f); }, {logits});
}

std::vector<Tensor> trainable_of(const TensorList& list) { return trainable(list); }

/// Re-draws a block's state at unit scale. The small default init leaves pre-activations
/// within a probe step of the ReLU kink, which finite differences cannot resolve.
void randomize(const TensorList& list, Rng& rng) {
  for (const auto& e : list) {
    auto d = e.tensor.mutable_data();
    const auto ends_with = [&](const char* suffix) {
      const std::string sfx(suffix);
      return e.name.size() >= sfx.size() && e.name.compare(e.name.size() - sfx.size(), sfx.size(), sfx) == 0;
    };
    if (ends_with(".weight")) {
      const double fan_in = static_cast<double>(e.tensor.numel() / e.tensor.dim(0));
      for (auto& v : d) v = static_cast<float>(rng.normal(0.0, 1.0 / std::sqrt(fan_in)));
    } else if (ends_with(".gamma") || ends_with(".running_var")) {
      for (auto& v : d) v = static_cast<float>(rng.uniform(0.5, 1.5));
    } else {
      for (auto& v : d) v = static_cast<float>(rng.normal(0.0, 0.5));
    }
  }
}

template <class Block>
std::vector<Tensor> prepared(Block& block, Rng& rng) {
  TensorList p;
  block.collect(p);
  randomize(p, rng);
  block.set_training(false);
  return trainable_of(p);
}

void blocks(Suite& s) {
  Rng& rng = s.rng();
  Rng init(s.seed(), "gradcheck.init");

  // Blocks probe with BN in inference mode to avoid batch coupling.
  auto stem = std::make_shared<EncoderStem>("stem", 8, init);
  Tensor x6 = random_tensor(rng, {1, 3, 6, 6});
  {
    auto leaves = prepared(*stem, init);
    leaves.insert(leaves.begin(), x6);
    s.check("encoder_stem", [=] { return stem->forward(x6); }, leaves, 1e-2, 12);
  }

  auto up = std::make_shared<UpsampleBlock>("up", 4, 3, init);
  Tensor u = random_tensor(rng, {1, 4, 3, 3});
  {
    auto leaves = prepared(*up, init);
    leaves.insert(leaves.begin(), u);
    s.check("upsample_block", [=] { return up->forward(u); }, leaves, 1e-2, 12);
  }

  auto head = std::make_shared<DecoderHead>("head", 4, init);
  Tensor hx = random_tensor(rng, {1, 4, 6, 6});
  {
    auto leaves = prepared(*head, init);
    leaves.insert(leaves.begin(), hx);
    s.check("decoder_head", [=] { return head->forward(hx); }, leaves, 1e-2, 12);
  }

  PConvMlpSettings ps;
  ps.hs_cap = 8;
  auto block = std::make_shared<PConvMLPBlock>("pconv", 4, 8, 8, ps, init);
  Tensor px = random_tensor(rng, {1, 4, 8, 8});
  {
    auto leaves = prepared(*block, init);
    leaves.insert(leaves.begin(), px);
    s.check("pconvmlp_block", [=] { return block->forward(px); }, leaves, 1e-2, 12);
  }
  Tensor xc = random_tensor(rng, {1, 4, 4, 4}), xs = random_tensor(rng, {1, 4, 4, 4});
  s.check("pconvmlp_parallel_mlps",
          [=] {
            auto [fc, fs] = block->parallel_mlps(xc, xs);
            return concat({fc, fs}, 1);
          },
          {xc, xs, block->mlps->ch_fc1.weight, block->mlps->sp_fc1.weight, block->mlps->sp_fc2.bias}, 1e-2, 24);
  Tensor par = random_tensor(rng, {1, 6, 2, 2});
  s.check("parity_split",
          [=] {
            auto [o, e] = parity_split(par);
            return concat({mul_scalar(o, 2.0f), e}, 1);
          },
          {par});

  auto itm = std::make_shared<ImplicitTransform>("itm", 8, false, init);
  {
    TensorList p;
    itm->collect(p);
    randomize(p, init);
  }
  Tensor fq = random_tensor(rng, {1, 8, 3, 3}), fk = random_tensor(rng, {1, 8, 3, 3}),
         fv = random_tensor(rng, {1, 8, 3, 3});
  s.check("implicit_transform", [=] { return itm->forward(fq, fk, fv); },
          {fq, fk, fv, itm->q_proj.weight, itm->k_proj.weight, itm->q_proj.bias}, 1e-2, 24);
}

void losses(Suite& s) {
  Rng& rng = s.rng();
  Tensor img = random_tensor(rng, {1, 3, 8, 8}, 0.5), tgt = random_tensor(rng, {1, 3, 8, 8}, 0.5);
  // Keep |img - tgt| and neighbour differences away from the abs kink.
  s.check_scalar("tv_loss", [=] { return tv_loss(img); }, {img}, 1e-2, 64, 1e-4);
  s.check_scalar("l1_loss", [=] { return l1_loss(img, tgt); }, {img}, 1e-2, 64, 1e-4);
  s.check_scalar("mse_loss", [=] { return mse_loss(img, tgt); }, {img, tgt});
  auto ext = std::make_shared<PerceptualExtractor>();
  s.check_scalar("perceptual_loss", [=] { return perceptual_loss(img, tgt, *ext); }, {img}, 1e-2, 64);
  Tensor lr = random_tensor(rng, {1, 1, 3, 3}), lf = random_tensor(rng, {1, 1, 3, 3});
  s.check_scalar("adversarial_d", [=] { return adversarial_loss(lr, lf).d_loss; }, {lr, lf});
  s.check_scalar("adversarial_g", [=] { return adversarial_loss(lr, lf).g_loss; }, {lf});

  Rng init(s.seed(), "gradcheck.disc");
  auto d1 = std::make_shared<PatchDiscriminator>("D1", 2, init);
  auto d2 = std::make_shared<PatchDiscriminator>("D2", 2, init);
  randomize(d1->parameters(), init);
  randomize(d2->parameters(), init);
  d1->set_training(false);
  d2->set_training(false);
  const Shape ish{1, 3, 32, 32};
  // A ramp keeps every neighbour difference of `final` clear of the TV kink, and the
  // offsets keep both outputs clear of the L1 kink against the target.
  Tensor target = random_tensor(rng, ish, 0.5), aerial = random_tensor(rng, ish, 0.5);
  Tensor final(ish), direct;
  {
    auto d = final.mutable_data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      const auto row = static_cast<double>((i / 32) % 32), col = static_cast<double>(i % 32);
      d[i] = static_cast<float>(-0.8 + 0.03 * row + 0.02 * col + rng.uniform(-0.004, 0.004));
    }
    auto t = target.mutable_data();
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double gap = 0.05 + rng.uniform(0.0, 0.3);
      t[i] = static_cast<float>(d[i] + (rng.uniform() < 0.5 ? -gap : gap));
    }
    direct = add(target, mul_scalar(away_from_zero(rng, ish), 0.3f));
  }
  s.check_scalar("generator_objective",
                 [=] {
                   return generator_objective(direct, final, target, aerial, *d1, *d2, *ext, LossWeights{}).g_total;
                 },
                 {direct, final}, 1e-2, 24, 2e-3);
  s.check_scalar("discriminator_objective",
                 [=] { return discriminator_objective(direct, final, target, aerial, *d1, *d2); },
                 {d1->conv0.weight, d2->conv3.weight, d1->bn2.gamma}, 1e-2, 16);
}

void generator_probe(Suite& s) {
  Rng& rng = s.rng();
  GeneratorConfig cfg = GeneratorConfig::desk();
  cfg.seed = s.seed();
  auto g = std::make_shared<Generator>(cfg);
  g->set_training(false);
  const Shape ish{1, 3, cfg.image_size, cfg.image_size};
  Tensor aerial = random_tensor(rng, ish, 0.5), semantic = random_tensor(rng, ish, 0.5);
  // 16 parameter elements spread across the model.
  const TensorList params = g->parameters();
  std::vector<Tensor> leaves;
  std::vector<ProbeSite> sites;
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params[i].trainable) candidates.push_back(i);
  for (std::size_t k = 0; k < 16; ++k) {
    const auto& p = params[candidates[rng.below(candidates.size())]];
    leaves.push_back(p.tensor);
    sites.push_back({k, static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(p.tensor.numel())))});
  }
  auto f = [=] { return mean(g->forward(aerial, semantic).final); };
  const GradcheckResult r = gradcheck_sites(f, leaves, sites, kEps, kKinkTolerance);
  s.cases.push_back({"generator_end_to_end", r.max_rel_error, 2e-2, r.probes, r.skipped});
}

}  // namespace

std::vector<GradcheckCase> run_gradcheck_suite(std::uint64_t seed) {
  Suite s(seed);
  primitives(s);
  blocks(s);
  losses(s);
  generator_probe(s);
  return std::move(s.cases);
}

}  // namespace pitrans
