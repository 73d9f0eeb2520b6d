#include "vrg/variational.hpp"

#include "vrg/errors.hpp"
#include "vrg/ops.hpp"

namespace vrg {

namespace ag = vrg::ag;

Var reparameterize(const Var& mean, const Var& variance, const Tensor& noise) {
  VRG_CHECK(mean && variance, "reparameterize: null input");
  VRG_CHECK(mean->value.same_shape(variance->value) && mean->value.same_shape(noise),
            "reparameterize: shape mismatch mean ", shape_str(mean->value.shape()),
            " variance ", shape_str(variance->value.shape()), " noise ",
            shape_str(noise.shape()));
  VRG_CHECK(variance->value.min() >= 0.0, "reparameterize: negative variance ",
            variance->value.min());
  return ag::add(mean, ag::mul(ag::sqrt(variance), ag::constant(noise)));
}

Var kl_latent(const Var& alpha, const Var& beta) {
  VRG_CHECK(alpha && beta, "kl_latent: null input");
  VRG_CHECK(alpha->value.same_shape(beta->value), "kl_latent: alpha ",
            shape_str(alpha->value.shape()), " vs beta ", shape_str(beta->value.shape()));
  VRG_CHECK(alpha->value.ndim() == 2, "kl_latent expects [N,t], got ",
            shape_str(alpha->value.shape()));
  VRG_CHECK(alpha->value.dim(0) >= 1, "kl_latent: empty batch");
  VRG_CHECK(beta->value.min() > 0.0, "kl_latent: beta must be strictly positive, min is ",
            beta->value.min());
  Var term = ag::add(ag::square(alpha), ag::sub(ag::sub(beta, ag::log(beta)),
                                                ag::constant(Tensor::ones(beta->value.shape()))));
  return ag::mean(ag::sum_per_sample(ag::scale(term, 0.5)));
}

Var kl_background(const Var& mu, const Var& sigma2, const Var& x, double eps0_sq) {
  VRG_CHECK(mu && sigma2 && x, "kl_background: null input");
  VRG_CHECK(mu->value.same_shape(sigma2->value) && mu->value.same_shape(x->value),
            "kl_background: shape mismatch mu ", shape_str(mu->value.shape()), " sigma2 ",
            shape_str(sigma2->value.shape()), " x ", shape_str(x->value.shape()));
  VRG_CHECK(mu->value.ndim() == 4, "kl_background expects [N,C,H,W], got ",
            shape_str(mu->value.shape()));
  VRG_CHECK(mu->value.dim(0) >= 1, "kl_background: empty batch");
  VRG_CHECK(eps0_sq > 0.0, "kl_background: eps0_sq must be positive, got ", eps0_sq);
  VRG_CHECK(sigma2->value.min() > 0.0, "kl_background: sigma2 must be strictly positive, min is ",
            sigma2->value.min());
  Var ratio = ag::scale(sigma2, 1.0 / eps0_sq);
  Var quad = ag::scale(ag::square(ag::sub(mu, x)), 0.5 / eps0_sq);
  Var spread = ag::scale(ag::sub(ag::sub(ratio, ag::log(ratio)),
                                 ag::constant(Tensor::ones(ratio->value.shape()))),
                         0.5);
  return ag::mean(ag::sum_per_sample(ag::add(quad, spread)));
}

WassersteinLosses wasserstein_losses(const Var& real_scores, const Var& fake_scores) {
  VRG_CHECK(real_scores && fake_scores, "wasserstein_losses: null input");
  VRG_CHECK(real_scores->value.ndim() == 1 && fake_scores->value.ndim() == 1,
            "wasserstein_losses expects score vectors, got ",
            shape_str(real_scores->value.shape()), " / ", shape_str(fake_scores->value.shape()));
  VRG_CHECK(real_scores->value.size() >= 1 && fake_scores->value.size() >= 1,
            "wasserstein_losses: empty score vector");
  WassersteinLosses out;
  out.generator = ag::neg(ag::mean(fake_scores));
  out.critic = ag::sub(ag::mean(fake_scores), ag::mean(real_scores));
  return out;
}

Var gradient_penalty(const CriticFn& critic, const Tensor& real, const Tensor& fake,
                     double lambda, RngStream& rng) {
  VRG_CHECK(real.same_shape(fake), "gradient_penalty: real ", shape_str(real.shape()),
            " vs fake ", shape_str(fake.shape()));
  VRG_CHECK(real.ndim() == 4 && real.dim(0) >= 1, "gradient_penalty expects [N,C,H,W], got ",
            shape_str(real.shape()));
  VRG_CHECK(lambda >= 0.0, "gradient_penalty: negative lambda ", lambda);
  const int64_t n = real.dim(0);
  const int64_t per = real.size() / n;
  Tensor mix(real.shape());
  for (int64_t i = 0; i < n; ++i) {
    const double u = rng.uniform();
    const double* rp = real.data() + i * per;
    const double* fp = fake.data() + i * per;
    double* mp = mix.data() + i * per;
    for (int64_t j = 0; j < per; ++j) mp[j] = u * rp[j] + (1.0 - u) * fp[j];
  }
  Var xhat = ag::leaf(std::move(mix));
  Var scores = critic(xhat);
  auto g = ag::grad(ag::sum(scores), {xhat}, nullptr, /*create_graph=*/true);
  Var norm_sq = ag::sum_per_sample(ag::square(g[0]));
  // The epsilon keeps sqrt differentiable at an exactly zero gradient; its
  // effect on the penalty value is below 1e-30.
  Var norm = ag::sqrt(ag::add_const(norm_sq, 1e-16));
  return ag::scale(ag::mean(ag::square(ag::add_const(norm, -1.0))), lambda);
}

Objective total_objective(const Var& adv, const Var& kl_z, const Var& kl_b, double gamma) {
  VRG_CHECK(adv && kl_z && kl_b, "total_objective: null term");
  VRG_CHECK(adv->value.size() == 1 && kl_z->value.size() == 1 && kl_b->value.size() == 1,
            "total_objective expects scalar terms");
  Objective o;
  o.total = ag::add(ag::scale(adv, gamma), ag::add(kl_z, kl_b));
  o.report.adv = adv->value.item();
  o.report.kl_z = kl_z->value.item();
  o.report.kl_b = kl_b->value.item();
  o.report.total = o.total->value.item();
  return o;
}

}  // namespace vrg
