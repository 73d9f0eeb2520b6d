#pragma once

#include <functional>

#include "vrg/autograd.hpp"
#include "vrg/rng.hpp"

namespace vrg {

// Variational objective pieces.  KL terms are closed-form divergences between
// diagonal Gaussians; each is summed over latent dimensions (or pixels) per
// sample and averaged over the batch.  All return single-element Vars.

// mean + sqrt(variance) * noise, elementwise.  Differentiable in mean and
// variance; noise is supplied pre-drawn so gradients pass through the sample.
Var reparameterize(const Var& mean, const Var& variance, const Tensor& noise);

// KL( N(alpha, diag beta) || N(0, I) ) = sum_i alpha_i^2/2 + (beta_i - log beta_i - 1)/2,
// per sample, batch mean.  alpha, beta: [N, t]; beta strictly positive.
Var kl_latent(const Var& alpha, const Var& beta);

// KL( N(mu, diag sigma2) || N(x, eps0_sq I) )
//   = sum_j (mu_j - x_j)^2/(2 eps0_sq) + (sigma2_j/eps0_sq - log(sigma2_j/eps0_sq) - 1)/2,
// per sample, batch mean.  mu, sigma2, x: [N, C, H, W].
Var kl_background(const Var& mu, const Var& sigma2, const Var& x, double eps0_sq);

struct WassersteinLosses {
  Var critic;     // mean(fake) - mean(real), minimized by the critic
  Var generator;  // -mean(fake), minimized by the generator side
};
WassersteinLosses wasserstein_losses(const Var& real_scores, const Var& fake_scores);

// WGAN-GP penalty: lambda * mean_n (||d critic(xhat_n)/d xhat_n||_2 - 1)^2
// with xhat = u*real + (1-u)*fake, u ~ U(0,1) drawn per sample.  The result
// still carries the graph into the critic's parameters (second-order), so it
// is added directly to the critic loss.
using CriticFn = std::function<Var(const Var&)>;
Var gradient_penalty(const CriticFn& critic, const Tensor& real, const Tensor& fake,
                     double lambda, RngStream& rng);

struct LossBreakdown {
  double adv = 0.0;
  double kl_z = 0.0;
  double kl_b = 0.0;
  double total = 0.0;
};

struct Objective {
  Var total;  // gamma * adv + kl_z + kl_b, with the graph intact
  LossBreakdown report;
};

Objective total_objective(const Var& adv, const Var& kl_z, const Var& kl_b, double gamma);

}  // namespace vrg
