#include "vrg/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "vrg/errors.hpp"
#include "vrg/ops.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace vrg::train {

void TrainConfig::validate() const {
  VRG_CHECK(gamma >= 0 && std::isfinite(gamma), "gamma must be finite and >= 0");
  VRG_CHECK(eps0_sq > 0, "eps0_sq must be positive");
  VRG_CHECK(n_critic >= 1, "n_critic must be >= 1");
  VRG_CHECK(lambda_gp >= 0, "lambda_gp must be >= 0");
  VRG_CHECK(batch_size >= 1, "batch_size must be >= 1");
  VRG_CHECK(patches_per_epoch >= batch_size,
            "patches_per_epoch must cover at least one batch");
  VRG_CHECK(total_epochs >= 1, "total_epochs must be >= 1");
  VRG_CHECK(lr_bnet > 0 && lr_rnet > 0 && lr_gen > 0 && lr_critic > 0,
            "learning rates must be positive");
  for (size_t i = 1; i < decay_epochs.size(); ++i)
    VRG_CHECK(decay_epochs[i] > decay_epochs[i - 1],
              "decay_epochs must be strictly increasing");
  VRG_CHECK(variant == "full" || variant == "no_bnet",
            "variant must be full or no_bnet");
  VRG_CHECK(checkpoint_every >= 0, "checkpoint_every must be >= 0");
}

namespace {

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// Posterior scale parameters must stay positive and finite.  A violation is
// the model diverging, not caller error, so it raises NumericAbort (the run
// loop attaches a snapshot path before letting it escape).
void guard_scale(const Tensor& t, const char* what) {
  const double lo = t.min();
  const double hi = t.max();
  if (!(lo > 0.0) || !std::isfinite(hi))
    throw NumericAbort(std::string(what) + " left (0, inf): min " +
                       std::to_string(lo) + ", max " + std::to_string(hi));
}

}  // namespace

// total_epochs and checkpoint_every stay out of the digest deliberately:
// they are stopping/cadence conditions, not trajectory-defining, and
// "train 5 epochs, resume to 10" must remain a valid continuation.
std::string train_digest(const TrainConfig& c) {
  const json j{{"gamma", c.gamma},
               {"eps0_sq", c.eps0_sq},
               {"n_critic", c.n_critic},
               {"lambda_gp", c.lambda_gp},
               {"batch_size", c.batch_size},
               {"patches_per_epoch", c.patches_per_epoch},
               {"lr_bnet", c.lr_bnet},
               {"lr_rnet", c.lr_rnet},
               {"lr_gen", c.lr_gen},
               {"lr_critic", c.lr_critic},
               {"decay_epochs", c.decay_epochs},
               {"adam_beta1_dg", c.adam_beta1_dg},
               {"adam_beta2_dg", c.adam_beta2_dg},
               {"adam_beta1_br", c.adam_beta1_br},
               {"adam_beta2_br", c.adam_beta2_br},
               {"variant", c.variant},
               {"seed", c.seed}};
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a(j.dump())));
  return buf;
}

double lr_at(int64_t epoch, double base,
             const std::vector<int64_t>& decay_epochs) {
  VRG_CHECK(epoch >= 0, "epoch must be >= 0");
  int halvings = 0;
  for (int64_t d : decay_epochs)
    if (d <= epoch) ++halvings;
  return std::ldexp(base, -halvings);
}

Adam::Adam(nn::ParamStore& store, double beta1, double beta2, double eps)
    : store_(store), b1_(beta1), b2_(beta2), eps_(eps) {}

void Adam::step(const std::map<std::string, Tensor>& grads, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (const auto& [name, g] : grads) {
    const Var p = store_.param(name);
    VRG_CHECK(g.same_shape(p->value), "gradient shape mismatch for ", name);
    auto mit = m_.find(name);
    if (mit == m_.end()) {
      mit = m_.emplace(name, Tensor::zeros(g.shape())).first;
      v_.emplace(name, Tensor::zeros(g.shape()));
    }
    Tensor& m = mit->second;
    Tensor& v = v_.at(name);
    Tensor next(p->value.shape());
    for (int64_t i = 0; i < g.size(); ++i) {
      const double gi = g.data()[i];
      m.data()[i] = b1_ * m.data()[i] + (1 - b1_) * gi;
      v.data()[i] = b2_ * v.data()[i] + (1 - b2_) * gi * gi;
      next.data()[i] = p->value.data()[i] -
                       lr * (m.data()[i] / c1) /
                           (std::sqrt(v.data()[i] / c2) + eps_);
    }
    store_.load_param(name, next);
  }
}

void Adam::save_into(std::map<std::string, Tensor>& slots,
                     std::map<std::string, int64_t>& counters,
                     const std::string& prefix) const {
  counters[prefix + "t"] = t_;
  for (const auto& [name, m] : m_) slots[prefix + name + ".m"] = m.clone();
  for (const auto& [name, v] : v_) slots[prefix + name + ".v"] = v.clone();
}

void Adam::load_from(const std::map<std::string, Tensor>& slots,
                     const std::map<std::string, int64_t>& counters,
                     const std::string& prefix) {
  const auto it = counters.find(prefix + "t");
  if (it == counters.end())
    fail<CheckpointError>("checkpoint lacks optimizer counter ", prefix, "t");
  t_ = it->second;
  m_.clear();
  v_.clear();
  for (const auto& [key, t] : slots) {
    if (!key.starts_with(prefix)) continue;
    const std::string rest = key.substr(prefix.size());
    if (rest.ends_with(".m"))
      m_[rest.substr(0, rest.size() - 2)] = t.clone();
    else if (rest.ends_with(".v"))
      v_[rest.substr(0, rest.size() - 2)] = t.clone();
  }
}

namespace {

std::map<std::string, Tensor> grads_by_name(const Var& loss,
                                            const nn::ParamStore& store) {
  std::vector<Var> inputs = store.param_list();
  std::vector<Var> gs = ag::grad(loss, inputs);
  std::map<std::string, Tensor> out;
  size_t i = 0;
  for (const auto& [name, var] : store.params()) out[name] = gs[i++]->value;
  return out;
}

double scalar(const Var& v) { return v->value.item(); }

double tensor_mean(const Tensor& t) {
  double s = 0;
  for (int64_t i = 0; i < t.size(); ++i) s += t.data()[i];
  return s / static_cast<double>(t.size());
}

}  // namespace

Trainer::Trainer(const ArchConfig& arch, const TrainConfig& cfg)
    : cfg_(cfg), root_rng_(RngStream(cfg.seed).substream("train")) {
  arch.validate();
  cfg_.validate();
  model_ = std::make_unique<Model>(arch, cfg.seed);
  opt_rnet_ = std::make_unique<Adam>(model_->rnet.store(), cfg.adam_beta1_br,
                                     cfg.adam_beta2_br);
  opt_bnet_ = std::make_unique<Adam>(model_->bnet.store(), cfg.adam_beta1_br,
                                     cfg.adam_beta2_br);
  opt_gen_ = std::make_unique<Adam>(model_->gen.store(), cfg.adam_beta1_dg,
                                    cfg.adam_beta2_dg);
  opt_critic_ = std::make_unique<Adam>(model_->critic.store(),
                                       cfg.adam_beta1_dg, cfg.adam_beta2_dg);
}

// Rain + background sample with every graph edge dropped: used as critic
// input where only W_D may receive gradients.
Var Trainer::fake_batch_detached(const Tensor& o, const Tensor& x,
                                 RngStream& noise) {
  ag::NoGrad off;
  const Var ov = ag::constant(o);
  const auto post = model_->rnet.forward(ov);
  const Var beta = ag::exp(post.log_beta);
  guard_scale(beta->value, "latent posterior variance");
  const Var z =
      reparameterize(post.alpha, beta, noise.normal_tensor(post.alpha->value.shape()));
  const Var r = model_->gen.forward(z);
  Var b;
  if (cfg_.variant == "no_bnet") {
    b = ag::constant(x);
  } else {
    const auto bp = model_->bnet.forward(ov);
    const Var s2 = ag::exp(bp.log_sigma2);
    guard_scale(s2->value, "background posterior variance");
    b = reparameterize(bp.mu, s2, noise.normal_tensor(x.shape()));
  }
  return ag::add(r, b);
}

CriticStepStats Trainer::critic_update(const Tensor& o, const Tensor& x,
                                       RngStream& noise, double lr) {
  model_->critic.power_iterate(1);
  const Var fake = fake_batch_detached(o, x, noise);
  const Var s_real = model_->critic.forward(ag::constant(o));
  const Var s_fake = model_->critic.forward(fake);
  const auto w = wasserstein_losses(s_real, s_fake);
  const CriticFn fn = [this](const Var& in) {
    return model_->critic.forward(in);
  };
  const Var gp = gradient_penalty(fn, o, fake->value, cfg_.lambda_gp, noise);
  const Var loss = ag::add(w.critic, gp);
  opt_critic_->step(grads_by_name(loss, model_->critic.store()), lr);

  CriticStepStats st;
  st.real_mean = tensor_mean(s_real->value);
  st.fake_mean = tensor_mean(s_fake->value);
  st.gap = st.real_mean - st.fake_mean;
  st.gp = scalar(gp);
  return st;
}

double Trainer::bnet_update(const Tensor& o, const Tensor& x, RngStream& noise,
                            double lr) {
  VRG_CHECK(cfg_.variant == "full", "bnet_update is only valid for variant=full");
  const Var ov = ag::constant(o);
  const Var xv = ag::constant(x);
  const auto bp = model_->bnet.forward(ov);
  const Var s2 = ag::exp(bp.log_sigma2);
  guard_scale(s2->value, "background posterior variance");
  const Var klb = kl_background(bp.mu, s2, xv, cfg_.eps0_sq);
  const Var b = reparameterize(bp.mu, s2, noise.normal_tensor(x.shape()));

  Var r;
  {
    ag::NoGrad off;
    const auto post = model_->rnet.forward(ov);
    const Var beta = ag::exp(post.log_beta);
    const Var z = reparameterize(post.alpha, beta,
                                 noise.normal_tensor(post.alpha->value.shape()));
    r = model_->gen.forward(z);
  }
  const Var fake = ag::add(r, b);
  const Var adv = ag::neg(ag::mean(model_->critic.forward(fake)));
  const Var loss = ag::add(klb, ag::scale(adv, cfg_.gamma));
  opt_bnet_->step(grads_by_name(loss, model_->bnet.store()), lr);
  return scalar(klb);
}

std::pair<double, double> Trainer::rgen_update(const Tensor& o, const Tensor& x,
                                               RngStream& noise, double lr_r,
                                               double lr_g) {
  const Var ov = ag::constant(o);
  const auto post = model_->rnet.forward(ov);
  const Var beta = ag::exp(post.log_beta);
  guard_scale(beta->value, "latent posterior variance");
  const Var klz = kl_latent(post.alpha, beta);
  const Var z = reparameterize(post.alpha, beta,
                               noise.normal_tensor(post.alpha->value.shape()));
  const Var r = model_->gen.forward(z);

  Var b;
  if (cfg_.variant == "no_bnet") {
    b = ag::constant(x);
  } else {
    ag::NoGrad off;
    const auto bp = model_->bnet.forward(ov);
    const Var s2 = ag::exp(bp.log_sigma2);
    guard_scale(s2->value, "background posterior variance");
    b = reparameterize(bp.mu, s2, noise.normal_tensor(x.shape()));
  }
  const Var fake = ag::add(r, b);
  const Var adv = ag::neg(ag::mean(model_->critic.forward(fake)));
  const Var loss = ag::add(klz, ag::scale(adv, cfg_.gamma));

  std::vector<Var> inputs = model_->rnet.store().param_list();
  const size_t n_rnet = inputs.size();
  for (const Var& v : model_->gen.store().param_list()) inputs.push_back(v);
  std::vector<Var> gs = ag::grad(loss, inputs);

  std::map<std::string, Tensor> g_rnet, g_gen;
  size_t i = 0;
  for (const auto& [name, var] : model_->rnet.store().params())
    g_rnet[name] = gs[i++]->value;
  for (const auto& [name, var] : model_->gen.store().params())
    g_gen[name] = gs[i++]->value;
  VRG_CHECK(i == gs.size() && n_rnet == g_rnet.size(), "gradient bookkeeping");

  opt_rnet_->step(g_rnet, lr_r);
  opt_gen_->step(g_gen, lr_g);
  return {scalar(klz), scalar(adv)};
}

void Trainer::save(const std::string& path, int64_t epoch) const {
  ckpt::Checkpoint c;
  ckpt::store_model(c, *model_);
  c.variant = cfg_.variant;
  c.train_digest = train_digest(cfg_);
  c.epoch = epoch;
  c.seed = cfg_.seed;
  opt_rnet_->save_into(c.opt, c.counters, "adam.rnet.");
  opt_bnet_->save_into(c.opt, c.counters, "adam.bnet.");
  opt_gen_->save_into(c.opt, c.counters, "adam.gen.");
  opt_critic_->save_into(c.opt, c.counters, "adam.critic.");
  ckpt::save_checkpoint(c, path);
}

void Trainer::resume(const std::string& ckpt_path) {
  const ckpt::Checkpoint c = ckpt::load_checkpoint(ckpt_path);
  if (c.train_digest != train_digest(cfg_))
    fail<CheckpointError>(
        "checkpoint was written under a different training configuration: ",
        ckpt_path);
  ckpt::apply_model(c, *model_);
  opt_rnet_->load_from(c.opt, c.counters, "adam.rnet.");
  opt_bnet_->load_from(c.opt, c.counters, "adam.bnet.");
  opt_gen_->load_from(c.opt, c.counters, "adam.gen.");
  opt_critic_->load_from(c.opt, c.counters, "adam.critic.");
  start_epoch_ = c.epoch;
}

ckpt::ApplyReport Trainer::warm_start(const std::string& ckpt_path) {
  const ckpt::Checkpoint c = ckpt::load_checkpoint(ckpt_path);
  return ckpt::apply_model(c, *model_, cfg_.variant == "no_bnet");
}

TrainResult Trainer::run(const data::PairedDataset& ds,
                         const std::string& out_dir, const Callbacks& cb) {
  VRG_CHECK(ds.size() > 0, "training dataset is empty");
  fs::create_directories(out_dir);
  const std::string log_path = (fs::path(out_dir) / "loss_log.csv").string();
  const std::string latest = (fs::path(out_dir) / "ckpt_latest.vrg").string();

  std::ofstream log(log_path, std::ios::trunc);
  VRG_CHECK(log.good(), "cannot write loss log: ", log_path);
  log << "epoch,step,adv,kl_z,kl_b,total,lr_D,lr_G,wallclock_s\n";

  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
        .count();
  };
  char num[32];
  auto fmt = [&](double v) {
    std::snprintf(num, sizeof(num), "%.17g", v);
    return std::string(num);
  };

  const int64_t steps = cfg_.steps_per_epoch();
  for (int64_t epoch = start_epoch_; epoch < cfg_.total_epochs; ++epoch) {
    const double lr_d = lr_at(epoch, cfg_.lr_critic, cfg_.decay_epochs);
    const double lr_b = lr_at(epoch, cfg_.lr_bnet, cfg_.decay_epochs);
    const double lr_r = lr_at(epoch, cfg_.lr_rnet, cfg_.decay_epochs);
    const double lr_g = lr_at(epoch, cfg_.lr_gen, cfg_.decay_epochs);

    data::PatchSampler sampler(ds, model_->arch.patch_size,
                               root_rng_.for_epoch(static_cast<int>(epoch), "patches"));
    RngStream noise = root_rng_.for_epoch(static_cast<int>(epoch), "noise");

    for (int64_t step = 0; step < steps; ++step) {
      // The diverged state itself is the evidence, so every numeric abort
      // below carries a snapshot of it.
      try {
        for (int64_t k = 0; k < cfg_.n_critic; ++k) {
          const auto batch = sampler.next_batch(cfg_.batch_size);
          const CriticStepStats st =
              critic_update(batch.o, batch.x, noise, lr_d);
          if (cb.on_critic_step) cb.on_critic_step(epoch, step, st);
          if (!std::isfinite(st.real_mean) || !std::isfinite(st.fake_mean) ||
              !std::isfinite(st.gp))
            throw NumericAbort("non-finite critic loss");
        }

        const auto batch = sampler.next_batch(cfg_.batch_size);
        const double klb = cfg_.variant == "full"
                               ? bnet_update(batch.o, batch.x, noise, lr_b)
                               : 0.0;
        const auto [klz, adv] =
            rgen_update(batch.o, batch.x, noise, lr_r, lr_g);

        OuterStepRow row;
        row.epoch = epoch;
        row.step = step;
        row.adv = adv;
        row.kl_z = klz;
        row.kl_b = klb;
        row.total = cfg_.gamma * adv + klz + klb;
        row.lr_critic = lr_d;
        row.lr_gen = lr_g;
        row.wallclock_s = elapsed();
        log << row.epoch << ',' << row.step << ',' << fmt(row.adv) << ','
            << fmt(row.kl_z) << ',' << fmt(row.kl_b) << ',' << fmt(row.total)
            << ',' << fmt(row.lr_critic) << ',' << fmt(row.lr_gen) << ','
            << fmt(row.wallclock_s) << '\n';
        log.flush();
        if (cb.on_outer_step) cb.on_outer_step(row);

        if (!std::isfinite(row.total)) throw NumericAbort("non-finite loss");
      } catch (const NumericAbort& e) {
        if (!e.snapshot_path.empty()) throw;
        const std::string snap =
            (fs::path(out_dir) / "abort_snapshot.vrg").string();
        save(snap, epoch);
        throw NumericAbort(std::string(e.what()) + " at epoch " +
                               std::to_string(epoch) + " step " +
                               std::to_string(step),
                           snap);
      }
    }

    save(latest, epoch + 1);
    if (cfg_.checkpoint_every > 0 && (epoch + 1) % cfg_.checkpoint_every == 0)
      save((fs::path(out_dir) / ("ckpt_epoch" + std::to_string(epoch + 1) + ".vrg"))
               .string(),
           epoch + 1);
  }

  return {latest, log_path, cfg_.total_epochs - start_epoch_};
}

}  // namespace vrg::train
