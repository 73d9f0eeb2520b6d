#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "vrg/checkpoint.hpp"
#include "vrg/data.hpp"
#include "vrg/networks.hpp"
#include "vrg/nn.hpp"
#include "vrg/rng.hpp"
#include "vrg/variational.hpp"

namespace vrg::train {

struct TrainConfig {
  double gamma = 1.0;     // adversarial weight (1 synthetic, 0.01 SPA-style)
  double eps0_sq = 1e-6;  // background prior variance
  int64_t n_critic = 5;
  double lambda_gp = 10.0;
  int64_t batch_size = 18;
  int64_t patches_per_epoch = 18 * 3000;
  int64_t total_epochs = 700;
  double lr_bnet = 2e-4;
  double lr_rnet = 1e-4;
  double lr_gen = 1e-4;
  double lr_critic = 4e-4;
  std::vector<int64_t> decay_epochs = {400, 600, 650, 675, 690, 700};
  // Adam moments: WGAN-GP convention for critic/generator, standard for the
  // inference nets.
  double adam_beta1_dg = 0.5, adam_beta2_dg = 0.9;
  double adam_beta1_br = 0.9, adam_beta2_br = 0.999;
  std::string variant = "full";  // "full" | "no_bnet"
  uint64_t seed = 0;
  int64_t checkpoint_every = 0;  // also write ckpt_epochN.vrg every N epochs

  void validate() const;
  int64_t steps_per_epoch() const { return patches_per_epoch / batch_size; }
};

// Digest of the canonical serialization; stored in checkpoints so a resume
// with a different configuration is rejected instead of silently diverging.
std::string train_digest(const TrainConfig& c);

// base / 2^(number of decay epochs <= epoch)
double lr_at(int64_t epoch, double base, const std::vector<int64_t>& decay_epochs);

// Adam over one parameter store.  Updates go through ParamStore::load_param
// so every layer handle observes the new values.
class Adam {
 public:
  Adam(nn::ParamStore& store, double beta1, double beta2, double eps = 1e-8);

  void step(const std::map<std::string, Tensor>& grads, double lr);
  int64_t step_count() const { return t_; }

  void save_into(std::map<std::string, Tensor>& slots,
                 std::map<std::string, int64_t>& counters,
                 const std::string& prefix) const;
  void load_from(const std::map<std::string, Tensor>& slots,
                 const std::map<std::string, int64_t>& counters,
                 const std::string& prefix);

 private:
  nn::ParamStore& store_;
  double b1_, b2_, eps_;
  int64_t t_ = 0;
  std::map<std::string, Tensor> m_, v_;
};

struct CriticStepStats {
  double real_mean = 0.0;
  double fake_mean = 0.0;
  double gap = 0.0;  // real_mean - fake_mean
  double gp = 0.0;
};

struct OuterStepRow {
  int64_t epoch = 0;
  int64_t step = 0;
  double adv = 0.0;
  double kl_z = 0.0;
  double kl_b = 0.0;
  double total = 0.0;
  double lr_critic = 0.0;
  double lr_gen = 0.0;
  double wallclock_s = 0.0;
};

struct Callbacks {
  std::function<void(int64_t epoch, int64_t step, const CriticStepStats&)>
      on_critic_step;
  std::function<void(const OuterStepRow&)> on_outer_step;
};

struct TrainResult {
  std::string checkpoint_path;
  std::string log_path;
  int64_t epochs_run = 0;
};

// Algorithm: per outer step, n_critic critic updates on fresh batches (each
// preceded by one spectral-norm power iteration), then one BNet update and
// one joint RNet+generator update sharing a further fresh batch.
class Trainer {
 public:
  Trainer(const ArchConfig& arch, const TrainConfig& cfg);

  // Strict continuation: train config digest and variant must match.
  void resume(const std::string& ckpt_path);
  // Parameters only (epoch and optimizer state reset).  A full-variant
  // checkpoint may warm-start a no_bnet run; BNet entries are skipped.
  ckpt::ApplyReport warm_start(const std::string& ckpt_path);

  TrainResult run(const data::PairedDataset& ds, const std::string& out_dir,
                  const Callbacks& cb = {});

  // Single updates, exposed for the structural tests (update isolation).
  CriticStepStats critic_update(const Tensor& o, const Tensor& x,
                                RngStream& noise, double lr);
  double bnet_update(const Tensor& o, const Tensor& x, RngStream& noise,
                     double lr);                       // returns kl_b
  std::pair<double, double> rgen_update(const Tensor& o, const Tensor& x,
                                        RngStream& noise, double lr_r,
                                        double lr_g);  // (kl_z, adv)

  Model& model() { return *model_; }
  const TrainConfig& config() const { return cfg_; }
  int64_t start_epoch() const { return start_epoch_; }

  void save(const std::string& path, int64_t epoch) const;

 private:
  Var fake_batch_detached(const Tensor& o, const Tensor& x, RngStream& noise);

  TrainConfig cfg_;
  std::unique_ptr<Model> model_;
  std::unique_ptr<Adam> opt_rnet_, opt_bnet_, opt_gen_, opt_critic_;
  RngStream root_rng_;
  int64_t start_epoch_ = 0;
};

}  // namespace vrg::train
