#pragma once

#include <functional>
#include <string>
#include <vector>

#include "vrg/autograd.hpp"
#include "vrg/data.hpp"
#include "vrg/generate.hpp"
#include "vrg/networks.hpp"
#include "vrg/tensor.hpp"

namespace vrg::eval {

// 10 log10(peak^2 / MSE), MSE over all channels jointly.  Identical inputs
// give +infinity (serialized downstream as the string "inf").
double psnr(const Tensor& a, const Tensor& b, double peak = 1.0);

// Mean local SSIM over valid 11x11 windows: Gaussian weights sigma=1.5,
// K1=0.01, K2=0.03, peak 1.  Color inputs are reduced to BT.601 luma first.
// Identical inputs give exactly 1.0.
double ssim(const Tensor& a, const Tensor& b);

// SSIM window constants, exposed so reports can record them.
struct SsimParams {
  int64_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
};

// Differentiable mean SSIM for [N,C,H,W] pairs (C = 1, or 3 reduced to luma
// inside the graph); used as a negative loss by the stand-in derainer.
Var ssim_index(const Var& a, const Var& b);

struct MetricRow {
  std::string id;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct MetricReport {
  std::vector<MetricRow> rows;
  double psnr_mean = 0.0, psnr_std = 0.0;
  double ssim_mean = 0.0, ssim_std = 0.0;
  SsimParams params;
  // Documented conventions: PSNR over all channels jointly, SSIM on luma.
  std::string notes = "psnr=joint-channels ssim=luma";
};

// Rainy-vs-clean metrics over a paired dataset (e.g. derained outputs against
// ground truth loaded as a pair layout).
MetricReport evaluate_pairs(const data::PairedDataset& ds);

// CSV ("id,psnr,ssim" rows plus a mean/std footer) and a JSON summary; the
// +inf sentinel is written as the string "inf" in both.
void write_report(const MetricReport& r, const std::string& csv_path,
                  const std::string& json_path);

// Stand-in derainer: the progressive recurrent background net trained alone
// under a negative-SSIM loss.
struct DerainerSpec {
  int64_t width = 8;
  int64_t stages = 2;
  int64_t resblocks = 1;
  int64_t patch = 32;
  int64_t batch = 4;
  int64_t steps_per_epoch = 32;
  int64_t epochs = 3;
  double lr = 1e-3;

  void validate() const;
};

struct ExperimentSpec {
  int64_t n_real = 50;
  std::vector<int64_t> n_fake_list = {0, 25, 50};
  int64_t n_seeds = 5;
  uint64_t base_seed = 0;
  double holdout_frac = 0.1;  // seeded split, fixed per seed
  gen::AugmentSpec augment;   // seed is derived per arm
  DerainerSpec derainer;

  void validate(int64_t pool_size) const;
};

// One (arm, N_f, seed) measurement: held-out means after training.
struct ArmCell {
  std::string arm;  // "baseline" | "augmented"
  int64_t n_fake = 0;
  uint64_t seed = 0;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct ArmSummary {
  std::string arm;
  int64_t n_fake = 0;
  double psnr_mean = 0.0, psnr_std = 0.0;
  double ssim_mean = 0.0, ssim_std = 0.0;
  std::vector<double> psnr_per_seed, ssim_per_seed;
};

struct ExperimentReport {
  std::vector<ArmCell> cells;
  std::vector<ArmSummary> summary;
  std::vector<uint64_t> seeds;
  std::string config_digest;
  std::string csv_path, json_path;
};

// Trains on the given pairs, evaluates on the held-out pairs, returns
// (mean psnr, mean ssim).  Swappable so other derainers can ride the harness.
using DerainerFn = std::function<std::pair<double, double>(
    const data::PairedDataset& train, const data::PairedDataset& holdout,
    uint64_t seed)>;

// Built-in recipe behind the default DerainerFn.
std::pair<double, double> train_and_eval_derainer(
    const data::PairedDataset& train, const data::PairedDataset& holdout,
    const DerainerSpec& spec, uint64_t seed);

// Table-1-shaped protocol at desk scale.  Per seed: seeded shuffle splits off
// a holdout fraction; the baseline arm trains on n_real real pairs; each
// augmented arm adds n_fake generated pairs via augment_dataset.  The
// baseline row is identical to an augmented arm with N_f = 0.
ExperimentReport small_sample_experiment(const Generator& g,
                                         const data::PairedDataset& pool,
                                         const ExperimentSpec& spec,
                                         const std::string& out_dir,
                                         const DerainerFn& derainer = {});

}  // namespace vrg::eval
