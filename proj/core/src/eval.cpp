#include "vrg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "vrg/errors.hpp"
#include "vrg/image.hpp"
#include "vrg/ops.hpp"
#include "vrg/rng.hpp"
#include "vrg/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace vrg::eval {

double psnr(const Tensor& a, const Tensor& b, double peak) {
  VRG_CHECK(a.same_shape(b), "psnr: shape ", shape_str(a.shape()), " vs ",
            shape_str(b.shape()));
  VRG_CHECK(a.size() > 0, "psnr: empty input");
  VRG_CHECK(peak > 0.0, "psnr: peak must be positive, got ", peak);
  double mse = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

namespace {

constexpr int64_t kWin = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;  // (K1 * peak)^2
constexpr double kC2 = 0.03 * 0.03;  // (K2 * peak)^2

// Normalized 11x11 Gaussian, row-major.
const std::vector<double>& ssim_window() {
  static const std::vector<double> w = [] {
    std::vector<double> v(kWin * kWin);
    const int64_t c = kWin / 2;
    double s = 0.0;
    for (int64_t y = 0; y < kWin; ++y)
      for (int64_t x = 0; x < kWin; ++x) {
        const double dy = static_cast<double>(y - c);
        const double dx = static_cast<double>(x - c);
        v[static_cast<size_t>(y * kWin + x)] =
            std::exp(-(dx * dx + dy * dy) / (2.0 * kSigma * kSigma));
        s += v[static_cast<size_t>(y * kWin + x)];
      }
    for (double& e : v) e /= s;
    return v;
  }();
  return w;
}

}  // namespace

double ssim(const Tensor& a, const Tensor& b) {
  VRG_CHECK(a.same_shape(b), "ssim: shape ", shape_str(a.shape()), " vs ",
            shape_str(b.shape()));
  VRG_CHECK(a.ndim() == 3, "ssim expects [C,H,W], got ", shape_str(a.shape()));
  const Tensor ga = img::to_gray(a);
  const Tensor gb = img::to_gray(b);
  const int64_t H = ga.dim(1), W = ga.dim(2);
  VRG_CHECK(H >= kWin && W >= kWin, "ssim: image ", H, "x", W,
            " smaller than the ", kWin, "x", kWin, " window");

  const std::vector<double>& win = ssim_window();
  const double* pa = ga.data();
  const double* pb = gb.data();
  double acc = 0.0;
  int64_t count = 0;
  for (int64_t y = 0; y + kWin <= H; ++y)
    for (int64_t x = 0; x + kWin <= W; ++x) {
      double mu_a = 0.0, mu_b = 0.0;
      for (int64_t j = 0; j < kWin; ++j)
        for (int64_t k = 0; k < kWin; ++k) {
          const double w = win[static_cast<size_t>(j * kWin + k)];
          mu_a += w * pa[(y + j) * W + x + k];
          mu_b += w * pb[(y + j) * W + x + k];
        }
      double va = 0.0, vb = 0.0, vab = 0.0;
      for (int64_t j = 0; j < kWin; ++j)
        for (int64_t k = 0; k < kWin; ++k) {
          const double w = win[static_cast<size_t>(j * kWin + k)];
          const double da = pa[(y + j) * W + x + k] - mu_a;
          const double db = pb[(y + j) * W + x + k] - mu_b;
          va += w * da * da;
          vb += w * db * db;
          vab += w * da * db;
        }
      const double num = (2.0 * mu_a * mu_b + kC1) * (2.0 * vab + kC2);
      const double den =
          (mu_a * mu_a + mu_b * mu_b + kC1) * (va + vb + kC2);
      acc += num / den;
      ++count;
    }
  return acc / static_cast<double>(count);
}

namespace {

// [N,C,H,W] -> [N,1,H,W] luma (BT.601) as a graph op; C=1 passes through.
Var luma_var(const Var& x) {
  const int64_t C = x->value.dim(1);
  if (C == 1) return x;
  VRG_CHECK(C == 3, "ssim_index expects 1 or 3 channels, got ", C);
  Tensor w({1, 3, 1, 1});
  w.data()[0] = 0.299;
  w.data()[1] = 0.587;
  w.data()[2] = 0.114;
  return ag::conv2d(x, ag::constant(w), 1, 0);
}

}  // namespace

Var ssim_index(const Var& a, const Var& b) {
  VRG_CHECK(a && b, "ssim_index: null input");
  VRG_CHECK(a->value.same_shape(b->value), "ssim_index: shape ",
            shape_str(a->value.shape()), " vs ", shape_str(b->value.shape()));
  VRG_CHECK(a->value.ndim() == 4, "ssim_index expects [N,C,H,W], got ",
            shape_str(a->value.shape()));
  const int64_t H = a->value.dim(2), W = a->value.dim(3);
  VRG_CHECK(H >= kWin && W >= kWin, "ssim_index: image ", H, "x", W,
            " smaller than the ", kWin, "x", kWin, " window");

  const Var ya = luma_var(a);
  const Var yb = luma_var(b);

  Tensor wt({1, 1, kWin, kWin});
  std::copy(ssim_window().begin(), ssim_window().end(), wt.data());
  const Var win = ag::constant(wt);

  const Var mu_a = ag::conv2d(ya, win, 1, 0);
  const Var mu_b = ag::conv2d(yb, win, 1, 0);
  const Var s_aa = ag::sub(ag::conv2d(ag::square(ya), win, 1, 0), ag::square(mu_a));
  const Var s_bb = ag::sub(ag::conv2d(ag::square(yb), win, 1, 0), ag::square(mu_b));
  const Var s_ab = ag::sub(ag::conv2d(ag::mul(ya, yb), win, 1, 0), ag::mul(mu_a, mu_b));

  const Var num = ag::mul(ag::add_const(ag::scale(ag::mul(mu_a, mu_b), 2.0), kC1),
                          ag::add_const(ag::scale(s_ab, 2.0), kC2));
  const Var den = ag::mul(ag::add_const(ag::add(ag::square(mu_a), ag::square(mu_b)), kC1),
                          ag::add_const(ag::add(s_aa, s_bb), kC2));
  return ag::mean(ag::div(num, den));
}

namespace {

double sample_std(const std::vector<double>& v, double mean) {
  if (v.size() < 2) return 0.0;
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

double vec_mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) /
         static_cast<double>(v.size());
}

std::string num_str(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

json json_num(double v) {
  if (std::isfinite(v)) return json(v);
  return json(num_str(v));
}

}  // namespace

MetricReport evaluate_pairs(const data::PairedDataset& ds) {
  VRG_CHECK(ds.size() > 0, "evaluate_pairs: empty dataset");
  MetricReport r;
  std::vector<double> ps, ss;
  for (int64_t i = 0; i < ds.size(); ++i) {
    MetricRow row;
    row.id = ds.records[static_cast<size_t>(i)].id;
    row.psnr = psnr(ds.rainy[i], ds.clean[i]);
    row.ssim = ssim(ds.rainy[i], ds.clean[i]);
    ps.push_back(row.psnr);
    ss.push_back(row.ssim);
    r.rows.push_back(std::move(row));
  }
  r.psnr_mean = vec_mean(ps);
  r.psnr_std = sample_std(ps, r.psnr_mean);
  r.ssim_mean = vec_mean(ss);
  r.ssim_std = sample_std(ss, r.ssim_mean);
  return r;
}

void write_report(const MetricReport& r, const std::string& csv_path,
                  const std::string& json_path) {
  std::ofstream csv(csv_path, std::ios::trunc);
  VRG_CHECK(csv.good(), "cannot write ", csv_path);
  csv << "id,psnr,ssim\n";
  for (const MetricRow& row : r.rows)
    csv << row.id << ',' << num_str(row.psnr) << ',' << num_str(row.ssim)
        << '\n';
  csv << "mean," << num_str(r.psnr_mean) << ',' << num_str(r.ssim_mean)
      << '\n';
  csv << "std," << num_str(r.psnr_std) << ',' << num_str(r.ssim_std) << '\n';

  json rows = json::array();
  for (const MetricRow& row : r.rows)
    rows.push_back({{"id", row.id},
                    {"psnr", json_num(row.psnr)},
                    {"ssim", json_num(row.ssim)}});
  const json j{{"rows", rows},
               {"psnr_mean", json_num(r.psnr_mean)},
               {"psnr_std", json_num(r.psnr_std)},
               {"ssim_mean", json_num(r.ssim_mean)},
               {"ssim_std", json_num(r.ssim_std)},
               {"ssim_window", r.params.window},
               {"ssim_sigma", r.params.sigma},
               {"ssim_k1", r.params.k1},
               {"ssim_k2", r.params.k2},
               {"notes", r.notes}};
  std::ofstream js(json_path, std::ios::trunc);
  VRG_CHECK(js.good(), "cannot write ", json_path);
  js << j.dump(2) << '\n';
}

void DerainerSpec::validate() const {
  VRG_CHECK(width >= 1 && stages >= 1 && resblocks >= 0,
            "derainer: bad architecture sizes");
  VRG_CHECK(patch >= 32, "derainer: patch must be >= 32, got ", patch);
  VRG_CHECK(batch >= 1 && steps_per_epoch >= 1 && epochs >= 1,
            "derainer: bad training sizes");
  VRG_CHECK(lr > 0.0, "derainer: lr must be positive");
}

void ExperimentSpec::validate(int64_t pool_size) const {
  VRG_CHECK(n_real >= 1, "experiment: n_real must be >= 1");
  VRG_CHECK(!n_fake_list.empty(), "experiment: n_fake_list is empty");
  for (int64_t n : n_fake_list)
    VRG_CHECK(n >= 0, "experiment: n_fake must be >= 0, got ", n);
  VRG_CHECK(n_seeds >= 1, "experiment: n_seeds must be >= 1");
  VRG_CHECK(holdout_frac > 0.0 && holdout_frac < 1.0,
            "experiment: holdout_frac must be in (0,1)");
  derainer.validate();
  const int64_t holdout = std::max<int64_t>(
      1, std::llround(holdout_frac * static_cast<double>(pool_size)));
  VRG_CHECK(n_real + holdout <= pool_size, "experiment: pool of ", pool_size,
            " cannot supply ", n_real, " training pairs plus ", holdout,
            " held-out pairs");
}

namespace {

// The derainer reuses the recurrent background net; the unrelated ArchConfig
// fields just have to satisfy validation for a 32-pixel patch.
ArchConfig derainer_arch(int64_t channels, const DerainerSpec& d) {
  ArchConfig a;
  a.image_channels = channels;
  a.patch_size = 32;
  a.latent_dim = 1;
  a.rnet_channels = {1, 1, 1, 1};
  a.disc_channels = {1, 1, 1};
  a.bnet_width = d.width;
  a.bnet_stages = d.stages;
  a.bnet_resblocks = d.resblocks;
  a.attention_blocks = 0;
  return a;
}

data::PairedDataset subset(const data::PairedDataset& ds,
                           const std::vector<int64_t>& idx) {
  data::PairedDataset out;
  out.layout = "memory";
  for (int64_t i : idx) {
    out.records.push_back(ds.records[static_cast<size_t>(i)]);
    out.rainy.push_back(ds.rainy[i]);
    out.clean.push_back(ds.clean[i]);
  }
  return out;
}

Tensor clamp01(const Tensor& t) {
  Tensor out(t.shape());
  for (int64_t i = 0; i < t.size(); ++i)
    out.data()[i] = std::clamp(t.data()[i], 0.0, 1.0);
  return out;
}

}  // namespace

std::pair<double, double> train_and_eval_derainer(
    const data::PairedDataset& train, const data::PairedDataset& holdout,
    const DerainerSpec& spec, uint64_t seed) {
  spec.validate();
  VRG_CHECK(train.size() > 0 && holdout.size() > 0,
            "derainer: empty train or holdout set");

  RngStream root(seed);
  const int64_t channels = train.rainy[0].dim(0);
  const ArchConfig arch = derainer_arch(channels, spec);
  BNet net(arch, root.substream("init"));
  vrg::train::Adam opt(net.store(), 0.9, 0.999);

  data::PatchSampler sampler(train, spec.patch, root.substream("patches"));
  for (int64_t e = 0; e < spec.epochs; ++e)
    for (int64_t s = 0; s < spec.steps_per_epoch; ++s) {
      const auto batch = sampler.next_batch(spec.batch);
      const Var o = ag::constant(batch.o);
      const Var x = ag::constant(batch.x);
      const Var mu = net.forward(o).mu;
      const Var loss = ag::neg(ssim_index(mu, x));

      std::vector<Var> params = net.store().param_list();
      const std::vector<Var> gs = ag::grad(loss, params);
      std::map<std::string, Tensor> grads;
      size_t gi = 0;
      for (const auto& [name, var] : net.store().params())
        grads[name] = gs[gi++]->value;
      opt.step(grads, spec.lr);
    }

  std::vector<double> ps, ss;
  ag::NoGrad off;
  for (int64_t i = 0; i < holdout.size(); ++i) {
    const Tensor& o = holdout.rainy[i];
    const Var batch =
        ag::constant(o.reshaped({1, o.dim(0), o.dim(1), o.dim(2)}));
    const Tensor mu = net.forward(batch).mu->value.reshaped(o.shape());
    const Tensor est = clamp01(mu);
    ps.push_back(psnr(est, holdout.clean[i]));
    ss.push_back(ssim(est, holdout.clean[i]));
  }
  return {vec_mean(ps), vec_mean(ss)};
}

namespace {

std::string experiment_digest(const ExperimentSpec& s) {
  const json j{{"n_real", s.n_real},
               {"n_fake_list", s.n_fake_list},
               {"n_seeds", s.n_seeds},
               {"base_seed", s.base_seed},
               {"holdout_frac", s.holdout_frac},
               {"policy", s.augment.policy},
               {"clamp", s.augment.clamp},
               {"overlap", s.augment.overlap},
               {"derainer",
                {{"width", s.derainer.width},
                 {"stages", s.derainer.stages},
                 {"resblocks", s.derainer.resblocks},
                 {"patch", s.derainer.patch},
                 {"batch", s.derainer.batch},
                 {"steps_per_epoch", s.derainer.steps_per_epoch},
                 {"epochs", s.derainer.epochs},
                 {"lr", s.derainer.lr}}}};
  const std::string dump = j.dump();
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : dump) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

ExperimentReport small_sample_experiment(const Generator& g,
                                         const data::PairedDataset& pool,
                                         const ExperimentSpec& spec,
                                         const std::string& out_dir,
                                         const DerainerFn& derainer) {
  spec.validate(pool.size());
  fs::create_directories(out_dir);

  const DerainerFn run_derainer =
      derainer ? derainer
               : [&spec](const data::PairedDataset& train,
                         const data::PairedDataset& holdout, uint64_t seed) {
                   return train_and_eval_derainer(train, holdout,
                                                  spec.derainer, seed);
                 };

  ExperimentReport rep;
  rep.config_digest = experiment_digest(spec);
  for (int64_t s = 0; s < spec.n_seeds; ++s)
    rep.seeds.push_back(spec.base_seed + static_cast<uint64_t>(s));

  const int64_t holdout_n = std::max<int64_t>(
      1, std::llround(spec.holdout_frac * static_cast<double>(pool.size())));

  struct ArmKey {
    std::string arm;
    int64_t n_fake;
  };
  std::vector<ArmKey> arms;
  arms.push_back({"baseline", 0});
  for (int64_t n : spec.n_fake_list) arms.push_back({"augmented", n});

  std::map<std::pair<std::string, int64_t>, std::vector<std::array<double, 2>>>
      per_arm;

  for (uint64_t seed : rep.seeds) {
    // Seeded shuffle; the first holdout_n indices are held out.
    std::vector<int64_t> order(static_cast<size_t>(pool.size()));
    std::iota(order.begin(), order.end(), 0);
    RngStream split = RngStream(seed).substream("split");
    for (int64_t i = pool.size() - 1; i > 0; --i)
      std::swap(order[static_cast<size_t>(i)],
                order[static_cast<size_t>(split.uniform_int(i + 1))]);
    const std::vector<int64_t> hold_idx(order.begin(),
                                        order.begin() + holdout_n);
    const std::vector<int64_t> real_idx(
        order.begin() + holdout_n, order.begin() + holdout_n + spec.n_real);
    const data::PairedDataset holdout = subset(pool, hold_idx);
    const data::PairedDataset real = subset(pool, real_idx);

    // Identical (train set, derainer seed) arms share one measurement; the
    // baseline is exactly the augmented arm at N_f = 0.
    std::map<int64_t, std::array<double, 2>> cache;
    for (const ArmKey& arm : arms) {
      std::array<double, 2> m{};
      const auto hit = cache.find(arm.n_fake);
      if (hit != cache.end()) {
        m = hit->second;
      } else {
        data::PairedDataset train_set;
        if (arm.n_fake == 0) {
          train_set = real;
        } else {
          gen::AugmentSpec aspec = spec.augment;
          aspec.n_fake = arm.n_fake;
          aspec.seed = RngStream(seed)
                           .substream("augment-seed")
                           .substream(static_cast<uint64_t>(arm.n_fake))
                           .key();
          const fs::path arm_dir =
              fs::path(out_dir) / ("seed" + std::to_string(seed) + "_nf" +
                                   std::to_string(arm.n_fake));
          gen::augment_dataset(g, real, aspec, arm_dir.string());
          train_set =
              data::load_paired_dataset(arm_dir.string(), "rain100");
        }
        const uint64_t dseed =
            RngStream(seed).substream("derainer").key();
        const auto [p, ss] = run_derainer(train_set, holdout, dseed);
        m = {p, ss};
        cache[arm.n_fake] = m;
      }
      rep.cells.push_back({arm.arm, arm.n_fake, seed, m[0], m[1]});
      per_arm[{arm.arm, arm.n_fake}].push_back(m);
    }
  }

  for (const ArmKey& arm : arms) {
    const auto& v = per_arm[{arm.arm, arm.n_fake}];
    ArmSummary sm;
    sm.arm = arm.arm;
    sm.n_fake = arm.n_fake;
    for (const auto& m : v) {
      sm.psnr_per_seed.push_back(m[0]);
      sm.ssim_per_seed.push_back(m[1]);
    }
    sm.psnr_mean = vec_mean(sm.psnr_per_seed);
    sm.psnr_std = sample_std(sm.psnr_per_seed, sm.psnr_mean);
    sm.ssim_mean = vec_mean(sm.ssim_per_seed);
    sm.ssim_std = sample_std(sm.ssim_per_seed, sm.ssim_mean);
    rep.summary.push_back(std::move(sm));
  }

  rep.csv_path = (fs::path(out_dir) / "experiment_cells.csv").string();
  std::ofstream csv(rep.csv_path, std::ios::trunc);
  VRG_CHECK(csv.good(), "cannot write ", rep.csv_path);
  csv << "arm,n_fake,seed,psnr,ssim\n";
  for (const ArmCell& c : rep.cells)
    csv << c.arm << ',' << c.n_fake << ',' << c.seed << ',' << num_str(c.psnr)
        << ',' << num_str(c.ssim) << '\n';

  rep.json_path = (fs::path(out_dir) / "experiment_summary.json").string();
  json jarms = json::array();
  for (const ArmSummary& sm : rep.summary) {
    json per_psnr = json::array(), per_ssim = json::array();
    for (double v : sm.psnr_per_seed) per_psnr.push_back(json_num(v));
    for (double v : sm.ssim_per_seed) per_ssim.push_back(json_num(v));
    jarms.push_back({{"arm", sm.arm},
                     {"n_fake", sm.n_fake},
                     {"psnr_mean", json_num(sm.psnr_mean)},
                     {"psnr_std", json_num(sm.psnr_std)},
                     {"ssim_mean", json_num(sm.ssim_mean)},
                     {"ssim_std", json_num(sm.ssim_std)},
                     {"psnr_per_seed", per_psnr},
                     {"ssim_per_seed", per_ssim}});
  }
  json jseeds = json::array();
  for (uint64_t s : rep.seeds) jseeds.push_back(s);
  const json j{{"config_digest", rep.config_digest},
               {"seeds", jseeds},
               {"n_real", spec.n_real},
               {"holdout_frac", spec.holdout_frac},
               {"arms", jarms}};
  std::ofstream js(rep.json_path, std::ios::trunc);
  VRG_CHECK(js.good(), "cannot write ", rep.json_path);
  js << j.dump(2) << '\n';

  return rep;
}

}  // namespace vrg::eval
