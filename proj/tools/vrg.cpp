// vrg: training, sampling, latent analysis, augmentation, and evaluation for
// the variational rain generation model.
//
// Every command accepts --config <file.json> holding the same keys as its
// flags (dashes become underscores).  Precedence: built-in defaults, then
// --preset where offered, then the config file, then explicit flags.  The
// merged result is written to <out>/effective_config.json, and rerunning a
// command with only that file reproduces the run.
//
// Exit codes: 0 success, 2 usage/config error, 3 data/checkpoint error,
// 4 numeric abort (diagnostic snapshot path printed).

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vrg/checkpoint.hpp"
#include "vrg/data.hpp"
#include "vrg/errors.hpp"
#include "vrg/eval.hpp"
#include "vrg/generate.hpp"
#include "vrg/image.hpp"
#include "vrg/networks.hpp"
#include "vrg/ops.hpp"
#include "vrg/rng.hpp"
#include "vrg/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace vrg;

namespace {

// ---------------------------------------------------------------------------
// Config plumbing: each option is registered once and gets, in one place, its
// CLI flag, its JSON key, and its slot in the effective config.

struct Binder {
  std::set<std::string> keys;
  std::vector<std::function<void(const json&)>> loaders;
  std::vector<std::function<void(json&)>> dumpers;
  std::vector<std::function<void(json&)>> passed_dumpers;

  template <class T>
  CLI::Option* opt(CLI::App* app, const std::string& flag, T& var,
                   const std::string& help) {
    CLI::Option* o = app->add_option(flag, var, help);
    wire(o, flag, var);
    return o;
  }

  // On/off switch, e.g. "--clamp,!--no-clamp"; serialized as a bool key.
  CLI::Option* onoff(CLI::App* app, const std::string& spec, bool& var,
                     const std::string& help) {
    CLI::Option* o = app->add_flag(spec, var, help);
    wire(o, spec.substr(0, spec.find(',')), var);
    return o;
  }

  void apply(const json& j) const {
    for (const auto& f : loaders) f(j);
  }
  json effective() const {
    json j = json::object();
    for (const auto& f : dumpers) f(j);
    return j;
  }
  json passed() const {
    json j = json::object();
    for (const auto& f : passed_dumpers) f(j);
    return j;
  }

 private:
  template <class T>
  void wire(CLI::Option* o, const std::string& flag, T& var) {
    std::string key = flag;
    while (!key.empty() && key.front() == '-') key.erase(key.begin());
    std::replace(key.begin(), key.end(), '-', '_');
    keys.insert(key);
    loaders.push_back([key, &var](const json& j) {
      if (!j.contains(key)) return;
      try {
        var = j.at(key).get<T>();
      } catch (const json::exception& e) {
        fail("config key '", key, "': ", e.what());
      }
    });
    dumpers.push_back([key, &var](json& j) { j[key] = var; });
    passed_dumpers.push_back([key, &var, o](json& j) {
      if (o->count() > 0) j[key] = var;
    });
  }
};

// Keys outside the command's flag set are typos, not extensions; keys with a
// leading underscore are metadata written by us and are skipped.
json load_config_file(const std::string& path,
                      const std::set<std::string>& known) {
  std::ifstream f(path);
  if (!f.good()) fail<DataError>("cannot read config file: ", path);
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    fail("config file ", path, ": ", e.what());
  }
  if (!j.is_object()) fail("config file ", path, ": expected a JSON object");
  json out = json::object();
  for (const auto& [key, value] : j.items()) {
    if (!key.empty() && key.front() == '_') continue;
    if (!known.count(key)) fail("config file ", path, ": unknown key '", key, "'");
    out[key] = value;
  }
  return out;
}

std::string resolve_out(const std::string& given, const char* command) {
  if (!given.empty()) return given;
  const char* root = std::getenv("VRG_OUT_ROOT");
  return (fs::path(root ? root : ".") / (std::string("vrg-") + command))
      .string();
}

std::string absolutize(const std::string& path) {
  if (path.empty()) return path;
  return fs::absolute(path).lexically_normal().string();
}

void write_effective(const json& cfg, const std::string& out_dir,
                     const std::string& command, const std::string& preset) {
  fs::create_directories(out_dir);
  json j = cfg;
  j["_command"] = command;
  if (!preset.empty()) j["_preset"] = preset;
  const fs::path p = fs::path(out_dir) / "effective_config.json";
  std::ofstream f(p, std::ios::trunc);
  if (!f.good()) fail<DataError>("cannot write ", p.string());
  f << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Shared model/dataset loading.

std::unique_ptr<Model> load_model(const std::string& ckpt_path,
                                  ckpt::Checkpoint* header = nullptr) {
  if (ckpt_path.empty()) fail("--ckpt is required");
  ckpt::Checkpoint ck = ckpt::load_checkpoint(ckpt_path);
  auto m = std::make_unique<Model>(ck.arch, ck.seed);
  ckpt::apply_model(ck, *m);
  if (header) *header = std::move(ck);
  return m;
}

data::PairedDataset load_data(const std::string& dir,
                              const std::string& layout) {
  if (dir.empty()) fail("--data is required");
  data::PairedDataset ds = data::load_paired_dataset(dir, layout);
  if (!ds.rejects.empty()) {
    std::fprintf(stderr, "warning: %zu rejected pair(s) in %s\n",
                 ds.rejects.size(), dir.c_str());
    for (const auto& r : ds.rejects)
      std::fprintf(stderr, "  %s: %s\n", r.path.c_str(), r.reason.c_str());
  }
  if (ds.size() == 0) fail<DataError>("no usable pairs in ", dir);
  return ds;
}

Tensor frame_at(const Tensor& batch, int64_t i) {
  const int64_t c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  Tensor out({c, h, w});
  std::copy(batch.data() + i * c * h * w, batch.data() + (i + 1) * c * h * w,
            out.data());
  return out;
}

// Frames side by side with a 2px white gutter.
Tensor montage(const Tensor& batch) {
  const int64_t n = batch.dim(0), c = batch.dim(1), h = batch.dim(2),
                p = batch.dim(3);
  const int64_t sep = 2;
  const int64_t w = n * p + (n - 1) * sep;
  Tensor out({c, h, w});
  for (int64_t i = 0; i < out.size(); ++i) out.data()[i] = 1.0;
  for (int64_t k = 0; k < n; ++k) {
    const int64_t x0 = k * (p + sep);
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t y = 0; y < h; ++y)
        std::copy(batch.data() + ((k * c + ch) * h + y) * p,
                  batch.data() + ((k * c + ch) * h + y) * p + p,
                  out.data() + (ch * h + y) * w + x0);
  }
  return out;
}

json z_rows_json(const Tensor& z) {
  json rows = json::array();
  for (int64_t i = 0; i < z.dim(0); ++i) {
    json row = json::array();
    for (int64_t d = 0; d < z.dim(1); ++d)
      row.push_back(z.data()[i * z.dim(1) + d]);
    rows.push_back(std::move(row));
  }
  return rows;
}

json z_vec_json(const Tensor& z) {
  json row = json::array();
  for (int64_t d = 0; d < z.size(); ++d) row.push_back(z.data()[d]);
  return row;
}

// ---------------------------------------------------------------------------
// make-toy

struct MakeToyOpts {
  std::string config, out;
  int64_t pairs = 500, size = 64;
  uint64_t seed = 0;
  double orient_mean = 20.0, orient_spread = 4.0;
  int64_t min_streaks = 6, max_streaks = 14;
  std::string background = "noise";
  Binder bind;
};

int run_make_toy(MakeToyOpts& o) {
  const json flags = o.bind.passed();
  if (!o.config.empty()) o.bind.apply(load_config_file(o.config, o.bind.keys));
  o.bind.apply(flags);
  o.out = absolutize(resolve_out(o.out, "make-toy"));

  data::ToyRainParams p;
  p.n_pairs = o.pairs;
  p.image_size = o.size;
  p.seed = o.seed;
  p.orient_mean_deg = o.orient_mean;
  p.orient_spread_deg = o.orient_spread;
  p.min_streaks = o.min_streaks;
  p.max_streaks = o.max_streaks;
  p.background = o.background;
  p.validate();

  write_effective(o.bind.effective(), o.out, "make-toy", "");
  const data::PairedDataset ds = data::make_toy_rain_dataset(p, o.out);
  std::printf("wrote %lld toy pairs to %s\n",
              static_cast<long long>(ds.size()), o.out.c_str());
  return 0;
}

void register_make_toy(CLI::App& app, int& rc) {
  auto o = std::make_shared<MakeToyOpts>();
  CLI::App* s = app.add_subcommand(
      "make-toy", "Render a seeded synthetic rain dataset (PNG pairs + meta)");
  s->add_option("--config", o->config, "JSON config file; flags override it");
  o->bind.opt(s, "--out", o->out,
              "dataset directory (default $VRG_OUT_ROOT/vrg-make-toy)");
  o->bind.opt(s, "--pairs", o->pairs, "number of pairs");
  o->bind.opt(s, "--size", o->size, "square image size in pixels");
  o->bind.opt(s, "--seed", o->seed, "dataset seed");
  o->bind.opt(s, "--orient-mean", o->orient_mean,
              "mean streak angle, degrees from vertical");
  o->bind.opt(s, "--orient-spread", o->orient_spread,
              "streak angle standard deviation, degrees");
  o->bind.opt(s, "--min-streaks", o->min_streaks, "fewest streaks per image");
  o->bind.opt(s, "--max-streaks", o->max_streaks, "most streaks per image");
  o->bind.opt(s, "--background", o->background,
              "background style: flat | gradient | noise");
  s->callback([o, &rc] { rc = run_make_toy(*o); });
}

// ---------------------------------------------------------------------------
// train / pretrain-bnet share the architecture flags.

struct ArchOpts {
  int64_t channels = 0;  // 0 = infer from the dataset
  int64_t patch = 64;
  int64_t latent = 128;
  std::vector<int64_t> rnet_channels = {32, 64, 128, 256, 512};
  std::vector<int64_t> disc_channels = {64, 128, 256, 512};
  int64_t bnet_width = 32, bnet_stages = 6, bnet_resblocks = 5;
  int64_t attention = 2;
  double leaky_slope = 0.1;
};

void register_arch(CLI::App* s, Binder& b, ArchOpts& a) {
  b.opt(s, "--channels", a.channels, "image channels (0 = infer from data)");
  b.opt(s, "--patch", a.patch, "training patch size (power of two >= 32)");
  b.opt(s, "--latent", a.latent, "latent dimension t");
  b.opt(s, "--rnet-channels", a.rnet_channels,
        "encoder channels per block (log2(patch)-1 entries)");
  b.opt(s, "--disc-channels", a.disc_channels,
        "critic channels per block (log2(patch)-2 entries)");
  b.opt(s, "--bnet-width", a.bnet_width, "background net width");
  b.opt(s, "--bnet-stages", a.bnet_stages, "background net recurrent stages");
  b.opt(s, "--bnet-resblocks", a.bnet_resblocks,
        "residual blocks per background stage");
  b.opt(s, "--attention", a.attention,
        "self-attention on this many trailing critic blocks");
  b.opt(s, "--leaky-slope", a.leaky_slope, "critic LeakyReLU slope");
}

ArchConfig to_arch(const ArchOpts& a, int64_t resolved_channels) {
  ArchConfig c;
  c.image_channels = resolved_channels;
  c.patch_size = a.patch;
  c.latent_dim = a.latent;
  c.rnet_channels = a.rnet_channels;
  c.disc_channels = a.disc_channels;
  c.bnet_width = a.bnet_width;
  c.bnet_stages = a.bnet_stages;
  c.bnet_resblocks = a.bnet_resblocks;
  c.attention_blocks = a.attention;
  c.leaky_slope = a.leaky_slope;
  c.validate();
  return c;
}

struct TrainOpts {
  std::string config, preset;
  std::string data, layout = "rain100", out;
  std::string resume, warm_start;
  std::string variant = "full";
  uint64_t seed = 0;
  double gamma = 1.0, eps0_sq = 1e-6, lambda_gp = 10.0;
  int64_t n_critic = 5, batch = 18, patches_per_epoch = 18 * 3000;
  int64_t epochs = 700, checkpoint_every = 0;
  double lr_bnet = 2e-4, lr_rnet = 1e-4, lr_gen = 1e-4, lr_critic = 4e-4;
  std::vector<int64_t> decay_epochs = {400, 600, 650, 675, 690, 700};
  ArchOpts arch;
  Binder bind;
};

// Presets bundle a coherent geometry + schedule; every key can still be
// overridden by the config file or flags.
json train_preset(const std::string& name) {
  if (name == "smoke")
    return {{"patch", 32},        {"latent", 4},
            {"rnet_channels", {2, 3, 4, 4}},
            {"disc_channels", {3, 4, 4}},
            {"bnet_width", 3},    {"bnet_stages", 2},
            {"bnet_resblocks", 1},{"attention", 1},
            {"eps0_sq", 1e-2},    {"n_critic", 2},
            {"batch", 2},         {"patches_per_epoch", 8},
            {"epochs", 2},        {"lr_bnet", 1e-4},
            {"lr_rnet", 1e-4},    {"lr_gen", 1e-4},
            {"lr_critic", 2e-4},  {"decay_epochs", json::array()}};
  if (name == "toy")
    return {{"patch", 64},        {"latent", 16},
            {"rnet_channels", {8, 12, 16, 24, 32}},
            {"disc_channels", {8, 12, 16, 24}},
            {"bnet_width", 8},    {"bnet_stages", 3},
            {"bnet_resblocks", 2},{"attention", 2},
            {"eps0_sq", 1e-4},    {"n_critic", 5},
            {"batch", 4},         {"patches_per_epoch", 200},
            {"epochs", 12},       {"decay_epochs", {8, 10}}};
  if (name == "paper") return json::object();  // library defaults
  fail("unknown preset '", name, "' (smoke | toy | paper)");
}

int run_train(TrainOpts& o) {
  const json flags = o.bind.passed();
  if (!o.preset.empty()) o.bind.apply(train_preset(o.preset));
  if (!o.config.empty()) o.bind.apply(load_config_file(o.config, o.bind.keys));
  o.bind.apply(flags);
  o.out = absolutize(resolve_out(o.out, "train"));
  o.data = absolutize(o.data);
  o.resume = absolutize(o.resume);
  o.warm_start = absolutize(o.warm_start);
  if (!o.resume.empty() && !o.warm_start.empty())
    fail("--resume and --warm-start are mutually exclusive");

  const data::PairedDataset ds = load_data(o.data, o.layout);
  if (o.arch.channels == 0) o.arch.channels = ds.rainy[0].dim(0);
  const ArchConfig arch = to_arch(o.arch, o.arch.channels);

  train::TrainConfig cfg;
  cfg.gamma = o.gamma;
  cfg.eps0_sq = o.eps0_sq;
  cfg.n_critic = o.n_critic;
  cfg.lambda_gp = o.lambda_gp;
  cfg.batch_size = o.batch;
  cfg.patches_per_epoch = o.patches_per_epoch;
  cfg.total_epochs = o.epochs;
  cfg.lr_bnet = o.lr_bnet;
  cfg.lr_rnet = o.lr_rnet;
  cfg.lr_gen = o.lr_gen;
  cfg.lr_critic = o.lr_critic;
  cfg.decay_epochs = o.decay_epochs;
  cfg.variant = o.variant;
  cfg.seed = o.seed;
  cfg.checkpoint_every = o.checkpoint_every;
  cfg.validate();

  write_effective(o.bind.effective(), o.out, "train", o.preset);

  train::Trainer trainer(arch, cfg);
  if (!o.resume.empty()) trainer.resume(o.resume);
  if (!o.warm_start.empty()) {
    const ckpt::ApplyReport rep = trainer.warm_start(o.warm_start);
    std::printf("warm start: %lld params, %lld buffers (%lld bnet skipped)\n",
                static_cast<long long>(rep.params_loaded),
                static_cast<long long>(rep.buffers_loaded),
                static_cast<long long>(rep.skipped_bnet));
  }

  const int64_t steps = cfg.steps_per_epoch();
  double adv = 0, klz = 0, klb = 0, tot = 0;
  train::Callbacks cb;
  cb.on_outer_step = [&](const train::OuterStepRow& r) {
    adv += r.adv;
    klz += r.kl_z;
    klb += r.kl_b;
    tot += r.total;
    if (r.step == steps - 1) {
      std::printf("epoch %lld/%lld  adv %.5g  kl_z %.5g  kl_b %.5g  total %.5g\n",
                  static_cast<long long>(r.epoch + 1),
                  static_cast<long long>(cfg.total_epochs),
                  adv / static_cast<double>(steps),
                  klz / static_cast<double>(steps),
                  klb / static_cast<double>(steps),
                  tot / static_cast<double>(steps));
      std::fflush(stdout);
      adv = klz = klb = tot = 0;
    }
  };

  const train::TrainResult res = trainer.run(ds, o.out, cb);
  std::printf("checkpoint: %s\nloss log: %s\n", res.checkpoint_path.c_str(),
              res.log_path.c_str());
  return 0;
}

void register_train(CLI::App& app, int& rc) {
  auto o = std::make_shared<TrainOpts>();
  CLI::App* s = app.add_subcommand("train", "Train the rain generation model");
  s->add_option("--config", o->config, "JSON config file; flags override it");
  s->add_option("--preset", o->preset,
                "base bundle applied before the config file: smoke | toy | paper");
  o->bind.opt(s, "--data", o->data, "paired dataset directory");
  o->bind.opt(s, "--layout", o->layout, "dataset layout: rain100 | manifest");
  o->bind.opt(s, "--out", o->out,
              "run directory (default $VRG_OUT_ROOT/vrg-train)");
  o->bind.opt(s, "--resume", o->resume,
              "continue a checkpoint (same config required)");
  o->bind.opt(s, "--warm-start", o->warm_start,
              "load parameters only; epoch and optimizer state reset");
  o->bind.opt(s, "--variant", o->variant, "full | no_bnet");
  o->bind.opt(s, "--seed", o->seed, "run seed; all streams derive from it");
  o->bind.opt(s, "--gamma", o->gamma, "adversarial weight");
  o->bind.opt(s, "--eps0-sq", o->eps0_sq, "background prior variance");
  o->bind.opt(s, "--n-critic", o->n_critic, "critic updates per outer step");
  o->bind.opt(s, "--lambda-gp", o->lambda_gp, "gradient penalty coefficient");
  o->bind.opt(s, "--batch", o->batch, "patches per batch");
  o->bind.opt(s, "--patches-per-epoch", o->patches_per_epoch,
              "patches consumed per epoch");
  o->bind.opt(s, "--epochs", o->epochs, "total epochs");
  o->bind.opt(s, "--checkpoint-every", o->checkpoint_every,
              "also keep ckpt_epochN.vrg every N epochs (0 = only latest)");
  o->bind.opt(s, "--lr-bnet", o->lr_bnet, "background net learning rate");
  o->bind.opt(s, "--lr-rnet", o->lr_rnet, "encoder learning rate");
  o->bind.opt(s, "--lr-gen", o->lr_gen, "generator learning rate");
  o->bind.opt(s, "--lr-critic", o->lr_critic, "critic learning rate");
  o->bind.opt(s, "--decay-epochs", o->decay_epochs,
              "epochs at which learning rates halve");
  register_arch(s, o->bind, o->arch);
  s->callback([o, &rc] { rc = run_train(*o); });
}

// ---------------------------------------------------------------------------
// pretrain-bnet: the background net alone under a negative SSIM loss.

struct PretrainOpts {
  std::string config, data, layout = "rain100", out;
  uint64_t seed = 0;
  int64_t batch = 4, steps_per_epoch = 200, epochs = 3;
  double lr = 1e-3;
  ArchOpts arch;
  Binder bind;
};

int run_pretrain(PretrainOpts& o) {
  const json flags = o.bind.passed();
  if (!o.config.empty()) o.bind.apply(load_config_file(o.config, o.bind.keys));
  o.bind.apply(flags);
  o.out = absolutize(resolve_out(o.out, "pretrain-bnet"));
  o.data = absolutize(o.data);
  VRG_CHECK(o.batch >= 1 && o.steps_per_epoch >= 1 && o.epochs >= 1,
            "pretrain-bnet: batch, steps, and epochs must be positive");
  VRG_CHECK(o.lr > 0.0, "pretrain-bnet: lr must be positive");

  const data::PairedDataset ds = load_data(o.data, o.layout);
  if (o.arch.channels == 0) o.arch.channels = ds.rainy[0].dim(0);
  const ArchConfig arch = to_arch(o.arch, o.arch.channels);

  write_effective(o.bind.effective(), o.out, "pretrain-bnet", "");

  // The full model is built so the checkpoint can warm-start joint training;
  // only the background net is updated here.
  Model model(arch, o.seed);
  train::Adam opt(model.bnet.store(), 0.9, 0.999);
  RngStream root = RngStream(o.seed).substream("pretrain");
  data::PatchSampler sampler(ds, arch.patch_size, root.substream("patches"));

  const std::string log_path = (fs::path(o.out) / "pretrain_log.csv").string();
  std::ofstream log(log_path, std::ios::trunc);
  if (!log.good()) fail<DataError>("cannot write ", log_path);
  log << "epoch,step,neg_ssim,lr\n";

  auto save = [&](const std::string& path, int64_t epoch) {
    ckpt::Checkpoint ck;
    ck.arch = arch;
    ck.variant = "full";
    ck.epoch = epoch;
    ck.seed = o.seed;
    ckpt::store_model(ck, model);
    ckpt::save_checkpoint(ck, path);
  };

  for (int64_t epoch = 0; epoch < o.epochs; ++epoch) {
    double sum = 0;
    for (int64_t step = 0; step < o.steps_per_epoch; ++step) {
      const auto batch = sampler.next_batch(o.batch);
      const Var obs = ag::constant(batch.o);
      const Var clean = ag::constant(batch.x);
      const Var mu = model.bnet.forward(obs).mu;
      const Var loss = ag::neg(eval::ssim_index(mu, clean));
      const double value = loss->value.item();
      if (!std::isfinite(value)) {
        const std::string snap =
            (fs::path(o.out) / "abort_snapshot.vrg").string();
        save(snap, epoch);
        throw NumericAbort("non-finite pretrain loss at epoch " +
                               std::to_string(epoch) + " step " +
                               std::to_string(step),
                           snap);
      }

      std::vector<Var> params = model.bnet.store().param_list();
      const std::vector<Var> gs = ag::grad(loss, params);
      std::map<std::string, Tensor> grads;
      size_t gi = 0;
      for (const auto& [name, var] : model.bnet.store().params())
        grads[name] = gs[gi++]->value;
      opt.step(grads, o.lr);

      char num[32];
      std::snprintf(num, sizeof(num), "%.17g", value);
      log << epoch << ',' << step << ',' << num << ',' << o.lr << '\n';
      sum += value;
    }
    log.flush();
    std::printf("epoch %lld/%lld  neg_ssim %.5g\n",
                static_cast<long long>(epoch + 1),
                static_cast<long long>(o.epochs),
                sum / static_cast<double>(o.steps_per_epoch));
    std::fflush(stdout);
  }

  const std::string ckpt_path = (fs::path(o.out) / "ckpt_bnet.vrg").string();
  save(ckpt_path, o.epochs);
  std::printf("checkpoint: %s\nloss log: %s\n", ckpt_path.c_str(),
              log_path.c_str());
  return 0;
}

void register_pretrain(CLI::App& app, int& rc) {
  auto o = std::make_shared<PretrainOpts>();
  CLI::App* s = app.add_subcommand(
      "pretrain-bnet", "Train the background net alone (negative SSIM loss)");
  s->add_option("--config", o->config, "JSON config file; flags override it");
  o->bind.opt(s, "--data", o->data, "paired dataset directory");
  o->bind.opt(s, "--layout", o->layout, "dataset layout: rain100 | manifest");
  o->bind.opt(s, "--out", o->out,
              "run directory (default $VRG_OUT_ROOT/vrg-pretrain-bnet)");
  o->bind.opt(s, "--seed", o->seed, "run seed");
  o->bind.opt(s, "--batch", o->batch, "patches per batch");
  o->bind.opt(s, "--steps-per-epoch", o->steps_per_epoch, "steps per epoch");
  o->bind.opt(s, "--epochs", o->epochs, "total epochs");
  o->bind.opt(s, "--lr", o->lr, "learning rate");
  register_arch(s, o->bind, o->arch);
  s->callback([o, &rc] { rc = run_pretrain(*o); });
}

// ---------------------------------------------------------------------------
// sample

struct SampleOpts {
  std::string config, ckpt, out;
  int64_t n = 16;
  uint64_t seed = 0;
  Binder bind;
};

int run_sample(SampleOpts& o) {
  const json flags = o.bind.passed();
  if (!o.config.empty()) o.bind.apply(load_config_file(o.config, o.bind.keys));
  o.bind.apply(flags);
  o.out = absolutize(resolve_out(o.out, "sample"));
  o.ckpt = absolutize(o.ckpt);
  VRG_CHECK(o.n >= 0, "--n must be >= 0");

  const std::unique_ptr<Model> m = load_model(o.ckpt);
  write_effective(o.bind.effective(), o.out, "sample", "");

  const gen::SampleResult res = gen::sample_rain(m->gen, o.n, o.seed);
  const std::string manifest_path =
      (fs::path(o.out) / "manifest.jsonl").string();
  std::ofstream manifest(manifest_path, std::ios::trunc);
  if (!manifest.good()) fail<DataError>("cannot write ", manifest_path);
  for (int64_t i = 0; i < o.n; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "rain_%05lld.png",
                  static_cast<long long>(i));
    img::write_png((fs::path(o.out) / name).string(), frame_at(res.patches, i));
    json row{{"index", i}, {"file", name}, {"seed", o.seed}};
    json z = json::array();
    for (int64_t d = 0; d < res.z.dim(1); ++d)
      z.push_back(res.z.data()[i * res.z.dim(1) + d]);
    row["z"] = std::move(z);
    manifest << row.dump() << '\n';
  }
  std::printf("wrote %lld rain patches to %s\n", static_cast<long long>(o.n),
              o.out.c_str());
  return 0;
}

void register_sample(CLI::App& app, int& rc) {
  auto o = std::make_shared<SampleOpts>();
  CLI::App* s = app.add_subcommand(
      "sample", "Draw rain patches from a trained generator");
  s->add_option("--config", o->config, "JSON config file; flags override it");
  o->bind.opt(s, "--ckpt", o->ckpt, "checkpoint to load");
  o->bind.opt(s, "--n", o->n, "number of patches");
  o->bind.opt(s, "--seed", o->seed, "sampling seed");
  o->bind.opt(s, "--out", o->out,
              "output directory (default $VRG_OUT_ROOT/vrg-sample)");
  s->callback([o, &rc] { rc = run_sample(*o); });
}

// ---------------------------------------------------------------------------
// sweep

struct SweepOpts {
  std::string config, ckpt, out;
  int64_t dim = 0, count = 9;
  double lo = -3.0, hi = 3.0;
  uint64_t base_seed = 0;
  bool random_base = false;
  Binder bind;
};

int run_sweep(SweepOpts& o) {
  const json flags = o.bind.passed();
  if (!o.config.empty()) o.bind.apply(load_config_file(o.config, o.bind.keys));
  o.bind.apply(flags);
  o.out = absolutize(resolve_out(o.out, "sweep"));
  o.ckpt = absolutize(o.ckpt);

  const std::unique_ptr<Model> m = load_model(o.ckpt);
  write_effective(o.bind.effective(), o.out, "sweep", "");

  gen::SweepSpec spec;
  spec.dim = o.dim;
  spec.lo = o.lo;
  spec.hi = o.hi;
  spec.count = o.count;
  if (o.random_base)
    spec.base_z = RngStream(o.base_seed)
                      .substream("sweep-base")
                      .normal_tensor({m->arch.latent_dim});

  const gen::SweepResult res = gen::disentangle_sweep(m->gen, spec);
  for (int64_t k = 0; k < o.count; ++k) {
    char name[32];
    std::snprintf(name, sizeof(name), "sweep_%03lld.png",
                  static_cast<long long>(k));
    img::write_png((fs::path(o.out) / name).string(),
                   frame_at(res.patches, k));
  }
  img::write_png((fs::path(o.out) / "montage.png").string(),
                 montage(res.patches));

  const json z{{"dim", o.dim},
               {"lo", o.lo},
               {"hi", o.hi},
               {"count", o.count},
               {"rows", z_rows_json(res.z)}};
  std::ofstream zf(fs::path(o.out) / "z.json", std::ios::trunc);
  zf << z.dump(2) << '\n';
  std::printf("wrote %lld sweep frames to %s\n",
              static_cast<long long>(o.count), o.out.c_str());
  return 0;
}

void register_sweep(CLI::App& app, int& rc) {
  auto o = std::make_shared<SweepOpts>();
  CLI::App* s = app.add_subcommand(
      "sweep", "Vary one latent coordinate over a grid and render the result");
  s->add_option("--config", o->config, "JSON config file; flags override it");
  o->bind.opt(s, "--ckpt", o->ckpt, "checkpoint to load");
  o->bind.opt(s, "--dim", o->dim, "latent coordinate to sweep");
  o->bind.opt(s, "--lo", o->lo, "grid start");
  o->bind.opt(s, "--hi", o->hi, "grid end");
  o->bind.opt(s, "--count", o->count, "grid points, endpoints inclusive");
  o->bind.onoff(s, "--random-base,!--zero-base", o->random_base,
                "draw the base code from --base-seed instead of the origin");
  o->bind.opt(s, "--base-seed", o->base_seed, "seed for --random-base");
  o->bind.opt(s, "--out", o->out,
              "output directory (default $VRG_OUT_ROOT/vrg-sweep)");
  s->callback([o, &rc] { rc = run_sweep(*o); });
}

// ---------------------------------------------------------------------------
// interp

struct InterpOpts {
  std::string config, ckpt, out, a, b;
  int64_t steps = 8;
  Binder bind;
};

Tensor read_patch(const std::string& path, const ArchConfig& arch) {
  if (path.empty()) fail("--a and --b are required");
  const Tensor t = img::read_png(path);
  if (t.dim(0) != arch.image_channels || t.dim(1) != arch.patch_size ||
      t.dim(2) != arch.patch_size)
    fail<DataError>(path, ": expected [", arch.image_channels, ",",
                    arch.patch_size, ",", arch.patch_size, "], got ",
                    shape_str(t.shape()));
  return t;
}

int run_interp(InterpOpts& o) {
  const json flags = o.bind.passed();
  if (!o.config.empty()) o.bind.apply(load_config_file(o.config, o.bind.keys));
  o.bind.apply(flags);
  o.out = absolutize(resolve_out(o.out, "interp"));
  o.ckpt = absolutize(o.ckpt);
  o.a = absolutize(o.a);
  o.b = absolutize(o.b);

  const std::unique_ptr<Model> m = load_model(o.ckpt);
  write_effective(o.bind.effective(), o.out, "interp", "");

  const Tensor z_a = gen::encode(m->rnet, read_patch(o.a, m->arch));
  const Tensor z_b = gen::encode(m->rnet, read_patch(o.b, m->arch));
  const gen::InterpResult res = gen::interpolate(m->gen, z_a, z_b, o.steps);

  for (int64_t k = 0; k < o.steps; ++k) {
    char name[32];
    std::snprintf(name, sizeof(name), "interp_%03lld.png",
                  static_cast<long long>(k));
    img::write_png((fs::path(o.out) / name).string(),
                   frame_at(res.patches, k));
  }
  img::write_png((fs::path(o.out) / "montage.png").string(),
                 montage(res.patches));

  const json z{{"steps", o.steps},
               {"a", o.a},
               {"b", o.b},
               {"z_a", z_vec_json(z_a)},
               {"z_b", z_vec_json(z_b)}};
  std::ofstream zf(fs::path(o.out) / "z.json", std::ios::trunc);
  zf << z.dump(2) << '\n';
  std::printf("wrote %lld interpolation frames to %s\n",
              static_cast<long long>(o.steps), o.out.c_str());
  return 0;
}

void register_interp(CLI::App& app, int& rc) {
  auto o = std::make_shared<InterpOpts>();
  CLI::App* s = app.add_subcommand(
      "interp", "Encode two rainy patches and interpolate between their codes");
  s->add_option("--config", o->config, "JSON config file; flags override it");
  o->bind.opt(s, "--ckpt", o->ckpt, "checkpoint to load");
  o->bind.opt(s, "--a", o->a, "first rainy patch (PNG, patch-sized)");
  o->bind.opt(s, "--b", o->b, "second rainy patch (PNG, patch-sized)");
  o->bind.opt(s, "--steps", o->steps, "frames including both endpoints");
  o->bind.opt(s, "--out", o->out,
              "output directory (default $VRG_OUT_ROOT/vrg-interp)");
  s->callback([o, &rc] { rc = run_interp(*o); });
}

// ---------------------------------------------------------------------------
// augment

struct AugmentOpts {
  std::string config, ckpt, data, layout = "rain100", out;
  std::string policy = "tile";
  int64_t real = 0;  // 0 = all pairs
  int64_t fake = 0;
  int64_t overlap = 8;
  bool clamp = true;
  uint64_t seed = 0;
  Binder bind;
};

int run_augment(AugmentOpts& o) {
  const json flags = o.bind.passed();
  if (!o.config.empty()) o.bind.apply(load_config_file(o.config, o.bind.keys));
  o.bind.apply(flags);
  o.out = absolutize(resolve_out(o.out, "augment"));
  o.ckpt = absolutize(o.ckpt);
  o.data = absolutize(o.data);

  const std::unique_ptr<Model> m = load_model(o.ckpt);
  data::PairedDataset pool = load_data(o.data, o.layout);
  if (o.real > 0) {
    if (o.real > pool.size())
      fail<DataError>("--real ", o.real, " exceeds the ", pool.size(),
                      " available pairs");
    pool.records.resize(static_cast<size_t>(o.real));
    pool.rainy.resize(static_cast<size_t>(o.real));
    pool.clean.resize(static_cast<size_t>(o.real));
  }

  write_effective(o.bind.effective(), o.out, "augment", "");

  gen::AugmentSpec spec;
  spec.n_fake = o.fake;
  spec.seed = o.seed;
  spec.policy = o.policy;
  spec.clamp = o.clamp;
  spec.overlap = o.overlap;
  const gen::AugmentResult res =
      gen::augment_dataset(m->gen, pool, spec, o.out);
  std::printf("wrote %lld real + %lld fake pairs to %s\nmanifest: %s\n",
              static_cast<long long>(res.real_written),
              static_cast<long long>(res.fake_written), o.out.c_str(),
              res.manifest_path.c_str());
  return 0;
}

void register_augment(CLI::App& app, int& rc) {
  auto o = std::make_shared<AugmentOpts>();
  CLI::App* s = app.add_subcommand(
      "augment", "Emit a dataset of real pairs plus generated rainy pairs");
  s->add_option("--config", o->config, "JSON config file; flags override it");
  o->bind.opt(s, "--ckpt", o->ckpt, "checkpoint to load");
  o->bind.opt(s, "--data", o->data, "real paired dataset directory");
  o->bind.opt(s, "--layout", o->layout, "dataset layout: rain100 | manifest");
  o->bind.opt(s, "--real", o->real, "real pairs to keep (0 = all)");
  o->bind.opt(s, "--fake", o->fake, "generated pairs to add");
  o->bind.opt(s, "--policy", o->policy, "full-frame rain policy: tile | resize");
  o->bind.opt(s, "--overlap", o->overlap, "tile overlap in pixels");
  o->bind.onoff(s, "--clamp,!--no-clamp", o->clamp,
                "clip composited images to [0,1]");
  o->bind.opt(s, "--seed", o->seed, "augmentation seed");
  o->bind.opt(s, "--out", o->out,
              "output directory (default $VRG_OUT_ROOT/vrg-augment)");
  s->callback([o, &rc] { rc = run_augment(*o); });
}

// ---------------------------------------------------------------------------
// eval

struct EvalOpts {
  std::string config, pred, gt, data, layout = "rain100", out;
  Binder bind;
};

data::PairedDataset pair_by_filename(const std::string& pred_dir,
                                     const std::string& gt_dir) {
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(pred_dir))
    if (e.path().extension() == ".png") names.push_back(e.path().filename());
  std::sort(names.begin(), names.end());
  if (names.empty()) fail<DataError>("no .png files in ", pred_dir);

  data::PairedDataset ds;
  ds.layout = "pred-gt";
  for (const std::string& name : names) {
    const fs::path p = fs::path(pred_dir) / name;
    const fs::path g = fs::path(gt_dir) / name;
    if (!fs::exists(g))
      fail<DataError>("no ground-truth match for ", p.string(), " in ",
                      gt_dir);
    Tensor pi = img::read_png(p.string());
    Tensor gi = img::read_png(g.string());
    if (!pi.same_shape(gi))
      fail<DataError>(name, ": prediction is ", shape_str(pi.shape()),
                      " but ground truth is ", shape_str(gi.shape()));
    ds.records.push_back({fs::path(name).stem().string(), p.string(),
                          g.string()});
    ds.rainy.push_back(std::move(pi));
    ds.clean.push_back(std::move(gi));
  }
  return ds;
}

int run_eval(EvalOpts& o) {
  const json flags = o.bind.passed();
  if (!o.config.empty()) o.bind.apply(load_config_file(o.config, o.bind.keys));
  o.bind.apply(flags);
  o.out = absolutize(resolve_out(o.out, "eval"));
  o.pred = absolutize(o.pred);
  o.gt = absolutize(o.gt);
  o.data = absolutize(o.data);

  const bool dir_mode = !o.pred.empty() || !o.gt.empty();
  if (dir_mode && (o.pred.empty() || o.gt.empty()))
    fail("--pred and --gt go together");
  if (dir_mode == !o.data.empty())
    fail("give either --pred/--gt or --data, not both");

  const data::PairedDataset ds =
      dir_mode ? pair_by_filename(o.pred, o.gt) : load_data(o.data, o.layout);

  write_effective(o.bind.effective(), o.out, "eval", "");
  const eval::MetricReport rep = eval::evaluate_pairs(ds);
  const std::string csv = (fs::path(o.out) / "metrics.csv").string();
  const std::string js = (fs::path(o.out) / "metrics.json").string();
  eval::write_report(rep, csv, js);
  std::printf("%zu pairs  psnr %.4f +- %.4f  ssim %.4f +- %.4f\nreport: %s\n",
              rep.rows.size(), rep.psnr_mean, rep.psnr_std, rep.ssim_mean,
              rep.ssim_std, csv.c_str());
  return 0;
}

void register_eval(CLI::App& app, int& rc) {
  auto o = std::make_shared<EvalOpts>();
  CLI::App* s = app.add_subcommand(
      "eval", "PSNR/SSIM per pair plus mean/std, written as CSV and JSON");
  s->add_option("--config", o->config, "JSON config file; flags override it");
  o->bind.opt(s, "--pred", o->pred,
              "directory of estimates, paired with --gt by filename");
  o->bind.opt(s, "--gt", o->gt, "directory of ground-truth images");
  o->bind.opt(s, "--data", o->data,
              "alternatively: paired dataset, scored rainy vs clean");
  o->bind.opt(s, "--layout", o->layout, "dataset layout: rain100 | manifest");
  o->bind.opt(s, "--out", o->out,
              "output directory (default $VRG_OUT_ROOT/vrg-eval)");
  s->callback([o, &rc] { rc = run_eval(*o); });
}

// ---------------------------------------------------------------------------
// exp-small-sample

struct ExpOpts {
  std::string config, ckpt, data, layout = "rain100", out;
  int64_t n_real = 50;
  std::vector<int64_t> n_fake = {0, 25, 50};
  int64_t seeds = 5;
  uint64_t base_seed = 0;
  double holdout_frac = 0.1;
  std::string policy = "tile";
  int64_t overlap = 8;
  int64_t derainer_width = 8, derainer_stages = 2, derainer_resblocks = 1;
  int64_t derainer_patch = 32, derainer_batch = 4;
  int64_t derainer_steps = 32, derainer_epochs = 3;
  double derainer_lr = 1e-3;
  Binder bind;
};

int run_exp(ExpOpts& o) {
  const json flags = o.bind.passed();
  if (!o.config.empty()) o.bind.apply(load_config_file(o.config, o.bind.keys));
  o.bind.apply(flags);
  o.out = absolutize(resolve_out(o.out, "exp-small-sample"));
  o.ckpt = absolutize(o.ckpt);
  o.data = absolutize(o.data);

  const std::unique_ptr<Model> m = load_model(o.ckpt);
  const data::PairedDataset pool = load_data(o.data, o.layout);

  eval::ExperimentSpec spec;
  spec.n_real = o.n_real;
  spec.n_fake_list = o.n_fake;
  spec.n_seeds = o.seeds;
  spec.base_seed = o.base_seed;
  spec.holdout_frac = o.holdout_frac;
  spec.augment.policy = o.policy;
  spec.augment.overlap = o.overlap;
  spec.derainer.width = o.derainer_width;
  spec.derainer.stages = o.derainer_stages;
  spec.derainer.resblocks = o.derainer_resblocks;
  spec.derainer.patch = o.derainer_patch;
  spec.derainer.batch = o.derainer_batch;
  spec.derainer.steps_per_epoch = o.derainer_steps;
  spec.derainer.epochs = o.derainer_epochs;
  spec.derainer.lr = o.derainer_lr;
  spec.validate(pool.size());

  write_effective(o.bind.effective(), o.out, "exp-small-sample", "");
  const eval::ExperimentReport rep =
      eval::small_sample_experiment(m->gen, pool, spec, o.out);
  for (const eval::ArmSummary& a : rep.summary)
    std::printf("%-9s n_fake %-4lld  psnr %.4f +- %.4f  ssim %.4f +- %.4f\n",
                a.arm.c_str(), static_cast<long long>(a.n_fake), a.psnr_mean,
                a.psnr_std, a.ssim_mean, a.ssim_std);
  std::printf("cells: %s\nsummary: %s\n", rep.csv_path.c_str(),
              rep.json_path.c_str());
  return 0;
}

void register_exp(CLI::App& app, int& rc) {
  auto o = std::make_shared<ExpOpts>();
  CLI::App* s = app.add_subcommand(
      "exp-small-sample",
      "Baseline vs augmented arms over multiple seeds with a stand-in derainer");
  s->add_option("--config", o->config, "JSON config file; flags override it");
  o->bind.opt(s, "--ckpt", o->ckpt, "generator checkpoint");
  o->bind.opt(s, "--data", o->data, "real pair pool");
  o->bind.opt(s, "--layout", o->layout, "dataset layout: rain100 | manifest");
  o->bind.opt(s, "--n-real", o->n_real, "real pairs per training arm");
  o->bind.opt(s, "--n-fake", o->n_fake, "fake pair counts, one arm each");
  o->bind.opt(s, "--seeds", o->seeds, "number of seeds");
  o->bind.opt(s, "--base-seed", o->base_seed, "first seed");
  o->bind.opt(s, "--holdout-frac", o->holdout_frac,
              "fraction of the pool held out per seed");
  o->bind.opt(s, "--policy", o->policy, "augment policy: tile | resize");
  o->bind.opt(s, "--overlap", o->overlap, "tile overlap in pixels");
  o->bind.opt(s, "--derainer-width", o->derainer_width, "derainer width");
  o->bind.opt(s, "--derainer-stages", o->derainer_stages, "derainer stages");
  o->bind.opt(s, "--derainer-resblocks", o->derainer_resblocks,
              "derainer residual blocks");
  o->bind.opt(s, "--derainer-patch", o->derainer_patch, "derainer crop size");
  o->bind.opt(s, "--derainer-batch", o->derainer_batch, "derainer batch");
  o->bind.opt(s, "--derainer-steps", o->derainer_steps,
              "derainer steps per epoch");
  o->bind.opt(s, "--derainer-epochs", o->derainer_epochs, "derainer epochs");
  o->bind.opt(s, "--derainer-lr", o->derainer_lr, "derainer learning rate");
  o->bind.opt(s, "--out", o->out,
              "output directory (default $VRG_OUT_ROOT/vrg-exp-small-sample)");
  s->callback([o, &rc] { rc = run_exp(*o); });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "vrg: variational rain generation - training, sampling, latent "
      "analysis, augmentation, evaluation"};
  app.require_subcommand(1);
  int rc = 0;
  register_make_toy(app, rc);
  register_train(app, rc);
  register_pretrain(app, rc);
  register_sample(app, rc);
  register_sweep(app, rc);
  register_interp(app, rc);
  register_augment(app, rc);
  register_eval(app, rc);
  register_exp(app, rc);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // help/version exit cleanly, misuse is 2
  } catch (const ArgumentError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const CheckpointError& e) {
    std::fprintf(stderr, "checkpoint error: %s\n", e.what());
    return 3;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const NumericAbort& e) {
    std::fprintf(stderr, "numeric abort: %s\n", e.what());
    if (!e.snapshot_path.empty())
      std::fprintf(stderr, "diagnostic snapshot: %s\n",
                   e.snapshot_path.c_str());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return rc;
}
