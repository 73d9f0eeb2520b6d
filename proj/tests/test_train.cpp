#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "vrg/data.hpp"
#include "vrg/errors.hpp"
#include "vrg/train.hpp"

using namespace vrg;
namespace fs = std::filesystem;

namespace {

ArchConfig tiny_arch() {
  ArchConfig a;
  a.image_channels = 1;
  a.patch_size = 32;
  a.latent_dim = 3;
  a.rnet_channels = {2, 3, 4, 4};
  a.disc_channels = {3, 4, 4};
  a.bnet_width = 3;
  a.bnet_stages = 2;
  a.bnet_resblocks = 1;
  a.attention_blocks = 2;
  return a;
}

train::TrainConfig tiny_cfg() {
  train::TrainConfig c;
  c.gamma = 1.0;
  c.eps0_sq = 1e-2;  // keep the toy kl_b at a tame scale
  c.n_critic = 2;
  c.batch_size = 2;
  c.patches_per_epoch = 4;  // 2 outer steps per epoch
  c.total_epochs = 2;
  c.lr_bnet = 1e-4;
  c.lr_rnet = 1e-4;
  c.lr_gen = 1e-4;
  c.lr_critic = 2e-4;
  c.decay_epochs = {};
  c.seed = 5;
  return c;
}

data::PairedDataset toy_memory_dataset(int64_t n, uint64_t seed) {
  data::ToyRainParams p;
  p.image_size = 32;
  p.min_streaks = 2;
  p.max_streaks = 5;
  p.seed = seed;
  data::PairedDataset ds;
  ds.layout = "memory";
  for (int64_t i = 0; i < n; ++i) {
    auto pair = data::make_toy_pair(p, i);
    ds.records.push_back({std::to_string(i), "", ""});
    ds.rainy.push_back(pair.o);
    ds.clean.push_back(pair.x);
  }
  return ds;
}

uint64_t param_hash(const nn::ParamStore& s) {
  uint64_t h = 1469598103934665603ull;
  for (const auto& [name, var] : s.params()) {
    const auto* p = reinterpret_cast<const unsigned char*>(var->value.data());
    for (int64_t i = 0; i < var->value.size() * 8; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  }
  return h;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// CSV rows with the wallclock column dropped (it is the one legitimately
// nondeterministic field).
std::vector<std::string> csv_rows_no_wallclock(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::vector<std::string> rows;
  std::string line;
  while (std::getline(in, line)) {
    const size_t cut = line.rfind(',');
    REQUIRE(cut != std::string::npos);
    rows.push_back(line.substr(0, cut));
  }
  return rows;
}

}  // namespace

TEST_CASE("lr_at halves at each decay epoch") {
  const std::vector<int64_t> decays = {400, 600, 650, 675, 690, 700};
  CHECK(train::lr_at(0, 2e-4, decays) == 2e-4);
  CHECK(train::lr_at(399, 2e-4, decays) == 2e-4);
  CHECK(train::lr_at(400, 2e-4, decays) == 1e-4);
  CHECK(train::lr_at(650, 2e-4, decays) == 2e-4 / 8);
  CHECK(train::lr_at(700, 2e-4, decays) == 2e-4 / 64);
  CHECK(train::lr_at(5000, 2e-4, decays) == 2e-4 / 64);
  double prev = 1e9;
  for (int64_t e = 0; e < 720; ++e) {
    const double lr = train::lr_at(e, 2e-4, decays);
    CHECK(lr <= prev);
    prev = lr;
  }
  CHECK(train::lr_at(3, 5e-4, {}) == 5e-4);
}

TEST_CASE("train config defaults match the published recipe") {
  const train::TrainConfig c;
  CHECK(c.lr_bnet == 2e-4);
  CHECK(c.lr_rnet == 1e-4);
  CHECK(c.lr_gen == 1e-4);
  CHECK(c.lr_critic == 4e-4);
  CHECK(c.n_critic == 5);
  CHECK(c.lambda_gp == 10.0);
  CHECK(c.eps0_sq == 1e-6);
  CHECK(c.batch_size == 18);
  CHECK(c.patches_per_epoch == 18 * 3000);
  CHECK(c.steps_per_epoch() == 3000);
  CHECK(c.decay_epochs == std::vector<int64_t>{400, 600, 650, 675, 690, 700});
  c.validate();
}

TEST_CASE("train digest separates configs but allows longer horizons") {
  train::TrainConfig a = tiny_cfg();
  train::TrainConfig b = a;
  CHECK(train::train_digest(a) == train::train_digest(b));
  b.total_epochs = 100;  // stopping condition, not trajectory
  CHECK(train::train_digest(a) == train::train_digest(b));
  b = a;
  b.gamma = 0.01;
  CHECK(train::train_digest(a) != train::train_digest(b));
  b = a;
  b.seed = 6;
  CHECK(train::train_digest(a) != train::train_digest(b));
  b = a;
  b.variant = "no_bnet";
  CHECK(train::train_digest(a) != train::train_digest(b));
}

TEST_CASE("config validation rejects bad values") {
  train::TrainConfig c = tiny_cfg();
  c.n_critic = 0;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  c = tiny_cfg();
  c.decay_epochs = {10, 10};
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  c = tiny_cfg();
  c.variant = "half_bnet";
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  c = tiny_cfg();
  c.eps0_sq = 0.0;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
}

TEST_CASE("adam matches the reference trajectory") {
  nn::ParamStore ps;
  ps.add_param("w", Tensor::from({3}, {1.0, -2.0, 0.5}));
  train::Adam opt(ps, 0.9, 0.999);
  std::map<std::string, Tensor> g1{{"w", Tensor::from({3}, {0.3, -0.7, 0.01})}};
  std::map<std::string, Tensor> g2{{"w", Tensor::from({3}, {-0.2, 0.4, 0.02})}};
  opt.step(g1, 0.05);
  opt.step(g2, 0.05);
  const Tensor& w = ps.param("w")->value;
  // Frozen from an independent evaluation of the update equations.
  CHECK(w.data()[0] == doctest::Approx(0.9427739754642984).epsilon(1e-15));
  CHECK(w.data()[1] == doctest::Approx(-1.9393816342965335).epsilon(1e-15));
  CHECK(w.data()[2] == doctest::Approx(0.4017409792259984).epsilon(1e-15));
  CHECK(opt.step_count() == 2);
}

TEST_CASE("updates touch only their own parameter sets") {
  const auto ds = toy_memory_dataset(4, 21);
  train::Trainer tr(tiny_arch(), tiny_cfg());
  RngStream noise(99);

  // Assemble one batch directly from the dataset.
  const int64_t P = 32;
  Tensor o({2, 1, P, P}), x({2, 1, P, P});
  for (int64_t i = 0; i < 2; ++i)
    for (int64_t j = 0; j < P * P; ++j) {
      o.data()[i * P * P + j] = ds.rainy[i].data()[j];
      x.data()[i * P * P + j] = ds.clean[i].data()[j];
    }

  Model& m = tr.model();
  const uint64_t r0 = param_hash(m.rnet.store());
  const uint64_t b0 = param_hash(m.bnet.store());
  const uint64_t g0 = param_hash(m.gen.store());
  const uint64_t d0 = param_hash(m.critic.store());

  tr.critic_update(o, x, noise, 1e-4);
  CHECK(param_hash(m.rnet.store()) == r0);
  CHECK(param_hash(m.bnet.store()) == b0);
  CHECK(param_hash(m.gen.store()) == g0);
  CHECK(param_hash(m.critic.store()) != d0);

  const uint64_t d1 = param_hash(m.critic.store());
  tr.bnet_update(o, x, noise, 1e-4);
  CHECK(param_hash(m.rnet.store()) == r0);
  CHECK(param_hash(m.bnet.store()) != b0);
  CHECK(param_hash(m.gen.store()) == g0);
  CHECK(param_hash(m.critic.store()) == d1);

  const uint64_t b1 = param_hash(m.bnet.store());
  tr.rgen_update(o, x, noise, 1e-4, 1e-4);
  CHECK(param_hash(m.rnet.store()) != r0);
  CHECK(param_hash(m.bnet.store()) == b1);
  CHECK(param_hash(m.gen.store()) != g0);
  CHECK(param_hash(m.critic.store()) == d1);
}

TEST_CASE("critic update reports finite stats and a nonnegative penalty") {
  const auto ds = toy_memory_dataset(4, 33);
  train::Trainer tr(tiny_arch(), tiny_cfg());
  RngStream noise(7);
  const int64_t P = 32;
  Tensor o({2, 1, P, P}), x({2, 1, P, P});
  for (int64_t i = 0; i < 2; ++i)
    for (int64_t j = 0; j < P * P; ++j) {
      o.data()[i * P * P + j] = ds.rainy[i + 1].data()[j];
      x.data()[i * P * P + j] = ds.clean[i + 1].data()[j];
    }
  const auto st = tr.critic_update(o, x, noise, 1e-4);
  CHECK(std::isfinite(st.real_mean));
  CHECK(std::isfinite(st.fake_mean));
  CHECK(st.gap == st.real_mean - st.fake_mean);
  CHECK(st.gp >= 0.0);
}

TEST_CASE("no_bnet variant freezes BNet and zeroes kl_b") {
  const auto ds = toy_memory_dataset(4, 12);
  train::TrainConfig cfg = tiny_cfg();
  cfg.variant = "no_bnet";
  cfg.total_epochs = 1;
  train::Trainer tr(tiny_arch(), cfg);
  const uint64_t b0 = param_hash(tr.model().bnet.store());

  RngStream noise(3);
  Tensor o({2, 1, 32, 32}), x({2, 1, 32, 32});
  CHECK_THROWS_AS(tr.bnet_update(o, x, noise, 1e-4), ArgumentError);

  const fs::path dir = fresh_dir("vrg_test_nobnet");
  const auto res = tr.run(ds, dir.string());
  CHECK(param_hash(tr.model().bnet.store()) == b0);

  std::ifstream log(res.log_path);
  std::string line;
  std::getline(log, line);  // header
  int rows = 0;
  while (std::getline(log, line)) {
    std::stringstream ss(line);
    std::string field;
    for (int i = 0; i <= 4; ++i) std::getline(ss, field, ',');
    CHECK(field == "0");  // kl_b column
    ++rows;
  }
  CHECK(rows == cfg.steps_per_epoch());
}

TEST_CASE("identical seed and config reproduce the loss log") {
  const auto ds = toy_memory_dataset(4, 77);
  const fs::path d1 = fresh_dir("vrg_test_det1");
  const fs::path d2 = fresh_dir("vrg_test_det2");

  int critic_calls = 0;
  train::Callbacks cb;
  cb.on_critic_step = [&](int64_t, int64_t, const train::CriticStepStats&) {
    ++critic_calls;
  };

  train::Trainer t1(tiny_arch(), tiny_cfg());
  const auto r1 = t1.run(ds, d1.string(), cb);
  train::Trainer t2(tiny_arch(), tiny_cfg());
  const auto r2 = t2.run(ds, d2.string());

  const auto rows1 = csv_rows_no_wallclock(r1.log_path);
  const auto rows2 = csv_rows_no_wallclock(r2.log_path);
  REQUIRE(rows1.size() == rows2.size());
  for (size_t i = 0; i < rows1.size(); ++i) CHECK(rows1[i] == rows2[i]);

  // n_critic critic updates per outer step.
  const train::TrainConfig cfg = tiny_cfg();
  CHECK(critic_calls ==
        cfg.n_critic * cfg.steps_per_epoch() * cfg.total_epochs);
  CHECK(param_hash(t1.model().critic.store()) ==
        param_hash(t2.model().critic.store()));
  CHECK(param_hash(t1.model().gen.store()) ==
        param_hash(t2.model().gen.store()));
}

TEST_CASE("resume at an epoch boundary continues the exact trajectory") {
  const auto ds = toy_memory_dataset(4, 55);

  // Reference: four epochs straight through.
  train::TrainConfig cfg4 = tiny_cfg();
  cfg4.total_epochs = 4;
  const fs::path dir_ref = fresh_dir("vrg_test_resume_ref");
  train::Trainer ref(tiny_arch(), cfg4);
  const auto res_ref = ref.run(ds, dir_ref.string());
  const auto rows_ref = csv_rows_no_wallclock(res_ref.log_path);

  // Two epochs, checkpoint, then resume for two more.
  train::TrainConfig cfg2 = tiny_cfg();
  cfg2.total_epochs = 2;
  const fs::path dir_a = fresh_dir("vrg_test_resume_a");
  train::Trainer first(tiny_arch(), cfg2);
  const auto res_a = first.run(ds, dir_a.string());

  const fs::path dir_b = fresh_dir("vrg_test_resume_b");
  train::Trainer second(tiny_arch(), cfg4);
  second.resume(res_a.checkpoint_path);
  CHECK(second.start_epoch() == 2);
  const auto res_b = second.run(ds, dir_b.string());

  const auto rows_a = csv_rows_no_wallclock(res_a.log_path);
  const auto rows_b = csv_rows_no_wallclock(res_b.log_path);
  REQUIRE(rows_ref.size() == rows_a.size() + rows_b.size() - 1);  // one header each
  // First half: header + epochs 0..1.
  for (size_t i = 0; i < rows_a.size(); ++i) CHECK(rows_ref[i] == rows_a[i]);
  // Second half: epochs 2..3 (skip the second file's header).
  for (size_t i = 1; i < rows_b.size(); ++i)
    CHECK(rows_ref[rows_a.size() + i - 1] == rows_b[i]);

  CHECK(param_hash(ref.model().critic.store()) ==
        param_hash(second.model().critic.store()));
  CHECK(param_hash(ref.model().rnet.store()) ==
        param_hash(second.model().rnet.store()));
  CHECK(param_hash(ref.model().bnet.store()) ==
        param_hash(second.model().bnet.store()));
  CHECK(param_hash(ref.model().gen.store()) ==
        param_hash(second.model().gen.store()));
}

TEST_CASE("resume rejects a checkpoint from a different config") {
  const auto ds = toy_memory_dataset(4, 66);
  train::TrainConfig cfg = tiny_cfg();
  cfg.total_epochs = 1;
  const fs::path dir = fresh_dir("vrg_test_resume_reject");
  train::Trainer tr(tiny_arch(), cfg);
  const auto res = tr.run(ds, dir.string());

  train::TrainConfig other = cfg;
  other.gamma = 0.01;
  train::Trainer tr2(tiny_arch(), other);
  CHECK_THROWS_AS(tr2.resume(res.checkpoint_path), CheckpointError);

  // Warm start ignores the training config entirely.
  train::Trainer tr3(tiny_arch(), other);
  const auto rep = tr3.warm_start(res.checkpoint_path);
  CHECK(rep.params_loaded > 0);
  CHECK(param_hash(tr3.model().gen.store()) ==
        param_hash(tr.model().gen.store()));

  // Full checkpoint warm-starting a no_bnet run skips BNet entries.
  train::TrainConfig nb = cfg;
  nb.variant = "no_bnet";
  train::Trainer tr4(tiny_arch(), nb);
  const uint64_t b_before = param_hash(tr4.model().bnet.store());
  const auto rep2 = tr4.warm_start(res.checkpoint_path);
  CHECK(rep2.skipped_bnet > 0);
  CHECK(param_hash(tr4.model().bnet.store()) == b_before);
  CHECK(param_hash(tr4.model().critic.store()) ==
        param_hash(tr.model().critic.store()));
}

TEST_CASE("non-finite loss aborts with a diagnostic snapshot") {
  const auto ds = toy_memory_dataset(4, 88);
  train::TrainConfig cfg = tiny_cfg();
  cfg.lr_rnet = 1e14;  // guaranteed blow-up through exp(log beta)
  cfg.lr_gen = 1e14;
  cfg.n_critic = 1;
  cfg.patches_per_epoch = 8;
  cfg.total_epochs = 1;
  const fs::path dir = fresh_dir("vrg_test_abort");
  train::Trainer tr(tiny_arch(), cfg);
  bool aborted = false;
  try {
    tr.run(ds, dir.string());
  } catch (const NumericAbort& e) {
    aborted = true;
    CHECK(!e.snapshot_path.empty());
    CHECK(fs::exists(e.snapshot_path));
    // The snapshot is a loadable checkpoint.
    const auto snap = ckpt::load_checkpoint(e.snapshot_path);
    CHECK(snap.params.size() > 0);
  }
  CHECK(aborted);
}
