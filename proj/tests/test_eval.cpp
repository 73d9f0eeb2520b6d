// Image metrics and the small-sample experiment harness.  PSNR and SSIM are
// checked against naive double-loop oracles written from the textbook
// formulas (uncentered moments, explicit Gaussian window) rather than against
// the library's own internals.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "vrg/data.hpp"
#include "vrg/errors.hpp"
#include "vrg/eval.hpp"
#include "vrg/generate.hpp"
#include "vrg/image.hpp"
#include "vrg/networks.hpp"
#include "vrg/ops.hpp"
#include "vrg/rng.hpp"

using namespace vrg;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  static int counter = 0;
  fs::path p = fs::temp_directory_path() /
               ("vrg_eval_" + tag + "_" + std::to_string(counter++));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

double psnr_oracle(const Tensor& a, const Tensor& b) {
  double mse = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) {
    double d = a.data()[i] - b.data()[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.size());
  return 10.0 * std::log10(1.0 / mse);
}

// Textbook SSIM with uncentered moments.  Luma weights written out rather
// than shared with the library path.
double ssim_oracle(const Tensor& a, const Tensor& b) {
  const int64_t C = a.dim(0), H = a.dim(1), W = a.dim(2);
  std::vector<double> ga(static_cast<size_t>(H * W)),
      gb(static_cast<size_t>(H * W));
  for (int64_t i = 0; i < H * W; ++i) {
    if (C == 1) {
      ga[static_cast<size_t>(i)] = a.data()[i];
      gb[static_cast<size_t>(i)] = b.data()[i];
    } else {
      ga[static_cast<size_t>(i)] = 0.299 * a.data()[i] +
                                   0.587 * a.data()[H * W + i] +
                                   0.114 * a.data()[2 * H * W + i];
      gb[static_cast<size_t>(i)] = 0.299 * b.data()[i] +
                                   0.587 * b.data()[H * W + i] +
                                   0.114 * b.data()[2 * H * W + i];
    }
  }

  double win[11][11];
  double wsum = 0.0;
  for (int j = 0; j < 11; ++j)
    for (int k = 0; k < 11; ++k) {
      double dy = j - 5, dx = k - 5;
      win[j][k] = std::exp(-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5));
      wsum += win[j][k];
    }
  for (int j = 0; j < 11; ++j)
    for (int k = 0; k < 11; ++k) win[j][k] /= wsum;

  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double acc = 0.0;
  int64_t n = 0;
  for (int64_t y = 0; y + 11 <= H; ++y)
    for (int64_t x = 0; x + 11 <= W; ++x) {
      double mua = 0, mub = 0, eaa = 0, ebb = 0, eab = 0;
      for (int j = 0; j < 11; ++j)
        for (int k = 0; k < 11; ++k) {
          double va = ga[static_cast<size_t>((y + j) * W + x + k)];
          double vb = gb[static_cast<size_t>((y + j) * W + x + k)];
          mua += win[j][k] * va;
          mub += win[j][k] * vb;
          eaa += win[j][k] * va * va;
          ebb += win[j][k] * vb * vb;
          eab += win[j][k] * va * vb;
        }
      double saa = eaa - mua * mua;
      double sbb = ebb - mub * mub;
      double sab = eab - mua * mub;
      acc += ((2 * mua * mub + c1) * (2 * sab + c2)) /
             ((mua * mua + mub * mub + c1) * (saa + sbb + c2));
      ++n;
    }
  return acc / static_cast<double>(n);
}

Tensor toy_image(int64_t size, uint64_t index) {
  data::ToyRainParams p;
  p.image_size = size;
  p.seed = 19;
  return data::make_toy_pair(p, static_cast<int64_t>(index)).o;
}

Tensor add_noise(const Tensor& t, double sigma, uint64_t seed) {
  RngStream r(seed);
  Tensor out = t.clone();
  for (int64_t i = 0; i < out.size(); ++i)
    out.data()[i] = std::clamp(out.data()[i] + sigma * r.normal(), 0.0, 1.0);
  return out;
}

Tensor hflip(const Tensor& t) {
  const int64_t C = t.dim(0), H = t.dim(1), W = t.dim(2);
  Tensor out(t.shape());
  for (int64_t c = 0; c < C; ++c)
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x)
        out.data()[(c * H + y) * W + x] = t.data()[(c * H + y) * W + (W - 1 - x)];
  return out;
}

Tensor color_stack(const Tensor& gray, uint64_t seed) {
  const int64_t H = gray.dim(1), W = gray.dim(2);
  RngStream r(seed);
  Tensor out({3, H, W});
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t i = 0; i < H * W; ++i)
      out.data()[c * H * W + i] =
          std::clamp(gray.data()[i] + 0.05 * r.normal(), 0.0, 1.0);
  return out;
}

ArchConfig tiny_arch() {
  ArchConfig a;
  a.image_channels = 1;
  a.patch_size = 32;
  a.latent_dim = 4;
  a.rnet_channels = {2, 3, 4, 4};
  a.disc_channels = {3, 4, 4};
  a.bnet_width = 2;
  a.bnet_stages = 1;
  a.bnet_resblocks = 0;
  a.attention_blocks = 1;
  return a;
}

data::PairedDataset toy_pool(int64_t n, int64_t size, uint64_t seed) {
  data::ToyRainParams p;
  p.image_size = size;
  p.seed = seed;
  data::PairedDataset ds;
  ds.layout = "memory";
  for (int64_t i = 0; i < n; ++i) {
    data::ToyPair pair = data::make_toy_pair(p, i);
    ds.records.push_back({"toy-" + std::to_string(i), "", ""});
    ds.rainy.push_back(pair.o);
    ds.clean.push_back(pair.x);
  }
  return ds;
}

}  // namespace

TEST_CASE("psnr matches the naive oracle and its closed forms") {
  const Tensor a = toy_image(40, 0);
  const Tensor b = toy_image(40, 1);
  CHECK(std::abs(eval::psnr(a, b) - psnr_oracle(a, b)) < 1e-10);

  // Identical inputs: +infinity.
  CHECK(std::isinf(eval::psnr(a, a)));
  CHECK(eval::psnr(a, a) > 0);

  // Uniform offset of 0.1 gives MSE 0.01 and PSNR 20 dB.
  Tensor zero({1, 16, 16});
  Tensor tenth({1, 16, 16});
  for (int64_t i = 0; i < tenth.size(); ++i) tenth.data()[i] = 0.1;
  CHECK(std::abs(eval::psnr(zero, tenth) - 20.0) < 1e-9);

  // Peak scaling: doubling the peak adds 20 log10(2).
  CHECK(std::abs(eval::psnr(a, b, 2.0) - eval::psnr(a, b) -
                 20.0 * std::log10(2.0)) < 1e-9);

  // Strictly decreasing in noise level.
  const double p1 = eval::psnr(a, add_noise(a, 0.01, 7));
  const double p2 = eval::psnr(a, add_noise(a, 0.05, 7));
  const double p3 = eval::psnr(a, add_noise(a, 0.10, 7));
  CHECK(p1 > p2);
  CHECK(p2 > p3);

  // Order invariance under horizontal flips of both images.
  CHECK(std::abs(eval::psnr(hflip(a), hflip(b)) - eval::psnr(a, b)) < 1e-12);

  CHECK_THROWS_AS(eval::psnr(a, Tensor({1, 8, 8})), ArgumentError);
  CHECK_THROWS_AS(eval::psnr(a, b, 0.0), ArgumentError);
}

TEST_CASE("ssim matches the naive oracle on gray and color images") {
  const Tensor a = toy_image(40, 2);
  const Tensor b = toy_image(40, 3);
  CHECK(std::abs(eval::ssim(a, b) - ssim_oracle(a, b)) < 1e-8);

  const Tensor an = add_noise(a, 0.05, 11);
  CHECK(std::abs(eval::ssim(a, an) - ssim_oracle(a, an)) < 1e-8);

  const Tensor ca = color_stack(a, 21);
  const Tensor cb = color_stack(b, 22);
  CHECK(std::abs(eval::ssim(ca, cb) - ssim_oracle(ca, cb)) < 1e-8);
}

TEST_CASE("ssim fixed points and invariances") {
  const Tensor a = toy_image(40, 4);
  const Tensor b = toy_image(40, 5);

  // Bitwise-equal inputs give exactly 1.0, not merely close.
  CHECK(eval::ssim(a, a) == 1.0);
  CHECK(eval::ssim(b, b) == 1.0);

  // Constant 0 vs constant 1: C1 / (1 + C1).
  Tensor zeros({1, 24, 24});
  Tensor ones({1, 24, 24});
  for (int64_t i = 0; i < ones.size(); ++i) ones.data()[i] = 1.0;
  CHECK(std::abs(eval::ssim(zeros, ones) - 9.999000099990002e-05) < 1e-12);

  // Symmetry and flip invariance.
  CHECK(std::abs(eval::ssim(a, b) - eval::ssim(b, a)) < 1e-12);
  CHECK(std::abs(eval::ssim(hflip(a), hflip(b)) - eval::ssim(a, b)) < 1e-12);

  // Decreasing in noise level.
  const double s1 = eval::ssim(a, add_noise(a, 0.01, 9));
  const double s2 = eval::ssim(a, add_noise(a, 0.05, 9));
  const double s3 = eval::ssim(a, add_noise(a, 0.10, 9));
  CHECK(s1 > s2);
  CHECK(s2 > s3);
  CHECK(s1 < 1.0);

  // Images narrower than the window are rejected.
  CHECK_THROWS_AS(eval::ssim(Tensor({1, 10, 20}), Tensor({1, 10, 20})),
                  ArgumentError);
  CHECK_THROWS_AS(eval::ssim(a, Tensor({1, 8, 8})), ArgumentError);
}

TEST_CASE("ssim_index agrees with plain ssim and is differentiable") {
  const Tensor a = toy_image(32, 6);
  const Tensor b = toy_image(32, 7);
  const Var va = ag::constant(a.reshaped({1, 1, 32, 32}));
  const Var vb = ag::constant(b.reshaped({1, 1, 32, 32}));
  CHECK(std::abs(eval::ssim_index(va, vb)->value.item() - eval::ssim(a, b)) <
        1e-10);

  // Color input reduces to luma inside the graph.
  const Tensor ca = color_stack(a, 31);
  const Tensor cb = color_stack(b, 32);
  const Var vca = ag::constant(ca.reshaped({1, 3, 32, 32}));
  const Var vcb = ag::constant(cb.reshaped({1, 3, 32, 32}));
  CHECK(std::abs(eval::ssim_index(vca, vcb)->value.item() -
                 eval::ssim(ca, cb)) < 1e-10);

  // Batch of two is the mean over the batch.
  Tensor batch_a({2, 1, 32, 32});
  Tensor batch_b({2, 1, 32, 32});
  const Tensor a2 = toy_image(32, 8), b2 = toy_image(32, 9);
  std::copy(a.data(), a.data() + a.size(), batch_a.data());
  std::copy(a2.data(), a2.data() + a2.size(), batch_a.data() + a.size());
  std::copy(b.data(), b.data() + b.size(), batch_b.data());
  std::copy(b2.data(), b2.data() + b2.size(), batch_b.data() + b.size());
  const double both = eval::ssim_index(ag::constant(batch_a),
                                       ag::constant(batch_b))->value.item();
  CHECK(std::abs(both - 0.5 * (eval::ssim(a, b) + eval::ssim(a2, b2))) <
        1e-10);

  // Finite differences on a few pixels of the first argument.
  Var leaf_a = ag::leaf(a.reshaped({1, 1, 32, 32}));
  Var s = eval::ssim_index(leaf_a, vb);
  std::vector<Var> gs = ag::grad(s, {leaf_a});
  const Tensor& g = gs[0]->value;
  const double h = 1e-6;
  for (int64_t idx : {int64_t{5 * 32 + 9}, int64_t{17 * 32 + 3},
                      int64_t{29 * 32 + 30}}) {
    Tensor up = a.clone();
    Tensor dn = a.clone();
    up.data()[idx] += h;
    dn.data()[idx] -= h;
    const double fd =
        (eval::ssim_index(ag::constant(up.reshaped({1, 1, 32, 32})), vb)
             ->value.item() -
         eval::ssim_index(ag::constant(dn.reshaped({1, 1, 32, 32})), vb)
             ->value.item()) /
        (2.0 * h);
    CHECK(std::abs(g.data()[idx] - fd) <
          1e-4 * std::max(1.0, std::abs(fd)));
  }

  CHECK_THROWS_AS(eval::ssim_index(ag::constant(Tensor({1, 1, 8, 8})),
                                   ag::constant(Tensor({1, 1, 8, 8}))),
                  ArgumentError);
}

TEST_CASE("evaluate_pairs and write_report round the metrics through disk") {
  data::PairedDataset ds = toy_pool(3, 40, 5);
  // Make the last pair identical so the report carries an infinity.
  ds.rainy[2] = ds.clean[2].clone();

  const eval::MetricReport rep = eval::evaluate_pairs(ds);
  REQUIRE(rep.rows.size() == 3);
  CHECK(rep.rows[0].id == "toy-0");
  CHECK(std::abs(rep.rows[0].psnr - psnr_oracle(ds.rainy[0], ds.clean[0])) <
        1e-10);
  CHECK(std::abs(rep.rows[1].ssim - ssim_oracle(ds.rainy[1], ds.clean[1])) <
        1e-8);
  CHECK(std::isinf(rep.rows[2].psnr));
  CHECK(rep.rows[2].ssim == 1.0);
  CHECK(std::isinf(rep.psnr_mean));

  const fs::path dir = temp_dir("report");
  const std::string csv = (dir / "metrics.csv").string();
  const std::string js = (dir / "metrics.json").string();
  eval::write_report(rep, csv, js);

  std::ifstream cf(csv);
  std::stringstream buf;
  buf << cf.rdbuf();
  const std::string text = buf.str();
  CHECK(text.rfind("id,psnr,ssim\n", 0) == 0);
  CHECK(text.find("toy-2,inf,1\n") != std::string::npos);
  CHECK(text.find("mean,inf,") != std::string::npos);

  std::ifstream jf(js);
  nlohmann::json j = nlohmann::json::parse(jf);
  CHECK(j["rows"].size() == 3);
  CHECK(j["rows"][2]["psnr"] == "inf");
  CHECK(j["rows"][2]["ssim"] == 1.0);
  CHECK(j["psnr_mean"] == "inf");
  CHECK(j["notes"] == "psnr=joint-channels ssim=luma");
  CHECK(j["ssim_window"] == 11);

  data::PairedDataset empty;
  CHECK_THROWS_AS(eval::evaluate_pairs(empty), ArgumentError);
}

TEST_CASE("small_sample_experiment arms, sharing, and files") {
  const ArchConfig arch = tiny_arch();
  const Generator g(arch, RngStream(77).substream("gen"));
  const data::PairedDataset pool = toy_pool(8, 40, 13);

  eval::ExperimentSpec spec;
  spec.n_real = 2;
  spec.n_fake_list = {0, 2};
  spec.n_seeds = 2;
  spec.base_seed = 100;
  spec.holdout_frac = 0.2;  // 2 of 8 held out

  // Stub derainer reporting the set sizes it saw; checks arm construction
  // without paying for training.
  eval::DerainerFn stub = [](const data::PairedDataset& train,
                             const data::PairedDataset& holdout,
                             uint64_t) -> std::pair<double, double> {
    return {static_cast<double>(train.size()),
            static_cast<double>(holdout.size())};
  };

  const fs::path dir = temp_dir("exp");
  const eval::ExperimentReport rep =
      eval::small_sample_experiment(g, pool, spec, dir.string(), stub);

  // One baseline plus two augmented arms per seed.
  REQUIRE(rep.cells.size() == 6);
  REQUIRE(rep.seeds.size() == 2);
  CHECK(rep.seeds[0] == 100);
  CHECK(rep.seeds[1] == 101);
  for (const eval::ArmCell& c : rep.cells) {
    CHECK(c.ssim == 2.0);  // holdout size
    if (c.arm == "baseline" || c.n_fake == 0)
      CHECK(c.psnr == 2.0);  // n_real pairs
    else
      CHECK(c.psnr == 4.0);  // n_real + n_fake pairs
  }
  // The baseline row is the N_f = 0 arm, cell for cell.
  for (uint64_t seed : rep.seeds) {
    double base = -1, aug0 = -2;
    for (const eval::ArmCell& c : rep.cells) {
      if (c.seed != seed) continue;
      if (c.arm == "baseline") base = c.psnr;
      if (c.arm == "augmented" && c.n_fake == 0) aug0 = c.psnr;
    }
    CHECK(base == aug0);
  }

  REQUIRE(rep.summary.size() == 3);
  CHECK(rep.summary[0].arm == "baseline");
  CHECK(rep.summary[0].psnr_mean == 2.0);
  CHECK(rep.summary[0].psnr_std == 0.0);
  CHECK(rep.summary[2].n_fake == 2);
  CHECK(rep.summary[2].psnr_mean == 4.0);
  CHECK(rep.summary[2].psnr_per_seed.size() == 2);

  // Files land where the report says.
  CHECK(fs::exists(rep.csv_path));
  CHECK(fs::exists(rep.json_path));
  std::ifstream cf(rep.csv_path);
  std::string line;
  int64_t rows = 0;
  std::getline(cf, line);
  CHECK(line == "arm,n_fake,seed,psnr,ssim");
  while (std::getline(cf, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 6);
  std::ifstream jf(rep.json_path);
  nlohmann::json j = nlohmann::json::parse(jf);
  CHECK(j["config_digest"] == rep.config_digest);
  CHECK(j["arms"].size() == 3);
  CHECK(j["seeds"].size() == 2);

  // Deterministic replay.
  const fs::path dir2 = temp_dir("exp_replay");
  const eval::ExperimentReport rep2 =
      eval::small_sample_experiment(g, pool, spec, dir2.string(), stub);
  REQUIRE(rep2.cells.size() == rep.cells.size());
  for (size_t i = 0; i < rep.cells.size(); ++i) {
    CHECK(rep.cells[i].arm == rep2.cells[i].arm);
    CHECK(rep.cells[i].seed == rep2.cells[i].seed);
    CHECK(rep.cells[i].psnr == rep2.cells[i].psnr);
    CHECK(rep.cells[i].ssim == rep2.cells[i].ssim);
  }

  // Pool too small for n_real + holdout.
  eval::ExperimentSpec greedy = spec;
  greedy.n_real = 8;
  CHECK_THROWS_AS(eval::small_sample_experiment(g, pool, greedy,
                                                temp_dir("exp_bad").string(),
                                                stub),
                  ArgumentError);
}

TEST_CASE("built-in derainer trains and evaluates deterministically") {
  const ArchConfig arch = tiny_arch();
  const Generator g(arch, RngStream(78).substream("gen"));
  const data::PairedDataset pool = toy_pool(6, 40, 17);

  eval::ExperimentSpec spec;
  spec.n_real = 2;
  spec.n_fake_list = {0};
  spec.n_seeds = 1;
  spec.base_seed = 3;
  spec.holdout_frac = 0.2;  // 1 of 6 held out
  spec.derainer.width = 2;
  spec.derainer.stages = 1;
  spec.derainer.resblocks = 0;
  spec.derainer.batch = 2;
  spec.derainer.steps_per_epoch = 2;
  spec.derainer.epochs = 1;

  const eval::ExperimentReport rep = eval::small_sample_experiment(
      g, pool, spec, temp_dir("exp_real").string());
  REQUIRE(rep.cells.size() == 2);
  for (const eval::ArmCell& c : rep.cells) {
    CHECK(std::isfinite(c.psnr));
    CHECK(c.psnr > 0.0);
    CHECK(c.ssim > -1.0);
    CHECK(c.ssim <= 1.0);
  }

  const eval::ExperimentReport rep2 = eval::small_sample_experiment(
      g, pool, spec, temp_dir("exp_real2").string());
  CHECK(rep.cells[0].psnr == rep2.cells[0].psnr);
  CHECK(rep.cells[0].ssim == rep2.cells[0].ssim);
  CHECK(rep.config_digest == rep2.config_digest);
}
