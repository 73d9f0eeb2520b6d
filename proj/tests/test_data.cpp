#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "vrg/data.hpp"
#include "vrg/errors.hpp"
#include "vrg/image.hpp"

using namespace vrg;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Tensor ramp_image(int64_t c, int64_t h, int64_t w) {
  Tensor t({c, h, w});
  for (int64_t i = 0; i < t.size(); ++i)
    t.data()[i] = static_cast<double>(i) / static_cast<double>(t.size() - 1);
  return t;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  for (int64_t i = 0; i < a.size(); ++i)
    if (a.data()[i] != b.data()[i]) return false;
  return true;
}

}  // namespace

TEST_CASE("png round trip is exact at 8-bit quantization") {
  const fs::path dir = fresh_dir("vrg_test_png");
  for (int64_t c : {int64_t{1}, int64_t{3}}) {
    const Tensor t = ramp_image(c, 5, 7);
    const std::string path = (dir / ("img" + std::to_string(c) + ".png")).string();
    img::write_png(path, t);
    const Tensor back = img::read_png(path);
    CHECK(back.same_shape(t));
    CHECK(bit_equal(back, img::quantize8(t)));
    double max_err = 0;
    for (int64_t i = 0; i < t.size(); ++i)
      max_err = std::max(max_err, std::abs(back.data()[i] - t.data()[i]));
    CHECK(max_err <= 0.5 / 255.0 + 1e-12);
  }
}

TEST_CASE("png io rejects bad inputs") {
  const fs::path dir = fresh_dir("vrg_test_png_bad");
  CHECK_THROWS_AS(img::read_png((dir / "missing.png").string()), DataError);
  std::ofstream(dir / "junk.png") << "not a png at all";
  CHECK_THROWS_AS(img::read_png((dir / "junk.png").string()), DataError);
  CHECK_THROWS_AS(img::write_png((dir / "x.png").string(), Tensor::zeros({2, 4, 4})),
                  ArgumentError);
}

TEST_CASE("to_gray uses BT.601 luma") {
  Tensor t({3, 1, 1});
  t.data()[0] = 0.5;
  t.data()[1] = 0.25;
  t.data()[2] = 1.0;
  const Tensor g = img::to_gray(t);
  CHECK(g.dim(0) == 1);
  CHECK(g.item() == doctest::Approx(0.299 * 0.5 + 0.587 * 0.25 + 0.114 * 1.0)
                        .epsilon(1e-15));
  const Tensor gray = ramp_image(1, 3, 3);
  CHECK(bit_equal(img::to_gray(gray), gray));
}

TEST_CASE("rain100 layout pairing, rejects, and ordering") {
  const fs::path dir = fresh_dir("vrg_test_rain100");
  for (int i : {1, 2, 3, 10}) {
    img::write_png((dir / ("rain-" + std::to_string(i) + ".png")).string(),
                   ramp_image(1, 8, 8));
    img::write_png((dir / ("norain-" + std::to_string(i) + ".png")).string(),
                   ramp_image(1, 8, 8));
  }
  img::write_png((dir / "rain-99.png").string(), ramp_image(1, 8, 8));
  img::write_png((dir / "norain-77.png").string(), ramp_image(1, 8, 8));
  // Shape mismatch: rainy 8x8 vs clean 6x6.
  img::write_png((dir / "rain-5.png").string(), ramp_image(1, 8, 8));
  img::write_png((dir / "norain-5.png").string(), ramp_image(1, 6, 6));

  const auto ds = data::load_paired_dataset(dir.string(), "rain100");
  REQUIRE(ds.size() == 4);
  CHECK(ds.records[0].id == "1");
  CHECK(ds.records[1].id == "2");
  CHECK(ds.records[2].id == "3");
  CHECK(ds.records[3].id == "10");  // numeric, not lexicographic
  REQUIRE(ds.rejects.size() == 3);  // orphan rain, orphan norain, mismatch
  int orphans = 0, mismatches = 0;
  for (const auto& r : ds.rejects) {
    if (r.reason.find("no matching") != std::string::npos) ++orphans;
    if (r.reason.find("shape mismatch") != std::string::npos) ++mismatches;
  }
  CHECK(orphans == 2);
  CHECK(mismatches == 1);
}

TEST_CASE("manifest layout and error paths") {
  const fs::path dir = fresh_dir("vrg_test_manifest");
  img::write_png((dir / "a_rain.png").string(), ramp_image(3, 8, 8));
  img::write_png((dir / "a_clean.png").string(), ramp_image(3, 8, 8));
  {
    std::ofstream m(dir / "manifest.jsonl");
    m << R"({"rainy":"a_rain.png","clean":"a_clean.png","id":"a"})" << "\n";
  }
  const auto ds = data::load_paired_dataset(dir.string(), "manifest");
  REQUIRE(ds.size() == 1);
  CHECK(ds.records[0].id == "a");
  CHECK(ds.rainy[0].dim(0) == 3);

  const fs::path empty = fresh_dir("vrg_test_empty");
  const auto eds = data::load_paired_dataset(empty.string(), "rain100");
  CHECK(eds.size() == 0);
  CHECK(eds.rejects.empty());

  CHECK_THROWS_AS(data::load_paired_dataset(empty.string(), "manifest"),
                  DataError);  // no manifest.jsonl
  CHECK_THROWS_AS(data::load_paired_dataset(empty.string(), "bogus"),
                  ArgumentError);
  CHECK_THROWS_AS(
      data::load_paired_dataset((empty / "nowhere").string(), "rain100"),
      DataError);

  {
    std::ofstream m(dir / "manifest.jsonl", std::ios::trunc);
    m << "{broken json" << "\n";
  }
  CHECK_THROWS_AS(data::load_paired_dataset(dir.string(), "manifest"),
                  DataError);
}

TEST_CASE("patch sampler aligns windows and reproduces by seed") {
  data::PairedDataset ds;
  ds.layout = "memory";
  // Watermark: pixel value encodes its (row, col), shifted in the clean copy.
  const int64_t H = 12, W = 16;
  for (int k = 0; k < 3; ++k) {
    Tensor o({1, H, W}), x({1, H, W});
    for (int64_t y = 0; y < H; ++y)
      for (int64_t xx = 0; xx < W; ++xx) {
        o.data()[y * W + xx] = k * 1000.0 + y * W + xx;
        x.data()[y * W + xx] = o.data()[y * W + xx] + 0.25;
      }
    ds.records.push_back({std::to_string(k), "", ""});
    ds.rainy.push_back(o);
    ds.clean.push_back(x);
  }

  data::PatchSampler s1(ds, 5, RngStream(42).substream("p"));
  data::PatchSampler s2(ds, 5, RngStream(42).substream("p"));
  const auto batch = s1.next_batch(6);
  CHECK(batch.o.dim(0) == 6);
  CHECK(batch.o.dim(2) == 5);
  for (int64_t i = 0; i < 6; ++i) {
    const auto w = s2.next_window();  // same stream -> same windows
    for (int64_t y = 0; y < 5; ++y)
      for (int64_t xx = 0; xx < 5; ++xx) {
        const double expect =
            w.image * 1000.0 + (w.top + y) * W + (w.left + xx);
        CHECK(batch.o.data()[(i * 5 + y) * 5 + xx] == expect);
        // Alignment: clean crop is the rainy crop plus the constant shift.
        CHECK(batch.x.data()[(i * 5 + y) * 5 + xx] == expect + 0.25);
      }
  }

  // Same seed -> identical crop sequence.
  data::PatchSampler s3(ds, 5, RngStream(42).substream("p"));
  const auto again = s3.next_batch(6);
  CHECK(bit_equal(again.o, batch.o));

  // Too-small images are excluded, not fatal.
  ds.records.push_back({"tiny", "", ""});
  ds.rainy.push_back(Tensor::zeros({1, 3, 3}));
  ds.clean.push_back(Tensor::zeros({1, 3, 3}));
  data::PatchSampler s4(ds, 5, RngStream(1));
  CHECK(s4.usable_images() == 3);
  CHECK(s4.excluded_images() == 1);

  data::PairedDataset small;
  small.records.push_back({"0", "", ""});
  small.rainy.push_back(Tensor::zeros({1, 2, 2}));
  small.clean.push_back(Tensor::zeros({1, 2, 2}));
  CHECK_THROWS_AS(data::PatchSampler(small, 5, RngStream(1)), ArgumentError);
}

TEST_CASE("toy rain: zero streaks means o equals x") {
  data::ToyRainParams p;
  p.image_size = 16;
  p.min_streaks = p.max_streaks = 0;
  p.background = "noise";
  p.seed = 9;
  const auto pair = data::make_toy_pair(p, 0);
  CHECK(bit_equal(pair.o, pair.x));
  for (int64_t i = 0; i < pair.r.size(); ++i) CHECK(pair.r.data()[i] == 0.0);
  CHECK(pair.orientations.empty());
}

TEST_CASE("toy rain: single streak on flat background peaks exactly") {
  data::ToyRainParams p;
  p.image_size = 64;
  p.min_streaks = p.max_streaks = 1;
  p.background = "flat";
  p.min_intensity = p.max_intensity = 0.3;
  p.min_width = p.max_width = 3.0;
  p.min_length = p.max_length = 20.0;
  p.orient_mean_deg = 20.0;
  p.orient_spread_deg = 0.0;
  p.seed = 4;
  const auto pair = data::make_toy_pair(p, 3);
  REQUIRE(pair.orientations.size() == 1);
  CHECK(pair.orientations[0] == doctest::Approx(20.0).epsilon(1e-12));
  // Core coverage saturates at 1 and the directional blur preserves the
  // interior, so the streak core sits at exactly background + intensity.
  CHECK(pair.o.max() == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(pair.x.max() == 0.5);
  CHECK(pair.r.min() == 0.0);
}

TEST_CASE("toy rain is deterministic in (params, index)") {
  data::ToyRainParams p;
  p.image_size = 24;
  p.seed = 77;
  const auto a = data::make_toy_pair(p, 5);
  const auto b = data::make_toy_pair(p, 5);
  const auto c = data::make_toy_pair(p, 6);
  CHECK(bit_equal(a.o, b.o));
  CHECK(a.orientations == b.orientations);
  CHECK(!bit_equal(a.o, c.o));
}

TEST_CASE("toy rain orientations follow the configured distribution") {
  data::ToyRainParams p;
  p.image_size = 16;  // orientation statistics do not depend on canvas size
  p.min_streaks = 4;
  p.max_streaks = 12;
  p.orient_mean_deg = 20.0;
  p.orient_spread_deg = 4.0;
  p.seed = 123;
  std::vector<double> angles;
  for (int64_t i = 0; i < 400; ++i) {
    const auto pair = data::make_toy_pair(p, i);
    angles.insert(angles.end(), pair.orientations.begin(),
                  pair.orientations.end());
  }
  REQUIRE(angles.size() > 2000);
  std::sort(angles.begin(), angles.end());

  // One-sample Kolmogorov-Smirnov against N(mean, spread^2).
  const double n = static_cast<double>(angles.size());
  double d = 0;
  for (size_t i = 0; i < angles.size(); ++i) {
    const double z = (angles[i] - p.orient_mean_deg) /
                     (p.orient_spread_deg * std::sqrt(2.0));
    const double cdf = 0.5 * (1.0 + std::erf(z));
    d = std::max(d, std::abs(cdf - (i + 1) / n));
    d = std::max(d, std::abs(cdf - i / n));
  }
  const double lambda = d * (std::sqrt(n) + 0.12 + 0.11 / std::sqrt(n));
  double pval = 0;
  for (int k = 1; k <= 100; ++k)
    pval += 2.0 * (k % 2 == 1 ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
  CHECK(pval > 0.01);
}

TEST_CASE("toy dataset materializes to disk and loads back") {
  const fs::path dir = fresh_dir("vrg_test_toy_ds");
  data::ToyRainParams p;
  p.n_pairs = 6;
  p.image_size = 32;
  p.seed = 11;
  const auto ds = data::make_toy_rain_dataset(p, dir.string());
  REQUIRE(ds.size() == 6);
  CHECK(ds.rejects.empty());
  CHECK(ds.layout == "rain100");

  // Round trip: loaded arrays equal the in-memory pair after quantization.
  for (int64_t i = 0; i < 6; ++i) {
    const auto pair = data::make_toy_pair(p, i);
    CHECK(bit_equal(ds.rainy[i], img::quantize8(pair.o)));
    CHECK(bit_equal(ds.clean[i], img::quantize8(pair.x)));
    CHECK(ds.rainy[i].min() >= 0.0);
    CHECK(ds.rainy[i].max() <= 1.0);
  }

  // Ground-truth metadata is parseable and aligned.
  std::ifstream meta(dir / "meta.jsonl");
  REQUIRE(meta.good());
  std::string line;
  int64_t rows = 0;
  while (std::getline(meta, line)) {
    const auto rec = nlohmann::json::parse(line);
    CHECK(rec.at("orientations").size() == rec.at("lengths").size());
    ++rows;
  }
  CHECK(rows == 6);
}

TEST_CASE("toy params validation") {
  data::ToyRainParams p;
  p.min_streaks = 5;
  p.max_streaks = 2;
  CHECK_THROWS_AS(p.validate(), ArgumentError);
  p = {};
  p.background = "plaid";
  CHECK_THROWS_AS(p.validate(), ArgumentError);
  p = {};
  p.max_intensity = 1.5;
  CHECK_THROWS_AS(p.validate(), ArgumentError);
}
