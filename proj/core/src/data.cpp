#include "vrg/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include <json.hpp>

#include "vrg/errors.hpp"
#include "vrg/image.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace vrg::data {

namespace {

// "10" after "9": digit-only ids compare numerically via (length, lexical).
bool id_less(const std::string& a, const std::string& b) {
  const bool na = !a.empty() && a.find_first_not_of("0123456789") == std::string::npos;
  const bool nb = !b.empty() && b.find_first_not_of("0123456789") == std::string::npos;
  if (na && nb && a.size() != b.size()) return a.size() < b.size();
  return a < b;
}

void decode_pairs(PairedDataset& ds,
                  const std::vector<PairRecord>& candidates) {
  std::set<std::string> seen;
  for (const auto& rec : candidates) {
    VRG_CHECK(seen.insert(rec.id).second, "duplicate pair id: ", rec.id);
    Tensor o = img::read_png(rec.rainy_path);
    Tensor x = img::read_png(rec.clean_path);
    if (!o.same_shape(x)) {
      ds.rejects.push_back(
          {rec.rainy_path, "shape mismatch: rainy " + shape_str(o.shape()) +
                               " vs clean " + shape_str(x.shape())});
      continue;
    }
    ds.records.push_back(rec);
    ds.rainy.push_back(std::move(o));
    ds.clean.push_back(std::move(x));
  }
}

std::vector<PairRecord> scan_rain100(const std::string& root,
                                     std::vector<RejectRecord>& rejects) {
  std::map<std::string, std::string, decltype(&id_less)> rain(&id_less);
  std::map<std::string, std::string, decltype(&id_less)> norain(&id_less);
  for (const auto& entry : fs::directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    if (!name.ends_with(".png")) continue;
    const std::string stem = name.substr(0, name.size() - 4);
    if (stem.starts_with("norain-"))
      norain[stem.substr(7)] = entry.path().string();
    else if (stem.starts_with("rain-"))
      rain[stem.substr(5)] = entry.path().string();
  }
  std::vector<PairRecord> out;
  for (const auto& [id, path] : rain) {
    auto it = norain.find(id);
    if (it == norain.end()) {
      rejects.push_back({path, "no matching norain-" + id + ".png"});
      continue;
    }
    out.push_back({id, path, it->second});
  }
  for (const auto& [id, path] : norain)
    if (!rain.count(id))
      rejects.push_back({path, "no matching rain-" + id + ".png"});
  return out;
}

std::vector<PairRecord> scan_manifest(const std::string& root,
                                      std::vector<RejectRecord>&) {
  const fs::path manifest = fs::path(root) / "manifest.jsonl";
  if (!fs::exists(manifest))
    fail<DataError>("missing manifest: ", manifest.string());
  std::ifstream in(manifest);
  std::vector<PairRecord> out;
  std::string line;
  int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      fail<DataError>(manifest.string(), ":", lineno, ": ", e.what());
    }
    VRG_CHECK(rec.contains("rainy") && rec.contains("clean"),
              manifest.string(), ":", lineno, ": needs rainy and clean keys");
    PairRecord pr;
    pr.id = rec.value("id", std::to_string(lineno));
    pr.rainy_path = (fs::path(root) / rec["rainy"].get<std::string>()).string();
    pr.clean_path = (fs::path(root) / rec["clean"].get<std::string>()).string();
    out.push_back(std::move(pr));
  }
  return out;
}

}  // namespace

PairedDataset load_paired_dataset(const std::string& root,
                                  const std::string& layout) {
  if (!fs::exists(root) || !fs::is_directory(root))
    fail<DataError>("dataset root is not a directory: ", root);
  PairedDataset ds;
  ds.layout = layout;
  std::vector<PairRecord> candidates;
  if (layout == "rain100")
    candidates = scan_rain100(root, ds.rejects);
  else if (layout == "manifest")
    candidates = scan_manifest(root, ds.rejects);
  else
    fail<ArgumentError>("unknown layout: ", layout,
                        " (expected rain100 or manifest)");
  decode_pairs(ds, candidates);
  return ds;
}

PatchSampler::PatchSampler(const PairedDataset& ds, int64_t patch_size,
                           RngStream rng)
    : ds_(ds), patch_(patch_size), rng_(rng) {
  VRG_CHECK(patch_ >= 1, "patch_size must be positive");
  for (int64_t i = 0; i < ds.size(); ++i) {
    const Tensor& t = ds.rainy[i];
    if (t.dim(1) >= patch_ && t.dim(2) >= patch_)
      usable_.push_back(i);
    else
      ++excluded_;
  }
  VRG_CHECK(!usable_.empty(), "no image is at least ", patch_, "x", patch_);
  const int64_t c = ds.rainy[usable_[0]].dim(0);
  for (int64_t i : usable_)
    VRG_CHECK(ds.rainy[i].dim(0) == c,
              "mixed channel counts in dataset: ", ds.records[i].rainy_path);
}

PatchSampler::Crop PatchSampler::next_window() {
  Crop c;
  c.image = usable_[rng_.uniform_int(static_cast<int64_t>(usable_.size()))];
  const Tensor& t = ds_.rainy[c.image];
  c.top = rng_.uniform_int(t.dim(1) - patch_ + 1);
  c.left = rng_.uniform_int(t.dim(2) - patch_ + 1);
  return c;
}

PatchSampler::Batch PatchSampler::next_batch(int64_t n) {
  VRG_CHECK(n >= 1, "batch size must be positive");
  const int64_t ch = ds_.rainy[usable_[0]].dim(0);
  Batch b{Tensor({n, ch, patch_, patch_}), Tensor({n, ch, patch_, patch_})};
  for (int64_t i = 0; i < n; ++i) {
    const Crop w = next_window();
    const Tensor& o = ds_.rainy[w.image];
    const Tensor& x = ds_.clean[w.image];
    const int64_t H = o.dim(1), W = o.dim(2);
    for (int64_t c = 0; c < ch; ++c)
      for (int64_t y = 0; y < patch_; ++y)
        for (int64_t xx = 0; xx < patch_; ++xx) {
          const int64_t src = (c * H + w.top + y) * W + w.left + xx;
          const int64_t dst = ((i * ch + c) * patch_ + y) * patch_ + xx;
          b.o.data()[dst] = o.data()[src];
          b.x.data()[dst] = x.data()[src];
        }
  }
  return b;
}

void ToyRainParams::validate() const {
  VRG_CHECK(n_pairs >= 0, "n_pairs must be >= 0");
  VRG_CHECK(image_size >= 8, "image_size must be >= 8");
  VRG_CHECK(min_streaks >= 0 && max_streaks >= min_streaks,
            "streak count range must be non-empty");
  VRG_CHECK(orient_spread_deg >= 0, "orient_spread_deg must be >= 0");
  VRG_CHECK(min_length > 0 && max_length >= min_length,
            "length range must be non-empty");
  VRG_CHECK(min_width > 0 && max_width >= min_width,
            "width range must be non-empty");
  VRG_CHECK(0.0 <= min_intensity && max_intensity >= min_intensity &&
                max_intensity <= 1.0,
            "intensity range must lie in [0,1]");
  VRG_CHECK(background == "flat" || background == "gradient" ||
                background == "noise",
            "background must be flat, gradient, or noise");
}

namespace {

Tensor toy_background(const ToyRainParams& p, RngStream& rng) {
  const int64_t n = p.image_size;
  Tensor x({1, n, n});
  if (p.background == "flat") {
    for (int64_t i = 0; i < n * n; ++i) x.data()[i] = 0.5;
  } else if (p.background == "gradient") {
    for (int64_t y = 0; y < n; ++y)
      for (int64_t xx = 0; xx < n; ++xx)
        x.data()[y * n + xx] =
            0.25 + 0.25 * (static_cast<double>(y) / (n - 1) +
                           static_cast<double>(xx) / (n - 1));
  } else {
    // Smooth texture: uniform noise, two 3x3 box blurs, recentered at 0.5.
    std::vector<double> a(static_cast<size_t>(n * n)), b(a.size());
    for (auto& v : a) v = rng.uniform(-0.25, 0.25);
    for (int pass = 0; pass < 2; ++pass) {
      for (int64_t y = 0; y < n; ++y)
        for (int64_t xx = 0; xx < n; ++xx) {
          double s = 0;
          int cnt = 0;
          for (int64_t dy = -1; dy <= 1; ++dy)
            for (int64_t dx = -1; dx <= 1; ++dx) {
              const int64_t yy = y + dy, xc = xx + dx;
              if (yy < 0 || yy >= n || xc < 0 || xc >= n) continue;
              s += a[yy * n + xc];
              ++cnt;
            }
          b[y * n + xx] = s / cnt;
        }
      std::swap(a, b);
    }
    for (int64_t i = 0; i < n * n; ++i) {
      double v = 0.5 + a[i];
      x.data()[i] = v < 0.05 ? 0.05 : (v > 0.95 ? 0.95 : v);
    }
  }
  return x;
}

double sample_bilinear(const std::vector<double>& s, int64_t n, double y,
                       double x) {
  if (y < 0 || x < 0 || y > n - 1 || x > n - 1) {
    // Clamp into range; outside the canvas the streak is zero anyway.
    y = y < 0 ? 0 : (y > n - 1 ? n - 1 : y);
    x = x < 0 ? 0 : (x > n - 1 ? n - 1 : x);
  }
  const int64_t y0 = static_cast<int64_t>(y), x0 = static_cast<int64_t>(x);
  const int64_t y1 = std::min(y0 + 1, n - 1), x1 = std::min(x0 + 1, n - 1);
  const double fy = y - y0, fx = x - x0;
  return (1 - fy) * ((1 - fx) * s[y0 * n + x0] + fx * s[y0 * n + x1]) +
         fy * ((1 - fx) * s[y1 * n + x0] + fx * s[y1 * n + x1]);
}

}  // namespace

ToyPair make_toy_pair(const ToyRainParams& params, int64_t index) {
  params.validate();
  const int64_t n = params.image_size;
  RngStream rng = RngStream(params.seed).substream("toy").substream(
      static_cast<uint64_t>(index));

  ToyPair pair;
  pair.x = toy_background(params, rng);
  pair.r = Tensor::zeros({1, n, n});

  const int64_t n_streaks =
      params.min_streaks +
      (params.max_streaks > params.min_streaks
           ? rng.uniform_int(params.max_streaks - params.min_streaks + 1)
           : 0);

  constexpr double kAA = 0.7;  // anti-aliasing ramp width, px
  std::vector<double> canvas(static_cast<size_t>(n * n));
  for (int64_t s = 0; s < n_streaks; ++s) {
    const double angle =
        rng.normal(params.orient_mean_deg, params.orient_spread_deg);
    const double len = rng.uniform(params.min_length, params.max_length);
    const double width = rng.uniform(params.min_width, params.max_width);
    const double inten =
        rng.uniform(params.min_intensity, params.max_intensity);
    const double cx = rng.uniform(0.0, static_cast<double>(n - 1));
    const double cy = rng.uniform(0.0, static_cast<double>(n - 1));
    pair.orientations.push_back(angle);
    pair.lengths.push_back(len);
    pair.widths.push_back(width);
    pair.intensities.push_back(inten);

    const double th = angle * M_PI / 180.0;
    const double ux = std::sin(th), uy = std::cos(th);
    const double ax = cx - 0.5 * len * ux, ay = cy - 0.5 * len * uy;
    const double halfw = 0.5 * width;

    std::fill(canvas.begin(), canvas.end(), 0.0);
    for (int64_t y = 0; y < n; ++y)
      for (int64_t x = 0; x < n; ++x) {
        double t = (x - ax) * ux + (y - ay) * uy;
        t = t < 0 ? 0 : (t > len ? len : t);
        const double dx = x - (ax + t * ux), dy = y - (ay + t * uy);
        const double dist = std::sqrt(dx * dx + dy * dy);
        const double cov = (halfw + kAA - dist) / kAA;
        canvas[y * n + x] = inten * (cov < 0 ? 0 : (cov > 1 ? 1 : cov));
      }
    // 3-tap blur along the streak direction.  The capsule interior is
    // translation-invariant along u, so core intensity is preserved exactly.
    for (int64_t y = 0; y < n; ++y)
      for (int64_t x = 0; x < n; ++x)
        pair.r.data()[y * n + x] +=
            (sample_bilinear(canvas, n, y - uy, x - ux) + canvas[y * n + x] +
             sample_bilinear(canvas, n, y + uy, x + ux)) /
            3.0;
  }

  pair.o = Tensor(pair.x.shape());
  for (int64_t i = 0; i < n * n; ++i) {
    const double v = pair.x.data()[i] + pair.r.data()[i];
    pair.o.data()[i] = v < 0 ? 0 : (v > 1 ? 1 : v);
  }
  return pair;
}

PairedDataset make_toy_rain_dataset(const ToyRainParams& params,
                                    const std::string& out_dir) {
  params.validate();
  fs::create_directories(out_dir);
  std::ofstream meta(fs::path(out_dir) / "meta.jsonl");
  VRG_CHECK(meta.good(), "cannot write meta.jsonl under ", out_dir);
  for (int64_t i = 0; i < params.n_pairs; ++i) {
    const ToyPair pair = make_toy_pair(params, i);
    img::write_png((fs::path(out_dir) / ("rain-" + std::to_string(i) + ".png"))
                       .string(),
                   pair.o);
    img::write_png(
        (fs::path(out_dir) / ("norain-" + std::to_string(i) + ".png"))
            .string(),
        pair.x);
    json rec{{"id", std::to_string(i)},
             {"orientations", pair.orientations},
             {"lengths", pair.lengths},
             {"widths", pair.widths},
             {"intensities", pair.intensities},
             {"background", params.background}};
    meta << rec.dump() << "\n";
  }
  meta.close();
  json cfg{{"n_pairs", params.n_pairs},
           {"image_size", params.image_size},
           {"min_streaks", params.min_streaks},
           {"max_streaks", params.max_streaks},
           {"orient_mean_deg", params.orient_mean_deg},
           {"orient_spread_deg", params.orient_spread_deg},
           {"min_length", params.min_length},
           {"max_length", params.max_length},
           {"min_width", params.min_width},
           {"max_width", params.max_width},
           {"min_intensity", params.min_intensity},
           {"max_intensity", params.max_intensity},
           {"background", params.background},
           {"seed", params.seed}};
  std::ofstream(fs::path(out_dir) / "toy_params.json") << cfg.dump(2) << "\n";
  return load_paired_dataset(out_dir, "rain100");
}

}  // namespace vrg::data
