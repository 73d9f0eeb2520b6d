#pragma once

#include <string>
#include <vector>

#include "vrg/rng.hpp"
#include "vrg/tensor.hpp"

namespace vrg::data {

struct PairRecord {
  std::string id;
  std::string rainy_path;
  std::string clean_path;
};

struct RejectRecord {
  std::string path;
  std::string reason;
};

// Paired rainy/clean dataset, decoded eagerly to [C,H,W] tensors in [0,1].
// rainy[i]/clean[i] align with records[i].  Files that could not be paired or
// whose pair is malformed land in `rejects` instead of being silently
// dropped.
struct PairedDataset {
  std::string layout;  // "rain100" | "manifest"
  std::vector<PairRecord> records;
  std::vector<Tensor> rainy;
  std::vector<Tensor> clean;
  std::vector<RejectRecord> rejects;

  int64_t size() const { return static_cast<int64_t>(records.size()); }
};

// Layout "rain100": rain-<id>.png / norain-<id>.png siblings in `root`.
// Layout "manifest": `root`/manifest.jsonl with one {"rainy","clean","id"?}
// object per line, paths relative to root.  Undecodable files raise; orphans
// and shape-mismatched pairs are reported in `rejects`.
PairedDataset load_paired_dataset(const std::string& root,
                                  const std::string& layout);

// Aligned random crops: a uniformly random usable image and top-left corner
// per draw, the same window applied to rainy and clean.  Images smaller than
// the patch are excluded up front (counted, not fatal).
class PatchSampler {
 public:
  PatchSampler(const PairedDataset& ds, int64_t patch_size, RngStream rng);

  struct Batch {
    Tensor o;  // [N,C,P,P]
    Tensor x;  // [N,C,P,P]
  };
  Batch next_batch(int64_t n);

  // One crop; records where it came from (tests use the window coordinates).
  struct Crop {
    int64_t image = 0, top = 0, left = 0;
  };
  Crop next_window();

  int64_t usable_images() const {
    return static_cast<int64_t>(usable_.size());
  }
  int64_t excluded_images() const { return excluded_; }

 private:
  const PairedDataset& ds_;
  int64_t patch_;
  RngStream rng_;
  std::vector<int64_t> usable_;
  int64_t excluded_ = 0;
};

struct ToyRainParams {
  int64_t n_pairs = 500;
  int64_t image_size = 64;
  int64_t min_streaks = 6, max_streaks = 14;
  // Streak angle in degrees from the vertical axis, positive tilting toward
  // +x; drawn from N(orient_mean_deg, orient_spread_deg^2).
  double orient_mean_deg = 20.0;
  double orient_spread_deg = 4.0;
  double min_length = 10.0, max_length = 24.0;  // px
  double min_width = 0.8, max_width = 1.6;      // px, full width of the core
  double min_intensity = 0.15, max_intensity = 0.45;
  std::string background = "noise";  // "flat" | "gradient" | "noise"
  uint64_t seed = 0;

  void validate() const;
};

// One generated pair, fully determined by (params, index).
struct ToyPair {
  Tensor x;  // clean background [1,H,W]
  Tensor r;  // rain layer [1,H,W]
  Tensor o;  // clamp(x + r) [1,H,W]
  std::vector<double> orientations;
  std::vector<double> lengths;
  std::vector<double> widths;
  std::vector<double> intensities;
};

ToyPair make_toy_pair(const ToyRainParams& params, int64_t index);

// Materializes n_pairs to `out_dir` as rain-<i>.png / norain-<i>.png plus
// meta.jsonl holding the true streak parameters, then returns the dataset
// loaded back from disk.
PairedDataset make_toy_rain_dataset(const ToyRainParams& params,
                                    const std::string& out_dir);

}  // namespace vrg::data
