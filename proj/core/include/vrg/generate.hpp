#pragma once

#include <string>
#include <vector>

#include "vrg/data.hpp"
#include "vrg/networks.hpp"
#include "vrg/rng.hpp"
#include "vrg/tensor.hpp"

// Post-training use of the learned generator: sampling, synthesis,
// latent-space analysis, and dataset augmentation.  Everything here is
// read-only on the networks and draws from substreams keyed per output index,
// so results do not depend on evaluation order.
namespace vrg::gen {

std::vector<double> linspace(double lo, double hi, int64_t count);

struct SampleResult {
  Tensor patches;  // [n, C, P, P]
  Tensor z;        // [n, t], returned so any sample can be regenerated
};

// z_i ~ N(0, I_t) from substream("sample").substream(i) of the seed.
SampleResult sample_rain(const Generator& g, int64_t n, uint64_t seed);

struct SynthResult {
  Tensor o;          // rain + background
  Tensor clip_mask;  // 1.0 where clamping changed the value
  int64_t clipped = 0;
};

// o = rain + background elementwise; clamp restricts to [0,1].
SynthResult synthesize_rainy(const Tensor& background, const Tensor& rain,
                             bool clamp = true);

struct SweepSpec {
  int64_t dim = 0;
  double lo = -3.0;
  double hi = 3.0;
  // Inclusive point count.  The reference figures use a 0.8 interval over
  // [-3,3], which does not land on the endpoint; count-based spacing is exact.
  int64_t count = 9;
  Tensor base_z;  // [t]; empty means the origin

  void validate(int64_t latent_dim) const;
};

struct SweepResult {
  Tensor patches;  // [count, C, P, P]
  Tensor z;        // [count, t]
};

// z_k = base_z with entry `dim` replaced by linspace(lo, hi, count)[k].
SweepResult disentangle_sweep(const Generator& g, const SweepSpec& spec);

struct InterpResult {
  Tensor patches;  // [steps, C, P, P]
  Tensor z;        // [steps, t]
};

// z(w) = (1-w) z_a + w z_b over w = linspace(0, 1, steps); the endpoint rows
// are copies of z_a / z_b, so endpoint generations are bit-exact.
InterpResult interpolate(const Generator& g, const Tensor& z_a,
                         const Tensor& z_b, int64_t steps);

// Posterior mean alpha: [C,P,P] -> [t], or [N,C,P,P] -> [N,t].
Tensor encode(const RNet& rnet, const Tensor& o);

struct AugmentSpec {
  int64_t n_fake = 0;
  uint64_t seed = 0;
  std::string policy = "tile";  // "tile" | "resize"
  bool clamp = true;
  int64_t overlap = 8;  // tile policy: cross-fade width in pixels

  void validate() const;
};

// One synthesized pair.  band_z holds the z draw per tile row band (tile
// policy) or the single draw (resize policy).
struct FakePair {
  Tensor o;  // clamp(x + r)
  Tensor x;  // source clean image
  Tensor r;  // composited rain layer
  std::vector<std::vector<double>> band_z;
};

// Builds a full-size rain layer from P x P generated patches and composites
// it over x.  rain_rng must be the pair's dedicated substream; the tile
// policy draws one z per row band (streaks stay continuous along a band) and
// cross-fades `overlap` pixels between tiles.
FakePair make_fake_pair(const Generator& g, const Tensor& x,
                        RngStream rain_rng, const std::string& policy,
                        bool clamp, int64_t overlap = 8);

struct AugmentResult {
  std::string manifest_path;
  int64_t real_written = 0;
  int64_t fake_written = 0;
};

// Writes real pairs plus n_fake generated pairs to out_dir in the rain100
// layout (rain-<id>.png / norain-<id>.png) with a JSON-lines manifest.  Fake
// pair i draws its source image from substream("augment").substream(i)
// .substream("pick") and its rain from .substream("rain"), so each manifest
// row replays bit-exactly with replay_fake_pair.
AugmentResult augment_dataset(const Generator& g,
                              const data::PairedDataset& real,
                              const AugmentSpec& spec,
                              const std::string& out_dir);

// Regenerates fake pair `index` of an augmentation run.
FakePair replay_fake_pair(const Generator& g, const Tensor& source_clean,
                          const AugmentSpec& spec, int64_t index);

}  // namespace vrg::gen
