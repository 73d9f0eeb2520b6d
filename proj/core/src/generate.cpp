#include "vrg/generate.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "vrg/autograd.hpp"
#include "vrg/errors.hpp"
#include "vrg/image.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace vrg::gen {

std::vector<double> linspace(double lo, double hi, int64_t count) {
  VRG_CHECK(count >= 1, "linspace: count must be >= 1, got ", count);
  std::vector<double> v(static_cast<size_t>(count));
  if (count == 1) {
    v[0] = lo;
    return v;
  }
  const double step = (hi - lo) / static_cast<double>(count - 1);
  for (int64_t k = 0; k < count; ++k)
    v[static_cast<size_t>(k)] = lo + step * static_cast<double>(k);
  v.back() = hi;  // exact endpoint regardless of rounding
  return v;
}

namespace {

// [n,t] -> [n,C,P,P] in bounded-size forward passes.
Tensor forward_chunked(const Generator& g, const Tensor& z) {
  const ArchConfig& a = g.arch();
  const int64_t n = z.dim(0);
  const int64_t t = z.dim(1);
  const int64_t per = a.image_channels * a.patch_size * a.patch_size;
  Tensor out({n, a.image_channels, a.patch_size, a.patch_size});
  ag::NoGrad off;
  const int64_t chunk = 32;
  for (int64_t s = 0; s < n; s += chunk) {
    const int64_t m = std::min(chunk, n - s);
    Tensor zc({m, t});
    std::copy(z.data() + s * t, z.data() + (s + m) * t, zc.data());
    const Tensor r = g.forward(ag::constant(zc))->value;
    std::copy(r.data(), r.data() + r.size(), out.data() + s * per);
  }
  return out;
}

std::vector<double> draw_z(RngStream& rng, int64_t t) {
  std::vector<double> z(static_cast<size_t>(t));
  for (double& v : z) v = rng.normal();
  return z;
}

}  // namespace

SampleResult sample_rain(const Generator& g, int64_t n, uint64_t seed) {
  VRG_CHECK(n >= 0, "sample_rain: n must be >= 0, got ", n);
  const int64_t t = g.arch().latent_dim;
  Tensor z({n, t});
  for (int64_t i = 0; i < n; ++i) {
    RngStream s = RngStream(seed).substream("sample").substream(
        static_cast<uint64_t>(i));
    for (int64_t d = 0; d < t; ++d) z.data()[i * t + d] = s.normal();
  }
  return {forward_chunked(g, z), z};
}

SynthResult synthesize_rainy(const Tensor& background, const Tensor& rain,
                             bool clamp) {
  VRG_CHECK(background.same_shape(rain), "synthesize_rainy: background ",
            shape_str(background.shape()), " vs rain ",
            shape_str(rain.shape()));
  SynthResult res;
  res.o = Tensor(background.shape());
  res.clip_mask = Tensor(background.shape());
  for (int64_t i = 0; i < background.size(); ++i) {
    double v = background.data()[i] + rain.data()[i];
    if (clamp) {
      const double c = std::clamp(v, 0.0, 1.0);
      if (c != v) {
        res.clip_mask.data()[i] = 1.0;
        ++res.clipped;
        v = c;
      }
    }
    res.o.data()[i] = v;
  }
  return res;
}

void SweepSpec::validate(int64_t latent_dim) const {
  VRG_CHECK(dim >= 0 && dim < latent_dim, "sweep: dim ", dim,
            " out of range [0,", latent_dim, ")");
  VRG_CHECK(lo < hi, "sweep: lo must be < hi, got ", lo, " and ", hi);
  VRG_CHECK(count >= 2, "sweep: count must be >= 2, got ", count);
  if (base_z.defined() && base_z.size() > 0)
    VRG_CHECK(base_z.ndim() == 1 && base_z.size() == latent_dim,
              "sweep: base_z must be [", latent_dim, "], got ",
              shape_str(base_z.shape()));
}

SweepResult disentangle_sweep(const Generator& g, const SweepSpec& spec) {
  const int64_t t = g.arch().latent_dim;
  spec.validate(t);
  const std::vector<double> grid = linspace(spec.lo, spec.hi, spec.count);
  Tensor z({spec.count, t});
  const bool has_base = spec.base_z.defined() && spec.base_z.size() > 0;
  for (int64_t k = 0; k < spec.count; ++k) {
    for (int64_t d = 0; d < t; ++d)
      z.data()[k * t + d] = has_base ? spec.base_z.data()[d] : 0.0;
    z.data()[k * t + spec.dim] = grid[static_cast<size_t>(k)];
  }
  return {forward_chunked(g, z), z};
}

InterpResult interpolate(const Generator& g, const Tensor& z_a,
                         const Tensor& z_b, int64_t steps) {
  const int64_t t = g.arch().latent_dim;
  VRG_CHECK(z_a.ndim() == 1 && z_b.ndim() == 1 && z_a.size() == z_b.size(),
            "interpolate: z_a ", shape_str(z_a.shape()), " vs z_b ",
            shape_str(z_b.shape()));
  VRG_CHECK(z_a.size() == t, "interpolate: codes must be length ", t, ", got ",
            z_a.size());
  VRG_CHECK(steps >= 2, "interpolate: steps must be >= 2, got ", steps);
  const std::vector<double> w = linspace(0.0, 1.0, steps);
  Tensor z({steps, t});
  for (int64_t k = 0; k < steps; ++k) {
    if (k == 0) {
      std::copy(z_a.data(), z_a.data() + t, z.data());
    } else if (k == steps - 1) {
      std::copy(z_b.data(), z_b.data() + t, z.data() + k * t);
    } else {
      // a + w*(b-a) rather than (1-w)*a + w*b: equal codes then interpolate
      // to themselves exactly.
      const double wk = w[static_cast<size_t>(k)];
      for (int64_t d = 0; d < t; ++d)
        z.data()[k * t + d] =
            z_a.data()[d] + wk * (z_b.data()[d] - z_a.data()[d]);
    }
  }
  return {forward_chunked(g, z), z};
}

Tensor encode(const RNet& rnet, const Tensor& o) {
  VRG_CHECK(o.ndim() == 3 || o.ndim() == 4,
            "encode expects [C,P,P] or [N,C,P,P], got ", shape_str(o.shape()));
  ag::NoGrad off;
  const bool single = o.ndim() == 3;
  const Tensor batch =
      single ? o.reshaped({1, o.dim(0), o.dim(1), o.dim(2)}) : o;
  const Tensor alpha = rnet.forward(ag::constant(batch)).alpha->value;
  return single ? alpha.reshaped({alpha.dim(1)}) : alpha;
}

void AugmentSpec::validate() const {
  VRG_CHECK(n_fake >= 0, "augment: n_fake must be >= 0, got ", n_fake);
  VRG_CHECK(policy == "tile" || policy == "resize",
            "augment: policy must be tile or resize, got ", policy);
  VRG_CHECK(overlap >= 1, "augment: overlap must be >= 1, got ", overlap);
}

namespace {

// Tile origins covering [0, extent): regular stride, with the final tile
// pinned to the far edge (its overlap may exceed the regular one).
std::vector<int64_t> tile_offsets(int64_t extent, int64_t P, int64_t stride) {
  std::vector<int64_t> offs;
  for (int64_t t = 0; t + P < extent; t += stride) offs.push_back(t);
  offs.push_back(extent - P);
  if (offs.size() >= 2 && offs[offs.size() - 2] == offs.back())
    offs.pop_back();
  return offs;
}

// Per-axis tile weight: 1 in the interior, linear ramps of width V against
// whichever edges adjoin a neighbouring tile.  Two regular neighbours' ramps
// sum to 1; irregular overlaps are handled by the weight-sum division.
std::vector<double> fade_profile(int64_t P, int64_t V, bool fade_lo,
                                 bool fade_hi) {
  std::vector<double> w(static_cast<size_t>(P), 1.0);
  for (int64_t k = 0; k < std::min(V, P); ++k) {
    const double t =
        static_cast<double>(k + 1) / static_cast<double>(V + 1);
    if (fade_lo) w[static_cast<size_t>(k)] = std::min(w[static_cast<size_t>(k)], t);
    if (fade_hi)
      w[static_cast<size_t>(P - 1 - k)] =
          std::min(w[static_cast<size_t>(P - 1 - k)], t);
  }
  return w;
}

Tensor bilinear_resize(const Tensor& src, int64_t H, int64_t W) {
  const int64_t C = src.dim(0), h = src.dim(1), w = src.dim(2);
  Tensor out({C, H, W});
  for (int64_t c = 0; c < C; ++c)
    for (int64_t y = 0; y < H; ++y) {
      const double sy =
          H > 1 ? static_cast<double>(y) * static_cast<double>(h - 1) /
                      static_cast<double>(H - 1)
                : 0.0;
      const int64_t y0 = std::min(static_cast<int64_t>(sy), h - 1);
      const int64_t y1 = std::min(y0 + 1, h - 1);
      const double fy = sy - static_cast<double>(y0);
      for (int64_t x = 0; x < W; ++x) {
        const double sx =
            W > 1 ? static_cast<double>(x) * static_cast<double>(w - 1) /
                        static_cast<double>(W - 1)
                  : 0.0;
        const int64_t x0 = std::min(static_cast<int64_t>(sx), w - 1);
        const int64_t x1 = std::min(x0 + 1, w - 1);
        const double fx = sx - static_cast<double>(x0);
        const double* p = src.data() + c * h * w;
        const double v00 = p[y0 * w + x0], v01 = p[y0 * w + x1];
        const double v10 = p[y1 * w + x0], v11 = p[y1 * w + x1];
        out.data()[(c * H + y) * W + x] =
            (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) +
            fy * ((1.0 - fx) * v10 + fx * v11);
      }
    }
  return out;
}

}  // namespace

FakePair make_fake_pair(const Generator& g, const Tensor& x,
                        RngStream rain_rng, const std::string& policy,
                        bool clamp, int64_t overlap) {
  VRG_CHECK(x.ndim() == 3, "make_fake_pair expects clean [C,H,W], got ",
            shape_str(x.shape()));
  const ArchConfig& a = g.arch();
  const int64_t P = a.patch_size;
  const int64_t Cp = a.image_channels;
  const int64_t Ci = x.dim(0), H = x.dim(1), W = x.dim(2);
  VRG_CHECK(Ci == Cp || Cp == 1,
            "make_fake_pair: cannot composite ", Cp, "-channel rain onto ",
            Ci, "-channel image");

  FakePair fp;
  Tensor rain({Cp, H, W});

  if (policy == "resize") {
    RngStream bs = rain_rng.substream("band").substream(uint64_t{0});
    std::vector<double> zv = draw_z(bs, a.latent_dim);
    Tensor z({1, a.latent_dim});
    std::copy(zv.begin(), zv.end(), z.data());
    const Tensor patch = forward_chunked(g, z).reshaped({Cp, P, P});
    rain = bilinear_resize(patch, H, W);
    fp.band_z.push_back(std::move(zv));
  } else {
    VRG_CHECK(policy == "tile", "make_fake_pair: unknown policy ", policy);
    VRG_CHECK(H >= P && W >= P, "make_fake_pair: image ", H, "x", W,
              " smaller than the ", P, "-pixel patch; use the resize policy");
    const int64_t stride = std::max<int64_t>(1, P - overlap);
    const std::vector<int64_t> tops = tile_offsets(H, P, stride);
    const std::vector<int64_t> lefts = tile_offsets(W, P, stride);
    Tensor wsum({H, W});

    for (size_t bi = 0; bi < tops.size(); ++bi) {
      // One z per row band keeps streaks continuous along the band.
      RngStream bs =
          rain_rng.substream("band").substream(static_cast<uint64_t>(bi));
      std::vector<double> zv = draw_z(bs, a.latent_dim);
      Tensor z({1, a.latent_dim});
      std::copy(zv.begin(), zv.end(), z.data());
      const Tensor patch = forward_chunked(g, z);  // [1,Cp,P,P]
      fp.band_z.push_back(std::move(zv));

      const std::vector<double> wy =
          fade_profile(P, overlap, bi > 0, bi + 1 < tops.size());
      const int64_t top = tops[bi];
      for (size_t li = 0; li < lefts.size(); ++li) {
        const std::vector<double> wx =
            fade_profile(P, overlap, li > 0, li + 1 < lefts.size());
        const int64_t left = lefts[li];
        for (int64_t c = 0; c < Cp; ++c)
          for (int64_t j = 0; j < P; ++j)
            for (int64_t k = 0; k < P; ++k) {
              const double wgt =
                  wy[static_cast<size_t>(j)] * wx[static_cast<size_t>(k)];
              rain.data()[(c * H + top + j) * W + left + k] +=
                  patch.data()[(c * P + j) * P + k] * wgt;
              if (c == 0)
                wsum.data()[(top + j) * W + left + k] += wgt;
            }
      }
    }
    for (int64_t c = 0; c < Cp; ++c)
      for (int64_t i = 0; i < H * W; ++i)
        rain.data()[c * H * W + i] /= wsum.data()[i];
  }

  if (Cp == 1 && Ci == 3) {
    Tensor wide({3, H, W});
    for (int64_t c = 0; c < 3; ++c)
      std::copy(rain.data(), rain.data() + H * W, wide.data() + c * H * W);
    rain = wide;
  }

  fp.x = x;
  fp.r = rain;
  fp.o = synthesize_rainy(x, rain, clamp).o;
  return fp;
}

FakePair replay_fake_pair(const Generator& g, const Tensor& source_clean,
                          const AugmentSpec& spec, int64_t index) {
  spec.validate();
  RngStream rain_rng = RngStream(spec.seed)
                           .substream("augment")
                           .substream(static_cast<uint64_t>(index))
                           .substream("rain");
  return make_fake_pair(g, source_clean, rain_rng, spec.policy, spec.clamp,
                        spec.overlap);
}

AugmentResult augment_dataset(const Generator& g,
                              const data::PairedDataset& real,
                              const AugmentSpec& spec,
                              const std::string& out_dir) {
  spec.validate();
  VRG_CHECK(real.size() > 0 || spec.n_fake == 0,
            "augment: empty real pool with n_fake > 0");
  fs::create_directories(out_dir);
  const std::string manifest_path =
      (fs::path(out_dir) / "augment_manifest.jsonl").string();
  std::ofstream mf(manifest_path, std::ios::trunc);
  VRG_CHECK(mf.good(), "augment: cannot write manifest: ", manifest_path);

  AugmentResult res;
  res.manifest_path = manifest_path;

  for (int64_t k = 0; k < real.size(); ++k) {
    const std::string id = "real-" + std::to_string(k);
    const std::string rainy = "rain-" + id + ".png";
    const std::string clean = "norain-" + id + ".png";
    img::write_png((fs::path(out_dir) / rainy).string(), real.rainy[k]);
    img::write_png((fs::path(out_dir) / clean).string(), real.clean[k]);
    const json row{{"id", id},
                   {"kind", "real"},
                   {"source_id", real.records[static_cast<size_t>(k)].id},
                   {"rainy", rainy},
                   {"clean", clean}};
    mf << row.dump() << '\n';
    ++res.real_written;
  }

  for (int64_t i = 0; i < spec.n_fake; ++i) {
    RngStream pair_rng = RngStream(spec.seed)
                             .substream("augment")
                             .substream(static_cast<uint64_t>(i));
    RngStream pick = pair_rng.substream("pick");
    const int64_t src = pick.uniform_int(real.size());
    RngStream rain_rng = pair_rng.substream("rain");
    const FakePair fp = make_fake_pair(g, real.clean[src], rain_rng,
                                       spec.policy, spec.clamp, spec.overlap);

    const std::string id = "fake-" + std::to_string(i);
    const std::string rainy = "rain-" + id + ".png";
    const std::string clean = "norain-" + id + ".png";
    img::write_png((fs::path(out_dir) / rainy).string(), fp.o);
    img::write_png((fs::path(out_dir) / clean).string(), fp.x);
    const json row{{"id", id},
                   {"kind", "fake"},
                   {"index", i},
                   {"seed", spec.seed},
                   {"source_id", real.records[static_cast<size_t>(src)].id},
                   {"source_index", src},
                   {"policy", spec.policy},
                   {"clamp", spec.clamp},
                   {"overlap", spec.overlap},
                   {"z_bands", fp.band_z},
                   {"rainy", rainy},
                   {"clean", clean}};
    mf << row.dump() << '\n';
    ++res.fake_written;
  }
  mf.flush();
  VRG_CHECK(mf.good(), "augment: manifest write failed: ", manifest_path);
  return res;
}

}  // namespace vrg::gen
