#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vrg/nn.hpp"

namespace vrg {

// Geometry shared by all four sub-networks.  Downsampling block counts are
// derived from the patch size: encoders stop at 2x2 (log2(P)-1 blocks), the
// critic at 4x4 (log2(P)-2 blocks), so channel lists must have exactly those
// lengths.
struct ArchConfig {
  int64_t image_channels = 3;
  int64_t patch_size = 64;
  int64_t latent_dim = 128;
  std::vector<int64_t> rnet_channels = {32, 64, 128, 256, 512};
  std::vector<int64_t> disc_channels = {64, 128, 256, 512};
  int64_t bnet_width = 32;
  int64_t bnet_stages = 6;
  int64_t bnet_resblocks = 5;
  double leaky_slope = 0.1;
  int64_t attention_blocks = 2;  // self-attention after this many trailing critic blocks

  int encoder_blocks() const;
  int critic_blocks() const;
  void validate() const;
  bool operator==(const ArchConfig&) const = default;
};

// Rain encoder: [Conv 4x4 s2 + ReLU] blocks down to 2x2, then a linear head
// emitting the latent posterior parameters (alpha, log beta), each length t.
class RNet {
 public:
  RNet(const ArchConfig& arch, RngStream init);
  RNet(const RNet&) = delete;
  RNet& operator=(const RNet&) = delete;

  struct Posterior {
    Var alpha;     // [N, t]
    Var log_beta;  // [N, t]
  };
  Posterior forward(const Var& o) const;

  const ArchConfig& arch() const { return arch_; }
  nn::ParamStore& store() { return store_; }
  const nn::ParamStore& store() const { return store_; }

 private:
  ArchConfig arch_;
  nn::ParamStore store_;
  std::vector<nn::Conv2d> blocks_;
  nn::Linear head_;
};

// Rain generator: linear t -> C0*2*2, then [TransposeConv 4x4 s2 + ReLU]
// blocks mirroring the encoder.  The final ReLU keeps rain non-negative.
class Generator {
 public:
  Generator(const ArchConfig& arch, RngStream init);
  Generator(const Generator&) = delete;
  Generator& operator=(const Generator&) = delete;

  Var forward(const Var& z) const;  // [N, t] -> [N, C, P, P]

  const ArchConfig& arch() const { return arch_; }
  nn::ParamStore& store() { return store_; }
  const nn::ParamStore& store() const { return store_; }

 private:
  ArchConfig arch_;
  nn::ParamStore store_;
  nn::Linear fc_;
  std::vector<nn::ConvTranspose2d> blocks_;
};

// Background posterior network, a progressive recurrent derainer: stages
// share one parameter set, each stage running [Conv+ReLU, ConvLSTM,
// ResBlocks, Conv] on concat(o, mu_prev) with mu_prev seeded by o.  The last
// stage's head emits mu and log sigma^2 per pixel; parameter count is
// independent of the stage count.
class BNet {
 public:
  BNet(const ArchConfig& arch, RngStream init);
  BNet(const BNet&) = delete;
  BNet& operator=(const BNet&) = delete;

  struct Posterior {
    Var mu;          // [N, C, H, W]
    Var log_sigma2;  // [N, C, H, W]
  };
  Posterior forward(const Var& o) const;
  // Stage count override so tests can confirm stage-sharing.
  Posterior forward(const Var& o, int64_t stages) const;

  nn::ParamStore& store() { return store_; }
  const nn::ParamStore& store() const { return store_; }

 private:
  ArchConfig arch_;
  nn::ParamStore store_;
  nn::Conv2d conv_in_;
  nn::ConvLSTMCell lstm_;
  std::vector<nn::ResBlock> res_;
  nn::Conv2d conv_out_;
};

// Wasserstein critic: [SpectralConv 4x4 s2 + LeakyReLU] blocks with
// self-attention on the trailing blocks, closed by a spectrally normalized
// 4x4 conv to one logit per sample.
class Critic {
 public:
  Critic(const ArchConfig& arch, RngStream init);
  Critic(const Critic&) = delete;
  Critic& operator=(const Critic&) = delete;

  Var forward(const Var& x) const;  // [N, C, P, P] -> [N]

  // One power-iteration refresh across every spectrally normalized weight.
  // Called by the trainer once per critic update; forward never mutates.
  void power_iterate(int steps = 1);
  std::vector<double> sigmas() const;

  nn::ParamStore& store() { return store_; }
  const nn::ParamStore& store() const { return store_; }

 private:
  ArchConfig arch_;
  nn::ParamStore store_;
  std::vector<nn::SpectralConv2d> blocks_;
  std::vector<nn::SelfAttention2d> attn_;  // parallel to trailing blocks
  nn::SpectralConv2d final_;
};

// The four sub-networks over one architecture, freshly initialized from a
// seed.  Parameter init draws from named substreams so each network's
// initialization is independent of the others.
struct Model {
  ArchConfig arch;
  RNet rnet;
  BNet bnet;
  Generator gen;
  Critic critic;

  Model(const ArchConfig& a, uint64_t seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
};

}  // namespace vrg
