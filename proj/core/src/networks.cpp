#include "vrg/networks.hpp"

#include <cmath>

#include "vrg/errors.hpp"

namespace vrg {

namespace {
int log2_exact(int64_t v) {
  int p = 0;
  while ((int64_t{1} << p) < v) ++p;
  return (int64_t{1} << p) == v ? p : -1;
}
}  // namespace

int ArchConfig::encoder_blocks() const { return log2_exact(patch_size) - 1; }
int ArchConfig::critic_blocks() const { return log2_exact(patch_size) - 2; }

void ArchConfig::validate() const {
  VRG_CHECK(image_channels == 1 || image_channels == 3, "image_channels must be 1 or 3, got ",
            image_channels);
  const int p = log2_exact(patch_size);
  VRG_CHECK(p >= 5, "patch_size must be a power of two >= 32, got ", patch_size);
  VRG_CHECK(latent_dim >= 1, "latent_dim must be positive, got ", latent_dim);
  VRG_CHECK(static_cast<int>(rnet_channels.size()) == encoder_blocks(),
            "rnet_channels needs ", encoder_blocks(), " entries for patch_size ", patch_size,
            ", got ", rnet_channels.size());
  VRG_CHECK(static_cast<int>(disc_channels.size()) == critic_blocks(),
            "disc_channels needs ", critic_blocks(), " entries for patch_size ", patch_size,
            ", got ", disc_channels.size());
  for (int64_t c : rnet_channels) VRG_CHECK(c >= 1, "bad rnet channel count ", c);
  for (int64_t c : disc_channels) VRG_CHECK(c >= 1, "bad disc channel count ", c);
  VRG_CHECK(bnet_width >= 1, "bnet_width must be positive, got ", bnet_width);
  VRG_CHECK(bnet_stages >= 1, "bnet_stages must be positive, got ", bnet_stages);
  VRG_CHECK(bnet_resblocks >= 0, "bnet_resblocks must be non-negative, got ", bnet_resblocks);
  VRG_CHECK(leaky_slope > 0.0 && leaky_slope < 1.0, "leaky_slope out of (0,1): ", leaky_slope);
  VRG_CHECK(attention_blocks >= 0 && attention_blocks <= critic_blocks(),
            "attention_blocks must be in [0,", critic_blocks(), "], got ", attention_blocks);
}

RNet::RNet(const ArchConfig& arch, RngStream init) : arch_(arch) {
  arch.validate();
  int64_t ci = arch.image_channels;
  for (size_t i = 0; i < arch.rnet_channels.size(); ++i) {
    const int64_t co = arch.rnet_channels[i];
    blocks_.emplace_back(store_, "block" + std::to_string(i), ci, co, 4, 2, 1, init, 2.0);
    ci = co;
  }
  head_ = nn::Linear(store_, "head", ci * 4, 2 * arch.latent_dim, init, 1.0);
}

RNet::Posterior RNet::forward(const Var& o) const {
  const auto& s = o->value.shape();
  VRG_CHECK(s.size() == 4 && s[1] == arch_.image_channels && s[2] == arch_.patch_size &&
                s[3] == arch_.patch_size,
            "RNet expects [N,", arch_.image_channels, ",", arch_.patch_size, ",",
            arch_.patch_size, "], got ", shape_str(s));
  Var h = o;
  for (const auto& b : blocks_) h = ag::relu(b.forward(h));
  const int64_t n = s[0];
  Var flat = ag::reshape(h, {n, h->value.size() / n});
  Var out = head_.forward(flat);
  const int64_t t = arch_.latent_dim;
  Var out4 = ag::reshape(out, {n, 2 * t, 1, 1});
  Posterior p;
  p.alpha = ag::reshape(ag::slice_ch(out4, 0, t), {n, t});
  p.log_beta = ag::reshape(ag::slice_ch(out4, t, 2 * t), {n, t});
  return p;
}

Generator::Generator(const ArchConfig& arch, RngStream init) : arch_(arch) {
  arch.validate();
  const auto& ch = arch.rnet_channels;
  fc_ = nn::Linear(store_, "fc", arch.latent_dim, ch.back() * 4, init, 1.0);
  int64_t ci = ch.back();
  for (size_t i = 0; i < ch.size(); ++i) {
    const int64_t co = i + 1 < ch.size() ? ch[ch.size() - 2 - i] : arch.image_channels;
    blocks_.emplace_back(store_, "block" + std::to_string(i), ci, co, 4, 2, 1, init, 2.0);
    ci = co;
  }
}

Var Generator::forward(const Var& z) const {
  const auto& s = z->value.shape();
  VRG_CHECK(s.size() == 2 && s[1] == arch_.latent_dim, "Generator expects [N,",
            arch_.latent_dim, "], got ", shape_str(s));
  const int64_t n = s[0];
  Var h = ag::reshape(fc_.forward(z), {n, arch_.rnet_channels.back(), 2, 2});
  for (const auto& b : blocks_) h = ag::relu(b.forward(h));
  return h;
}

BNet::BNet(const ArchConfig& arch, RngStream init) : arch_(arch) {
  arch.validate();
  const int64_t C = arch.image_channels;
  const int64_t w = arch.bnet_width;
  conv_in_ = nn::Conv2d(store_, "conv_in", 2 * C, w, 3, 1, 1, init, 2.0);
  lstm_ = nn::ConvLSTMCell(store_, "lstm", w, w, init);
  for (int64_t i = 0; i < arch.bnet_resblocks; ++i)
    res_.emplace_back(store_, "res" + std::to_string(i), w, init);
  conv_out_ = nn::Conv2d(store_, "conv_out", w, 2 * C, 3, 1, 1, init, 1.0);
}

BNet::Posterior BNet::forward(const Var& o) const { return forward(o, arch_.bnet_stages); }

BNet::Posterior BNet::forward(const Var& o, int64_t stages) const {
  const auto& s = o->value.shape();
  VRG_CHECK(s.size() == 4 && s[1] == arch_.image_channels, "BNet expects [N,",
            arch_.image_channels, ",H,W], got ", shape_str(s));
  VRG_CHECK(stages >= 1, "BNet stage count must be positive, got ", stages);
  const int64_t N = s[0], C = s[1], H = s[2], W = s[3];
  Var h = ag::constant(Tensor::zeros({N, arch_.bnet_width, H, W}));
  Var c = ag::constant(Tensor::zeros({N, arch_.bnet_width, H, W}));
  Var mu = o;
  Var head;
  for (int64_t t = 0; t < stages; ++t) {
    Var f = ag::relu(conv_in_.forward(ag::concat_ch(o, mu)));
    auto [h2, c2] = lstm_.forward(f, h, c);
    h = h2;
    c = c2;
    Var r = h;
    for (const auto& blk : res_) r = blk.forward(r);
    head = conv_out_.forward(r);
    mu = ag::slice_ch(head, 0, C);
  }
  Posterior p;
  p.mu = mu;
  p.log_sigma2 = ag::slice_ch(head, C, 2 * C);
  return p;
}

Critic::Critic(const ArchConfig& arch, RngStream init) : arch_(arch) {
  arch.validate();
  const int n_blocks = arch.critic_blocks();
  int64_t ci = arch.image_channels;
  for (int i = 0; i < n_blocks; ++i) {
    const int64_t co = arch.disc_channels[static_cast<size_t>(i)];
    blocks_.emplace_back(store_, "block" + std::to_string(i), ci, co, 4, 2, 1, init, 2.0);
    if (i >= n_blocks - static_cast<int>(arch.attention_blocks))
      attn_.emplace_back(store_, "attn" + std::to_string(i), co, init);
    ci = co;
  }
  final_ = nn::SpectralConv2d(store_, "final", ci, 1, 4, 1, 0, init, 1.0);
}

Var Critic::forward(const Var& x) const {
  const auto& s = x->value.shape();
  VRG_CHECK(s.size() == 4 && s[1] == arch_.image_channels && s[2] == arch_.patch_size &&
                s[3] == arch_.patch_size,
            "Critic expects [N,", arch_.image_channels, ",", arch_.patch_size, ",",
            arch_.patch_size, "], got ", shape_str(s));
  const int n_blocks = static_cast<int>(blocks_.size());
  const int attn_from = n_blocks - static_cast<int>(attn_.size());
  Var h = x;
  for (int i = 0; i < n_blocks; ++i) {
    h = ag::leaky_relu(blocks_[static_cast<size_t>(i)].forward(h), arch_.leaky_slope);
    if (i >= attn_from) h = attn_[static_cast<size_t>(i - attn_from)].forward(h);
  }
  Var out = final_.forward(h);  // [N,1,1,1]
  return ag::reshape(out, {s[0]});
}

void Critic::power_iterate(int steps) {
  for (auto& b : blocks_) b.power_iterate(steps);
  for (auto& a : attn_) a.power_iterate(steps);
  final_.power_iterate(steps);
}

std::vector<double> Critic::sigmas() const {
  std::vector<double> out;
  for (const auto& b : blocks_) out.push_back(b.sigma());
  for (const auto& a : attn_) {
    out.push_back(a.query.sigma());
    out.push_back(a.key.sigma());
    out.push_back(a.value.sigma());
  }
  out.push_back(final_.sigma());
  return out;
}

Model::Model(const ArchConfig& a, uint64_t seed)
    : arch(a),
      rnet(a, RngStream(seed).substream("init/rnet")),
      bnet(a, RngStream(seed).substream("init/bnet")),
      gen(a, RngStream(seed).substream("init/gen")),
      critic(a, RngStream(seed).substream("init/critic")) {}

}  // namespace vrg
