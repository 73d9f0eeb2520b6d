#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "vrg/autograd.hpp"
#include "vrg/ops.hpp"
#include "vrg/rng.hpp"

namespace vrg::nn {

// Ordered registry of a network's parameters and non-trained buffers
// (spectral-norm u/v vectors).  Iteration is by sorted name everywhere, which
// fixes the optimizer update and serialization order.
class ParamStore {
 public:
  Var add_param(const std::string& name, Tensor init);
  void add_buffer(const std::string& name, Tensor init);

  Var param(const std::string& name) const;
  const Tensor& buffer(const std::string& name) const;
  void set_buffer(const std::string& name, Tensor value);
  bool has_param(const std::string& name) const { return params_.count(name) > 0; }

  const std::map<std::string, Var>& params() const { return params_; }
  const std::map<std::string, Tensor>& buffers() const { return buffers_; }

  std::vector<Var> param_list() const;
  int64_t param_count() const;

  // Overwrite parameter/buffer values (checkpoint restore).  Shapes must
  // match what the architecture constructed.
  void load_param(const std::string& name, const Tensor& value);

 private:
  std::map<std::string, Var> params_;
  std::map<std::string, Tensor> buffers_;
};

// Weight init: N(0, sqrt(gain/fan_in)).  gain 2 suits ReLU stacks, 1 suits
// linear heads.  Biases are Uniform(+-1/sqrt(fan_in)).
Tensor conv_weight_init(RngStream& r, int64_t co, int64_t ci, int64_t k, double gain);
Tensor linear_weight_init(RngStream& r, int64_t out, int64_t in, double gain);

struct Conv2d {
  Var w, b;
  int stride = 1, pad = 0;

  Conv2d() = default;
  Conv2d(ParamStore& store, const std::string& prefix, int64_t ci, int64_t co, int64_t k,
         int stride, int pad, RngStream& init, double gain = 2.0);
  Var forward(const Var& x) const;
};

// Weight layout [Ci,Co,K,K]; output spatial (H-1)*stride - 2*pad + K.
struct ConvTranspose2d {
  Var w, b;
  int stride = 1, pad = 0;

  ConvTranspose2d() = default;
  ConvTranspose2d(ParamStore& store, const std::string& prefix, int64_t ci, int64_t co, int64_t k,
                  int stride, int pad, RngStream& init, double gain = 2.0);
  Var forward(const Var& x) const;
};

struct Linear {
  Var w, b;  // w: [out, in]

  Linear() = default;
  Linear(ParamStore& store, const std::string& prefix, int64_t in, int64_t out, RngStream& init,
         double gain = 1.0);
  Var forward(const Var& x) const;  // x: [N, in]
};

// Convolution whose weight is divided by its spectral norm.  The norm
// estimate comes from persistent u/v power-iteration vectors stored as
// buffers; updating them is an explicit trainer step (power_iterate), never a
// forward side effect, so forwards stay pure.  sigma = u^T W v is detached in
// u and v but differentiable in W.
struct SpectralConv2d {
  Var w, b;
  int stride = 1, pad = 0;
  ParamStore* store = nullptr;
  std::string u_name, v_name;

  SpectralConv2d() = default;
  SpectralConv2d(ParamStore& store, const std::string& prefix, int64_t ci, int64_t co, int64_t k,
                 int stride, int pad, RngStream& init, double gain = 1.0);

  void power_iterate(int steps);
  Var normalized_weight() const;
  double sigma() const;
  Var forward(const Var& x) const;
};

// SAGAN-style block: 1x1 query/key/value convs (spectrally normalized like
// the rest of the critic), softmax attention over spatial positions, residual
// output x + gamma * attention with gamma a zero-initialized scalar, so the
// block starts as the identity.
struct SelfAttention2d {
  SpectralConv2d query, key, value;
  Var gamma;
  int64_t channels = 0;

  SelfAttention2d() = default;
  SelfAttention2d(ParamStore& store, const std::string& prefix, int64_t channels, RngStream& init);
  void power_iterate(int steps);
  Var forward(const Var& x) const;
};

struct ConvLSTMCell {
  Conv2d gates;  // concat(x,h) -> 4*hidden, fused i|f|g|o
  int64_t hidden = 0;

  ConvLSTMCell() = default;
  ConvLSTMCell(ParamStore& store, const std::string& prefix, int64_t in, int64_t hidden,
               RngStream& init);
  std::pair<Var, Var> forward(const Var& x, const Var& h, const Var& c) const;
};

// [Conv, ReLU, Conv, ReLU] with a skip connection around the whole unit.
struct ResBlock {
  Conv2d c1, c2;

  ResBlock() = default;
  ResBlock(ParamStore& store, const std::string& prefix, int64_t width, RngStream& init);
  Var forward(const Var& x) const;
};

}  // namespace vrg::nn
