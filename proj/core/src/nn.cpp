#include "vrg/nn.hpp"

#include <cmath>

#include "vrg/errors.hpp"

namespace vrg::nn {

namespace ag = vrg::ag;

Var ParamStore::add_param(const std::string& name, Tensor init) {
  VRG_CHECK(!params_.count(name), "duplicate parameter '", name, "'");
  Var v = ag::leaf(std::move(init));
  params_.emplace(name, v);
  return v;
}

void ParamStore::add_buffer(const std::string& name, Tensor init) {
  VRG_CHECK(!buffers_.count(name), "duplicate buffer '", name, "'");
  buffers_.emplace(name, std::move(init));
}

Var ParamStore::param(const std::string& name) const {
  auto it = params_.find(name);
  VRG_CHECK(it != params_.end(), "unknown parameter '", name, "'");
  return it->second;
}

const Tensor& ParamStore::buffer(const std::string& name) const {
  auto it = buffers_.find(name);
  VRG_CHECK(it != buffers_.end(), "unknown buffer '", name, "'");
  return it->second;
}

void ParamStore::set_buffer(const std::string& name, Tensor value) {
  auto it = buffers_.find(name);
  VRG_CHECK(it != buffers_.end(), "unknown buffer '", name, "'");
  VRG_CHECK(it->second.same_shape(value), "buffer '", name, "' shape mismatch");
  it->second = std::move(value);
}

std::vector<Var> ParamStore::param_list() const {
  std::vector<Var> out;
  out.reserve(params_.size());
  for (const auto& [name, v] : params_) out.push_back(v);
  return out;
}

int64_t ParamStore::param_count() const {
  int64_t n = 0;
  for (const auto& [name, v] : params_) n += v->value.size();
  return n;
}

void ParamStore::load_param(const std::string& name, const Tensor& value) {
  auto it = params_.find(name);
  VRG_CHECK(it != params_.end(), "unknown parameter '", name, "'");
  VRG_CHECK(it->second->value.same_shape(value), "parameter '", name, "' shape mismatch: have ",
            shape_str(it->second->value.shape()), " got ", shape_str(value.shape()));
  it->second->value = value.clone();
}

Tensor conv_weight_init(RngStream& r, int64_t co, int64_t ci, int64_t k, double gain) {
  const double std = std::sqrt(gain / static_cast<double>(ci * k * k));
  Tensor w({co, ci, k, k});
  for (int64_t i = 0; i < w.size(); ++i) w.at(i) = r.normal(0.0, std);
  return w;
}

namespace {
// Uniform(+-1/sqrt(fan_in)).  A strictly zero bias would leave pre-activations
// of all-zero receptive fields sitting exactly on the ReLU kink.
Tensor bias_init(RngStream& r, int64_t n, int64_t fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor b({n});
  for (int64_t i = 0; i < n; ++i) b.at(i) = r.uniform(-bound, bound);
  return b;
}
}  // namespace

Tensor linear_weight_init(RngStream& r, int64_t out, int64_t in, double gain) {
  const double std = std::sqrt(gain / static_cast<double>(in));
  Tensor w({out, in});
  for (int64_t i = 0; i < w.size(); ++i) w.at(i) = r.normal(0.0, std);
  return w;
}

Conv2d::Conv2d(ParamStore& store, const std::string& prefix, int64_t ci, int64_t co, int64_t k,
               int stride_, int pad_, RngStream& init, double gain)
    : stride(stride_), pad(pad_) {
  w = store.add_param(prefix + ".weight", conv_weight_init(init, co, ci, k, gain));
  b = store.add_param(prefix + ".bias", bias_init(init, co, ci * k * k));
}

Var Conv2d::forward(const Var& x) const { return ag::add_bias(ag::conv2d(x, w, stride, pad), b); }

ConvTranspose2d::ConvTranspose2d(ParamStore& store, const std::string& prefix, int64_t ci,
                                 int64_t co, int64_t k, int stride_, int pad_, RngStream& init,
                                 double gain)
    : stride(stride_), pad(pad_) {
  // Stored [Ci,Co,K,K]; fan-in for the scatter view is co*k*k.
  const double std = std::sqrt(gain / static_cast<double>(co * k * k));
  Tensor wt({ci, co, k, k});
  for (int64_t i = 0; i < wt.size(); ++i) wt.at(i) = init.normal(0.0, std);
  w = store.add_param(prefix + ".weight", std::move(wt));
  b = store.add_param(prefix + ".bias", bias_init(init, co, co * k * k));
}

Var ConvTranspose2d::forward(const Var& x) const {
  return ag::add_bias(ag::conv_transpose2d(x, w, stride, pad), b);
}

Linear::Linear(ParamStore& store, const std::string& prefix, int64_t in, int64_t out,
               RngStream& init, double gain) {
  w = store.add_param(prefix + ".weight", linear_weight_init(init, out, in, gain));
  b = store.add_param(prefix + ".bias", bias_init(init, out, in));
}

Var Linear::forward(const Var& x) const {
  return ag::add_bias(ag::matmul(x, ag::transpose(w)), b);
}

namespace {
Tensor unit_normal(RngStream& r, int64_t n) {
  Tensor t({n});
  double norm = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    t.at(i) = r.normal();
    norm += t.at(i) * t.at(i);
  }
  norm = std::sqrt(norm);
  for (int64_t i = 0; i < n; ++i) t.at(i) /= norm > 0 ? norm : 1.0;
  return t;
}

Tensor normalized(const Tensor& t) {
  double norm = 0.0;
  for (int64_t i = 0; i < t.size(); ++i) norm += t.at(i) * t.at(i);
  norm = std::sqrt(norm);
  Tensor out(t.shape());
  const double inv = norm > 1e-300 ? 1.0 / norm : 0.0;
  for (int64_t i = 0; i < t.size(); ++i) out.at(i) = t.at(i) * inv;
  return out;
}
}  // namespace

SpectralConv2d::SpectralConv2d(ParamStore& store_, const std::string& prefix, int64_t ci,
                               int64_t co, int64_t k, int stride_, int pad_, RngStream& init,
                               double gain)
    : stride(stride_), pad(pad_), store(&store_) {
  w = store_.add_param(prefix + ".weight", conv_weight_init(init, co, ci, k, gain));
  b = store_.add_param(prefix + ".bias", bias_init(init, co, ci * k * k));
  u_name = prefix + ".u";
  v_name = prefix + ".v";
  store_.add_buffer(u_name, unit_normal(init, co));
  store_.add_buffer(v_name, unit_normal(init, ci * k * k));
}

void SpectralConv2d::power_iterate(int steps) {
  const auto& ws = w->value.shape();
  const int64_t co = ws[0];
  const int64_t rest = ws[1] * ws[2] * ws[3];
  Tensor W2 = w->value.reshaped({co, rest});
  Tensor u = store->buffer(u_name).clone();
  Tensor v = store->buffer(v_name).clone();
  for (int s = 0; s < steps; ++s) {
    // v <- normalize(W^T u), u <- normalize(W v)
    Tensor nv({rest});
    for (int64_t j = 0; j < rest; ++j) {
      double acc = 0.0;
      for (int64_t i = 0; i < co; ++i) acc += W2.at(i * rest + j) * u.at(i);
      nv.at(j) = acc;
    }
    v = normalized(nv);
    Tensor nu({co});
    for (int64_t i = 0; i < co; ++i) {
      double acc = 0.0;
      const double* row = W2.data() + i * rest;
      for (int64_t j = 0; j < rest; ++j) acc += row[j] * v.at(j);
      nu.at(i) = acc;
    }
    u = normalized(nu);
  }
  // Fresh tensors, never in-place: graphs that captured the old buffers as
  // constants keep their values.
  store->set_buffer(u_name, std::move(u));
  store->set_buffer(v_name, std::move(v));
}

Var SpectralConv2d::normalized_weight() const {
  const auto& ws = w->value.shape();
  const int64_t co = ws[0];
  const int64_t rest = ws[1] * ws[2] * ws[3];
  Var u = ag::constant(store->buffer(u_name).reshaped({1, co}));
  Var v = ag::constant(store->buffer(v_name).reshaped({rest, 1}));
  Var w2 = ag::reshape(w, {co, rest});
  Var sig = ag::reshape(ag::matmul(ag::matmul(u, w2), v), {1});
  Var inv = ag::div(ag::constant(Tensor::scalar(1.0)), sig);
  return ag::scale_by(w, inv);
}

double SpectralConv2d::sigma() const {
  ag::NoGrad ng;
  const auto& ws = w->value.shape();
  const int64_t co = ws[0];
  const int64_t rest = ws[1] * ws[2] * ws[3];
  Var u = ag::constant(store->buffer(u_name).reshaped({1, co}));
  Var v = ag::constant(store->buffer(v_name).reshaped({rest, 1}));
  Var w2 = ag::constant(w->value.reshaped({co, rest}));
  return ag::matmul(ag::matmul(u, w2), v)->value.item();
}

Var SpectralConv2d::forward(const Var& x) const {
  return ag::add_bias(ag::conv2d(x, normalized_weight(), stride, pad), b);
}

SelfAttention2d::SelfAttention2d(ParamStore& store, const std::string& prefix, int64_t channels_,
                                 RngStream& init)
    : channels(channels_) {
  const int64_t inner = std::max<int64_t>(1, channels_ / 8);
  query = SpectralConv2d(store, prefix + ".query", channels_, inner, 1, 1, 0, init, 1.0);
  key = SpectralConv2d(store, prefix + ".key", channels_, inner, 1, 1, 0, init, 1.0);
  value = SpectralConv2d(store, prefix + ".value", channels_, channels_, 1, 1, 0, init, 1.0);
  gamma = store.add_param(prefix + ".gamma", Tensor::zeros({1}));
}

void SelfAttention2d::power_iterate(int steps) {
  query.power_iterate(steps);
  key.power_iterate(steps);
  value.power_iterate(steps);
}

Var SelfAttention2d::forward(const Var& x) const {
  const auto& s = x->value.shape();
  const int64_t N = s[0], C = s[1], HW = s[2] * s[3];
  const int64_t inner = std::max<int64_t>(1, C / 8);
  Var f = ag::reshape(query.forward(x), {N, inner, HW});
  Var g = ag::reshape(key.forward(x), {N, inner, HW});
  Var h = ag::reshape(value.forward(x), {N, C, HW});
  // attn[j,i] = softmax_i f(x_i).g(x_j); out_j = sum_i attn[j,i] h(x_i)
  Var logits = ag::bmm(g, f, true, false);          // [N, HW, HW], row j, col i
  Var attn = ag::softmax_last(logits);
  Var out = ag::bmm(h, attn, false, true);          // [N, C, HW]
  return ag::add(x, ag::scale_by(ag::reshape(out, s), gamma));
}

ConvLSTMCell::ConvLSTMCell(ParamStore& store, const std::string& prefix, int64_t in,
                           int64_t hidden_, RngStream& init)
    : hidden(hidden_) {
  gates = Conv2d(store, prefix + ".gates", in + hidden_, 4 * hidden_, 3, 1, 1, init, 1.0);
}

std::pair<Var, Var> ConvLSTMCell::forward(const Var& x, const Var& h, const Var& c) const {
  Var z = gates.forward(ag::concat_ch(x, h));
  Var i = ag::sigmoid(ag::slice_ch(z, 0, hidden));
  Var f = ag::sigmoid(ag::slice_ch(z, hidden, 2 * hidden));
  Var g = ag::tanh(ag::slice_ch(z, 2 * hidden, 3 * hidden));
  Var o = ag::sigmoid(ag::slice_ch(z, 3 * hidden, 4 * hidden));
  Var c2 = ag::add(ag::mul(f, c), ag::mul(i, g));
  Var h2 = ag::mul(o, ag::tanh(c2));
  return {h2, c2};
}

ResBlock::ResBlock(ParamStore& store, const std::string& prefix, int64_t width, RngStream& init) {
  c1 = Conv2d(store, prefix + ".c1", width, width, 3, 1, 1, init, 2.0);
  c2 = Conv2d(store, prefix + ".c2", width, width, 3, 1, 1, init, 2.0);
}

Var ResBlock::forward(const Var& x) const {
  return ag::add(x, ag::relu(c2.forward(ag::relu(c1.forward(x)))));
}

}  // namespace vrg::nn
