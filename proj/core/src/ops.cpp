#include "vrg/ops.hpp"

#include <cmath>
#include <cstring>

#include "vrg/errors.hpp"
#include "vrg/kernels.hpp"

namespace vrg::ag {

namespace {

void check_same_shape(const Var& a, const Var& b, const char* op) {
  VRG_CHECK(a && b, op, ": null operand");
  VRG_CHECK(a->value.same_shape(b->value), op, ": shape mismatch ", shape_str(a->value.shape()),
            " vs ", shape_str(b->value.shape()));
}

Tensor map1(const Tensor& a, double (*f)(double)) {
  Tensor out(a.shape());
  for (int64_t i = 0; i < a.size(); ++i) out.at(i) = f(a.at(i));
  return out;
}

template <class F>
Tensor zip(const Tensor& a, const Tensor& b, F f) {
  Tensor out(a.shape());
  for (int64_t i = 0; i < a.size(); ++i) out.at(i) = f(a.at(i), b.at(i));
  return out;
}

// Shape of b must equal a's with the last dimension collapsed to 1.
void check_last(const Var& a, const Var& b, const char* op) {
  VRG_CHECK(a && b, op, ": null operand");
  auto expect = a->value.shape();
  VRG_CHECK(!expect.empty(), op, ": zero-rank operand");
  expect.back() = 1;
  VRG_CHECK(b->value.shape() == expect, op, ": broadcast shape ", shape_str(b->value.shape()),
            " does not match ", shape_str(a->value.shape()));
}

template <class F>
Tensor zip_last(const Tensor& a, const Tensor& b, F f) {
  Tensor out(a.shape());
  const int64_t L = a.shape().back();
  const int64_t rows = a.size() / L;
  for (int64_t r = 0; r < rows; ++r) {
    const double bv = b.at(r);
    for (int64_t i = 0; i < L; ++i) out.at(r * L + i) = f(a.at(r * L + i), bv);
  }
  return out;
}

}  // namespace

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  return make_node(zip(a->value, b->value, [](double x, double y) { return x + y; }), {a, b},
                   [](const Var& g) -> std::vector<Var> { return {g, g}; }, "add");
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  return make_node(zip(a->value, b->value, [](double x, double y) { return x - y; }), {a, b},
                   [](const Var& g) -> std::vector<Var> { return {g, neg(g)}; }, "sub");
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  return make_node(zip(a->value, b->value, [](double x, double y) { return x * y; }), {a, b},
                   [a, b](const Var& g) -> std::vector<Var> { return {mul(g, b), mul(g, a)}; },
                   "mul");
}

Var div(const Var& a, const Var& b) {
  check_same_shape(a, b, "div");
  return make_node(zip(a->value, b->value, [](double x, double y) { return x / y; }), {a, b},
                   [a, b](const Var& g) -> std::vector<Var> {
                     return {div(g, b), neg(div(mul(g, a), mul(b, b)))};
                   },
                   "div");
}

Var neg(const Var& a) {
  return make_node(map1(a->value, [](double x) { return -x; }), {a},
                   [](const Var& g) -> std::vector<Var> { return {neg(g)}; }, "neg");
}

Var scale(const Var& a, double c) {
  Tensor out(a->value.shape());
  for (int64_t i = 0; i < out.size(); ++i) out.at(i) = a->value.at(i) * c;
  return make_node(std::move(out), {a},
                   [c](const Var& g) -> std::vector<Var> { return {scale(g, c)}; }, "scale");
}

Var add_const(const Var& a, double c) {
  Tensor out(a->value.shape());
  for (int64_t i = 0; i < out.size(); ++i) out.at(i) = a->value.at(i) + c;
  return make_node(std::move(out), {a},
                   [](const Var& g) -> std::vector<Var> { return {g}; }, "add_const");
}

Var exp(const Var& a) {
  return make_node(map1(a->value, [](double x) { return std::exp(x); }), {a},
                   [a](const Var& g) -> std::vector<Var> { return {mul(g, exp(a))}; }, "exp");
}

Var log(const Var& a) {
  return make_node(map1(a->value, [](double x) { return std::log(x); }), {a},
                   [a](const Var& g) -> std::vector<Var> { return {div(g, a)}; }, "log");
}

Var sqrt(const Var& a) {
  return make_node(map1(a->value, [](double x) { return std::sqrt(x); }), {a},
                   [a](const Var& g) -> std::vector<Var> {
                     return {div(g, scale(sqrt(a), 2.0))};
                   },
                   "sqrt");
}

Var square(const Var& a) {
  return make_node(map1(a->value, [](double x) { return x * x; }), {a},
                   [a](const Var& g) -> std::vector<Var> { return {mul(g, scale(a, 2.0))}; },
                   "square");
}

Var relu(const Var& a) {
  Tensor out(a->value.shape());
  Tensor mask(a->value.shape());
  for (int64_t i = 0; i < out.size(); ++i) {
    const bool pos = a->value.at(i) > 0.0;
    out.at(i) = pos ? a->value.at(i) : 0.0;
    mask.at(i) = pos ? 1.0 : 0.0;
  }
  // The mask is constant a.e., so capturing it by value keeps higher
  // derivatives exact.
  return make_node(std::move(out), {a},
                   [mask](const Var& g) -> std::vector<Var> {
                     return {mul(g, constant(mask))};
                   },
                   "relu");
}

Var leaky_relu(const Var& a, double slope) {
  Tensor out(a->value.shape());
  Tensor mask(a->value.shape());
  for (int64_t i = 0; i < out.size(); ++i) {
    const bool pos = a->value.at(i) > 0.0;
    out.at(i) = pos ? a->value.at(i) : slope * a->value.at(i);
    mask.at(i) = pos ? 1.0 : slope;
  }
  return make_node(std::move(out), {a},
                   [mask](const Var& g) -> std::vector<Var> {
                     return {mul(g, constant(mask))};
                   },
                   "leaky_relu");
}

Var sigmoid(const Var& a) {
  auto f = [](double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); };
  return make_node(map1(a->value, f), {a},
                   [a](const Var& g) -> std::vector<Var> {
                     Var s = sigmoid(a);
                     return {mul(g, mul(s, add_const(neg(s), 1.0)))};
                   },
                   "sigmoid");
}

Var tanh(const Var& a) {
  return make_node(map1(a->value, [](double x) { return std::tanh(x); }), {a},
                   [a](const Var& g) -> std::vector<Var> {
                     return {mul(g, add_const(neg(square(tanh(a))), 1.0))};
                   },
                   "tanh");
}

Var sum(const Var& a) {
  double s = 0.0;
  for (int64_t i = 0; i < a->value.size(); ++i) s += a->value.at(i);
  auto shape = a->value.shape();
  return make_node(Tensor::scalar(s), {a},
                   [shape](const Var& g) -> std::vector<Var> {
                     return {broadcast_scalar(g, shape)};
                   },
                   "sum");
}

Var mean(const Var& a) {
  VRG_CHECK(a->value.size() > 0, "mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a->value.size()));
}

Var sum_per_sample(const Var& a) {
  const auto& s = a->value.shape();
  VRG_CHECK(s.size() >= 1, "sum_per_sample needs a batch dimension");
  const int64_t n = s[0];
  const int64_t per = n > 0 ? a->value.size() / n : 0;
  Tensor out({n});
  for (int64_t i = 0; i < n; ++i) {
    double acc = 0.0;
    const double* p = a->value.data() + i * per;
    for (int64_t j = 0; j < per; ++j) acc += p[j];
    out.at(i) = acc;
  }
  auto shape = s;
  return make_node(std::move(out), {a},
                   [shape](const Var& g) -> std::vector<Var> {
                     return {broadcast_per_sample(g, shape)};
                   },
                   "sum_per_sample");
}

Var broadcast_per_sample(const Var& a, std::vector<int64_t> shape) {
  VRG_CHECK(a->value.ndim() == 1 && !shape.empty() && shape[0] == a->value.dim(0),
            "broadcast_per_sample: [N] -> ", shape_str(shape), " with N=",
            a->value.ndim() == 1 ? a->value.dim(0) : -1);
  Tensor out(shape);
  const int64_t n = shape[0];
  const int64_t per = n > 0 ? out.size() / n : 0;
  for (int64_t i = 0; i < n; ++i) std::fill_n(out.data() + i * per, per, a->value.at(i));
  return make_node(std::move(out), {a},
                   [](const Var& g) -> std::vector<Var> { return {sum_per_sample(g)}; },
                   "broadcast_per_sample");
}

Var broadcast_scalar(const Var& a, std::vector<int64_t> shape) {
  VRG_CHECK(a->value.size() == 1, "broadcast_scalar from shape ", shape_str(a->value.shape()));
  return make_node(Tensor::full(shape, a->value.item()), {a},
                   [](const Var& g) -> std::vector<Var> { return {sum(g)}; }, "broadcast_scalar");
}

Var rowsum_last(const Var& a) {
  const auto& s = a->value.shape();
  VRG_CHECK(!s.empty(), "rowsum_last on zero-rank tensor");
  const int64_t L = s.back();
  const int64_t rows = a->value.size() / L;
  auto shape = s;
  shape.back() = 1;
  Tensor out(shape);
  for (int64_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (int64_t i = 0; i < L; ++i) acc += a->value.at(r * L + i);
    out.at(r) = acc;
  }
  return make_node(std::move(out), {a},
                   [L](const Var& g) -> std::vector<Var> { return {broadcast_last(g, L)}; },
                   "rowsum_last");
}

Var broadcast_last(const Var& a, int64_t l) {
  const auto& s = a->value.shape();
  VRG_CHECK(!s.empty() && s.back() == 1, "broadcast_last from ", shape_str(s));
  auto shape = s;
  shape.back() = l;
  Tensor out(shape);
  const int64_t rows = a->value.size();
  for (int64_t r = 0; r < rows; ++r) std::fill_n(out.data() + r * l, l, a->value.at(r));
  return make_node(std::move(out), {a},
                   [](const Var& g) -> std::vector<Var> { return {rowsum_last(g)}; },
                   "broadcast_last");
}

Var add_last(const Var& a, const Var& b) {
  check_last(a, b, "add_last");
  return make_node(zip_last(a->value, b->value, [](double x, double y) { return x + y; }), {a, b},
                   [](const Var& g) -> std::vector<Var> { return {g, rowsum_last(g)}; },
                   "add_last");
}

Var sub_last(const Var& a, const Var& b) {
  check_last(a, b, "sub_last");
  return make_node(zip_last(a->value, b->value, [](double x, double y) { return x - y; }), {a, b},
                   [](const Var& g) -> std::vector<Var> { return {g, neg(rowsum_last(g))}; },
                   "sub_last");
}

Var mul_last(const Var& a, const Var& b) {
  check_last(a, b, "mul_last");
  return make_node(zip_last(a->value, b->value, [](double x, double y) { return x * y; }), {a, b},
                   [a, b](const Var& g) -> std::vector<Var> {
                     return {mul_last(g, b), rowsum_last(mul(g, a))};
                   },
                   "mul_last");
}

Var div_last(const Var& a, const Var& b) {
  check_last(a, b, "div_last");
  return make_node(zip_last(a->value, b->value, [](double x, double y) { return x / y; }), {a, b},
                   [a, b](const Var& g) -> std::vector<Var> {
                     return {div_last(g, b), neg(div(rowsum_last(mul(g, a)), mul(b, b)))};
                   },
                   "div_last");
}

Var softmax_last(const Var& a) {
  Var shift = constant(kern::rowmax_last(a->value));
  Var e = exp(sub_last(a, shift));
  Var s = rowsum_last(e);
  return div_last(e, s);
}

Var scale_by(const Var& a, const Var& s) {
  VRG_CHECK(s && s->value.size() == 1, "scale_by: gate must be a single element");
  const double c = s->value.item();
  Tensor out(a->value.shape());
  for (int64_t i = 0; i < out.size(); ++i) out.at(i) = a->value.at(i) * c;
  return make_node(std::move(out), {a, s},
                   [a, s](const Var& g) -> std::vector<Var> {
                     return {scale_by(g, s), sum(mul(g, a))};
                   },
                   "scale_by");
}

namespace {
int64_t bias_channels(const Var& a, const Var& b, const char* op) {
  VRG_CHECK(a && b, op, ": null operand");
  VRG_CHECK(b->value.ndim() == 1, op, ": bias must be rank 1, got ",
            shape_str(b->value.shape()));
  VRG_CHECK(a->value.ndim() >= 2 && a->value.dim(1) == b->value.dim(0), op,
            ": bias of length ", b->value.dim(0), " against activation ",
            shape_str(a->value.shape()));
  return b->value.dim(0);
}
}  // namespace

Var add_bias(const Var& a, const Var& b) {
  const int64_t C = bias_channels(a, b, "add_bias");
  const int64_t N = a->value.dim(0);
  const int64_t inner = a->value.size() / (N * C);
  Tensor out(a->value.shape());
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const double bv = b->value.at(c);
      double* p = out.data() + (n * C + c) * inner;
      const double* q = a->value.data() + (n * C + c) * inner;
      for (int64_t i = 0; i < inner; ++i) p[i] = q[i] + bv;
    }
  return make_node(std::move(out), {a, b},
                   [C](const Var& g) -> std::vector<Var> { return {g, reduce_bias(g, C)}; },
                   "add_bias");
}

Var reduce_bias(const Var& g, int64_t channels) {
  VRG_CHECK(g->value.ndim() >= 2 && g->value.dim(1) == channels, "reduce_bias: ", channels,
            " channels from ", shape_str(g->value.shape()));
  const int64_t N = g->value.dim(0);
  const int64_t inner = g->value.size() / (N * channels);
  Tensor out({channels});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < channels; ++c) {
      const double* p = g->value.data() + (n * channels + c) * inner;
      double acc = 0.0;
      for (int64_t i = 0; i < inner; ++i) acc += p[i];
      out.at(c) += acc;
    }
  auto shape = g->value.shape();
  return make_node(std::move(out), {g},
                   [shape](const Var& gg) -> std::vector<Var> {
                     return {bias_expand(gg, shape)};
                   },
                   "reduce_bias");
}

Var bias_expand(const Var& b, std::vector<int64_t> shape) {
  VRG_CHECK(b->value.ndim() == 1 && shape.size() >= 2 && shape[1] == b->value.dim(0),
            "bias_expand: ", shape_str(b->value.shape()), " -> ", shape_str(shape));
  Tensor out(shape);
  const int64_t N = shape[0];
  const int64_t C = shape[1];
  const int64_t inner = out.size() / (N * C);
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c)
      std::fill_n(out.data() + (n * C + c) * inner, inner, b->value.at(c));
  const int64_t C2 = C;
  return make_node(std::move(out), {b},
                   [C2](const Var& g) -> std::vector<Var> { return {reduce_bias(g, C2)}; },
                   "bias_expand");
}

Var matmul(const Var& a, const Var& b) {
  VRG_CHECK(a && b && a->value.ndim() == 2 && b->value.ndim() == 2 &&
                a->value.dim(1) == b->value.dim(0),
            "matmul: ", shape_str(a->value.shape()), " x ", shape_str(b->value.shape()));
  Tensor a3 = a->value.reshaped({1, a->value.dim(0), a->value.dim(1)});
  Tensor b3 = b->value.reshaped({1, b->value.dim(0), b->value.dim(1)});
  Tensor y = kern::bmm(a3, b3, false, false);
  return make_node(y.reshaped({a->value.dim(0), b->value.dim(1)}), {a, b},
                   [a, b](const Var& g) -> std::vector<Var> {
                     return {matmul(g, transpose(b)), matmul(transpose(a), g)};
                   },
                   "matmul");
}

Var transpose(const Var& a) {
  VRG_CHECK(a && a->value.ndim() == 2, "transpose expects rank 2, got ",
            shape_str(a->value.shape()));
  const int64_t m = a->value.dim(0), n = a->value.dim(1);
  Tensor out({n, m});
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out.at(j * m + i) = a->value.at(i * n + j);
  return make_node(std::move(out), {a},
                   [](const Var& g) -> std::vector<Var> { return {transpose(g)}; }, "transpose");
}

Var bmm(const Var& a, const Var& b, bool ta, bool tb) {
  Tensor y = kern::bmm(a->value, b->value, ta, tb);
  return make_node(std::move(y), {a, b},
                   [a, b, ta, tb](const Var& g) -> std::vector<Var> {
                     Var ga = ta ? bmm(b, g, tb, true) : bmm(g, b, false, !tb);
                     Var gb = tb ? bmm(g, a, true, ta) : bmm(a, g, !ta, false);
                     return {ga, gb};
                   },
                   "bmm");
}

Var reshape(const Var& a, std::vector<int64_t> shape) {
  auto prev = a->value.shape();
  return make_node(a->value.reshaped(std::move(shape)), {a},
                   [prev](const Var& g) -> std::vector<Var> { return {reshape(g, prev)}; },
                   "reshape");
}

Var concat_ch(const Var& a, const Var& b) {
  const auto& as = a->value.shape();
  const auto& bs = b->value.shape();
  VRG_CHECK(as.size() == 4 && bs.size() == 4 && as[0] == bs[0] && as[2] == bs[2] && as[3] == bs[3],
            "concat_ch: ", shape_str(as), " + ", shape_str(bs));
  const int64_t N = as[0], Ca = as[1], Cb = bs[1], HW = as[2] * as[3];
  Tensor out({N, Ca + Cb, as[2], as[3]});
  for (int64_t n = 0; n < N; ++n) {
    std::memcpy(out.data() + n * (Ca + Cb) * HW, a->value.data() + n * Ca * HW,
                static_cast<size_t>(Ca * HW) * sizeof(double));
    std::memcpy(out.data() + (n * (Ca + Cb) + Ca) * HW, b->value.data() + n * Cb * HW,
                static_cast<size_t>(Cb * HW) * sizeof(double));
  }
  return make_node(std::move(out), {a, b},
                   [Ca, Cb](const Var& g) -> std::vector<Var> {
                     return {slice_ch(g, 0, Ca), slice_ch(g, Ca, Ca + Cb)};
                   },
                   "concat_ch");
}

Var slice_ch(const Var& a, int64_t c0, int64_t c1) {
  const auto& s = a->value.shape();
  VRG_CHECK(s.size() == 4 && 0 <= c0 && c0 < c1 && c1 <= s[1], "slice_ch [", c0, ",", c1,
            ") of ", shape_str(s));
  const int64_t N = s[0], C = s[1], HW = s[2] * s[3], Cs = c1 - c0;
  Tensor out({N, Cs, s[2], s[3]});
  for (int64_t n = 0; n < N; ++n)
    std::memcpy(out.data() + n * Cs * HW, a->value.data() + (n * C + c0) * HW,
                static_cast<size_t>(Cs * HW) * sizeof(double));
  const int64_t Ctot = C;
  return make_node(std::move(out), {a},
                   [c0, Ctot](const Var& g) -> std::vector<Var> {
                     return {embed_ch(g, c0, Ctot)};
                   },
                   "slice_ch");
}

Var embed_ch(const Var& a, int64_t c0, int64_t channels) {
  const auto& s = a->value.shape();
  VRG_CHECK(s.size() == 4 && c0 >= 0 && c0 + s[1] <= channels, "embed_ch at ", c0, " into ",
            channels, " channels from ", shape_str(s));
  const int64_t N = s[0], Cs = s[1], HW = s[2] * s[3];
  Tensor out({N, channels, s[2], s[3]});
  for (int64_t n = 0; n < N; ++n)
    std::memcpy(out.data() + (n * channels + c0) * HW, a->value.data() + n * Cs * HW,
                static_cast<size_t>(Cs * HW) * sizeof(double));
  const int64_t c1 = c0 + Cs;
  return make_node(std::move(out), {a},
                   [c0, c1](const Var& g) -> std::vector<Var> {
                     return {slice_ch(g, c0, c1)};
                   },
                   "embed_ch");
}

Var conv2d(const Var& x, const Var& w, int stride, int pad) {
  Tensor y = kern::conv2d(x->value, w->value, stride, pad);
  const int64_t H = x->value.dim(2), W = x->value.dim(3), K = w->value.dim(2);
  return make_node(std::move(y), {x, w},
                   [x, w, stride, pad, H, W, K](const Var& g) -> std::vector<Var> {
                     return {conv2d_input_grad(g, w, stride, pad, H, W),
                             conv2d_weight_grad(g, x, stride, pad, K)};
                   },
                   "conv2d");
}

Var conv2d_input_grad(const Var& g, const Var& w, int stride, int pad, int64_t h, int64_t w_) {
  Tensor y = kern::conv2d_input_grad(g->value, w->value, stride, pad, h, w_);
  const int64_t K = w->value.dim(2);
  return make_node(std::move(y), {g, w},
                   [g, w, stride, pad, K](const Var& gg) -> std::vector<Var> {
                     return {conv2d(gg, w, stride, pad),
                             conv2d_weight_grad(g, gg, stride, pad, K)};
                   },
                   "conv2d_input_grad");
}

Var conv2d_weight_grad(const Var& g, const Var& x, int stride, int pad, int64_t k) {
  Tensor y = kern::conv2d_weight_grad(g->value, x->value, stride, pad, k);
  const int64_t H = x->value.dim(2), W = x->value.dim(3);
  return make_node(std::move(y), {g, x},
                   [g, x, stride, pad, H, W](const Var& gg) -> std::vector<Var> {
                     return {conv2d(x, gg, stride, pad),
                             conv2d_input_grad(g, gg, stride, pad, H, W)};
                   },
                   "conv2d_weight_grad");
}

Var conv_transpose2d(const Var& x, const Var& w, int stride, int pad) {
  const auto& xs = x->value.shape();
  const auto& ws = w->value.shape();
  VRG_CHECK(xs.size() == 4 && ws.size() == 4 && xs[1] == ws[0],
            "conv_transpose2d: input ", shape_str(xs), " weight ", shape_str(ws));
  const int64_t Hout = (xs[2] - 1) * stride - 2 * pad + ws[2];
  const int64_t Wout = (xs[3] - 1) * stride - 2 * pad + ws[3];
  return conv2d_input_grad(x, w, stride, pad, Hout, Wout);
}

}  // namespace vrg::ag
