#include "vrg/kernels.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <vector>

#include "vrg/errors.hpp"

namespace vrg::kern {

namespace {

using RM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<RM>;
using CMapRM = Eigen::Map<const RM>;

// Receptive fields of x for one sample, row-major [Ho*Wo, Ci*K*K].
void im2col(const double* x, const Conv2dDims& d, double* col) {
  const int64_t KK = d.K * d.K;
  const int64_t row_len = d.Ci * KK;
  for (int64_t i = 0; i < d.Ho; ++i) {
    for (int64_t j = 0; j < d.Wo; ++j) {
      double* row = col + (i * d.Wo + j) * row_len;
      const int64_t ih0 = i * d.stride - d.pad;
      const int64_t iw0 = j * d.stride - d.pad;
      for (int64_t ci = 0; ci < d.Ci; ++ci) {
        const double* xc = x + ci * d.H * d.W;
        for (int64_t u = 0; u < d.K; ++u) {
          const int64_t ih = ih0 + u;
          double* dst = row + ci * KK + u * d.K;
          if (ih < 0 || ih >= d.H) {
            std::fill_n(dst, d.K, 0.0);
            continue;
          }
          for (int64_t v = 0; v < d.K; ++v) {
            const int64_t iw = iw0 + v;
            dst[v] = (iw >= 0 && iw < d.W) ? xc[ih * d.W + iw] : 0.0;
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add col rows back into an image.
void col2im(const double* col, const Conv2dDims& d, double* x) {
  const int64_t KK = d.K * d.K;
  const int64_t row_len = d.Ci * KK;
  for (int64_t i = 0; i < d.Ho; ++i) {
    for (int64_t j = 0; j < d.Wo; ++j) {
      const double* row = col + (i * d.Wo + j) * row_len;
      const int64_t ih0 = i * d.stride - d.pad;
      const int64_t iw0 = j * d.stride - d.pad;
      for (int64_t ci = 0; ci < d.Ci; ++ci) {
        double* xc = x + ci * d.H * d.W;
        for (int64_t u = 0; u < d.K; ++u) {
          const int64_t ih = ih0 + u;
          if (ih < 0 || ih >= d.H) continue;
          const double* src = row + ci * KK + u * d.K;
          for (int64_t v = 0; v < d.K; ++v) {
            const int64_t iw = iw0 + v;
            if (iw >= 0 && iw < d.W) xc[ih * d.W + iw] += src[v];
          }
        }
      }
    }
  }
}

std::vector<double>& scratch() {
  thread_local std::vector<double> buf;
  return buf;
}

}  // namespace

Conv2dDims conv_dims(const std::vector<int64_t>& xs, const std::vector<int64_t>& ws, int stride,
                     int pad) {
  VRG_CHECK(xs.size() == 4, "conv input must be NCHW, got ", shape_str(xs));
  VRG_CHECK(ws.size() == 4 && ws[2] == ws[3], "conv weight must be [Co,Ci,K,K], got ",
            shape_str(ws));
  VRG_CHECK(xs[1] == ws[1], "conv channel mismatch: input ", shape_str(xs), " weight ",
            shape_str(ws));
  VRG_CHECK(stride >= 1 && pad >= 0, "bad conv stride/pad ", stride, "/", pad);
  Conv2dDims d;
  d.N = xs[0];
  d.Ci = xs[1];
  d.H = xs[2];
  d.W = xs[3];
  d.Co = ws[0];
  d.K = ws[2];
  d.stride = stride;
  d.pad = pad;
  const int64_t eh = d.H + 2 * pad - d.K;
  const int64_t ew = d.W + 2 * pad - d.K;
  VRG_CHECK(eh >= 0 && ew >= 0, "kernel ", d.K, " larger than padded input ", shape_str(xs));
  VRG_CHECK(eh % stride == 0 && ew % stride == 0, "conv does not tile exactly: input ",
            shape_str(xs), " K=", d.K, " stride=", stride, " pad=", pad);
  d.Ho = eh / stride + 1;
  d.Wo = ew / stride + 1;
  return d;
}

Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int pad) {
  const Conv2dDims d = conv_dims(x.shape(), w.shape(), stride, pad);
  Tensor y({d.N, d.Co, d.Ho, d.Wo});
  const int64_t row_len = d.Ci * d.K * d.K;
  const int64_t positions = d.Ho * d.Wo;
  auto& col = scratch();
  col.resize(static_cast<size_t>(positions * row_len));
  CMapRM W(w.data(), d.Co, row_len);
  for (int64_t n = 0; n < d.N; ++n) {
    im2col(x.data() + n * d.Ci * d.H * d.W, d, col.data());
    CMapRM C(col.data(), positions, row_len);
    MapRM Y(y.data() + n * d.Co * positions, d.Co, positions);
    Y.noalias() = W * C.transpose();
  }
  return y;
}

Tensor conv2d_input_grad(const Tensor& gy, const Tensor& w, int stride, int pad, int64_t H,
                         int64_t W) {
  const auto& gs = gy.shape();
  VRG_CHECK(gs.size() == 4, "conv2d_input_grad expects NCHW grad, got ", shape_str(gs));
  Conv2dDims d = conv_dims({gs[0], w.shape()[1], H, W}, w.shape(), stride, pad);
  VRG_CHECK(d.Co == gs[1] && d.Ho == gs[2] && d.Wo == gs[3],
            "conv2d_input_grad: grad shape ", shape_str(gs), " inconsistent with target ",
            H, "x", W, " (expects ", d.Co, "x", d.Ho, "x", d.Wo, ")");
  Tensor gx({d.N, d.Ci, d.H, d.W});
  const int64_t row_len = d.Ci * d.K * d.K;
  const int64_t positions = d.Ho * d.Wo;
  auto& col = scratch();
  col.resize(static_cast<size_t>(positions * row_len));
  CMapRM Wm(w.data(), d.Co, row_len);
  for (int64_t n = 0; n < d.N; ++n) {
    CMapRM G(gy.data() + n * d.Co * positions, d.Co, positions);
    MapRM C(col.data(), positions, row_len);
    C.noalias() = G.transpose() * Wm;
    col2im(col.data(), d, gx.data() + n * d.Ci * d.H * d.W);
  }
  return gx;
}

Tensor conv2d_weight_grad(const Tensor& gy, const Tensor& x, int stride, int pad, int64_t K) {
  const auto& gs = gy.shape();
  const auto& xs = x.shape();
  VRG_CHECK(gs.size() == 4 && xs.size() == 4 && gs[0] == xs[0],
            "conv2d_weight_grad: bad shapes ", shape_str(gs), " / ", shape_str(xs));
  Conv2dDims d = conv_dims(xs, {gs[1], xs[1], K, K}, stride, pad);
  VRG_CHECK(d.Ho == gs[2] && d.Wo == gs[3], "conv2d_weight_grad: grad spatial ", shape_str(gs),
            " inconsistent with input ", shape_str(xs), " at K=", K);
  Tensor gw({d.Co, d.Ci, K, K});
  const int64_t row_len = d.Ci * K * K;
  const int64_t positions = d.Ho * d.Wo;
  auto& col = scratch();
  col.resize(static_cast<size_t>(positions * row_len));
  MapRM GW(gw.data(), d.Co, row_len);
  // Serial accumulation over the batch keeps the reduction order fixed.
  for (int64_t n = 0; n < d.N; ++n) {
    im2col(x.data() + n * d.Ci * d.H * d.W, d, col.data());
    CMapRM C(col.data(), positions, row_len);
    CMapRM G(gy.data() + n * d.Co * positions, d.Co, positions);
    GW.noalias() += G * C;
  }
  return gw;
}

Tensor bmm(const Tensor& a, const Tensor& b, bool ta, bool tb) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  VRG_CHECK(as.size() == 3 && bs.size() == 3 && as[0] == bs[0], "bmm expects [B,.,.] x [B,.,.], got ",
            shape_str(as), " / ", shape_str(bs));
  const int64_t B = as[0];
  const int64_t m = ta ? as[2] : as[1];
  const int64_t ka = ta ? as[1] : as[2];
  const int64_t kb = tb ? bs[2] : bs[1];
  const int64_t n = tb ? bs[1] : bs[2];
  VRG_CHECK(ka == kb, "bmm inner dims differ: ", shape_str(as), (ta ? "^T" : ""), " x ",
            shape_str(bs), (tb ? "^T" : ""));
  Tensor y({B, m, n});
  for (int64_t i = 0; i < B; ++i) {
    CMapRM A(a.data() + i * as[1] * as[2], as[1], as[2]);
    CMapRM Bm(b.data() + i * bs[1] * bs[2], bs[1], bs[2]);
    MapRM Y(y.data() + i * m * n, m, n);
    if (!ta && !tb)
      Y.noalias() = A * Bm;
    else if (ta && !tb)
      Y.noalias() = A.transpose() * Bm;
    else if (!ta && tb)
      Y.noalias() = A * Bm.transpose();
    else
      Y.noalias() = A.transpose() * Bm.transpose();
  }
  return y;
}

Tensor rowmax_last(const Tensor& a) {
  const auto& s = a.shape();
  VRG_CHECK(!s.empty(), "rowmax_last on scalarless tensor");
  const int64_t L = s.back();
  const int64_t rows = a.size() / L;
  auto shape = s;
  shape.back() = 1;
  Tensor out(shape);
  for (int64_t r = 0; r < rows; ++r) {
    const double* p = a.data() + r * L;
    double m = p[0];
    for (int64_t i = 1; i < L; ++i) m = std::max(m, p[i]);
    out.at(r) = m;
  }
  return out;
}

}  // namespace vrg::kern
