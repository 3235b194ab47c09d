#include "simviz/nn_ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace simviz::ad {

namespace {

int64_t prod(const std::vector<int64_t>& v, size_t from) {
  int64_t p = 1;
  for (size_t i = from; i < v.size(); ++i) p *= v[i];
  return p;
}

// ---------------------------------------------------------------------------
// Raw convolution kernels, stride 1, 'same' zero padding, odd kernel.
// All loops are owner-computes: every output element is written by exactly
// one iteration, so OpenMP scheduling cannot change results.
// ---------------------------------------------------------------------------

struct ConvShape {
  int64_t N, IC, OC, k, p;
  std::vector<int64_t> S;   // spatial extents (2 or 3 of them)
  std::vector<int64_t> SP;  // padded extents
  int64_t spatial, padded_spatial;
};

ConvShape conv_shape(const std::vector<int64_t>& xs, const std::vector<int64_t>& ws) {
  const size_t d = xs.size() - 2;
  if (d != 2 && d != 3) throw std::invalid_argument("conv: spatial rank must be 2 or 3");
  if (ws.size() != d + 2) throw std::invalid_argument("conv: kernel rank mismatch");
  if (ws[1] != xs[1]) throw std::invalid_argument("conv: input channel mismatch");
  ConvShape c;
  c.N = xs[0];
  c.IC = xs[1];
  c.OC = ws[0];
  c.k = ws[2];
  for (size_t i = 2; i < ws.size(); ++i)
    if (ws[i] != c.k) throw std::invalid_argument("conv: kernel must be cubic");
  if (c.k % 2 == 0) throw std::invalid_argument("conv: kernel extent must be odd");
  c.p = c.k / 2;
  c.S.assign(xs.begin() + 2, xs.end());
  for (int64_t s : c.S) c.SP.push_back(s + 2 * c.p);
  c.spatial = prod(c.S, 0);
  c.padded_spatial = prod(c.SP, 0);
  return c;
}

// Zero-pads (C, spatial) -> (C, padded spatial) for one sample.
void pad_sample(const double* src, double* dst, int64_t C, const ConvShape& c) {
  std::memset(dst, 0, sizeof(double) * static_cast<size_t>(C * c.padded_spatial));
  if (c.S.size() == 2) {
    const int64_t H = c.S[0], W = c.S[1], HP = c.SP[0], WP = c.SP[1];
    for (int64_t ch = 0; ch < C; ++ch)
      for (int64_t y = 0; y < H; ++y)
        std::memcpy(dst + (ch * HP + y + c.p) * WP + c.p, src + (ch * H + y) * W,
                    sizeof(double) * static_cast<size_t>(W));
  } else {
    const int64_t D = c.S[0], H = c.S[1], W = c.S[2];
    const int64_t DP = c.SP[0], HP = c.SP[1], WP = c.SP[2];
    (void)DP;
    for (int64_t ch = 0; ch < C; ++ch)
      for (int64_t z = 0; z < D; ++z)
        for (int64_t y = 0; y < H; ++y)
          std::memcpy(dst + ((ch * c.SP[0] + z + c.p) * HP + y + c.p) * WP + c.p,
                      src + ((ch * D + z) * H + y) * W, sizeof(double) * static_cast<size_t>(W));
  }
}

// out(oc, :) += sum_ic W(oc, ic, taps) * padded in; `in_pad` is one sample.
void conv_fwd_oc(const double* in_pad, const double* W, double* out_oc, int64_t oc, const ConvShape& c) {
  const int64_t k = c.k;
  if (c.S.size() == 2) {
    const int64_t H = c.S[0], Wd = c.S[1], HP = c.SP[0], WP = c.SP[1];
    for (int64_t ic = 0; ic < c.IC; ++ic) {
      const double* wbase = W + ((oc * c.IC + ic) * k) * k;
      const double* pbase = in_pad + ic * HP * WP;
      for (int64_t a = 0; a < k; ++a)
        for (int64_t b = 0; b < k; ++b) {
          const double w = wbase[a * k + b];
          if (w == 0.0) continue;
          for (int64_t y = 0; y < H; ++y) {
            const double* src = pbase + (y + a) * WP + b;
            double* dst = out_oc + y * Wd;
            for (int64_t x = 0; x < Wd; ++x) dst[x] += w * src[x];
          }
        }
    }
  } else {
    const int64_t D = c.S[0], H = c.S[1], Wd = c.S[2];
    const int64_t HP = c.SP[1], WP = c.SP[2];
    for (int64_t ic = 0; ic < c.IC; ++ic) {
      const double* wbase = W + (((oc * c.IC + ic) * k) * k) * k;
      const double* pbase = in_pad + ic * c.SP[0] * HP * WP;
      for (int64_t a = 0; a < k; ++a)
        for (int64_t b = 0; b < k; ++b)
          for (int64_t e = 0; e < k; ++e) {
            const double w = wbase[(a * k + b) * k + e];
            if (w == 0.0) continue;
            for (int64_t z = 0; z < D; ++z)
              for (int64_t y = 0; y < H; ++y) {
                const double* src = pbase + ((z + a) * HP + y + b) * WP + e;
                double* dst = out_oc + (z * H + y) * Wd;
                for (int64_t x = 0; x < Wd; ++x) dst[x] += w * src[x];
              }
          }
    }
  }
}

// din(ic, :) += correlation of padded dout with the 180-degree-rotated
// kernel; `dout_pad` is one sample padded by p.
void conv_ingrad_ic(const double* dout_pad, const double* W, double* din_ic, int64_t ic,
                    const ConvShape& c) {
  const int64_t k = c.k;
  if (c.S.size() == 2) {
    const int64_t H = c.S[0], Wd = c.S[1], HP = c.SP[0], WP = c.SP[1];
    for (int64_t oc = 0; oc < c.OC; ++oc) {
      const double* wbase = W + ((oc * c.IC + ic) * k) * k;
      const double* gbase = dout_pad + oc * HP * WP;
      for (int64_t a = 0; a < k; ++a)
        for (int64_t b = 0; b < k; ++b) {
          const double w = wbase[(k - 1 - a) * k + (k - 1 - b)];
          if (w == 0.0) continue;
          for (int64_t y = 0; y < H; ++y) {
            const double* src = gbase + (y + a) * WP + b;
            double* dst = din_ic + y * Wd;
            for (int64_t x = 0; x < Wd; ++x) dst[x] += w * src[x];
          }
        }
    }
  } else {
    const int64_t D = c.S[0], H = c.S[1], Wd = c.S[2];
    const int64_t HP = c.SP[1], WP = c.SP[2];
    for (int64_t oc = 0; oc < c.OC; ++oc) {
      const double* wbase = W + (((oc * c.IC + ic) * k) * k) * k;
      const double* gbase = dout_pad + oc * c.SP[0] * HP * WP;
      for (int64_t a = 0; a < k; ++a)
        for (int64_t b = 0; b < k; ++b)
          for (int64_t e = 0; e < k; ++e) {
            const double w = wbase[((k - 1 - a) * k + (k - 1 - b)) * k + (k - 1 - e)];
            if (w == 0.0) continue;
            for (int64_t z = 0; z < D; ++z)
              for (int64_t y = 0; y < H; ++y) {
                const double* src = gbase + ((z + a) * HP + y + b) * WP + e;
                double* dst = din_ic + (z * H + y) * Wd;
                for (int64_t x = 0; x < Wd; ++x) dst[x] += w * src[x];
              }
          }
    }
  }
}

// dW(oc, ic, taps) += <dout(oc), padded in(ic) shifted by tap>, one sample.
void conv_wgrad_pair(const double* in_pad, const double* dout, double* dW, int64_t oc, int64_t ic,
                     const ConvShape& c) {
  const int64_t k = c.k;
  if (c.S.size() == 2) {
    const int64_t H = c.S[0], Wd = c.S[1], HP = c.SP[0], WP = c.SP[1];
    const double* gbase = dout + oc * H * Wd;
    const double* pbase = in_pad + ic * HP * WP;
    double* wbase = dW + ((oc * c.IC + ic) * k) * k;
    for (int64_t a = 0; a < k; ++a)
      for (int64_t b = 0; b < k; ++b) {
        double s = 0.0;
        for (int64_t y = 0; y < H; ++y) {
          const double* g = gbase + y * Wd;
          const double* src = pbase + (y + a) * WP + b;
          for (int64_t x = 0; x < Wd; ++x) s += g[x] * src[x];
        }
        wbase[a * k + b] += s;
      }
  } else {
    const int64_t D = c.S[0], H = c.S[1], Wd = c.S[2];
    const int64_t HP = c.SP[1], WP = c.SP[2];
    const double* gbase = dout + oc * D * H * Wd;
    const double* pbase = in_pad + ic * c.SP[0] * HP * WP;
    double* wbase = dW + (((oc * c.IC + ic) * k) * k) * k;
    for (int64_t a = 0; a < k; ++a)
      for (int64_t b = 0; b < k; ++b)
        for (int64_t e = 0; e < k; ++e) {
          double s = 0.0;
          for (int64_t z = 0; z < D; ++z)
            for (int64_t y = 0; y < H; ++y) {
              const double* g = gbase + (z * H + y) * Wd;
              const double* src = pbase + ((z + a) * HP + y + b) * WP + e;
              for (int64_t x = 0; x < Wd; ++x) s += g[x] * src[x];
            }
          wbase[(a * k + b) * k + e] += s;
        }
  }
}

std::vector<double> pad_batch(const Tensor& t, int64_t C, const ConvShape& c) {
  std::vector<double> buf(static_cast<size_t>(t.dim(0) * C * c.padded_spatial));
  for (int64_t n = 0; n < t.dim(0); ++n)
    pad_sample(t.data() + n * C * c.spatial, buf.data() + n * C * c.padded_spatial, C, c);
  return buf;
}

}  // namespace

Var dense(const Var& x, const Var& W, const Var& b) {
  const auto& xs = x->value.shape();
  const auto& ws = W->value.shape();
  if (xs.size() != 2 || ws.size() != 2 || ws[1] != xs[1])
    throw std::invalid_argument("dense: shapes " + x->value.shape_str() + " x " + W->value.shape_str());
  const int64_t N = xs[0], in = xs[1], out = ws[0];
  if (b && b->value.numel() != out) throw std::invalid_argument("dense: bias size mismatch");

  Tensor y({N, out});
  for (int64_t n = 0; n < N; ++n) {
    const double* xr = x->value.data() + n * in;
    double* yr = y.data() + n * out;
    for (int64_t o = 0; o < out; ++o) {
      const double* wr = W->value.data() + o * in;
      double s = b ? b->value[o] : 0.0;
      for (int64_t i = 0; i < in; ++i) s += wr[i] * xr[i];
      yr[o] = s;
    }
  }
  std::vector<Var> parents = b ? std::vector<Var>{x, W, b} : std::vector<Var>{x, W};
  return make_node(std::move(y), std::move(parents), [x, W, b, N, in, out](Node& node) {
    const Tensor& g = node.grad;
    if (x->requires_grad) {
      Tensor& gx = x->ensure_grad();
      for (int64_t n = 0; n < N; ++n)
        for (int64_t o = 0; o < out; ++o) {
          const double go = g[n * out + o];
          const double* wr = W->value.data() + o * in;
          double* gxr = gx.data() + n * in;
          for (int64_t i = 0; i < in; ++i) gxr[i] += go * wr[i];
        }
    }
    if (W->requires_grad) {
      Tensor& gw = W->ensure_grad();
      for (int64_t n = 0; n < N; ++n)
        for (int64_t o = 0; o < out; ++o) {
          const double go = g[n * out + o];
          const double* xr = x->value.data() + n * in;
          double* gwr = gw.data() + o * in;
          for (int64_t i = 0; i < in; ++i) gwr[i] += go * xr[i];
        }
    }
    if (b && b->requires_grad) {
      Tensor& gb = b->ensure_grad();
      for (int64_t n = 0; n < N; ++n)
        for (int64_t o = 0; o < out; ++o) gb[o] += g[n * out + o];
    }
  });
}

Var conv_nd(const Var& x, const Var& W, const Var& b) {
  const ConvShape c = conv_shape(x->value.shape(), W->value.shape());
  if (b && b->value.numel() != c.OC) throw std::invalid_argument("conv: bias size mismatch");

  std::vector<int64_t> os = x->value.shape();
  os[1] = c.OC;
  Tensor out(os);
  {
    std::vector<double> in_pad = pad_batch(x->value, c.IC, c);
#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static) if (c.N * c.OC > 1 && c.spatial >= 1024)
#endif
    for (int64_t n = 0; n < c.N; ++n)
      for (int64_t oc = 0; oc < c.OC; ++oc) {
        double* dst = out.data() + (n * c.OC + oc) * c.spatial;
        if (b) {
          const double bv = b->value[oc];
          for (int64_t i = 0; i < c.spatial; ++i) dst[i] = bv;
        }
        conv_fwd_oc(in_pad.data() + n * c.IC * c.padded_spatial, W->value.data(), dst, oc, c);
      }
  }

  std::vector<Var> parents = b ? std::vector<Var>{x, W, b} : std::vector<Var>{x, W};
  return make_node(std::move(out), std::move(parents), [x, W, b, c](Node& node) {
    const Tensor& g = node.grad;
    if (x->requires_grad) {
      std::vector<double> g_pad(static_cast<size_t>(c.N * c.OC * c.padded_spatial));
      for (int64_t n = 0; n < c.N; ++n)
        pad_sample(g.data() + n * c.OC * c.spatial, g_pad.data() + n * c.OC * c.padded_spatial, c.OC, c);
      Tensor& gx = x->ensure_grad();
#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static) if (c.N * c.IC > 1 && c.spatial >= 1024)
#endif
      for (int64_t n = 0; n < c.N; ++n)
        for (int64_t ic = 0; ic < c.IC; ++ic)
          conv_ingrad_ic(g_pad.data() + n * c.OC * c.padded_spatial, W->value.data(),
                         gx.data() + (n * c.IC + ic) * c.spatial, ic, c);
    }
    if (W->requires_grad) {
      std::vector<double> in_pad = pad_batch(x->value, c.IC, c);
      Tensor& gw = W->ensure_grad();
#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static) if (c.OC * c.IC > 1 && c.spatial >= 1024)
#endif
      for (int64_t oc = 0; oc < c.OC; ++oc)
        for (int64_t ic = 0; ic < c.IC; ++ic)
          for (int64_t n = 0; n < c.N; ++n)
            conv_wgrad_pair(in_pad.data() + n * c.IC * c.padded_spatial,
                            g.data() + n * c.OC * c.spatial, gw.data(), oc, ic, c);
    }
    if (b && b->requires_grad) {
      Tensor& gb = b->ensure_grad();
      for (int64_t n = 0; n < c.N; ++n)
        for (int64_t oc = 0; oc < c.OC; ++oc) {
          const double* src = g.data() + (n * c.OC + oc) * c.spatial;
          double s = 0.0;
          for (int64_t i = 0; i < c.spatial; ++i) s += src[i];
          gb[oc] += s;
        }
    }
  });
}

Var condconv_nd(const Var& x, const Var& experts, const Var& alpha) {
  const auto& es = experts->value.shape();
  if (es.size() < 4) throw std::invalid_argument("condconv: experts must be (K, OC, IC, taps...)");
  const int64_t K = es[0];
  std::vector<int64_t> ws(es.begin() + 1, es.end());
  const ConvShape c = conv_shape(x->value.shape(), ws);
  const auto& as = alpha->value.shape();
  if (as.size() != 2 || as[0] != c.N || as[1] != K)
    throw std::invalid_argument("condconv: alpha must be (N, K)");
  const int64_t ksz = prod(ws, 0);  // elements of one mixed kernel

  // Captures by value: the closure outlives this scope inside the backward fn.
  auto mix_kernel = [alpha, experts, K, ksz](int64_t n, double* wmix) {
    std::memset(wmix, 0, sizeof(double) * static_cast<size_t>(ksz));
    for (int64_t k = 0; k < K; ++k) {
      const double a = alpha->value[n * K + k];
      const double* e = experts->value.data() + k * ksz;
      for (int64_t i = 0; i < ksz; ++i) wmix[i] += a * e[i];
    }
  };

  std::vector<int64_t> os = x->value.shape();
  os[1] = c.OC;
  Tensor out(os);
  {
    std::vector<double> in_pad = pad_batch(x->value, c.IC, c);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (c.N > 1 && c.spatial >= 1024)
#endif
    for (int64_t n = 0; n < c.N; ++n) {
      std::vector<double> wmix(static_cast<size_t>(ksz));
      mix_kernel(n, wmix.data());
      for (int64_t oc = 0; oc < c.OC; ++oc)
        conv_fwd_oc(in_pad.data() + n * c.IC * c.padded_spatial, wmix.data(),
                    out.data() + (n * c.OC + oc) * c.spatial, oc, c);
    }
  }

  return make_node(std::move(out), {x, experts, alpha}, [x, experts, alpha, c, K, ksz, mix_kernel](Node& node) {
    const Tensor& g = node.grad;
    const bool need_w = experts->requires_grad || alpha->requires_grad;

    // Per-sample mixed-kernel gradients, then reduced over experts.
    std::vector<double> dwmix;
    if (need_w) {
      dwmix.assign(static_cast<size_t>(c.N * ksz), 0.0);
      std::vector<double> in_pad = pad_batch(x->value, c.IC, c);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (c.N > 1 && c.spatial >= 1024)
#endif
      for (int64_t n = 0; n < c.N; ++n)
        for (int64_t oc = 0; oc < c.OC; ++oc)
          for (int64_t ic = 0; ic < c.IC; ++ic)
            conv_wgrad_pair(in_pad.data() + n * c.IC * c.padded_spatial,
                            g.data() + n * c.OC * c.spatial, dwmix.data() + n * ksz, oc, ic, c);
      if (experts->requires_grad) {
        Tensor& ge = experts->ensure_grad();
        for (int64_t n = 0; n < c.N; ++n)
          for (int64_t k = 0; k < K; ++k) {
            const double a = alpha->value[n * K + k];
            double* dst = ge.data() + k * ksz;
            const double* src = dwmix.data() + n * ksz;
            for (int64_t i = 0; i < ksz; ++i) dst[i] += a * src[i];
          }
      }
      if (alpha->requires_grad) {
        Tensor& ga = alpha->ensure_grad();
        for (int64_t n = 0; n < c.N; ++n)
          for (int64_t k = 0; k < K; ++k) {
            const double* e = experts->value.data() + k * ksz;
            const double* src = dwmix.data() + n * ksz;
            double s = 0.0;
            for (int64_t i = 0; i < ksz; ++i) s += e[i] * src[i];
            ga[n * K + k] += s;
          }
      }
    }
    if (x->requires_grad) {
      std::vector<double> g_pad(static_cast<size_t>(c.N * c.OC * c.padded_spatial));
      for (int64_t n = 0; n < c.N; ++n)
        pad_sample(g.data() + n * c.OC * c.spatial, g_pad.data() + n * c.OC * c.padded_spatial, c.OC, c);
      Tensor& gx = x->ensure_grad();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (c.N > 1 && c.spatial >= 1024)
#endif
      for (int64_t n = 0; n < c.N; ++n) {
        std::vector<double> wmix(static_cast<size_t>(ksz));
        mix_kernel(n, wmix.data());
        for (int64_t ic = 0; ic < c.IC; ++ic)
          conv_ingrad_ic(g_pad.data() + n * c.OC * c.padded_spatial, wmix.data(),
                         gx.data() + (n * c.IC + ic) * c.spatial, ic, c);
      }
    }
  });
}

Var maxpool2(const Var& x) {
  const auto& xs = x->value.shape();
  const size_t d = xs.size() - 2;
  if (d != 2 && d != 3) throw std::invalid_argument("maxpool2: spatial rank must be 2 or 3");
  for (size_t i = 2; i < xs.size(); ++i)
    if (xs[i] % 2 != 0) throw std::invalid_argument("maxpool2: odd spatial extent " + shape_to_string(xs));

  std::vector<int64_t> os = xs;
  for (size_t i = 2; i < os.size(); ++i) os[i] /= 2;
  const int64_t NC = xs[0] * xs[1];
  const int64_t in_spatial = prod(xs, 2), out_spatial = prod(os, 2);

  Tensor out(os);
  auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(NC * out_spatial));

  if (d == 2) {
    const int64_t W = xs[3], HO = os[2], WO = os[3];
    for (int64_t nc = 0; nc < NC; ++nc) {
      const double* src = x->value.data() + nc * in_spatial;
      double* dst = out.data() + nc * out_spatial;
      int64_t* am = argmax->data() + nc * out_spatial;
      for (int64_t y = 0; y < HO; ++y)
        for (int64_t xx = 0; xx < WO; ++xx) {
          int64_t best = (2 * y) * W + 2 * xx;
          for (int64_t a = 0; a < 2; ++a)
            for (int64_t b = 0; b < 2; ++b) {
              const int64_t idx = (2 * y + a) * W + 2 * xx + b;
              if (src[idx] > src[best]) best = idx;
            }
          dst[y * WO + xx] = src[best];
          am[y * WO + xx] = best;
        }
    }
  } else {
    const int64_t D = xs[2], H = xs[3], W = xs[4], DO = os[2], HO = os[3], WO = os[4];
    (void)D;
    for (int64_t nc = 0; nc < NC; ++nc) {
      const double* src = x->value.data() + nc * in_spatial;
      double* dst = out.data() + nc * out_spatial;
      int64_t* am = argmax->data() + nc * out_spatial;
      for (int64_t z = 0; z < DO; ++z)
        for (int64_t y = 0; y < HO; ++y)
          for (int64_t xx = 0; xx < WO; ++xx) {
            int64_t best = ((2 * z) * H + 2 * y) * W + 2 * xx;
            for (int64_t a = 0; a < 2; ++a)
              for (int64_t b = 0; b < 2; ++b)
                for (int64_t e = 0; e < 2; ++e) {
                  const int64_t idx = ((2 * z + a) * H + 2 * y + b) * W + 2 * xx + e;
                  if (src[idx] > src[best]) best = idx;
                }
            const int64_t o = (z * HO + y) * WO + xx;
            dst[o] = src[best];
            am[o] = best;
          }
    }
  }

  return make_node(std::move(out), {x}, [x, argmax, NC, in_spatial, out_spatial](Node& node) {
    Tensor& gx = x->ensure_grad();
    for (int64_t nc = 0; nc < NC; ++nc) {
      const double* g = node.grad.data() + nc * out_spatial;
      const int64_t* am = argmax->data() + nc * out_spatial;
      double* dst = gx.data() + nc * in_spatial;
      for (int64_t i = 0; i < out_spatial; ++i) dst[am[i]] += g[i];
    }
  });
}

Var upsample2(const Var& x) {
  const auto& xs = x->value.shape();
  const size_t d = xs.size() - 2;
  if (d != 2 && d != 3) throw std::invalid_argument("upsample2: spatial rank must be 2 or 3");
  std::vector<int64_t> os = xs;
  for (size_t i = 2; i < os.size(); ++i) os[i] *= 2;
  const int64_t NC = xs[0] * xs[1];
  const int64_t in_spatial = prod(xs, 2), out_spatial = prod(os, 2);

  Tensor out(os);
  if (d == 2) {
    const int64_t H = xs[2], W = xs[3];
    for (int64_t nc = 0; nc < NC; ++nc) {
      const double* src = x->value.data() + nc * in_spatial;
      double* dst = out.data() + nc * out_spatial;
      for (int64_t y = 0; y < 2 * H; ++y)
        for (int64_t xx = 0; xx < 2 * W; ++xx) dst[y * 2 * W + xx] = src[(y / 2) * W + xx / 2];
    }
  } else {
    const int64_t D = xs[2], H = xs[3], W = xs[4];
    for (int64_t nc = 0; nc < NC; ++nc) {
      const double* src = x->value.data() + nc * in_spatial;
      double* dst = out.data() + nc * out_spatial;
      for (int64_t z = 0; z < 2 * D; ++z)
        for (int64_t y = 0; y < 2 * H; ++y)
          for (int64_t xx = 0; xx < 2 * W; ++xx)
            dst[(z * 2 * H + y) * 2 * W + xx] = src[((z / 2) * H + y / 2) * W + xx / 2];
    }
  }

  return make_node(std::move(out), {x}, [x, xs, NC, in_spatial, out_spatial, d](Node& node) {
    Tensor& gx = x->ensure_grad();
    if (d == 2) {
      const int64_t H = xs[2], W = xs[3];
      for (int64_t nc = 0; nc < NC; ++nc) {
        const double* g = node.grad.data() + nc * out_spatial;
        double* dst = gx.data() + nc * in_spatial;
        for (int64_t y = 0; y < H; ++y)
          for (int64_t xx = 0; xx < W; ++xx) {
            double s = 0.0;
            for (int64_t a = 0; a < 2; ++a)
              for (int64_t b = 0; b < 2; ++b) s += g[(2 * y + a) * 2 * W + 2 * xx + b];
            dst[y * W + xx] += s;
          }
      }
    } else {
      const int64_t D = xs[2], H = xs[3], W = xs[4];
      (void)D;
      for (int64_t nc = 0; nc < NC; ++nc) {
        const double* g = node.grad.data() + nc * out_spatial;
        double* dst = gx.data() + nc * in_spatial;
        for (int64_t z = 0; z < xs[2]; ++z)
          for (int64_t y = 0; y < H; ++y)
            for (int64_t xx = 0; xx < W; ++xx) {
              double s = 0.0;
              for (int64_t a = 0; a < 2; ++a)
                for (int64_t b = 0; b < 2; ++b)
                  for (int64_t e = 0; e < 2; ++e)
                    s += g[((2 * z + a) * 2 * H + 2 * y + b) * 2 * W + 2 * xx + e];
              dst[(z * H + y) * W + xx] += s;
            }
      }
    }
  });
}

Var global_avg_pool(const Var& x) {
  const auto& xs = x->value.shape();
  if (xs.size() < 3) throw std::invalid_argument("global_avg_pool: need (N, C, spatial)");
  const int64_t N = xs[0], C = xs[1], M = prod(xs, 2);
  Tensor out({N, C});
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const double* src = x->value.data() + nc * M;
    double s = 0.0;
    for (int64_t i = 0; i < M; ++i) s += src[i];
    out[nc] = s / static_cast<double>(M);
  }
  return make_node(std::move(out), {x}, [x, N, C, M](Node& node) {
    Tensor& gx = x->ensure_grad();
    for (int64_t nc = 0; nc < N * C; ++nc) {
      const double g = node.grad[nc] / static_cast<double>(M);
      double* dst = gx.data() + nc * M;
      for (int64_t i = 0; i < M; ++i) dst[i] += g;
    }
  });
}

Var append_feature(const Var& x, double t) {
  const auto& xs = x->value.shape();
  if (xs.size() != 2) throw std::invalid_argument("append_feature: need (N, C)");
  const int64_t N = xs[0], C = xs[1];
  Tensor out({N, C + 1});
  for (int64_t n = 0; n < N; ++n) {
    std::copy_n(x->value.data() + n * C, C, out.data() + n * (C + 1));
    out[n * (C + 1) + C] = t;
  }
  return make_node(std::move(out), {x}, [x, N, C](Node& node) {
    Tensor& gx = x->ensure_grad();
    for (int64_t n = 0; n < N; ++n)
      for (int64_t i = 0; i < C; ++i) gx[n * C + i] += node.grad[n * (C + 1) + i];
  });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state, bool training) {
  const auto& xs = x->value.shape();
  if (xs.size() < 3) throw std::invalid_argument("batch_norm: need (N, C, spatial)");
  const int64_t N = xs[0], C = xs[1], S = prod(xs, 2);
  const int64_t M = N * S;
  if (gamma->value.numel() != C || beta->value.numel() != C)
    throw std::invalid_argument("batch_norm: gamma/beta must have C entries");
  if (state.running_mean.empty()) {
    state.running_mean = Tensor({C});
    state.running_var = Tensor({C}, 1.0);
  }

  auto mu = std::make_shared<Tensor>(Tensor({C}));
  auto invstd = std::make_shared<Tensor>(Tensor({C}));
  if (training) {
    for (int64_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (int64_t n = 0; n < N; ++n) {
        const double* src = x->value.data() + (n * C + c) * S;
        for (int64_t i = 0; i < S; ++i) s += src[i];
      }
      const double m = s / static_cast<double>(M);
      double v = 0.0;
      for (int64_t n = 0; n < N; ++n) {
        const double* src = x->value.data() + (n * C + c) * S;
        for (int64_t i = 0; i < S; ++i) {
          const double d = src[i] - m;
          v += d * d;
        }
      }
      v /= static_cast<double>(M);
      (*mu)[c] = m;
      (*invstd)[c] = 1.0 / std::sqrt(v + state.eps);
      state.running_mean[c] = (1.0 - state.momentum) * state.running_mean[c] + state.momentum * m;
      state.running_var[c] = (1.0 - state.momentum) * state.running_var[c] + state.momentum * v;
    }
    state.steps++;
  } else {
    for (int64_t c = 0; c < C; ++c) {
      (*mu)[c] = state.running_mean[c];
      (*invstd)[c] = 1.0 / std::sqrt(state.running_var[c] + state.eps);
    }
  }

  Tensor out(xs);
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const double m = (*mu)[c], is = (*invstd)[c];
      const double gm = gamma->value[c], bt = beta->value[c];
      const double* src = x->value.data() + (n * C + c) * S;
      double* dst = out.data() + (n * C + c) * S;
      for (int64_t i = 0; i < S; ++i) dst[i] = gm * (src[i] - m) * is + bt;
    }

  return make_node(std::move(out), {x, gamma, beta},
                   [x, gamma, beta, mu, invstd, training, N, C, S, M](Node& node) {
    const Tensor& g = node.grad;
    for (int64_t c = 0; c < C; ++c) {
      const double m = (*mu)[c], is = (*invstd)[c], gm = gamma->value[c];
      double sum_g = 0.0, sum_gx = 0.0;  // sum dy and sum dy*xhat
      for (int64_t n = 0; n < N; ++n) {
        const double* gr = g.data() + (n * C + c) * S;
        const double* xr = x->value.data() + (n * C + c) * S;
        for (int64_t i = 0; i < S; ++i) {
          sum_g += gr[i];
          sum_gx += gr[i] * (xr[i] - m) * is;
        }
      }
      if (gamma->requires_grad) gamma->ensure_grad()[c] += sum_gx;
      if (beta->requires_grad) beta->ensure_grad()[c] += sum_g;
      if (x->requires_grad) {
        Tensor& gx = x->ensure_grad();
        if (training) {
          const double inv_m = 1.0 / static_cast<double>(M);
          for (int64_t n = 0; n < N; ++n) {
            const double* gr = g.data() + (n * C + c) * S;
            const double* xr = x->value.data() + (n * C + c) * S;
            double* dst = gx.data() + (n * C + c) * S;
            for (int64_t i = 0; i < S; ++i) {
              const double xhat = (xr[i] - m) * is;
              dst[i] += gm * is * (gr[i] - inv_m * (sum_g + xhat * sum_gx));
            }
          }
        } else {
          for (int64_t n = 0; n < N; ++n) {
            const double* gr = g.data() + (n * C + c) * S;
            double* dst = gx.data() + (n * C + c) * S;
            for (int64_t i = 0; i < S; ++i) dst[i] += gm * is * gr[i];
          }
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Warping layer
// ---------------------------------------------------------------------------

namespace {

inline double clampd(double v, double lo, double hi) { return v < lo ? lo : (v > hi ? hi : v); }

struct Corner {
  int64_t i0, i1;
  double f;     // fractional part
  double dpos;  // d(sample pos)/d(u); 0 where the clamp is active
};

inline Corner axis_sample(double coord, double disp, int64_t extent) {
  Corner r;
  const double raw = coord + disp;
  const double hi = static_cast<double>(extent - 1);
  const double pos = clampd(raw, 0.0, hi);
  r.dpos = (raw < 0.0 || raw > hi) ? 0.0 : 1.0;
  r.i0 = static_cast<int64_t>(std::floor(pos));
  if (r.i0 > extent - 1) r.i0 = extent - 1;
  r.f = pos - static_cast<double>(r.i0);
  r.i1 = std::min<int64_t>(r.i0 + 1, extent - 1);
  return r;
}

}  // namespace

Var warp(const Var& x, const Var& u) {
  const auto& xs = x->value.shape();
  const auto& us = u->value.shape();
  const size_t d = xs.size() - 2;
  if (d != 2 && d != 3) throw std::invalid_argument("warp: spatial rank must be 2 or 3");
  if (us.size() != xs.size() || us[0] != xs[0] || us[1] != static_cast<int64_t>(d))
    throw std::invalid_argument("warp: field must be (N, " + std::to_string(d) + ", spatial), got " +
                                u->value.shape_str() + " for image " + x->value.shape_str());
  for (size_t i = 2; i < xs.size(); ++i)
    if (us[i] != xs[i]) throw std::invalid_argument("warp: grid mismatch");

  const int64_t N = xs[0], C = xs[1], S = prod(xs, 2);
  Tensor out(xs);

  if (d == 2) {
    const int64_t H = xs[2], W = xs[3];
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (N > 1 && S >= 4096)
#endif
    for (int64_t n = 0; n < N; ++n) {
      const double* u0 = u->value.data() + (n * 2 + 0) * S;
      const double* u1 = u->value.data() + (n * 2 + 1) * S;
      for (int64_t y = 0; y < H; ++y)
        for (int64_t xx = 0; xx < W; ++xx) {
          const int64_t v = y * W + xx;
          const Corner cy = axis_sample(static_cast<double>(y), u0[v], H);
          const Corner cx = axis_sample(static_cast<double>(xx), u1[v], W);
          for (int64_t ch = 0; ch < C; ++ch) {
            const double* img = x->value.data() + (n * C + ch) * S;
            const double top = img[cy.i0 * W + cx.i0] * (1 - cx.f) + img[cy.i0 * W + cx.i1] * cx.f;
            const double bot = img[cy.i1 * W + cx.i0] * (1 - cx.f) + img[cy.i1 * W + cx.i1] * cx.f;
            out.data()[(n * C + ch) * S + v] = top * (1 - cy.f) + bot * cy.f;
          }
        }
    }
  } else {
    const int64_t D = xs[2], H = xs[3], W = xs[4];
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (N > 1 && S >= 4096)
#endif
    for (int64_t n = 0; n < N; ++n) {
      const double* u0 = u->value.data() + (n * 3 + 0) * S;
      const double* u1 = u->value.data() + (n * 3 + 1) * S;
      const double* u2 = u->value.data() + (n * 3 + 2) * S;
      for (int64_t z = 0; z < D; ++z)
        for (int64_t y = 0; y < H; ++y)
          for (int64_t xx = 0; xx < W; ++xx) {
            const int64_t v = (z * H + y) * W + xx;
            const Corner cz = axis_sample(static_cast<double>(z), u0[v], D);
            const Corner cy = axis_sample(static_cast<double>(y), u1[v], H);
            const Corner cx = axis_sample(static_cast<double>(xx), u2[v], W);
            for (int64_t ch = 0; ch < C; ++ch) {
              const double* img = x->value.data() + (n * C + ch) * S;
              auto bilin = [&](int64_t zi) {
                const double* pl = img + zi * H * W;
                const double top = pl[cy.i0 * W + cx.i0] * (1 - cx.f) + pl[cy.i0 * W + cx.i1] * cx.f;
                const double bot = pl[cy.i1 * W + cx.i0] * (1 - cx.f) + pl[cy.i1 * W + cx.i1] * cx.f;
                return top * (1 - cy.f) + bot * cy.f;
              };
              out.data()[(n * C + ch) * S + v] = bilin(cz.i0) * (1 - cz.f) + bilin(cz.i1) * cz.f;
            }
          }
    }
  }

  return make_node(std::move(out), {x, u}, [x, u, N, C, S, d](Node& node) {
    const auto& xs = x->value.shape();
    const Tensor& g = node.grad;
    Tensor* gx = x->requires_grad ? &x->ensure_grad() : nullptr;
    Tensor* gu = u->requires_grad ? &u->ensure_grad() : nullptr;
    if (d == 2) {
      const int64_t H = xs[2], W = xs[3];
      for (int64_t n = 0; n < N; ++n) {
        const double* u0 = u->value.data() + (n * 2 + 0) * S;
        const double* u1 = u->value.data() + (n * 2 + 1) * S;
        for (int64_t y = 0; y < H; ++y)
          for (int64_t xx = 0; xx < W; ++xx) {
            const int64_t v = y * W + xx;
            const Corner cy = axis_sample(static_cast<double>(y), u0[v], H);
            const Corner cx = axis_sample(static_cast<double>(xx), u1[v], W);
            double acc0 = 0.0, acc1 = 0.0;
            for (int64_t ch = 0; ch < C; ++ch) {
              const double gv = g[(n * C + ch) * S + v];
              if (gv == 0.0) continue;
              const double* img = x->value.data() + (n * C + ch) * S;
              if (gx) {
                double* gi = gx->data() + (n * C + ch) * S;
                gi[cy.i0 * W + cx.i0] += gv * (1 - cy.f) * (1 - cx.f);
                gi[cy.i0 * W + cx.i1] += gv * (1 - cy.f) * cx.f;
                gi[cy.i1 * W + cx.i0] += gv * cy.f * (1 - cx.f);
                gi[cy.i1 * W + cx.i1] += gv * cy.f * cx.f;
              }
              if (gu) {
                const double d_dy = (img[cy.i1 * W + cx.i0] - img[cy.i0 * W + cx.i0]) * (1 - cx.f) +
                                    (img[cy.i1 * W + cx.i1] - img[cy.i0 * W + cx.i1]) * cx.f;
                const double d_dx = (img[cy.i0 * W + cx.i1] - img[cy.i0 * W + cx.i0]) * (1 - cy.f) +
                                    (img[cy.i1 * W + cx.i1] - img[cy.i1 * W + cx.i0]) * cy.f;
                acc0 += gv * d_dy;
                acc1 += gv * d_dx;
              }
            }
            if (gu) {
              gu->data()[(n * 2 + 0) * S + v] += acc0 * cy.dpos;
              gu->data()[(n * 2 + 1) * S + v] += acc1 * cx.dpos;
            }
          }
      }
    } else {
      const int64_t D = xs[2], H = xs[3], W = xs[4];
      (void)D;
      for (int64_t n = 0; n < N; ++n) {
        const double* u0 = u->value.data() + (n * 3 + 0) * S;
        const double* u1 = u->value.data() + (n * 3 + 1) * S;
        const double* u2 = u->value.data() + (n * 3 + 2) * S;
        for (int64_t z = 0; z < xs[2]; ++z)
          for (int64_t y = 0; y < H; ++y)
            for (int64_t xx = 0; xx < W; ++xx) {
              const int64_t v = (z * H + y) * W + xx;
              const Corner cz = axis_sample(static_cast<double>(z), u0[v], xs[2]);
              const Corner cy = axis_sample(static_cast<double>(y), u1[v], H);
              const Corner cx = axis_sample(static_cast<double>(xx), u2[v], W);
              double acc0 = 0.0, acc1 = 0.0, acc2 = 0.0;
              const double wz[2] = {1 - cz.f, cz.f}, wy[2] = {1 - cy.f, cy.f}, wx[2] = {1 - cx.f, cx.f};
              const int64_t iz[2] = {cz.i0, cz.i1}, iy[2] = {cy.i0, cy.i1}, ix[2] = {cx.i0, cx.i1};
              for (int64_t ch = 0; ch < C; ++ch) {
                const double gv = g[(n * C + ch) * S + v];
                if (gv == 0.0) continue;
                const double* img = x->value.data() + (n * C + ch) * S;
                double* gi = gx ? gx->data() + (n * C + ch) * S : nullptr;
                for (int a = 0; a < 2; ++a)
                  for (int b = 0; b < 2; ++b)
                    for (int e = 0; e < 2; ++e) {
                      const int64_t idx = (iz[a] * H + iy[b]) * W + ix[e];
                      if (gi) gi[idx] += gv * wz[a] * wy[b] * wx[e];
                      if (gu) {
                        const double val = img[idx];
                        const double sz = a ? 1.0 : -1.0, sy = b ? 1.0 : -1.0, sx = e ? 1.0 : -1.0;
                        acc0 += gv * val * sz * wy[b] * wx[e];
                        acc1 += gv * val * wz[a] * sy * wx[e];
                        acc2 += gv * val * wz[a] * wy[b] * sx;
                      }
                    }
              }
              if (gu) {
                gu->data()[(n * 3 + 0) * S + v] += acc0 * cz.dpos;
                gu->data()[(n * 3 + 1) * S + v] += acc1 * cy.dpos;
                gu->data()[(n * 3 + 2) * S + v] += acc2 * cx.dpos;
              }
            }
      }
    }
  });
}

Var cycle_rmse(const Var& a, const Var& b) {
  if (!a->value.same_shape(b->value))
    throw std::invalid_argument("cycle_rmse: shape mismatch " + a->value.shape_str() + " vs " +
                                b->value.shape_str());
  const int64_t N = a->value.dim(0);
  const int64_t M = a->value.numel() / N;
  auto rmse = std::make_shared<std::vector<double>>(static_cast<size_t>(N));
  double total = 0.0;
  for (int64_t n = 0; n < N; ++n) {
    const double* pa = a->value.data() + n * M;
    const double* pb = b->value.data() + n * M;
    double s = 0.0;
    for (int64_t i = 0; i < M; ++i) {
      const double dd = pa[i] - pb[i];
      s += dd * dd;
    }
    (*rmse)[static_cast<size_t>(n)] = std::sqrt(s / static_cast<double>(M));
    total += (*rmse)[static_cast<size_t>(n)];
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(N));
  return make_node(std::move(out), {a, b}, [a, b, rmse, N, M](Node& node) {
    const double g = node.grad[0];
    for (int64_t n = 0; n < N; ++n) {
      // Guarded denominator: exact zero residual stays a zero gradient.
      const double denom = std::max((*rmse)[static_cast<size_t>(n)], 1e-12) *
                           static_cast<double>(N) * static_cast<double>(M);
      const double* pa = a->value.data() + n * M;
      const double* pb = b->value.data() + n * M;
      if (a->requires_grad) {
        double* ga = a->ensure_grad().data() + n * M;
        for (int64_t i = 0; i < M; ++i) ga[i] += g * (pa[i] - pb[i]) / denom;
      }
      if (b->requires_grad) {
        double* gb = b->ensure_grad().data() + n * M;
        for (int64_t i = 0; i < M; ++i) gb[i] -= g * (pa[i] - pb[i]) / denom;
      }
    }
  });
}

Var smoothness_penalty(const Var& u, double lambda) {
  const auto& us = u->value.shape();
  if (us.size() < 3) throw std::invalid_argument("smoothness_penalty: need (N, CH, spatial)");
  const size_t d = us.size() - 2;
  const int64_t N = us[0], CH = us[1], S = prod(us, 2);
  std::vector<int64_t> sp(us.begin() + 2, us.end());
  std::vector<int64_t> stride(d, 1);
  for (size_t i = d; i-- > 1;) stride[i - 1] = stride[i] * sp[i];

  double total = 0.0;
  for (int64_t nc = 0; nc < N * CH; ++nc) {
    const double* src = u->value.data() + nc * S;
    for (size_t ax = 0; ax < d; ++ax) {
      // Iterate every voxel whose successor along `ax` exists.
      for (int64_t v = 0; v < S; ++v) {
        const int64_t coord = (v / stride[ax]) % sp[ax];
        if (coord + 1 >= sp[ax]) continue;
        const double diff = src[v + stride[ax]] - src[v];
        total += diff * diff;
      }
    }
  }
  Tensor out = Tensor::scalar(lambda * total / static_cast<double>(N));
  return make_node(std::move(out), {u}, [u, lambda, N, CH, S, sp, stride, d](Node& node) {
    const double g = node.grad[0] * lambda / static_cast<double>(N);
    Tensor& gu = u->ensure_grad();
    for (int64_t nc = 0; nc < N * CH; ++nc) {
      const double* src = u->value.data() + nc * S;
      double* dst = gu.data() + nc * S;
      for (size_t ax = 0; ax < d; ++ax) {
        for (int64_t v = 0; v < S; ++v) {
          const int64_t coord = (v / stride[ax]) % sp[ax];
          if (coord + 1 >= sp[ax]) continue;
          const double diff = src[v + stride[ax]] - src[v];
          dst[v + stride[ax]] += 2.0 * g * diff;
          dst[v] -= 2.0 * g * diff;
        }
      }
    }
  });
}

Var bce_with_logits_mean(const Var& logits, double target) {
  return bce_with_logits_mean(logits, Tensor({logits->value.numel()}, target));
}

Var bce_with_logits_mean(const Var& logits, const Tensor& targets) {
  const int64_t n = logits->value.numel();
  if (targets.numel() != n) throw std::invalid_argument("bce_with_logits_mean: target count mismatch");
  double total = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double p = logits->value[i];
    total += std::max(p, 0.0) - p * targets[i] + std::log1p(std::exp(-std::fabs(p)));
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(n));
  return make_node(std::move(out), {logits}, [logits, targets, n](Node& node) {
    const double g = node.grad[0] / static_cast<double>(n);
    Tensor& gl = logits->ensure_grad();
    for (int64_t i = 0; i < n; ++i) {
      const double s = 1.0 / (1.0 + std::exp(-logits->value[i]));
      gl[i] += g * (s - targets[i]);
    }
  });
}

}  // namespace simviz::ad
