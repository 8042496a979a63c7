#include "sslfuse/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "sslfuse/errors.hpp"

namespace sslfuse {

namespace {

using ImplPtr = std::shared_ptr<TensorImpl>;

bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (!active_tape()) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (!t.defined()) throw ShapeError(std::string(op) + ": undefined tensor");
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(t.shape()));
  }
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

// Plain kernels shared by forward and backward passes.
// out[m x n] += a[m x k] * b[k x n]
void gemm_nn(const double* a, const double* b, double* out, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = out + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

// out[m x k] += g[m x n] * b[k x n]^T
void gemm_nt(const double* g, const double* b, double* out, std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      out[i * k + p] += acc;
    }
  }
}

// out[k x n] += a[m x k]^T * g[m x n]
void gemm_tn(const double* a, const double* g, double* out, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      double* orow = out + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * grow[j];
    }
  }
}

template <class Fwd, class Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
  std::vector<double> out(x.numel());
  auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(in[i]);
  bool track = tracking({&x});
  Tensor y = Tensor::from(x.shape(), std::move(out), track);
  if (track) {
    ImplPtr xi = x.impl_ptr(), yi = y.impl_ptr();
    active_tape()->record(y, [xi, yi, deriv] {
      if (!xi->requires_grad) return;
      for (std::size_t i = 0; i < xi->data.size(); ++i) xi->grad[i] += yi->grad[i] * deriv(xi->data[i], yi->data[i]);
    });
  }
  return y;
}

double sigmoid_scalar(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  bool track = tracking({&a, &b});
  Tensor y = Tensor::from({m, n}, std::move(out), track);
  if (track) {
    ImplPtr ai = a.impl_ptr(), bi = b.impl_ptr(), yi = y.impl_ptr();
    active_tape()->record(y, [ai, bi, yi, m, k, n] {
      if (ai->requires_grad) gemm_nt(yi->grad.data(), bi->data.data(), ai->grad.data(), m, n, k);
      if (bi->requires_grad) gemm_tn(ai->data.data(), yi->grad.data(), bi->grad.data(), m, k, n);
    });
  }
  return y;
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  auto in = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = in[i * n + j];
  bool track = tracking({&a});
  Tensor y = Tensor::from({n, m}, std::move(out), track);
  if (track) {
    ImplPtr ai = a.impl_ptr(), yi = y.impl_ptr();
    active_tape()->record(y, [ai, yi, m, n] {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ai->grad[i * n + j] += yi->grad[j * m + i];
    });
  }
  return y;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same(a, b, "add");
  std::vector<double> out(a.numel());
  auto x = a.data(), z = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + z[i];
  bool track = tracking({&a, &b});
  Tensor y = Tensor::from(a.shape(), std::move(out), track);
  if (track) {
    ImplPtr ai = a.impl_ptr(), bi = b.impl_ptr(), yi = y.impl_ptr();
    active_tape()->record(y, [ai, bi, yi] {
      for (std::size_t i = 0; i < yi->grad.size(); ++i) {
        if (ai->requires_grad) ai->grad[i] += yi->grad[i];
        if (bi->requires_grad) bi->grad[i] += yi->grad[i];
      }
    });
  }
  return y;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same(a, b, "sub");
  std::vector<double> out(a.numel());
  auto x = a.data(), z = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - z[i];
  bool track = tracking({&a, &b});
  Tensor y = Tensor::from(a.shape(), std::move(out), track);
  if (track) {
    ImplPtr ai = a.impl_ptr(), bi = b.impl_ptr(), yi = y.impl_ptr();
    active_tape()->record(y, [ai, bi, yi] {
      for (std::size_t i = 0; i < yi->grad.size(); ++i) {
        if (ai->requires_grad) ai->grad[i] += yi->grad[i];
        if (bi->requires_grad) bi->grad[i] -= yi->grad[i];
      }
    });
  }
  return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same(a, b, "mul");
  std::vector<double> out(a.numel());
  auto x = a.data(), z = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * z[i];
  bool track = tracking({&a, &b});
  Tensor y = Tensor::from(a.shape(), std::move(out), track);
  if (track) {
    ImplPtr ai = a.impl_ptr(), bi = b.impl_ptr(), yi = y.impl_ptr();
    active_tape()->record(y, [ai, bi, yi] {
      for (std::size_t i = 0; i < yi->grad.size(); ++i) {
        if (ai->requires_grad) ai->grad[i] += yi->grad[i] * bi->data[i];
        if (bi->requires_grad) bi->grad[i] += yi->grad[i] * ai->data[i];
      }
    });
  }
  return y;
}

Tensor add_row(const Tensor& a, const Tensor& bias) {
  require_rank(a, 2, "add_row");
  require_rank(bias, 1, "add_row");
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (bias.dim(0) != n) {
    throw ShapeError("add_row: bias " + shape_str(bias.shape()) + " does not match " + shape_str(a.shape()));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  auto bv = bias.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bv[j];
  bool track = tracking({&a, &bias});
  Tensor y = Tensor::from({m, n}, std::move(out), track);
  if (track) {
    ImplPtr ai = a.impl_ptr(), bi = bias.impl_ptr(), yi = y.impl_ptr();
    active_tape()->record(y, [ai, bi, yi, m, n] {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double g = yi->grad[i * n + j];
          if (ai->requires_grad) ai->grad[i * n + j] += g;
          if (bi->requires_grad) bi->grad[j] += g;
        }
    });
  }
  return y;
}

Tensor scale(const Tensor& a, double factor) {
  return unary(a, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor relu(const Tensor& x) {
  return unary(x, [](double v) { return v > 0 ? v : 0.0; }, [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, sigmoid_scalar, [](double, double s) { return s * (1.0 - s); });
}

Tensor swish(const Tensor& x) {
  return unary(
      x, [](double v) { return v * sigmoid_scalar(v); },
      [](double v, double) {
        const double s = sigmoid_scalar(v);
        return s * (1.0 + v * (1.0 - s));
      });
}

Tensor glu(const Tensor& x) {
  if (x.rank() < 1 || x.shape().back() % 2 != 0) {
    throw ShapeError("glu: last axis must be even, got " + shape_str(x.shape()));
  }
  const std::size_t width = x.shape().back(), half = width / 2, rows = x.numel() / width;
  Shape out_shape = x.shape();
  out_shape.back() = half;
  std::vector<double> out(rows * half);
  auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < half; ++j)
      out[r * half + j] = in[r * width + j] * sigmoid_scalar(in[r * width + half + j]);
  bool track = tracking({&x});
  Tensor y = Tensor::from(out_shape, std::move(out), track);
  if (track) {
    ImplPtr xi = x.impl_ptr(), yi = y.impl_ptr();
    active_tape()->record(y, [xi, yi, rows, width, half] {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < half; ++j) {
          const double g = yi->grad[r * half + j];
          const double a = xi->data[r * width + j];
          const double s = sigmoid_scalar(xi->data[r * width + half + j]);
          xi->grad[r * width + j] += g * s;
          xi->grad[r * width + half + j] += g * a * s * (1.0 - s);
        }
    });
  }
  return y;
}

Tensor softmax(const Tensor& x, int axis) {
  const int rank = static_cast<int>(x.rank());
  const int ax = axis < 0 ? axis + rank : axis;
  if (ax < 0 || ax >= rank) throw ShapeError("softmax: axis out of range for " + shape_str(x.shape()));
  std::size_t outer = 1, inner = 1;
  const std::size_t len = x.dim(static_cast<std::size_t>(ax));
  for (int i = 0; i < ax; ++i) outer *= x.dim(static_cast<std::size_t>(i));
  for (int i = ax + 1; i < rank; ++i) inner *= x.dim(static_cast<std::size_t>(i));
  auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t s = 0; s < inner; ++s) {
      const std::size_t base = o * len * inner + s;
      double mx = -INFINITY;
      for (std::size_t k = 0; k < len; ++k) {
        const double v = in[base + k * inner];
        if (std::isnan(v)) throw NumericError("softmax: NaN input");
        mx = std::max(mx, v);
      }
      double total = 0.0;
      for (std::size_t k = 0; k < len; ++k) {
        const double e = std::exp(in[base + k * inner] - mx);
        out[base + k * inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < len; ++k) out[base + k * inner] /= total;
    }
  bool track = tracking({&x});
  Tensor y = Tensor::from(x.shape(), std::move(out), track);
  if (track) {
    ImplPtr xi = x.impl_ptr(), yi = y.impl_ptr();
    active_tape()->record(y, [xi, yi, outer, inner, len] {
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t s = 0; s < inner; ++s) {
          const std::size_t base = o * len * inner + s;
          double dot = 0.0;
          for (std::size_t k = 0; k < len; ++k) dot += yi->grad[base + k * inner] * yi->data[base + k * inner];
          for (std::size_t k = 0; k < len; ++k) {
            const std::size_t i = base + k * inner;
            xi->grad[i] += yi->data[i] * (yi->grad[i] - dot);
          }
        }
    });
  }
  return y;
}

Tensor log_softmax(const Tensor& x) {
  if (x.rank() < 1) throw ShapeError("log_softmax: scalar input");
  const std::size_t len = x.shape().back(), rows = x.numel() / len;
  auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in.data() + r * len;
    double mx = -INFINITY;
    for (std::size_t k = 0; k < len; ++k) {
      if (std::isnan(row[k])) throw NumericError("log_softmax: NaN input");
      mx = std::max(mx, row[k]);
    }
    double total = 0.0;
    for (std::size_t k = 0; k < len; ++k) total += std::exp(row[k] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t k = 0; k < len; ++k) out[r * len + k] = row[k] - lse;
  }
  bool track = tracking({&x});
  Tensor y = Tensor::from(x.shape(), std::move(out), track);
  if (track) {
    ImplPtr xi = x.impl_ptr(), yi = y.impl_ptr();
    active_tape()->record(y, [xi, yi, rows, len] {
      for (std::size_t r = 0; r < rows; ++r) {
        double gsum = 0.0;
        for (std::size_t k = 0; k < len; ++k) gsum += yi->grad[r * len + k];
        for (std::size_t k = 0; k < len; ++k) {
          const std::size_t i = r * len + k;
          xi->grad[i] += yi->grad[i] - std::exp(yi->data[i]) * gsum;
        }
      }
    });
  }
  return y;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() < 1) throw ShapeError("layer_norm: scalar input");
  const std::size_t d = x.shape().back();
  if (d == 0) throw ShapeError("layer_norm: empty feature axis");
  require_rank(gain, 1, "layer_norm gain");
  require_rank(bias, 1, "layer_norm bias");
  if (gain.dim(0) != d || bias.dim(0) != d) {
    throw ShapeError("layer_norm: affine params " + shape_str(gain.shape()) + "/" + shape_str(bias.shape()) +
                     " do not match " + shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / d;
  auto in = x.data();
  auto gv = gain.data(), bv = bias.data();
  std::vector<double> xhat(in.size()), rstd(rows), out(in.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in.data() + r * d;
    double mu = 0.0;
    for (std::size_t k = 0; k < d; ++k) mu += row[k];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t k = 0; k < d; ++k) var += (row[k] - mu) * (row[k] - mu);
    var /= static_cast<double>(d);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t k = 0; k < d; ++k) {
      xhat[r * d + k] = (row[k] - mu) * rstd[r];
      out[r * d + k] = xhat[r * d + k] * gv[k] + bv[k];
    }
  }
  bool track = tracking({&x, &gain, &bias});
  Tensor y = Tensor::from(x.shape(), std::move(out), track);
  if (track) {
    ImplPtr xi = x.impl_ptr(), gi = gain.impl_ptr(), bi = bias.impl_ptr(), yi = y.impl_ptr();
    active_tape()->record(y, [xi, gi, bi, yi, rows, d, xhat = std::move(xhat), rstd = std::move(rstd)] {
      const double inv_d = 1.0 / static_cast<double>(d);
      for (std::size_t r = 0; r < rows; ++r) {
        double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
          const std::size_t i = r * d + k;
          const double g = yi->grad[i];
          if (gi->requires_grad) gi->grad[k] += g * xhat[i];
          if (bi->requires_grad) bi->grad[k] += g;
          const double dxh = g * gi->data[k];
          mean_dxhat += dxh;
          mean_dxhat_xhat += dxh * xhat[i];
        }
        if (!xi->requires_grad) continue;
        mean_dxhat *= inv_d;
        mean_dxhat_xhat *= inv_d;
        for (std::size_t k = 0; k < d; ++k) {
          const std::size_t i = r * d + k;
          const double dxh = yi->grad[i] * gi->data[k];
          xi->grad[i] += rstd[r] * (dxh - mean_dxhat - xhat[i] * mean_dxhat_xhat);
        }
      }
    });
  }
  return y;
}

Tensor conv2d(const Tensor& x, const Tensor& kernels, const Tensor& bias, std::array<std::size_t, 2> stride,
              std::array<std::size_t, 2> padding) {
  require_rank(x, 3, "conv2d input");
  require_rank(kernels, 4, "conv2d kernels");
  require_rank(bias, 1, "conv2d bias");
  const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t cout = kernels.dim(0), kh = kernels.dim(2), kw = kernels.dim(3);
  if (kernels.dim(1) != cin || bias.dim(0) != cout) {
    throw ShapeError("conv2d: kernels " + shape_str(kernels.shape()) + " / bias " + shape_str(bias.shape()) +
                     " incompatible with input " + shape_str(x.shape()));
  }
  if (stride[0] == 0 || stride[1] == 0) throw ShapeError("conv2d: zero stride");
  if (h + 2 * padding[0] < kh || w + 2 * padding[1] < kw) {
    throw ShapeError("conv2d: kernel " + shape_str(kernels.shape()) + " larger than padded input " +
                     shape_str(x.shape()));
  }
  const std::size_t oh = (h + 2 * padding[0] - kh) / stride[0] + 1;
  const std::size_t ow = (w + 2 * padding[1] - kw) / stride[1] + 1;
  const auto ph = static_cast<std::ptrdiff_t>(padding[0]), pw = static_cast<std::ptrdiff_t>(padding[1]);
  const auto sh = static_cast<std::ptrdiff_t>(stride[0]), sw = static_cast<std::ptrdiff_t>(stride[1]);
  // Visits every (output, input, kernel) triple that lands inside the input.
  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t c = 0; c < cin; ++c)
        for (std::size_t i = 0; i < oh; ++i)
          for (std::size_t a = 0; a < kh; ++a) {
            const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(i) * sh - ph + static_cast<std::ptrdiff_t>(a);
            if (r < 0 || r >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t j = 0; j < ow; ++j)
              for (std::size_t b = 0; b < kw; ++b) {
                const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(j) * sw - pw + static_cast<std::ptrdiff_t>(b);
                if (s < 0 || s >= static_cast<std::ptrdiff_t>(w)) continue;
                fn(((o * cin + c) * kh + a) * kw + b, (c * h + static_cast<std::size_t>(r)) * w +
                                                          static_cast<std::size_t>(s),
                   (o * oh + i) * ow + j);
              }
          }
  };
  std::vector<double> out(cout * oh * ow);
  auto bv = bias.data();
  for (std::size_t o = 0; o < cout; ++o) std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(o * oh * ow), oh * ow, bv[o]);
  auto xv = x.data(), kv = kernels.data();
  for_each_tap([&](std::size_t ki, std::size_t xi, std::size_t yi) { out[yi] += kv[ki] * xv[xi]; });
  bool track = tracking({&x, &kernels, &bias});
  Tensor y = Tensor::from({cout, oh, ow}, std::move(out), track);
  if (track) {
    ImplPtr xp = x.impl_ptr(), kp = kernels.impl_ptr(), bp = bias.impl_ptr(), yp = y.impl_ptr();
    active_tape()->record(y, [xp, kp, bp, yp, for_each_tap, cout, oh, ow] {
      if (bp->requires_grad)
        for (std::size_t o = 0; o < cout; ++o)
          for (std::size_t i = 0; i < oh * ow; ++i) bp->grad[o] += yp->grad[o * oh * ow + i];
      for_each_tap([&](std::size_t ki, std::size_t xi, std::size_t yi) {
        const double g = yp->grad[yi];
        if (kp->requires_grad) kp->grad[ki] += g * xp->data[xi];
        if (xp->requires_grad) xp->grad[xi] += g * kp->data[ki];
      });
    });
  }
  return y;
}

Tensor depthwise_conv1d(const Tensor& x, const Tensor& kernels, const Tensor& bias, std::size_t padding) {
  require_rank(x, 2, "depthwise_conv1d input");
  require_rank(kernels, 2, "depthwise_conv1d kernels");
  require_rank(bias, 1, "depthwise_conv1d bias");
  const std::size_t t = x.dim(0), c = x.dim(1), k = kernels.dim(1);
  if (kernels.dim(0) != c || bias.dim(0) != c) {
    throw ShapeError("depthwise_conv1d: kernels " + shape_str(kernels.shape()) + " incompatible with input " +
                     shape_str(x.shape()));
  }
  if (t + 2 * padding < k) {
    throw ShapeError("depthwise_conv1d: kernel width " + std::to_string(k) + " larger than padded input " +
                     shape_str(x.shape()));
  }
  const std::size_t ot = t + 2 * padding - k + 1;
  std::vector<double> out(ot * c);
  auto xv = x.data(), kv = kernels.data(), bv = bias.data();
  for (std::size_t i = 0; i < ot; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) out[i * c + ch] = bv[ch];
  for (std::size_t i = 0; i < ot; ++i)
    for (std::size_t a = 0; a < k; ++a) {
      const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(i + a) - static_cast<std::ptrdiff_t>(padding);
      if (r < 0 || r >= static_cast<std::ptrdiff_t>(t)) continue;
      for (std::size_t ch = 0; ch < c; ++ch) out[i * c + ch] += kv[ch * k + a] * xv[static_cast<std::size_t>(r) * c + ch];
    }
  bool track = tracking({&x, &kernels, &bias});
  Tensor y = Tensor::from({ot, c}, std::move(out), track);
  if (track) {
    ImplPtr xp = x.impl_ptr(), kp = kernels.impl_ptr(), bp = bias.impl_ptr(), yp = y.impl_ptr();
    active_tape()->record(y, [xp, kp, bp, yp, t, c, k, ot, padding] {
      for (std::size_t i = 0; i < ot; ++i) {
        if (bp->requires_grad)
          for (std::size_t ch = 0; ch < c; ++ch) bp->grad[ch] += yp->grad[i * c + ch];
        for (std::size_t a = 0; a < k; ++a) {
          const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(i + a) - static_cast<std::ptrdiff_t>(padding);
          if (r < 0 || r >= static_cast<std::ptrdiff_t>(t)) continue;
          const auto row = static_cast<std::size_t>(r);
          for (std::size_t ch = 0; ch < c; ++ch) {
            const double g = yp->grad[i * c + ch];
            if (kp->requires_grad) kp->grad[ch * k + a] += g * xp->data[row * c + ch];
            if (xp->requires_grad) xp->grad[row * c + ch] += g * kp->data[ch * k + a];
          }
        }
      }
    });
  }
  return y;
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  require_rank(x, 2, "slice_rows");
  if (begin > end || end > x.dim(0)) {
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + "," + std::to_string(end) + ") out of " +
                     shape_str(x.shape()));
  }
  const std::size_t n = x.dim(1);
  auto in = x.data();
  std::vector<double> out(in.begin() + static_cast<std::ptrdiff_t>(begin * n),
                          in.begin() + static_cast<std::ptrdiff_t>(end * n));
  bool track = tracking({&x});
  Tensor y = Tensor::from({end - begin, n}, std::move(out), track);
  if (track) {
    ImplPtr xi = x.impl_ptr(), yi = y.impl_ptr();
    active_tape()->record(y, [xi, yi, begin, n] {
      for (std::size_t i = 0; i < yi->grad.size(); ++i) xi->grad[begin * n + i] += yi->grad[i];
    });
  }
  return y;
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  require_rank(x, 2, "slice_cols");
  if (begin > end || end > x.dim(1)) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) + ") out of " +
                     shape_str(x.shape()));
  }
  const std::size_t m = x.dim(0), n = x.dim(1), w = end - begin;
  auto in = x.data();
  std::vector<double> out(m * w);
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(i * n + begin), w, out.begin() + static_cast<std::ptrdiff_t>(i * w));
  bool track = tracking({&x});
  Tensor y = Tensor::from({m, w}, std::move(out), track);
  if (track) {
    ImplPtr xi = x.impl_ptr(), yi = y.impl_ptr();
    active_tape()->record(y, [xi, yi, m, n, w, begin] {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) xi->grad[i * n + begin + j] += yi->grad[i * w + j];
    });
  }
  return y;
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t m = parts.front().dim(0);
  std::size_t total = 0;
  bool any_grad = false;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.dim(0) != m) throw ShapeError("concat_cols: row count mismatch " + shape_str(p.shape()));
    total += p.dim(1);
    any_grad = any_grad || p.requires_grad();
  }
  std::vector<double> out(m * total);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(1);
    auto in = p.data();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(i * w), w,
                  out.begin() + static_cast<std::ptrdiff_t>(i * total + offset));
    offset += w;
  }
  bool track = any_grad && active_tape();
  Tensor y = Tensor::from({m, total}, std::move(out), track);
  if (track) {
    std::vector<ImplPtr> ins;
    for (const auto& p : parts) ins.push_back(p.impl_ptr());
    ImplPtr yi = y.impl_ptr();
    active_tape()->record(y, [ins, yi, m, total] {
      std::size_t off = 0;
      for (const auto& p : ins) {
        const std::size_t w = p->shape[1];
        if (p->requires_grad)
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) p->grad[i * w + j] += yi->grad[i * total + off + j];
        off += w;
      }
    });
  }
  return y;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  bool track = tracking({&x});
  Tensor y = Tensor::from(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()), track);
  if (track) {
    ImplPtr xi = x.impl_ptr(), yi = y.impl_ptr();
    active_tape()->record(y, [xi, yi] {
      for (std::size_t i = 0; i < yi->grad.size(); ++i) xi->grad[i] += yi->grad[i];
    });
  }
  return y;
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const std::size_t rank = x.rank();
  if (axes.size() != rank) throw ShapeError("permute: axes count does not match " + shape_str(x.shape()));
  std::vector<bool> seen(rank, false);
  for (auto a : axes) {
    if (a >= rank || seen[a]) throw ShapeError("permute: invalid axis list for " + shape_str(x.shape()));
    seen[a] = true;
  }
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = x.dim(axes[i]);
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * x.dim(i);
  // Maps each output flat index to its source flat index.
  std::vector<std::size_t> source(x.numel());
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t flat = 0; flat < source.size(); ++flat) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < rank; ++i) src += idx[i] * in_strides[axes[i]];
    source[flat] = src;
    for (std::size_t i = rank; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  auto in = x.data();
  std::vector<double> out(source.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[source[i]];
  bool track = tracking({&x});
  Tensor y = Tensor::from(std::move(out_shape), std::move(out), track);
  if (track) {
    ImplPtr xi = x.impl_ptr(), yi = y.impl_ptr();
    active_tape()->record(y, [xi, yi, source = std::move(source)] {
      for (std::size_t i = 0; i < source.size(); ++i) xi->grad[source[i]] += yi->grad[i];
    });
  }
  return y;
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> rows) {
  require_rank(table, 2, "gather_rows");
  const std::size_t n = table.dim(1);
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  std::vector<double> out(idx.size() * n);
  auto in = table.data();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= table.dim(0)) {
      throw ShapeError("gather_rows: row " + std::to_string(idx[i]) + " out of " + shape_str(table.shape()));
    }
    std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(idx[i] * n), n, out.begin() + static_cast<std::ptrdiff_t>(i * n));
  }
  bool track = tracking({&table});
  Tensor y = Tensor::from({idx.size(), n}, std::move(out), track);
  if (track) {
    ImplPtr ti = table.impl_ptr(), yi = y.impl_ptr();
    active_tape()->record(y, [ti, yi, n, idx = std::move(idx)] {
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < n; ++j) ti->grad[idx[i] * n + j] += yi->grad[i * n + j];
    });
  }
  return y;
}

Tensor sum(const Tensor& x) {
  auto in = x.data();
  const double total = std::accumulate(in.begin(), in.end(), 0.0);
  bool track = tracking({&x});
  Tensor y = Tensor::scalar(total, track);
  if (track) {
    ImplPtr xi = x.impl_ptr(), yi = y.impl_ptr();
    active_tape()->record(y, [xi, yi] {
      for (auto& g : xi->grad) g += yi->grad[0];
    });
  }
  return y;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) { return add_row(matmul(x, weight), bias); }

}  // namespace sslfuse
