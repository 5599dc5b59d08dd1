#include "cxr/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

namespace cxr::ops {
namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<Mat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const Mat<T>>;

template <typename T>
ConstMatMap<T> cmat(const std::vector<T>& v, std::size_t rows, std::size_t cols, std::size_t offset = 0) {
  return ConstMatMap<T>(v.data() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
template <typename T>
MatMap<T> mmat(std::vector<T>& v, std::size_t rows, std::size_t cols, std::size_t offset = 0) {
  return MatMap<T>(v.data() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

// Products are evaluated on aligned copies so results do not depend on where
// the operands happen to sit in memory.
template <typename T, typename Dst, typename A, typename B>
void gemm(Dst&& dst, const A& a, const B& b, bool accumulate) {
  const Mat<T> la = a;
  const Mat<T> lb = b;
  Mat<T> r(la.rows(), lb.cols());
  r.noalias() = la * lb;
  if (accumulate) dst += r;
  else dst = r;
}

void require(bool ok, const char* op, const Shape& a, const Shape& b, const char* detail = "") {
  if (!ok) throw ShapeError(op, a, b, detail);
}

template <typename T>
void require_same(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), op, a.shape(), b.shape());
}

// Splits a shape around `axis` into (outer, axis length, inner).
struct AxisSplit {
  std::size_t outer = 1, length = 1, inner = 1;
};
AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.length = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

// Rows of the last axis: (count, width).
std::pair<std::size_t, std::size_t> last_axis_rows(const Shape& shape) {
  const std::size_t width = shape.empty() ? 1 : shape.back();
  return {numel_of(shape) / width, width};
}

struct ConvGeom {
  std::size_t batch, channels, height, width, kernel, stride;
  std::ptrdiff_t pad_top, pad_left;
  std::size_t out_h, out_w;
  std::size_t positions() const { return out_h * out_w; }
  std::size_t col_rows() const { return channels * kernel * kernel; }
  std::size_t col_cols() const { return batch * positions(); }
};

ConvGeom conv_geometry(std::size_t batch, std::size_t channels, std::size_t h, std::size_t w,
                       std::size_t k, std::size_t stride, Padding padding) {
  ConvGeom g{batch, channels, h, w, k, stride, 0, 0, 0, 0};
  if (padding == Padding::same) {
    g.out_h = (h + stride - 1) / stride;
    g.out_w = (w + stride - 1) / stride;
    const std::ptrdiff_t pad_h =
        std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>((g.out_h - 1) * stride + k) -
                                        static_cast<std::ptrdiff_t>(h));
    const std::ptrdiff_t pad_w =
        std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>((g.out_w - 1) * stride + k) -
                                        static_cast<std::ptrdiff_t>(w));
    g.pad_top = pad_h / 2;
    g.pad_left = pad_w / 2;
  } else {
    g.out_h = (h - k) / stride + 1;
    g.out_w = (w - k) / stride + 1;
  }
  return g;
}

// x (B, C, H, W) -> cols (C*k*k, B*Ho*Wo)
template <typename T>
void im2col(const T* x, const ConvGeom& g, T* cols) {
  const std::size_t P = g.positions(), BP = g.col_cols();
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kernel; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel; ++kj) {
        T* row = cols + ((c * g.kernel + ki) * g.kernel + kj) * BP;
        for (std::size_t b = 0; b < g.batch; ++b) {
          const T* src = x + (b * g.channels + c) * g.height * g.width;
          T* dst = row + b * P;
          for (std::size_t oy = 0; oy < g.out_h; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - g.pad_top;
            T* d = dst + oy * g.out_w;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) {
              std::fill(d, d + g.out_w, T(0));
              continue;
            }
            const T* s = src + static_cast<std::size_t>(iy) * g.width;
            for (std::size_t ox = 0; ox < g.out_w; ++ox) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) - g.pad_left;
              d[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) ? T(0) : s[ix];
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates cols back into x.
template <typename T>
void col2im(const T* cols, const ConvGeom& g, T* x) {
  const std::size_t P = g.positions(), BP = g.col_cols();
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kernel; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel; ++kj) {
        const T* row = cols + ((c * g.kernel + ki) * g.kernel + kj) * BP;
        for (std::size_t b = 0; b < g.batch; ++b) {
          T* dst = x + (b * g.channels + c) * g.height * g.width;
          const T* src = row + b * P;
          for (std::size_t oy = 0; oy < g.out_h; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - g.pad_top;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
            T* d = dst + static_cast<std::size_t>(iy) * g.width;
            const T* s = src + oy * g.out_w;
            for (std::size_t ox = 0; ox < g.out_w; ++ox) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) - g.pad_left;
              if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.width)) d[ix] += s[ox];
            }
          }
        }
      }
    }
  }
}

// (B, C, P) <-> (C, B*P)
template <typename T>
void batch_major_to_channel_major(const T* src, std::size_t B, std::size_t C, std::size_t P, T* dst) {
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      std::copy_n(src + (b * C + c) * P, P, dst + c * B * P + b * P);
}
template <typename T>
void channel_major_to_batch_major(const T* src, std::size_t B, std::size_t C, std::size_t P, T* dst) {
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      std::copy_n(src + c * B * P + b * P, P, dst + (b * C + c) * P);
}

}  // namespace

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0), "matmul", a.shape(), b.shape());
  const std::size_t M = a.dim(0), K = a.dim(1), N = b.dim(1);
  std::vector<T> out(M * N);
  gemm<T>(mmat(out, M, N), cmat(a.node()->value, M, K), cmat(b.node()->value, K, N), false);
  return make_result<T>("matmul", {M, N}, std::move(out), {a, b}, [M, K, N](Node<T>& self) {
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    auto G = cmat(self.grad, M, N);
    if (A.requires_grad) gemm<T>(mmat(A.grad_buffer(), M, K), G, cmat(B.value, K, N).transpose(), true);
    if (B.requires_grad) gemm<T>(mmat(B.grad_buffer(), K, N), cmat(A.value, M, K).transpose(), G, true);
  });
}

template <typename T>
Tensor<T> similarity(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(1), "similarity", a.shape(), b.shape());
  const std::size_t M = a.dim(0), K = a.dim(1), N = b.dim(0);
  std::vector<T> out(M * N);
  gemm<T>(mmat(out, M, N), cmat(a.node()->value, M, K), cmat(b.node()->value, N, K).transpose(), false);
  return make_result<T>("similarity", {M, N}, std::move(out), {a, b}, [M, K, N](Node<T>& self) {
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    auto G = cmat(self.grad, M, N);
    if (A.requires_grad) gemm<T>(mmat(A.grad_buffer(), M, K), G, cmat(B.value, N, K), true);
    if (B.requires_grad) gemm<T>(mmat(B.grad_buffer(), N, K), G.transpose(), cmat(A.value, M, K), true);
  });
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b) {
  require(a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0), "bmm", a.shape(), b.shape());
  const std::size_t G = a.dim(0), M = a.dim(1), K = a.dim(2);
  const std::size_t N = transpose_b ? b.dim(1) : b.dim(2);
  require((transpose_b ? b.dim(2) : b.dim(1)) == K, "bmm", a.shape(), b.shape(), "inner dims differ");
  std::vector<T> out(G * M * N);
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  for (std::size_t g = 0; g < G; ++g) {
    auto C = mmat(out, M, N, g * M * N);
    auto A = cmat(av, M, K, g * M * K);
    if (transpose_b) gemm<T>(C, A, cmat(bv, N, K, g * N * K).transpose(), false);
    else gemm<T>(C, A, cmat(bv, K, N, g * K * N), false);
  }
  return make_result<T>("bmm", {G, M, N}, std::move(out), {a, b}, [G, M, K, N, transpose_b](Node<T>& self) {
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    for (std::size_t g = 0; g < G; ++g) {
      auto Gr = cmat(self.grad, M, N, g * M * N);
      if (A.requires_grad) {
        auto dA = mmat(A.grad_buffer(), M, K, g * M * K);
        if (transpose_b) gemm<T>(dA, Gr, cmat(B.value, N, K, g * N * K), true);
        else gemm<T>(dA, Gr, cmat(B.value, K, N, g * K * N).transpose(), true);
      }
      if (B.requires_grad) {
        auto Av = cmat(A.value, M, K, g * M * K);
        if (transpose_b) gemm<T>(mmat(B.grad_buffer(), N, K, g * N * K), Gr.transpose(), Av, true);
        else gemm<T>(mmat(B.grad_buffer(), K, N, g * K * N), Av.transpose(), Gr, true);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Convolution

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, std::size_t stride, Padding padding) {
  require(x.rank() == 4 && weight.rank() == 4 && weight.dim(1) == x.dim(1) && weight.dim(2) == weight.dim(3),
          "conv2d", x.shape(), weight.shape());
  require(stride > 0, "conv2d", x.shape(), weight.shape(), "stride must be positive");
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Co = weight.dim(0), k = weight.dim(2);
  if (padding == Padding::valid) {
    require(H >= k && W >= k, "conv2d", x.shape(), weight.shape(), "input smaller than kernel");
  }
  const ConvGeom g = conv_geometry(B, C, H, W, k, stride, padding);
  const std::size_t K = g.col_rows(), BP = g.col_cols(), P = g.positions();

  std::vector<T> cols(K * BP);
  im2col(x.node()->value.data(), g, cols.data());
  std::vector<T> out_cm(Co * BP);
  gemm<T>(mmat(out_cm, Co, BP), cmat(weight.node()->value, Co, K), cmat(cols, K, BP), false);
  std::vector<T> out(Co * BP);
  channel_major_to_batch_major(out_cm.data(), B, Co, P, out.data());

  const bool keep_cols = grad_enabled() && weight.requires_grad();
  if (!keep_cols) cols.clear();
  return make_result<T>(
      "conv2d", {B, Co, g.out_h, g.out_w}, std::move(out), {x, weight},
      [g, Co, cols = std::move(cols)](Node<T>& self) {
        auto& X = *self.inputs[0];
        auto& Wt = *self.inputs[1];
        const std::size_t K = g.col_rows(), BP = g.col_cols();
        std::vector<T> grad_cm(Co * BP);
        batch_major_to_channel_major(self.grad.data(), g.batch, Co, g.positions(), grad_cm.data());
        auto Gm = cmat(grad_cm, Co, BP);
        if (Wt.requires_grad) gemm<T>(mmat(Wt.grad_buffer(), Co, K), Gm, cmat(cols, K, BP).transpose(), true);
        if (X.requires_grad) {
          std::vector<T> dcols(K * BP);
          gemm<T>(mmat(dcols, K, BP), cmat(Wt.value, Co, K).transpose(), Gm, false);
          col2im(dcols.data(), g, X.grad_buffer().data());
        }
      });
}

template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& weight, std::size_t stride) {
  require(x.rank() == 4 && weight.rank() == 4 && weight.dim(0) == x.dim(1) && weight.dim(2) == weight.dim(3),
          "conv_transpose2d", x.shape(), weight.shape());
  require(stride > 0, "conv_transpose2d", x.shape(), weight.shape(), "stride must be positive");
  const std::size_t B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Co = weight.dim(1), k = weight.dim(2);
  const std::size_t Ho = (H - 1) * stride + k, Wo = (W - 1) * stride + k;
  // Geometry of the forward conv this op is the adjoint of.
  const ConvGeom g = conv_geometry(B, Co, Ho, Wo, k, stride, Padding::valid);
  const std::size_t K = g.col_rows(), BP = g.col_cols(), P = H * W;

  std::vector<T> x_cm(Ci * BP);
  batch_major_to_channel_major(x.node()->value.data(), B, Ci, P, x_cm.data());
  std::vector<T> cols(K * BP);
  gemm<T>(mmat(cols, K, BP), cmat(weight.node()->value, Ci, K).transpose(), cmat(x_cm, Ci, BP), false);
  std::vector<T> out(B * Co * Ho * Wo, T(0));
  col2im(cols.data(), g, out.data());

  return make_result<T>(
      "conv_transpose2d", {B, Co, Ho, Wo}, std::move(out), {x, weight},
      [g, Ci, P, x_cm = std::move(x_cm)](Node<T>& self) {
        auto& X = *self.inputs[0];
        auto& Wt = *self.inputs[1];
        const std::size_t K = g.col_rows(), BP = g.col_cols();
        std::vector<T> gcols(K * BP);
        im2col(self.grad.data(), g, gcols.data());
        if (Wt.requires_grad) gemm<T>(mmat(Wt.grad_buffer(), Ci, K), cmat(x_cm, Ci, BP), cmat(gcols, K, BP).transpose(), true);
        if (X.requires_grad) {
          std::vector<T> dx_cm(Ci * BP);
          gemm<T>(mmat(dx_cm, Ci, BP), cmat(Wt.value, Ci, K), cmat(gcols, K, BP), false);
          std::vector<T> dx(dx_cm.size());
          channel_major_to_batch_major(dx_cm.data(), g.batch, Ci, P, dx.data());
          auto& buf = X.grad_buffer();
          for (std::size_t i = 0; i < dx.size(); ++i) buf[i] += dx[i];
        }
      });
}

// ---------------------------------------------------------------------------
// Elementwise

namespace {
// Unary op whose derivative is expressible from (input, output).
template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(const char* name, const Tensor<T>& x, Fwd fwd, Deriv deriv) {
  const auto& xv = x.node()->value;
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  return make_result<T>(name, x.shape(), std::move(out), {x}, [deriv](Node<T>& self) {
    auto& X = *self.inputs[0];
    auto& dx = X.grad_buffer();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += self.grad[i] * deriv(X.value[i], self.value[i]);
  });
}
}  // namespace

namespace {
thread_local ReluSignRecorder* g_relu_recorder = nullptr;
}  // namespace

ReluSignRecorder::ReluSignRecorder() : previous_(g_relu_recorder) { g_relu_recorder = this; }
ReluSignRecorder::~ReluSignRecorder() { g_relu_recorder = previous_; }

double grad_check_relu_aware(const std::function<Tensor<double>(const Tensor<double>&)>& fn,
                             const Tensor<double>& point, double h) {
  Tensor<double> x = point.detach(true);
  std::vector<bool> base;
  {
    ReluSignRecorder rec;
    Tensor<double> loss = fn(x);
    base = rec.signs();
    backward(loss);
  }
  const std::vector<double> analytic(x.grad().begin(), x.grad().end());

  NoGradGuard no_grad;
  Tensor<double> probe = point.detach(false);
  auto values = probe.mutable_data();
  auto eval = [&](std::size_t i, double v, bool& same) {
    values[i] = v;
    ReluSignRecorder rec;
    const double out = fn(probe).item();
    same = same && rec.signs() == base;
    return out;
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double original = values[i];
    double numeric = 0.0;
    double step = h;
    for (int attempt = 0; attempt < 4; ++attempt, step /= 10.0) {
      bool same = true;
      const double plus = eval(i, original + step, same);
      const double minus = eval(i, original - step, same);
      numeric = (plus - minus) / (2.0 * step);
      if (same) break;
    }
    values[i] = original;
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  if (g_relu_recorder) {
    for (T v : x.data()) g_relu_recorder->note(v > T(0));
  }
  // Subgradient at exactly zero is 0.
  return unary<T>("relu", x, [](T v) { return v > T(0) ? v : T(0); },
                  [](T in, T) { return in > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary<T>(
      "sigmoid", x,
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return unary<T>("tanh", x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return unary<T>("scale", x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same("add", a, b);
  const auto &av = a.node()->value, &bv = b.node()->value;
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_result<T>("add", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    for (auto& in : self.inputs) {
      if (!in->requires_grad) continue;
      auto& d = in->grad_buffer();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same("sub", a, b);
  const auto &av = a.node()->value, &bv = b.node()->value;
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_result<T>("sub", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    if (A.requires_grad) {
      auto& d = A.grad_buffer();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
    }
    if (B.requires_grad) {
      auto& d = B.grad_buffer();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same("mul", a, b);
  const auto &av = a.node()->value, &bv = b.node()->value;
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result<T>("mul", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    if (A.requires_grad) {
      auto& d = A.grad_buffer();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i] * B.value[i];
    }
    if (B.requires_grad) {
      auto& d = B.grad_buffer();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i] * A.value[i];
    }
  });
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  require(x.rank() >= 1 && bias.rank() == 1 && x.shape().back() == bias.dim(0), "add_bias", x.shape(),
          bias.shape());
  const auto [rows, width] = last_axis_rows(x.shape());
  const auto &xv = x.node()->value, &bv = bias.node()->value;
  std::vector<T> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < width; ++j) out[r * width + j] = xv[r * width + j] + bv[j];
  return make_result<T>("add_bias", x.shape(), std::move(out), {x, bias}, [rows, width](Node<T>& self) {
    auto& X = *self.inputs[0];
    auto& Bs = *self.inputs[1];
    if (X.requires_grad) {
      auto& d = X.grad_buffer();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
    }
    if (Bs.requires_grad) {
      auto& d = Bs.grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < width; ++j) d[j] += self.grad[r * width + j];
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  double acc = 0.0;
  for (T v : x.node()->value) acc += v;
  return make_result<T>("sum", {}, {static_cast<T>(acc)}, {x}, [](Node<T>& self) {
    auto& d = self.inputs[0]->grad_buffer();
    for (auto& v : d) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  const std::size_t n = x.numel();
  double acc = 0.0;
  for (T v : x.node()->value) acc += v;
  return make_result<T>("mean", {}, {static_cast<T>(acc / static_cast<double>(n))}, {x}, [n](Node<T>& self) {
    auto& d = self.inputs[0]->grad_buffer();
    const T g = self.grad[0] / static_cast<T>(n);
    for (auto& v : d) v += g;
  });
}

template <typename T>
Tensor<T> sum_last(const Tensor<T>& x) {
  require(x.rank() >= 1, "sum_last", x.shape(), {});
  const auto [rows, width] = last_axis_rows(x.shape());
  const auto& xv = x.node()->value;
  std::vector<T> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t j = 0; j < width; ++j) acc += xv[r * width + j];
    out[r] = static_cast<T>(acc);
  }
  Shape shape = x.shape();
  shape.back() = 1;
  return make_result<T>("sum_last", std::move(shape), std::move(out), {x}, [rows, width](Node<T>& self) {
    auto& d = self.inputs[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < width; ++j) d[r * width + j] += self.grad[r];
  });
}

template <typename T>
Tensor<T> mean_pool(const Tensor<T>& x) {
  require(x.rank() == 4, "mean_pool", x.shape(), {});
  const std::size_t B = x.dim(0), C = x.dim(1), P = x.dim(2) * x.dim(3);
  const auto& xv = x.node()->value;
  std::vector<T> out(B * C);
  for (std::size_t i = 0; i < B * C; ++i) {
    double acc = 0.0;
    for (std::size_t p = 0; p < P; ++p) acc += xv[i * P + p];
    out[i] = static_cast<T>(acc / static_cast<double>(P));
  }
  return make_result<T>("mean_pool", {B, C}, std::move(out), {x}, [P](Node<T>& self) {
    auto& d = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const T g = self.grad[i] / static_cast<T>(P);
      for (std::size_t p = 0; p < P; ++p) d[i * P + p] += g;
    }
  });
}

// ---------------------------------------------------------------------------
// Layout

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  require(numel_of(shape) == x.numel(), "reshape", x.shape(), shape);
  return make_result<T>("reshape", std::move(shape), x.node()->value, {x}, [](Node<T>& self) {
    auto& d = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
  const std::size_t R = x.rank();
  std::vector<bool> seen(R, false);
  bool ok = axes.size() == R;
  for (auto a : axes) {
    ok = ok && a < R && !seen[a];
    if (a < R) seen[a] = true;
  }
  require(ok, "permute", x.shape(), Shape(axes.begin(), axes.end()), "axes must be a permutation");
  Shape out_shape(R);
  for (std::size_t i = 0; i < R; ++i) out_shape[i] = x.dim(axes[i]);
  std::vector<std::size_t> in_strides(R, 1);
  for (std::size_t i = R; i-- > 1;) in_strides[i - 1] = in_strides[i] * x.dim(i);

  const std::size_t n = x.numel();
  std::vector<std::size_t> source(n);
  std::vector<std::size_t> idx(R, 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < R; ++i) src += idx[i] * in_strides[axes[i]];
    source[flat] = src;
    for (std::size_t i = R; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  const auto& xv = x.node()->value;
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = xv[source[i]];
  return make_result<T>("permute", std::move(out_shape), std::move(out), {x},
                        [source = std::move(source)](Node<T>& self) {
                          auto& d = self.inputs[0]->grad_buffer();
                          for (std::size_t i = 0; i < source.size(); ++i) d[source[i]] += self.grad[i];
                        });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat", {}, {}, "no inputs");
  const Shape& first = parts.front().shape();
  require(axis < first.size(), "concat", first, {}, "axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    Shape a = p.shape(), b = first;
    bool ok = a.size() == b.size();
    if (ok) {
      a[axis] = b[axis] = 0;
      ok = a == b;
    }
    require(ok, "concat", first, p.shape());
    out_shape[axis] += p.dim(axis);
  }
  const AxisSplit s = split_at(out_shape, axis);
  std::vector<T> out(numel_of(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t chunk = p.dim(axis) * s.inner;
    const auto& pv = p.node()->value;
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy_n(pv.data() + o * chunk, chunk, out.data() + o * s.length * s.inner + offset * s.inner);
    offset += p.dim(axis);
  }
  return make_result<T>("concat", std::move(out_shape), std::move(out), parts,
                        [s, axis, offsets](Node<T>& self) {
                          for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                            auto& in = *self.inputs[k];
                            if (!in.requires_grad) continue;
                            const std::size_t chunk = in.shape[axis] * s.inner;
                            auto& d = in.grad_buffer();
                            for (std::size_t o = 0; o < s.outer; ++o) {
                              const T* g = self.grad.data() + o * s.length * s.inner + offsets[k] * s.inner;
                              T* dst = d.data() + o * chunk;
                              for (std::size_t i = 0; i < chunk; ++i) dst[i] += g[i];
                            }
                          }
                        });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length) {
  require(axis < x.rank() && length > 0 && start + length <= x.dim(axis), "slice", x.shape(),
          Shape{axis, start, length}, "axis/start/length out of range");
  const AxisSplit s = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  const std::size_t chunk = length * s.inner;
  std::vector<T> out(s.outer * chunk);
  const auto& xv = x.node()->value;
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(xv.data() + o * s.length * s.inner + start * s.inner, chunk, out.data() + o * chunk);
  return make_result<T>("slice", std::move(out_shape), std::move(out), {x}, [s, start, chunk](Node<T>& self) {
    auto& d = self.inputs[0]->grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o) {
      T* dst = d.data() + o * s.length * s.inner + start * s.inner;
      const T* g = self.grad.data() + o * chunk;
      for (std::size_t i = 0; i < chunk; ++i) dst[i] += g[i];
    }
  });
}

template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const int> ids) {
  require(table.rank() == 2 && !ids.empty(), "embedding", table.shape(), Shape{ids.size()});
  const std::size_t V = table.dim(0), D = table.dim(1);
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= V) {
      throw IndexError("embedding: token id " + std::to_string(id) + " outside vocabulary of size " +
                       std::to_string(V));
    }
  }
  const auto& tv = table.node()->value;
  std::vector<T> out(ids.size() * D);
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(tv.data() + static_cast<std::size_t>(ids[i]) * D, D, out.data() + i * D);
  std::vector<int> rows(ids.begin(), ids.end());
  return make_result<T>("embedding", {ids.size(), D}, std::move(out), {table},
                        [rows = std::move(rows), D](Node<T>& self) {
                          auto& d = self.inputs[0]->grad_buffer();
                          for (std::size_t i = 0; i < rows.size(); ++i) {
                            T* dst = d.data() + static_cast<std::size_t>(rows[i]) * D;
                            for (std::size_t j = 0; j < D; ++j) dst[j] += self.grad[i * D + j];
                          }
                        });
}

template <typename T>
Tensor<T> gather_cols(const Tensor<T>& x, std::span<const int> cols) {
  require(x.rank() == 2 && cols.size() == x.dim(0), "gather_cols", x.shape(), Shape{cols.size()});
  const std::size_t M = x.dim(0), N = x.dim(1);
  for (int c : cols) {
    if (c < 0 || static_cast<std::size_t>(c) >= N) throw IndexError("gather_cols: column out of range");
  }
  const auto& xv = x.node()->value;
  std::vector<T> out(M);
  for (std::size_t i = 0; i < M; ++i) out[i] = xv[i * N + static_cast<std::size_t>(cols[i])];
  std::vector<int> idx(cols.begin(), cols.end());
  return make_result<T>("gather_cols", {M}, std::move(out), {x}, [idx = std::move(idx), N](Node<T>& self) {
    auto& d = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i) d[i * N + static_cast<std::size_t>(idx[i])] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Normalization and probability

template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
  require(x.rank() >= 1, "softmax", x.shape(), {});
  const auto [rows, width] = last_axis_rows(x.shape());
  const auto& xv = x.node()->value;
  std::vector<T> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * width;
    T* o = out.data() + r * width;
    const T mx = *std::max_element(in, in + width);
    double total = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      o[j] = std::exp(in[j] - mx);
      total += o[j];
    }
    for (std::size_t j = 0; j < width; ++j) o[j] = static_cast<T>(o[j] / total);
  }
  return make_result<T>("softmax", x.shape(), std::move(out), {x}, [rows, width](Node<T>& self) {
    auto& d = self.inputs[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = self.value.data() + r * width;
      const T* g = self.grad.data() + r * width;
      double dot = 0.0;
      for (std::size_t j = 0; j < width; ++j) dot += static_cast<double>(g[j]) * y[j];
      for (std::size_t j = 0; j < width; ++j) d[r * width + j] += y[j] * (g[j] - static_cast<T>(dot));
    }
  });
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x) {
  require(x.rank() >= 1, "log_softmax", x.shape(), {});
  const auto [rows, width] = last_axis_rows(x.shape());
  const auto& xv = x.node()->value;
  std::vector<T> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * width;
    const T mx = *std::max_element(in, in + width);
    double total = 0.0;
    for (std::size_t j = 0; j < width; ++j) total += std::exp(static_cast<double>(in[j] - mx));
    const T lse = mx + static_cast<T>(std::log(total));
    for (std::size_t j = 0; j < width; ++j) out[r * width + j] = in[j] - lse;
  }
  return make_result<T>("log_softmax", x.shape(), std::move(out), {x}, [rows, width](Node<T>& self) {
    auto& d = self.inputs[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = self.value.data() + r * width;
      const T* g = self.grad.data() + r * width;
      double gsum = 0.0;
      for (std::size_t j = 0; j < width; ++j) gsum += g[j];
      for (std::size_t j = 0; j < width; ++j) d[r * width + j] += g[j] - std::exp(y[j]) * static_cast<T>(gsum);
    }
  });
}

template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& x) {
  require(x.rank() >= 1, "l2_normalize", x.shape(), {});
  const auto [rows, width] = last_axis_rows(x.shape());
  const auto& xv = x.node()->value;
  std::vector<T> out(xv.size());
  std::vector<T> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double sq = 0.0;
    for (std::size_t j = 0; j < width; ++j) sq += static_cast<double>(xv[r * width + j]) * xv[r * width + j];
    const double n = std::sqrt(sq);
    if (n < 1e-12) {
      throw DegenerateInputError("l2_normalize", "row " + std::to_string(r) + " has norm below 1e-12");
    }
    norms[r] = static_cast<T>(n);
    for (std::size_t j = 0; j < width; ++j) out[r * width + j] = static_cast<T>(xv[r * width + j] / n);
  }
  return make_result<T>("l2_normalize", x.shape(), std::move(out), {x},
                        [rows, width, norms = std::move(norms)](Node<T>& self) {
                          auto& d = self.inputs[0]->grad_buffer();
                          for (std::size_t r = 0; r < rows; ++r) {
                            const T* y = self.value.data() + r * width;
                            const T* g = self.grad.data() + r * width;
                            double dot = 0.0;
                            for (std::size_t j = 0; j < width; ++j) dot += static_cast<double>(y[j]) * g[j];
                            for (std::size_t j = 0; j < width; ++j)
                              d[r * width + j] += (g[j] - y[j] * static_cast<T>(dot)) / norms[r];
                          }
                        });
}

namespace {
// Shared normalization kernel: `groups` runs of `count` contiguous-by-index
// elements, each normalized to zero mean / unit variance. channel_of maps an
// element index to its affine parameter.
template <typename T, typename ChannelOf, typename IndexOf>
Tensor<T> normalize_groups(const char* name, const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                           std::size_t groups, std::size_t count, T eps, IndexOf index_of, ChannelOf channel_of) {
  const auto& xv = x.node()->value;
  const auto &gv = gamma.node()->value, &bv = beta.node()->value;
  std::vector<T> out(xv.size());
  std::vector<T> xhat(xv.size());
  std::vector<T> rstd(groups);
  for (std::size_t grp = 0; grp < groups; ++grp) {
    double mu = 0.0;
    for (std::size_t i = 0; i < count; ++i) mu += xv[index_of(grp, i)];
    mu /= static_cast<double>(count);
    double var = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
      const double c = xv[index_of(grp, i)] - mu;
      var += c * c;
    }
    var /= static_cast<double>(count);
    const double rs = 1.0 / std::sqrt(var + static_cast<double>(eps));
    rstd[grp] = static_cast<T>(rs);
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t at = index_of(grp, i);
      xhat[at] = static_cast<T>((xv[at] - mu) * rs);
      const std::size_t ch = channel_of(at);
      out[at] = gv[ch] * xhat[at] + bv[ch];
    }
  }
  return make_result<T>(
      name, x.shape(), std::move(out), {x, gamma, beta},
      [groups, count, index_of, channel_of, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& self) {
        auto& X = *self.inputs[0];
        auto& Gm = *self.inputs[1];
        auto& Bt = *self.inputs[2];
        const auto& g = self.grad;
        if (Gm.requires_grad || Bt.requires_grad) {
          auto& dg = Gm.grad_buffer();
          auto& db = Bt.grad_buffer();
          for (std::size_t at = 0; at < g.size(); ++at) {
            const std::size_t ch = channel_of(at);
            dg[ch] += g[at] * xhat[at];
            db[ch] += g[at];
          }
        }
        if (!X.requires_grad) return;
        auto& dx = X.grad_buffer();
        for (std::size_t grp = 0; grp < groups; ++grp) {
          double mean_d = 0.0, mean_dx = 0.0;
          for (std::size_t i = 0; i < count; ++i) {
            const std::size_t at = index_of(grp, i);
            const double dxh = static_cast<double>(g[at]) * Gm.value[channel_of(at)];
            mean_d += dxh;
            mean_dx += dxh * xhat[at];
          }
          mean_d /= static_cast<double>(count);
          mean_dx /= static_cast<double>(count);
          for (std::size_t i = 0; i < count; ++i) {
            const std::size_t at = index_of(grp, i);
            const double dxh = static_cast<double>(g[at]) * Gm.value[channel_of(at)];
            dx[at] += static_cast<T>(rstd[grp] * (dxh - mean_d - xhat[at] * mean_dx));
          }
        }
      });
}
}  // namespace

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  require(x.rank() >= 1 && gamma.shape() == Shape{x.shape().back()} && beta.shape() == gamma.shape(),
          "layer_norm", x.shape(), gamma.shape());
  const auto [rows, width] = last_axis_rows(x.shape());
  return normalize_groups<T>(
      "layer_norm", x, gamma, beta, rows, width, eps, [width](std::size_t grp, std::size_t i) { return grp * width + i; },
      [width](std::size_t at) { return at % width; });
}

template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, std::size_t groups, T eps) {
  require(x.rank() == 4 && gamma.shape() == Shape{x.dim(1)} && beta.shape() == gamma.shape(), "group_norm",
          x.shape(), gamma.shape());
  const std::size_t B = x.dim(0), C = x.dim(1), P = x.dim(2) * x.dim(3);
  require(groups > 0 && C % groups == 0, "group_norm", x.shape(), Shape{groups}, "channels not divisible by groups");
  const std::size_t per_group = (C / groups) * P;
  // Channels of one group are contiguous in (B, C, H, W) layout.
  return normalize_groups<T>(
      "group_norm", x, gamma, beta, B * groups, per_group, eps,
      [per_group](std::size_t grp, std::size_t i) { return grp * per_group + i; },
      [C, P](std::size_t at) { return (at / P) % C; });
}

template <typename T>
Tensor<T> causal_mask(const Tensor<T>& scores) {
  require(scores.rank() == 3 && scores.dim(1) == scores.dim(2), "causal_mask", scores.shape(), {});
  const std::size_t G = scores.dim(0), n = scores.dim(1);
  std::vector<T> out = scores.node()->value;
  for (std::size_t g = 0; g < G; ++g)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) out[(g * n + i) * n + j] = T(-1e9);
  return make_result<T>("causal_mask", scores.shape(), std::move(out), {scores}, [G, n](Node<T>& self) {
    auto& d = self.inputs[0]->grad_buffer();
    for (std::size_t g = 0; g < G; ++g)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j <= i; ++j) d[(g * n + i) * n + j] += self.grad[(g * n + i) * n + j];
  });
}

// ---------------------------------------------------------------------------
// Losses

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> targets, int ignore_index) {
  require(logits.rank() == 2 && targets.size() == logits.dim(0), "cross_entropy", logits.shape(),
          Shape{targets.size()});
  const std::size_t M = logits.dim(0), V = logits.dim(1);
  const auto& xv = logits.node()->value;
  std::vector<T> probs(xv.size());
  std::size_t count = 0;
  double total = 0.0;
  for (std::size_t r = 0; r < M; ++r) {
    const int t = targets[r];
    if (t == ignore_index) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= V) {
      throw IndexError("cross_entropy: target " + std::to_string(t) + " outside " + std::to_string(V) + " classes");
    }
    const T* row = xv.data() + r * V;
    const T mx = *std::max_element(row, row + V);
    double z = 0.0;
    for (std::size_t j = 0; j < V; ++j) z += std::exp(static_cast<double>(row[j] - mx));
    for (std::size_t j = 0; j < V; ++j) probs[r * V + j] = static_cast<T>(std::exp(static_cast<double>(row[j] - mx)) / z);
    total += (static_cast<double>(mx) + std::log(z)) - row[t];
    ++count;
  }
  if (count == 0) throw DegenerateInputError("cross_entropy", "every target is ignored");
  std::vector<int> tgt(targets.begin(), targets.end());
  return make_result<T>("cross_entropy", {}, {static_cast<T>(total / static_cast<double>(count))}, {logits},
                        [M, V, count, ignore_index, tgt = std::move(tgt), probs = std::move(probs)](Node<T>& self) {
                          auto& d = self.inputs[0]->grad_buffer();
                          const T g = self.grad[0] / static_cast<T>(count);
                          for (std::size_t r = 0; r < M; ++r) {
                            if (tgt[r] == ignore_index) continue;
                            for (std::size_t j = 0; j < V; ++j) d[r * V + j] += g * probs[r * V + j];
                            d[r * V + static_cast<std::size_t>(tgt[r])] -= g;
                          }
                        });
}

template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, std::span<const T> targets) {
  require(targets.size() == logits.numel(), "bce_with_logits", logits.shape(), Shape{targets.size()});
  const auto& xv = logits.node()->value;
  const std::size_t n = xv.size();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = xv[i], t = targets[i];
    total += std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x)));
  }
  std::vector<T> tgt(targets.begin(), targets.end());
  return make_result<T>("bce_with_logits", {}, {static_cast<T>(total / static_cast<double>(n))}, {logits},
                        [n, tgt = std::move(tgt)](Node<T>& self) {
                          auto& X = *self.inputs[0];
                          auto& d = X.grad_buffer();
                          const T g = self.grad[0] / static_cast<T>(n);
                          for (std::size_t i = 0; i < n; ++i) {
                            const T x = X.value[i];
                            const T s = x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
                            d[i] += g * (s - tgt[i]);
                          }
                        });
}

// ---------------------------------------------------------------------------

#define CXR_INSTANTIATE_OPS(T)                                                                        \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                      \
  template Tensor<T> similarity(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> bmm(const Tensor<T>&, const Tensor<T>&, bool);                                   \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, std::size_t, Padding);                \
  template Tensor<T> conv_transpose2d(const Tensor<T>&, const Tensor<T>&, std::size_t);               \
  template Tensor<T> relu(const Tensor<T>&);                                                          \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                       \
  template Tensor<T> tanh(const Tensor<T>&);                                                          \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                         \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                         \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                         \
  template Tensor<T> scale(const Tensor<T>&, T);                                                      \
  template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> sum(const Tensor<T>&);                                                           \
  template Tensor<T> mean(const Tensor<T>&);                                                          \
  template Tensor<T> sum_last(const Tensor<T>&);                                                      \
  template Tensor<T> mean_pool(const Tensor<T>&);                                                     \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                                \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);                      \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                              \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);                  \
  template Tensor<T> embedding(const Tensor<T>&, std::span<const int>);                               \
  template Tensor<T> gather_cols(const Tensor<T>&, std::span<const int>);                             \
  template Tensor<T> softmax(const Tensor<T>&);                                                       \
  template Tensor<T> log_softmax(const Tensor<T>&);                                                   \
  template Tensor<T> l2_normalize(const Tensor<T>&);                                                  \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);             \
  template Tensor<T> group_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, T); \
  template Tensor<T> causal_mask(const Tensor<T>&);                                                   \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const int>, int);                      \
  template Tensor<T> bce_with_logits(const Tensor<T>&, std::span<const T>);

CXR_INSTANTIATE_OPS(float)
CXR_INSTANTIATE_OPS(double)

}  // namespace cxr::ops
