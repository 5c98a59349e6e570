#include "occ/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace occ {

namespace {

using ConstRowMap = Eigen::Map<const RowMatrix>;
using RowMap = Eigen::Map<RowMatrix>;

constexpr double kAlmostOne = 1.0 - 0x1p-53;
constexpr double kBceLo = 1e-7;
constexpr double kBceHi = 1.0 - 1e-7;

void require_rank(const Tensor& t, int rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     to_string(t.shape()));
  }
}

bool tracked(const Tensor& t) { return t.defined() && t.requires_grad(); }

// cols is (C*k*k) x (out_h*out_w), row-major.
// Output columns [lo, hi) whose input column ow * stride + offset is in range.
void valid_columns(int offset, int stride, int width, int out_w, int& lo, int& hi) {
  lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
  hi = width - 1 - offset >= 0 ? (width - 1 - offset) / stride + 1 : 0;
  hi = std::min(hi, out_w);
  lo = std::min(lo, hi);
}

void im2col(const double* x, int channels, int height, int width, int k, const ConvParams& p,
            int out_h, int out_w, double* cols) {
  const int plane = out_h * out_w;
  for (int c = 0; c < channels; ++c) {
    const double* xc = x + static_cast<std::ptrdiff_t>(c) * height * width;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        double* row = cols + static_cast<std::ptrdiff_t>((c * k + ki) * k + kj) * plane;
        const int offset = kj * p.dilation - p.padding;
        int lo = 0, hi = 0;
        valid_columns(offset, p.stride, width, out_w, lo, hi);
        for (int oh = 0; oh < out_h; ++oh) {
          const int ih = oh * p.stride - p.padding + ki * p.dilation;
          double* dst = row + oh * out_w;
          if (ih < 0 || ih >= height) {
            std::fill(dst, dst + out_w, 0.0);
            continue;
          }
          const double* src = xc + static_cast<std::ptrdiff_t>(ih) * width;
          std::fill(dst, dst + lo, 0.0);
          if (p.stride == 1) {
            std::copy(src + lo + offset, src + hi + offset, dst + lo);
          } else {
            for (int ow = lo; ow < hi; ++ow) dst[ow] = src[ow * p.stride + offset];
          }
          std::fill(dst + hi, dst + out_w, 0.0);
        }
      }
    }
  }
}

// Scatter-add counterpart of im2col.
void col2im(const double* cols, int channels, int height, int width, int k, const ConvParams& p,
            int out_h, int out_w, double* x) {
  const int plane = out_h * out_w;
  for (int c = 0; c < channels; ++c) {
    double* xc = x + static_cast<std::ptrdiff_t>(c) * height * width;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const double* row = cols + static_cast<std::ptrdiff_t>((c * k + ki) * k + kj) * plane;
        const int offset = kj * p.dilation - p.padding;
        int lo = 0, hi = 0;
        valid_columns(offset, p.stride, width, out_w, lo, hi);
        for (int oh = 0; oh < out_h; ++oh) {
          const int ih = oh * p.stride - p.padding + ki * p.dilation;
          if (ih < 0 || ih >= height) continue;
          const double* src = row + oh * out_w;
          double* dst = xc + static_cast<std::ptrdiff_t>(ih) * width;
          if (p.stride == 1) {
            for (int ow = lo; ow < hi; ++ow) dst[ow + offset] += src[ow];
          } else {
            for (int ow = lo; ow < hi; ++ow) dst[ow * p.stride + offset] += src[ow];
          }
        }
      }
    }
  }
}

void check_bias(const Tensor& bias, int channels, const char* op) {
  if (bias.defined() && bias.size() != channels) {
    throw ShapeError(std::string(op) + ": bias has " + std::to_string(bias.size()) +
                     " entries, expected " + std::to_string(channels));
  }
}

void add_channel_bias(Tensor& y, const Tensor& bias) {
  if (!bias.defined()) return;
  const int n = y.dim(0), c = y.dim(1);
  const Eigen::Index plane = y.size() / (static_cast<Eigen::Index>(n) * c);
  for (int i = 0; i < n; ++i) {
    RowMap block(y.data() + static_cast<std::ptrdiff_t>(i) * c * plane, c, plane);
    block.colwise() += bias.values();
  }
}

void accumulate_bias_grad(Tensor bias, const Vector& g, int n, int c) {
  if (!tracked(bias)) return;
  const Eigen::Index plane = g.size() / (static_cast<Eigen::Index>(n) * c);
  Vector& db = bias.grad_buffer();
  for (int i = 0; i < n; ++i) {
    ConstRowMap block(g.data() + static_cast<std::ptrdiff_t>(i) * c * plane, c, plane);
    db += block.rowwise().sum();
  }
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape() == b.shape(); }

void check_broadcast(const Tensor& a, const Tensor& b, const char* op) {
  if (!same_shape(a, b) && b.size() != 1) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a.shape()) + " and " +
                     to_string(b.shape()));
  }
}

}  // namespace

const char* activation_name(Activation kind) {
  switch (kind) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::leaky_relu: return "leaky_relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::tanh: return "tanh";
    case Activation::elu: return "elu";
  }
  return "?";
}

Activation parse_activation(const std::string& name) {
  for (Activation a : {Activation::identity, Activation::relu, Activation::leaky_relu,
                       Activation::sigmoid, Activation::tanh, Activation::elu}) {
    if (name == activation_name(a)) return a;
  }
  throw ConfigError("unknown activation '" + name + "'");
}

int conv_output_extent(int input, int kernel, const ConvParams& p) {
  const int span = input + 2 * p.padding - (kernel - 1) * p.dilation - 1;
  if (span < 0) return 0;
  return span / p.stride + 1;
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, ConvParams params) {
  require_rank(input, 4, "conv2d");
  require_rank(weight, 4, "conv2d");
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int o = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != c) {
    throw ShapeError("conv2d: input has " + std::to_string(c) + " channels, weight expects " +
                     std::to_string(weight.dim(1)));
  }
  if (weight.dim(3) != k) throw ShapeError("conv2d: kernel must be square");
  if (params.stride < 1 || params.dilation < 1 || params.padding < 0) {
    throw ShapeError("conv2d: stride and dilation must be >= 1, padding >= 0");
  }
  check_bias(bias, o, "conv2d");
  const int oh = conv_output_extent(h, k, params), ow = conv_output_extent(w, k, params);
  if (oh < 1 || ow < 1) {
    throw ShapeError("conv2d: empty output for input " + to_string(input.shape()) + " and kernel " +
                     std::to_string(k));
  }
  const int ckk = c * k * k, plane = oh * ow;
  Tensor y({n, o, oh, ow});
  RowMatrix cols(ckk, plane);
  ConstRowMap wm(weight.data(), o, ckk);
  for (int i = 0; i < n; ++i) {
    im2col(input.data() + static_cast<std::ptrdiff_t>(i) * c * h * w, c, h, w, k, params, oh, ow,
           cols.data());
    RowMap out(y.data() + static_cast<std::ptrdiff_t>(i) * o * plane, o, plane);
    out.noalias() = wm * cols;
  }
  add_channel_bias(y, bias);
  detail::check_finite(y, "conv2d");

  if (detail::should_record({&input, &weight, &bias})) {
    detail::record(y, [input, weight, bias, params, n, c, h, w, o, k, oh, ow](const Vector& g) mutable {
      const int ckk = c * k * k, plane = oh * ow;
      ConstRowMap wm(weight.data(), o, ckk);
      RowMatrix cols(ckk, plane);
      for (int i = 0; i < n; ++i) {
        ConstRowMap gout(g.data() + static_cast<std::ptrdiff_t>(i) * o * plane, o, plane);
        if (tracked(weight)) {
          im2col(input.data() + static_cast<std::ptrdiff_t>(i) * c * h * w, c, h, w, k, params, oh,
                 ow, cols.data());
          RowMap dw(weight.grad_buffer().data(), o, ckk);
          dw.noalias() += gout * cols.transpose();
        }
        if (tracked(input)) {
          cols.noalias() = wm.transpose() * gout;
          col2im(cols.data(), c, h, w, k, params, oh, ow,
                 input.grad_buffer().data() + static_cast<std::ptrdiff_t>(i) * c * h * w);
        }
      }
      accumulate_bias_grad(bias, g, n, o);
    });
  }
  return y;
}

Tensor conv2d_transposed(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride,
                         int padding) {
  require_rank(input, 4, "conv2d_transposed");
  require_rank(weight, 4, "conv2d_transposed");
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int o = weight.dim(1), k = weight.dim(2);
  if (weight.dim(0) != c) {
    throw ShapeError("conv2d_transposed: input has " + std::to_string(c) +
                     " channels, weight expects " + std::to_string(weight.dim(0)));
  }
  if (weight.dim(3) != k) throw ShapeError("conv2d_transposed: kernel must be square");
  if (stride < 1 || padding < 0) throw ShapeError("conv2d_transposed: stride must be >= 1");
  check_bias(bias, o, "conv2d_transposed");
  const int oh = (h - 1) * stride - 2 * padding + k;
  const int ow = (w - 1) * stride - 2 * padding + k;
  if (oh < 1 || ow < 1) throw ShapeError("conv2d_transposed: empty output extent");
  const ConvParams params{stride, padding, 1};
  const int okk = o * k * k, plane = h * w;

  Tensor y({n, o, oh, ow});
  ConstRowMap wm(weight.data(), c, okk);
  RowMatrix cols(okk, plane);
  for (int i = 0; i < n; ++i) {
    ConstRowMap x(input.data() + static_cast<std::ptrdiff_t>(i) * c * plane, c, plane);
    cols.noalias() = wm.transpose() * x;
    col2im(cols.data(), o, oh, ow, k, params, h, w,
           y.data() + static_cast<std::ptrdiff_t>(i) * o * oh * ow);
  }
  add_channel_bias(y, bias);
  detail::check_finite(y, "conv2d_transposed");

  if (detail::should_record({&input, &weight, &bias})) {
    detail::record(y, [input, weight, bias, params, n, c, h, w, o, k, oh, ow](const Vector& g) mutable {
      const int okk = o * k * k, plane = h * w;
      ConstRowMap wm(weight.data(), c, okk);
      RowMatrix cols(okk, plane);
      for (int i = 0; i < n; ++i) {
        im2col(g.data() + static_cast<std::ptrdiff_t>(i) * o * oh * ow, o, oh, ow, k, params, h, w,
               cols.data());
        if (tracked(input)) {
          RowMap dx(input.grad_buffer().data() + static_cast<std::ptrdiff_t>(i) * c * plane, c,
                    plane);
          dx.noalias() += wm * cols;
        }
        if (tracked(weight)) {
          ConstRowMap x(input.data() + static_cast<std::ptrdiff_t>(i) * c * plane, c, plane);
          RowMap dw(weight.grad_buffer().data(), c, okk);
          dw.noalias() += x * cols.transpose();
        }
      }
      accumulate_bias_grad(bias, g, n, o);
    });
  }
  return y;
}

Tensor max_pool2(const Tensor& input) {
  require_rank(input, 4, "max_pool2");
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h % 2 || w % 2) throw ShapeError("max_pool2: odd spatial extent " + to_string(input.shape()));
  const int oh = h / 2, ow = w / 2;
  Tensor y({n, c, oh, ow});
  std::vector<Eigen::Index> argmax(static_cast<std::size_t>(y.size()));
  const double* x = input.data();
  Eigen::Index out = 0;
  for (int plane = 0; plane < n * c; ++plane) {
    const Eigen::Index base = static_cast<Eigen::Index>(plane) * h * w;
    for (int i = 0; i < oh; ++i) {
      for (int j = 0; j < ow; ++j, ++out) {
        Eigen::Index best = base + (2 * i) * w + 2 * j;
        for (Eigen::Index cand : {best + 1, best + w, best + w + 1}) {
          if (x[cand] > x[best]) best = cand;
        }
        argmax[out] = best;
        y.data()[out] = x[best];
      }
    }
  }
  if (detail::should_record({&input})) {
    detail::record(y, [input, argmax = std::move(argmax)](const Vector& g) mutable {
      Vector& dx = input.grad_buffer();
      for (std::size_t i = 0; i < argmax.size(); ++i) dx[argmax[i]] += g[static_cast<Eigen::Index>(i)];
    });
  }
  return y;
}

Tensor avg_pool2(const Tensor& input) {
  require_rank(input, 4, "avg_pool2");
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h % 2 || w % 2) throw ShapeError("avg_pool2: odd spatial extent " + to_string(input.shape()));
  const int oh = h / 2, ow = w / 2;
  Tensor y({n, c, oh, ow});
  const double* x = input.data();
  Eigen::Index out = 0;
  for (int plane = 0; plane < n * c; ++plane) {
    const Eigen::Index base = static_cast<Eigen::Index>(plane) * h * w;
    for (int i = 0; i < oh; ++i) {
      for (int j = 0; j < ow; ++j, ++out) {
        const Eigen::Index tl = base + (2 * i) * w + 2 * j;
        y.data()[out] = 0.25 * (x[tl] + x[tl + 1] + x[tl + w] + x[tl + w + 1]);
      }
    }
  }
  if (detail::should_record({&input})) {
    detail::record(y, [input, n, c, oh, ow, h, w](const Vector& g) {
      Vector& dx = input.grad_buffer();
      Eigen::Index out = 0;
      for (int plane = 0; plane < n * c; ++plane) {
        const Eigen::Index base = static_cast<Eigen::Index>(plane) * h * w;
        for (int i = 0; i < oh; ++i) {
          for (int j = 0; j < ow; ++j, ++out) {
            const Eigen::Index tl = base + (2 * i) * w + 2 * j;
            const double q = 0.25 * g[out];
            dx[tl] += q;
            dx[tl + 1] += q;
            dx[tl + w] += q;
            dx[tl + w + 1] += q;
          }
        }
      }
    });
  }
  return y;
}

Tensor upsample_nearest2(const Tensor& input) {
  require_rank(input, 4, "upsample_nearest2");
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int oh = 2 * h, ow = 2 * w;
  Tensor y({n, c, oh, ow});
  for (int plane = 0; plane < n * c; ++plane) {
    const double* src = input.data() + static_cast<std::ptrdiff_t>(plane) * h * w;
    double* dst = y.data() + static_cast<std::ptrdiff_t>(plane) * oh * ow;
    for (int i = 0; i < oh; ++i) {
      for (int j = 0; j < ow; ++j) dst[i * ow + j] = src[(i / 2) * w + j / 2];
    }
  }
  if (detail::should_record({&input})) {
    detail::record(y, [input, n, c, h, w](const Vector& g) mutable {
      const int oh = 2 * h, ow = 2 * w;
      Vector& dx = input.grad_buffer();
      for (int plane = 0; plane < n * c; ++plane) {
        const double* src = g.data() + static_cast<std::ptrdiff_t>(plane) * oh * ow;
        double* dst = dx.data() + static_cast<std::ptrdiff_t>(plane) * h * w;
        for (int i = 0; i < oh; ++i) {
          for (int j = 0; j < ow; ++j) dst[(i / 2) * w + j / 2] += src[i * ow + j];
        }
      }
    });
  }
  return y;
}

Tensor activation(const Tensor& input, Activation kind) {
  const Vector& x = input.values();
  Vector y(x.size());
  switch (kind) {
    case Activation::identity:
      y = x;
      break;
    case Activation::relu:
      y = x.cwiseMax(0.0);
      break;
    case Activation::leaky_relu:
      y = x.unaryExpr([](double v) { return v > 0.0 ? v : 0.2 * v; });
      break;
    case Activation::sigmoid:
      // Upper clamp keeps the range open: 1/(1+e^-x) rounds to 1 beyond x ~ 37.
      y = x.unaryExpr([](double v) {
        const double s = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        return std::min(s, kAlmostOne);
      });
      break;
    case Activation::tanh:
      y = x.unaryExpr([](double v) { return std::clamp(std::tanh(v), -kAlmostOne, kAlmostOne); });
      break;
    case Activation::elu:
      y = x.unaryExpr([](double v) { return v > 0.0 ? v : std::expm1(v); });
      break;
  }
  Tensor out(input.shape(), std::move(y));
  detail::check_finite(out, activation_name(kind));
  if (detail::should_record({&input})) {
    // Holding the output handle is safe: ops never mutate their results.
    Tensor result = out;
    detail::record(out, [input, result, kind](const Vector& g) mutable {
      const Vector& x = input.values();
      const Vector& y = result.values();
      Vector& dx = input.grad_buffer();
      switch (kind) {
        case Activation::identity: dx += g; break;
        case Activation::relu:
          dx += (x.array() > 0.0).select(g, 0.0);
          break;
        case Activation::leaky_relu:
          dx += (x.array() > 0.0).select(g, 0.2 * g);
          break;
        case Activation::sigmoid:
          dx.array() += g.array() * y.array() * (1.0 - y.array());
          break;
        case Activation::tanh:
          dx.array() += g.array() * (1.0 - y.array().square());
          break;
        case Activation::elu:
          dx.array() += g.array() * (x.array() > 0.0).select(Eigen::ArrayXd::Ones(x.size()), y.array() + 1.0);
          break;
      }
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_broadcast(a, b, "add");
  const bool scalar_b = !same_shape(a, b);
  Vector y = scalar_b ? Vector(a.values().array() + b.values()[0]) : Vector(a.values() + b.values());
  Tensor out(a.shape(), std::move(y));
  detail::check_finite(out, "add");
  if (detail::should_record({&a, &b})) {
    detail::record(out, [a, b, scalar_b](const Vector& g) mutable {
      if (tracked(a)) a.grad_buffer() += g;
      if (tracked(b)) {
        if (scalar_b) b.grad_buffer()[0] += g.sum();
        else b.grad_buffer() += g;
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_broadcast(a, b, "sub");
  const bool scalar_b = !same_shape(a, b);
  Vector y = scalar_b ? Vector(a.values().array() - b.values()[0]) : Vector(a.values() - b.values());
  Tensor out(a.shape(), std::move(y));
  detail::check_finite(out, "sub");
  if (detail::should_record({&a, &b})) {
    detail::record(out, [a, b, scalar_b](const Vector& g) mutable {
      if (tracked(a)) a.grad_buffer() += g;
      if (tracked(b)) {
        if (scalar_b) b.grad_buffer()[0] -= g.sum();
        else b.grad_buffer() -= g;
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_broadcast(a, b, "mul");
  const bool scalar_b = !same_shape(a, b);
  Vector y = scalar_b ? Vector(a.values() * b.values()[0])
                      : Vector(a.values().cwiseProduct(b.values()));
  Tensor out(a.shape(), std::move(y));
  detail::check_finite(out, "mul");
  if (detail::should_record({&a, &b})) {
    detail::record(out, [a, b, scalar_b](const Vector& g) mutable {
      if (tracked(a)) {
        if (scalar_b) a.grad_buffer() += g * b.values()[0];
        else a.grad_buffer() += g.cwiseProduct(b.values());
      }
      if (tracked(b)) {
        if (scalar_b) b.grad_buffer()[0] += g.dot(a.values());
        else b.grad_buffer() += g.cwiseProduct(a.values());
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double factor) {
  Tensor out(a.shape(), Vector(a.values() * factor));
  detail::check_finite(out, "scale");
  if (detail::should_record({&a})) {
    detail::record(out, [a, factor](const Vector& g) mutable { a.grad_buffer() += g * factor; });
  }
  return out;
}

Tensor add_scalar(const Tensor& a, double offset) {
  Tensor out(a.shape(), Vector(a.values().array() + offset));
  detail::check_finite(out, "add_scalar");
  if (detail::should_record({&a})) {
    detail::record(out, [a](const Vector& g) mutable { a.grad_buffer() += g; });
  }
  return out;
}

Tensor square(const Tensor& a) {
  Tensor out(a.shape(), Vector(a.values().array().square()));
  detail::check_finite(out, "square");
  if (detail::should_record({&a})) {
    detail::record(out, [a](const Vector& g) mutable {
      a.grad_buffer() += 2.0 * g.cwiseProduct(a.values());
    });
  }
  return out;
}

Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Tensor& first = parts.front();
  if (first.rank() < 2) throw ShapeError("concat: inputs need a channel axis");
  const int n = first.dim(0);
  Shape out_shape = first.shape();
  out_shape[1] = 0;
  for (const Tensor& p : parts) {
    Shape s = p.shape();
    if (static_cast<int>(s.size()) != first.rank() || s[0] != n ||
        !std::equal(s.begin() + 2, s.end(), first.shape().begin() + 2)) {
      throw ShapeError("concat: incompatible shapes " + to_string(first.shape()) + " and " +
                       to_string(s));
    }
    out_shape[1] += s[1];
  }
  Tensor out(out_shape);
  const Eigen::Index out_stride = out.size() / n;
  Eigen::Index offset = 0;
  std::vector<Eigen::Index> offsets;
  for (const Tensor& p : parts) {
    const Eigen::Index block = p.size() / n;
    for (int i = 0; i < n; ++i) {
      out.values().segment(i * out_stride + offset, block) = p.values().segment(i * block, block);
    }
    offsets.push_back(offset);
    offset += block;
  }
  bool record = false;
  for (const Tensor& p : parts) record = record || detail::should_record({&p});
  if (record) {
    detail::record(out, [parts, offsets, n, out_stride](const Vector& g) mutable {
      for (std::size_t k = 0; k < parts.size(); ++k) {
        if (!tracked(parts[k])) continue;
        const Eigen::Index block = parts[k].size() / n;
        Vector& dp = parts[k].grad_buffer();
        for (int i = 0; i < n; ++i) {
          dp.segment(i * block, block) += g.segment(i * out_stride + offsets[k], block);
        }
      }
    });
  }
  return out;
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape: " + to_string(a.shape()) + " to " + to_string(shape));
  }
  Tensor out(std::move(shape), a.values());
  if (detail::should_record({&a})) {
    detail::record(out, [a](const Vector& g) mutable { a.grad_buffer() += g; });
  }
  return out;
}

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_a, bool transpose_b) {
  require_rank(a, 3, "bmm");
  require_rank(b, 3, "bmm");
  const int batch = a.dim(0);
  if (b.dim(0) != batch) throw ShapeError("bmm: batch mismatch");
  const int ar = a.dim(1), ac = a.dim(2), br = b.dim(1), bc = b.dim(2);
  const int m = transpose_a ? ac : ar, k = transpose_a ? ar : ac;
  const int kb = transpose_b ? bc : br, nn = transpose_b ? br : bc;
  if (k != kb) {
    throw ShapeError("bmm: inner extents differ for " + to_string(a.shape()) + " and " +
                     to_string(b.shape()));
  }
  Tensor out({batch, m, nn});
  for (int i = 0; i < batch; ++i) {
    ConstRowMap am(a.data() + static_cast<std::ptrdiff_t>(i) * ar * ac, ar, ac);
    ConstRowMap bm(b.data() + static_cast<std::ptrdiff_t>(i) * br * bc, br, bc);
    RowMap cm(out.data() + static_cast<std::ptrdiff_t>(i) * m * nn, m, nn);
    if (transpose_a && transpose_b) cm.noalias() = am.transpose() * bm.transpose();
    else if (transpose_a) cm.noalias() = am.transpose() * bm;
    else if (transpose_b) cm.noalias() = am * bm.transpose();
    else cm.noalias() = am * bm;
  }
  detail::check_finite(out, "bmm");
  if (detail::should_record({&a, &b})) {
    detail::record(out, [a, b, transpose_a, transpose_b, batch, ar, ac, br, bc, m, nn](const Vector& g) mutable {
      for (int i = 0; i < batch; ++i) {
        ConstRowMap am(a.data() + static_cast<std::ptrdiff_t>(i) * ar * ac, ar, ac);
        ConstRowMap bm(b.data() + static_cast<std::ptrdiff_t>(i) * br * bc, br, bc);
        ConstRowMap gm(g.data() + static_cast<std::ptrdiff_t>(i) * m * nn, m, nn);
        if (tracked(a)) {
          RowMap da(a.grad_buffer().data() + static_cast<std::ptrdiff_t>(i) * ar * ac, ar, ac);
          // d(op_a(A)) = G op_b(B)^T
          RowMatrix bhat = transpose_b ? RowMatrix(bm.transpose()) : RowMatrix(bm);
          if (transpose_a) da.noalias() += bhat * gm.transpose();
          else da.noalias() += gm * bhat.transpose();
        }
        if (tracked(b)) {
          RowMap db(b.grad_buffer().data() + static_cast<std::ptrdiff_t>(i) * br * bc, br, bc);
          // d(op_b(B)) = op_a(A)^T G
          RowMatrix ahat = transpose_a ? RowMatrix(am.transpose()) : RowMatrix(am);
          if (transpose_b) db.noalias() += gm.transpose() * ahat;
          else db.noalias() += ahat.transpose() * gm;
        }
      }
    });
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  Tensor a3 = reshape(a, {1, a.dim(0), a.dim(1)});
  Tensor b3 = reshape(b, {1, b.dim(0), b.dim(1)});
  Tensor c = bmm(a3, b3);
  return reshape(c, {a.dim(0), b.dim(1)});
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_rank(input, 2, "linear");
  require_rank(weight, 2, "linear");
  const int n = input.dim(0), f = input.dim(1), o = weight.dim(0);
  if (weight.dim(1) != f) {
    throw ShapeError("linear: input has " + std::to_string(f) + " features, weight expects " +
                     std::to_string(weight.dim(1)));
  }
  check_bias(bias, o, "linear");
  Tensor out({n, o});
  ConstRowMap x(input.data(), n, f);
  ConstRowMap wm(weight.data(), o, f);
  RowMap y(out.data(), n, o);
  y.noalias() = x * wm.transpose();
  if (bias.defined()) y.rowwise() += bias.values().transpose();
  detail::check_finite(out, "linear");
  if (detail::should_record({&input, &weight, &bias})) {
    detail::record(out, [input, weight, bias, n, f, o](const Vector& g) mutable {
      ConstRowMap gm(g.data(), n, o);
      if (tracked(input)) {
        RowMap dx(input.grad_buffer().data(), n, f);
        dx.noalias() += gm * ConstRowMap(weight.data(), o, f);
      }
      if (tracked(weight)) {
        RowMap dw(weight.grad_buffer().data(), o, f);
        dw.noalias() += gm.transpose() * ConstRowMap(input.data(), n, f);
      }
      if (tracked(bias)) bias.grad_buffer() += gm.colwise().sum().transpose();
    });
  }
  return out;
}

Tensor softmax(const Tensor& a) {
  const int cols = a.dim(-1);
  const Eigen::Index rows = a.size() / cols;
  Tensor out(a.shape());
  ConstRowMap x(a.data(), rows, cols);
  RowMap y(out.data(), rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    y.row(r) = (x.row(r).array() - x.row(r).maxCoeff()).exp();
    y.row(r) /= y.row(r).sum();
  }
  detail::check_finite(out, "softmax");
  if (detail::should_record({&a})) {
    Tensor result = out;
    detail::record(out, [a, result, rows, cols](const Vector& g) mutable {
      ConstRowMap y(result.data(), rows, cols);
      ConstRowMap gm(g.data(), rows, cols);
      RowMap dx(a.grad_buffer().data(), rows, cols);
      for (Eigen::Index r = 0; r < rows; ++r) {
        const double inner = gm.row(r).dot(y.row(r));
        dx.row(r).array() += y.row(r).array() * (gm.row(r).array() - inner);
      }
    });
  }
  return out;
}

Tensor sum(const Tensor& a) {
  Tensor out = Tensor::scalar(a.values().sum());
  detail::check_finite(out, "sum");
  if (detail::should_record({&a})) {
    detail::record(out, [a](const Vector& g) mutable { a.grad_buffer().array() += g[0]; });
  }
  return out;
}

Tensor mean(const Tensor& a) {
  const double n = static_cast<double>(a.size());
  Tensor out = Tensor::scalar(a.values().sum() / n);
  detail::check_finite(out, "mean");
  if (detail::should_record({&a})) {
    detail::record(out, [a, n](const Vector& g) mutable { a.grad_buffer().array() += g[0] / n; });
  }
  return out;
}

Tensor abs_mean(const Tensor& a) {
  const double n = static_cast<double>(a.size());
  Tensor out = Tensor::scalar(a.values().cwiseAbs().sum() / n);
  detail::check_finite(out, "abs_mean");
  if (detail::should_record({&a})) {
    detail::record(out, [a, n](const Vector& g) mutable {
      a.grad_buffer().array() += a.values().array().sign() * (g[0] / n);
    });
  }
  return out;
}

Tensor bce(const Tensor& prediction, const Tensor& target) {
  if (!same_shape(prediction, target)) {
    throw ShapeError("bce: shapes " + to_string(prediction.shape()) + " and " +
                     to_string(target.shape()) + " differ");
  }
  const Vector& y = target.values();
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (y[i] != 0.0 && y[i] != 1.0) throw Error("bce: target values must be 0 or 1");
  }
  const Eigen::ArrayXd p = prediction.values().array().max(kBceLo).min(kBceHi);
  const double n = static_cast<double>(y.size());
  const double loss =
      -(y.array() * p.log() + (1.0 - y.array()) * (1.0 - p).log()).sum() / n;
  Tensor out = Tensor::scalar(loss);
  detail::check_finite(out, "bce");
  if (detail::should_record({&prediction})) {
    detail::record(out, [prediction, target, n](const Vector& g) mutable {
      const Eigen::ArrayXd raw = prediction.values().array();
      const Eigen::ArrayXd y = target.values().array();
      const Eigen::ArrayXd d = (-y / raw + (1.0 - y) / (1.0 - raw)) / n;
      // Zero derivative where the clip is active.
      prediction.grad_buffer().array() += g[0] * ((raw > kBceLo) && (raw < kBceHi)).select(d, 0.0);
    });
  }
  return out;
}

}  // namespace occ
