#include "pathsyn/nn.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

namespace pathsyn::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

// Products run on aligned copies. Eigen's kernels pick code paths by the
// address alignment of their operands, and vector storage gives no
// alignment guarantee, so working on the raw buffers makes results drift
// in the last bits from one allocation to the next.
template <class A, class B>
void multiply(MapMat dst, const A& a, const B& b, bool accumulate) {
  const RowMat lhs = a;
  const RowMat rhs = b;
  RowMat prod(lhs.rows(), rhs.cols());
  prod.noalias() = lhs * rhs;
  if (accumulate) {
    dst += prod;
  } else {
    dst = prod;
  }
}

double row_sum(const double* p, int n) {
  double s = 0;
  for (int i = 0; i < n; ++i) s += p[i];
  return s;
}

// Unfolds `in` into rows (c, ky, kx) by columns (oy, ox).
void im2col(const double* in, int channels, int height, int width, int k, int stride, int pad,
            int out_h, int out_w, double* col) {
  const std::size_t cols = static_cast<std::size_t>(out_h) * out_w;
  for (int c = 0; c < channels; ++c) {
    const double* plane = in + static_cast<std::size_t>(c) * height * width;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = col + (static_cast<std::size_t>(c * k + ky) * k + kx) * cols;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          double* dst = row + static_cast<std::size_t>(oy) * out_w;
          if (iy < 0 || iy >= height) {
            std::fill_n(dst, out_w, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(iy) * width;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx;
            dst[ox] = (ix >= 0 && ix < width) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters columns back onto the (zeroed) image.
void col2im(const double* col, int channels, int height, int width, int k, int stride, int pad,
            int out_h, int out_w, double* out) {
  const std::size_t cols = static_cast<std::size_t>(out_h) * out_w;
  for (int c = 0; c < channels; ++c) {
    double* plane = out + static_cast<std::size_t>(c) * height * width;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row = col + (static_cast<std::size_t>(c * k + ky) * k + kx) * cols;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= height) continue;
          const double* src = row + static_cast<std::size_t>(oy) * out_w;
          double* dst = plane + static_cast<std::size_t>(iy) * width;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

void check_weight(const Param& weight, int d0, int d1, int k, const char* what) {
  if (weight.shape != std::vector<int>{d0, d1, k, k}) {
    throw Error(std::string(what) + ": weight '" + weight.name + "' has the wrong shape");
  }
}

}  // namespace

Tensor to_network(const GrayImage& image) {
  Tensor t(1, image.height(), image.width());
  for (std::size_t i = 0; i < t.size(); ++i) t.v[i] = 2.0 * image.pixels()[i] - 1.0;
  return t;
}

GrayImage to_pixels(const Tensor& t, std::string id) {
  if (t.c != 1) throw Error("to_pixels expects a single-channel tensor");
  std::vector<double> px(t.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = std::clamp((t.v[i] + 1.0) * 0.5, 0.0, 1.0);
  return GrayImage(std::move(id), t.h, t.w, std::move(px));
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.h != b.h || a.w != b.w) throw Error("concat: spatial sizes differ");
  Tensor out(a.c + b.c, a.h, a.w);
  std::copy(a.v.begin(), a.v.end(), out.v.begin());
  std::copy(b.v.begin(), b.v.end(), out.v.begin() + static_cast<std::ptrdiff_t>(a.size()));
  return out;
}

void split_channels(const Tensor& g, int first_channels, Tensor& ga, Tensor& gb) {
  ga = Tensor(first_channels, g.h, g.w);
  gb = Tensor(g.c - first_channels, g.h, g.w);
  std::copy(g.v.begin(), g.v.begin() + static_cast<std::ptrdiff_t>(ga.size()), ga.v.begin());
  std::copy(g.v.begin() + static_cast<std::ptrdiff_t>(ga.size()), g.v.end(), gb.v.begin());
}

Param& ParamSet::add(std::string name, std::vector<int> shape) {
  if (contains(name)) throw Error("duplicate parameter " + name);
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  params_.push_back(Param{std::move(name), std::move(shape), std::vector<double>(n, 0.0),
                          std::vector<double>(n, 0.0)});
  return params_.back();
}

Param& ParamSet::get(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return p;
  }
  throw Error("unknown parameter " + name);
}

const Param& ParamSet::get(const std::string& name) const {
  return const_cast<ParamSet*>(this)->get(name);
}

bool ParamSet::contains(const std::string& name) const {
  return std::any_of(params_.begin(), params_.end(), [&](const Param& p) { return p.name == name; });
}

void ParamSet::zero_grad() {
  for (auto& p : params_) std::fill(p.grad.begin(), p.grad.end(), 0.0);
}

std::size_t ParamSet::count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

bool ParamSet::all_finite() const {
  for (const auto& p : params_) {
    for (double v : p.value) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

int conv_out_size(int in, const ConvSpec& s) { return (in + 2 * s.pad - s.kernel) / s.stride + 1; }

int conv_transpose_out_size(int in, const ConvSpec& s) {
  return (in - 1) * s.stride - 2 * s.pad + s.kernel;
}

Tensor conv2d(const Tensor& in, const ConvSpec& spec, const Param& weight, const Param* bias,
              ConvCache* cache) {
  if (in.c != spec.in) throw Error("conv2d: input has " + std::to_string(in.c) + " channels, expected " + std::to_string(spec.in));
  check_weight(weight, spec.out, spec.in, spec.kernel, "conv2d");
  const int oh = conv_out_size(in.h, spec), ow = conv_out_size(in.w, spec);
  if (oh < 1 || ow < 1) throw Error("conv2d: input too small for kernel");
  const int rows = spec.in * spec.kernel * spec.kernel;
  const int cols = oh * ow;

  ConvCache local;
  auto& col = cache ? cache->col : local.col;
  col.resize(static_cast<std::size_t>(rows) * cols);
  im2col(in.v.data(), in.c, in.h, in.w, spec.kernel, spec.stride, spec.pad, oh, ow, col.data());

  Tensor out(spec.out, oh, ow);
  MapMat o(out.v.data(), spec.out, cols);
  multiply(o, ConstMapMat(weight.value.data(), spec.out, rows), ConstMapMat(col.data(), rows, cols), false);
  if (bias) {
    for (int c = 0; c < spec.out; ++c) o.row(c).array() += bias->value[c];
  }
  return out;
}

void conv2d_backward(const Tensor& in, const ConvSpec& spec, const ConvCache& cache,
                     const Tensor& d_out, Param& weight, Param* bias, Tensor* d_in) {
  const int rows = spec.in * spec.kernel * spec.kernel;
  const int cols = d_out.h * d_out.w;
  ConstMapMat g(d_out.v.data(), spec.out, cols);
  ConstMapMat col(cache.col.data(), rows, cols);
  multiply(MapMat(weight.grad.data(), spec.out, rows), g, col.transpose(), true);
  if (bias) {
    for (int c = 0; c < spec.out; ++c) bias->grad[c] += row_sum(d_out.v.data() + static_cast<std::size_t>(c) * cols, cols);
  }
  if (d_in) {
    std::vector<double> dcol(static_cast<std::size_t>(rows) * cols);
    multiply(MapMat(dcol.data(), rows, cols), ConstMapMat(weight.value.data(), spec.out, rows).transpose(), g,
             false);
    *d_in = Tensor(in.c, in.h, in.w);
    col2im(dcol.data(), in.c, in.h, in.w, spec.kernel, spec.stride, spec.pad, d_out.h, d_out.w,
           d_in->v.data());
  }
}

Tensor conv_transpose2d(const Tensor& in, const ConvSpec& spec, const Param& weight,
                        const Param* bias) {
  if (in.c != spec.in) throw Error("conv_transpose2d: input has " + std::to_string(in.c) + " channels, expected " + std::to_string(spec.in));
  check_weight(weight, spec.in, spec.out, spec.kernel, "conv_transpose2d");
  const int oh = conv_transpose_out_size(in.h, spec), ow = conv_transpose_out_size(in.w, spec);
  const int rows = spec.out * spec.kernel * spec.kernel;
  const int cols = in.h * in.w;
  std::vector<double> col(static_cast<std::size_t>(rows) * cols);
  multiply(MapMat(col.data(), rows, cols), ConstMapMat(weight.value.data(), spec.in, rows).transpose(),
           ConstMapMat(in.v.data(), spec.in, cols), false);
  Tensor out(spec.out, oh, ow);
  col2im(col.data(), spec.out, oh, ow, spec.kernel, spec.stride, spec.pad, in.h, in.w,
         out.v.data());
  if (bias) {
    const auto plane = out.plane();
    for (int c = 0; c < spec.out; ++c) {
      for (std::size_t i = 0; i < plane; ++i) out.v[c * plane + i] += bias->value[c];
    }
  }
  return out;
}

void conv_transpose2d_backward(const Tensor& in, const ConvSpec& spec, const Tensor& d_out,
                               Param& weight, Param* bias, Tensor* d_in) {
  const int rows = spec.out * spec.kernel * spec.kernel;
  const int cols = in.h * in.w;
  std::vector<double> dcol(static_cast<std::size_t>(rows) * cols);
  im2col(d_out.v.data(), spec.out, d_out.h, d_out.w, spec.kernel, spec.stride, spec.pad, in.h,
         in.w, dcol.data());
  ConstMapMat dc(dcol.data(), rows, cols);
  multiply(MapMat(weight.grad.data(), spec.in, rows), ConstMapMat(in.v.data(), spec.in, cols), dc.transpose(),
           true);
  if (bias) {
    const auto plane = d_out.plane();
    for (int c = 0; c < spec.out; ++c) {
      double s = 0;
      for (std::size_t i = 0; i < plane; ++i) s += d_out.v[c * plane + i];
      bias->grad[c] += s;
    }
  }
  if (d_in) {
    *d_in = Tensor(in.c, in.h, in.w);
    multiply(MapMat(d_in->v.data(), spec.in, cols), ConstMapMat(weight.value.data(), spec.in, rows), dc, false);
  }
}

Tensor instance_norm(const Tensor& in, const Param& gamma, const Param& beta, NormCache* cache) {
  if (gamma.size() != static_cast<std::size_t>(in.c)) throw Error("instance_norm: channel mismatch");
  const auto plane = in.plane();
  Tensor out(in.c, in.h, in.w);
  if (cache) {
    cache->xhat.resize(in.size());
    cache->inv_std.resize(in.c);
  }
  for (int c = 0; c < in.c; ++c) {
    const double* x = in.v.data() + c * plane;
    double mean = 0;
    for (std::size_t i = 0; i < plane; ++i) mean += x[i];
    mean /= static_cast<double>(plane);
    double var = 0;
    for (std::size_t i = 0; i < plane; ++i) var += (x[i] - mean) * (x[i] - mean);
    var /= static_cast<double>(plane);
    const double inv_std = 1.0 / std::sqrt(var + kNormEps);
    for (std::size_t i = 0; i < plane; ++i) {
      const double xh = (x[i] - mean) * inv_std;
      if (cache) cache->xhat[c * plane + i] = xh;
      out.v[c * plane + i] = gamma.value[c] * xh + beta.value[c];
    }
    if (cache) cache->inv_std[c] = inv_std;
  }
  return out;
}

void instance_norm_backward(const NormCache& cache, const Tensor& d_out, Param& gamma,
                            Param& beta, Tensor& d_in) {
  const auto plane = d_out.plane();
  const double n = static_cast<double>(plane);
  d_in = Tensor(d_out.c, d_out.h, d_out.w);
  for (int c = 0; c < d_out.c; ++c) {
    const double* g = d_out.v.data() + c * plane;
    const double* xh = cache.xhat.data() + c * plane;
    double sum_g = 0, sum_gx = 0;
    for (std::size_t i = 0; i < plane; ++i) {
      sum_g += g[i];
      sum_gx += g[i] * xh[i];
    }
    gamma.grad[c] += sum_gx;
    beta.grad[c] += sum_g;
    const double scale = gamma.value[c] * cache.inv_std[c] / n;
    for (std::size_t i = 0; i < plane; ++i) {
      d_in.v[c * plane + i] = scale * (n * g[i] - sum_g - xh[i] * sum_gx);
    }
  }
}

Tensor leaky_relu(const Tensor& in, double slope) {
  Tensor out = in;
  for (auto& v : out.v) v = v > 0 ? v : slope * v;
  return out;
}

Tensor leaky_relu_backward(const Tensor& in, const Tensor& d_out, double slope) {
  Tensor d = d_out;
  for (std::size_t i = 0; i < d.size(); ++i) d.v[i] *= in.v[i] > 0 ? 1.0 : slope;
  return d;
}

Tensor relu(const Tensor& in) { return leaky_relu(in, 0.0); }
Tensor relu_backward(const Tensor& in, const Tensor& d_out) {
  return leaky_relu_backward(in, d_out, 0.0);
}

Tensor tanh(const Tensor& in) {
  Tensor out = in;
  for (auto& v : out.v) v = std::tanh(v);
  return out;
}

Tensor tanh_backward(const Tensor& out, const Tensor& d_out) {
  Tensor d = d_out;
  for (std::size_t i = 0; i < d.size(); ++i) d.v[i] *= 1.0 - out.v[i] * out.v[i];
  return d;
}

Tensor sigmoid(const Tensor& in) {
  Tensor out = in;
  for (auto& v : out.v) v = 1.0 / (1.0 + std::exp(-v));
  return out;
}

Tensor sigmoid_backward(const Tensor& out, const Tensor& d_out) {
  Tensor d = d_out;
  for (std::size_t i = 0; i < d.size(); ++i) d.v[i] *= out.v[i] * (1.0 - out.v[i]);
  return d;
}

void add_in_place(Tensor& acc, const Tensor& t) {
  if (!acc.same_shape(t)) throw Error("add_in_place: shape mismatch");
  for (std::size_t i = 0; i < acc.size(); ++i) acc.v[i] += t.v[i];
}

void fill_normal(std::vector<double>& values, std::mt19937_64& rng, double mean, double stddev) {
  std::normal_distribution<double> dist(mean, stddev);
  for (auto& v : values) v = dist(rng);
}

}  // namespace pathsyn::nn
