#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pathsyn/types.hpp"

// Minimal CPU layer kit: single-sample C x H x W feature maps in double
// precision, with hand-written backward passes.
namespace pathsyn::nn {

struct Tensor {
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<double> v;

  Tensor() = default;
  Tensor(int channels, int height, int width, double fill = 0.0)
      : c(channels), h(height), w(width), v(static_cast<std::size_t>(channels) * height * width, fill) {}

  std::size_t size() const { return v.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  double& at(int ch, int y, int x) { return v[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
  double at(int ch, int y, int x) const { return v[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
  bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }
};

// Pixel [0,1] <-> network [-1,1].
Tensor to_network(const GrayImage& image);
GrayImage to_pixels(const Tensor& t, std::string id);

Tensor concat_channels(const Tensor& a, const Tensor& b);
// Splits a gradient of concat(a, b) back into its parts.
void split_channels(const Tensor& g, int first_channels, Tensor& ga, Tensor& gb);

struct Param {
  std::string name;
  std::vector<int> shape;
  std::vector<double> value;
  std::vector<double> grad;

  std::size_t size() const { return value.size(); }
};

// Named parameter arrays in a fixed registration order.
class ParamSet {
 public:
  Param& add(std::string name, std::vector<int> shape);
  Param& get(const std::string& name);
  const Param& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  void zero_grad();
  std::size_t count() const;  // total scalar parameters
  bool all_finite() const;

  std::vector<Param>& items() { return params_; }
  const std::vector<Param>& items() const { return params_; }

 private:
  std::vector<Param> params_;
};

// Convolution with square kernel. Weight shape [out, in, k, k].
struct ConvSpec {
  int in = 0;
  int out = 0;
  int kernel = 4;
  int stride = 2;
  int pad = 1;
};

int conv_out_size(int in, const ConvSpec& s);
int conv_transpose_out_size(int in, const ConvSpec& s);

struct ConvCache {
  std::vector<double> col;
};

Tensor conv2d(const Tensor& in, const ConvSpec& spec, const Param& weight, const Param* bias,
              ConvCache* cache);
// Accumulates into weight.grad / bias->grad. d_in may be null.
void conv2d_backward(const Tensor& in, const ConvSpec& spec, const ConvCache& cache,
                     const Tensor& d_out, Param& weight, Param* bias, Tensor* d_in);

// Transposed convolution. Weight shape [in, out, k, k].
Tensor conv_transpose2d(const Tensor& in, const ConvSpec& spec, const Param& weight,
                        const Param* bias);
void conv_transpose2d_backward(const Tensor& in, const ConvSpec& spec, const Tensor& d_out,
                               Param& weight, Param* bias, Tensor* d_in);

// Per-channel normalization over the spatial plane with affine gamma/beta.
struct NormCache {
  std::vector<double> xhat;
  std::vector<double> inv_std;
};
inline constexpr double kNormEps = 1e-5;
Tensor instance_norm(const Tensor& in, const Param& gamma, const Param& beta, NormCache* cache);
void instance_norm_backward(const NormCache& cache, const Tensor& d_out, Param& gamma,
                            Param& beta, Tensor& d_in);

inline constexpr double kLeakySlope = 0.2;
Tensor leaky_relu(const Tensor& in, double slope = kLeakySlope);
Tensor leaky_relu_backward(const Tensor& in, const Tensor& d_out, double slope = kLeakySlope);
Tensor relu(const Tensor& in);
Tensor relu_backward(const Tensor& in, const Tensor& d_out);
Tensor tanh(const Tensor& in);
Tensor tanh_backward(const Tensor& out, const Tensor& d_out);
Tensor sigmoid(const Tensor& in);
Tensor sigmoid_backward(const Tensor& out, const Tensor& d_out);

void add_in_place(Tensor& acc, const Tensor& t);

// Zero-mean Gaussian draws with the given std.
void fill_normal(std::vector<double>& values, std::mt19937_64& rng, double mean, double stddev);

}  // namespace pathsyn::nn
