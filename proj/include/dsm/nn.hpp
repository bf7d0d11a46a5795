#pragma once

#include <random>
#include <string>
#include <vector>

#include "dsm/core_types.hpp"

// Minimal CPU layers with hand-written backward passes. Everything runs in
// double precision and single-threaded so results are bit-reproducible.
namespace dsm::nn {

struct Tensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int c, int h, int w, double fill = 0.0)
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  double& at(int c, int y, int x) { return data[(c * plane()) + static_cast<std::size_t>(y) * width + x]; }
  double at(int c, int y, int x) const { return data[(c * plane()) + static_cast<std::size_t>(y) * width + x]; }
  double* channel(int c) { return data.data() + c * plane(); }
  const double* channel(int c) const { return data.data() + c * plane(); }

  static Tensor from_image(const ImageTensor& image);
};

struct Param {
  std::vector<double> value;
  std::vector<double> grad;

  explicit Param(std::size_t n = 0) : value(n, 0.0), grad(n, 0.0) {}
  std::size_t size() const { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

/// 2-D convolution with square kernel, "same"-style padding
/// pad = dilation * (kernel - 1) / 2.
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_channels, int out_channels, int kernel, int stride = 1, int dilation = 1);

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int kernel() const { return k_; }
  int stride() const { return stride_; }
  int dilation() const { return dilation_; }
  int output_size(int input) const;

  Tensor forward(const Tensor& x) const;
  /// Accumulates into weight.grad / bias.grad and returns dLoss/dx.
  Tensor backward(const Tensor& x, const Tensor& dy);

  /// Zero-mean Gaussian weights, zero bias.
  void init_normal(std::mt19937_64& rng, double stddev);
  void init_he(std::mt19937_64& rng);

  Param weight;  // [out][in][k][k]
  Param bias;    // [out]

 private:
  int in_ = 0;
  int out_ = 0;
  int k_ = 1;
  int stride_ = 1;
  int dilation_ = 1;
  int pad_ = 0;
};

void relu_inplace(Tensor& x);
/// dy masked by (activation > 0).
void relu_backward_inplace(const Tensor& activation, Tensor& dy);

/// Bilinear resize with half-pixel centers (align_corners = false).
Tensor upsample_bilinear(const Tensor& x, int out_height, int out_width);
Tensor upsample_bilinear_backward(const Tensor& dy, int in_height, int in_width);

Tensor concat_channels(const Tensor& a, const Tensor& b);

double sigmoid(double z);

}  // namespace dsm::nn
