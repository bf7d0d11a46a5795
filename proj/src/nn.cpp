#include "dsm/nn.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

namespace dsm::nn {

namespace {

// Output columns [lo, hi] whose input column ox*stride + offset lies in [0, width).
struct ColumnRange {
  int lo = 0;
  int hi = -1;
};

ColumnRange valid_columns(int offset, int stride, int in_width, int out_width) {
  // ox*stride + offset >= 0  ->  ox >= ceil(-offset / stride)
  int lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
  // ox*stride + offset <= in_width - 1
  const int top = in_width - 1 - offset;
  int hi = top < 0 ? -1 : top / stride;
  hi = std::min(hi, out_width - 1);
  return {lo, hi};
}

struct Taps {
  int y0;
  int y1;
  double w1;  // weight of y1; y0 gets 1 - w1
};

std::vector<Taps> bilinear_taps(int in, int out) {
  std::vector<Taps> taps(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    int i0 = static_cast<int>(src);
    if (i0 > in - 1) i0 = in - 1;
    const int i1 = std::min(i0 + 1, in - 1);
    const double frac = i1 == i0 ? 0.0 : src - i0;
    taps[static_cast<std::size_t>(o)] = {i0, i1, frac};
  }
  return taps;
}

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Rows are (channel, ky, kx) taps, columns output pixels; taps outside the frame stay 0.
RowMatrix im2col(const Tensor& x, int k, int stride, int dilation, int pad, int oh, int ow) {
  const int in = x.channels;
  const Eigen::Index pixels = static_cast<Eigen::Index>(oh) * ow;
  RowMatrix col = RowMatrix::Zero(static_cast<Eigen::Index>(in) * k * k, pixels);
  for (int ic = 0; ic < in; ++ic) {
    const double* xp = x.channel(ic);
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* crow = col.data() + ((static_cast<Eigen::Index>(ic) * k + ky) * k + kx) * pixels;
        const int xoff = kx * dilation - pad;
        const auto cols = valid_columns(xoff, stride, x.width, ow);
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride + ky * dilation - pad;
          if (iy < 0 || iy >= x.height) continue;
          const double* xrow = xp + static_cast<std::size_t>(iy) * x.width;
          double* dst = crow + static_cast<std::size_t>(oy) * ow;
          for (int ox = cols.lo; ox <= cols.hi; ++ox) dst[ox] = xrow[ox * stride + xoff];
        }
      }
    }
  }
  return col;
}

}  // namespace

Tensor Tensor::from_image(const ImageTensor& image) {
  Tensor t(ImageTensor::kChannels, image.height(), image.width());
  const auto src = image.values();
  std::transform(src.begin(), src.end(), t.data.begin(), [](float v) { return static_cast<double>(v); });
  return t;
}

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride, int dilation)
    : weight(static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel),
      bias(static_cast<std::size_t>(out_channels)),
      in_(in_channels),
      out_(out_channels),
      k_(kernel),
      stride_(stride),
      dilation_(dilation),
      pad_(dilation * (kernel - 1) / 2) {
  if (in_channels < 1 || out_channels < 1 || kernel < 1 || kernel % 2 == 0 || stride < 1 || dilation < 1) {
    throw ValidationError("invalid convolution geometry");
  }
}

int Conv2d::output_size(int input) const { return (input + 2 * pad_ - dilation_ * (k_ - 1) - 1) / stride_ + 1; }

Tensor Conv2d::forward(const Tensor& x) const {
  if (x.channels != in_) {
    throw ExtentMismatch("convolution expects " + std::to_string(in_) + " channels, got " +
                         std::to_string(x.channels));
  }
  const int oh = output_size(x.height);
  const int ow = output_size(x.width);
  const Eigen::Index taps = static_cast<Eigen::Index>(in_) * k_ * k_;
  const Eigen::Index pixels = static_cast<Eigen::Index>(oh) * ow;
  const RowMatrix col = im2col(x, k_, stride_, dilation_, pad_, oh, ow);
  Tensor y(out_, oh, ow);
  Eigen::Map<RowMatrix> ym(y.data.data(), out_, pixels);
  const Eigen::Map<const RowMatrix> wm(weight.value.data(), out_, taps);
  ym.noalias() = wm * col;
  for (int oc = 0; oc < out_; ++oc) ym.row(oc).array() += bias.value[static_cast<std::size_t>(oc)];
  return y;
}

Tensor Conv2d::backward(const Tensor& x, const Tensor& dy) {
  const int oh = dy.height;
  const int ow = dy.width;
  const Eigen::Index taps = static_cast<Eigen::Index>(in_) * k_ * k_;
  const Eigen::Index pixels = static_cast<Eigen::Index>(oh) * ow;
  const Eigen::Map<const RowMatrix> dym(dy.data.data(), out_, pixels);
  Eigen::Map<Eigen::VectorXd> db(bias.grad.data(), out_);
  db += dym.rowwise().sum();

  const RowMatrix col = im2col(x, k_, stride_, dilation_, pad_, oh, ow);
  Eigen::Map<RowMatrix> dw(weight.grad.data(), out_, taps);
  dw.noalias() += dym * col.transpose();

  const Eigen::Map<const RowMatrix> wm(weight.value.data(), out_, taps);
  const RowMatrix dcol = wm.transpose() * dym;
  Tensor dx(in_, x.height, x.width);
  for (int ic = 0; ic < in_; ++ic) {
    double* dxp = dx.channel(ic);
    for (int ky = 0; ky < k_; ++ky) {
      for (int kx = 0; kx < k_; ++kx) {
        const double* crow = dcol.data() + ((static_cast<Eigen::Index>(ic) * k_ + ky) * k_ + kx) * pixels;
        const int xoff = kx * dilation_ - pad_;
        const auto cols = valid_columns(xoff, stride_, x.width, ow);
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride_ + ky * dilation_ - pad_;
          if (iy < 0 || iy >= x.height) continue;
          double* dxrow = dxp + static_cast<std::size_t>(iy) * x.width;
          const double* src = crow + static_cast<std::size_t>(oy) * ow;
          for (int ox = cols.lo; ox <= cols.hi; ++ox) dxrow[ox * stride_ + xoff] += src[ox];
        }
      }
    }
  }
  return dx;
}

void Conv2d::init_normal(std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& w : weight.value) w = dist(rng);
  std::fill(bias.value.begin(), bias.value.end(), 0.0);
}

void Conv2d::init_he(std::mt19937_64& rng) { init_normal(rng, std::sqrt(2.0 / (in_ * k_ * k_))); }

void relu_inplace(Tensor& x) {
  for (auto& v : x.data) v = v > 0.0 ? v : 0.0;
}

void relu_backward_inplace(const Tensor& activation, Tensor& dy) {
  for (std::size_t i = 0; i < dy.data.size(); ++i) {
    if (!(activation.data[i] > 0.0)) dy.data[i] = 0.0;
  }
}

Tensor upsample_bilinear(const Tensor& x, int out_height, int out_width) {
  const auto ty = bilinear_taps(x.height, out_height);
  const auto tx = bilinear_taps(x.width, out_width);
  Tensor y(x.channels, out_height, out_width);
  for (int c = 0; c < x.channels; ++c) {
    for (int oy = 0; oy < out_height; ++oy) {
      const auto& a = ty[static_cast<std::size_t>(oy)];
      for (int ox = 0; ox < out_width; ++ox) {
        const auto& b = tx[static_cast<std::size_t>(ox)];
        const double top = (1.0 - b.w1) * x.at(c, a.y0, b.y0) + b.w1 * x.at(c, a.y0, b.y1);
        const double bottom = (1.0 - b.w1) * x.at(c, a.y1, b.y0) + b.w1 * x.at(c, a.y1, b.y1);
        y.at(c, oy, ox) = (1.0 - a.w1) * top + a.w1 * bottom;
      }
    }
  }
  return y;
}

Tensor upsample_bilinear_backward(const Tensor& dy, int in_height, int in_width) {
  const auto ty = bilinear_taps(in_height, dy.height);
  const auto tx = bilinear_taps(in_width, dy.width);
  Tensor dx(dy.channels, in_height, in_width);
  for (int c = 0; c < dy.channels; ++c) {
    for (int oy = 0; oy < dy.height; ++oy) {
      const auto& a = ty[static_cast<std::size_t>(oy)];
      for (int ox = 0; ox < dy.width; ++ox) {
        const auto& b = tx[static_cast<std::size_t>(ox)];
        const double g = dy.at(c, oy, ox);
        dx.at(c, a.y0, b.y0) += (1.0 - a.w1) * (1.0 - b.w1) * g;
        dx.at(c, a.y0, b.y1) += (1.0 - a.w1) * b.w1 * g;
        dx.at(c, a.y1, b.y0) += a.w1 * (1.0 - b.w1) * g;
        dx.at(c, a.y1, b.y1) += a.w1 * b.w1 * g;
      }
    }
  }
  return dx;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.height != b.height || a.width != b.width) throw ExtentMismatch("concat of tensors with different extents");
  Tensor out(a.channels + b.channels, a.height, a.width);
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(a.data.size()));
  return out;
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace dsm::nn
