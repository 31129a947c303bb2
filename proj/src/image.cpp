#include "coic/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <stdexcept>

#include <png.h>

namespace coic {

void Image::clamp01() {
  for (auto& v : data) v = std::min(1.f, std::max(0.f, v));
}

Image Image::to_gray() const {
  if (channels == 1) return *this;
  if (channels != 3) throw std::invalid_argument("to_gray: need 1 or 3 channels");
  Image g(height, width, 1);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      g.at(y, x, 0) = 0.299f * at(y, x, 0) + 0.587f * at(y, x, 1) + 0.114f * at(y, x, 2);
  return g;
}

BlurKernel BlurKernel::gaussian(double sigma) {
  if (sigma <= 0.0) throw std::invalid_argument("gaussian kernel: sigma must be positive");
  BlurKernel k;
  k.sigma = sigma;
  k.radius = static_cast<int>(std::ceil(3.0 * sigma));
  k.weights.resize(2 * k.radius + 1);
  double sum = 0.0;
  for (int i = -k.radius; i <= k.radius; ++i) {
    double w = std::exp(-0.5 * (i * i) / (sigma * sigma));
    k.weights[i + k.radius] = static_cast<float>(w);
    sum += w;
  }
  for (auto& w : k.weights) w = static_cast<float>(w / sum);
  return k;
}

double psnr(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("psnr: shape mismatch");
  double mse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a.data[i] - b.data[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.size());
  if (mse < 1e-12) return 100.0;
  return 10.0 * std::log10(1.0 / mse);
}

namespace {

// Symmetric reflection: ..., 2, 1, 0 | 0, 1, 2, ... | n-1, n-2, ...
inline int reflect(int i, int n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - i - 1;
  }
  return i;
}

// Horizontal then vertical pass of a 1-d kernel on one channel.
std::vector<float> separable_filter(const std::vector<float>& src, int h, int w,
                                    const std::vector<float>& taps, int radius) {
  std::vector<float> tmp(static_cast<std::size_t>(h) * w);
  std::vector<float> dst(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int t = -radius; t <= radius; ++t)
        acc += taps[t + radius] * src[static_cast<std::size_t>(y) * w + reflect(x + t, w)];
      tmp[static_cast<std::size_t>(y) * w + x] = static_cast<float>(acc);
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int t = -radius; t <= radius; ++t)
        acc += taps[t + radius] * tmp[static_cast<std::size_t>(reflect(y + t, h)) * w + x];
      dst[static_cast<std::size_t>(y) * w + x] = static_cast<float>(acc);
    }
  return dst;
}

}  // namespace

Image gaussian_blur(const Image& y, double sigma) {
  BlurKernel k = BlurKernel::gaussian(sigma);
  Image out(y.height, y.width, y.channels);
  std::vector<float> chan(static_cast<std::size_t>(y.height) * y.width);
  for (int c = 0; c < y.channels; ++c) {
    for (int py = 0; py < y.height; ++py)
      for (int px = 0; px < y.width; ++px)
        chan[static_cast<std::size_t>(py) * y.width + px] = y.at(py, px, c);
    auto filtered = separable_filter(chan, y.height, y.width, k.weights, k.radius);
    for (int py = 0; py < y.height; ++py)
      for (int px = 0; px < y.width; ++px)
        out.at(py, px, c) = filtered[static_cast<std::size_t>(py) * y.width + px];
  }
  return out;
}

Image crop(const Image& img, int y0, int x0, int h, int w) {
  if (y0 < 0 || x0 < 0 || h < 1 || w < 1 || y0 + h > img.height || x0 + w > img.width)
    throw std::invalid_argument("crop: rectangle out of bounds");
  Image out(h, w, img.channels);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < img.channels; ++c)
        out.at(y, x, c) = img.at(y0 + y, x0 + x, c);
  return out;
}

double ssim(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("ssim: shape mismatch");
  constexpr int kWin = 11;
  constexpr double kSigma = 1.5;
  constexpr double kC1 = 0.01 * 0.01;
  constexpr double kC2 = 0.03 * 0.03;
  if (a.height < kWin || a.width < kWin)
    throw std::invalid_argument("ssim: image smaller than 11x11 window");

  Image ga = a.to_gray();
  Image gb = b.to_gray();

  // Normalized 11x11 Gaussian window.
  std::vector<double> win(kWin * kWin);
  double wsum = 0.0;
  for (int i = 0; i < kWin; ++i)
    for (int j = 0; j < kWin; ++j) {
      double dy = i - kWin / 2, dx = j - kWin / 2;
      win[i * kWin + j] = std::exp(-(dy * dy + dx * dx) / (2.0 * kSigma * kSigma));
      wsum += win[i * kWin + j];
    }
  for (auto& w : win) w /= wsum;

  // Valid windows only.
  double total = 0.0;
  int count = 0;
  for (int y = 0; y + kWin <= a.height; ++y)
    for (int x = 0; x + kWin <= a.width; ++x) {
      double mu1 = 0, mu2 = 0, s11 = 0, s22 = 0, s12 = 0;
      for (int i = 0; i < kWin; ++i)
        for (int j = 0; j < kWin; ++j) {
          double w = win[i * kWin + j];
          double va = ga.at(y + i, x + j, 0);
          double vb = gb.at(y + i, x + j, 0);
          mu1 += w * va;
          mu2 += w * vb;
          s11 += w * va * va;
          s22 += w * vb * vb;
          s12 += w * va * vb;
        }
      double var1 = s11 - mu1 * mu1;
      double var2 = s22 - mu2 * mu2;
      double cov = s12 - mu1 * mu2;
      double v = ((2 * mu1 * mu2 + kC1) * (2 * cov + kC2)) /
                 ((mu1 * mu1 + mu2 * mu2 + kC1) * (var1 + var2 + kC2));
      total += v;
      ++count;
    }
  return total / count;
}

Image read_png(const std::string& path) {
  png_image pi;
  std::memset(&pi, 0, sizeof(pi));
  pi.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&pi, path.c_str()))
    throw std::runtime_error("read_png: cannot open " + path + ": " + pi.message);
  bool color = (pi.format & PNG_FORMAT_FLAG_COLOR) != 0;
  pi.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  int channels = color ? 3 : 1;
  std::vector<unsigned char> buf(PNG_IMAGE_SIZE(pi));
  if (!png_image_finish_read(&pi, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&pi);
    throw std::runtime_error("read_png: decode failed for " + path + ": " + pi.message);
  }
  Image img(static_cast<int>(pi.height), static_cast<int>(pi.width), channels);
  for (std::size_t i = 0; i < img.size(); ++i)
    img.data[i] = buf[i] / 255.f;
  return img;
}

void write_png(const std::string& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3)
    throw std::invalid_argument("write_png: need 1 or 3 channels");
  png_image pi;
  std::memset(&pi, 0, sizeof(pi));
  pi.version = PNG_IMAGE_VERSION;
  pi.width = static_cast<png_uint_32>(img.width);
  pi.height = static_cast<png_uint_32>(img.height);
  pi.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<unsigned char> buf(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) {
    float v = std::min(1.f, std::max(0.f, img.data[i]));
    buf[i] = static_cast<unsigned char>(std::lround(v * 255.f));
  }
  if (!png_image_write_to_file(&pi, path.c_str(), 0, buf.data(), 0, nullptr))
    throw std::runtime_error("write_png: cannot write " + path + ": " + pi.message);
}

}  // namespace coic
