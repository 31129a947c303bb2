#pragma once
// Image containers, quality metrics, and Gaussian blur. Pixels live in
// [0,1] float; 8-bit files are scaled by 1/255 on load.

#include <string>
#include <vector>

namespace coic {

struct Image {
  int height = 0, width = 0, channels = 0;
  std::vector<float> data;  // H*W*C, row-major, channel-interleaved

  Image() = default;
  Image(int h, int w, int c, float fill = 0.f)
      : height(h), width(w), channels(c),
        data(static_cast<std::size_t>(h) * w * c, fill) {}

  float& at(int y, int x, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  float at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::size_t size() const { return data.size(); }
  bool same_shape(const Image& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }

  void clamp01();
  Image to_gray() const;  // BT.601 luma for 3-channel, copy for 1-channel
};

struct BlurKernel {
  double sigma = 0.0;
  int radius = 0;                // ceil(3*sigma)
  std::vector<float> weights;    // 2*radius+1 taps, sum to 1

  static BlurKernel gaussian(double sigma);
};

// 10*log10(1/MSE), peak 1.0; capped at 100 dB when MSE < 1e-12.
double psnr(const Image& a, const Image& b);

// Mean local SSIM on luma; 11x11 Gaussian window sigma=1.5, K1=0.01, K2=0.03.
double ssim(const Image& a, const Image& b);

// Separable Gaussian with reflect padding; output shape equals input.
Image gaussian_blur(const Image& y, double sigma);

// Out-of-bounds rectangle throws.
Image crop(const Image& img, int y0, int x0, int h, int w);

// 8-bit RGB/gray PNG round-trip: write(read(f)) reproduces pixels exactly.
Image read_png(const std::string& path);
void write_png(const std::string& path, const Image& img);

}  // namespace coic
