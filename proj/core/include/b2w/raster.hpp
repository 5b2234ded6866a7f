#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <vector>

namespace b2w {

// Row-major 2D grid. Pixel (u, v) is column u, row v.
template <typename T>
struct Raster {
  int width = 0;
  int height = 0;
  std::vector<T> data;

  Raster() = default;
  Raster(int w, int h, T fill = T{})
      : width(w), height(h), data(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {}

  std::size_t size() const { return data.size(); }
  std::size_t index(int u, int v) const {
    return static_cast<std::size_t>(v) * static_cast<std::size_t>(width) + static_cast<std::size_t>(u);
  }
  T& at(int u, int v) { return data[index(u, v)]; }
  const T& at(int u, int v) const { return data[index(u, v)]; }

  bool same_shape(int w, int h) const { return width == w && height == h; }
  template <typename U>
  bool same_shape(const Raster<U>& other) const { return width == other.width && height == other.height; }

  bool operator==(const Raster&) const = default;
};

inline constexpr double kNoHit = std::numeric_limits<double>::infinity();
inline constexpr std::int32_t kNoPrimitive = -1;

// Z-depth in meters; +infinity marks pixels where nothing was hit.
using DepthMap = Raster<double>;
// Index of the front-most primitive in the scene's primitive list, or kNoPrimitive.
using IdBuffer = Raster<std::int32_t>;
// 1 = set, 0 = clear.
using Mask = Raster<std::uint8_t>;

// 8-bit RGB image, interleaved.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0) {}

  std::uint8_t* pixel(int u, int v) { return &rgb[(static_cast<std::size_t>(v) * width + u) * 3]; }
  const std::uint8_t* pixel(int u, int v) const { return &rgb[(static_cast<std::size_t>(v) * width + u) * 3]; }

  bool operator==(const Image&) const = default;
};

// Throws Errc::invalid_argument unless every value is +inf or finite and > 0.
void validate_depth(const DepthMap& depth);

std::size_t count_set(const Mask& mask);
Mask mask_union(const Mask& a, const Mask& b);
// Chebyshev (square) dilation by `margin` pixels.
Mask dilate(const Mask& mask, int margin);

}  // namespace b2w
