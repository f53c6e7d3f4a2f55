#pragma once

#include <complex>
#include <vector>

#include <Eigen/Core>

#include "fpstain/errors.hpp"

namespace fpstain {

/// Single image plane, rows = height, cols = width. Row-major so that
/// `data()` walks pixels in scan order.
template <typename Scalar>
using PlaneT = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Plane = PlaneT<double>;
using ComplexPlane = PlaneT<std::complex<double>>;

/// Multi-channel image stored as planar channels of equal size.
template <typename Scalar>
struct ImageT {
  std::vector<PlaneT<Scalar>> planes;

  ImageT() = default;
  ImageT(int channels, int height, int width) : planes(channels, PlaneT<Scalar>::Zero(height, width)) {}
  explicit ImageT(PlaneT<Scalar> gray) { planes.push_back(std::move(gray)); }

  int channels() const { return static_cast<int>(planes.size()); }
  int height() const { return planes.empty() ? 0 : static_cast<int>(planes.front().rows()); }
  int width() const { return planes.empty() ? 0 : static_cast<int>(planes.front().cols()); }

  PlaneT<Scalar>& operator[](int c) { return planes[c]; }
  const PlaneT<Scalar>& operator[](int c) const { return planes[c]; }

  bool operator==(const ImageT& other) const {
    if (channels() != other.channels()) return false;
    for (int c = 0; c < channels(); ++c) {
      if (planes[c].rows() != other.planes[c].rows() || planes[c].cols() != other.planes[c].cols()) return false;
      if (!(planes[c] == other.planes[c]).all()) return false;
    }
    return true;
  }
};

using Image = ImageT<double>;

/// Green plane of an RGB image; grayscale images pass through.
template <typename Scalar>
const PlaneT<Scalar>& green_plane(const ImageT<Scalar>& image) {
  if (image.channels() == 3) return image.planes[1];
  if (image.channels() == 1) return image.planes[0];
  throw ShapeError("expected a 1- or 3-channel image, got " + std::to_string(image.channels()) + " channels");
}

}  // namespace fpstain
