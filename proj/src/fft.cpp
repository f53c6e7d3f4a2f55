#include "fpstain/fft.hpp"

#include <unsupported/Eigen/FFT>

namespace fpstain::fft {
namespace {

using Complex = std::complex<double>;

Eigen::FFT<double>& engine() {
  thread_local Eigen::FFT<double> instance;
  return instance;
}

ComplexPlane transform(const ComplexPlane& in, bool fwd) {
  const Eigen::Index rows = in.rows();
  const Eigen::Index cols = in.cols();
  auto& fft = engine();
  fft.SetFlag(Eigen::FFT<double>::Unscaled);
  ComplexPlane out(rows, cols);
  std::vector<Complex> src(std::max(rows, cols)), dst(std::max(rows, cols));
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) src[c] = in(r, c);
    if (fwd) fft.fwd(dst.data(), src.data(), cols);
    else fft.inv(dst.data(), src.data(), cols);
    for (Eigen::Index c = 0; c < cols; ++c) out(r, c) = dst[c];
  }
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) src[r] = out(r, c);
    if (fwd) fft.fwd(dst.data(), src.data(), rows);
    else fft.inv(dst.data(), src.data(), rows);
    for (Eigen::Index r = 0; r < rows; ++r) out(r, c) = dst[r];
  }
  return out;
}

ComplexPlane roll(const ComplexPlane& a, Eigen::Index dr, Eigen::Index dc) {
  const Eigen::Index rows = a.rows();
  const Eigen::Index cols = a.cols();
  ComplexPlane out(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) out((r + dr) % rows, (c + dc) % cols) = a(r, c);
  return out;
}

}  // namespace

ComplexPlane forward(const ComplexPlane& field) { return transform(field, true); }

ComplexPlane inverse(const ComplexPlane& spectrum) {
  ComplexPlane out = transform(spectrum, false);
  out /= static_cast<double>(spectrum.rows() * spectrum.cols());
  return out;
}

ComplexPlane shift(const ComplexPlane& a) { return roll(a, a.rows() / 2, a.cols() / 2); }

ComplexPlane ishift(const ComplexPlane& a) { return roll(a, (a.rows() + 1) / 2, (a.cols() + 1) / 2); }

}  // namespace fpstain::fft
