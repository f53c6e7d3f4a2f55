#pragma once

#include "fpstain/image.hpp"

namespace fpstain::fft {

// Unnormalized forward transform; `inverse` carries the 1/(rows*cols) factor.
ComplexPlane forward(const ComplexPlane& field);
ComplexPlane inverse(const ComplexPlane& spectrum);

// Centered spectrum helpers (zero frequency at (rows/2, cols/2)).
ComplexPlane shift(const ComplexPlane& a);
ComplexPlane ishift(const ComplexPlane& a);

inline ComplexPlane centered_forward(const ComplexPlane& field) { return shift(forward(field)); }
inline ComplexPlane centered_inverse(const ComplexPlane& spectrum) { return inverse(ishift(spectrum)); }

/// Signed frequency index of centered bin `i` on an axis of length `n`.
inline int centered_index(int i, int n) { return i - n / 2; }

}  // namespace fpstain::fft
