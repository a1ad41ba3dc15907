#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace shapewords {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

/// N x 3 point coordinates.
template <typename Scalar>
using Points = Eigen::Matrix<Scalar, Eigen::Dynamic, 3, Eigen::RowMajor>;

/// Binary H x W mask, foreground = 1.
using Mask = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Single-channel float plane (depth, grayscale).
using Plane = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr int kMaxTokens = 77;
inline constexpr int kShapeTokenCount = 65;
inline constexpr int kNumPatches = 64;

// Errors. Every module throws one of these; the CLI maps ValidationError to
// exit code 1 and everything else to 2.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ValidationError : Error {
  using Error::Error;
};
struct DimensionError : ValidationError {
  using ValidationError::ValidationError;
};
struct FormatError : Error {
  using Error::Error;
};
struct BackendError : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};

/// RGB image with channel values in [0, 1], stored planar.
struct Image {
  Plane r, g, b;

  Image() = default;
  Image(int height, int width, float fill = 0.0f)
      : r(Plane::Constant(height, width, fill)),
        g(Plane::Constant(height, width, fill)),
        b(Plane::Constant(height, width, fill)) {}

  int height() const { return static_cast<int>(r.rows()); }
  int width() const { return static_cast<int>(r.cols()); }

  Plane& channel(int c) { return c == 0 ? r : (c == 1 ? g : b); }
  const Plane& channel(int c) const { return c == 0 ? r : (c == 1 ? g : b); }

  bool operator==(const Image& o) const { return r == o.r && g == o.g && b == o.b; }
};

struct LatentShape {
  int channels = 4;
  int height = 8;
  int width = 8;

  int size() const { return channels * height * width; }
  bool operator==(const LatentShape&) const = default;
};

/// Row-wise cosine similarity of two vectors; throws on zero norm.
template <typename DerivedA, typename DerivedB>
auto cosine_similarity(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  const auto na = a.norm();
  const auto nb = b.norm();
  if (na == 0 || nb == 0) throw NumericError("cosine similarity of zero-norm vector");
  return a.dot(b) / (na * nb);
}

}  // namespace shapewords
