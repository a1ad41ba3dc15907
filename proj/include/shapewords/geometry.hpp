#pragma once

#include "shapewords/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

namespace shapewords {

/// Greedy max-min subset selection. Each pick maximizes the squared distance
/// to the already-selected set; ties go to the lowest index.
template <typename Scalar>
std::vector<int> farthest_point_sample(const Points<Scalar>& cloud, int k, int start_index = 0) {
  const int n = static_cast<int>(cloud.rows());
  if (n == 0) throw ValidationError("farthest_point_sample: empty cloud");
  if (k < 1 || k > n) throw ValidationError("farthest_point_sample: k must be in [1, N]");
  if (start_index < 0 || start_index >= n) throw ValidationError("farthest_point_sample: start index out of range");

  std::vector<int> picked;
  picked.reserve(k);
  std::vector<bool> taken(n, false);
  Vector<Scalar> min_dist = (cloud.rowwise() - cloud.row(start_index)).rowwise().squaredNorm();
  picked.push_back(start_index);
  taken[start_index] = true;

  while (static_cast<int>(picked.size()) < k) {
    int best = -1;
    for (int i = 0; i < n; ++i) {
      if (taken[i]) continue;
      if (best < 0 || min_dist[i] > min_dist[best]) best = i;
    }
    picked.push_back(best);
    taken[best] = true;
    min_dist = min_dist.cwiseMin((cloud.rowwise() - cloud.row(best)).rowwise().squaredNorm());
  }
  return picked;
}

/// Centers the cloud on its centroid and scales the farthest point to radius 1.
template <typename Scalar>
Points<Scalar> normalize_cloud(const Points<Scalar>& cloud) {
  if (cloud.rows() == 0) throw ValidationError("normalize_cloud: empty cloud");
  if (!cloud.allFinite()) throw ValidationError("normalize_cloud: non-finite coordinate");
  const RowVector<Scalar> centroid = cloud.colwise().mean();
  Points<Scalar> centered = cloud.rowwise() - centroid;
  const Scalar radius = centered.rowwise().norm().maxCoeff();
  if (!(radius > Scalar(0))) throw ValidationError("normalize_cloud: degenerate cloud (zero extent)");
  centered /= radius;
  return centered;
}

template <typename Scalar>
Points<Scalar> gather_rows(const Points<Scalar>& cloud, const std::vector<int>& indices) {
  Points<Scalar> out(static_cast<Eigen::Index>(indices.size()), 3);
  for (std::size_t i = 0; i < indices.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = cloud.row(indices[i]);
  return out;
}

struct PatchSet {
  std::vector<int> centers;              // indices into the cloud
  std::vector<std::vector<int>> groups;  // member indices, nearest first
};

/// FPS centers, each grouped with its `group_size` nearest neighbors
/// (squared Euclidean distance, ties by index).
template <typename Scalar>
PatchSet group_patches(const Points<Scalar>& cloud, int num_patches = kNumPatches, int group_size = 32) {
  const int n = static_cast<int>(cloud.rows());
  if (num_patches < 1) throw ValidationError("group_patches: num_patches must be positive");
  if (n < num_patches) throw ValidationError("group_patches: cloud has fewer points than patches");
  if (group_size < 1 || group_size > n) throw ValidationError("group_patches: group_size must be in [1, N]");

  PatchSet out;
  out.centers = farthest_point_sample(cloud, num_patches, 0);
  out.groups.reserve(out.centers.size());
  std::vector<int> order(n);
  for (int c : out.centers) {
    const Vector<Scalar> d = (cloud.rowwise() - cloud.row(c)).rowwise().squaredNorm();
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + group_size, order.end(),
                      [&](int a, int b) { return d[a] < d[b] || (d[a] == d[b] && a < b); });
    out.groups.emplace_back(order.begin(), order.begin() + group_size);
  }
  return out;
}

/// Orthographic camera orbiting the vertical (y) axis.
struct ViewSpec {
  double azimuth = 0.0;    // degrees
  double elevation = 0.0;  // degrees
  int height = 224;
  int width = 224;
  double splat_radius = 2.0;  // pixels
  double fill = 0.45;         // unit radius maps to fill * min(H, W) pixels

  double normalized_azimuth() const {
    double a = std::fmod(azimuth, 360.0);
    if (a < 0) a += 360.0;
    return a;
  }
};

/// Per-point screen position: column offset and row offset from the image
/// center in pixels, plus view-space depth (larger = nearer the camera).
struct Projection {
  Eigen::VectorXd du, dv, depth;
};

template <typename Scalar>
Projection project_points(const Points<Scalar>& cloud, const ViewSpec& view) {
  constexpr double kDeg = 3.14159265358979323846 / 180.0;
  const double az = view.normalized_azimuth() * kDeg;
  const double el = view.elevation * kDeg;
  const double ca = std::cos(az), sa = std::sin(az);
  const double ce = std::cos(el), se = std::sin(el);
  const double scale = view.fill * std::min(view.height, view.width);

  Projection p;
  const Eigen::Index n = cloud.rows();
  p.du.resize(n);
  p.dv.resize(n);
  p.depth.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x = static_cast<double>(cloud(i, 0));
    const double y = static_cast<double>(cloud(i, 1));
    const double z = static_cast<double>(cloud(i, 2));
    const double xr = ca * x - sa * z;
    const double zr = sa * x + ca * z;
    const double yr = ce * y - se * zr;
    const double zv = se * y + ce * zr;
    p.du[i] = xr * scale;
    p.dv[i] = yr * scale;
    p.depth[i] = zv;
  }
  return p;
}

namespace detail {

// Visits every pixel whose center lies within the splat radius of the point at
// (center + du, center - dv). The offset is subtracted last so mirrored points
// produce mirrored pixel sets bit-exactly.
template <typename Fn>
void splat(const ViewSpec& view, double du, double dv, Fn&& fn) {
  const double half_w = 0.5 * view.width;
  const double half_h = 0.5 * view.height;
  const double r = view.splat_radius;
  const double r2 = r * r;
  const int j0 = std::max(0, static_cast<int>(std::floor(half_w + du - r - 1)));
  const int j1 = std::min(view.width - 1, static_cast<int>(std::ceil(half_w + du + r + 1)));
  const int i0 = std::max(0, static_cast<int>(std::floor(half_h - dv - r - 1)));
  const int i1 = std::min(view.height - 1, static_cast<int>(std::ceil(half_h - dv + r + 1)));
  for (int i = i0; i <= i1; ++i) {
    const double ey = (i + 0.5 - half_h) + dv;
    for (int j = j0; j <= j1; ++j) {
      const double ex = (j + 0.5 - half_w) - du;
      if (ex * ex + ey * ey <= r2) fn(i, j);
    }
  }
}

inline void check_view(const ViewSpec& view) {
  if (view.height <= 0 || view.width <= 0) throw ValidationError("render: zero image size");
  if (!(view.splat_radius >= 0)) throw ValidationError("render: negative splat radius");
}

}  // namespace detail

/// Point-splat orthographic silhouette.
template <typename Scalar>
Mask render_silhouette(const Points<Scalar>& cloud, const ViewSpec& view) {
  detail::check_view(view);
  Mask mask = Mask::Zero(view.height, view.width);
  const Projection p = project_points(cloud, view);
  for (Eigen::Index k = 0; k < p.du.size(); ++k)
    detail::splat(view, p.du[k], p.dv[k], [&](int i, int j) { mask(i, j) = 1; });
  return mask;
}

/// Inverted depth: nearest point per pixel wins, foreground mapped to
/// [0.1, 1] (nearer = larger), background exactly 0.
template <typename Scalar>
Plane render_depth(const Points<Scalar>& cloud, const ViewSpec& view) {
  detail::check_view(view);
  Plane depth = Plane::Zero(view.height, view.width);
  const Projection p = project_points(cloud, view);
  for (Eigen::Index k = 0; k < p.du.size(); ++k) {
    const double zn = std::clamp(0.5 * (p.depth[k] + 1.0), 0.0, 1.0);
    const float value = static_cast<float>(0.1 + 0.9 * zn);
    detail::splat(view, p.du[k], p.dv[k], [&](int i, int j) { depth(i, j) = std::max(depth(i, j), value); });
  }
  return depth;
}

/// Reads `x y z` lines or an ASCII / binary-little-endian PLY vertex list.
Points<double> read_point_cloud(const std::string& path);
void write_point_cloud(const std::string& path, const Points<double>& cloud);

}  // namespace shapewords
