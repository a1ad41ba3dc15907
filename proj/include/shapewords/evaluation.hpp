#pragma once

#include "shapewords/backends.hpp"
#include "shapewords/geometry.hpp"

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace shapewords {

/// |A & B| / |A | B|. Throws when both masks are empty.
double silhouette_iou(const Mask& a, const Mask& b);

struct Pixel {
  int row = 0;
  int col = 0;
  bool operator==(const Pixel&) const = default;
};

/// Foreground pixels with a background 8-neighbour; pixels outside the
/// image count as background. Row-major order.
std::vector<Pixel> boundary_pixels(const Mask& mask);

/// Exact squared Euclidean distance from every pixel to the nearest seed
/// (separable lower-envelope transform). Infinity everywhere without seeds.
Eigen::MatrixXd squared_distance_transform(int height, int width, const std::vector<Pixel>& seeds);

/// Symmetric mean nearest-boundary distance, divided by the image diagonal:
///   (mean_{a in dA} d(a, dB) + mean_{b in dB} d(b, dA)) / 2 / sqrt(H^2 + W^2).
double silhouette_chamfer(const Mask& a, const Mask& b);

/// Azimuths 0, 360/n, ... at a fixed elevation.
std::vector<ViewSpec> uniform_views(int count = 6, double elevation = 20.0, int size = 64, int splat_radius = 1);

struct ViewScore {
  ViewSpec view;
  double iou = 0.0;
  double chamfer = 0.0;
};

struct AdherenceResult {
  double mean_iou = 0.0;
  double mean_chamfer = 0.0;
  std::vector<ViewScore> views;
  int exclusions = 0;
  std::vector<std::string> errors;
};

/// Image for a view; a throwing callback excludes that view.
using ViewGenerator = std::function<Image(const ViewSpec& view, const Plane& depth)>;

/// Per view: reference silhouette of the (normalized) cloud, generated image,
/// segmented mask, S-IOU and S-CD. Means cover the views that succeeded;
/// throws when none do.
AdherenceResult multiview_adherence(const Points<double>& cloud, const ViewGenerator& generator,
                                    const SegmenterBackend& segmenter, const std::vector<ViewSpec>& views);

/// 100 * cos(image feature, text feature).
double clip_score(const ImageFeatureBackend& features, const Image& image, const std::string& text);

/// ||mu_A - mu_B||^2 + tr(S_A + S_B - 2 (S_A S_B)^(1/2)) with eps added to
/// both covariance diagonals. The root is taken as
/// tr((S_A^(1/2) S_B S_A^(1/2))^(1/2)), a symmetric eigenproblem.
double frechet_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double eps = 1e-6);

/// 100 * unbiased MMD^2 with k(x, y) = (x.y / d + 1)^3.
double kernel_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

struct RunMetrics {
  std::string run_id;
  double lambda = 1.0;
  std::string strategy = "object_and_eos";
  double handoff_k = 0.0;
  std::uint64_t seed = 0;
  std::optional<double> s_iou, s_cd, clip, fid, kid, aes;
};

struct MetricsReport {
  std::vector<RunMetrics> runs;
  RunMetrics summary;  // means over runs that report each metric

  /// One JSON object per run, then {"summary": {...}}.
  std::string to_jsonl() const;
  /// Markdown table: run, lambda, strategy, K, S-IOU, S-CD, FID, KID, Aes., CLIP.
  std::string to_table() const;
};

/// Throws on an empty list, duplicate run ids, or metadata outside its
/// domain (lambda outside [0, 1], K outside [0, 100], unknown strategy).
MetricsReport assemble_report(const std::vector<RunMetrics>& runs);

}  // namespace shapewords
