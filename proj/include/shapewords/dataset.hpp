#pragma once

#include "shapewords/backends.hpp"
#include "shapewords/geometry.hpp"
#include "shapewords/manifest.hpp"

#include <random>
#include <string>
#include <vector>

namespace shapewords {

inline constexpr int kRenderViews = 30;
inline constexpr double kRenderAzimuthStep = 12.0;

struct RenderSet {
  std::string shape_id;
  std::vector<ViewSpec> views;
  std::vector<Mask> silhouettes;
  std::vector<Plane> depths;  // inverted depth in [0, 1], background 0
};

/// 30 views at azimuths 0, 12, ..., 348 and a fixed elevation. The cloud is
/// normalized first (idempotent on normalized input).
RenderSet build_render_set(const std::string& shape_id, const Points<double>& cloud, double elevation, int image_size,
                           int splat_radius = 2);

/// One prompt per view, uniform over the bank.
template <typename Rng>
std::vector<std::string> assign_prompts(std::size_t views, const std::vector<std::string>& bank, Rng& rng) {
  if (bank.empty()) throw ValidationError("prompt bank is empty");
  std::uniform_int_distribution<std::size_t> pick(0, bank.size() - 1);
  std::vector<std::string> out;
  out.reserve(views);
  for (std::size_t i = 0; i < views; ++i) out.push_back(bank[pick(rng)]);
  return out;
}

struct GenerationJob {
  std::string job_id;
  Plane depth;
  std::string prompt;  // category substituted
  double control_strength = 2.0;
  int steps = 50;
  double inpaint_strength = 0.5;
  int mask_dilation = 0;  // pixels the protected foreground grows by before inpainting
  std::uint64_t seed = 0;
};

/// Depth-conditioned generation followed by background inpainting. Backend
/// failures are rethrown as BackendError naming the job.
Image synthesize_image(const GenerationJob& job, const ImageGeneratorBackend& generator, const InpainterBackend& inpainter);

/// Square 8-connected dilation.
Mask dilate(const Mask& mask, int radius);

struct ShapeSource {
  std::string shape_id;
  std::string category;
  std::string cloud_path;
};

/// `<root>/<category>/<id>.(xyz|ply)`, sorted by (category, id).
std::vector<ShapeSource> scan_shapes_dir(const std::string& root);

struct DatasetOptions {
  double elevation = 20.0;
  int image_size = 64;
  int splat_radius = 1;
  double control_strength = 2.0;
  int steps = 50;
  double inpaint_strength = 0.5;
  int mask_dilation = 0;
  std::uint64_t seed = 0;
  int workers = 1;
  bool write_silhouettes = false;

  /// `dataset.*` keys; unset keys keep the defaults above.
  static DatasetOptions from_config(const Config& cfg);
};

struct DatasetSummary {
  std::vector<ManifestRecord> records;
  std::vector<std::string> failures;  // job id: message
};

/// Renders every shape, assigns prompts, synthesizes images on a bounded
/// worker pool, and writes `<out>/manifest.jsonl` plus per-view
/// `depth/<id>_NN.png` (16-bit) and `images/<id>_NN.png`. Records are
/// ordered by (shape, view) regardless of worker scheduling.
DatasetSummary build_dataset(const std::vector<ShapeSource>& shapes, const std::vector<std::string>& bank,
                             const std::string& out_dir, const DatasetOptions& options,
                             const ImageGeneratorBackend& generator, const InpainterBackend& inpainter);

}  // namespace shapewords
