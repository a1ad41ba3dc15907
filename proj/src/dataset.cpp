#include "shapewords/dataset.hpp"

#include "shapewords/image_io.hpp"
#include "shapewords/prompts.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <mutex>
#include <set>
#include <thread>

namespace shapewords {

namespace fs = std::filesystem;

RenderSet build_render_set(const std::string& shape_id, const Points<double>& cloud, double elevation, int image_size,
                           int splat_radius) {
  if (image_size <= 0) throw ValidationError("image size must be positive");
  const Points<double> normalized = normalize_cloud(cloud);
  RenderSet set;
  set.shape_id = shape_id;
  for (int i = 0; i < kRenderViews; ++i) {
    ViewSpec v;
    v.azimuth = kRenderAzimuthStep * i;
    v.elevation = elevation;
    v.height = image_size;
    v.width = image_size;
    v.splat_radius = splat_radius;
    set.views.push_back(v);
    set.silhouettes.push_back(render_silhouette(normalized, v));
    set.depths.push_back(render_depth(normalized, v));
  }
  return set;
}

Mask dilate(const Mask& mask, int radius) {
  if (radius < 0) throw ValidationError("dilation radius must be non-negative");
  if (radius == 0) return mask;
  const Eigen::Index h = mask.rows(), w = mask.cols();
  Mask out = Mask::Zero(h, w);
  for (Eigen::Index y = 0; y < h; ++y)
    for (Eigen::Index x = 0; x < w; ++x) {
      if (!mask(y, x)) continue;
      const Eigen::Index y0 = std::max<Eigen::Index>(0, y - radius), y1 = std::min(h - 1, y + radius);
      const Eigen::Index x0 = std::max<Eigen::Index>(0, x - radius), x1 = std::min(w - 1, x + radius);
      out.block(y0, x0, y1 - y0 + 1, x1 - x0 + 1).setOnes();
    }
  return out;
}

Image synthesize_image(const GenerationJob& job, const ImageGeneratorBackend& generator,
                       const InpainterBackend& inpainter) {
  try {
    SynthesisParams params;
    params.control_strength = job.control_strength;
    params.steps = job.steps;
    const Image image = generator.generate(job.depth, job.prompt, params, job.seed);
    const Mask foreground = (job.depth.array() > 0.0f).cast<std::uint8_t>();
    return inpainter.inpaint(image, dilate(foreground, job.mask_dilation), job.prompt, job.inpaint_strength,
                             job.seed + 1);
  } catch (const ValidationError&) {
    throw;
  } catch (const std::exception& e) {
    throw BackendError("job " + job.job_id + ": " + e.what());
  }
}

std::vector<ShapeSource> scan_shapes_dir(const std::string& root) {
  if (!fs::is_directory(root)) throw ValidationError("shapes directory not found: " + root);
  std::vector<ShapeSource> out;
  for (const auto& cat : fs::directory_iterator(root)) {
    if (!cat.is_directory()) continue;
    for (const auto& f : fs::directory_iterator(cat.path())) {
      const std::string ext = f.path().extension().string();
      if (!f.is_regular_file() || (ext != ".xyz" && ext != ".ply")) continue;
      out.push_back({f.path().stem().string(), cat.path().filename().string(), f.path().string()});
    }
  }
  std::sort(out.begin(), out.end(), [](const ShapeSource& a, const ShapeSource& b) {
    return std::tie(a.category, a.shape_id) < std::tie(b.category, b.shape_id);
  });
  std::set<std::string> seen;
  for (const auto& s : out)
    if (!seen.insert(s.shape_id).second) throw ValidationError("duplicate shape id '" + s.shape_id + "' under " + root);
  return out;
}

DatasetOptions DatasetOptions::from_config(const Config& cfg) {
  DatasetOptions o;
  o.elevation = cfg.get_double("dataset.elevation", o.elevation);
  o.image_size = static_cast<int>(cfg.get_int("dataset.image_size", o.image_size));
  o.splat_radius = static_cast<int>(cfg.get_int("dataset.splat_radius", o.splat_radius));
  o.control_strength = cfg.get_double("dataset.control_strength", o.control_strength);
  o.steps = static_cast<int>(cfg.get_int("dataset.steps", o.steps));
  o.inpaint_strength = cfg.get_double("dataset.inpaint_strength", o.inpaint_strength);
  o.mask_dilation = static_cast<int>(cfg.get_int("dataset.mask_dilation", o.mask_dilation));
  o.seed = static_cast<std::uint64_t>(cfg.get_int("dataset.seed", static_cast<long>(o.seed)));
  o.workers = static_cast<int>(cfg.get_int("dataset.workers", o.workers));
  o.write_silhouettes = cfg.get_bool("dataset.write_silhouettes", o.write_silhouettes);
  if (o.image_size <= 0 || o.workers <= 0 || o.steps <= 0 || o.mask_dilation < 0)
    throw ValidationError("dataset.image_size, dataset.workers and dataset.steps must be positive");
  if (!(o.inpaint_strength >= 0.0 && o.inpaint_strength <= 1.0)) throw ValidationError("dataset.inpaint_strength must be in [0, 1]");
  return o;
}

DatasetSummary build_dataset(const std::vector<ShapeSource>& shapes, const std::vector<std::string>& bank,
                             const std::string& out_dir, const DatasetOptions& options,
                             const ImageGeneratorBackend& generator, const InpainterBackend& inpainter) {
  if (shapes.empty()) throw ValidationError("no shapes to render");
  if (bank.empty()) throw ValidationError("prompt bank is empty");
  if (options.workers <= 0) throw ValidationError("worker count must be positive");
  for (const auto& p : bank)
    if (count_placeholders(p) != 1) throw ValidationError("bank prompt lacks a single [SHAPE-ID]: " + p);
  fs::create_directories(fs::path(out_dir) / "images");
  fs::create_directories(fs::path(out_dir) / "depth");
  if (options.write_silhouettes) fs::create_directories(fs::path(out_dir) / "silhouettes");

  struct Job {
    ManifestRecord record;
    GenerationJob gen;
  };
  std::vector<Job> jobs;
  DatasetSummary summary;
  for (const ShapeSource& shape : shapes) {
    RenderSet set;
    try {
      set = build_render_set(shape.shape_id, read_point_cloud(shape.cloud_path), options.elevation, options.image_size,
                             options.splat_radius);
    } catch (const Error& e) {
      summary.failures.push_back(shape.shape_id + ": " + e.what());
      continue;
    }
    std::mt19937_64 rng(options.seed ^ fnv1a(shape.shape_id));
    const std::vector<std::string> prompts = assign_prompts(set.views.size(), bank, rng);
    for (std::size_t v = 0; v < set.views.size(); ++v) {
      char stem[16];
      std::snprintf(stem, sizeof stem, "_%02zu.png", v);
      const std::string name = shape.shape_id + stem;
      Job job;
      job.record.shape_id = shape.shape_id;
      job.record.cloud_path = fs::absolute(shape.cloud_path).lexically_normal().string();
      job.record.prompt = prompts[v];
      job.record.image_path = "images/" + name;
      job.record.view_index = static_cast<int>(v);
      job.record.category = shape.category;
      job.gen.job_id = name;
      job.gen.depth = set.depths[v];
      job.gen.prompt = expand_template(prompts[v], shape.category);
      job.gen.control_strength = options.control_strength;
      job.gen.steps = options.steps;
      job.gen.inpaint_strength = options.inpaint_strength;
      job.gen.mask_dilation = options.mask_dilation;
      job.gen.seed = options.seed ^ fnv1a(name);
      write_png_depth16((fs::path(out_dir) / "depth" / name).string(), set.depths[v]);
      if (options.write_silhouettes) write_png_mask((fs::path(out_dir) / "silhouettes" / name).string(), set.silhouettes[v]);
      jobs.push_back(std::move(job));
    }
  }

  std::vector<std::string> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        const Image img = synthesize_image(jobs[i].gen, generator, inpainter);
        write_png_rgb((fs::path(out_dir) / jobs[i].record.image_path).string(), img);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  const int n = std::min<int>(options.workers, static_cast<int>(std::max<std::size_t>(jobs.size(), 1)));
  std::vector<std::thread> pool;
  for (int i = 1; i < n; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (errors[i].empty())
      summary.records.push_back(jobs[i].record);
    else
      summary.failures.push_back(errors[i]);
  }
  write_manifest((fs::path(out_dir) / "manifest.jsonl").string(), summary.records);
  return summary;
}

}  // namespace shapewords
