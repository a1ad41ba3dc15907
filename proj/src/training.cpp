#include "shapewords/training.hpp"

#include "shapewords/geometry.hpp"
#include "shapewords/image_io.hpp"
#include "shapewords/manifest.hpp"
#include "shapewords/prompts.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <map>
#include <numeric>

namespace shapewords {

namespace fs = std::filesystem;

Image crop_resize(const Image& image, const CropWindow& win) {
  const int h = image.height(), w = image.width();
  if (win.side <= 0 || win.top < 0 || win.left < 0 || win.top + win.side > h || win.left + win.side > w)
    throw ValidationError("crop larger than image");
  Image out(h, w);
  const double sy = static_cast<double>(win.side) / h;
  const double sx = static_cast<double>(win.side) / w;
  // Source coordinates for each output row/column, clamped to the window.
  auto sample = [&](int i, double s, int origin, int& i0, int& i1, float& f) {
    double src = origin + (i + 0.5) * s - 0.5;
    src = std::clamp(src, static_cast<double>(origin), static_cast<double>(origin + win.side - 1));
    i0 = static_cast<int>(std::floor(src));
    i1 = std::min(i0 + 1, origin + win.side - 1);
    f = static_cast<float>(src - i0);
  };
  std::vector<int> x0(w), x1(w);
  std::vector<float> fx(w);
  for (int j = 0; j < w; ++j) sample(j, sx, win.left, x0[j], x1[j], fx[j]);
  for (int c = 0; c < 3; ++c) {
    const Plane& src = image.channel(c);
    Plane& dst = out.channel(c);
    for (int i = 0; i < h; ++i) {
      int y0, y1;
      float fy;
      sample(i, sy, win.top, y0, y1, fy);
      for (int j = 0; j < w; ++j) {
        const float top = src(y0, x0[j]) * (1.0f - fx[j]) + src(y0, x1[j]) * fx[j];
        const float bot = src(y1, x0[j]) * (1.0f - fx[j]) + src(y1, x1[j]) * fx[j];
        dst(i, j) = top * (1.0f - fy) + bot * fy;
      }
    }
  }
  return out;
}

TimestepSampling parse_timestep_sampling(const std::string& name) {
  if (name == "uniform") return TimestepSampling::Uniform;
  if (name == "weighted") return TimestepSampling::Weighted;
  throw ValidationError("unknown timestep sampling '" + name + "' (expected uniform or weighted)");
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ValidationError("train.lr must be positive");
  if (warmup_steps < 0) throw ValidationError("train.warmup must be non-negative");
  if (epochs < 0) throw ValidationError("train.epochs must be non-negative");
  if (batch_size <= 0) throw ValidationError("train.batch_size must be positive");
  if (!(crop_min_scale > 0.0) || crop_min_scale > crop_max_scale || crop_max_scale > 1.0)
    throw ValidationError("train crop scales must satisfy 0 < min <= max <= 1");
  sds.validate();
}

TrainConfig TrainConfig::from_config(const Config& cfg) {
  TrainConfig t;
  t.learning_rate = cfg.get_double("train.lr", t.learning_rate);
  t.warmup_steps = static_cast<int>(cfg.get_int("train.warmup", t.warmup_steps));
  t.epochs = static_cast<int>(cfg.get_int("train.epochs", t.epochs));
  t.batch_size = static_cast<int>(cfg.get_int("train.batch_size", t.batch_size));
  t.crop_min_scale = cfg.get_double("train.crop_min_scale", t.crop_min_scale);
  t.crop_max_scale = cfg.get_double("train.crop_max_scale", t.crop_max_scale);
  t.augment = cfg.get_bool("train.augment", t.augment);
  t.seed = static_cast<std::uint64_t>(cfg.get_int("train.seed", static_cast<long>(t.seed)));
  t.max_steps = cfg.get_int("train.max_steps", t.max_steps);
  t.sampling = parse_timestep_sampling(cfg.get_string("train.timestep_sampling", "uniform"));
  t.sds.center = cfg.get_double("train.sds_center", t.sds.center);
  t.sds.width = cfg.get_double("train.sds_width", t.sds.width);
  t.checkpoint_dir = cfg.get_string("train.checkpoint_dir", "");
  t.validate();
  return t;
}

std::string step_record_json(const StepRecord& r) {
  nlohmann::json j;
  j["step"] = r.step;
  if (r.timesteps.size() == 1)
    j["t"] = r.timesteps.front();
  else
    j["t"] = r.timesteps;
  j["loss"] = r.loss;
  j["lr"] = r.lr;
  return j.dump();
}

std::vector<double> smoothed(const std::vector<double>& values, std::size_t window) {
  if (window == 0) throw ValidationError("smoothing window must be positive");
  std::vector<double> out(values.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    acc += values[i];
    if (i >= window) acc -= values[i - window];
    out[i] = acc / static_cast<double>(std::min(i + 1, window));
  }
  return out;
}

template <typename Scalar>
TrainResult<Scalar> train(const std::vector<TrainingTriplet<Scalar>>& data, const DenoiserBackend<Scalar>& denoiser,
                          const Shape2ClipParams<Scalar>& initial, const TrainConfig& cfg, const StepCallback& on_step) {
  cfg.validate();
  if (data.empty()) throw ValidationError("training set is empty");

  const int t_max = denoiser.num_timesteps();
  const SdsWeighting weighting = make_weighting(cfg.sds, schedule_of(denoiser));
  const LatentShape latent = denoiser.latent_shape();
  const long steps_per_epoch = (static_cast<long>(data.size()) + cfg.batch_size - 1) / cfg.batch_size;
  const long total_steps = cfg.max_steps >= 0 ? cfg.max_steps : steps_per_epoch * cfg.epochs;

  TrainResult<Scalar> result;
  result.params = initial;
  if (total_steps == 0) return result;
  if (!cfg.checkpoint_dir.empty()) fs::create_directories(cfg.checkpoint_dir);

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> uniform_t(1, t_max);
  std::discrete_distribution<int> weighted_t(weighting.weights.begin(), weighting.weights.end());
  Adam<Scalar> adam(initial, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  double best = std::numeric_limits<double>::infinity();
  long step = 0;
  for (long epoch = 0; step < total_steps; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    long epoch_steps = 0;
    for (std::size_t begin = 0; begin < order.size() && step < total_steps; begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
      Shape2ClipParams<Scalar> grad = initial.zeros_like();
      StepRecord rec;
      rec.step = step + 1;
      double loss = 0.0;
      for (std::size_t k = begin; k < end; ++k) {
        const TrainingTriplet<Scalar>& sample = data[order[k]];
        const Image view = cfg.augment ? augment_crop(sample.image, cfg.crop_min_scale, cfg.crop_max_scale, rng) : sample.image;
        const Vector<Scalar> z0 = denoiser.encode_image(view);
        int t;
        double w;
        if (cfg.sampling == TimestepSampling::Uniform) {
          t = uniform_t(rng);
          w = weighting.at(t);
        } else {
          t = weighted_t(rng) + 1;
          w = 1.0 / t_max;
        }
        Vector<Scalar> eps(latent.size());
        for (Eigen::Index i = 0; i < eps.size(); ++i) eps[i] = static_cast<Scalar>(normal(rng));
        const SdsResult<Scalar> r =
            sds_loss(denoiser, sample.shape_tokens, sample.embedding, sample.layout, result.params, z0, t, eps, w);
        axpy(grad, r.gradient, Scalar(1));
        loss += static_cast<double>(r.loss);
        rec.timesteps.push_back(t);
      }
      const double n = static_cast<double>(end - begin);
      if (n > 1) {
        auto tensors = detail::tensors(grad);
        for (auto* m : tensors) *m /= static_cast<Scalar>(n);
      }
      rec.loss = loss / n;
      rec.lr = lr_at(rec.step, cfg);
      adam.step(result.params, grad, rec.lr);
      if (!result.params.all_finite())
        throw NumericError("non-finite parameters after step " + std::to_string(rec.step));
      ++step;
      epoch_loss += rec.loss;
      ++epoch_steps;
      result.log.push_back(rec);
      if (on_step) on_step(rec);
    }
    if (!cfg.checkpoint_dir.empty() && epoch_steps > 0) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%04ld.s2c", epoch + 1);
      const std::string path = (fs::path(cfg.checkpoint_dir) / name).string();
      save_params(path, result.params);
      result.checkpoints.push_back(path);
      const double mean = epoch_loss / static_cast<double>(epoch_steps);
      if (mean < best) {
        best = mean;
        const std::string best_path = (fs::path(cfg.checkpoint_dir) / "best.s2c").string();
        save_params(best_path, result.params);
      }
    }
  }
  return result;
}

template <typename Scalar>
std::vector<TrainingTriplet<Scalar>> load_triplets(const std::string& manifest_path, const BackendSuite<Scalar>& suite) {
  const std::vector<std::string> problems = validate_manifest(manifest_path);
  if (!problems.empty()) {
    std::string msg = "manifest has " + std::to_string(problems.size()) + " problem(s):";
    for (std::size_t i = 0; i < std::min<std::size_t>(problems.size(), 5); ++i) msg += "\n  " + problems[i];
    throw ValidationError(msg);
  }
  const std::vector<ManifestRecord> records = read_manifest(manifest_path);
  if (records.empty()) throw ValidationError("manifest " + manifest_path + " is empty");

  std::map<std::string, Matrix<Scalar>> tokens;
  std::vector<TrainingTriplet<Scalar>> out;
  out.reserve(records.size());
  for (const ManifestRecord& r : records) {
    const std::string cloud = resolve_asset(manifest_path, r.cloud_path);
    auto it = tokens.find(cloud);
    if (it == tokens.end()) it = tokens.emplace(cloud, suite.shape->encode(read_point_cloud(cloud))).first;
    TrainingTriplet<Scalar> t;
    t.shape_id = r.shape_id;
    t.shape_tokens = it->second;
    t.prompt = expand_template(r.prompt, r.label());
    EncodedPrompt<Scalar> enc = encode_prompt(*suite.text, t.prompt, r.label());
    t.embedding = std::move(enc.embedding);
    t.layout = enc.layout;
    t.image = read_png_rgb(resolve_asset(manifest_path, r.image_path));
    t.view_index = r.view_index;
    out.push_back(std::move(t));
  }
  return out;
}

template TrainResult<float> train<float>(const std::vector<TrainingTriplet<float>>&, const DenoiserBackend<float>&,
                                         const Shape2ClipParams<float>&, const TrainConfig&, const StepCallback&);
template TrainResult<double> train<double>(const std::vector<TrainingTriplet<double>>&, const DenoiserBackend<double>&,
                                           const Shape2ClipParams<double>&, const TrainConfig&, const StepCallback&);
template std::vector<TrainingTriplet<float>> load_triplets<float>(const std::string&, const BackendSuite<float>&);
template std::vector<TrainingTriplet<double>> load_triplets<double>(const std::string&, const BackendSuite<double>&);

}  // namespace shapewords
