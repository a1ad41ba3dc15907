#pragma once

// Score-distillation training of the Shape2CLIP residual against a frozen
// denoiser:
//   L(theta) = W(t) * || eps_hat(z_t, t, T + dT(B, T; theta)) - eps ||^2
//   W(t)     = (1/Z) sqrt((1 - abar_t) / abar_t) exp(-(t - m)^2 / (2 s^2))
// The gradient is taken through the denoiser's prompt input (no Jacobian
// detachment), then through the residual blocks.

#include "shapewords/backends.hpp"
#include "shapewords/config.hpp"
#include "shapewords/shape2clip.hpp"

#include <cmath>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace shapewords {

struct SdsConfig {
  double center = 500.0;  // m
  double width = 250.0;   // s

  void validate() const {
    if (!std::isfinite(center) || !(width > 0.0) || !std::isfinite(width))
      throw ValidationError("sds width must be positive and center finite");
  }
};

/// Per-timestep weights W(1..T_max) for one schedule; index 0 holds t = 1.
struct SdsWeighting {
  std::vector<double> weights;
  double normalizer = 1.0;  // Z

  int max_timestep() const { return static_cast<int>(weights.size()); }
  double at(int t) const {
    if (t < 1 || t > max_timestep())
      throw ValidationError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(max_timestep()) + "]");
    return weights[static_cast<std::size_t>(t - 1)];
  }
};

/// Unnormalized weight sqrt((1 - abar) / abar) * exp(-(t - m)^2 / (2 s^2)).
inline double dreamtime_unnormalized(int t, double alpha_bar, const SdsConfig& cfg) {
  if (!(alpha_bar > 0.0 && alpha_bar < 1.0)) throw ValidationError("alpha_bar must lie in (0, 1)");
  const double d = static_cast<double>(t) - cfg.center;
  return std::sqrt((1.0 - alpha_bar) / alpha_bar) * std::exp(-d * d / (2.0 * cfg.width * cfg.width));
}

/// `normalizer_override` replaces the computed Z.
inline SdsWeighting make_weighting(const SdsConfig& cfg, const std::vector<double>& alpha_bar,
                                   std::optional<double> normalizer_override = std::nullopt) {
  cfg.validate();
  if (alpha_bar.empty()) throw ValidationError("empty noise schedule");
  SdsWeighting w;
  w.weights.resize(alpha_bar.size());
  double z = 0.0;
  for (std::size_t i = 0; i < alpha_bar.size(); ++i) {
    w.weights[i] = dreamtime_unnormalized(static_cast<int>(i) + 1, alpha_bar[i], cfg);
    z += w.weights[i];
  }
  if (normalizer_override) z = *normalizer_override;
  if (!(z > 0.0) || !std::isfinite(z)) throw NumericError("weight normalizer must be positive and finite");
  w.normalizer = z;
  for (double& v : w.weights) v /= z;
  return w;
}

template <typename Scalar>
std::vector<double> schedule_of(const DenoiserBackend<Scalar>& denoiser) {
  std::vector<double> s(static_cast<std::size_t>(denoiser.num_timesteps()));
  for (int t = 1; t <= denoiser.num_timesteps(); ++t) s[static_cast<std::size_t>(t - 1)] = denoiser.alpha_bar(t);
  return s;
}

inline double dreamtime_weight(int t, const SdsConfig& cfg, const std::vector<double>& alpha_bar) {
  if (t < 1 || t > static_cast<int>(alpha_bar.size()))
    throw ValidationError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(alpha_bar.size()) + "]");
  return make_weighting(cfg, alpha_bar).at(t);
}

/// z_t = sqrt(abar) z0 + sqrt(1 - abar) eps.
template <typename Scalar>
Vector<Scalar> noisify(const Vector<Scalar>& z0, const Vector<Scalar>& eps, double alpha_bar) {
  if (z0.size() != eps.size()) throw DimensionError("noise and latent sizes differ");
  const Scalar a = static_cast<Scalar>(std::sqrt(alpha_bar));
  const Scalar b = static_cast<Scalar>(std::sqrt(1.0 - alpha_bar));
  return a * z0 + b * eps;
}

template <typename Scalar>
struct SdsResult {
  Scalar loss{};
  Shape2ClipParams<Scalar> gradient;
};

/// Loss and d loss / d theta for one (B, T, z0, t, eps) sample. The residual
/// is applied to all 77 rows at lambda = 1; `weight` is W(t).
template <typename Scalar>
SdsResult<Scalar> sds_loss(const DenoiserBackend<Scalar>& denoiser, const Matrix<Scalar>& shape_tokens,
                           const Matrix<Scalar>& prompt, const TokenLayout& layout, const Shape2ClipParams<Scalar>& params,
                           const Vector<Scalar>& z0, int t, const Vector<Scalar>& eps, double weight) {
  if (t < 1 || t > denoiser.num_timesteps()) throw ValidationError("timestep " + std::to_string(t) + " out of range");
  if (z0.size() != denoiser.latent_shape().size()) throw DimensionError("latent size does not match denoiser");
  ForwardCache<Scalar> cache;
  const Matrix<Scalar> delta = forward(shape_tokens, prompt, params, &cache);
  const Matrix<Scalar> conditioned = apply_residual(prompt, delta, GuidanceSpec{1.0, TokenStrategy::AllTokens}, layout);
  const Vector<Scalar> zt = noisify(z0, eps, denoiser.alpha_bar(t));
  const Vector<Scalar> residual = denoiser.predict_noise(zt, t, conditioned) - eps;
  const Scalar w = static_cast<Scalar>(weight);

  SdsResult<Scalar> out;
  out.loss = w * residual.squaredNorm();
  if (!std::isfinite(static_cast<double>(out.loss)))
    throw NumericError("non-finite SDS loss at timestep " + std::to_string(t));
  const Vector<Scalar> upstream = (Scalar(2) * w) * residual;
  // With every row selected at lambda = 1, d T' / d dT is the identity.
  const Matrix<Scalar> d_delta = denoiser.prompt_vjp(zt, t, conditioned, upstream);
  out.gradient = backward(d_delta, params, cache);
  return out;
}

struct CropWindow {
  int top = 0;
  int left = 0;
  int side = 0;
};

/// Square crop resampled bilinearly (pixel-center aligned) back to the
/// image's own height and width.
Image crop_resize(const Image& image, const CropWindow& window);

/// Side uniform in [min_scale, max_scale] * min(H, W), position uniform over
/// the positions that keep the window inside the image.
template <typename Rng>
CropWindow sample_crop(int height, int width, double min_scale, double max_scale, Rng& rng) {
  if (height <= 0 || width <= 0) throw ValidationError("empty image");
  if (!(min_scale > 0.0) || !(min_scale <= max_scale)) throw ValidationError("crop scales must satisfy 0 < min <= max");
  if (max_scale > 1.0) throw ValidationError("crop larger than image (max scale " + std::to_string(max_scale) + ")");
  const int base = std::min(height, width);
  std::uniform_real_distribution<double> scale(min_scale, max_scale);
  CropWindow w;
  w.side = std::clamp(static_cast<int>(std::lround(scale(rng) * base)), 1, base);
  w.top = std::uniform_int_distribution<int>(0, height - w.side)(rng);
  w.left = std::uniform_int_distribution<int>(0, width - w.side)(rng);
  return w;
}

template <typename Rng>
Image augment_crop(const Image& image, double min_scale, double max_scale, Rng& rng) {
  return crop_resize(image, sample_crop(image.height(), image.width(), min_scale, max_scale, rng));
}

enum class TimestepSampling {
  Uniform,   // t ~ U{1..T_max}, loss weighted by W(t)
  Weighted,  // t ~ W, loss weighted by 1 / T_max (same expectation)
};

TimestepSampling parse_timestep_sampling(const std::string& name);

struct TrainConfig {
  double learning_rate = 5e-4;
  int warmup_steps = 1000;
  int epochs = 55;
  int batch_size = 1;
  double crop_min_scale = 0.5;
  double crop_max_scale = 0.8;
  bool augment = true;
  std::uint64_t seed = 0;
  long max_steps = -1;  // overrides epochs when >= 0
  TimestepSampling sampling = TimestepSampling::Uniform;
  SdsConfig sds;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::string checkpoint_dir;  // empty disables checkpoints

  void validate() const;
  static TrainConfig from_config(const Config& cfg);
};

/// Linear warm-up from 0 at step 0 to the base rate at `warmup_steps`.
inline double lr_at(long step, const TrainConfig& cfg) {
  if (step < 0) throw ValidationError("step must be non-negative");
  if (cfg.warmup_steps <= 0 || step >= cfg.warmup_steps) return cfg.learning_rate;
  return cfg.learning_rate * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
}

namespace detail {

template <typename Scalar>
std::vector<Matrix<Scalar>*> tensors(Shape2ClipParams<Scalar>& p) {
  std::vector<Matrix<Scalar>*> out;
  p.for_each_tensor([&](const std::string&, Matrix<Scalar>& m) { out.push_back(&m); });
  return out;
}

}  // namespace detail

/// dst += scale * src, tensor by tensor.
template <typename Scalar>
void axpy(Shape2ClipParams<Scalar>& dst, const Shape2ClipParams<Scalar>& src, Scalar scale) {
  auto d = detail::tensors(dst);
  std::size_t k = 0;
  src.for_each_tensor([&](const std::string&, const Matrix<Scalar>& m) { *d[k++] += scale * m; });
}

template <typename Scalar>
class Adam {
 public:
  Adam(const Shape2ClipParams<Scalar>& like, double beta1, double beta2, double eps)
      : m_(like.zeros_like()), v_(like.zeros_like()), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(Shape2ClipParams<Scalar>& params, const Shape2ClipParams<Scalar>& grad, double lr) {
    ++t_;
    const Scalar b1 = static_cast<Scalar>(beta1_), b2 = static_cast<Scalar>(beta2_);
    const Scalar c1 = static_cast<Scalar>(1.0 - std::pow(beta1_, static_cast<double>(t_)));
    const Scalar c2 = static_cast<Scalar>(1.0 - std::pow(beta2_, static_cast<double>(t_)));
    const Scalar rate = static_cast<Scalar>(lr), eps = static_cast<Scalar>(eps_);
    auto p = detail::tensors(params);
    auto m = detail::tensors(m_);
    auto v = detail::tensors(v_);
    std::size_t k = 0;
    grad.for_each_tensor([&](const std::string&, const Matrix<Scalar>& g) {
      *m[k] = b1 * *m[k] + (Scalar(1) - b1) * g;
      v[k]->array() = b2 * v[k]->array() + (Scalar(1) - b2) * g.array().square();
      p[k]->array() -= rate * (m[k]->array() / c1) / ((v[k]->array() / c2).sqrt() + eps);
      ++k;
    });
  }
  long steps_taken() const { return t_; }

 private:
  Shape2ClipParams<Scalar> m_, v_;
  double beta1_, beta2_, eps_;
  long t_ = 0;
};

template <typename Scalar>
struct TrainingTriplet {
  std::string shape_id;
  Matrix<Scalar> shape_tokens;  // B
  std::string prompt;           // category already substituted
  Matrix<Scalar> embedding;     // T
  TokenLayout layout;
  Image image;
  int view_index = 0;
};

struct StepRecord {
  long step = 0;
  std::vector<int> timesteps;  // one per batch element
  double loss = 0.0;           // batch mean
  double lr = 0.0;
};

/// One JSON object per line: {"step", "t", "loss", "lr"}; `t` is a number
/// for batch size 1 and an array otherwise.
std::string step_record_json(const StepRecord& r);

/// Trailing moving average with the given window.
std::vector<double> smoothed(const std::vector<double>& values, std::size_t window);

template <typename Scalar>
struct TrainResult {
  Shape2ClipParams<Scalar> params;
  std::vector<StepRecord> log;
  std::vector<std::string> checkpoints;
};

/// Optional per-step hook, e.g. for streaming the metrics log.
using StepCallback = std::function<void(const StepRecord&)>;

/// Adam over shuffled epochs. Each sample: crop-augment, encode to a latent,
/// draw t and eps, accumulate the SDS gradient; the batch mean is applied
/// with lr_at(k) on update k = 1, 2, .... Checkpoints go to
/// `checkpoint_dir/epoch_NNNN.s2c` after every epoch and `best.s2c` whenever
/// the epoch's mean loss improves.
template <typename Scalar>
TrainResult<Scalar> train(const std::vector<TrainingTriplet<Scalar>>& data, const DenoiserBackend<Scalar>& denoiser,
                          const Shape2ClipParams<Scalar>& initial, const TrainConfig& cfg,
                          const StepCallback& on_step = {});

/// Builds triplets from a manifest: shape tokens cached per cloud path, the
/// category substituted into each prompt, images read from PNG.
template <typename Scalar>
std::vector<TrainingTriplet<Scalar>> load_triplets(const std::string& manifest_path, const BackendSuite<Scalar>& suite);

extern template TrainResult<float> train<float>(const std::vector<TrainingTriplet<float>>&, const DenoiserBackend<float>&,
                                                const Shape2ClipParams<float>&, const TrainConfig&, const StepCallback&);
extern template TrainResult<double> train<double>(const std::vector<TrainingTriplet<double>>&,
                                                  const DenoiserBackend<double>&, const Shape2ClipParams<double>&,
                                                  const TrainConfig&, const StepCallback&);
extern template std::vector<TrainingTriplet<float>> load_triplets<float>(const std::string&, const BackendSuite<float>&);
extern template std::vector<TrainingTriplet<double>> load_triplets<double>(const std::string&,
                                                                           const BackendSuite<double>&);

}  // namespace shapewords
