#pragma once

#include "shapewords/config.hpp"
#include "shapewords/core.hpp"

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace shapewords {

/// Output of a text encoder: the 77 x D_t embedding plus the token occupying
/// each content slot (slot 0 is the begin marker, `eos_index` the end marker).
template <typename Scalar>
struct TextEncoding {
  Matrix<Scalar> embedding;
  std::vector<std::string> tokens;
  int eos_index = 0;
};

template <typename Scalar>
class TextEncoderBackend {
 public:
  virtual ~TextEncoderBackend() = default;
  virtual int embed_dim() const = 0;
  int max_tokens() const { return kMaxTokens; }
  /// Word tokens only, no markers.
  virtual std::vector<std::string> tokenize(const std::string& text) const = 0;
  virtual TextEncoding<Scalar> encode(const std::string& text) const = 0;
  virtual std::uint64_t state_digest() const { return 0; }
};

template <typename Scalar>
class ShapeEncoderBackend {
 public:
  virtual ~ShapeEncoderBackend() = default;
  int token_count() const { return kShapeTokenCount; }
  virtual int shape_dim() const = 0;
  /// 65 x D_s tokens; row 0 is the class token.
  virtual Matrix<Scalar> encode(const Points<double>& cloud) const = 0;
  virtual std::uint64_t state_digest() const { return 0; }
};

/// Noise-prediction network over flattened latents. Timesteps are 1-based.
template <typename Scalar>
class DenoiserBackend {
 public:
  virtual ~DenoiserBackend() = default;
  virtual LatentShape latent_shape() const = 0;
  virtual int num_timesteps() const = 0;
  /// alpha_bar(t) for t in [1, num_timesteps()], strictly decreasing in (0, 1).
  virtual double alpha_bar(int t) const = 0;
  virtual Vector<Scalar> predict_noise(const Vector<Scalar>& noisy_latent, int t, const Matrix<Scalar>& prompt) const = 0;
  /// Vector-Jacobian product of predict_noise with respect to the prompt
  /// embedding: returns d<upstream, eps_hat>/d prompt.
  virtual Matrix<Scalar> prompt_vjp(const Vector<Scalar>& noisy_latent, int t, const Matrix<Scalar>& prompt,
                                    const Vector<Scalar>& upstream) const = 0;
  virtual Vector<Scalar> encode_image(const Image& image) const = 0;
  virtual Image decode_latent(const Vector<Scalar>& latent) const = 0;
  virtual std::uint64_t state_digest() const { return 0; }
};

/// Depth-conditioned branch used for the first phase of latent handoff.
template <typename Scalar>
class DepthControlBackend {
 public:
  virtual ~DepthControlBackend() = default;
  virtual Vector<Scalar> predict_noise(const Vector<Scalar>& noisy_latent, int t, const Matrix<Scalar>& prompt,
                                       const Plane& depth) const = 0;
};

class ImageFeatureBackend {
 public:
  virtual ~ImageFeatureBackend() = default;
  virtual int feature_dim() const = 0;
  virtual Eigen::VectorXd embed_image(const Image& image) const = 0;
  virtual Eigen::VectorXd embed_text(const std::string& text) const = 0;
  virtual double aesthetic_score(const Image& image) const = 0;
};

class SegmenterBackend {
 public:
  virtual ~SegmenterBackend() = default;
  virtual Mask segment(const Image& image) const = 0;
};

struct SynthesisParams {
  double control_strength = 2.0;
  int steps = 50;
};

/// Depth-conditioned image generator used to build training data.
class ImageGeneratorBackend {
 public:
  virtual ~ImageGeneratorBackend() = default;
  virtual Image generate(const Plane& depth, const std::string& prompt, const SynthesisParams& params,
                         std::uint64_t seed) const = 0;
};

class InpainterBackend {
 public:
  virtual ~InpainterBackend() = default;
  /// Replaces pixels outside `foreground` according to `strength` in [0, 1].
  virtual Image inpaint(const Image& image, const Mask& foreground, const std::string& prompt, double strength,
                        std::uint64_t seed) const = 0;
};

template <typename Scalar>
struct BackendSuite {
  std::string kind;
  std::shared_ptr<const TextEncoderBackend<Scalar>> text;
  std::shared_ptr<const ShapeEncoderBackend<Scalar>> shape;
  std::shared_ptr<const DenoiserBackend<Scalar>> denoiser;
  std::shared_ptr<const DepthControlBackend<Scalar>> control;
  std::shared_ptr<const ImageFeatureBackend> features;
  std::shared_ptr<const SegmenterBackend> segmenter;
  std::shared_ptr<const ImageGeneratorBackend> generator;
  std::shared_ptr<const InpainterBackend> inpainter;

  /// Combined digest of every backend's parameters.
  std::uint64_t state_digest() const;
};

struct ToySuiteOptions {
  std::uint64_t seed = 7;
  int text_dim = 16;
  int shape_dim = 8;
  LatentShape latent{4, 8, 8};
  int timesteps = 100;
  int feature_dim = 32;
  double segmenter_threshold = 0.5;

  static ToySuiteOptions from_config(const Config& cfg);
};

template <typename Scalar>
BackendSuite<Scalar> make_toy_suite(const ToySuiteOptions& options);

/// `backend.kind = toy` builds the deterministic toy suite; `external` binds
/// JSON-over-HTTP adapters at `backend.model_path.<role>` and probes them.
template <typename Scalar>
BackendSuite<Scalar> load_backend_suite(const Config& config);

extern template BackendSuite<float> make_toy_suite<float>(const ToySuiteOptions&);
extern template BackendSuite<double> make_toy_suite<double>(const ToySuiteOptions&);
extern template BackendSuite<float> load_backend_suite<float>(const Config&);
extern template BackendSuite<double> load_backend_suite<double>(const Config&);

/// Linear-beta DDPM schedule: alpha_bar_t = prod_{s<=t} (1 - beta_s), beta
/// linear from beta_start to beta_end. Index 0 holds t = 1.
std::vector<double> linear_alpha_bar_schedule(int timesteps, double beta_start = 1e-4, double beta_end = 2e-2);

/// FNV-1a; stable across platforms, used for hash-seeded embeddings.
std::uint64_t fnv1a(const std::string& s, std::uint64_t basis = 1469598103934665603ULL);

}  // namespace shapewords
