#pragma once

// Deterministic reverse diffusion (DDIM, eta = 0 by default) conditioned on
// T' = T + lambda * dT, plus the depth-controlled latent handoff used for
// the ShapeWords@K and CNet-Stop@K comparisons.

#include "shapewords/backends.hpp"
#include "shapewords/prompts.hpp"
#include "shapewords/shape2clip.hpp"

#include <optional>
#include <string>
#include <vector>

namespace shapewords {

struct SamplerConfig {
  int steps = 50;
  std::uint64_t seed = 0;
  double eta = 0.0;             // 0 deterministic; > 0 adds DDIM noise
  double guidance_scale = 1.0;  // classifier-free guidance; 1 disables

  void validate() const {
    if (steps <= 0) throw ValidationError("steps must be positive");
    if (!(eta >= 0.0 && eta <= 1.0)) throw ValidationError("eta must be in [0, 1]");
    if (!(guidance_scale >= 0.0) || !std::isfinite(guidance_scale)) throw ValidationError("guidance scale must be >= 0");
  }
};

/// `steps` distinct descending timesteps starting at T_max:
/// t_i = T_max - floor(i * T_max / steps).
std::vector<int> sampler_timesteps(int max_timestep, int steps);

/// Standard-normal initial latent drawn from the sampler seed.
template <typename Scalar>
Vector<Scalar> initial_latent(const LatentShape& shape, std::uint64_t seed);

/// A shape plus the prompt template that mentions it.
template <typename Scalar>
struct ShapePrompt {
  Matrix<Scalar> shape_tokens;  // B
  std::string prompt_template;  // contains [SHAPE-ID]
  std::string category;         // replaces [SHAPE-ID]
};

template <typename Scalar>
struct Conditioning {
  std::string text;
  Matrix<Scalar> prompt;       // T
  TokenLayout layout;
  Matrix<Scalar> delta;        // dT; empty when not computed
  Matrix<Scalar> conditioned;  // T'
};

/// Per-call bookkeeping for instrumentation.
struct GenerationTrace {
  int phase_one_calls = 0;  // depth-conditioned denoiser calls
  int phase_two_calls = 0;  // text-conditioned denoiser calls
  int shape2clip_calls = 0;
  TokenLayout layout;
};

template <typename Scalar>
Conditioning<Scalar> encode_for_generation(const BackendSuite<Scalar>& suite, const ShapePrompt<Scalar>& shape);

/// Adds dT and applies the guidance spec.
template <typename Scalar>
void apply_guidance(Conditioning<Scalar>& c, const Matrix<Scalar>& shape_tokens, const Shape2ClipParams<Scalar>& params,
                    const GuidanceSpec& spec, GenerationTrace* trace = nullptr);

/// Runs the sampler from `initial_latent(seed)` conditioned on `prompt` and
/// decodes the final latent.
template <typename Scalar>
Image sample_image(const BackendSuite<Scalar>& suite, const Matrix<Scalar>& prompt, const SamplerConfig& sampler,
                   GenerationTrace* trace = nullptr);

template <typename Scalar>
Image generate(const BackendSuite<Scalar>& suite, const Shape2ClipParams<Scalar>& params, const ShapePrompt<Scalar>& shape,
               const GuidanceSpec& spec, const SamplerConfig& sampler, GenerationTrace* trace = nullptr);

/// Same sampler on the unmodified text prompt.
template <typename Scalar>
Image generate_plain(const BackendSuite<Scalar>& suite, const std::string& text, const SamplerConfig& sampler);

enum class HandoffMode { ShapeWords, CNetStop };

struct HandoffSpec {
  double k_percent = 0.0;  // share of steps under depth control
  std::optional<Plane> depth;
  HandoffMode mode = HandoffMode::ShapeWords;

  void validate() const {
    if (!(k_percent >= 0.0 && k_percent <= 100.0)) throw ValidationError("handoff K must be in [0, 100]");
    if (k_percent > 0.0 && !depth) throw ValidationError("handoff K > 0 requires a depth image");
  }
  /// ceil(K% * steps).
  int phase_one_steps(int steps) const;
};

/// Phase one: ceil(K% * steps) depth-conditioned steps on the category-
/// substituted prompt. Phase two: the remaining steps on T' (ShapeWords) or
/// the same plain prompt (CNet-Stop), continuing from the raw latent.
template <typename Scalar>
Image generate_with_handoff(const BackendSuite<Scalar>& suite, const Shape2ClipParams<Scalar>& params,
                            const ShapePrompt<Scalar>& shape, const GuidanceSpec& spec, const SamplerConfig& sampler,
                            const HandoffSpec& handoff, GenerationTrace* trace = nullptr);

/// One image per lambda from a single cached dT and a shared seed.
template <typename Scalar>
std::vector<Image> sweep_lambda(const BackendSuite<Scalar>& suite, const Shape2ClipParams<Scalar>& params,
                                const ShapePrompt<Scalar>& shape, TokenStrategy strategy,
                                const std::vector<double>& lambdas, const SamplerConfig& sampler);

#define SHAPEWORDS_GENERATION_EXTERN(S)                                                                              \
  extern template Vector<S> initial_latent<S>(const LatentShape&, std::uint64_t);                                   \
  extern template Conditioning<S> encode_for_generation<S>(const BackendSuite<S>&, const ShapePrompt<S>&);          \
  extern template void apply_guidance<S>(Conditioning<S>&, const Matrix<S>&, const Shape2ClipParams<S>&,             \
                                         const GuidanceSpec&, GenerationTrace*);                                      \
  extern template Image sample_image<S>(const BackendSuite<S>&, const Matrix<S>&, const SamplerConfig&,              \
                                        GenerationTrace*);                                                            \
  extern template Image generate<S>(const BackendSuite<S>&, const Shape2ClipParams<S>&, const ShapePrompt<S>&,       \
                                    const GuidanceSpec&, const SamplerConfig&, GenerationTrace*);                     \
  extern template Image generate_plain<S>(const BackendSuite<S>&, const std::string&, const SamplerConfig&);        \
  extern template Image generate_with_handoff<S>(const BackendSuite<S>&, const Shape2ClipParams<S>&,                 \
                                                 const ShapePrompt<S>&, const GuidanceSpec&, const SamplerConfig&,    \
                                                 const HandoffSpec&, GenerationTrace*);                               \
  extern template std::vector<Image> sweep_lambda<S>(const BackendSuite<S>&, const Shape2ClipParams<S>&,             \
                                                     const ShapePrompt<S>&, TokenStrategy, const std::vector<double>&, \
                                                     const SamplerConfig&);

SHAPEWORDS_GENERATION_EXTERN(float)
SHAPEWORDS_GENERATION_EXTERN(double)
#undef SHAPEWORDS_GENERATION_EXTERN

}  // namespace shapewords
