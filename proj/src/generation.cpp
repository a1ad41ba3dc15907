#include "shapewords/generation.hpp"

#include <cmath>
#include <functional>
#include <random>

namespace shapewords {

std::vector<int> sampler_timesteps(int max_timestep, int steps) {
  if (steps <= 0) throw ValidationError("steps must be positive");
  if (steps > max_timestep)
    throw ValidationError("steps (" + std::to_string(steps) + ") exceed the schedule length " + std::to_string(max_timestep));
  std::vector<int> ts(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i)
    ts[static_cast<std::size_t>(i)] =
        max_timestep - static_cast<int>(static_cast<long long>(i) * max_timestep / steps);
  return ts;
}

int HandoffSpec::phase_one_steps(int steps) const {
  if (!(k_percent >= 0.0 && k_percent <= 100.0)) throw ValidationError("handoff K must be in [0, 100]");
  if (steps <= 0) throw ValidationError("steps must be positive");
  // Snap products within rounding error of an integer before taking ceil.
  const double exact = k_percent * steps / 100.0;
  const double rounded = std::round(exact);
  const int n = std::abs(exact - rounded) < 1e-9 ? static_cast<int>(rounded) : static_cast<int>(std::ceil(exact));
  return std::clamp(n, 0, steps);
}

template <typename Scalar>
Vector<Scalar> initial_latent(const LatentShape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector<Scalar> z(shape.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = static_cast<Scalar>(normal(rng));
  return z;
}

namespace {

template <typename Scalar>
using NoiseFn = std::function<Vector<Scalar>(const Vector<Scalar>&, int)>;

template <typename Scalar>
struct Sampler {
  const DenoiserBackend<Scalar>& denoiser;
  const SamplerConfig& cfg;
  std::vector<int> timesteps;
  Vector<Scalar> z;
  std::mt19937_64 rng;

  Sampler(const DenoiserBackend<Scalar>& d, const SamplerConfig& c)
      : denoiser(d),
        cfg(c),
        timesteps(sampler_timesteps(d.num_timesteps(), c.steps)),
        z(initial_latent<Scalar>(d.latent_shape(), c.seed)),
        rng(c.seed ^ 0x9e3779b97f4a7c15ULL) {}

  /// Reverse steps [begin, end). The step after the last uses abar = 1, so
  /// the final latent is the clean estimate.
  void run(std::size_t begin, std::size_t end, const NoiseFn<Scalar>& eps_fn) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t i = begin; i < end; ++i) {
      const int t = timesteps[i];
      const double a = denoiser.alpha_bar(t);
      const double a_prev = i + 1 < timesteps.size() ? denoiser.alpha_bar(timesteps[i + 1]) : 1.0;
      const Vector<Scalar> eps = eps_fn(z, t);
      const Vector<Scalar> x0 = (z - static_cast<Scalar>(std::sqrt(1.0 - a)) * eps) / static_cast<Scalar>(std::sqrt(a));
      const double sigma = cfg.eta * std::sqrt((1.0 - a_prev) / (1.0 - a)) * std::sqrt(1.0 - a / a_prev);
      const double dir = std::sqrt(std::max(0.0, 1.0 - a_prev - sigma * sigma));
      z = static_cast<Scalar>(std::sqrt(a_prev)) * x0 + static_cast<Scalar>(dir) * eps;
      if (sigma > 0.0)
        for (Eigen::Index k = 0; k < z.size(); ++k) z[k] += static_cast<Scalar>(sigma * normal(rng));
      if (!z.allFinite()) throw NumericError("non-finite latent at timestep " + std::to_string(t));
    }
  }
};

template <typename Scalar>
NoiseFn<Scalar> text_noise(const BackendSuite<Scalar>& suite, const Matrix<Scalar>& prompt, const SamplerConfig& cfg,
                           int* counter) {
  const DenoiserBackend<Scalar>& d = *suite.denoiser;
  if (cfg.guidance_scale == 1.0)
    return [&d, &prompt, counter](const Vector<Scalar>& z, int t) {
      if (counter) ++*counter;
      return d.predict_noise(z, t, prompt);
    };
  auto uncond = std::make_shared<Matrix<Scalar>>(suite.text->encode("").embedding);
  const Scalar s = static_cast<Scalar>(cfg.guidance_scale);
  return [&d, &prompt, counter, uncond, s](const Vector<Scalar>& z, int t) {
    if (counter) ++*counter;
    const Vector<Scalar> eu = d.predict_noise(z, t, *uncond);
    return Vector<Scalar>(eu + s * (d.predict_noise(z, t, prompt) - eu));
  };
}

template <typename Scalar>
void require_params(const Shape2ClipParams<Scalar>& params) {
  if (params.blocks.empty()) throw ValidationError("shape2clip parameters are not loaded");
}

}  // namespace

template <typename Scalar>
Conditioning<Scalar> encode_for_generation(const BackendSuite<Scalar>& suite, const ShapePrompt<Scalar>& shape) {
  Conditioning<Scalar> c;
  c.text = expand_template(shape.prompt_template, shape.category);
  EncodedPrompt<Scalar> enc = encode_prompt(*suite.text, c.text, shape.category);
  c.prompt = std::move(enc.embedding);
  c.layout = enc.layout;
  c.conditioned = c.prompt;
  return c;
}

template <typename Scalar>
void apply_guidance(Conditioning<Scalar>& c, const Matrix<Scalar>& shape_tokens, const Shape2ClipParams<Scalar>& params,
                    const GuidanceSpec& spec, GenerationTrace* trace) {
  spec.validate();
  require_params(params);
  if (c.delta.size() == 0) {
    c.delta = forward(shape_tokens, c.prompt, params);
    if (trace) ++trace->shape2clip_calls;
  }
  c.conditioned = apply_residual(c.prompt, c.delta, spec, c.layout);
}

template <typename Scalar>
Image sample_image(const BackendSuite<Scalar>& suite, const Matrix<Scalar>& prompt, const SamplerConfig& sampler,
                   GenerationTrace* trace) {
  sampler.validate();
  Sampler<Scalar> s(*suite.denoiser, sampler);
  s.run(0, s.timesteps.size(), text_noise(suite, prompt, sampler, trace ? &trace->phase_two_calls : nullptr));
  return suite.denoiser->decode_latent(s.z);
}

template <typename Scalar>
Image generate(const BackendSuite<Scalar>& suite, const Shape2ClipParams<Scalar>& params, const ShapePrompt<Scalar>& shape,
               const GuidanceSpec& spec, const SamplerConfig& sampler, GenerationTrace* trace) {
  spec.validate();
  sampler.validate();
  require_params(params);
  Conditioning<Scalar> c = encode_for_generation(suite, shape);
  apply_guidance(c, shape.shape_tokens, params, spec, trace);
  if (trace) trace->layout = c.layout;
  return sample_image(suite, c.conditioned, sampler, trace);
}

template <typename Scalar>
Image generate_plain(const BackendSuite<Scalar>& suite, const std::string& text, const SamplerConfig& sampler) {
  const Matrix<Scalar> prompt = suite.text->encode(text).embedding;
  return sample_image(suite, prompt, sampler);
}

template <typename Scalar>
Image generate_with_handoff(const BackendSuite<Scalar>& suite, const Shape2ClipParams<Scalar>& params,
                            const ShapePrompt<Scalar>& shape, const GuidanceSpec& spec, const SamplerConfig& sampler,
                            const HandoffSpec& handoff, GenerationTrace* trace) {
  spec.validate();
  sampler.validate();
  handoff.validate();
  if (handoff.k_percent == 0.0 && handoff.mode == HandoffMode::ShapeWords)
    return generate(suite, params, shape, spec, sampler, trace);

  Conditioning<Scalar> c = encode_for_generation(suite, shape);
  if (trace) trace->layout = c.layout;
  Sampler<Scalar> s(*suite.denoiser, sampler);
  const std::size_t total = s.timesteps.size();
  const std::size_t split = static_cast<std::size_t>(handoff.phase_one_steps(sampler.steps));

  int phase_one = 0, phase_two = 0;
  if (split > 0) {
    if (!suite.control) throw BackendError("no depth-control backend configured");
    const DepthControlBackend<Scalar>& control = *suite.control;
    const Plane& depth = *handoff.depth;
    const Matrix<Scalar>& prompt = c.prompt;
    s.run(0, split, [&](const Vector<Scalar>& z, int t) {
      ++phase_one;
      return control.predict_noise(z, t, prompt, depth);
    });
  }
  if (split < total) {
    if (handoff.mode == HandoffMode::ShapeWords) {
      require_params(params);
      apply_guidance(c, shape.shape_tokens, params, spec, trace);
    }
    s.run(split, total, text_noise(suite, c.conditioned, sampler, &phase_two));
  }
  if (static_cast<std::size_t>(phase_one + phase_two) != total)
    throw NumericError("handoff step accounting mismatch: " + std::to_string(phase_one) + " + " +
                       std::to_string(phase_two) + " != " + std::to_string(total));
  if (trace) {
    trace->phase_one_calls += phase_one;
    trace->phase_two_calls += phase_two;
  }
  return suite.denoiser->decode_latent(s.z);
}

template <typename Scalar>
std::vector<Image> sweep_lambda(const BackendSuite<Scalar>& suite, const Shape2ClipParams<Scalar>& params,
                                const ShapePrompt<Scalar>& shape, TokenStrategy strategy,
                                const std::vector<double>& lambdas, const SamplerConfig& sampler) {
  if (lambdas.empty()) throw ValidationError("lambda list is empty");
  for (double l : lambdas) GuidanceSpec{l, strategy}.validate();
  sampler.validate();
  require_params(params);
  Conditioning<Scalar> c = encode_for_generation(suite, shape);
  std::vector<Image> out;
  out.reserve(lambdas.size());
  for (double l : lambdas) {
    apply_guidance(c, shape.shape_tokens, params, GuidanceSpec{l, strategy});
    out.push_back(sample_image(suite, c.conditioned, sampler));
  }
  return out;
}

#define SHAPEWORDS_GENERATION_INSTANTIATE(S)                                                                       \
  template Vector<S> initial_latent<S>(const LatentShape&, std::uint64_t);                                        \
  template Conditioning<S> encode_for_generation<S>(const BackendSuite<S>&, const ShapePrompt<S>&);               \
  template void apply_guidance<S>(Conditioning<S>&, const Matrix<S>&, const Shape2ClipParams<S>&,                  \
                                  const GuidanceSpec&, GenerationTrace*);                                           \
  template Image sample_image<S>(const BackendSuite<S>&, const Matrix<S>&, const SamplerConfig&, GenerationTrace*); \
  template Image generate<S>(const BackendSuite<S>&, const Shape2ClipParams<S>&, const ShapePrompt<S>&,            \
                             const GuidanceSpec&, const SamplerConfig&, GenerationTrace*);                          \
  template Image generate_plain<S>(const BackendSuite<S>&, const std::string&, const SamplerConfig&);             \
  template Image generate_with_handoff<S>(const BackendSuite<S>&, const Shape2ClipParams<S>&, const ShapePrompt<S>&, \
                                          const GuidanceSpec&, const SamplerConfig&, const HandoffSpec&,            \
                                          GenerationTrace*);                                                        \
  template std::vector<Image> sweep_lambda<S>(const BackendSuite<S>&, const Shape2ClipParams<S>&,                  \
                                              const ShapePrompt<S>&, TokenStrategy, const std::vector<double>&,     \
                                              const SamplerConfig&);

SHAPEWORDS_GENERATION_INSTANTIATE(float)
SHAPEWORDS_GENERATION_INSTANTIATE(double)

}  // namespace shapewords
