#pragma once

// Shared toy-world fixtures for the unit tests and the acceptance runner.

#include "shapewords/backends.hpp"
#include "shapewords/dataset.hpp"
#include "shapewords/prompts.hpp"
#include "shapewords/toy_shapes.hpp"
#include "shapewords/training.hpp"

#include <string>
#include <vector>

namespace fixture {

using namespace shapewords;

template <typename S>
BackendSuite<S> toy_suite(std::uint64_t seed = 7) {
  ToySuiteOptions o;
  o.seed = seed;
  return make_toy_suite<S>(o);
}

inline Points<double> shape(const std::string& category, std::uint64_t seed = 0) {
  return toy::procedural_shape(category, 512, seed);
}

/// One triplet per (shape, prompt, view) with images from the toy
/// synthesis pipeline.
template <typename S>
std::vector<TrainingTriplet<S>> triplets(const BackendSuite<S>& suite, const std::vector<std::string>& categories,
                                         const std::vector<std::string>& templates, const std::vector<int>& views) {
  std::vector<TrainingTriplet<S>> out;
  const int size = suite.denoiser->latent_shape().height * 8;
  for (const std::string& cat : categories) {
    const Points<double> cloud = shape(cat);
    const Matrix<S> tokens = suite.shape->encode(cloud);
    const RenderSet renders = build_render_set(cat, cloud, 20.0, size, 1);
    for (const std::string& tmpl : templates)
      for (int v : views) {
        TrainingTriplet<S> t;
        t.shape_id = cat;
        t.shape_tokens = tokens;
        t.prompt = expand_template(tmpl, cat);
        const EncodedPrompt<S> enc = encode_prompt(*suite.text, t.prompt, cat);
        t.embedding = enc.embedding;
        t.layout = enc.layout;
        GenerationJob job;
        job.job_id = cat + "_" + std::to_string(v);
        job.depth = renders.depths[static_cast<std::size_t>(v)];
        job.prompt = t.prompt;
        job.seed = fnv1a(job.job_id + tmpl);
        t.image = synthesize_image(job, *suite.generator, *suite.inpainter);
        t.view_index = v;
        out.push_back(std::move(t));
      }
  }
  return out;
}

/// Desk-scale schedule: the Gaussian center and width scaled from a
/// 1000-step schedule to the toy's 100 steps. Crops are off: with four
/// triplets the unpredictable crop target dominates the logged loss.
inline TrainConfig desk_train_config(long steps = 300) {
  TrainConfig c;
  c.augment = false;
  c.learning_rate = 1e-2;
  c.warmup_steps = 30;
  c.max_steps = steps;
  c.sds.center = 50.0;
  c.sds.width = 25.0;
  c.seed = 1;
  return c;
}

}  // namespace fixture
