#include "counting.hpp"
#include "fixtures.hpp"
#include "shapewords/generation.hpp"
#include "shapewords/image_io.hpp"

#include <gtest/gtest.h>

using namespace shapewords;

namespace {

Shape2ClipParams<double> nonzero_params(const BackendSuite<double>& suite, std::uint64_t seed) {
  Shape2ClipDims d;
  d.text_dim = suite.text->embed_dim();
  d.shape_dim = suite.shape->shape_dim();
  auto p = init_params<double>(d, seed);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 0.2);
  for (Eigen::Index i = 0; i < p.final_w.size(); ++i) p.final_w.data()[i] = n(rng);
  return p;
}

ShapePrompt<double> prompt_for(const BackendSuite<double>& suite, const std::string& cat, const std::string& tmpl) {
  return {suite.shape->encode(fixture::shape(cat)), tmpl, cat};
}

bool same_bytes(const Image& a, const Image& b) { return encode_png_rgb(a) == encode_png_rgb(b); }

}  // namespace

TEST(Sampler, TimestepsDescendFromMax) {
  EXPECT_EQ(sampler_timesteps(100, 4), (std::vector<int>{100, 75, 50, 25}));
  EXPECT_EQ(sampler_timesteps(100, 100).back(), 1);
  const auto t = sampler_timesteps(1000, 50);
  EXPECT_EQ(t.size(), 50u);
  EXPECT_TRUE(std::is_sorted(t.rbegin(), t.rend()));
  EXPECT_THROW(sampler_timesteps(100, 101), ValidationError);
  EXPECT_THROW(sampler_timesteps(100, 0), ValidationError);
}

TEST(Generate, LambdaZeroMatchesPlainPrompt) {
  const auto suite = fixture::toy_suite<double>();
  const auto params = nonzero_params(suite, 1);
  SamplerConfig s;
  s.steps = 20;
  for (auto strategy : {TokenStrategy::ObjectAndEos, TokenStrategy::AllTokens}) {
    const auto sp = prompt_for(suite, "chair", "a photo of a [SHAPE-ID]");
    const Image a = generate(suite, params, sp, GuidanceSpec{0.0, strategy}, s);
    EXPECT_TRUE(same_bytes(a, generate_plain(suite, "a photo of a chair", s)));
    EXPECT_FALSE(same_bytes(a, generate(suite, params, sp, GuidanceSpec{1.0, strategy}, s)));
  }
}

TEST(Generate, DeterministicPerSeed) {
  const auto suite = fixture::toy_suite<double>();
  const auto params = nonzero_params(suite, 2);
  const auto sp = prompt_for(suite, "lamp", "a [SHAPE-ID] in a garden");
  SamplerConfig s;
  s.steps = 10;
  s.seed = 5;
  EXPECT_TRUE(same_bytes(generate(suite, params, sp, GuidanceSpec{}, s), generate(suite, params, sp, GuidanceSpec{}, s)));
  // The toy clean estimate ignores the latent, so the last step to
  // alpha_bar = 1 lands on it whatever the seed.
  SamplerConfig other = s;
  other.seed = 6;
  EXPECT_TRUE(same_bytes(generate(suite, params, sp, GuidanceSpec{}, s), generate(suite, params, sp, GuidanceSpec{}, other)));
  EXPECT_FALSE(initial_latent<double>(suite.denoiser->latent_shape(), 5) == initial_latent<double>(suite.denoiser->latent_shape(), 6));
  s.eta = 0.5;
  EXPECT_TRUE(same_bytes(generate(suite, params, sp, GuidanceSpec{}, s), generate(suite, params, sp, GuidanceSpec{}, s)));
}

TEST(Generate, ConditioningMovesLinearlyAlongResidual) {
  const auto suite = fixture::toy_suite<double>();
  const auto params = nonzero_params(suite, 3);
  const auto sp = prompt_for(suite, "mug", "a photo of a [SHAPE-ID]");
  std::vector<Conditioning<double>> cs;
  for (double l : {0.0, 0.33, 0.67, 1.0}) {
    auto c = encode_for_generation(suite, sp);
    apply_guidance(c, sp.shape_tokens, params, GuidanceSpec{l, TokenStrategy::ObjectAndEos});
    cs.push_back(c);
  }
  const auto& L = cs[0].layout;
  for (int r : {L.shape_begin, L.eos_index}) {
    const RowVector<double> step = cs[3].conditioned.row(r) - cs[0].conditioned.row(r);
    EXPECT_GT(step.norm(), 0.0);
    EXPECT_LT((cs[1].conditioned.row(r) - cs[0].conditioned.row(r) - 0.33 * step).norm(), 1e-12);
    EXPECT_LT((cs[2].conditioned.row(r) - cs[0].conditioned.row(r) - 0.67 * step).norm(), 1e-12);
  }
  EXPECT_TRUE(cs[3].conditioned.row(0) == cs[0].conditioned.row(0));
}

TEST(Sweep, MatchesIndividualGenerations) {
  const auto suite = fixture::toy_suite<double>();
  const auto params = nonzero_params(suite, 4);
  const auto sp = prompt_for(suite, "table", "a sketch of a [SHAPE-ID]");
  SamplerConfig s;
  s.steps = 10;
  const auto imgs = sweep_lambda(suite, params, sp, TokenStrategy::ObjectAndEos, {0.0, 0.33, 0.67, 1.0, 1.0}, s);
  ASSERT_EQ(imgs.size(), 5u);
  EXPECT_TRUE(same_bytes(imgs[0], generate_plain(suite, "a sketch of a table", s)));
  EXPECT_TRUE(same_bytes(imgs[3], imgs[4]));
  EXPECT_TRUE(same_bytes(imgs[2], generate(suite, params, sp, GuidanceSpec{0.67, TokenStrategy::ObjectAndEos}, s)));
  const auto single = sweep_lambda(suite, params, sp, TokenStrategy::ObjectAndEos, {0.5}, s);
  ASSERT_EQ(single.size(), 1u);
  EXPECT_TRUE(same_bytes(single[0], generate(suite, params, sp, GuidanceSpec{0.5, TokenStrategy::ObjectAndEos}, s)));
  EXPECT_THROW(sweep_lambda(suite, params, sp, TokenStrategy::ObjectAndEos, {0.5, 1.2}, s), ValidationError);
}

TEST(Handoff, CallCountsForEveryK) {
  auto suite = fixture::toy_suite<double>();
  const auto [den, ctl] = fixture::instrument(suite);
  const auto params = nonzero_params(suite, 5);
  const auto sp = prompt_for(suite, "chair", "a photo of a [SHAPE-ID]");
  SamplerConfig s;
  s.steps = 100;
  HandoffSpec h;
  h.depth = build_render_set("c", fixture::shape("chair"), 20.0, 64, 1).depths[0];
  for (double k : {0.0, 20.0, 40.0, 60.0, 80.0, 100.0}) {
    for (auto mode : {HandoffMode::ShapeWords, HandoffMode::CNetStop}) {
      den->calls = 0;
      ctl->calls = 0;
      h.k_percent = k;
      h.mode = mode;
      GenerationTrace trace;
      generate_with_handoff(suite, params, sp, GuidanceSpec{}, s, h, &trace);
      EXPECT_EQ(ctl->calls.load(), static_cast<int>(k)) << k;
      EXPECT_EQ(den->calls.load(), 100 - static_cast<int>(k)) << k;
      EXPECT_EQ(trace.phase_one_calls, static_cast<int>(k));
      EXPECT_EQ(trace.phase_two_calls, 100 - static_cast<int>(k));
      if (k == 100.0 || mode == HandoffMode::CNetStop)
        EXPECT_EQ(trace.shape2clip_calls, 0) << k;
      else
        EXPECT_EQ(trace.shape2clip_calls, 1) << k;
    }
  }
}

TEST(Handoff, KZeroEqualsGenerateAndRounding) {
  const auto suite = fixture::toy_suite<double>();
  const auto params = nonzero_params(suite, 6);
  const auto sp = prompt_for(suite, "lamp", "a photo of a [SHAPE-ID]");
  SamplerConfig s;
  s.steps = 30;
  HandoffSpec h;
  EXPECT_TRUE(same_bytes(generate_with_handoff(suite, params, sp, GuidanceSpec{}, s, h),
                         generate(suite, params, sp, GuidanceSpec{}, s)));
  h.k_percent = 10.0;
  EXPECT_EQ(h.phase_one_steps(30), 3);
  h.k_percent = 33.4;
  EXPECT_EQ(h.phase_one_steps(30), 11);
  h.k_percent = 70.0;
  EXPECT_EQ(h.phase_one_steps(10), 7);
  EXPECT_THROW(generate_with_handoff(suite, params, sp, GuidanceSpec{}, s, h), ValidationError);
  h.k_percent = 120.0;
  EXPECT_THROW(h.validate(), ValidationError);
}

TEST(Generate, FloatSuiteRuns) {
  const auto suite = fixture::toy_suite<float>();
  Shape2ClipDims d;
  d.text_dim = suite.text->embed_dim();
  d.shape_dim = suite.shape->shape_dim();
  const auto params = init_params<float>(d, 0);
  ShapePrompt<float> sp{suite.shape->encode(fixture::shape("ring")), "a [SHAPE-ID] on a table", "ring"};
  SamplerConfig s;
  s.steps = 8;
  const Image img = generate(suite, params, sp, GuidanceSpec{}, s);
  EXPECT_EQ(img.height(), 64);
  EXPECT_TRUE(same_bytes(img, generate_plain(suite, "a ring on a table", s)));
}
