#pragma once

// Call-counting decorators for the denoiser and depth-control backends.

#include "shapewords/backends.hpp"

#include <atomic>
#include <memory>

namespace fixture {

using namespace shapewords;

template <typename S>
class CountingDenoiser final : public DenoiserBackend<S> {
 public:
  explicit CountingDenoiser(std::shared_ptr<const DenoiserBackend<S>> inner) : inner_(std::move(inner)) {}
  LatentShape latent_shape() const override { return inner_->latent_shape(); }
  int num_timesteps() const override { return inner_->num_timesteps(); }
  double alpha_bar(int t) const override { return inner_->alpha_bar(t); }
  Vector<S> predict_noise(const Vector<S>& z, int t, const Matrix<S>& prompt) const override {
    ++calls;
    return inner_->predict_noise(z, t, prompt);
  }
  Matrix<S> prompt_vjp(const Vector<S>& z, int t, const Matrix<S>& prompt, const Vector<S>& up) const override {
    return inner_->prompt_vjp(z, t, prompt, up);
  }
  Vector<S> encode_image(const Image& image) const override { return inner_->encode_image(image); }
  Image decode_latent(const Vector<S>& latent) const override { return inner_->decode_latent(latent); }
  std::uint64_t state_digest() const override { return inner_->state_digest(); }

  mutable std::atomic<int> calls{0};

 private:
  std::shared_ptr<const DenoiserBackend<S>> inner_;
};

template <typename S>
class CountingControl final : public DepthControlBackend<S> {
 public:
  explicit CountingControl(std::shared_ptr<const DepthControlBackend<S>> inner) : inner_(std::move(inner)) {}
  Vector<S> predict_noise(const Vector<S>& z, int t, const Matrix<S>& prompt, const Plane& depth) const override {
    ++calls;
    return inner_->predict_noise(z, t, prompt, depth);
  }

  mutable std::atomic<int> calls{0};

 private:
  std::shared_ptr<const DepthControlBackend<S>> inner_;
};

/// Replaces the suite's denoiser and control branch with counting wrappers.
template <typename S>
std::pair<std::shared_ptr<CountingDenoiser<S>>, std::shared_ptr<CountingControl<S>>> instrument(BackendSuite<S>& suite) {
  auto d = std::make_shared<CountingDenoiser<S>>(suite.denoiser);
  auto c = std::make_shared<CountingControl<S>>(suite.control);
  suite.denoiser = d;
  suite.control = c;
  return {d, c};
}

}  // namespace fixture
