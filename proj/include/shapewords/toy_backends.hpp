#pragma once

#include "shapewords/backends.hpp"

#include <random>

namespace shapewords::toy {

/// Deterministic normal matrix; identical values for every Scalar.
Eigen::MatrixXd normal_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double stddev);

std::uint64_t digest_bytes(const void* data, std::size_t size, std::uint64_t h);

template <typename Derived>
std::uint64_t digest(const Eigen::DenseBase<Derived>& m, std::uint64_t h) {
  const auto e = m.eval();
  return digest_bytes(e.data(), sizeof(typename Derived::Scalar) * static_cast<std::size_t>(e.size()), h);
}

/// Block-average of each RGB channel onto a rows x cols grid, centered at 0.5.
Eigen::VectorXd pooled_features(const Image& image, int rows, int cols);

/// Whitespace tokenizer over a hash-seeded embedding table. Layout: slot 0
/// begin marker, words, EOS (carries the mean word embedding as context),
/// then identical padding rows.
template <typename Scalar>
class TextEncoder final : public TextEncoderBackend<Scalar> {
 public:
  TextEncoder(std::uint64_t seed, int dim);
  int embed_dim() const override { return dim_; }
  std::vector<std::string> tokenize(const std::string& text) const override;
  TextEncoding<Scalar> encode(const std::string& text) const override;
  std::uint64_t state_digest() const override;

  Matrix<Scalar> word_embedding(const std::string& word) const;
  const RowVector<Scalar>& padding_embedding() const { return pad_; }

 private:
  std::uint64_t seed_;
  int dim_;
  RowVector<Scalar> bos_, eos_, pad_;
  Matrix<Scalar> positions_;
};

/// PointNet-style patch encoder: FPS to at most 1024 points, normalize,
/// 64 FPS patches, per-patch max-pooled tanh features; row 0 is a class
/// token computed from the mean patch feature.
template <typename Scalar>
class ShapeEncoder final : public ShapeEncoderBackend<Scalar> {
 public:
  ShapeEncoder(std::uint64_t seed, int dim);
  int shape_dim() const override { return dim_; }
  Matrix<Scalar> encode(const Points<double>& cloud) const override;
  std::uint64_t state_digest() const override;

 private:
  int dim_;
  Eigen::MatrixXd w_rel_, w_ctr_, w_cls_;
  Eigen::VectorXd b_, b_cls_;
};

/// Denoiser of a toy latent world whose clean latents are tanh(A c + b) for a
/// D_t-dim code c. Conditioning is the mean-pooled prompt embedding, so
///   eps_hat = (z_t - sqrt(abar_t) * tanh(A * mean_rows(T) + b)) / sqrt(1 - abar_t).
/// encode_image maps pooled image features through a fixed projection to a
/// code and the same tanh head.
template <typename Scalar>
class Denoiser final : public DenoiserBackend<Scalar> {
 public:
  Denoiser(std::uint64_t seed, int text_dim, LatentShape latent, int timesteps);
  LatentShape latent_shape() const override { return latent_; }
  int num_timesteps() const override { return static_cast<int>(alpha_bar_.size()); }
  double alpha_bar(int t) const override;
  Vector<Scalar> predict_noise(const Vector<Scalar>& z, int t, const Matrix<Scalar>& prompt) const override;
  Matrix<Scalar> prompt_vjp(const Vector<Scalar>& z, int t, const Matrix<Scalar>& prompt,
                            const Vector<Scalar>& upstream) const override;
  Vector<Scalar> encode_image(const Image& image) const override;
  Image decode_latent(const Vector<Scalar>& latent) const override;
  std::uint64_t state_digest() const override;

  /// Clean-latent estimate for a pooled conditioning vector.
  Vector<Scalar> clean_estimate(const Vector<Scalar>& conditioning) const;
  /// Code that encode_image feeds to the tanh head.
  Vector<Scalar> image_code(const Image& image) const;
  int image_height() const { return latent_.height * 8; }
  int image_width() const { return latent_.width * 8; }

  const Matrix<Scalar>& head() const { return head_; }
  const Vector<Scalar>& head_bias() const { return head_bias_; }

 private:
  void check(const Vector<Scalar>& z, int t, const Matrix<Scalar>& prompt) const;

  int text_dim_;
  LatentShape latent_;
  std::vector<double> alpha_bar_;
  Matrix<Scalar> head_;       // L x D_t
  Vector<Scalar> head_bias_;  // L
  Matrix<Scalar> code_proj_;  // D_t x 3*h*w
};

/// Same latent world; conditioning is the pooled prompt plus a projection of
/// the block-averaged depth image.
template <typename Scalar>
class DepthControl final : public DepthControlBackend<Scalar> {
 public:
  DepthControl(std::uint64_t seed, std::shared_ptr<const Denoiser<Scalar>> base);
  Vector<Scalar> predict_noise(const Vector<Scalar>& z, int t, const Matrix<Scalar>& prompt,
                               const Plane& depth) const override;

 private:
  std::shared_ptr<const Denoiser<Scalar>> base_;
  Matrix<Scalar> depth_proj_;  // D_t x h*w
};

class ImageFeatures final : public ImageFeatureBackend {
 public:
  static constexpr double kAestheticScore = 5.0;

  ImageFeatures(std::uint64_t seed, int dim);
  int feature_dim() const override { return dim_; }
  Eigen::VectorXd embed_image(const Image& image) const override;
  Eigen::VectorXd embed_text(const std::string& text) const override;
  /// Constant: the real scorer is a pretrained external head.
  double aesthetic_score(const Image&) const override { return kAestheticScore; }

 private:
  std::uint64_t seed_;
  int dim_;
  Eigen::MatrixXd image_proj_;
};

/// Foreground where every channel exceeds the threshold.
class ThresholdSegmenter final : public SegmenterBackend {
 public:
  explicit ThresholdSegmenter(double threshold = 0.5) : threshold_(threshold) {}
  Mask segment(const Image& image) const override;

 private:
  double threshold_;
};

/// Composites a flat prompt-dependent shade (channels in [0.55, 1]) over the
/// depth silhouette on a seeded-noise background (channels in [0, 0.45]).
class CompositingGenerator final : public ImageGeneratorBackend {
 public:
  Image generate(const Plane& depth, const std::string& prompt, const SynthesisParams& params,
                 std::uint64_t seed) const override;
};

/// Blends background pixels toward fresh seeded noise by `strength`.
class NoiseInpainter final : public InpainterBackend {
 public:
  Image inpaint(const Image& image, const Mask& foreground, const std::string& prompt, double strength,
                std::uint64_t seed) const override;
};

Image seeded_background(int height, int width, std::uint64_t seed);

}  // namespace shapewords::toy
