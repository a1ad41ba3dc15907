#include "shapewords/toy_backends.hpp"

#include "shapewords/external_backends.hpp"
#include "shapewords/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace shapewords {

std::uint64_t fnv1a(const std::string& s, std::uint64_t basis) {
  std::uint64_t h = basis;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::vector<double> linear_alpha_bar_schedule(int timesteps, double beta_start, double beta_end) {
  if (timesteps < 1) throw ValidationError("schedule needs at least one timestep");
  std::vector<double> out(timesteps);
  double prod = 1.0;
  for (int t = 1; t <= timesteps; ++t) {
    const double frac = timesteps == 1 ? 0.0 : static_cast<double>(t - 1) / (timesteps - 1);
    prod *= 1.0 - (beta_start + (beta_end - beta_start) * frac);
    out[t - 1] = prod;
  }
  return out;
}

namespace toy {
namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::vector<std::string> split_words(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> out;
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

// Block average of a plane onto a rows x cols grid.
Eigen::MatrixXd block_average(const Plane& p, int rows, int cols) {
  const int h = static_cast<int>(p.rows()), w = static_cast<int>(p.cols());
  Eigen::MatrixXd out(rows, cols);
  for (int i = 0; i < rows; ++i) {
    const int y0 = i * h / rows, y1 = std::max(y0 + 1, (i + 1) * h / rows);
    for (int j = 0; j < cols; ++j) {
      const int x0 = j * w / cols, x1 = std::max(x0 + 1, (j + 1) * w / cols);
      out(i, j) = p.block(y0, x0, y1 - y0, x1 - x0).cast<double>().mean();
    }
  }
  return out;
}

}  // namespace

Eigen::MatrixXd normal_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = dist(rng);
  return m;
}

std::uint64_t digest_bytes(const void* data, std::size_t size, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

Eigen::VectorXd pooled_features(const Image& image, int rows, int cols) {
  if (image.height() == 0 || image.width() == 0) throw ValidationError("empty image");
  Eigen::VectorXd f(3 * rows * cols);
  for (int c = 0; c < 3; ++c) {
    const Eigen::MatrixXd avg = block_average(image.channel(c), rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) f[(c * rows + i) * cols + j] = avg(i, j) - 0.5;
  }
  return f;
}

// ---------------------------------------------------------------------------
// Text encoder

template <typename Scalar>
TextEncoder<Scalar>::TextEncoder(std::uint64_t seed, int dim) : seed_(seed), dim_(dim) {
  if (dim <= 0) throw ValidationError("text_dim must be positive");
  std::mt19937_64 rng(mix(seed ^ 0x7465787400000000ULL));
  bos_ = normal_matrix(rng, 1, dim, 1.0).cast<Scalar>();
  eos_ = normal_matrix(rng, 1, dim, 1.0).cast<Scalar>();
  pad_ = normal_matrix(rng, 1, dim, 1.0).cast<Scalar>();
  positions_ = normal_matrix(rng, kMaxTokens, dim, 0.1).cast<Scalar>();
}

template <typename Scalar>
std::vector<std::string> TextEncoder<Scalar>::tokenize(const std::string& text) const {
  return split_words(text);
}

template <typename Scalar>
Matrix<Scalar> TextEncoder<Scalar>::word_embedding(const std::string& word) const {
  std::mt19937_64 rng(mix(fnv1a(word) ^ mix(seed_)));
  return normal_matrix(rng, 1, dim_, 1.0).cast<Scalar>();
}

template <typename Scalar>
TextEncoding<Scalar> TextEncoder<Scalar>::encode(const std::string& text) const {
  const auto words = tokenize(text);
  if (static_cast<int>(words.size()) > kMaxTokens - 2)
    throw ValidationError("prompt has " + std::to_string(words.size()) + " words; at most " +
                          std::to_string(kMaxTokens - 2) + " fit in 77 tokens");
  TextEncoding<Scalar> out;
  out.embedding.resize(kMaxTokens, dim_);
  out.tokens.reserve(words.size() + 2);
  out.tokens.push_back("<bos>");
  out.embedding.row(0) = bos_ + positions_.row(0);
  RowVector<Scalar> context = RowVector<Scalar>::Zero(dim_);
  for (std::size_t i = 0; i < words.size(); ++i) {
    const auto j = static_cast<Eigen::Index>(i + 1);
    const Matrix<Scalar> w = word_embedding(words[i]);
    out.embedding.row(j) = w.row(0) + positions_.row(j);
    context += w.row(0);
    out.tokens.push_back(words[i]);
  }
  if (!words.empty()) context /= static_cast<Scalar>(words.size());
  out.eos_index = static_cast<int>(words.size()) + 1;
  out.embedding.row(out.eos_index) = eos_ + positions_.row(out.eos_index) + context;
  out.tokens.push_back("<eos>");
  for (int j = out.eos_index + 1; j < kMaxTokens; ++j) out.embedding.row(j) = pad_;
  return out;
}

template <typename Scalar>
std::uint64_t TextEncoder<Scalar>::state_digest() const {
  std::uint64_t h = digest_bytes(&seed_, sizeof(seed_), 1469598103934665603ULL);
  h = digest(bos_, h);
  h = digest(eos_, h);
  h = digest(pad_, h);
  return digest(positions_, h);
}

// ---------------------------------------------------------------------------
// Shape encoder

template <typename Scalar>
ShapeEncoder<Scalar>::ShapeEncoder(std::uint64_t seed, int dim) : dim_(dim) {
  if (dim <= 0) throw ValidationError("shape_dim must be positive");
  std::mt19937_64 rng(mix(seed ^ 0x7368617065000000ULL));
  w_rel_ = normal_matrix(rng, 3, dim, 4.0);
  w_ctr_ = normal_matrix(rng, 3, dim, 1.0);
  b_ = normal_matrix(rng, dim, 1, 0.1);
  w_cls_ = normal_matrix(rng, dim, dim, 1.0 / std::sqrt(static_cast<double>(dim)));
  b_cls_ = normal_matrix(rng, dim, 1, 0.1);
}

template <typename Scalar>
Matrix<Scalar> ShapeEncoder<Scalar>::encode(const Points<double>& cloud) const {
  if (cloud.rows() < kNumPatches)
    throw ValidationError("shape encoder needs at least 64 points, got " + std::to_string(cloud.rows()));
  Points<double> pts = cloud;
  if (pts.rows() > 1024) pts = gather_rows(pts, farthest_point_sample(pts, 1024, 0));
  pts = normalize_cloud(pts);
  const PatchSet patches = group_patches(pts, kNumPatches, std::min<int>(32, static_cast<int>(pts.rows())));

  Eigen::MatrixXd tokens(kShapeTokenCount, dim_);
  for (int k = 0; k < kNumPatches; ++k) {
    const Eigen::RowVector3d c = pts.row(patches.centers[k]);
    const Eigen::RowVectorXd base = c * w_ctr_ + b_.transpose();
    Eigen::RowVectorXd pooled = Eigen::RowVectorXd::Constant(dim_, -2.0);
    for (int idx : patches.groups[k]) {
      const Eigen::RowVector3d rel = pts.row(idx) - c;
      pooled = pooled.cwiseMax((rel * w_rel_ + base).array().tanh().matrix());
    }
    tokens.row(k + 1) = pooled;
  }
  const Eigen::RowVectorXd mean = tokens.bottomRows(kNumPatches).colwise().mean();
  tokens.row(0) = (mean * w_cls_ + b_cls_.transpose()).array().tanh().matrix();
  return tokens.cast<Scalar>();
}

template <typename Scalar>
std::uint64_t ShapeEncoder<Scalar>::state_digest() const {
  std::uint64_t h = digest(w_rel_, 1469598103934665603ULL);
  h = digest(w_ctr_, h);
  h = digest(b_, h);
  h = digest(w_cls_, h);
  return digest(b_cls_, h);
}

// ---------------------------------------------------------------------------
// Denoiser

template <typename Scalar>
Denoiser<Scalar>::Denoiser(std::uint64_t seed, int text_dim, LatentShape latent, int timesteps)
    : text_dim_(text_dim), latent_(latent), alpha_bar_(linear_alpha_bar_schedule(timesteps)) {
  if (text_dim <= 0) throw ValidationError("text_dim must be positive");
  if (latent.channels < 3 || latent.height <= 0 || latent.width <= 0)
    throw ValidationError("toy latent needs at least 3 channels and positive extent");
  std::mt19937_64 rng(mix(seed ^ 0x64656e6f69736500ULL));
  const int l = latent.size();
  const int feat = 3 * latent.height * latent.width;
  head_ = normal_matrix(rng, l, text_dim, 1.0 / std::sqrt(static_cast<double>(text_dim))).cast<Scalar>();
  head_bias_ = normal_matrix(rng, l, 1, 0.1).cast<Scalar>();
  code_proj_ = normal_matrix(rng, text_dim, feat, 3.0 / std::sqrt(static_cast<double>(feat))).cast<Scalar>();
}

template <typename Scalar>
double Denoiser<Scalar>::alpha_bar(int t) const {
  if (t < 1 || t > num_timesteps()) throw ValidationError("timestep " + std::to_string(t) + " out of range");
  return alpha_bar_[t - 1];
}

template <typename Scalar>
void Denoiser<Scalar>::check(const Vector<Scalar>& z, int t, const Matrix<Scalar>& prompt) const {
  if (z.size() != latent_.size()) throw DimensionError("latent size mismatch");
  if (prompt.rows() != kMaxTokens || prompt.cols() != text_dim_) throw DimensionError("prompt embedding must be 77 x D_t");
  alpha_bar(t);
}

template <typename Scalar>
Vector<Scalar> Denoiser<Scalar>::clean_estimate(const Vector<Scalar>& conditioning) const {
  return (head_ * conditioning + head_bias_).array().tanh().matrix();
}

template <typename Scalar>
Vector<Scalar> Denoiser<Scalar>::predict_noise(const Vector<Scalar>& z, int t, const Matrix<Scalar>& prompt) const {
  check(z, t, prompt);
  const Vector<Scalar> c = prompt.colwise().mean().transpose();
  const Scalar a = static_cast<Scalar>(alpha_bar(t));
  return (z - std::sqrt(a) * clean_estimate(c)) / std::sqrt(Scalar(1) - a);
}

template <typename Scalar>
Matrix<Scalar> Denoiser<Scalar>::prompt_vjp(const Vector<Scalar>& z, int t, const Matrix<Scalar>& prompt,
                                            const Vector<Scalar>& upstream) const {
  check(z, t, prompt);
  if (upstream.size() != z.size()) throw DimensionError("upstream gradient size mismatch");
  const Vector<Scalar> c = prompt.colwise().mean().transpose();
  const Vector<Scalar> x0 = clean_estimate(c);
  const Scalar a = static_cast<Scalar>(alpha_bar(t));
  const Vector<Scalar> d_x0 = -std::sqrt(a) / std::sqrt(Scalar(1) - a) * upstream;
  const Vector<Scalar> d_pre = (Scalar(1) - x0.array().square()).matrix().cwiseProduct(d_x0);
  const RowVector<Scalar> d_c = (head_.transpose() * d_pre).transpose() / static_cast<Scalar>(prompt.rows());
  return d_c.replicate(prompt.rows(), 1);
}

template <typename Scalar>
Vector<Scalar> Denoiser<Scalar>::image_code(const Image& image) const {
  return code_proj_ * pooled_features(image, latent_.height, latent_.width).template cast<Scalar>();
}

template <typename Scalar>
Vector<Scalar> Denoiser<Scalar>::encode_image(const Image& image) const {
  return clean_estimate(image_code(image));
}

template <typename Scalar>
Image Denoiser<Scalar>::decode_latent(const Vector<Scalar>& latent) const {
  if (latent.size() != latent_.size()) throw DimensionError("latent size mismatch");
  const int h = latent_.height, w = latent_.width;
  Image img(image_height(), image_width());
  auto at = [&](int c, int i, int j) { return static_cast<float>(latent[(c * h + i) * w + j]); };
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      const int i = y / 8, j = x / 8;
      const float shade = latent_.channels > 3 ? 0.1f * at(3, i, j) : 0.0f;
      for (int c = 0; c < 3; ++c) img.channel(c)(y, x) = std::clamp(0.5f + 0.4f * at(c, i, j) + shade, 0.0f, 1.0f);
    }
  return img;
}

template <typename Scalar>
std::uint64_t Denoiser<Scalar>::state_digest() const {
  std::uint64_t h = digest_bytes(alpha_bar_.data(), alpha_bar_.size() * sizeof(double), 1469598103934665603ULL);
  h = digest(head_, h);
  h = digest(head_bias_, h);
  return digest(code_proj_, h);
}

template <typename Scalar>
DepthControl<Scalar>::DepthControl(std::uint64_t seed, std::shared_ptr<const Denoiser<Scalar>> base)
    : base_(std::move(base)) {
  std::mt19937_64 rng(mix(seed ^ 0x6465707468000000ULL));
  const LatentShape l = base_->latent_shape();
  const int cells = l.height * l.width;
  const int text_dim = static_cast<int>(base_->head().cols());
  depth_proj_ = normal_matrix(rng, text_dim, cells, 2.0 / std::sqrt(static_cast<double>(cells))).cast<Scalar>();
}

template <typename Scalar>
Vector<Scalar> DepthControl<Scalar>::predict_noise(const Vector<Scalar>& z, int t, const Matrix<Scalar>& prompt,
                                                   const Plane& depth) const {
  const LatentShape l = base_->latent_shape();
  if (z.size() != l.size()) throw DimensionError("latent size mismatch");
  if (depth.size() == 0) throw ValidationError("depth control needs a depth image");
  const Eigen::MatrixXd pooled = block_average(depth, l.height, l.width);
  const Eigen::VectorXd flat = Eigen::Map<const Eigen::VectorXd>(pooled.data(), pooled.size());
  const Vector<Scalar> c = prompt.colwise().mean().transpose() + depth_proj_ * flat.cast<Scalar>();
  const Scalar a = static_cast<Scalar>(base_->alpha_bar(t));
  return (z - std::sqrt(a) * base_->clean_estimate(c)) / std::sqrt(Scalar(1) - a);
}

// ---------------------------------------------------------------------------
// Metric-side toys

ImageFeatures::ImageFeatures(std::uint64_t seed, int dim) : seed_(seed), dim_(dim) {
  if (dim <= 0) throw ValidationError("feature_dim must be positive");
  std::mt19937_64 rng(mix(seed ^ 0x636c697000000000ULL));
  image_proj_ = normal_matrix(rng, dim, 48, 3.0 / std::sqrt(48.0));
}

Eigen::VectorXd ImageFeatures::embed_image(const Image& image) const {
  return (image_proj_ * pooled_features(image, 4, 4)).array().tanh().matrix();
}

Eigen::VectorXd ImageFeatures::embed_text(const std::string& text) const {
  const auto words = split_words(text);
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(dim_);
  for (const auto& w : words) {
    std::mt19937_64 rng(mix(fnv1a(w) ^ mix(seed_ ^ 0x636c6970ULL)));
    acc += normal_matrix(rng, dim_, 1, 1.0);
  }
  if (!words.empty()) acc /= static_cast<double>(words.size());
  return acc.array().tanh().matrix();
}

Mask ThresholdSegmenter::segment(const Image& image) const {
  Mask m(image.height(), image.width());
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < image.width(); ++x) {
      const float lo = std::min({image.r(y, x), image.g(y, x), image.b(y, x)});
      m(y, x) = lo > threshold_ ? 1 : 0;
    }
  return m;
}

Image seeded_background(int height, int width, std::uint64_t seed) {
  std::mt19937_64 rng(mix(seed ^ 0x6267000000000000ULL));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image img(height, width);
  const double tint[3] = {u(rng), u(rng), u(rng)};
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c) img.channel(c)(y, x) = static_cast<float>(0.45 * (0.5 * tint[c] + 0.5 * u(rng)));
  return img;
}

Image CompositingGenerator::generate(const Plane& depth, const std::string& prompt, const SynthesisParams&,
                                     std::uint64_t seed) const {
  const int h = static_cast<int>(depth.rows()), w = static_cast<int>(depth.cols());
  Image img = seeded_background(h, w, seed);
  std::mt19937_64 rng(mix(fnv1a(prompt)));
  std::uniform_real_distribution<double> u(0.55, 1.0);
  const float shade[3] = {static_cast<float>(u(rng)), static_cast<float>(u(rng)), static_cast<float>(u(rng))};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (depth(y, x) > 0)
        for (int c = 0; c < 3; ++c) img.channel(c)(y, x) = shade[c];
  return img;
}

Image NoiseInpainter::inpaint(const Image& image, const Mask& foreground, const std::string& prompt, double strength,
                              std::uint64_t seed) const {
  if (!(strength >= 0.0 && strength <= 1.0)) throw ValidationError("inpaint strength must be in [0, 1]");
  if (foreground.rows() != image.height() || foreground.cols() != image.width())
    throw DimensionError("inpaint mask size differs from image");
  Image out = image;
  if (strength == 0.0) return out;
  const Image fresh = seeded_background(image.height(), image.width(), seed ^ fnv1a(prompt));
  const float s = static_cast<float>(strength);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < image.height(); ++y)
      for (int x = 0; x < image.width(); ++x)
        if (!foreground(y, x)) out.channel(c)(y, x) = (1.0f - s) * image.channel(c)(y, x) + s * fresh.channel(c)(y, x);
  return out;
}

template class TextEncoder<float>;
template class TextEncoder<double>;
template class ShapeEncoder<float>;
template class ShapeEncoder<double>;
template class Denoiser<float>;
template class Denoiser<double>;
template class DepthControl<float>;
template class DepthControl<double>;

}  // namespace toy

// ---------------------------------------------------------------------------
// Suite construction

ToySuiteOptions ToySuiteOptions::from_config(const Config& cfg) {
  ToySuiteOptions o;
  o.seed = static_cast<std::uint64_t>(cfg.get_int("backend.seed", static_cast<long>(o.seed)));
  o.text_dim = static_cast<int>(cfg.get_int("backend.text_dim", o.text_dim));
  o.shape_dim = static_cast<int>(cfg.get_int("backend.shape_dim", o.shape_dim));
  const auto latent = cfg.get_int_list("backend.latent", {o.latent.channels, o.latent.height, o.latent.width});
  if (latent.size() != 3) throw ValidationError("backend.latent must be CxHxW");
  o.latent = {latent[0], latent[1], latent[2]};
  o.timesteps = static_cast<int>(cfg.get_int("backend.timesteps", o.timesteps));
  o.feature_dim = static_cast<int>(cfg.get_int("backend.feature_dim", o.feature_dim));
  o.segmenter_threshold = cfg.get_double("backend.segmenter.threshold", o.segmenter_threshold);
  return o;
}

template <typename Scalar>
std::uint64_t BackendSuite<Scalar>::state_digest() const {
  std::uint64_t h = 1469598103934665603ULL;
  const std::uint64_t parts[] = {text ? text->state_digest() : 0, shape ? shape->state_digest() : 0,
                                 denoiser ? denoiser->state_digest() : 0};
  return toy::digest_bytes(parts, sizeof(parts), h);
}

template <typename Scalar>
BackendSuite<Scalar> make_toy_suite(const ToySuiteOptions& o) {
  BackendSuite<Scalar> s;
  s.kind = "toy";
  s.text = std::make_shared<toy::TextEncoder<Scalar>>(o.seed, o.text_dim);
  s.shape = std::make_shared<toy::ShapeEncoder<Scalar>>(o.seed, o.shape_dim);
  auto den = std::make_shared<toy::Denoiser<Scalar>>(o.seed, o.text_dim, o.latent, o.timesteps);
  s.control = std::make_shared<toy::DepthControl<Scalar>>(o.seed, den);
  s.denoiser = den;
  s.features = std::make_shared<toy::ImageFeatures>(o.seed, o.feature_dim);
  s.segmenter = std::make_shared<toy::ThresholdSegmenter>(o.segmenter_threshold);
  s.generator = std::make_shared<toy::CompositingGenerator>();
  s.inpainter = std::make_shared<toy::NoiseInpainter>();
  return s;
}

template <typename Scalar>
BackendSuite<Scalar> load_backend_suite(const Config& config) {
  const std::string kind = config.get_string("backend.kind", "toy");
  if (kind == "toy") return make_toy_suite<Scalar>(ToySuiteOptions::from_config(config));
  if (kind == "external") return make_external_suite<Scalar>(config);
  throw ValidationError("unknown backend kind '" + kind + "' (expected toy or external)");
}

template struct BackendSuite<float>;
template struct BackendSuite<double>;
template BackendSuite<float> make_toy_suite<float>(const ToySuiteOptions&);
template BackendSuite<double> make_toy_suite<double>(const ToySuiteOptions&);
template BackendSuite<float> load_backend_suite<float>(const Config&);
template BackendSuite<double> load_backend_suite<double>(const Config&);

}  // namespace shapewords
