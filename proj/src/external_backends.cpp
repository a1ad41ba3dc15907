#include "shapewords/external_backends.hpp"

#include "shapewords/json_codec.hpp"

#include <httplib.h>

#include <cmath>
#include <mutex>
#include <optional>

namespace shapewords {

namespace codec {

json image_to_json(const Image& image) {
  json rgb = json::array();
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < image.width(); ++x)
      for (int c = 0; c < 3; ++c) rgb.push_back(image.channel(c)(y, x));
  return {{"height", image.height()}, {"width", image.width()}, {"rgb", std::move(rgb)}};
}

Image image_from_json(const json& j) {
  const int h = j.at("height").get<int>(), w = j.at("width").get<int>();
  const auto& rgb = j.at("rgb");
  if (h <= 0 || w <= 0 || rgb.size() != static_cast<std::size_t>(h) * w * 3) throw FormatError("malformed image payload");
  Image img(h, w);
  std::size_t k = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) img.channel(c)(y, x) = rgb[k++].get<float>();
  return img;
}

json plane_to_json(const Plane& p) {
  json values = json::array();
  for (Eigen::Index y = 0; y < p.rows(); ++y)
    for (Eigen::Index x = 0; x < p.cols(); ++x) values.push_back(p(y, x));
  return {{"height", p.rows()}, {"width", p.cols()}, {"values", std::move(values)}};
}

Plane plane_from_json(const json& j) {
  const int h = j.at("height").get<int>(), w = j.at("width").get<int>();
  const auto& v = j.at("values");
  if (h <= 0 || w <= 0 || v.size() != static_cast<std::size_t>(h) * w) throw FormatError("malformed plane payload");
  Plane p(h, w);
  std::size_t k = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) p(y, x) = v[k++].get<float>();
  return p;
}

json mask_to_json(const Mask& m) {
  json values = json::array();
  for (Eigen::Index y = 0; y < m.rows(); ++y)
    for (Eigen::Index x = 0; x < m.cols(); ++x) values.push_back(m(y, x) ? 1 : 0);
  return {{"height", m.rows()}, {"width", m.cols()}, {"values", std::move(values)}};
}

Mask mask_from_json(const json& j) {
  const int h = j.at("height").get<int>(), w = j.at("width").get<int>();
  const auto& v = j.at("values");
  if (h <= 0 || w <= 0 || v.size() != static_cast<std::size_t>(h) * w) throw FormatError("malformed mask payload");
  Mask m(h, w);
  std::size_t k = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) m(y, x) = v[k++].get<int>() != 0 ? 1 : 0;
  return m;
}

}  // namespace codec

namespace {

using codec::json;

struct Endpoint {
  std::string url;
  int timeout_s = 300;
};

// One connection per model; calls are serialized because most model servers
// are not reentrant.
class Rpc {
 public:
  explicit Rpc(Endpoint e) : base_(std::move(e.url)), client_(base_) {
    client_.set_connection_timeout(5, 0);
    client_.set_read_timeout(e.timeout_s, 0);
  }

  json get(const std::string& path) const { return handle(path, [&] { return client_.Get(path); }); }

  json post(const std::string& path, const json& body) const {
    return handle(path, [&] { return client_.Post(path, body.dump(), "application/json"); });
  }

  const std::string& base() const { return base_; }

 private:
  template <typename Call>
  json handle(const std::string& path, Call&& call) const {
    std::lock_guard<std::mutex> lock(mu_);
    auto res = call();
    if (!res) throw BackendError("unreachable external model at " + base_ + path + " (" + httplib::to_string(res.error()) + ")");
    if (res->status != 200)
      throw BackendError("external model " + base_ + path + " returned HTTP " + std::to_string(res->status) + ": " + res->body);
    try {
      return json::parse(res->body);
    } catch (const json::exception& e) {
      throw BackendError("external model " + base_ + path + " sent invalid JSON: " + e.what());
    }
  }

  std::string base_;
  mutable std::mutex mu_;
  mutable httplib::Client client_;
};

template <typename Fn>
auto guard_json(const std::string& where, Fn&& fn) {
  try {
    return fn();
  } catch (const json::exception& e) {
    throw BackendError(where + ": malformed response: " + e.what());
  }
}

template <typename Scalar>
class ExternalText final : public TextEncoderBackend<Scalar> {
 public:
  ExternalText(Endpoint url, int dim) : rpc_(std::move(url)), dim_(dim) {}
  int embed_dim() const override { return dim_; }
  std::vector<std::string> tokenize(const std::string& text) const override {
    return guard_json("text/tokenize", [&] { return rpc_.post("/tokenize", {{"text", text}}).at("tokens").template get<std::vector<std::string>>(); });
  }
  TextEncoding<Scalar> encode(const std::string& text) const override {
    return guard_json("text/encode", [&] {
      const json r = rpc_.post("/encode", {{"text", text}});
      TextEncoding<Scalar> out;
      out.embedding = codec::matrix_from_json<Scalar>(r.at("embedding"));
      out.tokens = r.at("tokens").template get<std::vector<std::string>>();
      out.eos_index = r.at("eos_index").template get<int>();
      return out;
    });
  }

 private:
  Rpc rpc_;
  int dim_;
};

template <typename Scalar>
class ExternalShape final : public ShapeEncoderBackend<Scalar> {
 public:
  ExternalShape(Endpoint url, int dim) : rpc_(std::move(url)), dim_(dim) {}
  int shape_dim() const override { return dim_; }
  Matrix<Scalar> encode(const Points<double>& cloud) const override {
    json pts = json::array();
    for (Eigen::Index i = 0; i < cloud.rows(); ++i) pts.push_back({cloud(i, 0), cloud(i, 1), cloud(i, 2)});
    return guard_json("shape/encode", [&] { return codec::matrix_from_json<Scalar>(rpc_.post("/encode", {{"points", pts}}).at("tokens")); });
  }

 private:
  Rpc rpc_;
  int dim_;
};

template <typename Scalar>
class ExternalDenoiser final : public DenoiserBackend<Scalar> {
 public:
  explicit ExternalDenoiser(Endpoint url) : rpc_(std::move(url)) {
    guard_json("denoiser/info", [&] {
      const json info = rpc_.get("/info");
      const auto shape = info.at("latent_shape").template get<std::vector<int>>();
      if (shape.size() != 3) throw BackendError("denoiser latent_shape must have 3 entries");
      latent_ = {shape[0], shape[1], shape[2]};
      alpha_bar_ = info.at("alphas_cumprod").template get<std::vector<double>>();
      return 0;
    });
    if (alpha_bar_.empty()) throw BackendError("denoiser reported an empty schedule");
    for (std::size_t i = 0; i < alpha_bar_.size(); ++i) {
      const bool in_range = alpha_bar_[i] > 0.0 && alpha_bar_[i] < 1.0;
      const bool decreasing = i == 0 || alpha_bar_[i] < alpha_bar_[i - 1];
      if (!in_range || !decreasing) throw BackendError("denoiser schedule must be strictly decreasing in (0, 1)");
    }
  }
  LatentShape latent_shape() const override { return latent_; }
  int num_timesteps() const override { return static_cast<int>(alpha_bar_.size()); }
  double alpha_bar(int t) const override {
    if (t < 1 || t > num_timesteps()) throw ValidationError("timestep out of range");
    return alpha_bar_[t - 1];
  }
  Vector<Scalar> predict_noise(const Vector<Scalar>& z, int t, const Matrix<Scalar>& prompt) const override {
    const json body = {{"latent", codec::vector_to_json(z)}, {"timestep", t}, {"prompt", codec::matrix_to_json(prompt)}};
    return guard_json("denoiser/predict_noise", [&] { return codec::vector_from_json<Scalar>(rpc_.post("/predict_noise", body).at("noise")); });
  }
  Matrix<Scalar> prompt_vjp(const Vector<Scalar>& z, int t, const Matrix<Scalar>& prompt,
                            const Vector<Scalar>& upstream) const override {
    const json body = {{"latent", codec::vector_to_json(z)},
                       {"timestep", t},
                       {"prompt", codec::matrix_to_json(prompt)},
                       {"upstream", codec::vector_to_json(upstream)}};
    return guard_json("denoiser/prompt_vjp", [&] { return codec::matrix_from_json<Scalar>(rpc_.post("/prompt_vjp", body).at("prompt_grad")); });
  }
  Vector<Scalar> encode_image(const Image& image) const override {
    return guard_json("denoiser/encode_image", [&] {
      return codec::vector_from_json<Scalar>(rpc_.post("/encode_image", {{"image", codec::image_to_json(image)}}).at("latent"));
    });
  }
  Image decode_latent(const Vector<Scalar>& latent) const override {
    return guard_json("denoiser/decode_latent", [&] {
      return codec::image_from_json(rpc_.post("/decode_latent", {{"latent", codec::vector_to_json(latent)}}).at("image"));
    });
  }

 private:
  Rpc rpc_;
  LatentShape latent_;
  std::vector<double> alpha_bar_;
};

template <typename Scalar>
class ExternalControl final : public DepthControlBackend<Scalar> {
 public:
  explicit ExternalControl(Endpoint url) : rpc_(std::move(url)) {}
  Vector<Scalar> predict_noise(const Vector<Scalar>& z, int t, const Matrix<Scalar>& prompt,
                               const Plane& depth) const override {
    const json body = {{"latent", codec::vector_to_json(z)},
                       {"timestep", t},
                       {"prompt", codec::matrix_to_json(prompt)},
                       {"depth", codec::plane_to_json(depth)}};
    return guard_json("control/predict_noise", [&] { return codec::vector_from_json<Scalar>(rpc_.post("/predict_noise", body).at("noise")); });
  }

 private:
  Rpc rpc_;
};

class ExternalFeatures final : public ImageFeatureBackend {
 public:
  explicit ExternalFeatures(Endpoint url) : rpc_(std::move(url)) {
    dim_ = guard_json("features/info", [&] { return rpc_.get("/info").at("feature_dim").get<int>(); });
  }
  int feature_dim() const override { return dim_; }
  Eigen::VectorXd embed_image(const Image& image) const override {
    return guard_json("features/embed_image", [&] {
      return codec::vector_from_json<double>(rpc_.post("/embed_image", {{"image", codec::image_to_json(image)}}).at("features"));
    });
  }
  Eigen::VectorXd embed_text(const std::string& text) const override {
    return guard_json("features/embed_text", [&] { return codec::vector_from_json<double>(rpc_.post("/embed_text", {{"text", text}}).at("features")); });
  }
  double aesthetic_score(const Image& image) const override {
    return guard_json("features/aesthetic", [&] { return rpc_.post("/aesthetic", {{"image", codec::image_to_json(image)}}).at("score").get<double>(); });
  }

 private:
  Rpc rpc_;
  int dim_ = 0;
};

class ExternalSegmenter final : public SegmenterBackend {
 public:
  ExternalSegmenter(Endpoint url, double threshold) : rpc_(std::move(url)), threshold_(threshold) {}
  Mask segment(const Image& image) const override {
    return guard_json("segmenter/segment", [&] {
      return codec::mask_from_json(rpc_.post("/segment", {{"image", codec::image_to_json(image)}, {"threshold", threshold_}}).at("mask"));
    });
  }

 private:
  Rpc rpc_;
  double threshold_;
};

class ExternalGenerator final : public ImageGeneratorBackend {
 public:
  explicit ExternalGenerator(Endpoint url) : rpc_(std::move(url)) {}
  Image generate(const Plane& depth, const std::string& prompt, const SynthesisParams& params,
                 std::uint64_t seed) const override {
    const json body = {{"depth", codec::plane_to_json(depth)},
                       {"prompt", prompt},
                       {"control_strength", params.control_strength},
                       {"steps", params.steps},
                       {"seed", seed}};
    return guard_json("generator/generate", [&] { return codec::image_from_json(rpc_.post("/generate", body).at("image")); });
  }

 private:
  Rpc rpc_;
};

class ExternalInpainter final : public InpainterBackend {
 public:
  explicit ExternalInpainter(Endpoint url) : rpc_(std::move(url)) {}
  Image inpaint(const Image& image, const Mask& foreground, const std::string& prompt, double strength,
                std::uint64_t seed) const override {
    const json body = {{"image", codec::image_to_json(image)},
                       {"mask", codec::mask_to_json(foreground)},
                       {"prompt", prompt},
                       {"strength", strength},
                       {"seed", seed}};
    return guard_json("inpainter/inpaint", [&] { return codec::image_from_json(rpc_.post("/inpaint", body).at("image")); });
  }

 private:
  Rpc rpc_;
};

// Points on a unit Fibonacci sphere; enough for any shape encoder's patching.
Points<double> probe_cloud() {
  constexpr int n = 256;
  Points<double> p(n, 3);
  const double golden = 3.14159265358979323846 * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < n; ++i) {
    const double y = 1.0 - 2.0 * (i + 0.5) / n;
    const double r = std::sqrt(1.0 - y * y);
    p.row(i) << r * std::cos(golden * i), y, r * std::sin(golden * i);
  }
  return p;
}

void expect_dim(const std::string& what, long declared, long actual) {
  if (declared != actual)
    throw DimensionError(what + ": configured " + std::to_string(declared) + " but probe returned " + std::to_string(actual));
}

}  // namespace

template <typename Scalar>
BackendSuite<Scalar> make_external_suite(const Config& config) {
  const auto paths = config.with_prefix("backend.model_path.");
  const int timeout_s = static_cast<int>(config.get_int("backend.timeout_s", 300));
  if (timeout_s <= 0) throw ValidationError("backend.timeout_s must be positive");
  auto need = [&](const std::string& role) {
    const auto it = paths.find(role);
    if (it == paths.end()) throw ValidationError("external backend requires backend.model_path." + role);
    return Endpoint{it->second, timeout_s};
  };
  auto maybe = [&](const std::string& role) -> std::optional<Endpoint> {
    const auto it = paths.find(role);
    if (it == paths.end()) return std::nullopt;
    return Endpoint{it->second, timeout_s};
  };
  const int text_dim = static_cast<int>(config.get_int("backend.text_dim", 1024));
  const int shape_dim = static_cast<int>(config.get_int("backend.shape_dim", 384));

  BackendSuite<Scalar> s;
  s.kind = "external";

  auto text = std::make_shared<ExternalText<Scalar>>(need("text"), text_dim);
  const TextEncoding<Scalar> probe_text = text->encode("a");
  expect_dim("text encoder rows", kMaxTokens, probe_text.embedding.rows());
  expect_dim("backend.text_dim", text_dim, probe_text.embedding.cols());
  s.text = text;

  auto shape = std::make_shared<ExternalShape<Scalar>>(need("shape"), shape_dim);
  const Matrix<Scalar> probe_shape = shape->encode(probe_cloud());
  expect_dim("shape encoder tokens", kShapeTokenCount, probe_shape.rows());
  expect_dim("backend.shape_dim", shape_dim, probe_shape.cols());
  s.shape = shape;

  auto den = std::make_shared<ExternalDenoiser<Scalar>>(need("denoiser"));
  if (config.has("backend.latent")) {
    const auto l = config.get_int_list("backend.latent", {});
    if (l.size() != 3 || LatentShape{l[0], l[1], l[2]} != den->latent_shape())
      throw DimensionError("backend.latent does not match the denoiser's reported latent shape");
  }
  const Vector<Scalar> zero = Vector<Scalar>::Zero(den->latent_shape().size());
  expect_dim("denoiser output size", zero.size(), den->predict_noise(zero, 1, probe_text.embedding).size());
  s.denoiser = den;

  if (auto url = maybe("control")) s.control = std::make_shared<ExternalControl<Scalar>>(*url);
  if (auto url = maybe("features")) {
    auto f = std::make_shared<ExternalFeatures>(*url);
    if (config.has("backend.feature_dim")) expect_dim("backend.feature_dim", config.get_int("backend.feature_dim", 0), f->feature_dim());
    s.features = f;
  }
  if (auto url = maybe("segmenter"))
    s.segmenter = std::make_shared<ExternalSegmenter>(*url, config.get_double("backend.segmenter.threshold", 0.5));
  if (auto url = maybe("generator")) s.generator = std::make_shared<ExternalGenerator>(*url);
  if (auto url = maybe("inpainter")) s.inpainter = std::make_shared<ExternalInpainter>(*url);
  return s;
}

template BackendSuite<float> make_external_suite<float>(const Config&);
template BackendSuite<double> make_external_suite<double>(const Config&);

}  // namespace shapewords
