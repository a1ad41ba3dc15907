#include "fixtures.hpp"
#include "shapewords/external_backends.hpp"
#include "shapewords/json_codec.hpp"
#include "shapewords/toy_backends.hpp"

#include <gtest/gtest.h>
#include <httplib.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <thread>

using namespace shapewords;
using codec::json;

TEST(ToyBackends, ScheduleIsStrictlyDecreasing) {
  const auto ab = linear_alpha_bar_schedule(1000);
  ASSERT_EQ(ab.size(), 1000u);
  EXPECT_NEAR(ab[0], 1.0 - 1e-4, 1e-15);
  for (std::size_t i = 0; i < ab.size(); ++i) {
    EXPECT_GT(ab[i], 0.0);
    EXPECT_LT(ab[i], 1.0);
    if (i) {
      EXPECT_LT(ab[i], ab[i - 1]);
    }
  }
}

TEST(ToyBackends, TextLayoutAndPadding) {
  const auto suite = fixture::toy_suite<double>();
  const auto enc = suite.text->encode("a red chair");
  ASSERT_EQ(enc.embedding.rows(), kMaxTokens);
  EXPECT_EQ(enc.embedding.cols(), suite.text->embed_dim());
  EXPECT_EQ(enc.eos_index, 4);
  EXPECT_EQ(suite.text->tokenize("a  red chair"), (std::vector<std::string>{"a", "red", "chair"}));
  for (int r = enc.eos_index + 2; r < kMaxTokens; ++r) EXPECT_TRUE(enc.embedding.row(r) == enc.embedding.row(enc.eos_index + 1));
  EXPECT_TRUE(suite.text->encode("a red chair").embedding == enc.embedding);
}

TEST(ToyBackends, ShapeTokens) {
  const auto suite = fixture::toy_suite<double>();
  const auto cloud = fixture::shape("mug");
  const Matrix<double> t = suite.shape->encode(cloud);
  EXPECT_EQ(t.rows(), kShapeTokenCount);
  EXPECT_EQ(t.cols(), suite.shape->shape_dim());
  EXPECT_TRUE(t.allFinite());
  EXPECT_TRUE(suite.shape->encode(cloud) == t);
  const Points<double> scaled = 3.0 * cloud;
  EXPECT_LT((suite.shape->encode(scaled) - t).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_THROW(suite.shape->encode(Points<double>::Random(32, 3)), ValidationError);
}

TEST(ToyBackends, PromptVjpMatchesFiniteDifferences) {
  const auto suite = fixture::toy_suite<double>();
  const auto& den = *suite.denoiser;
  std::mt19937_64 rng(3);
  const Matrix<double> prompt = Matrix<double>::Random(kMaxTokens, suite.text->embed_dim()) * 0.5;
  const Vector<double> z = Vector<double>::Random(den.latent_shape().size());
  const Vector<double> up = Vector<double>::Random(z.size());
  const int t = 40;
  const Matrix<double> g = den.prompt_vjp(z, t, prompt, up);
  for (int k = 0; k < 20; ++k) {
    const int r = static_cast<int>(rng() % kMaxTokens), c = static_cast<int>(rng() % prompt.cols());
    Matrix<double> p = prompt, m = prompt;
    p(r, c) += 1e-6;
    m(r, c) -= 1e-6;
    const double fd = up.dot(den.predict_noise(z, t, p) - den.predict_noise(z, t, m)) / 2e-6;
    EXPECT_NEAR(g(r, c), fd, 1e-6 * std::max(1.0, std::abs(fd)));
  }
}

TEST(ToyBackends, FloatAndDoubleAgree) {
  const auto d = fixture::toy_suite<double>();
  const auto f = fixture::toy_suite<float>();
  const auto ed = d.text->encode("a lamp");
  const auto ef = f.text->encode("a lamp");
  EXPECT_LT((ed.embedding.cast<float>() - ef.embedding).cwiseAbs().maxCoeff(), 1e-5f);
  const auto cloud = fixture::shape("lamp");
  EXPECT_LT((d.shape->encode(cloud).cast<float>() - f.shape->encode(cloud)).cwiseAbs().maxCoeff(), 1e-4f);
  EXPECT_EQ(d.denoiser->alpha_bar(17), f.denoiser->alpha_bar(17));
}

TEST(ToyBackends, DigestTracksSeed) {
  ToySuiteOptions o;
  const auto a = make_toy_suite<double>(o);
  const auto b = make_toy_suite<double>(o);
  o.seed = 8;
  const auto c = make_toy_suite<double>(o);
  EXPECT_EQ(a.state_digest(), b.state_digest());
  EXPECT_NE(a.state_digest(), c.state_digest());
}

TEST(ToyBackends, SuiteFromConfig) {
  const auto s = load_backend_suite<float>(Config::parse("[backend]\nkind = toy\ntext_dim = 12\n"));
  EXPECT_EQ(s.kind, "toy");
  EXPECT_EQ(s.text->embed_dim(), 12);
  EXPECT_THROW(load_backend_suite<float>(Config::parse("backend.kind = onnx\n")), ValidationError);
  EXPECT_THROW(load_backend_suite<float>(Config::parse("backend.kind = external\n")), ValidationError);
}

TEST(ToyBackends, SegmenterThreshold) {
  Image img(2, 2);
  img.r.setConstant(0.6f);
  img.g.setConstant(0.6f);
  img.b.setConstant(0.6f);
  img.g(1, 1) = 0.4f;
  const Mask m = toy::ThresholdSegmenter(0.5).segment(img);
  EXPECT_EQ(m.sum(), 3);
  EXPECT_EQ(m(1, 1), 0);
}

namespace {

// A model server on an ephemeral localhost port, torn down with the test.
class MockModel {
 public:
  MockModel() {
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~MockModel() {
    server_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
  httplib::Server& server() { return server_; }

  void post(const std::string& path, std::function<json(const json&)> fn) {
    server_.Post(path, [fn](const httplib::Request& req, httplib::Response& res) {
      res.set_content(fn(json::parse(req.body)).dump(), "application/json");
    });
  }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

// Serves the toy text, shape and denoiser models over HTTP.
struct MockToyModels {
  BackendSuite<double> toy = fixture::toy_suite<double>();
  MockModel text, shape, denoiser;
  int text_cols_override = 0;
  std::atomic<bool> faulty{false};

  MockToyModels() {
    text.server().Post("/tokenize", [this](const httplib::Request& req, httplib::Response& res) {
      if (faulty) {
        res.status = 500;
        res.set_content("boom", "text/plain");
        return;
      }
      res.set_content(json{{"tokens", toy.text->tokenize(json::parse(req.body).at("text"))}}.dump(), "application/json");
    });
    text.post("/encode", [this](const json& b) {
      auto e = toy.text->encode(b.at("text"));
      if (text_cols_override) e.embedding = Matrix<double>::Zero(kMaxTokens, text_cols_override);
      return json{{"embedding", codec::matrix_to_json(e.embedding)}, {"tokens", e.tokens}, {"eos_index", e.eos_index}};
    });
    shape.post("/encode", [this](const json& b) {
      if (faulty) return json{{"nope", 1}};
      const auto& pts = b.at("points");
      Points<double> p(pts.size(), 3);
      for (std::size_t i = 0; i < pts.size(); ++i)
        for (int j = 0; j < 3; ++j) p(static_cast<Eigen::Index>(i), j) = pts[i][j].get<double>();
      return json{{"tokens", codec::matrix_to_json(toy.shape->encode(p))}};
    });
    denoiser.server().Get("/info", [this](const httplib::Request&, httplib::Response& res) {
      std::vector<double> ab;
      for (int t = 1; t <= toy.denoiser->num_timesteps(); ++t) ab.push_back(toy.denoiser->alpha_bar(t));
      const auto l = toy.denoiser->latent_shape();
      res.set_content(json{{"latent_shape", {l.channels, l.height, l.width}}, {"alphas_cumprod", ab}}.dump(), "application/json");
    });
    denoiser.post("/predict_noise", [this](const json& b) {
      const auto n = toy.denoiser->predict_noise(codec::vector_from_json<double>(b.at("latent")), b.at("timestep"),
                                                 codec::matrix_from_json<double>(b.at("prompt")));
      return json{{"noise", codec::vector_to_json(n)}};
    });
    denoiser.post("/decode_latent", [this](const json& b) {
      return json{{"image", codec::image_to_json(toy.denoiser->decode_latent(codec::vector_from_json<double>(b.at("latent"))))}};
    });
  }

  Config config(int text_dim = 16) const {
    return Config::parse("[backend]\nkind = external\ntext_dim = " + std::to_string(text_dim) +
                         "\nshape_dim = 8\nmodel_path.text = " + text.url() + "\nmodel_path.shape = " + shape.url() +
                         "\nmodel_path.denoiser = " + denoiser.url() + "\n");
  }
};

}  // namespace

TEST(ExternalBackends, RoundTripThroughMockServers) {
  MockToyModels m;
  const auto ext = load_backend_suite<double>(m.config());
  EXPECT_EQ(ext.kind, "external");
  EXPECT_EQ(ext.text->tokenize("a mug"), (std::vector<std::string>{"a", "mug"}));
  const auto a = ext.text->encode("a mug"), b = m.toy.text->encode("a mug");
  EXPECT_LT((a.embedding - b.embedding).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(a.eos_index, b.eos_index);
  const auto cloud = fixture::shape("mug");
  EXPECT_LT((ext.shape->encode(cloud) - m.toy.shape->encode(cloud)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(ext.denoiser->num_timesteps(), m.toy.denoiser->num_timesteps());
  EXPECT_EQ(ext.denoiser->alpha_bar(30), m.toy.denoiser->alpha_bar(30));
  const Vector<double> z = Vector<double>::Random(ext.denoiser->latent_shape().size());
  EXPECT_LT((ext.denoiser->predict_noise(z, 9, b.embedding) - m.toy.denoiser->predict_noise(z, 9, b.embedding))
                .cwiseAbs()
                .maxCoeff(),
            1e-9);
  const Image img = ext.denoiser->decode_latent(z);
  EXPECT_EQ(img.height(), m.toy.denoiser->decode_latent(z).height());
  EXPECT_FALSE(ext.control);
  EXPECT_THROW(ext.denoiser->encode_image(img), BackendError);
}

TEST(ExternalBackends, DimensionMismatchFailsAtLoad) {
  MockToyModels m;
  try {
    load_backend_suite<float>(m.config(32));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("backend.text_dim"), std::string::npos);
  }
  m.text_cols_override = 24;
  EXPECT_THROW(load_backend_suite<float>(m.config(16)), DimensionError);
}

TEST(ExternalBackends, UnreachableServerIsBackendError) {
  // Bind a port, then close it so nothing is listening there.
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  ASSERT_EQ(::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)), 0);
  socklen_t len = sizeof(addr);
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  ::close(fd);
  const int dead_port = ntohs(addr.sin_port);
  const std::string url = "http://127.0.0.1:" + std::to_string(dead_port);
  try {
    load_backend_suite<float>(Config::parse("backend.kind = external\nbackend.model_path.text = " + url +
                                            "\nbackend.model_path.shape = " + url + "\nbackend.model_path.denoiser = " + url + "\nbackend.timeout_s = 5"));
    FAIL() << "expected BackendError";
  } catch (const BackendError& e) {
    EXPECT_NE(std::string(e.what()).find(url), std::string::npos);
  }
}

TEST(ExternalBackends, ServerErrorsAndMalformedReplies) {
  MockToyModels m;
  const auto ext = load_backend_suite<double>(m.config());
  m.faulty = true;
  try {
    ext.text->tokenize("x");
    FAIL() << "expected BackendError";
  } catch (const BackendError& e) {
    EXPECT_NE(std::string(e.what()).find("HTTP 500"), std::string::npos);
  }
  EXPECT_THROW(ext.shape->encode(fixture::shape("ring")), BackendError);
}
