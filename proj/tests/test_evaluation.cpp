#include "fixtures.hpp"
#include "oracles.hpp"
#include "shapewords/evaluation.hpp"
#include "shapewords/toy_backends.hpp"

#include <gtest/gtest.h>
#include <json.hpp>

#include <sstream>

using namespace shapewords;

namespace {

Mask blob(std::mt19937_64& rng, int h, int w) {
  std::uniform_real_distribution<double> u(0.2, 0.8), r(0.1, 0.3);
  Mask m = Mask::Zero(h, w);
  for (int k = 0; k < 3; ++k) {
    const double cy = u(rng) * h, cx = u(rng) * w, rad = r(rng) * std::min(h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= rad * rad) m(y, x) = 1;
  }
  return m;
}

Eigen::MatrixXd gaussian_set(std::mt19937_64& rng, int n, int d, double shift = 0.0) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd x(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) x(i, j) = g(rng) + shift;
  return x;
}

}  // namespace

TEST(SilhouetteIou, Cases) {
  Mask full = Mask::Ones(8, 8), left = Mask::Zero(8, 8), right = Mask::Zero(8, 8);
  left.leftCols(4).setOnes();
  right.rightCols(4).setOnes();
  EXPECT_EQ(silhouette_iou(left, left), 1.0);
  EXPECT_EQ(silhouette_iou(left, right), 0.0);
  EXPECT_EQ(silhouette_iou(left, full), 0.5);
  EXPECT_EQ(silhouette_iou(full, left), 0.5);
  EXPECT_THROW(silhouette_iou(Mask::Zero(8, 8), Mask::Zero(8, 8)), ValidationError);
  EXPECT_THROW(silhouette_iou(left, Mask::Ones(8, 9)), DimensionError);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 20; ++i) {
    const Mask a = blob(rng, 32, 40), b = blob(rng, 32, 40);
    const double v = silhouette_iou(a, b);
    EXPECT_EQ(v, silhouette_iou(b, a));
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(SilhouetteChamfer, TrivialCases) {
  std::mt19937_64 rng(2);
  const Mask a = blob(rng, 32, 32);
  EXPECT_EQ(silhouette_chamfer(a, a), 0.0);
  for (int d : {1, 3, 10}) {
    Mask p = Mask::Zero(20, 30), q = Mask::Zero(20, 30);
    p(5, 5) = 1;
    q(5, 5 + d) = 1;
    EXPECT_NEAR(silhouette_chamfer(p, q), d / std::sqrt(20.0 * 20 + 30 * 30), 1e-15);
  }
  EXPECT_THROW(silhouette_chamfer(a, Mask::Zero(32, 32)), ValidationError);
}

TEST(SilhouetteChamfer, BoundaryIsEightConnectedAndEdgesCount) {
  Mask m = Mask::Zero(5, 5);
  m.block(1, 1, 3, 3).setOnes();
  const auto b = boundary_pixels(m);
  EXPECT_EQ(b.size(), 8u);
  EXPECT_EQ(boundary_pixels(Mask::Ones(3, 3)).size(), 8u);
  Mask diag = Mask::Ones(3, 3);
  diag(0, 0) = 0;
  EXPECT_EQ(boundary_pixels(diag).size(), 8u);
}

TEST(SilhouetteChamfer, MatchesExhaustiveOracle) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 25; ++i) {
    const Mask a = blob(rng, 40, 56), b = blob(rng, 40, 56);
    EXPECT_NEAR(silhouette_chamfer(a, b), oracle::exhaustive_chamfer(a, b), 1e-9);
    EXPECT_EQ(silhouette_chamfer(a, b), silhouette_chamfer(b, a));
  }
}

TEST(DistanceTransform, MatchesBruteForce) {
  std::mt19937_64 rng(4);
  std::vector<Pixel> seeds;
  for (int i = 0; i < 7; ++i) seeds.push_back({static_cast<int>(rng() % 17), static_cast<int>(rng() % 23)});
  const Eigen::MatrixXd d = squared_distance_transform(17, 23, seeds);
  for (int y = 0; y < 17; ++y)
    for (int x = 0; x < 23; ++x) {
      double best = 1e300;
      for (const Pixel& s : seeds) best = std::min(best, double((y - s.row) * (y - s.row) + (x - s.col) * (x - s.col)));
      EXPECT_EQ(d(y, x), best);
    }
}

TEST(Adherence, SixUniformViews) {
  const auto v = uniform_views();
  ASSERT_EQ(v.size(), 6u);
  for (int i = 0; i < 6; ++i) EXPECT_EQ(v[i].azimuth, 60.0 * i);
}

TEST(Adherence, ClosedLoopIsPerfect) {
  const toy::CompositingGenerator gen;
  const toy::ThresholdSegmenter seg;
  for (const std::string cat : {"chair", "lamp", "mug"}) {
    const auto r = multiview_adherence(
        fixture::shape(cat), [&](const ViewSpec&, const Plane& depth) { return gen.generate(depth, "a " + cat, {}, 1); }, seg,
        uniform_views());
    EXPECT_EQ(r.mean_iou, 1.0);
    EXPECT_EQ(r.mean_chamfer, 0.0);
    EXPECT_EQ(r.views.size(), 6u);
    EXPECT_EQ(r.exclusions, 0);
  }
}

TEST(Adherence, FailingViewIsExcluded) {
  const toy::CompositingGenerator gen;
  const toy::ThresholdSegmenter seg;
  const auto r = multiview_adherence(
      fixture::shape("table"),
      [&](const ViewSpec& v, const Plane& depth) {
        if (v.azimuth == 120.0) throw BackendError("segmentation service timed out");
        return gen.generate(depth, "a table", {}, 1);
      },
      seg, uniform_views());
  EXPECT_EQ(r.views.size(), 5u);
  EXPECT_EQ(r.exclusions, 1);
  ASSERT_EQ(r.errors.size(), 1u);
  EXPECT_EQ(r.mean_iou, 1.0);
  EXPECT_THROW(multiview_adherence(
                   fixture::shape("table"), [](const ViewSpec&, const Plane&) -> Image { throw BackendError("down"); }, seg,
                   uniform_views()),
               Error);
}

TEST(ClipScore, CosineTimesHundred) {
  struct Fixed : ImageFeatureBackend {
    Eigen::VectorXd img, txt;
    int feature_dim() const override { return static_cast<int>(img.size()); }
    Eigen::VectorXd embed_image(const Image&) const override { return img; }
    Eigen::VectorXd embed_text(const std::string&) const override { return txt; }
    double aesthetic_score(const Image&) const override { return 0; }
  } f;
  const Image dummy(4, 4);
  f.img = Eigen::Vector3d(1, 2, 3);
  f.txt = f.img;
  EXPECT_NEAR(clip_score(f, dummy, "x"), 100.0, 1e-12);
  f.txt = Eigen::Vector3d(3, 0, -1);
  EXPECT_NEAR(clip_score(f, dummy, "x"), 0.0, 1e-12);
  f.txt = Eigen::Vector3d(0.3, -2, 1);
  const double base = clip_score(f, dummy, "x");
  f.txt *= 7.5;
  f.img *= 0.01;
  EXPECT_NEAR(clip_score(f, dummy, "x"), base, 1e-12);
  f.txt.setZero();
  EXPECT_THROW(clip_score(f, dummy, "x"), Error);
}

TEST(Frechet, IdenticalAndOneDimensional) {
  std::mt19937_64 rng(5);
  const Eigen::MatrixXd a = gaussian_set(rng, 40, 5);
  EXPECT_NEAR(frechet_distance(a, a), 0.0, 1e-6);
  const double s = std::sqrt(0.75);
  Eigen::MatrixXd x(4, 1), y(4, 1);
  x << -s, -s, s, s;
  y = x.array() + 1.0;
  EXPECT_NEAR(frechet_distance(x, y), 1.0, 1e-6);
  Eigen::MatrixXd z = 2.0 * x;  // sigma 2: (0)^2 + (1 - 2)^2
  EXPECT_NEAR(frechet_distance(x, z), 1.0, 1e-6);
}

TEST(Frechet, MatchesClosedFormOracle) {
  std::mt19937_64 rng(6);
  for (int i = 0; i < 10; ++i) {
    Eigen::MatrixXd a = gaussian_set(rng, 50, 4), b = gaussian_set(rng, 60, 4, 0.3);
    b.col(1) *= 2.0;
    b.col(2) += 0.5 * b.col(0);
    EXPECT_NEAR(frechet_distance(a, b), oracle::frechet_closed_form(a, b), 1e-6);
    EXPECT_GE(frechet_distance(a, b), 0.0);
  }
}

TEST(Frechet, Errors) {
  Eigen::MatrixXd a = Eigen::MatrixXd::Ones(1, 3), b = Eigen::MatrixXd::Ones(5, 3);
  EXPECT_THROW(frechet_distance(a, b), ValidationError);
  b(2, 1) = std::nan("");
  EXPECT_THROW(frechet_distance(b, b), ValidationError);
  EXPECT_THROW(frechet_distance(Eigen::MatrixXd::Ones(4, 3), Eigen::MatrixXd::Ones(4, 2)), ValidationError);
}

TEST(Kernel, MatchesDirectSummation) {
  std::mt19937_64 rng(7);
  const Eigen::MatrixXd a = gaussian_set(rng, 5, 3);
  EXPECT_NEAR(kernel_distance(a, a), oracle::kid_direct(a, a), 1e-9);
  EXPECT_LE(kernel_distance(a, a), 1e-9);
  const Eigen::MatrixXd b = gaussian_set(rng, 7, 3, 0.4);
  EXPECT_NEAR(kernel_distance(a, b), oracle::kid_direct(a, b), 1e-9);
  EXPECT_THROW(kernel_distance(Eigen::MatrixXd::Ones(1, 3), b), ValidationError);
}

TEST(Kernel, SameDistributionWithinBootstrapNoise) {
  std::mt19937_64 rng(8);
  const Eigen::MatrixXd a = gaussian_set(rng, 500, 8), b = gaussian_set(rng, 500, 8);
  const double sigma = oracle::kid_bootstrap_sigma(a, b, 40, 9);
  EXPECT_LT(std::abs(kernel_distance(a, b)), 3 * sigma);
  const Eigen::MatrixXd shifted = a.array() + 3.0;
  EXPECT_GT(kernel_distance(shifted, b), kernel_distance(a, b));
}

TEST(Report, AssemblesAndFormats) {
  RunMetrics r1{"run-a", 1.0, "object_and_eos", 0.0, 1, 0.8, 0.02, 30.0, 70.0, 8.0, 5.0};
  RunMetrics r2{"run-b", 0.5, "all_tokens", 40.0, 2, 0.6, 0.04, 28.0, std::nullopt, std::nullopt, 5.0};
  const MetricsReport single = assemble_report({r1});
  EXPECT_EQ(*single.summary.s_iou, 0.8);
  EXPECT_EQ(*single.summary.fid, 70.0);
  const MetricsReport two = assemble_report({r1, r2});
  ASSERT_EQ(two.runs.size(), 2u);
  EXPECT_NEAR(*two.summary.s_iou, 0.7, 1e-12);
  EXPECT_NEAR(*two.summary.clip, 29.0, 1e-12);
  EXPECT_EQ(*two.summary.fid, 70.0);

  std::istringstream lines(two.to_jsonl());
  std::string line;
  std::vector<nlohmann::json> rows;
  while (std::getline(lines, line)) rows.push_back(nlohmann::json::parse(line));
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0]["run_id"], "run-a");
  EXPECT_EQ(rows[1]["k"], 40.0);
  for (const char* k : {"s_iou", "s_cd", "clip", "fid", "kid", "aes"}) EXPECT_TRUE(rows[2]["summary"].contains(k)) << k;

  const std::string table = two.to_table();
  EXPECT_NE(table.find("| run | lambda | strategy | K | S-IOU | S-CD | FID | KID | Aes. | CLIP |"), std::string::npos);
  EXPECT_NE(table.find("run-b"), std::string::npos);

  EXPECT_THROW(assemble_report({}), ValidationError);
  EXPECT_THROW(assemble_report({r1, r1}), ValidationError);
  RunMetrics bad = r2;
  bad.run_id = "c";
  bad.lambda = 1.5;
  EXPECT_THROW(assemble_report({r1, bad}), ValidationError);
  bad.lambda = 0.5;
  bad.strategy = "everything";
  EXPECT_THROW(assemble_report({r1, bad}), ValidationError);
}
