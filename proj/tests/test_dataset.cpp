#include "fixtures.hpp"
#include "shapewords/dataset.hpp"
#include "shapewords/evaluation.hpp"
#include "shapewords/image_io.hpp"
#include "shapewords/manifest.hpp"
#include "shapewords/toy_backends.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>

using namespace shapewords;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

Mask foreground(const Plane& depth) { return (depth.array() > 0.0f).cast<std::uint8_t>(); }

}  // namespace

TEST(RenderSet, ThirtyViewsAtTwelveDegrees) {
  const RenderSet rs = build_render_set("chair_0", fixture::shape("chair"), 20.0, 32);
  ASSERT_EQ(rs.views.size(), 30u);
  ASSERT_EQ(rs.depths.size(), 30u);
  ASSERT_EQ(rs.silhouettes.size(), 30u);
  for (int i = 0; i < 30; ++i) {
    EXPECT_EQ(rs.views[i].azimuth, 12.0 * i);
    EXPECT_EQ(rs.views[i].elevation, 20.0);
    EXPECT_GE(rs.depths[i].minCoeff(), 0.0f);
    EXPECT_LE(rs.depths[i].maxCoeff(), 1.0f);
    EXPECT_TRUE(foreground(rs.depths[i]) == rs.silhouettes[i]);
  }
  EXPECT_THROW(build_render_set("flat", Points<double>::Zero(10, 3), 20.0, 32), ValidationError);
}

TEST(RenderSet, RingIsRotationallySymmetric) {
  const RenderSet rs = build_render_set("ring", toy::procedural_shape("ring", 6000, 1), 20.0, 64, 2);
  for (int i = 1; i < 30; ++i) EXPECT_GT(silhouette_iou(rs.silhouettes[0], rs.silhouettes[i]), 0.95) << "view " << i;
}

TEST(AssignPrompts, DeterministicAndUniform) {
  const std::vector<std::string> bank = {"p0", "p1", "p2", "p3", "p4", "p5", "p6", "p7", "p8", "p9"};
  std::mt19937_64 a(4), b(4);
  EXPECT_EQ(assign_prompts(30, bank, a), assign_prompts(30, bank, b));
  std::mt19937_64 rng(5);
  for (const auto& p : assign_prompts(30, std::vector<std::string>{"only"}, rng)) EXPECT_EQ(p, "only");
  std::map<std::string, int> counts;
  for (const auto& p : assign_prompts(10000, bank, rng)) ++counts[p];
  const double sigma = std::sqrt(10000 * 0.1 * 0.9);
  ASSERT_EQ(counts.size(), 10u);
  for (const auto& [p, n] : counts) EXPECT_LT(std::abs(n - 1000.0), 4 * sigma) << p;
  EXPECT_THROW(assign_prompts(3, std::vector<std::string>{}, rng), ValidationError);
}

TEST(Synthesis, ToyForegroundMatchesSilhouetteExactly) {
  const RenderSet rs = build_render_set("lamp", fixture::shape("lamp"), 20.0, 64, 1);
  toy::CompositingGenerator gen;
  toy::NoiseInpainter inp;
  toy::ThresholdSegmenter seg;
  for (int v : {0, 7, 19}) {
    GenerationJob job{"lamp_" + std::to_string(v), rs.depths[v], "a sketch of a lamp"};
    job.seed = 11 + v;
    const Image img = synthesize_image(job, gen, inp);
    EXPECT_TRUE(seg.segment(img) == rs.silhouettes[v]) << "view " << v;
    const Image again = synthesize_image(job, gen, inp);
    for (int c = 0; c < 3; ++c) EXPECT_TRUE(img.channel(c) == again.channel(c));
  }
}

TEST(Synthesis, InpaintStrengthZeroKeepsBackground) {
  const RenderSet rs = build_render_set("mug", fixture::shape("mug"), 20.0, 64, 1);
  toy::CompositingGenerator gen;
  toy::NoiseInpainter inp;
  GenerationJob job{"mug_0", rs.depths[0], "a photo of a mug"};
  job.inpaint_strength = 0.0;
  job.seed = 3;
  const Image raw = gen.generate(job.depth, job.prompt, SynthesisParams{}, job.seed);
  const Image out = synthesize_image(job, gen, inp);
  for (int c = 0; c < 3; ++c) EXPECT_TRUE(out.channel(c) == raw.channel(c));
  job.inpaint_strength = 0.5;
  const Image changed = synthesize_image(job, gen, inp);
  const Mask fg = foreground(job.depth);
  bool background_differs = false;
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      if (fg(y, x)) {
        EXPECT_EQ(changed.r(y, x), raw.r(y, x));
      } else if (changed.r(y, x) != raw.r(y, x)) {
        background_differs = true;
      }
    }
  EXPECT_TRUE(background_differs);
}

TEST(Synthesis, BackendFailureNamesJob) {
  struct Failing : ImageGeneratorBackend {
    Image generate(const Plane&, const std::string&, const SynthesisParams&, std::uint64_t) const override {
      throw std::runtime_error("device lost");
    }
  } gen;
  toy::NoiseInpainter inp;
  try {
    synthesize_image(GenerationJob{"chair_07", Plane::Zero(8, 8), "x"}, gen, inp);
    FAIL();
  } catch (const BackendError& e) {
    EXPECT_NE(std::string(e.what()).find("chair_07"), std::string::npos);
  }
}

TEST(Dilate, GrowsSquareNeighbourhood) {
  Mask m = Mask::Zero(7, 7);
  m(3, 3) = 1;
  const Mask d = dilate(m, 1);
  EXPECT_EQ(d.cast<int>().sum(), 9);
  EXPECT_EQ(d(2, 2), 1);
  EXPECT_EQ(d(1, 3), 0);
  EXPECT_TRUE(dilate(m, 0) == m);
}

class BuiltDataset : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root = fresh_dir("sw_dataset");
    toy::write_procedural_shapes((root / "shapes").string(), 1, 400, 2);
    shapes = scan_shapes_dir((root / "shapes").string());
    DatasetOptions o;
    o.image_size = 32;
    o.workers = 2;
    o.seed = 9;
    const toy::CompositingGenerator gen;
    const toy::NoiseInpainter inp;
    summary = build_dataset(shapes, {"a photo of a [SHAPE-ID]", "a drawing of a [SHAPE-ID]"}, (root / "out").string(), o,
                            gen, inp);
  }
  static inline fs::path root;
  static inline std::vector<ShapeSource> shapes;
  static inline DatasetSummary summary;
};

TEST_F(BuiltDataset, ThirtyRecordsPerShapeInOrder) {
  ASSERT_EQ(shapes.size(), 5u);
  EXPECT_TRUE(summary.failures.empty());
  ASSERT_EQ(summary.records.size(), 30 * shapes.size());
  const auto read = read_manifest((root / "out" / "manifest.jsonl").string());
  ASSERT_EQ(read.size(), summary.records.size());
  for (std::size_t i = 0; i < read.size(); ++i) {
    EXPECT_EQ(read[i].shape_id, shapes[i / 30].shape_id);
    EXPECT_EQ(read[i].view_index, static_cast<int>(i % 30));
    EXPECT_EQ(read[i].category, shapes[i / 30].category);
    EXPECT_EQ(count_placeholders(read[i].prompt), 1);
  }
  EXPECT_TRUE(validate_manifest((root / "out" / "manifest.jsonl").string()).empty());
}

TEST_F(BuiltDataset, DepthPngsAreSixteenBitInUnitRange) {
  const Plane d = read_png_gray((root / "out" / "depth" / (shapes[0].shape_id + "_00.png")).string());
  EXPECT_EQ(d.rows(), 32);
  EXPECT_GE(d.minCoeff(), 0.0f);
  EXPECT_LE(d.maxCoeff(), 1.0f);
  EXPECT_EQ(d(0, 0), 0.0f);
  std::ifstream in(root / "out" / "depth" / (shapes[0].shape_id + "_00.png"), std::ios::binary);
  unsigned char header[25];
  in.read(reinterpret_cast<char*>(header), 25);
  EXPECT_EQ(header[24], 16);  // IHDR bit depth
}

TEST_F(BuiltDataset, RebuildIsDeterministic) {
  DatasetOptions o;
  o.image_size = 32;
  o.workers = 1;
  o.seed = 9;
  const toy::CompositingGenerator gen;
  const toy::NoiseInpainter inp;
  const auto again = build_dataset(shapes, {"a photo of a [SHAPE-ID]", "a drawing of a [SHAPE-ID]"},
                                   (root / "again").string(), o, gen, inp);
  ASSERT_EQ(again.records.size(), summary.records.size());
  for (std::size_t i = 0; i < again.records.size(); ++i) {
    EXPECT_EQ(again.records[i].prompt, summary.records[i].prompt);
    const Image a = read_png_rgb((root / "again" / again.records[i].image_path).string());
    const Image b = read_png_rgb((root / "out" / summary.records[i].image_path).string());
    ASSERT_TRUE(a.r == b.r) << i;
  }
}

TEST(Manifest, RoundTripMissingAssetAndMalformedLine) {
  const fs::path dir = fresh_dir("sw_manifest");
  std::ofstream(dir / "a.xyz") << "0 0 0\n";
  std::ofstream(dir / "a.png") << "x";
  std::ofstream(dir / "b.png") << "x";
  const std::string path = (dir / "m.jsonl").string();
  write_manifest(path, {{"a", "a.xyz", "a photo of a [SHAPE-ID]", "a.png", 0, "chair"},
                        {"a", "a.xyz", "a [SHAPE-ID] on grass", "b.png", 1, "chair"}});
  EXPECT_TRUE(validate_manifest(path).empty());
  const auto recs = read_manifest(path);
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_EQ(recs[1].prompt, "a [SHAPE-ID] on grass");
  EXPECT_EQ(recs[1].label(), "chair");

  fs::remove(dir / "b.png");
  auto errors = validate_manifest(path);
  ASSERT_EQ(errors.size(), 1u);
  EXPECT_NE(errors[0].find("missing asset"), std::string::npos);
  EXPECT_NE(errors[0].find("b.png"), std::string::npos);

  std::ofstream(dir / "b.png") << "x";
  std::ofstream(path, std::ios::app) << "{not json\n";
  errors = validate_manifest(path);
  ASSERT_EQ(errors.size(), 1u);
  EXPECT_NE(errors[0].find(":3: parse error"), std::string::npos);
  EXPECT_THROW(read_manifest(path), FormatError);

  std::ofstream(path) << R"({"shape_id":"a","cloud_path":"a.xyz","prompt":"x [SHAPE-ID]","view_index":0})" << "\n";
  errors = validate_manifest(path);
  ASSERT_EQ(errors.size(), 1u);
  EXPECT_NE(errors[0].find("missing field image_path"), std::string::npos);
  EXPECT_FALSE(validate_manifest((dir / "nope.jsonl").string()).empty());
}

TEST(ShapesDir, ScanSortsAndRejectsDuplicates) {
  const fs::path dir = fresh_dir("sw_shapes_scan");
  toy::write_procedural_shapes(dir.string(), 2, 100, 0);
  const auto shapes = scan_shapes_dir(dir.string());
  ASSERT_EQ(shapes.size(), 10u);
  EXPECT_EQ(shapes[0].category, "chair");
  EXPECT_EQ(shapes[0].shape_id, "chair_0");
  EXPECT_EQ(shapes[9].shape_id, "table_1");
  fs::copy_file(dir / "chair" / "chair_0.xyz", dir / "lamp" / "chair_0.xyz");
  EXPECT_THROW(scan_shapes_dir(dir.string()), ValidationError);
}

TEST(DatasetOptions, FromConfig) {
  const DatasetOptions d = DatasetOptions::from_config(Config::parse("[dataset]\nimage_size = 48\nmask_dilation = 2\nworkers = 3\n"));
  EXPECT_EQ(d.image_size, 48);
  EXPECT_EQ(d.mask_dilation, 2);
  EXPECT_EQ(d.workers, 3);
  EXPECT_EQ(d.steps, DatasetOptions{}.steps);
  EXPECT_THROW(DatasetOptions::from_config(Config::parse("dataset.workers = 0\n")), ValidationError);
  EXPECT_THROW(DatasetOptions::from_config(Config::parse("dataset.inpaint_strength = 2\n")), ValidationError);
}
