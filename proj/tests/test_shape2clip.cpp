#include "oracles.hpp"
#include "shapewords/shape2clip.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

using namespace shapewords;

namespace {

Shape2ClipDims small_dims() {
  Shape2ClipDims d;
  d.text_dim = 8;
  d.shape_dim = 6;
  d.attn_dim = 8;
  d.hidden_dim = 12;
  return d;
}

template <typename S>
Matrix<S> random_matrix(std::mt19937_64& rng, int rows, int cols, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix<S> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(n(rng));
  return m;
}

/// Initialized parameters with every tensor perturbed, so no gradient path is
/// masked by the zero final layer or unit gains.
template <typename S>
Shape2ClipParams<S> random_params(const Shape2ClipDims& dims, std::uint64_t seed) {
  Shape2ClipParams<S> p = init_params<S>(dims, seed);
  std::mt19937_64 rng(seed + 100);
  p.for_each_tensor([&](const std::string&, Matrix<S>& m) { m += random_matrix<S>(rng, m.rows(), m.cols(), 0.3); });
  return p;
}

double max_abs(const Shape2ClipParams<double>& a, const Shape2ClipParams<double>& b) {
  std::vector<const Matrix<double>*> ta;
  a.for_each_tensor([&](const std::string&, const Matrix<double>& m) { ta.push_back(&m); });
  double worst = 0.0;
  std::size_t k = 0;
  b.for_each_tensor([&](const std::string&, const Matrix<double>& m) {
    worst = std::max(worst, (m - *ta[k++]).cwiseAbs().maxCoeff());
  });
  return worst;
}

}  // namespace

TEST(Shape2Clip, ZeroInitGivesZeroResidual) {
  for (std::uint64_t seed : {0u, 1u, 42u}) {
    const auto p = init_params<double>(small_dims(), seed);
    std::mt19937_64 rng(seed);
    const Matrix<double> d = forward(random_matrix<double>(rng, 65, 6), random_matrix<double>(rng, 77, 8), p);
    EXPECT_EQ(d.rows(), 77);
    EXPECT_EQ(d.cwiseAbs().maxCoeff(), 0.0);
  }
}

TEST(Shape2Clip, InitDeterminism) {
  const auto a = init_params<double>(small_dims(), 5);
  const auto b = init_params<double>(small_dims(), 5);
  const auto c = init_params<double>(small_dims(), 6);
  EXPECT_EQ(max_abs(a, b), 0.0);
  EXPECT_GT(max_abs(a, c), 0.0);
  EXPECT_THROW(init_params<double>(Shape2ClipDims{0, 6, 8, 12, 6, 1}, 0), ValidationError);
}

TEST(Shape2Clip, DimensionMismatch) {
  const auto p = init_params<double>(small_dims(), 0);
  std::mt19937_64 rng(0);
  EXPECT_THROW(forward(random_matrix<double>(rng, 64, 6), random_matrix<double>(rng, 77, 8), p), DimensionError);
  EXPECT_THROW(forward(random_matrix<double>(rng, 65, 6), random_matrix<double>(rng, 77, 9), p), DimensionError);
}

TEST(Shape2Clip, PatchPermutationInvariance) {
  for (int heads : {1, 2}) {
    Shape2ClipDims dims = small_dims();
    dims.heads = heads;
    const auto p = random_params<double>(dims, 3);
    std::mt19937_64 rng(9);
    const Matrix<double> B = random_matrix<double>(rng, 65, 6), T = random_matrix<double>(rng, 77, 8);
    std::vector<int> perm(64);
    std::iota(perm.begin(), perm.end(), 1);
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix<double> Bp = B;
    for (int i = 0; i < 64; ++i) Bp.row(i + 1) = B.row(perm[static_cast<std::size_t>(i)]);
    const Matrix<double> d0 = forward(B, T, p), d1 = forward(Bp, T, p);
    EXPECT_LE((d0 - d1).norm(), 1e-5 * d0.norm());
    Matrix<double> Bf = Bp;
    Bf.row(0).swap(Bf.row(1));  // class token moved too: full simultaneous permutation
    EXPECT_LE((forward(Bf, T, p) - d0).norm(), 1e-5 * d0.norm());
  }
}

TEST(Shape2Clip, RepeatedKeyRowGivesQueryIndependentAttention) {
  const auto p = random_params<double>(small_dims(), 4);
  std::mt19937_64 rng(2);
  const Matrix<double> v = random_matrix<double>(rng, 1, 6);
  const Matrix<double> B = v.replicate(65, 1);
  ForwardCache<double> c1, c2;
  forward(B, random_matrix<double>(rng, 77, 8), p, &c1);
  forward(B, random_matrix<double>(rng, 77, 8), p, &c2);
  for (std::size_t b = 0; b < c1.blocks.size(); ++b) {
    const Matrix<double> expected = c1.blocks[b].bn.row(0) * p.blocks[b].w_v;
    for (int r = 0; r < 77; ++r) {
      EXPECT_LT((c1.blocks[b].attn_out.row(r) - expected).cwiseAbs().maxCoeff(), 1e-12);
      EXPECT_LT((c2.blocks[b].attn_out.row(r) - expected).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(ApplyResidual, LambdaZeroIsIdentity) {
  std::mt19937_64 rng(1);
  const Matrix<double> T = random_matrix<double>(rng, 77, 8), d = random_matrix<double>(rng, 77, 8);
  TokenLayout layout{2, 3, 5, 6};
  for (auto s : {TokenStrategy::AllTokens, TokenStrategy::ObjectOnly, TokenStrategy::EosOnly, TokenStrategy::ObjectAndEos})
    EXPECT_TRUE(apply_residual(T, d, GuidanceSpec{0.0, s}, layout) == T);
}

TEST(ApplyResidual, ObjectAndEosExample) {
  Matrix<double> T = Matrix<double>::Zero(77, 4);
  T.col(0).setLinSpaced(77, 0, 76);
  const Matrix<double> d = Matrix<double>::Ones(77, 4);
  const Matrix<double> out = apply_residual(T, d, GuidanceSpec{1.0, TokenStrategy::ObjectAndEos}, TokenLayout{1, 1, 3, 4});
  EXPECT_TRUE(out.row(1) == (T.row(1).array() + 1).matrix());
  EXPECT_TRUE(out.row(3) == (T.row(3).array() + 1).matrix());
  EXPECT_TRUE(out.row(0) == T.row(0));
  EXPECT_TRUE(out.row(2) == T.row(2));
  EXPECT_TRUE(out.bottomRows(73) == T.bottomRows(73));
}

TEST(ApplyResidual, StrategyRowSets) {
  std::mt19937_64 rng(4);
  const Matrix<double> T = random_matrix<double>(rng, 77, 4), d = Matrix<double>::Ones(77, 4);
  const TokenLayout layout{2, 3, 6, 7};
  auto changed = [&](TokenStrategy s) {
    const Matrix<double> out = apply_residual(T, d, GuidanceSpec{1.0, s}, layout);
    std::vector<int> rows;
    for (int r = 0; r < 77; ++r)
      if (out.row(r) != T.row(r)) rows.push_back(r);
    return rows;
  };
  EXPECT_EQ(changed(TokenStrategy::ObjectOnly), (std::vector<int>{2, 3}));
  EXPECT_EQ(changed(TokenStrategy::EosOnly), (std::vector<int>{6}));
  EXPECT_EQ(changed(TokenStrategy::ObjectAndEos), (std::vector<int>{2, 3, 6}));
  EXPECT_EQ(changed(TokenStrategy::AllTokens).size(), 77u);
}

TEST(ApplyResidual, LambdaLinearityExactOnIntegerData) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> u(-50, 50);
  Matrix<double> T(77, 8), d(77, 8);
  for (Eigen::Index i = 0; i < T.size(); ++i) {
    T.data()[i] = u(rng);
    d.data()[i] = u(rng);
  }
  const TokenLayout layout{1, 2, 4, 5};
  const GuidanceSpec one{1.0, TokenStrategy::AllTokens};
  const Matrix<double> full = apply_residual(T, d, one, layout) - T;
  for (double lambda : {0.0, 0.25, 0.5, 0.75}) {
    const Matrix<double> part = apply_residual(T, d, GuidanceSpec{lambda, TokenStrategy::AllTokens}, layout) - T;
    EXPECT_TRUE(part == (lambda * full).eval()) << lambda;
  }
  const Matrix<double> mid = apply_residual(T, d, GuidanceSpec{0.5, TokenStrategy::ObjectAndEos}, layout);
  const Matrix<double> hi = apply_residual(T, d, GuidanceSpec{1.0, TokenStrategy::ObjectAndEos}, layout);
  EXPECT_TRUE(mid == (0.5 * (T + hi)).eval());
}

TEST(ApplyResidual, LambdaLinearityOnRandomData) {
  std::mt19937_64 rng(8);
  const Matrix<double> T = random_matrix<double>(rng, 77, 8), d = random_matrix<double>(rng, 77, 8);
  const TokenLayout layout{1, 2, 4, 5};
  const Matrix<double> full = apply_residual(T, d, GuidanceSpec{1.0, TokenStrategy::AllTokens}, layout) - T;
  for (double lambda : {0.1, 0.3, 0.9}) {
    const Matrix<double> part = apply_residual(T, d, GuidanceSpec{lambda, TokenStrategy::AllTokens}, layout) - T;
    EXPECT_LT((part - lambda * full).cwiseAbs().maxCoeff(), 1e-14 * (1.0 + T.cwiseAbs().maxCoeff()));
  }
}

TEST(ApplyResidual, RejectsBadInputs) {
  const Matrix<double> T = Matrix<double>::Zero(77, 4);
  EXPECT_THROW(apply_residual(T, T, GuidanceSpec{1.5, TokenStrategy::AllTokens}, TokenLayout{}), ValidationError);
  EXPECT_THROW(apply_residual(T, T, GuidanceSpec{1.0, TokenStrategy::AllTokens}, TokenLayout{3, 2, 4, 5}), ValidationError);
  EXPECT_THROW(apply_residual(T, Matrix<double>(Matrix<double>::Zero(77, 3)), GuidanceSpec{}, TokenLayout{}), DimensionError);
}

TEST(Shape2Clip, GradientMatchesFiniteDifferences) {
  for (int heads : {1, 2}) {
    Shape2ClipDims dims = small_dims();
    dims.heads = heads;
    const auto p = random_params<double>(dims, 11);
    std::mt19937_64 rng(12);
    const Matrix<double> B = random_matrix<double>(rng, 65, 6), T = random_matrix<double>(rng, 77, 8);
    const Matrix<double> C = random_matrix<double>(rng, 77, 8);
    auto loss = [&](const Shape2ClipParams<double>& q) { return (forward(B, T, q).array() * C.array()).sum(); };
    ForwardCache<double> cache;
    forward(B, T, p, &cache);
    const auto grad = backward(C, p, cache);
    const auto check = oracle::finite_difference_check(loss, p, grad, 3, 99);
    EXPECT_LT(check.max_relative_error, 1e-4) << "heads " << heads;
    EXPECT_EQ(check.coordinates, 3 * (15 * dims.blocks + 2));
  }
}

TEST(ParamIo, RoundTripIsBitExact) {
  const auto dir = std::filesystem::temp_directory_path() / "sw_params";
  std::filesystem::create_directories(dir);
  const auto p = random_params<float>(small_dims(), 21);
  const std::string path = (dir / "p.s2c").string();
  save_params(path, p);
  const auto q = load_params<float>(path);
  EXPECT_TRUE(q.dims == p.dims);
  EXPECT_EQ(max_abs(p.cast<double>(), q.cast<double>()), 0.0);
  EXPECT_EQ(serialize_params(p), serialize_params(q));
}

TEST(ParamIo, TruncatedAndCorruptFiles) {
  const auto dir = std::filesystem::temp_directory_path() / "sw_params";
  std::filesystem::create_directories(dir);
  auto bytes = serialize_params(init_params<float>(small_dims(), 1));
  const std::string path = (dir / "trunc.s2c").string();
  std::ofstream(path, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size() / 2));
  EXPECT_THROW(load_params<float>(path), FormatError);
  bytes[bytes.size() / 2] ^= 0x40;
  EXPECT_THROW(deserialize_params(bytes), FormatError);
  EXPECT_THROW(load_params<float>((dir / "none.s2c").string()), Error);
}

TEST(ParamIo, DimensionMismatchOnLoad) {
  const auto dir = std::filesystem::temp_directory_path() / "sw_params";
  std::filesystem::create_directories(dir);
  Shape2ClipDims d16 = small_dims();
  d16.text_dim = 16;
  Shape2ClipDims d32 = d16;
  d32.text_dim = 32;
  const std::string path = (dir / "d16.s2c").string();
  save_params(path, init_params<float>(d16, 0));
  EXPECT_THROW(load_params<float>(path, &d32), DimensionError);
  EXPECT_NO_THROW(load_params<float>(path, &d16));
}

TEST(Strategy, ParseRoundTrip) {
  for (auto s : {TokenStrategy::AllTokens, TokenStrategy::ObjectOnly, TokenStrategy::EosOnly, TokenStrategy::ObjectAndEos})
    EXPECT_EQ(parse_strategy(to_string(s)), s);
  EXPECT_THROW(parse_strategy("everything"), ValidationError);
}
