#pragma once

// Cross-attention residual mapping from shape tokens B (65 x D_s) and a
// prompt embedding T (77 x D_t) to a prompt residual dT (77 x D_t).
//
// Each block is pre-norm:
//   X  = H + CrossAttention(LN_q(H) Wq, LN_kv(B) Wk, LN_kv(B) Wv) Wo
//   H' = X + GELU(LN_m(X) W1 + b1) W2 + b2
// with H = T entering block 1. The last block's output passes a final linear
// layer that starts at zero, so an untrained module emits dT = 0.

#include "shapewords/core.hpp"
#include "shapewords/prompts.hpp"

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace shapewords {

struct Shape2ClipDims {
  int text_dim = 16;    // D_t
  int shape_dim = 8;    // D_s
  int attn_dim = 16;    // d
  int hidden_dim = 32;  // D_h
  int blocks = 6;
  int heads = 1;

  void validate() const {
    if (text_dim <= 0 || shape_dim <= 0 || attn_dim <= 0 || hidden_dim <= 0 || blocks <= 0 || heads <= 0)
      throw ValidationError("shape2clip dimensions must be positive");
    if (attn_dim % heads != 0) throw ValidationError("attention dim must be divisible by head count");
  }
  bool operator==(const Shape2ClipDims&) const = default;
};

template <typename Scalar>
struct BlockParams {
  Matrix<Scalar> norm_q_gain, norm_q_bias;    // 1 x D_t
  Matrix<Scalar> norm_kv_gain, norm_kv_bias;  // 1 x D_s
  Matrix<Scalar> w_q;                         // D_t x d
  Matrix<Scalar> w_k, w_v;                    // D_s x d
  Matrix<Scalar> w_o;                         // d x D_t
  Matrix<Scalar> b_o;                         // 1 x D_t
  Matrix<Scalar> norm_mlp_gain, norm_mlp_bias;
  Matrix<Scalar> w_1;  // D_t x D_h
  Matrix<Scalar> b_1;  // 1 x D_h
  Matrix<Scalar> w_2;  // D_h x D_t
  Matrix<Scalar> b_2;  // 1 x D_t

  template <typename Self, typename Fn>
  static void visit(Self& self, Fn&& fn) {
    fn("norm_q.gain", self.norm_q_gain);
    fn("norm_q.bias", self.norm_q_bias);
    fn("norm_kv.gain", self.norm_kv_gain);
    fn("norm_kv.bias", self.norm_kv_bias);
    fn("attn.w_q", self.w_q);
    fn("attn.w_k", self.w_k);
    fn("attn.w_v", self.w_v);
    fn("attn.w_o", self.w_o);
    fn("attn.b_o", self.b_o);
    fn("norm_mlp.gain", self.norm_mlp_gain);
    fn("norm_mlp.bias", self.norm_mlp_bias);
    fn("mlp.w_1", self.w_1);
    fn("mlp.b_1", self.b_1);
    fn("mlp.w_2", self.w_2);
    fn("mlp.b_2", self.b_2);
  }
};

/// Learned weights. Also used as the gradient container.
template <typename Scalar>
struct Shape2ClipParams {
  Shape2ClipDims dims;
  std::vector<BlockParams<Scalar>> blocks;
  Matrix<Scalar> final_w;  // D_t x D_t
  Matrix<Scalar> final_b;  // 1 x D_t

  /// Visits every tensor in serialization order with its qualified name.
  template <typename Fn>
  void for_each_tensor(Fn&& fn) {
    for (std::size_t b = 0; b < blocks.size(); ++b)
      BlockParams<Scalar>::visit(blocks[b], [&](const char* n, Matrix<Scalar>& m) { fn("block" + std::to_string(b) + "." + n, m); });
    fn(std::string("final.w"), final_w);
    fn(std::string("final.b"), final_b);
  }
  template <typename Fn>
  void for_each_tensor(Fn&& fn) const {
    for (std::size_t b = 0; b < blocks.size(); ++b)
      BlockParams<Scalar>::visit(blocks[b], [&](const char* n, const Matrix<Scalar>& m) { fn("block" + std::to_string(b) + "." + n, m); });
    fn(std::string("final.w"), final_w);
    fn(std::string("final.b"), final_b);
  }

  /// Same shapes, all zeros.
  Shape2ClipParams zeros_like() const {
    Shape2ClipParams z = *this;
    z.for_each_tensor([](const std::string&, Matrix<Scalar>& m) { m.setZero(); });
    return z;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_tensor([&](const std::string&, const Matrix<Scalar>& m) { n += static_cast<std::size_t>(m.size()); });
    return n;
  }

  bool all_finite() const {
    bool ok = true;
    for_each_tensor([&](const std::string&, const Matrix<Scalar>& m) { ok = ok && m.allFinite(); });
    return ok;
  }

  template <typename To>
  Shape2ClipParams<To> cast() const {
    Shape2ClipParams<To> out;
    out.dims = dims;
    out.blocks.resize(blocks.size());
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      std::vector<const Matrix<Scalar>*> src;
      BlockParams<Scalar>::visit(blocks[b], [&](const char*, const Matrix<Scalar>& m) { src.push_back(&m); });
      std::size_t k = 0;
      BlockParams<To>::visit(out.blocks[b], [&](const char*, Matrix<To>& m) { m = src[k++]->template cast<To>(); });
    }
    out.final_w = final_w.template cast<To>();
    out.final_b = final_b.template cast<To>();
    return out;
  }
};

/// Seeded scaled-normal init (std = 1/sqrt(fan_in)) for projections, unit
/// gains, zero biases, and a zero final layer.
template <typename Scalar>
Shape2ClipParams<Scalar> init_params(const Shape2ClipDims& dims, std::uint64_t seed) {
  dims.validate();
  std::mt19937_64 rng(seed);
  auto normal = [&](int rows, int cols) {
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(rows)));
    Matrix<Scalar> m(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) m(i, j) = static_cast<Scalar>(dist(rng));
    return m;
  };
  const int dt = dims.text_dim, ds = dims.shape_dim, d = dims.attn_dim, dh = dims.hidden_dim;
  Shape2ClipParams<Scalar> p;
  p.dims = dims;
  p.blocks.resize(dims.blocks);
  for (auto& b : p.blocks) {
    b.norm_q_gain = Matrix<Scalar>::Ones(1, dt);
    b.norm_q_bias = Matrix<Scalar>::Zero(1, dt);
    b.norm_kv_gain = Matrix<Scalar>::Ones(1, ds);
    b.norm_kv_bias = Matrix<Scalar>::Zero(1, ds);
    b.w_q = normal(dt, d);
    b.w_k = normal(ds, d);
    b.w_v = normal(ds, d);
    b.w_o = normal(d, dt);
    b.b_o = Matrix<Scalar>::Zero(1, dt);
    b.norm_mlp_gain = Matrix<Scalar>::Ones(1, dt);
    b.norm_mlp_bias = Matrix<Scalar>::Zero(1, dt);
    b.w_1 = normal(dt, dh);
    b.b_1 = Matrix<Scalar>::Zero(1, dh);
    b.w_2 = normal(dh, dt);
    b.b_2 = Matrix<Scalar>::Zero(1, dt);
  }
  p.final_w = Matrix<Scalar>::Zero(dt, dt);
  p.final_b = Matrix<Scalar>::Zero(1, dt);
  return p;
}

namespace detail {

template <typename Scalar>
struct LayerNormCache {
  Matrix<Scalar> xhat;
  Vector<Scalar> rstd;
};

template <typename Scalar>
Matrix<Scalar> layer_norm(const Matrix<Scalar>& x, const Matrix<Scalar>& gain, const Matrix<Scalar>& bias,
                          LayerNormCache<Scalar>& cache) {
  constexpr Scalar eps = Scalar(1e-5);
  const Vector<Scalar> mean = x.rowwise().mean();
  Matrix<Scalar> centered = x.colwise() - mean;
  const Vector<Scalar> var = centered.array().square().rowwise().mean();
  cache.rstd = (var.array() + eps).rsqrt();
  cache.xhat = centered.array().colwise() * cache.rstd.array();
  return (cache.xhat.array().rowwise() * gain.row(0).array()).rowwise() + bias.row(0).array();
}

// Returns dL/dx; accumulates into the gain/bias gradients.
template <typename Scalar>
Matrix<Scalar> layer_norm_backward(const Matrix<Scalar>& dy, const Matrix<Scalar>& gain, const LayerNormCache<Scalar>& cache,
                                   Matrix<Scalar>& d_gain, Matrix<Scalar>& d_bias) {
  d_gain += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  d_bias += dy.colwise().sum();
  const Matrix<Scalar> dxhat = dy.array().rowwise() * gain.row(0).array();
  const Vector<Scalar> m1 = dxhat.rowwise().mean();
  const Vector<Scalar> m2 = (dxhat.array() * cache.xhat.array()).rowwise().mean();
  Matrix<Scalar> dx = (dxhat.colwise() - m1) - (cache.xhat.array().colwise() * m2.array()).matrix();
  return dx.array().colwise() * cache.rstd.array();
}

template <typename Scalar>
constexpr Scalar gelu_k() {
  return Scalar(0.7978845608028654);  // sqrt(2 / pi)
}

template <typename Scalar>
Matrix<Scalar> gelu(const Matrix<Scalar>& u) {
  const auto a = u.array();
  return (Scalar(0.5) * a * (Scalar(1) + (gelu_k<Scalar>() * (a + Scalar(0.044715) * a.cube())).tanh())).matrix();
}

template <typename Scalar>
Matrix<Scalar> gelu_grad(const Matrix<Scalar>& u) {
  const auto a = u.array();
  const auto th = (gelu_k<Scalar>() * (a + Scalar(0.044715) * a.cube())).tanh();
  return (Scalar(0.5) * (Scalar(1) + th) +
          Scalar(0.5) * a * (Scalar(1) - th.square()) * gelu_k<Scalar>() * (Scalar(1) + Scalar(3 * 0.044715) * a.square()))
      .matrix();
}

template <typename Scalar>
void softmax_rows(Matrix<Scalar>& s) {
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const Scalar m = s.row(i).maxCoeff();
    s.row(i) = (s.row(i).array() - m).exp().matrix();
    s.row(i) /= s.row(i).sum();
  }
}

template <typename Scalar>
struct BlockCache {
  Matrix<Scalar> input;  // H
  LayerNormCache<Scalar> norm_q, norm_kv, norm_mlp;
  Matrix<Scalar> hn, bn, q, k, v;
  std::vector<Matrix<Scalar>> probs;  // per head, 77 x 65
  Matrix<Scalar> attn_out;            // 77 x d, heads concatenated
  Matrix<Scalar> xn, pre_act, act;
};

}  // namespace detail

/// Activations retained by forward for the backward pass.
template <typename Scalar>
struct ForwardCache {
  std::vector<detail::BlockCache<Scalar>> blocks;
  Matrix<Scalar> last_hidden;
};

namespace detail {

template <typename Scalar>
void check_inputs(const Matrix<Scalar>& shape_tokens, const Matrix<Scalar>& prompt, const Shape2ClipParams<Scalar>& p) {
  if (shape_tokens.rows() != kShapeTokenCount || shape_tokens.cols() != p.dims.shape_dim)
    throw DimensionError("shape tokens must be 65 x " + std::to_string(p.dims.shape_dim) + ", got " +
                         std::to_string(shape_tokens.rows()) + " x " + std::to_string(shape_tokens.cols()));
  if (prompt.rows() != kMaxTokens || prompt.cols() != p.dims.text_dim)
    throw DimensionError("prompt embedding must be 77 x " + std::to_string(p.dims.text_dim) + ", got " +
                         std::to_string(prompt.rows()) + " x " + std::to_string(prompt.cols()));
  if (static_cast<int>(p.blocks.size()) != p.dims.blocks) throw DimensionError("parameter block count mismatch");
}

}  // namespace detail

/// dT(B, T; theta). Pass a cache to enable backward().
template <typename Scalar>
Matrix<Scalar> forward(const Matrix<Scalar>& shape_tokens, const Matrix<Scalar>& prompt, const Shape2ClipParams<Scalar>& p,
                       ForwardCache<Scalar>* cache = nullptr) {
  detail::check_inputs(shape_tokens, prompt, p);
  const int heads = p.dims.heads;
  const int head_dim = p.dims.attn_dim / heads;
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(head_dim));

  if (cache) cache->blocks.resize(p.blocks.size());
  detail::BlockCache<Scalar> scratch;
  Matrix<Scalar> h = prompt;
  for (std::size_t bi = 0; bi < p.blocks.size(); ++bi) {
    const auto& b = p.blocks[bi];
    auto& c = cache ? cache->blocks[bi] : scratch;
    c.input = h;
    c.hn = detail::layer_norm(h, b.norm_q_gain, b.norm_q_bias, c.norm_q);
    c.bn = detail::layer_norm(shape_tokens, b.norm_kv_gain, b.norm_kv_bias, c.norm_kv);
    c.q.noalias() = c.hn * b.w_q;
    c.k.noalias() = c.bn * b.w_k;
    c.v.noalias() = c.bn * b.w_v;
    c.probs.resize(heads);
    c.attn_out.resize(h.rows(), p.dims.attn_dim);
    for (int hd = 0; hd < heads; ++hd) {
      const int off = hd * head_dim;
      Matrix<Scalar> s = scale * (c.q.middleCols(off, head_dim) * c.k.middleCols(off, head_dim).transpose());
      detail::softmax_rows(s);
      c.attn_out.middleCols(off, head_dim).noalias() = s * c.v.middleCols(off, head_dim);
      c.probs[hd] = std::move(s);
    }
    Matrix<Scalar> x = h + c.attn_out * b.w_o;
    x.rowwise() += b.b_o.row(0);
    c.xn = detail::layer_norm(x, b.norm_mlp_gain, b.norm_mlp_bias, c.norm_mlp);
    c.pre_act = c.xn * b.w_1;
    c.pre_act.rowwise() += b.b_1.row(0);
    c.act = detail::gelu(c.pre_act);
    h = x + c.act * b.w_2;
    h.rowwise() += b.b_2.row(0);
  }
  Matrix<Scalar> delta = h * p.final_w;
  delta.rowwise() += p.final_b.row(0);
  if (cache) cache->last_hidden = std::move(h);
  return delta;
}

/// Gradient of a scalar loss with respect to every parameter, given
/// d loss / d dT and the cache from the matching forward call.
template <typename Scalar>
Shape2ClipParams<Scalar> backward(const Matrix<Scalar>& d_delta, const Shape2ClipParams<Scalar>& p,
                                  const ForwardCache<Scalar>& cache) {
  if (cache.blocks.size() != p.blocks.size()) throw ValidationError("backward: cache does not match parameters");
  const int heads = p.dims.heads;
  const int head_dim = p.dims.attn_dim / heads;
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(head_dim));

  Shape2ClipParams<Scalar> g = p.zeros_like();
  g.final_w.noalias() = cache.last_hidden.transpose() * d_delta;
  g.final_b = d_delta.colwise().sum();
  Matrix<Scalar> dh = d_delta * p.final_w.transpose();

  for (std::size_t bi = p.blocks.size(); bi-- > 0;) {
    const auto& b = p.blocks[bi];
    const auto& c = cache.blocks[bi];
    auto& gb = g.blocks[bi];

    // MLP sublayer: h_out = x + gelu(xn W1 + b1) W2 + b2
    gb.b_2 = dh.colwise().sum();
    gb.w_2.noalias() = c.act.transpose() * dh;
    const Matrix<Scalar> d_pre = ((dh * b.w_2.transpose()).array() * detail::gelu_grad(c.pre_act).array()).matrix();
    gb.b_1 = d_pre.colwise().sum();
    gb.w_1.noalias() = c.xn.transpose() * d_pre;
    const Matrix<Scalar> d_xn = d_pre * b.w_1.transpose();
    Matrix<Scalar> dx = dh + detail::layer_norm_backward(d_xn, b.norm_mlp_gain, c.norm_mlp, gb.norm_mlp_gain, gb.norm_mlp_bias);

    // Attention sublayer: x = h + attn W_o + b_o
    gb.b_o = dx.colwise().sum();
    gb.w_o.noalias() = c.attn_out.transpose() * dx;
    const Matrix<Scalar> d_attn = dx * b.w_o.transpose();
    Matrix<Scalar> dq(c.q.rows(), c.q.cols()), dk(c.k.rows(), c.k.cols()), dv(c.v.rows(), c.v.cols());
    for (int hd = 0; hd < heads; ++hd) {
      const int off = hd * head_dim;
      const Matrix<Scalar>& prob = c.probs[hd];
      const auto d_out = d_attn.middleCols(off, head_dim);
      dv.middleCols(off, head_dim).noalias() = prob.transpose() * d_out;
      const Matrix<Scalar> d_prob = d_out * c.v.middleCols(off, head_dim).transpose();
      const Vector<Scalar> row_dot = (d_prob.array() * prob.array()).rowwise().sum();
      const Matrix<Scalar> d_score = scale * (prob.array() * (d_prob.array().colwise() - row_dot.array())).matrix();
      dq.middleCols(off, head_dim).noalias() = d_score * c.k.middleCols(off, head_dim);
      dk.middleCols(off, head_dim).noalias() = d_score.transpose() * c.q.middleCols(off, head_dim);
    }
    gb.w_q.noalias() = c.hn.transpose() * dq;
    gb.w_k.noalias() = c.bn.transpose() * dk;
    gb.w_v.noalias() = c.bn.transpose() * dv;
    const Matrix<Scalar> d_hn = dq * b.w_q.transpose();
    const Matrix<Scalar> d_bn = dk * b.w_k.transpose() + dv * b.w_v.transpose();
    detail::layer_norm_backward(d_bn, b.norm_kv_gain, c.norm_kv, gb.norm_kv_gain, gb.norm_kv_bias);
    dh = dx + detail::layer_norm_backward(d_hn, b.norm_q_gain, c.norm_q, gb.norm_q_gain, gb.norm_q_bias);
  }
  return g;
}

class Config;

/// D_t and D_s from the backends; d, D_h, blocks, heads from
/// `shape2clip.{attn_dim,hidden_dim,blocks,heads}`.
Shape2ClipDims dims_from_config(const Config& cfg, int text_dim, int shape_dim);

enum class TokenStrategy { AllTokens, ObjectOnly, EosOnly, ObjectAndEos };

TokenStrategy parse_strategy(const std::string& name);
std::string to_string(TokenStrategy s);

struct GuidanceSpec {
  double lambda = 1.0;
  TokenStrategy strategy = TokenStrategy::ObjectAndEos;

  void validate() const {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ValidationError("lambda must be in [0, 1]");
  }
};

inline bool strategy_selects(TokenStrategy s, const TokenLayout& layout, int row) {
  switch (s) {
    case TokenStrategy::AllTokens:
      return true;
    case TokenStrategy::ObjectOnly:
      return layout.in_shape_span(row);
    case TokenStrategy::EosOnly:
      return row == layout.eos_index;
    case TokenStrategy::ObjectAndEos:
      return layout.in_shape_span(row) || row == layout.eos_index;
  }
  return false;
}

/// T' = T + lambda * dT on the rows the strategy selects; other rows are
/// copied bit-for-bit. lambda = 0 returns T unchanged.
template <typename Scalar>
Matrix<Scalar> apply_residual(const Matrix<Scalar>& prompt, const Matrix<Scalar>& delta, const GuidanceSpec& spec,
                              const TokenLayout& layout) {
  spec.validate();
  layout.validate();
  if (prompt.rows() != delta.rows() || prompt.cols() != delta.cols())
    throw DimensionError("prompt and residual shapes differ");
  if (layout.eos_index >= prompt.rows()) throw ValidationError("token layout exceeds prompt rows");
  Matrix<Scalar> out = prompt;
  if (spec.lambda == 0.0) return out;
  const Scalar lambda = static_cast<Scalar>(spec.lambda);
  for (Eigen::Index r = 0; r < prompt.rows(); ++r)
    if (strategy_selects(spec.strategy, layout, static_cast<int>(r))) out.row(r) += lambda * delta.row(r);
  return out;
}

// Parameter files: "S2CLIPv1" magic, little-endian u32 header
// {version, D_t, D_s, d, D_h, blocks, heads, tensor count}, then per tensor
// {u16 name length, name, u32 rows, u32 cols, rows*cols f32 row-major},
// then a u64 FNV-1a checksum of all preceding bytes.
inline constexpr std::uint32_t kParamFormatVersion = 1;

std::vector<unsigned char> serialize_params(const Shape2ClipParams<float>& params);
Shape2ClipParams<float> deserialize_params(const std::vector<unsigned char>& bytes);

template <typename Scalar>
void save_params(const std::string& path, const Shape2ClipParams<Scalar>& params);
void save_params_file(const std::string& path, const Shape2ClipParams<float>& params);
Shape2ClipParams<float> load_params_file(const std::string& path);

template <typename Scalar>
void save_params(const std::string& path, const Shape2ClipParams<Scalar>& params) {
  save_params_file(path, params.template cast<float>());
}

/// Loads and, when `expected` is given, rejects files whose dims differ.
template <typename Scalar>
Shape2ClipParams<Scalar> load_params(const std::string& path, const Shape2ClipDims* expected = nullptr) {
  Shape2ClipParams<float> p = load_params_file(path);
  if (expected && !(p.dims == *expected))
    throw DimensionError("parameter file " + path + " has D_t=" + std::to_string(p.dims.text_dim) + " D_s=" +
                         std::to_string(p.dims.shape_dim) + " d=" + std::to_string(p.dims.attn_dim) + " D_h=" +
                         std::to_string(p.dims.hidden_dim) + " blocks=" + std::to_string(p.dims.blocks) +
                         ", context expects D_t=" + std::to_string(expected->text_dim) + " D_s=" +
                         std::to_string(expected->shape_dim) + " d=" + std::to_string(expected->attn_dim) +
                         " D_h=" + std::to_string(expected->hidden_dim) + " blocks=" + std::to_string(expected->blocks));
  return p.template cast<Scalar>();
}

}  // namespace shapewords
