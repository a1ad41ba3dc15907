#include "shapewords/evaluation.hpp"

#include "shapewords/shape2clip.hpp"

#include <json.hpp>

#include <Eigen/Eigenvalues>

#include <cmath>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>

namespace shapewords {

namespace {

void check_pair(const Mask& a, const Mask& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError("mask sizes differ: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " vs " +
                         std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
}

// Lower envelope of parabolas over the finite entries of f (squared values).
void distance_1d(const std::vector<double>& f, std::vector<double>& d) {
  const int n = static_cast<int>(f.size());
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<int> v;
  std::vector<double> z;
  v.reserve(n);
  z.reserve(n + 1);
  for (int q = 0; q < n; ++q) {
    if (!std::isfinite(f[q])) continue;
    if (v.empty()) {
      v.push_back(q);
      z.assign({-inf, inf});
      continue;
    }
    double s;
    while (true) {
      const int p = v.back();
      s = ((f[q] + static_cast<double>(q) * q) - (f[p] + static_cast<double>(p) * p)) / (2.0 * (q - p));
      if (s <= z[z.size() - 2] && v.size() > 1) {
        v.pop_back();
        z.pop_back();
      } else {
        break;
      }
    }
    z.back() = s;
    v.push_back(q);
    z.push_back(inf);
  }
  d.assign(n, inf);
  if (v.empty()) return;
  std::size_t k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const double dq = q - v[k];
    d[q] = dq * dq + f[v[k]];
  }
}

double mean_distance(const std::vector<Pixel>& from, const Eigen::MatrixXd& dt) {
  double acc = 0.0;
  for (const Pixel& p : from) acc += std::sqrt(dt(p.row, p.col));
  return acc / static_cast<double>(from.size());
}

void check_features(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const char* what) {
  if (a.rows() < 2 || b.rows() < 2) throw ValidationError(std::string(what) + " needs at least 2 samples per set");
  if (a.cols() != b.cols() || a.cols() == 0) throw DimensionError(std::string(what) + ": feature dimensions differ");
  if (!a.allFinite() || !b.allFinite()) throw ValidationError(std::string(what) + ": non-finite features");
}

Eigen::MatrixXd covariance(const Eigen::MatrixXd& x, const Eigen::RowVectorXd& mean) {
  const Eigen::MatrixXd c = x.rowwise() - mean;
  return (c.transpose() * c) / static_cast<double>(x.rows() - 1);
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  if (es.info() != Eigen::Success) throw NumericError("eigendecomposition failed");
  return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double silhouette_iou(const Mask& a, const Mask& b) {
  check_pair(a, b);
  const auto fa = a.array() != 0, fb = b.array() != 0;
  const long inter = (fa && fb).count();
  const long uni = (fa || fb).count();
  if (uni == 0) throw ValidationError("S-IOU undefined: both masks are empty");
  return static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<Pixel> boundary_pixels(const Mask& mask) {
  const int h = static_cast<int>(mask.rows()), w = static_cast<int>(mask.cols());
  std::vector<Pixel> out;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!mask(y, x)) continue;
      bool edge = false;
      for (int dy = -1; dy <= 1 && !edge; ++dy)
        for (int dx = -1; dx <= 1 && !edge; ++dx) {
          const int yy = y + dy, xx = x + dx;
          edge = yy < 0 || yy >= h || xx < 0 || xx >= w || !mask(yy, xx);
        }
      if (edge) out.push_back({y, x});
    }
  return out;
}

Eigen::MatrixXd squared_distance_transform(int height, int width, const std::vector<Pixel>& seeds) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  Eigen::MatrixXd f = Eigen::MatrixXd::Constant(height, width, inf);
  for (const Pixel& p : seeds) {
    if (p.row < 0 || p.row >= height || p.col < 0 || p.col >= width) throw ValidationError("seed outside the grid");
    f(p.row, p.col) = 0.0;
  }
  std::vector<double> line, out;
  for (int x = 0; x < width; ++x) {
    line.assign(f.col(x).data(), f.col(x).data() + height);
    distance_1d(line, out);
    for (int y = 0; y < height; ++y) f(y, x) = out[y];
  }
  for (int y = 0; y < height; ++y) {
    line.resize(width);
    for (int x = 0; x < width; ++x) line[x] = f(y, x);
    distance_1d(line, out);
    for (int x = 0; x < width; ++x) f(y, x) = out[x];
  }
  return f;
}

double silhouette_chamfer(const Mask& a, const Mask& b) {
  check_pair(a, b);
  const std::vector<Pixel> ba = boundary_pixels(a), bb = boundary_pixels(b);
  if (ba.empty() || bb.empty()) throw ValidationError("S-CD undefined: empty boundary");
  const int h = static_cast<int>(a.rows()), w = static_cast<int>(a.cols());
  const double ab = mean_distance(ba, squared_distance_transform(h, w, bb));
  const double ba_mean = mean_distance(bb, squared_distance_transform(h, w, ba));
  return 0.5 * (ab + ba_mean) / std::sqrt(static_cast<double>(h) * h + static_cast<double>(w) * w);
}

std::vector<ViewSpec> uniform_views(int count, double elevation, int size, int splat_radius) {
  if (count <= 0) throw ValidationError("view count must be positive");
  std::vector<ViewSpec> views;
  for (int i = 0; i < count; ++i) {
    ViewSpec v;
    v.azimuth = 360.0 * i / count;
    v.elevation = elevation;
    v.height = size;
    v.width = size;
    v.splat_radius = splat_radius;
    views.push_back(v);
  }
  return views;
}

AdherenceResult multiview_adherence(const Points<double>& cloud, const ViewGenerator& generator,
                                    const SegmenterBackend& segmenter, const std::vector<ViewSpec>& views) {
  if (views.empty()) throw ValidationError("no views to evaluate");
  const Points<double> normalized = normalize_cloud(cloud);
  AdherenceResult r;
  for (const ViewSpec& v : views) {
    try {
      const Mask reference = render_silhouette(normalized, v);
      const Image image = generator(v, render_depth(normalized, v));
      const Mask generated = segmenter.segment(image);
      r.views.push_back({v, silhouette_iou(reference, generated), silhouette_chamfer(reference, generated)});
    } catch (const std::exception& e) {
      ++r.exclusions;
      std::ostringstream msg;
      msg << "view " << v.azimuth << ": " << e.what();
      r.errors.push_back(msg.str());
    }
  }
  if (r.views.empty()) throw Error("every view failed; first error: " + r.errors.front());
  for (const ViewScore& s : r.views) {
    r.mean_iou += s.iou;
    r.mean_chamfer += s.chamfer;
  }
  r.mean_iou /= static_cast<double>(r.views.size());
  r.mean_chamfer /= static_cast<double>(r.views.size());
  return r;
}

double clip_score(const ImageFeatureBackend& features, const Image& image, const std::string& text) {
  return 100.0 * cosine_similarity(features.embed_image(image), features.embed_text(text));
}

double frechet_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double eps) {
  check_features(a, b, "Frechet distance");
  const Eigen::RowVectorXd mu_a = a.colwise().mean(), mu_b = b.colwise().mean();
  const Eigen::Index d = a.cols();
  const Eigen::MatrixXd sa = covariance(a, mu_a) + eps * Eigen::MatrixXd::Identity(d, d);
  const Eigen::MatrixXd sb = covariance(b, mu_b) + eps * Eigen::MatrixXd::Identity(d, d);
  const Eigen::MatrixXd root_a = psd_sqrt(sa);
  Eigen::MatrixXd inner = root_a * sb * root_a;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(inner, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericError("eigendecomposition failed");
  const double tr_root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double value = (mu_a - mu_b).squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr_root;
  return std::max(0.0, value);
}

double kernel_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  check_features(a, b, "kernel distance");
  const double d = static_cast<double>(a.cols());
  auto kernel = [d](const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
    return Eigen::MatrixXd(((x * y.transpose()).array() / d + 1.0).cube());
  };
  const double n = static_cast<double>(a.rows()), m = static_cast<double>(b.rows());
  const Eigen::MatrixXd kaa = kernel(a, a), kbb = kernel(b, b);
  const double saa = (kaa.sum() - kaa.trace()) / (n * (n - 1.0));
  const double sbb = (kbb.sum() - kbb.trace()) / (m * (m - 1.0));
  const double sab = kernel(a, b).sum() / (n * m);
  return 100.0 * (saa + sbb - 2.0 * sab);
}

namespace {

nlohmann::json metric(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

nlohmann::json metrics_json(const RunMetrics& r) {
  return {{"s_iou", metric(r.s_iou)}, {"s_cd", metric(r.s_cd)}, {"clip", metric(r.clip)},
          {"fid", metric(r.fid)},     {"kid", metric(r.kid)},   {"aes", metric(r.aes)}};
}

std::string cell(const std::optional<double>& v, int precision) {
  if (!v) return "-";
  std::ostringstream s;
  s << std::fixed << std::setprecision(precision) << *v;
  return s.str();
}

}  // namespace

MetricsReport assemble_report(const std::vector<RunMetrics>& runs) {
  if (runs.empty()) throw ValidationError("no runs to report");
  std::set<std::string> ids;
  for (const RunMetrics& r : runs) {
    if (r.run_id.empty()) throw ValidationError("run without an id");
    if (!ids.insert(r.run_id).second) throw ValidationError("duplicate run id " + r.run_id);
    if (!(r.lambda >= 0.0 && r.lambda <= 1.0)) throw ValidationError("run " + r.run_id + ": lambda outside [0, 1]");
    if (!(r.handoff_k >= 0.0 && r.handoff_k <= 100.0)) throw ValidationError("run " + r.run_id + ": K outside [0, 100]");
    parse_strategy(r.strategy);
  }
  MetricsReport report;
  report.runs = runs;
  report.summary.run_id = "summary";
  auto mean = [&](std::optional<double> RunMetrics::*field) -> std::optional<double> {
    double acc = 0.0;
    int n = 0;
    for (const RunMetrics& r : runs)
      if (r.*field) {
        acc += *(r.*field);
        ++n;
      }
    return n ? std::optional<double>(acc / n) : std::nullopt;
  };
  report.summary.s_iou = mean(&RunMetrics::s_iou);
  report.summary.s_cd = mean(&RunMetrics::s_cd);
  report.summary.clip = mean(&RunMetrics::clip);
  report.summary.fid = mean(&RunMetrics::fid);
  report.summary.kid = mean(&RunMetrics::kid);
  report.summary.aes = mean(&RunMetrics::aes);
  return report;
}

std::string MetricsReport::to_jsonl() const {
  std::string out;
  for (const RunMetrics& r : runs) {
    nlohmann::json j = metrics_json(r);
    j["run_id"] = r.run_id;
    j["lambda"] = r.lambda;
    j["strategy"] = r.strategy;
    j["k"] = r.handoff_k;
    j["seed"] = r.seed;
    out += j.dump() + "\n";
  }
  out += nlohmann::json{{"summary", metrics_json(summary)}}.dump() + "\n";
  return out;
}

std::string MetricsReport::to_table() const {
  std::ostringstream s;
  s << "| run | lambda | strategy | K | S-IOU | S-CD | FID | KID | Aes. | CLIP |\n";
  s << "|---|---|---|---|---|---|---|---|---|---|\n";
  auto row = [&](const RunMetrics& r, bool meta) {
    s << "| " << r.run_id << " | " << (meta ? cell(r.lambda, 2) : "") << " | " << (meta ? r.strategy : "") << " | "
      << (meta ? cell(r.handoff_k, 0) : "") << " | " << cell(r.s_iou, 3) << " | " << cell(r.s_cd, 4) << " | "
      << cell(r.fid, 2) << " | " << cell(r.kid, 2) << " | " << cell(r.aes, 2) << " | " << cell(r.clip, 1) << " |\n";
  };
  for (const RunMetrics& r : runs) row(r, true);
  row(summary, false);
  return s.str();
}

}  // namespace shapewords
