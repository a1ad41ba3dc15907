#include "shapewords/toy_shapes.hpp"

#include "shapewords/geometry.hpp"

#include <cmath>
#include <filesystem>
#include <random>

namespace shapewords::toy {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Part {
  enum Kind { Box, Cylinder, Cone, Torus } kind;
  // Box: lo/hi corners. Cylinder and cone: center (x, z) in lo, y range in
  // lo[1]..hi[1], radius hi[0] (cone tip radius hi[2]). Torus: center lo,
  // radii hi[0] (major) and hi[1] (minor), axis hi[2] (0 = y, 1 = z).
  Eigen::Vector3d lo, hi;
  double weight;
};

Eigen::Vector3d sample(const Part& p, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  switch (p.kind) {
    case Part::Box:
      return {p.lo.x() + u(rng) * (p.hi.x() - p.lo.x()), p.lo.y() + u(rng) * (p.hi.y() - p.lo.y()),
              p.lo.z() + u(rng) * (p.hi.z() - p.lo.z())};
    case Part::Cylinder:
    case Part::Cone: {
      const double h = u(rng), a = 2 * kPi * u(rng);
      const double r = p.kind == Part::Cylinder ? p.hi.x() : p.hi.x() + h * (p.hi.z() - p.hi.x());
      return {p.lo.x() + r * std::cos(a), p.lo.y() + h * (p.hi.y() - p.lo.y()), p.lo.z() + r * std::sin(a)};
    }
    case Part::Torus: {
      const double a = 2 * kPi * u(rng), b = 2 * kPi * u(rng);
      const double rr = p.hi.x() + p.hi.y() * std::cos(b);
      const double off = p.hi.y() * std::sin(b);
      if (p.hi.z() == 0.0) return p.lo + Eigen::Vector3d(rr * std::cos(a), off, rr * std::sin(a));
      return p.lo + Eigen::Vector3d(rr * std::cos(a), rr * std::sin(a), off);
    }
  }
  return Eigen::Vector3d::Zero();
}

std::vector<Part> parts_for(const std::string& category, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> j(0.9, 1.1);
  const double s = j(rng), h = j(rng);
  using V = Eigen::Vector3d;
  std::vector<Part> parts;
  auto legs = [&](double half, double top, double bottom, double thick) {
    for (double x : {-half, half - thick})
      for (double z : {-half, half - thick})
        parts.push_back({Part::Box, V(x, bottom, z), V(x + thick, top, z + thick), 0.5});
  };
  if (category == "chair") {
    parts.push_back({Part::Box, V(-0.5 * s, 0, -0.5 * s), V(0.5 * s, 0.1, 0.5 * s), 3});
    parts.push_back({Part::Box, V(-0.5 * s, 0.1, -0.5 * s), V(0.5 * s, 1.0 * h, -0.4 * s), 3});
    legs(0.5 * s, 0.0, -0.8 * h, 0.1);
  } else if (category == "table") {
    parts.push_back({Part::Box, V(-0.9 * s, 0, -0.6 * s), V(0.9 * s, 0.08, 0.6 * s), 6});
    for (double x : {-0.85 * s, 0.75 * s})
      for (double z : {-0.55 * s, 0.45 * s}) parts.push_back({Part::Box, V(x, -0.9 * h, z), V(x + 0.1, 0, z + 0.1), 0.6});
  } else if (category == "lamp") {
    parts.push_back({Part::Cylinder, V(0, -1.0, 0), V(0.45 * s, -0.95, 0), 1.5});
    parts.push_back({Part::Cylinder, V(0, -0.95, 0), V(0.04, 0.4 * h, 0), 1});
    parts.push_back({Part::Cone, V(0, 0.3 * h, 0), V(0.5 * s, 0.9 * h, 0.2 * s), 3});
  } else if (category == "mug") {
    parts.push_back({Part::Cylinder, V(0, -0.6 * h, 0), V(0.45 * s, 0.6 * h, 0), 5});
    parts.push_back({Part::Cylinder, V(0, -0.6 * h, 0), V(0.45 * s, -0.55 * h, 0), 1});
    parts.push_back({Part::Torus, V(0.45 * s, 0, 0), V(0.3, 0.05, 1), 1.5});
  } else if (category == "ring") {
    parts.push_back({Part::Torus, V(0, 0, 0), V(0.8, 0.12 * s, 0), 1});
  } else {
    throw ValidationError("unknown procedural category '" + category + "'");
  }
  return parts;
}

}  // namespace

std::vector<std::string> procedural_categories() { return {"chair", "lamp", "mug", "ring", "table"}; }

Points<double> procedural_shape(const std::string& category, int points, std::uint64_t seed) {
  if (points <= 0) throw ValidationError("point count must be positive");
  std::mt19937_64 rng(seed);
  const std::vector<Part> parts = parts_for(category, rng);
  std::vector<double> w;
  for (const Part& p : parts) w.push_back(p.weight);
  std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
  Points<double> out(points, 3);
  for (int i = 0; i < points; ++i) out.row(i) = sample(parts[pick(rng)], rng).transpose();
  return out;
}

void write_procedural_shapes(const std::string& root, int per_category, int points, std::uint64_t seed) {
  if (per_category <= 0) throw ValidationError("per-category count must be positive");
  namespace fs = std::filesystem;
  const auto cats = procedural_categories();
  for (std::size_t c = 0; c < cats.size(); ++c) {
    fs::create_directories(fs::path(root) / cats[c]);
    for (int i = 0; i < per_category; ++i) {
      const std::string id = cats[c] + "_" + std::to_string(i);
      write_point_cloud((fs::path(root) / cats[c] / (id + ".xyz")).string(),
                        procedural_shape(cats[c], points, seed * 1000003ULL + c * 101 + static_cast<std::uint64_t>(i)));
    }
  }
}

}  // namespace shapewords::toy
