#pragma once

// Procedural point clouds for desk-scale runs and tests.

#include "shapewords/core.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace shapewords::toy {

/// Categories accepted by `procedural_shape`.
std::vector<std::string> procedural_categories();

/// `points` samples of a simple part-based solid ("chair", "table", "lamp",
/// "mug", "ring"); `seed` jitters part proportions and the sampling.
Points<double> procedural_shape(const std::string& category, int points, std::uint64_t seed);

/// Writes `<root>/<category>/<category>_<i>.xyz` for every category.
void write_procedural_shapes(const std::string& root, int per_category, int points, std::uint64_t seed);

}  // namespace shapewords::toy
