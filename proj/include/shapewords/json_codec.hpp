#pragma once

#include "shapewords/core.hpp"

#include <json.hpp>

namespace shapewords::codec {

using nlohmann::json;

template <typename Scalar>
json matrix_to_json(const Matrix<Scalar>& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(static_cast<double>(m(i, j)));
    rows.push_back(std::move(row));
  }
  return rows;
}

template <typename Scalar>
Matrix<Scalar> matrix_from_json(const json& j) {
  if (!j.is_array() || j.empty() || !j[0].is_array()) throw FormatError("expected a non-empty array of rows");
  Matrix<Scalar> m(j.size(), j[0].size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (j[i].size() != j[0].size()) throw FormatError("ragged matrix rows");
    for (std::size_t k = 0; k < j[i].size(); ++k) m(i, k) = static_cast<Scalar>(j[i][k].get<double>());
  }
  return m;
}

template <typename Scalar>
json vector_to_json(const Vector<Scalar>& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(static_cast<double>(v[i]));
  return a;
}

template <typename Scalar>
Vector<Scalar> vector_from_json(const json& j) {
  if (!j.is_array()) throw FormatError("expected an array");
  Vector<Scalar> v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v[i] = static_cast<Scalar>(j[i].get<double>());
  return v;
}

json image_to_json(const Image& image);
Image image_from_json(const json& j);
json plane_to_json(const Plane& p);
Plane plane_from_json(const json& j);
json mask_to_json(const Mask& m);
Mask mask_from_json(const json& j);

}  // namespace shapewords::codec
