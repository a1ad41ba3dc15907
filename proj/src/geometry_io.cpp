#include "shapewords/geometry.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace shapewords {
namespace {

struct PlyHeader {
  bool binary = false;
  long vertex_count = 0;
  std::vector<std::string> vertex_props;  // in declaration order
  std::vector<std::string> vertex_types;
};

int ply_type_size(const std::string& t) {
  if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
  if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
  if (t == "int" || t == "uint" || t == "float" || t == "int32" || t == "uint32" || t == "float32") return 4;
  if (t == "double" || t == "float64") return 8;
  throw FormatError("PLY: unsupported property type '" + t + "'");
}

double read_ply_value(const char* p, const std::string& t) {
  if (t == "float" || t == "float32") {
    float v;
    std::memcpy(&v, p, 4);
    return v;
  }
  if (t == "double" || t == "float64") {
    double v;
    std::memcpy(&v, p, 8);
    return v;
  }
  throw FormatError("PLY: vertex coordinates must be float or double");
}

Points<double> read_ply(std::ifstream& in, const std::string& path) {
  PlyHeader h;
  std::string line;
  bool in_vertex = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt == "binary_little_endian") h.binary = true;
      else if (fmt != "ascii") throw FormatError(path + ": unsupported PLY format " + fmt);
    } else if (tok == "element") {
      std::string name;
      long count = 0;
      ls >> name >> count;
      in_vertex = name == "vertex";
      if (in_vertex) h.vertex_count = count;
    } else if (tok == "property" && in_vertex) {
      std::string type, name;
      ls >> type >> name;
      if (type == "list") throw FormatError(path + ": list property on vertex element");
      h.vertex_types.push_back(type);
      h.vertex_props.push_back(name);
    } else if (tok == "end_header") {
      break;
    }
  }
  auto find = [&](const char* n) {
    for (std::size_t i = 0; i < h.vertex_props.size(); ++i)
      if (h.vertex_props[i] == n) return static_cast<int>(i);
    throw FormatError(path + ": PLY vertex lacks property " + n);
  };
  const int ix = find("x"), iy = find("y"), iz = find("z");
  Points<double> pts(h.vertex_count, 3);
  if (h.binary) {
    std::vector<int> offsets;
    int stride = 0;
    for (const auto& t : h.vertex_types) {
      offsets.push_back(stride);
      stride += ply_type_size(t);
    }
    std::vector<char> buf(stride);
    for (long v = 0; v < h.vertex_count; ++v) {
      if (!in.read(buf.data(), stride)) throw FormatError(path + ": truncated PLY body");
      pts(v, 0) = read_ply_value(buf.data() + offsets[ix], h.vertex_types[ix]);
      pts(v, 1) = read_ply_value(buf.data() + offsets[iy], h.vertex_types[iy]);
      pts(v, 2) = read_ply_value(buf.data() + offsets[iz], h.vertex_types[iz]);
    }
  } else {
    for (long v = 0; v < h.vertex_count; ++v) {
      if (!std::getline(in, line)) throw FormatError(path + ": truncated PLY body");
      std::istringstream ls(line);
      std::vector<double> vals(h.vertex_props.size());
      for (auto& x : vals)
        if (!(ls >> x)) throw FormatError(path + ": malformed PLY vertex line " + std::to_string(v));
      pts(v, 0) = vals[ix];
      pts(v, 1) = vals[iy];
      pts(v, 2) = vals[iz];
    }
  }
  return pts;
}

}  // namespace

Points<double> read_point_cloud(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open point cloud " + path);
  std::string first;
  std::getline(in, first);
  if (first.rfind("ply", 0) == 0) {
    Points<double> pts = read_ply(in, path);
    if (pts.rows() == 0) throw FormatError(path + ": empty point cloud");
    if (!pts.allFinite()) throw FormatError(path + ": non-finite coordinate");
    return pts;
  }

  std::vector<double> xyz;
  std::string line = first;
  long lineno = 1;
  do {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto pos = line.find_first_not_of(" \t");
    if (pos != std::string::npos && line[pos] != '#') {
      std::istringstream ls(line);
      double x, y, z;
      if (!(ls >> x >> y >> z)) throw FormatError(path + ":" + std::to_string(lineno) + ": expected 'x y z'");
      xyz.insert(xyz.end(), {x, y, z});
    }
    ++lineno;
  } while (std::getline(in, line));

  if (xyz.empty()) throw FormatError(path + ": empty point cloud");
  Points<double> pts = Eigen::Map<Points<double>>(xyz.data(), static_cast<Eigen::Index>(xyz.size() / 3), 3);
  if (!pts.allFinite()) throw FormatError(path + ": non-finite coordinate");
  return pts;
}

void write_point_cloud(const std::string& path, const Points<double>& cloud) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out.precision(17);
  for (Eigen::Index i = 0; i < cloud.rows(); ++i) out << cloud(i, 0) << ' ' << cloud(i, 1) << ' ' << cloud(i, 2) << '\n';
}

}  // namespace shapewords
