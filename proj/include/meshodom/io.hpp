#pragma once

// File formats: raw LiDAR scans (.bin, float32 x/y/z/intensity records),
// meshes (PLY binary-little-endian and ASCII, OBJ export), trajectories
// (12-value row-major 3x4 lines), and flat key=value config files. Parsers
// fail loudly with the offending file, and where it helps, the byte or line
// position.

#include "meshodom/geometry.hpp"
#include "meshodom/meshing.hpp"

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace meshodom {

class io_error : public std::runtime_error {
 public:
  explicit io_error(const std::string& what) : std::runtime_error(what) {}
};

// ---------------------------------------------------------------------------
// Point cloud scans

// Reads a raw scan of float32 (x, y, z, intensity) records; intensity is
// dropped. The file size must be a multiple of 16 bytes.
inline std::vector<Vec3> read_scan_bin(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw io_error("cannot open scan: " + path.string());
  const std::streamoff size = in.tellg();
  if (size % 16 != 0)
    throw io_error("malformed scan " + path.string() + ": size " +
                   std::to_string(size) + " is not a multiple of 16");
  in.seekg(0);
  const std::size_t count = static_cast<std::size_t>(size) / 16;
  std::vector<Vec3> points;
  points.reserve(count);
  std::vector<float> buf(static_cast<std::size_t>(size) / 4);
  in.read(reinterpret_cast<char*>(buf.data()), size);
  if (!in) throw io_error("short read on scan: " + path.string());
  for (std::size_t i = 0; i < count; ++i)
    points.emplace_back(buf[4 * i], buf[4 * i + 1], buf[4 * i + 2]);
  return points;
}

inline void write_scan_bin(const std::filesystem::path& path,
                           const std::vector<Vec3>& points) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write scan: " + path.string());
  for (const auto& p : points) {
    const float rec[4] = {static_cast<float>(p.x()), static_cast<float>(p.y()),
                          static_cast<float>(p.z()), 0.0f};
    out.write(reinterpret_cast<const char*>(rec), 16);
  }
  if (!out) throw io_error("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// PLY meshes

namespace detail {

struct PlyProperty {
  std::string type;  // float/double/int/uchar/... ("list" handled separately)
  std::string name;
  bool is_list = false;
  std::string count_type;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> properties;
};

inline std::size_t ply_scalar_size(const std::string& t) {
  if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
  if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
  if (t == "int" || t == "uint" || t == "int32" || t == "uint32" ||
      t == "float" || t == "float32")
    return 4;
  if (t == "double" || t == "float64") return 8;
  throw io_error("ply: unknown property type '" + t + "'");
}

inline double ply_read_scalar(std::istream& in, const std::string& t,
                              bool ascii) {
  if (ascii) {
    double v;
    if (!(in >> v)) throw io_error("ply: truncated ascii body");
    return v;
  }
  char buf[8];
  const std::size_t n = ply_scalar_size(t);
  in.read(buf, static_cast<std::streamsize>(n));
  if (!in) throw io_error("ply: truncated binary body");
  if (t == "float" || t == "float32") {
    float f;
    std::memcpy(&f, buf, 4);
    return f;
  }
  if (t == "double" || t == "float64") {
    double d;
    std::memcpy(&d, buf, 8);
    return d;
  }
  if (t == "uchar" || t == "uint8") return buf[0] & 0xFF;
  if (t == "char" || t == "int8") return static_cast<signed char>(buf[0]);
  if (t == "short" || t == "int16") {
    std::int16_t v;
    std::memcpy(&v, buf, 2);
    return v;
  }
  if (t == "ushort" || t == "uint16") {
    std::uint16_t v;
    std::memcpy(&v, buf, 2);
    return v;
  }
  if (t == "int" || t == "int32") {
    std::int32_t v;
    std::memcpy(&v, buf, 4);
    return v;
  }
  std::uint32_t v;
  std::memcpy(&v, buf, 4);
  return v;
}

}  // namespace detail

// Reads vertices and (optionally) faces from an ASCII or binary-LE PLY.
// Extra vertex properties are skipped; faces must be triangles.
inline TriangleMesh read_mesh_ply(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open mesh: " + path.string());

  std::string line;
  if (!std::getline(in, line) || line.substr(0, 3) != "ply")
    throw io_error("ply " + path.string() + ": missing magic");

  bool ascii = false;
  bool format_seen = false;
  std::vector<detail::PlyElement> elements;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "comment" || tok.empty()) continue;
    if (tok == "format") {
      std::string fmt, ver;
      ls >> fmt >> ver;
      if (fmt == "ascii")
        ascii = true;
      else if (fmt == "binary_little_endian")
        ascii = false;
      else
        throw io_error("ply " + path.string() + ": unsupported format " + fmt);
      format_seen = true;
    } else if (tok == "element") {
      detail::PlyElement el;
      ls >> el.name >> el.count;
      elements.push_back(el);
    } else if (tok == "property") {
      if (elements.empty())
        throw io_error("ply " + path.string() + ": property before element");
      detail::PlyProperty prop;
      std::string t;
      ls >> t;
      if (t == "list") {
        prop.is_list = true;
        ls >> prop.count_type >> prop.type >> prop.name;
      } else {
        prop.type = t;
        ls >> prop.name;
      }
      elements.back().properties.push_back(prop);
    } else if (tok == "end_header") {
      break;
    } else {
      throw io_error("ply " + path.string() + ": unexpected header token '" +
                     tok + "'");
    }
  }
  if (!format_seen)
    throw io_error("ply " + path.string() + ": missing format line");

  TriangleMesh mesh;
  for (const auto& el : elements) {
    if (el.name == "vertex") {
      int ix = -1, iy = -1, iz = -1;
      for (std::size_t p = 0; p < el.properties.size(); ++p) {
        if (el.properties[p].name == "x") ix = static_cast<int>(p);
        if (el.properties[p].name == "y") iy = static_cast<int>(p);
        if (el.properties[p].name == "z") iz = static_cast<int>(p);
      }
      if (ix < 0 || iy < 0 || iz < 0)
        throw io_error("ply " + path.string() + ": vertex lacks x/y/z");
      mesh.vertices.reserve(el.count);
      std::vector<double> vals(el.properties.size());
      for (std::size_t v = 0; v < el.count; ++v) {
        for (std::size_t p = 0; p < el.properties.size(); ++p) {
          if (el.properties[p].is_list)
            throw io_error("ply " + path.string() +
                           ": list property on vertex unsupported");
          vals[p] = detail::ply_read_scalar(in, el.properties[p].type, ascii);
        }
        mesh.vertices.emplace_back(vals[static_cast<std::size_t>(ix)],
                                   vals[static_cast<std::size_t>(iy)],
                                   vals[static_cast<std::size_t>(iz)]);
      }
    } else if (el.name == "face") {
      mesh.triangles.reserve(el.count);
      for (std::size_t f = 0; f < el.count; ++f) {
        for (const auto& prop : el.properties) {
          if (prop.is_list) {
            const auto n = static_cast<std::size_t>(
                detail::ply_read_scalar(in, prop.count_type, ascii));
            if (n != 3)
              throw io_error("ply " + path.string() + ": face " +
                             std::to_string(f) + " has " + std::to_string(n) +
                             " vertices; only triangles are supported");
            std::array<int, 3> tri{};
            for (int k = 0; k < 3; ++k) {
              const auto idx = static_cast<std::ptrdiff_t>(
                  detail::ply_read_scalar(in, prop.type, ascii));
              if (idx < 0 ||
                  idx >= static_cast<std::ptrdiff_t>(mesh.vertices.size()))
                throw io_error("ply " + path.string() + ": face " +
                               std::to_string(f) + " references vertex " +
                               std::to_string(idx) + " of " +
                               std::to_string(mesh.vertices.size()));
              tri[static_cast<std::size_t>(k)] = static_cast<int>(idx);
            }
            mesh.triangles.push_back(tri);
          } else {
            detail::ply_read_scalar(in, prop.type, ascii);
          }
        }
      }
    } else {
      // Unknown element: consume it.
      for (std::size_t r = 0; r < el.count; ++r) {
        for (const auto& prop : el.properties) {
          if (prop.is_list) {
            const auto n = static_cast<std::size_t>(
                detail::ply_read_scalar(in, prop.count_type, ascii));
            for (std::size_t k = 0; k < n; ++k)
              detail::ply_read_scalar(in, prop.type, ascii);
          } else {
            detail::ply_read_scalar(in, prop.type, ascii);
          }
        }
      }
    }
  }
  mesh.recompute_normals();
  return mesh;
}

inline void write_mesh_ply(const std::filesystem::path& path,
                           const TriangleMesh& mesh, bool binary = true) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write mesh: " + path.string());
  out << "ply\n";
  out << (binary ? "format binary_little_endian 1.0\n" : "format ascii 1.0\n");
  out << "element vertex " << mesh.vertices.size() << "\n";
  out << "property float x\nproperty float y\nproperty float z\n";
  out << "element face " << mesh.triangles.size() << "\n";
  out << "property list uchar int vertex_indices\n";
  out << "end_header\n";
  if (binary) {
    for (const auto& v : mesh.vertices) {
      const float p[3] = {static_cast<float>(v.x()), static_cast<float>(v.y()),
                          static_cast<float>(v.z())};
      out.write(reinterpret_cast<const char*>(p), 12);
    }
    for (const auto& t : mesh.triangles) {
      const std::uint8_t n = 3;
      out.write(reinterpret_cast<const char*>(&n), 1);
      const std::int32_t idx[3] = {t[0], t[1], t[2]};
      out.write(reinterpret_cast<const char*>(idx), 12);
    }
  } else {
    out << std::setprecision(9);
    for (const auto& v : mesh.vertices)
      out << static_cast<float>(v.x()) << ' ' << static_cast<float>(v.y())
          << ' ' << static_cast<float>(v.z()) << '\n';
    for (const auto& t : mesh.triangles)
      out << "3 " << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
  }
  if (!out) throw io_error("write failed: " + path.string());
}

inline void write_mesh_obj(const std::filesystem::path& path,
                           const TriangleMesh& mesh) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write mesh: " + path.string());
  out << std::setprecision(9);
  for (const auto& v : mesh.vertices)
    out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto& t : mesh.triangles)
    out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
  if (!out) throw io_error("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Trajectories

// One pose per line: the row-major upper 3x4 of the 4x4 matrix.
inline void write_trajectory(const std::filesystem::path& path,
                             const std::vector<PoseSE3>& poses) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write trajectory: " + path.string());
  out << std::setprecision(12);
  for (const auto& p : poses) {
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 4; ++c) {
        const double v = c < 3 ? p.rotation(r, c) : p.translation(r);
        out << v;
        if (!(r == 2 && c == 3)) out << ' ';
      }
    }
    out << '\n';
  }
  if (!out) throw io_error("write failed: " + path.string());
}

inline std::vector<PoseSE3> read_trajectory(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open trajectory: " + path.string());
  std::vector<PoseSE3> poses;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    double v[12];
    for (int i = 0; i < 12; ++i) {
      if (!(ls >> v[i]))
        throw io_error("trajectory " + path.string() + ": line " +
                       std::to_string(lineno) + " has fewer than 12 values");
    }
    double extra;
    if (ls >> extra)
      throw io_error("trajectory " + path.string() + ": line " +
                     std::to_string(lineno) + " has more than 12 values");
    PoseSE3 p;
    p.rotation << v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10];
    p.translation = Vec3(v[3], v[7], v[11]);
    poses.push_back(p);
  }
  return poses;
}

// ---------------------------------------------------------------------------
// Config files

// Flat "key = value" lines; '#' starts a comment; blank lines ignored.
inline std::map<std::string, std::string> read_config_file(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open config: " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string trimmed = trim(line);
    if (trimmed.empty()) continue;
    const auto eq = trimmed.find('=');
    if (eq == std::string::npos)
      throw io_error("config " + path.string() + ": line " +
                     std::to_string(lineno) + " is not key=value");
    const std::string key = trim(trimmed.substr(0, eq));
    const std::string value = trim(trimmed.substr(eq + 1));
    if (key.empty())
      throw io_error("config " + path.string() + ": line " +
                     std::to_string(lineno) + " has an empty key");
    kv[key] = value;
  }
  return kv;
}

}  // namespace meshodom
