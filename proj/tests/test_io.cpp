#include "meshodom/io.hpp"

#include <gtest/gtest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

namespace meshodom {
namespace {

namespace fs = std::filesystem;

class IoTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() /
           (std::string("meshodom_io_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path file(const std::string& name) const { return dir_ / name; }

  static void write_text(const fs::path& p, const std::string& body) {
    std::ofstream out(p, std::ios::binary);
    out << body;
  }

  fs::path dir_;
};

// ---------------------------------------------------------------------------
// Raw scans

TEST_F(IoTest, ScanBinRoundTripKeepsXyzAtFloatPrecision) {
  const std::vector<Vec3> pts = {Vec3(0.1, -2.3, 4.5), Vec3(0, 0, 0),
                                 Vec3(-100.25, 3.5, 0.125)};
  write_scan_bin(file("scan.bin"), pts);
  EXPECT_EQ(fs::file_size(file("scan.bin")), 16u * pts.size());

  const auto got = read_scan_bin(file("scan.bin"));
  ASSERT_EQ(got.size(), pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    EXPECT_EQ(got[i].x(), static_cast<double>(static_cast<float>(pts[i].x())));
    EXPECT_EQ(got[i].y(), static_cast<double>(static_cast<float>(pts[i].y())));
    EXPECT_EQ(got[i].z(), static_cast<double>(static_cast<float>(pts[i].z())));
  }
}

TEST_F(IoTest, ScanBinRejectsTruncatedAndMissingFiles) {
  write_text(file("bad.bin"), std::string(20, '\0'));  // not a 16-byte multiple
  EXPECT_THROW(read_scan_bin(file("bad.bin")), io_error);
  EXPECT_THROW(read_scan_bin(file("missing.bin")), io_error);

  write_text(file("empty.bin"), "");
  EXPECT_TRUE(read_scan_bin(file("empty.bin")).empty());
}

// ---------------------------------------------------------------------------
// PLY meshes

TriangleMesh sample_mesh() {
  // Dyadic coordinates survive the float32 quantization and a 9-significant-
  // digit ASCII round trip bit-exactly, so both encodings must agree.
  TriangleMesh m;
  m.vertices = {Vec3(0.5, -0.25, 1.125), Vec3(2.0, 0.75, -3.5),
                Vec3(-1.0, 4.25, 0.0), Vec3(8.5, -2.625, 7.25)};
  m.triangles = {{0, 1, 2}, {1, 3, 2}};
  m.recompute_normals();
  return m;
}

TEST_F(IoTest, PlyBinaryAndAsciiRoundTripsAgree) {
  const TriangleMesh m = sample_mesh();
  write_mesh_ply(file("bin.ply"), m, /*binary=*/true);
  write_mesh_ply(file("asc.ply"), m, /*binary=*/false);

  const TriangleMesh from_bin = read_mesh_ply(file("bin.ply"));
  const TriangleMesh from_asc = read_mesh_ply(file("asc.ply"));

  ASSERT_EQ(from_bin.vertices.size(), m.vertices.size());
  ASSERT_EQ(from_bin.triangles.size(), m.triangles.size());
  ASSERT_EQ(from_asc.vertices.size(), m.vertices.size());
  ASSERT_EQ(from_asc.triangles.size(), m.triangles.size());
  for (std::size_t i = 0; i < m.vertices.size(); ++i) {
    EXPECT_EQ(from_bin.vertices[i], m.vertices[i]);
    EXPECT_EQ(from_asc.vertices[i], m.vertices[i]);
  }
  for (std::size_t i = 0; i < m.triangles.size(); ++i) {
    EXPECT_EQ(from_bin.triangles[i], m.triangles[i]);
    EXPECT_EQ(from_asc.triangles[i], m.triangles[i]);
  }
  EXPECT_EQ(from_bin.facet_normals.size(), m.triangles.size());
}

TEST_F(IoTest, PlyHeaderToleratesCrlfAndComments) {
  write_text(file("crlf.ply"),
             "ply\r\n"
             "format ascii 1.0\r\n"
             "comment written on a legacy toolchain\r\n"
             "element vertex 3\r\n"
             "property float x\r\n"
             "property float y\r\n"
             "property float z\r\n"
             "element face 1\r\n"
             "property list uchar int vertex_indices\r\n"
             "end_header\r\n"
             "0 0 0\r\n"
             "1 0 0\r\n"
             "0 1 0\r\n"
             "3 0 1 2\r\n");
  const TriangleMesh m = read_mesh_ply(file("crlf.ply"));
  ASSERT_EQ(m.vertices.size(), 3u);
  ASSERT_EQ(m.triangles.size(), 1u);
  EXPECT_EQ(m.vertices[1], Vec3(1, 0, 0));
}

TEST_F(IoTest, PlySkipsExtraVertexPropertiesAndUnknownElements) {
  write_text(file("extra.ply"),
             "ply\n"
             "format ascii 1.0\n"
             "element vertex 3\n"
             "property float x\n"
             "property float y\n"
             "property float z\n"
             "property float nx\n"
             "property float ny\n"
             "property float nz\n"
             "property uchar intensity\n"
             "element edge 2\n"
             "property int vertex1\n"
             "property int vertex2\n"
             "element face 1\n"
             "property list uchar int vertex_indices\n"
             "end_header\n"
             "0 0 0  0 0 1  17\n"
             "1 0 0  0 0 1  17\n"
             "0 1 0  0 0 1  17\n"
             "0 1\n"
             "1 2\n"
             "3 0 1 2\n");
  const TriangleMesh m = read_mesh_ply(file("extra.ply"));
  ASSERT_EQ(m.vertices.size(), 3u);
  ASSERT_EQ(m.triangles.size(), 1u);
  EXPECT_EQ(m.vertices[2], Vec3(0, 1, 0));
  EXPECT_EQ(m.triangles[0], (std::array<int, 3>{0, 1, 2}));
}

TEST_F(IoTest, PlyRejectsBadHeadersAndBadFaces) {
  write_text(file("nomagic.ply"), "solid nope\n");
  EXPECT_THROW(read_mesh_ply(file("nomagic.ply")), io_error);

  write_text(file("bigendian.ply"),
             "ply\nformat binary_big_endian 1.0\nend_header\n");
  EXPECT_THROW(read_mesh_ply(file("bigendian.ply")), io_error);

  write_text(file("quad.ply"),
             "ply\nformat ascii 1.0\n"
             "element vertex 4\n"
             "property float x\nproperty float y\nproperty float z\n"
             "element face 1\n"
             "property list uchar int vertex_indices\n"
             "end_header\n"
             "0 0 0\n1 0 0\n1 1 0\n0 1 0\n"
             "4 0 1 2 3\n");
  EXPECT_THROW(read_mesh_ply(file("quad.ply")), io_error);

  write_text(file("badindex.ply"),
             "ply\nformat ascii 1.0\n"
             "element vertex 3\n"
             "property float x\nproperty float y\nproperty float z\n"
             "element face 1\n"
             "property list uchar int vertex_indices\n"
             "end_header\n"
             "0 0 0\n1 0 0\n0 1 0\n"
             "3 0 1 99\n");
  EXPECT_THROW(read_mesh_ply(file("badindex.ply")), io_error);

  write_text(file("truncated.ply"),
             "ply\nformat ascii 1.0\n"
             "element vertex 2\n"
             "property float x\nproperty float y\nproperty float z\n"
             "end_header\n"
             "0 0 0\n1\n");
  EXPECT_THROW(read_mesh_ply(file("truncated.ply")), io_error);

  EXPECT_THROW(read_mesh_ply(file("missing.ply")), io_error);
}

TEST_F(IoTest, ObjExportIsOneBased) {
  const TriangleMesh m = sample_mesh();
  write_mesh_obj(file("mesh.obj"), m);

  std::ifstream in(file("mesh.obj"));
  std::string line;
  std::size_t vertex_lines = 0, face_lines = 0;
  std::string first_face;
  while (std::getline(in, line)) {
    if (line.rfind("v ", 0) == 0) ++vertex_lines;
    if (line.rfind("f ", 0) == 0) {
      if (face_lines == 0) first_face = line;
      ++face_lines;
    }
  }
  EXPECT_EQ(vertex_lines, m.vertices.size());
  EXPECT_EQ(face_lines, m.triangles.size());
  EXPECT_EQ(first_face, "f 1 2 3");
}

// ---------------------------------------------------------------------------
// Trajectories

TEST_F(IoTest, TrajectoryIdentityLineIsCanonical) {
  write_trajectory(file("traj.txt"), {PoseSE3::identity()});
  std::ifstream in(file("traj.txt"));
  std::string line;
  ASSERT_TRUE(std::getline(in, line));
  EXPECT_EQ(line, "1 0 0 0 0 1 0 0 0 0 1 0");
}

TEST_F(IoTest, TrajectoryRoundTripPreservesPoses) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<PoseSE3> poses;
  for (int i = 0; i < 25; ++i) {
    Twist6 xi;
    for (int k = 0; k < 6; ++k) xi(k) = gauss(rng) * (k < 3 ? 5.0 : 0.8);
    poses.push_back(exp_se3(xi));
  }

  write_trajectory(file("traj.txt"), poses);
  const auto got = read_trajectory(file("traj.txt"));
  ASSERT_EQ(got.size(), poses.size());
  for (std::size_t i = 0; i < poses.size(); ++i) {
    EXPECT_LT((got[i].translation - poses[i].translation).norm(), 1e-9);
    EXPECT_LT((got[i].rotation - poses[i].rotation).norm(), 1e-9);
  }
}

TEST_F(IoTest, TrajectoryRejectsMalformedLines) {
  write_text(file("short.txt"), "1 0 0 0 0 1 0 0 0 0 1\n");
  EXPECT_THROW(read_trajectory(file("short.txt")), io_error);

  write_text(file("long.txt"), "1 0 0 0 0 1 0 0 0 0 1 0 9\n");
  EXPECT_THROW(read_trajectory(file("long.txt")), io_error);

  EXPECT_THROW(read_trajectory(file("missing.txt")), io_error);

  write_text(file("blank.txt"), "\n1 0 0 0 0 1 0 0 0 0 1 0\n\n");
  EXPECT_EQ(read_trajectory(file("blank.txt")).size(), 1u);
}

// ---------------------------------------------------------------------------
// Config files

TEST_F(IoTest, ConfigParsesTrimsAndIgnoresComments) {
  write_text(file("run.cfg"),
             "# full-line comment\n"
             "\n"
             "resolution = 0.1\n"
             "  threads=4   # trailing comment\n"
             "name = corridor run\n"
             "expr = a=b\n");
  const auto kv = read_config_file(file("run.cfg"));
  ASSERT_EQ(kv.size(), 4u);
  EXPECT_EQ(kv.at("resolution"), "0.1");
  EXPECT_EQ(kv.at("threads"), "4");
  EXPECT_EQ(kv.at("name"), "corridor run");
  EXPECT_EQ(kv.at("expr"), "a=b");
}

TEST_F(IoTest, ConfigRejectsMalformedLines) {
  write_text(file("noeq.cfg"), "resolution 0.1\n");
  EXPECT_THROW(read_config_file(file("noeq.cfg")), io_error);

  write_text(file("nokey.cfg"), " = 5\n");
  EXPECT_THROW(read_config_file(file("nokey.cfg")), io_error);

  EXPECT_THROW(read_config_file(file("missing.cfg")), io_error);
}

}  // namespace
}  // namespace meshodom
