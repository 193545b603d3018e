#include "meshodom/meshing.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <set>

namespace meshodom {
namespace {

// Fills a store with an analytic SDF over a key box (inclusive bounds).
template <class Sdf>
void fill_sdf(VoxelHashMap& store, VoxelKey lo, VoxelKey hi, Sdf&& sdf,
              double weight = 1.0) {
  store.set_phase(StorePhase::integrate);
  for (std::int32_t z = lo.z; z <= hi.z; ++z)
    for (std::int32_t y = lo.y; y <= hi.y; ++y)
      for (std::int32_t x = lo.x; x <= hi.x; ++x) {
        const VoxelKey k{x, y, z};
        const double d = sdf(store.center_of(k));
        store.get_or_insert_update(k, [&](VoxelData& v, bool) {
          v.sdf = d;
          v.weight = weight;
          v.last_frame = 1;
        });
      }
  store.set_phase(StorePhase::idle);
}

TriangleMesh extract_all(VoxelHashMap& store,
                         const std::vector<BlockKey>& blocks,
                         std::int32_t z_min, std::int32_t z_max,
                         const MeshingParams& params, MeshMap* map = nullptr) {
  MeshMap local;
  MeshMap& m = map ? *map : local;
  store.set_phase(StorePhase::extract);
  for (const auto& bk : blocks)
    m.replace_block(extract_block(store, bk, z_min, z_max, params));
  store.set_phase(StorePhase::idle);
  TriangleMesh mesh = m.to_mesh();
  mesh.recompute_normals();
  return mesh;
}

// --------------------------------------------------------------------------
// Block bookkeeping

TEST(Blocks, FloorDivAndBlockOf) {
  EXPECT_EQ(floor_div(19, 20), 0);
  EXPECT_EQ(floor_div(20, 20), 1);
  EXPECT_EQ(floor_div(-1, 20), -1);
  EXPECT_EQ(floor_div(-20, 20), -1);
  EXPECT_EQ(floor_div(-21, 20), -2);

  MeshingParams p;  // 20 x 20 voxel footprint
  EXPECT_EQ(block_of(VoxelKey{-1, -1, 5}, p), (BlockKey{-1, -1}));
  EXPECT_EQ(block_of(VoxelKey{19, 20, 0}, p), (BlockKey{0, 1}));
  EXPECT_EQ(block_of(VoxelKey{-21, 39, 2}, p), (BlockKey{-2, 1}));
}

TEST(Blocks, RegisterUpdateTracksHeightAndCount) {
  BlockDirectory dir(256, ProbeStrategy::robin_hood);
  const BlockKey bk{3, -2};
  register_update(dir, bk, 5, true);
  register_update(dir, bk, -3, true);
  register_update(dir, bk, 2, false);  // revisit: no count change

  const auto e = dir.find(bk);
  ASSERT_TRUE(e.has_value());
  EXPECT_EQ(e->value.voxel_count, 2);
  EXPECT_EQ(e->value.z_min, -3);
  EXPECT_EQ(e->value.z_max, 5);
  EXPECT_TRUE(e->value.dirty);
  EXPECT_EQ(block_height(e->value), 8);

  VoxelBlock empty;
  EXPECT_FALSE(block_height(empty).has_value());
}

// --------------------------------------------------------------------------
// Marching-cubes tables: structural invariants.

TEST(McTables, TriangleEdgesAreFlaggedInEdgeMask) {
  for (int ci = 0; ci < 256; ++ci) {
    const std::uint16_t mask = kMcEdgeTable[ci];
    for (int t = 0; kMcTriTable[ci][t] != -1; t += 3) {
      for (int k = 0; k < 3; ++k) {
        const int e = kMcTriTable[ci][t + k];
        ASSERT_GE(e, 0);
        ASSERT_LT(e, 12);
        EXPECT_TRUE(mask & (1u << e)) << "case " << ci;
      }
    }
  }
  EXPECT_EQ(kMcEdgeTable[0], 0u);
  EXPECT_EQ(kMcEdgeTable[255], 0u);
}

TEST(McTables, ComplementSymmetry) {
  for (int ci = 0; ci < 256; ++ci)
    EXPECT_EQ(kMcEdgeTable[ci], kMcEdgeTable[255 - ci]) << ci;
}

TEST(McTables, EdgeAnchorsMatchEdgeCorners) {
  for (int e = 0; e < 12; ++e) {
    const int c0 = kMcEdgeCorners[e][0];
    const int c1 = kMcEdgeCorners[e][1];
    // The anchor offset is the base corner; the axis points at the other.
    for (int a = 0; a < 3; ++a)
      EXPECT_EQ(kMcEdgeAnchor[e][a], kMcCornerShift[c0][a]) << e;
    int diff_axis = -1;
    for (int a = 0; a < 3; ++a)
      if (kMcCornerShift[c0][a] != kMcCornerShift[c1][a]) diff_axis = a;
    EXPECT_EQ(kMcEdgeAnchor[e][3], diff_axis) << e;
  }
}

// --------------------------------------------------------------------------
// Plane extraction: geometry, counts, seams, and orientation.

class PlaneFixture : public ::testing::Test {
 protected:
  void fill_plane(double plane_z) {
    fill_sdf(store_, VoxelKey{0, 0, -5}, VoxelKey{39, 39, 4},
             [&](const Vec3& c) { return c.z() - plane_z; });
  }

  VoxelHashMap store_{std::size_t{1} << 18, ProbeStrategy::linear, 0.1};
  MeshingParams params_;
  const std::vector<BlockKey> blocks_{{0, 0}, {0, 1}, {1, 0}, {1, 1}};
};

TEST_F(PlaneFixture, VerticesLandOnThePlane) {
  fill_plane(0.03);
  const TriangleMesh mesh = extract_all(store_, blocks_, -5, 4, params_);
  ASSERT_EQ(mesh.vertices.size(), 1600u);   // 40 x 40 vertical-edge lattice
  ASSERT_EQ(mesh.triangles.size(), 3042u);  // 39 x 39 cells, 2 each
  for (const auto& v : mesh.vertices) EXPECT_NEAR(v.z(), 0.03, 1e-12);
  EXPECT_NEAR(mesh.total_area(), 15.21, 1e-9);  // (3.9 m)^2
}

// Facet normals must point toward positive SDF (the free side). This is the
// orientation contract the odometry's normal-compatibility gate relies on.
TEST_F(PlaneFixture, WindingPointsTowardPositiveSdf) {
  fill_plane(0.03);
  const TriangleMesh mesh = extract_all(store_, blocks_, -5, 4, params_);
  ASSERT_GT(mesh.facet_normals.size(), 0u);
  for (const auto& n : mesh.facet_normals) EXPECT_GT(n.z(), 0.999);
}

TEST_F(PlaneFixture, SeamVerticesAreShared) {
  fill_plane(0.03);
  store_.set_phase(StorePhase::extract);
  std::size_t fragment_vertex_sum = 0;
  MeshMap map;
  for (const auto& bk : blocks_) {
    const MeshFragment frag = extract_block(store_, bk, -5, 4, params_);
    fragment_vertex_sum += frag.vertices.size();
    map.replace_block(frag);
  }
  store_.set_phase(StorePhase::idle);
  // 81 seam vertices appear in two fragments but once in the pool.
  EXPECT_EQ(fragment_vertex_sum, 1681u);
  EXPECT_EQ(map.vertex_pool_size(), 1600u);
  // Interior seams are manifold: every interior edge bounds two facets.
  const auto audit = audit_mesh(map.to_mesh());
  EXPECT_EQ(audit.nonmanifold_edges, 0u);
}

TEST_F(PlaneFixture, WeightGateOpensHoles) {
  fill_plane(0.03);
  // Starve one interior corner column of weight.
  store_.set_phase(StorePhase::integrate);
  for (std::int32_t z : {-1, 0}) {
    store_.get_or_insert_update(VoxelKey{10, 10, z},
                                [](VoxelData& v, bool) { v.weight = 0.3; });
  }
  store_.set_phase(StorePhase::idle);
  const TriangleMesh mesh = extract_all(store_, blocks_, -5, 4, params_);
  // The four cells sharing the corner column lose both triangles.
  EXPECT_EQ(mesh.triangles.size(), 3042u - 8u);
}

TEST_F(PlaneFixture, RepolygonisationMovesVerticesInPlace) {
  fill_plane(0.03);
  MeshMap map;
  extract_all(store_, blocks_, -5, 4, params_, &map);
  const std::size_t pool = map.vertex_pool_size();
  const std::size_t tris = map.live_triangles();

  // The surface drifts upward as more evidence arrives. The drift stays
  // within the same lattice interval (crossings remain on the edges between
  // the voxel centres at z = -0.05 and z = +0.05), so every vertex keeps its
  // edge key and only its position moves.
  fill_sdf(store_, VoxelKey{0, 0, -5}, VoxelKey{39, 39, 4},
           [&](const Vec3& c) { return c.z() - 0.041; });
  TriangleMesh mesh = extract_all(store_, blocks_, -5, 4, params_, &map);

  EXPECT_EQ(map.vertex_pool_size(), pool);  // same edges, same vertex slots
  EXPECT_EQ(map.live_triangles(), tris);
  for (const auto& v : mesh.vertices) EXPECT_NEAR(v.z(), 0.041, 1e-12);
}

TEST_F(PlaneFixture, ReplaceBlockReportsDelta) {
  fill_plane(0.03);
  store_.set_phase(StorePhase::extract);
  MeshMap map;
  const auto frag = extract_block(store_, BlockKey{0, 0}, -5, 4, params_);
  const auto first = map.replace_block(frag);
  EXPECT_TRUE(first.removed.empty());
  EXPECT_EQ(first.added.size(), 800u);  // 20 x 20 cells x 2

  const auto second = map.replace_block(frag);
  store_.set_phase(StorePhase::idle);
  EXPECT_EQ(second.removed.size(), 800u);
  EXPECT_EQ(second.added.size(), 800u);
  EXPECT_EQ(map.live_triangles(), 800u);
  // Facet slots are recycled, not leaked.
  int max_id = 0;
  for (const int id : second.added) max_id = std::max(max_id, id);
  EXPECT_LT(max_id, 1600);
}

// --------------------------------------------------------------------------
// Sphere extraction: watertightness and metric accuracy.

TEST(SphereExtraction, WatertightAndOnTheSurface) {
  VoxelHashMap store(std::size_t{1} << 18, ProbeStrategy::linear, 0.1);
  const Vec3 c0(2.05, 2.05, 2.05);
  const double radius = 1.0;
  fill_sdf(store, VoxelKey{5, 5, 5}, VoxelKey{36, 36, 36},
           [&](const Vec3& c) { return (c - c0).norm() - radius; });

  MeshingParams params;
  std::vector<BlockKey> blocks;
  for (int bx = 0; bx <= 1; ++bx)
    for (int by = 0; by <= 1; ++by) blocks.push_back(BlockKey{bx, by});
  VoxelHashMap& s = store;
  const TriangleMesh mesh = extract_all(s, blocks, 5, 36, params);

  ASSERT_GT(mesh.triangles.size(), 1000u);
  const auto audit = audit_mesh(mesh);
  EXPECT_EQ(audit.boundary_edges, 0u);
  EXPECT_EQ(audit.nonmanifold_edges, 0u);
  EXPECT_TRUE(audit.watertight());

  for (const auto& v : mesh.vertices)
    EXPECT_NEAR((v - c0).norm(), radius, 5e-3);
  EXPECT_NEAR(mesh.total_area(), 4 * M_PI * radius * radius,
              0.03 * 4 * M_PI);

  // Outward orientation: every facet faces away from the centre. Tight
  // radial alignment is only meaningful where the facet normal is well
  // conditioned; crossings clamped off exact lattice corners leave microscopic
  // caps and thin needles whose normals are legitimate but not radial.
  for (std::size_t i = 0; i < mesh.triangles.size(); ++i) {
    const auto& t = mesh.triangles[i];
    const Vec3& a = mesh.vertices[std::size_t(t[0])];
    const Vec3& b = mesh.vertices[std::size_t(t[1])];
    const Vec3& c = mesh.vertices[std::size_t(t[2])];
    const Vec3 centroid = (a + b + c) / 3.0;
    const double radial = mesh.facet_normals[i].dot((centroid - c0).normalized());
    EXPECT_GT(radial, 0.0);
    const double area = 0.5 * (b - a).cross(c - a).norm();
    const double longest = std::max({(b - a).norm(), (c - b).norm(), (a - c).norm()});
    if (area > 1e-8 && area > 1e-3 * longest * longest) EXPECT_GT(radial, 0.7);
  }
}

// --------------------------------------------------------------------------
// Extraction planning

TEST(Planning, AlphaThresholdGatesDirtyBlocks) {
  BlockDirectory dir(256, ProbeStrategy::robin_hood);
  for (std::int32_t i = 0; i < 30; ++i)
    register_update(dir, BlockKey{i, 0}, 0, true);
  // Clear all dirty flags.
  plan_extraction(dir, {}, 0.0, 1);

  register_update(dir, BlockKey{0, 0}, 0, false);
  const auto below = plan_extraction(dir, {}, 0.05, 2);
  EXPECT_FALSE(below.threshold_met);  // 1/30 < 5 %
  EXPECT_TRUE(below.blocks.empty());

  register_update(dir, BlockKey{1, 0}, 0, false);
  const auto met = plan_extraction(dir, {}, 0.05, 3);
  EXPECT_TRUE(met.threshold_met);  // 2/30 >= 5 %
  EXPECT_EQ(met.blocks.size(), 2u);
  EXPECT_EQ(met.dirty_blocks, 2u);

  // Flags were cleared by the plan.
  const auto after = plan_extraction(dir, {}, 0.05, 4);
  EXPECT_EQ(after.dirty_blocks, 0u);
}

TEST(Planning, ForcedBlocksBypassTheThreshold) {
  BlockDirectory dir(256, ProbeStrategy::robin_hood);
  for (std::int32_t i = 0; i < 30; ++i)
    register_update(dir, BlockKey{i, 0}, 0, true);
  plan_extraction(dir, {}, 0.0, 1);

  register_update(dir, BlockKey{5, 0}, 0, false);  // one dirty block
  const auto plan =
      plan_extraction(dir, {BlockKey{7, 0}, BlockKey{7, 0}, BlockKey{99, 9}},
                      0.05, 2);
  EXPECT_FALSE(plan.threshold_met);
  // Forced blocks only; duplicates collapsed; unknown blocks skipped.
  ASSERT_EQ(plan.blocks.size(), 1u);
  EXPECT_EQ(plan.blocks[0], (BlockKey{7, 0}));

  // The skipped dirty block is still pending for the next round.
  const auto next = plan_extraction(dir, {}, 0.0, 3);
  ASSERT_EQ(next.blocks.size(), 1u);
  EXPECT_EQ(next.blocks[0], (BlockKey{5, 0}));
}

TEST(Planning, BlocksComeOutSortedUnique) {
  BlockDirectory dir(256, ProbeStrategy::robin_hood);
  for (std::int32_t i = 0; i < 6; ++i)
    register_update(dir, BlockKey{5 - i, i % 2}, 0, true);
  const auto plan = plan_extraction(dir, {}, 0.0, 1);
  ASSERT_EQ(plan.blocks.size(), 6u);
  for (std::size_t i = 1; i < plan.blocks.size(); ++i)
    EXPECT_TRUE(plan.blocks[i - 1] < plan.blocks[i]);
}

// --------------------------------------------------------------------------
// Mesh audits

TEST(Audit, OpenSheetHasBoundary) {
  TriangleMesh mesh;
  mesh.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0),
                   Vec3(1, 1, 0)};
  mesh.triangles = {{0, 1, 2}, {1, 3, 2}};
  const auto audit = audit_mesh(mesh);
  EXPECT_EQ(audit.boundary_edges, 4u);
  EXPECT_EQ(audit.nonmanifold_edges, 0u);
  EXPECT_FALSE(audit.watertight());
}

TEST(Audit, TetrahedronIsWatertight) {
  TriangleMesh mesh;
  mesh.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0),
                   Vec3(0, 0, 1)};
  mesh.triangles = {{0, 2, 1}, {0, 1, 3}, {1, 2, 3}, {0, 3, 2}};
  EXPECT_TRUE(audit_mesh(mesh).watertight());
}

}  // namespace
}  // namespace meshodom
