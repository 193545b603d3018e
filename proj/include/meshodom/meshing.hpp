#pragma once

// Partitioned surface extraction. The map is split into vertical blocks
// with a fixed footprint whose height adapts to the voxels actually present
// (tracked per block by the 2D directory). Blocks touched by fusion are
// flagged dirty and re-polygonised in isolation; fragments then replace the
// block's previous triangles inside an incremental mesh. Vertices live in a
// global pool keyed by the grid edge they sit on, so adjacent blocks —
// extracted at different times — index the *same* vertex objects and the
// seams stay closed.

#include "meshodom/geometry.hpp"
#include "meshodom/hashstore.hpp"
#include "meshodom/mc_tables.hpp"

#include <algorithm>
#include <array>
#include <cstdint>
#include <limits>
#include <optional>
#include <unordered_map>
#include <vector>

namespace meshodom {

struct MeshingParams {
  int block_vx = 20;        // block footprint, voxels (2 m at 0.1 m pitch)
  int block_vy = 20;
  double w_extract = 0.5;   // corners below this weight are not trusted
  double alpha = 0.05;      // dirty fraction of blocks that triggers a pass
};

struct VoxelBlock {
  std::int32_t z_min = std::numeric_limits<std::int32_t>::max();
  std::int32_t z_max = std::numeric_limits<std::int32_t>::min();
  std::int64_t voxel_count = 0;
  std::uint32_t last_extracted_frame = 0;
  bool dirty = false;
};

using BlockDirectory =
    ConcurrentOpenTable<BlockKey, VoxelBlock, BlockKeyHash>;

inline std::int32_t floor_div(std::int32_t a, std::int32_t b) {
  return a >= 0 ? a / b : -((-a + b - 1) / b);
}

inline BlockKey block_of(const VoxelKey& k, const MeshingParams& p) {
  return BlockKey{floor_div(k.x, p.block_vx), floor_div(k.y, p.block_vy)};
}

// Height of the occupied band, in voxel layers spanned (z_max - z_min).
inline std::optional<std::int32_t> block_height(const VoxelBlock& b) {
  if (b.voxel_count <= 0) return std::nullopt;
  return b.z_max - b.z_min;
}

// Folds one fused voxel into the directory; commutative, so concurrent
// registration from sharded fusion threads is order-independent.
inline void register_update(BlockDirectory& dir, const BlockKey& bk,
                            std::int32_t z, bool fresh) {
  dir.get_or_insert_update(bk, [&](VoxelBlock& b, bool) {
    b.z_min = std::min(b.z_min, z);
    b.z_max = std::max(b.z_max, z);
    if (fresh) ++b.voxel_count;
    b.dirty = true;
  });
}

// ---------------------------------------------------------------------------
// Meshes

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;
  std::vector<Vec3> facet_normals;  // unit, one per triangle

  void recompute_normals() {
    facet_normals.resize(triangles.size());
    for (std::size_t i = 0; i < triangles.size(); ++i) {
      const auto& t = triangles[i];
      const Vec3 n = (vertices[static_cast<std::size_t>(t[1])] -
                      vertices[static_cast<std::size_t>(t[0])])
                         .cross(vertices[static_cast<std::size_t>(t[2])] -
                                vertices[static_cast<std::size_t>(t[0])]);
      const double len = n.norm();
      facet_normals[i] = len > 1e-15 ? Vec3(n / len) : Vec3(0, 0, 1);
    }
  }

  double total_area() const {
    double a = 0.0;
    for (const auto& t : triangles) {
      a += 0.5 *
           (vertices[static_cast<std::size_t>(t[1])] -
            vertices[static_cast<std::size_t>(t[0])])
               .cross(vertices[static_cast<std::size_t>(t[2])] -
                      vertices[static_cast<std::size_t>(t[0])])
               .norm();
    }
    return a;
  }
};

// Identity of a marching-cubes vertex: the grid edge it lies on, named by
// the voxel key at the edge's base corner plus the axis it runs along.
struct EdgeKey {
  std::int32_t x = 0;
  std::int32_t y = 0;
  std::int32_t z = 0;
  std::int8_t axis = 0;

  bool operator==(const EdgeKey&) const = default;
};

struct EdgeKeyHash {
  std::size_t operator()(const EdgeKey& e) const {
    const std::uint64_t h = hash3_raw(VoxelKey{e.x, e.y, e.z});
    return static_cast<std::size_t>(
        h ^ (static_cast<std::uint64_t>(static_cast<std::uint8_t>(e.axis)) *
             0x9e3779b97f4a7c15ull));
  }
};

struct MeshFragment {
  BlockKey block{};
  std::vector<std::pair<EdgeKey, Vec3>> vertices;
  std::vector<std::array<int, 3>> triangles;  // indices into `vertices`
};

// ---------------------------------------------------------------------------
// Block extraction

namespace detail {

struct CornerSlab {
  int nx = 0, ny = 0, nz = 0;
  std::int32_t x0 = 0, y0 = 0, z0 = 0;
  std::vector<double> sdf;
  std::vector<double> weight;

  std::size_t at(int ix, int iy, int iz) const {
    return (static_cast<std::size_t>(iz) * static_cast<std::size_t>(ny) +
            static_cast<std::size_t>(iy)) *
               static_cast<std::size_t>(nx) +
           static_cast<std::size_t>(ix);
  }
};

inline CornerSlab fetch_slab(const VoxelHashMap& store, const BlockKey& bk,
                             std::int32_t z_min, std::int32_t z_max,
                             const MeshingParams& p) {
  CornerSlab s;
  s.x0 = bk.x * p.block_vx;
  s.y0 = bk.y * p.block_vy;
  s.z0 = z_min - 1;
  s.nx = p.block_vx + 1;  // one-corner apron toward +x/+y
  s.ny = p.block_vy + 1;
  s.nz = (z_max - z_min) + 3;
  const std::size_t n = static_cast<std::size_t>(s.nx) *
                        static_cast<std::size_t>(s.ny) *
                        static_cast<std::size_t>(s.nz);
  s.sdf.assign(n, 0.0);
  s.weight.assign(n, 0.0);
  for (int iz = 0; iz < s.nz; ++iz) {
    for (int iy = 0; iy < s.ny; ++iy) {
      for (int ix = 0; ix < s.nx; ++ix) {
        const auto v = store.find(
            VoxelKey{s.x0 + ix, s.y0 + iy, s.z0 + iz});
        if (!v) continue;
        const std::size_t idx = s.at(ix, iy, iz);
        s.sdf[idx] = v->data.sdf;
        s.weight[idx] = v->data.weight;
      }
    }
  }
  return s;
}

}  // namespace detail

// Polygonises one block. Cells are owned by the block containing their base
// voxel; the +x/+y/+z faces read one voxel of apron from the neighbours, so
// interface cells are produced exactly once and interface vertices carry the
// same EdgeKey (and bit-identical position) on both sides.
inline MeshFragment extract_block(const VoxelHashMap& store,
                                  const BlockKey& bk, std::int32_t z_min,
                                  std::int32_t z_max,
                                  const MeshingParams& p) {
  MeshFragment frag;
  frag.block = bk;
  if (z_max < z_min) return frag;

  const detail::CornerSlab slab =
      detail::fetch_slab(store, bk, z_min, z_max, p);
  const Vec3 res = store.resolution();

  std::unordered_map<EdgeKey, int, EdgeKeyHash> local;
  local.reserve(256);

  double corner_sdf[8];
  int edge_vertex[12];

  for (int cz = 0; cz < slab.nz - 1; ++cz) {
    for (int cy = 0; cy < p.block_vy; ++cy) {
      for (int cx = 0; cx < p.block_vx; ++cx) {
        int cube = 0;
        bool trusted = true;
        for (int c = 0; c < 8; ++c) {
          const int ix = cx + kMcCornerShift[c][0];
          const int iy = cy + kMcCornerShift[c][1];
          const int iz = cz + kMcCornerShift[c][2];
          const std::size_t idx = slab.at(ix, iy, iz);
          if (slab.weight[idx] < p.w_extract) {
            trusted = false;
            break;
          }
          corner_sdf[c] = slab.sdf[idx];
          if (corner_sdf[c] < 0.0) cube |= 1 << c;
        }
        if (!trusted || cube == 0 || cube == 255) continue;

        const std::uint16_t mask = kMcEdgeTable[cube];
        for (int e = 0; e < 12; ++e) {
          if (!(mask & (1u << e))) continue;
          const EdgeKey ek{slab.x0 + cx + kMcEdgeAnchor[e][0],
                           slab.y0 + cy + kMcEdgeAnchor[e][1],
                           slab.z0 + cz + kMcEdgeAnchor[e][2],
                           static_cast<std::int8_t>(kMcEdgeAnchor[e][3])};
          const auto it = local.find(ek);
          if (it != local.end()) {
            edge_vertex[e] = it->second;
            continue;
          }
          const double f0 = corner_sdf[kMcEdgeCorners[e][0]];
          const double f1 = corner_sdf[kMcEdgeCorners[e][1]];
          double t = f0 / (f0 - f1);
          // Keep crossings strictly inside the edge: a level set running
          // exactly through a lattice corner would otherwise emit coincident
          // vertices under distinct edge keys, whose zero-area facets pinch
          // the surface open. Costs at most 1e-4 of a voxel in placement.
          t = std::clamp(t, 1e-4, 1.0 - 1e-4);
          Vec3 pos = voxel_center(VoxelKey{ek.x, ek.y, ek.z}, res);
          pos[ek.axis] += t * res[ek.axis];
          const int id = static_cast<int>(frag.vertices.size());
          frag.vertices.emplace_back(ek, pos);
          local.emplace(ek, id);
          edge_vertex[e] = id;
        }

        for (int t = 0; kMcTriTable[cube][t] != -1; t += 3) {
          const int a = edge_vertex[kMcTriTable[cube][t]];
          const int b = edge_vertex[kMcTriTable[cube][t + 1]];
          const int c = edge_vertex[kMcTriTable[cube][t + 2]];
          if (a == b || b == c || a == c) continue;
          // Winding: with bit i set on negative (interior) corners, the
          // table order runs clockwise seen from the positive side; swap to
          // make facet normals point into free space.
          frag.triangles.push_back({a, c, b});
        }
      }
    }
  }
  return frag;
}

// ---------------------------------------------------------------------------
// Incremental mesh

// Owns the global vertex pool and the live triangle set, indexed per block
// so a re-extracted block replaces exactly its own facets. Vertex slots are
// never recycled (re-extraction updates positions in place, keeping
// neighbouring blocks stitched); facet slots are.
class MeshMap {
 public:
  struct Facet {
    std::array<int, 3> v{-1, -1, -1};
    Vec3 normal = Vec3::Zero();
    BlockKey block{};
    bool live = false;
  };

  struct ReplaceResult {
    std::vector<int> removed;
    std::vector<int> added;
  };

  ReplaceResult replace_block(const MeshFragment& frag) {
    ReplaceResult result;

    std::vector<int> vmap(frag.vertices.size(), -1);
    for (std::size_t i = 0; i < frag.vertices.size(); ++i) {
      const auto& [ek, pos] = frag.vertices[i];
      auto it = vertex_index_.find(ek);
      if (it == vertex_index_.end()) {
        const int id = static_cast<int>(vertices_.size());
        vertices_.push_back(pos);
        vertex_index_.emplace(ek, id);
        vmap[i] = id;
      } else {
        vertices_[static_cast<std::size_t>(it->second)] = pos;
        vmap[i] = it->second;
      }
    }

    auto& owned = block_facets_[frag.block];
    for (int id : owned) {
      facets_[static_cast<std::size_t>(id)].live = false;
      free_.push_back(id);
      result.removed.push_back(id);
      --live_count_;
    }
    owned.clear();

    for (const auto& tri : frag.triangles) {
      Facet f;
      f.v = {vmap[static_cast<std::size_t>(tri[0])],
             vmap[static_cast<std::size_t>(tri[1])],
             vmap[static_cast<std::size_t>(tri[2])]};
      const Vec3 n =
          (vertices_[static_cast<std::size_t>(f.v[1])] -
           vertices_[static_cast<std::size_t>(f.v[0])])
              .cross(vertices_[static_cast<std::size_t>(f.v[2])] -
                     vertices_[static_cast<std::size_t>(f.v[0])]);
      const double len = n.norm();
      if (len < 1e-15) continue;  // degenerate sliver
      f.normal = n / len;
      f.block = frag.block;
      f.live = true;
      int id;
      if (!free_.empty()) {
        id = free_.back();
        free_.pop_back();
        facets_[static_cast<std::size_t>(id)] = f;
      } else {
        id = static_cast<int>(facets_.size());
        facets_.push_back(f);
      }
      owned.push_back(id);
      result.added.push_back(id);
      ++live_count_;
    }
    if (owned.empty()) block_facets_.erase(frag.block);
    return result;
  }

  std::size_t live_triangles() const { return live_count_; }
  std::size_t vertex_pool_size() const { return vertices_.size(); }

  bool is_live(int id) const {
    return id >= 0 && id < static_cast<int>(facets_.size()) &&
           facets_[static_cast<std::size_t>(id)].live;
  }
  const Facet& facet(int id) const {
    return facets_[static_cast<std::size_t>(id)];
  }
  const Vec3& vertex(int id) const {
    return vertices_[static_cast<std::size_t>(id)];
  }
  Vec3 facet_centroid(int id) const {
    const Facet& f = facets_[static_cast<std::size_t>(id)];
    return (vertices_[static_cast<std::size_t>(f.v[0])] +
            vertices_[static_cast<std::size_t>(f.v[1])] +
            vertices_[static_cast<std::size_t>(f.v[2])]) /
           3.0;
  }

  // Compact snapshot of the live surface; vertices re-indexed densely in
  // facet order, so the output is deterministic for a given mesh state.
  TriangleMesh to_mesh() const {
    TriangleMesh mesh;
    std::vector<int> vmap(vertices_.size(), -1);
    for (const auto& f : facets_) {
      if (!f.live) continue;
      std::array<int, 3> tri{};
      for (int k = 0; k < 3; ++k) {
        const int v = f.v[static_cast<std::size_t>(k)];
        if (vmap[static_cast<std::size_t>(v)] < 0) {
          vmap[static_cast<std::size_t>(v)] =
              static_cast<int>(mesh.vertices.size());
          mesh.vertices.push_back(vertices_[static_cast<std::size_t>(v)]);
        }
        tri[static_cast<std::size_t>(k)] = vmap[static_cast<std::size_t>(v)];
      }
      mesh.triangles.push_back(tri);
      mesh.facet_normals.push_back(f.normal);
    }
    return mesh;
  }

 private:
  struct BlockKeyStdHash {
    std::size_t operator()(const BlockKey& k) const {
      return static_cast<std::size_t>(hash2_raw(k));
    }
  };

  std::vector<Vec3> vertices_;
  std::unordered_map<EdgeKey, int, EdgeKeyHash> vertex_index_;
  std::vector<Facet> facets_;
  std::vector<int> free_;
  std::unordered_map<BlockKey, std::vector<int>, BlockKeyStdHash>
      block_facets_;
  std::size_t live_count_ = 0;
};

// ---------------------------------------------------------------------------
// Scheduling

struct ExtractionPlan {
  std::vector<BlockKey> blocks;  // sorted by (x, y)
  std::size_t dirty_blocks = 0;
  std::size_t total_blocks = 0;
  bool threshold_met = false;
};

// Picks the blocks to re-polygonise this frame: all dirty blocks once the
// dirty fraction reaches alpha, plus any explicitly forced blocks (about to
// be retired) regardless of the threshold. Scheduled blocks get their dirty
// flag cleared and their last_extracted_frame stamped.
inline ExtractionPlan plan_extraction(BlockDirectory& dir,
                                      const std::vector<BlockKey>& forced,
                                      double alpha, std::uint32_t frame) {
  ExtractionPlan plan;
  std::vector<BlockKey> dirty;
  dir.for_each([&](const BlockDirectory::Entry& e) {
    ++plan.total_blocks;
    if (e.value.dirty) dirty.push_back(e.key);
  });
  plan.dirty_blocks = dirty.size();
  plan.threshold_met =
      !dirty.empty() &&
      static_cast<double>(dirty.size()) >=
          alpha * static_cast<double>(plan.total_blocks);

  if (plan.threshold_met) plan.blocks = dirty;
  for (const auto& bk : forced) {
    if (dir.find(bk)) plan.blocks.push_back(bk);
  }
  std::sort(plan.blocks.begin(), plan.blocks.end());
  plan.blocks.erase(std::unique(plan.blocks.begin(), plan.blocks.end(),
                                [](const BlockKey& a, const BlockKey& b) {
                                  return a == b;
                                }),
                    plan.blocks.end());

  for (const auto& bk : plan.blocks) {
    dir.get_or_insert_update(bk, [&](VoxelBlock& b, bool) {
      b.dirty = false;
      b.last_extracted_frame = frame;
    });
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Mesh audits (used by tests and the CLI's stats output)

struct MeshAudit {
  std::size_t boundary_edges = 0;     // edges with exactly one facet
  std::size_t nonmanifold_edges = 0;  // edges with more than two facets
  bool watertight() const { return boundary_edges == 0; }
};

inline MeshAudit audit_mesh(const TriangleMesh& mesh) {
  struct PairHash {
    std::size_t operator()(const std::pair<int, int>& p) const {
      return static_cast<std::size_t>(
          static_cast<std::uint64_t>(static_cast<std::uint32_t>(p.first)) *
              0x9e3779b97f4a7c15ull ^
          static_cast<std::uint64_t>(static_cast<std::uint32_t>(p.second)));
    }
  };
  std::unordered_map<std::pair<int, int>, int, PairHash> edge_count;
  edge_count.reserve(mesh.triangles.size() * 3);
  for (const auto& t : mesh.triangles) {
    for (int k = 0; k < 3; ++k) {
      int a = t[static_cast<std::size_t>(k)];
      int b = t[static_cast<std::size_t>((k + 1) % 3)];
      if (a > b) std::swap(a, b);
      ++edge_count[{a, b}];
    }
  }
  MeshAudit audit;
  for (const auto& [e, c] : edge_count) {
    if (c == 1) ++audit.boundary_edges;
    if (c > 2) ++audit.nonmanifold_edges;
  }
  return audit;
}

}  // namespace meshodom
