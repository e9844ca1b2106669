#pragma once

#include <atomic>
#include <cstdint>
#include <vector>

#include "sis/mesh.hpp"
#include "sis/sphere_param.hpp"

namespace sis {

/// Barycentric coordinates of a located query: the chord triangle hit by the
/// ray from the origin, with lambdas renormalized to sum to 1.
struct BarycentricCoords {
  int face_index = -1;
  std::array<double, 3> lambdas{0.0, 0.0, 0.0};
};

/// Convex-hull triangulation of unit points with a spherical-cap grid index
/// for point location. Points keep their input order; faces are outward
/// oriented. Immutable after construction; locate() is safe to call
/// concurrently.
class SphericalTriangulation {
 public:
  /// Builds the hull of >= 4 pairwise-distinct unit points. Insertion order
  /// is lexicographic, so the triangulation is deterministic.
  explicit SphericalTriangulation(std::vector<Vec3> points);

  const std::vector<Vec3>& points() const { return points_; }
  const std::vector<Face>& faces() const { return faces_; }
  int point_count() const { return static_cast<int>(points_.size()); }
  int face_count() const { return static_cast<int>(faces_.size()); }

  /// Face whose chord triangle is crossed by the ray along `dir`, with ties
  /// on shared edges/vertices broken by lowest face index.
  BarycentricCoords locate(const Vec3& dir) const;

  /// Reference implementation scanning every face; used as the correctness
  /// oracle for the grid-accelerated path.
  BarycentricCoords locate_linear_scan(const Vec3& dir) const;

  /// Grid misses that fell back to the linear scan (diagnostic).
  long fallback_count() const { return fallbacks_; }

 private:
  void build_hull();
  void build_grid();
  bool face_hit(int fi, const Vec3& dir, BarycentricCoords& out) const;

  std::vector<Vec3> points_;
  std::vector<Face> faces_;

  int grid_n_ = 0;
  std::vector<std::vector<std::int32_t>> cells_;
  mutable std::atomic<long> fallbacks_{0};
};

/// v = lambda1*v1 + lambda2*v2 + lambda3*v3 at the located face.
Vec3 bci_interpolate(const SphericalTriangulation& tri, const std::vector<Vec3>& values,
                     const Vec3& dir);

/// Subdivided icosahedron with vertices on the unit sphere;
/// V = 10*4^level + 2. Levels above 7 are rejected.
Mesh make_icosphere(int level);

}  // namespace sis
