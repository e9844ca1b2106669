#include <doctest.h>

#include "sis/common.hpp"
#include "sis/sphere_geom.hpp"

using namespace sis;

namespace {

std::vector<Vec3> random_unit_points(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Vec3> pts;
  pts.reserve(n);
  while (static_cast<int>(pts.size()) < n) {
    Vec3 p(rng.normal(), rng.normal(), rng.normal());
    double len = p.norm();
    if (len < 1e-6) continue;
    pts.push_back(p / len);
  }
  return pts;
}

Vec3 random_dir(Rng& rng) {
  while (true) {
    Vec3 p(rng.normal(), rng.normal(), rng.normal());
    double len = p.norm();
    if (len > 1e-6) return p / len;
  }
}

}  // namespace

TEST_CASE("hull of tetrahedral directions") {
  std::vector<Vec3> pts = {Vec3(1, 1, 1).normalized(), Vec3(1, -1, -1).normalized(),
                           Vec3(-1, 1, -1).normalized(), Vec3(-1, -1, 1).normalized()};
  SphericalTriangulation tri(pts);
  CHECK(tri.face_count() == 4);
}

TEST_CASE("hull of icosahedron vertices") {
  Mesh ico = make_icosphere(0);
  SphericalTriangulation tri(ico.vertices);
  CHECK(tri.face_count() == 20);
}

TEST_CASE("hull face count formula for random points") {
  for (std::uint64_t seed : {11ull, 12ull, 13ull}) {
    auto pts = random_unit_points(1000, seed);
    SphericalTriangulation tri(pts);
    CHECK(tri.face_count() == 2 * 1000 - 4);
  }
}

TEST_CASE("hull of icosphere vertex subsets (structured, near-degenerate)") {
  Mesh ico = make_icosphere(3);
  Rng rng(99);
  auto sample = rng.sample_without_replacement(ico.vertex_count(), 300);
  std::vector<Vec3> pts;
  for (int i : sample) pts.push_back(ico.vertices[i]);
  SphericalTriangulation tri(pts);
  CHECK(tri.face_count() == 2 * 300 - 4);

  // The full vertex set reproduces a closed triangulation as well.
  SphericalTriangulation full(ico.vertices);
  CHECK(full.face_count() == 2 * ico.vertex_count() - 4);
}

TEST_CASE("triangulation rejects bad input") {
  CHECK_THROWS_AS(SphericalTriangulation({Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1)}),
                  ValidationError);
  CHECK_THROWS_WITH_AS(
      SphericalTriangulation({Vec3(1, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1)}),
      doctest::Contains("duplicate"), ValidationError);
  CHECK_THROWS_AS(SphericalTriangulation({Vec3(2, 0, 0), Vec3(0, 2, 0), Vec3(0, 0, 2),
                                          Vec3(1, 1, 1)}),
                  ValidationError);
}

TEST_CASE("locate at triangulation points returns unit lambdas") {
  Mesh ico = make_icosphere(1);
  SphericalTriangulation tri(ico.vertices);
  for (int i = 0; i < tri.point_count(); ++i) {
    BarycentricCoords bc = tri.locate(tri.points()[i]);
    const Face& f = tri.faces()[bc.face_index];
    int corner = -1;
    for (int k = 0; k < 3; ++k)
      if (f[k] == i) corner = k;
    REQUIRE(corner >= 0);
    CHECK(bc.lambdas[corner] == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(bc.lambdas[0] + bc.lambdas[1] + bc.lambdas[2] == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("locate at an edge midpoint splits weight") {
  Mesh ico = make_icosphere(0);
  SphericalTriangulation tri(ico.vertices);
  const Face& f = tri.faces()[0];
  Vec3 mid = (tri.points()[f[0]] + tri.points()[f[1]]).normalized();
  BarycentricCoords bc = tri.locate(mid);
  std::array<double, 3> sorted = bc.lambdas;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted[0] == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(sorted[1] == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(sorted[2] == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("grid location matches the linear-scan oracle") {
  // The acceptance suite runs 1e5 queries; this is the fast regression copy.
  Mesh ico = make_icosphere(0);
  SphericalTriangulation tri(ico.vertices);
  Rng rng(7);
  for (int q = 0; q < 20000; ++q) {
    Vec3 d = random_dir(rng);
    BarycentricCoords fast = tri.locate(d);
    BarycentricCoords slow = tri.locate_linear_scan(d);
    REQUIRE(fast.face_index == slow.face_index);
    for (int k = 0; k < 3; ++k) CHECK(fast.lambdas[k] == doctest::Approx(slow.lambdas[k]).epsilon(1e-12));
    double sum = fast.lambdas[0] + fast.lambdas[1] + fast.lambdas[2];
    CHECK(std::abs(sum - 1.0) < 1e-9);
  }
}

TEST_CASE("locate rejects near-zero directions") {
  Mesh ico = make_icosphere(0);
  SphericalTriangulation tri(ico.vertices);
  CHECK_THROWS_AS(tri.locate(Vec3(0, 0, 0)), NumericError);
}

TEST_CASE("bci reproduces data values at data points") {
  Mesh ico = make_icosphere(1);
  SphericalTriangulation tri(ico.vertices);
  Rng rng(21);
  std::vector<Vec3> values;
  for (int i = 0; i < tri.point_count(); ++i)
    values.push_back(Vec3(rng.normal(), rng.normal(), rng.normal()));
  for (int i = 0; i < tri.point_count(); ++i) {
    Vec3 v = bci_interpolate(tri, values, tri.points()[i]);
    CHECK((v - values[i]).norm() <= 1e-12 * values[i].norm());
  }
}

TEST_CASE("bci partition of unity: constant field") {
  Mesh ico = make_icosphere(1);
  SphericalTriangulation tri(ico.vertices);
  std::vector<Vec3> values(tri.point_count(), Vec3(3.5, -2.0, 0.25));
  Rng rng(22);
  for (int q = 0; q < 500; ++q) {
    Vec3 v = bci_interpolate(tri, values, random_dir(rng));
    CHECK((v - Vec3(3.5, -2.0, 0.25)).norm() < 1e-12);
  }
}

TEST_CASE("bci linear reproduction at chord points") {
  // Values from a linear field A p; interpolation at the chord point equals
  // A (chord point) exactly up to rounding.
  Mesh ico = make_icosphere(0);
  SphericalTriangulation tri(ico.vertices);
  Eigen::Matrix3d A;
  A << 1.0, 0.2, -0.3, 0.0, 2.0, 0.4, -0.5, 0.1, 1.5;
  std::vector<Vec3> values;
  for (const Vec3& p : tri.points()) values.push_back(A * p);
  Rng rng(23);
  for (int q = 0; q < 2000; ++q) {
    Vec3 d = random_dir(rng);
    BarycentricCoords bc = tri.locate(d);
    const Face& f = tri.faces()[bc.face_index];
    Vec3 chord = bc.lambdas[0] * tri.points()[f[0]] + bc.lambdas[1] * tri.points()[f[1]] +
                 bc.lambdas[2] * tri.points()[f[2]];
    Vec3 v = bci_interpolate(tri, values, d);
    CHECK((v - A * chord).norm() < 1e-9);
  }
}

TEST_CASE("icosphere counts") {
  CHECK(make_icosphere(0).vertex_count() == 12);
  CHECK(make_icosphere(1).vertex_count() == 42);
  CHECK(make_icosphere(1).face_count() == 80);
  CHECK(make_icosphere(4).vertex_count() == 2562);  // 10*4^4 + 2
  for (int level = 0; level <= 4; ++level) {
    Mesh m = make_icosphere(level);
    CHECK(m.vertex_count() == 10 * (1 << (2 * level)) + 2);
    CHECK(m.euler_characteristic() == 2);
    m.validate();
    for (const Vec3& v : m.vertices) CHECK(std::abs(v.norm() - 1.0) < 1e-12);
  }
  CHECK_THROWS_AS(make_icosphere(8), ValidationError);
  CHECK_THROWS_AS(make_icosphere(-1), ValidationError);
}

TEST_CASE("icosphere faces are outward oriented") {
  Mesh m = make_icosphere(2);
  for (const Face& f : m.faces) {
    double det = m.vertices[f[0]].cross(m.vertices[f[1]]).dot(m.vertices[f[2]]);
    CHECK(det > 0.0);
  }
}
