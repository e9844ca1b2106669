#include <doctest.h>

#include <filesystem>

#include <Eigen/Dense>

#include "sis/pipeline.hpp"
#include "sis/sphere_geom.hpp"
#include "sis/sphere_param.hpp"

using namespace sis;

namespace {

Mesh regular_tetrahedron() {
  Mesh m;
  m.vertices = {{1, 1, 1}, {1, -1, -1}, {-1, 1, -1}, {-1, -1, 1}};
  m.faces = {{0, 2, 1}, {0, 1, 3}, {0, 3, 2}, {1, 2, 3}};
  m.validate();
  return m;
}

/// Best proper rotation aligning P onto Q (Kabsch).
Eigen::Matrix3d kabsch(const std::vector<Vec3>& p, const std::vector<Vec3>& q) {
  Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
  for (std::size_t i = 0; i < p.size(); ++i) h += q[i] * p[i].transpose();
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() > 0 ? 1.0 : -1.0;
  return svd.matrixU() * d * svd.matrixV().transpose();
}

}  // namespace

TEST_CASE("spherical coordinate conventions") {
  SphericalCoord north = to_spherical_coords(Vec3(0, 0, 1));
  CHECK(north.theta_hat == 0.0);
  CHECK(north.phi_hat == 0.5);

  SphericalCoord px = to_spherical_coords(Vec3(1, 0, 0));
  CHECK(px.theta_hat == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(px.phi_hat == doctest::Approx(0.5).epsilon(1e-15));

  SphericalCoord py = to_spherical_coords(Vec3(0, 1, 0));
  CHECK(py.theta_hat == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(py.phi_hat == doctest::Approx(0.75).epsilon(1e-15));

  CHECK((from_spherical_coords({0.5, 0.5}) - Vec3(1, 0, 0)).norm() < 1e-15);
  CHECK((from_spherical_coords({0.0, 0.123}) - Vec3(0, 0, 1)).norm() == 0.0);
  CHECK((from_spherical_coords({1.0, 0.9}) - Vec3(0, 0, -1)).norm() == 0.0);

  // (0.25, 0.25): theta = pi/4, phi = -pi/2.
  Vec3 p = from_spherical_coords({0.25, 0.25});
  Vec3 expect(std::cos(-M_PI / 2) * std::sin(M_PI / 4), std::sin(-M_PI / 2) * std::sin(M_PI / 4),
              std::cos(M_PI / 4));
  CHECK((p - expect).norm() < 1e-15);

  CHECK_THROWS_AS(to_spherical_coords(Vec3(2, 0, 0)), ValidationError);
}

TEST_CASE("coordinate round trip away from poles") {
  Rng rng(5);
  double worst = 0.0;
  for (int i = 0; i < 20000; ++i) {
    SphericalCoord c{rng.uniform(0.02, 0.98), rng.uniform(0.0, 1.0)};
    Vec3 p = from_spherical_coords(c);
    CHECK(std::abs(p.norm() - 1.0) < 1e-12);
    SphericalCoord back = to_spherical_coords(p);
    worst = std::max(worst, std::abs(back.theta_hat - c.theta_hat));
    double dphi = std::abs(back.phi_hat - c.phi_hat);
    dphi = std::min(dphi, 1.0 - dphi);  // azimuth wrap at phi_hat = 0/1
    worst = std::max(worst, dphi);
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("parameterize rejects non-genus-0 input") {
  Mesh open = make_icosphere(1);
  open.faces.pop_back();
  CHECK_THROWS_WITH_AS(spherical_parameterize(open), doctest::Contains("genus-0"),
                       ValidationError);
}

TEST_CASE("regular tetrahedron maps to its radial projection up to rotation") {
  Mesh tetra = regular_tetrahedron();
  SphericalEmbedding emb = spherical_parameterize(tetra);
  REQUIRE(emb.point_count() == 4);
  for (const Vec3& p : emb.sphere_points) CHECK(std::abs(p.norm() - 1.0) < 1e-9);
  CHECK(check_orientation(emb, tetra) == 0);
  CHECK(emb.centroid().norm() < 1e-3);

  std::vector<Vec3> radial;
  for (const Vec3& v : tetra.vertices) radial.push_back(v.normalized());
  Eigen::Matrix3d r = kabsch(emb.sphere_points, radial);
  double worst_angle = 0.0;
  for (std::size_t i = 0; i < radial.size(); ++i) {
    double c = std::clamp((r * emb.sphere_points[i]).dot(radial[i]), -1.0, 1.0);
    worst_angle = std::max(worst_angle, std::acos(c));
  }
  CHECK(worst_angle < 1e-6);

  // Symmetry also makes the map conformal face by face.
  DistortionReport rep = quasi_conformal_distortion(tetra, emb);
  CHECK(rep.max == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("icosphere parameterization stays near the identity's distortion") {
  Mesh ico = make_icosphere(4);
  SphericalEmbedding identity;
  identity.sphere_points = ico.vertices;
  DistortionReport base = quasi_conformal_distortion(ico, identity);
  CHECK(base.mean == doctest::Approx(1.0).epsilon(1e-9));

  SphericalEmbedding emb = spherical_parameterize(ico);
  CHECK(check_orientation(emb, ico) == 0);
  for (const Vec3& p : emb.sphere_points) CHECK(std::abs(p.norm() - 1.0) < 1e-9);
  CHECK(emb.centroid().norm() < 1e-3);
  DistortionReport rep = quasi_conformal_distortion(ico, emb);
  CHECK(rep.mean - base.mean < 1e-3);
}

TEST_CASE("bumpy sphere parameterization: no flips, unit points") {
  Mesh grid = make_icosphere(3);
  Mesh bumpy;
  bumpy.faces = grid.faces;
  for (const Vec3& dir : grid.vertices)
    bumpy.vertices.push_back(bumpy_surface_point(0.12, -0.09, dir));
  SphericalEmbedding emb = spherical_parameterize(bumpy);
  CHECK(check_orientation(emb, bumpy) == 0);
  double worst = 0.0;
  for (const Vec3& p : emb.sphere_points) worst = std::max(worst, std::abs(p.norm() - 1.0));
  CHECK(worst < 1e-9);
  CHECK(emb.centroid().norm() < 1e-3);
}

TEST_CASE("check_orientation flags mirrored and perturbed embeddings") {
  Mesh ico = make_icosphere(1);
  SphericalEmbedding emb;
  emb.sphere_points = ico.vertices;
  CHECK(check_orientation(emb, ico) == 0);

  SphericalEmbedding mirrored = emb;
  for (Vec3& p : mirrored.sphere_points) p.x() = -p.x();
  // All faces flip; the count reports the minority, which is zero only
  // because every face flipped consistently.
  long flipped_all = 0;
  for (const Face& f : ico.faces) {
    double det = mirrored.sphere_points[f[0]]
                     .cross(mirrored.sphere_points[f[1]])
                     .dot(mirrored.sphere_points[f[2]]);
    if (det < 0) ++flipped_all;
  }
  CHECK(flipped_all == ico.face_count());

  SphericalEmbedding swapped = emb;
  std::swap(swapped.sphere_points[0], swapped.sphere_points[7]);
  CHECK(check_orientation(swapped, ico) >= 1);
}

TEST_CASE("quasi-conformal distortion: identity and degenerate faces") {
  Mesh ico = make_icosphere(2);
  SphericalEmbedding identity;
  identity.sphere_points = ico.vertices;
  DistortionReport rep = quasi_conformal_distortion(ico, identity);
  for (double r : rep.per_face) CHECK(r == doctest::Approx(1.0).epsilon(1e-6));

  // Radial projection of a tetrahedron: finite ratios, singular-value oracle.
  Mesh tetra = regular_tetrahedron();
  for (Vec3& v : tetra.vertices) v += Vec3(0.2, 0.1, -0.05);  // break the symmetry
  SphericalEmbedding radial;
  for (const Vec3& v : tetra.vertices) radial.sphere_points.push_back(v.normalized());
  if (check_orientation(radial, tetra) == 0) {
    DistortionReport rep2 = quasi_conformal_distortion(tetra, radial);
    for (double r : rep2.per_face) {
      CHECK(std::isfinite(r));
      CHECK(r >= 1.0 - 1e-12);
    }
  }

  Mesh degen = regular_tetrahedron();
  degen.vertices[3] = degen.vertices[0];  // zero-area faces
  SphericalEmbedding demb;
  for (const Vec3& v : regular_tetrahedron().vertices) demb.sphere_points.push_back(v.normalized());
  CHECK_THROWS_AS(quasi_conformal_distortion(degen, demb), NumericError);
}

TEST_CASE("embedding ply round trip") {
  Mesh ico = make_icosphere(1);
  SphericalEmbedding emb = spherical_parameterize(ico);
  std::string path =
      (std::filesystem::temp_directory_path() / "sis_emb.ply").string();
  save_embedding(emb, path, "ico1", 1.0);
  SphericalEmbedding back = load_embedding(path);
  REQUIRE(back.point_count() == emb.point_count());
  for (int i = 0; i < emb.point_count(); ++i)
    CHECK((back.sphere_points[i] - emb.sphere_points[i]).norm() < 1e-12);
}
