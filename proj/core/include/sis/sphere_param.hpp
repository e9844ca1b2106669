#pragma once

#include <string>
#include <vector>

#include "sis/mesh.hpp"

namespace sis {

/// Normalized spherical coordinates in [0,1]^2.
/// theta_hat = inclination / pi, phi_hat = azimuth / (2 pi) + 0.5.
struct SphericalCoord {
  double theta_hat = 0.0;
  double phi_hat = 0.5;
};

/// Inclination/azimuth via atan2; at the poles phi_hat is pinned to 0.5.
SphericalCoord to_spherical_coords(const Vec3& unit_point);
Vec3 from_spherical_coords(const SphericalCoord& c);

/// Per-vertex unit-sphere positions realizing the discrete correspondence
/// between a closed genus-0 mesh and the unit sphere.
struct SphericalEmbedding {
  std::vector<Vec3> sphere_points;

  int point_count() const { return static_cast<int>(sphere_points.size()); }
  Vec3 centroid() const;
};

struct ParameterizeOptions {
  double solver_tolerance = 1e-10;  // relative residual for the CG solve
  double centering_tolerance = 1e-9;
  int max_centering_iterations = 100;
  int correction_rings = 4;  // patch radius for the pole correction re-solve
};

/// Spherical parameterization of a closed, consistently oriented genus-0
/// mesh. Pipeline: puncture at the most regular face, harmonic flattening
/// with cotangent weights onto a pinned equilateral triangle, inverse
/// stereographic projection, re-flattening of the puncture neighborhood
/// from the opposite pole, then centroid re-centering on the sphere.
SphericalEmbedding spherical_parameterize(const Mesh& mesh,
                                          const ParameterizeOptions& opts = {});

/// Number of faces whose spherical triple-product sign disagrees with the
/// majority sign.
int check_orientation(const SphericalEmbedding& emb, const Mesh& mesh);

/// Per-face singular-value ratio of the linear map from the 3D triangle to
/// its spherical chord triangle; 1 means conformal.
struct DistortionReport {
  std::vector<double> per_face;
  double mean = 0.0;
  double max = 0.0;
};

DistortionReport quasi_conformal_distortion(const Mesh& mesh, const SphericalEmbedding& emb);

/// Embedding persisted as ASCII PLY of unit points plus a JSON sidecar
/// {"mesh":..., "centroid_norm":..., "max_distortion":...}.
void save_embedding(const SphericalEmbedding& emb, const std::string& ply_path,
                    const std::string& mesh_name, double max_distortion);
SphericalEmbedding load_embedding(const std::string& ply_path);

}  // namespace sis
