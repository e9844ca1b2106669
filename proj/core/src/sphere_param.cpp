#include "sis/sphere_param.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <queue>
#include <unordered_map>

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SVD>
#include <Eigen/SparseCore>
#include <json.hpp>

namespace sis {

SphericalCoord to_spherical_coords(const Vec3& p) {
  double n = p.norm();
  if (std::abs(n - 1.0) > 1e-6)
    throw ValidationError("to_spherical_coords: point norm " + std::to_string(n) +
                          " is not within 1e-6 of 1");
  double rxy = std::hypot(p.x(), p.y());
  double theta = std::atan2(rxy, p.z());  // [0, pi]
  SphericalCoord c;
  c.theta_hat = theta / M_PI;
  if (c.theta_hat <= 0.0 || c.theta_hat >= 1.0 || rxy == 0.0) {
    c.theta_hat = p.z() > 0.0 ? 0.0 : 1.0;
    c.phi_hat = 0.5;  // pole convention
    return c;
  }
  double phi = std::atan2(p.y(), p.x());  // (-pi, pi]
  if (p.y() == 0.0 && p.x() < 0.0) phi = M_PI;
  c.phi_hat = phi / (2.0 * M_PI) + 0.5;
  c.phi_hat = std::min(1.0, std::max(0.0, c.phi_hat));
  return c;
}

Vec3 from_spherical_coords(const SphericalCoord& c) {
  if (c.theta_hat == 0.0) return Vec3(0, 0, 1);
  if (c.theta_hat == 1.0) return Vec3(0, 0, -1);
  double theta = c.theta_hat * M_PI;
  double phi = (c.phi_hat - 0.5) * 2.0 * M_PI;
  double st = std::sin(theta);
  return Vec3(st * std::cos(phi), st * std::sin(phi), std::cos(theta));
}

Vec3 SphericalEmbedding::centroid() const {
  Vec3 c = Vec3::Zero();
  for (const Vec3& p : sphere_points) c += p;
  return sphere_points.empty() ? c : Vec3(c / static_cast<double>(sphere_points.size()));
}

namespace {

constexpr double kWeightFloor = 1e-8;

double corner_angle(const Vec3& a, const Vec3& b, const Vec3& c) {
  // angle at a
  Vec3 u = b - a, v = c - a;
  double d = u.norm() * v.norm();
  if (d == 0.0) return 0.0;
  double cosang = std::clamp(u.dot(v) / d, -1.0, 1.0);
  return std::acos(cosang);
}

double cotangent(const Vec3& apex, const Vec3& a, const Vec3& b) {
  Vec3 u = a - apex, v = b - apex;
  double cross = u.cross(v).norm();
  if (cross < 1e-300) return 0.0;
  return u.dot(v) / cross;
}

/// Cotangent edge weights, clamped from below so the Tutte-style embedding
/// stays valid on meshes with obtuse triangles. Faces listed in `skip` are
/// left out (used to puncture the mesh).
std::unordered_map<std::uint64_t, double> cotan_weights(const Mesh& mesh, int skip_face) {
  std::unordered_map<std::uint64_t, double> w;
  w.reserve(mesh.faces.size() * 3);
  auto key = [](int a, int b) {
    if (a > b) std::swap(a, b);
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
           static_cast<std::uint32_t>(b);
  };
  for (int fi = 0; fi < mesh.face_count(); ++fi) {
    if (fi == skip_face) continue;
    const Face& f = mesh.faces[fi];
    for (int k = 0; k < 3; ++k) {
      int a = f[k], b = f[(k + 1) % 3], opp = f[(k + 2) % 3];
      w[key(a, b)] += 0.5 * cotangent(mesh.vertices[opp], mesh.vertices[a], mesh.vertices[b]);
    }
  }
  for (auto& [k, v] : w) v = std::max(v, kWeightFloor);
  return w;
}

using SpMat = Eigen::SparseMatrix<double>;

/// Solves the harmonic system L_II x = rhs with conjugate gradients and a
/// Jacobi preconditioner; relative residual below opts.solver_tolerance.
Eigen::MatrixX2d solve_dirichlet(const std::vector<int>& interior,
                                 const std::vector<int>& index_of,  // -1 for pinned
                                 const std::unordered_map<std::uint64_t, double>& weights,
                                 const std::vector<Eigen::Vector2d>& pinned_pos,
                                 int n_vertices, double tolerance) {
  const int ni = static_cast<int>(interior.size());
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(weights.size() * 2);
  Eigen::MatrixX2d rhs = Eigen::MatrixX2d::Zero(ni, 2);
  std::vector<double> diag(ni, 0.0);
  for (const auto& [key, wv] : weights) {
    int a = static_cast<int>(key >> 32);
    int b = static_cast<int>(key & 0xffffffffu);
    int ia = index_of[a], ib = index_of[b];
    if (ia >= 0) diag[ia] += wv;
    if (ib >= 0) diag[ib] += wv;
    if (ia >= 0 && ib >= 0) {
      trip.emplace_back(ia, ib, -wv);
      trip.emplace_back(ib, ia, -wv);
    } else if (ia >= 0) {
      rhs.row(ia) += wv * pinned_pos[b].transpose();
    } else if (ib >= 0) {
      rhs.row(ib) += wv * pinned_pos[a].transpose();
    }
  }
  for (int i = 0; i < ni; ++i) trip.emplace_back(i, i, diag[i]);
  SpMat L(ni, ni);
  L.setFromTriplets(trip.begin(), trip.end());

  Eigen::ConjugateGradient<SpMat, Eigen::Lower | Eigen::Upper,
                           Eigen::DiagonalPreconditioner<double>>
      cg;
  cg.setTolerance(tolerance);
  cg.setMaxIterations(static_cast<Eigen::Index>(10) * n_vertices);
  cg.compute(L);
  Eigen::MatrixX2d x(ni, 2);
  for (int c = 0; c < 2; ++c) {
    x.col(c) = cg.solve(rhs.col(c));
    if (cg.info() != Eigen::Success)
      throw NumericError("harmonic flattening solve did not converge (residual " +
                         std::to_string(cg.error()) + ")");
  }
  return x;
}

Vec3 inverse_stereographic_north(const Eigen::Vector2d& u) {
  // plane -> sphere, projection pole at north: origin -> south pole.
  double r2 = u.squaredNorm();
  return Vec3(2.0 * u.x(), 2.0 * u.y(), r2 - 1.0) / (r2 + 1.0);
}

Eigen::Vector2d stereographic_from_south(const Vec3& p) {
  // north neighborhood -> near origin; south pole -> infinity.
  return Eigen::Vector2d(p.x(), p.y()) / (1.0 + p.z());
}

Vec3 inverse_stereographic_south(const Eigen::Vector2d& u) {
  double r2 = u.squaredNorm();
  return Vec3(2.0 * u.x(), 2.0 * u.y(), 1.0 - r2) / (1.0 + r2);
}

/// Vertices within `rings` edge-hops of the seed set.
std::vector<int> grow_rings(const NeighborStructure& ns, const std::vector<int>& seeds,
                            int rings) {
  std::vector<int> dist(ns.vertex_count(), -1);
  std::queue<int> q;
  for (int s : seeds) {
    dist[s] = 0;
    q.push(s);
  }
  while (!q.empty()) {
    int v = q.front();
    q.pop();
    if (dist[v] == rings) continue;
    for (int w : ns.one_ring[v])
      if (dist[w] == -1) {
        dist[w] = dist[v] + 1;
        q.push(w);
      }
  }
  std::vector<int> out;
  for (int v = 0; v < ns.vertex_count(); ++v)
    if (dist[v] >= 0) out.push_back(v);
  return out;
}

}  // namespace

SphericalEmbedding spherical_parameterize(const Mesh& mesh, const ParameterizeOptions& opts) {
  mesh.validate();
  if (!mesh.is_closed() || mesh.euler_characteristic() != 2)
    throw ValidationError("spherical_parameterize: mesh is not closed genus-0 (Euler " +
                          std::to_string(mesh.euler_characteristic()) + ")");
  const int n = mesh.vertex_count();

  // 1. Puncture at the most regular face (max min corner angle, lowest index tie-break).
  int best_face = 0;
  double best_angle = -1.0;
  for (int fi = 0; fi < mesh.face_count(); ++fi) {
    const Face& f = mesh.faces[fi];
    const Vec3 &a = mesh.vertices[f[0]], &b = mesh.vertices[f[1]], &c = mesh.vertices[f[2]];
    double m = std::min({corner_angle(a, b, c), corner_angle(b, c, a), corner_angle(c, a, b)});
    if (m > best_angle + 1e-15) {
      best_angle = m;
      best_face = fi;
    }
  }
  const Face pin = mesh.faces[best_face];

  // 2. Harmonic flattening with the punctured face's vertices pinned to an
  // equilateral triangle of unit circumradius.
  auto weights = cotan_weights(mesh, best_face);
  std::vector<Eigen::Vector2d> plane(n, Eigen::Vector2d::Zero());
  std::vector<int> index_of(n, -1);
  std::vector<int> interior;
  interior.reserve(n - 3);
  for (int v = 0; v < n; ++v)
    if (v != pin[0] && v != pin[1] && v != pin[2]) {
      index_of[v] = static_cast<int>(interior.size());
      interior.push_back(v);
    }
  for (int k = 0; k < 3; ++k) {
    double ang = 2.0 * M_PI * k / 3.0 + M_PI / 2.0;
    plane[pin[k]] = Eigen::Vector2d(std::cos(ang), std::sin(ang));
  }
  if (!interior.empty()) {
    Eigen::MatrixX2d sol = solve_dirichlet(interior, index_of, weights, plane, n,
                                           opts.solver_tolerance);
    for (int i = 0; i < static_cast<int>(interior.size()); ++i)
      plane[interior[i]] = sol.row(i).transpose();
  }

  // 3. Inverse stereographic projection, scaled so the median planar radius
  // lands on the equator.
  std::vector<double> radii(n);
  for (int v = 0; v < n; ++v) radii[v] = plane[v].norm();
  std::vector<double> sorted = radii;
  std::sort(sorted.begin(), sorted.end());
  double median = n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  double scale = median > 0.0 ? 1.0 / median : 1.0;
  SphericalEmbedding emb;
  emb.sphere_points.resize(n);
  for (int v = 0; v < n; ++v)
    emb.sphere_points[v] = inverse_stereographic_north(scale * plane[v]);

  // 4. Correction at the puncture: re-flatten its neighborhood through the
  // opposite pole with the patch boundary held fixed.
  NeighborStructure ns = one_ring(mesh);
  std::vector<int> seeds = {pin[0], pin[1], pin[2]};
  std::vector<int> patch = grow_rings(ns, seeds, opts.correction_rings);
  if (static_cast<int>(patch.size()) < n) {
    std::vector<char> in_patch(n, 0);
    for (int v : patch) in_patch[v] = 1;
    std::vector<int> patch_interior;
    std::vector<int> pidx(n, -1);
    for (int v : patch) {
      bool boundary = false;
      for (int w : ns.one_ring[v])
        if (!in_patch[w]) boundary = true;
      if (!boundary) {
        pidx[v] = static_cast<int>(patch_interior.size());
        patch_interior.push_back(v);
      }
    }
    if (!patch_interior.empty()) {
      auto full_weights = cotan_weights(mesh, -1);
      std::vector<Eigen::Vector2d> proj(n, Eigen::Vector2d::Zero());
      for (int v : patch) {
        if (emb.sphere_points[v].z() < -0.999)
          throw NumericError("pole correction patch reaches the opposite pole");
        proj[v] = stereographic_from_south(emb.sphere_points[v]);
      }
      Eigen::MatrixX2d sol = solve_dirichlet(patch_interior, pidx, full_weights, proj, n,
                                             opts.solver_tolerance);
      for (int i = 0; i < static_cast<int>(patch_interior.size()); ++i)
        emb.sphere_points[patch_interior[i]] =
            inverse_stereographic_south(sol.row(i).transpose());
    }
  }

  // 5. Centroid re-centering on the sphere.
  int iter = 0;
  for (; iter < opts.max_centering_iterations; ++iter) {
    Vec3 c = emb.centroid();
    if (c.norm() < opts.centering_tolerance) break;
    for (Vec3& p : emb.sphere_points) p = (p - c).normalized();
  }
  if (emb.centroid().norm() >= 1e-3)
    throw NumericError("sphere centering did not reach 1e-3 after " +
                       std::to_string(opts.max_centering_iterations) + " iterations");
  for (Vec3& p : emb.sphere_points) p.normalize();

  // Normalize handedness so face orientation matches outward spherical
  // orientation, then require zero flips.
  int flipped = check_orientation(emb, mesh);
  if (2 * flipped > mesh.face_count()) {
    for (Vec3& p : emb.sphere_points) p.x() = -p.x();
    flipped = mesh.face_count() - flipped;
  }
  long positive = 0;
  for (const Face& f : mesh.faces) {
    double det = emb.sphere_points[f[0]].cross(emb.sphere_points[f[1]])
                     .dot(emb.sphere_points[f[2]]);
    if (det > 0.0) ++positive;
  }
  if (positive != mesh.face_count()) {
    int remaining = static_cast<int>(mesh.face_count() - positive);
    throw NumericError("spherical parameterization left " + std::to_string(remaining) +
                       " flipped triangles");
  }
  return emb;
}

int check_orientation(const SphericalEmbedding& emb, const Mesh& mesh) {
  long positive = 0, negative = 0;
  for (const Face& f : mesh.faces) {
    double det = emb.sphere_points[f[0]].cross(emb.sphere_points[f[1]])
                     .dot(emb.sphere_points[f[2]]);
    (det >= 0.0 ? positive : negative)++;
  }
  return static_cast<int>(std::min(positive, negative));
}

DistortionReport quasi_conformal_distortion(const Mesh& mesh, const SphericalEmbedding& emb) {
  if (emb.point_count() != mesh.vertex_count())
    throw ValidationError("embedding/mesh vertex count mismatch");
  DistortionReport rep;
  rep.per_face.resize(mesh.face_count());
  double sum = 0.0;
  for (int fi = 0; fi < mesh.face_count(); ++fi) {
    const Face& f = mesh.faces[fi];
    auto frame = [](const Vec3& p0, const Vec3& p1, const Vec3& p2, Eigen::Matrix2d& out) {
      Vec3 e1 = p1 - p0, e2 = p2 - p0;
      double a = e1.norm();
      if (a < 1e-300) return false;
      Vec3 x = e1 / a;
      Vec3 nrm = e1.cross(e2);
      double area2 = nrm.norm();
      if (area2 < 1e-300) return false;
      Vec3 y = nrm.cross(x).normalized();
      out << a, e2.dot(x), 0.0, e2.dot(y);
      return true;
    };
    Eigen::Matrix2d S, T;
    if (!frame(mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]], S))
      throw NumericError("degenerate face " + std::to_string(fi) + " in source mesh");
    if (!frame(emb.sphere_points[f[0]], emb.sphere_points[f[1]], emb.sphere_points[f[2]], T))
      throw NumericError("degenerate face " + std::to_string(fi) + " in embedding");
    Eigen::Matrix2d J = T * S.inverse();
    Eigen::JacobiSVD<Eigen::Matrix2d> svd(J);
    double s0 = svd.singularValues()(0), s1 = svd.singularValues()(1);
    double ratio = s1 > 0.0 ? s0 / s1 : std::numeric_limits<double>::infinity();
    rep.per_face[fi] = ratio;
    rep.max = std::max(rep.max, ratio);
    sum += ratio;
  }
  rep.mean = mesh.face_count() > 0 ? sum / mesh.face_count() : 0.0;
  return rep;
}

void save_embedding(const SphericalEmbedding& emb, const std::string& ply_path,
                    const std::string& mesh_name, double max_distortion) {
  std::ofstream out(ply_path);
  if (!out) throw ValidationError("cannot write " + ply_path);
  out.precision(17);
  out << "ply\nformat ascii 1.0\n";
  out << "element vertex " << emb.point_count() << "\n";
  out << "property double x\nproperty double y\nproperty double z\n";
  out << "element face 0\nproperty list uchar int vertex_indices\nend_header\n";
  for (const Vec3& p : emb.sphere_points) out << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
  if (!out) throw ValidationError("write failure: " + ply_path);

  nlohmann::json side;
  side["mesh"] = mesh_name;
  side["centroid_norm"] = emb.centroid().norm();
  side["max_distortion"] = max_distortion;
  std::ofstream js(ply_path + ".json");
  if (!js) throw ValidationError("cannot write " + ply_path + ".json");
  js << side.dump(2) << '\n';
}

SphericalEmbedding load_embedding(const std::string& ply_path) {
  std::ifstream in(ply_path);
  if (!in) throw ValidationError("cannot open " + ply_path);
  Mesh cloud = parse_ply(in, ply_path);
  SphericalEmbedding emb;
  emb.sphere_points = std::move(cloud.vertices);
  for (const Vec3& p : emb.sphere_points)
    if (std::abs(p.norm() - 1.0) > 1e-6)
      throw ValidationError(ply_path + ": embedding point is not unit length");
  return emb;
}

}  // namespace sis
