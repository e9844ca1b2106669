#include "sis/sphere_geom.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <unordered_map>

namespace sis {

namespace {

constexpr double kHullEps = 1e-12;     // adaptive epsilon at unit scale
constexpr double kLambdaTol = 1e-9;    // edge/vertex tolerance for location
constexpr double kVertexSnap = 1e-12;  // exact-lambda snap distance

inline double orient3d(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& p) {
  return (b - a).cross(c - a).dot(p - a);
}

struct HullFace {
  int v[3];
  Vec3 normal;  // (b-a) x (c-a), outward
  double offset;
  bool alive = true;
  std::vector<int> conflicts;  // unprocessed points that see this face
};

inline bool sees(const HullFace& f, const Vec3& p) {
  return f.normal.dot(p) - f.offset > kHullEps;
}

}  // namespace

SphericalTriangulation::SphericalTriangulation(std::vector<Vec3> points)
    : points_(std::move(points)) {
  if (points_.size() < 4)
    throw ValidationError("triangulate_unit_points: need at least 4 points, got " +
                          std::to_string(points_.size()));
  for (std::size_t i = 0; i < points_.size(); ++i) {
    double n = points_[i].norm();
    if (std::abs(n - 1.0) > 1e-6)
      throw ValidationError("triangulate_unit_points: point " + std::to_string(i) +
                            " is not unit length");
  }
  build_hull();
  build_grid();
}

void SphericalTriangulation::build_hull() {
  const int n = point_count();
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const Vec3 &p = points_[a], &q = points_[b];
    if (p.x() != q.x()) return p.x() < q.x();
    if (p.y() != q.y()) return p.y() < q.y();
    return p.z() < q.z();
  });
  for (int i = 0; i + 1 < n; ++i)
    if ((points_[order[i]] - points_[order[i + 1]]).norm() < 1e-9)
      throw ValidationError("triangulate_unit_points: duplicate points " +
                            std::to_string(order[i]) + " and " + std::to_string(order[i + 1]));

  // Initial simplex from the sorted order.
  int i0 = order[0], i1 = order[1], i2 = -1, i3 = -1;
  int pos2 = 2;
  for (; pos2 < n; ++pos2) {
    if ((points_[order[pos2]] - points_[i0]).cross(points_[i1] - points_[i0]).norm() > 1e-12) {
      i2 = order[pos2];
      break;
    }
  }
  if (i2 < 0) throw ValidationError("triangulate_unit_points: all points collinear");
  int pos3 = 2;
  for (; pos3 < n; ++pos3) {
    int cand = order[pos3];
    if (cand == i2) continue;
    if (std::abs(orient3d(points_[i0], points_[i1], points_[i2], points_[cand])) > 1e-12) {
      i3 = cand;
      break;
    }
  }
  if (i3 < 0) throw ValidationError("triangulate_unit_points: all points coplanar");

  std::vector<HullFace> hull;
  hull.reserve(2 * n);
  std::unordered_map<std::uint64_t, int> edge_owner;  // directed edge -> alive face
  edge_owner.reserve(4 * n);
  auto dkey = [](int a, int b) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
           static_cast<std::uint32_t>(b);
  };
  auto add_face = [&](int a, int b, int c) {
    HullFace f;
    f.v[0] = a;
    f.v[1] = b;
    f.v[2] = c;
    f.normal = (points_[b] - points_[a]).cross(points_[c] - points_[a]);
    f.offset = f.normal.dot(points_[a]);
    int id = static_cast<int>(hull.size());
    for (int k = 0; k < 3; ++k) {
      auto key = dkey(f.v[k], f.v[(k + 1) % 3]);
      if (!edge_owner.emplace(key, id).second)
        throw NumericError("convex hull: directed edge collision during construction");
    }
    hull.push_back(std::move(f));
    return id;
  };

  int quad[4] = {i0, i1, i2, i3};
  if (orient3d(points_[i0], points_[i1], points_[i2], points_[i3]) > 0.0)
    std::swap(quad[1], quad[2]);
  static const int face_idx[4][3] = {{0, 1, 2}, {0, 3, 1}, {1, 3, 2}, {0, 2, 3}};
  for (const auto& fv : face_idx) add_face(quad[fv[0]], quad[fv[1]], quad[fv[2]]);

  // Conflict lists for the remaining points, visited in sorted order.
  std::vector<char> on_hull(n, 0);
  for (int q : quad) on_hull[q] = 1;
  std::vector<std::vector<int>> point_conflicts(n);
  for (int oi = 0; oi < n; ++oi) {
    int p = order[oi];
    if (on_hull[p]) continue;
    for (int fi = 0; fi < static_cast<int>(hull.size()); ++fi)
      if (sees(hull[fi], points_[p])) {
        hull[fi].conflicts.push_back(p);
        point_conflicts[p].push_back(fi);
      }
  }

  std::vector<int> visible;
  struct HorizonEdge {
    int a, b, outside_face;
  };
  std::vector<HorizonEdge> horizon;
  std::vector<int> orphan_points;
  for (int oi = 0; oi < n; ++oi) {
    int p = order[oi];
    if (on_hull[p]) continue;

    visible.clear();
    for (int fi : point_conflicts[p])
      if (hull[fi].alive) visible.push_back(fi);
    std::sort(visible.begin(), visible.end());
    visible.erase(std::unique(visible.begin(), visible.end()), visible.end());
    if (visible.empty()) {
      // Nearly coplanar with its whole visible region; retest against every
      // alive face before giving up on it.
      for (int fi = 0; fi < static_cast<int>(hull.size()); ++fi)
        if (hull[fi].alive && hull[fi].normal.dot(points_[p]) - hull[fi].offset > 0.0)
          visible.push_back(fi);
      if (visible.empty()) continue;  // inside within epsilon; final check reports it
    }

    std::vector<char> is_visible(hull.size(), 0);
    for (int fi : visible) is_visible[fi] = 1;

    // Horizon: directed edges of visible faces whose opposite face survives.
    horizon.clear();
    orphan_points.clear();
    for (int fi : visible) {
      const HullFace& f = hull[fi];
      for (int k = 0; k < 3; ++k) {
        int a = f.v[k], b = f.v[(k + 1) % 3];
        auto it = edge_owner.find(dkey(b, a));
        if (it == edge_owner.end())
          throw NumericError("convex hull: open edge during horizon walk");
        if (!is_visible[it->second]) horizon.push_back({a, b, it->second});
      }
      for (int q : f.conflicts)
        if (!on_hull[q] && q != p) orphan_points.push_back(q);
    }
    if (horizon.empty()) throw NumericError("convex hull: empty horizon");
    for (int fi : visible) {
      hull[fi].alive = false;
      hull[fi].conflicts.clear();
      for (int k = 0; k < 3; ++k) edge_owner.erase(dkey(hull[fi].v[k], hull[fi].v[(k + 1) % 3]));
    }

    std::sort(orphan_points.begin(), orphan_points.end());
    orphan_points.erase(std::unique(orphan_points.begin(), orphan_points.end()),
                        orphan_points.end());

    std::vector<int> fresh;
    fresh.reserve(horizon.size());
    for (const auto& he : horizon) fresh.push_back(add_face(he.a, he.b, p));
    auto link = [&](int q, int fi) {
      auto& pc = point_conflicts[q];
      if (std::find(pc.begin(), pc.end(), fi) != pc.end()) return;
      hull[fi].conflicts.push_back(q);
      pc.push_back(fi);
    };
    for (int q : orphan_points)
      for (int fi : fresh)
        if (sees(hull[fi], points_[q])) link(q, fi);
    // A point that saw only the surviving neighbor of a horizon edge can
    // still see the fresh face built on that edge.
    for (std::size_t h = 0; h < horizon.size(); ++h) {
      int fi = fresh[h];
      for (int q : hull[horizon[h].outside_face].conflicts) {
        if (on_hull[q] || q == p) continue;
        if (sees(hull[fi], points_[q])) link(q, fi);
      }
    }
    on_hull[p] = 1;
    point_conflicts[p].clear();
  }

  faces_.clear();
  std::vector<char> used(n, 0);
  for (const HullFace& f : hull)
    if (f.alive) {
      faces_.push_back({f.v[0], f.v[1], f.v[2]});
      used[f.v[0]] = used[f.v[1]] = used[f.v[2]] = 1;
      // Outward orientation relative to the contained origin.
      if (points_[f.v[0]].cross(points_[f.v[1]]).dot(points_[f.v[2]]) <= 0.0)
        throw NumericError("convex hull: inward-oriented face");
    }
  for (int v = 0; v < n; ++v)
    if (!used[v])
      throw NumericError("convex hull: point " + std::to_string(v) +
                         " is not a hull vertex (degenerate input?)");
  // Closed simplicial polyhedron: F = 2V - 4, V - E + F = 2.
  long V = n, F = static_cast<long>(faces_.size());
  if (F != 2 * V - 4) {
    std::unordered_map<std::uint64_t, int> uses;
    for (const Face& f : faces_)
      for (int k = 0; k < 3; ++k) {
        int a = f[k], b = f[(k + 1) % 3];
        if (a > b) std::swap(a, b);
        ++uses[dkey(a, b)];
      }
    long E = static_cast<long>(uses.size());
    if (V - E + F != 2)
      throw NumericError("convex hull: Euler characteristic " + std::to_string(V - E + F));
  }
}

void SphericalTriangulation::build_grid() {
  const int F = face_count();
  grid_n_ = std::clamp(static_cast<int>(std::ceil(std::sqrt(static_cast<double>(F)))), 8, 192);
  cells_.assign(static_cast<std::size_t>(grid_n_) * grid_n_, {});
  const double slack = 1e-7;

  for (int fi = 0; fi < F; ++fi) {
    const Face& f = faces_[fi];
    const Vec3 &a = points_[f[0]], &b = points_[f[1]], &c = points_[f[2]];
    Vec3 w = (b - a).cross(c - a);
    double wn = w.norm();
    if (wn < 1e-300) throw NumericError("grid index: degenerate hull face");
    w /= wn;
    // Spherical cap covering the geodesic triangle: axis = circumcenter
    // direction, radius = corner angle.
    double alpha = std::acos(std::clamp(w.dot(a), -1.0, 1.0)) + slack;
    double theta_w = std::acos(std::clamp(w.z(), -1.0, 1.0));
    double t_lo = std::max(0.0, theta_w - alpha);
    double t_hi = std::min(M_PI, theta_w + alpha);
    int r_lo = std::clamp(static_cast<int>(t_lo / M_PI * grid_n_), 0, grid_n_ - 1);
    int r_hi = std::clamp(static_cast<int>(t_hi / M_PI * grid_n_), 0, grid_n_ - 1);
    double phi_w = std::atan2(w.y(), w.x());

    const bool cap_hits_pole = theta_w - alpha < 0.0 || theta_w + alpha > M_PI;
    for (int r = r_lo; r <= r_hi; ++r) {
      double dphi = M_PI;
      if (!cap_hits_pole) {
        // Largest azimuthal half-width of the cap over this row's
        // inclination range. The width over t is unimodal with its interior
        // maximum at cos(t*) = cos(theta_w)/cos(alpha); checking the clamped
        // row endpoints, theta_w, and t* covers the exact maximum.
        double row_t0 = M_PI * r / grid_n_;
        double row_t1 = M_PI * (r + 1) / grid_n_;
        double lo_t = std::max(row_t0, t_lo), hi_t = std::min(row_t1, t_hi);
        if (lo_t > hi_t) continue;  // row does not intersect the cap
        double samples[4] = {lo_t, hi_t, theta_w, -1.0};
        double ca = std::cos(alpha);
        if (std::abs(ca) > 1e-12) {
          double ct = std::cos(theta_w) / ca;
          if (ct >= -1.0 && ct <= 1.0) samples[3] = std::acos(ct);
        }
        double best = 0.0;
        for (double t : samples) {
          if (t < lo_t || t > hi_t) continue;
          double st = std::sin(t) * std::sin(theta_w);
          if (st < 1e-12) {
            best = M_PI;
            break;
          }
          double cosd = (ca - std::cos(t) * std::cos(theta_w)) / st;
          if (cosd <= -1.0) {
            best = M_PI;
            break;
          }
          best = std::max(best, cosd >= 1.0 ? 0.0 : std::acos(cosd));
        }
        dphi = std::min(M_PI, best + 2.0 * M_PI / grid_n_);
      }
      double lo = phi_w - dphi, hi = phi_w + dphi;
      auto col_of = [&](double phi) {
        double ph = phi / (2.0 * M_PI) + 0.5;
        ph -= std::floor(ph);
        return std::clamp(static_cast<int>(ph * grid_n_), 0, grid_n_ - 1);
      };
      if (hi - lo >= 2.0 * M_PI - 1e-12) {
        for (int cidx = 0; cidx < grid_n_; ++cidx)
          cells_[static_cast<std::size_t>(r) * grid_n_ + cidx].push_back(fi);
      } else {
        int c_lo = col_of(lo), c_hi = col_of(hi);
        for (int step = 0;; ++step) {
          int cidx = (c_lo + step) % grid_n_;
          cells_[static_cast<std::size_t>(r) * grid_n_ + cidx].push_back(fi);
          if (cidx == c_hi || step > grid_n_) break;
        }
      }
    }
  }
  for (auto& cell : cells_) {
    std::sort(cell.begin(), cell.end());
    cell.erase(std::unique(cell.begin(), cell.end()), cell.end());
  }
}

bool SphericalTriangulation::face_hit(int fi, const Vec3& dir, BarycentricCoords& out) const {
  const Face& f = faces_[fi];
  const Vec3 &a = points_[f[0]], &b = points_[f[1]], &c = points_[f[2]];
  double s1 = dir.cross(b).dot(c);
  double s2 = a.cross(dir).dot(c);
  double s3 = a.cross(b).dot(dir);
  double sum = s1 + s2 + s3;
  if (sum <= 0.0) return false;
  double tol = -kLambdaTol * sum;
  if (s1 < tol || s2 < tol || s3 < tol) return false;
  out.face_index = fi;
  out.lambdas = {s1 / sum, s2 / sum, s3 / sum};
  for (int k = 0; k < 3; ++k) {
    if ((dir - points_[f[k]]).norm() < kVertexSnap) {
      out.lambdas = {0.0, 0.0, 0.0};
      out.lambdas[k] = 1.0;
      break;
    }
  }
  return true;
}

BarycentricCoords SphericalTriangulation::locate(const Vec3& dir) const {
  double n = dir.norm();
  if (!(n > 1e-12)) throw NumericError("locate: near-zero direction");
  Vec3 d = dir / n;
  SphericalCoord sc = to_spherical_coords(d);
  int r = std::clamp(static_cast<int>(sc.theta_hat * grid_n_), 0, grid_n_ - 1);
  int c = std::clamp(static_cast<int>(sc.phi_hat * grid_n_), 0, grid_n_ - 1);
  BarycentricCoords out;
  for (std::int32_t fi : cells_[static_cast<std::size_t>(r) * grid_n_ + c])
    if (face_hit(fi, d, out)) return out;
  ++fallbacks_;
  return locate_linear_scan(d);
}

BarycentricCoords SphericalTriangulation::locate_linear_scan(const Vec3& dir) const {
  double n = dir.norm();
  if (!(n > 1e-12)) throw NumericError("locate: near-zero direction");
  Vec3 d = dir / n;
  BarycentricCoords out;
  for (int fi = 0; fi < face_count(); ++fi)
    if (face_hit(fi, d, out)) return out;
  throw NumericError("locate: no face contains the query direction");
}

Vec3 bci_interpolate(const SphericalTriangulation& tri, const std::vector<Vec3>& values,
                     const Vec3& dir) {
  if (static_cast<int>(values.size()) != tri.point_count())
    throw ValidationError("bci_interpolate: values/points size mismatch");
  BarycentricCoords bc = tri.locate(dir);
  const Face& f = tri.faces()[bc.face_index];
  return bc.lambdas[0] * values[f[0]] + bc.lambdas[1] * values[f[1]] +
         bc.lambdas[2] * values[f[2]];
}

Mesh make_icosphere(int level) {
  if (level < 0 || level > 7)
    throw ValidationError("make_icosphere: level must be in [0, 7], got " +
                          std::to_string(level));
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> verts = {
      {-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t},  {0, 1, t},
      {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  for (Vec3& v : verts) v.normalize();
  std::vector<Face> faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                             {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                             {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                             {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (int l = 0; l < level; ++l) {
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      auto key = std::minmax(a, b);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      Vec3 m = (verts[a] + verts[b]).normalized();
      int id = static_cast<int>(verts.size());
      verts.push_back(m);
      midpoint.emplace(key, id);
      return id;
    };
    std::vector<Face> next;
    next.reserve(faces.size() * 4);
    for (const Face& f : faces) {
      int ab = mid(f[0], f[1]), bc = mid(f[1], f[2]), ca = mid(f[2], f[0]);
      next.push_back({f[0], ab, ca});
      next.push_back({f[1], bc, ab});
      next.push_back({f[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    faces = std::move(next);
  }
  Mesh mesh;
  mesh.vertices = std::move(verts);
  mesh.faces = std::move(faces);
  return mesh;
}

}  // namespace sis
