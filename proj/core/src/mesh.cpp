#include "sis/mesh.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <unordered_map>
#include <unordered_set>

namespace sis {

namespace {

inline std::uint64_t edge_key(int a, int b) {
  if (a > b) std::swap(a, b);
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
         static_cast<std::uint32_t>(b);
}

inline std::uint64_t directed_key(int a, int b) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
         static_cast<std::uint32_t>(b);
}

}  // namespace

int Mesh::edge_count() const {
  std::unordered_set<std::uint64_t> edges;
  edges.reserve(faces.size() * 3);
  for (const Face& f : faces)
    for (int k = 0; k < 3; ++k) edges.insert(edge_key(f[k], f[(k + 1) % 3]));
  return static_cast<int>(edges.size());
}

bool Mesh::is_closed() const {
  std::unordered_map<std::uint64_t, int> uses;
  uses.reserve(faces.size() * 3);
  for (const Face& f : faces)
    for (int k = 0; k < 3; ++k) ++uses[edge_key(f[k], f[(k + 1) % 3])];
  for (const auto& [key, n] : uses)
    if (n != 2) return false;
  return true;
}

void Mesh::validate() const {
  const int n = vertex_count();
  std::unordered_set<std::uint64_t> directed;
  directed.reserve(faces.size() * 3);
  for (std::size_t fi = 0; fi < faces.size(); ++fi) {
    const Face& f = faces[fi];
    for (int k = 0; k < 3; ++k) {
      if (f[k] < 0 || f[k] >= n)
        throw ValidationError("face " + std::to_string(fi) + ": index " +
                              std::to_string(f[k]) + " out of range [0, " +
                              std::to_string(n) + ")");
    }
    if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2])
      throw ValidationError("face " + std::to_string(fi) + ": degenerate (repeated vertex)");
    for (int k = 0; k < 3; ++k) {
      if (!directed.insert(directed_key(f[k], f[(k + 1) % 3])).second)
        throw ValidationError("face " + std::to_string(fi) + ": directed edge (" +
                              std::to_string(f[k]) + "," + std::to_string(f[(k + 1) % 3]) +
                              ") appears twice; orientation inconsistent or non-manifold");
    }
  }
}

Vec3 Mesh::bbox_min() const {
  Vec3 m = Vec3::Constant(std::numeric_limits<double>::infinity());
  for (const Vec3& v : vertices) m = m.cwiseMin(v);
  return m;
}

Vec3 Mesh::bbox_max() const {
  Vec3 m = Vec3::Constant(-std::numeric_limits<double>::infinity());
  for (const Vec3& v : vertices) m = m.cwiseMax(v);
  return m;
}

double Mesh::bbox_diagonal() const {
  if (vertices.empty()) return 0.0;
  return (bbox_max() - bbox_min()).norm();
}

NeighborStructure one_ring(const Mesh& mesh) {
  NeighborStructure ns;
  ns.one_ring.assign(mesh.vertex_count(), {});
  std::unordered_set<std::uint64_t> seen;
  seen.reserve(mesh.faces.size() * 3);
  for (const Face& f : mesh.faces) {
    for (int k = 0; k < 3; ++k) {
      int a = f[k], b = f[(k + 1) % 3];
      if (seen.insert(edge_key(a, b)).second) {
        ns.one_ring[a].push_back(b);
        ns.one_ring[b].push_back(a);
      }
    }
  }
  for (auto& ring : ns.one_ring) std::sort(ring.begin(), ring.end());
  return ns;
}

ComponentSplit split_connected_components(const Mesh& mesh) {
  const int n = mesh.vertex_count();
  // Union-find over vertices through face edges.
  std::vector<int> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  std::function<int(int)> find = [&](int x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };
  auto unite = [&](int a, int b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  };
  for (const Face& f : mesh.faces) {
    unite(f[0], f[1]);
    unite(f[1], f[2]);
  }

  // Components ordered by smallest original vertex index.
  std::map<int, int> root_to_comp;
  std::vector<int> comp_of(n);
  for (int v = 0; v < n; ++v) {
    int r = find(v);
    auto it = root_to_comp.try_emplace(r, static_cast<int>(root_to_comp.size())).first;
    comp_of[v] = it->second;
  }
  const int num_comp = static_cast<int>(root_to_comp.size());

  ComponentSplit out;
  out.components.resize(num_comp);
  out.index_maps.resize(num_comp);
  std::vector<int> local_index(n, -1);
  for (int v = 0; v < n; ++v) {
    int c = comp_of[v];
    local_index[v] = static_cast<int>(out.index_maps[c].size());
    out.index_maps[c].push_back(v);
    out.components[c].vertices.push_back(mesh.vertices[v]);
  }
  for (const Face& f : mesh.faces) {
    int c = comp_of[f[0]];
    out.components[c].faces.push_back({local_index[f[0]], local_index[f[1]], local_index[f[2]]});
  }
  return out;
}

std::vector<std::vector<int>> boundary_loops(const Mesh& mesh) {
  // Count undirected uses and record directed presence.
  std::unordered_map<std::uint64_t, int> uses;
  std::unordered_set<std::uint64_t> directed;
  uses.reserve(mesh.faces.size() * 3);
  directed.reserve(mesh.faces.size() * 3);
  for (const Face& f : mesh.faces) {
    for (int k = 0; k < 3; ++k) {
      int a = f[k], b = f[(k + 1) % 3];
      int cnt = ++uses[edge_key(a, b)];
      if (cnt > 2) {
        throw ValidationError("non-manifold edge (" + std::to_string(std::min(a, b)) + "," +
                              std::to_string(std::max(a, b)) + ") used by more than two faces");
      }
      directed.insert(directed_key(a, b));
    }
  }

  // A boundary directed edge belongs to one face and has no opposite.
  // next[u] = v walks the boundary keeping the surface on the left.
  std::map<int, int> next;
  for (const Face& f : mesh.faces) {
    for (int k = 0; k < 3; ++k) {
      int a = f[k], b = f[(k + 1) % 3];
      if (!directed.count(directed_key(b, a))) {
        if (next.count(a))
          throw ValidationError("vertex " + std::to_string(a) +
                                " has multiple outgoing boundary edges (non-manifold vertex)");
        next[a] = b;
      }
    }
  }

  std::vector<std::vector<int>> loops;
  std::set<int> open;
  for (const auto& [u, v] : next) open.insert(u);
  while (!open.empty()) {
    int start = *open.begin();
    std::vector<int> loop;
    int cur = start;
    do {
      loop.push_back(cur);
      open.erase(cur);
      auto it = next.find(cur);
      if (it == next.end())
        throw ValidationError("boundary walk broke at vertex " + std::to_string(cur));
      cur = it->second;
    } while (cur != start);
    loops.push_back(std::move(loop));
  }
  return loops;
}

HoleFillResult fill_holes(const Mesh& mesh) {
  HoleFillResult out;
  out.mesh = mesh;
  out.filled_vertex_flags.assign(mesh.vertex_count(), false);
  auto loops = boundary_loops(mesh);
  for (const auto& loop : loops) {
    Vec3 centroid = Vec3::Zero();
    for (int v : loop) centroid += mesh.vertices[v];
    centroid /= static_cast<double>(loop.size());
    int c = out.mesh.vertex_count();
    out.mesh.vertices.push_back(centroid);
    out.filled_vertex_flags.push_back(true);
    ++out.added_vertices;
    // Boundary edges (u -> v) run with the surface on the left; close each
    // with the reversed triangle so the fan matches the mesh orientation.
    for (std::size_t i = 0; i < loop.size(); ++i) {
      int u = loop[i], v = loop[(i + 1) % loop.size()];
      out.mesh.faces.push_back({v, u, c});
      ++out.added_faces;
    }
  }
  return out;
}

SubmeshDecomposition decompose_genus0(const Mesh& mesh, const std::vector<int>* face_labels) {
  mesh.validate();

  std::vector<Mesh> parts;
  std::vector<std::vector<int>> maps;
  if (face_labels != nullptr) {
    if (static_cast<int>(face_labels->size()) != mesh.face_count())
      throw ValidationError("face mask length " + std::to_string(face_labels->size()) +
                            " does not match face count " + std::to_string(mesh.face_count()));
    // Group faces by label; each group must own its vertices exclusively.
    std::map<int, std::vector<int>> groups;
    for (int fi = 0; fi < mesh.face_count(); ++fi) groups[(*face_labels)[fi]].push_back(fi);
    std::vector<int> owner(mesh.vertex_count(), -1);
    for (const auto& [label, fids] : groups) {
      for (int fi : fids)
        for (int k = 0; k < 3; ++k) {
          int v = mesh.faces[fi][k];
          if (owner[v] == -1)
            owner[v] = label;
          else if (owner[v] != label)
            throw ValidationError("face mask groups share vertex " + std::to_string(v) +
                                  "; groups must be vertex-disjoint");
        }
    }
    for (const auto& [label, fids] : groups) {
      Mesh part;
      std::vector<int> map;
      std::vector<int> local(mesh.vertex_count(), -1);
      for (int fi : fids) {
        Face nf;
        for (int k = 0; k < 3; ++k) {
          int v = mesh.faces[fi][k];
          if (local[v] == -1) {
            local[v] = part.vertex_count();
            part.vertices.push_back(mesh.vertices[v]);
            map.push_back(v);
          }
          nf[k] = local[v];
        }
        part.faces.push_back(nf);
      }
      parts.push_back(std::move(part));
      maps.push_back(std::move(map));
    }
  } else {
    ComponentSplit split = split_connected_components(mesh);
    parts = std::move(split.components);
    maps = std::move(split.index_maps);
  }

  SubmeshDecomposition out;
  for (std::size_t c = 0; c < parts.size(); ++c) {
    HoleFillResult filled = fill_holes(parts[c]);
    int chi = filled.mesh.euler_characteristic();
    if (chi != 2 || !filled.mesh.is_closed())
      throw ValidationError("submesh " + std::to_string(c) +
                            " is not genus-0 after hole filling (Euler characteristic " +
                            std::to_string(chi) + ")");
    out.submeshes.push_back(std::move(filled.mesh));
    out.index_maps.push_back(std::move(maps[c]));
    out.filled_vertex_flags.push_back(std::move(filled.filled_vertex_flags));
  }
  return out;
}

Standardizer fit_standardizer(const std::vector<Mesh>& meshes) {
  if (meshes.empty()) throw ValidationError("fit_standardizer: empty mesh list");
  Vec3 mean = Vec3::Zero();
  std::int64_t count = 0;
  for (const Mesh& m : meshes) {
    for (const Vec3& v : m.vertices) mean += v;
    count += m.vertex_count();
  }
  if (count == 0) throw ValidationError("fit_standardizer: no vertices");
  mean /= static_cast<double>(count);
  double ss = 0.0;
  for (const Mesh& m : meshes)
    for (const Vec3& v : m.vertices) ss += (v - mean).squaredNorm();
  double var = ss / static_cast<double>(3 * count);
  if (var <= 0.0) throw ValidationError("fit_standardizer: zero variance");
  Standardizer s;
  s.mean = mean;
  s.std = std::sqrt(var);
  return s;
}

}  // namespace sis
