#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sis/common.hpp"

namespace sis {

/// Triangle mesh with validated indices and globally consistent face
/// orientation (every interior edge appears once per direction).
struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<Face> faces;

  int vertex_count() const { return static_cast<int>(vertices.size()); }
  int face_count() const { return static_cast<int>(faces.size()); }

  /// Number of undirected edges.
  int edge_count() const;

  /// V - E + F; 2 for a closed connected genus-0 surface.
  int euler_characteristic() const { return vertex_count() - edge_count() + face_count(); }

  bool is_closed() const;

  /// Throws ValidationError on out-of-range indices, degenerate faces, or a
  /// repeated directed edge (inconsistent orientation / non-manifold fan).
  void validate() const;

  Vec3 bbox_min() const;
  Vec3 bbox_max() const;
  double bbox_diagonal() const;
};

/// Per-vertex one-ring adjacency; `one_ring[i]` is sorted ascending and
/// symmetric (j in one_ring[i] iff i in one_ring[j]).
struct NeighborStructure {
  std::vector<std::vector<int>> one_ring;

  int vertex_count() const { return static_cast<int>(one_ring.size()); }
};

NeighborStructure one_ring(const Mesh& mesh);

/// Result of splitting a mesh into face-connected components. `index_maps[c][i]`
/// is the original vertex index of component c's vertex i. Vertices that touch
/// no face become singleton components.
struct ComponentSplit {
  std::vector<Mesh> components;
  std::vector<std::vector<int>> index_maps;
};

ComponentSplit split_connected_components(const Mesh& mesh);

/// Ordered boundary cycles. Each loop lists vertex indices along directed
/// boundary edges (edges used by exactly one face). Throws ValidationError on
/// a non-manifold edge, naming the edge.
std::vector<std::vector<int>> boundary_loops(const Mesh& mesh);

/// Closes every boundary loop with a triangle fan around one new vertex at the
/// loop centroid. Returns the closed mesh plus per-vertex flags marking the
/// added vertices.
struct HoleFillResult {
  Mesh mesh;
  std::vector<bool> filled_vertex_flags;
  int added_vertices = 0;
  int added_faces = 0;
};

HoleFillResult fill_holes(const Mesh& mesh);

/// Genus-0 decomposition: connected components, holes filled, every part
/// verified closed with Euler characteristic 2.
struct SubmeshDecomposition {
  std::vector<Mesh> submeshes;
  /// index_maps[c][i] = original vertex index of submesh c's vertex i, for
  /// i < index_maps[c].size(); vertices beyond that were added by hole filling.
  std::vector<std::vector<int>> index_maps;
  std::vector<std::vector<bool>> filled_vertex_flags;

  int submesh_count() const { return static_cast<int>(submeshes.size()); }
};

/// Optional per-face labels can force a split (e.g. a template whose parts are
/// not separate components). Labeled groups must not share vertices.
SubmeshDecomposition decompose_genus0(const Mesh& mesh,
                                      const std::vector<int>* face_labels = nullptr);

/// Corpus standardization: global coordinate mean and one scalar standard
/// deviation pooled over every coordinate of every vertex.
struct Standardizer {
  Vec3 mean = Vec3::Zero();
  double std = 1.0;
  double unit_scale = 1.0;  // model units -> millimeters; 1.0 when unknown

  Vec3 apply(const Vec3& v) const { return (v - mean) / std; }
  Vec3 invert(const Vec3& v) const { return v * std + mean; }
};

Standardizer fit_standardizer(const std::vector<Mesh>& meshes);

// ---- File I/O (ASCII OBJ and PLY) ----

/// Loads a triangle mesh; the format is chosen by extension (.obj / .ply).
/// Errors carry the line or record position. Binary PLY is rejected.
Mesh load_mesh(const std::string& path);
void save_mesh(const Mesh& mesh, const std::string& path);

Mesh parse_obj(std::istream& in, const std::string& name);
Mesh parse_ply(std::istream& in, const std::string& name);

/// Decomposition persisted as JSON:
/// {"submeshes":[{"obj_path":...,"index_map":[...],"filled_flags":[...]}]}
/// Submesh geometry goes to OBJ files next to the JSON.
void save_decomposition(const SubmeshDecomposition& d, const std::string& json_path);
SubmeshDecomposition load_decomposition(const std::string& json_path);

/// Optional mask file: {"face_labels":[...]} with one label per face.
std::vector<int> load_face_mask(const std::string& json_path, int face_count);

}  // namespace sis
