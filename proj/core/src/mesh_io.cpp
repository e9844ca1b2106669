#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "sis/mesh.hpp"

namespace sis {

namespace {

std::string lowercase_ext(const std::string& path) {
  auto ext = std::filesystem::path(path).extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return ext;
}

[[noreturn]] void parse_fail(const std::string& name, int line, const std::string& msg) {
  throw ValidationError(name + ":" + std::to_string(line) + ": " + msg);
}

}  // namespace

Mesh parse_obj(std::istream& in, const std::string& name) {
  Mesh mesh;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      Vec3 v;
      if (!(ls >> v.x() >> v.y() >> v.z())) parse_fail(name, lineno, "malformed vertex");
      mesh.vertices.push_back(v);
    } else if (tag == "f") {
      std::vector<long> idx;
      std::string tok;
      while (ls >> tok) {
        // "i", "i/t", "i/t/n", "i//n" all start with the vertex index.
        std::size_t slash = tok.find('/');
        std::string head = slash == std::string::npos ? tok : tok.substr(0, slash);
        long i = 0;
        try {
          i = std::stol(head);
        } catch (const std::exception&) {
          parse_fail(name, lineno, "malformed face index '" + tok + "'");
        }
        idx.push_back(i);
      }
      if (idx.size() != 3)
        parse_fail(name, lineno,
                   "non-triangle face with " + std::to_string(idx.size()) + " vertices");
      Face f;
      for (int k = 0; k < 3; ++k) {
        long i = idx[k];
        if (i < 1 || i > static_cast<long>(mesh.vertices.size()))
          parse_fail(name, lineno, "index out of range: " + std::to_string(i));
        f[k] = static_cast<int>(i - 1);
      }
      mesh.faces.push_back(f);
    }
    // vn/vt/g/o/s/usemtl/mtllib ignored
  }
  mesh.validate();
  return mesh;
}

Mesh parse_ply(std::istream& in, const std::string& name) {
  std::string line;
  int lineno = 0;
  auto next_line = [&]() -> std::string {
    if (!std::getline(in, line)) parse_fail(name, lineno, "unexpected end of file");
    ++lineno;
    return line;
  };

  if (next_line() != "ply") parse_fail(name, lineno, "missing 'ply' magic");
  long n_vertices = -1, n_faces = -1;
  bool ascii = false;
  while (true) {
    std::istringstream ls(next_line());
    std::string tag;
    ls >> tag;
    if (tag == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt != "ascii") parse_fail(name, lineno, "binary PLY rejected; ASCII only");
      ascii = true;
    } else if (tag == "element") {
      std::string kind;
      long count;
      ls >> kind >> count;
      if (kind == "vertex")
        n_vertices = count;
      else if (kind == "face")
        n_faces = count;
    } else if (tag == "end_header") {
      break;
    }
    // property/comment lines skipped; x,y,z assumed first vertex properties
  }
  if (!ascii) parse_fail(name, lineno, "missing format declaration");
  if (n_vertices < 0 || n_faces < 0) parse_fail(name, lineno, "missing element counts");

  Mesh mesh;
  mesh.vertices.reserve(n_vertices);
  for (long i = 0; i < n_vertices; ++i) {
    std::istringstream ls(next_line());
    Vec3 v;
    if (!(ls >> v.x() >> v.y() >> v.z()))
      parse_fail(name, lineno, "malformed vertex record");
    mesh.vertices.push_back(v);
  }
  mesh.faces.reserve(n_faces);
  for (long i = 0; i < n_faces; ++i) {
    std::istringstream ls(next_line());
    int n;
    if (!(ls >> n)) parse_fail(name, lineno, "malformed face record");
    if (n != 3) parse_fail(name, lineno, "non-triangle face with " + std::to_string(n) + " vertices");
    Face f;
    for (int k = 0; k < 3; ++k) {
      long idx;
      if (!(ls >> idx)) parse_fail(name, lineno, "malformed face record");
      if (idx < 0 || idx >= n_vertices)
        parse_fail(name, lineno, "index out of range: " + std::to_string(idx));
      f[k] = static_cast<int>(idx);
    }
    mesh.faces.push_back(f);
  }
  mesh.validate();
  return mesh;
}

Mesh load_mesh(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path);
  const std::string ext = lowercase_ext(path);
  if (ext == ".obj") return parse_obj(in, path);
  if (ext == ".ply") return parse_ply(in, path);
  throw ValidationError("unsupported mesh format '" + ext + "' for " + path);
}

void save_mesh(const Mesh& mesh, const std::string& path) {
  if (mesh.vertices.empty()) throw ValidationError("empty mesh: " + path);
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path);
  out.precision(9);
  const std::string ext = lowercase_ext(path);
  if (ext == ".obj") {
    for (const Vec3& v : mesh.vertices)
      out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
    for (const Face& f : mesh.faces)
      out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
  } else if (ext == ".ply") {
    out << "ply\nformat ascii 1.0\n";
    out << "element vertex " << mesh.vertex_count() << "\n";
    out << "property double x\nproperty double y\nproperty double z\n";
    out << "element face " << mesh.face_count() << "\n";
    out << "property list uchar int vertex_indices\nend_header\n";
    for (const Vec3& v : mesh.vertices)
      out << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
    for (const Face& f : mesh.faces)
      out << "3 " << f[0] << ' ' << f[1] << ' ' << f[2] << '\n';
  } else {
    throw ValidationError("unsupported mesh format '" + ext + "' for " + path);
  }
  if (!out) throw ValidationError("write failure: " + path);
}

void save_decomposition(const SubmeshDecomposition& d, const std::string& json_path) {
  namespace fs = std::filesystem;
  fs::path base(json_path);
  fs::path dir = base.parent_path();
  std::string stem = base.stem().string();
  nlohmann::json j;
  j["submeshes"] = nlohmann::json::array();
  for (int c = 0; c < d.submesh_count(); ++c) {
    std::string obj_name = stem + ".sub" + std::to_string(c) + ".obj";
    save_mesh(d.submeshes[c], (dir / obj_name).string());
    nlohmann::json entry;
    entry["obj_path"] = obj_name;
    entry["index_map"] = d.index_maps[c];
    std::vector<int> flags(d.filled_vertex_flags[c].begin(), d.filled_vertex_flags[c].end());
    entry["filled_flags"] = flags;
    j["submeshes"].push_back(std::move(entry));
  }
  std::ofstream out(json_path);
  if (!out) throw ValidationError("cannot write " + json_path);
  out << j.dump(2) << '\n';
}

SubmeshDecomposition load_decomposition(const std::string& json_path) {
  std::ifstream in(json_path);
  if (!in) throw ValidationError("cannot open " + json_path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(json_path + ": " + e.what());
  }
  SubmeshDecomposition d;
  std::filesystem::path dir = std::filesystem::path(json_path).parent_path();
  for (const auto& entry : j.at("submeshes")) {
    d.submeshes.push_back(load_mesh((dir / entry.at("obj_path").get<std::string>()).string()));
    d.index_maps.push_back(entry.at("index_map").get<std::vector<int>>());
    auto flags = entry.at("filled_flags").get<std::vector<int>>();
    std::vector<bool> bf(flags.size());
    for (std::size_t i = 0; i < flags.size(); ++i) bf[i] = flags[i] != 0;
    d.filled_vertex_flags.push_back(std::move(bf));
  }
  return d;
}

std::vector<int> load_face_mask(const std::string& json_path, int face_count) {
  std::ifstream in(json_path);
  if (!in) throw ValidationError("cannot open " + json_path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(json_path + ": " + e.what());
  }
  auto labels = j.at("face_labels").get<std::vector<int>>();
  if (static_cast<int>(labels.size()) != face_count)
    throw ValidationError(json_path + ": face_labels length " + std::to_string(labels.size()) +
                          " does not match face count " + std::to_string(face_count));
  return labels;
}

}  // namespace sis
