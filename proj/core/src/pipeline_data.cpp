#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "sis/pipeline.hpp"

namespace fs = std::filesystem;

namespace sis {

void ExperimentConfig::validate() const {
  if (task != "reconstruction" && task != "superres" && task != "fit" && task != "bci")
    throw ValidationError("config: unknown task '" + task + "'");
  if (epochs <= 0 || batch <= 0 || L <= 0 || latent <= 0 || local_dim <= 0 ||
      decoder_width <= 0 || decoder_layers < 3)
    throw ValidationError("config: non-positive size field");
  if (lr <= 0.0 || lr_decay <= 0.0 || lr_decay > 1.0)
    throw ValidationError("config: invalid learning-rate settings");
  if (gamma < 0.0) throw ValidationError("config: gamma must be >= 0");
  if (sample_points < 4) throw ValidationError("config: sample_points must be >= 4");
  if (noise_sigma < 0.0) throw ValidationError("config: noise_sigma must be >= 0");
}

nlohmann::json ExperimentConfig::to_json() const {
  return {{"task", task},
          {"epochs", epochs},
          {"batch", batch},
          {"lr", lr},
          {"lr_decay", lr_decay},
          {"weight_decay", weight_decay},
          {"gamma", gamma},
          {"exclude_filled", exclude_filled},
          {"sample_points", sample_points},
          {"noise_sigma", noise_sigma},
          {"surface_uniform", surface_uniform},
          {"seed", seed},
          {"L", L},
          {"latent", latent},
          {"local_dim", local_dim},
          {"decoder_width", decoder_width},
          {"decoder_layers", decoder_layers},
          {"threads", threads}};
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("task", c.task);
  get("epochs", c.epochs);
  get("batch", c.batch);
  get("lr", c.lr);
  get("lr_decay", c.lr_decay);
  get("weight_decay", c.weight_decay);
  get("gamma", c.gamma);
  get("exclude_filled", c.exclude_filled);
  get("sample_points", c.sample_points);
  get("noise_sigma", c.noise_sigma);
  get("surface_uniform", c.surface_uniform);
  get("seed", c.seed);
  get("L", c.L);
  get("latent", c.latent);
  get("local_dim", c.local_dim);
  get("decoder_width", c.decoder_width);
  get("decoder_layers", c.decoder_layers);
  get("threads", c.threads);
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path + ": " + e.what());
  }
  return from_json(j);
}

std::vector<int> DatasetManifest::split_indices(const std::string& split) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (entries[i].split == split) out.push_back(static_cast<int>(i));
  return out;
}

std::string DatasetManifest::resolve(const std::string& rel) const {
  fs::path p(rel);
  if (p.is_absolute()) return rel;
  return (fs::path(root_dir) / p).string();
}

Mesh DatasetManifest::load_entry(int index) const {
  return load_mesh(resolve(entries.at(index).path));
}

double bumpy_radius(double a, double b, double theta, double phi) {
  return 1.0 + a * std::sin(3.0 * theta) * std::cos(2.0 * phi) +
         b * std::cos(5.0 * phi) * std::sin(2.0 * theta);
}

Vec3 bumpy_surface_point(double a, double b, const Vec3& dir) {
  double rxy = std::hypot(dir.x(), dir.y());
  double theta = std::atan2(rxy, dir.z());
  double phi = std::atan2(dir.y(), dir.x());
  return bumpy_radius(a, b, theta, phi) * dir;
}

namespace {

void assign_splits(std::vector<ManifestEntry>& entries, std::uint64_t seed) {
  const int count = static_cast<int>(entries.size());
  const int n_test = count / 10;
  const int n_trainval = count - n_test;
  const int n_val = std::min(100, std::max(n_trainval / 5, n_trainval > 1 ? 1 : 0));
  Rng rng(Rng::derive(seed, 0x511f));
  std::vector<int> order(count);
  for (int i = 0; i < count; ++i) order[i] = i;
  rng.shuffle(order);
  for (int i = 0; i < count; ++i) {
    if (i < n_test)
      entries[order[i]].split = "test";
    else if (i < n_test + n_val)
      entries[order[i]].split = "val";
    else
      entries[order[i]].split = "train";
  }
}

TemplateData build_template(const Mesh& mesh, const std::vector<int>* face_labels) {
  TemplateData t;
  t.mesh = mesh;
  t.decomposition = decompose_genus0(mesh, face_labels);
  for (const Mesh& sub : t.decomposition.submeshes)
    t.embeddings.push_back(spherical_parameterize(sub));
  return t;
}

void write_template_files(const TemplateData& t, const std::string& dir,
                          nlohmann::json& tmpl_json) {
  save_mesh(t.mesh, (fs::path(dir) / "template.obj").string());
  save_decomposition(t.decomposition, (fs::path(dir) / "template.decomp.json").string());
  nlohmann::json embs = nlohmann::json::array();
  for (std::size_t i = 0; i < t.embeddings.size(); ++i) {
    std::string name = "template.sub" + std::to_string(i) + ".emb.ply";
    DistortionReport rep =
        quasi_conformal_distortion(t.decomposition.submeshes[i], t.embeddings[i]);
    save_embedding(t.embeddings[i], (fs::path(dir) / name).string(), "template.obj", rep.max);
    embs.push_back(name);
  }
  tmpl_json = {{"mesh", "template.obj"},
               {"decomposition", "template.decomp.json"},
               {"embeddings", embs}};
}

Standardizer fit_corpus_standardizer(const DatasetManifest& m) {
  std::vector<Mesh> train;
  for (const ManifestEntry& e : m.entries)
    if (e.split == "train" || e.split == "val") train.push_back(load_mesh(m.resolve(e.path)));
  return fit_standardizer(train);
}

}  // namespace

DatasetManifest gen_synthetic(int count, std::uint64_t seed, int level,
                              const std::string& out_dir) {
  if (count < 2) throw ValidationError("gen_synthetic: need at least 2 meshes");
  if (level < 0 || level > 6) throw ValidationError("gen_synthetic: level must be in [0, 6]");
  fs::create_directories(out_dir);

  DatasetManifest m;
  m.kind = "synthetic";
  m.level = level;
  m.seed = seed;
  m.root_dir = out_dir;

  Mesh grid = make_icosphere(level);
  m.tmpl = build_template(grid, nullptr);

  Rng rng(Rng::derive(seed, 0xb0b));
  for (int i = 0; i < count; ++i) {
    double a = rng.uniform(-0.15, 0.15);
    double b = rng.uniform(-0.15, 0.15);
    Mesh mesh;
    mesh.faces = grid.faces;
    mesh.vertices.reserve(grid.vertex_count());
    for (const Vec3& dir : grid.vertices) mesh.vertices.push_back(bumpy_surface_point(a, b, dir));
    std::ostringstream name;
    name << "mesh_" << std::setw(5) << std::setfill('0') << i << ".obj";
    save_mesh(mesh, (fs::path(out_dir) / name.str()).string());
    ManifestEntry e;
    e.path = name.str();
    e.label = "bumpy";
    e.param_a = a;
    e.param_b = b;
    m.entries.push_back(std::move(e));
  }
  assign_splits(m.entries, seed);
  m.standardizer = fit_corpus_standardizer(m);
  m.json_path = fs::absolute(fs::path(out_dir) / "manifest.json").string();
  save_manifest(m, m.json_path);
  return m;
}

DatasetManifest ingest_registered_corpus(const std::string& dir,
                                         const std::string& template_path, std::uint64_t seed,
                                         const std::string& out_dir,
                                         const std::string& splitter, int frame_window,
                                         const std::string& mask_path) {
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    if (ext == ".obj" || ext == ".ply") files.push_back(entry.path().string());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ValidationError("ingest: no OBJ/PLY meshes in " + dir);

  Mesh tmpl_mesh = load_mesh(template_path);
  const int n_template = tmpl_mesh.vertex_count();
  std::vector<std::string> mismatches;
  for (const std::string& f : files) {
    Mesh mesh = load_mesh(f);
    if (mesh.vertex_count() != n_template || mesh.faces != tmpl_mesh.faces)
      mismatches.push_back(f + " (" + std::to_string(mesh.vertex_count()) + " vertices)");
  }
  if (!mismatches.empty()) {
    std::string msg = "ingest: topology mismatch with template:";
    for (const std::string& f : mismatches) msg += "\n  " + f;
    throw ValidationError(msg);
  }

  fs::create_directories(out_dir);
  DatasetManifest m;
  m.kind = "ingested";
  m.seed = seed;
  m.root_dir = out_dir;
  std::vector<int> face_labels;
  if (!mask_path.empty()) face_labels = load_face_mask(mask_path, tmpl_mesh.face_count());
  m.tmpl = build_template(tmpl_mesh, mask_path.empty() ? nullptr : &face_labels);

  for (const std::string& f : files) {
    ManifestEntry e;
    e.path = fs::absolute(f).string();
    e.label = fs::path(f).stem().string();
    m.entries.push_back(std::move(e));
  }
  if (splitter == "iid") {
    assign_splits(m.entries, seed);
  } else if (splitter == "frames") {
    // Held-out test windows of consecutive frames, chosen uniformly.
    const int count = static_cast<int>(m.entries.size());
    const int n_test = count / 10;
    const int windows = std::max(1, n_test / std::max(1, frame_window));
    Rng rng(Rng::derive(seed, 0xf8a3e5));
    for (ManifestEntry& e : m.entries) e.split = "train";
    int assigned = 0;
    for (int w = 0; w < windows && assigned < n_test; ++w) {
      int start = static_cast<int>(rng.below(std::max(1, count - frame_window)));
      for (int i = start; i < std::min(count, start + frame_window) && assigned < n_test; ++i) {
        if (m.entries[i].split == "test") continue;
        m.entries[i].split = "test";
        ++assigned;
      }
    }
    std::vector<int> train_ids;
    for (int i = 0; i < count; ++i)
      if (m.entries[i].split == "train") train_ids.push_back(i);
    rng.shuffle(train_ids);
    int n_val = std::min(100, static_cast<int>(train_ids.size()) / 5);
    for (int i = 0; i < n_val; ++i) m.entries[train_ids[i]].split = "val";
  } else {
    throw ValidationError("ingest: unknown splitter '" + splitter + "'");
  }
  m.standardizer = fit_corpus_standardizer(m);
  m.json_path = fs::absolute(fs::path(out_dir) / "manifest.json").string();
  save_manifest(m, m.json_path);
  return m;
}

void save_manifest(const DatasetManifest& m, const std::string& json_path) {
  nlohmann::json j;
  j["kind"] = m.kind;
  j["level"] = m.level;
  j["seed"] = m.seed;
  j["unit_scale"] = m.unit_scale;
  j["standardizer"] = {{"mean", {m.standardizer.mean.x(), m.standardizer.mean.y(),
                                 m.standardizer.mean.z()}},
                       {"std", m.standardizer.std},
                       {"unit_scale", m.standardizer.unit_scale}};
  nlohmann::json tmpl_json;
  write_template_files(m.tmpl, fs::path(json_path).parent_path().string(), tmpl_json);
  j["template"] = tmpl_json;
  j["entries"] = nlohmann::json::array();
  for (const ManifestEntry& e : m.entries)
    j["entries"].push_back({{"path", e.path},
                            {"label", e.label},
                            {"split", e.split},
                            {"params", {{"a", e.param_a}, {"b", e.param_b}}}});
  std::ofstream out(json_path);
  if (!out) throw ValidationError("cannot write " + json_path);
  out << j.dump(2) << '\n';
}

DatasetManifest load_manifest(const std::string& json_path) {
  std::ifstream in(json_path);
  if (!in) throw ValidationError("cannot open " + json_path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(json_path + ": " + e.what());
  }
  DatasetManifest m;
  m.json_path = fs::absolute(json_path).string();
  m.root_dir = fs::absolute(json_path).parent_path().string();
  m.kind = j.at("kind").get<std::string>();
  m.level = j.at("level").get<int>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.unit_scale = j.at("unit_scale").get<double>();
  const auto& s = j.at("standardizer");
  m.standardizer.mean =
      Vec3(s.at("mean")[0].get<double>(), s.at("mean")[1].get<double>(),
           s.at("mean")[2].get<double>());
  m.standardizer.std = s.at("std").get<double>();
  m.standardizer.unit_scale = s.at("unit_scale").get<double>();
  const auto& t = j.at("template");
  m.tmpl.mesh = load_mesh(m.resolve(t.at("mesh").get<std::string>()));
  m.tmpl.decomposition = load_decomposition(m.resolve(t.at("decomposition").get<std::string>()));
  for (const auto& emb : t.at("embeddings"))
    m.tmpl.embeddings.push_back(load_embedding(m.resolve(emb.get<std::string>())));
  for (const auto& je : j.at("entries")) {
    ManifestEntry e;
    e.path = je.at("path").get<std::string>();
    e.label = je.at("label").get<std::string>();
    e.split = je.at("split").get<std::string>();
    e.param_a = je.at("params").at("a").get<double>();
    e.param_b = je.at("params").at("b").get<double>();
    m.entries.push_back(std::move(e));
  }
  return m;
}

void MetricsReport::finalize() {
  if (per_mesh.empty()) {
    mean = median = max = 0.0;
    return;
  }
  std::vector<double> errs;
  errs.reserve(per_mesh.size());
  double sum = 0.0;
  for (const auto& [path, e] : per_mesh) {
    errs.push_back(e);
    sum += e;
  }
  std::sort(errs.begin(), errs.end());
  mean = sum / errs.size();
  median = errs.size() % 2 == 1 ? errs[errs.size() / 2]
                                : 0.5 * (errs[errs.size() / 2 - 1] + errs[errs.size() / 2]);
  max = errs.back();
}

void MetricsReport::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path);
  out << "mesh,error\n";
  out.precision(12);
  for (const auto& [mesh, err] : per_mesh) out << mesh << ',' << err << '\n';
}

void MetricsReport::write_json(const std::string& path) const {
  nlohmann::json j;
  j["task"] = task;
  j["mean"] = mean;
  j["median"] = median;
  j["max"] = max;
  j["count"] = per_mesh.size();
  j["runtime_seconds"] = runtime_seconds;
  j["unit"] = unit;
  j["config"] = config_echo;
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path);
  out << j.dump(2) << '\n';
}

}  // namespace sis
