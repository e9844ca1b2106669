#include <chrono>
#include <filesystem>
#include <fstream>

#include "pipeline_internal.hpp"

namespace sis {

namespace {

using detail::EntryData;
using detail::LocalConditioning;
using detail::TaskContext;

struct LoadedModel {
  std::string task;
  bool fuse = true;
  int submeshes = 1;
  ExperimentConfig config;
  std::vector<MlpNetwork<float>> encoders;  // local encoders (superres)
  GlobalEncoder<float> global_encoder;      // reconstruction
  std::vector<MlpNetwork<float>> decoders;
};

LoadedModel load_model(const std::string& checkpoint_path) {
  Checkpoint ck(checkpoint_path);
  LoadedModel m;
  m.task = ck.extra().at("task").get<std::string>();
  m.submeshes = ck.extra().at("submeshes").get<int>();
  m.config = ExperimentConfig::from_json(ck.extra().at("config"));
  if (m.task == "superres" || m.task == "superres_coarse") {
    m.fuse = ck.extra().at("fuse").get<bool>();
    for (int s = 0; s < m.submeshes; ++s) {
      m.encoders.push_back(ck.network(detail::local_encoder_name(s)));
      m.decoders.push_back(ck.network(detail::decoder_name(s)));
    }
  } else if (m.task == "reconstruction") {
    m.global_encoder = GlobalEncoder<float>("encg", m.config.latent);
    m.global_encoder.pointwise() = ck.network("encg.point");
    m.global_encoder.head() = ck.network("encg.head");
    for (int s = 0; s < m.submeshes; ++s)
      m.decoders.push_back(ck.network(detail::decoder_name(s)));
  } else {
    throw ValidationError(checkpoint_path + ": unknown task '" + m.task + "'");
  }
  return m;
}

double entry_error(const TaskContext& ctx, const LoadedModel& model, int entry_index,
                   const EntryData& entry, int points) {
  std::vector<Vec3> pred;
  if (model.task == "reconstruction") {
    pred = detail::recon_predict(ctx, model.global_encoder, model.decoders, entry);
  } else {
    auto ids = detail::sample_submesh_ids(ctx, points, ctx.manifest->seed,
                                          detail::kEvalSampleTag +
                                              static_cast<std::uint64_t>(entry_index));
    LocalConditioning cond = detail::build_local_conditioning(ctx, entry, ids, 0.0, 0);
    pred = detail::superres_predict(ctx, model.encoders, model.decoders, model.fuse, cond);
  }
  return detail::mean_vertex_error(pred, entry.original, ctx.manifest->unit_scale);
}

}  // namespace

MetricsReport evaluate(const std::string& checkpoint_path, const DatasetManifest& manifest,
                       int points, int threads) {
  auto t0 = std::chrono::steady_clock::now();
  LoadedModel model = load_model(checkpoint_path);
  TaskContext ctx = detail::build_task_context(manifest, model.config.L);
  if (points < 0) points = model.config.sample_points;

  std::vector<int> test_ids = manifest.split_indices("test");
  if (test_ids.empty()) throw ValidationError("evaluate: empty test split");
  std::vector<double> errs(test_ids.size(), 0.0);
  parallel_for(static_cast<int>(test_ids.size()), threads, [&](int i) {
    EntryData entry = detail::load_entry_data(ctx, manifest.load_entry(test_ids[i]));
    errs[i] = entry_error(ctx, model, test_ids[i], entry, points);
  });

  MetricsReport rep;
  rep.task = model.task;
  rep.unit = manifest.unit_scale == 1.0 ? "model units" : "mm";
  rep.config_echo = model.config.to_json();
  rep.config_echo["eval_points"] = points;
  rep.config_echo["checkpoint"] = checkpoint_path;
  // Mean per-vertex Euclidean distance; "L2" in reports.
  rep.config_echo["metric"] = "mean per-vertex euclidean distance";
  for (std::size_t i = 0; i < test_ids.size(); ++i)
    rep.per_mesh.emplace_back(manifest.entries[test_ids[i]].path, errs[i]);
  rep.finalize();
  rep.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

MetricsReport run_bci_baseline(const DatasetManifest& manifest, int points, int threads) {
  auto t0 = std::chrono::steady_clock::now();
  TaskContext ctx = detail::build_task_context(manifest, 10);
  std::vector<int> test_ids = manifest.split_indices("test");
  if (test_ids.empty()) throw ValidationError("run_bci_baseline: empty test split");

  std::vector<double> errs(test_ids.size(), 0.0);
  parallel_for(static_cast<int>(test_ids.size()), threads, [&](int i) {
    Mesh mesh = manifest.load_entry(test_ids[i]);
    if (mesh.vertex_count() != ctx.original_vertex_count)
      throw ValidationError("bci: entry vertex count mismatch");
    auto ids = detail::sample_submesh_ids(ctx, points, manifest.seed,
                                          detail::kEvalSampleTag +
                                              static_cast<std::uint64_t>(test_ids[i]));
    double sum = 0.0;
    long count = 0;
    for (int s = 0; s < ctx.submesh_count(); ++s) {
      const detail::SubmeshContext& sub = ctx.subs[s];
      std::vector<Vec3> pts, values;
      pts.reserve(ids[s].size());
      for (int v : ids[s]) {
        pts.push_back(sub.sphere[v]);
        values.push_back(mesh.vertices[(*sub.index_map)[v]]);
      }
      SphericalTriangulation tri(std::move(pts));
      for (int q = 0; q < sub.included(); ++q) {
        Vec3 interp = bci_interpolate(tri, values, sub.sphere[sub.included_ids[q]]);
        sum += (interp - mesh.vertices[(*sub.index_map)[q]]).norm();
        ++count;
      }
    }
    errs[i] = manifest.unit_scale * sum / static_cast<double>(count);
  });

  MetricsReport rep;
  rep.task = "bci";
  rep.unit = manifest.unit_scale == 1.0 ? "model units" : "mm";
  rep.config_echo = {{"points", points},
                     {"metric", "mean per-vertex euclidean distance"}};
  for (std::size_t i = 0; i < test_ids.size(); ++i)
    rep.per_mesh.emplace_back(manifest.entries[test_ids[i]].path, errs[i]);
  rep.finalize();
  rep.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

namespace {

std::vector<std::pair<int, SphericalCoord>> parse_coords_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open coordinate file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path + ": " + e.what());
  }
  std::vector<std::pair<int, SphericalCoord>> out;
  for (const auto& item : j.at("coords")) {
    int sub = item.contains("submesh") ? item.at("submesh").get<int>() : 0;
    SphericalCoord c{item.at("theta_hat").get<double>(), item.at("phi_hat").get<double>()};
    if (c.theta_hat < 0.0 || c.theta_hat > 1.0 || c.phi_hat < 0.0 || c.phi_hat > 1.0)
      throw ValidationError(path + ": coordinate outside [0,1]^2");
    out.emplace_back(sub, c);
  }
  return out;
}

}  // namespace

Mesh infer_mesh(const std::string& checkpoint_path, const DatasetManifest& manifest,
                const Mesh& input_mesh, const std::string& resolution_spec, int points) {
  LoadedModel model = load_model(checkpoint_path);
  TaskContext ctx = detail::build_task_context(manifest, model.config.L);
  const Standardizer& st = manifest.standardizer;
  const int K = ctx.submesh_count();
  if (points < 0) points = model.config.sample_points;

  EntryData entry = detail::load_entry_data(ctx, input_mesh);

  // Conditioning per submesh: either the global latent or a local feature
  // field sampled from the input mesh.
  ColX<float> z_g;
  LocalConditioning cond;
  std::vector<LocalFeatureField<float>> fields(K);
  if (model.task == "reconstruction") {
    MatX<float> verts(3, ctx.original_vertex_count);
    for (int v = 0; v < ctx.original_vertex_count; ++v)
      verts.col(v) = st.apply(entry.original[v]).cast<float>();
    z_g = model.global_encoder.encode(verts);
  } else {
    auto ids = detail::sample_submesh_ids(ctx, points, manifest.seed, 0x1f3a);
    cond = detail::build_local_conditioning(ctx, entry, ids, 0.0, 0);
    for (int s = 0; s < K; ++s)
      fields[s] = {model.encoders[s].forward(cond.encoder_inputs[s]), cond.tris[s].get()};
  }

  auto decode_queries = [&](int s, const std::vector<SphericalCoord>& coords,
                            const std::vector<Vec3>& dirs) {
    const int q = static_cast<int>(coords.size());
    MatX<float> inputs;
    if (model.task == "reconstruction") {
      inputs.resize(z_g.size() + ctx.enc.coord_dims(), q);
      for (int i = 0; i < q; ++i) {
        inputs.col(i).segment(0, z_g.size()) = z_g;
        ctx.enc.encode(coords[i], inputs.col(i).data() + z_g.size());
      }
    } else {
      std::vector<FieldLocation> locs(q);
      for (int i = 0; i < q; ++i) locs[i] = locate_in_field(*cond.tris[s], dirs[i]);
      inputs = model.fuse ? assemble_fused_inputs(fields[s], locs, coords, ctx.enc)
                          : assemble_coarse_inputs(fields[s], locs, coords, ctx.enc);
    }
    MatX<float> y = decode_batch(model.decoders[s], inputs);
    std::vector<Vec3> out(q);
    for (int i = 0; i < q; ++i) out[i] = st.invert(y.col(i).cast<double>());
    return out;
  };

  Mesh result;
  if (resolution_spec == "template") {
    result.vertices.resize(ctx.original_vertex_count);
    result.faces = manifest.tmpl.mesh.faces;
    for (int s = 0; s < K; ++s) {
      const detail::SubmeshContext& sub = ctx.subs[s];
      std::vector<SphericalCoord> coords(sub.included());
      std::vector<Vec3> dirs(sub.included());
      for (int q = 0; q < sub.included(); ++q) {
        coords[q] = sub.coords[sub.included_ids[q]];
        dirs[q] = sub.sphere[sub.included_ids[q]];
      }
      std::vector<Vec3> pred = decode_queries(s, coords, dirs);
      for (int q = 0; q < sub.included(); ++q) result.vertices[(*sub.index_map)[q]] = pred[q];
    }
  } else if (resolution_spec.rfind("icosphere:", 0) == 0) {
    int level = std::stoi(resolution_spec.substr(10));
    Mesh grid = make_icosphere(level);
    std::vector<SphericalCoord> coords(grid.vertex_count());
    for (int v = 0; v < grid.vertex_count(); ++v)
      coords[v] = to_spherical_coords(grid.vertices[v]);
    for (int s = 0; s < K; ++s) {
      std::vector<Vec3> pred = decode_queries(s, coords, grid.vertices);
      int base = result.vertex_count();
      for (const Vec3& p : pred) result.vertices.push_back(p);
      for (const Face& f : grid.faces)
        result.faces.push_back({f[0] + base, f[1] + base, f[2] + base});
    }
  } else if (resolution_spec.rfind("coords:", 0) == 0) {
    auto queries = parse_coords_file(resolution_spec.substr(7));
    std::vector<std::vector<SphericalCoord>> per_sub(K);
    std::vector<std::vector<std::size_t>> slots(K);
    for (std::size_t i = 0; i < queries.size(); ++i) {
      int s = queries[i].first;
      if (s < 0 || s >= K)
        throw ValidationError("coordinate file references submesh " + std::to_string(s));
      per_sub[s].push_back(queries[i].second);
      slots[s].push_back(i);
    }
    result.vertices.resize(queries.size());
    for (int s = 0; s < K; ++s) {
      if (per_sub[s].empty()) continue;
      std::vector<Vec3> dirs(per_sub[s].size());
      for (std::size_t i = 0; i < per_sub[s].size(); ++i)
        dirs[i] = from_spherical_coords(per_sub[s][i]);
      std::vector<Vec3> pred = decode_queries(s, per_sub[s], dirs);
      for (std::size_t i = 0; i < pred.size(); ++i) result.vertices[slots[s][i]] = pred[i];
    }
  } else {
    throw ValidationError("infer: unknown resolution spec '" + resolution_spec +
                          "' (template | icosphere:<level> | coords:<file>)");
  }
  return result;
}

std::pair<MetricsReport, MetricsReport> run_ablation_no_fusion(const DatasetManifest& manifest,
                                                               const ExperimentConfig& cfg,
                                                               const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  std::string full_path = (fs::path(out_dir) / "superres_full.sis").string();
  std::string coarse_path = (fs::path(out_dir) / "superres_coarse.sis").string();
  train_superres(manifest, cfg, full_path, /*fuse=*/true);
  train_superres(manifest, cfg, coarse_path, /*fuse=*/false);
  MetricsReport full = evaluate(full_path, manifest, cfg.sample_points, cfg.threads);
  MetricsReport coarse = evaluate(coarse_path, manifest, cfg.sample_points, cfg.threads);
  full.write_csv((fs::path(out_dir) / "ablation_full.csv").string());
  full.write_json((fs::path(out_dir) / "ablation_full.json").string());
  coarse.write_csv((fs::path(out_dir) / "ablation_coarse.csv").string());
  coarse.write_json((fs::path(out_dir) / "ablation_coarse.json").string());
  return {full, coarse};
}

}  // namespace sis
