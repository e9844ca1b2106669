#include <numeric>

#include "pipeline_internal.hpp"

namespace sis::detail {

std::string decoder_name(int submesh) { return "dec" + std::to_string(submesh); }
std::string local_encoder_name(int submesh) { return "enc" + std::to_string(submesh); }

TaskContext build_task_context(const DatasetManifest& manifest, int L) {
  TaskContext ctx;
  ctx.manifest = &manifest;
  ctx.enc = FourierEncoding{L};
  ctx.original_vertex_count = manifest.tmpl.mesh.vertex_count();
  const SubmeshDecomposition& d = manifest.tmpl.decomposition;
  if (manifest.tmpl.embeddings.size() != d.submeshes.size())
    throw ValidationError("manifest template: embedding/submesh count mismatch");
  for (std::size_t s = 0; s < d.submeshes.size(); ++s) {
    SubmeshContext sub;
    sub.mesh = &d.submeshes[s];
    sub.index_map = &d.index_maps[s];
    sub.nbrs = one_ring(*sub.mesh);
    const int n = sub.mesh->vertex_count();
    if (manifest.tmpl.embeddings[s].point_count() != n)
      throw ValidationError("manifest template: embedding size mismatch for submesh " +
                            std::to_string(s));
    sub.include.assign(n, 1);
    for (int v = 0; v < n; ++v)
      if (d.filled_vertex_flags[s][v]) sub.include[v] = 0;
    for (int v = 0; v < n; ++v)
      if (sub.include[v]) sub.included_ids.push_back(v);
    if (static_cast<int>(d.index_maps[s].size()) != sub.included())
      throw ValidationError("manifest template: index map does not cover submesh " +
                            std::to_string(s));
    // Hole filling appends vertices, so the original block must be a prefix;
    // downstream code indexes index_map by included position.
    for (int q = 0; q < sub.included(); ++q)
      if (sub.included_ids[q] != q)
        throw ValidationError("manifest template: filled vertices are not a suffix in submesh " +
                              std::to_string(s));
    sub.sphere = manifest.tmpl.embeddings[s].sphere_points;
    sub.coords.resize(n);
    sub.encoded.resize(ctx.enc.coord_dims(), n);
    for (int v = 0; v < n; ++v) {
      sub.coords[v] = to_spherical_coords(sub.sphere[v]);
      ctx.enc.encode(sub.coords[v], sub.encoded.col(v).data());
    }
    ctx.total_included += sub.included();
    ctx.subs.push_back(std::move(sub));
  }
  return ctx;
}

EntryData load_entry_data(const TaskContext& ctx, const Mesh& mesh) {
  if (mesh.vertex_count() != ctx.original_vertex_count)
    throw ValidationError("entry mesh has " + std::to_string(mesh.vertex_count()) +
                          " vertices, template has " +
                          std::to_string(ctx.original_vertex_count));
  const Standardizer& st = ctx.manifest->standardizer;
  EntryData out;
  out.original = mesh.vertices;
  for (const SubmeshContext& sub : ctx.subs) {
    MatX<float> t = MatX<float>::Zero(3, sub.total());
    for (int local = 0; local < sub.included(); ++local) {
      int v = sub.included_ids[local];
      t.col(v) = st.apply(mesh.vertices[(*sub.index_map)[local]]).cast<float>();
    }
    out.targets.push_back(std::move(t));
  }
  return out;
}

std::vector<int> allocate_samples(const TaskContext& ctx, int points) {
  const int K = ctx.submesh_count();
  if (points < 4) throw ValidationError("sample_points must be >= 4");
  if (points > ctx.total_included)
    throw ValidationError("sample_points " + std::to_string(points) +
                          " exceeds available template vertices " +
                          std::to_string(ctx.total_included));
  std::vector<int> alloc(K, 0);
  std::vector<std::pair<double, int>> remainders;
  int assigned = 0;
  for (int s = 0; s < K; ++s) {
    double share =
        static_cast<double>(points) * ctx.subs[s].included() / ctx.total_included;
    alloc[s] = static_cast<int>(share);
    assigned += alloc[s];
    remainders.emplace_back(-(share - alloc[s]), s);
  }
  std::sort(remainders.begin(), remainders.end());
  for (int i = 0; assigned < points; ++i, ++assigned) alloc[remainders[i % K].second]++;
  for (int s = 0; s < K; ++s) {
    if (ctx.subs[s].included() < 4)
      throw ValidationError("submesh " + std::to_string(s) +
                            " has fewer than 4 vertices; cannot subsample");
    alloc[s] = std::clamp(alloc[s], 4, ctx.subs[s].included());
  }
  return alloc;
}

std::vector<std::vector<int>> sample_submesh_ids(const TaskContext& ctx, int points,
                                                 std::uint64_t seed, std::uint64_t tag) {
  std::vector<int> alloc = allocate_samples(ctx, points);
  std::vector<std::vector<int>> out(ctx.submesh_count());
  for (int s = 0; s < ctx.submesh_count(); ++s) {
    Rng rng(Rng::derive(seed, tag * 1315423911ull + static_cast<std::uint64_t>(s)));
    std::vector<int> perm =
        rng.sample_without_replacement(ctx.subs[s].included(), alloc[s]);
    out[s].reserve(alloc[s]);
    for (int p : perm) out[s].push_back(ctx.subs[s].included_ids[p]);
  }
  return out;
}

LocalConditioning build_local_conditioning(const TaskContext& ctx, const EntryData& entry,
                                           const std::vector<std::vector<int>>& sample_ids,
                                           double noise_sigma, std::uint64_t noise_seed) {
  LocalConditioning cond;
  cond.sample_ids = sample_ids;
  const double std_sigma = noise_sigma / ctx.manifest->standardizer.std;
  for (int s = 0; s < ctx.submesh_count(); ++s) {
    const SubmeshContext& sub = ctx.subs[s];
    const std::vector<int>& ids = sample_ids[s];
    std::vector<Vec3> pts;
    pts.reserve(ids.size());
    for (int v : ids) pts.push_back(sub.sphere[v]);
    cond.tris.push_back(std::make_unique<SphericalTriangulation>(std::move(pts)));

    MatX<float> x(3 + ctx.enc.coord_dims(), static_cast<int>(ids.size()));
    Rng noise(Rng::derive(noise_seed, 0xad0 + static_cast<std::uint64_t>(s)));
    for (std::size_t i = 0; i < ids.size(); ++i) {
      int v = ids[i];
      Eigen::Vector3f p = entry.targets[s].col(v);
      if (noise_sigma > 0.0)
        for (int r = 0; r < 3; ++r) p(r) += static_cast<float>(std_sigma * noise.normal());
      x.col(static_cast<int>(i)).segment(0, 3) = p;
      x.col(static_cast<int>(i)).segment(3, ctx.enc.coord_dims()) = sub.encoded.col(v);
    }
    cond.encoder_inputs.push_back(std::move(x));
  }
  return cond;
}

std::vector<Vec3> superres_predict(const TaskContext& ctx,
                                   const std::vector<MlpNetwork<float>>& encoders,
                                   const std::vector<MlpNetwork<float>>& decoders, bool fuse,
                                   const LocalConditioning& cond) {
  const Standardizer& st = ctx.manifest->standardizer;
  std::vector<Vec3> predicted(ctx.original_vertex_count);
  for (int s = 0; s < ctx.submesh_count(); ++s) {
    const SubmeshContext& sub = ctx.subs[s];
    LocalFeatureField<float> field{encoders[s].forward(cond.encoder_inputs[s]),
                                   cond.tris[s].get()};
    std::vector<FieldLocation> locs(sub.included());
    std::vector<SphericalCoord> coords(sub.included());
    for (int q = 0; q < sub.included(); ++q) {
      int v = sub.included_ids[q];
      locs[q] = locate_in_field(*cond.tris[s], sub.sphere[v]);
      coords[q] = sub.coords[v];
    }
    MatX<float> inputs = fuse ? assemble_fused_inputs(field, locs, coords, ctx.enc)
                              : assemble_coarse_inputs(field, locs, coords, ctx.enc);
    MatX<float> y = decode_batch(decoders[s], inputs);
    for (int q = 0; q < sub.included(); ++q)
      predicted[(*sub.index_map)[q]] = st.invert(y.col(q).cast<double>());
  }
  return predicted;
}

std::vector<Vec3> recon_predict(const TaskContext& ctx, const GlobalEncoder<float>& encoder,
                                const std::vector<MlpNetwork<float>>& decoders,
                                const EntryData& entry) {
  const Standardizer& st = ctx.manifest->standardizer;
  // Encoder consumes the standardized original vertices in template order.
  MatX<float> verts(3, ctx.original_vertex_count);
  for (int v = 0; v < ctx.original_vertex_count; ++v)
    verts.col(v) = st.apply(entry.original[v]).cast<float>();
  ColX<float> z_g = encoder.encode(verts);

  std::vector<Vec3> predicted(ctx.original_vertex_count);
  for (int s = 0; s < ctx.submesh_count(); ++s) {
    const SubmeshContext& sub = ctx.subs[s];
    MatX<float> inputs(z_g.size() + ctx.enc.coord_dims(), sub.included());
    for (int q = 0; q < sub.included(); ++q) {
      inputs.col(q).segment(0, z_g.size()) = z_g;
      inputs.col(q).segment(z_g.size(), ctx.enc.coord_dims()) =
          sub.encoded.col(sub.included_ids[q]);
    }
    MatX<float> y = decode_batch(decoders[s], inputs);
    for (int q = 0; q < sub.included(); ++q)
      predicted[(*sub.index_map)[q]] = st.invert(y.col(q).cast<double>());
  }
  return predicted;
}

double mean_vertex_error(const std::vector<Vec3>& predicted, const std::vector<Vec3>& truth,
                         double unit_scale) {
  if (predicted.size() != truth.size())
    throw ValidationError("mean_vertex_error: size mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) sum += (predicted[i] - truth[i]).norm();
  return unit_scale * sum / static_cast<double>(predicted.size());
}

}  // namespace sis::detail
