#pragma once

#include <memory>

#include "sis/pipeline.hpp"

namespace sis::detail {

/// Per-submesh geometry cache shared by training, evaluation and inference:
/// coordinates, Fourier encodings, neighbor structure and inclusion masks
/// derived from one manifest template.
struct SubmeshContext {
  const Mesh* mesh = nullptr;
  const std::vector<int>* index_map = nullptr;
  NeighborStructure nbrs;
  std::vector<char> include;        // non-filled vertices
  std::vector<int> included_ids;    // submesh vertex ids with ground truth
  std::vector<Vec3> sphere;         // per-vertex unit sphere points
  std::vector<SphericalCoord> coords;
  MatX<float> encoded;              // 4L x n cached coordinate encodings

  int total() const { return static_cast<int>(include.size()); }
  int included() const { return static_cast<int>(included_ids.size()); }
};

struct TaskContext {
  const DatasetManifest* manifest = nullptr;
  FourierEncoding enc;
  std::vector<SubmeshContext> subs;
  int original_vertex_count = 0;
  int total_included = 0;

  int submesh_count() const { return static_cast<int>(subs.size()); }
};

TaskContext build_task_context(const DatasetManifest& manifest, int L);

/// Standardized per-submesh targets (3 x n, filled columns zero) plus the
/// raw original vertices of one corpus entry.
struct EntryData {
  std::vector<MatX<float>> targets;
  std::vector<Vec3> original;
};

EntryData load_entry_data(const TaskContext& ctx, const Mesh& mesh);

/// Proportional largest-remainder allocation of `points` samples across
/// submeshes (minimum 4 per submesh).
std::vector<int> allocate_samples(const TaskContext& ctx, int points);

/// Deterministic per-entry sample of submesh vertex ids: a fixed permutation
/// of each submesh's included ids, so prefixes are nested across point
/// counts. `tag` separates training epochs from the evaluation protocol.
std::vector<std::vector<int>> sample_submesh_ids(const TaskContext& ctx, int points,
                                                 std::uint64_t seed, std::uint64_t tag);

/// Super-resolution conditioning state for one entry: per-submesh
/// triangulation of the sampled sphere points plus encoded features.
struct LocalConditioning {
  std::vector<std::vector<int>> sample_ids;
  std::vector<std::unique_ptr<SphericalTriangulation>> tris;
  std::vector<MatX<float>> encoder_inputs;  // (3+4L) x n_i
};

LocalConditioning build_local_conditioning(const TaskContext& ctx, const EntryData& entry,
                                           const std::vector<std::vector<int>>& sample_ids,
                                           double noise_sigma, std::uint64_t noise_seed);

/// Decodes one entry at every included template coordinate and returns the
/// original-vertex predictions in model units.
std::vector<Vec3> superres_predict(const TaskContext& ctx,
                                   const std::vector<MlpNetwork<float>>& encoders,
                                   const std::vector<MlpNetwork<float>>& decoders, bool fuse,
                                   const LocalConditioning& cond);

std::vector<Vec3> recon_predict(const TaskContext& ctx, const GlobalEncoder<float>& encoder,
                                const std::vector<MlpNetwork<float>>& decoders,
                                const EntryData& entry);

double mean_vertex_error(const std::vector<Vec3>& predicted, const std::vector<Vec3>& truth,
                         double unit_scale);

/// Names used inside checkpoints.
std::string decoder_name(int submesh);
std::string local_encoder_name(int submesh);

/// Sampling-stream tag for the shared evaluation protocol; adding the global
/// entry index gives every mesh one fixed nested permutation, reused by the
/// super-resolution evaluation, the BCI baseline, and per-epoch validation.
inline constexpr std::uint64_t kEvalSampleTag = 0xe7a1;

}  // namespace sis::detail
