#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sis/checkpoint.hpp"
#include "sis/models.hpp"

namespace sis {

struct ExperimentConfig {
  std::string task = "superres";  // reconstruction | superres | fit | bci
  int epochs = 200;
  int batch = 64;
  double lr = 0.001;
  double lr_decay = 0.98;
  double weight_decay = 1e-5;
  double gamma = 0.05;
  bool exclude_filled = true;
  int sample_points = 1000;
  double noise_sigma = 0.0;
  bool surface_uniform = false;  // recorded; vertex sampling is implemented
  std::uint64_t seed = 0;
  int L = 10;
  int latent = 64;
  int local_dim = 64;
  int decoder_width = 131;
  int decoder_layers = 6;
  int threads = 0;  // 0 = hardware concurrency

  void validate() const;
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig from_json_file(const std::string& path);
};

struct ManifestEntry {
  std::string path;
  std::string label;
  std::string split;  // train | val | test
  double param_a = 0.0, param_b = 0.0;  // synthetic radius-field parameters
};

struct TemplateData {
  Mesh mesh;
  SubmeshDecomposition decomposition;
  std::vector<SphericalEmbedding> embeddings;  // one per submesh
};

/// Dataset description persisted as JSON next to its mesh files. Splits are
/// disjoint; validation entries are carved out of the training portion.
struct DatasetManifest {
  std::string kind;  // synthetic | ingested
  int level = 4;
  std::uint64_t seed = 0;
  double unit_scale = 1.0;
  Standardizer standardizer;
  std::vector<ManifestEntry> entries;
  TemplateData tmpl;
  std::string root_dir;   // directory the manifest was written to / loaded from
  std::string json_path;  // manifest file location

  std::vector<int> split_indices(const std::string& split) const;
  std::string resolve(const std::string& rel) const;
  Mesh load_entry(int index) const;
};

/// Synthetic bumpy-sphere radius field: r = 1 + a sin(3 theta) cos(2 phi)
/// + b cos(5 phi) sin(2 theta), with theta/phi the inclination and azimuth.
double bumpy_radius(double a, double b, double theta, double phi);
Vec3 bumpy_surface_point(double a, double b, const Vec3& dir);

/// Generates `count` bumpy spheres on a level-`level` icosphere grid, writes
/// OBJ files plus manifest to out_dir, parameterizes the template, and fits
/// the standardizer over the training portion. Split is 9:1 train/test with
/// up to 100 validation samples taken from the training side.
DatasetManifest gen_synthetic(int count, std::uint64_t seed, int level,
                              const std::string& out_dir);

/// Builds a manifest over a directory of registered meshes sharing the
/// template topology. splitter: "iid" or "frames" (held-out windows of
/// `frame_window` consecutive files). Optional face mask forces the template
/// decomposition.
DatasetManifest ingest_registered_corpus(const std::string& dir,
                                         const std::string& template_path, std::uint64_t seed,
                                         const std::string& out_dir,
                                         const std::string& splitter = "iid",
                                         int frame_window = 10,
                                         const std::string& mask_path = "");

void save_manifest(const DatasetManifest& m, const std::string& json_path);
DatasetManifest load_manifest(const std::string& json_path);

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double val_error = 0.0;  // mean per-vertex L2, model units
  double lr = 0.0;
};

struct TrainResult {
  std::string checkpoint_path;
  std::vector<EpochStats> log;
  int best_epoch = -1;
  double best_val = 0.0;
};

/// Joint training of the mesh encoder and per-submesh decoders on the
/// reconstruction task; saves the best-validation checkpoint to out_path.
TrainResult train_reconstruction(const DatasetManifest& manifest, const ExperimentConfig& cfg,
                                 const std::string& out_path);

/// Self-supervised super-resolution training of per-submesh local encoders
/// and decoders; `fuse` switches between the full fusion features and the
/// coarse-feature ablation variant.
TrainResult train_superres(const DatasetManifest& manifest, const ExperimentConfig& cfg,
                           const std::string& out_path, bool fuse = true);

struct MetricsReport {
  std::string task;
  std::vector<std::pair<std::string, double>> per_mesh;  // entry path, error
  double mean = 0.0, median = 0.0, max = 0.0;
  double runtime_seconds = 0.0;
  std::string unit = "model units";
  nlohmann::json config_echo;

  void finalize();  // fills mean/median/max from per_mesh
  void write_csv(const std::string& path) const;
  void write_json(const std::string& path) const;
};

/// Mean per-vertex Euclidean error of a trained checkpoint over the test
/// split, de-standardized and scaled by unit_scale. For super-resolution
/// checkpoints `points` overrides the input sample size (-1 keeps the
/// trained configuration).
MetricsReport evaluate(const std::string& checkpoint_path, const DatasetManifest& manifest,
                       int points = -1, int threads = 0);

/// Barycentric-interpolation baseline under the same sampling protocol as
/// super-resolution evaluation (nested prefix samples per mesh).
MetricsReport run_bci_baseline(const DatasetManifest& manifest, int points, int threads = 0);

/// Decodes a checkpoint at the requested resolution.
/// resolution_spec: "template" | "icosphere:<level>" | "coords:<json file>".
/// For super-resolution checkpoints the conditioning input is sampled from
/// input_mesh with `points` samples (seeded by the manifest seed).
Mesh infer_mesh(const std::string& checkpoint_path, const DatasetManifest& manifest,
                const Mesh& input_mesh, const std::string& resolution_spec, int points = -1);

/// Trains the fusion and coarse-only variants with identical seeds and
/// reports both on the same split. Returns {full, ablated} reports at
/// cfg.sample_points input points.
std::pair<MetricsReport, MetricsReport> run_ablation_no_fusion(const DatasetManifest& manifest,
                                                               const ExperimentConfig& cfg,
                                                               const std::string& out_dir);

}  // namespace sis
