#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "sis/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonOpts {
  std::string config_path;
  std::int64_t seed = -1;
  int epochs = -1;
  int points = -1;
  std::string out;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_path, "Experiment config JSON");
  cmd->add_option("--seed", o.seed, "Override the config seed");
  cmd->add_option("--epochs", o.epochs, "Override the epoch count");
  cmd->add_option("--points", o.points, "Override the input sample size");
  cmd->add_option("--out", o.out, "Output path (file or directory)");
}

sis::ExperimentConfig resolve_config(const CommonOpts& o, const std::string& task) {
  sis::ExperimentConfig cfg;
  if (!o.config_path.empty()) cfg = sis::ExperimentConfig::from_json_file(o.config_path);
  cfg.task = task;
  if (o.seed >= 0) cfg.seed = static_cast<std::uint64_t>(o.seed);
  if (o.epochs > 0) cfg.epochs = o.epochs;
  if (o.points > 0) cfg.sample_points = o.points;
  cfg.validate();
  return cfg;
}

void write_train_log(const sis::TrainResult& result, const std::string& path) {
  nlohmann::json j;
  j["checkpoint"] = result.checkpoint_path;
  j["best_epoch"] = result.best_epoch;
  j["best_val_error"] = result.best_val;
  j["epochs"] = nlohmann::json::array();
  for (const auto& e : result.log)
    j["epochs"].push_back({{"epoch", e.epoch},
                           {"train_loss", e.train_loss},
                           {"val_error", e.val_error},
                           {"lr", e.lr}});
  std::ofstream out(path);
  out << j.dump(2) << '\n';
}

void emit_report(const sis::MetricsReport& rep, std::string out_prefix) {
  if (out_prefix.empty()) out_prefix = "report";
  if (fs::is_directory(out_prefix) || out_prefix.back() == '/')
    out_prefix = (fs::path(out_prefix) / "report").string();
  rep.write_csv(out_prefix + ".csv");
  rep.write_json(out_prefix + ".json");
  std::printf("mean %.9g  median %.9g  max %.9g  (%zu meshes, %s)\n", rep.mean, rep.median,
              rep.max, rep.per_mesh.size(), rep.unit.c_str());
  std::printf("reports: %s.csv %s.json\n", out_prefix.c_str(), out_prefix.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spherical implicit surface toolkit"};
  app.require_subcommand(1);

  // gen-synthetic
  auto* gen = app.add_subcommand("gen-synthetic", "Generate a bumpy-sphere corpus");
  CommonOpts gen_o;
  int gen_count = 500, gen_level = 4;
  add_common(gen, gen_o);
  gen->add_option("--count", gen_count, "Number of meshes");
  gen->add_option("--level", gen_level, "Icosphere subdivision level");

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Index a registered mesh corpus");
  CommonOpts ing_o;
  std::string ing_dir, ing_template, ing_splitter = "iid", ing_mask;
  int ing_window = 10;
  add_common(ingest, ing_o);
  ingest->add_option("--dir", ing_dir, "Directory of OBJ/PLY meshes")->required();
  ingest->add_option("--template", ing_template, "Template mesh path")->required();
  ingest->add_option("--splitter", ing_splitter, "iid | frames");
  ingest->add_option("--frame-window", ing_window, "Frames per held-out test window");
  ingest->add_option("--mask", ing_mask, "Optional face-label mask JSON");

  // param
  auto* param = app.add_subcommand("param", "Spherical parameterization of a genus-0 mesh");
  std::string param_in, param_out;
  param->add_option("--in", param_in, "Input mesh")->required();
  param->add_option("--out", param_out, "Output embedding PLY")->required();

  // fit
  auto* fit = app.add_subcommand("fit", "Fit one mesh with a coordinate decoder");
  CommonOpts fit_o;
  std::string fit_in;
  int fit_steps = 2000;
  add_common(fit, fit_o);
  fit->add_option("--in", fit_in, "Input mesh")->required();
  fit->add_option("--steps", fit_steps, "Optimization steps");

  // train-recon / train-superres
  auto* trec = app.add_subcommand("train-recon", "Train the reconstruction model");
  CommonOpts trec_o;
  std::string trec_manifest;
  add_common(trec, trec_o);
  trec->add_option("--manifest", trec_manifest, "Dataset manifest JSON")->required();

  auto* tsup = app.add_subcommand("train-superres", "Train the super-resolution model");
  CommonOpts tsup_o;
  std::string tsup_manifest;
  bool tsup_no_fusion = false;
  add_common(tsup, tsup_o);
  tsup->add_option("--manifest", tsup_manifest, "Dataset manifest JSON")->required();
  tsup->add_flag("--no-fusion", tsup_no_fusion, "Train the coarse-feature ablation variant");

  // infer
  auto* infer = app.add_subcommand("infer", "Decode a checkpoint at a chosen resolution");
  CommonOpts inf_o;
  std::string inf_ck, inf_manifest, inf_in, inf_res = "template";
  add_common(infer, inf_o);
  infer->add_option("--checkpoint", inf_ck, "Trained checkpoint")->required();
  infer->add_option("--manifest", inf_manifest, "Dataset manifest JSON")->required();
  infer->add_option("--in", inf_in, "Input mesh (conditioning)")->required();
  infer->add_option("--resolution", inf_res, "template | icosphere:<level> | coords:<file>");

  // bci
  auto* bci = app.add_subcommand("bci", "Barycentric interpolation baseline");
  CommonOpts bci_o;
  std::string bci_manifest;
  add_common(bci, bci_o);
  bci->add_option("--manifest", bci_manifest, "Dataset manifest JSON")->required();

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  CommonOpts ev_o;
  std::string ev_ck, ev_manifest;
  add_common(ev, ev_o);
  ev->add_option("--checkpoint", ev_ck, "Trained checkpoint")->required();
  ev->add_option("--manifest", ev_manifest, "Dataset manifest JSON")->required();

  // ablate
  auto* abl = app.add_subcommand("ablate", "Fusion vs coarse-feature ablation");
  CommonOpts abl_o;
  std::string abl_manifest;
  add_common(abl, abl_o);
  abl->add_option("--manifest", abl_manifest, "Dataset manifest JSON")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      auto cfg = resolve_config(gen_o, "superres");
      std::string out = gen_o.out.empty() ? "synthetic" : gen_o.out;
      sis::DatasetManifest m = sis::gen_synthetic(gen_count, cfg.seed, gen_level, out);
      std::printf("wrote %zu meshes and manifest to %s\n", m.entries.size(), out.c_str());
    } else if (ingest->parsed()) {
      auto cfg = resolve_config(ing_o, "superres");
      std::string out = ing_o.out.empty() ? "ingested" : ing_o.out;
      sis::DatasetManifest m = sis::ingest_registered_corpus(
          ing_dir, ing_template, cfg.seed, out, ing_splitter, ing_window, ing_mask);
      std::printf("indexed %zu meshes into %s\n", m.entries.size(), out.c_str());
    } else if (param->parsed()) {
      sis::Mesh mesh = sis::load_mesh(param_in);
      sis::SphericalEmbedding emb = sis::spherical_parameterize(mesh);
      sis::DistortionReport rep = sis::quasi_conformal_distortion(mesh, emb);
      sis::save_embedding(emb, param_out, param_in, rep.max);
      std::printf("embedded %d vertices; centroid %.3g, distortion mean %.6f max %.6f\n",
                  emb.point_count(), emb.centroid().norm(), rep.mean, rep.max);
    } else if (fit->parsed()) {
      auto cfg = resolve_config(fit_o, "fit");
      sis::Mesh mesh = sis::load_mesh(fit_in);
      sis::SubmeshDecomposition dec = sis::decompose_genus0(mesh);
      if (dec.submesh_count() != 1)
        throw sis::ValidationError("fit expects a single-component mesh; decompose first");
      sis::SphericalEmbedding emb = sis::spherical_parameterize(dec.submeshes[0]);
      sis::FitConfig fit_cfg;
      fit_cfg.steps = fit_steps;
      fit_cfg.lr = cfg.lr;
      fit_cfg.lr_decay = cfg.lr_decay;
      fit_cfg.weight_decay = cfg.weight_decay;
      fit_cfg.gamma = cfg.gamma;
      fit_cfg.L = cfg.L;
      fit_cfg.width = cfg.decoder_width;
      fit_cfg.layers = cfg.decoder_layers;
      fit_cfg.seed = cfg.seed;
      sis::FitResult res = sis::fit_single_mesh(dec.submeshes[0], emb, fit_cfg);
      std::printf("fit mean per-vertex L2: %.9g model units (%d steps)\n", res.mean_l2,
                  fit_steps);
      if (!fit_o.out.empty()) {
        sis::CheckpointWriter w;
        w.set_encoding(sis::FourierEncoding{cfg.L});
        w.add_network(res.net);
        w.extra()["task"] = "fit";
        w.extra()["mean_l2"] = res.mean_l2;
        w.extra()["standardizer"] = {{"mean",
                                      {res.standardizer.mean.x(), res.standardizer.mean.y(),
                                       res.standardizer.mean.z()}},
                                     {"std", res.standardizer.std},
                                     {"unit_scale", res.standardizer.unit_scale}};
        w.write(fit_o.out);
        std::printf("checkpoint: %s\n", fit_o.out.c_str());
      }
    } else if (trec->parsed()) {
      auto cfg = resolve_config(trec_o, "reconstruction");
      sis::DatasetManifest m = sis::load_manifest(trec_manifest);
      std::string out = trec_o.out.empty() ? "recon.sis" : trec_o.out;
      sis::TrainResult res = sis::train_reconstruction(m, cfg, out);
      write_train_log(res, out + ".log.json");
      std::printf("checkpoint: %s (best epoch %d, val %.9g)\n", out.c_str(), res.best_epoch,
                  res.best_val);
    } else if (tsup->parsed()) {
      auto cfg = resolve_config(tsup_o, "superres");
      sis::DatasetManifest m = sis::load_manifest(tsup_manifest);
      std::string out = tsup_o.out.empty() ? "superres.sis" : tsup_o.out;
      sis::TrainResult res = sis::train_superres(m, cfg, out, !tsup_no_fusion);
      write_train_log(res, out + ".log.json");
      std::printf("checkpoint: %s (best epoch %d, val %.9g)\n", out.c_str(), res.best_epoch,
                  res.best_val);
    } else if (infer->parsed()) {
      sis::DatasetManifest m = sis::load_manifest(inf_manifest);
      sis::Mesh input = sis::load_mesh(inf_in);
      sis::Mesh out_mesh = sis::infer_mesh(inf_ck, m, input, inf_res, inf_o.points);
      std::string out = inf_o.out.empty() ? "inferred.obj" : inf_o.out;
      sis::save_mesh(out_mesh, out);
      std::printf("wrote %d vertices / %d faces to %s\n", out_mesh.vertex_count(),
                  out_mesh.face_count(), out.c_str());
    } else if (bci->parsed()) {
      auto cfg = resolve_config(bci_o, "bci");
      sis::DatasetManifest m = sis::load_manifest(bci_manifest);
      int pts = bci_o.points > 0 ? bci_o.points : cfg.sample_points;
      sis::MetricsReport rep = sis::run_bci_baseline(m, pts, cfg.threads);
      emit_report(rep, bci_o.out);
    } else if (ev->parsed()) {
      auto cfg = resolve_config(ev_o, "superres");
      sis::DatasetManifest m = sis::load_manifest(ev_manifest);
      sis::MetricsReport rep = sis::evaluate(ev_ck, m, ev_o.points, cfg.threads);
      emit_report(rep, ev_o.out);
    } else if (abl->parsed()) {
      auto cfg = resolve_config(abl_o, "superres");
      sis::DatasetManifest m = sis::load_manifest(abl_manifest);
      std::string out = abl_o.out.empty() ? "ablation" : abl_o.out;
      auto [full, coarse] = sis::run_ablation_no_fusion(m, cfg, out);
      std::printf("full fusion mean %.9g | coarse-only mean %.9g (%s)\n", full.mean,
                  coarse.mean, full.unit.c_str());
    }
  } catch (const sis::ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const sis::NumericError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
