#include <chrono>
#include <cstdio>
#include <filesystem>

#include "pipeline_internal.hpp"

namespace sis {

namespace {

using detail::EntryData;
using detail::LocalConditioning;
using detail::SubmeshContext;
using detail::TaskContext;
using GradsF = MlpNetwork<float>::Grads;

std::vector<EntryData> load_split_entries(const TaskContext& ctx, const std::vector<int>& ids,
                                          int threads) {
  std::vector<EntryData> out(ids.size());
  parallel_for(static_cast<int>(ids.size()), threads, [&](int i) {
    out[i] = detail::load_entry_data(ctx, ctx.manifest->load_entry(ids[i]));
  });
  return out;
}

nlohmann::json standardizer_json(const Standardizer& st) {
  return {{"mean", {st.mean.x(), st.mean.y(), st.mean.z()}},
          {"std", st.std},
          {"unit_scale", st.unit_scale}};
}

void log_epoch(const EpochStats& s) {
  std::printf("epoch %4d  train_loss %.6f  val_error %.6f  lr %.6g\n", s.epoch, s.train_loss,
              s.val_error, s.lr);
  std::fflush(stdout);
}

struct BestSnapshot {
  std::vector<MlpNetwork<float>> nets;
  int epoch = -1;
  double val = std::numeric_limits<double>::infinity();
};

}  // namespace

TrainResult train_superres(const DatasetManifest& manifest, const ExperimentConfig& cfg,
                           const std::string& out_path, bool fuse) {
  cfg.validate();
  TaskContext ctx = detail::build_task_context(manifest, cfg.L);
  const int K = ctx.submesh_count();
  const LossConfig loss_cfg{cfg.gamma, cfg.exclude_filled};

  std::vector<int> train_ids = manifest.split_indices("train");
  std::vector<int> val_ids = manifest.split_indices("val");
  if (train_ids.empty()) throw ValidationError("train_superres: empty training split");
  std::vector<EntryData> train_data = load_split_entries(ctx, train_ids, cfg.threads);
  std::vector<EntryData> val_data = load_split_entries(ctx, val_ids, cfg.threads);

  // Fixed validation conditioning: the evaluation sampling protocol, so the
  // per-epoch metric is comparable across epochs and matches evaluate().
  std::vector<LocalConditioning> val_cond(val_ids.size());
  parallel_for(static_cast<int>(val_ids.size()), cfg.threads, [&](int i) {
    auto ids = detail::sample_submesh_ids(ctx, cfg.sample_points, manifest.seed,
                                          detail::kEvalSampleTag +
                                              static_cast<std::uint64_t>(val_ids[i]));
    val_cond[i] = detail::build_local_conditioning(ctx, val_data[i], ids, 0.0, 0);
  });

  Rng init_rng(Rng::derive(cfg.seed, 0x111));
  std::vector<MlpNetwork<float>> encoders, decoders;
  const int cond_dim = fuse ? fused_feature_dim(cfg.local_dim) : cfg.local_dim;
  for (int s = 0; s < K; ++s) {
    encoders.push_back(
        make_local_encoder<float>(ctx.enc, detail::local_encoder_name(s), cfg.local_dim));
    encoders.back().init(init_rng, 1.0);
    decoders.push_back(make_decoder<float>(cond_dim, ctx.enc, detail::decoder_name(s),
                                           cfg.decoder_width, cfg.decoder_layers));
    decoders.back().init(init_rng);
  }
  AdamOptimizer<float>::Settings opt_settings;
  opt_settings.lr = cfg.lr;
  opt_settings.weight_decay = cfg.weight_decay;
  opt_settings.lr_decay = cfg.lr_decay;
  std::vector<AdamOptimizer<float>> enc_opt, dec_opt;
  for (int s = 0; s < K; ++s) {
    enc_opt.emplace_back(opt_settings, encoders[s]);
    dec_opt.emplace_back(opt_settings, decoders[s]);
  }

  struct ItemResult {
    double loss = 0.0;
    std::vector<GradsF> enc_grads, dec_grads;
  };

  auto process_mesh = [&](const EntryData& entry, std::uint64_t sample_seed) {
    ItemResult res;
    auto ids = detail::sample_submesh_ids(ctx, cfg.sample_points, sample_seed, 1);
    LocalConditioning cond =
        detail::build_local_conditioning(ctx, entry, ids, cfg.noise_sigma, sample_seed);
    for (int s = 0; s < K; ++s) {
      const SubmeshContext& sub = ctx.subs[s];
      const double weight = static_cast<double>(sub.included()) / ctx.total_included;

      MlpNetwork<float>::Cache enc_cache;
      LocalFeatureField<float> field{encoders[s].forward(cond.encoder_inputs[s], &enc_cache),
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
      MlpNetwork<float>::Cache dec_cache;
      MatX<float> y = decoders[s].forward(inputs, &dec_cache);

      MatX<float> y_full = MatX<float>::Zero(3, sub.total());
      for (int q = 0; q < sub.included(); ++q) y_full.col(sub.included_ids[q]) = y.col(q);
      const std::vector<char>* mask = cfg.exclude_filled ? &sub.include : nullptr;
      float loss = loss_total(y_full, entry.targets[s], sub.nbrs, loss_cfg, mask);
      res.loss += weight * loss;

      MatX<float> d_full = MatX<float>::Zero(3, sub.total());
      loss_total_backward(y_full, entry.targets[s], sub.nbrs, loss_cfg,
                          static_cast<float>(weight), d_full, mask);
      MatX<float> d_y(3, sub.included());
      for (int q = 0; q < sub.included(); ++q) d_y.col(q) = d_full.col(sub.included_ids[q]);

      res.dec_grads.push_back(decoders[s].make_grads());
      MatX<float> d_inputs = decoders[s].backward(dec_cache, d_y, res.dec_grads.back());
      MatX<float> d_features =
          MatX<float>::Zero(cfg.local_dim, field.features.cols());
      if (fuse)
        fused_inputs_backward(d_inputs, locs, cfg.local_dim, d_features);
      else
        coarse_inputs_backward(d_inputs, locs, cfg.local_dim, d_features);
      res.enc_grads.push_back(encoders[s].make_grads());
      encoders[s].backward(enc_cache, d_features, res.enc_grads.back());
    }
    return res;
  };

  auto val_error = [&]() {
    std::vector<double> errs(val_ids.size(), 0.0);
    parallel_for(static_cast<int>(val_ids.size()), cfg.threads, [&](int i) {
      auto pred = detail::superres_predict(ctx, encoders, decoders, fuse, val_cond[i]);
      errs[i] = detail::mean_vertex_error(pred, val_data[i].original, manifest.unit_scale);
    });
    double sum = 0.0;
    for (double e : errs) sum += e;
    return val_ids.empty() ? 0.0 : sum / errs.size();
  };

  TrainResult result;
  BestSnapshot best;
  std::vector<MlpNetwork<float>> last_finite;
  Rng shuffle_rng(Rng::derive(cfg.seed, 0x5f));
  bool diverged = false;

  for (int epoch = 0; epoch < cfg.epochs && !diverged; ++epoch) {
    std::vector<int> order(train_ids.size());
    std::iota(order.begin(), order.end(), 0);
    shuffle_rng.shuffle(order);

    double epoch_loss = 0.0;
    long batches = 0;
    for (std::size_t start = 0; start < order.size() && !diverged; start += cfg.batch) {
      std::size_t stop = std::min(order.size(), start + cfg.batch);
      const int bsz = static_cast<int>(stop - start);
      std::vector<ItemResult> items(bsz);
      parallel_for(bsz, cfg.threads, [&](int bi) {
        int local = order[start + bi];
        std::uint64_t sample_seed =
            Rng::derive(cfg.seed, (static_cast<std::uint64_t>(epoch) << 32) ^
                                      static_cast<std::uint64_t>(train_ids[local]));
        items[bi] = process_mesh(train_data[local], sample_seed);
      });

      double batch_loss = 0.0;
      for (const ItemResult& it : items) batch_loss += it.loss;
      batch_loss /= bsz;
      if (!std::isfinite(batch_loss)) {
        diverged = true;
        break;
      }
      epoch_loss += batch_loss;
      ++batches;

      const float inv = 1.0f / static_cast<float>(bsz);
      for (int s = 0; s < K; ++s) {
        GradsF eg = encoders[s].make_grads(), dg = decoders[s].make_grads();
        for (const ItemResult& it : items) {
          eg.add_scaled(it.enc_grads[s], inv);
          dg.add_scaled(it.dec_grads[s], inv);
        }
        enc_opt[s].step(encoders[s], eg);
        dec_opt[s].step(decoders[s], dg);
      }
    }
    if (diverged) break;

    for (auto& o : enc_opt) o.end_epoch();
    for (auto& o : dec_opt) o.end_epoch();

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = batches > 0 ? epoch_loss / batches : 0.0;
    stats.val_error = val_error();
    stats.lr = dec_opt[0].lr();
    result.log.push_back(stats);
    log_epoch(stats);

    last_finite.clear();
    for (int s = 0; s < K; ++s) last_finite.push_back(encoders[s]);
    for (int s = 0; s < K; ++s) last_finite.push_back(decoders[s]);
    double criterion = val_ids.empty() ? stats.train_loss : stats.val_error;
    if (criterion < best.val) {
      best.val = criterion;
      best.epoch = epoch;
      best.nets = last_finite;
    }
  }

  if (best.epoch < 0 && !last_finite.empty()) {
    best.nets = last_finite;
    best.epoch = static_cast<int>(result.log.size()) - 1;
    best.val = result.log.empty() ? 0.0 : result.log.back().val_error;
  }
  if (best.nets.empty())
    throw NumericError("train_superres: diverged before completing one epoch");

  CheckpointWriter w;
  w.set_encoding(ctx.enc);
  for (int s = 0; s < K; ++s) w.add_network(best.nets[s]);
  for (int s = 0; s < K; ++s) w.add_network(best.nets[K + s]);
  for (int s = 0; s < K; ++s) {
    w.add_adam_state(detail::local_encoder_name(s), enc_opt[s]);
    w.add_adam_state(detail::decoder_name(s), dec_opt[s]);
  }
  w.extra()["task"] = fuse ? "superres" : "superres_coarse";
  w.extra()["fuse"] = fuse;
  w.extra()["submeshes"] = K;
  w.extra()["config"] = cfg.to_json();
  w.extra()["standardizer"] = standardizer_json(manifest.standardizer);
  w.extra()["manifest"] = manifest.json_path;
  w.extra()["best_epoch"] = best.epoch;
  w.extra()["best_val_error"] = best.val;
  w.extra()["epochs_run"] = result.log.size();
  w.write(out_path);

  result.checkpoint_path = out_path;
  result.best_epoch = best.epoch;
  result.best_val = best.val;
  if (diverged)
    throw NumericError("train_superres: loss diverged after epoch " +
                       std::to_string(result.log.size()) +
                       "; last finite checkpoint written to " + out_path);
  return result;
}

TrainResult train_reconstruction(const DatasetManifest& manifest, const ExperimentConfig& cfg,
                                 const std::string& out_path) {
  cfg.validate();
  TaskContext ctx = detail::build_task_context(manifest, cfg.L);
  const int K = ctx.submesh_count();
  const LossConfig loss_cfg{cfg.gamma, cfg.exclude_filled};

  std::vector<int> train_ids = manifest.split_indices("train");
  std::vector<int> val_ids = manifest.split_indices("val");
  if (train_ids.empty()) throw ValidationError("train_reconstruction: empty training split");
  std::vector<EntryData> train_data = load_split_entries(ctx, train_ids, cfg.threads);
  std::vector<EntryData> val_data = load_split_entries(ctx, val_ids, cfg.threads);

  Rng init_rng(Rng::derive(cfg.seed, 0x222));
  GlobalEncoder<float> encoder("encg", cfg.latent);
  encoder.init(init_rng);
  std::vector<MlpNetwork<float>> decoders;
  for (int s = 0; s < K; ++s) {
    decoders.push_back(make_decoder<float>(cfg.latent, ctx.enc, detail::decoder_name(s),
                                           cfg.decoder_width, cfg.decoder_layers));
    decoders.back().init(init_rng);
  }
  AdamOptimizer<float>::Settings opt_settings;
  opt_settings.lr = cfg.lr;
  opt_settings.weight_decay = cfg.weight_decay;
  opt_settings.lr_decay = cfg.lr_decay;
  AdamOptimizer<float> enc_point_opt(opt_settings, encoder.pointwise());
  AdamOptimizer<float> enc_head_opt(opt_settings, encoder.head());
  std::vector<AdamOptimizer<float>> dec_opt;
  for (int s = 0; s < K; ++s) dec_opt.emplace_back(opt_settings, decoders[s]);

  struct ItemResult {
    double loss = 0.0;
    GlobalEncoder<float>::Grads enc_grads;
    std::vector<GradsF> dec_grads;
  };

  auto process_mesh = [&](const EntryData& entry) {
    ItemResult res;
    res.enc_grads = encoder.make_grads();
    const Standardizer& st = ctx.manifest->standardizer;
    MatX<float> verts(3, ctx.original_vertex_count);
    for (int v = 0; v < ctx.original_vertex_count; ++v)
      verts.col(v) = st.apply(entry.original[v]).cast<float>();
    GlobalEncoder<float>::Cache enc_cache;
    ColX<float> z_g = encoder.encode(verts, &enc_cache);

    ColX<float> d_zg = ColX<float>::Zero(z_g.size());
    for (int s = 0; s < K; ++s) {
      const SubmeshContext& sub = ctx.subs[s];
      const double weight = static_cast<double>(sub.included()) / ctx.total_included;
      MatX<float> inputs(z_g.size() + ctx.enc.coord_dims(), sub.included());
      for (int q = 0; q < sub.included(); ++q) {
        inputs.col(q).segment(0, z_g.size()) = z_g;
        inputs.col(q).segment(z_g.size(), ctx.enc.coord_dims()) =
            ctx.subs[s].encoded.col(sub.included_ids[q]);
      }
      MlpNetwork<float>::Cache dec_cache;
      MatX<float> y = decoders[s].forward(inputs, &dec_cache);
      MatX<float> y_full = MatX<float>::Zero(3, sub.total());
      for (int q = 0; q < sub.included(); ++q) y_full.col(sub.included_ids[q]) = y.col(q);
      const std::vector<char>* mask = cfg.exclude_filled ? &sub.include : nullptr;
      float loss = loss_total(y_full, entry.targets[s], sub.nbrs, loss_cfg, mask);
      res.loss += weight * loss;

      MatX<float> d_full = MatX<float>::Zero(3, sub.total());
      loss_total_backward(y_full, entry.targets[s], sub.nbrs, loss_cfg,
                          static_cast<float>(weight), d_full, mask);
      MatX<float> d_y(3, sub.included());
      for (int q = 0; q < sub.included(); ++q) d_y.col(q) = d_full.col(sub.included_ids[q]);
      res.dec_grads.push_back(decoders[s].make_grads());
      MatX<float> d_inputs = decoders[s].backward(dec_cache, d_y, res.dec_grads.back());
      d_zg += d_inputs.topRows(z_g.size()).rowwise().sum();
    }
    encoder.backward(enc_cache, d_zg, res.enc_grads);
    return res;
  };

  auto val_error = [&]() {
    std::vector<double> errs(val_ids.size(), 0.0);
    parallel_for(static_cast<int>(val_ids.size()), cfg.threads, [&](int i) {
      auto pred = detail::recon_predict(ctx, encoder, decoders, val_data[i]);
      errs[i] = detail::mean_vertex_error(pred, val_data[i].original, manifest.unit_scale);
    });
    double sum = 0.0;
    for (double e : errs) sum += e;
    return val_ids.empty() ? 0.0 : sum / errs.size();
  };

  TrainResult result;
  struct Snapshot {
    GlobalEncoder<float> encoder;
    std::vector<MlpNetwork<float>> decoders;
    bool set = false;
  };
  Snapshot best, last_finite;
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  Rng shuffle_rng(Rng::derive(cfg.seed, 0x5f));
  bool diverged = false;

  for (int epoch = 0; epoch < cfg.epochs && !diverged; ++epoch) {
    std::vector<int> order(train_ids.size());
    std::iota(order.begin(), order.end(), 0);
    shuffle_rng.shuffle(order);

    double epoch_loss = 0.0;
    long batches = 0;
    for (std::size_t start = 0; start < order.size() && !diverged; start += cfg.batch) {
      std::size_t stop = std::min(order.size(), start + cfg.batch);
      const int bsz = static_cast<int>(stop - start);
      std::vector<ItemResult> items(bsz);
      parallel_for(bsz, cfg.threads,
                   [&](int bi) { items[bi] = process_mesh(train_data[order[start + bi]]); });

      double batch_loss = 0.0;
      for (const ItemResult& it : items) batch_loss += it.loss;
      batch_loss /= bsz;
      if (!std::isfinite(batch_loss)) {
        diverged = true;
        break;
      }
      epoch_loss += batch_loss;
      ++batches;

      const float inv = 1.0f / static_cast<float>(bsz);
      GlobalEncoder<float>::Grads eg = encoder.make_grads();
      for (const ItemResult& it : items) {
        eg.point.add_scaled(it.enc_grads.point, inv);
        eg.head.add_scaled(it.enc_grads.head, inv);
      }
      enc_point_opt.step(encoder.pointwise(), eg.point);
      enc_head_opt.step(encoder.head(), eg.head);
      for (int s = 0; s < K; ++s) {
        GradsF dg = decoders[s].make_grads();
        for (const ItemResult& it : items) dg.add_scaled(it.dec_grads[s], inv);
        dec_opt[s].step(decoders[s], dg);
      }
    }
    if (diverged) break;

    enc_point_opt.end_epoch();
    enc_head_opt.end_epoch();
    for (auto& o : dec_opt) o.end_epoch();

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = batches > 0 ? epoch_loss / batches : 0.0;
    stats.val_error = val_error();
    stats.lr = dec_opt[0].lr();
    result.log.push_back(stats);
    log_epoch(stats);

    last_finite = {encoder, decoders, true};
    double criterion = val_ids.empty() ? stats.train_loss : stats.val_error;
    if (criterion < best_val) {
      best_val = criterion;
      best_epoch = epoch;
      best = last_finite;
    }
  }

  if (!best.set && last_finite.set) {
    best = last_finite;
    best_epoch = static_cast<int>(result.log.size()) - 1;
  }
  if (!best.set)
    throw NumericError("train_reconstruction: diverged before completing one epoch");

  CheckpointWriter w;
  w.set_encoding(ctx.enc);
  w.add_network(best.encoder.pointwise());
  w.add_network(best.encoder.head());
  for (int s = 0; s < K; ++s) w.add_network(best.decoders[s]);
  w.add_adam_state("encg.point", enc_point_opt);
  w.add_adam_state("encg.head", enc_head_opt);
  for (int s = 0; s < K; ++s) w.add_adam_state(detail::decoder_name(s), dec_opt[s]);
  w.extra()["task"] = "reconstruction";
  w.extra()["submeshes"] = K;
  w.extra()["config"] = cfg.to_json();
  w.extra()["standardizer"] = standardizer_json(manifest.standardizer);
  w.extra()["manifest"] = manifest.json_path;
  w.extra()["best_epoch"] = best_epoch;
  w.extra()["best_val_error"] = best_val;
  w.extra()["epochs_run"] = result.log.size();
  w.write(out_path);

  result.checkpoint_path = out_path;
  result.best_epoch = best_epoch;
  result.best_val = best_val;
  if (diverged)
    throw NumericError("train_reconstruction: loss diverged after epoch " +
                       std::to_string(result.log.size()) +
                       "; last finite checkpoint written to " + out_path);
  return result;
}

}  // namespace sis
