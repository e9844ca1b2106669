#include "sis/models.hpp"

namespace sis {

FitResult fit_single_mesh(const Mesh& mesh, const SphericalEmbedding& emb,
                          const FitConfig& cfg) {
  if (emb.point_count() != mesh.vertex_count())
    throw ValidationError("fit_single_mesh: embedding/mesh vertex count mismatch");
  const int n = mesh.vertex_count();
  FourierEncoding enc{cfg.L};
  NeighborStructure nbrs = one_ring(mesh);

  FitResult res;
  res.standardizer = fit_standardizer({mesh});

  // Supervision at every vertex: encoded coordinate in, standardized
  // position out.
  MatX<float> inputs(enc.coord_dims(), n);
  MatX<float> target(3, n);
  for (int j = 0; j < n; ++j) {
    SphericalCoord c = to_spherical_coords(emb.sphere_points[j]);
    enc.encode(c, inputs.col(j).data());
    target.col(j) = res.standardizer.apply(mesh.vertices[j]).cast<float>();
  }

  Rng rng(cfg.seed);
  res.net = make_decoder<float>(0, enc, "fit", cfg.width, cfg.layers);
  res.net.init(rng);
  AdamOptimizer<float>::Settings opt_settings;
  opt_settings.lr = cfg.lr;
  opt_settings.weight_decay = cfg.weight_decay;
  opt_settings.lr_decay = cfg.lr_decay;
  AdamOptimizer<float> opt(opt_settings, res.net);
  LossConfig loss_cfg{cfg.gamma, false};

  auto grads = res.net.make_grads();
  for (int step = 0; step < cfg.steps; ++step) {
    MlpNetwork<float>::Cache cache;
    MatX<float> pred = res.net.forward(inputs, &cache);
    float loss = loss_total(pred, target, nbrs, loss_cfg);
    if (!std::isfinite(loss))
      throw NumericError("fit_single_mesh: loss diverged at step " + std::to_string(step));
    res.loss_curve.push_back(loss);
    MatX<float> d_pred = MatX<float>::Zero(3, n);
    loss_total_backward(pred, target, nbrs, loss_cfg, 1.0f, d_pred);
    for (auto& m : grads.dW) m.setZero();
    for (auto& v : grads.db) v.setZero();
    res.net.backward(cache, d_pred, grads);
    opt.step(res.net, grads);
    if ((step + 1) % cfg.steps_per_epoch == 0) opt.end_epoch();
  }

  MatX<float> pred = res.net.forward(inputs);
  double sum = 0.0;
  for (int j = 0; j < n; ++j) {
    Vec3 p = res.standardizer.invert(pred.col(j).cast<double>());
    sum += (p - mesh.vertices[j]).norm();
  }
  res.mean_l2 = sum / n;
  return res;
}

}  // namespace sis
