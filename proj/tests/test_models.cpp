#include <doctest.h>

#include <numeric>

#include "sis/models.hpp"
#include "sis/pipeline.hpp"

using namespace sis;

namespace {

template <typename F, typename G>
double check_grad(int n, F value_at, G analytic, double h = 1e-5) {
  double worst = 0.0;
  for (int i = 0; i < n; ++i) {
    double fd = (value_at(i, h) - value_at(i, -h)) / (2.0 * h);
    double an = analytic(i);
    double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
    worst = std::max(worst, std::abs(fd - an) / denom);
  }
  return worst;
}

MatX<double> random_vertices(int n, Rng& rng) {
  MatX<double> v(3, n);
  for (int c = 0; c < n; ++c)
    for (int r = 0; r < 3; ++r) v(r, c) = rng.uniform(-1, 1);
  return v;
}

}  // namespace

TEST_CASE("loss_reconstruction values") {
  Rng rng(1);
  MatX<double> v = random_vertices(10, rng);
  CHECK(loss_reconstruction<double>(v, v) == 0.0);

  MatX<double> shifted = v;
  shifted.row(0).array() += 1.0;
  CHECK(loss_reconstruction<double>(shifted, v) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  // Naive double-loop oracle.
  MatX<double> w = random_vertices(10, rng);
  double naive = 0.0;
  for (int c = 0; c < 10; ++c)
    for (int r = 0; r < 3; ++r) naive += std::abs(w(r, c) - v(r, c));
  naive /= 30.0;
  CHECK(loss_reconstruction<double>(w, v) == doctest::Approx(naive).epsilon(1e-12));

  MatX<double> bad(3, 9);
  CHECK_THROWS_AS(loss_reconstruction<double>(bad, v), ValidationError);
}

TEST_CASE("loss_laplacian values") {
  Mesh ico = make_icosphere(0);
  NeighborStructure nbrs = one_ring(ico);
  Rng rng(2);
  MatX<double> v = random_vertices(ico.vertex_count(), rng);
  CHECK(loss_laplacian<double>(v, v, nbrs) == 0.0);

  // Common translation of the prediction cancels in the Laplacian terms.
  MatX<double> t = v;
  t.colwise() += Eigen::Vector3d(0.4, -0.2, 1.0);
  CHECK(loss_laplacian<double>(t, v, nbrs) < 1e-12);

  // Naive evaluation oracle per the umbrella-difference definition.
  MatX<double> w = random_vertices(ico.vertex_count(), rng);
  double naive = 0.0;
  for (int i = 0; i < ico.vertex_count(); ++i) {
    Eigen::Vector3d mv = Eigen::Vector3d::Zero(), mw = Eigen::Vector3d::Zero();
    for (int j : nbrs.one_ring[i]) {
      mv += v.col(j);
      mw += w.col(j);
    }
    Eigen::Vector3d lv = v.col(i) - mv / nbrs.one_ring[i].size();
    Eigen::Vector3d lw = w.col(i) - mw / nbrs.one_ring[i].size();
    naive += (lw - lv).cwiseAbs().sum();
  }
  naive /= ico.vertex_count();
  CHECK(loss_laplacian<double>(w, v, nbrs) == doctest::Approx(naive).epsilon(1e-12));

  NeighborStructure isolated;
  isolated.one_ring = {{1}, {0}, {}};
  MatX<double> tiny = random_vertices(3, rng);
  CHECK_THROWS_WITH_AS(loss_laplacian<double>(tiny, tiny, isolated),
                       doctest::Contains("isolated"), ValidationError);
}

TEST_CASE("loss_total combines with gamma") {
  Mesh ico = make_icosphere(0);
  NeighborStructure nbrs = one_ring(ico);
  Rng rng(3);
  MatX<double> v = random_vertices(ico.vertex_count(), rng);
  MatX<double> w = random_vertices(ico.vertex_count(), rng);
  double a = loss_reconstruction<double>(w, v);
  double b = loss_laplacian<double>(w, v, nbrs);
  CHECK(loss_total<double>(w, v, nbrs, {0.05, false}) == doctest::Approx(a + 0.05 * b).epsilon(1e-15));
  CHECK(loss_total<double>(w, v, nbrs, {0.0, false}) == doctest::Approx(a).epsilon(1e-15));
  CHECK(loss_total<double>(v, v, nbrs, {0.05, false}) == 0.0);
}

TEST_CASE("losses are permutation-consistent") {
  Mesh ico = make_icosphere(1);
  NeighborStructure nbrs = one_ring(ico);
  Rng rng(4);
  MatX<double> v = random_vertices(ico.vertex_count(), rng);
  MatX<double> w = random_vertices(ico.vertex_count(), rng);
  double before_rec = loss_reconstruction<double>(w, v);
  double before_lap = loss_laplacian<double>(w, v, nbrs);

  std::vector<int> perm(ico.vertex_count());
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  MatX<double> vp(3, ico.vertex_count()), wp(3, ico.vertex_count());
  NeighborStructure np;
  np.one_ring.resize(ico.vertex_count());
  std::vector<int> inv(ico.vertex_count());
  for (int i = 0; i < ico.vertex_count(); ++i) inv[perm[i]] = i;
  for (int i = 0; i < ico.vertex_count(); ++i) {
    vp.col(inv[i]) = v.col(i);
    wp.col(inv[i]) = w.col(i);
    for (int j : nbrs.one_ring[i]) np.one_ring[inv[i]].push_back(inv[j]);
    std::sort(np.one_ring[inv[i]].begin(), np.one_ring[inv[i]].end());
  }
  CHECK(loss_reconstruction<double>(wp, vp) == doctest::Approx(before_rec).epsilon(1e-12));
  CHECK(loss_laplacian<double>(wp, vp, np) == doctest::Approx(before_lap).epsilon(1e-12));
}

TEST_CASE("loss gradients match central differences") {
  Mesh ico = make_icosphere(0);
  NeighborStructure nbrs = one_ring(ico);
  Rng rng(5);
  const int n = ico.vertex_count();
  // Keep every |difference| away from the L1 kink so the FD stencil is valid.
  MatX<double> v = random_vertices(n, rng);
  MatX<double> w = v;
  for (int c = 0; c < n; ++c)
    for (int r = 0; r < 3; ++r) {
      double d = rng.uniform(0.05, 0.5);
      w(r, c) += rng.uniform() < 0.5 ? -d : d;
    }
  LossConfig cfg{0.05, false};

  MatX<double> grad = MatX<double>::Zero(3, n);
  loss_total_backward(w, v, nbrs, cfg, 1.0, grad);
  double worst = check_grad(
      3 * n,
      [&](int i, double h) {
        MatX<double> ww = w;
        ww.data()[i] += h;
        return loss_total(ww, v, nbrs, cfg);
      },
      [&](int i) { return grad.data()[i]; });
  CHECK(worst < 1e-4);
}

TEST_CASE("fuse_feature layout and special cases") {
  Rng rng(6);
  const int d = kLocalFeatureDim;
  ColX<double> z1(d), z2(d), z3(d);
  for (int i = 0; i < d; ++i) {
    z1(i) = rng.uniform(-1, 1);
    z2(i) = rng.uniform(-1, 1);
    z3(i) = rng.uniform(-1, 1);
  }
  std::array<double, 3> lam{0.2, 0.3, 0.5};
  ColX<double> z_hat = lam[0] * z1 + lam[1] * z2 + lam[2] * z3;
  ColX<double> fused = fuse_feature<double>(z_hat, z1, z2, z3, lam);
  CHECK(fused.size() == 4 * d + 3);
  CHECK(fused.size() == fused_feature_dim(d));
  CHECK((fused.segment(0, d) - z_hat).cwiseAbs().maxCoeff() == 0.0);
  CHECK((fused.segment(d, d) - (z_hat - z1)).cwiseAbs().maxCoeff() == 0.0);
  CHECK(fused(4 * d) == 0.2);
  CHECK(fused(4 * d + 2) == 0.5);

  // Equal corners: all difference blocks vanish for any lambda.
  ColX<double> same = fuse_feature<double>(z1, z1, z1, z1, lam);
  CHECK(same.segment(d, 3 * d).cwiseAbs().maxCoeff() == 0.0);

  // lambda = (1,0,0): first difference block vanishes.
  std::array<double, 3> e1{1.0, 0.0, 0.0};
  ColX<double> at_corner = fuse_feature<double>(z1, z1, z2, z3, e1);
  CHECK(at_corner.segment(d, d).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("coarse feature via field locate matches brute-force blend") {
  Mesh ico = make_icosphere(0);
  SphericalTriangulation tri(ico.vertices);
  Rng rng(7);
  LocalFeatureField<double> field;
  field.tri = &tri;
  field.features.resize(8, tri.point_count());
  for (int c = 0; c < tri.point_count(); ++c)
    for (int r = 0; r < 8; ++r) field.features(r, c) = rng.uniform(-1, 1);

  for (int trial = 0; trial < 500; ++trial) {
    Vec3 d(rng.normal(), rng.normal(), rng.normal());
    if (d.norm() < 1e-6) continue;
    d.normalize();
    FieldLocation loc = locate_in_field(tri, d);
    ColX<double> blended = coarse_feature(field, loc);
    // Brute-force: scan all faces with the linear-scan oracle.
    BarycentricCoords bc = tri.locate_linear_scan(d);
    const Face& f = tri.faces()[bc.face_index];
    ColX<double> expect = bc.lambdas[0] * field.features.col(f[0]) +
                          bc.lambdas[1] * field.features.col(f[1]) +
                          bc.lambdas[2] * field.features.col(f[2]);
    CHECK((blended - expect).cwiseAbs().maxCoeff() < 1e-12);
  }

  // At a subsample vertex the blend returns that vertex's feature.
  FieldLocation at0 = locate_in_field(tri, tri.points()[4]);
  ColX<double> z = coarse_feature(field, at0);
  CHECK((z - field.features.col(4)).cwiseAbs().maxCoeff() < 1e-12);

  // Identical corner features: partition of unity returns them exactly.
  LocalFeatureField<double> flat;
  flat.tri = &tri;
  flat.features = MatX<double>::Ones(8, tri.point_count()) * 0.77;
  Vec3 d = Vec3(0.3, -0.5, 0.81).normalized();
  ColX<double> zf = coarse_feature(flat, locate_in_field(tri, d));
  CHECK((zf.array() - 0.77).abs().maxCoeff() < 1e-12);
}

TEST_CASE("fusion path gradients match central differences") {
  // decoder(fuse(features)) as a function of the corner features; lambda and
  // face choice held fixed.
  Mesh ico = make_icosphere(0);
  SphericalTriangulation tri(ico.vertices);
  Rng rng(8);
  const int d_l = 6;
  FourierEncoding enc{3};
  MlpNetwork<double> decoder = make_decoder<double>(fused_feature_dim(d_l), enc, "gc", 10, 4);
  decoder.init(rng, 1.0);

  LocalFeatureField<double> field;
  field.tri = &tri;
  field.features.resize(d_l, tri.point_count());
  for (int c = 0; c < tri.point_count(); ++c)
    for (int r = 0; r < d_l; ++r) field.features(r, c) = rng.uniform(-1, 1);

  std::vector<FieldLocation> locs;
  std::vector<SphericalCoord> coords;
  for (int q = 0; q < 20; ++q) {
    Vec3 dir(rng.normal(), rng.normal(), rng.normal());
    dir.normalize();
    locs.push_back(locate_in_field(tri, dir));
    coords.push_back(to_spherical_coords(dir));
  }
  ColX<double> probe(3);
  probe << 1.0, -0.5, 0.25;

  auto objective = [&](const MatX<double>& feats) {
    LocalFeatureField<double> f2{feats, &tri};
    MatX<double> inputs = assemble_fused_inputs(f2, locs, coords, enc);
    MatX<double> y = decoder.forward(inputs);
    double s = 0.0;
    for (int c = 0; c < y.cols(); ++c) s += probe.dot(y.col(c));
    return s;
  };

  MatX<double> inputs = assemble_fused_inputs(field, locs, coords, enc);
  MlpNetwork<double>::Cache cache;
  decoder.forward(inputs, &cache);
  auto grads = decoder.make_grads();
  MatX<double> d_out(3, static_cast<int>(locs.size()));
  for (int c = 0; c < d_out.cols(); ++c) d_out.col(c) = probe;
  MatX<double> d_inputs = decoder.backward(cache, d_out, grads);
  MatX<double> d_features = MatX<double>::Zero(d_l, tri.point_count());
  fused_inputs_backward(d_inputs, locs, d_l, d_features);

  double worst = check_grad(
      static_cast<int>(field.features.size()),
      [&](int i, double h) {
        MatX<double> feats = field.features;
        feats.data()[i] += h;
        return objective(feats);
      },
      [&](int i) { return d_features.data()[i]; });
  CHECK(worst < 1e-4);
}

TEST_CASE("coarse (ablation) input gradients match central differences") {
  Mesh ico = make_icosphere(0);
  SphericalTriangulation tri(ico.vertices);
  Rng rng(9);
  const int d_l = 6;
  FourierEncoding enc{3};
  MlpNetwork<double> decoder = make_decoder<double>(d_l, enc, "gc2", 10, 4);
  decoder.init(rng, 1.0);
  CHECK(decoder.input_dim() == d_l + 4 * enc.L);

  LocalFeatureField<double> field;
  field.tri = &tri;
  field.features.resize(d_l, tri.point_count());
  for (int c = 0; c < tri.point_count(); ++c)
    for (int r = 0; r < d_l; ++r) field.features(r, c) = rng.uniform(-1, 1);
  std::vector<FieldLocation> locs;
  std::vector<SphericalCoord> coords;
  for (int q = 0; q < 10; ++q) {
    Vec3 dir(rng.normal(), rng.normal(), rng.normal());
    dir.normalize();
    locs.push_back(locate_in_field(tri, dir));
    coords.push_back(to_spherical_coords(dir));
  }
  ColX<double> probe = ColX<double>::Ones(3);

  MatX<double> inputs = assemble_coarse_inputs(field, locs, coords, enc);
  MlpNetwork<double>::Cache cache;
  decoder.forward(inputs, &cache);
  auto grads = decoder.make_grads();
  MatX<double> d_out = MatX<double>::Ones(3, static_cast<int>(locs.size()));
  MatX<double> d_inputs = decoder.backward(cache, d_out, grads);
  MatX<double> d_features = MatX<double>::Zero(d_l, tri.point_count());
  coarse_inputs_backward(d_inputs, locs, d_l, d_features);

  double worst = check_grad(
      static_cast<int>(field.features.size()),
      [&](int i, double h) {
        MatX<double> feats = field.features;
        feats.data()[i] += h;
        LocalFeatureField<double> f2{feats, &tri};
        MatX<double> x = assemble_coarse_inputs(f2, locs, coords, enc);
        return decoder.forward(x).sum();
      },
      [&](int i) { return d_features.data()[i]; });
  CHECK(worst < 1e-4);
}

TEST_CASE("global encoder: permutation invariance and determinism") {
  Rng rng(10);
  GlobalEncoder<float> enc("g", 16);
  enc.init(rng);
  MatX<float> verts(3, 40);
  for (int c = 0; c < 40; ++c)
    for (int r = 0; r < 3; ++r) verts(r, c) = static_cast<float>(rng.uniform(-1, 1));

  ColX<float> z1 = enc.encode(verts);
  ColX<float> z2 = enc.encode(verts);
  CHECK(z1 == z2);
  CHECK(z1.size() == 16);
  CHECK(z1.allFinite());

  std::vector<int> perm(40);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  MatX<float> shuffled(3, 40);
  for (int c = 0; c < 40; ++c) shuffled.col(c) = verts.col(perm[c]);
  ColX<float> z3 = enc.encode(shuffled);
  CHECK((z3 - z1).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("global encoder gradients match central differences") {
  Rng rng(11);
  GlobalEncoder<double> enc("g", 8);
  enc.init(rng);
  MatX<double> verts(3, 12);
  for (int c = 0; c < 12; ++c)
    for (int r = 0; r < 3; ++r) verts(r, c) = rng.uniform(-1, 1);
  ColX<double> probe(8);
  for (int i = 0; i < 8; ++i) probe(i) = rng.uniform(-1, 1);

  GlobalEncoder<double>::Cache cache;
  ColX<double> z = enc.encode(verts, &cache);
  auto grads = enc.make_grads();
  enc.backward(cache, probe, grads);

  // Check the pointwise MLP's first layer (pooling argmaxes must stay put
  // for the stencil, hence the small h).
  auto& W = enc.pointwise().layers()[0].W;
  double worst = check_grad(
      static_cast<int>(W.size()),
      [&](int i, double h) {
        GlobalEncoder<double> e2 = enc;
        e2.pointwise().layers()[0].W.data()[i] += h;
        return probe.dot(e2.encode(verts));
      },
      [&](int i) { return grads.point.dW[0].data()[i]; }, 1e-6);
  CHECK(worst < 1e-3);
}

TEST_CASE("fit_single_mesh: constant-radius sphere converges fast") {
  Mesh sphere = make_icosphere(2);
  SphericalEmbedding emb;
  emb.sphere_points = sphere.vertices;
  FitConfig cfg;
  cfg.steps = 400;
  cfg.width = 64;
  cfg.layers = 4;
  cfg.seed = 7;
  FitResult res = fit_single_mesh(sphere, emb, cfg);
  CHECK(res.mean_l2 < 5e-3);
  CHECK(res.loss_curve.size() == 400);
  CHECK(res.loss_curve.back() < res.loss_curve.front());
}

TEST_CASE("fit_single_mesh is deterministic") {
  Mesh sphere = make_icosphere(1);
  SphericalEmbedding emb;
  emb.sphere_points = sphere.vertices;
  FitConfig cfg;
  cfg.steps = 60;
  cfg.width = 32;
  cfg.layers = 4;
  cfg.seed = 3;
  FitResult a = fit_single_mesh(sphere, emb, cfg);
  FitResult b = fit_single_mesh(sphere, emb, cfg);
  CHECK(a.mean_l2 == b.mean_l2);
  for (std::size_t l = 0; l < a.net.layers().size(); ++l)
    CHECK(a.net.layers()[l].W == b.net.layers()[l].W);
}

TEST_CASE("decoder input widths match the declared formulas") {
  FourierEncoding enc{10};
  CHECK(make_decoder<float>(64, enc, "g").input_dim() == 104);
  CHECK(make_decoder<float>(fused_feature_dim(64), enc, "l").input_dim() == 299);
  CHECK(make_decoder<float>(0, enc, "f").input_dim() == 40);
  CHECK(make_local_encoder<float>(enc, "e").input_dim() == 43);
  CHECK(fused_feature_dim(64) == 259);
}
