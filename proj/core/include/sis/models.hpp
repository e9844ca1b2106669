#pragma once

#include <string>
#include <vector>

#include "sis/mesh.hpp"
#include "sis/nn.hpp"
#include "sis/sphere_geom.hpp"

namespace sis {

inline constexpr int kGlobalFeatureDim = 64;
inline constexpr int kLocalFeatureDim = 64;

/// Decoder input width for the fused local feature: blended feature, three
/// difference blocks, and the barycentric weights.
inline constexpr int fused_feature_dim(int d_l) { return 4 * d_l + 3; }

struct LossConfig {
  double gamma = 0.05;
  bool exclude_filled = true;
};

/// Decoder MLP: `layers` weight layers of `width` channels with the input
/// re-concatenated at the middle layer; input is the conditioning feature
/// followed by the Fourier-encoded coordinate.
template <typename T>
MlpNetwork<T> make_decoder(int cond_dim, const FourierEncoding& enc, const std::string& name,
                           int width = 131, int layers = 6) {
  if (layers < 3) throw ValidationError(name + ": decoder needs at least 3 layers");
  std::vector<int> hidden(layers - 1, width);
  return MlpNetwork<T>(cond_dim + enc.coord_dims(), hidden, 3, layers / 2, name);
}

/// Per-vertex encoder for local features: standardized position plus encoded
/// coordinate in, d_l-dimensional feature out.
template <typename T>
MlpNetwork<T> make_local_encoder(const FourierEncoding& enc, const std::string& name,
                                 int d_l = kLocalFeatureDim) {
  return MlpNetwork<T>(3 + enc.coord_dims(), {128, 128}, d_l, -1, name);
}

/// Mesh-level encoder: a shared per-vertex MLP over the channel ladder
/// [3,16,32,64,128], max-pool over vertices, then a dense layer to the
/// latent dimension. Permutation invariant by construction.
template <typename T>
class GlobalEncoder {
 public:
  GlobalEncoder() = default;
  GlobalEncoder(std::string name, int latent_dim = kGlobalFeatureDim)
      : pointwise_(3, {16, 32, 64}, 128, -1, name + ".point", /*relu_output=*/true),
        head_(128, {}, latent_dim, -1, name + ".head"),
        name_(std::move(name)) {}

  void init(Rng& rng) {
    pointwise_.init(rng, 1.0);
    head_.init(rng, 1.0);
  }

  struct Cache {
    typename MlpNetwork<T>::Cache point_cache;
    typename MlpNetwork<T>::Cache head_cache;
    std::vector<int> argmax;  // winning vertex per pooled channel
    int n_vertices = 0;
  };

  /// verts: standardized positions, 3 x N.
  ColX<T> encode(const MatX<T>& verts, Cache* cache = nullptr) const {
    MatX<T> feat = pointwise_.forward(verts, cache ? &cache->point_cache : nullptr);
    ColX<T> pooled(feat.rows());
    std::vector<int> argmax(feat.rows());
    for (Eigen::Index r = 0; r < feat.rows(); ++r) {
      int best = 0;
      T bv = feat(r, 0);
      for (Eigen::Index c = 1; c < feat.cols(); ++c)
        if (feat(r, c) > bv) {
          bv = feat(r, c);
          best = static_cast<int>(c);
        }
      pooled(r) = bv;
      argmax[r] = best;
    }
    if (cache) {
      cache->argmax = std::move(argmax);
      cache->n_vertices = static_cast<int>(verts.cols());
    }
    return head_.forward(pooled, cache ? &cache->head_cache : nullptr);
  }

  struct Grads {
    typename MlpNetwork<T>::Grads point;
    typename MlpNetwork<T>::Grads head;
  };

  Grads make_grads() const { return {pointwise_.make_grads(), head_.make_grads()}; }

  void backward(const Cache& cache, const ColX<T>& d_latent, Grads& grads) const {
    MatX<T> d_pooled = head_.backward(cache.head_cache, d_latent, grads.head);
    MatX<T> d_feat = MatX<T>::Zero(d_pooled.rows(), cache.n_vertices);
    for (Eigen::Index r = 0; r < d_pooled.rows(); ++r)
      d_feat(r, cache.argmax[r]) += d_pooled(r, 0);
    pointwise_.backward(cache.point_cache, d_feat, grads.point);
  }

  MlpNetwork<T>& pointwise() { return pointwise_; }
  const MlpNetwork<T>& pointwise() const { return pointwise_; }
  MlpNetwork<T>& head() { return head_; }
  const MlpNetwork<T>& head() const { return head_; }
  int latent_dim() const { return head_.output_dim(); }
  const std::string& name() const { return name_; }

 private:
  MlpNetwork<T> pointwise_;
  MlpNetwork<T> head_;
  std::string name_;
};

/// Per-subsample-vertex features aligned 1:1 with a spherical triangulation
/// of the subsample's sphere points.
template <typename T>
struct LocalFeatureField {
  MatX<T> features;  // d_l x n
  const SphericalTriangulation* tri = nullptr;
};

/// Location of a query in a feature field: corner point indices and the
/// barycentric weights. Gradients never flow through lambda or the face
/// choice; location is held fixed per query.
struct FieldLocation {
  std::array<int, 3> corners{-1, -1, -1};
  std::array<double, 3> lambdas{0, 0, 0};
};

inline FieldLocation locate_in_field(const SphericalTriangulation& tri, const Vec3& dir) {
  BarycentricCoords bc = tri.locate(dir);
  const Face& f = tri.faces()[bc.face_index];
  return FieldLocation{{f[0], f[1], f[2]}, bc.lambdas};
}

/// Eq.-level fusion: coarse feature = lambda-blend of the corner features.
template <typename T>
ColX<T> coarse_feature(const LocalFeatureField<T>& field, const FieldLocation& loc) {
  return static_cast<T>(loc.lambdas[0]) * field.features.col(loc.corners[0]) +
         static_cast<T>(loc.lambdas[1]) * field.features.col(loc.corners[1]) +
         static_cast<T>(loc.lambdas[2]) * field.features.col(loc.corners[2]);
}

/// [z_hat, z_hat - z1, z_hat - z2, z_hat - z3, lambda]; length 4*d_l + 3.
template <typename T>
ColX<T> fuse_feature(const ColX<T>& z_hat, const ColX<T>& z1, const ColX<T>& z2,
                     const ColX<T>& z3, const std::array<double, 3>& lambda) {
  const int d = static_cast<int>(z_hat.size());
  if (z1.size() != d || z2.size() != d || z3.size() != d)
    throw ValidationError("fuse_feature: corner feature dimension mismatch");
  ColX<T> out(fused_feature_dim(d));
  out.segment(0, d) = z_hat;
  out.segment(d, d) = z_hat - z1;
  out.segment(2 * d, d) = z_hat - z2;
  out.segment(3 * d, d) = z_hat - z3;
  for (int k = 0; k < 3; ++k) out(4 * d + k) = static_cast<T>(lambda[k]);
  return out;
}

/// Decoder input columns for a batch of located queries against one feature
/// field: fused feature followed by the encoded coordinate.
template <typename T>
MatX<T> assemble_fused_inputs(const LocalFeatureField<T>& field,
                              const std::vector<FieldLocation>& locs,
                              const std::vector<SphericalCoord>& coords,
                              const FourierEncoding& enc) {
  const int d = static_cast<int>(field.features.rows());
  const int q = static_cast<int>(locs.size());
  MatX<T> x(fused_feature_dim(d) + enc.coord_dims(), q);
  for (int i = 0; i < q; ++i) {
    const FieldLocation& loc = locs[i];
    ColX<T> z_hat = coarse_feature(field, loc);
    x.col(i).segment(0, fused_feature_dim(d)) =
        fuse_feature<T>(z_hat, field.features.col(loc.corners[0]),
                        field.features.col(loc.corners[1]), field.features.col(loc.corners[2]),
                        loc.lambdas);
    enc.encode(coords[i], x.col(i).data() + fused_feature_dim(d));
  }
  return x;
}

/// Ablation variant: coarse feature only, no fusion blocks.
template <typename T>
MatX<T> assemble_coarse_inputs(const LocalFeatureField<T>& field,
                               const std::vector<FieldLocation>& locs,
                               const std::vector<SphericalCoord>& coords,
                               const FourierEncoding& enc) {
  const int d = static_cast<int>(field.features.rows());
  const int q = static_cast<int>(locs.size());
  MatX<T> x(d + enc.coord_dims(), q);
  for (int i = 0; i < q; ++i) {
    x.col(i).segment(0, d) = coarse_feature(field, locs[i]);
    enc.encode(coords[i], x.col(i).data() + d);
  }
  return x;
}

/// Routes decoder-input gradients back to the per-vertex features. d_input
/// is the gradient w.r.t. the assembled columns; lambda entries and the
/// encoded coordinate receive nothing.
template <typename T>
void fused_inputs_backward(const MatX<T>& d_input, const std::vector<FieldLocation>& locs,
                           int d_l, MatX<T>& d_features) {
  for (std::size_t i = 0; i < locs.size(); ++i) {
    const FieldLocation& loc = locs[i];
    ColX<T> dz_hat = d_input.col(i).segment(0, d_l);
    for (int k = 1; k <= 3; ++k) dz_hat += d_input.col(i).segment(k * d_l, d_l);
    for (int k = 0; k < 3; ++k)
      d_features.col(loc.corners[k]) +=
          static_cast<T>(loc.lambdas[k]) * dz_hat -
          d_input.col(i).segment((k + 1) * d_l, d_l);
  }
}

template <typename T>
void coarse_inputs_backward(const MatX<T>& d_input, const std::vector<FieldLocation>& locs,
                            int d_l, MatX<T>& d_features) {
  for (std::size_t i = 0; i < locs.size(); ++i) {
    const FieldLocation& loc = locs[i];
    for (int k = 0; k < 3; ++k)
      d_features.col(loc.corners[k]) +=
          static_cast<T>(loc.lambdas[k]) * d_input.col(i).segment(0, d_l);
  }
}

// ---- Losses (Eqs. of the training objective) ----
// Vertices are column-major 3 x N; `include` (optional) masks vertices out of
// the loss, e.g. hole-fill vertices with no ground-truth correspondence.

/// Mean absolute error over all coordinates of the included vertices.
template <typename T>
T loss_reconstruction(const MatX<T>& v_hat, const MatX<T>& v,
                      const std::vector<char>* include = nullptr) {
  if (v_hat.rows() != 3 || v.rows() != 3 || v_hat.cols() != v.cols())
    throw ValidationError("loss_reconstruction: shape mismatch");
  long n = 0;
  T sum = 0;
  for (Eigen::Index c = 0; c < v.cols(); ++c) {
    if (include && !(*include)[c]) continue;
    sum += (v_hat.col(c) - v.col(c)).cwiseAbs().sum();
    ++n;
  }
  if (n == 0) throw ValidationError("loss_reconstruction: no included vertices");
  return sum / static_cast<T>(3 * n);
}

template <typename T>
void loss_reconstruction_backward(const MatX<T>& v_hat, const MatX<T>& v, T upstream,
                                  MatX<T>& d_v_hat, const std::vector<char>* include = nullptr) {
  long n = 0;
  for (Eigen::Index c = 0; c < v.cols(); ++c)
    if (!include || (*include)[c]) ++n;
  const T w = upstream / static_cast<T>(3 * n);
  for (Eigen::Index c = 0; c < v.cols(); ++c) {
    if (include && !(*include)[c]) continue;
    for (int r = 0; r < 3; ++r) {
      T d = v_hat(r, c) - v(r, c);
      d_v_hat(r, c) += d > T(0) ? w : (d < T(0) ? -w : T(0));
    }
  }
}

/// Umbrella-operator terms (vertex minus one-ring mean) on the included
/// subgraph; neighbors are pruned to included vertices.
template <typename T>
MatX<T> laplacian_terms(const MatX<T>& v, const NeighborStructure& nbrs,
                        const std::vector<char>* include = nullptr) {
  MatX<T> lap = MatX<T>::Zero(3, v.cols());
  for (Eigen::Index i = 0; i < v.cols(); ++i) {
    if (include && !(*include)[i]) continue;
    ColX<T> mean = ColX<T>::Zero(3);
    int deg = 0;
    for (int j : nbrs.one_ring[i]) {
      if (include && !(*include)[j]) continue;
      mean += v.col(j);
      ++deg;
    }
    if (deg == 0) throw ValidationError("loss_laplacian: isolated vertex " + std::to_string(i));
    lap.col(i) = v.col(i) - mean / static_cast<T>(deg);
  }
  return lap;
}

/// L1 difference of Laplacian terms between prediction and ground truth,
/// summed over included vertices and normalized by their count.
template <typename T>
T loss_laplacian(const MatX<T>& v_hat, const MatX<T>& v, const NeighborStructure& nbrs,
                 const std::vector<char>* include = nullptr) {
  if (v_hat.cols() != v.cols() || v.cols() != nbrs.vertex_count())
    throw ValidationError("loss_laplacian: shape mismatch");
  MatX<T> lh = laplacian_terms(v_hat, nbrs, include);
  MatX<T> lg = laplacian_terms(v, nbrs, include);
  long n = 0;
  T sum = 0;
  for (Eigen::Index c = 0; c < v.cols(); ++c) {
    if (include && !(*include)[c]) continue;
    sum += (lh.col(c) - lg.col(c)).cwiseAbs().sum();
    ++n;
  }
  if (n == 0) throw ValidationError("loss_laplacian: no included vertices");
  return sum / static_cast<T>(n);
}

template <typename T>
void loss_laplacian_backward(const MatX<T>& v_hat, const MatX<T>& v,
                             const NeighborStructure& nbrs, T upstream, MatX<T>& d_v_hat,
                             const std::vector<char>* include = nullptr) {
  MatX<T> lh = laplacian_terms(v_hat, nbrs, include);
  MatX<T> lg = laplacian_terms(v, nbrs, include);
  long n = 0;
  for (Eigen::Index c = 0; c < v.cols(); ++c)
    if (!include || (*include)[c]) ++n;
  const T w = upstream / static_cast<T>(n);
  for (Eigen::Index i = 0; i < v.cols(); ++i) {
    if (include && !(*include)[i]) continue;
    ColX<T> s(3);
    for (int r = 0; r < 3; ++r) {
      T d = lh(r, i) - lg(r, i);
      s(r) = d > T(0) ? w : (d < T(0) ? -w : T(0));
    }
    d_v_hat.col(i) += s;
    int deg = 0;
    for (int j : nbrs.one_ring[i])
      if (!include || (*include)[j]) ++deg;
    const T share = T(1) / static_cast<T>(deg);
    for (int j : nbrs.one_ring[i]) {
      if (include && !(*include)[j]) continue;
      d_v_hat.col(j) -= share * s;
    }
  }
}

template <typename T>
T loss_total(const MatX<T>& v_hat, const MatX<T>& v, const NeighborStructure& nbrs,
             const LossConfig& cfg, const std::vector<char>* include = nullptr) {
  T rec = loss_reconstruction(v_hat, v, include);
  if (cfg.gamma == 0.0) return rec;
  return rec + static_cast<T>(cfg.gamma) * loss_laplacian(v_hat, v, nbrs, include);
}

template <typename T>
void loss_total_backward(const MatX<T>& v_hat, const MatX<T>& v, const NeighborStructure& nbrs,
                         const LossConfig& cfg, T upstream, MatX<T>& d_v_hat,
                         const std::vector<char>* include = nullptr) {
  loss_reconstruction_backward(v_hat, v, upstream, d_v_hat, include);
  if (cfg.gamma != 0.0)
    loss_laplacian_backward(v_hat, v, nbrs, static_cast<T>(cfg.gamma) * upstream, d_v_hat,
                            include);
}

// ---- Per-mesh fit ----

struct FitConfig {
  int steps = 2000;
  double lr = 1e-3;
  double lr_decay = 0.98;
  int steps_per_epoch = 10;  // lr decay cadence for step-based fitting
  double weight_decay = 1e-5;
  double gamma = 0.05;
  int L = 10;
  int width = 131;
  int layers = 6;
  std::uint64_t seed = 0;
};

struct FitResult {
  MlpNetwork<float> net;
  Standardizer standardizer;
  double mean_l2 = 0.0;  // model units, at the supervised coordinates
  std::vector<double> loss_curve;
};

/// Trains a coordinate-only decoder against one parameterized mesh with the
/// combined reconstruction/Laplacian objective over all vertices.
FitResult fit_single_mesh(const Mesh& mesh, const SphericalEmbedding& emb,
                          const FitConfig& cfg);

/// Decodes every coordinate through a conditioned decoder whose input
/// columns are already assembled; returns 3 x N standardized positions.
template <typename T>
MatX<T> decode_batch(const MlpNetwork<T>& decoder, const MatX<T>& inputs) {
  MatX<T> out = decoder.forward(inputs);
  if (!out.allFinite()) throw NumericError(decoder.name() + ": non-finite decoder output");
  return out;
}

}  // namespace sis
