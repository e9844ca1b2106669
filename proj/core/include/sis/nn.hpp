#pragma once

#include <string>
#include <vector>

#include "sis/common.hpp"
#include "sis/sphere_param.hpp"

namespace sis {

template <typename T>
using MatX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using ColX = Eigen::Matrix<T, Eigen::Dynamic, 1>;

/// Sinusoidal coordinate encoding at octave frequencies:
/// per scalar p, [sin(2^0 pi p), cos(2^0 pi p), ..., sin(2^{L-1} pi p),
/// cos(2^{L-1} pi p)]; the theta block precedes the phi block.
struct FourierEncoding {
  int L = 10;

  int dims_per_scalar() const { return 2 * L; }
  int coord_dims() const { return 4 * L; }

  template <typename T>
  void encode(const SphericalCoord& c, T* out) const {
    encode_scalar(c.theta_hat, out);
    encode_scalar(c.phi_hat, out + dims_per_scalar());
  }

  template <typename T>
  void encode_scalar(double p, T* out) const {
    double freq = M_PI * p;
    for (int k = 0; k < L; ++k) {
      out[2 * k] = static_cast<T>(std::sin(freq));
      out[2 * k + 1] = static_cast<T>(std::cos(freq));
      freq *= 2.0;
    }
  }
};

/// Dense MLP with rectifier hidden activations, identity output, and an
/// optional skip connection that concatenates the network input onto one
/// middle layer's input. Batches are column-major: x is (input_dim x B).
template <typename T>
class MlpNetwork {
 public:
  struct Layer {
    MatX<T> W;
    ColX<T> b;
  };

  struct Cache {
    std::vector<MatX<T>> in;  // input to each layer
    std::vector<MatX<T>> z;   // pre-activations
  };

  struct Grads {
    std::vector<MatX<T>> dW;
    std::vector<ColX<T>> db;

    void add_scaled(const Grads& o, T s) {
      for (std::size_t l = 0; l < dW.size(); ++l) {
        dW[l] += s * o.dW[l];
        db[l] += s * o.db[l];
      }
    }
    void scale(T s) {
      for (auto& m : dW) m *= s;
      for (auto& v : db) v *= s;
    }
  };

  MlpNetwork() = default;

  /// hidden.size()+1 weight layers; skip_at indexes the weight layer whose
  /// input is [previous activation; network input] (-1 disables the skip).
  MlpNetwork(int input_dim, std::vector<int> hidden, int output_dim, int skip_at,
             std::string name, bool relu_output = false)
      : input_dim_(input_dim),
        output_dim_(output_dim),
        skip_at_(skip_at),
        relu_output_(relu_output),
        name_(std::move(name)) {
    if (input_dim <= 0 || output_dim <= 0)
      throw ValidationError(name_ + ": non-positive layer width");
    if (skip_at_ == 0 || skip_at_ > static_cast<int>(hidden.size()))
      throw ValidationError(name_ + ": skip index out of range");
    int prev = input_dim;
    for (std::size_t l = 0; l <= hidden.size(); ++l) {
      int in = prev + (static_cast<int>(l) == skip_at_ ? input_dim : 0);
      int out = l < hidden.size() ? hidden[l] : output_dim;
      layers_.push_back({MatX<T>::Zero(out, in), ColX<T>::Zero(out)});
      prev = out;
    }
  }

  /// Kaiming fan-in uniform init; the final layer is scaled down for stable
  /// early training.
  void init(Rng& rng, double final_scale = 0.1) {
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      MatX<T>& W = layers_[l].W;
      double bound = std::sqrt(6.0 / static_cast<double>(W.cols()));
      if (l + 1 == layers_.size()) bound *= final_scale;
      for (Eigen::Index j = 0; j < W.cols(); ++j)
        for (Eigen::Index i = 0; i < W.rows(); ++i)
          W(i, j) = static_cast<T>(rng.uniform(-bound, bound));
      layers_[l].b.setZero();
    }
  }

  MatX<T> forward(const MatX<T>& x, Cache* cache = nullptr) const {
    if (x.rows() != input_dim_)
      throw ValidationError(name_ + ": input has " + std::to_string(x.rows()) +
                            " rows, expected " + std::to_string(input_dim_));
    if (cache) {
      cache->in.assign(layers_.size(), {});
      cache->z.assign(layers_.size(), {});
    }
    MatX<T> a = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      MatX<T> in;
      if (static_cast<int>(l) == skip_at_) {
        in.resize(a.rows() + x.rows(), a.cols());
        in.topRows(a.rows()) = a;
        in.bottomRows(x.rows()) = x;
      } else {
        in = std::move(a);
      }
      MatX<T> z = (layers_[l].W * in).colwise() + layers_[l].b;
      if (cache) {
        cache->in[l] = std::move(in);
        cache->z[l] = z;
      }
      bool relu = l + 1 < layers_.size() || relu_output_;
      a = relu ? z.cwiseMax(T(0)) : std::move(z);
    }
    return a;
  }

  /// Reverse-mode gradients; accumulates parameter gradients into `grads`
  /// (which must be zero-initialized via make_grads or reused) and returns
  /// the gradient with respect to the network input.
  MatX<T> backward(const Cache& cache, const MatX<T>& d_out, Grads& grads) const {
    if (cache.in.size() != layers_.size())
      throw ValidationError(name_ + ": stale or missing forward cache");
    MatX<T> d_x = MatX<T>::Zero(input_dim_, d_out.cols());
    MatX<T> dz;
    MatX<T> da = d_out;
    for (int l = static_cast<int>(layers_.size()) - 1; l >= 0; --l) {
      bool relu = l + 1 < static_cast<int>(layers_.size()) || relu_output_;
      if (relu)
        dz = da.cwiseProduct((cache.z[l].array() > T(0)).template cast<T>().matrix());
      else
        dz = std::move(da);
      grads.dW[l].noalias() += dz * cache.in[l].transpose();
      grads.db[l] += dz.rowwise().sum();
      MatX<T> din = layers_[l].W.transpose() * dz;
      if (l == skip_at_) {
        int prev = static_cast<int>(din.rows()) - input_dim_;
        d_x += din.bottomRows(input_dim_);
        da = din.topRows(prev);
      } else if (l == 0) {
        d_x += din;
      } else {
        da = std::move(din);
      }
    }
    return d_x;
  }

  Grads make_grads() const {
    Grads g;
    for (const Layer& l : layers_) {
      g.dW.push_back(MatX<T>::Zero(l.W.rows(), l.W.cols()));
      g.db.push_back(ColX<T>::Zero(l.b.size()));
    }
    return g;
  }

  int input_dim() const { return input_dim_; }
  int output_dim() const { return output_dim_; }
  int skip_at() const { return skip_at_; }
  bool relu_output() const { return relu_output_; }
  const std::string& name() const { return name_; }
  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }

  std::vector<int> hidden_dims() const {
    std::vector<int> h;
    for (std::size_t l = 0; l + 1 < layers_.size(); ++l)
      h.push_back(static_cast<int>(layers_[l].W.rows()));
    return h;
  }

  long parameter_count() const {
    long n = 0;
    for (const Layer& l : layers_) n += l.W.size() + l.b.size();
    return n;
  }

  template <typename U>
  MlpNetwork<U> cast() const {
    MlpNetwork<U> out(input_dim_, hidden_dims(), output_dim_, skip_at_, name_, relu_output_);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      out.layers()[l].W = layers_[l].W.template cast<U>();
      out.layers()[l].b = layers_[l].b.template cast<U>();
    }
    return out;
  }

 private:
  int input_dim_ = 0;
  int output_dim_ = 0;
  int skip_at_ = -1;
  bool relu_output_ = false;
  std::string name_;
  std::vector<Layer> layers_;
};

/// Adam with bias correction and decoupled weight decay applied before the
/// update. end_epoch() multiplies the learning rate by the decay factor.
template <typename T>
class AdamOptimizer {
 public:
  struct Settings {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-5;
    double lr_decay = 0.98;
  };

  AdamOptimizer() = default;
  AdamOptimizer(const Settings& s, const MlpNetwork<T>& shape) : settings_(s), lr_(s.lr) {
    for (const auto& l : shape.layers()) {
      mW_.push_back(MatX<T>::Zero(l.W.rows(), l.W.cols()));
      vW_.push_back(MatX<T>::Zero(l.W.rows(), l.W.cols()));
      mb_.push_back(ColX<T>::Zero(l.b.size()));
      vb_.push_back(ColX<T>::Zero(l.b.size()));
    }
  }

  void step(MlpNetwork<T>& net, const typename MlpNetwork<T>::Grads& g) {
    ++t_;
    const T bc1 = static_cast<T>(1.0 - std::pow(settings_.beta1, static_cast<double>(t_)));
    const T bc2 = static_cast<T>(1.0 - std::pow(settings_.beta2, static_cast<double>(t_)));
    for (std::size_t l = 0; l < net.layers().size(); ++l) {
      update_tensor(net.layers()[l].W, g.dW[l], mW_[l], vW_[l], bc1, bc2,
                    net.name() + "/W" + std::to_string(l));
      update_tensor(net.layers()[l].b, g.db[l], mb_[l], vb_[l], bc1, bc2,
                    net.name() + "/b" + std::to_string(l));
    }
  }

  void end_epoch() { lr_ *= settings_.lr_decay; }

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  long step_count() const { return t_; }
  void set_step_count(long t) { t_ = t; }
  const Settings& settings() const { return settings_; }
  std::vector<MatX<T>>& moment1_w() { return mW_; }
  std::vector<MatX<T>>& moment2_w() { return vW_; }
  std::vector<ColX<T>>& moment1_b() { return mb_; }
  std::vector<ColX<T>>& moment2_b() { return vb_; }

 private:
  template <typename Tensor>
  void update_tensor(Tensor& p, const Tensor& g, Tensor& m, Tensor& v, T bc1, T bc2,
                     const std::string& pname) {
    if (!g.allFinite()) throw NumericError("non-finite gradient for " + pname);
    const T lr = static_cast<T>(lr_);
    const T b1 = static_cast<T>(settings_.beta1), b2 = static_cast<T>(settings_.beta2);
    m = b1 * m + (T(1) - b1) * g;
    v = b2 * v + (T(1) - b2) * g.cwiseProduct(g);
    if (settings_.weight_decay > 0.0) p *= (T(1) - lr * static_cast<T>(settings_.weight_decay));
    p.array() -=
        lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + static_cast<T>(settings_.eps));
  }

  Settings settings_;
  double lr_ = 1e-3;
  long t_ = 0;
  std::vector<MatX<T>> mW_, vW_;
  std::vector<ColX<T>> mb_, vb_;
};

}  // namespace sis
