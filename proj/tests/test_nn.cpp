#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "sis/checkpoint.hpp"
#include "sis/models.hpp"
#include "sis/nn.hpp"

using namespace sis;

namespace {

/// Central-difference gradient check against a scalar objective.
/// Returns the max relative error over all parameters and inputs.
template <typename F, typename G>
double check_grad(int n, F value_at, G analytic, double h = 1e-5) {
  double worst = 0.0;
  for (int i = 0; i < n; ++i) {
    double plus = value_at(i, h), minus = value_at(i, -h);
    double fd = (plus - minus) / (2.0 * h);
    double an = analytic(i);
    double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
    worst = std::max(worst, std::abs(fd - an) / denom);
  }
  return worst;
}

}  // namespace

TEST_CASE("fourier encoding values") {
  FourierEncoding enc{2};
  double out[8];
  enc.encode(SphericalCoord{0.0, 0.0}, out);
  // p = 0: sin terms 0, cos terms 1 in both blocks.
  for (int k = 0; k < 2; ++k) {
    CHECK(out[2 * k] == doctest::Approx(0.0));
    CHECK(out[2 * k + 1] == doctest::Approx(1.0));
    CHECK(out[4 + 2 * k] == doctest::Approx(0.0));
    CHECK(out[4 + 2 * k + 1] == doctest::Approx(1.0));
  }

  // theta_hat = 0.5, L = 2: (sin pi/2, cos pi/2, sin pi, cos pi) = (1,0,0,-1).
  enc.encode(SphericalCoord{0.5, 0.0}, out);
  CHECK(out[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(out[1] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(std::abs(out[2]) < 1e-12);
  CHECK(out[3] == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("fourier encoding: length and range at L=10") {
  FourierEncoding enc{10};
  CHECK(enc.coord_dims() == 40);
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    SphericalCoord c{rng.uniform(), rng.uniform()};
    std::vector<double> out(enc.coord_dims());
    enc.encode(c, out.data());
    // Direct evaluation oracle.
    for (int k = 0; k < enc.L; ++k) {
      double f = std::pow(2.0, k) * M_PI;
      CHECK(out[2 * k] == doctest::Approx(std::sin(f * c.theta_hat)).epsilon(1e-9));
      CHECK(out[2 * k + 1] == doctest::Approx(std::cos(f * c.theta_hat)).epsilon(1e-9));
      CHECK(out[20 + 2 * k] == doctest::Approx(std::sin(f * c.phi_hat)).epsilon(1e-9));
      CHECK(out[20 + 2 * k + 1] == doctest::Approx(std::cos(f * c.phi_hat)).epsilon(1e-9));
    }
    for (double v : out) CHECK(std::abs(v) <= 1.0 + 1e-12);
  }
}

TEST_CASE("forward: zero and identity networks") {
  MlpNetwork<double> zero(3, {4}, 2, -1, "zero");
  MatX<double> x(3, 5);
  x.setRandom();
  CHECK(zero.forward(x).cwiseAbs().maxCoeff() == 0.0);

  MlpNetwork<double> ident(3, {}, 3, -1, "ident");
  ident.layers()[0].W.setIdentity();
  MatX<double> y = ident.forward(x);
  CHECK((y - x).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("forward matches a naive per-neuron evaluation") {
  Rng rng(17);
  MlpNetwork<double> net(4, {6, 5}, 2, 1, "naive");  // skip into layer 1
  net.init(rng, 1.0);
  ColX<double> x(4);
  for (int i = 0; i < 4; ++i) x(i) = rng.uniform(-1, 1);

  // Naive loop oracle.
  auto relu = [](double v) { return v > 0 ? v : 0.0; };
  std::vector<double> a(x.data(), x.data() + 4);
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    std::vector<double> in = a;
    if (static_cast<int>(l) == net.skip_at())
      for (int i = 0; i < 4; ++i) in.push_back(x(i));
    const auto& layer = net.layers()[l];
    std::vector<double> out(layer.W.rows());
    for (Eigen::Index r = 0; r < layer.W.rows(); ++r) {
      double s = layer.b(r);
      for (Eigen::Index c = 0; c < layer.W.cols(); ++c) s += layer.W(r, c) * in[c];
      out[r] = (l + 1 < net.layers().size()) ? relu(s) : s;
    }
    a = out;
  }

  ColX<double> y = net.forward(x);
  REQUIRE(y.size() == 2);
  CHECK(y(0) == doctest::Approx(a[0]).epsilon(1e-12));
  CHECK(y(1) == doctest::Approx(a[1]).epsilon(1e-12));
}

TEST_CASE("forward rejects wrong input width") {
  MlpNetwork<double> net(4, {6}, 2, -1, "w");
  MatX<double> x(3, 1);
  x.setZero();
  CHECK_THROWS_AS(net.forward(x), ValidationError);
}

TEST_CASE("skip layer width invariant") {
  MlpNetwork<double> net(10, {8, 8, 8}, 3, 2, "skip");
  CHECK(net.layers()[2].W.cols() == 8 + 10);
  CHECK_THROWS_AS(MlpNetwork<double>(10, {8}, 3, 0, "bad"), ValidationError);
  CHECK_THROWS_AS(MlpNetwork<double>(10, {8}, 3, 5, "bad"), ValidationError);
}

TEST_CASE("backward: linear net closed form") {
  MlpNetwork<double> net(3, {}, 2, -1, "lin");
  Rng rng(9);
  net.init(rng, 1.0);
  ColX<double> x(3);
  x << 0.3, -0.7, 1.1;
  MlpNetwork<double>::Cache cache;
  net.forward(x, &cache);
  MatX<double> d_out = MatX<double>::Zero(2, 1);
  d_out(1, 0) = 1.0;  // e_k
  auto grads = net.make_grads();
  MatX<double> d_x = net.backward(cache, d_out, grads);
  // dW row k = x, other rows zero; d_input = W row k.
  CHECK((grads.dW[0].row(1).transpose() - x).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(grads.dW[0].row(0).cwiseAbs().maxCoeff() == 0.0);
  CHECK((d_x - net.layers()[0].W.row(1).transpose()).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(grads.db[0](1) == 1.0);

  // Zero upstream gradient -> all-zero gradients.
  auto zero_grads = net.make_grads();
  net.backward(cache, MatX<double>::Zero(2, 1), zero_grads);
  CHECK(zero_grads.dW[0].cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("backward matches central differences (skip MLP)") {
  Rng rng(33);
  MlpNetwork<double> net(5, {8, 8, 8}, 2, 2, "gc");
  net.init(rng, 1.0);
  MatX<double> x(5, 3);
  for (int c = 0; c < 3; ++c)
    for (int r = 0; r < 5; ++r) x(r, c) = rng.uniform(-1, 1);
  ColX<double> probe(2);
  probe << 0.8, -1.3;

  auto objective = [&](const MlpNetwork<double>& n, const MatX<double>& xx) {
    MatX<double> y = n.forward(xx);
    double s = 0;
    for (int c = 0; c < y.cols(); ++c) s += probe.dot(y.col(c));
    return s;
  };

  MlpNetwork<double>::Cache cache;
  net.forward(x, &cache);
  auto grads = net.make_grads();
  MatX<double> d_out(2, 3);
  for (int c = 0; c < 3; ++c) d_out.col(c) = probe;
  MatX<double> d_x = net.backward(cache, d_out, grads);

  // All weights of all layers.
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    auto& W = net.layers()[l].W;
    double worst = check_grad(
        static_cast<int>(W.size()),
        [&](int i, double h) {
          MlpNetwork<double> nn = net;
          nn.layers()[l].W.data()[i] += h;
          return objective(nn, x);
        },
        [&](int i) { return grads.dW[l].data()[i]; });
    CHECK(worst < 1e-4);
  }
  // Input gradients.
  double worst_x = check_grad(
      static_cast<int>(x.size()),
      [&](int i, double h) {
        MatX<double> xx = x;
        xx.data()[i] += h;
        return objective(net, xx);
      },
      [&](int i) { return d_x.data()[i]; });
  CHECK(worst_x < 1e-4);
}

TEST_CASE("adam single-step closed form") {
  MlpNetwork<float> net(1, {}, 1, -1, "adam1");
  net.layers()[0].W(0, 0) = 0.5f;
  AdamOptimizer<float>::Settings s;
  s.lr = 0.001;
  s.weight_decay = 0.0;
  AdamOptimizer<float> opt(s, net);
  auto g = net.make_grads();
  g.dW[0](0, 0) = 1.0f;
  opt.step(net, g);
  // Bias-corrected m_hat = v_hat = 1 at t=1: delta = -lr / (1 + eps).
  float expected = 0.5f - static_cast<float>(0.001 / (1.0 + 1e-8));
  CHECK(net.layers()[0].W(0, 0) == doctest::Approx(expected).epsilon(1e-6));
}

TEST_CASE("adam: zero grads keep params, epoch decay scales lr") {
  Rng rng(41);
  MlpNetwork<float> net(2, {3}, 1, -1, "adam2");
  net.init(rng, 1.0);
  MatX<float> before = net.layers()[0].W;
  AdamOptimizer<float>::Settings s;
  s.weight_decay = 0.0;
  AdamOptimizer<float> opt(s, net);
  auto g = net.make_grads();
  opt.step(net, g);
  CHECK((net.layers()[0].W - before).cwiseAbs().maxCoeff() == 0.0f);

  CHECK(opt.lr() == doctest::Approx(0.001));
  opt.end_epoch();
  CHECK(opt.lr() == doctest::Approx(0.00098));

  g.dW[0](0, 0) = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_WITH_AS(opt.step(net, g), doctest::Contains("adam2/W0"), NumericError);
}

TEST_CASE("adam decoupled weight decay applies before the update") {
  MlpNetwork<float> net(1, {}, 1, -1, "wd");
  net.layers()[0].W(0, 0) = 2.0f;
  AdamOptimizer<float>::Settings s;
  s.lr = 0.1;
  s.weight_decay = 0.5;
  AdamOptimizer<float> opt(s, net);
  auto g = net.make_grads();  // zero gradient isolates the decay term
  opt.step(net, g);
  CHECK(net.layers()[0].W(0, 0) == doctest::Approx(2.0f * (1.0f - 0.1f * 0.5f)));
}

TEST_CASE("checkpoint round trip is bitwise") {
  Rng rng(55);
  MlpNetwork<float> a(4, {8, 8}, 3, 1, "a");
  a.init(rng);
  MlpNetwork<float> b = make_decoder<float>(0, FourierEncoding{4}, "b", 16, 3);
  b.init(rng);

  CheckpointWriter w;
  w.set_encoding(FourierEncoding{4});
  w.add_network(a);
  w.add_network(b);
  w.extra()["task"] = "test";
  std::string path = (std::filesystem::temp_directory_path() / "sis_ckpt.sis").string();
  w.write(path);

  Checkpoint ck(path);
  CHECK(ck.encoding().L == 4);
  MlpNetwork<float> a2 = ck.network("a");
  REQUIRE(a2.layers().size() == a.layers().size());
  for (std::size_t l = 0; l < a.layers().size(); ++l) {
    CHECK(a2.layers()[l].W == a.layers()[l].W);
    CHECK(a2.layers()[l].b == a.layers()[l].b);
  }
  CHECK(ck.has_network("b"));
  CHECK_FALSE(ck.has_network("c"));
  CHECK_THROWS_AS(ck.tensor("missing"), ValidationError);

  // Re-serialization reproduces the file byte for byte.
  std::string path2 = path + ".resave";
  ck.save_as(path2);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(s1 == s2);
}

TEST_CASE("checkpoint bad magic and truncation") {
  std::string path = (std::filesystem::temp_directory_path() / "sis_bad.sis").string();
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOPE1234";
  }
  CHECK_THROWS_WITH_AS(Checkpoint(path), doctest::Contains("bad magic"), ValidationError);

  // Write a valid checkpoint, then truncate it.
  CheckpointWriter w;
  MlpNetwork<float> a(4, {8}, 3, -1, "a");
  Rng rng(1);
  a.init(rng);
  w.add_network(a);
  w.write(path);
  auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 16);
  CHECK_THROWS_WITH_AS(Checkpoint(path), doctest::Contains("truncated"), ValidationError);
}

TEST_CASE("checkpoint manifest lists submesh networks") {
  CheckpointWriter w;
  Rng rng(2);
  for (int s = 0; s < 3; ++s) {
    MlpNetwork<float> net(4, {8}, 3, -1, "dec" + std::to_string(s));
    net.init(rng);
    w.add_network(net);
  }
  std::string path = (std::filesystem::temp_directory_path() / "sis_multi.sis").string();
  w.write(path);
  Checkpoint ck(path);
  CHECK(ck.manifest().at("networks").size() == 3);
}

TEST_CASE("training trajectory is deterministic under a fixed seed") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    MlpNetwork<float> net(2, {16, 16}, 1, 1, "det");
    net.init(rng);
    AdamOptimizer<float> opt(AdamOptimizer<float>::Settings{}, net);
    MatX<float> x(2, 32), t(1, 32);
    for (int c = 0; c < 32; ++c) {
      x(0, c) = static_cast<float>(rng.uniform(-1, 1));
      x(1, c) = static_cast<float>(rng.uniform(-1, 1));
      t(0, c) = std::sin(3.0f * x(0, c)) * x(1, c);
    }
    for (int step = 0; step < 50; ++step) {
      MlpNetwork<float>::Cache cache;
      MatX<float> y = net.forward(x, &cache);
      MatX<float> d = (y - t) * (2.0f / 32.0f);
      auto grads = net.make_grads();
      net.backward(cache, d, grads);
      opt.step(net, grads);
    }
    return net;
  };
  MlpNetwork<float> n1 = run(123), n2 = run(123);
  for (std::size_t l = 0; l < n1.layers().size(); ++l)
    CHECK(n1.layers()[l].W == n2.layers()[l].W);
}
