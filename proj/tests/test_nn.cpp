#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "oflg/nn.hpp"
#include "support.hpp"

using namespace oflg;
using namespace oflg::nn;
using testsupport::fd_gradient;
using testsupport::rel_err;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
  return m;
}

std::vector<double> flat(const Matrix& m) { return {m.data(), m.data() + m.size()}; }

std::vector<double> flat(const SeqBatch& s) {
  std::vector<double> out;
  for (const auto& m : s.steps) out.insert(out.end(), m.data(), m.data() + m.size());
  return out;
}

double project(const SeqBatch& y, const SeqBatch& r) {
  double s = 0.0;
  for (std::size_t t = 0; t < y.length(); ++t) s += y.steps[t].cwiseProduct(r.steps[t]).sum();
  return s;
}

SeqBatch random_seq(std::size_t t, Eigen::Index b, Eigen::Index c, Rng& rng) {
  SeqBatch s;
  for (std::size_t i = 0; i < t; ++i) s.steps.push_back(random_matrix(b, c, rng));
  return s;
}

void randomize(Param& p, Rng& rng, double scale = 0.5) { p.value = random_matrix(p.value.rows(), p.value.cols(), rng, -scale, scale); }

}  // namespace

TEST_CASE("dense: counts, zeros, gradient") {
  CHECK(Dense("d", 128, 10).parameter_count() == 1290);

  Dense zero("z", 4, 3);
  Rng rng(1);
  const Matrix x = random_matrix(2, 4, rng);
  CHECK(zero.forward(x).isZero(0.0));

  Dense d("d", 3, 2);
  randomize(d.weight, rng);
  randomize(d.bias, rng);
  Matrix in = random_matrix(5, 3, rng);
  const Matrix r = random_matrix(5, 2, rng);
  auto loss = [&] { return d.forward(in).cwiseProduct(r).sum(); };
  const Matrix dx = d.backward(in, r);
  CHECK(rel_err(flat(dx), fd_gradient(loss, in.data(), in.size())) <= 1e-6);
  CHECK(rel_err(flat(d.weight.grad), fd_gradient(loss, d.weight.value.data(), d.weight.size())) <= 1e-6);
  CHECK(rel_err(flat(d.bias.grad), fd_gradient(loss, d.bias.value.data(), d.bias.size())) <= 1e-6);
}

TEST_CASE("activations") {
  Matrix x(1, 2);
  x << -2.0, 3.0;
  CHECK(relu(x)(0, 0) == 0.0);
  CHECK(relu(x)(0, 1) == 3.0);
  CHECK(sigmoid(0.0) == 0.5);
  CHECK(nn::tanh(Matrix::Zero(1, 1))(0, 0) == 0.0);
  const Matrix s = softmax(Matrix::Constant(2, 3, 4.2));
  for (Eigen::Index i = 0; i < s.size(); ++i) CHECK(s.data()[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(sigmoid(-800.0) >= 0.0);
  CHECK(std::isfinite(softmax(Matrix::Constant(1, 2, 1e300))(0, 0)));

  Rng rng(4);
  Matrix z = random_matrix(3, 4, rng, -2, 2);
  const Matrix r = random_matrix(3, 4, rng);
  auto loss = [&] { return softmax(z).cwiseProduct(r).sum(); };
  const Matrix g = softmax_backward(softmax(z), r);
  CHECK(rel_err(flat(g), fd_gradient(loss, z.data(), z.size())) <= 1e-6);
}

TEST_CASE("lstm: zero parameters give zero state") {
  LstmParams p("l", 3, 2);
  Rng rng(2);
  const auto s = lstm_step(random_matrix(1, 3, rng), {Matrix::Zero(1, 2), Matrix::Zero(1, 2)}, p);
  CHECK(s.h.isZero(0.0));
  CHECK(s.c.isZero(0.0));
}

TEST_CASE("lstm: scalar hand computation") {
  LstmParams p("l", 1, 1);
  p.bias.value << 50.0, 50.0, 50.0, 1.0;  // i, f, o saturated; g = tanh(1)
  Matrix x(1, 1);
  x << 0.37;
  const auto s = lstm_step(x, {Matrix::Zero(1, 1), Matrix::Zero(1, 1)}, p);
  CHECK(s.c(0, 0) == doctest::Approx(std::tanh(1.0)).epsilon(1e-12));
  CHECK(s.c(0, 0) == doctest::Approx(0.7616).epsilon(1e-4));
  CHECK(s.h(0, 0) == doctest::Approx(0.6420).epsilon(1e-4));
}

TEST_CASE("lstm: BPTT matches finite differences") {
  for (bool reverse : {false, true}) {
    Rng rng(reverse ? 8 : 7);
    LstmParams p("l", 3, 2);
    for (auto* q : p.params()) randomize(*q, rng);
    SeqBatch x = random_seq(4, 2, 3, rng);
    const SeqBatch r = random_seq(4, 2, 2, rng);
    Lstm lstm;
    auto loss = [&] {
      Lstm l;
      return project(l.forward(x, p, reverse), r);
    };
    lstm.forward(x, p, reverse);
    const auto dx = lstm.backward(r, p);
    std::vector<double> num;
    for (auto& m : x.steps) {
      const auto g = fd_gradient(loss, m.data(), m.size());
      num.insert(num.end(), g.begin(), g.end());
    }
    CHECK(rel_err(flat(dx), num) <= 1e-6);
    for (auto* q : p.params()) {
      CHECK_MESSAGE(rel_err(flat(q->grad), fd_gradient(loss, q->value.data(), q->size())) <= 1e-6, q->name);
    }
  }
}

TEST_CASE("bilstm: count, symmetry, zeros") {
  CHECK(BiLstm(100, 128).parameter_count() == 234496);

  BiLstm zero(3, 2);
  Rng rng(5);
  const auto out0 = zero.forward(random_seq(5, 1, 3, rng));
  for (const auto& s : out0.steps) CHECK(s.isZero(0.0));

  BiLstm b(3, 2);
  b.forward_params.init(rng);
  b.backward_params = b.forward_params;
  Matrix seq(5, 3);
  seq << 1, 2, 3, 4, 5, 6, 7, 8, 9, 4, 5, 6, 1, 2, 3;
  const auto out = b.forward(SeqBatch::from_sequence(seq)).sequence(0);
  for (Eigen::Index t = 0; t < 5; ++t) {
    for (Eigen::Index j = 0; j < 2; ++j) CHECK(out(t, j) == doctest::Approx(out(4 - t, 2 + j)).epsilon(1e-14));
  }
}

TEST_CASE("spatial dropout") {
  Rng rng(3);
  const SeqBatch x = random_seq(3, 2, 4, rng);
  SpatialDropout d;
  CHECK(flat(d.forward(x, 0.0, true, rng)) == flat(x));
  CHECK(flat(d.forward(x, 0.7, false, rng)) == flat(x));
  CHECK_THROWS_AS(d.forward(x, 1.0, true, rng), Error);

  // one channel mask per sequence, shared across time
  SeqBatch ones = SeqBatch::zeros(6, 1, 5);
  for (auto& s : ones.steps) s.setOnes();
  double total = 0.0;
  const int seeds = 10000;
  for (int seed = 0; seed < seeds; ++seed) {
    Rng r(static_cast<std::uint64_t>(seed));
    const auto y = d.forward(ones, 0.5, true, r);
    for (Eigen::Index c = 0; c < 5; ++c) {
      const double v = y.steps[0](0, c);
      CHECK((v == 0.0 || v == 2.0));
      for (const auto& s : y.steps) CHECK(s(0, c) == v);
      total += v;
    }
  }
  CHECK(std::abs(total / (seeds * 5) - 1.0) < 0.02);
}

TEST_CASE("conv1d: counts, ones, gradient") {
  Conv1d big(256, 64, 2);
  CHECK(big.parameter_count() == 32832);
  Rng rng(6);
  CHECK(big.forward(random_seq(63, 1, 256, rng)).length() == 62);

  big.weight.value.setOnes();
  big.bias.value.setZero();
  SeqBatch ones = SeqBatch::zeros(5, 1, 256);
  for (auto& s : ones.steps) s.setOnes();
  for (const auto& s : big.forward(ones).steps) CHECK((s.array() == 512.0).all());

  Conv1d c(3, 2, 2);
  randomize(c.weight, rng);
  randomize(c.bias, rng, 0.1);
  Matrix seq = random_matrix(6, 3, rng);
  const SeqBatch r = random_seq(5, 1, 2, rng);
  auto loss = [&] {
    Conv1d copy = c;
    return project(copy.forward(SeqBatch::from_sequence(seq)), r);
  };
  c.forward(SeqBatch::from_sequence(seq));
  const auto dx = c.backward(r).sequence(0);
  CHECK(rel_err(flat(dx), fd_gradient(loss, seq.data(), seq.size())) <= 1e-6);
  CHECK(rel_err(flat(c.weight.grad), fd_gradient(loss, c.weight.value.data(), c.weight.size())) <= 1e-6);
  CHECK(rel_err(flat(c.bias.grad), fd_gradient(loss, c.bias.value.data(), c.bias.size())) <= 1e-6);
}

TEST_CASE("pooling") {
  Matrix col(3, 1);
  col << 1, 3, 2;
  const auto s = SeqBatch::from_sequence(col);
  CHECK(global_max_pool(s).values(0, 0) == 3.0);
  CHECK(global_avg_pool(s)(0, 0) == doctest::Approx(2.0));

  const auto cst = SeqBatch::from_sequence(Matrix::Constant(4, 2, -1.5));
  CHECK((global_max_pool(cst).values.array() == -1.5).all());
  CHECK(global_avg_pool(cst).isApprox(Matrix::Constant(1, 2, -1.5)));
  CHECK(concat(Matrix::Zero(1, 64), Matrix::Zero(1, 64)).cols() == 128);

  Rng rng(9);
  Matrix seq = random_matrix(5, 3, rng);
  const Matrix r = random_matrix(1, 6, rng);
  auto loss = [&] {
    const auto x = SeqBatch::from_sequence(seq);
    return concat(global_max_pool(x).values, global_avg_pool(x)).cwiseProduct(r).sum();
  };
  const auto x = SeqBatch::from_sequence(seq);
  const auto mp = global_max_pool(x);
  const auto dmax = global_max_pool_backward(mp, 5, r.leftCols(3)).sequence(0);
  const auto davg = global_avg_pool_backward(5, r.rightCols(3)).sequence(0);
  CHECK(rel_err(flat(Matrix(dmax + davg)), fd_gradient(loss, seq.data(), seq.size())) <= 1e-6);
}

TEST_CASE("losses: analytic values") {
  Matrix p(1, 1), y(1, 1);
  p << 1.0;
  y << 1.0;
  CHECK(binary_cross_entropy(p, y).value == doctest::Approx(0.0).epsilon(1e-6));
  p << 0.5;
  CHECK(binary_cross_entropy(p, y).value == doctest::Approx(std::numbers::ln2));

  Matrix onehot(3, 2);
  onehot << 1, 0, 0, 1, 1, 0;
  CHECK(soft_f1(onehot, onehot).value == doctest::Approx(0.0).epsilon(1e-12));

  const auto w = balanced_class_weights({0, 0, 0, 1}, 2);
  CHECK(w[0] == doctest::Approx(4.0 / 6.0));
  CHECK(w[1] == doctest::Approx(2.0));
}

TEST_CASE("losses: gradients") {
  Rng rng(10);
  SUBCASE("binary cross-entropy, weighted and not") {
    Matrix p = random_matrix(6, 1, rng, 0.05, 0.95);
    Matrix t(6, 1);
    t << 1, 0, 0, 1, 1, 0;
    for (const std::vector<double> w : {std::vector<double>{}, std::vector<double>{0.7, 2.1}}) {
      auto loss = [&] { return binary_cross_entropy(p, t, w).value; };
      CHECK(rel_err(flat(binary_cross_entropy(p, t, w).grad), fd_gradient(loss, p.data(), p.size())) <= 1e-6);
    }
  }
  SUBCASE("categorical cross-entropy and soft-F1") {
    Matrix p = random_matrix(6, 3, rng, 0.05, 0.95);
    Matrix t = Matrix::Zero(6, 3);
    for (Eigen::Index i = 0; i < 6; ++i) t(i, i % 3) = 1.0;
    const std::vector<double> w{1.5, 0.5, 1.0};
    auto ce = [&] { return categorical_cross_entropy(p, t, w).value; };
    CHECK(rel_err(flat(categorical_cross_entropy(p, t, w).grad), fd_gradient(ce, p.data(), p.size())) <= 1e-6);
    auto sf = [&] { return soft_f1(p, t).value; };
    CHECK(rel_err(flat(soft_f1(p, t).grad), fd_gradient(sf, p.data(), p.size())) <= 1e-6);
  }
}

TEST_CASE("adam") {
  Param w("w", 1, 3);
  w.grad << 0.5, -2.0, 1e-3;
  std::vector<Param*> ps{&w};
  auto st = AdamState::for_params(ps);
  AdamOptions opt;
  opt.learning_rate = 0.01;
  adam_step(ps, st, opt);
  for (Eigen::Index i = 0; i < 3; ++i) {
    const double g = std::abs(w.grad(0, i));
    const double step = std::abs(w.value(0, i));
    CHECK(step <= opt.learning_rate + 1e-15);
    CHECK(step >= opt.learning_rate * g / (g + opt.epsilon) - 1e-15);
    CHECK(std::signbit(w.value(0, i)) != std::signbit(w.grad(0, i)));
  }

  Param z("z", 2, 2);
  z.value.setConstant(0.25);
  std::vector<Param*> zs{&z};
  auto zst = AdamState::for_params(zs);
  adam_step(zs, zst, opt);
  CHECK((z.value.array() == 0.25).all());

  Param f("f", 1, 1);
  f.frozen = true;
  f.grad << 1.0;
  std::vector<Param*> fs{&f};
  auto fst = AdamState::for_params(fs);
  adam_step(fs, fst, opt);
  CHECK(f.value(0, 0) == 0.0);
}

TEST_CASE("adam minimizes a quadratic") {
  Param w("w", 1, 1);
  std::vector<Param*> ps{&w};
  auto st = AdamState::for_params(ps);
  AdamOptions opt;
  opt.learning_rate = 0.1;
  for (int i = 0; i < 200; ++i) {
    w.grad(0, 0) = 2.0 * (w.value(0, 0) - 3.0);
    adam_step(ps, st, opt);
  }
  CHECK(std::abs(w.value(0, 0) - 3.0) < 0.1);
}
