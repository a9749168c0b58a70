#include "oflg/gradcheck.hpp"

#include <cmath>
#include <map>

#include "oflg/embeddings.hpp"
#include "oflg/model.hpp"
#include "oflg/nn.hpp"

namespace oflg::gradcheck {

using nn::Matrix;
using nn::Param;
using nn::SeqBatch;

double relative_error(std::span<const double> a, std::span<const double> n) {
  if (a.size() != n.size()) throw Error("gradient size mismatch");
  double diff = 0.0, na = 0.0, nn_ = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - n[i]) * (a[i] - n[i]);
    na += a[i] * a[i];
    nn_ += n[i] * n[i];
  }
  return std::sqrt(diff) / std::max(std::sqrt(na) + std::sqrt(nn_), 1e-12);
}

std::vector<double> numeric_gradient(const std::function<double()>& loss, std::span<double> x,
                                     double step) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + step;
    const double up = loss();
    x[i] = orig - step;
    const double down = loss();
    x[i] = orig;
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

namespace {

void fill(Matrix& m, Rng& rng, double lo = -1.0, double hi = 1.0) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
}

Matrix random(Eigen::Index r, Eigen::Index c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Matrix m(r, c);
  fill(m, rng, lo, hi);
  return m;
}

SeqBatch random_seq(std::size_t t, Eigen::Index b, Eigen::Index c, Rng& rng) {
  SeqBatch s;
  for (std::size_t i = 0; i < t; ++i) s.steps.push_back(random(b, c, rng));
  return s;
}

double project(const Matrix& y, const Matrix& r) { return y.cwiseProduct(r).sum(); }

double project(const SeqBatch& y, const SeqBatch& r) {
  double s = 0.0;
  for (std::size_t t = 0; t < y.length(); ++t) s += project(y.steps[t], r.steps[t]);
  return s;
}

/// Accumulates analytic and numeric gradients over several tensors.
struct Comparison {
  std::vector<double> analytic, numeric;

  void add(const Matrix& grad, Matrix& value, const std::function<double()>& loss) {
    analytic.insert(analytic.end(), grad.data(), grad.data() + grad.size());
    const auto n = numeric_gradient(loss, {value.data(), static_cast<std::size_t>(value.size())});
    numeric.insert(numeric.end(), n.begin(), n.end());
  }

  double error() const { return relative_error(analytic, numeric); }
};

double check_dense(Rng& rng) {
  nn::Dense layer("d", 3, 5);
  fill(layer.weight.value, rng);
  fill(layer.bias.value, rng);
  Matrix x = random(4, 3, rng);
  const Matrix r = random(4, 5, rng);
  const Matrix dx = layer.backward(x, r);
  auto loss = [&] { return project(layer.forward(x), r); };
  Comparison c;
  const Matrix gw = layer.weight.grad, gb = layer.bias.grad;
  c.add(gw, layer.weight.value, loss);
  c.add(gb, layer.bias.value, loss);
  c.add(dx, x, loss);
  return c.error();
}

double check_conv(Rng& rng) {
  nn::Conv1d conv(3, 2, 2);
  fill(conv.weight.value, rng);
  fill(conv.bias.value, rng, -0.2, 0.2);
  SeqBatch x = random_seq(6, 2, 3, rng);
  const SeqBatch r = random_seq(5, 2, 2, rng);
  conv.forward(x);
  SeqBatch dx = conv.backward(r);
  auto loss = [&] { return project(conv.forward(x), r); };
  Comparison c;
  const Matrix gw = conv.weight.grad, gb = conv.bias.grad;
  c.add(gw, conv.weight.value, loss);
  c.add(gb, conv.bias.value, loss);
  for (std::size_t t = 0; t < x.length(); ++t) c.add(dx.steps[t], x.steps[t], loss);
  return c.error();
}

void randomize(nn::LstmParams& p, Rng& rng) {
  fill(p.input_weights.value, rng, -0.7, 0.7);
  fill(p.recurrent_weights.value, rng, -0.7, 0.7);
  fill(p.bias.value, rng, -0.5, 0.5);
}

double check_lstm_step(Rng& rng) {
  nn::LstmParams p("l", 3, 2);
  randomize(p, rng);
  Matrix x = random(2, 3, rng);
  nn::LstmState prev{random(2, 2, rng), random(2, 2, rng)};
  const Matrix rh = random(2, 2, rng), rc = random(2, 2, rng);
  nn::LstmStepCache cache;
  nn::lstm_step(x, prev, p, &cache);
  const auto g = nn::lstm_step_backward(cache, rh, rc, p);
  auto loss = [&] {
    const auto s = nn::lstm_step(x, prev, p);
    return project(s.h, rh) + project(s.c, rc);
  };
  Comparison c;
  const Matrix gw = p.input_weights.grad, gu = p.recurrent_weights.grad, gb = p.bias.grad;
  c.add(gw, p.input_weights.value, loss);
  c.add(gu, p.recurrent_weights.value, loss);
  c.add(gb, p.bias.value, loss);
  c.add(g.dx, x, loss);
  c.add(g.dh_prev, prev.h, loss);
  c.add(g.dc_prev, prev.c, loss);
  return c.error();
}

double check_lstm_bptt(Rng& rng, bool reverse) {
  nn::LstmParams p("l", 3, 2);
  randomize(p, rng);
  SeqBatch x = random_seq(4, 2, 3, rng);
  const SeqBatch r = random_seq(4, 2, 2, rng);
  nn::Lstm lstm;
  lstm.forward(x, p, reverse);
  SeqBatch dx = lstm.backward(r, p);
  auto loss = [&] {
    nn::Lstm l;
    return project(l.forward(x, p, reverse), r);
  };
  Comparison c;
  const Matrix gw = p.input_weights.grad, gu = p.recurrent_weights.grad, gb = p.bias.grad;
  c.add(gw, p.input_weights.value, loss);
  c.add(gu, p.recurrent_weights.value, loss);
  c.add(gb, p.bias.value, loss);
  for (std::size_t t = 0; t < x.length(); ++t) c.add(dx.steps[t], x.steps[t], loss);
  return c.error();
}

double check_bilstm(Rng& rng) {
  nn::BiLstm bi(3, 2);
  randomize(bi.forward_params, rng);
  randomize(bi.backward_params, rng);
  SeqBatch x = random_seq(4, 2, 3, rng);
  const SeqBatch r = random_seq(4, 2, 4, rng);
  bi.forward(x);
  SeqBatch dx = bi.backward(r);
  auto loss = [&] {
    nn::BiLstm copy = bi;
    return project(copy.forward(x), r);
  };
  Comparison c;
  for (auto* p : bi.params()) {
    const Matrix g = p->grad;
    c.add(g, p->value, loss);
  }
  for (std::size_t t = 0; t < x.length(); ++t) c.add(dx.steps[t], x.steps[t], loss);
  return c.error();
}

double check_pools(Rng& rng) {
  SeqBatch x = random_seq(5, 3, 4, rng);
  const Matrix rmax = random(3, 4, rng), ravg = random(3, 4, rng);
  const auto mp = nn::global_max_pool(x);
  SeqBatch dx = nn::global_max_pool_backward(mp, x.length(), rmax);
  const auto da = nn::global_avg_pool_backward(x.length(), ravg);
  for (std::size_t t = 0; t < x.length(); ++t) dx.steps[t] += da.steps[t];
  auto loss = [&] {
    return project(nn::global_max_pool(x).values, rmax) + project(nn::global_avg_pool(x), ravg);
  };
  Comparison c;
  for (std::size_t t = 0; t < x.length(); ++t) c.add(dx.steps[t], x.steps[t], loss);
  return c.error();
}

double check_activations(Rng& rng) {
  Matrix x = random(3, 4, rng, -2.0, 2.0);
  const Matrix r1 = random(3, 4, rng), r2 = random(3, 4, rng), r3 = random(3, 4, rng),
               r4 = random(3, 4, rng);
  const Matrix dx = nn::sigmoid_backward(nn::sigmoid(x), r1) + nn::tanh_backward(nn::tanh(x), r2) +
                    nn::softmax_backward(nn::softmax(x), r3) + nn::relu_backward(x, r4);
  auto loss = [&] {
    return project(nn::sigmoid(x), r1) + project(nn::tanh(x), r2) + project(nn::softmax(x), r3) +
           project(nn::relu(x), r4);
  };
  Comparison c;
  c.add(dx, x, loss);
  return c.error();
}

Matrix random_onehot(Eigen::Index n, Eigen::Index k, Rng& rng) {
  Matrix y = Matrix::Zero(n, k);
  for (Eigen::Index i = 0; i < n; ++i) y(i, static_cast<Eigen::Index>(rng.below(static_cast<std::size_t>(k)))) = 1.0;
  // every class present
  for (Eigen::Index c = 0; c < k && c < n; ++c) {
    y.row(c).setZero();
    y(c, c) = 1.0;
  }
  return y;
}

double check_loss(Rng& rng, const std::string& which) {
  const bool binary = which == "bce" || which == "weighted_bce";
  const Eigen::Index k = binary ? 1 : 3;
  Matrix p = random(6, k, rng, 0.05, 0.95);
  Matrix y = binary ? Matrix::Zero(6, 1) : random_onehot(6, 3, rng);
  if (binary) {
    for (Eigen::Index i = 0; i < 6; ++i) y(i, 0) = static_cast<double>(i % 2);
  }
  const std::vector<double> w = binary ? std::vector<double>{0.7, 1.9} : std::vector<double>{0.5, 1.2, 2.3};
  auto eval = [&] {
    if (which == "bce") return nn::binary_cross_entropy(p, y);
    if (which == "weighted_bce") return nn::binary_cross_entropy(p, y, w);
    if (which == "categorical_ce") return nn::categorical_cross_entropy(p, y);
    if (which == "weighted_categorical_ce") return nn::categorical_cross_entropy(p, y, w);
    return nn::soft_f1(p, y);
  };
  const Matrix g = eval().grad;
  Comparison c;
  c.add(g, p, [&] { return eval().value; });
  return c.error();
}

double check_cbow(Rng& rng) {
  NgramConfig cfg{3, 4, 20};
  auto m = FastTextModel::create({"ab", "cat", "dog", "a", "house", "mouse"}, {3, 2, 2, 5, 1, 1}, cfg,
                                 5, rng.next());
  fill(m.word_output, rng, -0.5, 0.5);
  fill(m.word_input, rng, -0.5, 0.5);
  fill(m.buckets, rng, -0.5, 0.5);
  CbowExample ex;
  ex.context = {0, 2, 4};
  ex.target = 1;
  ex.negatives = {3, 5, 0};
  const auto g = cbow_gradient(m, ex);
  Matrix g_in = Matrix::Zero(m.word_input.rows(), m.word_input.cols());
  Matrix g_b = Matrix::Zero(m.buckets.rows(), m.buckets.cols());
  Matrix g_out = Matrix::Zero(m.word_output.rows(), m.word_output.cols());
  const int V = static_cast<int>(m.words.size());
  for (const auto& [r, v] : g.input) (r < V ? g_in.row(r) : g_b.row(r - V)) += v;
  for (const auto& [w, v] : g.output) g_out.row(w) += v;
  auto loss = [&] { return cbow_loss(m, ex); };
  Comparison c;
  c.add(g_in, m.word_input, loss);
  c.add(g_b, m.buckets, loss);
  c.add(g_out, m.word_output, loss);
  return c.error();
}

double check_model(Rng& rng, std::size_t outputs, LossKind kind, bool user_count) {
  ModelArch arch;
  arch.vocab_size = 7;
  arch.seq_len = 5;
  arch.embed_dim = 3;
  arch.lstm_hidden = 2;
  arch.conv_kernel = 2;
  arch.conv_filters = 3;
  arch.ffnn_hidden = 4;
  arch.output_units = outputs;
  arch.use_user_count = user_count;
  arch.task = outputs == 3 ? Task::C : Task::A;
  Model model = Model::build(arch, random(7, 3, rng), rng.next());
  for (auto* p : model.params()) fill(p->value, rng, -0.8, 0.8);

  std::vector<EncodedExample> batch(4);
  std::vector<int> labels;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    for (std::size_t t = 0; t < arch.seq_len; ++t) batch[i].indices.push_back(static_cast<int>(rng.below(7)));
    batch[i].user_count = static_cast<int>(rng.below(5));
    batch[i].label = static_cast<int>(i % (outputs == 1 ? 2 : 3));
    labels.push_back(batch[i].label);
  }
  const std::vector<double> weights = outputs == 1 ? std::vector<double>{0.8, 1.4}
                                                   : std::vector<double>{0.6, 1.0, 1.7};
  const std::uint64_t mask_seed = rng.next();
  auto loss_of = [&](Model& m) {
    Rng mask(mask_seed);
    const Matrix probs = m.forward(batch, true, 0.3, mask);
    return batch_loss(probs, labels, kind, weights);
  };
  model.zero_grad();
  const auto l = loss_of(model);
  model.backward(l.grad);

  Comparison c;
  Model probe = model;
  auto loss = [&] { return loss_of(probe).value; };
  const auto grads = model.params();
  const auto values = probe.params();
  for (std::size_t i = 0; i < grads.size(); ++i) c.add(grads[i]->grad, values[i]->value, loss);
  return c.error();
}

}  // namespace

const std::vector<std::string>& check_names() {
  static const std::vector<std::string> names{
      "dense",         "conv1d",       "lstm_step",      "lstm_bptt",
      "lstm_bptt_reverse", "bilstm",   "pooling",        "activations",
      "bce",           "weighted_bce", "categorical_ce", "weighted_categorical_ce",
      "soft_f1",       "cbow_negative_sampling", "model_binary", "model_softmax_user_count",
      "model_soft_f1"};
  return names;
}

CheckResult run_check(const std::string& name, std::uint64_t seed, double tolerance) {
  Rng rng(seed * 7919 + 17);
  double err;
  if (name == "dense") err = check_dense(rng);
  else if (name == "conv1d") err = check_conv(rng);
  else if (name == "lstm_step") err = check_lstm_step(rng);
  else if (name == "lstm_bptt") err = check_lstm_bptt(rng, false);
  else if (name == "lstm_bptt_reverse") err = check_lstm_bptt(rng, true);
  else if (name == "bilstm") err = check_bilstm(rng);
  else if (name == "pooling") err = check_pools(rng);
  else if (name == "activations") err = check_activations(rng);
  else if (name == "bce" || name == "weighted_bce" || name == "categorical_ce" ||
           name == "weighted_categorical_ce" || name == "soft_f1") err = check_loss(rng, name);
  else if (name == "cbow_negative_sampling") err = check_cbow(rng);
  else if (name == "model_binary") err = check_model(rng, 1, LossKind::WeightedCrossEntropy, false);
  else if (name == "model_softmax_user_count") err = check_model(rng, 3, LossKind::CrossEntropy, true);
  else if (name == "model_soft_f1") err = check_model(rng, 1, LossKind::SoftF1, false);
  else throw Error("unknown gradient check '" + name + "'");
  return {name, seed, err, err <= tolerance};
}

std::vector<CheckResult> run_all(std::size_t seeds, double tolerance) {
  std::vector<CheckResult> out;
  for (const auto& name : check_names()) {
    for (std::size_t s = 1; s <= seeds; ++s) out.push_back(run_check(name, s, tolerance));
  }
  return out;
}

}  // namespace oflg::gradcheck
