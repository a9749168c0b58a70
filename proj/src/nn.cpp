#include "oflg/nn.hpp"

#include <algorithm>
#include <cmath>

namespace oflg::nn {

void glorot_uniform(Param& p, double fan_in, double fan_out, Rng& rng) {
  const double s = std::sqrt(6.0 / (fan_in + fan_out));
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = rng.uniform(-s, s);
}

SeqBatch SeqBatch::zeros(std::size_t length, Eigen::Index batch, Eigen::Index channels) {
  SeqBatch s;
  s.steps.assign(length, Matrix::Zero(batch, channels));
  return s;
}

SeqBatch SeqBatch::from_sequence(const Matrix& seq) {
  SeqBatch s;
  s.steps.reserve(static_cast<std::size_t>(seq.rows()));
  for (Eigen::Index t = 0; t < seq.rows(); ++t) s.steps.emplace_back(seq.row(t));
  return s;
}

Matrix SeqBatch::sequence(Eigen::Index b) const {
  Matrix out(static_cast<Eigen::Index>(steps.size()), channels());
  for (std::size_t t = 0; t < steps.size(); ++t) out.row(static_cast<Eigen::Index>(t)) = steps[t].row(b);
  return out;
}

// ---------------------------------------------------------------------------

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Matrix relu(const Matrix& x) { return x.cwiseMax(0.0); }

Matrix relu_backward(const Matrix& x, const Matrix& dy) {
  return (x.array() > 0.0).select(dy, 0.0);
}

Matrix sigmoid(const Matrix& x) {
  return x.unaryExpr([](double v) { return sigmoid(v); });
}

Matrix sigmoid_backward(const Matrix& y, const Matrix& dy) {
  return dy.array() * y.array() * (1.0 - y.array());
}

Matrix tanh(const Matrix& x) { return x.array().tanh(); }

Matrix tanh_backward(const Matrix& y, const Matrix& dy) {
  return dy.array() * (1.0 - y.array().square());
}

Matrix softmax(const Matrix& x) {
  Matrix y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    y.row(r) = (x.row(r).array() - m).exp();
    y.row(r) /= y.row(r).sum();
  }
  return y;
}

Matrix softmax_backward(const Matrix& y, const Matrix& dy) {
  Matrix dx(y.rows(), y.cols());
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    const double dot = y.row(r).dot(dy.row(r));
    dx.row(r) = y.row(r).array() * (dy.row(r).array() - dot);
  }
  return dx;
}

// ---------------------------------------------------------------------------

Dense::Dense(std::string name, Eigen::Index in, Eigen::Index out)
    : weight(name + ".weight", out, in), bias(name + ".bias", 1, out) {}

Matrix Dense::forward(const Matrix& x) const {
  if (x.cols() != in()) {
    throw Error("dense " + weight.name + ": expected " + std::to_string(in()) +
                " inputs, got " + std::to_string(x.cols()));
  }
  Matrix y = x * weight.value.transpose();
  y.rowwise() += bias.value.row(0);
  return y;
}

Matrix Dense::backward(const Matrix& x, const Matrix& dy) {
  weight.grad.noalias() += dy.transpose() * x;
  bias.grad.row(0) += dy.colwise().sum();
  return dy * weight.value;
}

void Dense::init(Rng& rng) {
  glorot_uniform(weight, static_cast<double>(in()), static_cast<double>(out()), rng);
  bias.value.setZero();
}

// ---------------------------------------------------------------------------

LstmParams::LstmParams(const std::string& prefix, Eigen::Index in, Eigen::Index hidden)
    : input_weights(prefix + ".input_weights", 4 * hidden, in),
      recurrent_weights(prefix + ".recurrent_weights", 4 * hidden, hidden),
      bias(prefix + ".bias", 1, 4 * hidden) {}

std::size_t LstmParams::parameter_count() const {
  return input_weights.size() + recurrent_weights.size() + bias.size();
}

void LstmParams::init(Rng& rng) {
  const auto h = static_cast<double>(hidden_size());
  glorot_uniform(input_weights, static_cast<double>(input_size()), 4 * h, rng);
  glorot_uniform(recurrent_weights, h, 4 * h, rng);
  bias.value.setZero();
  bias.value.block(0, hidden_size(), 1, hidden_size()).setOnes();
}

LstmState lstm_step(const Matrix& x, const LstmState& prev, const LstmParams& p,
                    LstmStepCache* cache) {
  const Eigen::Index h = p.hidden_size();
  if (x.cols() != p.input_size() || prev.h.cols() != h || prev.c.cols() != h ||
      prev.h.rows() != x.rows() || prev.c.rows() != x.rows()) {
    throw Error("lstm step: shape mismatch");
  }
  Matrix z = x * p.input_weights.value.transpose();
  z.noalias() += prev.h * p.recurrent_weights.value.transpose();
  z.rowwise() += p.bias.value.row(0);

  Matrix i = sigmoid(Matrix(z.leftCols(h)));
  Matrix f = sigmoid(Matrix(z.middleCols(h, h)));
  Matrix o = sigmoid(Matrix(z.middleCols(2 * h, h)));
  Matrix g = z.rightCols(h).array().tanh();

  LstmState next;
  next.c = f.cwiseProduct(prev.c) + i.cwiseProduct(g);
  Matrix tc = next.c.array().tanh();
  next.h = o.cwiseProduct(tc);

  if (cache) {
    cache->x = x;
    cache->h_prev = prev.h;
    cache->c_prev = prev.c;
    cache->input_gate = std::move(i);
    cache->forget_gate = std::move(f);
    cache->output_gate = std::move(o);
    cache->candidate = std::move(g);
    cache->c = next.c;
    cache->tanh_c = std::move(tc);
  }
  return next;
}

LstmStepGrads lstm_step_backward(const LstmStepCache& k, const Matrix& dh, const Matrix& dc,
                                 LstmParams& p) {
  const Eigen::Index h = p.hidden_size();
  const auto& i = k.input_gate.array();
  const auto& f = k.forget_gate.array();
  const auto& o = k.output_gate.array();
  const auto& g = k.candidate.array();
  const auto& tc = k.tanh_c.array();

  Matrix dc_total = dc.array() + dh.array() * o * (1.0 - tc.square());
  Matrix dz(dh.rows(), 4 * h);
  dz.leftCols(h) = dc_total.array() * g * i * (1.0 - i);
  dz.middleCols(h, h) = dc_total.array() * k.c_prev.array() * f * (1.0 - f);
  dz.middleCols(2 * h, h) = dh.array() * tc * o * (1.0 - o);
  dz.rightCols(h) = dc_total.array() * i * (1.0 - g.square());

  p.input_weights.grad.noalias() += dz.transpose() * k.x;
  p.recurrent_weights.grad.noalias() += dz.transpose() * k.h_prev;
  p.bias.grad.row(0) += dz.colwise().sum();

  LstmStepGrads out;
  out.dx = dz * p.input_weights.value;
  out.dh_prev = dz * p.recurrent_weights.value;
  out.dc_prev = dc_total.array() * f;
  return out;
}

SeqBatch Lstm::forward(const SeqBatch& x, const LstmParams& p, bool reverse) {
  const std::size_t n = x.length();
  reverse_ = reverse;
  caches_.assign(n, {});
  LstmState state{Matrix::Zero(x.batch(), p.hidden_size()), Matrix::Zero(x.batch(), p.hidden_size())};
  SeqBatch out;
  out.steps.resize(n);
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t t = reverse ? n - 1 - s : s;
    state = lstm_step(x.steps[t], state, p, &caches_[s]);
    out.steps[t] = state.h;
  }
  return out;
}

SeqBatch Lstm::backward(const SeqBatch& dh_out, LstmParams& p) {
  const std::size_t n = caches_.size();
  if (dh_out.length() != n) throw Error("lstm backward: length mismatch");
  SeqBatch dx;
  dx.steps.resize(n);
  Matrix dh = Matrix::Zero(dh_out.batch(), p.hidden_size());
  Matrix dc = dh;
  for (std::size_t s = n; s-- > 0;) {
    const std::size_t t = reverse_ ? n - 1 - s : s;
    dh += dh_out.steps[t];
    auto g = lstm_step_backward(caches_[s], dh, dc, p);
    dx.steps[t] = std::move(g.dx);
    dh = std::move(g.dh_prev);
    dc = std::move(g.dc_prev);
  }
  return dx;
}

BiLstm::BiLstm(Eigen::Index in, Eigen::Index hidden)
    : forward_params("bilstm.forward", in, hidden), backward_params("bilstm.backward", in, hidden) {}

SeqBatch BiLstm::forward(const SeqBatch& x) {
  if (x.channels() != forward_params.input_size()) throw Error("bilstm: input width mismatch");
  const auto hf = fwd_.forward(x, forward_params, false);
  const auto hb = bwd_.forward(x, backward_params, true);
  const Eigen::Index h = forward_params.hidden_size();
  SeqBatch out;
  out.steps.resize(x.length());
  for (std::size_t t = 0; t < x.length(); ++t) {
    out.steps[t].resize(x.batch(), 2 * h);
    out.steps[t].leftCols(h) = hf.steps[t];
    out.steps[t].rightCols(h) = hb.steps[t];
  }
  return out;
}

SeqBatch BiLstm::backward(const SeqBatch& dy) {
  const Eigen::Index h = forward_params.hidden_size();
  SeqBatch df, db;
  df.steps.reserve(dy.length());
  db.steps.reserve(dy.length());
  for (const auto& s : dy.steps) {
    df.steps.emplace_back(s.leftCols(h));
    db.steps.emplace_back(s.rightCols(h));
  }
  auto dx = fwd_.backward(df, forward_params);
  const auto dxb = bwd_.backward(db, backward_params);
  for (std::size_t t = 0; t < dx.length(); ++t) dx.steps[t] += dxb.steps[t];
  return dx;
}

std::vector<Param*> BiLstm::params() {
  auto a = forward_params.params();
  for (auto* p : backward_params.params()) a.push_back(p);
  return a;
}

// ---------------------------------------------------------------------------

SeqBatch SpatialDropout::forward(const SeqBatch& x, double rate, bool train, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw Error("dropout rate must lie in [0, 1)");
  active_ = train && rate > 0.0;
  if (!active_) return x;
  const double scale = 1.0 / (1.0 - rate);
  mask_.resize(x.batch(), x.channels());
  for (Eigen::Index i = 0; i < mask_.size(); ++i) {
    mask_.data()[i] = rng.bernoulli(1.0 - rate) ? scale : 0.0;
  }
  SeqBatch y;
  y.steps.reserve(x.length());
  for (const auto& s : x.steps) y.steps.emplace_back(s.cwiseProduct(mask_));
  return y;
}

SeqBatch SpatialDropout::backward(const SeqBatch& dy) const {
  if (!active_) return dy;
  SeqBatch dx;
  dx.steps.reserve(dy.length());
  for (const auto& s : dy.steps) dx.steps.emplace_back(s.cwiseProduct(mask_));
  return dx;
}

// ---------------------------------------------------------------------------

Conv1d::Conv1d(Eigen::Index channels, Eigen::Index filters, Eigen::Index kernel)
    : weight("conv.weight", filters, kernel * channels),
      bias("conv.bias", 1, filters),
      channels_(channels),
      kernel_(kernel) {}

void Conv1d::init(Rng& rng) {
  glorot_uniform(weight, static_cast<double>(kernel_ * channels_),
                 static_cast<double>(kernel_ * filters()), rng);
  bias.value.setZero();
}

SeqBatch Conv1d::forward(const SeqBatch& x) {
  const auto k = static_cast<std::size_t>(kernel_);
  if (x.length() < k) throw Error("conv1d: sequence shorter than kernel");
  if (x.channels() != channels_) throw Error("conv1d: channel mismatch");
  input_ = x;
  const std::size_t out_len = x.length() - k + 1;
  pre_.assign(out_len, Matrix());
  SeqBatch y;
  y.steps.resize(out_len);
  for (std::size_t t = 0; t < out_len; ++t) {
    Matrix z = x.steps[t] * weight.value.leftCols(channels_).transpose();
    for (std::size_t j = 1; j < k; ++j) {
      z.noalias() += x.steps[t + j] *
                     weight.value.middleCols(static_cast<Eigen::Index>(j) * channels_, channels_).transpose();
    }
    z.rowwise() += bias.value.row(0);
    y.steps[t] = relu(z);
    pre_[t] = std::move(z);
  }
  return y;
}

SeqBatch Conv1d::backward(const SeqBatch& dy) {
  const auto k = static_cast<std::size_t>(kernel_);
  SeqBatch dx = SeqBatch::zeros(input_.length(), input_.batch(), channels_);
  for (std::size_t t = 0; t < dy.length(); ++t) {
    const Matrix dz = relu_backward(pre_[t], dy.steps[t]);
    bias.grad.row(0) += dz.colwise().sum();
    for (std::size_t j = 0; j < k; ++j) {
      const auto off = static_cast<Eigen::Index>(j) * channels_;
      weight.grad.middleCols(off, channels_).noalias() += dz.transpose() * input_.steps[t + j];
      dx.steps[t + j].noalias() += dz * weight.value.middleCols(off, channels_);
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------

MaxPoolResult global_max_pool(const SeqBatch& x) {
  if (x.length() == 0) throw Error("pooling over an empty sequence");
  MaxPoolResult r;
  r.values = x.steps[0];
  r.argmax.setZero(x.batch(), x.channels());
  for (std::size_t t = 1; t < x.length(); ++t) {
    const auto& s = x.steps[t];
    for (Eigen::Index b = 0; b < s.rows(); ++b) {
      for (Eigen::Index c = 0; c < s.cols(); ++c) {
        if (s(b, c) > r.values(b, c)) {
          r.values(b, c) = s(b, c);
          r.argmax(b, c) = static_cast<int>(t);
        }
      }
    }
  }
  return r;
}

SeqBatch global_max_pool_backward(const MaxPoolResult& fwd, std::size_t length, const Matrix& dy) {
  SeqBatch dx = SeqBatch::zeros(length, dy.rows(), dy.cols());
  for (Eigen::Index b = 0; b < dy.rows(); ++b) {
    for (Eigen::Index c = 0; c < dy.cols(); ++c) {
      dx.steps[static_cast<std::size_t>(fwd.argmax(b, c))](b, c) += dy(b, c);
    }
  }
  return dx;
}

Matrix global_avg_pool(const SeqBatch& x) {
  if (x.length() == 0) throw Error("pooling over an empty sequence");
  Matrix sum = x.steps[0];
  for (std::size_t t = 1; t < x.length(); ++t) sum += x.steps[t];
  return sum / static_cast<double>(x.length());
}

SeqBatch global_avg_pool_backward(std::size_t length, const Matrix& dy) {
  SeqBatch dx;
  dx.steps.assign(length, dy / static_cast<double>(length));
  return dx;
}

Matrix concat(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw Error("concat: row mismatch");
  Matrix out(a.rows(), a.cols() + b.cols());
  out.leftCols(a.cols()) = a;
  out.rightCols(b.cols()) = b;
  return out;
}

// ---------------------------------------------------------------------------

namespace {

void check_batch(const Matrix& probs, const Matrix& targets) {
  if (probs.rows() == 0) throw Error("loss over an empty batch");
  if (probs.rows() != targets.rows() || probs.cols() != targets.cols()) {
    throw Error("loss: prediction and target shapes differ");
  }
}

double clamp_prob(double p) { return std::clamp(p, kProbEpsilon, 1.0 - kProbEpsilon); }
bool is_clamped(double p) { return p < kProbEpsilon || p > 1.0 - kProbEpsilon; }

int argmax_row(const Matrix& m, Eigen::Index r) {
  Eigen::Index best = 0;
  m.row(r).maxCoeff(&best);
  return static_cast<int>(best);
}

}  // namespace

LossResult binary_cross_entropy(const Matrix& probs, const Matrix& targets,
                                std::span<const double> class_weights) {
  check_batch(probs, targets);
  if (probs.cols() != 1) throw Error("binary cross-entropy expects one probability column");
  if (!class_weights.empty() && class_weights.size() != 2) {
    throw Error("binary cross-entropy expects two class weights");
  }
  const auto n = static_cast<double>(probs.rows());
  LossResult r;
  r.grad = Matrix::Zero(probs.rows(), 1);
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const double y = targets(i, 0);
    const double p = clamp_prob(probs(i, 0));
    const double w = class_weights.empty() ? 1.0 : class_weights[y > 0.5 ? 1 : 0];
    r.value += -w * (y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
    if (!is_clamped(probs(i, 0))) r.grad(i, 0) = w * (-y / p + (1.0 - y) / (1.0 - p)) / n;
  }
  r.value /= n;
  return r;
}

LossResult categorical_cross_entropy(const Matrix& probs, const Matrix& onehot,
                                     std::span<const double> class_weights) {
  check_batch(probs, onehot);
  if (!class_weights.empty() && class_weights.size() != static_cast<std::size_t>(probs.cols())) {
    throw Error("categorical cross-entropy: one weight per class required");
  }
  const auto n = static_cast<double>(probs.rows());
  LossResult r;
  r.grad = Matrix::Zero(probs.rows(), probs.cols());
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const double w = class_weights.empty() ? 1.0 : class_weights[argmax_row(onehot, i)];
    for (Eigen::Index c = 0; c < probs.cols(); ++c) {
      const double y = onehot(i, c);
      if (y == 0.0) continue;
      const double p = clamp_prob(probs(i, c));
      r.value += -w * y * std::log(p);
      if (!is_clamped(probs(i, c))) r.grad(i, c) = -w * y / p / n;
    }
  }
  r.value /= n;
  return r;
}

LossResult soft_f1(const Matrix& probs, const Matrix& onehot) {
  check_batch(probs, onehot);
  constexpr double kTiny = 1e-16;
  const auto k = static_cast<double>(probs.cols());
  LossResult r;
  r.grad.resize(probs.rows(), probs.cols());
  double f1_sum = 0.0;
  for (Eigen::Index c = 0; c < probs.cols(); ++c) {
    const auto p = probs.col(c).array();
    const auto y = onehot.col(c).array();
    const double tp = (p * y).sum();
    const double fp = (p * (1.0 - y)).sum();
    const double fn = ((1.0 - p) * y).sum();
    const double denom = 2.0 * tp + fp + fn + kTiny;
    f1_sum += 2.0 * tp / denom;
    // d(2tp)/dp = 2y, d(denom)/dp = 2y + (1 - y) - y = 1
    r.grad.col(c) = -((2.0 * y * denom - 2.0 * tp) / (denom * denom)) / k;
  }
  r.value = 1.0 - f1_sum / k;
  return r;
}

std::vector<double> balanced_class_weights(const std::vector<int>& labels, std::size_t classes) {
  std::vector<double> counts(classes, 0.0);
  for (int l : labels) counts.at(static_cast<std::size_t>(l)) += 1.0;
  std::vector<double> w(classes, 1.0);
  const auto n = static_cast<double>(labels.size());
  for (std::size_t c = 0; c < classes; ++c) {
    if (counts[c] > 0) w[c] = n / (static_cast<double>(classes) * counts[c]);
  }
  return w;
}

// ---------------------------------------------------------------------------

AdamState AdamState::for_params(std::span<Param* const> params) {
  AdamState s;
  for (const auto* p : params) {
    s.m.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    s.v.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
  return s;
}

void adam_step(std::span<Param* const> params, AdamState& state, const AdamOptions& opt) {
  if (state.m.size() != params.size()) throw Error("adam: state does not match parameters");
  ++state.step;
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param& p = *params[i];
    if (p.frozen) continue;
    double* w = p.value.data();
    const double* g = p.grad.data();
    double* m = state.m[i].data();
    double* v = state.v[i].data();
    const Eigen::Index n = p.value.size();
    for (Eigen::Index j = 0; j < n; ++j) {
      const double grad = g[j] + opt.weight_decay * w[j];
      m[j] = opt.beta1 * m[j] + (1.0 - opt.beta1) * grad;
      v[j] = opt.beta2 * v[j] + (1.0 - opt.beta2) * grad * grad;
      w[j] -= opt.learning_rate * (m[j] / c1) / (std::sqrt(v[j] / c2) + opt.epsilon);
    }
  }
}

}  // namespace oflg::nn
