#pragma once

#include <Eigen/Dense>
#include <span>
#include <string>
#include <vector>

#include "oflg/common.hpp"

namespace oflg::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Trainable tensor with a gradient of the same shape.
struct Param {
  std::string name;
  Matrix value;
  Matrix grad;
  bool frozen = false;

  Param() = default;
  Param(std::string name, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(name)), value(Matrix::Zero(rows, cols)), grad(Matrix::Zero(rows, cols)) {}

  std::size_t size() const { return static_cast<std::size_t>(value.size()); }
  void zero_grad() { grad.setZero(); }
};

/// Glorot-uniform fill: U[-s, s], s = sqrt(6 / (fan_in + fan_out)).
void glorot_uniform(Param& p, double fan_in, double fan_out, Rng& rng);

/// A batch of sequences stored time-major: steps[t] is batch x channels.
/// A single T x C sequence is a batch of one.
struct SeqBatch {
  std::vector<Matrix> steps;

  std::size_t length() const { return steps.size(); }
  Eigen::Index batch() const { return steps.empty() ? 0 : steps.front().rows(); }
  Eigen::Index channels() const { return steps.empty() ? 0 : steps.front().cols(); }

  static SeqBatch zeros(std::size_t length, Eigen::Index batch, Eigen::Index channels);
  /// T x C sequence to a batch of one.
  static SeqBatch from_sequence(const Matrix& seq);
  /// Sequence `b` of the batch as T x C.
  Matrix sequence(Eigen::Index b) const;
};

// ---------------------------------------------------------------------------
// Activations. Backward functions take the forward output where that is
// enough to form the derivative.

Matrix relu(const Matrix& x);
Matrix relu_backward(const Matrix& x, const Matrix& dy);
Matrix sigmoid(const Matrix& x);
Matrix sigmoid_backward(const Matrix& y, const Matrix& dy);
Matrix tanh(const Matrix& x);
Matrix tanh_backward(const Matrix& y, const Matrix& dy);
/// Row-wise softmax with max subtraction.
Matrix softmax(const Matrix& x);
Matrix softmax_backward(const Matrix& y, const Matrix& dy);

double sigmoid(double x);

// ---------------------------------------------------------------------------

/// Fully connected layer y = x W^T + b over a batch of row vectors.
class Dense {
 public:
  Dense() = default;
  Dense(std::string name, Eigen::Index in, Eigen::Index out);

  Matrix forward(const Matrix& x) const;
  /// Accumulates parameter gradients and returns dL/dx.
  Matrix backward(const Matrix& x, const Matrix& dy);

  void init(Rng& rng);
  Eigen::Index in() const { return weight.value.cols(); }
  Eigen::Index out() const { return weight.value.rows(); }
  std::size_t parameter_count() const { return weight.size() + bias.size(); }
  std::vector<Param*> params() { return {&weight, &bias}; }

  Param weight;  // out x in
  Param bias;    // 1 x out
};

/// LSTM weights with gates stacked in the order input, forget, output,
/// candidate; each block has `hidden` rows.
struct LstmParams {
  Param input_weights;      // 4h x in
  Param recurrent_weights;  // 4h x h
  Param bias;               // 1 x 4h

  LstmParams() = default;
  LstmParams(const std::string& prefix, Eigen::Index in, Eigen::Index hidden);

  Eigen::Index input_size() const { return input_weights.value.cols(); }
  Eigen::Index hidden_size() const { return recurrent_weights.value.cols(); }
  /// 4 * ((in + h) * h + h)
  std::size_t parameter_count() const;
  /// Glorot on both weight matrices, zero bias except forget gate = 1.
  void init(Rng& rng);
  std::vector<Param*> params() { return {&input_weights, &recurrent_weights, &bias}; }
};

struct LstmStepCache {
  Matrix x, h_prev, c_prev;
  Matrix input_gate, forget_gate, output_gate, candidate;
  Matrix c, tanh_c;
};

struct LstmState {
  Matrix h;
  Matrix c;
};

/// One cell update: gates i, f, o = sigmoid, candidate g = tanh,
/// c' = f*c + i*g, h' = o*tanh(c').
LstmState lstm_step(const Matrix& x, const LstmState& prev, const LstmParams& p,
                    LstmStepCache* cache = nullptr);

struct LstmStepGrads {
  Matrix dx;
  Matrix dh_prev;
  Matrix dc_prev;
};

/// Backward through one step given dL/dh' and dL/dc'; accumulates into p.
LstmStepGrads lstm_step_backward(const LstmStepCache& cache, const Matrix& dh,
                                 const Matrix& dc, LstmParams& p);

/// Unidirectional LSTM over a sequence batch, zero initial state.
class Lstm {
 public:
  /// Returns hidden states aligned to input time; when `reverse` is set the
  /// recurrence runs from the last step to the first.
  SeqBatch forward(const SeqBatch& x, const LstmParams& p, bool reverse);
  /// Backpropagation through time; accumulates into p, returns dL/dx.
  SeqBatch backward(const SeqBatch& dh_out, LstmParams& p);

 private:
  std::vector<LstmStepCache> caches_;  // in processing order
  bool reverse_ = false;
};

/// Forward and backward LSTMs with per-step concatenation [h_fwd; h_bwd].
class BiLstm {
 public:
  BiLstm() = default;
  BiLstm(Eigen::Index in, Eigen::Index hidden);

  SeqBatch forward(const SeqBatch& x);
  SeqBatch backward(const SeqBatch& dy);

  std::size_t parameter_count() const {
    return forward_params.parameter_count() + backward_params.parameter_count();
  }
  std::vector<Param*> params();

  LstmParams forward_params;
  LstmParams backward_params;

 private:
  Lstm fwd_, bwd_;
};

/// Dropout of whole channels: one Bernoulli(1 - rate) mask per sequence,
/// shared by every step, survivors scaled by 1 / (1 - rate).
class SpatialDropout {
 public:
  SeqBatch forward(const SeqBatch& x, double rate, bool train, Rng& rng);
  SeqBatch backward(const SeqBatch& dy) const;

 private:
  Matrix mask_;  // batch x channels, already scaled
  bool active_ = false;
};

/// Valid 1-D convolution over time followed by ReLU. The kernel for filter
/// f is row f of `weight`, laid out as kernel offset major, channel minor.
class Conv1d {
 public:
  Conv1d() = default;
  Conv1d(Eigen::Index channels, Eigen::Index filters, Eigen::Index kernel);

  SeqBatch forward(const SeqBatch& x);
  SeqBatch backward(const SeqBatch& dy);

  void init(Rng& rng);
  Eigen::Index kernel() const { return kernel_; }
  Eigen::Index channels() const { return channels_; }
  Eigen::Index filters() const { return weight.value.rows(); }
  /// k * C * F + F
  std::size_t parameter_count() const { return weight.size() + bias.size(); }
  std::vector<Param*> params() { return {&weight, &bias}; }

  Param weight;  // F x (k*C)
  Param bias;    // 1 x F

 private:
  Eigen::Index channels_ = 0, kernel_ = 0;
  SeqBatch input_;
  std::vector<Matrix> pre_;
};

struct MaxPoolResult {
  Matrix values;                    // batch x C
  Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> argmax;
};

/// Per-channel maximum over time; ties resolve to the earliest step.
MaxPoolResult global_max_pool(const SeqBatch& x);
SeqBatch global_max_pool_backward(const MaxPoolResult& fwd, std::size_t length,
                                  const Matrix& dy);
Matrix global_avg_pool(const SeqBatch& x);
SeqBatch global_avg_pool_backward(std::size_t length, const Matrix& dy);

/// [a | b] column-wise.
Matrix concat(const Matrix& a, const Matrix& b);

// ---------------------------------------------------------------------------
// Losses. Each returns the batch loss and its gradient with respect to the
// probabilities. Probabilities are clamped to [1e-7, 1 - 1e-7]; the
// gradient is zero where clamping is active.

inline constexpr double kProbEpsilon = 1e-7;

struct LossResult {
  double value = 0.0;
  Matrix grad;
};

/// Binary cross-entropy over an N x 1 probability column and 0/1 targets.
/// `class_weights`, when non-empty, holds {weight for 0, weight for 1}.
LossResult binary_cross_entropy(const Matrix& probs, const Matrix& targets,
                                std::span<const double> class_weights = {});

/// Categorical cross-entropy over N x K probabilities and one-hot targets.
LossResult categorical_cross_entropy(const Matrix& probs, const Matrix& onehot,
                                     std::span<const double> class_weights = {});

/// 1 - mean_k 2 sTP_k / (2 sTP_k + sFP_k + sFN_k) with soft counts.
LossResult soft_f1(const Matrix& probs, const Matrix& onehot);

/// Per-class weights N / (K * n_k) from label counts; majority classes get
/// weights below one.
std::vector<double> balanced_class_weights(const std::vector<int>& labels, std::size_t classes);

// ---------------------------------------------------------------------------

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
  double weight_decay = 0.0;
};

struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  long step = 0;

  /// Zero moments shaped like the parameters.
  static AdamState for_params(std::span<Param* const> params);
};

/// Bias-corrected Adam update. Weight decay is added to the gradient as
/// decay * w before the moment update. Frozen parameters are skipped.
void adam_step(std::span<Param* const> params, AdamState& state, const AdamOptions& opt);

}  // namespace oflg::nn
