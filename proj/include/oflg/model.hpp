#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "oflg/corpus.hpp"
#include "oflg/nn.hpp"

namespace oflg {

struct ModelArch {
  std::size_t vocab_size = 2;
  std::size_t seq_len = 63;
  std::size_t embed_dim = 100;
  std::size_t lstm_hidden = 128;  // per direction
  std::size_t conv_kernel = 2;
  std::size_t conv_filters = 64;
  std::size_t ffnn_hidden = 10;
  std::size_t output_units = 1;  // 1 = sigmoid (binary), 3 = softmax
  bool use_user_count = false;
  Task task = Task::A;

  /// Throws Error on non-positive sizes, output_units outside {1, 3}, or a
  /// sequence shorter than the kernel.
  void validate() const;
  std::size_t pooled_width() const { return 2 * conv_filters + (use_user_count ? 1 : 0); }
};

bool operator==(const ModelArch& a, const ModelArch& b);

/// Output units for a task: binary tasks use one sigmoid unit, task C three.
std::size_t output_units_for(Task task);

/// One row of the layer summary: name, output shape, trainable parameters.
struct LayerSummary {
  std::string name;
  std::string output_shape;
  std::size_t params = 0;
};

/// Embedding, spatial dropout, BiLSTM, Conv1d (ReLU), global max and average
/// pooling, optional user-count feature, dense ReLU hidden layer and the
/// sigmoid or softmax output layer.
class Model {
 public:
  Model() = default;

  /// Embedding rows come from `embedding_matrix` (vocab_size x embed_dim);
  /// everything else is Glorot-uniform with zero biases and LSTM forget
  /// bias 1.
  static Model build(const ModelArch& arch, const nn::Matrix& embedding_matrix, std::uint64_t seed);

  const ModelArch& arch() const { return arch_; }

  /// Probabilities: batch x output_units.
  nn::Matrix forward(const std::vector<EncodedExample>& batch, bool train, double dropout,
                     Rng& rng);
  /// Backpropagates dL/dprobs from the latest forward into parameter grads.
  void backward(const nn::Matrix& dprobs);

  std::vector<nn::Param*> params();
  std::vector<const nn::Param*> params() const;
  /// Embedding, BiLSTM and convolution tensors.
  std::vector<nn::Param*> trunk_params();
  std::vector<nn::Param*> head_params();
  void zero_grad();
  void set_trunk_frozen(bool frozen);

  std::size_t parameter_count() const;
  std::vector<LayerSummary> summary() const;

  nn::Param embedding;
  nn::BiLstm bilstm;
  nn::Conv1d conv;
  nn::Dense hidden;
  nn::Dense output;

 private:
  void init_head(Rng& rng);
  friend Model transfer(const Model& source, Task task, std::uint64_t seed);
  friend Model load_model(std::istream& in, const std::uint64_t* expected_vocab_hash);

  ModelArch arch_;

  // forward cache
  std::vector<std::vector<int>> batch_indices_;
  nn::SpatialDropout dropout_;
  nn::MaxPoolResult max_pool_;
  std::size_t conv_len_ = 0;
  nn::Matrix features_, hidden_pre_, probs_;
};

/// Probability rule: out=1 is label 1 iff p >= 0.5; out=3 is the argmax with
/// ties to the lowest index.
std::vector<int> decide(const nn::Matrix& probs);

/// Inference in chunks, no dropout.
nn::Matrix predict_proba(Model& model, const std::vector<EncodedExample>& examples,
                         std::size_t chunk = 256);
std::vector<int> predict(Model& model, const std::vector<EncodedExample>& examples);

/// Copies the embedding, BiLSTM and convolution tensors of a task-A model
/// and attaches a freshly initialized head sized for `task`.
Model transfer(const Model& source, Task task, std::uint64_t seed);

enum class LossKind { CrossEntropy, WeightedCrossEntropy, SoftF1 };
LossKind parse_loss(std::string_view text);
std::string loss_name(LossKind loss);

struct TrainConfig {
  double learning_rate = 1e-3;
  double weight_decay = 0.0;
  double dropout = 0.5;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 10;
  std::size_t patience = 2;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::CrossEntropy;
  bool freeze_trunk = false;
  /// Optimizer steps per epoch cap (0 = full epoch); used for smoke runs.
  std::size_t max_steps_per_epoch = 0;

  void validate() const;
};

/// Loss and dL/dprobs for a batch, given the configured loss kind.
nn::LossResult batch_loss(const nn::Matrix& probs, const std::vector<int>& labels,
                          LossKind loss, std::span<const double> class_weights);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  double val_macro_f1 = 0.0;
};

/// Tracks the monitored metric; stops after `patience` epochs without a
/// strict improvement.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience);
  /// Records one epoch's metric; returns true when training should stop.
  bool update(double metric);
  bool last_improved() const { return last_improved_; }
  std::size_t best_epoch() const { return best_epoch_; }  // 1-based, 0 before any update
  double best_metric() const { return best_; }

 private:
  std::size_t patience_;
  std::size_t epochs_ = 0;
  std::size_t best_epoch_ = 0;
  std::size_t since_best_ = 0;
  double best_ = 0.0;
  bool last_improved_ = false;
};

struct TrainResult {
  Model best;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
};

/// Minibatch training with seeded per-epoch shuffles and early stopping on
/// validation accuracy. Returns the weights of the best epoch.
TrainResult train(Model model, const std::vector<EncodedExample>& train_set,
                  const std::vector<EncodedExample>& val_set, const TrainConfig& config);

void write_history_csv(std::ostream& out, const std::vector<EpochRecord>& history);

/// Binary model file: magic "OFLG1", u64 little-endian header length, JSON
/// header (arch, vocab hash, tensor manifest), then float64 LE payloads.
void save_model(std::ostream& out, const Model& model, std::uint64_t vocab_hash);
/// Throws on bad magic, truncation, trailing bytes, or (when given) a
/// vocabulary hash that differs from the file's.
Model load_model(std::istream& in, const std::uint64_t* expected_vocab_hash = nullptr);
void save_model(const std::filesystem::path& path, const Model& model, std::uint64_t vocab_hash);
Model load_model(const std::filesystem::path& path, const std::uint64_t* expected_vocab_hash = nullptr);
/// Vocabulary hash recorded in a model file.
std::uint64_t model_vocab_hash(const std::filesystem::path& path);

}  // namespace oflg
