#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "oflg/corpus.hpp"
#include "oflg/embeddings.hpp"
#include "oflg/model.hpp"

namespace oflg {

enum class EmbeddingSource { Cbow, ExternalFile };

/// Resolved run configuration. JSON layout:
///   data{train_path, test_path, task, val_fraction, seed}
///   resample{p_u}
///   embeddings{source, path, dim, window, negatives, epochs, learning_rate,
///              subsample, min_n, max_n, buckets}
///   model{seq_len, lstm_hidden, conv_kernel, conv_filters, ffnn_hidden,
///         use_user_count, learning_rate, weight_decay, dropout, batch_size,
///         max_epochs, patience, loss, freeze_trunk, max_steps_per_epoch}
///   output{dir}
struct RunConfig {
  std::filesystem::path train_path;
  std::filesystem::path test_path;
  Task task = Task::A;
  double val_fraction = 0.2;
  std::uint64_t seed = 0;

  std::optional<double> undersample_fraction;  // default depends on the task

  EmbeddingSource embedding_source = EmbeddingSource::Cbow;
  std::filesystem::path embedding_path;
  NgramConfig ngrams;
  CbowParams cbow;

  ModelArch arch;  // vocab_size, embed_dim, output_units and task are filled at run time
  TrainConfig train;

  std::filesystem::path output_dir;
  std::size_t threads = 1;
  bool deterministic = false;

  double resolved_undersample_fraction() const;
  void validate() const;
};

/// Throws Error naming the first missing required key (data.train_path,
/// output.dir) or any value of the wrong type.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& c);

/// p_u picked by cross-validation for each task: 0.3 (A), 0.2 (B), 0.7 (C).
double default_undersample_fraction(Task task);

std::vector<TweetRecord> read_olid_file(const std::filesystem::path& path);

/// Task-filtered records split into train and validation, stratified by label.
struct SplitData {
  std::vector<TweetRecord> train;
  std::vector<TweetRecord> val;
};
SplitData split_records(const std::vector<TweetRecord>& records, Task task, double val_fraction,
                        std::uint64_t seed);

std::vector<std::vector<std::string>> token_lists(const std::vector<TweetRecord>& records);
std::vector<EncodedExample> encode_records(const std::vector<TweetRecord>& records, Task task,
                                           const Vocabulary& vocab, std::size_t seq_len);

struct TrainRunResult {
  TrainResult result;
  Vocabulary vocab;
  std::filesystem::path model_path;
  std::filesystem::path history_path;
  std::size_t train_examples = 0;  // after rebalancing
};

/// Split, rebalance the training part, build the vocabulary, obtain
/// embeddings, train with early stopping; writes model.bin, vocab.txt,
/// history.csv and run.json under output_dir.
TrainRunResult run_train(const RunConfig& config);

/// Fine-tunes a copy of a task-A model's trunk with a fresh head for
/// config.task (B or C); the vocabulary comes from `source_vocab`.
TrainRunResult run_transfer(const RunConfig& config, const std::filesystem::path& source_model,
                            const std::filesystem::path& source_vocab);

/// Writes `id,label` rows for every record of `input`.
void run_predict(const std::filesystem::path& model_path, const std::filesystem::path& vocab_path,
                 const std::filesystem::path& input, const std::filesystem::path& output_csv);

/// Writes `run.json` capturing the resolved config plus `extra`.
void write_run_manifest(const RunConfig& config, const std::string& command,
                        const nlohmann::json& extra = {});

inline constexpr const char* kToolkitVersion = "1.0.0";

}  // namespace oflg
