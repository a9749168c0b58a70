#include "oflg/pipeline.hpp"

#include <fstream>

#include "oflg/resample.hpp"

namespace oflg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

template <typename T>
void read_opt(const json& section, const std::string& prefix, const char* key, T& out) {
  if (!section.contains(key)) return;
  try {
    out = section.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error("config key " + prefix + "." + key + " has the wrong type");
  }
}

const json& section(const json& j, const char* name) {
  static const json empty = json::object();
  if (!j.contains(name)) return empty;
  if (!j.at(name).is_object()) throw Error(std::string("config section '") + name + "' must be an object");
  return j.at(name);
}

}  // namespace

double default_undersample_fraction(Task task) {
  switch (task) {
    case Task::A: return 0.3;
    case Task::B: return 0.2;
    case Task::C: return 0.7;
  }
  return 0.3;
}

double RunConfig::resolved_undersample_fraction() const {
  return undersample_fraction.value_or(default_undersample_fraction(task));
}

void RunConfig::validate() const {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw Error("data.val_fraction must lie in (0, 1)");
  const double pu = resolved_undersample_fraction();
  if (!(pu >= 0.0 && pu <= 1.0)) throw Error("resample.p_u must lie in [0, 1]");
  if (embedding_source == EmbeddingSource::ExternalFile && embedding_path.empty()) {
    throw Error("missing config key embeddings.path (required for external_file)");
  }
  ngrams.validate();
  cbow.validate();
  train.validate();
}

RunConfig parse_run_config(const json& j) {
  if (!j.is_object()) throw Error("config must be a JSON object");
  RunConfig c;
  const auto& data = section(j, "data");
  if (!data.contains("train_path")) throw Error("missing config key data.train_path");
  std::string s;
  read_opt(data, "data", "train_path", s);
  c.train_path = s;
  s.clear();
  read_opt(data, "data", "test_path", s);
  c.test_path = s;
  std::string task = "a";
  read_opt(data, "data", "task", task);
  c.task = parse_task(task);
  read_opt(data, "data", "val_fraction", c.val_fraction);
  read_opt(data, "data", "seed", c.seed);

  const auto& rs = section(j, "resample");
  if (rs.contains("p_u")) {
    double pu = 0.0;
    read_opt(rs, "resample", "p_u", pu);
    c.undersample_fraction = pu;
  }

  const auto& emb = section(j, "embeddings");
  std::string source = "cbow";
  read_opt(emb, "embeddings", "source", source);
  if (source == "cbow") c.embedding_source = EmbeddingSource::Cbow;
  else if (source == "external_file") c.embedding_source = EmbeddingSource::ExternalFile;
  else throw Error("embeddings.source must be 'cbow' or 'external_file'");
  s.clear();
  read_opt(emb, "embeddings", "path", s);
  c.embedding_path = s;
  read_opt(emb, "embeddings", "dim", c.cbow.dim);
  read_opt(emb, "embeddings", "window", c.cbow.window);
  read_opt(emb, "embeddings", "negatives", c.cbow.negatives);
  read_opt(emb, "embeddings", "epochs", c.cbow.epochs);
  read_opt(emb, "embeddings", "learning_rate", c.cbow.learning_rate);
  read_opt(emb, "embeddings", "subsample", c.cbow.subsample);
  read_opt(emb, "embeddings", "min_n", c.ngrams.min_n);
  read_opt(emb, "embeddings", "max_n", c.ngrams.max_n);
  read_opt(emb, "embeddings", "buckets", c.ngrams.buckets);

  const auto& m = section(j, "model");
  read_opt(m, "model", "seq_len", c.arch.seq_len);
  read_opt(m, "model", "lstm_hidden", c.arch.lstm_hidden);
  read_opt(m, "model", "conv_kernel", c.arch.conv_kernel);
  read_opt(m, "model", "conv_filters", c.arch.conv_filters);
  read_opt(m, "model", "ffnn_hidden", c.arch.ffnn_hidden);
  read_opt(m, "model", "use_user_count", c.arch.use_user_count);
  read_opt(m, "model", "learning_rate", c.train.learning_rate);
  read_opt(m, "model", "weight_decay", c.train.weight_decay);
  read_opt(m, "model", "dropout", c.train.dropout);
  read_opt(m, "model", "batch_size", c.train.batch_size);
  read_opt(m, "model", "max_epochs", c.train.max_epochs);
  read_opt(m, "model", "patience", c.train.patience);
  read_opt(m, "model", "freeze_trunk", c.train.freeze_trunk);
  read_opt(m, "model", "max_steps_per_epoch", c.train.max_steps_per_epoch);
  std::string loss = loss_name(c.train.loss);
  read_opt(m, "model", "loss", loss);
  c.train.loss = parse_loss(loss);

  const auto& out = section(j, "output");
  if (!out.contains("dir")) throw Error("missing config key output.dir");
  s.clear();
  read_opt(out, "output", "dir", s);
  c.output_dir = s;

  c.train.seed = c.seed;
  c.cbow.seed = c.seed;
  c.validate();
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  try {
    return parse_run_config(json::parse(in));
  } catch (const json::parse_error& e) {
    throw Error("config " + path.string() + ": " + e.what());
  }
}

json to_json(const RunConfig& c) {
  return {
      {"data",
       {{"train_path", c.train_path.string()},
        {"test_path", c.test_path.string()},
        {"task", std::string(1, static_cast<char>(std::tolower(task_letter(c.task))))},
        {"val_fraction", c.val_fraction},
        {"seed", c.seed}}},
      {"resample", {{"p_u", c.resolved_undersample_fraction()}}},
      {"embeddings",
       {{"source", c.embedding_source == EmbeddingSource::Cbow ? "cbow" : "external_file"},
        {"path", c.embedding_path.string()},
        {"dim", c.cbow.dim},
        {"window", c.cbow.window},
        {"negatives", c.cbow.negatives},
        {"epochs", c.cbow.epochs},
        {"learning_rate", c.cbow.learning_rate},
        {"subsample", c.cbow.subsample},
        {"min_n", c.ngrams.min_n},
        {"max_n", c.ngrams.max_n},
        {"buckets", c.ngrams.buckets}}},
      {"model",
       {{"seq_len", c.arch.seq_len},
        {"lstm_hidden", c.arch.lstm_hidden},
        {"conv_kernel", c.arch.conv_kernel},
        {"conv_filters", c.arch.conv_filters},
        {"ffnn_hidden", c.arch.ffnn_hidden},
        {"use_user_count", c.arch.use_user_count},
        {"learning_rate", c.train.learning_rate},
        {"weight_decay", c.train.weight_decay},
        {"dropout", c.train.dropout},
        {"batch_size", c.train.batch_size},
        {"max_epochs", c.train.max_epochs},
        {"patience", c.train.patience},
        {"loss", loss_name(c.train.loss)},
        {"freeze_trunk", c.train.freeze_trunk},
        {"max_steps_per_epoch", c.train.max_steps_per_epoch}}},
      {"output", {{"dir", c.output_dir.string()}}},
  };
}

std::vector<TweetRecord> read_olid_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  try {
    return parse_olid(in);
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

SplitData split_records(const std::vector<TweetRecord>& records, Task task, double val_fraction,
                        std::uint64_t seed) {
  const auto filtered = filter_task(records, task);
  std::vector<int> labels;
  for (const auto& r : filtered) labels.push_back(*r.label(task));
  const auto [train_idx, val_idx] = stratified_split(labels, val_fraction, seed);
  SplitData out;
  for (auto i : train_idx) out.train.push_back(filtered[i]);
  for (auto i : val_idx) out.val.push_back(filtered[i]);
  return out;
}

std::vector<std::vector<std::string>> token_lists(const std::vector<TweetRecord>& records) {
  std::vector<std::vector<std::string>> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(tokenize(r.clean_text));
  return out;
}

std::vector<EncodedExample> encode_records(const std::vector<TweetRecord>& records, Task task,
                                           const Vocabulary& vocab, std::size_t seq_len) {
  std::vector<EncodedExample> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    EncodedExample e;
    e.indices = encode(tokenize(r.clean_text), vocab, seq_len);
    e.user_count = r.user_count;
    e.label = r.label(task).value_or(0);
    out.push_back(std::move(e));
  }
  return out;
}

void write_run_manifest(const RunConfig& config, const std::string& command, const json& extra) {
  fs::create_directories(config.output_dir);
  json j{{"command", command},
         {"config", to_json(config)},
         {"seed", config.seed},
         {"threads", config.threads},
         {"deterministic", config.deterministic},
         {"versions", {{"toolkit", kToolkitVersion}, {"model_format", "OFLG1"}}}};
  if (!extra.is_null()) j["results"] = extra;
  std::ofstream out(config.output_dir / "run.json");
  out << j.dump(2) << '\n';
}

namespace {

nn::Matrix embedding_matrix_for(const RunConfig& config, const Vocabulary& vocab,
                                const std::vector<std::vector<std::string>>& train_tokens) {
  if (config.embedding_source == EmbeddingSource::ExternalFile) {
    std::ifstream in(config.embedding_path);
    if (!in) throw Error("cannot open embeddings " + config.embedding_path.string());
    return build_embedding_matrix(vocab, load_text_embeddings(in));
  }
  return build_embedding_matrix(vocab, train_cbow(train_tokens, config.ngrams, config.cbow));
}

TrainRunResult finish_training(const RunConfig& config, Model model, const Vocabulary& vocab,
                               const std::vector<EncodedExample>& train_set,
                               const std::vector<EncodedExample>& val_set, const std::string& command) {
  TrainRunResult out;
  out.vocab = vocab;
  out.train_examples = train_set.size();
  out.result = train(std::move(model), train_set, val_set, config.train);

  fs::create_directories(config.output_dir);
  out.model_path = config.output_dir / "model.bin";
  out.history_path = config.output_dir / "history.csv";
  save_model(out.model_path, out.result.best, vocab.hash());
  {
    std::ofstream v(config.output_dir / "vocab.txt");
    vocab.save(v);
  }
  {
    std::ofstream h(out.history_path);
    write_history_csv(h, out.result.history);
  }
  json summary = json::array();
  for (const auto& row : out.result.best.summary()) {
    summary.push_back({{"layer", row.name}, {"output_shape", row.output_shape}, {"params", row.params}});
  }
  write_run_manifest(config, command,
                     {{"best_epoch", out.result.best_epoch},
                      {"train_examples", out.train_examples},
                      {"val_examples", val_set.size()},
                      {"vocab_size", vocab.size()},
                      {"layers", summary}});
  return out;
}

}  // namespace

TrainRunResult run_train(const RunConfig& config) {
  config.validate();
  const auto split = split_records(read_olid_file(config.train_path), config.task,
                                   config.val_fraction, config.seed);
  if (split.train.empty() || split.val.empty()) throw Error("not enough labelled records to split");
  const auto train_tokens = token_lists(split.train);
  const auto vocab = Vocabulary::build(train_tokens);

  ModelArch arch = config.arch;
  arch.vocab_size = vocab.size();
  arch.task = config.task;
  arch.output_units = output_units_for(config.task);
  const auto matrix = embedding_matrix_for(config, vocab, train_tokens);
  arch.embed_dim = static_cast<std::size_t>(matrix.cols());

  const auto encoded = encode_records(split.train, config.task, vocab, arch.seq_len);
  const auto balanced = rebalance(encoded, [](const EncodedExample& e) { return e.label; },
                                  config.resolved_undersample_fraction(), config.seed);
  const auto val = encode_records(split.val, config.task, vocab, arch.seq_len);

  Model model = Model::build(arch, matrix, config.seed);
  return finish_training(config, std::move(model), vocab, balanced, val, "train");
}

TrainRunResult run_transfer(const RunConfig& config, const fs::path& source_model,
                            const fs::path& source_vocab) {
  config.validate();
  if (config.task == Task::A) throw Error("transfer targets task b or c");
  std::ifstream vin(source_vocab);
  if (!vin) throw Error("cannot open " + source_vocab.string());
  const auto vocab = Vocabulary::load(vin);
  const auto hash = vocab.hash();
  const Model source = load_model(source_model, &hash);

  const auto split = split_records(read_olid_file(config.train_path), config.task,
                                   config.val_fraction, config.seed);
  if (split.train.empty() || split.val.empty()) throw Error("not enough labelled records to split");
  const std::size_t L = source.arch().seq_len;
  const auto encoded = encode_records(split.train, config.task, vocab, L);
  const auto balanced = rebalance(encoded, [](const EncodedExample& e) { return e.label; },
                                  config.resolved_undersample_fraction(), config.seed);
  const auto val = encode_records(split.val, config.task, vocab, L);
  Model model = transfer(source, config.task, config.seed);
  return finish_training(config, std::move(model), vocab, balanced, val, "transfer");
}

void run_predict(const fs::path& model_path, const fs::path& vocab_path, const fs::path& input,
                 const fs::path& output_csv) {
  std::ifstream vin(vocab_path);
  if (!vin) throw Error("cannot open " + vocab_path.string());
  const auto vocab = Vocabulary::load(vin);
  const auto hash = vocab.hash();
  Model model = load_model(model_path, &hash);
  const auto records = read_olid_file(input);
  const Task task = model.arch().task;
  const auto labels = predict(model, encode_records(records, task, vocab, model.arch().seq_len));
  std::ofstream out(output_csv);
  if (!out) throw Error("cannot write " + output_csv.string());
  out << "id,label\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    out << records[i].id << ',' << class_names(task)[static_cast<std::size_t>(labels[i])] << '\n';
  }
}

}  // namespace oflg
