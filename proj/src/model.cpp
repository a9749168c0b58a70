#include "oflg/model.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "json.hpp"
#include "oflg/eval.hpp"

namespace oflg {

using nn::Matrix;
using nn::Param;

namespace {

constexpr std::string_view kMagic = "OFLG1";

std::string shape(std::initializer_list<std::size_t> dims) {
  std::string s = "(";
  bool first = true;
  for (auto d : dims) {
    if (!first) s += ", ";
    s += std::to_string(d);
    first = false;
  }
  return s + ")";
}

}  // namespace

void ModelArch::validate() const {
  if (vocab_size < 2 || seq_len == 0 || embed_dim == 0 || lstm_hidden == 0 || conv_kernel == 0 ||
      conv_filters == 0 || ffnn_hidden == 0) {
    throw Error("model architecture sizes must be positive (vocabulary at least 2)");
  }
  if (output_units != 1 && output_units != 3) throw Error("output units must be 1 or 3");
  if (seq_len < conv_kernel) throw Error("sequence length shorter than the convolution kernel");
}

bool operator==(const ModelArch& a, const ModelArch& b) {
  return a.vocab_size == b.vocab_size && a.seq_len == b.seq_len && a.embed_dim == b.embed_dim &&
         a.lstm_hidden == b.lstm_hidden && a.conv_kernel == b.conv_kernel &&
         a.conv_filters == b.conv_filters && a.ffnn_hidden == b.ffnn_hidden &&
         a.output_units == b.output_units && a.use_user_count == b.use_user_count &&
         a.task == b.task;
}

std::size_t output_units_for(Task task) { return task == Task::C ? 3 : 1; }

// ---------------------------------------------------------------------------

Model Model::build(const ModelArch& arch, const Matrix& embedding_matrix, std::uint64_t seed) {
  arch.validate();
  if (static_cast<std::size_t>(embedding_matrix.rows()) != arch.vocab_size ||
      static_cast<std::size_t>(embedding_matrix.cols()) != arch.embed_dim) {
    throw Error("embedding matrix is " + std::to_string(embedding_matrix.rows()) + "x" +
                std::to_string(embedding_matrix.cols()) + ", architecture expects " +
                std::to_string(arch.vocab_size) + "x" + std::to_string(arch.embed_dim));
  }
  const auto ix = [](std::size_t v) { return static_cast<Eigen::Index>(v); };
  Model m;
  m.arch_ = arch;
  m.embedding = Param("embedding", ix(arch.vocab_size), ix(arch.embed_dim));
  m.embedding.value = embedding_matrix;
  m.bilstm = nn::BiLstm(ix(arch.embed_dim), ix(arch.lstm_hidden));
  m.conv = nn::Conv1d(ix(2 * arch.lstm_hidden), ix(arch.conv_filters), ix(arch.conv_kernel));

  Rng rng(seed);
  m.bilstm.forward_params.init(rng);
  m.bilstm.backward_params.init(rng);
  m.conv.init(rng);
  m.init_head(rng);
  return m;
}

void Model::init_head(Rng& rng) {
  const auto ix = [](std::size_t v) { return static_cast<Eigen::Index>(v); };
  hidden = nn::Dense("dense", ix(arch_.pooled_width()), ix(arch_.ffnn_hidden));
  output = nn::Dense("dense_out", ix(arch_.ffnn_hidden), ix(arch_.output_units));
  hidden.init(rng);
  output.init(rng);
}

Matrix Model::forward(const std::vector<EncodedExample>& batch, bool train, double dropout,
                      Rng& rng) {
  if (batch.empty()) throw Error("forward on an empty batch");
  const auto B = static_cast<Eigen::Index>(batch.size());
  const std::size_t L = arch_.seq_len;
  const auto d = static_cast<Eigen::Index>(arch_.embed_dim);

  batch_indices_.clear();
  nn::SeqBatch emb = nn::SeqBatch::zeros(L, B, d);
  for (Eigen::Index b = 0; b < B; ++b) {
    const auto& idx = batch[static_cast<std::size_t>(b)].indices;
    if (idx.size() != L) {
      throw Error("example has " + std::to_string(idx.size()) + " indices, expected " +
                  std::to_string(L));
    }
    for (std::size_t t = 0; t < L; ++t) {
      if (idx[t] < 0 || static_cast<std::size_t>(idx[t]) >= arch_.vocab_size) {
        throw Error("token index " + std::to_string(idx[t]) + " outside vocabulary of size " +
                    std::to_string(arch_.vocab_size));
      }
      emb.steps[t].row(b) = embedding.value.row(idx[t]);
    }
    batch_indices_.push_back(idx);
  }

  const auto dropped = dropout_.forward(emb, dropout, train, rng);
  const auto seq = bilstm.forward(dropped);
  const auto conv_out = conv.forward(seq);
  conv_len_ = conv_out.length();
  max_pool_ = nn::global_max_pool(conv_out);
  features_ = nn::concat(max_pool_.values, nn::global_avg_pool(conv_out));
  if (arch_.use_user_count) {
    Matrix uc(B, 1);
    for (Eigen::Index b = 0; b < B; ++b) {
      uc(b, 0) = static_cast<double>(batch[static_cast<std::size_t>(b)].user_count) / 10.0;
    }
    features_ = nn::concat(features_, uc);
  }
  hidden_pre_ = hidden.forward(features_);
  const Matrix logits = output.forward(nn::relu(hidden_pre_));
  probs_ = arch_.output_units == 1 ? nn::sigmoid(logits) : nn::softmax(logits);
  return probs_;
}

void Model::backward(const Matrix& dprobs) {
  const Matrix dlogits = arch_.output_units == 1 ? nn::sigmoid_backward(probs_, dprobs)
                                                 : nn::softmax_backward(probs_, dprobs);
  const Matrix dhidden = output.backward(nn::relu(hidden_pre_), dlogits);
  const Matrix dfeatures = hidden.backward(features_, nn::relu_backward(hidden_pre_, dhidden));

  const auto F = static_cast<Eigen::Index>(arch_.conv_filters);
  auto dconv = nn::global_max_pool_backward(max_pool_, conv_len_, dfeatures.leftCols(F));
  const auto davg = nn::global_avg_pool_backward(conv_len_, dfeatures.middleCols(F, F));
  for (std::size_t t = 0; t < conv_len_; ++t) dconv.steps[t] += davg.steps[t];

  const auto dseq = conv.backward(dconv);
  const auto demb = dropout_.backward(bilstm.backward(dseq));
  for (std::size_t b = 0; b < batch_indices_.size(); ++b) {
    const auto& idx = batch_indices_[b];
    for (std::size_t t = 0; t < idx.size(); ++t) {
      embedding.grad.row(idx[t]) += demb.steps[t].row(static_cast<Eigen::Index>(b));
    }
  }
}

std::vector<Param*> Model::trunk_params() {
  std::vector<Param*> p{&embedding};
  for (auto* q : bilstm.params()) p.push_back(q);
  for (auto* q : conv.params()) p.push_back(q);
  return p;
}

std::vector<Param*> Model::head_params() {
  auto p = hidden.params();
  for (auto* q : output.params()) p.push_back(q);
  return p;
}

std::vector<Param*> Model::params() {
  auto p = trunk_params();
  for (auto* q : head_params()) p.push_back(q);
  return p;
}

std::vector<const Param*> Model::params() const {
  std::vector<const Param*> out;
  for (auto* p : const_cast<Model*>(this)->params()) out.push_back(p);
  return out;
}

void Model::zero_grad() {
  for (auto* p : params()) p->zero_grad();
}

void Model::set_trunk_frozen(bool frozen) {
  for (auto* p : trunk_params()) p->frozen = frozen;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : params()) n += p->size();
  return n;
}

std::vector<LayerSummary> Model::summary() const {
  const auto& a = arch_;
  const std::size_t conv_len = a.seq_len - a.conv_kernel + 1;
  std::vector<LayerSummary> rows{
      {"embedding", shape({a.seq_len, a.embed_dim}), embedding.size()},
      {"spatial_dropout", shape({a.seq_len, a.embed_dim}), 0},
      {"bidirectional", shape({a.seq_len, 2 * a.lstm_hidden}), bilstm.parameter_count()},
      {"conv", shape({conv_len, a.conv_filters}), conv.parameter_count()},
      {"max_pooling", shape({a.conv_filters}), 0},
      {"average_pooling", shape({a.conv_filters}), 0},
      {"concatenate", shape({2 * a.conv_filters}), 0},
  };
  if (a.use_user_count) rows.push_back({"user_count", shape({a.pooled_width()}), 0});
  rows.push_back({"dense", shape({a.ffnn_hidden}), hidden.parameter_count()});
  rows.push_back({"dense", shape({a.output_units}), output.parameter_count()});
  return rows;
}

// ---------------------------------------------------------------------------

std::vector<int> decide(const Matrix& probs) {
  std::vector<int> labels(static_cast<std::size_t>(probs.rows()));
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    if (probs.cols() == 1) {
      labels[static_cast<std::size_t>(r)] = probs(r, 0) >= 0.5 ? 1 : 0;
      continue;
    }
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < probs.cols(); ++c) {
      if (probs(r, c) > probs(r, best)) best = c;
    }
    labels[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  return labels;
}

Matrix predict_proba(Model& model, const std::vector<EncodedExample>& examples,
                     std::size_t chunk) {
  Matrix out(static_cast<Eigen::Index>(examples.size()),
             static_cast<Eigen::Index>(model.arch().output_units));
  Rng unused(0);
  for (std::size_t start = 0; start < examples.size(); start += chunk) {
    const std::size_t end = std::min(examples.size(), start + chunk);
    std::vector<EncodedExample> batch(examples.begin() + static_cast<std::ptrdiff_t>(start),
                                      examples.begin() + static_cast<std::ptrdiff_t>(end));
    out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(end - start)) =
        model.forward(batch, false, 0.0, unused);
  }
  return out;
}

std::vector<int> predict(Model& model, const std::vector<EncodedExample>& examples) {
  return decide(predict_proba(model, examples));
}

Model transfer(const Model& source, Task task, std::uint64_t seed) {
  if (source.arch().task != Task::A || source.arch().output_units != 1) {
    throw Error("transfer needs a trunk trained on task A");
  }
  if (task == Task::A) throw Error("transfer target must be task B or C");
  Model m;
  m.arch_ = source.arch_;
  m.arch_.task = task;
  m.arch_.output_units = output_units_for(task);
  m.embedding = source.embedding;
  m.bilstm = source.bilstm;
  m.conv = source.conv;
  for (auto* p : m.trunk_params()) {
    p->zero_grad();
    p->frozen = false;
  }
  Rng rng(seed);
  m.init_head(rng);
  return m;
}

// ---------------------------------------------------------------------------

LossKind parse_loss(std::string_view text) {
  if (text == "cross_entropy" || text == "ce") return LossKind::CrossEntropy;
  if (text == "weighted_cross_entropy" || text == "weighted_ce") return LossKind::WeightedCrossEntropy;
  if (text == "soft_f1") return LossKind::SoftF1;
  throw Error("unknown loss '" + std::string(text) +
              "' (expected cross_entropy, weighted_cross_entropy or soft_f1)");
}

std::string loss_name(LossKind loss) {
  switch (loss) {
    case LossKind::CrossEntropy: return "cross_entropy";
    case LossKind::WeightedCrossEntropy: return "weighted_cross_entropy";
    case LossKind::SoftF1: return "soft_f1";
  }
  return "cross_entropy";
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw Error("learning rate must be positive");
  if (weight_decay < 0.0) throw Error("weight decay must be non-negative");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw Error("dropout must lie in [0, 1)");
  if (batch_size == 0) throw Error("batch size must be positive");
  if (patience == 0) throw Error("patience must be at least 1");
  if (max_epochs == 0) throw Error("max epochs must be positive");
}

nn::LossResult batch_loss(const Matrix& probs, const std::vector<int>& labels, LossKind loss,
                          std::span<const double> class_weights) {
  const auto n = probs.rows();
  if (probs.cols() == 1) {
    Matrix y(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) y(i, 0) = labels[static_cast<std::size_t>(i)];
    if (loss == LossKind::SoftF1) {
      // one sigmoid unit scores both classes: columns (1 - p, p)
      Matrix p2(n, 2), y2(n, 2);
      p2.col(0) = 1.0 - probs.col(0).array();
      p2.col(1) = probs.col(0);
      y2.col(0) = 1.0 - y.col(0).array();
      y2.col(1) = y.col(0);
      auto r = nn::soft_f1(p2, y2);
      nn::LossResult out;
      out.value = r.value;
      out.grad = r.grad.col(1) - r.grad.col(0);
      return out;
    }
    return nn::binary_cross_entropy(
        probs, y, loss == LossKind::WeightedCrossEntropy ? class_weights : std::span<const double>{});
  }
  Matrix onehot = Matrix::Zero(n, probs.cols());
  for (Eigen::Index i = 0; i < n; ++i) onehot(i, labels[static_cast<std::size_t>(i)]) = 1.0;
  if (loss == LossKind::SoftF1) return nn::soft_f1(probs, onehot);
  return nn::categorical_cross_entropy(
      probs, onehot, loss == LossKind::WeightedCrossEntropy ? class_weights : std::span<const double>{});
}

EarlyStopping::EarlyStopping(std::size_t patience) : patience_(patience) {
  if (patience == 0) throw Error("patience must be at least 1");
}

bool EarlyStopping::update(double metric) {
  ++epochs_;
  last_improved_ = best_epoch_ == 0 || metric > best_;
  if (last_improved_) {
    best_ = metric;
    best_epoch_ = epochs_;
    since_best_ = 0;
    return false;
  }
  return ++since_best_ >= patience_;
}

TrainResult train(Model model, const std::vector<EncodedExample>& train_set,
                  const std::vector<EncodedExample>& val_set, const TrainConfig& config) {
  config.validate();
  if (train_set.empty() || val_set.empty()) throw Error("training and validation sets must be non-empty");

  const std::size_t k = model.arch().output_units == 1 ? 2 : 3;
  std::vector<int> train_labels;
  for (const auto& e : train_set) train_labels.push_back(e.label);
  const auto weights = nn::balanced_class_weights(train_labels, k);
  std::vector<int> val_labels;
  for (const auto& e : val_set) val_labels.push_back(e.label);

  model.set_trunk_frozen(config.freeze_trunk);
  auto params = model.params();
  auto adam = nn::AdamState::for_params(params);
  const nn::AdamOptions opt{config.learning_rate, 0.9, 0.999, 1e-7, config.weight_decay};

  Rng rng(config.seed);
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainResult result;
  EarlyStopping stopper(config.patience);
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t seen = 0, steps = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      if (config.max_steps_per_epoch && steps >= config.max_steps_per_epoch) break;
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<EncodedExample> batch;
      std::vector<int> labels;
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(train_set[order[i]]);
        labels.push_back(train_set[order[i]].label);
      }
      model.zero_grad();
      const Matrix probs = model.forward(batch, true, config.dropout, rng);
      const auto loss = batch_loss(probs, labels, config.loss, weights);
      model.backward(loss.grad);
      nn::adam_step(params, adam, opt);
      loss_sum += loss.value * static_cast<double>(batch.size());
      seen += batch.size();
      ++steps;
    }

    const auto report = evaluate(val_labels, predict(model, val_set), k);
    result.history.push_back({epoch, loss_sum / static_cast<double>(seen), report.accuracy,
                              report.macro_f1});
    const bool stop = stopper.update(report.accuracy);
    if (stopper.last_improved()) {
      result.best = model;
      result.best_epoch = epoch;
    }
    if (stop) break;
  }
  result.best.set_trunk_frozen(false);
  return result;
}

void write_history_csv(std::ostream& out, const std::vector<EpochRecord>& history) {
  out << "epoch,train_loss,val_accuracy,val_macro_f1\n";
  for (const auto& h : history) {
    out << h.epoch << ',' << format_double(h.train_loss) << ',' << format_double(h.val_accuracy)
        << ',' << format_double(h.val_macro_f1) << '\n';
  }
}

// ---------------------------------------------------------------------------

namespace {

nlohmann::json arch_to_json(const ModelArch& a) {
  return {{"vocab_size", a.vocab_size},     {"seq_len", a.seq_len},
          {"embed_dim", a.embed_dim},       {"lstm_hidden", a.lstm_hidden},
          {"conv_kernel", a.conv_kernel},   {"conv_filters", a.conv_filters},
          {"ffnn_hidden", a.ffnn_hidden},   {"output_units", a.output_units},
          {"use_user_count", a.use_user_count},
          {"task", std::string(1, task_letter(a.task))}};
}

ModelArch arch_from_json(const nlohmann::json& j) {
  ModelArch a;
  a.vocab_size = j.at("vocab_size").get<std::size_t>();
  a.seq_len = j.at("seq_len").get<std::size_t>();
  a.embed_dim = j.at("embed_dim").get<std::size_t>();
  a.lstm_hidden = j.at("lstm_hidden").get<std::size_t>();
  a.conv_kernel = j.at("conv_kernel").get<std::size_t>();
  a.conv_filters = j.at("conv_filters").get<std::size_t>();
  a.ffnn_hidden = j.at("ffnn_hidden").get<std::size_t>();
  a.output_units = j.at("output_units").get<std::size_t>();
  a.use_user_count = j.at("use_user_count").get<bool>();
  a.task = parse_task(j.at("task").get<std::string>());
  a.validate();
  return a;
}

void write_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

std::uint64_t read_u64(const char* b) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[i])) << (8 * i);
  return v;
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

std::uint64_t parse_hex64(const std::string& s) {
  std::uint64_t v = 0;
  for (char c : s) {
    v <<= 4;
    if (c >= '0' && c <= '9') v |= static_cast<std::uint64_t>(c - '0');
    else if (c >= 'a' && c <= 'f') v |= static_cast<std::uint64_t>(c - 'a' + 10);
    else throw Error("model file: bad vocabulary hash");
  }
  return v;
}

struct ParsedHeader {
  nlohmann::json header;
  std::size_t payload_offset = 0;
};

ParsedHeader parse_header(const std::string& bytes) {
  const std::size_t min = kMagic.size() + 8;
  if (bytes.size() < min || bytes.compare(0, kMagic.size(), kMagic) != 0) {
    throw Error("not a model file (bad magic)");
  }
  const std::uint64_t len = read_u64(bytes.data() + kMagic.size());
  if (len > bytes.size() - min) throw Error("model file truncated in header");
  ParsedHeader p;
  try {
    p.header = nlohmann::json::parse(bytes.substr(min, len));
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("model file: corrupt header: ") + e.what());
  }
  p.payload_offset = min + len;
  return p;
}

std::string read_all(std::istream& in) {
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

void save_model(std::ostream& out, const Model& model, std::uint64_t vocab_hash) {
  static_assert(std::endian::native == std::endian::little, "payload writer assumes little-endian");
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto* p : model.params()) {
    manifest.push_back({{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}});
  }
  const nlohmann::json header{{"format", std::string(kMagic)},
                              {"arch", arch_to_json(model.arch())},
                              {"vocab_hash", hex64(vocab_hash)},
                              {"tensors", manifest}};
  const std::string text = header.dump();
  out.write(kMagic.data(), static_cast<std::streamsize>(kMagic.size()));
  write_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto* p : model.params()) {
    out.write(reinterpret_cast<const char*>(p->value.data()),
              static_cast<std::streamsize>(p->value.size() * sizeof(double)));
  }
  if (!out) throw Error("failed writing model");
}

Model load_model(std::istream& in, const std::uint64_t* expected_vocab_hash) {
  const std::string bytes = read_all(in);
  const auto parsed = parse_header(bytes);
  const auto& h = parsed.header;
  try {
    const std::uint64_t hash = parse_hex64(h.at("vocab_hash").get<std::string>());
    if (expected_vocab_hash && hash != *expected_vocab_hash) {
      throw Error("model vocabulary hash " + hex64(hash) + " does not match vocabulary " +
                  hex64(*expected_vocab_hash));
    }
    const ModelArch arch = arch_from_json(h.at("arch"));
    Model m = Model::build(arch, Matrix::Zero(static_cast<Eigen::Index>(arch.vocab_size),
                                              static_cast<Eigen::Index>(arch.embed_dim)),
                           0);
    const auto params = m.params();
    const auto& manifest = h.at("tensors");
    if (manifest.size() != params.size()) throw Error("model file: tensor count mismatch");
    std::size_t offset = parsed.payload_offset;
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = *params[i];
      const auto& t = manifest[i];
      if (t.at("name").get<std::string>() != p.name || t.at("rows").get<Eigen::Index>() != p.value.rows() ||
          t.at("cols").get<Eigen::Index>() != p.value.cols()) {
        throw Error("model file: tensor '" + t.at("name").get<std::string>() +
                    "' does not match the architecture");
      }
      const std::size_t n = p.size() * sizeof(double);
      if (bytes.size() - offset < n) throw Error("model file truncated in tensor '" + p.name + "'");
      std::memcpy(p.value.data(), bytes.data() + offset, n);
      offset += n;
    }
    if (offset != bytes.size()) throw Error("model file has trailing bytes");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("model file: bad header: ") + e.what());
  }
}

void save_model(const std::filesystem::path& path, const Model& model, std::uint64_t vocab_hash) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  save_model(out, model, vocab_hash);
}

Model load_model(const std::filesystem::path& path, const std::uint64_t* expected_vocab_hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return load_model(in, expected_vocab_hash);
}

std::uint64_t model_vocab_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  const auto parsed = parse_header(read_all(in));
  return parse_hex64(parsed.header.at("vocab_hash").get<std::string>());
}

}  // namespace oflg
