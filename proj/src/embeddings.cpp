#include "oflg/embeddings.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

namespace oflg {

namespace {

// Byte offsets of code-point starts, plus the end offset.
std::vector<std::size_t> code_point_offsets(std::string_view s) {
  std::vector<std::size_t> offs;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if ((static_cast<unsigned char>(s[i]) & 0xC0) != 0x80) offs.push_back(i);
  }
  offs.push_back(s.size());
  return offs;
}

}  // namespace

void NgramConfig::validate() const {
  if (min_n < 1 || min_n > max_n) throw Error("n-gram range must satisfy 1 <= min_n <= max_n");
  if (buckets < 1) throw Error("bucket count must be positive");
}

std::vector<std::string> ngram_strings(std::string_view word, const NgramConfig& cfg) {
  cfg.validate();
  std::string wrapped = "<";
  wrapped.append(word);
  wrapped.push_back('>');
  const auto offs = code_point_offsets(wrapped);
  const std::size_t chars = offs.size() - 1;
  std::vector<std::string> grams;
  for (std::size_t n = cfg.min_n; n <= cfg.max_n && n <= chars; ++n) {
    for (std::size_t start = 0; start + n <= chars; ++start) {
      grams.push_back(wrapped.substr(offs[start], offs[start + n] - offs[start]));
    }
  }
  return grams;
}

std::vector<std::uint32_t> extract_ngrams(std::string_view word, const NgramConfig& cfg) {
  std::vector<std::uint32_t> ids;
  for (const auto& g : ngram_strings(word, cfg)) {
    ids.push_back(static_cast<std::uint32_t>(fnv1a32(g) % cfg.buckets));
  }
  return ids;
}

// ---------------------------------------------------------------------------

int FastTextModel::find(std::string_view word) const {
  const auto it = word_index.find(std::string(word));
  return it == word_index.end() ? -1 : it->second;
}

std::vector<int> FastTextModel::input_rows(std::string_view word) const {
  std::vector<int> rows;
  const int id = find(word);
  if (id >= 0) rows.push_back(id);
  const int base = static_cast<int>(words.size());
  for (auto b : extract_ngrams(word, ngrams)) rows.push_back(base + static_cast<int>(b));
  return rows;
}

const std::vector<int>& FastTextModel::input_rows(int word_id) const {
  return subword_rows_.at(static_cast<std::size_t>(word_id));
}

void FastTextModel::index_subwords() {
  word_index.clear();
  for (std::size_t i = 0; i < words.size(); ++i) word_index.emplace(words[i], static_cast<int>(i));
  subword_rows_.clear();
  subword_rows_.reserve(words.size());
  for (const auto& w : words) subword_rows_.push_back(input_rows(w));
}

FastTextModel FastTextModel::create(std::vector<std::string> words,
                                    std::vector<std::uint64_t> counts, const NgramConfig& cfg,
                                    std::size_t dim, std::uint64_t seed) {
  cfg.validate();
  if (dim == 0) throw Error("embedding dimension must be positive");
  FastTextModel m;
  m.ngrams = cfg;
  m.words = std::move(words);
  m.counts = std::move(counts);
  m.counts.resize(m.words.size(), 0);
  const auto V = static_cast<Eigen::Index>(m.words.size());
  const auto B = static_cast<Eigen::Index>(cfg.buckets);
  const auto d = static_cast<Eigen::Index>(dim);
  m.word_input.resize(V, d);
  m.buckets.resize(B, d);
  m.word_output = nn::Matrix::Zero(V, d);
  Rng rng(seed);
  const double s = 1.0 / static_cast<double>(dim);
  for (Eigen::Index i = 0; i < m.word_input.size(); ++i) m.word_input.data()[i] = rng.uniform(-s, s);
  for (Eigen::Index i = 0; i < m.buckets.size(); ++i) m.buckets.data()[i] = rng.uniform(-s, s);
  m.index_subwords();
  return m;
}

void FastTextModel::save(std::ostream& out) const {
  out << words.size() << ' ' << buckets.rows() << ' ' << dim() << '\n';
  auto row_out = [&](const auto& row) {
    for (Eigen::Index j = 0; j < row.size(); ++j) {
      if (j) out << ' ';
      out << format_double(row(j));
    }
    out << '\n';
  };
  for (std::size_t i = 0; i < words.size(); ++i) {
    out << words[i] << ' ';
    row_out(word_input.row(static_cast<Eigen::Index>(i)));
  }
  for (Eigen::Index b = 0; b < buckets.rows(); ++b) row_out(buckets.row(b));
}

FastTextModel FastTextModel::load(std::istream& in, std::size_t min_n, std::size_t max_n) {
  std::string line;
  if (!std::getline(in, line)) throw Error("embedding model: missing header");
  std::istringstream hs(line);
  std::size_t V = 0, B = 0, d = 0;
  if (!(hs >> V >> B >> d) || d == 0 || B == 0) throw Error("embedding model: bad header '" + line + "'");

  FastTextModel m;
  m.ngrams = {min_n, max_n, B};
  m.ngrams.validate();
  m.words.reserve(V);
  m.counts.assign(V, 0);
  m.word_input.resize(static_cast<Eigen::Index>(V), static_cast<Eigen::Index>(d));
  m.buckets.resize(static_cast<Eigen::Index>(B), static_cast<Eigen::Index>(d));
  m.word_output = nn::Matrix::Zero(static_cast<Eigen::Index>(V), static_cast<Eigen::Index>(d));

  std::size_t line_no = 1;
  auto read_row = [&](auto row, bool with_word) {
    if (!std::getline(in, line)) throw Error("embedding model truncated at line " + std::to_string(line_no + 1));
    ++line_no;
    const auto fields = tokenize(line);
    const std::size_t off = with_word ? 1 : 0;
    if (fields.size() != d + off) {
      throw Error("embedding model line " + std::to_string(line_no) + ": expected " +
                  std::to_string(d + off) + " fields");
    }
    if (with_word) m.words.push_back(fields[0]);
    for (std::size_t j = 0; j < d; ++j) row(static_cast<Eigen::Index>(j)) = parse_double(fields[off + j]);
  };
  for (std::size_t i = 0; i < V; ++i) read_row(m.word_input.row(static_cast<Eigen::Index>(i)), true);
  for (std::size_t b = 0; b < B; ++b) read_row(m.buckets.row(static_cast<Eigen::Index>(b)), false);
  m.index_subwords();
  return m;
}

RowVector word_vector(const FastTextModel& model, std::string_view word) {
  const auto rows = model.input_rows(word);
  if (rows.empty()) throw Error("no vector for '" + std::string(word) + "': unknown word without n-grams");
  RowVector v = RowVector::Zero(static_cast<Eigen::Index>(model.dim()));
  for (int r : rows) v += model.input_row(r);
  return v / static_cast<double>(rows.size());
}

// ---------------------------------------------------------------------------

void CbowParams::validate() const {
  if (dim == 0) throw Error("embedding dimension must be positive");
  if (window < 1) throw Error("window must be at least 1");
  if (negatives < 1) throw Error("negatives must be at least 1");
  if (!(learning_rate > 0.0)) throw Error("learning rate must be positive");
}

namespace {

RowVector context_hidden(const FastTextModel& model, const std::vector<int>& context) {
  RowVector h = RowVector::Zero(static_cast<Eigen::Index>(model.dim()));
  for (int c : context) {
    const auto& rows = model.input_rows(c);
    RowVector wv = RowVector::Zero(h.size());
    for (int r : rows) wv += model.input_row(r);
    h += wv / static_cast<double>(rows.size());
  }
  return h / static_cast<double>(context.size());
}

double log_sigmoid(double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }

}  // namespace

double cbow_loss(const FastTextModel& model, const CbowExample& ex) {
  if (ex.context.empty()) return 0.0;
  const RowVector h = context_hidden(model, ex.context);
  double loss = -log_sigmoid(model.word_output.row(ex.target).dot(h));
  for (int n : ex.negatives) loss -= log_sigmoid(-model.word_output.row(n).dot(h));
  return loss;
}

CbowGradient cbow_gradient(const FastTextModel& model, const CbowExample& ex) {
  CbowGradient g;
  if (ex.context.empty()) return g;
  const RowVector h = context_hidden(model, ex.context);
  RowVector dh = RowVector::Zero(h.size());
  auto add_target = [&](int word, double label) {
    const auto u = model.word_output.row(word);
    // d/ds of -log sigma(s) for label 1, -log sigma(-s) for label 0
    const double coeff = nn::sigmoid(u.dot(h)) - label;
    dh += coeff * u;
    g.output.emplace_back(word, coeff * h);
  };
  add_target(ex.target, 1.0);
  for (int n : ex.negatives) add_target(n, 0.0);

  const double per_context = 1.0 / static_cast<double>(ex.context.size());
  for (int c : ex.context) {
    const auto& rows = model.input_rows(c);
    const RowVector share = dh * (per_context / static_cast<double>(rows.size()));
    for (int r : rows) g.input.emplace_back(r, share);
  }
  return g;
}

double cbow_update(FastTextModel& model, const CbowExample& ex, double lr) {
  if (ex.context.empty()) return 0.0;
  const double loss = cbow_loss(model, ex);
  const auto g = cbow_gradient(model, ex);
  for (const auto& [w, grad] : g.output) model.word_output.row(w) -= lr * grad;
  for (const auto& [r, grad] : g.input) model.input_row(r) -= lr * grad;
  return loss;
}

FastTextModel train_cbow(const std::vector<std::vector<std::string>>& corpus,
                         const NgramConfig& cfg, const CbowParams& params) {
  params.validate();
  cfg.validate();

  std::vector<std::string> words;
  std::vector<std::uint64_t> counts;
  std::unordered_map<std::string, int> index;
  std::uint64_t total_tokens = 0;
  for (const auto& sentence : corpus) {
    for (const auto& tok : sentence) {
      auto [it, inserted] = index.emplace(tok, static_cast<int>(words.size()));
      if (inserted) {
        words.push_back(tok);
        counts.push_back(0);
      }
      ++counts[static_cast<std::size_t>(it->second)];
      ++total_tokens;
    }
  }
  if (total_tokens == 0) throw Error("cannot train embeddings on an empty corpus");

  FastTextModel model = FastTextModel::create(words, counts, cfg, params.dim, params.seed);

  // unigram^0.75 noise distribution
  std::vector<double> cumulative(words.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < words.size(); ++i) {
    acc += std::pow(static_cast<double>(counts[i]), 0.75);
    cumulative[i] = acc;
  }
  std::vector<double> keep_prob(words.size(), 1.0);
  if (params.subsample > 0.0) {
    for (std::size_t i = 0; i < words.size(); ++i) {
      const double f = static_cast<double>(counts[i]) / static_cast<double>(total_tokens);
      const double r = params.subsample / f;
      keep_prob[i] = std::min(1.0, std::sqrt(r) + r);
    }
  }

  Rng rng(params.seed ^ 0x5bd1e995ULL);
  auto draw_noise = [&](int avoid) {
    int w = avoid;
    for (int attempt = 0; attempt < 16 && w == avoid; ++attempt) {
      const double u = rng.uniform() * acc;
      w = static_cast<int>(std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin());
      w = std::min(w, static_cast<int>(words.size()) - 1);
    }
    return w;
  };

  const double total_work = static_cast<double>(params.epochs) * static_cast<double>(total_tokens);
  std::uint64_t processed = 0;
  CbowExample ex;
  std::vector<int> ids;
  for (std::size_t epoch = 0; epoch < params.epochs; ++epoch) {
    for (const auto& sentence : corpus) {
      ids.clear();
      for (const auto& tok : sentence) {
        const int id = index.at(tok);
        if (rng.uniform() < keep_prob[static_cast<std::size_t>(id)]) ids.push_back(id);
      }
      for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto span = static_cast<std::ptrdiff_t>(1 + rng.below(params.window));
        ex.context.clear();
        const auto pos = static_cast<std::ptrdiff_t>(i);
        for (auto j = pos - span; j <= pos + span; ++j) {
          if (j == pos || j < 0 || j >= static_cast<std::ptrdiff_t>(ids.size())) continue;
          ex.context.push_back(ids[static_cast<std::size_t>(j)]);
        }
        if (ex.context.empty()) continue;
        ex.target = ids[i];
        ex.negatives.clear();
        for (std::size_t n = 0; n < params.negatives; ++n) ex.negatives.push_back(draw_noise(ex.target));
        const double lr = params.learning_rate *
                          std::max(0.0, 1.0 - static_cast<double>(processed) / total_work);
        cbow_update(model, ex, lr);
      }
      processed += sentence.size();
    }
  }
  return model;
}

// ---------------------------------------------------------------------------

std::size_t TextEmbeddings::require_dim() const {
  if (dim == 0) throw Error("no embeddings loaded: dimension undefined");
  return dim;
}

TextEmbeddings load_text_embeddings(std::istream& in) {
  TextEmbeddings out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto fields = tokenize(line);
    if (fields.empty()) continue;
    const std::size_t d = fields.size() - 1;
    if (d == 0) throw Error("embeddings line " + std::to_string(line_no) + ": no vector components");
    if (out.dim == 0) {
      out.dim = d;
    } else if (d != out.dim) {
      throw Error("embeddings line " + std::to_string(line_no) + ": expected " +
                  std::to_string(out.dim) + " components, found " + std::to_string(d));
    }
    RowVector v(static_cast<Eigen::Index>(d));
    for (std::size_t j = 0; j < d; ++j) {
      try {
        v(static_cast<Eigen::Index>(j)) = parse_double(fields[j + 1]);
      } catch (const Error&) {
        throw Error("embeddings line " + std::to_string(line_no) + ": non-numeric component '" +
                    fields[j + 1] + "'");
      }
    }
    out.vectors.insert_or_assign(fields[0], std::move(v));
  }
  return out;
}

namespace {

template <typename Lookup>
nn::Matrix fill_matrix(const Vocabulary& vocab, std::size_t dim, Lookup lookup) {
  const auto V = static_cast<Eigen::Index>(vocab.size());
  nn::Matrix m = nn::Matrix::Zero(V, static_cast<Eigen::Index>(dim));
  std::vector<bool> found(vocab.size(), false);
  RowVector sum = RowVector::Zero(static_cast<Eigen::Index>(dim));
  std::size_t n = 0;
  for (std::size_t i = 2; i < vocab.size(); ++i) {
    RowVector v;
    if (lookup(vocab.token(i), v)) {
      m.row(static_cast<Eigen::Index>(i)) = v;
      sum += v;
      ++n;
      found[i] = true;
    }
  }
  const RowVector unk = n ? RowVector(sum / static_cast<double>(n)) : RowVector(sum);
  m.row(Vocabulary::kUnk) = unk;
  for (std::size_t i = 2; i < vocab.size(); ++i) {
    if (!found[i]) m.row(static_cast<Eigen::Index>(i)) = unk;
  }
  return m;
}

}  // namespace

nn::Matrix build_embedding_matrix(const Vocabulary& vocab, const FastTextModel& source) {
  return fill_matrix(vocab, source.dim(), [&](const std::string& tok, RowVector& out) {
    if (source.find(tok) < 0 && extract_ngrams(tok, source.ngrams).empty()) return false;
    out = word_vector(source, tok);
    return true;
  });
}

nn::Matrix build_embedding_matrix(const Vocabulary& vocab, const TextEmbeddings& source) {
  return fill_matrix(vocab, source.require_dim(), [&](const std::string& tok, RowVector& out) {
    const auto it = source.vectors.find(tok);
    if (it == source.vectors.end()) return false;
    out = it->second;
    return true;
  });
}

double cosine_similarity(const RowVector& a, const RowVector& b) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

}  // namespace oflg
