#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>
#include <sstream>

#include "oflg/embeddings.hpp"
#include "support.hpp"

using namespace oflg;

namespace {

std::set<std::string> as_set(const std::vector<std::string>& v) { return {v.begin(), v.end()}; }

}  // namespace

TEST_CASE("n-gram enumeration") {
  const NgramConfig cfg;
  CHECK(as_set(ngram_strings("a", cfg)) == std::set<std::string>{"<a>"});
  CHECK(extract_ngrams("a", cfg).size() == 1);
  CHECK(as_set(ngram_strings("car", cfg)) ==
        std::set<std::string>{"<ca", "car", "ar>", "<car", "car>", "<car>"});
  CHECK(extract_ngrams("car", cfg).size() == 6);
  CHECK(as_set(ngram_strings("ab", cfg)) == std::set<std::string>{"<ab", "ab>", "<ab>"});
  for (auto id : extract_ngrams("offensive", cfg)) CHECK(id < cfg.buckets);

  // count for a word of length m: sum over n of (m + 3 - n), n <= m + 2
  for (std::size_t m = 1; m <= 12; ++m) {
    const std::string w(m, 'x');
    std::size_t expected = 0;
    for (std::size_t n = 3; n <= 6; ++n) {
      if (n <= m + 2) expected += m + 3 - n;
    }
    CHECK(extract_ngrams(w, cfg).size() == expected);
  }
}

TEST_CASE("word_vector is the mean of its rows") {
  NgramConfig cfg;
  cfg.buckets = 50;
  auto m = FastTextModel::create({"car", "bus"}, {3, 1}, cfg, 4, 1);
  m.word_input.setConstant(0.25);
  m.buckets.setConstant(0.25);
  CHECK(word_vector(m, "car").isApprox(RowVector::Constant(4, 0.25)));
  CHECK(word_vector(m, "unseen").isApprox(RowVector::Constant(4, 0.25)));

  Rng rng(2);
  for (Eigen::Index i = 0; i < m.buckets.size(); ++i) m.buckets.data()[i] = rng.uniform(-1, 1);
  RowVector sum = m.word_input.row(0);
  const auto ids = extract_ngrams("car", cfg);
  for (auto id : ids) sum += m.buckets.row(id);
  CHECK(word_vector(m, "car").isApprox(sum / static_cast<double>(ids.size() + 1), 1e-14));
}

TEST_CASE("negative-sampling gradient matches finite differences") {
  NgramConfig cfg;
  cfg.buckets = 40;
  auto m = FastTextModel::create({"the", "cat", "sat", "on", "mat"}, {5, 2, 2, 3, 1}, cfg, 5, 3);
  Rng rng(4);
  for (Eigen::Index i = 0; i < m.word_output.size(); ++i) m.word_output.data()[i] = rng.uniform(-0.5, 0.5);
  for (Eigen::Index i = 0; i < m.buckets.size(); ++i) m.buckets.data()[i] = rng.uniform(-0.5, 0.5);
  const CbowExample ex{{0, 1, 3}, 2, {4, 1, 0}};

  const auto grad = cbow_gradient(m, ex);
  nn::Matrix gin_w = nn::Matrix::Zero(m.word_input.rows(), 5);
  nn::Matrix gin_b = nn::Matrix::Zero(m.buckets.rows(), 5);
  nn::Matrix gout = nn::Matrix::Zero(m.word_output.rows(), 5);
  const int v = static_cast<int>(m.vocab_size());
  for (const auto& [row, g] : grad.input) {
    if (row < v) gin_w.row(row) += g;
    else gin_b.row(row - v) += g;
  }
  for (const auto& [row, g] : grad.output) gout.row(row) += g;

  auto loss = [&] { return cbow_loss(m, ex); };
  auto as_vec = [](const nn::Matrix& x) { return std::vector<double>(x.data(), x.data() + x.size()); };
  CHECK(testsupport::rel_err(as_vec(gin_w), testsupport::fd_gradient(loss, m.word_input.data(), m.word_input.size())) <= 1e-4);
  CHECK(testsupport::rel_err(as_vec(gin_b), testsupport::fd_gradient(loss, m.buckets.data(), m.buckets.size())) <= 1e-4);
  CHECK(testsupport::rel_err(as_vec(gout), testsupport::fd_gradient(loss, m.word_output.data(), m.word_output.size())) <= 1e-4);
}

TEST_CASE("single-token documents leave the model untouched") {
  NgramConfig cfg;
  cfg.buckets = 100;
  CbowParams p;
  p.dim = 6;
  p.seed = 9;
  p.subsample = 0.0;
  const auto trained = train_cbow({{"alpha"}, {"beta"}, {"alpha"}}, cfg, p);
  const auto init = FastTextModel::create({"alpha", "beta"}, {2, 1}, cfg, 6, 9);
  CHECK(trained.word_input == init.word_input);
  CHECK(trained.buckets == init.buckets);
  CHECK(trained.word_output == init.word_output);
}

TEST_CASE("two topic clusters separate") {
  const std::vector<std::string> ta{"apple", "banana", "cherry", "grape", "melon", "peach", "plum", "lemon"};
  const std::vector<std::string> tb{"hammer", "wrench", "drill", "saw", "chisel", "pliers", "clamp", "level"};
  std::mt19937 gen(5);
  std::uniform_int_distribution<std::size_t> pick(0, ta.size() - 1);
  std::vector<std::vector<std::string>> corpus;
  for (int s = 0; s < 500; ++s) {
    const auto& topic = s % 2 == 0 ? ta : tb;
    std::vector<std::string> sent;
    for (int k = 0; k < 8; ++k) sent.push_back(topic[pick(gen)]);
    corpus.push_back(sent);
  }
  NgramConfig cfg;
  cfg.buckets = 2000;
  CbowParams p;
  p.dim = 20;
  p.epochs = 5;
  p.subsample = 0.0;
  p.seed = 1;
  const auto m = train_cbow(corpus, cfg, p);
  double intra = 0.0, inter = 0.0;
  int ni = 0, nx = 0;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    for (std::size_t j = 0; j < ta.size(); ++j) {
      if (i != j) {
        intra += cosine_similarity(word_vector(m, ta[i]), word_vector(m, ta[j]));
        intra += cosine_similarity(word_vector(m, tb[i]), word_vector(m, tb[j]));
        ni += 2;
      }
      inter += cosine_similarity(word_vector(m, ta[i]), word_vector(m, tb[j]));
      ++nx;
    }
  }
  MESSAGE("intra " << intra / ni << " inter " << inter / nx);
  CHECK(intra / ni > inter / nx);
}

TEST_CASE("out-of-vocabulary word shares subword signal") {
  // filler vocabulary of made-up words; 'car' appears in a third of the sentences
  std::mt19937 gen(8);
  std::vector<std::string> fill;
  std::uniform_int_distribution<int> letter('a', 'z'), wlen(3, 7);
  while (fill.size() < 80) {
    std::string w;
    for (int n = wlen(gen); n > 0; --n) w += static_cast<char>(letter(gen));
    if (w.find("car") == std::string::npos && w.find("ar") == std::string::npos) fill.push_back(w);
  }
  std::uniform_int_distribution<std::size_t> pick(0, fill.size() - 1);
  std::vector<std::vector<std::string>> corpus;
  for (int s = 0; s < 1500; ++s) {
    std::vector<std::string> sent;
    for (int k = 0; k < 6; ++k) sent.push_back(fill[pick(gen)]);
    if (s % 3 == 0) sent.insert(sent.begin() + 2, "car");
    corpus.push_back(sent);
  }
  NgramConfig cfg;
  CbowParams p;
  p.dim = 50;
  p.seed = 2;
  p.subsample = 0.0;  // toy corpus: every word is "frequent"
  const auto m = train_cbow(corpus, cfg, p);
  REQUIRE(m.find("newcar") < 0);
  const auto oov = word_vector(m, "newcar");
  const double target = cosine_similarity(oov, word_vector(m, "car"));
  std::vector<double> others;
  for (const auto& w : m.words) {
    if (w != "car") others.push_back(cosine_similarity(oov, word_vector(m, w)));
  }
  std::sort(others.begin(), others.end());
  const double p95 = others[static_cast<std::size_t>(0.95 * static_cast<double>(others.size() - 1))];
  MESSAGE("cos(newcar, car) " << target << ", 95th percentile " << p95);
  CHECK(target > p95);
}

TEST_CASE("text embedding loader") {
  std::istringstream ok("hello 0.1 0.2\nworld -1 2.5\n");
  const auto e = load_text_embeddings(ok);
  CHECK(e.require_dim() == 2);
  CHECK(e.vectors.at("hello")(1) == doctest::Approx(0.2));

  std::istringstream empty("");
  const auto none = load_text_embeddings(empty);
  CHECK(none.vectors.empty());
  CHECK_THROWS_AS(none.require_dim(), Error);

  std::istringstream bad("a 1 2\nb 1 2 3\n");
  CHECK_THROWS_WITH_AS(load_text_embeddings(bad), doctest::Contains("line 2"), Error);
  std::istringstream nan_text("a 1 x\n");
  CHECK_THROWS_AS(load_text_embeddings(nan_text), Error);
}

TEST_CASE("embedding matrix for a vocabulary") {
  const auto vocab = Vocabulary::build({{"a"}});
  TextEmbeddings src;
  src.dim = 2;
  src.vectors["a"] = RowVector::Constant(2, 1.0);
  const auto mat = build_embedding_matrix(vocab, src);
  REQUIRE(mat.rows() == 3);
  CHECK(mat.row(0).isZero(0.0));
  CHECK(mat.row(1).isApprox(RowVector::Constant(2, 1.0)));

  const auto v2 = Vocabulary::build({{"a", "missing"}});
  const auto m2 = build_embedding_matrix(v2, src);
  CHECK(m2.row(3) == m2.row(1));

  NgramConfig cfg;
  cfg.buckets = 64;
  const auto ft = FastTextModel::create({"a", "b"}, {1, 1}, cfg, 3, 1);
  const auto m3 = build_embedding_matrix(Vocabulary::build({{"a", "b", "zz"}}), ft);
  CHECK(m3.cols() == 3);
  CHECK(m3.row(2).isApprox(word_vector(ft, "a")));
  CHECK(m3.row(4).isApprox(word_vector(ft, "zz")));  // OOV tokens still get subword vectors
}

TEST_CASE("fastText text model round trip") {
  NgramConfig cfg;
  cfg.buckets = 16;
  auto m = FastTextModel::create({"x", "yy"}, {2, 1}, cfg, 3, 7);
  std::stringstream ss;
  m.save(ss);
  const auto back = FastTextModel::load(ss);
  CHECK(back.words == m.words);
  CHECK(back.buckets.isApprox(m.buckets, 1e-15));
  CHECK(word_vector(back, "yy").isApprox(word_vector(m, "yy"), 1e-14));
}
