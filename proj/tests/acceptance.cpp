// Acceptance suite: one PASS/FAIL/SKIP line per criterion. Exit status is
// nonzero when any criterion fails; skipped criteria do not count.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>

#include "oflg/baseline.hpp"
#include "oflg/corpus.hpp"
#include "oflg/eval.hpp"
#include "oflg/gradcheck.hpp"
#include "oflg/hpo.hpp"
#include "oflg/model.hpp"
#include "oflg/pipeline.hpp"
#include "oflg/resample.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace oflg;

namespace {

enum class Status { Pass, Fail, Skip };

struct Outcome {
  Status status;
  std::string detail;
};

Outcome verdict(bool ok, std::string detail) { return {ok ? Status::Pass : Status::Fail, std::move(detail)}; }

int failures = 0;

void criterion(int id, const std::string& name, double budget_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome out;
  try {
    out = body();
  } catch (const std::exception& e) {
    out = {Status::Fail, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (out.status != Status::Skip && budget_s > 0.0 && secs > budget_s) {
    out.status = Status::Fail;
    out.detail += "; over time budget";
  }
  const char* tag = out.status == Status::Pass ? "PASS" : out.status == Status::Fail ? "FAIL" : "SKIP";
  if (out.status == Status::Fail) ++failures;
  std::ostringstream line;
  line << '[' << tag << "] " << std::setw(2) << id << ' ' << name << ": " << out.detail << " ("
       << std::fixed << std::setprecision(2) << secs << " s";
  if (budget_s > 0.0) line << ", budget " << budget_s << " s";
  line << ')';
  std::cout << line.str() << std::endl;
}

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (auto x : v) s += (s.empty() ? "" : " / ") + std::to_string(x);
  return s;
}

Outcome parameter_counts() {
  ModelArch a;
  a.vocab_size = 21251;
  const Model m = Model::build(a, nn::Matrix::Zero(21251, 100), 1);
  std::vector<std::size_t> got;
  for (const auto& row : m.summary()) got.push_back(row.params);
  const std::vector<std::size_t> want{2125100, 0, 234496, 32832, 0, 0, 0, 1290, 11};
  return verdict(got == want && m.parameter_count() == 2393729,
                 join(got) + " total " + std::to_string(m.parameter_count()) + " (expected " + join(want) +
                     " total 2393729, exact)");
}

Outcome resampling_counts() {
  const auto b = target_count({{label_index(Task::B, "UNT"), 420}, {label_index(Task::B, "TIN"), 3100}}, 0.2);
  const auto a = target_count({{label_index(Task::A, "OFF"), 3539}, {label_index(Task::A, "NOT"), 7053}}, 0.3);
  const auto c = target_count({{label_index(Task::C, "IND"), 1929}, {label_index(Task::C, "OTH"), 319},
                               {label_index(Task::C, "GRP"), 852}},
                              0.7);
  auto within = [](double v, double ref, double rel) { return std::abs(v - ref) <= rel * ref; };
  const bool ok_b = std::abs(static_cast<double>(b) - 2565.0) <= 1.0 && std::abs(static_cast<double>(b) - 2564.0) <= 1.0;
  const bool ok_a = within(static_cast<double>(a), 6011.0, 0.01) && within(static_cast<double>(a), 6012.0, 0.01);
  const bool ok_c = within(static_cast<double>(c), 805.0, 0.01) && within(static_cast<double>(c), 806.0, 0.01);
  std::ostringstream d;
  d << "B " << b << " vs 2565/2564 (+-1); A " << a << " vs 6011/6012 (1%); C " << c << " vs 805/806 (1%)";
  return verdict(ok_a && ok_b && ok_c, d.str());
}

Outcome cleaning_golden() {
  const auto r = clean(
      "@USER @USER @USER It should scare every American!  She is playing Hockey with a warped puck!");
  const std::string want = "user it should scare every american ! she is playing hockey with a warped puck !";
  return verdict(r.text == want && r.user_count == 3,
                 "'" + r.text + "', user_count=" + std::to_string(r.user_count));
}

Outcome gradient_suite() {
  const auto results = gradcheck::run_all(20, 1e-4);
  double worst = 0.0;
  std::string worst_name;
  std::size_t failed = 0;
  for (const auto& r : results) {
    if (!r.passed) ++failed;
    if (r.rel_error > worst) {
      worst = r.rel_error;
      worst_name = r.name;
    }
  }
  std::ostringstream d;
  d << results.size() - failed << "/" << results.size() << " checks over " << gradcheck::check_names().size()
    << " operations x 20 seeds; worst rel error " << std::scientific << std::setprecision(2) << worst << " ("
    << worst_name << "), bound 1e-4";
  return verdict(failed == 0 && !results.empty(), d.str());
}

RunConfig synthetic_config(const fs::path& data, const fs::path& out, std::uint64_t seed) {
  RunConfig c;
  c.train_path = data;
  c.output_dir = out;
  c.task = Task::A;
  c.seed = seed;
  c.train.seed = seed;
  c.cbow.seed = seed;
  c.deterministic = true;
  return c;
}

Outcome synthetic_end_to_end() {
  testsupport::TempDir dir("accept-e2e");
  testsupport::write_synthetic_olid(dir.path() / "synthetic.tsv", 2000, 7);
  auto c = synthetic_config(dir.path() / "synthetic.tsv", dir.path() / "out", 3);
  c.train.max_epochs = 5;
  const auto r = run_train(c);
  const auto& best = r.result.history.at(r.result.best_epoch - 1);
  std::ostringstream d;
  d << "val macro-F1 " << std::fixed << std::setprecision(4) << best.val_macro_f1 << " at epoch "
    << r.result.best_epoch << " of " << r.result.history.size() << " (bound >= 0.95 within 5 epochs)";
  return verdict(best.val_macro_f1 >= 0.95 && r.result.history.size() <= 5, d.str());
}

fs::path olid_path() {
  if (const char* env = std::getenv("OFLG_OLID_TRAIN")) return env;
  return fs::path(OFLG_SOURCE_DIR) / "data" / "olid-training-v1.0.tsv";
}

Outcome olid_reproduction() {
  const auto path = olid_path();
  if (!fs::exists(path)) {
    return {Status::Skip, "OLID training file not found at " + path.string() + " (set OFLG_OLID_TRAIN)"};
  }
  testsupport::TempDir dir("accept-olid");
  auto c = synthetic_config(path, dir.path() / "out", 1);
  const auto r = run_train(c);
  const auto& best = r.result.history.at(r.result.best_epoch - 1);
  std::ostringstream d;
  d << "task A val macro-F1 " << std::fixed << std::setprecision(4) << best.val_macro_f1
    << " (bound >= 0.70; reference 0.74 +- 0.05), best epoch " << r.result.best_epoch;
  return verdict(best.val_macro_f1 >= 0.70, d.str());
}

Outcome transfer_sanity() {
  ModelArch a;
  a.vocab_size = 21251;
  Rng rng(3);
  nn::Matrix emb(21251, 100);
  for (Eigen::Index i = 0; i < emb.size(); ++i) emb.data()[i] = rng.uniform(-0.1, 0.1);
  Model src = Model::build(a, emb, 5);
  Model dst = transfer(src, Task::C, 6);
  const auto s = src.trunk_params(), t = dst.trunk_params();
  bool equal = s.size() == t.size() && !s.empty();
  for (std::size_t i = 0; equal && i < s.size(); ++i) {
    equal = s[i]->value.rows() == t[i]->value.rows() && s[i]->value.cols() == t[i]->value.cols() &&
            std::memcmp(s[i]->value.data(), t[i]->value.data(), s[i]->size() * sizeof(double)) == 0;
  }
  const auto head = dst.output.parameter_count();
  return verdict(equal && head == 33, std::string("trunk ") + (equal ? "bitwise equal" : "DIFFERS") +
                                          " over " + std::to_string(s.size()) + " tensors; task-C output layer " +
                                          std::to_string(head) + " parameters (expected 33)");
}

Outcome bo_benchmark() {
  const hpo::SearchSpace space{{{"x", 0.0, 1.0, hpo::Scale::Linear}}};
  int hits = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    hpo::BoOptions o;
    o.n_init = 3;
    o.n_iter = 10;
    o.seed = seed;
    const auto r = hpo::bo_loop([](const std::vector<double>& p) { return (p[0] - 0.3) * (p[0] - 0.3); }, space, o);
    if (std::abs(r.best_point[0] - 0.3) <= 0.05) ++hits;
  }
  return verdict(hits >= 18, std::to_string(hits) + "/20 seeds with incumbent within 0.05 of x=0.3 (need >= 18)");
}

Outcome forest_baseline() {
  int good = 0;
  const int seeds = 20;
  double worst = 1.0;
  for (int seed = 1; seed <= seeds; ++seed) {
    const auto train = testsupport::separable_bow(400, 2, static_cast<std::uint64_t>(seed));
    const auto test = testsupport::separable_bow(200, 2, static_cast<std::uint64_t>(seed + 1000));
    const auto vocab = Vocabulary::build(train.docs);
    ForestOptions o;
    o.n_trees = 50;
    o.seed = static_cast<std::uint64_t>(seed);
    const auto f = train_forest(bow_matrix(train.docs, vocab), train.labels, 2, o);
    const auto acc = evaluate(test.labels, predict_forest(f, bow_matrix(test.docs, vocab)), 2).accuracy;
    worst = std::min(worst, acc);
    if (acc >= 0.95) ++good;
  }

  std::mt19937 gen(11);
  std::uniform_int_distribution<int> val(0, 3), rows(2, 16), cols(1, 6);
  int matched = 0;
  const int trials = 500;
  for (int t = 0; t < trials; ++t) {
    std::vector<std::vector<double>> x(static_cast<std::size_t>(rows(gen)), std::vector<double>(static_cast<std::size_t>(cols(gen))));
    std::vector<int> y;
    for (auto& r : x) {
      for (auto& v : r) v = val(gen) == 0 ? val(gen) : 0.0;
      y.push_back(static_cast<int>(gen() % 3));
    }
    std::vector<std::size_t> samples(x.size()), feats(x[0].size());
    for (std::size_t i = 0; i < samples.size(); ++i) samples[i] = i;
    for (std::size_t i = 0; i < feats.size(); ++i) feats[i] = i;
    const auto got = best_split(BowMatrix::from_dense(x), y, 3, samples, feats);
    const auto want = testsupport::exhaustive_split(x, y, 3);
    if (got.feature == want.feature &&
        (want.feature < 0 || (got.threshold == want.threshold && std::abs(got.impurity - want.impurity) <= 1e-12))) {
      ++matched;
    }
  }
  std::ostringstream d;
  d << good << "/" << seeds << " seeds with test accuracy >= 0.95 (worst " << std::fixed << std::setprecision(3)
    << worst << ", need >= 90%); depth-1 splits " << matched << "/" << trials << " equal to exhaustive search";
  return verdict(good * 10 >= seeds * 9 && matched == trials, d.str());
}

Outcome metrics_oracle() {
  // TP 4221 of 6700 predicted OFF (P 0.63) and 6300 actual OFF (R 0.67)
  const ConfusionMatrix cm{{10000, 2479}, {2079, 4221}};
  const auto r = prf_macro(cm);
  const auto& off = r.per_class[1];
  const auto hand = evaluate({1, 1, 0, 0}, {1, 0, 1, 0}, 2);
  bool hand_ok = hand.macro_f1 == 0.5;
  for (const auto& c : hand.per_class) hand_ok = hand_ok && c.precision == 0.5 && c.recall == 0.5 && c.f1 == 0.5;
  std::ostringstream d;
  d << std::fixed << std::setprecision(4) << "OFF P " << off.precision << " R " << off.recall << " F1 " << off.f1
    << " (0.65 +- 0.005); 4-example case macro-F1 " << hand.macro_f1 << " (exact 0.5)";
  return verdict(std::abs(off.f1 - 0.65) <= 0.005 && std::abs(off.precision - 0.63) < 1e-12 &&
                     std::abs(off.recall - 0.67) < 1e-12 && hand_ok,
                 d.str());
}

Outcome determinism() {
  testsupport::TempDir dir("accept-det");
  testsupport::write_synthetic_olid(dir.path() / "synthetic.tsv", 600, 21);
  std::string model[2], history[2];
  for (int run = 0; run < 2; ++run) {
    auto c = synthetic_config(dir.path() / "synthetic.tsv", dir.path() / ("run" + std::to_string(run)), 9);
    c.train.max_epochs = 2;
    c.train.max_steps_per_epoch = 6;
    run_train(c);
    model[run] = testsupport::read_file(c.output_dir / "model.bin");
    history[run] = testsupport::read_file(c.output_dir / "history.csv");
  }
  const bool ok = !model[0].empty() && model[0] == model[1] && history[0] == history[1];
  return verdict(ok, "model.bin " + std::string(model[0] == model[1] ? "identical" : "DIFFERS") + " (" +
                         std::to_string(model[0].size()) + " bytes), history.csv " +
                         (history[0] == history[1] ? "identical" : "DIFFERS"));
}

}  // namespace

int main() {
  criterion(1, "parameter-count reproduction", 1.0, parameter_counts);
  criterion(2, "resampling counts", 1.0, resampling_counts);
  criterion(3, "cleaning golden test", 1.0, cleaning_golden);
  criterion(4, "gradient suite", 60.0, gradient_suite);
  criterion(5, "synthetic end-to-end", 300.0, synthetic_end_to_end);
  criterion(6, "OLID task A reproduction", 0.0, olid_reproduction);
  criterion(7, "transfer sanity", 1.0, transfer_sanity);
  criterion(8, "BO benchmark", 10.0, bo_benchmark);
  criterion(9, "random-forest baseline", 30.0, forest_baseline);
  criterion(10, "metrics oracle", 1.0, metrics_oracle);
  criterion(11, "determinism", 0.0, determinism);
  std::cout << (failures == 0 ? "all criteria passed or skipped" : std::to_string(failures) + " criteria failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
