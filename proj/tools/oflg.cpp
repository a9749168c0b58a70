// oflg: command-line driver for the offensive-language toolkit.

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>

#include "oflg/baseline.hpp"
#include "oflg/eval.hpp"
#include "oflg/gradcheck.hpp"
#include "oflg/hpo.hpp"
#include "oflg/pipeline.hpp"
#include "oflg/resample.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace oflg;

namespace {

struct Globals {
  std::string config;
  std::string task;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
  bool deterministic = false;
  std::string out_dir;
};

// Loads --config when given, otherwise starts from defaults; flags win.
RunConfig resolve(const Globals& g, const std::string& input, bool config_required) {
  RunConfig c;
  if (!g.config.empty()) {
    c = load_run_config(g.config);
  } else if (config_required) {
    throw Error("this command needs --config");
  }
  if (!input.empty()) c.train_path = input;
  if (!g.out_dir.empty()) c.output_dir = g.out_dir;
  if (c.output_dir.empty()) c.output_dir = "out";
  if (!g.task.empty()) c.task = parse_task(g.task);
  if (g.seed) {
    c.seed = *g.seed;
    c.train.seed = *g.seed;
    c.cbow.seed = *g.seed;
  }
  c.deterministic = g.deterministic;
  c.threads = g.deterministic ? 1 : std::max<std::size_t>(1, g.threads);
  if (c.train_path.empty()) throw Error("no input file (use --input or data.train_path)");
  if (!fs::exists(c.train_path)) throw Error("input file does not exist: " + c.train_path.string());
  return c;
}

std::ofstream open_out(const fs::path& path) {
  fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

void warn_all(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
}

int cmd_preprocess(const RunConfig& c) {
  const auto records = read_olid_file(c.train_path);
  const auto path = c.output_dir / "clean.tsv";
  auto out = open_out(path);
  write_clean_tsv(out, records);
  write_run_manifest(c, "preprocess", {{"records", records.size()}, {"output", path.string()}});
  std::cout << records.size() << " records -> " << path.string() << '\n';
  return 0;
}

int cmd_stats(const RunConfig& c) {
  const auto stats = user_count_stats(read_olid_file(c.train_path), c.task);
  auto out = open_out(c.output_dir / "user_count_stats.tsv");
  out << "label\tcount\tmean\tstddev\n";
  std::cout << std::left << std::setw(8) << "label" << std::right << std::setw(8) << "count"
            << std::setw(10) << "mean" << std::setw(10) << "std" << '\n';
  json rows = json::array();
  for (const auto& s : stats) {
    out << s.label << '\t' << s.count << '\t' << format_double(s.mean) << '\t'
        << format_double(s.stddev) << '\n';
    std::cout << std::left << std::setw(8) << s.label << std::right << std::setw(8) << s.count
              << std::fixed << std::setprecision(3) << std::setw(10) << s.mean << std::setw(10)
              << s.stddev << '\n';
    rows.push_back({{"label", s.label}, {"count", s.count}, {"mean", s.mean}, {"stddev", s.stddev}});
  }
  write_run_manifest(c, "stats", {{"user_count", rows}});
  return 0;
}

int cmd_resample_report(const RunConfig& c) {
  const auto split = split_records(read_olid_file(c.train_path), c.task, c.val_fraction, c.seed);
  std::vector<int> labels;
  for (const auto& r : split.train) labels.push_back(*r.label(c.task));
  const double pu = c.resolved_undersample_fraction();
  const auto before = count_labels(labels);
  const auto idx = rebalance_indices(labels, pu, c.seed);
  std::vector<int> after_labels;
  for (auto i : idx) after_labels.push_back(labels[i]);
  const auto after = count_labels(after_labels);

  auto out = open_out(c.output_dir / "resample_report.tsv");
  out << "label\tbefore\tafter\n";
  std::cout << "label\tbefore\tafter\n";
  const auto& names = class_names(c.task);
  for (const auto& [label, n] : before) {
    const auto a = after.count(label) ? after.at(label) : 0;
    out << names[static_cast<std::size_t>(label)] << '\t' << n << '\t' << a << '\n';
    std::cout << names[static_cast<std::size_t>(label)] << '\t' << n << '\t' << a << '\n';
  }
  write_run_manifest(c, "resample-report", {{"p_u", pu}, {"target", target_count(before, pu)}});
  return 0;
}

void save_word_vectors(std::ostream& out, const FastTextModel& m) {
  out << m.vocab_size() << ' ' << m.dim() << '\n';
  for (std::size_t i = 0; i < m.vocab_size(); ++i) {
    const auto v = word_vector(m, m.words[i]);
    out << m.words[i];
    for (Eigen::Index j = 0; j < v.size(); ++j) out << ' ' << format_double(v(j));
    out << '\n';
  }
}

int cmd_embed_train(const RunConfig& c) {
  const auto records = read_olid_file(c.train_path);
  const auto model = train_cbow(token_lists(records), c.ngrams, c.cbow);
  {
    auto out = open_out(c.output_dir / "fasttext.txt");
    model.save(out);
  }
  {
    auto out = open_out(c.output_dir / "vectors.txt");
    save_word_vectors(out, model);
  }
  write_run_manifest(c, "embed-train", {{"words", model.vocab_size()}, {"dim", model.dim()}});
  std::cout << model.vocab_size() << " words, dim " << model.dim() << '\n';
  return 0;
}

void print_history(const TrainRunResult& r) {
  for (const auto& e : r.result.history) {
    std::cout << "epoch " << e.epoch << "  loss " << std::fixed << std::setprecision(4)
              << e.train_loss << "  val_acc " << e.val_accuracy << "  val_f1 " << e.val_macro_f1
              << '\n';
  }
  std::cout << "best epoch " << r.result.best_epoch << "; model written to "
            << r.model_path.string() << '\n';
}

int cmd_train(const RunConfig& c) {
  print_history(run_train(c));
  return 0;
}

int cmd_transfer(const RunConfig& c, const std::string& model, const std::string& vocab) {
  print_history(run_transfer(c, model, vocab));
  return 0;
}

int cmd_predict(const RunConfig& c, const std::string& model, const std::string& vocab,
                const std::string& output) {
  const fs::path out = output.empty() ? c.output_dir / "predictions.csv" : fs::path(output);
  fs::create_directories(out.parent_path().empty() ? fs::path(".") : out.parent_path());
  run_predict(model, vocab, c.train_path, out);
  write_run_manifest(c, "predict", {{"model", model}, {"vocab", vocab}, {"output", out.string()}});
  std::cout << "predictions written to " << out.string() << '\n';
  return 0;
}

int cmd_evaluate(const RunConfig& c, const std::string& model_path, const std::string& vocab_path) {
  std::ifstream vin(vocab_path);
  if (!vin) throw Error("cannot open " + vocab_path);
  const auto vocab = Vocabulary::load(vin);
  const auto hash = vocab.hash();
  Model model = load_model(fs::path(model_path), &hash);
  const Task task = model.arch().task;
  const auto records = filter_task(read_olid_file(c.train_path), task);
  if (records.empty()) throw Error("no records labelled for task " + std::string(1, task_letter(task)));
  const auto examples = encode_records(records, task, vocab, model.arch().seq_len);
  std::vector<int> truth;
  for (const auto& e : examples) truth.push_back(e.label);
  const auto report = evaluate(truth, predict(model, examples), class_count(task));
  warn_all(report.warnings);
  print_report(std::cout, report, class_names(task));
  auto out = open_out(c.output_dir / "report.csv");
  write_report_csv(out, report, class_names(task));
  write_run_manifest(c, "evaluate", {{"macro_f1", report.macro_f1}, {"accuracy", report.accuracy}});
  return 0;
}

int cmd_tune_pu(const RunConfig& c, std::size_t folds, std::size_t trees) {
  const auto split = split_records(read_olid_file(c.train_path), c.task, c.val_fraction, c.seed);
  std::vector<LabeledDoc> docs;
  for (const auto& r : split.train) docs.push_back({tokenize(r.clean_text), *r.label(c.task)});
  PuSearchOptions opts;
  opts.folds = folds;
  opts.seed = c.seed;
  opts.forest.n_trees = trees;
  opts.forest.seed = c.seed;
  opts.forest.threads = c.threads;
  const auto sel = cv_select_pu(docs, class_count(c.task), opts);
  auto out = open_out(c.output_dir / "pu_report.csv");
  write_pu_report_csv(out, sel);
  for (const auto& row : sel.table) {
    std::cout << "p_u " << std::fixed << std::setprecision(1) << row.undersample_fraction
              << "  macro-F1 " << std::setprecision(4) << row.mean_macro_f1 << '\n';
  }
  std::cout << "best p_u " << std::setprecision(1) << sel.best << '\n';
  write_run_manifest(c, "tune-pu", {{"best_p_u", sel.best}, {"folds", folds}, {"trees", trees}});
  return 0;
}

int cmd_tune_hparams(const RunConfig& c, std::size_t n_init, std::size_t n_iter) {
  c.validate();
  const auto split = split_records(read_olid_file(c.train_path), c.task, c.val_fraction, c.seed);
  const auto train_tokens = token_lists(split.train);
  const auto vocab = Vocabulary::build(train_tokens);
  nn::Matrix matrix;
  if (c.embedding_source == EmbeddingSource::ExternalFile) {
    std::ifstream in(c.embedding_path);
    if (!in) throw Error("cannot open embeddings " + c.embedding_path.string());
    matrix = build_embedding_matrix(vocab, load_text_embeddings(in));
  } else {
    matrix = build_embedding_matrix(vocab, train_cbow(train_tokens, c.ngrams, c.cbow));
  }
  ModelArch arch = c.arch;
  arch.vocab_size = vocab.size();
  arch.embed_dim = static_cast<std::size_t>(matrix.cols());
  arch.task = c.task;
  arch.output_units = output_units_for(c.task);
  const auto train_set = rebalance(encode_records(split.train, c.task, vocab, arch.seq_len),
                                   [](const EncodedExample& e) { return e.label; },
                                   c.resolved_undersample_fraction(), c.seed);
  const auto val_set = encode_records(split.val, c.task, vocab, arch.seq_len);

  // minimise 1 - best validation macro-F1
  const auto objective = [&](const std::vector<double>& p) {
    TrainConfig tc = c.train;
    tc.learning_rate = p[0];
    tc.weight_decay = p[1];
    auto r = train(Model::build(arch, matrix, c.seed), train_set, val_set, tc);
    const double f1 = r.history.at(r.best_epoch - 1).val_macro_f1;
    std::cerr << "lr " << p[0] << " wd " << p[1] << " -> val macro-F1 " << f1 << '\n';
    return 1.0 - f1;
  };
  const auto space = hpo::SearchSpace::defaults();
  hpo::BoOptions opts;
  opts.n_init = n_init;
  opts.n_iter = n_iter;
  opts.seed = c.seed;
  const auto result = hpo::bo_loop(objective, space, opts);
  auto out = open_out(c.output_dir / "trace.csv");
  hpo::write_trace_csv(out, space, result);
  std::cout << "best learning_rate " << result.best_point[0] << " weight_decay "
            << result.best_point[1] << " objective " << result.best_value << '\n';
  write_run_manifest(c, "tune-hparams",
                     {{"learning_rate", result.best_point[0]},
                      {"weight_decay", result.best_point[1]},
                      {"objective", result.best_value}});
  return 0;
}

int cmd_gradcheck(const Globals& g, std::size_t seeds, double tol) {
  const auto results = gradcheck::run_all(seeds, tol);
  std::map<std::string, double> worst;
  std::size_t failed = 0;
  for (const auto& r : results) {
    worst[r.name] = std::max(worst[r.name], r.rel_error);
    if (!r.passed) {
      ++failed;
      std::cerr << "FAIL " << r.name << " seed " << r.seed << " rel_error " << r.rel_error << '\n';
    }
  }
  for (const auto& name : gradcheck::check_names()) {
    std::cout << std::left << std::setw(28) << name << std::scientific << std::setprecision(2)
              << worst[name] << '\n';
  }
  std::cout << results.size() - failed << "/" << results.size() << " checks passed\n";
  if (!g.out_dir.empty()) {
    RunConfig c;
    c.output_dir = g.out_dir;
    write_run_manifest(c, "gradcheck", {{"checks", results.size()}, {"failed", failed}, {"tolerance", tol}});
  }
  return failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"oflg: offensive tweet classification toolkit"};
  app.set_version_flag("--version", std::string(kToolkitVersion));
  app.require_subcommand(1);

  Globals g;
  app.add_option("--config", g.config, "Run configuration (JSON)");
  app.add_option("--task", g.task, "Subtask a, b or c")->check(CLI::IsMember({"a", "b", "c", "A", "B", "C"}));
  app.add_option("--seed", g.seed, "Random seed");
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_flag("--deterministic", g.deterministic, "Single-threaded numeric paths");
  app.add_option("--out-dir", g.out_dir, "Output directory (overrides output.dir)");

  std::string input, model, vocab, output;
  std::size_t folds = 5, trees = 100, n_init = 3, n_iter = 10, seeds = 20;
  double tol = 1e-4;

  auto with_input = [&](CLI::App* sub) { sub->add_option("--input", input, "OLID TSV file"); };
  auto with_model = [&](CLI::App* sub) {
    sub->add_option("--model", model, "Model file")->required();
    sub->add_option("--vocab", vocab, "Vocabulary file")->required();
  };

  auto* preprocess = app.add_subcommand("preprocess", "Clean tweets and write clean.tsv");
  with_input(preprocess);
  auto* stats = app.add_subcommand("stats", "Per-class user-mention statistics");
  with_input(stats);
  auto* resample = app.add_subcommand("resample-report", "Class counts before and after rebalancing");
  with_input(resample);
  auto* embed = app.add_subcommand("embed-train", "Train subword CBOW embeddings");
  with_input(embed);
  auto* trainc = app.add_subcommand("train", "Train the neural classifier");
  auto* transferc = app.add_subcommand("transfer", "Fine-tune a task-A trunk for task b or c");
  with_model(transferc);
  auto* predictc = app.add_subcommand("predict", "Write id,label predictions");
  with_input(predictc);
  with_model(predictc);
  predictc->add_option("--output", output, "Predictions CSV");
  auto* evaluatec = app.add_subcommand("evaluate", "Score a model on a labelled file");
  with_input(evaluatec);
  with_model(evaluatec);
  auto* tune_pu = app.add_subcommand("tune-pu", "Cross-validate p_u with a random forest");
  with_input(tune_pu);
  tune_pu->add_option("--folds", folds, "Folds")->check(CLI::Range(2, 100));
  tune_pu->add_option("--trees", trees, "Trees per forest")->check(CLI::PositiveNumber);
  auto* tune_hp = app.add_subcommand("tune-hparams", "Bayesian optimisation of learning rate and weight decay");
  tune_hp->add_option("--init", n_init, "Initial design points")->check(CLI::PositiveNumber);
  tune_hp->add_option("--iterations", n_iter, "Optimisation iterations");
  auto* gradcheckc = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  gradcheckc->add_option("--seeds", seeds, "Seeds per check")->check(CLI::PositiveNumber);
  gradcheckc->add_option("--tolerance", tol, "Relative error bound");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gradcheckc) return cmd_gradcheck(g, seeds, tol);
    if (*trainc) return cmd_train(resolve(g, "", true));
    if (*transferc) return cmd_transfer(resolve(g, "", true), model, vocab);
    if (*tune_hp) return cmd_tune_hparams(resolve(g, "", true), n_init, n_iter);
    const RunConfig c = resolve(g, input, false);
    if (*preprocess) return cmd_preprocess(c);
    if (*stats) return cmd_stats(c);
    if (*resample) return cmd_resample_report(c);
    if (*embed) return cmd_embed_train(c);
    if (*predictc) return cmd_predict(c, model, vocab, output);
    if (*evaluatec) return cmd_evaluate(c, model, vocab);
    if (*tune_pu) return cmd_tune_pu(c, folds, trees);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
