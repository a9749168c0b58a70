#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>

#include "json.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using testsupport::read_file;

namespace {

struct Run {
  int code;
  std::string output;
};

Run oflg(const fs::path& dir, const std::string& args) {
  const auto log = dir / "cli.log";
  const std::string cmd = std::string(OFLG_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, read_file(log)};
}

nlohmann::json tiny_config(const fs::path& data, const fs::path& out, const std::string& task = "a") {
  return {{"data", {{"train_path", data.string()}, {"task", task}, {"seed", 4}}},
          {"embeddings", {{"dim", 8}, {"epochs", 1}, {"buckets", 1000}}},
          {"model",
           {{"seq_len", 20},
            {"lstm_hidden", 4},
            {"conv_filters", 4},
            {"ffnn_hidden", 4},
            {"max_epochs", 2},
            {"max_steps_per_epoch", 3}}},
          {"output", {{"dir", out.string()}}}};
}

void write_json(const fs::path& p, const nlohmann::json& j) { std::ofstream(p) << j.dump(2); }

}  // namespace

TEST_CASE("cli end to end") {
  testsupport::TempDir dir("cli");
  const auto data = dir.path() / "olid.tsv";
  testsupport::write_synthetic_olid(data, 300, 1);
  const auto before = read_file(data);

  SUBCASE("preprocess, stats, resample-report") {
    const auto out = dir.path() / "pre";
    auto r = oflg(dir.path(), "--out-dir " + out.string() + " preprocess --input " + data.string());
    CHECK(r.code == 0);
    CHECK(fs::exists(out / "clean.tsv"));
    CHECK(fs::exists(out / "run.json"));

    r = oflg(dir.path(), "--out-dir " + out.string() + " stats --input " + data.string());
    CHECK(r.code == 0);
    CHECK(r.output.find("OFF") != std::string::npos);
    CHECK(read_file(out / "user_count_stats.tsv").rfind("label\tcount\tmean\tstddev\n", 0) == 0);

    r = oflg(dir.path(), "--task b --out-dir " + out.string() + " resample-report --input " + data.string());
    CHECK(r.code == 0);
    CHECK(read_file(out / "resample_report.tsv").rfind("label\tbefore\tafter\n", 0) == 0);
    const auto manifest = nlohmann::json::parse(read_file(out / "run.json"));
    CHECK(manifest["command"] == "resample-report");
    CHECK(manifest["config"]["data"]["task"] == "b");
  }

  SUBCASE("train, predict, evaluate, transfer") {
    const auto out = dir.path() / "run";
    write_json(dir.path() / "a.json", tiny_config(data, out));
    auto r = oflg(dir.path(), "--config " + (dir.path() / "a.json").string() + " train");
    REQUIRE_MESSAGE(r.code == 0, r.output);
    for (const char* f : {"model.bin", "vocab.txt", "history.csv", "run.json"}) CHECK(fs::exists(out / f));
    const auto manifest = nlohmann::json::parse(read_file(out / "run.json"));
    CHECK(manifest["config"]["model"]["lstm_hidden"] == 4);
    CHECK(manifest["versions"]["model_format"] == "OFLG1");

    const auto preds = dir.path() / "preds.csv";
    r = oflg(dir.path(), "--out-dir " + (dir.path() / "p").string() + " predict --model " + (out / "model.bin").string() +
                             " --vocab " + (out / "vocab.txt").string() + " --input " + data.string() +
                             " --output " + preds.string());
    CHECK(r.code == 0);
    const auto csv = read_file(preds);
    CHECK(csv.rfind("id,label\n10000,", 0) == 0);

    r = oflg(dir.path(), "--out-dir " + (dir.path() / "e").string() + " evaluate --model " + (out / "model.bin").string() +
                             " --vocab " + (out / "vocab.txt").string() + " --input " + data.string());
    CHECK(r.code == 0);
    CHECK(fs::exists(dir.path() / "e" / "report.csv"));

    const auto tout = dir.path() / "transfer";
    write_json(dir.path() / "c.json", tiny_config(data, tout, "c"));
    r = oflg(dir.path(), "--config " + (dir.path() / "c.json").string() + " transfer --model " +
                             (out / "model.bin").string() + " --vocab " + (out / "vocab.txt").string());
    CHECK_MESSAGE(r.code == 0, r.output);
    CHECK(fs::exists(tout / "model.bin"));

    // a vocabulary that does not belong to the model
    std::ofstream(dir.path() / "other_vocab.txt") << "<pad>\n<unk>\nhello\n";
    r = oflg(dir.path(), "--out-dir " + (dir.path() / "bad").string() + " predict --model " + (out / "model.bin").string() + " --vocab " +
                             (dir.path() / "other_vocab.txt").string() + " --input " + data.string());
    CHECK(r.code != 0);
    CHECK(r.output.find("error") != std::string::npos);

    // transfer needs a task-A source
    r = oflg(dir.path(), "--config " + (dir.path() / "c.json").string() + " --task b transfer --model " +
                             (tout / "model.bin").string() + " --vocab " + (out / "vocab.txt").string());
    CHECK(r.code != 0);
  }

  SUBCASE("config errors are named") {
    auto cfg = tiny_config(data, dir.path() / "x");
    cfg.erase("output");
    write_json(dir.path() / "bad.json", cfg);
    auto r = oflg(dir.path(), "--config " + (dir.path() / "bad.json").string() + " train");
    CHECK(r.code != 0);
    CHECK(r.output.find("output.dir") != std::string::npos);

    cfg = tiny_config(data, dir.path() / "x");
    cfg["data"].erase("train_path");
    write_json(dir.path() / "bad2.json", cfg);
    r = oflg(dir.path(), "--config " + (dir.path() / "bad2.json").string() + " train");
    CHECK(r.output.find("data.train_path") != std::string::npos);

    r = oflg(dir.path(), "--out-dir " + (dir.path() / "bad").string() + " stats --input " + (dir.path() / "missing.tsv").string());
    CHECK(r.code != 0);
  }

  SUBCASE("gradcheck exit status") {
    auto r = oflg(dir.path(), "--out-dir " + (dir.path() / "g").string() + " gradcheck --seeds 2");
    CHECK(r.code == 0);
    CHECK(r.output.find("checks passed") != std::string::npos);
    r = oflg(dir.path(), "--out-dir " + (dir.path() / "g").string() + " gradcheck --seeds 1 --tolerance 1e-30");
    CHECK(r.code != 0);
  }

  CHECK(read_file(data) == before);
}
