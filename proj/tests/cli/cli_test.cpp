#include <sys/wait.h>

#include <cstdlib>
#include <set>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "paraclap/eval.hpp"
#include "test_support.hpp"

using namespace paraclap;
using namespace paraclap::testing;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

Run cli(const std::string& args, const fs::path& dir) {
  const auto out = dir / "stdout.txt";
  const auto err = dir / "stderr.txt";
  const std::string cmd = std::string(PARACLAP_CLI) + " " + args + " >" + out.string() + " 2>" +
                          err.string();
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) {
    if (!l.empty()) out.push_back(l);
  }
  return out;
}

double printed_number(const std::string& out, const std::string& key) {
  const auto pos = out.find(key);
  REQUIRE(pos != std::string::npos);
  return std::stod(out.substr(pos + key.size()));
}

// One 20-utterance corpus with features, shared by every case.
const fs::path& corpus_dir() {
  static const fs::path dir = [] {
    const auto d = scratch_dir("cli_corpus");
    const Run s = cli("synth --n 5 --seed 4 --out-dir " + (d / "c").string(), d);
    REQUIRE(s.code == 0);
    const Run x = cli("extract --manifest " + (d / "c" / "manifest.jsonl").string() + " --out " +
                          (d / "feat.csv").string(),
                      d);
    REQUIRE(x.code == 0);
    return d;
  }();
  return dir;
}

std::string manifest() { return (corpus_dir() / "c" / "manifest.jsonl").string(); }
std::string features() { return (corpus_dir() / "feat.csv").string(); }

}  // namespace

TEST_CASE("usage errors exit 2") {
  const auto d = scratch_dir("cli_usage");
  CHECK(cli("", d).code == 2);
  CHECK(cli("frobnicate", d).code == 2);
  CHECK(cli("synth", d).code == 2);
  CHECK(cli("synth --n 0 --out-dir " + (d / "x").string(), d).code == 2);
  CHECK(cli("synth --classes nine-class --out-dir " + (d / "x").string(), d).code == 2);
  CHECK(cli("train --help", d).code == 0);
}

TEST_CASE("synth is deterministic") {
  const auto d = scratch_dir("cli_synth");
  REQUIRE(cli("synth --classes lo:100-120:0.2-0.3:1-1.5,hi:300-320:0.2-0.3:1-1.5 --n 10 --seed 1 "
              "--out-dir " + (d / "a").string(), d).code == 0);
  REQUIRE(cli("synth --classes lo:100-120:0.2-0.3:1-1.5,hi:300-320:0.2-0.3:1-1.5 --n 10 --seed 1 "
              "--out-dir " + (d / "b").string(), d).code == 0);
  CHECK(lines(slurp(d / "a" / "manifest.jsonl")).size() == 20);
  CHECK(slurp(d / "a" / "manifest.jsonl") == slurp(d / "b" / "manifest.jsonl"));
}

TEST_CASE("extract") {
  const auto d = scratch_dir("cli_extract");
  CHECK(lines(slurp(features())).size() == 21);

  const Run again = cli("extract --manifest " + manifest() + " --out " + (d / "again.csv").string(), d);
  CHECK(again.code == 0);
  CHECK(slurp(d / "again.csv") == slurp(features()));

  // Corrupt one file in a copy of the corpus.
  fs::copy(corpus_dir() / "c", d / "c", fs::copy_options::recursive);
  spit(d / "c" / "wav" / "sad_0002.wav", "garbage");
  const Run partial = cli("extract --jobs 2 --manifest " + (d / "c" / "manifest.jsonl").string() +
                              " --out " + (d / "partial.csv").string(), d);
  CHECK(partial.code == 0);
  CHECK(lines(slurp(d / "partial.csv")).size() == 20);
  const auto errors = lines(slurp(d / "partial.csv.errors.jsonl"));
  REQUIRE(errors.size() == 1);
  CHECK(nlohmann::json::parse(errors[0])["id"] == "sad_0002");

  spit(d / "empty.jsonl", "");
  CHECK(cli("extract --manifest " + (d / "empty.jsonl").string() + " --out " + (d / "e.csv").string(), d).code == 2);

  spit(d / "bad.jsonl", "{\"id\":\"x\",\"audio\":\"missing.wav\"}\n");
  CHECK(cli("extract --manifest " + (d / "bad.jsonl").string() + " --out " + (d / "b.csv").string(), d).code == 1);
}

TEST_CASE("caption") {
  const auto d = scratch_dir("cli_caption");
  const std::string base = "caption --manifest " + manifest() + " --features " + features();
  REQUIRE(cli(base + " --mode only-emo --seed 3 --out " + (d / "emo.jsonl").string(), d).code == 0);
  for (const auto& l : lines(slurp(d / "emo.jsonl"))) {
    const auto j = nlohmann::json::parse(l);
    REQUIRE(j["parts"].size() == 1);
    const std::string text = j["caption"];
    CHECK((text.rfind("speaker is ", 0) == 0 || text.rfind("this is a ", 0) == 0));
  }
  CHECK(fs::exists(d / "emo.thresholds.json"));

  REQUIRE(cli(base + " --mode rand5 --seed 3 --out " + (d / "r1.jsonl").string(), d).code == 0);
  REQUIRE(cli(base + " --mode rand5 --seed 3 --out " + (d / "r2.jsonl").string(), d).code == 0);
  CHECK(slurp(d / "r1.jsonl") == slurp(d / "r2.jsonl"));
  const auto rl = lines(slurp(d / "r1.jsonl"));
  CHECK(rl.size() == 20);
  for (const auto& l : rl) {
    const auto n = nlohmann::json::parse(l)["parts"].size();
    CHECK(n >= 1);
    CHECK(n <= 5);
  }

  CHECK(cli(base + " --mode sometimes --out " + (d / "x.jsonl").string(), d).code == 2);

  // Unlabeled records are reported and skipped under only-emo.
  auto text = slurp(manifest());
  const auto pos = text.find(",\"emotion\":\"angry\"");
  REQUIRE(pos != std::string::npos);
  text.erase(pos, std::string(",\"emotion\":\"angry\"").size());
  fs::copy(corpus_dir() / "c" / "wav", d / "wav", fs::copy_options::recursive);
  spit(d / "m.jsonl", text);
  const Run r = cli("caption --manifest " + (d / "m.jsonl").string() + " --features " + features() +
                        " --out " + (d / "u.jsonl").string(), d);
  CHECK(r.code == 0);
  CHECK(r.err.find("angry_0000") != std::string::npos);
  CHECK(lines(slurp(d / "u.jsonl")).size() == 19);
}

TEST_CASE("train and eval") {
  const auto d = scratch_dir("cli_train");
  const std::string base = "train --manifest " + manifest() + " --features " + features();
  CHECK(cli(base + " --mode nonsense --out-dir " + (d / "bad").string(), d).code == 2);

  const Run one = cli(base + " --epochs 1 --batch-size 8 --out-dir " + (d / "one").string(), d);
  REQUIRE(one.code == 0);
  CHECK(lines(slurp(d / "one" / "log.jsonl")).size() == 1);
  CHECK(one.out.find("held-out UAR") != std::string::npos);

  spit(d / "run.ini", "epochs = 4\nbatch-size = 8\nmode = rand3\n");
  const Run cfg = cli(base + " --config " + (d / "run.ini").string() + " --epochs 3 --out-dir " +
                          (d / "cfg").string(), d);
  REQUIRE(cfg.code == 0);
  CHECK(lines(slurp(d / "cfg" / "log.jsonl")).size() == 3);
  const std::string snapshot = slurp(d / "cfg" / "config.ini");
  CHECK(snapshot.find("epochs=3") != std::string::npos);
  CHECK(snapshot.find("mode=\"rand3\"") != std::string::npos);
  CHECK(snapshot.find("batch-size=8") != std::string::npos);
  spit(d / "bad.ini", "learning_rate_of_doom = 4\n");
  CHECK(cli(base + " --config " + (d / "bad.ini").string() + " --out-dir " + (d / "x").string(), d).code == 2);

  const std::string ckpt = (d / "one" / "best.ckpt.json").string();
  const std::string ev = "eval --manifest " + manifest() + " --checkpoint " + ckpt;
  const Run fwd = cli(ev + " --out " + (d / "fwd" / "report.json").string(), d);
  REQUIRE(fwd.code == 0);
  const auto report = report_from_json(slurp(d / "fwd" / "report.json"));
  CHECK(printed_number(fwd.out, "UAR ") == report.uar);
  CHECK(report.metadata.labels == std::vector<std::string>{"angry", "happy", "neutral", "sad"});
  CHECK(fs::exists(d / "fwd" / "report.csv"));

  const Run rev = cli(ev + " --features " + features() + " --labels sad,neutral,happy,angry --out " +
                          (d / "rev" / "report.json").string(), d);
  REQUIRE(rev.code == 0);
  const auto rr = report_from_json(slurp(d / "rev" / "report.json"));
  CHECK(rr.uar == report.uar);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(rr.confusion[3 - i][3 - j] == report.confusion[i][j]);

  CHECK(cli("eval --manifest " + manifest() + " --checkpoint " + (d / "nope.json").string() +
                " --out " + (d / "x.json").string(), d).code == 2);
  const Run mismatch = cli(ev + " --labels angry,sad --out " + (d / "x.json").string(), d);
  CHECK(mismatch.code == 2);
  CHECK(mismatch.err.find("happy") != std::string::npos);
  CHECK(mismatch.err.find("neutral") != std::string::npos);
}
