#include <algorithm>
#include <set>

#include "doctest.h"
#include "paraclap/checkpoint.hpp"
#include "paraclap/error.hpp"
#include "paraclap/training.hpp"
#include "synthetic.hpp"

using namespace paraclap;
using namespace paraclap::testing;

namespace {

const std::vector<TrainingItem>& corpus() {
  static const auto items = synthetic_items("four-class", 15, 42, "training_corpus");
  return items;
}

TrainConfig small_run(std::size_t epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 16;
  c.seed = 9;
  return c;
}

}  // namespace

TEST_CASE("adam first step") {
  ModelConfig cfg;
  cfg.vocab_size = 3;
  Rng rng = make_rng(1);
  ModelParams p = init_params(cfg, rng);
  ModelParams g = zeros_like(p);
  g.log_tau = 0.5;
  g.proj_audio.ln_bias[0] = -0.25;
  g.text_mlp.output.bias[1] = 2.0;
  AdamState state = AdamState::for_params(p);
  const ModelParams before = p;
  adam_step(p, g, state, AdamConfig{});
  CHECK(state.t == 1);
  CHECK(p.log_tau - before.log_tau == doctest::Approx(-1e-3 * 0.5 / (0.5 + 1e-8)).epsilon(1e-9));
  CHECK(p.proj_audio.ln_bias[0] - before.proj_audio.ln_bias[0] ==
        doctest::Approx(1e-3 * 0.25 / (0.25 + 1e-8)).epsilon(1e-9));
  // Encoder group moves at the smaller rate.
  CHECK(p.text_mlp.output.bias[1] - before.text_mlp.output.bias[1] ==
        doctest::Approx(-1e-5 * 2.0 / (2.0 + 1e-8)).epsilon(1e-9));
  CHECK(p.proj_audio.ln_bias[1] == before.proj_audio.ln_bias[1]);
}

TEST_CASE("adam with zero gradients leaves parameters unchanged") {
  ModelConfig cfg;
  cfg.vocab_size = 3;
  Rng rng = make_rng(2);
  ModelParams p = init_params(cfg, rng);
  const ModelParams before = p;
  AdamState state = AdamState::for_params(p);
  for (int i = 0; i < 3; ++i) adam_step(p, zeros_like(p), state, AdamConfig{});
  CHECK(p == before);
  CHECK(state.t == 3);
}

TEST_CASE("adam keeps the temperature clamped") {
  ModelConfig cfg;
  cfg.vocab_size = 3;
  Rng rng = make_rng(3);
  ModelParams p = init_params(cfg, rng);
  p.log_tau = std::log(kMaxTau);
  ModelParams g = zeros_like(p);
  g.log_tau = -1.0;
  AdamState state = AdamState::for_params(p);
  adam_step(p, g, state, AdamConfig{});
  CHECK(p.log_tau == std::log(kMaxTau));
}

TEST_CASE("make_batches") {
  Rng rng = make_rng(5, {0});
  const auto b = make_batches(130, 64, rng);
  REQUIRE(b.size() == 2);
  CHECK(b[0].size() == 64);
  CHECK(b[1].size() == 64);
  std::set<std::size_t> seen;
  for (const auto& batch : b) seen.insert(batch.begin(), batch.end());
  CHECK(seen.size() == 128);

  Rng again = make_rng(5, {0});
  CHECK(make_batches(130, 64, again) == b);
  Rng rng64 = make_rng(5, {1});
  CHECK(make_batches(64, 64, rng64).size() == 1);
  Rng small = make_rng(5, {2});
  const auto s = make_batches(10, 64, small);
  REQUIRE(s.size() == 1);
  CHECK(s[0].size() == 10);
  CHECK_THROWS_AS(make_batches(1, 64, small), ValidationError);
}

TEST_CASE("split_heldout") {
  const auto [train, held] = split_heldout(corpus(), 0.25, 3);
  CHECK(train.size() + held.size() == corpus().size());
  CHECK(held.size() == 15);
  const auto [train2, held2] = split_heldout(corpus(), 0.25, 3);
  CHECK(held2.size() == held.size());
  for (std::size_t i = 0; i < held.size(); ++i) CHECK(held[i].record.id == held2[i].record.id);
  CHECK_THROWS_AS(split_heldout(corpus(), 1.0, 3), ValidationError);
}

TEST_CASE("training run") {
  const auto [train_items, held] = split_heldout(corpus(), 0.25, 3);
  const auto cfg = small_run(6);
  std::vector<EpochLog> streamed;
  const auto r = train(cfg, train_items, held, default_template_bank(),
                       [&](const EpochLog& e) { streamed.push_back(e); });
  REQUIRE(r.log.size() == 6);
  CHECK(streamed == r.log);
  CHECK(r.heldout_labels == std::vector<std::string>{"angry", "happy", "neutral", "sad"});

  SUBCASE("learning signal over the first five epochs") {
    CHECK(r.log[4].loss <= 0.95 * r.log[0].loss);
  }
  SUBCASE("selection is the argmax of the logged UAR, earliest on ties") {
    std::size_t best = 0;
    for (std::size_t e = 1; e < r.log.size(); ++e) {
      if (r.log[e].uar > r.log[best].uar) best = e;
    }
    CHECK(r.best_epoch == best);
    CHECK(r.best_uar == r.log[best].uar);
  }
  SUBCASE("identical config and seed give identical logs and weights") {
    const auto again = train(cfg, train_items, held, default_template_bank());
    CHECK(again.log == r.log);
    CHECK(again.final_model.params == r.final_model.params);
  }
  SUBCASE("checkpoint round-trip reproduces the held-out UAR exactly") {
    const auto dir = scratch_dir("training_ckpt");
    save_checkpoint(dir / "best.json", r.best);
    const ClapModel loaded = load_checkpoint(dir / "best.json");
    CHECK(loaded.params == r.best.params);
    const auto items = to_eval_items(held);
    const auto q = build_label_queries(r.heldout_labels, loaded, cfg.eval_query_mode);
    CHECK(evaluate(items, q, loaded).uar == r.best_uar);
  }
  SUBCASE("run directory") {
    const auto dir = scratch_dir("training_run");
    write_run_directory(dir, r, "epochs=6\n");
    CHECK(std::filesystem::exists(dir / "best.ckpt.json"));
    CHECK(std::filesystem::exists(dir / "final.ckpt.json"));
    CHECK(parse_thresholds(slurp(dir / "thresholds.json")) == r.thresholds);
    CHECK(parse_epoch_log(slurp(dir / "log.jsonl")) == r.log);
    CHECK(slurp(dir / "config.ini") == "epochs=6\n");
  }
}

TEST_CASE("single epoch and validation") {
  const auto [train_items, held] = split_heldout(corpus(), 0.25, 4);
  CHECK(train(small_run(1), train_items, held, default_template_bank()).log.size() == 1);

  TrainConfig bad = small_run(1);
  bad.batch_size = 1;
  CHECK_THROWS_AS(train(bad, train_items, held, default_template_bank()), ValidationError);

  std::vector<TrainingItem> one_label;
  for (const auto& it : held) {
    if (it.record.emotion == "sad") one_label.push_back(it);
  }
  CHECK_THROWS_AS(train(small_run(1), train_items, one_label, default_template_bank()),
                  ValidationError);

  std::vector<TrainingItem> unlabeled = train_items;
  for (auto& it : unlabeled) it.record.emotion.reset();
  CHECK_THROWS_AS(train(small_run(1), unlabeled, held, default_template_bank()), ValidationError);
  TrainConfig rand = small_run(1);
  rand.policy = parse_caption_policy("no-emo-rand5", 5);
  CHECK(train(rand, unlabeled, held, default_template_bank()).log.size() == 1);
}

TEST_CASE("epoch log parsing errors carry line numbers") {
  try {
    parse_epoch_log("{\"epoch\":0,\"loss\":1,\"uar\":0.5}\nnot json\n");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
}
