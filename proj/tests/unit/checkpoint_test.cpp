#include "doctest.h"
#include "json.hpp"
#include "paraclap/checkpoint.hpp"
#include "paraclap/error.hpp"
#include "test_support.hpp"

using namespace paraclap;
using namespace paraclap::testing;

namespace {

ClapModel model(std::uint64_t seed) {
  ClapModel m;
  m.vocab = build_vocab(default_template_bank());
  m.config.vocab_size = m.vocab.size();
  m.config.shared_dim = 16;
  Rng rng = make_rng(seed);
  m.params = init_params(m.config, rng);
  m.scaler.mean = {200, 10, -20, 0.01, 0.05, 3};
  m.scaler.stddev = {50, 5, 6, 0.005, 0.02, 1};
  return m;
}

}  // namespace

TEST_CASE("checkpoint round-trip is bit-exact") {
  const ClapModel m = model(3);
  const std::string text = checkpoint_to_string(m);
  const ClapModel back = checkpoint_from_string(text);
  CHECK(back.params == m.params);
  CHECK(back.config == m.config);
  CHECK(back.vocab == m.vocab);
  CHECK(back.scaler == m.scaler);
  CHECK(checkpoint_to_string(back) == text);

  const auto dir = scratch_dir("checkpoint");
  save_checkpoint(dir / "m.json", m);
  CHECK(slurp(dir / "m.json") == text);
  CHECK(load_checkpoint(dir / "m.json").params == m.params);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.json"), IoError);
}

TEST_CASE("checkpoint validation") {
  auto j = nlohmann::json::parse(checkpoint_to_string(model(4)));
  SUBCASE("bad shape") {
    j["tensors"][1]["shape"][0] = 999;
    CHECK_THROWS_AS(checkpoint_from_string(j.dump()), ValidationError);
  }
  SUBCASE("missing tensor") {
    j["tensors"].erase(j["tensors"].begin());
    CHECK_THROWS_AS(checkpoint_from_string(j.dump()), ValidationError);
  }
  SUBCASE("vocabulary hash mismatch") {
    j["vocab_hash"] = "0000";
    CHECK_THROWS_AS(checkpoint_from_string(j.dump()), ValidationError);
  }
  SUBCASE("version") {
    j["format_version"] = 99;
    CHECK_THROWS_AS(checkpoint_from_string(j.dump()), ValidationError);
  }
  CHECK_THROWS_AS(checkpoint_from_string("{"), ParseError);
}

TEST_CASE("content hash") {
  CHECK(content_hash("abc") == content_hash("abc"));
  CHECK(content_hash("abc") != content_hash("abd"));
}
