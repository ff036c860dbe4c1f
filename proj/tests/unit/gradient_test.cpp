#include "doctest.h"
#include "gradcheck.hpp"

using namespace paraclap;
using namespace paraclap::testing;

TEST_CASE("analytic gradients match central differences on every coordinate") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    for (std::size_t n : {2, 4, 8}) {
      Rng rng = make_rng(seed, {n});
      const ModelConfig cfg = small_config();
      const auto params = init_params(cfg, rng);
      const auto batch = random_batch(n, cfg.vocab_size, rng);
      const auto r = check_gradients(batch, params);
      INFO("seed " << seed << " n " << n << " worst " << r.worst);
      CHECK(r.max_rel_error < 1e-4);
    }
  }
}

TEST_CASE("analytic gradients at default widths, strided coordinates") {
  const Vocab v = build_vocab(default_template_bank());
  ModelConfig cfg;
  cfg.vocab_size = v.size();
  Rng rng = make_rng(77);
  const auto params = init_params(cfg, rng);
  const auto batch = random_batch(4, cfg.vocab_size, rng);
  const auto r = check_gradients(batch, params, 97);
  INFO("worst " << r.worst);
  CHECK(r.coordinates > 500);
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("gradient with respect to the temperature vanishes at the clamp") {
  ModelConfig cfg = small_config();
  Rng rng = make_rng(5);
  auto params = init_params(cfg, rng);
  params.log_tau = std::log(kMaxTau) + 0.5;
  const auto batch = random_batch(4, cfg.vocab_size, rng);
  CHECK(forward_backward(batch, params).grad.log_tau == 0.0);
}
