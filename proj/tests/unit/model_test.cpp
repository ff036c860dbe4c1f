#include <algorithm>
#include <numeric>
#include <random>

#include "doctest.h"
#include "paraclap/error.hpp"
#include "paraclap/model.hpp"

using namespace paraclap;

namespace {

// Straight-from-the-definition loss: -1/2N * sum_i [log p_row(i,i) + log p_col(i,i)].
double naive_loss(const Matrix& s) {
  const std::size_t n = s.rows();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double zr = 0.0;
    double zc = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      zr += std::exp(s(i, k));
      zc += std::exp(s(k, i));
    }
    total += std::log(std::exp(s(i, i)) / zr) + std::log(std::exp(s(i, i)) / zc);
  }
  return -total / (2.0 * static_cast<double>(n));
}

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> nd(0.0, scale);
  Matrix m(r, c);
  for (double& v : m.flat()) v = nd(rng);
  return m;
}

Matrix unit_rows(Matrix m) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto u = normalize(m.row(i));
    std::copy(u.begin(), u.end(), m.row(i).begin());
  }
  return m;
}

std::vector<double> naive_mlp(std::span<const double> x, const Mlp& m) {
  std::vector<double> h(m.hidden.bias);
  for (std::size_t r = 0; r < h.size(); ++r) {
    for (std::size_t c = 0; c < x.size(); ++c) h[r] += m.hidden.weight(r, c) * x[c];
    h[r] = 0.5 * h[r] * (1.0 + std::erf(h[r] / std::sqrt(2.0)));
  }
  std::vector<double> y(m.output.bias);
  for (std::size_t r = 0; r < y.size(); ++r) {
    for (std::size_t c = 0; c < h.size(); ++c) y[r] += m.output.weight(r, c) * h[c];
  }
  return y;
}

void check_close(const std::vector<double>& got, const std::vector<double>& want) {
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
}

ModelParams fresh(std::uint64_t seed, std::size_t vocab = 20) {
  ModelConfig cfg;
  cfg.vocab_size = vocab;
  Rng rng = make_rng(seed);
  return init_params(cfg, rng);
}

}  // namespace

TEST_CASE("vocabulary and tokenization") {
  const Vocab v = build_vocab(default_template_bank());
  const auto ids = tokenize("speaker is angry", v);
  REQUIRE(ids.size() == 3);
  for (auto id : ids) CHECK(id != kUnknownToken);
  CHECK(tokenize("Speaker IS angry", v) == ids);
  CHECK(tokenize("speaker is angry.", v) == ids);
  CHECK(tokenize("zxqv", v) == std::vector<std::size_t>{kUnknownToken});
  CHECK(v.id("jitter") != kUnknownToken);
  CHECK(v.id("variance") != kUnknownToken);
  CHECK(std::is_sorted(v.tokens().begin(), v.tokens().end()));
  CHECK(build_vocab(default_template_bank()).hash() == v.hash());
  CHECK(Vocab({"b", "a", "a"}).tokens() == std::vector<std::string>{"a", "b"});
}

TEST_CASE("gelu") {
  CHECK(gelu(0.0) == 0.0);
  CHECK(gelu(1.0) == doctest::Approx(0.841345).epsilon(1e-6));
  CHECK(std::abs(gelu(-10.0)) < 1e-8);
  for (double x : {-3.0, -0.7, 0.0, 0.4, 2.5}) {
    const double h = 1e-6;
    const double fd = (gelu(x + h) - gelu(x - h)) / (2 * h);
    CHECK(gelu_derivative(x) == doctest::Approx(fd).epsilon(1e-7));
  }
}

TEST_CASE("layer_norm") {
  const std::vector<double> one(4, 1.0), zero(4, 0.0);
  CHECK(layer_norm(std::vector<double>(4, 3.0), one, zero) == zero);
  const std::vector<double> g2(2, 1.0), b2(2, 0.0);
  const auto y = layer_norm(std::vector<double>{1.0, -1.0}, g2, b2);
  CHECK(y[0] == doctest::Approx(1.0 / std::sqrt(1.0 + 1e-5)).epsilon(1e-12));
  CHECK(y[0] == doctest::Approx(0.999995).epsilon(1e-6));
  CHECK(y[1] == doctest::Approx(-0.999995).epsilon(1e-6));
  const std::vector<double> b = {0.5, -2.0, 3.0};
  CHECK(layer_norm(std::vector<double>{1.0, 7.0, -4.0}, std::vector<double>(3, 0.0), b) == b);
  CHECK_THROWS(layer_norm(std::vector<double>{1.0}, std::vector<double>{1.0}, std::vector<double>{0.0}));
}

TEST_CASE("project") {
  ModelParams p = fresh(1);
  SUBCASE("zero weights give a zero vector") {
    ProjectionHead h = p.proj_audio;
    for (auto* l : {&h.expand, &h.shrink}) {
      std::fill(l->weight.flat().begin(), l->weight.flat().end(), 0.0);
      std::fill(l->bias.begin(), l->bias.end(), 0.0);
    }
    const std::vector<double> raw(32, 0.7);
    const auto out = project(raw, h);
    CHECK(out.size() == 64);
    CHECK(std::all_of(out.begin(), out.end(), [](double v) { return v == 0.0; }));
  }
  SUBCASE("random init: variance v / (v + eps) before the affine") {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> nd;
    std::vector<double> raw(32);
    for (auto& v : raw) v = nd(rng);
    const auto out = project(raw, p.proj_audio);
    REQUIRE(out.size() == 64);
    const double mean = std::accumulate(out.begin(), out.end(), 0.0) / 64.0;
    double var = 0.0;
    for (double v : out) var += (v - mean) * (v - mean);
    var /= 64.0;
    const auto pre = naive_mlp(raw, Mlp{p.proj_audio.expand, p.proj_audio.shrink});
    const double pre_mean = std::accumulate(pre.begin(), pre.end(), 0.0) / 64.0;
    double v = 0.0;
    for (double x : pre) v += (x - pre_mean) * (x - pre_mean);
    v /= 64.0;
    CHECK(std::abs(mean) < 1e-12);
    CHECK(var == doctest::Approx(v / (v + 1e-5)).epsilon(1e-10));
  }
  CHECK_THROWS_AS(project(std::vector<double>(5, 0.0), p.proj_audio), ShapeError);
}

TEST_CASE("normalize") {
  const auto u = normalize(std::vector<double>{3.0, 4.0});
  CHECK(u[0] == doctest::Approx(0.6));
  CHECK(u[1] == doctest::Approx(0.8));
  CHECK(normalize(std::vector<double>{0.0, 1.0, 0.0}) == std::vector<double>{0.0, 1.0, 0.0});
  CHECK_THROWS_AS(normalize(std::vector<double>(3, 0.0)), DegenerateEmbeddingError);
}

TEST_CASE("encoders") {
  ModelParams p = fresh(2);
  const std::vector<std::size_t> t = {5};
  const std::vector<std::size_t> tt = {5, 5};
  const auto row = p.text_embedding.row(5);
  check_close(encode_text(t, p), naive_mlp(std::vector<double>(row.begin(), row.end()), p.text_mlp));
  const auto single = encode_text(t, p);
  const auto doubled = encode_text(tt, p);
  for (std::size_t i = 0; i < single.size(); ++i) CHECK(doubled[i] == doctest::Approx(single[i]).epsilon(1e-14));
  CHECK_THROWS(encode_text(std::vector<std::size_t>{}, p));

  ModelParams z = p;
  std::fill(z.text_embedding.flat().begin(), z.text_embedding.flat().end(), 0.0);
  const std::vector<double> zeros32(32, 0.0);
  check_close(encode_text(t, z), naive_mlp(zeros32, z.text_mlp));

  const std::vector<double> zero6(6, 0.0);
  const auto bias_path = naive_mlp(zero6, p.audio_mlp);
  const auto got = encode_audio(zero6, p);
  for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(bias_path[i]).epsilon(1e-14));
  const std::vector<double> f = {0.1, -0.3, 1.2, 0.0, 0.5, -2.0};
  CHECK(encode_audio(f, p) == encode_audio(f, p));
  std::vector<double> bad = f;
  bad[2] = std::nan("");
  CHECK_THROWS(encode_audio(bad, p));
}

TEST_CASE("similarity matrix") {
  Matrix a(1, 3), t(1, 3);
  a(0, 0) = t(0, 0) = 1.0;
  CHECK(similarity_matrix({a, t}, 1.0)(0, 0) == 1.0);
  Matrix a2(2, 4), t2(2, 4);
  a2(0, 0) = a2(1, 1) = 1.0;
  t2(0, 2) = t2(1, 3) = 1.0;
  const auto s = similarity_matrix({a2, t2}, 14.0);
  for (double v : s.flat()) CHECK(v == 0.0);
  Matrix bad(1, 3);
  bad(0, 0) = 2.0;
  CHECK_THROWS(similarity_matrix({bad, t}, 1.0));
}

TEST_CASE("symmetric loss fixtures") {
  Matrix one(1, 1);
  one(0, 0) = 42.0;
  CHECK(symmetric_ce_loss(one) == 0.0);
  CHECK(symmetric_ce_loss(Matrix(4, 4)) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  Matrix eye(4, 4);
  for (int i = 0; i < 4; ++i) eye(i, i) = 100.0;
  CHECK(symmetric_ce_loss(eye) < 1e-6);
  CHECK(symmetric_ce_loss(eye) >= 0.0);
}

TEST_CASE("symmetric loss properties on random matrices") {
  std::mt19937_64 rng(31);
  for (std::size_t n : {2, 3, 5, 8, 13}) {
    for (int trial = 0; trial < 5; ++trial) {
      const Matrix s = random_matrix(n, n, rng, 3.0);
      const double l = symmetric_ce_loss(s);
      CHECK(l == doctest::Approx(naive_loss(s)).epsilon(1e-12));
      CHECK(symmetric_ce_loss(transpose(s)) == doctest::Approx(l).epsilon(1e-12));

      std::vector<std::size_t> perm(n);
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      Matrix ps(n, n);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) ps(i, j) = s(perm[i], perm[j]);
      CHECK(symmetric_ce_loss(ps) == doctest::Approx(l).epsilon(1e-12));

      for (std::size_t i = 0; i < n; ++i) {
        const auto pr = softmax(s.row(i));
        CHECK(std::abs(std::accumulate(pr.begin(), pr.end(), 0.0) - 1.0) < 1e-9);
      }

      const Matrix a = unit_rows(random_matrix(n, 6, rng, 1.0));
      const Matrix t = unit_rows(random_matrix(n, 6, rng, 1.0));
      const Matrix s1 = similarity_matrix({a, t}, 1.0);
      const Matrix s50 = similarity_matrix({a, t}, 50.0);
      CHECK(symmetric_ce_loss(s1) >= 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        const auto r1 = s1.row(i);
        const auto r50 = s50.row(i);
        CHECK(std::max_element(r1.begin(), r1.end()) - r1.begin() ==
              std::max_element(r50.begin(), r50.end()) - r50.begin());
      }
    }
  }
}

TEST_CASE("loss approaches zero as tau grows on perfectly aligned pairs") {
  Matrix a(3, 3);
  for (int i = 0; i < 3; ++i) a(i, i) = 1.0;
  double prev = symmetric_ce_loss(similarity_matrix({a, a}, 1.0));
  for (double tau : {5.0, 20.0, 100.0}) {
    const double l = symmetric_ce_loss(similarity_matrix({a, a}, tau));
    CHECK(l < prev);
    prev = l;
  }
  CHECK(prev < 1e-30);
}

TEST_CASE("forward_backward is consistent with the forward pieces") {
  ModelParams p = fresh(4);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> nd;
  std::vector<TrainingPair> batch(5);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    for (auto& f : batch[i].features) f = nd(rng);
    batch[i].tokens = {i + 1, 2 * i + 3};
  }
  const auto lg = forward_backward(batch, p);
  CHECK(lg.loss == symmetric_ce_loss(similarity_matrix(embed_batch(batch, p), temperature(p))));
  CHECK(lg.loss == batch_loss(batch, p));
  const auto pt = tensors(p);
  const auto gt = tensors(lg.grad);
  REQUIRE(pt.size() == gt.size());
  for (std::size_t i = 0; i < pt.size(); ++i) {
    CHECK(pt[i].name == gt[i].name);
    CHECK(pt[i].data.size() == gt[i].data.size());
  }
  // Rows of tokens that never appear receive no gradient.
  for (std::size_t c = 0; c < 32; ++c) CHECK(lg.grad.text_embedding(19, c) == 0.0);
}

TEST_CASE("uniform similarity is a stationary point for the temperature") {
  ModelParams p = fresh(6);
  // Constant audio embeddings: every feature vector maps to the bias path.
  std::fill(p.audio_mlp.hidden.weight.flat().begin(), p.audio_mlp.hidden.weight.flat().end(), 0.0);
  std::vector<TrainingPair> batch(2);
  batch[0].features = {1, 2, 3, 4, 5, 6};
  batch[1].features = {-6, -5, -4, -3, -2, -1};
  batch[0].tokens = batch[1].tokens = {3};
  const auto lg = forward_backward(batch, p);
  CHECK(lg.loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(std::abs(lg.grad.log_tau) < 1e-15);
}

TEST_CASE("temperature clamp and shapes") {
  ModelParams p = fresh(7);
  CHECK(p.log_tau == doctest::Approx(std::log(1.0 / 0.07)));
  p.log_tau = 10.0;
  CHECK(temperature(p) == kMaxTau);
  ModelConfig cfg;
  cfg.vocab_size = 20;
  CHECK_NOTHROW(validate_shapes(p, cfg));
  cfg.shared_dim = 16;
  CHECK_THROWS_AS(validate_shapes(p, cfg), ShapeError);
}

TEST_CASE("feature scaler") {
  std::vector<FeatureVector> fvs(3);
  fvs[0].pitch_mu = 100.0;
  fvs[1].pitch_mu = 300.0;
  fvs[0].intensity_db = fvs[1].intensity_db = fvs[2].intensity_db = -20.0;
  fvs[0].duration_s = 1.0;
  fvs[1].duration_s = 2.0;
  fvs[2].duration_s = 3.0;
  const auto sc = FeatureScaler::fit(fvs);
  CHECK(sc.mean[0] == 200.0);
  CHECK(sc.stddev[0] == doctest::Approx(100.0));
  CHECK(sc.stddev[2] == 1.0);
  const auto z = sc.standardize(fvs[2]);
  CHECK(z[0] == 0.0);
  CHECK(z[3] == 0.0);
  CHECK(z[5] == doctest::Approx(std::sqrt(1.5)));
}
