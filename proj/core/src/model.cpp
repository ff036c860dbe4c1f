#include "paraclap/model.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <set>

#include "paraclap/error.hpp"

namespace paraclap {
namespace {

// ---------------------------------------------------------------------------
// Forward caches kept for the backward pass.

struct MlpCache {
  std::vector<double> input;
  std::vector<double> hidden_pre;
  std::vector<double> hidden;
  std::vector<double> output;
};

struct HeadCache {
  std::vector<double> input;
  std::vector<double> expand_pre;
  std::vector<double> expanded;
  std::vector<double> normed_hat;  // (x - mean) / sqrt(var + eps)
  double inv_std = 0.0;
  std::vector<double> ln_out;
  double ln_norm = 0.0;
  std::vector<double> unit;
};

std::vector<double> gelu_vec(std::span<const double> x) {
  std::vector<double> out(x.size());
  std::transform(x.begin(), x.end(), out.begin(), gelu);
  return out;
}

MlpCache mlp_forward_cached(std::span<const double> x, const Mlp& mlp) {
  MlpCache c;
  c.input.assign(x.begin(), x.end());
  c.hidden_pre = affine(mlp.hidden.weight, mlp.hidden.bias, x);
  c.hidden = gelu_vec(c.hidden_pre);
  c.output = affine(mlp.output.weight, mlp.output.bias, c.hidden);
  return c;
}

HeadCache head_forward_cached(std::span<const double> raw, const ProjectionHead& head) {
  HeadCache c;
  c.input.assign(raw.begin(), raw.end());
  c.expand_pre = affine(head.expand.weight, head.expand.bias, raw);
  c.expanded = gelu_vec(c.expand_pre);
  std::vector<double> shrunk = affine(head.shrink.weight, head.shrink.bias, c.expanded);

  const double n = static_cast<double>(shrunk.size());
  const double mean = std::accumulate(shrunk.begin(), shrunk.end(), 0.0) / n;
  double var = 0.0;
  for (double v : shrunk) var += (v - mean) * (v - mean);
  var /= n;
  c.inv_std = 1.0 / std::sqrt(var + kLayerNormEps);
  c.normed_hat.resize(shrunk.size());
  c.ln_out.resize(shrunk.size());
  for (std::size_t i = 0; i < shrunk.size(); ++i) {
    c.normed_hat[i] = (shrunk[i] - mean) * c.inv_std;
    c.ln_out[i] = head.ln_gain[i] * c.normed_hat[i] + head.ln_bias[i];
  }
  c.ln_norm = norm2(c.ln_out);
  if (!(c.ln_norm > kMinNorm)) throw DegenerateEmbeddingError("projected embedding has zero norm");
  c.unit.resize(c.ln_out.size());
  for (std::size_t i = 0; i < c.ln_out.size(); ++i) c.unit[i] = c.ln_out[i] / c.ln_norm;
  return c;
}

// Accumulates dW += dy x^T, db += dy and returns W^T dy.
std::vector<double> linear_backward(std::span<const double> dy, std::span<const double> x,
                                    const Linear& layer, Linear& grad) {
  std::vector<double> dx(x.size(), 0.0);
  for (std::size_t r = 0; r < dy.size(); ++r) {
    const double g = dy[r];
    grad.bias[r] += g;
    if (g == 0.0) continue;
    auto grow = grad.weight.row(r);
    auto wrow = layer.weight.row(r);
    for (std::size_t c = 0; c < x.size(); ++c) {
      grow[c] += g * x[c];
      dx[c] += g * wrow[c];
    }
  }
  return dx;
}

std::vector<double> mlp_backward(std::span<const double> dout, const MlpCache& c, const Mlp& mlp,
                                 Mlp& grad) {
  std::vector<double> dhidden = linear_backward(dout, c.hidden, mlp.output, grad.output);
  for (std::size_t i = 0; i < dhidden.size(); ++i) dhidden[i] *= gelu_derivative(c.hidden_pre[i]);
  return linear_backward(dhidden, c.input, mlp.hidden, grad.hidden);
}

std::vector<double> head_backward(std::span<const double> dunit, const HeadCache& c,
                                  const ProjectionHead& head, ProjectionHead& grad) {
  const std::size_t d = dunit.size();
  // unit = y / |y|
  const double proj = dot(c.unit, dunit);
  std::vector<double> dy(d);
  for (std::size_t i = 0; i < d; ++i) dy[i] = (dunit[i] - c.unit[i] * proj) / c.ln_norm;

  // y = gain * xhat + bias
  std::vector<double> dxhat(d);
  double mean_dxhat = 0.0;
  double mean_dxhat_xhat = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    grad.ln_gain[i] += dy[i] * c.normed_hat[i];
    grad.ln_bias[i] += dy[i];
    dxhat[i] = dy[i] * head.ln_gain[i];
    mean_dxhat += dxhat[i];
    mean_dxhat_xhat += dxhat[i] * c.normed_hat[i];
  }
  mean_dxhat /= static_cast<double>(d);
  mean_dxhat_xhat /= static_cast<double>(d);
  std::vector<double> dshrunk(d);
  for (std::size_t i = 0; i < d; ++i) {
    dshrunk[i] = c.inv_std * (dxhat[i] - mean_dxhat - c.normed_hat[i] * mean_dxhat_xhat);
  }

  std::vector<double> dexpanded = linear_backward(dshrunk, c.expanded, head.shrink, grad.shrink);
  for (std::size_t i = 0; i < dexpanded.size(); ++i) {
    dexpanded[i] *= gelu_derivative(c.expand_pre[i]);
  }
  return linear_backward(dexpanded, c.input, head.expand, grad.expand);
}

std::vector<double> mean_embedding(std::span<const std::size_t> tokens, const Matrix& table) {
  if (tokens.empty()) throw ValidationError("cannot encode an empty token list");
  std::vector<double> m(table.cols(), 0.0);
  for (std::size_t t : tokens) {
    if (t >= table.rows()) throw ShapeError("token id " + std::to_string(t) + " outside vocabulary");
    auto row = table.row(t);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] += row[i];
  }
  for (double& v : m) v /= static_cast<double>(tokens.size());
  return m;
}

void check_features(std::span<const double> x) {
  if (x.size() != kNumFeatures) {
    throw ShapeError("audio encoder expects " + std::to_string(kNumFeatures) + " features, got " +
                     std::to_string(x.size()));
  }
  for (double v : x) {
    if (!std::isfinite(v)) throw ValidationError("audio features must be finite");
  }
}

Linear init_linear(std::size_t in, std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Linear l{Matrix(out, in), std::vector<double>(out)};
  for (double& w : l.weight.flat()) w = dist(rng);
  for (double& b : l.bias) b = dist(rng);
  return l;
}

Linear zeros_linear(const Linear& l) {
  return {Matrix(l.weight.rows(), l.weight.cols()), std::vector<double>(l.bias.size(), 0.0)};
}

Mlp zeros_mlp(const Mlp& m) { return {zeros_linear(m.hidden), zeros_linear(m.output)}; }

ProjectionHead zeros_head(const ProjectionHead& h) {
  return {zeros_linear(h.expand), zeros_linear(h.shrink),
          std::vector<double>(h.ln_gain.size(), 0.0), std::vector<double>(h.ln_bias.size(), 0.0)};
}

template <class Params, class T>
std::vector<BasicTensorRef<T>> collect(Params& p) {
  std::vector<BasicTensorRef<T>> out;
  auto mat = [&out](std::string name, auto& m, ParamGroup g) {
    out.push_back({std::move(name), m.flat(), m.rows(), m.cols(), g});
  };
  auto vec = [&out](std::string name, auto& v, ParamGroup g) {
    out.push_back({std::move(name), std::span<T>(v.data(), v.size()), 1, v.size(), g});
  };
  auto mlp = [&](const std::string& prefix, auto& m) {
    mat(prefix + ".hidden.weight", m.hidden.weight, ParamGroup::Encoder);
    vec(prefix + ".hidden.bias", m.hidden.bias, ParamGroup::Encoder);
    mat(prefix + ".output.weight", m.output.weight, ParamGroup::Encoder);
    vec(prefix + ".output.bias", m.output.bias, ParamGroup::Encoder);
  };
  auto head = [&](const std::string& prefix, auto& h) {
    mat(prefix + ".expand.weight", h.expand.weight, ParamGroup::Head);
    vec(prefix + ".expand.bias", h.expand.bias, ParamGroup::Head);
    mat(prefix + ".shrink.weight", h.shrink.weight, ParamGroup::Head);
    vec(prefix + ".shrink.bias", h.shrink.bias, ParamGroup::Head);
    vec(prefix + ".ln.gain", h.ln_gain, ParamGroup::Head);
    vec(prefix + ".ln.bias", h.ln_bias, ParamGroup::Head);
  };
  mat("text_embedding", p.text_embedding, ParamGroup::Encoder);
  mlp("text_mlp", p.text_mlp);
  mlp("audio_mlp", p.audio_mlp);
  head("proj_text", p.proj_text);
  head("proj_audio", p.proj_audio);
  out.push_back({"log_tau", std::span<T>(&p.log_tau, 1), 1, 1, ParamGroup::Head});
  return out;
}

void expect_shape(const std::string& name, std::size_t rows, std::size_t cols, std::size_t want_rows,
                  std::size_t want_cols) {
  if (rows != want_rows || cols != want_cols) {
    throw ShapeError(name + " has shape " + std::to_string(rows) + "x" + std::to_string(cols) +
                     ", expected " + std::to_string(want_rows) + "x" + std::to_string(want_cols));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Vocabulary

Vocab::Vocab(std::vector<std::string> tokens) {
  std::sort(tokens.begin(), tokens.end());
  tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());
  tokens.erase(std::remove(tokens.begin(), tokens.end(), std::string()), tokens.end());
  tokens_ = std::move(tokens);
  for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], i + 1);
}

std::size_t Vocab::id(std::string_view token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnknownToken : it->second;
}

std::string Vocab::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](unsigned char c) {
    h ^= c;
    h *= 0x100000001b3ull;
  };
  for (const auto& t : tokens_) {
    for (unsigned char c : t) mix(c);
    mix('\n');
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  auto flush = [&] {
    std::size_t b = 0;
    std::size_t e = cur.size();
    while (b < e && std::ispunct(static_cast<unsigned char>(cur[b]))) ++b;
    while (e > b && std::ispunct(static_cast<unsigned char>(cur[e - 1]))) --e;
    if (e > b) words.push_back(cur.substr(b, e - b));
    cur.clear();
  };
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      flush();
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  flush();
  return words;
}

Vocab build_vocab(const TemplateBank& bank) {
  std::set<std::string> words;
  auto add = [&words](std::string_view text) {
    for (auto& w : split_words(text)) words.insert(std::move(w));
  };
  std::vector<std::string> adjectives;
  for (const auto& label : known_emotion_labels()) {
    add(label);
    adjectives.push_back(*emotion_adjective(label));
  }
  for (const auto& label : known_emotion_labels()) {
    for (const auto& q : emotion_queries(label, bank)) add(q);
  }
  for (const char* g : {"male", "female"}) {
    add(g);
    for (const auto& q : gender_queries(g, bank)) add(q);
  }
  for (const auto& [key, list] : bank.entries) {
    for (const auto& t : list) add(t);
  }
  for (const auto& [key, list] : bank.emotion_entries) {
    for (const auto& t : list) {
      for (const auto& adj : adjectives) {
        std::string s = t;
        if (auto pos = s.find("[EMOTION]"); pos != std::string::npos) s.replace(pos, 9, adj);
        add(s);
      }
    }
  }
  for (const auto& c : bank.conditional_entries) add(c.suffix);
  return Vocab(std::vector<std::string>(words.begin(), words.end()));
}

std::vector<std::size_t> tokenize(std::string_view text, const Vocab& vocab) {
  std::vector<std::size_t> ids;
  for (const auto& w : split_words(text)) ids.push_back(vocab.id(w));
  return ids;
}

// ---------------------------------------------------------------------------
// Parameters

std::vector<TensorRef> tensors(ModelParams& p) { return collect<ModelParams, double>(p); }

std::vector<ConstTensorRef> tensors(const ModelParams& p) {
  return collect<const ModelParams, const double>(p);
}

ModelParams zeros_like(const ModelParams& p) {
  ModelParams z;
  z.text_embedding = Matrix(p.text_embedding.rows(), p.text_embedding.cols());
  z.text_mlp = zeros_mlp(p.text_mlp);
  z.audio_mlp = zeros_mlp(p.audio_mlp);
  z.proj_text = zeros_head(p.proj_text);
  z.proj_audio = zeros_head(p.proj_audio);
  z.log_tau = 0.0;
  return z;
}

ModelParams init_params(const ModelConfig& cfg, Rng& rng) {
  if (cfg.vocab_size < 1 || cfg.text_dim < 1 || cfg.audio_dim < 1 || cfg.shared_dim < 2 ||
      cfg.text_hidden < 1 || cfg.audio_hidden < 1) {
    throw ValidationError("model dimensions must be positive (shared_dim >= 2)");
  }
  ModelParams p;
  p.text_embedding = Matrix(cfg.vocab_size, cfg.text_dim);
  std::normal_distribution<double> emb(0.0, cfg.embedding_init_std);
  for (double& v : p.text_embedding.flat()) v = emb(rng);

  p.text_mlp = {init_linear(cfg.text_dim, cfg.text_hidden, rng),
                init_linear(cfg.text_hidden, cfg.text_dim, rng)};
  p.audio_mlp = {init_linear(kNumFeatures, cfg.audio_hidden, rng),
                 init_linear(cfg.audio_hidden, cfg.audio_dim, rng)};

  auto head = [&](std::size_t in) {
    const std::size_t d = cfg.shared_dim;
    return ProjectionHead{init_linear(in, kProjectionExpansion * d, rng),
                          init_linear(kProjectionExpansion * d, d, rng),
                          std::vector<double>(d, 1.0), std::vector<double>(d, 0.0)};
  };
  p.proj_text = head(cfg.text_dim);
  p.proj_audio = head(cfg.audio_dim);
  p.log_tau = std::min(cfg.init_log_tau, std::log(kMaxTau));
  return p;
}

void validate_shapes(const ModelParams& p, const ModelConfig& cfg) {
  const std::size_t d = cfg.shared_dim;
  const std::size_t wide = kProjectionExpansion * d;
  std::map<std::string, std::pair<std::size_t, std::size_t>> want = {
      {"text_embedding", {cfg.vocab_size, cfg.text_dim}},
      {"text_mlp.hidden.weight", {cfg.text_hidden, cfg.text_dim}},
      {"text_mlp.hidden.bias", {1, cfg.text_hidden}},
      {"text_mlp.output.weight", {cfg.text_dim, cfg.text_hidden}},
      {"text_mlp.output.bias", {1, cfg.text_dim}},
      {"audio_mlp.hidden.weight", {cfg.audio_hidden, kNumFeatures}},
      {"audio_mlp.hidden.bias", {1, cfg.audio_hidden}},
      {"audio_mlp.output.weight", {cfg.audio_dim, cfg.audio_hidden}},
      {"audio_mlp.output.bias", {1, cfg.audio_dim}},
      {"proj_text.expand.weight", {wide, cfg.text_dim}},
      {"proj_text.expand.bias", {1, wide}},
      {"proj_text.shrink.weight", {d, wide}},
      {"proj_text.shrink.bias", {1, d}},
      {"proj_text.ln.gain", {1, d}},
      {"proj_text.ln.bias", {1, d}},
      {"proj_audio.expand.weight", {wide, cfg.audio_dim}},
      {"proj_audio.expand.bias", {1, wide}},
      {"proj_audio.shrink.weight", {d, wide}},
      {"proj_audio.shrink.bias", {1, d}},
      {"proj_audio.ln.gain", {1, d}},
      {"proj_audio.ln.bias", {1, d}},
      {"log_tau", {1, 1}},
  };
  for (const auto& t : tensors(p)) {
    auto it = want.find(t.name);
    if (it == want.end()) throw ShapeError("unexpected tensor " + t.name);
    expect_shape(t.name, t.rows, t.cols, it->second.first, it->second.second);
    if (t.data.size() != t.rows * t.cols) throw ShapeError(t.name + " storage mismatch");
  }
}

double temperature(const ModelParams& p) { return std::min(std::exp(p.log_tau), kMaxTau); }

// ---------------------------------------------------------------------------
// Building blocks

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

std::vector<double> layer_norm(std::span<const double> v, std::span<const double> gain,
                               std::span<const double> bias) {
  if (v.size() < 2) throw ValidationError("layer_norm needs at least 2 elements");
  if (gain.size() != v.size() || bias.size() != v.size()) throw ShapeError("layer_norm: shape mismatch");
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= n;
  const double inv_std = 1.0 / std::sqrt(var + kLayerNormEps);
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = gain[i] * (v[i] - mean) * inv_std + bias[i];
  return out;
}

std::vector<double> mlp_forward(std::span<const double> x, const Mlp& mlp) {
  return affine(mlp.output.weight, mlp.output.bias, gelu_vec(affine(mlp.hidden.weight, mlp.hidden.bias, x)));
}

std::vector<double> project(std::span<const double> raw, const ProjectionHead& head) {
  auto expanded = gelu_vec(affine(head.expand.weight, head.expand.bias, raw));
  auto shrunk = affine(head.shrink.weight, head.shrink.bias, expanded);
  return layer_norm(shrunk, head.ln_gain, head.ln_bias);
}

std::vector<double> normalize(std::span<const double> v) {
  const double n = norm2(v);
  if (!(n > kMinNorm)) throw DegenerateEmbeddingError("cannot normalize a near-zero vector");
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
  return out;
}

std::vector<double> encode_text(std::span<const std::size_t> tokens, const ModelParams& p) {
  return mlp_forward(mean_embedding(tokens, p.text_embedding), p.text_mlp);
}

std::vector<double> encode_audio(std::span<const double> features, const ModelParams& p) {
  check_features(features);
  return mlp_forward(features, p.audio_mlp);
}

// ---------------------------------------------------------------------------
// Contrastive objective

Matrix similarity_matrix(const EmbeddingBatch& batch, double tau) {
  if (!(tau > 0.0)) throw ValidationError("temperature must be positive");
  if (batch.audio.rows() != batch.text.rows() || batch.audio.cols() != batch.text.cols()) {
    throw ShapeError("audio and text batches differ in shape");
  }
  for (const Matrix* m : {&batch.audio, &batch.text}) {
    for (std::size_t i = 0; i < m->rows(); ++i) {
      if (std::abs(norm2(m->row(i)) - 1.0) > kUnitNormTolerance) {
        throw ValidationError("similarity_matrix: row " + std::to_string(i) + " is not unit norm");
      }
    }
  }
  Matrix s = matmul_transposed(batch.audio, batch.text);
  for (double& v : s.flat()) v *= tau;
  return s;
}

std::vector<double> softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    z += out[i];
  }
  for (double& v : out) v /= z;
  return out;
}

double symmetric_ce_loss(const Matrix& s) {
  if (s.rows() != s.cols()) throw ShapeError("similarity matrix must be square");
  const std::size_t n = s.rows();
  if (n == 0) throw ValidationError("empty similarity matrix");
  auto log_softmax_at = [](std::span<const double> xs, std::size_t k) {
    const double mx = *std::max_element(xs.begin(), xs.end());
    double z = 0.0;
    for (double x : xs) z += std::exp(x - mx);
    return xs[k] - mx - std::log(z);
  };
  double rows = 0.0;
  double cols = 0.0;
  std::vector<double> column(n);
  for (std::size_t i = 0; i < n; ++i) {
    rows -= log_softmax_at(s.row(i), i);
    for (std::size_t k = 0; k < n; ++k) column[k] = s(k, i);
    cols -= log_softmax_at(column, i);
  }
  return 0.5 * (rows + cols) / static_cast<double>(n);
}

EmbeddingBatch embed_batch(std::span<const TrainingPair> batch, const ModelParams& p) {
  const std::size_t n = batch.size();
  const std::size_t d = p.proj_audio.ln_gain.size();
  EmbeddingBatch e{Matrix(n, d), Matrix(n, d)};
  for (std::size_t i = 0; i < n; ++i) {
    auto a = normalize(project(encode_audio(batch[i].features, p), p.proj_audio));
    auto t = normalize(project(encode_text(batch[i].tokens, p), p.proj_text));
    std::copy(a.begin(), a.end(), e.audio.row(i).begin());
    std::copy(t.begin(), t.end(), e.text.row(i).begin());
  }
  return e;
}

double batch_loss(std::span<const TrainingPair> batch, const ModelParams& p) {
  return symmetric_ce_loss(similarity_matrix(embed_batch(batch, p), temperature(p)));
}

LossAndGradient forward_backward(std::span<const TrainingPair> batch, const ModelParams& p) {
  const std::size_t n = batch.size();
  if (n == 0) throw ValidationError("empty batch");
  const std::size_t d = p.proj_audio.ln_gain.size();

  std::vector<MlpCache> audio_enc(n), text_enc(n);
  std::vector<HeadCache> audio_head(n), text_head(n);
  std::vector<std::vector<double>> pooled(n);
  EmbeddingBatch e{Matrix(n, d), Matrix(n, d)};
  for (std::size_t i = 0; i < n; ++i) {
    check_features(batch[i].features);
    audio_enc[i] = mlp_forward_cached(batch[i].features, p.audio_mlp);
    audio_head[i] = head_forward_cached(audio_enc[i].output, p.proj_audio);
    pooled[i] = mean_embedding(batch[i].tokens, p.text_embedding);
    text_enc[i] = mlp_forward_cached(pooled[i], p.text_mlp);
    text_head[i] = head_forward_cached(text_enc[i].output, p.proj_text);
    std::copy(audio_head[i].unit.begin(), audio_head[i].unit.end(), e.audio.row(i).begin());
    std::copy(text_head[i].unit.begin(), text_head[i].unit.end(), e.text.row(i).begin());
  }

  const double tau = temperature(p);
  const Matrix s = similarity_matrix(e, tau);
  LossAndGradient out;
  out.loss = symmetric_ce_loss(s);
  out.grad = zeros_like(p);

  // dL/dS = (P_rows + P_cols - 2I) / (2N)
  Matrix g(n, n);
  std::vector<double> column(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto pr = softmax(s.row(i));
    for (std::size_t j = 0; j < n; ++j) g(i, j) += pr[j];
    for (std::size_t k = 0; k < n; ++k) column[k] = s(k, i);
    auto pc = softmax(column);
    for (std::size_t k = 0; k < n; ++k) g(k, i) += pc[k];
  }
  for (std::size_t i = 0; i < n; ++i) g(i, i) -= 2.0;
  for (double& v : g.flat()) v /= 2.0 * static_cast<double>(n);

  // S = tau * C, C = A T^T
  double dtau = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) dtau += g(i, j) * s(i, j) / tau;
  }
  const bool clamped = std::exp(p.log_tau) > kMaxTau;
  out.grad.log_tau = clamped ? 0.0 : dtau * tau;

  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> da(d, 0.0);
    std::vector<double> dt(d, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      const double gij = tau * g(i, j);
      const double gji = tau * g(j, i);
      auto trow = e.text.row(j);
      auto arow = e.audio.row(j);
      for (std::size_t k = 0; k < d; ++k) {
        da[k] += gij * trow[k];
        dt[k] += gji * arow[k];
      }
    }
    auto draw_audio = head_backward(da, audio_head[i], p.proj_audio, out.grad.proj_audio);
    mlp_backward(draw_audio, audio_enc[i], p.audio_mlp, out.grad.audio_mlp);

    auto draw_text = head_backward(dt, text_head[i], p.proj_text, out.grad.proj_text);
    auto dpooled = mlp_backward(draw_text, text_enc[i], p.text_mlp, out.grad.text_mlp);
    const double share = 1.0 / static_cast<double>(batch[i].tokens.size());
    for (std::size_t t : batch[i].tokens) {
      auto grow = out.grad.text_embedding.row(t);
      for (std::size_t k = 0; k < grow.size(); ++k) grow[k] += share * dpooled[k];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Inference bundle

FeatureScaler FeatureScaler::fit(std::span<const FeatureVector> features) {
  FeatureScaler s;
  for (std::size_t k = 0; k < kNumFeatures; ++k) {
    std::vector<double> vals;
    for (const auto& fv : features) {
      if (auto v = as_array(fv)[k]) vals.push_back(*v);
    }
    if (vals.empty()) continue;
    const double n = static_cast<double>(vals.size());
    const double mean = std::accumulate(vals.begin(), vals.end(), 0.0) / n;
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / n);
    s.mean[k] = mean;
    s.stddev[k] = sd > 1e-12 ? sd : 1.0;
  }
  return s;
}

StandardizedFeatures FeatureScaler::standardize(const FeatureVector& fv) const {
  StandardizedFeatures out{};
  const auto raw = as_array(fv);
  for (std::size_t k = 0; k < kNumFeatures; ++k) {
    out[k] = raw[k] ? (*raw[k] - mean[k]) / stddev[k] : 0.0;
  }
  return out;
}

std::vector<double> embed_text(const ClapModel& model, std::string_view text) {
  auto tokens = tokenize(text, model.vocab);
  return normalize(project(encode_text(tokens, model.params), model.params.proj_text));
}

std::vector<double> embed_audio(const ClapModel& model, const FeatureVector& fv) {
  const auto x = model.scaler.standardize(fv);
  return normalize(project(encode_audio(x, model.params), model.params.proj_audio));
}

}  // namespace paraclap
