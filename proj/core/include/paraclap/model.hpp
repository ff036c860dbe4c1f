#pragma once

// Dual-encoder contrastive model: small audio/text encoders, projection heads
// into a shared space, scaled cosine similarity and the symmetric
// cross-entropy objective, with hand-derived reverse-mode gradients.

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "paraclap/features.hpp"
#include "paraclap/querygen.hpp"
#include "paraclap/random.hpp"
#include "paraclap/tensor.hpp"

namespace paraclap {

inline constexpr std::size_t kProjectionExpansion = 4;
inline constexpr double kMaxTau = 100.0;
inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kUnitNormTolerance = 1e-6;
inline constexpr double kMinNorm = 1e-12;
inline constexpr std::size_t kUnknownToken = 0;

// ---------------------------------------------------------------------------
// Vocabulary

class Vocab {
 public:
  Vocab() = default;
  /// Sorted, de-duplicated; id 0 is reserved for unknown tokens.
  explicit Vocab(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size() + 1; }
  std::size_t id(std::string_view token) const;
  /// Known tokens in id order (id = index + 1).
  const std::vector<std::string>& tokens() const { return tokens_; }
  /// FNV-1a over the token list, hex encoded.
  std::string hash() const;

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

/// Lowercased, whitespace-split words with surrounding punctuation removed.
std::vector<std::string> split_words(std::string_view text);

/// Every word the template bank can produce plus emotion labels, adjectives
/// and genders.
Vocab build_vocab(const TemplateBank& bank);

std::vector<std::size_t> tokenize(std::string_view text, const Vocab& vocab);

// ---------------------------------------------------------------------------
// Parameters

struct Linear {
  Matrix weight;              // out x in
  std::vector<double> bias;   // out

  bool operator==(const Linear&) const = default;
};

/// in -> hidden (GELU) -> out
struct Mlp {
  Linear hidden;
  Linear output;

  bool operator==(const Mlp&) const = default;
};

/// in -> 4d (GELU) -> d -> layer norm
struct ProjectionHead {
  Linear expand;
  Linear shrink;
  std::vector<double> ln_gain;
  std::vector<double> ln_bias;

  bool operator==(const ProjectionHead&) const = default;
};

struct ModelConfig {
  std::size_t vocab_size = 1;
  std::size_t text_dim = 32;      // e
  std::size_t text_hidden = 64;   // h_t
  std::size_t audio_dim = 32;     // e_a
  std::size_t audio_hidden = 64;  // h_a
  std::size_t shared_dim = 64;    // d
  double init_log_tau = std::log(1.0 / 0.07);
  double embedding_init_std = 0.3;

  bool operator==(const ModelConfig&) const = default;
};

struct ModelParams {
  Matrix text_embedding;  // |V| x e
  Mlp text_mlp;
  Mlp audio_mlp;
  ProjectionHead proj_text;
  ProjectionHead proj_audio;
  double log_tau = 0.0;

  bool operator==(const ModelParams&) const = default;
};

enum class ParamGroup { Encoder, Head };

template <class T>
struct BasicTensorRef {
  std::string name;
  std::span<T> data;
  std::size_t rows = 0;
  std::size_t cols = 0;
  ParamGroup group = ParamGroup::Encoder;
};
using TensorRef = BasicTensorRef<double>;
using ConstTensorRef = BasicTensorRef<const double>;

/// Every learnable tensor in a fixed order. Vectors report rows = 1.
std::vector<TensorRef> tensors(ModelParams& p);
std::vector<ConstTensorRef> tensors(const ModelParams& p);

ModelParams zeros_like(const ModelParams& p);

/// Linear layers draw weights and biases from U(-1/sqrt(fan_in), 1/sqrt(fan_in));
/// token embeddings from N(0, embedding_init_std); layer norm starts at
/// gain 1, bias 0.
ModelParams init_params(const ModelConfig& config, Rng& rng);

/// Checks every tensor against the configured shapes.
void validate_shapes(const ModelParams& p, const ModelConfig& config);

/// exp(log_tau) clamped to kMaxTau.
double temperature(const ModelParams& p);

// ---------------------------------------------------------------------------
// Building blocks

double gelu(double x);
double gelu_derivative(double x);

std::vector<double> layer_norm(std::span<const double> v, std::span<const double> gain,
                               std::span<const double> bias);

std::vector<double> mlp_forward(std::span<const double> x, const Mlp& mlp);
std::vector<double> project(std::span<const double> raw, const ProjectionHead& head);

/// Throws DegenerateEmbeddingError for norms below kMinNorm.
std::vector<double> normalize(std::span<const double> v);

/// g(X^t): mean-pooled token embeddings through the text MLP.
std::vector<double> encode_text(std::span<const std::size_t> tokens, const ModelParams& p);

using StandardizedFeatures = std::array<double, kNumFeatures>;

/// f(X^a): the standardized feature vector through the audio MLP.
std::vector<double> encode_audio(std::span<const double> features, const ModelParams& p);

// ---------------------------------------------------------------------------
// Contrastive objective

struct EmbeddingBatch {
  Matrix audio;  // N x d, unit rows
  Matrix text;   // N x d, unit rows
};

/// s[i][j] = tau * <audio_i, text_j>. Rows must be unit norm.
Matrix similarity_matrix(const EmbeddingBatch& batch, double tau);

/// 0.5 * (CE over rows + CE over columns), diagonal targets.
double symmetric_ce_loss(const Matrix& s);

std::vector<double> softmax(std::span<const double> logits);

struct TrainingPair {
  StandardizedFeatures features{};
  std::vector<std::size_t> tokens;
};

EmbeddingBatch embed_batch(std::span<const TrainingPair> batch, const ModelParams& p);

/// Loss only (no gradients).
double batch_loss(std::span<const TrainingPair> batch, const ModelParams& p);

struct LossAndGradient {
  double loss = 0.0;
  ModelParams grad;
};

/// Loss and exact gradients for every tensor in ModelParams.
LossAndGradient forward_backward(std::span<const TrainingPair> batch, const ModelParams& p);

// ---------------------------------------------------------------------------
// Inference bundle

/// Training-corpus mean / std per feature. Absent features become 0 after
/// standardization; zero-variance features use std 1.
struct FeatureScaler {
  std::array<double, kNumFeatures> mean{};
  std::array<double, kNumFeatures> stddev{1, 1, 1, 1, 1, 1};

  static FeatureScaler fit(std::span<const FeatureVector> features);
  StandardizedFeatures standardize(const FeatureVector& fv) const;

  bool operator==(const FeatureScaler&) const = default;
};

struct ClapModel {
  ModelConfig config;
  Vocab vocab;
  FeatureScaler scaler;
  ModelParams params;
};

/// Unit-norm shared-space embedding of a text query.
std::vector<double> embed_text(const ClapModel& model, std::string_view text);
/// Unit-norm shared-space embedding of an utterance's features.
std::vector<double> embed_audio(const ClapModel& model, const FeatureVector& fv);

}  // namespace paraclap
