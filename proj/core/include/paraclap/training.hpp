#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "paraclap/corpus.hpp"
#include "paraclap/eval.hpp"
#include "paraclap/features.hpp"
#include "paraclap/model.hpp"
#include "paraclap/querygen.hpp"

namespace paraclap {

struct AdamConfig {
  double lr_encoders = 1e-5;
  double lr_heads = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  std::size_t batch_size = 64;
  std::size_t epochs = 50;
  AdamConfig adam;
  CaptionPolicy policy;
  std::uint64_t seed = 0;
  ModelConfig model;  // vocab_size is filled in by train()
  QueryMode eval_query_mode = QueryMode::Raw;
};

void validate(const TrainConfig& config);

/// Per-tensor first/second moments in tensors() order.
struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::size_t t = 0;

  static AdamState for_params(const ModelParams& p);
};

/// One bias-corrected Adam update. Encoder tensors use lr_encoders, projection
/// heads and log_tau use lr_heads. log_tau is clamped to log(kMaxTau) after the
/// update.
void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state,
               const AdamConfig& config);

/// Shuffled index batches of exactly batch_size; the short remainder is
/// dropped. A corpus smaller than batch_size yields one batch holding all of
/// it. Throws ValidationError for corpora of fewer than 2 items.
std::vector<std::vector<std::size_t>> make_batches(std::size_t corpus_size, std::size_t batch_size,
                                                   Rng& rng);

struct TrainingItem {
  UtteranceRecord record;
  FeatureVector features;
};

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  double uar = 0.0;

  bool operator==(const EpochLog&) const = default;
};

struct TrainResult {
  ClapModel best;
  ClapModel final_model;
  std::size_t best_epoch = 0;
  double best_uar = 0.0;
  std::vector<EpochLog> log;
  ThresholdTable thresholds;
  std::vector<std::string> heldout_labels;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Sorted distinct emotion labels of the items (items without a label are
/// ignored).
std::vector<std::string> label_set(std::span<const TrainingItem> items);

std::vector<EvalItem> to_eval_items(std::span<const TrainingItem> items);

/// Full contrastive training run with held-out model selection (highest
/// zero-shot UAR, ties to the earlier epoch).
TrainResult train(const TrainConfig& config, std::span<const TrainingItem> corpus,
                  std::span<const TrainingItem> heldout, const TemplateBank& bank,
                  const EpochCallback& on_epoch = {});

/// Deterministic stratification-free split by seeded shuffle.
std::pair<std::vector<TrainingItem>, std::vector<TrainingItem>> split_heldout(
    std::span<const TrainingItem> items, double heldout_fraction, std::uint64_t seed);

std::string format_epoch_log(std::span<const EpochLog> log);
std::vector<EpochLog> parse_epoch_log(std::string_view text);

/// Writes config.ini (when a snapshot is given), log.jsonl, best.ckpt.json,
/// final.ckpt.json and thresholds.json into run_dir, creating it if needed.
void write_run_directory(const std::filesystem::path& run_dir, const TrainResult& result,
                         std::string_view config_snapshot = {});

}  // namespace paraclap
