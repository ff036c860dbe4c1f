#include "paraclap/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "json.hpp"
#include "paraclap/checkpoint.hpp"
#include "paraclap/error.hpp"

namespace paraclap {

using nlohmann::json;

namespace {

// Stream tags for make_rng so that every consumer of randomness is isolated.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kEpochStream = 2;
constexpr std::uint64_t kSplitStream = 3;

void write_text(const std::filesystem::path& path, std::string_view body) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << body;
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

void validate(const TrainConfig& c) {
  if (c.batch_size < 2) throw ValidationError("batch size must be at least 2");
  if (c.epochs < 1) throw ValidationError("epochs must be at least 1");
  if (!(c.adam.lr_encoders > 0.0) || !(c.adam.lr_heads > 0.0)) {
    throw ValidationError("learning rates must be positive");
  }
  if (c.policy.max_queries < 1) throw ValidationError("max queries must be at least 1");
}

AdamState AdamState::for_params(const ModelParams& p) {
  AdamState s;
  for (const auto& t : tensors(p)) {
    s.m.emplace_back(t.data.size(), 0.0);
    s.v.emplace_back(t.data.size(), 0.0);
  }
  return s;
}

void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state,
               const AdamConfig& config) {
  auto ps = tensors(params);
  const auto gs = tensors(grads);
  if (gs.size() != ps.size() || state.m.size() != ps.size() || state.v.size() != ps.size()) {
    throw ShapeError("adam_step: tensor count mismatch");
  }
  ++state.t;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto& p = ps[i];
    const auto& g = gs[i];
    if (g.data.size() != p.data.size() || state.m[i].size() != p.data.size()) {
      throw ShapeError("adam_step: shape mismatch for " + p.name);
    }
    const double lr = p.group == ParamGroup::Encoder ? config.lr_encoders : config.lr_heads;
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < p.data.size(); ++k) {
      m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * g.data[k];
      v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * g.data[k] * g.data[k];
      p.data[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + config.eps);
    }
  }
  params.log_tau = std::min(params.log_tau, std::log(kMaxTau));
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t corpus_size, std::size_t batch_size,
                                                   Rng& rng) {
  if (corpus_size < 2) throw ValidationError("need at least 2 items to form a contrastive batch");
  if (batch_size < 2) throw ValidationError("batch size must be at least 2");
  std::vector<std::size_t> order(corpus_size);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<std::vector<std::size_t>> batches;
  if (corpus_size < batch_size) {
    batches.push_back(std::move(order));
    return batches;
  }
  for (std::size_t start = 0; start + batch_size <= corpus_size; start += batch_size) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(start + batch_size));
  }
  return batches;
}

std::vector<std::string> label_set(std::span<const TrainingItem> items) {
  std::set<std::string> labels;
  for (const auto& it : items) {
    if (it.record.emotion) labels.insert(*it.record.emotion);
  }
  return {labels.begin(), labels.end()};
}

std::vector<EvalItem> to_eval_items(std::span<const TrainingItem> items) {
  std::vector<EvalItem> out;
  for (const auto& it : items) {
    if (it.record.emotion) out.push_back({it.record.id, *it.record.emotion, it.features});
  }
  return out;
}

TrainResult train(const TrainConfig& config, std::span<const TrainingItem> corpus,
                  std::span<const TrainingItem> heldout, const TemplateBank& bank,
                  const EpochCallback& on_epoch) {
  validate(config);
  TrainResult result;

  std::vector<UtteranceRecord> records;
  std::vector<FeatureVector> features;
  for (const auto& it : corpus) {
    records.push_back(it.record);
    features.push_back(it.features);
  }
  result.thresholds = fit_thresholds(records, features);

  // Items that cannot produce a caption under the policy sit out training.
  std::vector<std::size_t> usable;
  std::vector<CaptionPool> pools;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    auto pool = caption_pool(corpus[i].record, corpus[i].features, result.thresholds, bank);
    if (!has_caption(pool, config.policy)) continue;
    usable.push_back(i);
    pools.push_back(std::move(pool));
  }
  if (usable.size() < 2) {
    throw ValidationError("fewer than 2 training items can be captioned under policy " +
                          to_string(config.policy));
  }

  ClapModel model;
  model.vocab = build_vocab(bank);
  model.config = config.model;
  model.config.vocab_size = model.vocab.size();
  model.scaler = FeatureScaler::fit(features);
  Rng init_rng = make_rng(config.seed, {kInitStream});
  model.params = init_params(model.config, init_rng);

  std::vector<StandardizedFeatures> inputs;
  for (std::size_t i : usable) inputs.push_back(model.scaler.standardize(corpus[i].features));

  result.heldout_labels = label_set(heldout);
  if (result.heldout_labels.size() < 2) {
    throw ValidationError("held-out split needs at least 2 distinct emotion labels");
  }
  const auto eval_items = to_eval_items(heldout);

  AdamState adam = AdamState::for_params(model.params);
  bool have_best = false;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Rng rng = make_rng(config.seed, {kEpochStream, epoch});
    const auto batches = make_batches(usable.size(), config.batch_size, rng);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      std::vector<TrainingPair> pairs;
      pairs.reserve(batches[b].size());
      for (std::size_t k : batches[b]) {
        const Caption caption = sample_caption(pools[k], config.policy, rng);
        pairs.push_back({inputs[k], tokenize(caption.text, model.vocab)});
      }
      auto lg = forward_backward(pairs, model.params);
      if (!std::isfinite(lg.loss)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(b));
      }
      loss_sum += lg.loss;
      adam_step(model.params, lg.grad, adam, config.adam);
    }

    const auto queries = build_label_queries(result.heldout_labels, model, config.eval_query_mode);
    const EvalReport report = evaluate(eval_items, queries, model);
    EpochLog entry{epoch, loss_sum / static_cast<double>(batches.size()), report.uar};
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
    if (!have_best || entry.uar > result.best_uar) {
      have_best = true;
      result.best = model;
      result.best_uar = entry.uar;
      result.best_epoch = epoch;
    }
  }
  result.final_model = std::move(model);
  return result;
}

std::pair<std::vector<TrainingItem>, std::vector<TrainingItem>> split_heldout(
    std::span<const TrainingItem> items, double heldout_fraction, std::uint64_t seed) {
  if (!(heldout_fraction > 0.0 && heldout_fraction < 1.0)) {
    throw ValidationError("held-out fraction must be in (0, 1)");
  }
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(seed, {kSplitStream});
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_heldout =
      static_cast<std::size_t>(std::llround(heldout_fraction * static_cast<double>(items.size())));
  std::vector<bool> is_heldout(items.size(), false);
  for (std::size_t i = 0; i < n_heldout; ++i) is_heldout[order[i]] = true;
  std::pair<std::vector<TrainingItem>, std::vector<TrainingItem>> out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    (is_heldout[i] ? out.second : out.first).push_back(items[i]);
  }
  return out;
}

std::string format_epoch_log(std::span<const EpochLog> log) {
  std::string out;
  for (const auto& e : log) {
    out += json{{"epoch", e.epoch}, {"loss", e.loss}, {"uar", e.uar}}.dump();
    out += '\n';
  }
  return out;
}

std::vector<EpochLog> parse_epoch_log(std::string_view text) {
  std::vector<EpochLog> out;
  std::size_t start = 0;
  std::size_t line = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto s = text.substr(start, end - start);
    start = end + 1;
    ++line;
    if (s.empty()) continue;
    try {
      const json j = json::parse(s);
      out.push_back({j.at("epoch").get<std::size_t>(), j.at("loss").get<double>(),
                     j.at("uar").get<double>()});
    } catch (const json::exception& e) {
      throw ParseError(e.what(), line);
    }
  }
  return out;
}

void write_run_directory(const std::filesystem::path& run_dir, const TrainResult& result,
                         std::string_view config_snapshot) {
  std::error_code ec;
  std::filesystem::create_directories(run_dir, ec);
  if (ec) throw IoError("cannot create " + run_dir.string() + ": " + ec.message());
  if (!config_snapshot.empty()) write_text(run_dir / "config.ini", config_snapshot);
  write_text(run_dir / "log.jsonl", format_epoch_log(result.log));
  write_text(run_dir / "thresholds.json", format_thresholds(result.thresholds));
  save_checkpoint(run_dir / "best.ckpt.json", result.best);
  save_checkpoint(run_dir / "final.ckpt.json", result.final_model);
}

}  // namespace paraclap
