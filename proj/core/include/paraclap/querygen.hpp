#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "paraclap/corpus.hpp"
#include "paraclap/features.hpp"
#include "paraclap/random.hpp"

namespace paraclap {

inline constexpr std::string_view kConjunction = " and ";

/// A jitter/shimmer query variant emitted only when the utterance's pitch-sigma
/// bin is one of `when_pitch_sigma`. The emitted text is the cell's base
/// template followed by a space and the suffix.
struct ConditionalTemplate {
  Attribute attribute = Attribute::Jitter;
  BinLabel bin = BinLabel::Low;
  std::string suffix;
  std::vector<BinLabel> when_pitch_sigma;
};

using BinKey = std::pair<Attribute, BinLabel>;

struct TemplateBank {
  std::map<BinKey, std::vector<std::string>> entries;
  std::vector<ConditionalTemplate> conditional_entries;
  // Arousal variants containing [EMOTION]; only emitted with an emotion label.
  std::map<BinKey, std::vector<std::string>> emotion_entries;
  std::vector<std::string> emotion_templates;
  std::vector<std::string> gender_templates;
};

/// The full query table for dimensional attributes and expert features.
TemplateBank build_template_bank();
const TemplateBank& default_template_bank();

/// Checks the placeholder rule ([EMOTION], [GENDER] only), that no template
/// contains the conjunction, and that every (attribute, bin) cell is filled.
void validate_template_bank(const TemplateBank& bank);

/// Applies an override document (JSON: {"entries": {attr: {bin: [..]}},
/// "emotion": [..], "gender": [..]}) on top of `base` and validates it.
TemplateBank apply_template_overrides(TemplateBank base, std::string_view json_text);
TemplateBank load_template_bank(const std::filesystem::path& override_path);

/// Fixed label -> adjective table (happiness -> happy, ...). Adjectives map to
/// themselves. nullopt for labels outside the table.
std::optional<std::string> emotion_adjective(std::string_view label);

/// Every label accepted by emotion_adjective, sorted.
std::vector<std::string> known_emotion_labels();

/// Throws UnknownLabelError for labels outside the adjective table.
std::vector<std::string> emotion_queries(std::string_view label,
                                         const TemplateBank& bank = default_template_bank());
std::vector<std::string> gender_queries(std::string_view gender,
                                        const TemplateBank& bank = default_template_bank());

/// Bins known for one utterance plus its emotion adjective, if any.
struct QueryContext {
  std::map<Attribute, BinLabel> bins;
  std::optional<std::string> emotion_adjective;
};

std::vector<std::string> queries_for_attribute(Attribute attr, BinLabel bin,
                                               const QueryContext& context,
                                               const TemplateBank& bank);

using ThresholdTable = std::map<Attribute, BinThresholds>;

/// Value of `attr` for one utterance, drawn from the record (dimensional
/// labels) or the feature vector.
std::optional<double> attribute_value(Attribute attr, const UtteranceRecord& record,
                                      const FeatureVector& fv);

/// Fits thresholds for every attribute that has at least one value across the
/// given utterances.
ThresholdTable fit_thresholds(std::span<const UtteranceRecord> records,
                              std::span<const FeatureVector> features);

std::string format_thresholds(const ThresholdTable& table);
ThresholdTable parse_thresholds(std::string_view json_text);

struct CaptionPool {
  std::vector<std::string> queries;          // deterministic source order
  std::vector<std::string> emotion_queries;  // label templates, subset of queries
  // Arousal variants filled with the emotion adjective, subset of queries.
  std::vector<std::string> emotion_derived;
};

CaptionPool caption_pool(const UtteranceRecord& record, const FeatureVector& fv,
                         const ThresholdTable& thresholds, const TemplateBank& bank);

enum class CaptionMode { OnlyEmo, NoEmoRandN, RandN };

struct CaptionPolicy {
  CaptionMode mode = CaptionMode::OnlyEmo;
  std::size_t max_queries = 5;
};

/// Accepts only-emo, rand, no-emo-rand, and the shorthands randN /
/// no-emo-randN which also set max_queries.
CaptionPolicy parse_caption_policy(std::string_view mode, std::size_t max_queries);
std::string to_string(const CaptionPolicy& policy);

struct Caption {
  std::string text;
  std::vector<std::string> parts;
};

std::string join_parts(std::span<const std::string> parts);

Caption sample_caption(std::span<const std::string> pool, const CaptionPolicy& policy,
                       std::span<const std::string> emotion_subset, Rng& rng);
/// OnlyEmo draws from emotion_queries; NoEmoRandN excludes both
/// emotion_queries and emotion_derived.
Caption sample_caption(const CaptionPool& pool, const CaptionPolicy& policy, Rng& rng);

/// Whether sample_caption can produce a caption from this pool.
bool has_caption(const CaptionPool& pool, const CaptionPolicy& policy);

}  // namespace paraclap
