#include "paraclap/querygen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"
#include "paraclap/error.hpp"

namespace paraclap {

using nlohmann::json;

namespace {

constexpr std::string_view kEmotionPlaceholder = "[EMOTION]";
constexpr std::string_view kGenderPlaceholder = "[GENDER]";

std::string substitute(std::string_view tmpl, std::string_view placeholder, std::string_view value) {
  std::string out(tmpl);
  for (auto pos = out.find(placeholder); pos != std::string::npos;
       pos = out.find(placeholder, pos + value.size())) {
    out.replace(pos, placeholder.size(), value);
  }
  return out;
}

void check_template(const std::string& t, bool allow_emotion, bool allow_gender) {
  if (t.empty()) throw ValidationError("empty query template");
  if (t.find(kConjunction) != std::string::npos) {
    throw ValidationError("template '" + t + "' contains the conjunction");
  }
  for (auto open = t.find('['); open != std::string::npos; open = t.find('[', open + 1)) {
    const auto close = t.find(']', open);
    if (close == std::string::npos) throw ValidationError("unterminated placeholder in '" + t + "'");
    const std::string_view ph = std::string_view(t).substr(open, close - open + 1);
    const bool ok = (ph == kEmotionPlaceholder && allow_emotion) ||
                    (ph == kGenderPlaceholder && allow_gender);
    if (!ok) throw ValidationError("placeholder " + std::string(ph) + " not allowed in '" + t + "'");
  }
}

bool is_emotion_query(const std::string& q, std::span<const std::string> subset) {
  return std::find(subset.begin(), subset.end(), q) != subset.end();
}

}  // namespace

TemplateBank build_template_bank() {
  using A = Attribute;
  using B = BinLabel;
  TemplateBank bank;
  auto& e = bank.entries;

  e[{A::Arousal, B::Low}] = {"has low arousal", "speaker is calm"};
  e[{A::Arousal, B::Mid}] = {"arousal is at an average level"};
  e[{A::Arousal, B::High}] = {"has high arousal", "speaker is aroused"};
  bank.emotion_entries[{A::Arousal, B::Low}] = {"speaker is not very [EMOTION]"};
  bank.emotion_entries[{A::Arousal, B::High}] = {"speaker is very [EMOTION]"};

  e[{A::Valence, B::Low}] = {"has low valence", "speaker appears to be in a bad mood"};
  e[{A::Valence, B::Mid}] = {"valence is at an average level"};
  e[{A::Valence, B::High}] = {"has high valence", "speaker appears to be in a good mood"};

  e[{A::Dominance, B::Low}] = {"has low dominance"};
  e[{A::Dominance, B::Mid}] = {"dominance is at an average level"};
  e[{A::Dominance, B::High}] = {"has high dominance", "speaker appears to be dominant"};

  e[{A::PitchMu, B::Low}] = {"has a low pitch"};
  e[{A::PitchMu, B::Mid}] = {"has an average pitch", "has a normal pitch"};
  e[{A::PitchMu, B::High}] = {"has a high pitch"};

  // Column placement follows the published table as printed.
  e[{A::PitchSigma, B::Low}] = {"has a low pitch variation"};
  e[{A::PitchSigma, B::Mid}] = {"has a normal pitch variation", "has a low pitch variance",
                                "has a very unstable pitch", "has a very unstable phonation"};
  e[{A::PitchSigma, B::High}] = {"has a high pitch variation", "has a high pitch variance",
                                 "has a very stable pitch", "has a very stable phonation"};

  e[{A::Intensity, B::Low}] = {"has a low equivalent sound level", "is quiet", "is almost silent"};
  e[{A::Intensity, B::Mid}] = {"has a normal equivalent sound level",
                               "has an average equivalent sound level",
                               "loudness is just about right"};
  e[{A::Intensity, B::High}] = {"has a high equivalent sound level", "sound pressure is elevated",
                                "sound level is elevated", "is loud"};

  e[{A::Duration, B::Low}] = {"has a short duration", "has a small duration", "is a short sentence",
                              "lasts a little time", "is short"};
  e[{A::Duration, B::Mid}] = {"is of average duration", "is of average length",
                              "duration is medium", "is neither long nor short"};
  e[{A::Duration, B::High}] = {"has a long duration", "has a big duration", "is a long sentence",
                               "lasts a long time", "is long"};

  for (A attr : {A::Jitter, A::Shimmer}) {
    const std::string name = attr == A::Jitter ? "jitter" : "shimmer";
    e[{attr, B::Low}] = {"has a low " + name};
    e[{attr, B::Mid}] = {"has a normal " + name};
    e[{attr, B::High}] = {"has a high " + name};
    auto& c = bank.conditional_entries;
    c.push_back({attr, B::Low, "but a high pitch variance", {B::High}});
    c.push_back({attr, B::Low, "but not a low pitch variance", {B::Mid, B::High}});
    c.push_back({attr, B::Low, "but the pitch is unstable", {B::High}});
    c.push_back({attr, B::High, "but a low pitch variance", {B::Low}});
    c.push_back({attr, B::High, "but not a high pitch variance", {B::Low, B::Mid}});
    c.push_back({attr, B::High, "but the pitch is stable", {B::Low}});
  }

  bank.emotion_templates = {"this is a [EMOTION] instance", "speaker is [EMOTION]"};
  bank.gender_templates = {"a [GENDER] is speaking", "the speaker is [GENDER]"};
  return bank;
}

const TemplateBank& default_template_bank() {
  static const TemplateBank bank = build_template_bank();
  return bank;
}

void validate_template_bank(const TemplateBank& bank) {
  for (Attribute attr : kAllAttributes) {
    for (BinLabel bin : {BinLabel::Low, BinLabel::Mid, BinLabel::High}) {
      auto it = bank.entries.find({attr, bin});
      if (it == bank.entries.end() || it->second.empty()) {
        throw ValidationError("no template for " + std::string(to_string(attr)) + "/" +
                              std::string(to_string(bin)));
      }
      for (const auto& t : it->second) check_template(t, false, false);
    }
  }
  for (const auto& [key, list] : bank.emotion_entries) {
    for (const auto& t : list) check_template(t, true, false);
  }
  for (const auto& c : bank.conditional_entries) check_template(c.suffix, false, false);
  if (bank.emotion_templates.empty()) throw ValidationError("no emotion templates");
  if (bank.gender_templates.empty()) throw ValidationError("no gender templates");
  for (const auto& t : bank.emotion_templates) check_template(t, true, false);
  for (const auto& t : bank.gender_templates) check_template(t, false, true);
}

TemplateBank apply_template_overrides(TemplateBank base, std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("template override: ") + e.what());
  }
  auto string_list = [](const json& j, const std::string& where) {
    if (!j.is_array() || j.empty()) throw ValidationError(where + " must be a non-empty list");
    std::vector<std::string> out;
    for (const auto& s : j) {
      if (!s.is_string()) throw ValidationError(where + " must contain strings");
      out.push_back(s.get<std::string>());
    }
    return out;
  };
  if (!doc.is_object()) throw ValidationError("template override must be an object");
  if (auto it = doc.find("entries"); it != doc.end()) {
    for (const auto& [attr_name, bins] : it->items()) {
      const Attribute attr = parse_attribute(attr_name);
      for (const auto& [bin_name, list] : bins.items()) {
        base.entries[{attr, parse_bin(bin_name)}] = string_list(list, attr_name + "/" + bin_name);
      }
    }
  }
  if (auto it = doc.find("emotion"); it != doc.end()) base.emotion_templates = string_list(*it, "emotion");
  if (auto it = doc.find("gender"); it != doc.end()) base.gender_templates = string_list(*it, "gender");
  validate_template_bank(base);
  return base;
}

TemplateBank load_template_bank(const std::filesystem::path& override_path) {
  std::ifstream in(override_path, std::ios::binary);
  if (!in) throw IoError("cannot open " + override_path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return apply_template_overrides(build_template_bank(), ss.str());
}

namespace {

const std::map<std::string, std::string, std::less<>>& adjective_table() {
  static const std::map<std::string, std::string, std::less<>> kTable = {
      {"happiness", "happy"},   {"anger", "angry"},        {"sadness", "sad"},
      {"fear", "fearful"},      {"disgust", "disgusted"},  {"surprise", "surprised"},
      {"contempt", "contemptuous"}, {"neutral", "neutral"},
      {"happy", "happy"},       {"angry", "angry"},        {"sad", "sad"},
      {"fearful", "fearful"},   {"disgusted", "disgusted"}, {"surprised", "surprised"},
      {"contemptuous", "contemptuous"},
  };
  return kTable;
}

}  // namespace

std::optional<std::string> emotion_adjective(std::string_view label) {
  const auto& table = adjective_table();
  auto it = table.find(label);
  if (it == table.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> known_emotion_labels() {
  std::vector<std::string> out;
  for (const auto& [label, adj] : adjective_table()) out.push_back(label);
  return out;
}

std::vector<std::string> emotion_queries(std::string_view label, const TemplateBank& bank) {
  auto adj = emotion_adjective(label);
  if (!adj) throw UnknownLabelError("no adjective for emotion label '" + std::string(label) + "'");
  std::vector<std::string> out;
  for (const auto& t : bank.emotion_templates) out.push_back(substitute(t, kEmotionPlaceholder, *adj));
  return out;
}

std::vector<std::string> gender_queries(std::string_view gender, const TemplateBank& bank) {
  if (gender != "male" && gender != "female") {
    throw UnknownLabelError("unknown gender '" + std::string(gender) + "'");
  }
  std::vector<std::string> out;
  for (const auto& t : bank.gender_templates) out.push_back(substitute(t, kGenderPlaceholder, gender));
  return out;
}

std::vector<std::string> queries_for_attribute(Attribute attr, BinLabel bin,
                                               const QueryContext& context,
                                               const TemplateBank& bank) {
  std::vector<std::string> out;
  auto base = bank.entries.find({attr, bin});
  if (base != bank.entries.end()) out = base->second;

  if (context.emotion_adjective) {
    if (auto it = bank.emotion_entries.find({attr, bin}); it != bank.emotion_entries.end()) {
      for (const auto& t : it->second) {
        out.push_back(substitute(t, kEmotionPlaceholder, *context.emotion_adjective));
      }
    }
  }

  if (attr == Attribute::Jitter || attr == Attribute::Shimmer) {
    auto sigma = context.bins.find(Attribute::PitchSigma);
    if (sigma == context.bins.end()) {
      throw ContextError(std::string(to_string(attr)) + " queries need the pitch_sigma bin");
    }
    for (const auto& c : bank.conditional_entries) {
      if (c.attribute != attr || c.bin != bin) continue;
      if (std::find(c.when_pitch_sigma.begin(), c.when_pitch_sigma.end(), sigma->second) ==
          c.when_pitch_sigma.end()) {
        continue;
      }
      if (base == bank.entries.end()) continue;
      for (const auto& b : base->second) out.push_back(b + " " + c.suffix);
    }
  }
  return out;
}

std::optional<double> attribute_value(Attribute attr, const UtteranceRecord& record,
                                      const FeatureVector& fv) {
  switch (attr) {
    case Attribute::Arousal: return record.arousal;
    case Attribute::Valence: return record.valence;
    case Attribute::Dominance: return record.dominance;
    case Attribute::PitchMu: return fv.pitch_mu;
    case Attribute::PitchSigma: return fv.pitch_sigma;
    case Attribute::Intensity: return fv.intensity_db;
    case Attribute::Duration: return fv.duration_s;
    case Attribute::Jitter: return fv.jitter;
    case Attribute::Shimmer: return fv.shimmer;
  }
  return std::nullopt;
}

ThresholdTable fit_thresholds(std::span<const UtteranceRecord> records,
                              std::span<const FeatureVector> features) {
  if (records.size() != features.size()) {
    throw ValidationError("records and features differ in length");
  }
  ThresholdTable table;
  for (Attribute attr : kAllAttributes) {
    std::vector<double> values;
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (auto v = attribute_value(attr, records[i], features[i])) values.push_back(*v);
    }
    if (!values.empty()) table.emplace(attr, compute_bin_thresholds(values, attr));
  }
  return table;
}

std::string format_thresholds(const ThresholdTable& table) {
  json doc = json::object();
  for (const auto& [attr, t] : table) {
    doc[std::string(to_string(attr))] = {{"t_lo", t.t_lo}, {"t_hi", t.t_hi}};
  }
  return doc.dump(2) + "\n";
}

ThresholdTable parse_thresholds(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("thresholds: ") + e.what());
  }
  ThresholdTable table;
  for (const auto& [name, v] : doc.items()) {
    const Attribute attr = parse_attribute(name);
    BinThresholds t{attr, v.at("t_lo").get<double>(), v.at("t_hi").get<double>()};
    if (!(t.t_lo <= t.t_hi)) throw ValidationError("thresholds for " + name + " are inverted");
    table.emplace(attr, t);
  }
  return table;
}

CaptionPool caption_pool(const UtteranceRecord& record, const FeatureVector& fv,
                         const ThresholdTable& thresholds, const TemplateBank& bank) {
  CaptionPool pool;
  QueryContext context;
  if (record.emotion) {
    context.emotion_adjective = emotion_adjective(*record.emotion);
    // Labels outside the adjective table (e.g. "other") contribute nothing.
    if (context.emotion_adjective) {
      pool.emotion_queries = emotion_queries(*record.emotion, bank);
      pool.queries = pool.emotion_queries;
    }
  }
  if (record.gender) {
    for (auto& q : gender_queries(*record.gender, bank)) pool.queries.push_back(std::move(q));
  }

  for (Attribute attr : kAllAttributes) {
    auto v = attribute_value(attr, record, fv);
    auto t = thresholds.find(attr);
    if (v && t != thresholds.end()) context.bins[attr] = assign_bin(*v, t->second);
  }
  for (Attribute attr : kAllAttributes) {
    auto bin = context.bins.find(attr);
    if (bin == context.bins.end()) continue;
    std::vector<std::string> qs;
    try {
      qs = queries_for_attribute(attr, bin->second, context, bank);
    } catch (const ContextError&) {
      continue;
    }
    if (attr == Attribute::Arousal && context.emotion_adjective) {
      QueryContext bare = context;
      bare.emotion_adjective.reset();
      const auto plain = queries_for_attribute(attr, bin->second, bare, bank);
      for (const auto& q : qs) {
        if (std::find(plain.begin(), plain.end(), q) == plain.end()) pool.emotion_derived.push_back(q);
      }
    }
    for (auto& q : qs) pool.queries.push_back(std::move(q));
  }
  return pool;
}

CaptionPolicy parse_caption_policy(std::string_view mode, std::size_t max_queries) {
  CaptionPolicy p;
  p.max_queries = max_queries;
  std::string_view rest;
  if (mode == "only-emo") {
    p.mode = CaptionMode::OnlyEmo;
    return p;
  }
  if (mode.starts_with("no-emo-rand")) {
    p.mode = CaptionMode::NoEmoRandN;
    rest = mode.substr(11);
  } else if (mode.starts_with("rand")) {
    p.mode = CaptionMode::RandN;
    rest = mode.substr(4);
  } else {
    throw ValidationError("unknown caption mode '" + std::string(mode) +
                          "' (expected only-emo, randN or no-emo-randN)");
  }
  if (!rest.empty()) {
    std::size_t n = 0;
    for (char c : rest) {
      if (c < '0' || c > '9') throw ValidationError("bad caption mode '" + std::string(mode) + "'");
      n = n * 10 + static_cast<std::size_t>(c - '0');
    }
    p.max_queries = n;
  }
  if (p.max_queries < 1) throw ValidationError("max queries must be at least 1");
  return p;
}

std::string to_string(const CaptionPolicy& policy) {
  switch (policy.mode) {
    case CaptionMode::OnlyEmo: return "only-emo";
    case CaptionMode::RandN: return "rand" + std::to_string(policy.max_queries);
    case CaptionMode::NoEmoRandN: return "no-emo-rand" + std::to_string(policy.max_queries);
  }
  return "only-emo";
}

std::string join_parts(std::span<const std::string> parts) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i > 0) out += kConjunction;
    out += parts[i];
  }
  return out;
}

Caption sample_caption(std::span<const std::string> pool, const CaptionPolicy& policy,
                       std::span<const std::string> emotion_subset, Rng& rng) {
  Caption caption;
  if (policy.mode == CaptionMode::OnlyEmo) {
    if (emotion_subset.empty()) throw EmptyPoolError("no emotion query available");
    const auto i = std::uniform_int_distribution<std::size_t>(0, emotion_subset.size() - 1)(rng);
    caption.parts.push_back(emotion_subset[i]);
    caption.text = caption.parts.front();
    return caption;
  }
  if (policy.max_queries < 1) throw ValidationError("max queries must be at least 1");

  std::vector<const std::string*> effective;
  for (const auto& q : pool) {
    if (policy.mode == CaptionMode::NoEmoRandN && is_emotion_query(q, emotion_subset)) continue;
    effective.push_back(&q);
  }
  if (effective.empty()) throw EmptyPoolError("caption pool is empty");

  auto k = std::uniform_int_distribution<std::size_t>(1, policy.max_queries)(rng);
  k = std::min(k, effective.size());
  // Partial Fisher-Yates: the first k slots become the sample, in draw order.
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = std::uniform_int_distribution<std::size_t>(i, effective.size() - 1)(rng);
    std::swap(effective[i], effective[j]);
    caption.parts.push_back(*effective[i]);
  }
  caption.text = join_parts(caption.parts);
  return caption;
}

namespace {

std::vector<std::string> excluded_for(const CaptionPool& pool, const CaptionPolicy& policy) {
  if (policy.mode != CaptionMode::NoEmoRandN) return pool.emotion_queries;
  std::vector<std::string> out = pool.emotion_queries;
  out.insert(out.end(), pool.emotion_derived.begin(), pool.emotion_derived.end());
  return out;
}

}  // namespace

Caption sample_caption(const CaptionPool& pool, const CaptionPolicy& policy, Rng& rng) {
  return sample_caption(pool.queries, policy, excluded_for(pool, policy), rng);
}

bool has_caption(const CaptionPool& pool, const CaptionPolicy& policy) {
  switch (policy.mode) {
    case CaptionMode::OnlyEmo: return !pool.emotion_queries.empty();
    case CaptionMode::RandN: return !pool.queries.empty();
    case CaptionMode::NoEmoRandN: break;
  }
  const auto excluded = excluded_for(pool, policy);
  return std::any_of(pool.queries.begin(), pool.queries.end(), [&](const std::string& q) {
    return !is_emotion_query(q, excluded);
  });
}

}  // namespace paraclap
