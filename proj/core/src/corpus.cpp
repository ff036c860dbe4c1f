#include "paraclap/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "json.hpp"
#include "paraclap/error.hpp"

namespace paraclap {

using nlohmann::json;

namespace {

constexpr std::array<std::string_view, 9> kAttributeNames = {
    "arousal", "valence", "dominance", "pitch_mu", "pitch_sigma",
    "intensity", "duration", "jitter", "shimmer"};

std::optional<double> optional_number(const json& obj, const char* key, std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  if (!it->is_number()) throw ParseError(std::string("field '") + key + "' must be a number", line);
  const double v = it->get<double>();
  if (!std::isfinite(v)) throw ParseError(std::string("field '") + key + "' is not finite", line);
  return v;
}

std::optional<std::string> optional_string(const json& obj, const char* key, std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) throw ParseError(std::string("field '") + key + "' must be a string", line);
  return it->get<std::string>();
}

double parse_double(std::string_view s, std::string_view what) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw ValidationError("bad number '" + std::string(s) + "' in " + std::string(what));
  }
  return v;
}

Range parse_range(std::string_view s, std::string_view what) {
  const auto dash = s.find('-', 1);
  if (dash == std::string_view::npos) {
    const double v = parse_double(s, what);
    return {v, v};
  }
  Range r{parse_double(s.substr(0, dash), what), parse_double(s.substr(dash + 1), what)};
  if (r.lo > r.hi) throw ValidationError("empty range in " + std::string(what));
  return r;
}

double draw(const Range& r, Rng& rng) {
  if (r.hi <= r.lo) return r.lo;
  return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

}  // namespace

std::string_view to_string(Attribute a) { return kAttributeNames[static_cast<std::size_t>(a)]; }

Attribute parse_attribute(std::string_view name) {
  for (std::size_t i = 0; i < kAttributeNames.size(); ++i) {
    if (kAttributeNames[i] == name) return static_cast<Attribute>(i);
  }
  throw ValidationError("unknown attribute '" + std::string(name) + "'");
}

std::string_view to_string(BinLabel b) {
  switch (b) {
    case BinLabel::Low: return "low";
    case BinLabel::Mid: return "mid";
    case BinLabel::High: return "high";
  }
  return "mid";
}

BinLabel parse_bin(std::string_view name) {
  if (name == "low") return BinLabel::Low;
  if (name == "mid") return BinLabel::Mid;
  if (name == "high") return BinLabel::High;
  throw ValidationError("unknown bin '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------

std::vector<UtteranceRecord> parse_manifest(std::string_view text,
                                            const std::filesystem::path& base_dir) {
  std::vector<UtteranceRecord> records;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) {
      if (end == text.size()) break;
      continue;
    }

    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("malformed record: ") + e.what(), line_no);
    }
    if (!obj.is_object()) throw ParseError("record is not an object", line_no);

    UtteranceRecord r;
    auto id = optional_string(obj, "id", line_no);
    if (!id || id->empty()) throw ParseError("missing 'id'", line_no);
    r.id = *id;
    auto audio = optional_string(obj, "audio", line_no);
    if (!audio || audio->empty()) throw ParseError("missing 'audio'", line_no);
    std::filesystem::path p(*audio);
    r.audio_path = (p.is_relative() && !base_dir.empty()) ? base_dir / p : p;
    r.emotion = optional_string(obj, "emotion", line_no);
    r.gender = optional_string(obj, "gender", line_no);
    if (r.gender && *r.gender != "male" && *r.gender != "female") {
      throw ValidationError("line " + std::to_string(line_no) + ": gender '" + *r.gender +
                            "' is not male/female");
    }
    r.arousal = optional_number(obj, "arousal", line_no);
    r.valence = optional_number(obj, "valence", line_no);
    r.dominance = optional_number(obj, "dominance", line_no);

    if (!seen.insert(r.id).second) {
      throw ValidationError("line " + std::to_string(line_no) + ": duplicate id '" + r.id + "'");
    }
    records.push_back(std::move(r));
    if (end == text.size()) break;
  }
  return records;
}

std::vector<UtteranceRecord> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str(), path.parent_path());
}

std::string format_manifest(std::span<const UtteranceRecord> records,
                            const std::filesystem::path& base_dir) {
  std::string out;
  for (const auto& r : records) {
    json obj;
    obj["id"] = r.id;
    std::filesystem::path audio = r.audio_path;
    if (!base_dir.empty()) {
      auto rel = audio.lexically_relative(base_dir);
      if (!rel.empty() && *rel.begin() != "..") audio = rel;
    }
    obj["audio"] = audio.generic_string();
    if (r.emotion) obj["emotion"] = *r.emotion;
    if (r.gender) obj["gender"] = *r.gender;
    if (r.arousal) obj["arousal"] = *r.arousal;
    if (r.valence) obj["valence"] = *r.valence;
    if (r.dominance) obj["dominance"] = *r.dominance;
    out += obj.dump();
    out += '\n';
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, std::span<const UtteranceRecord> records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << format_manifest(records, path.parent_path());
  if (!out) throw IoError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------

double percentile(std::span<const double> values, double p) {
  if (values.empty()) throw ValidationError("percentile of empty list");
  std::vector<double> sorted(values.begin(), values.end());
  for (double v : sorted) {
    if (std::isnan(v)) throw ValidationError("percentile input contains NaN");
    if (!std::isfinite(v)) throw ValidationError("percentile input is not finite");
  }
  std::sort(sorted.begin(), sorted.end());
  const double rank = p * static_cast<double>(sorted.size() - 1) / 100.0;
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  if (lo + 1 >= sorted.size()) return sorted.back();
  const double frac = rank - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

BinThresholds compute_bin_thresholds(std::span<const double> values, Attribute attribute) {
  if (values.empty()) {
    throw ValidationError("cannot fit thresholds for " + std::string(to_string(attribute)) +
                          ": no values");
  }
  return {attribute, percentile(values, 30.0), percentile(values, 70.0)};
}

BinLabel assign_bin(double value, const BinThresholds& thresholds) {
  if (value < thresholds.t_lo) return BinLabel::Low;
  if (value > thresholds.t_hi) return BinLabel::High;
  return BinLabel::Mid;
}

// ---------------------------------------------------------------------------

Waveform clip_or_pad(const Waveform& w, double target_seconds, Rng& rng) {
  const auto target = static_cast<std::size_t>(std::llround(target_seconds * w.sample_rate));
  const std::size_t n = w.samples.size();
  Waveform out;
  out.sample_rate = w.sample_rate;
  if (n == target) {
    out.samples = w.samples;
    return out;
  }
  if (n > target) {
    const auto offset = std::uniform_int_distribution<std::size_t>(0, n - target)(rng);
    out.samples.assign(w.samples.begin() + static_cast<std::ptrdiff_t>(offset),
                       w.samples.begin() + static_cast<std::ptrdiff_t>(offset + target));
    return out;
  }
  const auto offset = std::uniform_int_distribution<std::size_t>(0, target - n)(rng);
  out.samples.assign(target, 0.0);
  std::copy(w.samples.begin(), w.samples.end(),
            out.samples.begin() + static_cast<std::ptrdiff_t>(offset));
  return out;
}

// ---------------------------------------------------------------------------

std::vector<ClassProfile> parse_class_profiles(std::string_view spec) {
  std::vector<ClassProfile> out;
  std::set<std::string> names;
  std::size_t start = 0;
  while (start < spec.size()) {
    auto end = spec.find(',', start);
    if (end == std::string_view::npos) end = spec.size();
    std::string_view item = spec.substr(start, end - start);
    start = end + 1;
    if (item.empty()) continue;

    std::vector<std::string_view> parts;
    std::size_t s = 0;
    while (true) {
      auto c = item.find(':', s);
      parts.push_back(item.substr(s, c == std::string_view::npos ? std::string_view::npos : c - s));
      if (c == std::string_view::npos) break;
      s = c + 1;
    }
    if (parts.size() != 4 || parts[0].empty()) {
      throw ValidationError("class profile '" + std::string(item) +
                            "' must be name:f0lo-f0hi:amplo-amphi:durlo-durhi");
    }
    ClassProfile p;
    p.name = std::string(parts[0]);
    p.f0_hz = parse_range(parts[1], item);
    p.amplitude = parse_range(parts[2], item);
    p.duration_s = parse_range(parts[3], item);
    if (p.f0_hz.lo <= 0 || p.amplitude.lo <= 0 || p.amplitude.hi > 1.0 || p.duration_s.lo <= 0) {
      throw ValidationError("class profile '" + std::string(item) + "' out of range");
    }
    if (!names.insert(p.name).second) throw ValidationError("duplicate class '" + p.name + "'");
    out.push_back(std::move(p));
  }
  if (out.empty()) throw ValidationError("no class profiles given");
  return out;
}

std::vector<ClassProfile> builtin_profiles(std::string_view name) {
  if (name == "four-class") {
    return {
        {"angry", {220, 260}, {0.55, 0.75}, {2.0, 4.0}, "male", Range{0.7, 0.9}, Range{0.1, 0.3}, Range{0.7, 0.9}},
        {"happy", {300, 350}, {0.35, 0.50}, {1.5, 3.0}, "female", Range{0.6, 0.8}, Range{0.7, 0.9}, Range{0.5, 0.7}},
        {"neutral", {140, 170}, {0.18, 0.28}, {2.5, 4.5}, "male", Range{0.4, 0.6}, Range{0.4, 0.6}, Range{0.4, 0.6}},
        {"sad", {100, 125}, {0.05, 0.10}, {3.0, 5.5}, "female", Range{0.1, 0.3}, Range{0.1, 0.3}, Range{0.2, 0.4}},
    };
  }
  if (name == "two-class") {
    return {
        {"angry", {180, 260}, {0.2, 0.6}, {2.0, 4.0}, std::nullopt, std::nullopt, std::nullopt, std::nullopt},
        {"neutral", {200, 280}, {0.2, 0.6}, {2.0, 4.0}, std::nullopt, std::nullopt, std::nullopt, std::nullopt},
    };
  }
  throw ValidationError("unknown class preset '" + std::string(name) + "'");
}

Waveform synthesize_tone(double f0_hz, double amplitude, double duration_s, Rng& rng) {
  constexpr std::array<double, 4> kHarmonics = {1.0, 0.5, 1.0 / 3.0, 0.25};
  constexpr double kNoiseStd = 0.001;
  const double weight_sum = kHarmonics[0] + kHarmonics[1] + kHarmonics[2] + kHarmonics[3];

  std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * std::numbers::pi);
  std::array<double, 4> phases{};
  for (auto& ph : phases) ph = phase_dist(rng);
  std::normal_distribution<double> noise(0.0, kNoiseStd);

  Waveform w;
  const auto n = static_cast<std::size_t>(std::llround(duration_s * kSampleRate));
  w.samples.resize(std::max<std::size_t>(n, 1));
  for (std::size_t i = 0; i < w.samples.size(); ++i) {
    const double t = static_cast<double>(i) / kSampleRate;
    double s = 0.0;
    for (std::size_t k = 0; k < kHarmonics.size(); ++k) {
      s += kHarmonics[k] *
           std::sin(2.0 * std::numbers::pi * f0_hz * static_cast<double>(k + 1) * t + phases[k]);
    }
    w.samples[i] = std::clamp(amplitude * s / weight_sum + noise(rng), -1.0, 1.0);
  }
  return w;
}

std::vector<UtteranceRecord> synthesize_corpus(std::span<const ClassProfile> profiles,
                                               std::size_t n_per_class, Rng& rng,
                                               const std::filesystem::path& out_dir) {
  std::error_code ec;
  const auto wav_dir = out_dir / "wav";
  std::filesystem::create_directories(wav_dir, ec);
  if (ec) throw IoError("cannot create " + wav_dir.string() + ": " + ec.message());

  std::vector<UtteranceRecord> records;
  records.reserve(profiles.size() * n_per_class);
  for (const auto& profile : profiles) {
    for (std::size_t i = 0; i < n_per_class; ++i) {
      char suffix[32];
      std::snprintf(suffix, sizeof suffix, "_%04zu", i);
      UtteranceRecord r;
      r.id = profile.name + suffix;
      r.audio_path = wav_dir / (r.id + ".wav");
      r.emotion = profile.name;
      r.gender = profile.gender;
      const double f0 = draw(profile.f0_hz, rng);
      const double amp = draw(profile.amplitude, rng);
      const double dur = draw(profile.duration_s, rng);
      if (profile.arousal) r.arousal = draw(*profile.arousal, rng);
      if (profile.valence) r.valence = draw(*profile.valence, rng);
      if (profile.dominance) r.dominance = draw(*profile.dominance, rng);
      write_wav(r.audio_path, synthesize_tone(f0, amp, dur, rng));
      records.push_back(std::move(r));
    }
  }
  write_manifest(out_dir / "manifest.jsonl", records);
  return records;
}

}  // namespace paraclap
