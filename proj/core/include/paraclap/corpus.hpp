#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "paraclap/random.hpp"
#include "paraclap/wav.hpp"

namespace paraclap {

/// One audio sample and whatever annotations the corpus provides for it.
struct UtteranceRecord {
  std::string id;
  std::filesystem::path audio_path;
  std::optional<std::string> emotion;
  std::optional<std::string> gender;  // "male" or "female"
  std::optional<double> arousal;
  std::optional<double> valence;
  std::optional<double> dominance;

  bool operator==(const UtteranceRecord&) const = default;
};

/// Attributes that are binned into Low/Mid/High before query generation.
enum class Attribute {
  Arousal,
  Valence,
  Dominance,
  PitchMu,
  PitchSigma,
  Intensity,
  Duration,
  Jitter,
  Shimmer,
};

inline constexpr std::array<Attribute, 9> kAllAttributes = {
    Attribute::Arousal,   Attribute::Valence,    Attribute::Dominance,
    Attribute::PitchMu,   Attribute::PitchSigma, Attribute::Intensity,
    Attribute::Duration,  Attribute::Jitter,     Attribute::Shimmer,
};

std::string_view to_string(Attribute a);
Attribute parse_attribute(std::string_view name);

enum class BinLabel { Low, Mid, High };

std::string_view to_string(BinLabel b);
BinLabel parse_bin(std::string_view name);

/// 30th / 70th percentile cut points for one attribute.
struct BinThresholds {
  Attribute attribute = Attribute::Arousal;
  double t_lo = 0.0;
  double t_hi = 0.0;

  bool operator==(const BinThresholds&) const = default;
};

// ---------------------------------------------------------------------------
// Manifest: one JSON object per line with keys id, audio, emotion, gender,
// arousal, valence, dominance. Relative audio paths resolve against the
// manifest's directory.

std::vector<UtteranceRecord> load_manifest(const std::filesystem::path& path);
std::vector<UtteranceRecord> parse_manifest(std::string_view text,
                                            const std::filesystem::path& base_dir = {});

/// Serializes records one per line. Audio paths are written relative to
/// base_dir when they live underneath it.
std::string format_manifest(std::span<const UtteranceRecord> records,
                            const std::filesystem::path& base_dir = {});
void write_manifest(const std::filesystem::path& path, std::span<const UtteranceRecord> records);

// ---------------------------------------------------------------------------
// Binning

/// Linear-interpolation percentile on the sorted values
/// (rank = p/100 * (n-1)).
double percentile(std::span<const double> values, double p);

/// Fits 30/70 percentile thresholds. Throws ValidationError on empty input or
/// non-finite values.
BinThresholds compute_bin_thresholds(std::span<const double> values,
                                     Attribute attribute = Attribute::Arousal);

/// Low iff value < t_lo, High iff value > t_hi, Mid otherwise.
BinLabel assign_bin(double value, const BinThresholds& thresholds);

// ---------------------------------------------------------------------------
// Length normalization

inline constexpr double kClipSeconds = 5.0;

/// Random contiguous window when longer than the target, random placement in
/// a zero buffer when shorter, identity when equal.
Waveform clip_or_pad(const Waveform& w, double target_seconds, Rng& rng);

// ---------------------------------------------------------------------------
// Synthetic corpora

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

/// Acoustic profile of one synthetic class.
struct ClassProfile {
  std::string name;
  Range f0_hz;
  Range amplitude;
  Range duration_s;
  std::optional<std::string> gender;
  std::optional<Range> arousal;
  std::optional<Range> valence;
  std::optional<Range> dominance;
};

/// Parses "name:f0lo-f0hi:amplo-amphi:durlo-durhi[,name:...]".
std::vector<ClassProfile> parse_class_profiles(std::string_view spec);

/// Built-in profile sets: "four-class" (angry/happy/neutral/sad) and
/// "two-class" (angry/neutral with overlapping acoustics).
std::vector<ClassProfile> builtin_profiles(std::string_view name);

/// Writes n_per_class harmonic-tone WAVs per class into out_dir/wav/ and a
/// matching out_dir/manifest.jsonl. Deterministic under the rng state.
std::vector<UtteranceRecord> synthesize_corpus(std::span<const ClassProfile> profiles,
                                               std::size_t n_per_class, Rng& rng,
                                               const std::filesystem::path& out_dir);

/// Generates the waveform for one synthetic utterance.
Waveform synthesize_tone(double f0_hz, double amplitude, double duration_s, Rng& rng);

}  // namespace paraclap
