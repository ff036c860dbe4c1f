#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "paraclap/wav.hpp"

namespace paraclap {

// Pitch analysis settings (16 kHz input).
inline constexpr std::size_t kPitchFrameLen = 640;  // 40 ms
inline constexpr std::size_t kPitchHop = 160;       // 10 ms
inline constexpr double kMinF0Hz = 60.0;
inline constexpr double kMaxF0Hz = 500.0;
inline constexpr double kVoicingCorrelation = 0.5;
inline constexpr double kVoicingRmsDb = -40.0;
inline constexpr double kSilenceFloorDb = -120.0;

/// Interpretable acoustics for one utterance. Pitch, jitter and shimmer are
/// absent when the utterance has too little voicing to measure them.
struct FeatureVector {
  std::optional<double> pitch_mu;
  std::optional<double> pitch_sigma;
  double intensity_db = kSilenceFloorDb;
  std::optional<double> jitter;
  std::optional<double> shimmer;
  double duration_s = 0.0;

  bool operator==(const FeatureVector&) const = default;
};

inline constexpr std::size_t kNumFeatures = 6;

/// Fixed order: pitch_mu, pitch_sigma, intensity_db, jitter, shimmer, duration_s.
std::array<std::optional<double>, kNumFeatures> as_array(const FeatureVector& fv);

struct F0Track {
  std::vector<std::optional<double>> frame_hz;
  std::size_t frame_len = kPitchFrameLen;
  std::size_t hop = kPitchHop;

  std::size_t voiced_count() const;
};

/// Windows starting at 0, hop, 2*hop, ...; the trailing partial window is
/// dropped. Throws ValidationError if frame_len exceeds the signal.
std::vector<std::span<const double>> frame_signal(std::span<const double> samples,
                                                  std::size_t frame_len, std::size_t hop);

/// Normalized-autocorrelation pitch tracker with parabolic peak refinement.
F0Track estimate_f0(const Waveform& w);

struct PitchStats {
  double mu = 0.0;
  double sigma = 0.0;  // population
};

/// Throws NoVoicingError when the track has no voiced frame.
PitchStats pitch_stats(const F0Track& track);

/// 20*log10(RMS), floored at -120 dBFS.
double intensity(std::span<const double> samples);

/// mean(|T[k+1]-T[k]|) / mean(T). Needs at least two periods.
double jitter(std::span<const double> periods);

/// mean(|A[k+1]-A[k]|) / mean(A). Needs at least two amplitudes.
double shimmer(std::span<const double> peak_amps);

FeatureVector extract_features(const Waveform& w);

// ---------------------------------------------------------------------------
// Feature cache CSV: header id,pitch_mu,pitch_sigma,intensity_db,jitter,
// shimmer,duration_s; absent values are empty cells.

struct FeatureRow {
  std::string id;
  FeatureVector features;
};

std::string format_feature_csv(std::span<const FeatureRow> rows);
std::vector<FeatureRow> parse_feature_csv(std::string_view text);
void write_feature_csv(const std::filesystem::path& path, std::span<const FeatureRow> rows);
std::vector<FeatureRow> read_feature_csv(const std::filesystem::path& path);

/// id -> features lookup; throws ValidationError on duplicate ids.
std::map<std::string, FeatureVector> index_features(std::span<const FeatureRow> rows);

}  // namespace paraclap
