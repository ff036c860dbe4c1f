#pragma once

#include <filesystem>
#include <vector>

namespace paraclap {

inline constexpr int kSampleRate = 16000;

/// Mono audio with samples in [-1, 1].
struct Waveform {
  std::vector<double> samples;
  int sample_rate = kSampleRate;

  std::size_t size() const { return samples.size(); }
  double duration_seconds() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

/// Reads a RIFF/WAVE file. Only PCM, mono, 16-bit, 16 kHz is accepted; any
/// other layout raises UnsupportedFormatError naming the offending property.
/// Integer samples are divided by 32768.
Waveform decode_wav(const std::filesystem::path& path);

/// Writes 16-bit PCM mono. Samples are rounded to the nearest integer step and
/// clamped to the int16 range.
void write_wav(const std::filesystem::path& path, const Waveform& w);

}  // namespace paraclap
