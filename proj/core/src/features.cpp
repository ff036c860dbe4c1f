#include "paraclap/features.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "paraclap/error.hpp"

namespace paraclap {
namespace {

// Among autocorrelation peaks, the shortest lag reaching this fraction of the
// strongest peak wins. Multiples of the true period score almost as high as
// the period itself, so picking the global maximum alone halves F0 at random.
constexpr double kOctaveTolerance = 0.9;

double relative_mean_abs_diff(std::span<const double> xs, const char* what) {
  if (xs.size() < 2) {
    throw InsufficientDataError(std::string(what) + " needs at least 2 values, got " +
                                std::to_string(xs.size()));
  }
  double diff = 0.0;
  for (std::size_t k = 0; k + 1 < xs.size(); ++k) diff += std::abs(xs[k + 1] - xs[k]);
  diff /= static_cast<double>(xs.size() - 1);
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  if (!(mean > 0.0)) throw InsufficientDataError(std::string(what) + " values must be positive");
  return diff / mean;
}

std::optional<double> frame_f0(std::span<const double> x, int sample_rate) {
  const std::size_t n = x.size();
  double energy = 0.0;
  for (double v : x) energy += v * v;
  const double rms = std::sqrt(energy / static_cast<double>(n));
  if (rms < std::pow(10.0, kVoicingRmsDb / 20.0)) return std::nullopt;

  const auto min_lag = static_cast<std::size_t>(std::floor(sample_rate / kMaxF0Hz));
  const auto max_lag = std::min<std::size_t>(
      static_cast<std::size_t>(std::ceil(sample_rate / kMinF0Hz)), n - 2);
  if (min_lag < 2 || max_lag <= min_lag) return std::nullopt;

  std::vector<double> prefix(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + x[i] * x[i];

  // r[lag - first] for lag in [min_lag - 1, max_lag + 1]
  const std::size_t first = min_lag - 1;
  std::vector<double> r(max_lag + 2 - first, 0.0);
  for (std::size_t lag = first; lag <= max_lag + 1; ++lag) {
    const std::size_t m = n - lag;
    double acc = 0.0;
    for (std::size_t i = 0; i < m; ++i) acc += x[i] * x[i + lag];
    const double e0 = prefix[m];
    const double e1 = prefix[n] - prefix[lag];
    const double denom = std::sqrt(e0 * e1);
    r[lag - first] = denom > 0.0 ? acc / denom : 0.0;
  }

  double best = -1.0;
  std::vector<std::size_t> peaks;
  for (std::size_t lag = min_lag; lag <= max_lag; ++lag) {
    const double c = r[lag - first];
    if (c > r[lag - 1 - first] && c >= r[lag + 1 - first]) {
      peaks.push_back(lag);
      best = std::max(best, c);
    }
  }
  if (peaks.empty() || best < kVoicingCorrelation) return std::nullopt;

  std::size_t chosen = peaks.front();
  for (std::size_t lag : peaks) {
    if (r[lag - first] >= kOctaveTolerance * best) {
      chosen = lag;
      break;
    }
  }

  const double a = r[chosen - 1 - first];
  const double b = r[chosen - first];
  const double c = r[chosen + 1 - first];
  const double curvature = a - 2.0 * b + c;
  const double offset = curvature < 0.0 ? std::clamp(0.5 * (a - c) / curvature, -0.5, 0.5) : 0.0;
  const double f0 = sample_rate / (static_cast<double>(chosen) + offset);
  if (f0 < kMinF0Hz || f0 > kMaxF0Hz) return std::nullopt;
  return f0;
}

void append_cell(std::string& out, const std::optional<double>& v) {
  out += ',';
  if (!v) return;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", *v);
  out += buf;
}

std::optional<double> parse_cell(std::string_view cell, std::size_t line) {
  if (cell.empty()) return std::nullopt;
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(v)) {
    throw ParseError("bad number '" + std::string(cell) + "'", line);
  }
  return v;
}

constexpr std::string_view kCsvHeader = "id,pitch_mu,pitch_sigma,intensity_db,jitter,shimmer,duration_s";

}  // namespace

std::array<std::optional<double>, kNumFeatures> as_array(const FeatureVector& fv) {
  return {fv.pitch_mu, fv.pitch_sigma, fv.intensity_db, fv.jitter, fv.shimmer, fv.duration_s};
}

std::size_t F0Track::voiced_count() const {
  return static_cast<std::size_t>(
      std::count_if(frame_hz.begin(), frame_hz.end(), [](const auto& v) { return v.has_value(); }));
}

std::vector<std::span<const double>> frame_signal(std::span<const double> samples,
                                                  std::size_t frame_len, std::size_t hop) {
  if (hop == 0) throw ValidationError("hop must be at least 1");
  if (frame_len == 0 || frame_len > samples.size()) {
    throw ValidationError("frame length " + std::to_string(frame_len) + " exceeds signal length " +
                          std::to_string(samples.size()));
  }
  const std::size_t count = (samples.size() - frame_len) / hop + 1;
  std::vector<std::span<const double>> frames;
  frames.reserve(count);
  for (std::size_t i = 0; i < count; ++i) frames.push_back(samples.subspan(i * hop, frame_len));
  return frames;
}

F0Track estimate_f0(const Waveform& w) {
  F0Track track;
  if (w.samples.size() < kPitchFrameLen) return track;
  for (auto frame : frame_signal(w.samples, kPitchFrameLen, kPitchHop)) {
    track.frame_hz.push_back(frame_f0(frame, w.sample_rate));
  }
  return track;
}

PitchStats pitch_stats(const F0Track& track) {
  std::vector<double> voiced;
  for (const auto& v : track.frame_hz) {
    if (v) voiced.push_back(*v);
  }
  if (voiced.empty()) throw NoVoicingError("pitch track has no voiced frames");
  const double n = static_cast<double>(voiced.size());
  const double mu = std::accumulate(voiced.begin(), voiced.end(), 0.0) / n;
  double var = 0.0;
  for (double v : voiced) var += (v - mu) * (v - mu);
  return {mu, std::sqrt(var / n)};
}

double intensity(std::span<const double> samples) {
  if (samples.empty()) return kSilenceFloorDb;
  double energy = 0.0;
  for (double v : samples) energy += v * v;
  const double rms = std::sqrt(energy / static_cast<double>(samples.size()));
  if (rms <= 0.0) return kSilenceFloorDb;
  return std::max(kSilenceFloorDb, 20.0 * std::log10(rms));
}

double jitter(std::span<const double> periods) { return relative_mean_abs_diff(periods, "jitter"); }

double shimmer(std::span<const double> peak_amps) {
  return relative_mean_abs_diff(peak_amps, "shimmer");
}

FeatureVector extract_features(const Waveform& w) {
  FeatureVector fv;
  fv.duration_s = w.duration_seconds();
  fv.intensity_db = intensity(w.samples);

  const F0Track track = estimate_f0(w);
  if (track.voiced_count() == 0) return fv;

  const PitchStats stats = pitch_stats(track);
  fv.pitch_mu = stats.mu;
  fv.pitch_sigma = stats.sigma;

  std::vector<double> periods;
  std::vector<double> peaks;
  for (std::size_t i = 0; i < track.frame_hz.size(); ++i) {
    if (!track.frame_hz[i]) continue;
    periods.push_back(1.0 / *track.frame_hz[i]);
    auto frame = std::span<const double>(w.samples).subspan(i * track.hop, track.frame_len);
    double peak = 0.0;
    for (double v : frame) peak = std::max(peak, std::abs(v));
    peaks.push_back(peak);
  }
  if (periods.size() >= 2) {
    fv.jitter = jitter(periods);
    fv.shimmer = shimmer(peaks);
  }
  return fv;
}

// ---------------------------------------------------------------------------

std::string format_feature_csv(std::span<const FeatureRow> rows) {
  std::string out(kCsvHeader);
  out += '\n';
  for (const auto& row : rows) {
    if (row.id.find_first_of(",\n\"") != std::string::npos) {
      throw ValidationError("id '" + row.id + "' cannot be written to CSV");
    }
    out += row.id;
    for (const auto& v : as_array(row.features)) append_cell(out, v);
    out += '\n';
  }
  return out;
}

std::vector<FeatureRow> parse_feature_csv(std::string_view text) {
  std::vector<FeatureRow> rows;
  std::size_t line_no = 0;
  std::size_t start = 0;
  bool header_seen = false;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (!header_seen) {
      if (line != kCsvHeader) throw ParseError("unexpected feature CSV header", line_no);
      header_seen = true;
      continue;
    }
    std::vector<std::string_view> cells;
    std::size_t s = 0;
    while (true) {
      auto c = line.find(',', s);
      cells.push_back(line.substr(s, c == std::string_view::npos ? std::string_view::npos : c - s));
      if (c == std::string_view::npos) break;
      s = c + 1;
    }
    if (cells.size() != 1 + kNumFeatures) {
      throw ParseError("expected " + std::to_string(1 + kNumFeatures) + " cells, got " +
                           std::to_string(cells.size()),
                       line_no);
    }
    FeatureRow row;
    row.id = std::string(cells[0]);
    if (row.id.empty()) throw ParseError("empty id", line_no);
    row.features.pitch_mu = parse_cell(cells[1], line_no);
    row.features.pitch_sigma = parse_cell(cells[2], line_no);
    auto inten = parse_cell(cells[3], line_no);
    row.features.jitter = parse_cell(cells[4], line_no);
    row.features.shimmer = parse_cell(cells[5], line_no);
    auto dur = parse_cell(cells[6], line_no);
    if (!inten || !dur) throw ParseError("intensity_db and duration_s are required", line_no);
    row.features.intensity_db = *inten;
    row.features.duration_s = *dur;
    rows.push_back(std::move(row));
  }
  if (!header_seen) throw ParseError("feature CSV is empty");
  return rows;
}

void write_feature_csv(const std::filesystem::path& path, std::span<const FeatureRow> rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << format_feature_csv(rows);
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<FeatureRow> read_feature_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_feature_csv(ss.str());
}

std::map<std::string, FeatureVector> index_features(std::span<const FeatureRow> rows) {
  std::map<std::string, FeatureVector> out;
  for (const auto& row : rows) {
    if (!out.emplace(row.id, row.features).second) {
      throw ValidationError("duplicate feature row for id '" + row.id + "'");
    }
  }
  return out;
}

}  // namespace paraclap
