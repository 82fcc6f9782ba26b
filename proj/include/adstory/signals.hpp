#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "adstory/ingest.hpp"

namespace adstory {

/// Dense motion field, row-major, same size as the source frames.
/// u is horizontal (along a row), v vertical; units are pixels per frame.
struct FlowField {
  int width = 0;
  int height = 0;
  std::vector<double> u;
  std::vector<double> v;
};

inline constexpr std::size_t kShotLevels = 5;
using ShotIndicator = std::array<std::uint8_t, kShotLevels>;
using ShotThresholds = std::array<double, kShotLevels>;

/// Histogram-distance thresholds, most to least sensitive.
inline constexpr ShotThresholds kDefaultShotThresholds = {0.15, 0.25, 0.35, 0.50, 0.65};
inline constexpr int kHistogramBins = 64;

struct FlowOptions {
  double alpha = 1.0;
  int iterations = 100;
};

struct SignalOptions {
  FlowOptions flow;
  ShotThresholds shot_thresholds = kDefaultShotThresholds;
  int jobs = 1;
};

/// Per-frame climax indicators of one video.
struct SignalTrack {
  Rational fps{25, 1};
  std::vector<double> audio;          // a^k in [0, 1]
  std::vector<ShotIndicator> shots;   // b^k in {0,1}^5
  std::vector<double> flow;           // o^k >= 0

  std::size_t size() const { return audio.size(); }
};

/// a^k = max |s| over samples with timestamp in [k/fps, (k+1)/fps).
/// Frames with no samples (past the end of the audio) get 0.
std::vector<double> audio_amplitude(const AudioTrack& audio, Rational fps, std::size_t n_frames);

/// Horn-Schunck flow between two luma planes of identical size (>= 2x2).
/// Intensities are used on their native 0..255 scale; the solve starts
/// from zero flow and runs a fixed number of Jacobi sweeps.
FlowField dense_flow(std::span<const std::uint8_t> prev, std::span<const std::uint8_t> next,
                     int width, int height, const FlowOptions& options = {});

/// Mean Euclidean length of the flow vectors.
double flow_magnitude(const FlowField& field);

std::array<double, kHistogramBins> luma_histogram(std::span<const std::uint8_t> plane);

/// Half the L1 distance between normalized 64-bin luma histograms, in [0, 1].
double histogram_distance(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);

ShotIndicator threshold_distance(double d, const ShotThresholds& thresholds);

/// b^k for every frame; frame 0 has no predecessor and gets the zero vector.
std::vector<ShotIndicator> shot_boundaries(const FrameSeq& frames,
                                           const ShotThresholds& thresholds = kDefaultShotThresholds);

/// o^k for every frame (o^0 = 0). Frame pairs are split over `jobs` threads.
std::vector<double> flow_track(const FrameSeq& frames, const FlowOptions& options, int jobs);

SignalTrack extract_signals(const FrameSeq& frames, const AudioTrack& audio,
                            const SignalOptions& options = {});

// Signals cache (JSONL, one line per frame) -------------------------------

std::string signal_lines(const std::string& video_id, const SignalTrack& track);
void write_signals(const std::filesystem::path& path,
                   const std::map<std::string, SignalTrack>& tracks);
std::map<std::string, SignalTrack> parse_signals(std::string_view jsonl);
std::map<std::string, SignalTrack> read_signals(const std::filesystem::path& path);

}  // namespace adstory
