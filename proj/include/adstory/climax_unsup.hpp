#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "adstory/signals.hpp"

namespace adstory {

/// One value per whole second of video.
struct PerSecondSeries {
  std::vector<double> values;

  std::size_t duration_sec() const { return values.size(); }
};

struct PerSecondSignals {
  PerSecondSeries audio;  // max of a^k
  PerSecondSeries flow;   // mean of o^k
  PerSecondSeries shots;  // number of frames with any b^k set
};

enum class ClimaxMethod { kAudio, kFlow, kShots, kBaseline, kLstm };

std::string_view method_name(ClimaxMethod m);
std::optional<ClimaxMethod> parse_method(std::string_view name);

/// Ranked climax timestamps, best first.
struct ClimaxPrediction {
  std::vector<int> timestamps_sec;
  ClimaxMethod method = ClimaxMethod::kAudio;
};

PerSecondSignals aggregate_per_second(const SignalTrack& track);

/// The k highest seconds, value descending, ties to the earlier second.
/// When the series is shorter than k the last ranked second is repeated.
ClimaxPrediction top_k_peaks(const PerSecondSeries& series, std::size_t k,
                             ClimaxMethod method = ClimaxMethod::kAudio);

/// Centers floor((start + end) / 2) of the k longest runs of seconds with at
/// least one shot boundary (longer first, ties to the earlier run). Missing
/// slots are filled from the peak ranking of the remaining seconds.
ClimaxPrediction longest_run_centers(const PerSecondSeries& shots, std::size_t k);

/// Fixed guess: 5 s for top-1, 5/15/25 s for top-3, clamped to the last
/// second of short videos. k must be 1 or 3.
ClimaxPrediction heuristic_baseline(std::size_t duration_sec, std::size_t k);

/// Runs one of the signal-based methods on a track.
ClimaxPrediction predict_from_signals(const SignalTrack& track, ClimaxMethod method, std::size_t k);

// Predictions JSONL ---------------------------------------------------------

struct PredictionRow {
  std::string video_id;
  ClimaxPrediction prediction;
  std::size_t k = 1;
};

std::string prediction_line(const PredictionRow& row);
std::vector<PredictionRow> parse_predictions(std::string_view jsonl);
std::vector<PredictionRow> read_predictions(const std::filesystem::path& path);
void write_predictions(const std::filesystem::path& path, const std::vector<PredictionRow>& rows);

}  // namespace adstory
