#pragma once

#include <array>
#include <bitset>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "adstory/climax_unsup.hpp"
#include "adstory/ingest.hpp"

namespace adstory {

inline constexpr std::array<std::size_t, 2> kRecallKs = {1, 3};
inline constexpr std::array<int, 3> kRecallWindows = {0, 1, 2};
inline constexpr std::array<int, 3> kAgreementLevels = {1, 2, 3};
inline constexpr int kReportVersion = 1;

/// Ranked predicted seconds per video id.
using RankedPredictions = std::map<std::string, std::vector<int>, std::less<>>;

/// Fraction of videos (among those with at least one accepted mark) where
/// some top-k prediction p and accepted mark g satisfy
/// |floor(p) - floor(g)| <= window. Throws for predictions of unknown videos.
double climax_recall(const RankedPredictions& predictions, std::span<const VideoRecord> records,
                     std::size_t k, int window);

/// Number of videos with at least one accepted climax mark.
std::size_t climax_recall_denominator(std::span<const VideoRecord> records);

using LabelSet = std::bitset<kNumSentiments>;

/// Sentiment s is a label at level k iff at least k annotators voted for it.
std::vector<LabelSet> agreement_labels(std::span<const VideoRecord> records, int k);

/// 11-point interpolated average precision. Ranking is by score descending,
/// ties broken by id ascending. Needs at least one positive.
double average_precision(std::span<const double> scores, const std::vector<bool>& positives,
                         std::span<const std::string> ids);

struct ClimaxMetrics {
  // recall[k index][window]: k in {1, 3}, window in {0, 1, 2}
  std::array<std::array<double, 3>, 2> recall{};
  std::size_t n_videos = 0;  // videos with >= 1 accepted mark
};

struct SentimentLevel {
  int agreement = 1;
  double map = 0.0;
  double acc_at_1 = 0.0;
  std::size_t n_eval = 0;                         // acc@1 denominator
  std::array<double, kNumSentiments> class_ap{};  // NaN for skipped classes
  std::vector<std::size_t> skipped;               // classes without positives
};

struct EvalReport {
  std::string task;  // "climax" or "sentiment"
  std::string method;
  std::optional<ClimaxMetrics> climax;
  std::vector<SentimentLevel> sentiment;
};

ClimaxMetrics climax_metrics(const RankedPredictions& predictions,
                             std::span<const VideoRecord> records);

/// mAP and acc@1 at agreement levels 1..3. `scores` is videos x 30 aligned
/// with `records`.
std::vector<SentimentLevel> sentiment_metrics(const Eigen::MatrixXd& scores,
                                              std::span<const VideoRecord> records);

/// Invariant violations (ranges, population, monotonicity); empty when sound.
std::vector<std::string> check_report(const EvalReport& report);

std::string report_json(std::span<const EvalReport> reports);
std::string report_text(std::span<const EvalReport> reports);
std::vector<EvalReport> parse_report_json(std::string_view text);

/// Writes `<base>.json` and `<base>.txt`.
void emit_report(std::span<const EvalReport> reports, const std::filesystem::path& base);

/// Per-second plot series: second,audio,shots,flow,climax_prob. The last
/// column is left empty when no probabilities are given.
std::string plot_csv(const PerSecondSignals& series, std::span<const double> climax_probs = {});
void write_plot_csv(const std::filesystem::path& path, const PerSecondSignals& series,
                    std::span<const double> climax_probs = {});

}  // namespace adstory
