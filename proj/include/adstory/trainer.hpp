#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "adstory/features.hpp"
#include "adstory/ingest.hpp"
#include "adstory/seqmodel.hpp"

namespace adstory {

// Targets ----------------------------------------------------------------------

/// Second s is 1 iff some accepted mark falls in [s, s + 1). Marks past the
/// last second are ignored.
std::vector<double> climax_targets(const VideoRecord& record, std::size_t n_seconds);
std::vector<double> climax_targets(std::span<const double> accepted_marks, std::size_t n_seconds);

using ClassVector = std::array<double, kNumSentiments>;

/// min(votes / 3, 1) per class.
ClassVector sentiment_soft_targets(const std::array<int, kNumSentiments>& votes);

struct NegativeSampling {
  std::vector<ClassVector> weights;            // videos x 30
  std::vector<std::size_t> classes_without_positives;
};

/// Per class: positives (target > 0) get weight 1, a seeded uniform sample of
/// min(ratio * n_pos, available) negatives weight 1, the rest 0.
NegativeSampling negative_sampling_weights(std::span<const ClassVector> targets, std::size_t ratio,
                                           std::uint64_t seed);

// Splits ---------------------------------------------------------------------------

inline constexpr int kNumFolds = 5;

enum class Split : std::uint8_t { kTrain, kVal, kTest };

std::string_view split_name(Split s);

struct SplitPlan {
  int fold = 0;
  std::map<std::string, Split, std::less<>> assignment;

  /// Ids in the given split, sorted.
  std::vector<std::string> ids(Split which) const;
};

/// Ids are ordered by a seeded hash and cut into five contiguous chunks.
/// Fold f tests on chunk f, validates on chunk (f + 1) mod 5 and trains on
/// the rest.
std::vector<SplitPlan> make_splits(std::vector<std::string> video_ids, std::uint64_t seed);

// Configuration ----------------------------------------------------------------------

struct TrainConfig {
  Task task = Task::kClimax;
  std::int64_t steps = 20000;
  std::size_t batch = 32;
  double lr = 2e-4;
  double decay = 0.95;
  double momentum = 1e-8;
  double epsilon = 1e-10;
  double keep_prob = 0.5;
  std::size_t neg_ratio = 5;
  bool resample_negatives = false;  // redraw negatives every step
  std::uint64_t seed = 0;
  std::int64_t eval_every = 200;
  std::size_t hidden = kHiddenUnits;
  TopicFeed topic_feed = TopicFeed::kLogits;
  std::size_t max_len = kMaxSequenceLength;
  int jobs = 1;
};

/// Sets one field from its textual value; throws ValidationError for unknown
/// keys or unparsable values.
void set_config_value(TrainConfig& config, std::string_view key, std::string_view value);

/// `key = value` lines; `#` starts a comment; strings may be quoted.
TrainConfig parse_train_config(std::string_view text, TrainConfig base = {});
TrainConfig read_train_config(const std::filesystem::path& path, TrainConfig base = {});
std::string train_config_text(const TrainConfig& config);

// Training -------------------------------------------------------------------------------

/// Builds the model-ready tensor for one video (frames truncated to max_len).
VideoTensor make_video_tensor(const VideoRecord& record, const std::vector<FrameFeatures>& frames,
                              std::size_t max_len = kMaxSequenceLength);

/// Annotation view of a tensor (marks become accepted workers).
VideoRecord record_of(const VideoTensor& video);

struct TrainLogRow {
  std::int64_t step = 0;
  double train_loss = 0.0;
  std::optional<double> val_metric;
  std::int64_t wall_ms = 0;
};

std::string train_log_csv(std::span<const TrainLogRow> log);

struct TrainResult {
  ModelCheckpoint checkpoint;
  std::vector<TrainLogRow> log;
  std::optional<double> best_metric;
  std::vector<std::size_t> classes_without_positives;
};

/// Climax: top-1 recall within 2 s. Sentiment: agree-with-2 mAP.
double selection_metric(const Model& model, const Dataset& data,
                        std::span<const std::size_t> indices);

/// Per-frame climax probabilities for every video of a (standardized) dataset.
std::vector<std::vector<double>> predict_climax_probs(const Model& model, const Dataset& data);

/// videos x 30 sentiment probabilities.
Eigen::MatrixXd predict_sentiment_scores(const Model& model, const Dataset& data);

/// Runs config.steps RMSprop updates on the train split, evaluating on the
/// val split every eval_every steps and after the last step. Returns the
/// best evaluated parameters (earliest on ties). Throws NumericError on a
/// non-finite loss and ValidationError on an empty train split.
TrainResult train(const TrainConfig& config, const Dataset& data, const SplitPlan& split,
                  const std::function<void(const TrainLogRow&)>& on_step = {});

}  // namespace adstory
