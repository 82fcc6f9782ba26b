#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "adstory/common.hpp"
#include "adstory/features.hpp"
#include "adstory/vocab.hpp"

namespace adstory {

enum class Task { kClimax, kSentiment };

std::string_view task_name(Task t);
std::optional<Task> parse_task(std::string_view name);

/// How the topic head feeds the sentiment head.
enum class TopicFeed { kLogits, kProbabilities };

inline constexpr std::size_t kHiddenUnits = 64;
inline constexpr std::size_t kNumGates = 4;  // input, forget, candidate, output

struct ModelConfig {
  Task task = Task::kClimax;
  std::size_t input_dim = kBaseFeatureDim;
  std::size_t hidden = kHiddenUnits;
  double forget_bias = 1.0;  // constant added to the forget pre-activation
  TopicFeed topic_feed = TopicFeed::kLogits;
};

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<Eigen::MatrixXd>;
using ConstMatrixMap = Eigen::Map<const Eigen::MatrixXd>;

/// Named slice of the flat parameter vector (column-major rows x cols).
struct TensorSpec {
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  Eigen::Index offset = 0;

  Eigen::Index size() const { return rows * cols; }
};

enum class Param {
  kInputWeights,      // input_dim x 4H
  kRecurrentWeights,  // H x 4H
  kGateBias,          // 4H
  kClimaxWeights,     // H x 1
  kClimaxBias,        // 1
  kTopicWeights,      // H x 38
  kTopicBias,         // 38
  kSentimentWeights,  // (H + 38) x 30
  kSentimentBias,     // 30
};

/// LSTM plus the task heads, all parameters packed into one vector.
class Model {
 public:
  explicit Model(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  const std::vector<TensorSpec>& tensors() const { return tensors_; }
  bool has(Param p) const;
  const TensorSpec& spec(Param p) const;

  Eigen::VectorXd& flat() { return flat_; }
  const Eigen::VectorXd& flat() const { return flat_; }

  MatrixMap param(Param p);
  ConstMatrixMap param(Param p) const;

  /// Weights ~ uniform(-s, s), s = 1/sqrt(fan_in); biases zero.
  void init_uniform(std::uint64_t seed);

 private:
  ModelConfig config_;
  std::vector<TensorSpec> tensors_;
  std::array<int, 9> index_{};
  Eigen::VectorXd flat_;
};

/// Inverted-dropout masks for one sequence: entries are 0 or 1/keep_prob.
/// Empty matrices mean identity (inference).
struct DropoutMasks {
  RowMatrix input;   // length x input_dim
  RowMatrix output;  // length x hidden

  bool identity() const { return input.size() == 0 && output.size() == 0; }
};

DropoutMasks sample_masks(Rng& rng, std::size_t length, std::size_t input_dim, std::size_t hidden,
                          double keep_prob);

struct StepResult {
  Eigen::VectorXd h;       // recurrent state
  Eigen::VectorXd c;       // cell state
  Eigen::VectorXd output;  // h with the output mask applied
};

/// One LSTM step. Masks may be empty (identity).
StepResult lstm_step(const Model& model, const Eigen::VectorXd& x, const Eigen::VectorXd& h_prev,
                     const Eigen::VectorXd& c_prev, const Eigen::VectorXd& input_mask = {},
                     const Eigen::VectorXd& output_mask = {});

/// Per-frame climax probabilities for the first `length` rows (rows past
/// `length` are padding and never read).
std::vector<double> forward_climax(const Model& model, const FrameMatrix& sequence,
                                   std::optional<std::size_t> length = std::nullopt,
                                   const DropoutMasks* masks = nullptr);

struct SentimentOutput {
  Eigen::VectorXd topic_logits;      // 38
  Eigen::VectorXd sentiment_logits;  // 30
};

/// Topic and sentiment logits from the last unpadded output.
SentimentOutput forward_sentiment(const Model& model, const FrameMatrix& sequence,
                                  std::optional<std::size_t> length = std::nullopt,
                                  const DropoutMasks* masks = nullptr);

// Losses ----------------------------------------------------------------------

/// max(z, 0) - z t + log(1 + exp(-|z|)).
double sigmoid_ce_element(double logit, double target);

/// Weighted mean of the element losses; 0 when all weights are 0.
double sigmoid_ce(std::span<const double> logits, std::span<const double> targets,
                  std::span<const double> weights);

/// -log softmax(logits)[index]; 0 when the index is absent.
double softmax_ce(std::span<const double> logits, std::optional<std::size_t> index);

// Training batch ---------------------------------------------------------------

/// One training sequence with its targets.
struct Example {
  const FrameMatrix* frames = nullptr;
  std::size_t length = 0;
  std::vector<double> climax_targets;                 // climax task: one per frame
  std::array<double, kNumSentiments> sentiment_targets{};
  std::array<double, kNumSentiments> sentiment_weights{};
  int topic = -1;
};

struct Gradients {
  double loss = 0.0;
  Eigen::VectorXd grad;                   // same layout as Model::flat()
  std::vector<RowMatrix> input_grads;     // per example, when requested
};

/// Batch loss: climax = frame-weighted mean sigmoid CE; sentiment =
/// weighted-mean sigmoid CE over (video, class) + mean topic softmax CE.
double batch_loss(const Model& model, std::span<const Example> batch,
                  std::span<const DropoutMasks> masks = {});

/// Exact gradient of batch_loss by backpropagation through time. Per-example
/// gradients are summed in example order regardless of `jobs`.
Gradients backward(const Model& model, std::span<const Example> batch,
                   std::span<const DropoutMasks> masks = {}, bool want_input_grads = false,
                   int jobs = 1);

// Optimizer ---------------------------------------------------------------------

struct RmsPropConfig {
  double learning_rate = 2e-4;
  double decay = 0.95;
  double momentum = 1e-8;
  double epsilon = 1e-10;
};

struct RmsPropState {
  Eigen::VectorXd mean_square;
  Eigen::VectorXd momentum;
  std::int64_t step = 0;

  static RmsPropState zeros(Eigen::Index n);
};

/// ms <- decay ms + (1 - decay) g^2; mom <- momentum mom + lr g / sqrt(ms + eps);
/// p <- p - mom.
void rmsprop_update(Eigen::Ref<Eigen::VectorXd> params, const Eigen::VectorXd& grads,
                    RmsPropState& state, const RmsPropConfig& config);

// Checkpoints ---------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public FormatError {
 public:
  enum class Kind { kBadMagic, kVersion, kLayout, kTask, kTruncated, kCorrupt };
  CheckpointError(Kind kind, const std::string& what, std::uint64_t offset)
      : FormatError(what, offset), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

struct ModelCheckpoint {
  Model model{ModelConfig{}};
  std::optional<Standardizer> standardizer;
  RmsPropConfig optimizer;
  RmsPropState optimizer_state;
  std::uint64_t seed = 0;
  std::int64_t step = 0;
  double keep_prob = 0.5;
  std::string metadata_json = "{}";  // free-form extra metadata (object)
};

std::string encode_checkpoint(const ModelCheckpoint& ckpt);
ModelCheckpoint decode_checkpoint(std::string_view bytes, std::optional<Task> expected_task = std::nullopt);
void save_checkpoint(const std::filesystem::path& path, const ModelCheckpoint& ckpt);
ModelCheckpoint load_checkpoint(const std::filesystem::path& path,
                                std::optional<Task> expected_task = std::nullopt);

}  // namespace adstory
