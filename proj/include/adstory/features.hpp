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

#include "adstory/ingest.hpp"
#include "adstory/signals.hpp"

namespace adstory {

/// A named slice of the fused per-second feature vector.
struct LayoutBlock {
  std::string_view name;
  std::size_t offset;
  std::size_t length;
};

inline constexpr int kLayoutVersion = 1;
inline constexpr std::size_t kBaseFeatureDim = 2510;
inline constexpr std::size_t kClimaxFeatureDim = kBaseFeatureDim + 1;
inline constexpr std::size_t kMaxSequenceLength = 60;

/// resnet | flow | shots | audio | places | objects | faces | climax.
/// The trailing climax slot exists only for the sentiment task.
const std::array<LayoutBlock, 8>& feature_layout();
const LayoutBlock& layout_block(std::string_view name);

/// Hash of the layout descriptor (names, offsets, lengths, version).
std::uint64_t layout_hash();

struct FrameFeatures {
  std::vector<double> vector;  // 2510 or 2511 values
  double t_sec = 0.0;
};

/// Fuses one video's feature records with its signal track into one vector
/// per whole second. Feature records falling in the same second are
/// averaged; signals use the per-second statistics of aggregate_per_second,
/// with the shot block taken as the element-wise max over the second.
/// Throws ValidationError when a second has no feature record.
std::vector<FrameFeatures> assemble(std::span<const FeatureRecord> features,
                                    const SignalTrack& signals);

/// Appends one climax probability per frame.
std::vector<FrameFeatures> inject_climax(std::vector<FrameFeatures> frames,
                                         std::span<const double> climax_probs);

using FrameMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Model-ready video: one row per second plus labels.
struct VideoTensor {
  std::string video_id;
  FrameMatrix frames;                          // n_seconds x dim, n_seconds <= 60
  std::array<int, kNumSentiments> votes{};     // raw sentiment votes
  int topic = -1;                              // -1 when absent
  double duration_sec = 0.0;
  std::vector<double> climax_marks;            // accepted worker marks
  std::vector<double> climax_targets;          // per second, {0, 1}

  std::size_t length() const { return static_cast<std::size_t>(frames.rows()); }
};

struct Dataset {
  std::vector<VideoTensor> videos;

  std::size_t dim() const { return videos.empty() ? 0 : static_cast<std::size_t>(videos.front().frames.cols()); }
  const VideoTensor* find(std::string_view id) const;
};

FrameMatrix to_matrix(const std::vector<FrameFeatures>& frames, std::size_t max_len = kMaxSequenceLength);

/// Per-dimension z-scoring parameters.
struct Standardizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;  // max(std, 1e-6)

  void apply(FrameMatrix& m) const;
};

inline constexpr double kScaleFloor = 1e-6;

/// Fits on the rows of the listed videos only.
Standardizer fit_standardizer(const Dataset& data, std::span<const std::size_t> indices);
Dataset standardize(Dataset data, const Standardizer& params);

// Tensor cache --------------------------------------------------------------

std::string encode_tensor_cache(const Dataset& data);
Dataset decode_tensor_cache(std::string_view bytes);
void write_tensor_cache(const std::filesystem::path& path, const Dataset& data);
Dataset read_tensor_cache(const std::filesystem::path& path);

}  // namespace adstory
