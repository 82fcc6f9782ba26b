#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "adstory/common.hpp"
#include "adstory/vocab.hpp"

namespace adstory {

using LumaPlane = std::vector<std::uint8_t>;

/// Decoded video: luma planes only. Frame k sits at t = k / fps.
struct FrameSeq {
  int width = 0;
  int height = 0;
  Rational fps{25, 1};
  std::vector<LumaPlane> frames;

  std::size_t size() const { return frames.size(); }
  double time_of(std::size_t k) const {
    return static_cast<double>(k) * static_cast<double>(fps.den) /
           static_cast<double>(fps.num);
  }
};

/// Mono PCM samples normalized to [-1, 1].
struct AudioTrack {
  int sample_rate = 0;
  std::vector<double> samples;
};

struct WorkerMark {
  bool has_climax = false;
  std::optional<double> t_sec;
  bool rejected = false;

  bool accepted_mark() const { return has_climax && !rejected && t_sec.has_value(); }
};

struct VideoRecord {
  std::string video_id;
  double duration_sec = 0.0;
  double fps = 0.0;
  std::vector<WorkerMark> workers;
  std::array<int, kNumSentiments> sentiment_votes{};
  std::optional<std::size_t> topic;

  /// Climax timestamps from accepted (non-rejected, has_climax) workers.
  std::vector<double> accepted_marks() const;
};

inline constexpr std::size_t kResnetDim = 2048;
inline constexpr std::size_t kPlacesDim = 365;
inline constexpr std::size_t kObjectsDim = 80;
inline constexpr std::size_t kFacesDim = 10;
inline constexpr std::size_t kMaxVotes = 5;

struct FeatureRecord {
  std::string video_id;
  std::int64_t frame_idx = 0;
  double t_sec = 0.0;
  std::vector<double> resnet;
  std::vector<double> places;
  std::vector<double> objects;
  std::vector<double> faces;
};

// Y4M ---------------------------------------------------------------------

enum class Chroma { k420, k444, kMono };

/// Parses a YUV4MPEG2 stream, keeping only the luma plane of each frame.
/// Throws FormatError (with byte offset) on a malformed header, truncated
/// frame payload or unsupported chroma subsampling.
FrameSeq read_y4m(const std::filesystem::path& path);
FrameSeq parse_y4m(std::string_view bytes);

/// Writes luma planes as a Y4M stream. Chroma planes are filled with 128.
void write_y4m(const std::filesystem::path& path, const FrameSeq& video,
               Chroma chroma = Chroma::k420);
std::string encode_y4m(const FrameSeq& video, Chroma chroma = Chroma::k420);

// WAV ---------------------------------------------------------------------

/// Reads 16-bit PCM RIFF/WAVE, mono or stereo. Stereo is downmixed by the
/// per-sample mean; samples are scaled by 1/32768.
AudioTrack read_wav(const std::filesystem::path& path);
AudioTrack parse_wav(std::string_view bytes);

/// Writes mono 16-bit PCM; samples are clamped to [-1, 1) and rounded.
void write_wav(const std::filesystem::path& path, const AudioTrack& audio);
std::string encode_wav(const AudioTrack& audio);

// Annotations / features ---------------------------------------------------

std::vector<VideoRecord> read_annotations(const std::filesystem::path& path);
std::vector<VideoRecord> parse_annotations(std::string_view jsonl);
std::string annotation_line(const VideoRecord& record);

/// Validated feature records sorted by (video_id, frame_idx).
std::vector<FeatureRecord> read_features(const std::filesystem::path& path);
std::vector<FeatureRecord> parse_features(std::string_view jsonl);
std::string feature_line(const FeatureRecord& record);

/// Checks FeatureRecord dimension and range invariants; throws
/// ValidationError naming the violated block.
void validate_feature(const FeatureRecord& record, std::size_t line = 0);

std::string read_file(const std::filesystem::path& path);

}  // namespace adstory
