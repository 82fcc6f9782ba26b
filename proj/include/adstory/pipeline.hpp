#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "adstory/climax_unsup.hpp"
#include "adstory/eval.hpp"
#include "adstory/features.hpp"
#include "adstory/seqmodel.hpp"
#include "adstory/signals.hpp"

namespace adstory {

/// Standard layout of a data directory.
struct DataDir {
  std::filesystem::path root;

  std::filesystem::path annotations() const { return root / "annotations.jsonl"; }
  std::filesystem::path features() const { return root / "features.jsonl"; }
  std::filesystem::path signals() const { return root / "signals.jsonl"; }
  std::filesystem::path video(const std::string& id) const { return root / "videos" / (id + ".y4m"); }
  std::filesystem::path audio(const std::string& id) const { return root / "audio" / (id + ".wav"); }
};

SignalTrack extract_files(const std::filesystem::path& video, const std::filesystem::path& audio,
                          const SignalOptions& options = {});

/// Signals for every annotated video of a data directory; videos are spread
/// over `jobs` threads, results do not depend on it.
std::map<std::string, SignalTrack> extract_corpus(const DataDir& dir,
                                                  std::span<const VideoRecord> records,
                                                  const SignalOptions& options = {}, int jobs = 1);

/// Per-second climax probabilities of an unstandardized base-layout video.
/// Seconds past the model's sequence cap get 0.
std::vector<double> climax_probabilities(const ModelCheckpoint& climax_model,
                                         const FrameMatrix& raw_frames);

/// Assembles one tensor per record. The sentiment task appends the climax
/// slot, filled from `climax_model` when given and with zeros otherwise.
Dataset build_dataset(std::span<const VideoRecord> records, std::span<const FeatureRecord> features,
                      const std::map<std::string, SignalTrack>& signals, Task task,
                      const ModelCheckpoint* climax_model = nullptr,
                      std::size_t max_len = kMaxSequenceLength);

Dataset load_dataset(const DataDir& dir, Task task, const ModelCheckpoint* climax_model = nullptr,
                     std::size_t max_len = kMaxSequenceLength);

/// Applies the checkpoint's standardizer to a copy of `data`.
Dataset standardized_for(const ModelCheckpoint& ckpt, const Dataset& data);

/// Top-k seconds of the LSTM climax probabilities per video.
std::vector<PredictionRow> predict_lstm(const ModelCheckpoint& ckpt, const Dataset& data,
                                        std::size_t k);

RankedPredictions ranked(std::span<const PredictionRow> rows);

}  // namespace adstory
