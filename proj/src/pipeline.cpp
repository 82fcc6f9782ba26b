#include "adstory/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <thread>

#include "adstory/trainer.hpp"

namespace adstory {

SignalTrack extract_files(const std::filesystem::path& video, const std::filesystem::path& audio,
                          const SignalOptions& options) {
  const auto frames = read_y4m(video);
  const auto pcm = read_wav(audio);
  return extract_signals(frames, pcm, options);
}

std::map<std::string, SignalTrack> extract_corpus(const DataDir& dir,
                                                  std::span<const VideoRecord> records,
                                                  const SignalOptions& options, int jobs) {
  std::vector<SignalTrack> tracks(records.size());
  std::vector<std::exception_ptr> errors(records.size());
  SignalOptions per_video = options;
  per_video.jobs = 1;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < records.size(); i = next++) {
      try {
        tracks[i] = extract_files(dir.video(records[i].video_id), dir.audio(records[i].video_id), per_video);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int width = std::max(1, jobs);
  if (width == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < width; ++t) pool.emplace_back(worker);
  }
  // Report the first failure in record order.
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::map<std::string, SignalTrack> out;
  for (std::size_t i = 0; i < records.size(); ++i) out.emplace(records[i].video_id, std::move(tracks[i]));
  return out;
}

std::vector<double> climax_probabilities(const ModelCheckpoint& ckpt, const FrameMatrix& raw) {
  if (ckpt.model.config().task != Task::kClimax)
    throw ValidationError("climax probabilities need a climax checkpoint");
  FrameMatrix m = raw.topRows(std::min<Eigen::Index>(raw.rows(), kMaxSequenceLength));
  if (ckpt.standardizer) ckpt.standardizer->apply(m);
  auto probs = forward_climax(ckpt.model, m);
  probs.resize(static_cast<std::size_t>(raw.rows()), 0.0);
  return probs;
}

Dataset build_dataset(std::span<const VideoRecord> records, std::span<const FeatureRecord> features,
                      const std::map<std::string, SignalTrack>& signals, Task task,
                      const ModelCheckpoint* climax_model, std::size_t max_len) {
  if (records.empty()) throw ValidationError("no videos");
  // features are sorted by video id; locate each video's run
  std::map<std::string_view, std::span<const FeatureRecord>> by_video;
  for (std::size_t i = 0; i < features.size();) {
    std::size_t j = i;
    while (j < features.size() && features[j].video_id == features[i].video_id) ++j;
    by_video.emplace(features[i].video_id, features.subspan(i, j - i));
    i = j;
  }
  Dataset data;
  for (const auto& rec : records) {
    const auto f = by_video.find(rec.video_id);
    if (f == by_video.end()) throw ValidationError("no features for video '" + rec.video_id + "'");
    const auto s = signals.find(rec.video_id);
    if (s == signals.end()) throw ValidationError("no signals for video '" + rec.video_id + "'");
    auto frames = assemble(f->second, s->second);
    if (task == Task::kSentiment) {
      std::vector<double> probs(frames.size(), 0.0);
      if (climax_model) probs = climax_probabilities(*climax_model, to_matrix(frames, frames.size()));
      frames = inject_climax(std::move(frames), probs);
    }
    data.videos.push_back(make_video_tensor(rec, frames, max_len));
  }
  return data;
}

Dataset load_dataset(const DataDir& dir, Task task, const ModelCheckpoint* climax_model,
                     std::size_t max_len) {
  const auto records = read_annotations(dir.annotations());
  const auto features = read_features(dir.features());
  const auto signals = read_signals(dir.signals());
  return build_dataset(records, features, signals, task, climax_model, max_len);
}

Dataset standardized_for(const ModelCheckpoint& ckpt, const Dataset& data) {
  if (data.dim() != ckpt.model.config().input_dim)
    throw ValidationError("dataset has " + std::to_string(data.dim()) + " features, checkpoint expects " +
                          std::to_string(ckpt.model.config().input_dim));
  return ckpt.standardizer ? standardize(data, *ckpt.standardizer) : data;
}

std::vector<PredictionRow> predict_lstm(const ModelCheckpoint& ckpt, const Dataset& data,
                                        std::size_t k) {
  const auto z = standardized_for(ckpt, data);
  const auto probs = predict_climax_probs(ckpt.model, z);
  std::vector<PredictionRow> rows;
  for (std::size_t i = 0; i < z.videos.size(); ++i) {
    if (probs[i].empty()) continue;
    rows.push_back({z.videos[i].video_id, top_k_peaks(PerSecondSeries{probs[i]}, k, ClimaxMethod::kLstm), k});
  }
  return rows;
}

RankedPredictions ranked(std::span<const PredictionRow> rows) {
  RankedPredictions out;
  for (const auto& r : rows) {
    if (out.count(r.video_id)) throw ValidationError("duplicate prediction for video '" + r.video_id + "'");
    out.emplace(r.video_id, r.prediction.timestamps_sec);
  }
  return out;
}

}  // namespace adstory
