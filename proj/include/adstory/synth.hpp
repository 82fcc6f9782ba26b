#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "adstory/ingest.hpp"

namespace adstory {

enum class SynthKind { kClimax, kSentiment };

std::string_view synth_kind_name(SynthKind k);
std::optional<SynthKind> parse_synth_kind(std::string_view name);

struct SynthConfig {
  SynthKind kind = SynthKind::kClimax;
  std::size_t n = 50;
  std::uint64_t seed = 1;
  int width = 48;
  int height = 32;
  Rational fps{4, 1};
  int sample_rate = 8000;
  int min_duration = 30;  // seconds, inclusive
  int max_duration = 40;
  int climax_lo = 4;      // climax seconds are spread evenly over [lo, hi]
  int climax_hi = 28;
  double spike_amplitude = 0.95;
  double background_max = 0.3;
  int planted_class = 7;
  double planted_rate = 0.4;  // activation probability of the planted class
  double other_rate = 0.15;   // activation probability of the other classes
};

/// Places dimension carrying sentiment class c.
std::size_t planted_dimension(std::size_t sentiment_class);

struct SynthVideo {
  VideoRecord record;
  FrameSeq video;
  AudioTrack audio;
  std::vector<FeatureRecord> features;
  int climax_second = 0;
  std::vector<std::size_t> active_classes;
};

struct SynthCorpus {
  SynthConfig config;
  std::vector<SynthVideo> videos;
};

/// Deterministic corpus with known ground truth. Each video has an audio
/// burst and a hard cut at its climax second, three accepted worker marks
/// inside that second and one rejected worker. Climax seconds cover
/// [climax_lo, climax_hi] as evenly as n allows, in shuffled order. For the
/// sentiment kind, every active class lights its planted places dimension
/// over a window of seconds and receives 3 to 5 votes; inactive classes get
/// none. Non-signal feature blocks are constant for the climax kind.
SynthCorpus synthesize(const SynthConfig& config);

/// Writes videos/<id>.y4m, audio/<id>.wav, annotations.jsonl,
/// features.jsonl and ground_truth.json under `dir`.
void write_corpus(const SynthCorpus& corpus, const std::filesystem::path& dir);

/// Generator parameters and per-video truth as JSON.
std::string ground_truth_json(const SynthCorpus& corpus);

/// Recall of the fixed-timestamp baseline implied by a uniform climax second
/// over [climax_lo, climax_hi] (all durations exceed climax_hi).
double analytic_baseline_recall(const SynthConfig& config, std::size_t k, int window);

}  // namespace adstory
