#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "adstory/pipeline.hpp"
#include "adstory/synth.hpp"
#include "adstory/trainer.hpp"
#include "helpers.hpp"

using namespace adstory;

namespace {

SynthConfig small_config(SynthKind kind = SynthKind::kClimax) {
  SynthConfig c;
  c.kind = kind;
  c.n = 6;
  c.seed = 5;
  c.width = 48;
  c.height = 8;
  c.fps = {2, 1};
  c.sample_rate = 400;
  c.min_duration = 14;
  c.max_duration = 16;
  c.climax_lo = 2;
  c.climax_hi = 7;
  return c;
}

std::vector<VideoRecord> records_of(const SynthCorpus& c) {
  std::vector<VideoRecord> out;
  for (const auto& v : c.videos) out.push_back(v.record);
  return out;
}

std::vector<FeatureRecord> features_of(const SynthCorpus& c) {
  std::vector<FeatureRecord> out;
  for (const auto& v : c.videos) out.insert(out.end(), v.features.begin(), v.features.end());
  return out;
}

std::map<std::string, SignalTrack> signals_of(const SynthCorpus& c) {
  std::map<std::string, SignalTrack> out;
  for (const auto& v : c.videos) out.emplace(v.record.video_id, extract_signals(v.video, v.audio));
  return out;
}

}  // namespace

TEST_CASE("synthesize is deterministic in the seed") {
  const auto a = synthesize(small_config());
  const auto b = synthesize(small_config());
  CHECK(ground_truth_json(a) == ground_truth_json(b));
  for (std::size_t i = 0; i < a.videos.size(); ++i) {
    CHECK(a.videos[i].video.frames == b.videos[i].video.frames);
    CHECK(a.videos[i].audio.samples == b.videos[i].audio.samples);
    CHECK(annotation_line(a.videos[i].record) == annotation_line(b.videos[i].record));
  }
  auto other = small_config();
  other.seed = 6;
  CHECK(ground_truth_json(synthesize(other)) != ground_truth_json(a));
}

TEST_CASE("synthesize: climax seconds cover the range and marks sit inside them") {
  const auto corpus = synthesize(small_config());
  REQUIRE(corpus.videos.size() == 6);
  std::multiset<int> seconds;
  for (const auto& v : corpus.videos) {
    seconds.insert(v.climax_second);
    const auto& r = v.record;
    CHECK(r.duration_sec >= 14);
    CHECK(r.duration_sec <= 16);
    CHECK(r.fps == 2.0);
    REQUIRE(r.workers.size() == 4);
    const auto marks = r.accepted_marks();
    CHECK(marks.size() == 3);
    for (double m : marks) {
      CHECK(m >= v.climax_second);
      CHECK(m < v.climax_second + 1);
    }
    CHECK(r.workers[3].rejected);
    CHECK(v.video.frames.size() == static_cast<std::size_t>(r.duration_sec * 2));
    CHECK(v.audio.samples.size() == static_cast<std::size_t>(r.duration_sec * 400));
    CHECK(v.features.size() == static_cast<std::size_t>(r.duration_sec));
  }
  CHECK(seconds == std::multiset<int>{2, 3, 4, 5, 6, 7});

  auto twelve = small_config();
  twelve.n = 14;
  std::map<int, int> counts;
  for (const auto& v : synthesize(twelve).videos) ++counts[v.climax_second];
  CHECK(counts.size() == 6);
  for (const auto& [s, n] : counts) {
    CHECK(n >= 2);
    CHECK(n <= 3);
  }
}

TEST_CASE("synthesize: the climax second carries the loudest audio and a cut") {
  const auto corpus = synthesize(small_config());
  for (const auto& v : corpus.videos) {
    const auto track = extract_signals(v.video, v.audio);
    const auto audio = predict_from_signals(track, ClimaxMethod::kAudio, 1);
    REQUIRE(audio.timestamps_sec.size() == 1);
    CHECK(audio.timestamps_sec[0] == v.climax_second);
    const auto first = static_cast<std::size_t>(v.climax_second * 2);
    CHECK(track.shots[first][0] == 1);
    // three hard cuts in total
    int cuts = 0;
    for (const auto& s : track.shots) cuts += s[0];
    CHECK(cuts == 3);
  }
}

TEST_CASE("synthesize: sentiment votes follow the planted places dimensions") {
  auto cfg = small_config(SynthKind::kSentiment);
  cfg.n = 20;
  const auto corpus = synthesize(cfg);
  int planted_active = 0;
  for (const auto& v : corpus.videos) {
    std::set<std::size_t> active(v.active_classes.begin(), v.active_classes.end());
    for (std::size_t c = 0; c < kNumSentiments; ++c) {
      const int votes = v.record.sentiment_votes[c];
      if (active.count(c)) {
        CHECK(votes >= 3);
        CHECK(votes <= 5);
      } else {
        CHECK(votes == 0);
      }
    }
    planted_active += active.count(7) ? 1 : 0;
    REQUIRE(v.record.topic.has_value());
    CHECK(*v.record.topic < kNumTopics);

    // Every active class lights its dimension for at least four seconds;
    // the dimension stays below 0.02 otherwise.
    for (std::size_t c = 0; c < kNumSentiments; ++c) {
      const auto d = planted_dimension(c);
      int lit = 0;
      for (const auto& f : v.features) lit += f.places[d] >= 0.02 ? 1 : 0;
      if (active.count(c))
        CHECK(lit >= 4);
      else if (std::none_of(v.active_classes.begin(), v.active_classes.end(),
                            [&](std::size_t a) { return planted_dimension(a) == d; }))
        CHECK(lit == 0);
    }
    for (const auto& f : v.features) {
      double sum = 0.0;
      for (double x : f.places) sum += x;
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
      validate_feature(f);
    }
  }
  CHECK(planted_dimension(7) == 3);
  CHECK(planted_active > 0);
}

TEST_CASE("synthesize rejects inconsistent configs") {
  auto c = small_config();
  c.n = 4;
  CHECK_THROWS_AS(synthesize(c), ValidationError);
  c = small_config();
  c.min_duration = 8;
  CHECK_THROWS_AS(synthesize(c), ValidationError);
  // narrow videos leave room for fewer ordinary cuts
  c = small_config();
  c.min_duration = c.max_duration = 9;
  c.n = 30;
  for (const auto& v : synthesize(c).videos) CHECK(v.video.frames.size() == 18);
  c = small_config();
  c.planted_class = 38;
  CHECK_THROWS_AS(synthesize(c), ValidationError);
  CHECK(parse_synth_kind("sentiment") == SynthKind::kSentiment);
  CHECK_FALSE(parse_synth_kind("other").has_value());
}

TEST_CASE("analytic baseline recall matches a brute-force count") {
  SynthConfig cfg;
  CHECK(analytic_baseline_recall(cfg, 1, 0) == doctest::Approx(1.0 / 25.0));
  for (std::size_t k : {1u, 3u})
    for (int w = 0; w <= 2; ++w) {
      // guesses at 5, 15, 25 (top-1 keeps 5)
      const std::vector<int> guesses = k == 1 ? std::vector<int>{5} : std::vector<int>{5, 15, 25};
      int hits = 0;
      for (int c = cfg.climax_lo; c <= cfg.climax_hi; ++c) {
        bool hit = false;
        for (int g : guesses) hit = hit || std::abs(g - c) <= w;
        hits += hit;
      }
      const double expected = hits / 25.0;
      CHECK(analytic_baseline_recall(cfg, k, w) == doctest::Approx(expected).epsilon(1e-15));
    }

  // Over a stratified corpus the measured recall equals the analytic one.
  const auto corpus = synthesize(cfg);
  const auto records = records_of(corpus);
  RankedPredictions preds;
  for (const auto& r : records)
    preds[r.video_id] = heuristic_baseline(static_cast<std::size_t>(r.duration_sec), 3).timestamps_sec;
  for (std::size_t k : {1u, 3u})
    for (int w = 0; w <= 2; ++w)
      CHECK(climax_recall(preds, records, k, w) == doctest::Approx(analytic_baseline_recall(cfg, k, w)));
}

TEST_CASE("write_corpus round trip and corpus extraction") {
  testing::TempDir tmp;
  const auto corpus = synthesize(small_config(SynthKind::kSentiment));
  write_corpus(corpus, tmp.path());
  DataDir dir{tmp.path()};
  const auto records = read_annotations(dir.annotations());
  REQUIRE(records.size() == corpus.videos.size());
  for (std::size_t i = 0; i < records.size(); ++i)
    CHECK(annotation_line(records[i]) == annotation_line(corpus.videos[i].record));
  CHECK(read_features(dir.features()).size() == features_of(corpus).size());
  const auto& v0 = corpus.videos[0];
  CHECK(read_y4m(dir.video(v0.record.video_id)).frames == v0.video.frames);
  const auto wav = read_wav(dir.audio(v0.record.video_id));
  REQUIRE(wav.samples.size() == v0.audio.samples.size());
  for (std::size_t i = 0; i < wav.samples.size(); ++i) CHECK(std::abs(wav.samples[i] - v0.audio.samples[i]) < 1e-4);

  const auto one = extract_corpus(dir, records, {}, 1);
  const auto two = extract_corpus(dir, records, {}, 2);
  REQUIRE(one.size() == records.size());
  for (const auto& [id, t] : one) {
    const auto& u = two.at(id);
    CHECK(t.audio == u.audio);
    CHECK(t.flow == u.flow);
    CHECK(t.shots == u.shots);
  }
  CHECK(extract_files(dir.video(v0.record.video_id), dir.audio(v0.record.video_id)).audio == one.at(v0.record.video_id).audio);

  write_signals(dir.signals(), one);
  const auto data = load_dataset(dir, Task::kSentiment);
  CHECK(data.videos.size() == records.size());
  CHECK(data.dim() == kClimaxFeatureDim);
}

TEST_CASE("build_dataset: climax slot and lstm predictions") {
  const auto corpus = synthesize(small_config());
  const auto records = records_of(corpus);
  const auto feats = features_of(corpus);
  const auto sig = signals_of(corpus);

  const auto base = build_dataset(records, feats, sig, Task::kClimax);
  REQUIRE(base.videos.size() == 6);
  CHECK(base.dim() == kBaseFeatureDim);
  for (const auto& v : base.videos) {
    CHECK(v.length() == static_cast<std::size_t>(v.duration_sec));
    CHECK(v.climax_marks.size() == 3);
  }

  const auto zero_slot = build_dataset(records, feats, sig, Task::kSentiment);
  CHECK(zero_slot.dim() == kClimaxFeatureDim);
  for (const auto& v : zero_slot.videos) CHECK(v.frames.col(kBaseFeatureDim).isZero(0.0));

  ModelCheckpoint ck;
  ck.model.init_uniform(3);
  const auto with_model = build_dataset(records, feats, sig, Task::kSentiment, &ck);
  for (std::size_t i = 0; i < with_model.videos.size(); ++i) {
    const auto probs = climax_probabilities(ck, base.videos[i].frames);
    REQUIRE(probs.size() == base.videos[i].length());
    for (std::size_t s = 0; s < probs.size(); ++s)
      CHECK(with_model.videos[i].frames(static_cast<Eigen::Index>(s), kBaseFeatureDim) == probs[s]);
  }

  const auto rows = predict_lstm(ck, base, 3);
  REQUIRE(rows.size() == 6);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].video_id == base.videos[i].video_id);
    const auto probs = climax_probabilities(ck, base.videos[i].frames);
    PerSecondSeries s;
    s.values = probs;
    CHECK(rows[i].prediction.timestamps_sec == top_k_peaks(s, 3, ClimaxMethod::kLstm).timestamps_sec);
  }

  CHECK_THROWS_AS(ranked(std::vector<PredictionRow>{rows[0], rows[0]}), ValidationError);
}
