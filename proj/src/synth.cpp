#include "adstory/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "adstory/climax_unsup.hpp"

namespace adstory {

std::string_view synth_kind_name(SynthKind k) {
  return k == SynthKind::kClimax ? "climax" : "sentiment";
}

std::optional<SynthKind> parse_synth_kind(std::string_view name) {
  if (name == "climax") return SynthKind::kClimax;
  if (name == "sentiment") return SynthKind::kSentiment;
  return std::nullopt;
}

std::size_t planted_dimension(std::size_t c) { return (c + kPlacesDim - 4) % kPlacesDim; }

namespace {

constexpr double kPi = 3.14159265358979323846;

double round4(double x) { return std::round(x * 1e4) / 1e4; }

int frame_of_second(int s, Rational fps) {
  // first frame k with floor(k / fps) == s
  return static_cast<int>((static_cast<std::int64_t>(s) * fps.num + fps.den - 1) / fps.den);
}

std::vector<int> climax_seconds(const SynthConfig& cfg, Rng& rng) {
  const int range = cfg.climax_hi - cfg.climax_lo + 1;
  std::vector<int> out;
  for (std::size_t i = 0; i + static_cast<std::size_t>(range) <= cfg.n; i += range)
    for (int s = cfg.climax_lo; s <= cfg.climax_hi; ++s) out.push_back(s);
  std::vector<int> pool;
  for (int s = cfg.climax_lo; s <= cfg.climax_hi; ++s) pool.push_back(s);
  shuffle(pool.begin(), pool.end(), rng);
  for (std::size_t i = 0; out.size() < cfg.n; ++i) out.push_back(pool[i]);
  shuffle(out.begin(), out.end(), rng);
  return out;
}

struct Shot {
  double base;
  double amplitude;
  int period;
  double gradient;
};

FrameSeq render_video(const SynthConfig& cfg, int n_frames, const std::vector<int>& cut_frames,
                      Rng& rng) {
  FrameSeq v;
  v.width = cfg.width;
  v.height = cfg.height;
  v.fps = cfg.fps;
  const int periods[] = {8, 12, 16, 24};
  Shot shot{};
  int shot_index = -1, shot_start = 0;
  for (int k = 0; k < n_frames; ++k) {
    if (k == 0 || std::binary_search(cut_frames.begin(), cut_frames.end(), k)) {
      ++shot_index;
      shot_start = k;
      // Alternate dark and bright shots so that every cut is a hard one.
      shot.base = shot_index % 2 == 0 ? uniform(rng, 50, 80) : uniform(rng, 170, 200);
      shot.amplitude = uniform(rng, 15, 30);
      shot.period = periods[uniform_index(rng, 4)];
      shot.gradient = uniform(rng, -10, 10);
    }
    const int j = k - shot_start;
    LumaPlane plane(static_cast<std::size_t>(cfg.width * cfg.height));
    for (int y = 0; y < cfg.height; ++y)
      for (int x = 0; x < cfg.width; ++x) {
        // Horizontal drift of one pixel per frame; the period divides the
        // width so the histogram is constant within a shot.
        const double phase = 2.0 * kPi * static_cast<double>(x - j) / shot.period;
        const double value = shot.base + shot.amplitude * std::sin(phase) +
                             shot.gradient * (static_cast<double>(y) / cfg.height - 0.5);
        plane[static_cast<std::size_t>(y * cfg.width + x)] =
            static_cast<std::uint8_t>(std::clamp(std::lround(value), 0L, 255L));
      }
    v.frames.push_back(std::move(plane));
  }
  return v;
}

AudioTrack render_audio(const SynthConfig& cfg, int duration, int climax, Rng& rng) {
  AudioTrack a;
  a.sample_rate = cfg.sample_rate;
  a.samples.resize(static_cast<std::size_t>(duration) * static_cast<std::size_t>(cfg.sample_rate));
  std::vector<double> level(static_cast<std::size_t>(duration));
  for (auto& l : level) l = uniform(rng, 0.05, cfg.background_max);
  for (std::size_t n = 0; n < a.samples.size(); ++n) {
    const auto s = n / static_cast<std::size_t>(cfg.sample_rate);
    const double t = static_cast<double>(n) / cfg.sample_rate;
    const double frac = t - static_cast<double>(s);
    const double amp = (static_cast<int>(s) == climax && frac < 0.5) ? cfg.spike_amplitude : level[s];
    a.samples[n] = amp * std::sin(2.0 * kPi * 220.0 * t);
  }
  return a;
}

// Random distribution over places with `planted` mass pinned on given dims.
std::vector<double> places_vector(const std::vector<std::size_t>& planted_dims, Rng& rng) {
  std::vector<double> p(kPlacesDim);
  double total = 0.0;
  for (auto& x : p) {
    const double u = uniform01(rng);
    x = u * u * u;
    total += x;
  }
  const double planted_mass = planted_dims.empty() ? 0.0 : 0.6;
  for (auto& x : p) x *= (1.0 - planted_mass) / total;
  for (auto d : planted_dims) p[d] += planted_mass / static_cast<double>(planted_dims.size());
  for (auto& x : p) x = round4(x);
  // Put the rounding residue on the largest entry so the sum stays 1.
  double sum = 0.0;
  for (double x : p) sum += x;
  auto it = std::max_element(p.begin(), p.end());
  *it = round4(*it + (1.0 - sum));
  return p;
}

std::vector<FeatureRecord> render_features(const SynthConfig& cfg, const std::string& id,
                                           int duration,
                                           const std::vector<std::pair<int, int>>& windows,
                                           const std::vector<std::size_t>& active, Rng& rng) {
  std::vector<FeatureRecord> out;
  for (int s = 0; s < duration; ++s) {
    FeatureRecord r;
    r.video_id = id;
    r.frame_idx = s;
    r.t_sec = s;
    r.resnet.assign(kResnetDim, 0.0);
    r.objects.assign(kObjectsDim, 0.0);
    r.faces.assign(kFacesDim, 0.0);
    if (cfg.kind == SynthKind::kClimax) {
      r.places.assign(kPlacesDim, 0.0);
      r.places.back() = 1.0;
    } else {
      for (auto& x : r.resnet)
        if (uniform01(rng) < 0.1) x = round4(uniform(rng, 0.0, 2.0));
      for (auto& x : r.objects)
        if (uniform01(rng) < 0.05) x = round4(uniform01(rng));
      for (std::size_t i = 0; i < 8; ++i) r.faces[i] = round4(uniform01(rng) / 8.0);
      r.faces[8] = round4(uniform(rng, -1.0, 1.0));
      r.faces[9] = round4(uniform(rng, -1.0, 1.0));
      std::vector<std::size_t> dims;
      for (std::size_t i = 0; i < active.size(); ++i)
        if (s >= windows[i].first && s < windows[i].second) dims.push_back(planted_dimension(active[i]));
      r.places = places_vector(dims, rng);
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace

SynthCorpus synthesize(const SynthConfig& cfg) {
  if (cfg.n < 5) throw ValidationError("synthetic corpus needs n >= 5");
  if (cfg.climax_lo < 1 || cfg.climax_hi < cfg.climax_lo || cfg.min_duration <= cfg.climax_hi + 1 ||
      cfg.max_duration < cfg.min_duration)
    throw ValidationError("inconsistent synthetic duration / climax range");
  if (!cfg.fps.positive() || cfg.width < 2 || cfg.height < 2 || cfg.sample_rate <= 0)
    throw ValidationError("invalid synthetic media parameters");
  if (cfg.planted_class < 0 || cfg.planted_class >= static_cast<int>(kNumSentiments))
    throw ValidationError("planted class out of range");

  SynthCorpus corpus;
  corpus.config = cfg;
  Rng rng(cfg.seed);
  const auto climaxes = climax_seconds(cfg, rng);

  for (std::size_t i = 0; i < cfg.n; ++i) {
    Rng vr(derive_seed(cfg.seed, i + 1));
    SynthVideo sv;
    char id[32];
    std::snprintf(id, sizeof id, "syn%04zu", i);
    const int duration = cfg.min_duration +
                         static_cast<int>(uniform_index(vr, static_cast<std::uint64_t>(
                                                                cfg.max_duration - cfg.min_duration + 1)));
    const int climax = climaxes[i];
    sv.climax_second = climax;
    const int n_frames = static_cast<int>(static_cast<std::int64_t>(duration) * cfg.fps.num / cfg.fps.den);

    // A cut at the climax plus two ordinary cuts away from it.
    std::vector<int> cut_seconds = {climax};
    std::vector<int> free;
    for (int s = 1; s < duration; ++s)
      if (std::abs(s - climax) > 3) free.push_back(s);
    while (cut_seconds.size() < 3 && !free.empty()) {
      const int s = free[uniform_index(vr, free.size())];
      cut_seconds.push_back(s);
      std::erase_if(free, [&](int f) { return std::abs(f - s) <= 1; });
    }
    std::vector<int> cut_frames;
    for (int s : cut_seconds) cut_frames.push_back(frame_of_second(s, cfg.fps));
    std::sort(cut_frames.begin(), cut_frames.end());

    sv.video = render_video(cfg, n_frames, cut_frames, vr);
    sv.audio = render_audio(cfg, duration, climax, vr);

    auto& rec = sv.record;
    rec.video_id = id;
    rec.duration_sec = duration;
    rec.fps = cfg.fps.value();
    for (int w = 0; w < 3; ++w)
      rec.workers.push_back({true, climax + std::round(uniform(vr, 0.05, 0.95) * 100.0) / 100.0, false});
    rec.workers.push_back({true, std::round(uniform(vr, 0.0, duration - 1.0) * 100.0) / 100.0, true});
    rec.topic = static_cast<std::size_t>(uniform_index(vr, kNumTopics));

    std::vector<std::pair<int, int>> windows;
    for (std::size_t c = 0; c < kNumSentiments; ++c) {
      const double rate = static_cast<int>(c) == cfg.planted_class ? cfg.planted_rate : cfg.other_rate;
      if (uniform01(vr) >= rate) continue;
      sv.active_classes.push_back(c);
      rec.sentiment_votes[c] = 3 + static_cast<int>(uniform_index(vr, 3));
      const int len = 4 + static_cast<int>(uniform_index(vr, 5));
      const int start = static_cast<int>(uniform_index(vr, static_cast<std::uint64_t>(duration - len + 1)));
      windows.emplace_back(start, start + len);
    }
    sv.features = render_features(cfg, rec.video_id, duration, windows, sv.active_classes, vr);
    corpus.videos.push_back(std::move(sv));
  }
  return corpus;
}

std::string ground_truth_json(const SynthCorpus& corpus) {
  const auto& c = corpus.config;
  nlohmann::json j;
  j["generator"] = {{"kind", std::string(synth_kind_name(c.kind))},
                    {"n", c.n},
                    {"seed", c.seed},
                    {"width", c.width},
                    {"height", c.height},
                    {"fps", {c.fps.num, c.fps.den}},
                    {"sample_rate", c.sample_rate},
                    {"min_duration", c.min_duration},
                    {"max_duration", c.max_duration},
                    {"climax_lo", c.climax_lo},
                    {"climax_hi", c.climax_hi},
                    {"spike_amplitude", c.spike_amplitude},
                    {"background_max", c.background_max},
                    {"planted_class", c.planted_class},
                    {"planted_rate", c.planted_rate},
                    {"other_rate", c.other_rate}};
  j["videos"] = nlohmann::json::array();
  for (const auto& v : corpus.videos) {
    nlohmann::json jv;
    jv["video_id"] = v.record.video_id;
    jv["duration_sec"] = v.record.duration_sec;
    jv["climax_second"] = v.climax_second;
    jv["active_classes"] = nlohmann::json::array();
    jv["planted_dims"] = nlohmann::json::array();
    for (auto a : v.active_classes) {
      jv["active_classes"].push_back(std::string(sentiment_names()[a]));
      jv["planted_dims"].push_back(planted_dimension(a));
    }
    j["videos"].push_back(jv);
  }
  return j.dump(2) + "\n";
}

void write_corpus(const SynthCorpus& corpus, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "videos");
  fs::create_directories(dir / "audio");
  auto open = [](const fs::path& p) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw Error("cannot write " + p.string());
    return out;
  };
  auto ann = open(dir / "annotations.jsonl");
  auto feat = open(dir / "features.jsonl");
  for (const auto& v : corpus.videos) {
    write_y4m(dir / "videos" / (v.record.video_id + ".y4m"), v.video);
    write_wav(dir / "audio" / (v.record.video_id + ".wav"), v.audio);
    ann << annotation_line(v.record) << '\n';
    for (const auto& f : v.features) feat << feature_line(f) << '\n';
  }
  open(dir / "ground_truth.json") << ground_truth_json(corpus);
}

double analytic_baseline_recall(const SynthConfig& cfg, std::size_t k, int window) {
  const auto guess = heuristic_baseline(static_cast<std::size_t>(cfg.min_duration), k).timestamps_sec;
  int hits = 0;
  for (int c = cfg.climax_lo; c <= cfg.climax_hi; ++c) {
    bool hit = false;
    for (int p : guess) hit = hit || std::abs(p - c) <= window;
    hits += hit;
  }
  return static_cast<double>(hits) / (cfg.climax_hi - cfg.climax_lo + 1);
}

}  // namespace adstory
