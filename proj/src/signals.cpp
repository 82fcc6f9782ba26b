#include "adstory/signals.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <thread>

#include <json.hpp>

namespace adstory {

std::vector<double> audio_amplitude(const AudioTrack& audio, Rational fps, std::size_t n_frames) {
  if (!fps.positive()) throw ValidationError("fps must be positive");
  if (audio.sample_rate <= 0) throw ValidationError("sample rate must be positive");
  std::vector<double> amp(n_frames, 0.0);
  const std::int64_t sr = audio.sample_rate;
  for (std::size_t i = 0; i < audio.samples.size(); ++i) {
    // sample i at t = i / sr belongs to frame floor(t * fps)
    const std::int64_t k = (static_cast<std::int64_t>(i) * fps.num) / (sr * fps.den);
    if (k >= static_cast<std::int64_t>(n_frames)) break;
    amp[static_cast<std::size_t>(k)] =
        std::max(amp[static_cast<std::size_t>(k)], std::abs(audio.samples[i]));
  }
  return amp;
}

FlowField dense_flow(std::span<const std::uint8_t> prev, std::span<const std::uint8_t> next,
                     int width, int height, const FlowOptions& options) {
  const auto n = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  if (width < 2 || height < 2) throw ValidationError("dense_flow needs frames of at least 2x2");
  if (prev.size() != n || next.size() != n)
    throw ValidationError("dense_flow: frame dimensions do not match");

  auto at = [&](std::span<const std::uint8_t> img, int y, int x) {
    x = std::clamp(x, 0, width - 1);
    y = std::clamp(y, 0, height - 1);
    return static_cast<double>(img[static_cast<std::size_t>(y) * width + x]);
  };

  // Derivatives averaged over the 2x2x2 cube anchored at (y, x).
  std::vector<double> ix(n), iy(n), it(n), denom(n);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double a00 = at(prev, y, x), a01 = at(prev, y, x + 1);
      const double a10 = at(prev, y + 1, x), a11 = at(prev, y + 1, x + 1);
      const double b00 = at(next, y, x), b01 = at(next, y, x + 1);
      const double b10 = at(next, y + 1, x), b11 = at(next, y + 1, x + 1);
      const auto i = static_cast<std::size_t>(y) * width + x;
      ix[i] = 0.25 * ((a01 - a00) + (a11 - a10) + (b01 - b00) + (b11 - b10));
      iy[i] = 0.25 * ((a10 - a00) + (a11 - a01) + (b10 - b00) + (b11 - b01));
      it[i] = 0.25 * ((b00 - a00) + (b01 - a01) + (b10 - a10) + (b11 - a11));
      denom[i] = options.alpha * options.alpha + ix[i] * ix[i] + iy[i] * iy[i];
    }
  }

  FlowField f{width, height, std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
  std::vector<double> u_next(n), v_next(n);
  auto local_mean = [&](const std::vector<double>& w, int y, int x) {
    auto g = [&](int yy, int xx) {
      xx = std::clamp(xx, 0, width - 1);
      yy = std::clamp(yy, 0, height - 1);
      return w[static_cast<std::size_t>(yy) * width + xx];
    };
    return (g(y - 1, x) + g(y + 1, x) + g(y, x - 1) + g(y, x + 1)) / 6.0 +
           (g(y - 1, x - 1) + g(y - 1, x + 1) + g(y + 1, x - 1) + g(y + 1, x + 1)) / 12.0;
  };
  for (int iter = 0; iter < options.iterations; ++iter) {
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const auto i = static_cast<std::size_t>(y) * width + x;
        const double ub = local_mean(f.u, y, x);
        const double vb = local_mean(f.v, y, x);
        const double t = (ix[i] * ub + iy[i] * vb + it[i]) / denom[i];
        u_next[i] = ub - ix[i] * t;
        v_next[i] = vb - iy[i] * t;
      }
    }
    f.u.swap(u_next);
    f.v.swap(v_next);
  }
  return f;
}

double flow_magnitude(const FlowField& field) {
  const std::size_t n = field.u.size();
  if (n == 0) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += std::hypot(field.u[i], field.v[i]);
  return sum / static_cast<double>(n);
}

std::array<double, kHistogramBins> luma_histogram(std::span<const std::uint8_t> plane) {
  std::array<double, kHistogramBins> h{};
  for (auto p : plane) h[p >> 2] += 1.0;
  if (!plane.empty())
    for (auto& x : h) x /= static_cast<double>(plane.size());
  return h;
}

double histogram_distance(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  const auto ha = luma_histogram(a);
  const auto hb = luma_histogram(b);
  double d = 0.0;
  for (int i = 0; i < kHistogramBins; ++i) d += std::abs(ha[i] - hb[i]);
  return 0.5 * d;
}

ShotIndicator threshold_distance(double d, const ShotThresholds& thresholds) {
  ShotIndicator b{};
  for (std::size_t m = 0; m < kShotLevels; ++m) b[m] = d > thresholds[m] ? 1 : 0;
  return b;
}

std::vector<ShotIndicator> shot_boundaries(const FrameSeq& frames,
                                           const ShotThresholds& thresholds) {
  std::vector<ShotIndicator> out(frames.size(), ShotIndicator{});
  for (std::size_t k = 1; k < frames.size(); ++k)
    out[k] = threshold_distance(histogram_distance(frames.frames[k - 1], frames.frames[k]),
                                thresholds);
  return out;
}

std::vector<double> flow_track(const FrameSeq& frames, const FlowOptions& options, int jobs) {
  const std::size_t n = frames.size();
  std::vector<double> out(n, 0.0);
  if (n < 2) return out;
  auto work = [&](std::size_t first, std::size_t last) {
    for (std::size_t k = first; k < last; ++k)
      out[k] = flow_magnitude(
          dense_flow(frames.frames[k - 1], frames.frames[k], frames.width, frames.height, options));
  };
  const auto n_jobs = static_cast<std::size_t>(std::clamp(jobs, 1, 64));
  if (n_jobs == 1) {
    work(1, n);
    return out;
  }
  std::vector<std::jthread> pool;
  const std::size_t pairs = n - 1;
  for (std::size_t j = 0; j < n_jobs; ++j) {
    const std::size_t first = 1 + pairs * j / n_jobs;
    const std::size_t last = 1 + pairs * (j + 1) / n_jobs;
    if (first < last) pool.emplace_back(work, first, last);
  }
  pool.clear();  // joins
  return out;
}

SignalTrack extract_signals(const FrameSeq& frames, const AudioTrack& audio,
                            const SignalOptions& options) {
  SignalTrack track;
  track.fps = frames.fps;
  track.audio = audio_amplitude(audio, frames.fps, frames.size());
  track.shots = shot_boundaries(frames, options.shot_thresholds);
  track.flow = flow_track(frames, options.flow, options.jobs);
  return track;
}

// Signals cache ------------------------------------------------------------

using nlohmann::json;

std::string signal_lines(const std::string& video_id, const SignalTrack& track) {
  std::string out;
  for (std::size_t k = 0; k < track.size(); ++k) {
    json j;
    j["video_id"] = video_id;
    j["frame_idx"] = k;
    j["t_sec"] = static_cast<double>(k) * static_cast<double>(track.fps.den) /
                 static_cast<double>(track.fps.num);
    j["fps"] = {track.fps.num, track.fps.den};
    j["a"] = track.audio[k];
    j["b"] = track.shots[k];
    j["o"] = track.flow[k];
    out += j.dump();
    out += '\n';
  }
  return out;
}

void write_signals(const std::filesystem::path& path,
                   const std::map<std::string, SignalTrack>& tracks) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& [id, track] : tracks) out << signal_lines(id, track);
}

std::map<std::string, SignalTrack> parse_signals(std::string_view text) {
  struct Row {
    std::int64_t frame;
    Rational fps;
    double a, o;
    ShotIndicator b;
  };
  std::map<std::string, std::vector<Row>> rows;
  std::size_t line_no = 0, pos = 0;
  while (pos < text.size()) {
    auto eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    const auto line = text.substr(pos, eol - pos);
    ++line_no;
    pos = eol + 1;
    if (line.find_first_not_of(" \r\t") == std::string_view::npos) continue;
    try {
      const auto j = json::parse(line);
      Row r{};
      r.frame = j.at("frame_idx").get<std::int64_t>();
      r.fps = {j.at("fps").at(0).get<std::int64_t>(), j.at("fps").at(1).get<std::int64_t>()};
      r.a = j.at("a").get<double>();
      r.o = j.at("o").get<double>();
      const auto& b = j.at("b");
      if (!b.is_array() || b.size() != kShotLevels)
        throw ValidationError("b: expected 5 indicators", line_no);
      for (std::size_t m = 0; m < kShotLevels; ++m) {
        const int v = b.at(m).get<int>();
        if (v != 0 && v != 1) throw ValidationError("b: indicators must be 0 or 1", line_no);
        r.b[m] = static_cast<std::uint8_t>(v);
      }
      if (!r.fps.positive()) throw ValidationError("fps must be positive", line_no);
      if (!(r.a >= 0.0 && r.a <= 1.0)) throw ValidationError("a outside [0, 1]", line_no);
      if (!(r.o >= 0.0) || !std::isfinite(r.o)) throw ValidationError("o must be >= 0", line_no);
      rows[j.at("video_id").get<std::string>()].push_back(r);
    } catch (const json::exception& e) {
      throw ValidationError(std::string("malformed signals line: ") + e.what(), line_no);
    }
  }
  std::map<std::string, SignalTrack> out;
  for (auto& [id, rs] : rows) {
    std::sort(rs.begin(), rs.end(), [](const Row& x, const Row& y) { return x.frame < y.frame; });
    SignalTrack t;
    t.fps = rs.front().fps.reduced();
    for (std::size_t k = 0; k < rs.size(); ++k) {
      if (rs[k].frame != static_cast<std::int64_t>(k))
        throw ValidationError("signals for '" + id + "' are not contiguous at frame " +
                              std::to_string(k));
      if (!(rs[k].fps == t.fps))
        throw ValidationError("signals for '" + id + "' mix frame rates");
      t.audio.push_back(rs[k].a);
      t.shots.push_back(rs[k].b);
      t.flow.push_back(rs[k].o);
    }
    out.emplace(id, std::move(t));
  }
  return out;
}

std::map<std::string, SignalTrack> read_signals(const std::filesystem::path& path) {
  return parse_signals(read_file(path));
}

}  // namespace adstory
