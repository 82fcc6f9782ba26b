#include "adstory/climax_unsup.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace adstory {

std::string_view method_name(ClimaxMethod m) {
  switch (m) {
    case ClimaxMethod::kAudio: return "audio";
    case ClimaxMethod::kFlow: return "flow";
    case ClimaxMethod::kShots: return "shots";
    case ClimaxMethod::kBaseline: return "baseline";
    case ClimaxMethod::kLstm: return "lstm";
  }
  return "unknown";
}

std::optional<ClimaxMethod> parse_method(std::string_view name) {
  for (auto m : {ClimaxMethod::kAudio, ClimaxMethod::kFlow, ClimaxMethod::kShots,
                 ClimaxMethod::kBaseline, ClimaxMethod::kLstm})
    if (method_name(m) == name) return m;
  return std::nullopt;
}

PerSecondSignals aggregate_per_second(const SignalTrack& track) {
  const auto n = static_cast<std::int64_t>(track.size());
  const auto seconds = static_cast<std::size_t>(n ? seconds_for_frames(n, track.fps) : 0);
  PerSecondSignals out;
  out.audio.values.assign(seconds, 0.0);
  out.flow.values.assign(seconds, 0.0);
  out.shots.values.assign(seconds, 0.0);
  std::vector<std::size_t> frames_in(seconds, 0);
  for (std::int64_t k = 0; k < n; ++k) {
    const auto s = static_cast<std::size_t>(second_of_frame(k, track.fps));
    const auto kk = static_cast<std::size_t>(k);
    out.audio.values[s] = std::max(out.audio.values[s], track.audio[kk]);
    out.flow.values[s] += track.flow[kk];
    const auto& b = track.shots[kk];
    if (std::any_of(b.begin(), b.end(), [](auto x) { return x != 0; })) out.shots.values[s] += 1.0;
    ++frames_in[s];
  }
  for (std::size_t s = 0; s < seconds; ++s)
    if (frames_in[s]) out.flow.values[s] /= static_cast<double>(frames_in[s]);
  return out;
}

namespace {

/// Seconds ordered by value descending, ties to the earlier second.
std::vector<int> ranking(const std::vector<double>& values) {
  std::vector<int> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return values[a] > values[b]; });
  return order;
}

void pad_to(std::vector<int>& ts, std::size_t k) {
  if (ts.empty()) ts.push_back(0);
  while (ts.size() < k) ts.push_back(ts.back());
}

}  // namespace

ClimaxPrediction top_k_peaks(const PerSecondSeries& series, std::size_t k, ClimaxMethod method) {
  if (k == 0) throw ValidationError("top_k_peaks: k must be >= 1");
  if (series.values.empty()) throw ValidationError("top_k_peaks: empty series");
  auto order = ranking(series.values);
  if (order.size() > k) order.resize(k);
  pad_to(order, k);
  return {std::move(order), method};
}

ClimaxPrediction longest_run_centers(const PerSecondSeries& shots, std::size_t k) {
  if (k == 0) throw ValidationError("longest_run_centers: k must be >= 1");
  struct Run {
    int start, end;
  };
  std::vector<Run> runs;
  const int n = static_cast<int>(shots.values.size());
  for (int s = 0; s < n;) {
    if (shots.values[s] > 0) {
      int e = s;
      while (e + 1 < n && shots.values[e + 1] > 0) ++e;
      runs.push_back({s, e});
      s = e + 1;
    } else {
      ++s;
    }
  }
  std::stable_sort(runs.begin(), runs.end(), [](const Run& a, const Run& b) {
    return (a.end - a.start) > (b.end - b.start);
  });

  ClimaxPrediction out{{}, ClimaxMethod::kShots};
  std::vector<bool> taken(static_cast<std::size_t>(n), false);
  for (const auto& r : runs) {
    if (out.timestamps_sec.size() == k) break;
    const int c = (r.start + r.end) / 2;
    out.timestamps_sec.push_back(c);
    taken[static_cast<std::size_t>(c)] = true;
  }
  if (out.timestamps_sec.size() < k) {
    for (int s : ranking(shots.values)) {
      if (out.timestamps_sec.size() == k) break;
      if (!taken[static_cast<std::size_t>(s)]) out.timestamps_sec.push_back(s);
    }
  }
  pad_to(out.timestamps_sec, k);
  return out;
}

ClimaxPrediction heuristic_baseline(std::size_t duration_sec, std::size_t k) {
  if (k != 1 && k != 3) throw ValidationError("heuristic_baseline: k must be 1 or 3");
  const int last = std::max<int>(static_cast<int>(duration_sec) - 1, 0);
  ClimaxPrediction out{{}, ClimaxMethod::kBaseline};
  for (int t : {5, 15, 25}) {
    if (out.timestamps_sec.size() == k) break;
    out.timestamps_sec.push_back(std::min(t, last));
  }
  return out;
}

ClimaxPrediction predict_from_signals(const SignalTrack& track, ClimaxMethod method,
                                      std::size_t k) {
  const auto per_second = aggregate_per_second(track);
  switch (method) {
    case ClimaxMethod::kAudio: return top_k_peaks(per_second.audio, k, method);
    case ClimaxMethod::kFlow: return top_k_peaks(per_second.flow, k, method);
    case ClimaxMethod::kShots: return longest_run_centers(per_second.shots, k);
    case ClimaxMethod::kBaseline: return heuristic_baseline(per_second.audio.duration_sec(), k);
    case ClimaxMethod::kLstm: break;
  }
  throw ValidationError("method 'lstm' needs a trained model, not signals alone");
}

// Predictions JSONL ---------------------------------------------------------

using nlohmann::json;

std::string prediction_line(const PredictionRow& row) {
  json j;
  j["video_id"] = row.video_id;
  j["method"] = std::string(method_name(row.prediction.method));
  j["k"] = row.k;
  j["timestamps_sec"] = row.prediction.timestamps_sec;
  return j.dump();
}

std::vector<PredictionRow> parse_predictions(std::string_view text) {
  std::vector<PredictionRow> rows;
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
      PredictionRow row;
      row.video_id = j.at("video_id").get<std::string>();
      const auto m = parse_method(j.at("method").get<std::string>());
      if (!m) throw ValidationError("unknown method", line_no);
      row.prediction.method = *m;
      row.k = j.at("k").get<std::size_t>();
      row.prediction.timestamps_sec = j.at("timestamps_sec").get<std::vector<int>>();
      if (row.k == 0 || row.prediction.timestamps_sec.size() != row.k)
        throw ValidationError("timestamps_sec must hold exactly k entries", line_no);
      for (int t : row.prediction.timestamps_sec)
        if (t < 0) throw ValidationError("negative timestamp", line_no);
      rows.push_back(std::move(row));
    } catch (const json::exception& e) {
      throw ValidationError(std::string("malformed prediction: ") + e.what(), line_no);
    }
  }
  return rows;
}

std::vector<PredictionRow> read_predictions(const std::filesystem::path& path) {
  return parse_predictions(read_file(path));
}

void write_predictions(const std::filesystem::path& path, const std::vector<PredictionRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& r : rows) out << prediction_line(r) << '\n';
}

}  // namespace adstory
