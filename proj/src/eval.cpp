#include "adstory/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace adstory {

std::size_t climax_recall_denominator(std::span<const VideoRecord> records) {
  return static_cast<std::size_t>(std::count_if(records.begin(), records.end(), [](const auto& r) {
    return !r.accepted_marks().empty();
  }));
}

double climax_recall(const RankedPredictions& predictions, std::span<const VideoRecord> records,
                     std::size_t k, int window) {
  if (k == 0 || window < 0) throw ValidationError("climax_recall: need k >= 1 and window >= 0");
  std::map<std::string_view, const VideoRecord*> by_id;
  for (const auto& r : records) by_id.emplace(r.video_id, &r);
  for (const auto& [id, _] : predictions)
    if (!by_id.count(id)) throw ValidationError("prediction for unknown video '" + id + "'");

  std::size_t denom = 0, correct = 0;
  for (const auto& r : records) {
    const auto marks = r.accepted_marks();
    if (marks.empty()) continue;
    ++denom;
    const auto it = predictions.find(r.video_id);
    if (it == predictions.end()) continue;
    const std::size_t n = std::min(k, it->second.size());
    bool hit = false;
    for (std::size_t i = 0; i < n && !hit; ++i)
      for (double g : marks)
        if (std::abs(static_cast<long long>(it->second[i]) -
                     static_cast<long long>(std::floor(g))) <= window) {
          hit = true;
          break;
        }
    if (hit) ++correct;
  }
  return denom ? static_cast<double>(correct) / static_cast<double>(denom) : 0.0;
}

std::vector<LabelSet> agreement_labels(std::span<const VideoRecord> records, int k) {
  std::vector<LabelSet> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    LabelSet s;
    for (std::size_t c = 0; c < kNumSentiments; ++c) s[c] = r.sentiment_votes[c] >= k;
    out.push_back(s);
  }
  return out;
}

double average_precision(std::span<const double> scores, const std::vector<bool>& positives,
                         std::span<const std::string> ids) {
  if (scores.empty()) throw ValidationError("average_precision: empty score list");
  if (positives.size() != scores.size() || ids.size() != scores.size())
    throw ValidationError("average_precision: length mismatch");
  const auto n_pos = static_cast<std::size_t>(std::count(positives.begin(), positives.end(), true));
  if (n_pos == 0) throw ValidationError("average_precision: no positives");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return ids[a] < ids[b];
  });

  // best[i] = max precision over ranks whose recall >= i/10
  std::array<double, 11> best{};
  std::size_t tp = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (positives[order[rank]]) ++tp;
    const double precision = static_cast<double>(tp) / static_cast<double>(rank + 1);
    for (std::size_t i = 0; i <= 10; ++i)
      if (tp * 10 >= i * n_pos) best[i] = std::max(best[i], precision);
  }
  double sum = 0.0;
  for (double b : best) sum += b;
  return sum / 11.0;
}

ClimaxMetrics climax_metrics(const RankedPredictions& predictions,
                             std::span<const VideoRecord> records) {
  ClimaxMetrics m;
  m.n_videos = climax_recall_denominator(records);
  for (std::size_t ki = 0; ki < kRecallKs.size(); ++ki)
    for (std::size_t wi = 0; wi < kRecallWindows.size(); ++wi)
      m.recall[ki][wi] = climax_recall(predictions, records, kRecallKs[ki], kRecallWindows[wi]);
  return m;
}

std::vector<SentimentLevel> sentiment_metrics(const Eigen::MatrixXd& scores,
                                              std::span<const VideoRecord> records) {
  if (scores.rows() != static_cast<Eigen::Index>(records.size()) ||
      scores.cols() != static_cast<Eigen::Index>(kNumSentiments))
    throw ValidationError("sentiment_metrics: score matrix must be videos x 30");
  if (!scores.allFinite()) throw ValidationError("sentiment_metrics: non-finite scores");
  std::vector<std::string> ids;
  for (const auto& r : records) ids.push_back(r.video_id);

  std::vector<SentimentLevel> out;
  for (int k : kAgreementLevels) {
    const auto labels = agreement_labels(records, k);
    SentimentLevel level;
    level.agreement = k;
    double ap_sum = 0.0;
    std::size_t ap_count = 0;
    for (std::size_t c = 0; c < kNumSentiments; ++c) {
      std::vector<bool> pos(records.size());
      std::vector<double> col(records.size());
      for (std::size_t v = 0; v < records.size(); ++v) {
        pos[v] = labels[v][c];
        col[v] = scores(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(c));
      }
      if (std::find(pos.begin(), pos.end(), true) == pos.end()) {
        level.class_ap[c] = std::numeric_limits<double>::quiet_NaN();
        level.skipped.push_back(c);
        continue;
      }
      level.class_ap[c] = average_precision(col, pos, ids);
      ap_sum += level.class_ap[c];
      ++ap_count;
    }
    level.map = ap_count ? ap_sum / static_cast<double>(ap_count) : 0.0;

    std::size_t hits = 0;
    for (std::size_t v = 0; v < records.size(); ++v) {
      if (labels[v].none()) continue;
      ++level.n_eval;
      Eigen::Index best = 0;
      scores.row(static_cast<Eigen::Index>(v)).maxCoeff(&best);
      if (labels[v][static_cast<std::size_t>(best)]) ++hits;
    }
    level.acc_at_1 = level.n_eval ? static_cast<double>(hits) / static_cast<double>(level.n_eval) : 0.0;
    out.push_back(std::move(level));
  }
  return out;
}

std::vector<std::string> check_report(const EvalReport& report) {
  std::vector<std::string> bad;
  auto unit = [&](double x, const std::string& what) {
    if (!(x >= 0.0 && x <= 1.0)) bad.push_back(what + " outside [0, 1]");
  };
  if (report.task == "climax") {
    if (!report.climax) {
      bad.push_back(report.method + ": climax grid missing");
      return bad;
    }
    const auto& r = report.climax->recall;
    for (std::size_t ki = 0; ki < 2; ++ki)
      for (std::size_t wi = 0; wi < 3; ++wi) {
        unit(r[ki][wi], report.method + " recall");
        if (wi > 0 && r[ki][wi] < r[ki][wi - 1])
          bad.push_back(report.method + ": recall decreases with window");
      }
    for (std::size_t wi = 0; wi < 3; ++wi)
      if (r[1][wi] < r[0][wi]) bad.push_back(report.method + ": recall decreases with k");
  } else {
    if (report.sentiment.size() != kAgreementLevels.size())
      bad.push_back(report.method + ": agreement grid incomplete");
    for (const auto& l : report.sentiment) {
      unit(l.map, report.method + " mAP");
      unit(l.acc_at_1, report.method + " acc@1");
      for (std::size_t c = 0; c < kNumSentiments; ++c)
        if (!std::isnan(l.class_ap[c])) unit(l.class_ap[c], report.method + " class AP");
    }
  }
  return bad;
}

// Report rendering ---------------------------------------------------------------

using nlohmann::json;

namespace {

json level_json(const SentimentLevel& l) {
  json j;
  j["agreement"] = l.agreement;
  j["mAP"] = l.map;
  j["acc@1"] = l.acc_at_1;
  j["n_eval"] = l.n_eval;
  json ap = json::object();
  for (std::size_t c = 0; c < kNumSentiments; ++c)
    ap[std::string(sentiment_names()[c])] = std::isnan(l.class_ap[c]) ? json(nullptr) : json(l.class_ap[c]);
  j["per_class_ap"] = ap;
  j["skipped"] = json::array();
  for (auto c : l.skipped) j["skipped"].push_back(std::string(sentiment_names()[c]));
  return j;
}

}  // namespace

std::string report_json(std::span<const EvalReport> reports) {
  json root;
  root["report_version"] = kReportVersion;
  root["reports"] = json::array();
  for (const auto& r : reports) {
    json j;
    j["task"] = r.task;
    j["method"] = r.method;
    if (r.climax) {
      json grid;
      for (std::size_t ki = 0; ki < 2; ++ki) {
        json row;
        for (std::size_t wi = 0; wi < 3; ++wi)
          row["w" + std::to_string(kRecallWindows[wi])] = r.climax->recall[ki][wi];
        grid["top" + std::to_string(kRecallKs[ki])] = row;
      }
      j["recall"] = grid;
      j["n_videos"] = r.climax->n_videos;
    }
    if (!r.sentiment.empty()) {
      j["levels"] = json::array();
      for (const auto& l : r.sentiment) j["levels"].push_back(level_json(l));
    }
    root["reports"].push_back(j);
  }
  return root.dump(2) + "\n";
}

namespace {

std::vector<EvalReport> parse_reports(std::string_view text) {
  const auto root = json::parse(text);
  if (root.at("report_version").get<int>() != kReportVersion)
    throw ValidationError("unsupported report version");
  std::vector<EvalReport> out;
  for (const auto& j : root.at("reports")) {
    EvalReport r;
    r.task = j.at("task").get<std::string>();
    r.method = j.at("method").get<std::string>();
    if (j.contains("recall")) {
      ClimaxMetrics m;
      for (std::size_t ki = 0; ki < 2; ++ki)
        for (std::size_t wi = 0; wi < 3; ++wi)
          m.recall[ki][wi] = j.at("recall")
                                 .at("top" + std::to_string(kRecallKs[ki]))
                                 .at("w" + std::to_string(kRecallWindows[wi]))
                                 .get<double>();
      m.n_videos = j.at("n_videos").get<std::size_t>();
      r.climax = m;
    }
    if (j.contains("levels")) {
      for (const auto& jl : j.at("levels")) {
        SentimentLevel l;
        l.agreement = jl.at("agreement").get<int>();
        l.map = jl.at("mAP").get<double>();
        l.acc_at_1 = jl.at("acc@1").get<double>();
        l.n_eval = jl.at("n_eval").get<std::size_t>();
        for (std::size_t c = 0; c < kNumSentiments; ++c) {
          const auto& v = jl.at("per_class_ap").at(std::string(sentiment_names()[c]));
          l.class_ap[c] = v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
        }
        for (const auto& name : jl.at("skipped")) {
          const auto c = sentiment_index(name.get<std::string>());
          if (!c) throw ValidationError("unknown sentiment '" + name.get<std::string>() + "' in report");
          l.skipped.push_back(*c);
        }
        r.sentiment.push_back(std::move(l));
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace

std::vector<EvalReport> parse_report_json(std::string_view text) {
  try {
    return parse_reports(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed report: ") + e.what());
  }
}

std::string report_text(std::span<const EvalReport> reports) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3);
  const bool any_climax = std::any_of(reports.begin(), reports.end(),
                                      [](const auto& r) { return r.climax.has_value(); });
  if (any_climax) {
    os << "Climax recall (top-k within w seconds)\n";
    os << std::left << std::setw(16) << "method" << std::right;
    for (auto k : kRecallKs)
      for (auto w : kRecallWindows)
        os << std::setw(11) << ("top" + std::to_string(k) + "/w" + std::to_string(w));
    os << std::setw(10) << "videos" << "\n";
    for (const auto& r : reports) {
      if (!r.climax) continue;
      os << std::left << std::setw(16) << r.method << std::right;
      for (const auto& row : r.climax->recall)
        for (double x : row) os << std::setw(11) << x;
      os << std::setw(10) << r.climax->n_videos << "\n";
    }
  }
  for (const auto& r : reports) {
    if (r.sentiment.empty()) continue;
    os << "Sentiment (" << r.method << ")\n";
    os << std::left << std::setw(12) << "agreement" << std::right << std::setw(10) << "mAP"
       << std::setw(10) << "acc@1" << std::setw(10) << "n_eval" << std::setw(10) << "skipped"
       << "\n";
    for (const auto& l : r.sentiment)
      os << std::left << std::setw(12) << l.agreement << std::right << std::setw(10) << l.map
         << std::setw(10) << l.acc_at_1 << std::setw(10) << l.n_eval << std::setw(10)
         << l.skipped.size() << "\n";
  }
  return os.str();
}

void emit_report(std::span<const EvalReport> reports, const std::filesystem::path& base) {
  auto write = [](const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw Error("cannot write " + p.string());
    out << text;
  };
  auto json_path = base;
  json_path += ".json";
  auto text_path = base;
  text_path += ".txt";
  write(json_path, report_json(reports));
  write(text_path, report_text(reports));
}

std::string plot_csv(const PerSecondSignals& series, std::span<const double> climax_probs) {
  const std::size_t n = series.audio.duration_sec();
  if (!climax_probs.empty() && climax_probs.size() < n)
    throw ValidationError("plot_csv: fewer climax probabilities than seconds");
  std::ostringstream os;
  os << "second,audio,shots,flow,climax_prob\n";
  for (std::size_t s = 0; s < n; ++s) {
    os << s << ',' << format_shortest(series.audio.values[s]) << ','
       << format_shortest(series.shots.values[s]) << ',' << format_shortest(series.flow.values[s])
       << ',';
    if (!climax_probs.empty()) os << format_shortest(climax_probs[s]);
    os << '\n';
  }
  return os.str();
}

void write_plot_csv(const std::filesystem::path& path, const PerSecondSignals& series,
                    std::span<const double> climax_probs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << plot_csv(series, climax_probs);
}

}  // namespace adstory
