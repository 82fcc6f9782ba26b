#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <json.hpp>

#include "adstory/ingest.hpp"

namespace adstory {

using nlohmann::json;

std::vector<double> VideoRecord::accepted_marks() const {
  std::vector<double> out;
  for (const auto& w : workers)
    if (w.accepted_mark()) out.push_back(*w.t_sec);
  return out;
}

namespace {

template <class F>
void for_each_line(std::string_view text, F&& f) {
  std::size_t line_no = 0, pos = 0;
  while (pos <= text.size()) {
    auto eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    ++line_no;
    auto line = text.substr(pos, eol - pos);
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.remove_suffix(1);
    if (!line.empty()) f(line, line_no);
    pos = eol + 1;
  }
}

json parse_line(std::string_view line, std::size_t line_no) {
  try {
    auto j = json::parse(line);
    if (!j.is_object()) throw ValidationError("expected a JSON object", line_no);
    return j;
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("malformed JSON: ") + e.what(), line_no);
  }
}

double finite_number(const json& j, const char* key, std::size_t line_no) {
  if (!j.contains(key) || !j.at(key).is_number())
    throw ValidationError(std::string("missing or non-numeric '") + key + "'", line_no);
  const double v = j.at(key).get<double>();
  if (!std::isfinite(v)) throw ValidationError(std::string("non-finite '") + key + "'", line_no);
  return v;
}

std::string string_field(const json& j, const char* key, std::size_t line_no) {
  if (!j.contains(key) || !j.at(key).is_string())
    throw ValidationError(std::string("missing or non-string '") + key + "'", line_no);
  return j.at(key).get<std::string>();
}

std::vector<double> vector_field(const json& j, const char* key, std::size_t line_no) {
  if (!j.contains(key) || !j.at(key).is_array())
    throw ValidationError(std::string(key) + ": missing array", line_no);
  std::vector<double> out;
  out.reserve(j.at(key).size());
  for (const auto& x : j.at(key)) {
    if (!x.is_number()) throw ValidationError(std::string(key) + ": non-numeric entry", line_no);
    out.push_back(x.get<double>());
  }
  return out;
}

VideoRecord parse_record(const json& j, std::size_t line_no) {
  VideoRecord r;
  r.video_id = string_field(j, "video_id", line_no);
  if (r.video_id.empty()) throw ValidationError("empty video_id", line_no);
  r.duration_sec = finite_number(j, "duration_sec", line_no);
  if (r.duration_sec < 0) throw ValidationError("negative duration_sec", line_no);
  r.fps = finite_number(j, "fps", line_no);
  if (r.fps < 0) throw ValidationError("negative fps", line_no);

  if (j.contains("workers")) {
    if (!j.at("workers").is_array()) throw ValidationError("workers must be an array", line_no);
    for (const auto& w : j.at("workers")) {
      WorkerMark m;
      m.has_climax = w.value("has_climax", false);
      m.rejected = w.value("rejected", false);
      if (w.contains("t_sec") && !w.at("t_sec").is_null()) {
        if (!w.at("t_sec").is_number()) throw ValidationError("t_sec must be a number", line_no);
        const double t = w.at("t_sec").get<double>();
        if (!(t >= 0.0 && t <= r.duration_sec))
          throw ValidationError("t_sec " + std::to_string(t) + " outside [0, " +
                                    std::to_string(r.duration_sec) + "]",
                                line_no);
        m.t_sec = t;
      }
      r.workers.push_back(m);
    }
  }

  if (j.contains("sentiment_votes")) {
    const auto& votes = j.at("sentiment_votes");
    if (!votes.is_object()) throw ValidationError("sentiment_votes must be an object", line_no);
    for (const auto& [name, count] : votes.items()) {
      const auto idx = sentiment_index(name);
      if (!idx) throw ValidationError("unknown sentiment '" + name + "'", line_no);
      if (!count.is_number_integer())
        throw ValidationError("vote count for '" + name + "' must be an integer", line_no);
      const int c = count.get<int>();
      if (c < 0 || c > static_cast<int>(kMaxVotes))
        throw ValidationError("vote count for '" + name + "' outside [0, 5]", line_no);
      r.sentiment_votes[*idx] = c;
    }
  }

  if (j.contains("topic") && !j.at("topic").is_null()) {
    if (!j.at("topic").is_string()) throw ValidationError("topic must be a string", line_no);
    const auto name = j.at("topic").get<std::string>();
    const auto idx = topic_index(name);
    if (!idx) throw ValidationError("unknown topic '" + name + "'", line_no);
    r.topic = *idx;
  }
  return r;
}

void check_range(const std::vector<double>& v, std::size_t begin, std::size_t end, double lo,
                 double hi, const char* block, std::size_t line_no) {
  for (std::size_t i = begin; i < end; ++i)
    if (!(v[i] >= lo && v[i] <= hi))
      throw ValidationError(std::string(block) + ": entry " + std::to_string(i) + " = " +
                                std::to_string(v[i]) + " outside [" + std::to_string(lo) + ", " +
                                std::to_string(hi) + "]",
                            line_no);
}

void check_dim(const std::vector<double>& v, std::size_t dim, const char* block,
               std::size_t line_no) {
  if (v.size() != dim)
    throw ValidationError(std::string(block) + ": expected " + std::to_string(dim) + ", got " +
                              std::to_string(v.size()),
                          line_no);
}

}  // namespace

std::vector<VideoRecord> parse_annotations(std::string_view jsonl) {
  std::vector<VideoRecord> out;
  std::set<std::string> seen;
  for_each_line(jsonl, [&](std::string_view line, std::size_t line_no) {
    auto r = parse_record(parse_line(line, line_no), line_no);
    if (!seen.insert(r.video_id).second)
      throw ValidationError("duplicate video_id '" + r.video_id + "'", line_no);
    out.push_back(std::move(r));
  });
  return out;
}

std::vector<VideoRecord> read_annotations(const std::filesystem::path& path) {
  return parse_annotations(read_file(path));
}

std::string annotation_line(const VideoRecord& r) {
  json j;
  j["video_id"] = r.video_id;
  j["duration_sec"] = r.duration_sec;
  j["fps"] = r.fps;
  j["workers"] = json::array();
  for (const auto& w : r.workers) {
    json jw;
    jw["has_climax"] = w.has_climax;
    jw["t_sec"] = w.t_sec ? json(*w.t_sec) : json(nullptr);
    jw["rejected"] = w.rejected;
    j["workers"].push_back(jw);
  }
  json votes = json::object();
  for (std::size_t s = 0; s < kNumSentiments; ++s)
    if (r.sentiment_votes[s] > 0) votes[std::string(sentiment_names()[s])] = r.sentiment_votes[s];
  j["sentiment_votes"] = votes;
  j["topic"] = r.topic ? json(std::string(topic_names()[*r.topic])) : json(nullptr);
  return j.dump();
}

void validate_feature(const FeatureRecord& r, std::size_t line_no) {
  check_dim(r.resnet, kResnetDim, "resnet", line_no);
  check_dim(r.places, kPlacesDim, "places", line_no);
  check_dim(r.objects, kObjectsDim, "objects", line_no);
  check_dim(r.faces, kFacesDim, "faces", line_no);
  for (double x : r.resnet)
    if (!std::isfinite(x)) throw ValidationError("resnet: non-finite entry", line_no);
  check_range(r.places, 0, kPlacesDim, 0.0, 1.0, "places", line_no);
  const double mass = std::accumulate(r.places.begin(), r.places.end(), 0.0);
  if (std::abs(mass - 1.0) > 1e-3)
    throw ValidationError("places: distribution sums to " + std::to_string(mass) +
                              ", expected 1 within 1e-3",
                          line_no);
  check_range(r.objects, 0, kObjectsDim, 0.0, 1.0, "objects", line_no);
  check_range(r.faces, 0, 8, 0.0, 1.0, "faces", line_no);
  check_range(r.faces, 8, 10, -1.0, 1.0, "faces", line_no);
  if (r.frame_idx < 0) throw ValidationError("negative frame_idx", line_no);
  if (!(r.t_sec >= 0.0) || !std::isfinite(r.t_sec))
    throw ValidationError("t_sec must be finite and non-negative", line_no);
}

std::vector<FeatureRecord> parse_features(std::string_view jsonl) {
  std::vector<FeatureRecord> out;
  for_each_line(jsonl, [&](std::string_view line, std::size_t line_no) {
    const auto j = parse_line(line, line_no);
    FeatureRecord r;
    r.video_id = string_field(j, "video_id", line_no);
    if (!j.contains("frame_idx") || !j.at("frame_idx").is_number_integer())
      throw ValidationError("missing or non-integer 'frame_idx'", line_no);
    r.frame_idx = j.at("frame_idx").get<std::int64_t>();
    r.t_sec = finite_number(j, "t_sec", line_no);
    r.resnet = vector_field(j, "resnet", line_no);
    r.places = vector_field(j, "places", line_no);
    r.objects = vector_field(j, "objects", line_no);
    r.faces = vector_field(j, "faces", line_no);
    validate_feature(r, line_no);
    out.push_back(std::move(r));
  });
  std::stable_sort(out.begin(), out.end(), [](const FeatureRecord& a, const FeatureRecord& b) {
    return std::tie(a.video_id, a.frame_idx) < std::tie(b.video_id, b.frame_idx);
  });
  for (std::size_t i = 1; i < out.size(); ++i) {
    const auto& prev = out[i - 1];
    const auto& cur = out[i];
    if (prev.video_id != cur.video_id) continue;
    if (prev.frame_idx == cur.frame_idx)
      throw ValidationError("video '" + cur.video_id + "': duplicate frame_idx " +
                            std::to_string(cur.frame_idx));
    if (cur.t_sec < prev.t_sec)
      throw ValidationError("video '" + cur.video_id + "': non-monotone t_sec at frame_idx " +
                            std::to_string(cur.frame_idx));
  }
  return out;
}

std::vector<FeatureRecord> read_features(const std::filesystem::path& path) {
  return parse_features(read_file(path));
}

std::string feature_line(const FeatureRecord& r) {
  json j;
  j["video_id"] = r.video_id;
  j["frame_idx"] = r.frame_idx;
  j["t_sec"] = r.t_sec;
  j["resnet"] = r.resnet;
  j["places"] = r.places;
  j["objects"] = r.objects;
  j["faces"] = r.faces;
  return j.dump();
}

}  // namespace adstory
