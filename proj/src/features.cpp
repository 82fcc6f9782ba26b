#include "adstory/features.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "adstory/climax_unsup.hpp"
#include "binio.hpp"

namespace adstory {

const std::array<LayoutBlock, 8>& feature_layout() {
  static constexpr std::array<LayoutBlock, 8> layout = {{
      {"resnet", 0, kResnetDim},
      {"flow", 2048, 1},
      {"shots", 2049, kShotLevels},
      {"audio", 2054, 1},
      {"places", 2055, kPlacesDim},
      {"objects", 2420, kObjectsDim},
      {"faces", 2500, kFacesDim},
      {"climax", 2510, 1},
  }};
  return layout;
}

const LayoutBlock& layout_block(std::string_view name) {
  for (const auto& b : feature_layout())
    if (b.name == name) return b;
  throw ValidationError("unknown layout block '" + std::string(name) + "'");
}

std::uint64_t layout_hash() {
  std::string desc = "v" + std::to_string(kLayoutVersion);
  for (const auto& b : feature_layout())
    desc += ";" + std::string(b.name) + ":" + std::to_string(b.offset) + ":" +
            std::to_string(b.length);
  return fnv1a64(desc);
}

namespace {

// Checked once at startup: blocks are contiguous and end at the declared dims.
[[maybe_unused]] const bool kLayoutChecked = [] {
  std::size_t expect = 0;
  for (const auto& b : feature_layout()) {
    if (b.offset != expect) throw std::logic_error("feature layout is not contiguous");
    expect += b.length;
  }
  if (expect != kClimaxFeatureDim) throw std::logic_error("feature layout length mismatch");
  return true;
}();

void copy_block(std::vector<double>& dst, std::string_view block, std::span<const double> src) {
  const auto& b = layout_block(block);
  if (src.size() != b.length)
    throw ValidationError(std::string(block) + ": expected " + std::to_string(b.length) +
                          " values, got " + std::to_string(src.size()));
  std::copy(src.begin(), src.end(), dst.begin() + static_cast<std::ptrdiff_t>(b.offset));
}

}  // namespace

std::vector<FrameFeatures> assemble(std::span<const FeatureRecord> features,
                                    const SignalTrack& signals) {
  const auto per_second = aggregate_per_second(signals);
  const std::size_t seconds = per_second.audio.duration_sec();

  // element-wise max of b^k within each second
  std::vector<std::array<double, kShotLevels>> shots(seconds, std::array<double, kShotLevels>{});
  for (std::size_t k = 0; k < signals.size(); ++k) {
    const auto s = static_cast<std::size_t>(second_of_frame(static_cast<std::int64_t>(k), signals.fps));
    for (std::size_t m = 0; m < kShotLevels; ++m)
      shots[s][m] = std::max(shots[s][m], static_cast<double>(signals.shots[k][m]));
  }

  std::vector<std::vector<double>> sums(seconds);
  std::vector<std::size_t> counts(seconds, 0);
  std::vector<double> scratch(kBaseFeatureDim);
  for (const auto& rec : features) {
    const auto s = static_cast<std::size_t>(std::floor(rec.t_sec));
    if (s >= seconds) continue;
    copy_block(scratch, "resnet", rec.resnet);
    copy_block(scratch, "places", rec.places);
    copy_block(scratch, "objects", rec.objects);
    copy_block(scratch, "faces", rec.faces);
    if (counts[s]++ == 0) {
      sums[s] = scratch;
    } else {
      for (std::size_t i = 0; i < kBaseFeatureDim; ++i) sums[s][i] += scratch[i];
    }
  }

  std::vector<FrameFeatures> out(seconds);
  for (std::size_t s = 0; s < seconds; ++s) {
    if (counts[s] == 0)
      throw ValidationError("no feature record for second " + std::to_string(s) +
                            (features.empty() ? std::string() : " of video '" + features.front().video_id + "'"));
    auto& v = out[s].vector;
    v = std::move(sums[s]);
    if (counts[s] > 1)
      for (auto& x : v) x /= static_cast<double>(counts[s]);
    v[layout_block("flow").offset] = per_second.flow.values[s];
    copy_block(v, "shots", shots[s]);
    v[layout_block("audio").offset] = per_second.audio.values[s];
    out[s].t_sec = static_cast<double>(s);
  }
  return out;
}

std::vector<FrameFeatures> inject_climax(std::vector<FrameFeatures> frames,
                                         std::span<const double> climax_probs) {
  if (climax_probs.size() != frames.size())
    throw ValidationError("inject_climax: " + std::to_string(climax_probs.size()) +
                          " probabilities for " + std::to_string(frames.size()) + " frames");
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (frames[i].vector.size() != kBaseFeatureDim)
      throw ValidationError("inject_climax: frame vector must have 2510 values");
    frames[i].vector.push_back(climax_probs[i]);
  }
  return frames;
}

const VideoTensor* Dataset::find(std::string_view id) const {
  for (const auto& v : videos)
    if (v.video_id == id) return &v;
  return nullptr;
}

FrameMatrix to_matrix(const std::vector<FrameFeatures>& frames, std::size_t max_len) {
  const std::size_t n = std::min(frames.size(), max_len);
  const std::size_t dim = frames.empty() ? 0 : frames.front().vector.size();
  FrameMatrix m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < n; ++i) {
    if (frames[i].vector.size() != dim) throw ValidationError("ragged frame vectors");
    for (std::size_t j = 0; j < dim; ++j) {
      if (!std::isfinite(frames[i].vector[j])) throw ValidationError("non-finite feature value");
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = frames[i].vector[j];
    }
  }
  return m;
}

void Standardizer::apply(FrameMatrix& m) const {
  if (m.cols() != mean.size()) throw ValidationError("standardizer dimension mismatch");
  m = ((m.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array()).matrix();
}

Standardizer fit_standardizer(const Dataset& data, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ValidationError("cannot standardize an empty training set");
  const auto dim = static_cast<Eigen::Index>(data.videos.at(indices.front()).frames.cols());
  // Welford, one pass over rows.
  Eigen::ArrayXd mean = Eigen::ArrayXd::Zero(dim);
  Eigen::ArrayXd m2 = Eigen::ArrayXd::Zero(dim);
  double count = 0.0;
  for (auto idx : indices) {
    const auto& f = data.videos.at(idx).frames;
    if (f.cols() != dim) throw ValidationError("standardize: mixed feature dimensions");
    for (Eigen::Index r = 0; r < f.rows(); ++r) {
      count += 1.0;
      const Eigen::ArrayXd x = f.row(r).transpose().array();
      const Eigen::ArrayXd delta = x - mean;
      mean += delta / count;
      m2 += delta * (x - mean);
    }
  }
  if (count == 0.0) throw ValidationError("cannot standardize: training set has no frames");
  Standardizer s;
  s.mean = mean.matrix();
  s.scale = (m2 / count).sqrt().max(kScaleFloor).matrix();
  return s;
}

Dataset standardize(Dataset data, const Standardizer& params) {
  for (auto& v : data.videos) params.apply(v.frames);
  return data;
}

// Tensor cache --------------------------------------------------------------

namespace {
constexpr std::string_view kTensorMagic = "ADSTENS\x01";
constexpr std::uint32_t kTensorVersion = 1;
}  // namespace

std::string encode_tensor_cache(const Dataset& data) {
  binio::Writer w;
  w.put_bytes(kTensorMagic);
  w.put<std::uint32_t>(kTensorVersion);
  w.put<std::uint64_t>(layout_hash());
  w.put<std::uint64_t>(data.videos.size());
  for (const auto& v : data.videos) {
    w.put_string(v.video_id);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(v.frames.rows()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(v.frames.cols()));
    w.put_doubles(v.frames.data(), static_cast<std::size_t>(v.frames.size()));
    for (int c : v.votes) w.put<std::int32_t>(c);
    w.put<std::int32_t>(v.topic);
    w.put<double>(v.duration_sec);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(v.climax_marks.size()));
    w.put_doubles(v.climax_marks.data(), v.climax_marks.size());
    w.put<std::uint32_t>(static_cast<std::uint32_t>(v.climax_targets.size()));
    w.put_doubles(v.climax_targets.data(), v.climax_targets.size());
  }
  return std::move(w.str());
}

Dataset decode_tensor_cache(std::string_view bytes) {
  binio::Reader r(bytes);
  if (r.get_bytes(std::min(bytes.size(), kTensorMagic.size()), "magic") != kTensorMagic)
    throw FormatError("not a tensor cache (bad magic)", 0);
  const auto version = r.get<std::uint32_t>("version");
  if (version != kTensorVersion)
    throw FormatError("unsupported tensor cache version " + std::to_string(version), 8);
  const auto hash = r.get<std::uint64_t>("layout hash");
  if (hash != layout_hash()) throw FormatError("feature layout hash mismatch", 12);
  const auto n = r.get<std::uint64_t>("video count");
  Dataset d;
  for (std::uint64_t i = 0; i < n; ++i) {
    VideoTensor v;
    v.video_id = r.get_string("video id");
    const auto rows = r.get<std::uint32_t>("frame count");
    const auto cols = r.get<std::uint32_t>("feature dim");
    v.frames.resize(rows, cols);
    r.get_doubles(v.frames.data(), static_cast<std::size_t>(rows) * cols, "frame matrix");
    for (auto& c : v.votes) c = r.get<std::int32_t>("votes");
    v.topic = r.get<std::int32_t>("topic");
    v.duration_sec = r.get<double>("duration");
    v.climax_marks.resize(r.get<std::uint32_t>("mark count"));
    r.get_doubles(v.climax_marks.data(), v.climax_marks.size(), "marks");
    v.climax_targets.resize(r.get<std::uint32_t>("target count"));
    r.get_doubles(v.climax_targets.data(), v.climax_targets.size(), "climax targets");
    d.videos.push_back(std::move(v));
  }
  if (!r.done()) throw FormatError("trailing bytes after tensor cache", r.offset());
  return d;
}

void write_tensor_cache(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  const auto bytes = encode_tensor_cache(data);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Dataset read_tensor_cache(const std::filesystem::path& path) {
  return decode_tensor_cache(read_file(path));
}

}  // namespace adstory
