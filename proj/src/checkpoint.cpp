#include <fstream>
#include <map>

#include <json.hpp>

#include "adstory/seqmodel.hpp"
#include "binio.hpp"

namespace adstory {

using nlohmann::json;

namespace {

constexpr std::string_view kMagic = "ADSCKPT\x01";

bool full_layout(const ModelConfig& c) {
  return (c.task == Task::kClimax && c.input_dim == kBaseFeatureDim) ||
         (c.task == Task::kSentiment && c.input_dim == kClimaxFeatureDim);
}

void put_tensor(binio::Writer& w, std::string_view name, Eigen::Index rows, Eigen::Index cols,
                const double* data) {
  w.put_string(name);
  w.put<std::uint32_t>(2);
  w.put<std::uint64_t>(static_cast<std::uint64_t>(rows));
  w.put<std::uint64_t>(static_cast<std::uint64_t>(cols));
  w.put_doubles(data, static_cast<std::size_t>(rows * cols));
}

struct RawTensor {
  std::vector<std::uint64_t> shape;
  std::vector<double> values;
};

}  // namespace

std::string encode_checkpoint(const ModelCheckpoint& ckpt) {
  const auto& cfg = ckpt.model.config();
  json meta;
  meta["format_version"] = kCheckpointVersion;
  meta["task"] = std::string(task_name(cfg.task));
  meta["input_dim"] = cfg.input_dim;
  meta["hidden"] = cfg.hidden;
  meta["forget_bias"] = cfg.forget_bias;
  meta["topic_feed"] = cfg.topic_feed == TopicFeed::kLogits ? "logits" : "probabilities";
  meta["layout_hash"] = full_layout(cfg) ? layout_hash() : std::uint64_t{0};
  meta["seed"] = ckpt.seed;
  meta["step"] = ckpt.step;
  meta["keep_prob"] = ckpt.keep_prob;
  meta["optimizer"] = {{"learning_rate", ckpt.optimizer.learning_rate},
                       {"decay", ckpt.optimizer.decay},
                       {"momentum", ckpt.optimizer.momentum},
                       {"epsilon", ckpt.optimizer.epsilon},
                       {"step", ckpt.optimizer_state.step}};
  meta["has_standardizer"] = ckpt.standardizer.has_value();
  meta["extra"] = json::parse(ckpt.metadata_json);
  const std::string meta_text = meta.dump();

  binio::Writer w;
  w.put_bytes(kMagic);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint64_t>(meta_text.size());
  w.put_bytes(meta_text);

  const auto& tensors = ckpt.model.tensors();
  const bool has_opt = ckpt.optimizer_state.mean_square.size() == ckpt.model.flat().size();
  std::uint32_t count = static_cast<std::uint32_t>(tensors.size() * (has_opt ? 3 : 1));
  if (ckpt.standardizer) count += 2;
  w.put<std::uint32_t>(count);
  for (const auto& t : tensors)
    put_tensor(w, t.name, t.rows, t.cols, ckpt.model.flat().data() + t.offset);
  if (has_opt) {
    for (const auto& t : tensors)
      put_tensor(w, "optimizer/mean_square/" + t.name, t.rows, t.cols,
                 ckpt.optimizer_state.mean_square.data() + t.offset);
    for (const auto& t : tensors)
      put_tensor(w, "optimizer/momentum/" + t.name, t.rows, t.cols,
                 ckpt.optimizer_state.momentum.data() + t.offset);
  }
  if (ckpt.standardizer) {
    put_tensor(w, "standardizer/mean", ckpt.standardizer->mean.size(), 1,
               ckpt.standardizer->mean.data());
    put_tensor(w, "standardizer/scale", ckpt.standardizer->scale.size(), 1,
               ckpt.standardizer->scale.data());
  }
  return std::move(w.str());
}

ModelCheckpoint decode_checkpoint(std::string_view bytes, std::optional<Task> expected_task) {
  using Kind = CheckpointError::Kind;
  if (bytes.size() < kMagic.size() || bytes.substr(0, kMagic.size()) != kMagic)
    throw CheckpointError(Kind::kBadMagic, "not a checkpoint file (bad magic)", 0);
  binio::Reader r(bytes);
  try {
    r.get_bytes(kMagic.size(), "magic");
    const auto version = r.get<std::uint32_t>("format version");
    if (version != kCheckpointVersion)
      throw CheckpointError(Kind::kVersion,
                            "checkpoint format version " + std::to_string(version) +
                                ", expected " + std::to_string(kCheckpointVersion),
                            kMagic.size());
    const auto meta_len = r.get<std::uint64_t>("metadata length");
    const auto meta_offset = r.offset();
    const auto meta_text = r.get_bytes(static_cast<std::size_t>(meta_len), "metadata");
    json meta;
    try {
      meta = json::parse(meta_text);
    } catch (const json::exception& e) {
      throw CheckpointError(Kind::kCorrupt, std::string("bad checkpoint metadata: ") + e.what(),
                            meta_offset);
    }

    ModelConfig cfg;
    const auto task = parse_task(meta.at("task").get<std::string>());
    if (!task) throw CheckpointError(Kind::kCorrupt, "unknown task tag", meta_offset);
    if (expected_task && *task != *expected_task)
      throw CheckpointError(Kind::kTask,
                            "checkpoint is for task '" + std::string(task_name(*task)) +
                                "', expected '" + std::string(task_name(*expected_task)) + "'",
                            meta_offset);
    cfg.task = *task;
    cfg.input_dim = meta.at("input_dim").get<std::size_t>();
    cfg.hidden = meta.at("hidden").get<std::size_t>();
    cfg.forget_bias = meta.at("forget_bias").get<double>();
    cfg.topic_feed = meta.at("topic_feed").get<std::string>() == "logits" ? TopicFeed::kLogits
                                                                          : TopicFeed::kProbabilities;
    if (full_layout(cfg) && meta.at("layout_hash").get<std::uint64_t>() != layout_hash())
      throw CheckpointError(Kind::kLayout, "feature layout hash mismatch", meta_offset);

    ModelCheckpoint ck;
    ck.model = Model(cfg);
    ck.seed = meta.at("seed").get<std::uint64_t>();
    ck.step = meta.at("step").get<std::int64_t>();
    ck.keep_prob = meta.at("keep_prob").get<double>();
    const auto& opt = meta.at("optimizer");
    ck.optimizer.learning_rate = opt.at("learning_rate").get<double>();
    ck.optimizer.decay = opt.at("decay").get<double>();
    ck.optimizer.momentum = opt.at("momentum").get<double>();
    ck.optimizer.epsilon = opt.at("epsilon").get<double>();
    ck.metadata_json = meta.at("extra").dump();

    std::map<std::string, RawTensor> raw;
    const auto count = r.get<std::uint32_t>("tensor count");
    for (std::uint32_t i = 0; i < count; ++i) {
      const auto name = r.get_string("tensor name");
      RawTensor t;
      const auto ndims = r.get<std::uint32_t>("tensor rank");
      if (ndims > 8) throw CheckpointError(Kind::kCorrupt, "implausible tensor rank", r.offset());
      std::uint64_t n = 1;
      for (std::uint32_t d = 0; d < ndims; ++d) {
        t.shape.push_back(r.get<std::uint64_t>("tensor shape"));
        n *= t.shape.back();
      }
      if (n > bytes.size()) throw FormatError("truncated file while reading " + name, r.offset());
      t.values.resize(static_cast<std::size_t>(n));
      r.get_doubles(t.values.data(), t.values.size(), "tensor payload");
      raw.emplace(name, std::move(t));
    }

    auto take = [&](const std::string& name, Eigen::Index rows, Eigen::Index cols, double* dst) {
      const auto it = raw.find(name);
      if (it == raw.end())
        throw CheckpointError(Kind::kCorrupt, "checkpoint is missing tensor '" + name + "'", 0);
      const auto& t = it->second;
      if (t.shape.size() != 2 || t.shape[0] != static_cast<std::uint64_t>(rows) ||
          t.shape[1] != static_cast<std::uint64_t>(cols))
        throw CheckpointError(Kind::kCorrupt, "tensor '" + name + "' has the wrong shape", 0);
      std::copy(t.values.begin(), t.values.end(), dst);
    };
    for (const auto& t : ck.model.tensors())
      take(t.name, t.rows, t.cols, ck.model.flat().data() + t.offset);
    if (raw.count("optimizer/mean_square/" + ck.model.tensors().front().name)) {
      ck.optimizer_state = RmsPropState::zeros(ck.model.flat().size());
      for (const auto& t : ck.model.tensors()) {
        take("optimizer/mean_square/" + t.name, t.rows, t.cols,
             ck.optimizer_state.mean_square.data() + t.offset);
        take("optimizer/momentum/" + t.name, t.rows, t.cols,
             ck.optimizer_state.momentum.data() + t.offset);
      }
    }
    ck.optimizer_state.step = opt.at("step").get<std::int64_t>();
    if (meta.at("has_standardizer").get<bool>()) {
      Standardizer s;
      const auto dim = static_cast<Eigen::Index>(cfg.input_dim);
      s.mean.resize(dim);
      s.scale.resize(dim);
      take("standardizer/mean", dim, 1, s.mean.data());
      take("standardizer/scale", dim, 1, s.scale.data());
      ck.standardizer = std::move(s);
    }
    return ck;
  } catch (const CheckpointError&) {
    throw;
  } catch (const FormatError& e) {
    throw CheckpointError(Kind::kTruncated, e.what(), e.offset());
  } catch (const json::exception& e) {
    throw CheckpointError(Kind::kCorrupt, std::string("bad checkpoint metadata: ") + e.what(), 0);
  }
}

void save_checkpoint(const std::filesystem::path& path, const ModelCheckpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  const auto bytes = encode_checkpoint(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& path,
                                std::optional<Task> expected_task) {
  return decode_checkpoint(read_file(path), expected_task);
}

}  // namespace adstory
