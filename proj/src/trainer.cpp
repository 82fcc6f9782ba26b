#include "adstory/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "adstory/climax_unsup.hpp"
#include "adstory/eval.hpp"

namespace adstory {

namespace {

enum Stream : std::uint64_t { kOrderStream = 1, kDropoutStream = 2, kNegativeStream = 3 };

}  // namespace

// Targets ----------------------------------------------------------------------

std::vector<double> climax_targets(std::span<const double> marks, std::size_t n_seconds) {
  std::vector<double> out(n_seconds, 0.0);
  for (double m : marks) {
    if (!(m >= 0.0)) continue;
    const auto s = static_cast<std::size_t>(std::floor(m));
    if (s < n_seconds) out[s] = 1.0;
  }
  return out;
}

std::vector<double> climax_targets(const VideoRecord& record, std::size_t n_seconds) {
  const auto marks = record.accepted_marks();
  return climax_targets(marks, n_seconds);
}

ClassVector sentiment_soft_targets(const std::array<int, kNumSentiments>& votes) {
  ClassVector t{};
  for (std::size_t c = 0; c < kNumSentiments; ++c) {
    if (votes[c] < 0 || votes[c] > static_cast<int>(kMaxVotes))
      throw ValidationError("vote count outside [0, 5]");
    t[c] = std::min(static_cast<double>(votes[c]) / 3.0, 1.0);
  }
  return t;
}

NegativeSampling negative_sampling_weights(std::span<const ClassVector> targets, std::size_t ratio,
                                           std::uint64_t seed) {
  NegativeSampling out;
  out.weights.assign(targets.size(), ClassVector{});
  Rng rng(seed);
  for (std::size_t c = 0; c < kNumSentiments; ++c) {
    std::vector<std::size_t> negatives;
    std::size_t n_pos = 0;
    for (std::size_t v = 0; v < targets.size(); ++v) {
      if (targets[v][c] > 0.0) {
        out.weights[v][c] = 1.0;
        ++n_pos;
      } else {
        negatives.push_back(v);
      }
    }
    if (n_pos == 0) {
      out.classes_without_positives.push_back(c);
      continue;
    }
    const std::size_t keep = std::min(ratio * n_pos, negatives.size());
    // Partial Fisher-Yates: the first `keep` slots become a uniform sample.
    for (std::size_t i = 0; i < keep; ++i) {
      const auto j = i + uniform_index(rng, negatives.size() - i);
      std::swap(negatives[i], negatives[j]);
      out.weights[negatives[i]][c] = 1.0;
    }
  }
  return out;
}

// Splits -------------------------------------------------------------------------

std::string_view split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

std::vector<std::string> SplitPlan::ids(Split which) const {
  std::vector<std::string> out;
  for (const auto& [id, s] : assignment)
    if (s == which) out.push_back(id);
  return out;
}

std::vector<SplitPlan> make_splits(std::vector<std::string> ids, std::uint64_t seed) {
  if (ids.size() < static_cast<std::size_t>(kNumFolds))
    throw ValidationError("need at least 5 videos to split, got " + std::to_string(ids.size()));
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
    throw ValidationError("duplicate video id in split input");
  const std::uint64_t basis = splitmix64(seed);
  std::vector<std::pair<std::uint64_t, std::string>> keyed;
  for (auto& id : ids) keyed.emplace_back(fnv1a64(id, basis), std::move(id));
  std::sort(keyed.begin(), keyed.end());

  const std::size_t n = keyed.size();
  std::vector<int> chunk(n);
  for (int c = 0; c < kNumFolds; ++c)
    for (std::size_t i = c * n / kNumFolds; i < (c + 1) * n / kNumFolds; ++i) chunk[i] = c;

  std::vector<SplitPlan> plans(kNumFolds);
  for (int f = 0; f < kNumFolds; ++f) {
    plans[f].fold = f;
    for (std::size_t i = 0; i < n; ++i) {
      Split s = Split::kTrain;
      if (chunk[i] == f) s = Split::kTest;
      else if (chunk[i] == (f + 1) % kNumFolds) s = Split::kVal;
      plans[f].assignment.emplace(keyed[i].second, s);
    }
  }
  return plans;
}

// Configuration ------------------------------------------------------------------------

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string_view unquote(std::string_view s) {
  if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front())
    return s.substr(1, s.size() - 2);
  return s;
}

template <class T>
T parse_number(std::string_view key, std::string_view v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ValidationError("bad value for " + std::string(key) + ": '" + std::string(v) + "'");
  return out;
}

std::string format_double(double x) { return format_shortest(x); }

}  // namespace

void set_config_value(TrainConfig& c, std::string_view key, std::string_view raw) {
  const auto v = unquote(trim(raw));
  if (key == "task") {
    const auto t = parse_task(v);
    if (!t) throw ValidationError("task must be climax or sentiment, got '" + std::string(v) + "'");
    c.task = *t;
  } else if (key == "steps") {
    c.steps = parse_number<std::int64_t>(key, v);
    if (c.steps < 0) throw ValidationError("steps must be >= 0");
  } else if (key == "batch") {
    c.batch = parse_number<std::size_t>(key, v);
    if (c.batch == 0) throw ValidationError("batch must be >= 1");
  } else if (key == "lr") {
    c.lr = parse_number<double>(key, v);
  } else if (key == "decay") {
    c.decay = parse_number<double>(key, v);
  } else if (key == "momentum") {
    c.momentum = parse_number<double>(key, v);
  } else if (key == "epsilon") {
    c.epsilon = parse_number<double>(key, v);
  } else if (key == "keep_prob") {
    c.keep_prob = parse_number<double>(key, v);
    if (!(c.keep_prob > 0.0 && c.keep_prob <= 1.0)) throw ValidationError("keep_prob must be in (0, 1]");
  } else if (key == "neg_ratio") {
    c.neg_ratio = parse_number<std::size_t>(key, v);
  } else if (key == "resample_negatives") {
    if (v != "true" && v != "false") throw ValidationError("resample_negatives must be true or false");
    c.resample_negatives = v == "true";
  } else if (key == "seed") {
    c.seed = parse_number<std::uint64_t>(key, v);
  } else if (key == "eval_every") {
    c.eval_every = parse_number<std::int64_t>(key, v);
    if (c.eval_every < 1) throw ValidationError("eval_every must be >= 1");
  } else if (key == "hidden") {
    c.hidden = parse_number<std::size_t>(key, v);
    if (c.hidden == 0) throw ValidationError("hidden must be >= 1");
  } else if (key == "topic_feed") {
    if (v == "logits") c.topic_feed = TopicFeed::kLogits;
    else if (v == "probabilities") c.topic_feed = TopicFeed::kProbabilities;
    else throw ValidationError("topic_feed must be logits or probabilities");
  } else if (key == "max_len") {
    c.max_len = parse_number<std::size_t>(key, v);
    if (c.max_len == 0) throw ValidationError("max_len must be >= 1");
  } else if (key == "jobs") {
    c.jobs = parse_number<int>(key, v);
    if (c.jobs < 1) throw ValidationError("jobs must be >= 1");
  } else {
    throw ValidationError("unknown config key '" + std::string(key) + "'");
  }
}

TrainConfig parse_train_config(std::string_view text, TrainConfig c) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    auto line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty() || line.front() == '[') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ValidationError("expected key = value", line_no);
    try {
      set_config_value(c, trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ValidationError& e) {
      throw ValidationError(e.what(), line_no);
    }
  }
  return c;
}

TrainConfig read_train_config(const std::filesystem::path& path, TrainConfig base) {
  return parse_train_config(read_file(path), base);
}

std::string train_config_text(const TrainConfig& c) {
  std::ostringstream os;
  os << "task = \"" << task_name(c.task) << "\"\n"
     << "steps = " << c.steps << "\n"
     << "batch = " << c.batch << "\n"
     << "lr = " << format_double(c.lr) << "\n"
     << "decay = " << format_double(c.decay) << "\n"
     << "momentum = " << format_double(c.momentum) << "\n"
     << "epsilon = " << format_double(c.epsilon) << "\n"
     << "keep_prob = " << format_double(c.keep_prob) << "\n"
     << "neg_ratio = " << c.neg_ratio << "\n"
     << "resample_negatives = " << (c.resample_negatives ? "true" : "false") << "\n"
     << "seed = " << c.seed << "\n"
     << "eval_every = " << c.eval_every << "\n"
     << "hidden = " << c.hidden << "\n"
     << "topic_feed = \"" << (c.topic_feed == TopicFeed::kLogits ? "logits" : "probabilities") << "\"\n"
     << "max_len = " << c.max_len << "\n"
     << "jobs = " << c.jobs << "\n";
  return os.str();
}

// Tensors ----------------------------------------------------------------------------

VideoTensor make_video_tensor(const VideoRecord& record, const std::vector<FrameFeatures>& frames,
                              std::size_t max_len) {
  VideoTensor v;
  v.video_id = record.video_id;
  v.frames = to_matrix(frames, max_len);
  v.votes = record.sentiment_votes;
  v.topic = record.topic ? static_cast<int>(*record.topic) : -1;
  v.duration_sec = record.duration_sec;
  v.climax_marks = record.accepted_marks();
  v.climax_targets = climax_targets(v.climax_marks, v.length());
  return v;
}

VideoRecord record_of(const VideoTensor& video) {
  VideoRecord r;
  r.video_id = video.video_id;
  r.duration_sec = video.duration_sec;
  r.sentiment_votes = video.votes;
  if (video.topic >= 0) r.topic = static_cast<std::size_t>(video.topic);
  for (double m : video.climax_marks) r.workers.push_back({true, m, false});
  return r;
}

std::string train_log_csv(std::span<const TrainLogRow> log) {
  std::ostringstream os;
  os << "step,train_loss,val_metric,wall_ms\n";
  for (const auto& row : log) {
    os << row.step << ',' << format_double(row.train_loss) << ',';
    if (row.val_metric) os << format_double(*row.val_metric);
    os << ',' << row.wall_ms << '\n';
  }
  return os.str();
}

// Evaluation helpers ---------------------------------------------------------------------

std::vector<std::vector<double>> predict_climax_probs(const Model& model, const Dataset& data) {
  std::vector<std::vector<double>> out;
  out.reserve(data.videos.size());
  for (const auto& v : data.videos) out.push_back(forward_climax(model, v.frames));
  return out;
}

Eigen::MatrixXd predict_sentiment_scores(const Model& model, const Dataset& data) {
  Eigen::MatrixXd scores(static_cast<Eigen::Index>(data.videos.size()),
                         static_cast<Eigen::Index>(kNumSentiments));
  for (std::size_t i = 0; i < data.videos.size(); ++i) {
    const auto& v = data.videos[i];
    if (v.length() == 0) {
      scores.row(static_cast<Eigen::Index>(i)).setConstant(0.5);
      continue;
    }
    const auto out = forward_sentiment(model, v.frames);
    scores.row(static_cast<Eigen::Index>(i)) =
        (1.0 / (1.0 + (-out.sentiment_logits.array()).exp())).matrix().transpose();
  }
  return scores;
}

double selection_metric(const Model& model, const Dataset& data,
                        std::span<const std::size_t> indices) {
  Dataset subset;
  std::vector<VideoRecord> records;
  for (auto i : indices) {
    subset.videos.push_back(data.videos.at(i));
    records.push_back(record_of(data.videos[i]));
  }
  if (model.config().task == Task::kClimax) {
    RankedPredictions preds;
    const auto probs = predict_climax_probs(model, subset);
    for (std::size_t i = 0; i < subset.videos.size(); ++i) {
      if (probs[i].empty()) continue;
      preds[subset.videos[i].video_id] =
          top_k_peaks(PerSecondSeries{probs[i]}, 1, ClimaxMethod::kLstm).timestamps_sec;
    }
    return climax_recall(preds, records, 1, 2);
  }
  const auto levels = sentiment_metrics(predict_sentiment_scores(model, subset), records);
  return levels.at(1).map;
}

// Training ----------------------------------------------------------------------------------

namespace {

ModelCheckpoint snapshot(const Model& model, const Standardizer& st, const TrainConfig& cfg,
                         const RmsPropConfig& opt, const RmsPropState& state, std::int64_t step,
                         int fold, std::optional<double> metric) {
  ModelCheckpoint ck;
  ck.model = model;
  ck.standardizer = st;
  ck.optimizer = opt;
  ck.optimizer_state = state;
  ck.seed = cfg.seed;
  ck.step = step;
  ck.keep_prob = cfg.keep_prob;
  nlohmann::json extra;
  extra["fold"] = fold;
  extra["selection_metric"] = metric ? nlohmann::json(*metric) : nlohmann::json(nullptr);
  extra["config"] = train_config_text(cfg);
  ck.metadata_json = extra.dump();
  return ck;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const Dataset& data, const SplitPlan& split,
                  const std::function<void(const TrainLogRow&)>& on_step) {
  if (cfg.batch == 0 || cfg.eval_every < 1 || cfg.steps < 0 || cfg.max_len == 0)
    throw ValidationError("invalid training configuration");
  if (!(cfg.keep_prob > 0.0 && cfg.keep_prob <= 1.0))
    throw ValidationError("keep_prob must be in (0, 1]");

  std::vector<std::size_t> train_idx, val_idx;
  {
    std::vector<std::pair<std::string_view, std::size_t>> by_id;
    for (std::size_t i = 0; i < data.videos.size(); ++i) by_id.emplace_back(data.videos[i].video_id, i);
    std::sort(by_id.begin(), by_id.end());
    for (const auto& [id, i] : by_id) {
      const auto it = split.assignment.find(id);
      if (it == split.assignment.end()) continue;
      if (it->second == Split::kTrain) train_idx.push_back(i);
      if (it->second == Split::kVal) val_idx.push_back(i);
    }
  }
  if (train_idx.empty()) throw ValidationError("empty train split");
  if (val_idx.empty() && cfg.steps > 0) throw ValidationError("empty validation split");

  const std::size_t dim = data.dim();
  ModelConfig mc;
  mc.task = cfg.task;
  mc.input_dim = dim;
  mc.hidden = cfg.hidden;
  mc.topic_feed = cfg.topic_feed;
  Model model(mc);
  model.init_uniform(cfg.seed);

  const RmsPropConfig opt{cfg.lr, cfg.decay, cfg.momentum, cfg.epsilon};
  auto state = RmsPropState::zeros(model.flat().size());

  const Standardizer st = fit_standardizer(data, train_idx);
  Dataset z = standardize(data, st);
  for (auto& v : z.videos)
    if (v.length() > cfg.max_len) {
      v.frames.conservativeResize(static_cast<Eigen::Index>(cfg.max_len), Eigen::NoChange);
      v.climax_targets.resize(cfg.max_len);
    }

  TrainResult result;
  result.checkpoint = snapshot(model, st, cfg, opt, state, 0, split.fold, std::nullopt);
  if (cfg.steps == 0) return result;

  // Per-train-video examples; sentiment weights are filled below.
  std::vector<Example> examples(train_idx.size());
  std::vector<ClassVector> soft(train_idx.size());
  for (std::size_t j = 0; j < train_idx.size(); ++j) {
    const auto& v = z.videos[train_idx[j]];
    auto& ex = examples[j];
    ex.frames = &v.frames;
    ex.length = v.length();
    ex.climax_targets = v.climax_targets;
    ex.topic = v.topic;
    soft[j] = sentiment_soft_targets(v.votes);
    ex.sentiment_targets = soft[j];
  }
  auto assign_weights = [&](std::uint64_t seed) {
    auto ns = negative_sampling_weights(soft, cfg.neg_ratio, seed);
    for (std::size_t j = 0; j < examples.size(); ++j) examples[j].sentiment_weights = ns.weights[j];
    return ns.classes_without_positives;
  };
  if (cfg.task == Task::kSentiment)
    result.classes_without_positives = assign_weights(derive_seed(cfg.seed, kNegativeStream));

  Rng order_rng(derive_seed(cfg.seed, kOrderStream));
  Rng dropout_rng(derive_seed(cfg.seed, kDropoutStream));
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();

  const auto start = std::chrono::steady_clock::now();
  double last_finite = std::numeric_limits<double>::quiet_NaN();
  std::vector<Example> batch;
  std::vector<DropoutMasks> masks;

  for (std::int64_t step = 1; step <= cfg.steps; ++step) {
    if (cfg.task == Task::kSentiment && cfg.resample_negatives && step > 1)
      assign_weights(derive_seed(cfg.seed, kNegativeStream + static_cast<std::uint64_t>(step) * 8));
    batch.clear();
    masks.clear();
    while (batch.size() < cfg.batch) {
      if (cursor == order.size()) {
        shuffle(order.begin(), order.end(), order_rng);
        cursor = 0;
      }
      const auto& ex = examples[order[cursor++]];
      batch.push_back(ex);
      masks.push_back(sample_masks(dropout_rng, ex.length, dim, cfg.hidden, cfg.keep_prob));
    }
    const auto g = backward(model, batch, masks, false, cfg.jobs);
    if (!std::isfinite(g.loss) || !g.grad.allFinite()) throw NumericError(step, last_finite);
    last_finite = g.loss;
    rmsprop_update(model.flat(), g.grad, state, opt);

    TrainLogRow row;
    row.step = step;
    row.train_loss = g.loss;
    if (step % cfg.eval_every == 0 || step == cfg.steps) {
      row.val_metric = selection_metric(model, z, val_idx);
      if (!result.best_metric || *row.val_metric > *result.best_metric) {
        result.best_metric = row.val_metric;
        result.checkpoint = snapshot(model, st, cfg, opt, state, step, split.fold, row.val_metric);
      }
    }
    row.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                      std::chrono::steady_clock::now() - start)
                      .count();
    result.log.push_back(row);
    if (on_step) on_step(row);
  }
  return result;
}

}  // namespace adstory
