#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "adstory/trainer.hpp"
#include "helpers.hpp"

using namespace adstory;

namespace {

VideoRecord record_with_marks(std::vector<std::optional<double>> marks) {
  VideoRecord r;
  r.video_id = "r";
  r.duration_sec = 40;
  for (const auto& m : marks) r.workers.push_back({m.has_value(), m, false});
  return r;
}

// Small dataset whose climax second is flagged in feature 0 and whose
// class 7 is flagged in feature 1.
Dataset toy_dataset(Task task, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Dataset d;
  const std::size_t dim = task == Task::kClimax ? 5 : 6;
  for (std::size_t v = 0; v < n; ++v) {
    VideoTensor t;
    char id[16];
    std::snprintf(id, sizeof id, "toy%03zu", v);
    t.video_id = id;
    const std::size_t len = 6 + uniform_index(rng, 5);
    t.frames.resize(static_cast<Eigen::Index>(len), static_cast<Eigen::Index>(dim));
    for (Eigen::Index i = 0; i < t.frames.size(); ++i) t.frames.data()[i] = uniform(rng, -0.5, 0.5);
    const std::size_t c = uniform_index(rng, len);
    t.frames(static_cast<Eigen::Index>(c), 0) = 3.0;
    t.duration_sec = static_cast<double>(len);
    t.climax_marks = {static_cast<double>(c) + 0.5};
    t.climax_targets = climax_targets(t.climax_marks, len);
    if (uniform01(rng) < 0.5) {
      t.votes[7] = 3;
      t.frames(0, 1) = 2.0;
    }
    t.votes[static_cast<std::size_t>(uniform_index(rng, 30))] += 1;
    t.topic = static_cast<int>(uniform_index(rng, 38));
    d.videos.push_back(std::move(t));
  }
  return d;
}

std::vector<std::string> ids_of(const Dataset& d) {
  std::vector<std::string> ids;
  for (const auto& v : d.videos) ids.push_back(v.video_id);
  return ids;
}

TrainConfig small_config(Task task, std::int64_t steps) {
  TrainConfig c;
  c.task = task;
  c.steps = steps;
  c.batch = 4;
  c.hidden = 6;
  c.eval_every = 3;
  c.seed = 5;
  c.lr = 1e-2;
  return c;
}

}  // namespace

TEST_CASE("climax targets") {
  auto t = climax_targets(record_with_marks({10.2, 10.8, std::nullopt, std::nullopt}), 40);
  CHECK(std::count(t.begin(), t.end(), 1.0) == 1);
  CHECK(t[10] == 1.0);
  t = climax_targets(record_with_marks({std::nullopt, std::nullopt, std::nullopt, std::nullopt}), 40);
  CHECK(std::all_of(t.begin(), t.end(), [](double x) { return x == 0.0; }));
  t = climax_targets(record_with_marks({3.0, 30.0}), 40);
  CHECK(t[3] == 1.0);
  CHECK(t[30] == 1.0);
  CHECK(std::count(t.begin(), t.end(), 1.0) == 2);
  auto rejected = record_with_marks({12.5});
  rejected.workers[0].rejected = true;
  t = climax_targets(rejected, 40);
  CHECK(std::count(t.begin(), t.end(), 1.0) == 0);
  // past the end is ignored
  t = climax_targets(std::vector<double>{45.0}, 40);
  CHECK(std::count(t.begin(), t.end(), 1.0) == 0);
}

TEST_CASE("sentiment soft targets") {
  std::array<int, kNumSentiments> votes{};
  votes[0] = 0;
  votes[1] = 1;
  votes[2] = 3;
  votes[3] = 5;
  votes[4] = 2;
  const auto t = sentiment_soft_targets(votes);
  CHECK(t[0] == 0.0);
  CHECK(t[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(t[2] == 1.0);
  CHECK(t[3] == 1.0);
  CHECK(t[4] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  votes[5] = 6;
  CHECK_THROWS_AS(sentiment_soft_targets(votes), ValidationError);
}

TEST_CASE("negative sampling") {
  std::vector<ClassVector> targets(40, ClassVector{});
  for (std::size_t v = 0; v < 2; ++v) targets[v][0] = 1.0;        // 2 pos, 38 neg
  for (std::size_t v = 0; v < 10; ++v) targets[v][1] = 0.5;       // 10 pos, 30 neg
  for (std::size_t v = 0; v < 40; ++v) targets[v][2] = v < 20 ? 1.0 : 0.0;
  std::vector<ClassVector> t22(targets.begin(), targets.begin() + 22);
  const auto ns = negative_sampling_weights(t22, 5, 9);
  auto weight_sum = [&](std::size_t c, const NegativeSampling& s) {
    double w = 0.0;
    for (const auto& row : s.weights) w += row[c];
    return w;
  };
  CHECK(weight_sum(0, ns) == 12.0);  // 2 positives + 10 negatives
  const auto ns40 = negative_sampling_weights(targets, 5, 9);
  CHECK(weight_sum(1, ns40) == 40.0);  // all 30 negatives kept
  CHECK(weight_sum(2, ns40) == 40.0);
  for (std::size_t v = 0; v < 10; ++v) CHECK(ns40.weights[v][1] == 1.0);
  // classes without positives are reported and fully zero
  CHECK(ns40.classes_without_positives.size() == 27);
  CHECK(weight_sum(5, ns40) == 0.0);
  const auto again = negative_sampling_weights(targets, 5, 9);
  CHECK(again.weights == ns40.weights);
  const auto other = negative_sampling_weights(t22, 5, 10);
  CHECK(weight_sum(0, other) == 12.0);
}

TEST_CASE("splits") {
  std::vector<std::string> ids;
  for (int i = 0; i < 10; ++i) ids.push_back("v" + std::to_string(i));
  const auto plans = make_splits(ids, 3);
  REQUIRE(plans.size() == 5);
  std::multiset<std::string> tests;
  for (const auto& p : plans) {
    CHECK(p.ids(Split::kTest).size() == 2);
    CHECK(p.ids(Split::kVal).size() == 2);
    CHECK(p.ids(Split::kTrain).size() == 6);
    CHECK(p.assignment.size() == 10);
    for (const auto& id : p.ids(Split::kTest)) tests.insert(id);
  }
  CHECK(tests == std::multiset<std::string>(ids.begin(), ids.end()));
  // val of fold f is test of fold f + 1
  for (int f = 0; f < 5; ++f) CHECK(plans[f].ids(Split::kVal) == plans[(f + 1) % 5].ids(Split::kTest));

  auto shuffled = ids;
  std::reverse(shuffled.begin(), shuffled.end());
  const auto again = make_splits(shuffled, 3);
  for (int f = 0; f < 5; ++f) CHECK(again[f].assignment == plans[f].assignment);

  std::vector<std::string> many;
  for (int i = 0; i < 103; ++i) many.push_back("id" + std::to_string(i));
  for (const auto& p : make_splits(many, 1)) {
    CHECK(p.ids(Split::kTest).size() >= 20);
    CHECK(p.ids(Split::kTest).size() <= 21);
    CHECK(p.ids(Split::kTrain).size() >= 61);
  }
  CHECK_THROWS_AS(make_splits({"a", "b", "c", "d"}, 1), ValidationError);
  CHECK_THROWS_AS(make_splits({"a", "b", "c", "d", "a"}, 1), ValidationError);
  CHECK(split_name(Split::kVal) == "val");
}

TEST_CASE("train config text round trip and errors") {
  TrainConfig d;
  CHECK(d.steps == 20000);
  CHECK(d.batch == 32);
  CHECK(d.lr == 2e-4);
  CHECK(d.decay == 0.95);
  CHECK(d.momentum == 1e-8);
  CHECK(d.keep_prob == 0.5);
  CHECK(d.neg_ratio == 5);
  CHECK(d.hidden == 64);
  TrainConfig c;
  c.task = Task::kSentiment;
  c.steps = 17;
  c.lr = 0.1 + 0.2;
  c.topic_feed = TopicFeed::kProbabilities;
  c.resample_negatives = true;
  c.seed = 123456789012345ULL;
  const auto back = parse_train_config(train_config_text(c));
  CHECK(train_config_text(back) == train_config_text(c));
  CHECK(back.lr == c.lr);

  const auto parsed = parse_train_config("[train]\n# comment\nsteps = 5  # trailing\ntask = 'sentiment'\n\n");
  CHECK(parsed.steps == 5);
  CHECK(parsed.task == Task::kSentiment);
  try {
    parse_train_config("steps = 5\nbatch = zero\n");
    FAIL("expected an error");
  } catch (const ValidationError& e) {
    CHECK(e.line() == 2);
  }
  CHECK_THROWS_AS(parse_train_config("colour = red\n"), ValidationError);
  CHECK_THROWS_AS(parse_train_config("steps\n"), ValidationError);
  CHECK_THROWS_AS(parse_train_config("keep_prob = 1.5\n"), ValidationError);
  TrainConfig s;
  set_config_value(s, "eval_every", "50");
  CHECK(s.eval_every == 50);
  CHECK_THROWS_AS(set_config_value(s, "eval_every", "0"), ValidationError);
}

TEST_CASE("train log csv") {
  std::vector<TrainLogRow> log = {{1, 0.5, std::nullopt, 10}, {2, 0.25, 0.75, 20}};
  CHECK(train_log_csv(log) == "step,train_loss,val_metric,wall_ms\n1,0.5,,10\n2,0.25,0.75,20\n");
}

TEST_CASE("video tensors") {
  VideoRecord r = record_with_marks({2.5, 2.7, std::nullopt});
  r.video_id = "x";
  r.topic = 4;
  r.sentiment_votes[3] = 2;
  std::vector<FrameFeatures> frames(70, FrameFeatures{std::vector<double>(3, 0.5), 0.0});
  const auto t = make_video_tensor(r, frames, 60);
  CHECK(t.length() == 60);
  CHECK(t.climax_targets.size() == 60);
  CHECK(t.climax_targets[2] == 1.0);
  CHECK(t.topic == 4);
  const auto back = record_of(t);
  CHECK(back.accepted_marks() == r.accepted_marks());
  CHECK(back.topic == r.topic);
  CHECK(back.sentiment_votes == r.sentiment_votes);
}

TEST_CASE("train: zero steps, selection, logging") {
  const auto data = toy_dataset(Task::kClimax, 20, 1);
  const auto plan = make_splits(ids_of(data), 2)[0];
  auto cfg = small_config(Task::kClimax, 0);
  const auto zero = train(cfg, data, plan);
  CHECK(zero.log.empty());
  CHECK(zero.checkpoint.step == 0);
  CHECK_FALSE(zero.best_metric.has_value());
  Model init(ModelConfig{Task::kClimax, 5, 6, 1.0, TopicFeed::kLogits});
  init.init_uniform(cfg.seed);
  CHECK(zero.checkpoint.model.flat() == init.flat());
  REQUIRE(zero.checkpoint.standardizer.has_value());

  cfg.steps = 20;
  std::size_t callbacks = 0;
  const auto r = train(cfg, data, plan, [&](const TrainLogRow&) { ++callbacks; });
  CHECK(r.log.size() == 20);
  CHECK(callbacks == 20);
  double best = -1.0;
  std::int64_t best_step = -1;
  for (const auto& row : r.log) {
    CHECK(std::isfinite(row.train_loss));
    CHECK(row.val_metric.has_value() == (row.step % 3 == 0 || row.step == 20));
    if (row.val_metric && *row.val_metric > best) {
      best = *row.val_metric;
      best_step = row.step;
    }
  }
  REQUIRE(r.best_metric.has_value());
  CHECK(*r.best_metric == best);
  CHECK(r.checkpoint.step == best_step);

  // the returned parameters reproduce the logged metric
  std::vector<std::size_t> val;
  for (std::size_t i = 0; i < data.videos.size(); ++i)
    if (plan.assignment.at(data.videos[i].video_id) == Split::kVal) val.push_back(i);
  const auto z = standardize(data, *r.checkpoint.standardizer);
  CHECK(selection_metric(r.checkpoint.model, z, val) == best);
}

TEST_CASE("train: deterministic and independent of input order") {
  const auto data = toy_dataset(Task::kSentiment, 20, 2);
  const auto plan = make_splits(ids_of(data), 4)[1];
  auto cfg = small_config(Task::kSentiment, 12);
  const auto a = train(cfg, data, plan);
  const auto b = train(cfg, data, plan);
  auto reversed = data;
  std::reverse(reversed.videos.begin(), reversed.videos.end());
  const auto c = train(cfg, reversed, plan);
  cfg.jobs = 3;
  const auto d = train(cfg, data, plan);
  REQUIRE(a.log.size() == 12);
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].train_loss == b.log[i].train_loss);
    CHECK(a.log[i].train_loss == c.log[i].train_loss);
    CHECK(a.log[i].train_loss == d.log[i].train_loss);
  }
  CHECK(a.checkpoint.model.flat() == c.checkpoint.model.flat());
  CHECK(encode_checkpoint(a.checkpoint) == encode_checkpoint(b.checkpoint));
  cfg.jobs = 1;
  cfg.seed = 6;
  CHECK(train(cfg, data, plan).log[0].train_loss != a.log[0].train_loss);
}

TEST_CASE("train: first sentiment loss is near chance") {
  const auto data = toy_dataset(Task::kSentiment, 30, 3);
  const auto plan = make_splits(ids_of(data), 1)[0];
  auto cfg = small_config(Task::kSentiment, 1);
  cfg.hidden = 64;
  cfg.batch = 32;
  const auto r = train(cfg, data, plan);
  // near-zero logits give ln 2 per weighted element and ln 38 for the topic
  const double chance = std::log(2.0) + std::log(38.0);
  CHECK(std::abs(r.log[0].train_loss - chance) < 0.2 * chance);
  CHECK(r.classes_without_positives.size() < 30);

  cfg.resample_negatives = true;
  cfg.steps = 3;
  CHECK(std::isfinite(train(cfg, data, plan).log[2].train_loss));
}

TEST_CASE("train: errors") {
  auto data = toy_dataset(Task::kClimax, 10, 4);
  const auto plan = make_splits(ids_of(data), 1)[0];
  auto cfg = small_config(Task::kClimax, 3);
  SplitPlan empty;
  CHECK_THROWS_AS(train(cfg, data, empty), ValidationError);
  cfg.batch = 0;
  CHECK_THROWS_AS(train(cfg, data, plan), ValidationError);
  cfg.batch = 4;
  for (auto& v : data.videos) v.frames(0, 2) = std::numeric_limits<double>::infinity();
  try {
    train(cfg, data, plan);
    FAIL("expected a numeric error");
  } catch (const NumericError& e) {
    CHECK(e.step() == 1);
  }
}
