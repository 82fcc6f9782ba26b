// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <CLI11.hpp>

#include "adstory/cli.hpp"
#include "adstory/climax_unsup.hpp"
#include "adstory/eval.hpp"
#include "adstory/seqmodel.hpp"
#include "adstory/signals.hpp"
#include "adstory/synth.hpp"
#include "oracles.hpp"

using namespace adstory;
namespace fs = std::filesystem;

namespace {

// Learning runs. The climax budget stays well under its 2000-step ceiling.
constexpr int kClimaxSteps = 1000;
constexpr int kSentimentSteps = 1000;
constexpr std::size_t kSentimentVideos = 100;

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
  void note(const std::string& what) { detail += (detail.empty() ? "" : "; ") + what; }
};

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

class Scratch {
 public:
  Scratch() {
    root_ = fs::temp_directory_path() / ("adstory-accept-" + std::to_string(::getpid()));
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  ~Scratch() {
    std::error_code ec;
    fs::remove_all(root_, ec);
  }
  std::string operator/(const std::string& name) const { return (root_ / name).string(); }

 private:
  fs::path root_;
};

int cli(std::vector<std::string> args, std::string* err = nullptr) {
  std::ostringstream out, e;
  args.insert(args.begin(), "--quiet");
  const int code = run_cli(args, out, e);
  if (err) *err = e.str();
  return code;
}

void cli_ok(const std::vector<std::string>& args) {
  std::string err;
  const int code = cli(args, &err);
  if (code != 0) throw std::runtime_error(args.front() + " exited with " + std::to_string(code) + ": " + err);
}

EvalReport only_report(const std::string& path) { return parse_report_json(read_file(path)).at(0); }

// Signals ----------------------------------------------------------------------

LumaPlane smooth_plane(int w, int h, double shift) {
  LumaPlane p(static_cast<std::size_t>(w * h));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double xs = x - shift;
      const double v = 128.0 + 50.0 * std::sin(2.0 * M_PI * xs / 32.0) * std::cos(2.0 * M_PI * y / 40.0) +
                       20.0 * std::sin(2.0 * M_PI * (xs + y) / 23.0);
      p[static_cast<std::size_t>(y * w + x)] = static_cast<std::uint8_t>(std::lround(v));
    }
  return p;
}

Outcome signals_correctness() {
  Outcome o;
  const auto a = smooth_plane(64, 64, 0.0);
  o.require(flow_magnitude(dense_flow(a, a, 64, 64)) == 0.0, "identical frames give nonzero flow");
  FlowField f345{4, 4, std::vector<double>(16, 3.0), std::vector<double>(16, 4.0)};
  o.require(flow_magnitude(f345) == 5.0, "u=3, v=4 field is not 5");

  Rng rng(17);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const int w = 8 + trial, h = 5 + trial / 3;
    FlowField f{w, h, std::vector<double>(static_cast<std::size_t>(w * h)),
                std::vector<double>(static_cast<std::size_t>(w * h))};
    for (auto& x : f.u) x = uniform(rng, -4.0, 4.0);
    for (auto& x : f.v) x = uniform(rng, -4.0, 4.0);
    long double sum = 0.0L;
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        const long double u = f.u[static_cast<std::size_t>(i * w + j)];
        const long double v = f.v[static_cast<std::size_t>(i * w + j)];
        sum += std::sqrt(u * u + v * v);
      }
    const double want = static_cast<double>(sum / (w * h));
    worst = std::max(worst, std::abs(flow_magnitude(f) - want) / want);
  }
  o.require(worst <= 1e-12, "random-field relative error " + fmt(worst));

  const auto b = smooth_plane(64, 64, 1.0);
  const auto flow = dense_flow(a, b, 64, 64);
  double epe = 0.0;
  for (std::size_t i = 0; i < flow.u.size(); ++i) epe += std::hypot(flow.u[i] - 1.0, flow.v[i]);
  epe /= static_cast<double>(flow.u.size());
  o.require(epe <= 0.5, "translation EPE " + fmt(epe));
  o.note("random-field rel err " + fmt(worst) + ", EPE " + fmt(epe) + " px");
  return o;
}

// Unsupervised climax oracles -----------------------------------------------------

Outcome climax_oracles() {
  Outcome o;
  Rng rng(23);
  int agree = 0, total = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto n = 1 + uniform_index(rng, 120);
    std::vector<double> v(n);
    // coarse values give ties; sparse positives give runs for the shots rule
    for (auto& x : v) x = uniform01(rng) < 0.5 ? 0.0 : static_cast<double>(uniform_index(rng, 6));
    const PerSecondSeries s{v};
    for (std::size_t k : {1u, 3u}) {
      total += 2;
      agree += top_k_peaks(s, k).timestamps_sec == oracle::top_k(v, k);
      agree += longest_run_centers(s, k).timestamps_sec == oracle::run_centers(v, k);
    }
  }
  o.require(agree == total, std::to_string(total - agree) + " disagreements");
  o.note(std::to_string(agree) + "/" + std::to_string(total) + " agree");
  return o;
}

// Synthetic corpus ------------------------------------------------------------------

struct ClimaxCorpus {
  std::string dir;
  std::uint64_t seed = 7;
};

Outcome synthetic_corpus(const ClimaxCorpus& c, const Scratch& tmp) {
  Outcome o;
  const auto seed = std::to_string(c.seed);
  for (const std::string method : {"audio", "baseline"}) {
    const auto preds = tmp / (method + ".jsonl");
    cli_ok({"predict", "--method", method, "--k", "3", "--data-dir", c.dir, "--out", preds});
    cli_ok({"--seed", seed, "evaluate", "--task", "climax", "--data-dir", c.dir, "--predictions", preds, "--out",
            tmp / ("report_" + method)});
  }
  const auto audio = only_report(tmp / "report_audio.json").climax->recall;
  o.require(audio[0][0] == 1.0, "audio recall@1 w0 = " + fmt(audio[0][0]));
  const auto base = only_report(tmp / "report_baseline.json").climax->recall;
  SynthConfig cfg;
  const std::size_t ks[] = {1, 3};
  double worst = 0.0;
  for (std::size_t ki = 0; ki < 2; ++ki)
    for (int w = 0; w <= 2; ++w)
      worst = std::max(worst, std::abs(base[ki][static_cast<std::size_t>(w)] - analytic_baseline_recall(cfg, ks[ki], w)));
  o.require(worst <= 0.05, "baseline off analytic by " + fmt(worst));
  o.note("audio r@1 w0 " + fmt(audio[0][0]) + ", baseline max |diff| " + fmt(worst));
  return o;
}

// Gradient checks -------------------------------------------------------------------

Model tiny_model(Task task, TopicFeed feed, std::uint64_t seed) {
  ModelConfig cfg;
  cfg.task = task;
  cfg.input_dim = 6;
  cfg.hidden = 8;
  cfg.topic_feed = feed;
  Model m(cfg);
  m.init_uniform(seed);
  Rng rng(seed + 1);
  for (auto p : {Param::kGateBias, Param::kClimaxBias, Param::kTopicBias, Param::kSentimentBias})
    if (m.has(p)) {
      auto b = m.param(p);
      for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = uniform(rng, -0.3, 0.3);
    }
  return m;
}

// Worst relative central-difference error per parameter tensor.
std::vector<std::pair<std::string, double>> tensor_errors(Model m, std::span<const Example> batch,
                                                          std::span<const DropoutMasks> masks) {
  const auto g = backward(m, batch, masks).grad;
  const double eps = 1e-5;
  std::vector<std::pair<std::string, double>> out;
  for (const auto& t : m.tensors()) {
    double worst = 0.0;
    for (Eigen::Index i = t.offset; i < t.offset + t.size(); ++i) {
      const double keep = m.flat()[i];
      m.flat()[i] = keep + eps;
      const double up = batch_loss(m, batch, masks);
      m.flat()[i] = keep - eps;
      const double down = batch_loss(m, batch, masks);
      m.flat()[i] = keep;
      const double fd = (up - down) / (2 * eps);
      worst = std::max(worst, std::abs(fd - g[i]) / std::max({std::abs(fd), std::abs(g[i]), 1e-6}));
    }
    out.emplace_back(t.name, worst);
  }
  return out;
}

Outcome gradient_checks() {
  Outcome o;
  double overall = 0.0;
  std::size_t tensors = 0;
  struct Variant {
    Task task;
    TopicFeed feed;
    bool dropout;
  };
  const Variant variants[] = {{Task::kClimax, TopicFeed::kLogits, false},
                              {Task::kClimax, TopicFeed::kLogits, true},
                              {Task::kSentiment, TopicFeed::kLogits, false},
                              {Task::kSentiment, TopicFeed::kLogits, true},
                              {Task::kSentiment, TopicFeed::kProbabilities, false}};
  for (const auto& v : variants) {
    Rng rng(31);
    std::vector<FrameMatrix> frames;
    for (int e = 0; e < 2; ++e) {
      FrameMatrix m(3, 6);
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform(rng, -1.0, 1.0);
      frames.push_back(m);
    }
    std::vector<Example> batch(2);
    for (std::size_t e = 0; e < 2; ++e) {
      batch[e].frames = &frames[e];
      batch[e].length = e == 0 ? 3 : 2;
      if (v.task == Task::kClimax) {
        for (std::size_t t = 0; t < batch[e].length; ++t) batch[e].climax_targets.push_back(t == 1 ? 1.0 : 0.0);
      } else {
        for (std::size_t c = 0; c < kNumSentiments; ++c) {
          batch[e].sentiment_targets[c] = uniform01(rng);
          batch[e].sentiment_weights[c] = c % 3 == 0 ? 0.0 : 1.0;
        }
        batch[e].topic = e == 0 ? 4 : -1;
      }
    }
    std::vector<DropoutMasks> masks;
    if (v.dropout)
      for (const auto& ex : batch) masks.push_back(sample_masks(rng, ex.length, 6, 8, 0.5));
    for (const auto& [name, err] : tensor_errors(tiny_model(v.task, v.feed, 5), batch, masks)) {
      ++tensors;
      overall = std::max(overall, err);
      if (err >= 1e-4) o.require(false, std::string(task_name(v.task)) + "/" + name + " rel err " + fmt(err));
    }
  }
  o.note(std::to_string(tensors) + " tensor checks, worst rel err " + fmt(overall));
  return o;
}

// Anchors ---------------------------------------------------------------------------

Outcome loss_anchors() {
  Outcome o;
  const double ln2 = std::log(2.0), ln38 = std::log(38.0);
  const double z[] = {0.0}, t[] = {0.5}, w[] = {1.0};
  const double sce = sigmoid_ce(z, t, w);
  o.require(std::abs(sce - ln2) <= 1e-12, "sigmoid_ce(0, 0.5) = " + fmt(sce));
  const std::vector<double> uniform38(38, 0.25);
  const double smce = softmax_ce(uniform38, 11);
  o.require(std::abs(smce - ln38) <= 1e-12, "softmax_ce(uniform 38) = " + fmt(smce));
  Eigen::VectorXd p = Eigen::VectorXd::Zero(1), g = Eigen::VectorXd::Ones(1);
  auto st = RmsPropState::zeros(1);
  rmsprop_update(p, g, st, RmsPropConfig{});
  o.require(std::abs(-p[0] - 8.9443e-4) <= 1e-8, "first RMSprop step " + fmt(-p[0]));
  char buf[160];
  std::snprintf(buf, sizeof buf, "|sce-ln2| %.1e, |smce-ln38| %.1e, step %.9g", std::abs(sce - ln2),
                std::abs(smce - ln38), -p[0]);
  o.note(buf);
  return o;
}

// Learning ----------------------------------------------------------------------------

double val_recall(const std::string& data, const std::string& ckpt, std::uint64_t seed, const std::string& out) {
  cli_ok({"--seed", std::to_string(seed), "evaluate", "--task", "climax", "--data-dir", data, "--checkpoint", ckpt,
          "--fold", "0", "--split", "val", "--out", out});
  return only_report(out + ".json").climax->recall[0][2];
}

Outcome learning(const ClimaxCorpus& c, const Scratch& tmp) {
  Outcome o;
  const auto seed = std::to_string(c.seed);
  cli_ok({"--seed", seed, "train", "--task", "climax", "--data-dir", c.dir, "--out", tmp / "climax_run", "--steps",
          std::to_string(kClimaxSteps)});
  const double recall = val_recall(c.dir, tmp / "climax_run/checkpoint.bin", c.seed, tmp / "climax_val");
  o.require(recall >= 0.9, "climax val recall@1 w2 " + fmt(recall));

  const auto sdir = tmp / "sentiment";
  const std::string sseed = "11";
  cli_ok({"--seed", sseed, "synth", "--kind", "sentiment", "--n", std::to_string(kSentimentVideos), "--out", sdir});
  cli_ok({"extract", "--data-dir", sdir});
  cli_ok({"--seed", sseed, "train", "--task", "sentiment", "--data-dir", sdir, "--out", tmp / "sentiment_run",
          "--steps", std::to_string(kSentimentSteps)});
  cli_ok({"--seed", sseed, "evaluate", "--task", "sentiment", "--data-dir", sdir, "--checkpoint",
          tmp / "sentiment_run/checkpoint.bin", "--fold", "0", "--split", "val", "--out", tmp / "sentiment_val"});
  const auto rep = only_report(tmp / "sentiment_val.json");
  SynthConfig defaults;
  const double ap = rep.sentiment.at(0).class_ap.at(static_cast<std::size_t>(defaults.planted_class));
  o.require(ap >= 0.95, "planted-class val AP " + fmt(ap));
  o.note("climax " + std::to_string(kClimaxSteps) + " steps r@1 w2 " + fmt(recall) + ", sentiment " +
         std::to_string(kSentimentSteps) + " steps class " + std::to_string(defaults.planted_class) + " AP " +
         fmt(ap));
  return o;
}

// Metric oracles ------------------------------------------------------------------------

Outcome metric_oracles() {
  Outcome o;
  const std::vector<std::string> ids3 = {"a", "b", "c"};
  const double ap = average_precision(std::vector<double>{0.9, 0.5, 0.1}, {true, false, true}, ids3);
  o.require(std::abs(ap - 28.0 / 33.0) <= 1e-12, "AP[pos,neg,pos] = " + fmt(ap));

  // five-video hand fixture over four classes
  const int votes[5][4] = {{3, 0, 1, 0}, {0, 2, 0, 0}, {1, 1, 3, 0}, {0, 0, 0, 0}, {2, 5, 0, 1}};
  const double sc[5][4] = {{0.8, 0.1, 0.3, 0.2}, {0.4, 0.7, 0.1, 0.1}, {0.5, 0.2, 0.6, 0.0},
                           {0.1, 0.9, 0.2, 0.3}, {0.4, 0.4, 0.3, 0.6}};
  std::vector<VideoRecord> recs;
  std::vector<std::string> ids;
  Eigen::MatrixXd scores = Eigen::MatrixXd::Constant(5, kNumSentiments, -1.0);
  for (int v = 0; v < 5; ++v) {
    VideoRecord r;
    r.video_id = "h" + std::to_string(v);
    for (int c = 0; c < 4; ++c) {
      r.sentiment_votes[static_cast<std::size_t>(c)] = votes[v][c];
      scores(v, c) = sc[v][c];
    }
    ids.push_back(r.video_id);
    recs.push_back(r);
  }
  double worst = 0.0;
  const auto levels = sentiment_metrics(scores, recs);
  for (int k = 1; k <= 3; ++k) {
    const auto& lv = levels[static_cast<std::size_t>(k - 1)];
    double sum = 0.0;
    int used = 0;
    for (std::size_t c = 0; c < kNumSentiments; ++c) {
      std::vector<double> s;
      std::vector<bool> pos;
      for (int v = 0; v < 5; ++v) {
        s.push_back(scores(v, static_cast<Eigen::Index>(c)));
        pos.push_back(c < 4 && votes[v][c] >= k);
      }
      if (std::count(pos.begin(), pos.end(), true) == 0) {
        o.require(std::isnan(lv.class_ap[c]), "class without positives was scored");
        continue;
      }
      const double want = oracle::average_precision(s, pos, ids);
      worst = std::max(worst, std::abs(lv.class_ap[c] - want));
      sum += want;
      ++used;
    }
    worst = std::max(worst, std::abs(lv.map - sum / used));
    int correct = 0, eval = 0;
    for (int v = 0; v < 5; ++v) {
      bool any = false;
      for (int c = 0; c < 4; ++c) any = any || votes[v][c] >= k;
      if (!any) continue;
      ++eval;
      Eigen::Index best = 0;
      scores.row(v).maxCoeff(&best);
      correct += best < 4 && votes[v][best] >= k;
    }
    worst = std::max(worst, std::abs(lv.acc_at_1 - static_cast<double>(correct) / eval));
  }
  o.require(worst <= 1e-12, "sentiment grid off by " + fmt(worst));

  Rng rng(41);
  int monotone_failures = 0;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<VideoRecord> rv;
    RankedPredictions preds;
    const auto n = 1 + uniform_index(rng, 15);
    for (std::size_t v = 0; v < n; ++v) {
      VideoRecord r;
      r.video_id = "r" + std::to_string(v);
      r.duration_sec = 40;
      for (std::size_t j = 0; j < 1 + uniform_index(rng, 3); ++j)
        r.workers.push_back({true, std::round(uniform(rng, 0.0, 30.0) * 100) / 100, uniform01(rng) < 0.15});
      std::vector<int> ts;
      for (int j = 0; j < 3; ++j) ts.push_back(static_cast<int>(uniform_index(rng, 31)));
      preds[r.video_id] = ts;
      rv.push_back(r);
    }
    if (climax_recall_denominator(rv) == 0) continue;
    const auto m = climax_metrics(preds, rv);
    const std::size_t ks[] = {1, 3};
    for (std::size_t ki = 0; ki < 2; ++ki)
      for (std::size_t w = 0; w < 3; ++w) {
        bool ok = m.recall[ki][w] == oracle::recall(preds, rv, ks[ki], static_cast<int>(w));
        if (w > 0) ok = ok && m.recall[ki][w] >= m.recall[ki][w - 1];
        if (ki > 0) ok = ok && m.recall[1][w] >= m.recall[0][w];
        monotone_failures += !ok;
      }
  }
  o.require(monotone_failures == 0, std::to_string(monotone_failures) + " recall grid failures");
  o.note("AP " + fmt(ap) + ", grid max |diff| " + fmt(worst));
  return o;
}

// Determinism ---------------------------------------------------------------------------

// Train log without its wall-clock column.
std::string log_without_time(const std::string& csv) {
  std::istringstream in(csv);
  std::string line, out;
  while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + '\n';
  return out;
}

Outcome determinism(const Scratch& tmp) {
  Outcome o;
  const auto data = tmp / "det_data";
  cli_ok({"--seed", "5", "synth", "--n", "12", "--out", data});
  std::vector<std::string> digests;
  for (int run = 0; run < 2; ++run) {
    const auto dir = tmp / ("det_run" + std::to_string(run));
    const auto signals = dir + "/signals.jsonl";
    fs::create_directories(dir);
    // each run extracts on its own copy of the media
    fs::copy(data, dir + "/data", fs::copy_options::recursive);
    cli_ok({"extract", "--data-dir", dir + "/data"});
    cli_ok({"--seed", "5", "train", "--task", "climax", "--data-dir", dir + "/data", "--out", dir + "/train",
            "--steps", "40", "--set", "eval_every=20"});
    cli_ok({"--seed", "5", "evaluate", "--task", "climax", "--data-dir", dir + "/data", "--checkpoint",
            dir + "/train/checkpoint.bin", "--out", dir + "/report"});
    digests.push_back(read_file(dir + "/data/signals.jsonl") + '\x1f' + read_file(dir + "/train/checkpoint.bin") +
                      '\x1f' + log_without_time(read_file(dir + "/train/train_log.csv")) + '\x1f' + read_file(dir + "/report.json") +
                      '\x1f' + read_file(dir + "/report.txt"));
  }
  o.require(digests[0] == digests[1], "runs differ");
  o.note("signals, checkpoint, loss log and report identical (" + std::to_string(digests[0].size()) + " bytes)");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria runner"};
  std::vector<std::string> only;
  app.add_option("--only", only, "Run just these criteria");
  CLI11_PARSE(app, argc, argv);

  Scratch tmp;
  ClimaxCorpus corpus{tmp / "climax", 7};
  bool corpus_ready = false;
  auto need_corpus = [&] {
    if (corpus_ready) return;
    cli_ok({"--seed", std::to_string(corpus.seed), "synth", "--n", "50", "--out", corpus.dir});
    cli_ok({"extract", "--data-dir", corpus.dir});
    corpus_ready = true;
  };

  struct Criterion {
    std::string name;
    double budget_sec;  // 0 = no runtime bound
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {"signals", 30, signals_correctness},
      {"climax-oracles", 10, climax_oracles},
      {"synthetic-corpus", 0, [&] { need_corpus(); return synthetic_corpus(corpus, tmp); }},
      {"gradient-checks", 60, gradient_checks},
      {"loss-anchors", 0, loss_anchors},
      {"learning", 600, [&] { need_corpus(); return learning(corpus, tmp); }},
      {"metric-oracles", 0, metric_oracles},
      {"determinism", 0, [&] { return determinism(tmp); }},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.name) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.budget_sec > 0) o.require(sec < c.budget_sec, "runtime over " + fmt(c.budget_sec) + " s");
    failed += !o.pass;
    std::printf("%s %-17s %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", c.name.c_str(), o.detail.c_str(), sec);
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
