#include "adstory/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <ostream>
#include <set>

#include <CLI11.hpp>
#include <json.hpp>

#include "adstory/eval.hpp"
#include "adstory/pipeline.hpp"
#include "adstory/synth.hpp"
#include "adstory/trainer.hpp"

namespace adstory {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// Input problem detected by the command layer (exit 2).
class UsageError : public Error {
 public:
  using Error::Error;
};

struct Globals {
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string config;
  int jobs = 1;
  bool quiet = false;
};

std::string hex64(std::uint64_t x) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

/// Collects the RunManifest of one invocation.
class Manifest {
 public:
  explicit Manifest(std::string command) : command_(std::move(command)), start_(std::chrono::steady_clock::now()) {}

  void config(const std::string& key, json value) { config_[key] = std::move(value); }
  void input(const fs::path& p) {
    if (fs::is_regular_file(p)) inputs_[p.string()] = hex64(fnv1a64(read_file(p)));
  }
  void output(const fs::path& p) { outputs_.push_back(p.string()); }
  void extra(const std::string& key, json value) { extra_[key] = std::move(value); }

  void write(const fs::path& where, const Globals& g) const {
    json j;
    j["command"] = command_;
    j["config"] = config_;
    j["seed"] = g.seed;
    j["jobs"] = g.jobs;
    j["inputs"] = inputs_;
    j["outputs"] = outputs_;
    j["tool_version"] = std::string(kVersion);
    j["wall_ms"] = std::chrono::duration_cast<std::chrono::milliseconds>(
                       std::chrono::steady_clock::now() - start_)
                       .count();
    if (!extra_.empty()) j["extra"] = extra_;
    std::ofstream out(where, std::ios::binary);
    if (!out) throw Error("cannot write " + where.string());
    out << j.dump(2) << '\n';
  }

 private:
  std::string command_;
  std::chrono::steady_clock::time_point start_;
  json config_ = json::object();
  json inputs_ = json::object();
  std::vector<std::string> outputs_;
  json extra_ = json::object();
};

/// Manifest location: inside an output directory, next to an output file.
fs::path manifest_path(const fs::path& out, bool is_dir) {
  if (is_dir) return out / "manifest.json";
  auto p = out;
  p += ".manifest.json";
  return p;
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

template <class F>
auto reading(const fs::path& p, F&& f) {
  try {
    return f();
  } catch (const NumericError&) {
    throw;
  } catch (const Error& e) {
    const std::string what = e.what();
    if (what.find(p.string()) != std::string::npos) throw;
    throw UsageError(p.string() + ": " + what);
  }
}

void write_text(const fs::path& p, const std::string& text) {
  ensure_parent(p);
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write " + p.string());
  out << text;
}

std::vector<VideoRecord> load_records(const fs::path& p) {
  auto records = reading(p, [&] { return read_annotations(p); });
  if (records.empty()) throw UsageError(p.string() + ": no videos");
  return records;
}

std::optional<ModelCheckpoint> maybe_checkpoint(const std::string& path, std::optional<Task> task,
                                                Manifest& m) {
  if (path.empty()) return std::nullopt;
  m.input(path);
  return reading(path, [&] { return load_checkpoint(path, task); });
}

/// Ids of `split` in `fold`, or every record id when fold < 0.
std::vector<VideoRecord> select_split(std::vector<VideoRecord> records, int fold, Split split,
                                      std::uint64_t seed) {
  if (fold < 0) return records;
  if (fold >= kNumFolds) throw UsageError("--fold must be in [0, 5)");
  std::vector<std::string> ids;
  for (const auto& r : records) ids.push_back(r.video_id);
  const auto plans = make_splits(ids, seed);
  const auto& plan = plans[static_cast<std::size_t>(fold)];
  std::erase_if(records, [&](const VideoRecord& r) { return plan.assignment.at(r.video_id) != split; });
  return records;
}

Dataset subset(const Dataset& data, std::span<const VideoRecord> records) {
  Dataset out;
  for (const auto& r : records) {
    const auto* v = data.find(r.video_id);
    if (!v) throw UsageError("no data for video '" + r.video_id + "'");
    out.videos.push_back(*v);
  }
  return out;
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw UsageError("--split must be train, val or test");
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"adstory: climax and evoked-sentiment modeling for video ads"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--seed", g.seed, "Global random seed")->each([&](const std::string&) { g.seed_given = true; });
  app.add_option("--config", g.config, "Training config file (key = value)");
  app.add_option("--jobs", g.jobs, "Worker threads")->check(CLI::PositiveNumber);
  app.add_flag("--quiet", g.quiet, "Suppress progress output");

  std::function<int()> command;
  auto log = [&](const std::string& line) {
    if (!g.quiet) out << line << '\n';
  };

  // synth ------------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus with known ground truth");
  std::string synth_kind = "climax", synth_out;
  std::size_t synth_n = 50;
  synth->add_option("--kind", synth_kind)->check(CLI::IsMember({"climax", "sentiment"}));
  synth->add_option("--n", synth_n, "Number of videos (>= 5)");
  synth->add_option("--out", synth_out, "Output data directory")->required();
  synth->callback([&] {
    command = [&] {
      Manifest m("synth");
      SynthConfig cfg;
      cfg.kind = *parse_synth_kind(synth_kind);
      cfg.n = synth_n;
      cfg.seed = g.seed;
      m.config("kind", synth_kind);
      m.config("n", synth_n);
      const auto corpus = synthesize(cfg);
      write_corpus(corpus, synth_out);
      for (const char* f : {"annotations.jsonl", "features.jsonl", "ground_truth.json"}) m.output(fs::path(synth_out) / f);
      m.output(fs::path(synth_out) / "videos");
      m.output(fs::path(synth_out) / "audio");
      m.extra("ground_truth", json::parse(ground_truth_json(corpus)));
      m.write(manifest_path(synth_out, true), g);
      log("wrote " + std::to_string(corpus.videos.size()) + " videos to " + synth_out);
      return kExitOk;
    };
  });

  // extract ------------------------------------------------------------------
  auto* extract = app.add_subcommand("extract", "Per-frame audio, shot and flow signals");
  std::string ex_video, ex_audio, ex_out, ex_dir, ex_id;
  extract->add_option("--video", ex_video, "Y4M file");
  extract->add_option("--audio", ex_audio, "WAV file");
  extract->add_option("--id", ex_id, "Video id (default: video file stem)");
  extract->add_option("--data-dir", ex_dir, "Extract every annotated video of a data directory");
  extract->add_option("--out", ex_out, "Signals JSONL (default <data-dir>/signals.jsonl)");
  extract->callback([&] {
    command = [&] {
      Manifest m("extract");
      SignalOptions opts;
      opts.jobs = g.jobs;
      std::map<std::string, SignalTrack> tracks;
      if (!ex_dir.empty()) {
        if (!ex_video.empty() || !ex_audio.empty()) throw UsageError("--data-dir excludes --video/--audio");
        DataDir dir{ex_dir};
        if (ex_out.empty()) ex_out = dir.signals().string();
        m.config("data_dir", ex_dir);
        m.input(dir.annotations());
        const auto records = load_records(dir.annotations());
        for (const auto& r : records) {
          for (const auto& p : {dir.video(r.video_id), dir.audio(r.video_id)}) {
            if (!fs::exists(p)) throw UsageError("missing input file " + p.string());
            m.input(p);
          }
        }
        tracks = extract_corpus(dir, records, opts, g.jobs);
      } else {
        if (ex_video.empty() || ex_audio.empty() || ex_out.empty())
          throw UsageError("extract needs --video, --audio and --out (or --data-dir)");
        for (const auto& p : {ex_video, ex_audio})
          if (!fs::exists(p)) throw UsageError("missing input file " + p);
        m.input(ex_video);
        m.input(ex_audio);
        const auto frames = reading(ex_video, [&] { return read_y4m(ex_video); });
        const auto pcm = reading(ex_audio, [&] { return read_wav(ex_audio); });
        const auto id = ex_id.empty() ? fs::path(ex_video).stem().string() : ex_id;
        tracks.emplace(id, extract_signals(frames, pcm, opts));
      }
      ensure_parent(ex_out);
      write_signals(ex_out, tracks);
      m.output(ex_out);
      m.config("out", ex_out);
      m.write(manifest_path(ex_out, false), g);
      log("wrote signals for " + std::to_string(tracks.size()) + " video(s) to " + ex_out);
      return kExitOk;
    };
  });

  // predict ------------------------------------------------------------------
  auto* predict = app.add_subcommand("predict", "Top-k climax timestamps");
  std::string pr_method, pr_signals, pr_dir, pr_ckpt, pr_out;
  std::size_t pr_k = 1;
  predict->add_option("--method", pr_method)->required()->check(
      CLI::IsMember({"audio", "flow", "shots", "baseline", "lstm"}));
  predict->add_option("--k", pr_k)->check(CLI::PositiveNumber);
  predict->add_option("--signals", pr_signals, "Signals JSONL (signal methods)");
  predict->add_option("--data-dir", pr_dir, "Data directory (lstm)");
  predict->add_option("--features", pr_dir, "Alias of --data-dir");
  predict->add_option("--checkpoint", pr_ckpt, "Climax checkpoint (lstm)");
  predict->add_option("--out", pr_out, "Predictions JSONL")->required();
  predict->callback([&] {
    command = [&] {
      Manifest m("predict");
      m.config("method", pr_method);
      m.config("k", pr_k);
      const auto method = *parse_method(pr_method);
      std::vector<PredictionRow> rows;
      if (method == ClimaxMethod::kLstm) {
        if (pr_ckpt.empty()) throw UsageError("--method lstm requires --checkpoint");
        if (pr_dir.empty()) throw UsageError("--method lstm requires --data-dir");
        const auto ck = *maybe_checkpoint(pr_ckpt, Task::kClimax, m);
        DataDir dir{pr_dir};
        for (const auto& p : {dir.annotations(), dir.features(), dir.signals()}) m.input(p);
        const auto data = reading(pr_dir, [&] { return load_dataset(dir, Task::kClimax, nullptr, kMaxSequenceLength); });
        rows = predict_lstm(ck, data, pr_k);
      } else {
        if (pr_signals.empty()) {
          if (pr_dir.empty()) throw UsageError("--method " + pr_method + " requires --signals");
          pr_signals = DataDir{pr_dir}.signals().string();
        }
        m.input(pr_signals);
        const auto tracks = reading(pr_signals, [&] { return read_signals(pr_signals); });
        for (const auto& [id, track] : tracks) rows.push_back({id, predict_from_signals(track, method, pr_k), pr_k});
      }
      ensure_parent(pr_out);
      write_predictions(pr_out, rows);
      m.output(pr_out);
      m.write(manifest_path(pr_out, false), g);
      log("wrote " + std::to_string(rows.size()) + " predictions to " + pr_out);
      return kExitOk;
    };
  });

  // train -----------------------------------------------------------------------
  auto* trainc = app.add_subcommand("train", "Train the climax or sentiment LSTM on one fold");
  std::string tr_task, tr_dir, tr_out, tr_climax;
  int tr_fold = 0;
  std::optional<std::int64_t> tr_steps;
  std::vector<std::string> tr_set;
  trainc->add_option("--task", tr_task)->required()->check(CLI::IsMember({"climax", "sentiment"}));
  trainc->add_option("--fold", tr_fold)->check(CLI::Range(0, kNumFolds - 1));
  trainc->add_option("--data-dir", tr_dir)->required();
  trainc->add_option("--out", tr_out, "Output directory")->required();
  trainc->add_option("--steps", tr_steps);
  trainc->add_option("--set", tr_set, "Config override key=value (repeatable)");
  trainc->add_option("--climax-checkpoint", tr_climax, "Climax model feeding the sentiment input");
  trainc->callback([&] {
    command = [&] {
      Manifest m("train");
      TrainConfig cfg;
      if (!g.config.empty()) {
        m.input(g.config);
        cfg = reading(g.config, [&] { return read_train_config(g.config); });
      }
      for (const auto& kv : tr_set) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
        set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
      }
      cfg.task = *parse_task(tr_task);
      if (tr_steps) set_config_value(cfg, "steps", std::to_string(*tr_steps));
      if (g.seed_given) cfg.seed = g.seed;
      if (g.jobs > 1) cfg.jobs = g.jobs;
      m.config("train_config", train_config_text(cfg));
      m.config("fold", tr_fold);
      m.config("data_dir", tr_dir);

      const auto climax_ck = maybe_checkpoint(tr_climax, Task::kClimax, m);
      if (cfg.task == Task::kSentiment && !climax_ck)
        err << "warning: no --climax-checkpoint; the climax input slot is zero\n";
      DataDir dir{tr_dir};
      for (const auto& p : {dir.annotations(), dir.features(), dir.signals()}) m.input(p);
      const auto data = reading(tr_dir, [&] {
        return load_dataset(dir, cfg.task, climax_ck ? &*climax_ck : nullptr, cfg.max_len);
      });
      std::vector<std::string> ids;
      for (const auto& v : data.videos) ids.push_back(v.video_id);
      const auto plans = make_splits(ids, cfg.seed);

      const auto result = train(cfg, data, plans[static_cast<std::size_t>(tr_fold)], [&](const TrainLogRow& row) {
        if (row.val_metric)
          log("step " + std::to_string(row.step) + " loss " + std::to_string(row.train_loss) + " val " +
              std::to_string(*row.val_metric));
      });
      fs::create_directories(tr_out);
      const auto ck_path = fs::path(tr_out) / "checkpoint.bin";
      const auto log_path = fs::path(tr_out) / "train_log.csv";
      save_checkpoint(ck_path, result.checkpoint);
      write_text(log_path, train_log_csv(result.log));
      m.output(ck_path);
      m.output(log_path);
      m.extra("best_step", result.checkpoint.step);
      m.extra("best_val_metric", result.best_metric ? json(*result.best_metric) : json(nullptr));
      json skipped = json::array();
      for (auto c : result.classes_without_positives) skipped.push_back(std::string(sentiment_names()[c]));
      m.extra("classes_without_positives", skipped);
      m.write(manifest_path(tr_out, true), g);
      log("best step " + std::to_string(result.checkpoint.step) + ", checkpoint " + ck_path.string());
      return kExitOk;
    };
  });

  // evaluate -------------------------------------------------------------------
  auto* evaluate = app.add_subcommand("evaluate", "Climax recall grid or sentiment mAP / acc@1");
  std::string ev_task, ev_ckpt, ev_ann, ev_dir, ev_out, ev_climax, ev_split = "test";
  std::vector<std::string> ev_preds;
  int ev_fold = -1;
  evaluate->add_option("--task", ev_task)->required()->check(CLI::IsMember({"climax", "sentiment"}));
  evaluate->add_option("--predictions", ev_preds, "Predictions JSONL (repeatable, one method each)");
  evaluate->add_option("--checkpoint", ev_ckpt, "Model checkpoint");
  evaluate->add_option("--annotations", ev_ann, "Annotations JSONL (default <data-dir>/annotations.jsonl)");
  evaluate->add_option("--data-dir", ev_dir, "Data directory (checkpoint mode)");
  evaluate->add_option("--climax-checkpoint", ev_climax, "Climax model feeding the sentiment input");
  evaluate->add_option("--fold", ev_fold, "Restrict to one split of this fold");
  evaluate->add_option("--split", ev_split, "train, val or test (with --fold)");
  evaluate->add_option("--out", ev_out, "Report path without extension")->required();
  evaluate->callback([&] {
    command = [&] {
      Manifest m("evaluate");
      m.config("task", ev_task);
      m.config("fold", ev_fold);
      m.config("split", ev_split);
      const auto task = *parse_task(ev_task);
      if (ev_ann.empty()) {
        if (ev_dir.empty()) throw UsageError("evaluate needs --annotations or --data-dir");
        ev_ann = DataDir{ev_dir}.annotations().string();
      }
      m.input(ev_ann);
      const auto records = select_split(load_records(ev_ann), ev_fold, parse_split(ev_split), g.seed);
      if (records.empty()) throw UsageError("no videos in the selected split");

      std::vector<EvalReport> reports;
      if (task == Task::kClimax) {
        if (ev_preds.empty() && ev_ckpt.empty()) throw UsageError("evaluate needs --predictions or --checkpoint");
        for (const auto& p : ev_preds) {
          m.input(p);
          const auto rows = reading(p, [&] { return read_predictions(p); });
          EvalReport r;
          r.task = "climax";
          r.method = rows.empty() ? fs::path(p).stem().string()
                                  : std::string(method_name(rows.front().prediction.method));
          // Keep only rows for the evaluated videos.
          std::vector<PredictionRow> kept;
          std::set<std::string> wanted;
          for (const auto& rec : records) wanted.insert(rec.video_id);
          std::set<std::string> all_ids;
          for (const auto& a : load_records(ev_ann)) all_ids.insert(a.video_id);
          for (const auto& row : rows) {
            if (!all_ids.count(row.video_id))
              throw UsageError(p + ": prediction for unknown video '" + row.video_id + "'");
            if (wanted.count(row.video_id)) kept.push_back(row);
          }
          r.climax = climax_metrics(ranked(kept), records);
          reports.push_back(std::move(r));
        }
        if (!ev_ckpt.empty()) {
          if (ev_dir.empty()) throw UsageError("--checkpoint needs --data-dir");
          const auto ck = *maybe_checkpoint(ev_ckpt, Task::kClimax, m);
          const auto data = subset(load_dataset(DataDir{ev_dir}, Task::kClimax), records);
          EvalReport r;
          r.task = "climax";
          r.method = "lstm";
          r.climax = climax_metrics(ranked(predict_lstm(ck, data, 3)), records);
          reports.push_back(std::move(r));
        }
      } else {
        if (ev_ckpt.empty() || ev_dir.empty()) throw UsageError("sentiment evaluation needs --checkpoint and --data-dir");
        const auto ck = *maybe_checkpoint(ev_ckpt, Task::kSentiment, m);
        const auto climax_ck = maybe_checkpoint(ev_climax, Task::kClimax, m);
        DataDir dir{ev_dir};
        for (const auto& p : {dir.features(), dir.signals()}) m.input(p);
        const auto data = subset(
            reading(ev_dir, [&] { return load_dataset(dir, Task::kSentiment, climax_ck ? &*climax_ck : nullptr); }),
            records);
        EvalReport r;
        r.task = "sentiment";
        r.method = "lstm";
        r.sentiment = sentiment_metrics(predict_sentiment_scores(ck.model, standardized_for(ck, data)), records);
        reports.push_back(std::move(r));
      }

      emit_report(reports, ev_out);
      m.output(ev_out + ".json");
      m.output(ev_out + ".txt");
      m.write(manifest_path(ev_out, false), g);
      if (!g.quiet) out << report_text(reports);
      bool sound = true;
      for (const auto& r : reports)
        for (const auto& v : check_report(r)) {
          err << "invariant violated: " << v << '\n';
          sound = false;
        }
      return sound ? kExitOk : kExitInvariant;
    };
  });

  // emit-plots -----------------------------------------------------------------
  auto* plots = app.add_subcommand("emit-plots", "Per-second signal and climax probability CSVs");
  std::string pl_dir, pl_out, pl_ckpt;
  plots->add_option("--data-dir", pl_dir)->required();
  plots->add_option("--checkpoint", pl_ckpt, "Climax checkpoint for the probability column");
  plots->add_option("--out", pl_out, "Output directory")->required();
  plots->callback([&] {
    command = [&] {
      Manifest m("emit-plots");
      DataDir dir{pl_dir};
      m.input(dir.signals());
      const auto tracks = reading(dir.signals(), [&] { return read_signals(dir.signals()); });
      const auto ck = maybe_checkpoint(pl_ckpt, Task::kClimax, m);
      std::optional<Dataset> data;
      if (ck) {
        for (const auto& p : {dir.annotations(), dir.features()}) m.input(p);
        data = reading(pl_dir, [&] { return load_dataset(dir, Task::kClimax); });
      }
      fs::create_directories(pl_out);
      for (const auto& [id, track] : tracks) {
        const auto series = aggregate_per_second(track);
        std::vector<double> probs;
        if (data) {
          const auto* v = data->find(id);
          if (!v) throw UsageError("no features for video '" + id + "'");
          probs = climax_probabilities(*ck, v->frames);
          probs.resize(series.audio.duration_sec(), 0.0);
        }
        const auto p = fs::path(pl_out) / (id + ".csv");
        write_plot_csv(p, series, probs);
        m.output(p);
      }
      m.write(manifest_path(pl_out, true), g);
      log("wrote " + std::to_string(tracks.size()) + " plot series to " + pl_out);
      return kExitOk;
    };
  });

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitInput;
  }
  try {
    return command();
  } catch (const NumericError& e) {
    err << "error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  }
}

}  // namespace adstory
