#include <sstream>

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "adstory/cli.hpp"
#include "adstory/climax_unsup.hpp"
#include "adstory/eval.hpp"
#include "adstory/pipeline.hpp"
#include "adstory/seqmodel.hpp"
#include "adstory/signals.hpp"
#include "adstory/synth.hpp"

namespace py = pybind11;
using namespace adstory;

namespace {

using U8Array = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;
using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Rational to_rational(py::handle fps) {
  if (py::isinstance<py::tuple>(fps)) {
    const auto t = fps.cast<py::tuple>();
    return {t[0].cast<std::int64_t>(), t[1].cast<std::int64_t>()};
  }
  const double f = fps.cast<double>();
  if (f == static_cast<double>(static_cast<std::int64_t>(f))) return {static_cast<std::int64_t>(f), 1};
  return Rational{static_cast<std::int64_t>(f * 1001.0 + 0.5), 1001}.reduced();
}

FrameSeq to_frames(const U8Array& frames, py::handle fps) {
  if (frames.ndim() != 3) throw ValidationError("frames must be a (n, height, width) uint8 array");
  FrameSeq v;
  v.height = static_cast<int>(frames.shape(1));
  v.width = static_cast<int>(frames.shape(2));
  v.fps = to_rational(fps);
  const auto plane = static_cast<std::size_t>(v.width * v.height);
  for (py::ssize_t k = 0; k < frames.shape(0); ++k) {
    const auto* p = frames.data(k, 0, 0);
    v.frames.emplace_back(p, p + plane);
  }
  return v;
}

py::dict track_dict(const SignalTrack& t) {
  py::array_t<std::uint8_t> shots({static_cast<py::ssize_t>(t.size()), static_cast<py::ssize_t>(kShotLevels)});
  auto s = shots.mutable_unchecked<2>();
  for (std::size_t k = 0; k < t.size(); ++k)
    for (std::size_t m = 0; m < kShotLevels; ++m) s(static_cast<py::ssize_t>(k), static_cast<py::ssize_t>(m)) = t.shots[k][m];
  py::dict d;
  d["fps"] = py::make_tuple(t.fps.num, t.fps.den);
  d["audio"] = py::array_t<double>(static_cast<py::ssize_t>(t.size()), t.audio.data());
  d["flow"] = py::array_t<double>(static_cast<py::ssize_t>(t.size()), t.flow.data());
  d["shots"] = shots;
  return d;
}

SignalTrack track_from(const py::dict& d) {
  SignalTrack t;
  t.fps = to_rational(d["fps"]);
  t.audio = d["audio"].cast<std::vector<double>>();
  t.flow = d["flow"].cast<std::vector<double>>();
  const auto shots = d["shots"].cast<U8Array>();
  if (shots.ndim() != 2 || shots.shape(1) != static_cast<py::ssize_t>(kShotLevels))
    throw ValidationError("shots must be an (n, 5) array");
  for (py::ssize_t k = 0; k < shots.shape(0); ++k) {
    ShotIndicator b{};
    for (std::size_t m = 0; m < kShotLevels; ++m) b[m] = *shots.data(k, static_cast<py::ssize_t>(m));
    t.shots.push_back(b);
  }
  if (t.flow.size() != t.audio.size() || t.shots.size() != t.audio.size())
    throw ValidationError("audio, flow and shots lengths differ");
  return t;
}

ClimaxMethod method_of(const std::string& name) {
  const auto m = parse_method(name);
  if (!m) throw ValidationError("unknown method '" + name + "'");
  return *m;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Climax and evoked-sentiment modeling for video ads";
  m.attr("__version__") = std::string(kVersion);

  py::register_exception<Error>(m, "AdstoryError", PyExc_ValueError);

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = run_cli(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Run the command line; returns (exit_code, stdout, stderr).");

  // signals
  m.def(
      "dense_flow",
      [](const U8Array& prev, const U8Array& next, double alpha, int iterations) {
        if (prev.ndim() != 2 || next.ndim() != 2) throw ValidationError("frames must be 2-D uint8 arrays");
        const int h = static_cast<int>(prev.shape(0)), w = static_cast<int>(prev.shape(1));
        if (next.shape(0) != h || next.shape(1) != w) throw ValidationError("frame sizes differ");
        const auto n = static_cast<std::size_t>(w * h);
        const auto f = dense_flow({prev.data(), n}, {next.data(), n}, w, h, FlowOptions{alpha, iterations});
        py::array_t<double> u({h, w}), v({h, w});
        std::copy(f.u.begin(), f.u.end(), u.mutable_data());
        std::copy(f.v.begin(), f.v.end(), v.mutable_data());
        return py::make_tuple(u, v);
      },
      py::arg("prev"), py::arg("next"), py::arg("alpha") = 1.0, py::arg("iterations") = 100);
  m.def(
      "flow_magnitude",
      [](const F64Array& u, const F64Array& v) {
        if (u.size() != v.size()) throw ValidationError("u and v sizes differ");
        FlowField f{static_cast<int>(u.size()), 1, {u.data(), u.data() + u.size()}, {v.data(), v.data() + v.size()}};
        return flow_magnitude(f);
      },
      py::arg("u"), py::arg("v"));
  m.def("histogram_distance", [](const U8Array& a, const U8Array& b) {
    if (a.size() != b.size()) throw ValidationError("plane sizes differ");
    return histogram_distance({a.data(), static_cast<std::size_t>(a.size())}, {b.data(), static_cast<std::size_t>(b.size())});
  });
  m.def(
      "extract_signals",
      [](const U8Array& frames, py::handle fps, const F64Array& samples, int sample_rate, int jobs) {
        AudioTrack a{sample_rate, {samples.data(), samples.data() + samples.size()}};
        SignalOptions opts;
        opts.jobs = jobs;
        SignalTrack t;
        {
          const auto v = to_frames(frames, fps);
          py::gil_scoped_release release;
          t = extract_signals(v, a, opts);
        }
        return track_dict(t);
      },
      py::arg("frames"), py::arg("fps"), py::arg("samples"), py::arg("sample_rate"), py::arg("jobs") = 1,
      "Per-frame audio amplitude, shot indicators and flow magnitude.");
  m.def(
      "extract_files",
      [](const std::filesystem::path& video, const std::filesystem::path& audio) {
        return track_dict(extract_files(video, audio));
      },
      py::arg("video"), py::arg("audio"));
  m.def(
      "read_signals",
      [](const std::filesystem::path& p) {
        py::dict out;
        for (const auto& [id, t] : read_signals(p)) out[py::str(id)] = track_dict(t);
        return out;
      },
      py::arg("path"));

  // unsupervised climax
  m.def(
      "predict",
      [](const py::dict& track, const std::string& method, std::size_t k) {
        return predict_from_signals(track_from(track), method_of(method), k).timestamps_sec;
      },
      py::arg("track"), py::arg("method"), py::arg("k") = 1);
  m.def(
      "top_k_peaks",
      [](std::vector<double> values, std::size_t k) { return top_k_peaks({std::move(values)}, k).timestamps_sec; },
      py::arg("values"), py::arg("k"));
  m.def(
      "longest_run_centers",
      [](std::vector<double> values, std::size_t k) {
        return longest_run_centers({std::move(values)}, k).timestamps_sec;
      },
      py::arg("values"), py::arg("k"));
  m.def(
      "heuristic_baseline",
      [](std::size_t duration, std::size_t k) { return heuristic_baseline(duration, k).timestamps_sec; },
      py::arg("duration_sec"), py::arg("k"));

  // metrics
  m.def(
      "average_precision",
      [](const std::vector<double>& scores, const std::vector<bool>& positives, const std::vector<std::string>& ids) {
        return average_precision(scores, positives, ids);
      },
      py::arg("scores"), py::arg("positives"), py::arg("ids"));
  m.def(
      "climax_recall",
      [](const std::map<std::string, std::vector<int>>& predictions, const std::filesystem::path& annotations,
         std::size_t k, int window) {
        RankedPredictions p(predictions.begin(), predictions.end());
        return climax_recall(p, read_annotations(annotations), k, window);
      },
      py::arg("predictions"), py::arg("annotations"), py::arg("k"), py::arg("window"));

  // losses and optimizer
  m.def("sigmoid_ce", [](double logit, double target) { return sigmoid_ce_element(logit, target); });
  m.def(
      "softmax_ce",
      [](const std::vector<double>& logits, std::size_t index) { return softmax_ce(logits, index); },
      py::arg("logits"), py::arg("index"));

  // models
  m.def(
      "climax_probabilities",
      [](const std::filesystem::path& checkpoint, const FrameMatrix& frames) {
        const auto ck = load_checkpoint(checkpoint, Task::kClimax);
        return climax_probabilities(ck, frames);
      },
      py::arg("checkpoint"), py::arg("frames"),
      "Per-second climax probabilities for an unstandardized (seconds x 2510) feature matrix.");
  m.def(
      "checkpoint_info",
      [](const std::filesystem::path& p) {
        const auto ck = load_checkpoint(p);
        py::dict d;
        d["task"] = std::string(task_name(ck.model.config().task));
        d["input_dim"] = ck.model.config().input_dim;
        d["hidden"] = ck.model.config().hidden;
        d["step"] = ck.step;
        d["seed"] = ck.seed;
        d["n_params"] = ck.model.flat().size();
        return d;
      },
      py::arg("path"));

  // synthetic corpus
  m.def(
      "synthesize",
      [](const std::filesystem::path& out, const std::string& kind, std::size_t n, std::uint64_t seed) {
        SynthConfig cfg;
        const auto k = parse_synth_kind(kind);
        if (!k) throw ValidationError("kind must be climax or sentiment");
        cfg.kind = *k;
        cfg.n = n;
        cfg.seed = seed;
        const auto corpus = synthesize(cfg);
        write_corpus(corpus, out);
        return py::module_::import("json").attr("loads")(ground_truth_json(corpus));
      },
      py::arg("out"), py::arg("kind") = "climax", py::arg("n") = 50, py::arg("seed") = 1,
      "Write a synthetic corpus under `out`; returns its ground truth.");
}
