#include "adstory/seqmodel.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <thread>

namespace adstory {

std::string_view task_name(Task t) { return t == Task::kClimax ? "climax" : "sentiment"; }

std::optional<Task> parse_task(std::string_view name) {
  if (name == "climax") return Task::kClimax;
  if (name == "sentiment") return Task::kSentiment;
  return std::nullopt;
}

// Model -------------------------------------------------------------------------

Model::Model(const ModelConfig& config) : config_(config) {
  if (config.input_dim == 0 || config.hidden == 0)
    throw ValidationError("model dimensions must be positive");
  index_.fill(-1);
  const auto d = static_cast<Eigen::Index>(config.input_dim);
  const auto h = static_cast<Eigen::Index>(config.hidden);
  const auto g = h * static_cast<Eigen::Index>(kNumGates);
  Eigen::Index offset = 0;
  auto add = [&](Param p, std::string name, Eigen::Index rows, Eigen::Index cols) {
    index_[static_cast<std::size_t>(p)] = static_cast<int>(tensors_.size());
    tensors_.push_back({std::move(name), rows, cols, offset});
    offset += rows * cols;
  };
  add(Param::kInputWeights, "lstm/input_weights", d, g);
  add(Param::kRecurrentWeights, "lstm/recurrent_weights", h, g);
  add(Param::kGateBias, "lstm/bias", g, 1);
  if (config.task == Task::kClimax) {
    add(Param::kClimaxWeights, "climax/weights", h, 1);
    add(Param::kClimaxBias, "climax/bias", 1, 1);
  } else {
    const auto topics = static_cast<Eigen::Index>(kNumTopics);
    const auto sentiments = static_cast<Eigen::Index>(kNumSentiments);
    add(Param::kTopicWeights, "topic/weights", h, topics);
    add(Param::kTopicBias, "topic/bias", topics, 1);
    add(Param::kSentimentWeights, "sentiment/weights", h + topics, sentiments);
    add(Param::kSentimentBias, "sentiment/bias", sentiments, 1);
  }
  flat_ = Eigen::VectorXd::Zero(offset);
}

bool Model::has(Param p) const { return index_[static_cast<std::size_t>(p)] >= 0; }

const TensorSpec& Model::spec(Param p) const {
  const int i = index_[static_cast<std::size_t>(p)];
  if (i < 0) throw ValidationError("parameter not present for this task");
  return tensors_[static_cast<std::size_t>(i)];
}

MatrixMap Model::param(Param p) {
  const auto& s = spec(p);
  return MatrixMap(flat_.data() + s.offset, s.rows, s.cols);
}

ConstMatrixMap Model::param(Param p) const {
  const auto& s = spec(p);
  return ConstMatrixMap(flat_.data() + s.offset, s.rows, s.cols);
}

void Model::init_uniform(std::uint64_t seed) {
  Rng rng(seed);
  flat_.setZero();
  const auto d = static_cast<double>(config_.input_dim);
  const auto h = static_cast<double>(config_.hidden);
  auto fill = [&](Param p, double fan_in) {
    if (!has(p)) return;
    const double s = 1.0 / std::sqrt(fan_in);
    auto m = param(p);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform(rng, -s, s);
  };
  fill(Param::kInputWeights, d + h);
  fill(Param::kRecurrentWeights, d + h);
  fill(Param::kClimaxWeights, h);
  fill(Param::kTopicWeights, h);
  fill(Param::kSentimentWeights, h + static_cast<double>(kNumTopics));
}

// Dropout -------------------------------------------------------------------------

namespace {

void fill_mask(RowMatrix& m, Rng& rng, double keep_prob) {
  const double scale = 1.0 / keep_prob;
  const auto threshold = static_cast<std::uint64_t>(keep_prob * 4294967296.0);
  double* p = m.data();
  const Eigen::Index n = m.size();
  for (Eigen::Index i = 0; i < n; i += 2) {
    const std::uint64_t r = rng();
    p[i] = (r >> 32) < threshold ? scale : 0.0;
    if (i + 1 < n) p[i + 1] = (r & 0xffffffffULL) < threshold ? scale : 0.0;
  }
}

}  // namespace

DropoutMasks sample_masks(Rng& rng, std::size_t length, std::size_t input_dim, std::size_t hidden,
                          double keep_prob) {
  if (!(keep_prob > 0.0 && keep_prob <= 1.0)) throw ValidationError("keep_prob must be in (0, 1]");
  DropoutMasks m;
  if (keep_prob >= 1.0) return m;
  m.input.resize(static_cast<Eigen::Index>(length), static_cast<Eigen::Index>(input_dim));
  m.output.resize(static_cast<Eigen::Index>(length), static_cast<Eigen::Index>(hidden));
  fill_mask(m.input, rng, keep_prob);
  fill_mask(m.output, rng, keep_prob);
  return m;
}

// Forward -------------------------------------------------------------------------

namespace {

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

/// Activations of one sequence kept for the backward pass.
struct Trace {
  std::size_t length = 0;
  RowMatrix xd;     // masked input, only when an input mask is present
  RowMatrix gates;  // L x 4H activated [i f g o]
  RowMatrix c;      // L x H
  RowMatrix tc;     // tanh(c)
  RowMatrix h;      // L x H
  RowMatrix y;      // L x H, output-masked h
};

std::size_t check_sequence(const Model& model, const FrameMatrix& seq,
                           std::optional<std::size_t> length, const DropoutMasks* masks) {
  if (static_cast<std::size_t>(seq.cols()) != model.config().input_dim)
    throw ValidationError("sequence has " + std::to_string(seq.cols()) +
                          " features per frame, model expects " +
                          std::to_string(model.config().input_dim));
  const std::size_t len = length.value_or(static_cast<std::size_t>(seq.rows()));
  if (len > static_cast<std::size_t>(seq.rows())) throw ValidationError("length exceeds sequence rows");
  if (masks && !masks->identity() &&
      (masks->input.rows() < static_cast<Eigen::Index>(len) ||
       masks->input.cols() != seq.cols() || masks->output.rows() < static_cast<Eigen::Index>(len) ||
       masks->output.cols() != static_cast<Eigen::Index>(model.config().hidden)))
    throw ValidationError("dropout mask shape mismatch");
  return len;
}

/// `projected`, when given, holds the input projection (masked x times the
/// input weights) of the first `len` frames.
void run_lstm(const Model& model, const FrameMatrix& seq, std::size_t len,
              const DropoutMasks* masks, Trace& tr, const RowMatrix* projected = nullptr) {
  const auto H = static_cast<Eigen::Index>(model.config().hidden);
  const auto L = static_cast<Eigen::Index>(len);
  const bool masked = masks && !masks->identity();
  const auto wx = model.param(Param::kInputWeights);
  const auto wh = model.param(Param::kRecurrentWeights);
  const auto bias = model.param(Param::kGateBias);
  const double fb = model.config().forget_bias;

  tr.length = len;
  if (projected) {
    tr.xd.resize(0, 0);
    tr.gates = *projected;
  } else if (masked) {
    tr.xd = seq.topRows(L).cwiseProduct(masks->input.topRows(L));
    tr.gates.noalias() = tr.xd * wx;
  } else {
    tr.xd.resize(0, 0);
    tr.gates.noalias() = seq.topRows(L) * wx;
  }
  tr.c.resize(L, H);
  tr.tc.resize(L, H);
  tr.h.resize(L, H);
  tr.y.resize(L, H);

  Eigen::RowVectorXd z(4 * H);
  for (Eigen::Index t = 0; t < L; ++t) {
    z = tr.gates.row(t) + bias.transpose();
    if (t > 0) z.noalias() += tr.h.row(t - 1) * wh;
    auto gate = tr.gates.row(t);
    for (Eigen::Index j = 0; j < H; ++j) {
      const double i = sigmoid(z[j]);
      const double f = sigmoid(z[H + j] + fb);
      const double g = std::tanh(z[2 * H + j]);
      const double o = sigmoid(z[3 * H + j]);
      const double c = (t > 0 ? f * tr.c(t - 1, j) : 0.0) + i * g;
      const double tc = std::tanh(c);
      gate[j] = i;
      gate[H + j] = f;
      gate[2 * H + j] = g;
      gate[3 * H + j] = o;
      tr.c(t, j) = c;
      tr.tc(t, j) = tc;
      tr.h(t, j) = o * tc;
    }
  }
  if (masked)
    tr.y = tr.h.cwiseProduct(masks->output.topRows(L));
  else
    tr.y = tr.h;
}

/// Backpropagates dY (L x H, gradient w.r.t. the masked outputs) through the
/// LSTM, writing parameter gradients into `grad` and optionally dX. With
/// `dz_out` the input-weight gradient is left to the caller, who gets the
/// pre-activation gradients instead.
void backprop_lstm(const Model& model, const FrameMatrix& seq, const DropoutMasks* masks,
                   const Trace& tr, const RowMatrix& dy, Eigen::VectorXd& grad,
                   RowMatrix* input_grad, RowMatrix* dz_out = nullptr) {
  const auto H = static_cast<Eigen::Index>(model.config().hidden);
  const auto L = static_cast<Eigen::Index>(tr.length);
  const bool masked = masks && !masks->identity();
  const auto wx = model.param(Param::kInputWeights);
  const auto wh = model.param(Param::kRecurrentWeights);

  RowMatrix dz(L, 4 * H);
  Eigen::RowVectorXd dh_next = Eigen::RowVectorXd::Zero(H);
  Eigen::RowVectorXd dc_next = Eigen::RowVectorXd::Zero(H);
  for (Eigen::Index t = L - 1; t >= 0; --t) {
    const auto gate = tr.gates.row(t);
    auto d = dz.row(t);
    for (Eigen::Index j = 0; j < H; ++j) {
      const double i = gate[j], f = gate[H + j], g = gate[2 * H + j], o = gate[3 * H + j];
      const double dh = (masked ? dy(t, j) * masks->output(t, j) : dy(t, j)) + dh_next[j];
      const double tc = tr.tc(t, j);
      const double dc = dh * o * (1.0 - tc * tc) + dc_next[j];
      const double c_prev = t > 0 ? tr.c(t - 1, j) : 0.0;
      d[j] = dc * g * i * (1.0 - i);
      d[H + j] = dc * c_prev * f * (1.0 - f);
      d[2 * H + j] = dc * i * (1.0 - g * g);
      d[3 * H + j] = dh * tc * o * (1.0 - o);
      dc_next[j] = dc * f;
    }
    dh_next.noalias() = dz.row(t) * wh.transpose();
  }

  const auto& s_wx = model.spec(Param::kInputWeights);
  const auto& s_wh = model.spec(Param::kRecurrentWeights);
  const auto& s_b = model.spec(Param::kGateBias);
  MatrixMap g_wx(grad.data() + s_wx.offset, s_wx.rows, s_wx.cols);
  MatrixMap g_wh(grad.data() + s_wh.offset, s_wh.rows, s_wh.cols);
  MatrixMap g_b(grad.data() + s_b.offset, s_b.rows, s_b.cols);
  if (!dz_out) {
    if (masked)
      g_wx.noalias() += tr.xd.transpose() * dz;
    else
      g_wx.noalias() += seq.topRows(L).transpose() * dz;
  }
  if (L > 1) g_wh.noalias() += tr.h.topRows(L - 1).transpose() * dz.bottomRows(L - 1);
  g_b += dz.colwise().sum().transpose();

  if (input_grad) {
    input_grad->setZero(seq.rows(), seq.cols());
    input_grad->topRows(L).noalias() = dz * wx.transpose();
    if (masked) input_grad->topRows(L) = input_grad->topRows(L).cwiseProduct(masks->input.topRows(L));
  }
  if (dz_out) *dz_out = std::move(dz);
}

Eigen::VectorXd softmax(const Eigen::VectorXd& z) {
  const double m = z.maxCoeff();
  Eigen::VectorXd e = (z.array() - m).exp().matrix();
  return e / e.sum();
}

struct SentimentHeads {
  Eigen::VectorXd feed;   // what the sentiment head sees from the topic head
  Eigen::VectorXd joint;  // [y_last; feed]
  SentimentOutput out;
};

SentimentHeads sentiment_heads(const Model& model, const Eigen::VectorXd& y_last) {
  SentimentHeads s;
  const auto H = y_last.size();
  const auto topics = static_cast<Eigen::Index>(kNumTopics);
  s.out.topic_logits = model.param(Param::kTopicWeights).transpose() * y_last +
                       model.param(Param::kTopicBias);
  s.feed = model.config().topic_feed == TopicFeed::kLogits ? s.out.topic_logits
                                                           : softmax(s.out.topic_logits);
  s.joint.resize(H + topics);
  s.joint << y_last, s.feed;
  s.out.sentiment_logits = model.param(Param::kSentimentWeights).transpose() * s.joint +
                           model.param(Param::kSentimentBias);
  return s;
}

}  // namespace

StepResult lstm_step(const Model& model, const Eigen::VectorXd& x, const Eigen::VectorXd& h_prev,
                     const Eigen::VectorXd& c_prev, const Eigen::VectorXd& input_mask,
                     const Eigen::VectorXd& output_mask) {
  const auto H = static_cast<Eigen::Index>(model.config().hidden);
  if (x.size() != static_cast<Eigen::Index>(model.config().input_dim) || h_prev.size() != H ||
      c_prev.size() != H)
    throw ValidationError("lstm_step: dimension mismatch");
  const Eigen::VectorXd xd = input_mask.size() ? x.cwiseProduct(input_mask) : x;
  const Eigen::VectorXd z = model.param(Param::kInputWeights).transpose() * xd +
                            model.param(Param::kRecurrentWeights).transpose() * h_prev +
                            model.param(Param::kGateBias);
  StepResult r;
  r.c.resize(H);
  r.h.resize(H);
  for (Eigen::Index j = 0; j < H; ++j) {
    const double i = sigmoid(z[j]);
    const double f = sigmoid(z[H + j] + model.config().forget_bias);
    const double g = std::tanh(z[2 * H + j]);
    const double o = sigmoid(z[3 * H + j]);
    r.c[j] = f * c_prev[j] + i * g;
    r.h[j] = o * std::tanh(r.c[j]);
  }
  r.output = output_mask.size() ? r.h.cwiseProduct(output_mask) : r.h;
  return r;
}

std::vector<double> forward_climax(const Model& model, const FrameMatrix& sequence,
                                   std::optional<std::size_t> length, const DropoutMasks* masks) {
  if (model.config().task != Task::kClimax) throw ValidationError("model is not a climax model");
  const std::size_t len = check_sequence(model, sequence, length, masks);
  std::vector<double> probs(len);
  if (len == 0) return probs;
  Trace tr;
  run_lstm(model, sequence, len, masks, tr);
  const Eigen::VectorXd logits =
      tr.y * model.param(Param::kClimaxWeights) +
      Eigen::VectorXd::Constant(static_cast<Eigen::Index>(len), model.param(Param::kClimaxBias)(0, 0));
  for (std::size_t t = 0; t < len; ++t) probs[t] = sigmoid(logits[static_cast<Eigen::Index>(t)]);
  return probs;
}

SentimentOutput forward_sentiment(const Model& model, const FrameMatrix& sequence,
                                  std::optional<std::size_t> length, const DropoutMasks* masks) {
  if (model.config().task != Task::kSentiment)
    throw ValidationError("model is not a sentiment model");
  const std::size_t len = check_sequence(model, sequence, length, masks);
  if (len == 0) throw ValidationError("forward_sentiment: empty sequence");
  Trace tr;
  run_lstm(model, sequence, len, masks, tr);
  return sentiment_heads(model, tr.y.row(static_cast<Eigen::Index>(len) - 1).transpose()).out;
}

// Losses ----------------------------------------------------------------------------

double sigmoid_ce_element(double z, double t) {
  return std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
}

double sigmoid_ce(std::span<const double> logits, std::span<const double> targets,
                  std::span<const double> weights) {
  if (logits.size() != targets.size() || logits.size() != weights.size())
    throw ValidationError("sigmoid_ce: shape mismatch");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (weights[i] == 0.0) continue;
    num += weights[i] * sigmoid_ce_element(logits[i], targets[i]);
    den += weights[i];
  }
  return den > 0.0 ? num / den : 0.0;
}

double softmax_ce(std::span<const double> logits, std::optional<std::size_t> index) {
  if (!index) return 0.0;
  if (*index >= logits.size()) throw ValidationError("softmax_ce: class index out of range");
  const double m = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (double z : logits) s += std::exp(z - m);
  return m + std::log(s) - logits[*index];
}

// Batch loss / backward -----------------------------------------------------------------

namespace {

struct Normalizers {
  double climax = 0.0;     // total frame weight
  double sentiment = 0.0;  // total (video, class) weight
  double topic = 0.0;      // videos with a topic
};

Normalizers normalizers(const Model& model, std::span<const Example> batch) {
  Normalizers n;
  for (const auto& ex : batch) {
    if (model.config().task == Task::kClimax) {
      n.climax += static_cast<double>(ex.length);
    } else {
      for (double w : ex.sentiment_weights) n.sentiment += w;
      if (ex.topic >= 0) n.topic += 1.0;
    }
  }
  return n;
}

const DropoutMasks* mask_for(std::span<const DropoutMasks> masks, std::size_t i) {
  if (masks.empty()) return nullptr;
  if (masks.size() != 0 && i >= masks.size()) throw ValidationError("one dropout mask per example required");
  return &masks[i];
}

/// Loss contribution of one example (already normalized); accumulates its
/// gradient into `grad` when non-null.
double example_pass(const Model& model, const Example& ex, const DropoutMasks* masks,
                    const Normalizers& norm, Eigen::VectorXd* grad, RowMatrix* input_grad,
                    const RowMatrix* projected = nullptr, RowMatrix* dz_out = nullptr) {
  if (!ex.frames) throw ValidationError("example without frames");
  const std::size_t len = check_sequence(model, *ex.frames, ex.length, masks);
  const auto H = static_cast<Eigen::Index>(model.config().hidden);
  const auto L = static_cast<Eigen::Index>(len);
  if (len == 0) {
    if (input_grad) input_grad->setZero(ex.frames->rows(), ex.frames->cols());
    return 0.0;
  }
  Trace tr;
  run_lstm(model, *ex.frames, len, masks, tr, projected);
  RowMatrix dy;
  double loss = 0.0;

  if (model.config().task == Task::kClimax) {
    if (ex.climax_targets.size() < len) throw ValidationError("missing climax targets");
    const auto w = model.param(Param::kClimaxWeights);
    const double b = model.param(Param::kClimaxBias)(0, 0);
    const Eigen::VectorXd logits = tr.y * w;
    Eigen::VectorXd dlogit(L);
    for (Eigen::Index t = 0; t < L; ++t) {
      const double z = logits[t] + b;
      const double target = ex.climax_targets[static_cast<std::size_t>(t)];
      loss += sigmoid_ce_element(z, target) / norm.climax;
      dlogit[t] = (sigmoid(z) - target) / norm.climax;
    }
    if (grad) {
      const auto& sw = model.spec(Param::kClimaxWeights);
      const auto& sb = model.spec(Param::kClimaxBias);
      MatrixMap(grad->data() + sw.offset, sw.rows, sw.cols).noalias() += tr.y.transpose() * dlogit;
      (*grad)[sb.offset] += dlogit.sum();
      dy.noalias() = dlogit * w.transpose();
    }
  } else {
    const Eigen::VectorXd y_last = tr.y.row(L - 1).transpose();
    const auto heads = sentiment_heads(model, y_last);
    const auto& s_logits = heads.out.sentiment_logits;
    const auto& t_logits = heads.out.topic_logits;
    Eigen::VectorXd ds = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(kNumSentiments));
    if (norm.sentiment > 0.0) {
      for (std::size_t c = 0; c < kNumSentiments; ++c) {
        const double w = ex.sentiment_weights[c];
        if (w == 0.0) continue;
        const auto ci = static_cast<Eigen::Index>(c);
        loss += w * sigmoid_ce_element(s_logits[ci], ex.sentiment_targets[c]) / norm.sentiment;
        ds[ci] = w * (sigmoid(s_logits[ci]) - ex.sentiment_targets[c]) / norm.sentiment;
      }
    }
    Eigen::VectorXd dtopic = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(kNumTopics));
    if (ex.topic >= 0) {
      const auto topic = static_cast<std::size_t>(ex.topic);
      loss += softmax_ce({t_logits.data(), kNumTopics}, topic) / norm.topic;
      dtopic = softmax(t_logits) / norm.topic;
      dtopic[static_cast<Eigen::Index>(topic)] -= 1.0 / norm.topic;
    }
    if (grad) {
      const auto& s_sw = model.spec(Param::kSentimentWeights);
      const auto& s_sb = model.spec(Param::kSentimentBias);
      const auto& s_tw = model.spec(Param::kTopicWeights);
      const auto& s_tb = model.spec(Param::kTopicBias);
      MatrixMap(grad->data() + s_sw.offset, s_sw.rows, s_sw.cols).noalias() +=
          heads.joint * ds.transpose();
      MatrixMap(grad->data() + s_sb.offset, s_sb.rows, s_sb.cols) += ds;
      const Eigen::VectorXd djoint = model.param(Param::kSentimentWeights) * ds;
      const Eigen::VectorXd dfeed = djoint.tail(static_cast<Eigen::Index>(kNumTopics));
      if (model.config().topic_feed == TopicFeed::kLogits) {
        dtopic += dfeed;
      } else {
        const Eigen::VectorXd p = heads.feed;
        dtopic += (p.array() * (dfeed.array() - p.dot(dfeed))).matrix();
      }
      MatrixMap(grad->data() + s_tw.offset, s_tw.rows, s_tw.cols).noalias() +=
          y_last * dtopic.transpose();
      MatrixMap(grad->data() + s_tb.offset, s_tb.rows, s_tb.cols) += dtopic;
      dy = RowMatrix::Zero(L, H);
      dy.row(L - 1) = (djoint.head(H) + model.param(Param::kTopicWeights) * dtopic).transpose();
    }
  }
  if (grad) backprop_lstm(model, *ex.frames, masks, tr, dy, *grad, input_grad, dz_out);
  return loss;
}

}  // namespace

double batch_loss(const Model& model, std::span<const Example> batch,
                  std::span<const DropoutMasks> masks) {
  const auto norm = normalizers(model, batch);
  double loss = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i)
    loss += example_pass(model, batch[i], mask_for(masks, i), norm, nullptr, nullptr);
  return loss;
}

Gradients backward(const Model& model, std::span<const Example> batch,
                   std::span<const DropoutMasks> masks, bool want_input_grads, int jobs) {
  const auto norm = normalizers(model, batch);
  const Eigen::Index n_params = model.flat().size();
  const auto& s_wx = model.spec(Param::kInputWeights);
  const Eigen::Index d = s_wx.rows, G = s_wx.cols;
  assert(s_wx.offset == 0);
  Gradients out;
  out.grad = Eigen::VectorXd::Zero(n_params);
  if (want_input_grads) out.input_grads.resize(batch.size());

  // The input projection and its weight gradient are done for the whole
  // batch at once on the stacked (masked) frames.
  std::vector<Eigen::Index> first_row(batch.size() + 1, 0);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (!batch[i].frames) throw ValidationError("example without frames");
    const auto len = check_sequence(model, *batch[i].frames, batch[i].length, mask_for(masks, i));
    first_row[i + 1] = first_row[i] + static_cast<Eigen::Index>(len);
  }
  const Eigen::Index rows = first_row.back();
  RowMatrix x(rows, d);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Eigen::Index L = first_row[i + 1] - first_row[i];
    const auto* m = mask_for(masks, i);
    if (m && !m->identity())
      x.middleRows(first_row[i], L) = batch[i].frames->topRows(L).cwiseProduct(m->input.topRows(L));
    else
      x.middleRows(first_row[i], L) = batch[i].frames->topRows(L);
  }
  RowMatrix projected(rows, G);
  projected.noalias() = x * model.param(Param::kInputWeights);
  RowMatrix dz_all(rows, G);

  // Per-example buffers cover every parameter after the input weights; they
  // are added to the total in example order regardless of `jobs`.
  const Eigen::Index rest = n_params - s_wx.size();
  const std::size_t width = static_cast<std::size_t>(std::clamp(jobs, 1, 64));
  std::vector<Eigen::VectorXd> scratch(std::min(width, std::max<std::size_t>(batch.size(), 1)),
                                       Eigen::VectorXd(n_params));
  std::vector<double> losses(batch.size(), 0.0);
  auto work = [&](std::size_t i, Eigen::VectorXd& g) {
    g.tail(rest).setZero();
    const Eigen::Index L = first_row[i + 1] - first_row[i];
    const RowMatrix pre = projected.middleRows(first_row[i], L);
    RowMatrix dz;
    losses[i] = example_pass(model, batch[i], mask_for(masks, i), norm, &g,
                             want_input_grads ? &out.input_grads[i] : nullptr, &pre, &dz);
    if (L > 0) dz_all.middleRows(first_row[i], L) = dz;
  };
  for (std::size_t first = 0; first < batch.size(); first += width) {
    const std::size_t last = std::min(batch.size(), first + width);
    if (last - first == 1 || width == 1) {
      for (std::size_t i = first; i < last; ++i) {
        work(i, scratch[0]);
        out.grad.tail(rest) += scratch[0].tail(rest);
      }
      continue;
    }
    {
      std::vector<std::jthread> pool;
      for (std::size_t i = first; i < last; ++i) pool.emplace_back(work, i, std::ref(scratch[i - first]));
    }
    for (std::size_t i = first; i < last; ++i) out.grad.tail(rest) += scratch[i - first].tail(rest);
  }
  MatrixMap(out.grad.data() + s_wx.offset, d, G).noalias() = x.transpose() * dz_all;
  for (double l : losses) out.loss += l;
  return out;
}

// Optimizer ---------------------------------------------------------------------------

RmsPropState RmsPropState::zeros(Eigen::Index n) {
  return {Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n), 0};
}

void rmsprop_update(Eigen::Ref<Eigen::VectorXd> params, const Eigen::VectorXd& grads,
                    RmsPropState& state, const RmsPropConfig& config) {
  if (params.size() != grads.size() || state.mean_square.size() != grads.size() ||
      state.momentum.size() != grads.size())
    throw ValidationError("rmsprop_update: size mismatch");
  state.mean_square = config.decay * state.mean_square.array() +
                      (1.0 - config.decay) * grads.array().square();
  state.momentum = config.momentum * state.momentum.array() +
                   config.learning_rate * grads.array() /
                       (state.mean_square.array() + config.epsilon).sqrt();
  params -= state.momentum;
  ++state.step;
}

}  // namespace adstory
