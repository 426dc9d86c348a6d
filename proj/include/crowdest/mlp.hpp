#pragma once

// Small feed-forward regression network: forward pass, exact per-sample
// gradients, seeded SGD with a plateau rule, scoring, and JSON checkpoints.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace crowdest::mlp {

enum class Activation { sigmoid, tanh, relu, linear };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::sigmoid: return "sigmoid";
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
    case Activation::linear: return "linear";
  }
  return "?";
}

inline Activation parse_activation(const std::string& s) {
  if (s == "sigmoid") return Activation::sigmoid;
  if (s == "tanh") return Activation::tanh;
  if (s == "relu") return Activation::relu;
  if (s == "linear") return Activation::linear;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

inline double activate(Activation a, double x) {
  switch (a) {
    case Activation::sigmoid: return 1.0 / (1.0 + std::exp(-x));
    case Activation::tanh: return std::tanh(x);
    case Activation::relu: return x > 0.0 ? x : 0.0;
    case Activation::linear: return x;
  }
  return x;
}

// Derivative expressed through the activation output y = act(x).
inline double activate_grad(Activation a, double y) {
  switch (a) {
    case Activation::sigmoid: return y * (1.0 - y);
    case Activation::tanh: return 1.0 - y * y;
    case Activation::relu: return y > 0.0 ? 1.0 : 0.0;
    case Activation::linear: return 1.0;
  }
  return 1.0;
}

/// Dense layer, out x in weights stored row-major.
struct Layer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> w;
  std::vector<double> b;

  double& at(std::size_t o, std::size_t i) { return w[o * in + i]; }
  double at(std::size_t o, std::size_t i) const { return w[o * in + i]; }
  friend bool operator==(const Layer&, const Layer&) = default;
};

/// Min-max scaling of one input to [0, 1].
struct InputRange {
  double min = 0.0;
  double max = 1.0;
  friend bool operator==(const InputRange&, const InputRange&) = default;
};

struct MlpModel {
  std::vector<std::size_t> dims;  // input, hidden..., output
  Activation activation = Activation::sigmoid;
  bool use_bias = false;
  std::optional<std::vector<InputRange>> norm;
  /// Network output is multiplied by this before it is reported, so targets
  /// of a few hundred seconds stay in a trainable range.
  double output_scale = 1.0;
  std::vector<Layer> layers;

  std::size_t input_dim() const { return dims.empty() ? 0 : dims.front(); }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.w.size() + l.b.size();
    return n;
  }

  friend bool operator==(const MlpModel&, const MlpModel&) = default;
};

/// Zero-initialized model; call init_weights for a trainable start.
inline MlpModel make_model(std::vector<std::size_t> dims, Activation act = Activation::sigmoid, bool use_bias = false) {
  if (dims.size() < 2) throw std::invalid_argument("model needs at least input and output dims");
  for (std::size_t d : dims) {
    if (d == 0) throw std::invalid_argument("layer dims must be positive");
  }
  MlpModel m;
  m.dims = std::move(dims);
  m.activation = act;
  m.use_bias = use_bias;
  for (std::size_t k = 0; k + 1 < m.dims.size(); ++k) {
    Layer l;
    l.in = m.dims[k];
    l.out = m.dims[k + 1];
    l.w.assign(l.in * l.out, 0.0);
    if (use_bias) l.b.assign(l.out, 0.0);
    m.layers.push_back(std::move(l));
  }
  return m;
}

/// Glorot-uniform weights, zero biases.
inline void init_weights(MlpModel& m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& l : m.layers) {
    const double limit = std::sqrt(6.0 / static_cast<double>(l.in + l.out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (double& w : l.w) w = dist(rng);
    std::fill(l.b.begin(), l.b.end(), 0.0);
  }
}

inline void set_norm(MlpModel& m, std::vector<InputRange> ranges) {
  if (ranges.size() != m.input_dim()) throw std::invalid_argument("norm needs one range per input");
  for (const auto& r : ranges) {
    if (!(r.min < r.max)) throw std::invalid_argument("norm ranges need min < max");
  }
  m.norm = std::move(ranges);
}

/// Activations of every layer for one sample; acts[0] is the (scaled) input.
struct Trace {
  std::vector<std::vector<double>> acts;
};

inline void check_input(const MlpModel& m, std::span<const double> x) {
  if (x.size() != m.input_dim()) {
    throw std::invalid_argument("expected " + std::to_string(m.input_dim()) + " inputs, got " + std::to_string(x.size()));
  }
}

inline void forward_trace(const MlpModel& m, std::span<const double> x, Trace& t) {
  check_input(m, x);
  t.acts.resize(m.layers.size() + 1);
  t.acts[0].assign(x.begin(), x.end());
  if (m.norm) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      const auto& r = (*m.norm)[i];
      t.acts[0][i] = (x[i] - r.min) / (r.max - r.min);
    }
  }
  for (std::size_t k = 0; k < m.layers.size(); ++k) {
    const Layer& l = m.layers[k];
    const bool last = k + 1 == m.layers.size();
    const auto& in = t.acts[k];
    auto& out = t.acts[k + 1];
    out.assign(l.out, 0.0);
    for (std::size_t o = 0; o < l.out; ++o) {
      const double* row = &l.w[o * l.in];
      double z = l.b.empty() ? 0.0 : l.b[o];
      for (std::size_t i = 0; i < l.in; ++i) z += row[i] * in[i];
      out[o] = last ? z : activate(m.activation, z);
    }
  }
}

/// Prediction for raw (unscaled) inputs. The output unit is linear.
inline double forward(const MlpModel& m, std::span<const double> x) {
  Trace t;
  forward_trace(m, x, t);
  return t.acts.back()[0] * m.output_scale;
}

inline double mse_loss(std::span<const double> pred, std::span<const double> target) {
  if (pred.empty()) throw std::invalid_argument("mse_loss: empty input");
  if (pred.size() != target.size()) throw std::invalid_argument("mse_loss: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - target[i]) * (pred[i] - target[i]);
  return s / static_cast<double>(pred.size());
}

/// Same shapes as the model's layers.
struct Gradient {
  std::vector<Layer> layers;
};

/// Gradient of (pred - target)^2 for one sample with respect to every weight
/// and bias, where pred = forward(m, x).
inline Gradient backward(const MlpModel& m, std::span<const double> x, double target) {
  Trace t;
  forward_trace(m, x, t);
  Gradient g;
  g.layers = m.layers;
  const double pred = t.acts.back()[0] * m.output_scale;
  std::vector<double> delta{2.0 * (pred - target) * m.output_scale};
  for (std::size_t k = m.layers.size(); k-- > 0;) {
    const Layer& l = m.layers[k];
    Layer& gl = g.layers[k];
    const auto& in = t.acts[k];
    for (std::size_t o = 0; o < l.out; ++o) {
      for (std::size_t i = 0; i < l.in; ++i) gl.at(o, i) = delta[o] * in[i];
      if (!gl.b.empty()) gl.b[o] = delta[o];
    }
    if (k == 0) break;
    std::vector<double> prev(l.in, 0.0);
    for (std::size_t o = 0; o < l.out; ++o) {
      for (std::size_t i = 0; i < l.in; ++i) prev[i] += l.at(o, i) * delta[o];
    }
    for (std::size_t i = 0; i < l.in; ++i) prev[i] *= activate_grad(m.activation, in[i]);
    delta = std::move(prev);
  }
  return g;
}

struct Sample {
  std::vector<double> x;
  double y = 0.0;
};

struct TrainConfig {
  std::size_t epochs = 100;
  double learning_rate = 1e-6;
  std::uint64_t shuffle_seed = 0;
  /// Epochs without validation improvement before the rate is halved.
  std::size_t patience = 5;
  /// Stop after this many halvings.
  std::size_t max_halvings = 3;
};

struct TrainReport {
  std::vector<double> train_loss;       // per epoch, after the epoch
  std::vector<double> validation_loss;  // per epoch; empty without a validation set
  std::vector<double> learning_rate;    // rate used in each epoch
  std::size_t best_epoch = 0;
  std::size_t halvings = 0;
  bool stopped_on_plateau = false;
};

inline double dataset_loss(const MlpModel& m, std::span<const Sample> rows) {
  if (rows.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : rows) {
    const double d = forward(m, r.x) - r.y;
    s += d * d;
  }
  return s / static_cast<double>(rows.size());
}

/// Per-sample SGD in a seeded shuffled order. With a validation set, the
/// rate is halved after `patience` epochs without improvement, training stops
/// after `max_halvings` halvings, and the best-validation weights are kept.
inline TrainReport train_sgd(MlpModel& m, std::span<const Sample> train, std::span<const Sample> validation,
                             const TrainConfig& cfg) {
  if (train.empty()) throw std::invalid_argument("train_sgd: empty training set");
  if (cfg.epochs < 1) throw std::invalid_argument("train_sgd: epochs must be >= 1");
  if (!(cfg.learning_rate >= 0.0)) throw std::invalid_argument("train_sgd: learning rate must be non-negative");
  for (const auto& s : train) check_input(m, s.x);

  TrainReport rep;
  std::mt19937_64 rng(cfg.shuffle_seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  double lr = cfg.learning_rate;
  double best = std::numeric_limits<double>::infinity();
  MlpModel best_model = m;
  std::size_t since_best = 0;
  Trace t;
  std::vector<double> delta, prev;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    rep.learning_rate.push_back(lr);
    for (std::size_t idx : order) {
      const Sample& s = train[idx];
      forward_trace(m, s.x, t);
      const double pred = t.acts.back()[0] * m.output_scale;
      if (!std::isfinite(pred)) {
        throw std::runtime_error("training diverged at epoch " + std::to_string(epoch + 1) + " (non-finite prediction)");
      }
      delta.assign(1, 2.0 * (pred - s.y) * m.output_scale);
      // Backpropagate with the pre-update weights, updating each layer once
      // its delta for the layer below has been formed.
      for (std::size_t k = m.layers.size(); k-- > 0;) {
        Layer& l = m.layers[k];
        const auto& in = t.acts[k];
        if (k > 0) {
          prev.assign(l.in, 0.0);
          for (std::size_t o = 0; o < l.out; ++o) {
            const double* row = &l.w[o * l.in];
            for (std::size_t i = 0; i < l.in; ++i) prev[i] += row[i] * delta[o];
          }
          for (std::size_t i = 0; i < l.in; ++i) prev[i] *= activate_grad(m.activation, in[i]);
        }
        for (std::size_t o = 0; o < l.out; ++o) {
          const double step = lr * delta[o];
          double* row = &l.w[o * l.in];
          for (std::size_t i = 0; i < l.in; ++i) row[i] -= step * in[i];
          if (!l.b.empty()) l.b[o] -= step;
        }
        if (k > 0) std::swap(delta, prev);
      }
    }

    const double tl = dataset_loss(m, train);
    if (!std::isfinite(tl)) {
      throw std::runtime_error("training diverged at epoch " + std::to_string(epoch + 1) + " (loss is NaN or infinite)");
    }
    rep.train_loss.push_back(tl);
    if (validation.empty()) continue;

    const double vl = dataset_loss(m, validation);
    rep.validation_loss.push_back(vl);
    if (vl < best) {
      best = vl;
      best_model = m;
      rep.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      if (rep.halvings == cfg.max_halvings) {
        rep.stopped_on_plateau = true;
        break;
      }
      lr *= 0.5;
      ++rep.halvings;
      since_best = 0;
    }
  }
  if (!validation.empty()) m = std::move(best_model);
  return rep;
}

struct Score {
  double fraction = 0.0;   // rows with relative error below the threshold
  std::size_t scored = 0;
  std::size_t below = 0;
  std::size_t zero_targets = 0;  // excluded: relative error undefined
  double mean_abs_rel_error = 0.0;
};

inline Score score_below_threshold(const MlpModel& m, std::span<const Sample> rows, double threshold = 0.10) {
  Score s;
  double err_sum = 0.0;
  for (const auto& r : rows) {
    if (r.y == 0.0) {
      ++s.zero_targets;
      continue;
    }
    const double rel = std::abs(forward(m, r.x) - r.y) / std::abs(r.y);
    ++s.scored;
    err_sum += rel;
    if (rel < threshold) ++s.below;
  }
  if (s.scored > 0) {
    s.fraction = static_cast<double>(s.below) / static_cast<double>(s.scored);
    s.mean_abs_rel_error = err_sum / static_cast<double>(s.scored);
  }
  return s;
}

inline constexpr int kModelVersion = 1;

inline nlohmann::json to_json(const MlpModel& m) {
  nlohmann::json j;
  j["version"] = kModelVersion;
  j["dims"] = m.dims;
  j["activation"] = to_string(m.activation);
  j["use_bias"] = m.use_bias;
  j["output_scale"] = m.output_scale;
  if (m.norm) {
    nlohmann::json n = nlohmann::json::array();
    for (const auto& r : *m.norm) n.push_back({r.min, r.max});
    j["norm"] = n;
  } else {
    j["norm"] = nullptr;
  }
  nlohmann::json ws = nlohmann::json::array();
  for (const auto& l : m.layers) ws.push_back({{"w", l.w}, {"b", l.b}});
  j["weights"] = ws;
  return j;
}

inline MlpModel from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("version")) throw std::runtime_error("model: missing version");
  if (j.at("version") != kModelVersion) {
    throw std::runtime_error("model: unsupported version " + j.at("version").dump() + " (expected " +
                             std::to_string(kModelVersion) + ")");
  }
  MlpModel m = make_model(j.at("dims").get<std::vector<std::size_t>>(), parse_activation(j.at("activation")),
                          j.at("use_bias").get<bool>());
  m.output_scale = j.value("output_scale", 1.0);
  if (!j.at("norm").is_null()) {
    std::vector<InputRange> ranges;
    for (const auto& r : j.at("norm")) ranges.push_back({r.at(0).get<double>(), r.at(1).get<double>()});
    set_norm(m, std::move(ranges));
  }
  const auto& ws = j.at("weights");
  if (ws.size() != m.layers.size()) throw std::runtime_error("model: layer count does not match dims");
  for (std::size_t k = 0; k < m.layers.size(); ++k) {
    auto w = ws[k].at("w").get<std::vector<double>>();
    auto b = ws[k].at("b").get<std::vector<double>>();
    if (w.size() != m.layers[k].w.size() || b.size() != m.layers[k].b.size()) {
      throw std::runtime_error("model: weight shape mismatch in layer " + std::to_string(k));
    }
    m.layers[k].w = std::move(w);
    m.layers[k].b = std::move(b);
  }
  return m;
}

/// Doubles are written with round-trip precision, so a reloaded model
/// predicts bit-identically.
inline void save(const MlpModel& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_json(m).dump() << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

inline MlpModel load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error("model file " + path.string() + " is malformed: " + e.what());
  }
  try {
    return from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("model file " + path.string() + ": " + e.what());
  }
}

}  // namespace crowdest::mlp
