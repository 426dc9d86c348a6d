#pragma once

// Corpus-to-model pipeline: split a generated corpus, build the network,
// train it with SGD and score it on the held-out rooms.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "crowdest/dataset.hpp"
#include "crowdest/estimator.hpp"
#include "crowdest/mlp.hpp"
#include "json.hpp"

namespace crowdest::training {

enum class Target { tt, avg_exit_time };

inline Target parse_target(const std::string& s) {
  if (s == "tt") return Target::tt;
  if (s == "avg_exit_time") return Target::avg_exit_time;
  throw std::invalid_argument("unknown target '" + s + "' (tt|avg_exit_time)");
}

inline std::string to_string(Target t) { return t == Target::tt ? "tt" : "avg_exit_time"; }

inline std::vector<mlp::Sample> samples(const std::vector<DatasetRecord>& rows, Target target) {
  std::vector<mlp::Sample> out;
  for (const auto& r : rows) {
    if (r.metrics.censored) continue;
    const auto f = r.spec.features();
    out.push_back({{f.begin(), f.end()}, target == Target::tt ? r.metrics.tt : r.metrics.avg_exit_time});
  }
  return out;
}

struct Split {
  std::vector<DatasetRecord> train;
  std::vector<DatasetRecord> validation;
  std::vector<DatasetRecord> holdout;
};

/// The last `holdout` rows are held out; of the rest every `every`-th row
/// (index 0, every, 2*every, ...) goes to validation.
inline Split split_rows(const std::vector<DatasetRecord>& rows, std::size_t holdout, std::size_t every = 10) {
  if (holdout >= rows.size()) throw std::invalid_argument("split: holdout must leave training rows");
  Split s;
  const std::size_t cut = rows.size() - holdout;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (i >= cut) {
      s.holdout.push_back(rows[i]);
    } else if (every > 0 && i % every == 0) {
      s.validation.push_back(rows[i]);
    } else {
      s.train.push_back(rows[i]);
    }
  }
  return s;
}

struct TrainOptions {
  std::size_t hidden = 400;
  mlp::Activation activation = mlp::Activation::sigmoid;
  bool use_bias = false;
  /// Min-max normalization over `bounds`, stored in the model.
  bool normalize = false;
  RoomBounds bounds = kTrainingBounds;
  Target target = Target::tt;
  std::uint64_t init_seed = 1;
  mlp::TrainConfig sgd;
};

/// Setting used for the desk-scale acceptance run.
inline TrainOptions desk_options() {
  TrainOptions o;
  o.activation = mlp::Activation::relu;
  o.use_bias = true;
  o.normalize = true;
  o.bounds = kDeskBounds;
  o.sgd.learning_rate = 2e-4;
  o.sgd.epochs = 300;
  o.sgd.patience = 20;
  o.sgd.max_halvings = 5;
  return o;
}

struct TrainResult {
  mlp::MlpModel model;
  mlp::TrainReport report;
  mlp::Score train_score;
  mlp::Score validation_score;
  std::size_t train_rows = 0;
  std::size_t validation_rows = 0;
};

inline TrainResult train_surrogate(const std::vector<DatasetRecord>& train_rows,
                                   const std::vector<DatasetRecord>& validation_rows, const TrainOptions& opt) {
  const auto train = samples(train_rows, opt.target);
  const auto validation = samples(validation_rows, opt.target);
  TrainResult r;
  r.model = mlp::make_model({6, opt.hidden, 1}, opt.activation, opt.use_bias);
  mlp::init_weights(r.model, opt.init_seed);
  if (opt.normalize) mlp::set_norm(r.model, est::feature_ranges(opt.bounds));
  r.report = mlp::train_sgd(r.model, train, validation, opt.sgd);
  r.train_score = mlp::score_below_threshold(r.model, train);
  r.validation_score = mlp::score_below_threshold(r.model, validation);
  r.train_rows = train.size();
  r.validation_rows = validation.size();
  return r;
}

inline nlohmann::json to_json(const mlp::Score& s) {
  return {{"fraction_below", s.fraction},
          {"scored", s.scored},
          {"below", s.below},
          {"zero_targets", s.zero_targets},
          {"mean_abs_rel_error", s.mean_abs_rel_error}};
}

inline nlohmann::json to_json(const TrainResult& r) {
  return {{"train_rows", r.train_rows},
          {"validation_rows", r.validation_rows},
          {"epochs_run", r.report.train_loss.size()},
          {"best_epoch", r.report.best_epoch},
          {"halvings", r.report.halvings},
          {"stopped_on_plateau", r.report.stopped_on_plateau},
          {"final_train_loss", r.report.train_loss.empty() ? 0.0 : r.report.train_loss.back()},
          {"train_score", to_json(r.train_score)},
          {"validation_score", to_json(r.validation_score)}};
}

}  // namespace crowdest::training
