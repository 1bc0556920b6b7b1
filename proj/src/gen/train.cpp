// SPDX-License-Identifier: Apache-2.0
#include "duet/gen/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "duet/error.hpp"

namespace duet::gen {

OptimizerState OptimizerState::for_params(const GeneratorParams& params, const AdaDeltaConfig& config) {
  return {params.zeros_like(), params.zeros_like(), config};
}

void adadelta_step(std::span<double> x, std::span<const double> grad, std::span<double> sq_grad,
                   std::span<double> sq_update, const AdaDeltaConfig& config) {
  if (grad.size() != x.size() || sq_grad.size() != x.size() || sq_update.size() != x.size()) {
    throw Error("adadelta_step: buffer sizes differ");
  }
  const double rho = config.rho;
  const double eps = config.epsilon;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double g = grad[i];
    sq_grad[i] = rho * sq_grad[i] + (1.0 - rho) * g * g;
    const double dx = -std::sqrt(sq_update[i] + eps) / std::sqrt(sq_grad[i] + eps) * g;
    sq_update[i] = rho * sq_update[i] + (1.0 - rho) * dx * dx;
    x[i] += dx;
  }
}

void adadelta_update(OptimizerState& state, GeneratorParams& params, const GeneratorParams& grads,
                     double grad_scale) {
  auto xs = tensors(params);
  const auto gs = tensors(grads);
  auto eg = tensors(state.sq_grad);
  auto ex = tensors(state.sq_update);
  if (gs.size() != xs.size() || eg.size() != xs.size() || ex.size() != xs.size()) {
    throw Error("adadelta_update: parameter trees differ");
  }
  std::vector<double> scaled;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    if (gs[k].size() != xs[k].size()) throw Error("adadelta_update: shape mismatch in " + xs[k].name);
    const auto g = gs[k].values();
    std::span<const double> grad = g;
    if (grad_scale != 1.0) {
      scaled.assign(g.begin(), g.end());
      for (double& v : scaled) v *= grad_scale;
      grad = scaled;
    }
    adadelta_step(xs[k].values(), grad, eg[k].values(), ex[k].values(), state.config);
  }
}

double mean_sequence_loss(const GeneratorParams& params, std::span<const Triple> samples,
                          std::size_t batch_size) {
  const LossTotals totals = evaluate(params, samples, batch_size);
  return totals.loss / static_cast<double>(totals.sequences);
}

TrainResult train(GeneratorParams params, std::span<const Triple> train_set,
                  std::span<const Triple> val_set, const TrainConfig& config) {
  if (train_set.empty() || val_set.empty()) throw Error("train: training and validation sets must be non-empty");
  if (config.batch_size == 0) throw Error("train: batch_size must be positive");

  TrainResult result;
  TrainHistory& history = result.history;
  history.initial_loss = mean_sequence_loss(params, train_set, config.batch_size);
  history.initial_val_perplexity = perplexity(params, val_set, config.batch_size);
  history.best_val_perplexity = history.initial_val_perplexity;
  result.params = params;

  OptimizerState state = OptimizerState::for_params(params, config.adadelta);
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<Triple> chunk;
  std::size_t stale = 0;

  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      chunk.clear();
      for (std::size_t i = start; i < end; ++i) chunk.push_back(train_set[order[i]]);
      const Batch batch = make_batch(chunk, params.arch);
      const ForwardPass pass = forward(params, batch);
      if (!std::isfinite(pass.loss)) {
        throw Error("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch starting at " +
                    std::to_string(start) + " (loss " + std::to_string(pass.loss) + ")");
      }
      epoch_loss += pass.loss;
      const GeneratorParams grads = backward(params, batch, pass);
      adadelta_update(state, params, grads, 1.0 / static_cast<double>(chunk.size()));
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = epoch_loss / static_cast<double>(train_set.size());
    stats.val_perplexity = perplexity(params, val_set, config.batch_size);
    if (!std::isfinite(stats.val_perplexity)) {
      throw Error("train: validation perplexity diverged at epoch " + std::to_string(epoch));
    }
    stats.improved = stats.val_perplexity < history.best_val_perplexity;
    if (stats.improved) {
      history.best_val_perplexity = stats.val_perplexity;
      history.best_epoch = epoch;
      result.params = params;
      stale = 0;
    } else {
      ++stale;
    }
    history.epochs.push_back(stats);
    if (config.on_epoch) config.on_epoch(stats);
    if (stale > config.patience) {
      history.early_stopped = true;
      break;
    }
  }
  return result;
}

}  // namespace duet::gen
