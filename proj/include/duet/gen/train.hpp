// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "duet/gen/model.hpp"

namespace duet::gen {

struct AdaDeltaConfig {
  double rho = 0.95;
  double epsilon = 1e-6;
};

/// Running averages E[g^2] and E[dx^2], one per parameter entry.
struct OptimizerState {
  GeneratorParams sq_grad;
  GeneratorParams sq_update;
  AdaDeltaConfig config;

  static OptimizerState for_params(const GeneratorParams& params, const AdaDeltaConfig& config = {});
};

/// Element-wise AdaDelta on flat buffers:
///   E[g²] <- ρ E[g²] + (1-ρ) g²
///   Δx    <- -sqrt(E[Δx²] + ε) / sqrt(E[g²] + ε) · g
///   E[Δx²] <- ρ E[Δx²] + (1-ρ) Δx²
///   x     <- x + Δx
void adadelta_step(std::span<double> x, std::span<const double> grad, std::span<double> sq_grad,
                   std::span<double> sq_update, const AdaDeltaConfig& config);

/// Applies adadelta_step to every tensor; `grad_scale` multiplies the
/// gradient first (the trainer passes 1 / batch size).
void adadelta_update(OptimizerState& state, GeneratorParams& params, const GeneratorParams& grads,
                     double grad_scale = 1.0);

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean per-sequence loss over the epoch's batches
  double val_perplexity = 0.0;
  bool improved = false;
};

struct TrainHistory {
  double initial_loss = 0.0;  // mean per-sequence training loss before any update
  double initial_val_perplexity = 0.0;
  std::vector<EpochStats> epochs;
  std::optional<std::size_t> best_epoch;  // unset if no epoch beat the initial model
  double best_val_perplexity = 0.0;
  bool early_stopped = false;
};

struct TrainConfig {
  std::size_t batch_size = 16;
  std::size_t max_epochs = 50;
  /// Training stops once validation perplexity has failed to improve for
  /// more than `patience` consecutive epochs.
  std::size_t patience = 5;
  std::uint64_t seed = 0;
  AdaDeltaConfig adadelta;
  std::function<void(const EpochStats&)> on_epoch;
};

struct TrainResult {
  GeneratorParams params;  // best-validation checkpoint
  TrainHistory history;
};

/// Mini-batched AdaDelta with a seeded per-epoch shuffle and early stopping
/// on validation perplexity. Throws if the loss becomes non-finite.
TrainResult train(GeneratorParams params, std::span<const Triple> train_set,
                  std::span<const Triple> val_set, const TrainConfig& config);

double mean_sequence_loss(const GeneratorParams& params, std::span<const Triple> samples,
                          std::size_t batch_size = 16);

}  // namespace duet::gen
