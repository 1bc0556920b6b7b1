// SPDX-License-Identifier: Apache-2.0
//
// GRU encoder-decoder reply generator.
//
// Two architectures share one parameter tree:
//   seq2seq    query encoder -> bridge (H x H) -> decoder
//   biseq2seq  query encoder + candidate-reply encoder -> bridge (H x 2H)
//              over the concatenated final states -> decoder
//
// The encoders and the decoder own disjoint embedding tables and GRUs.
// All computation is in double precision; sequences in a batch are laid out
// as columns and padded with PAD, with per-step masks that freeze the hidden
// state and zero the loss past each sequence's end.
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "duet/corpus.hpp"

namespace duet::gen {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using IdMatrix = Eigen::Matrix<TokenId, Eigen::Dynamic, Eigen::Dynamic>;

enum class Architecture { kSeq2Seq, kBiSeq2Seq };

std::string_view to_string(Architecture arch);
Architecture parse_architecture(std::string_view name);

/// r = σ(W_r x + U_r h + b_r), z = σ(W_z x + U_z h + b_z),
/// h~ = tanh(W_x x + U_x (r ∘ h)), h' = (1 - z) ∘ h + z ∘ h~.
/// The candidate state has no bias term.
struct GruParams {
  Matrix w_r, w_z, w_x;  // hidden x input
  Matrix u_r, u_z, u_x;  // hidden x hidden
  Vector b_r, b_z;

  static GruParams zeros(Eigen::Index input_dim, Eigen::Index hidden_dim);
  Eigen::Index input_dim() const { return w_r.cols(); }
  Eigen::Index hidden_dim() const { return w_r.rows(); }
};

struct EncoderParams {
  Matrix embedding;  // vocab x embed
  GruParams gru;
};

struct BridgeParams {
  Matrix weight;  // hidden x (hidden * n_encoders)
  Vector bias;
};

struct DecoderParams {
  Matrix embedding;   // vocab x embed
  GruParams gru;
  Matrix out_weight;  // vocab x hidden
  Vector out_bias;    // vocab
};

struct ModelDims {
  std::size_t embed_dim = 0;
  std::size_t hidden_dim = 0;
  std::size_t enc_vocab_size = 0;
  std::size_t dec_vocab_size = 0;

  bool operator==(const ModelDims&) const = default;
};

/// Parameters of either architecture. Gradients and optimizer accumulators
/// reuse this type, so they always mirror the model's shape tree.
struct GeneratorParams {
  Architecture arch = Architecture::kBiSeq2Seq;
  EncoderParams enc_q;
  std::optional<EncoderParams> enc_r;  // biseq2seq only
  BridgeParams bridge;
  DecoderParams dec;

  static GeneratorParams zeros(Architecture arch, const ModelDims& dims);
  /// Matrices (embeddings included) ~ U(-scale, scale), biases zero.
  static GeneratorParams init_uniform(Architecture arch, const ModelDims& dims, std::uint64_t seed,
                                      double scale = 0.08);
  GeneratorParams zeros_like() const;
  ModelDims dims() const;
};

/// A named view over one parameter tensor. Matrices are exposed in Eigen's
/// column-major storage; `rows`/`cols` give the logical shape (vectors have
/// cols == 1 and is_vector set).
template <typename T>
struct BasicTensorView {
  std::string name;
  T* data = nullptr;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  bool is_vector = false;

  std::size_t size() const { return static_cast<std::size_t>(rows * cols); }
  std::span<T> values() const { return {data, size()}; }
};

using TensorView = BasicTensorView<double>;
using ConstTensorView = BasicTensorView<const double>;

/// Every tensor in catalog order (enc_q.*, enc_r.*, bridge.*, dec.*).
std::vector<TensorView> tensors(GeneratorParams& params);
std::vector<ConstTensorView> tensors(const GeneratorParams& params);

std::size_t parameter_count(const GeneratorParams& params);

// --- single-sequence primitives -------------------------------------------

Vector gru_step(const GruParams& p, const Vector& x, const Vector& h_prev);

/// Final hidden state after running the GRU over the embedded ids from a
/// zero state. Throws on an empty sequence.
Vector encode(const EncoderParams& enc, std::span<const TokenId> ids);

/// Affine bridge W_b [q; r] + b_b (biseq2seq) or W_b q + b_b (seq2seq).
/// Throws if a biseq2seq model gets no r_vec.
Vector bridge(const GeneratorParams& params, const Vector& q_vec, const Vector* r_vec);

/// Max-subtracted softmax.
Vector softmax(const Vector& logits);
Vector log_softmax(const Vector& logits);

/// Probabilities at or below this are clamped before taking the log.
inline constexpr double kProbFloor = 1e-12;

/// -Σ log p_i[target_i]. `clamped` (optional) counts positions where the
/// target probability fell below kProbFloor.
double cross_entropy(std::span<const Vector> probs, std::span<const TokenId> targets,
                     std::size_t* clamped = nullptr);

// --- decoder stepping (used by generation) ---------------------------------

/// Decoder initial state for one query (and candidate reply for biseq2seq).
Vector initial_state(const GeneratorParams& params, std::span<const TokenId> query,
                     std::span<const TokenId> rstar);
Vector decoder_step(const GeneratorParams& params, TokenId input, const Vector& h_prev);
Vector output_log_probs(const GeneratorParams& params, const Vector& h);

// --- batched training path -----------------------------------------------

/// One training sample. `reply` is framed BOS ... EOS; `rstar` is empty for
/// seq2seq.
struct Triple {
  std::vector<TokenId> query;
  std::vector<TokenId> rstar;
  std::vector<TokenId> reply;
};

/// Ids laid out steps x batch, padded with PAD; mask is 1 on real tokens.
struct PaddedSeq {
  IdMatrix ids;
  Matrix mask;

  Eigen::Index steps() const { return ids.rows(); }
};

struct Batch {
  PaddedSeq query;
  PaddedSeq rstar;       // empty for seq2seq
  PaddedSeq dec_input;   // BOS y1 ... y_{T-1}
  PaddedSeq dec_target;  // y1 ... EOS
  Eigen::Index size = 0;
};

Batch make_batch(std::span<const Triple> samples, Architecture arch);

struct GruStepCache {
  Matrix x;
  Matrix h_prev;
  Matrix r;
  Matrix z;
  Matrix rh;
  Matrix cand;
  Eigen::RowVectorXd mask;
};

/// Everything backward() needs, plus the loss.
struct ForwardPass {
  double loss = 0.0;  // summed over every target token in the batch
  std::size_t n_tokens = 0;
  std::size_t clamped = 0;
  Matrix token_log_probs;  // steps x batch, 0 at padding
  Vector sample_loss;      // per column

  std::vector<GruStepCache> enc_q_steps;
  std::vector<GruStepCache> enc_r_steps;
  std::vector<GruStepCache> dec_steps;
  std::vector<Matrix> dec_hidden;  // decoder state after each step
  Matrix bridge_input;  // (H or 2H) x batch
  std::vector<Matrix> probs;
};

ForwardPass forward(const GeneratorParams& params, const Batch& batch);

/// Exact gradient of forward().loss with respect to every parameter.
GeneratorParams backward(const GeneratorParams& params, const Batch& batch, const ForwardPass& pass);

struct SampleLoss {
  double loss = 0.0;
  std::vector<double> token_log_probs;
};

SampleLoss forward_loss(const GeneratorParams& params, const Triple& sample);

struct LossTotals {
  double loss = 0.0;
  std::size_t tokens = 0;
  std::size_t sequences = 0;
};

LossTotals evaluate(const GeneratorParams& params, std::span<const Triple> samples,
                    std::size_t batch_size = 16);

/// exp(total cross-entropy / total target tokens).
double perplexity(const GeneratorParams& params, std::span<const Triple> samples,
                  std::size_t batch_size = 16);

}  // namespace duet::gen
