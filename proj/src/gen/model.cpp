// SPDX-License-Identifier: Apache-2.0
#include "duet/gen/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "duet/error.hpp"

namespace duet::gen {
namespace {

double logistic(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

Matrix sigmoid(const Matrix& a) { return a.unaryExpr(&logistic); }

void check_shapes(const GruParams& p, Eigen::Index x_rows, Eigen::Index h_rows) {
  if (p.w_r.cols() != x_rows || p.w_r.rows() != h_rows || p.u_r.rows() != h_rows) {
    throw Error("gru: shape mismatch (params " + std::to_string(p.hidden_dim()) + "x" +
                std::to_string(p.input_dim()) + ", x has " + std::to_string(x_rows) + " rows, h has " +
                std::to_string(h_rows) + ")");
  }
}

Matrix gather(const Matrix& embedding, const IdMatrix& ids, Eigen::Index step) {
  Matrix x(embedding.cols(), ids.cols());
  for (Eigen::Index b = 0; b < ids.cols(); ++b) {
    const TokenId id = ids(step, b);
    if (id < 0 || id >= embedding.rows()) {
      throw Error("token id " + std::to_string(id) + " outside embedding table of " +
                  std::to_string(embedding.rows()) + " rows");
    }
    x.col(b) = embedding.row(id).transpose();
  }
  return x;
}

void scatter(Matrix& embedding_grad, const PaddedSeq& seq, Eigen::Index step, const Matrix& dx) {
  for (Eigen::Index b = 0; b < seq.ids.cols(); ++b) {
    if (seq.mask(step, b) != 0.0) embedding_grad.row(seq.ids(step, b)) += dx.col(b).transpose();
  }
}

Matrix gru_forward(const GruParams& p, const Matrix& x, const Matrix& h_prev,
                   const Eigen::RowVectorXd& mask, GruStepCache& c) {
  check_shapes(p, x.rows(), h_prev.rows());
  c.x = x;
  c.h_prev = h_prev;
  c.mask = mask;
  c.r = sigmoid((p.w_r * x + p.u_r * h_prev).colwise() + p.b_r);
  c.z = sigmoid((p.w_z * x + p.u_z * h_prev).colwise() + p.b_z);
  c.rh = c.r.cwiseProduct(h_prev);
  c.cand = (p.w_x * x + p.u_x * c.rh).array().tanh().matrix();
  const Matrix h_new = (1.0 - c.z.array()) * h_prev.array() + c.z.array() * c.cand.array();
  return (h_new.array().rowwise() * mask.array() + h_prev.array().rowwise() * (1.0 - mask.array()))
      .matrix();
}

/// Accumulates parameter gradients into `g`; writes the input and previous
/// state gradients.
void gru_backward(const GruParams& p, const GruStepCache& c, const Matrix& dh, GruParams& g,
                  Matrix& dx, Matrix& dh_prev) {
  const Matrix dh_new = (dh.array().rowwise() * c.mask.array()).matrix();
  dh_prev = (dh.array().rowwise() * (1.0 - c.mask.array())).matrix();

  const Matrix dz = dh_new.cwiseProduct(c.cand - c.h_prev);
  const Matrix dcand = dh_new.cwiseProduct(c.z);
  dh_prev += (dh_new.array() * (1.0 - c.z.array())).matrix();

  const Matrix da_c = (dcand.array() * (1.0 - c.cand.array().square())).matrix();
  g.w_x.noalias() += da_c * c.x.transpose();
  g.u_x.noalias() += da_c * c.rh.transpose();
  const Matrix drh = p.u_x.transpose() * da_c;
  dx.noalias() = p.w_x.transpose() * da_c;

  const Matrix dr = drh.cwiseProduct(c.h_prev);
  dh_prev += drh.cwiseProduct(c.r);

  const Matrix da_z = (dz.array() * c.z.array() * (1.0 - c.z.array())).matrix();
  g.w_z.noalias() += da_z * c.x.transpose();
  g.u_z.noalias() += da_z * c.h_prev.transpose();
  g.b_z += da_z.rowwise().sum();
  dx.noalias() += p.w_z.transpose() * da_z;
  dh_prev.noalias() += p.u_z.transpose() * da_z;

  const Matrix da_r = (dr.array() * c.r.array() * (1.0 - c.r.array())).matrix();
  g.w_r.noalias() += da_r * c.x.transpose();
  g.u_r.noalias() += da_r * c.h_prev.transpose();
  g.b_r += da_r.rowwise().sum();
  dx.noalias() += p.w_r.transpose() * da_r;
  dh_prev.noalias() += p.u_r.transpose() * da_r;
}

Matrix run_encoder(const EncoderParams& enc, const PaddedSeq& seq, std::vector<GruStepCache>& steps) {
  Matrix h = Matrix::Zero(enc.gru.hidden_dim(), seq.ids.cols());
  steps.resize(static_cast<std::size_t>(seq.steps()));
  for (Eigen::Index t = 0; t < seq.steps(); ++t) {
    h = gru_forward(enc.gru, gather(enc.embedding, seq.ids, t), h, seq.mask.row(t),
                    steps[static_cast<std::size_t>(t)]);
  }
  return h;
}

void encoder_backward(const EncoderParams& enc, const PaddedSeq& seq,
                      const std::vector<GruStepCache>& steps, Matrix dh, EncoderParams& g) {
  Matrix dx;
  Matrix dh_prev;
  for (Eigen::Index t = seq.steps() - 1; t >= 0; --t) {
    gru_backward(enc.gru, steps[static_cast<std::size_t>(t)], dh, g.gru, dx, dh_prev);
    scatter(g.embedding, seq, t, dx);
    dh = dh_prev;
  }
}

PaddedSeq pad(std::span<const Triple> samples, auto&& select, std::size_t offset, std::size_t trim) {
  std::size_t steps = 0;
  for (const auto& s : samples) {
    const auto& seq = select(s);
    steps = std::max(steps, seq.size() - trim);
  }
  PaddedSeq out;
  const auto n = static_cast<Eigen::Index>(samples.size());
  out.ids = IdMatrix::Constant(static_cast<Eigen::Index>(steps), n, reserved::kPad);
  out.mask = Matrix::Zero(static_cast<Eigen::Index>(steps), n);
  for (Eigen::Index b = 0; b < n; ++b) {
    const auto& seq = select(samples[static_cast<std::size_t>(b)]);
    for (std::size_t t = 0; t + trim < seq.size(); ++t) {
      out.ids(static_cast<Eigen::Index>(t), b) = seq[t + offset];
      out.mask(static_cast<Eigen::Index>(t), b) = 1.0;
    }
  }
  return out;
}

void fill_uniform(std::span<double> values, std::mt19937_64& rng, double scale) {
  for (double& v : values) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;  // [0, 1)
    v = (2.0 * u - 1.0) * scale;
  }
}

EncoderParams zero_encoder(const ModelDims& d) {
  return {Matrix::Zero(static_cast<Eigen::Index>(d.enc_vocab_size), static_cast<Eigen::Index>(d.embed_dim)),
          GruParams::zeros(static_cast<Eigen::Index>(d.embed_dim), static_cast<Eigen::Index>(d.hidden_dim))};
}

template <typename View, typename Params>
std::vector<View> collect(Params& p) {
  std::vector<View> out;
  auto add_matrix = [&](std::string name, auto& m) {
    out.push_back(View{std::move(name), m.data(), m.rows(), m.cols(), false});
  };
  auto add_vector = [&](std::string name, auto& v) {
    out.push_back(View{std::move(name), v.data(), v.size(), 1, true});
  };
  auto add_gru = [&](const std::string& prefix, auto& g) {
    add_matrix(prefix + ".w_r", g.w_r);
    add_matrix(prefix + ".w_z", g.w_z);
    add_matrix(prefix + ".w_x", g.w_x);
    add_matrix(prefix + ".u_r", g.u_r);
    add_matrix(prefix + ".u_z", g.u_z);
    add_matrix(prefix + ".u_x", g.u_x);
    add_vector(prefix + ".b_r", g.b_r);
    add_vector(prefix + ".b_z", g.b_z);
  };
  add_matrix("enc_q.embedding", p.enc_q.embedding);
  add_gru("enc_q.gru", p.enc_q.gru);
  if (p.enc_r) {
    add_matrix("enc_r.embedding", p.enc_r->embedding);
    add_gru("enc_r.gru", p.enc_r->gru);
  }
  add_matrix("bridge.weight", p.bridge.weight);
  add_vector("bridge.bias", p.bridge.bias);
  add_matrix("dec.embedding", p.dec.embedding);
  add_gru("dec.gru", p.dec.gru);
  add_matrix("dec.out_weight", p.dec.out_weight);
  add_vector("dec.out_bias", p.dec.out_bias);
  return out;
}

}  // namespace

std::string_view to_string(Architecture arch) {
  return arch == Architecture::kSeq2Seq ? "seq2seq" : "biseq2seq";
}

Architecture parse_architecture(std::string_view name) {
  if (name == "seq2seq") return Architecture::kSeq2Seq;
  if (name == "biseq2seq") return Architecture::kBiSeq2Seq;
  throw Error("unknown architecture '" + std::string(name) + "' (expected seq2seq or biseq2seq)");
}

GruParams GruParams::zeros(Eigen::Index input_dim, Eigen::Index hidden_dim) {
  GruParams p;
  p.w_r = p.w_z = p.w_x = Matrix::Zero(hidden_dim, input_dim);
  p.u_r = p.u_z = p.u_x = Matrix::Zero(hidden_dim, hidden_dim);
  p.b_r = p.b_z = Vector::Zero(hidden_dim);
  return p;
}

GeneratorParams GeneratorParams::zeros(Architecture arch, const ModelDims& d) {
  if (d.embed_dim == 0 || d.hidden_dim == 0 || d.enc_vocab_size == 0 || d.dec_vocab_size == 0) {
    throw Error("generator dimensions must all be positive");
  }
  const auto e = static_cast<Eigen::Index>(d.embed_dim);
  const auto h = static_cast<Eigen::Index>(d.hidden_dim);
  const auto v = static_cast<Eigen::Index>(d.dec_vocab_size);
  GeneratorParams p;
  p.arch = arch;
  p.enc_q = zero_encoder(d);
  if (arch == Architecture::kBiSeq2Seq) p.enc_r = zero_encoder(d);
  const Eigen::Index bridge_in = arch == Architecture::kBiSeq2Seq ? 2 * h : h;
  p.bridge = {Matrix::Zero(h, bridge_in), Vector::Zero(h)};
  p.dec = {Matrix::Zero(v, e), GruParams::zeros(e, h), Matrix::Zero(v, h), Vector::Zero(v)};
  return p;
}

GeneratorParams GeneratorParams::init_uniform(Architecture arch, const ModelDims& dims,
                                              std::uint64_t seed, double scale) {
  GeneratorParams p = zeros(arch, dims);
  std::mt19937_64 rng(seed);
  for (auto& t : tensors(p)) {
    if (!t.is_vector) fill_uniform(t.values(), rng, scale);
  }
  return p;
}

GeneratorParams GeneratorParams::zeros_like() const { return zeros(arch, dims()); }

ModelDims GeneratorParams::dims() const {
  return {static_cast<std::size_t>(enc_q.embedding.cols()), static_cast<std::size_t>(bridge.weight.rows()),
          static_cast<std::size_t>(enc_q.embedding.rows()), static_cast<std::size_t>(dec.out_weight.rows())};
}

std::vector<TensorView> tensors(GeneratorParams& params) { return collect<TensorView>(params); }

std::vector<ConstTensorView> tensors(const GeneratorParams& params) {
  return collect<ConstTensorView>(params);
}

std::size_t parameter_count(const GeneratorParams& params) {
  std::size_t n = 0;
  for (const auto& t : tensors(params)) n += t.size();
  return n;
}

Vector gru_step(const GruParams& p, const Vector& x, const Vector& h_prev) {
  check_shapes(p, x.size(), h_prev.size());
  const Vector r = sigmoid(p.w_r * x + p.u_r * h_prev + p.b_r);
  const Vector z = sigmoid(p.w_z * x + p.u_z * h_prev + p.b_z);
  const Vector cand = (p.w_x * x + p.u_x * r.cwiseProduct(h_prev)).array().tanh().matrix();
  return ((1.0 - z.array()) * h_prev.array() + z.array() * cand.array()).matrix();
}

Vector encode(const EncoderParams& enc, std::span<const TokenId> ids) {
  if (ids.empty()) throw Error("encode: empty sequence");
  Vector h = Vector::Zero(enc.gru.hidden_dim());
  for (const TokenId id : ids) {
    if (id < 0 || id >= enc.embedding.rows()) {
      throw Error("encode: token id " + std::to_string(id) + " outside embedding table");
    }
    h = gru_step(enc.gru, enc.embedding.row(id).transpose(), h);
  }
  return h;
}

Vector bridge(const GeneratorParams& params, const Vector& q_vec, const Vector* r_vec) {
  if (params.arch == Architecture::kSeq2Seq) {
    if (q_vec.size() != params.bridge.weight.cols()) throw Error("bridge: query vector has the wrong size");
    return params.bridge.weight * q_vec + params.bridge.bias;
  }
  if (r_vec == nullptr) throw Error("bridge: biseq2seq needs a candidate-reply vector");
  const Eigen::Index h = q_vec.size();
  if (r_vec->size() != h || 2 * h != params.bridge.weight.cols()) {
    throw Error("bridge: encoder vectors do not match the bridge shape");
  }
  Vector concat(2 * h);
  concat << q_vec, *r_vec;
  return params.bridge.weight * concat + params.bridge.bias;
}

Vector softmax(const Vector& logits) {
  const Vector shifted = (logits.array() - logits.maxCoeff()).exp().matrix();
  return shifted / shifted.sum();
}

Vector log_softmax(const Vector& logits) {
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  return (logits.array() - lse).matrix();
}

double cross_entropy(std::span<const Vector> probs, std::span<const TokenId> targets,
                     std::size_t* clamped) {
  if (probs.size() != targets.size()) throw Error("cross_entropy: length mismatch");
  double j = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const TokenId t = targets[i];
    if (t < 0 || t >= probs[i].size()) throw Error("cross_entropy: target outside the distribution");
    double p = probs[i][t];
    if (p < kProbFloor) {
      p = kProbFloor;
      if (clamped) ++*clamped;
    }
    j -= std::log(p);
  }
  return j;
}

Vector initial_state(const GeneratorParams& params, std::span<const TokenId> query,
                     std::span<const TokenId> rstar) {
  const Vector q_vec = encode(params.enc_q, query);
  if (params.arch == Architecture::kSeq2Seq) return bridge(params, q_vec, nullptr);
  if (rstar.empty()) throw Error("biseq2seq generation needs a retrieved reply");
  const Vector r_vec = encode(*params.enc_r, rstar);
  return bridge(params, q_vec, &r_vec);
}

Vector decoder_step(const GeneratorParams& params, TokenId input, const Vector& h_prev) {
  if (input < 0 || input >= params.dec.embedding.rows()) throw Error("decoder_step: token id out of range");
  return gru_step(params.dec.gru, params.dec.embedding.row(input).transpose(), h_prev);
}

Vector output_log_probs(const GeneratorParams& params, const Vector& h) {
  return log_softmax(params.dec.out_weight * h + params.dec.out_bias);
}

Batch make_batch(std::span<const Triple> samples, Architecture arch) {
  if (samples.empty()) throw Error("make_batch: empty batch");
  for (const auto& s : samples) {
    if (s.query.empty()) throw Error("make_batch: empty query");
    if (arch == Architecture::kBiSeq2Seq && s.rstar.empty()) throw Error("make_batch: biseq2seq sample without r*");
    if (s.reply.size() < 2 || s.reply.front() != reserved::kBos || s.reply.back() != reserved::kEos) {
      throw Error("make_batch: reply must be framed BOS ... EOS");
    }
  }
  Batch batch;
  batch.size = static_cast<Eigen::Index>(samples.size());
  batch.query = pad(samples, [](const Triple& s) -> const auto& { return s.query; }, 0, 0);
  if (arch == Architecture::kBiSeq2Seq) {
    batch.rstar = pad(samples, [](const Triple& s) -> const auto& { return s.rstar; }, 0, 0);
  }
  batch.dec_input = pad(samples, [](const Triple& s) -> const auto& { return s.reply; }, 0, 1);
  batch.dec_target = pad(samples, [](const Triple& s) -> const auto& { return s.reply; }, 1, 1);
  return batch;
}

ForwardPass forward(const GeneratorParams& params, const Batch& batch) {
  ForwardPass pass;
  const Eigen::Index n = batch.size;
  const Eigen::Index h = params.bridge.weight.rows();

  const Matrix q_state = run_encoder(params.enc_q, batch.query, pass.enc_q_steps);
  if (params.arch == Architecture::kBiSeq2Seq) {
    if (batch.rstar.steps() == 0) throw Error("forward: biseq2seq batch without r*");
    const Matrix r_state = run_encoder(*params.enc_r, batch.rstar, pass.enc_r_steps);
    pass.bridge_input.resize(2 * h, n);
    pass.bridge_input << q_state, r_state;
  } else {
    pass.bridge_input = q_state;
  }
  Matrix state = (params.bridge.weight * pass.bridge_input).colwise() + params.bridge.bias;

  const Eigen::Index steps = batch.dec_input.steps();
  pass.dec_steps.resize(static_cast<std::size_t>(steps));
  pass.dec_hidden.reserve(static_cast<std::size_t>(steps));
  pass.probs.reserve(static_cast<std::size_t>(steps));
  pass.token_log_probs = Matrix::Zero(steps, n);
  pass.sample_loss = Vector::Zero(n);
  for (Eigen::Index t = 0; t < steps; ++t) {
    state = gru_forward(params.dec.gru, gather(params.dec.embedding, batch.dec_input.ids, t), state,
                        batch.dec_input.mask.row(t), pass.dec_steps[static_cast<std::size_t>(t)]);
    Matrix logits = (params.dec.out_weight * state).colwise() + params.dec.out_bias;
    const Eigen::RowVectorXd max = logits.colwise().maxCoeff();
    logits = (logits.rowwise() - max).array().exp().matrix();
    const Eigen::RowVectorXd sums = logits.colwise().sum();
    for (Eigen::Index b = 0; b < n; ++b) logits.col(b) /= sums[b];

    for (Eigen::Index b = 0; b < n; ++b) {
      if (batch.dec_target.mask(t, b) == 0.0) continue;
      const TokenId target = batch.dec_target.ids(t, b);
      if (target < 0 || target >= logits.rows()) throw Error("forward: target id outside decoder vocabulary");
      double p = logits(target, b);
      if (p < kProbFloor) {
        p = kProbFloor;
        ++pass.clamped;
      }
      const double lp = std::log(p);
      pass.token_log_probs(t, b) = lp;
      pass.sample_loss[b] -= lp;
      ++pass.n_tokens;
    }
    pass.dec_hidden.push_back(state);
    pass.probs.push_back(std::move(logits));
  }
  pass.loss = pass.sample_loss.sum();
  return pass;
}

GeneratorParams backward(const GeneratorParams& params, const Batch& batch, const ForwardPass& pass) {
  GeneratorParams g = params.zeros_like();
  const Eigen::Index n = batch.size;
  const Eigen::Index h = params.bridge.weight.rows();

  Matrix dh_next = Matrix::Zero(h, n);
  Matrix dx;
  Matrix dh_prev;
  for (Eigen::Index t = batch.dec_input.steps() - 1; t >= 0; --t) {
    const auto ti = static_cast<std::size_t>(t);
    Matrix dlogits = pass.probs[ti];
    for (Eigen::Index b = 0; b < n; ++b) {
      if (batch.dec_target.mask(t, b) == 0.0) {
        dlogits.col(b).setZero();
      } else {
        dlogits(batch.dec_target.ids(t, b), b) -= 1.0;
      }
    }
    g.dec.out_weight.noalias() += dlogits * pass.dec_hidden[ti].transpose();
    g.dec.out_bias += dlogits.rowwise().sum();
    Matrix dh = dh_next;
    dh.noalias() += params.dec.out_weight.transpose() * dlogits;
    gru_backward(params.dec.gru, pass.dec_steps[ti], dh, g.dec.gru, dx, dh_prev);
    scatter(g.dec.embedding, batch.dec_input, t, dx);
    dh_next = dh_prev;
  }

  g.bridge.weight.noalias() += dh_next * pass.bridge_input.transpose();
  g.bridge.bias += dh_next.rowwise().sum();
  const Matrix d_input = params.bridge.weight.transpose() * dh_next;

  encoder_backward(params.enc_q, batch.query, pass.enc_q_steps, d_input.topRows(h), g.enc_q);
  if (params.arch == Architecture::kBiSeq2Seq) {
    encoder_backward(*params.enc_r, batch.rstar, pass.enc_r_steps, d_input.bottomRows(h), *g.enc_r);
  }
  return g;
}

SampleLoss forward_loss(const GeneratorParams& params, const Triple& sample) {
  const Batch batch = make_batch(std::span(&sample, 1), params.arch);
  const ForwardPass pass = forward(params, batch);
  SampleLoss out;
  out.loss = pass.loss;
  out.token_log_probs.reserve(static_cast<std::size_t>(pass.token_log_probs.rows()));
  for (Eigen::Index t = 0; t < pass.token_log_probs.rows(); ++t) {
    out.token_log_probs.push_back(pass.token_log_probs(t, 0));
  }
  return out;
}

LossTotals evaluate(const GeneratorParams& params, std::span<const Triple> samples, std::size_t batch_size) {
  if (batch_size == 0) throw Error("evaluate: batch_size must be positive");
  LossTotals totals;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const auto chunk = samples.subspan(start, std::min(batch_size, samples.size() - start));
    const ForwardPass pass = forward(params, make_batch(chunk, params.arch));
    totals.loss += pass.loss;
    totals.tokens += pass.n_tokens;
    totals.sequences += chunk.size();
  }
  return totals;
}

double perplexity(const GeneratorParams& params, std::span<const Triple> samples, std::size_t batch_size) {
  if (samples.empty()) throw Error("perplexity: no samples");
  const LossTotals totals = evaluate(params, samples, batch_size);
  return std::exp(totals.loss / static_cast<double>(totals.tokens));
}

}  // namespace duet::gen
