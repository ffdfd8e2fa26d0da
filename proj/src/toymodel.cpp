#include "distalign/toymodel.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "distalign/optimizer.hpp"
#include "distalign/rng.hpp"

namespace distalign {

namespace {

void check_positions(const ToyModel& model, const std::vector<int>& tokens,
                     const std::vector<int>& masked_positions, int predict_position) {
  const int n = static_cast<int>(tokens.size());
  if (predict_position < 0 || predict_position >= n) {
    throw std::out_of_range("predict position " + std::to_string(predict_position) +
                            " outside sentence of length " + std::to_string(n));
  }
  if (predict_position >= model.max_len) {
    throw std::out_of_range("predict position exceeds model max length");
  }
  for (const int p : masked_positions) {
    if (p < 0 || p >= n) throw std::out_of_range("masked position outside sentence");
  }
  for (const int id : tokens) {
    if (id < 0 || id >= model.vocab.size()) throw std::out_of_range("token id outside vocabulary");
  }
}

std::vector<int> unmasked_token_ids(const std::vector<int>& tokens,
                                    const std::vector<int>& masked_positions) {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (int i = 0; i < static_cast<int>(tokens.size()); ++i) {
    bool masked = false;
    for (const int p : masked_positions) {
      if (p == i) {
        masked = true;
        break;
      }
    }
    if (!masked) ids.push_back(tokens[static_cast<std::size_t>(i)]);
  }
  return ids;
}

Eigen::VectorXd context_vector(const ToyModel& model, const std::vector<int>& embedded_ids,
                               int slot_position) {
  Eigen::VectorXd context = Eigen::VectorXd::Zero(model.dim);
  for (const int id : embedded_ids) context += model.token_embeddings.row(id).transpose();
  if (!embedded_ids.empty()) context /= static_cast<double>(embedded_ids.size());
  context += model.position_embeddings.row(slot_position).transpose();
  return context;
}

Eigen::VectorXd logits_from_context(const ToyModel& model, const Eigen::VectorXd& context) {
  const Eigen::VectorXd hidden =
      (model.hidden_weight * context + model.hidden_bias).array().tanh().matrix();
  return model.token_embeddings * hidden + model.output_bias;
}

double log_softmax_entry(const Eigen::VectorXd& logits, int index) {
  const double zmax = logits.maxCoeff();
  const double lse = zmax + std::log((logits.array() - zmax).exp().sum());
  return logits(index) - lse;
}

Var forward_log_prob_var(GradientTape& tape, const ToyModel& model, ModelGradients& grads,
                         const std::vector<int>& embedded_ids, int slot_position, int target_token) {
  const Var pooled = tape.rows_mean(model.token_embeddings, grads.token_embeddings,
                                    embedded_ids, model.dim);
  const Var slot = tape.table_row(model.position_embeddings, grads.position_embeddings, slot_position);
  const Var context = tape.add(pooled, slot);
  const Var hidden = tape.tanh(
      tape.affine(model.hidden_weight, grads.hidden_weight, model.hidden_bias, grads.hidden_bias, context));
  // Output layer reuses the embedding table, so its gradient lands there too.
  const Var logits = tape.affine(model.token_embeddings, grads.token_embeddings,
                                 model.output_bias, grads.output_bias, hidden);
  return tape.log_softmax_at(logits, target_token);
}

}  // namespace

ToyModel ToyModel::create(Vocabulary vocab, ModelMode mode, int dim, int max_len,
                          double init_scale, std::uint64_t seed) {
  if (dim <= 0 || max_len <= 0) throw std::invalid_argument("model dimensions must be positive");
  ToyModel model;
  model.mode = mode;
  model.dim = dim;
  model.max_len = max_len;
  model.vocab = std::move(vocab);
  const int v = model.vocab.size();
  model.token_embeddings = Eigen::MatrixXd::Zero(v, dim);
  model.position_embeddings = Eigen::MatrixXd::Zero(max_len, dim);
  model.hidden_weight = Eigen::MatrixXd::Zero(dim, dim);
  model.hidden_bias = Eigen::VectorXd::Zero(dim);
  model.output_bias = Eigen::VectorXd::Zero(v);
  if (init_scale > 0.0) {
    Rng rng(seed);
    const auto fill = [&](Eigen::MatrixXd& m) {
      for (long c = 0; c < m.cols(); ++c) {
        for (long r = 0; r < m.rows(); ++r) m(r, c) = rng.normal(0.0, init_scale);
      }
    };
    fill(model.token_embeddings);
    fill(model.position_embeddings);
    fill(model.hidden_weight);
  }
  return model;
}

long ToyModel::parameter_count() const {
  return token_embeddings.size() + position_embeddings.size() + hidden_weight.size() +
         hidden_bias.size() + output_bias.size();
}

bool ToyModel::all_finite() const {
  return token_embeddings.allFinite() && position_embeddings.allFinite() &&
         hidden_weight.allFinite() && hidden_bias.allFinite() && output_bias.allFinite();
}

ModelGradients::ModelGradients(const ToyModel& model)
    : token_embeddings(Eigen::MatrixXd::Zero(model.token_embeddings.rows(), model.token_embeddings.cols())),
      position_embeddings(
          Eigen::MatrixXd::Zero(model.position_embeddings.rows(), model.position_embeddings.cols())),
      hidden_weight(Eigen::MatrixXd::Zero(model.hidden_weight.rows(), model.hidden_weight.cols())),
      hidden_bias(Eigen::VectorXd::Zero(model.hidden_bias.size())),
      output_bias(Eigen::VectorXd::Zero(model.output_bias.size())) {}

void ModelGradients::zero() {
  token_embeddings.setZero();
  position_embeddings.setZero();
  hidden_weight.setZero();
  hidden_bias.setZero();
  output_bias.setZero();
}

ParamView::ParamView(ToyModel& model) {
  blocks_ = {{model.token_embeddings.data(), model.token_embeddings.size()},
             {model.position_embeddings.data(), model.position_embeddings.size()},
             {model.hidden_weight.data(), model.hidden_weight.size()},
             {model.hidden_bias.data(), model.hidden_bias.size()},
             {model.output_bias.data(), model.output_bias.size()}};
  for (const auto& b : blocks_) total_ += b.size;
}

ParamView::ParamView(ModelGradients& grads) {
  blocks_ = {{grads.token_embeddings.data(), grads.token_embeddings.size()},
             {grads.position_embeddings.data(), grads.position_embeddings.size()},
             {grads.hidden_weight.data(), grads.hidden_weight.size()},
             {grads.hidden_bias.data(), grads.hidden_bias.size()},
             {grads.output_bias.data(), grads.output_bias.size()}};
  for (const auto& b : blocks_) total_ += b.size;
}

double ParamView::get(long index) const {
  for (const auto& b : blocks_) {
    if (index < b.size) return b.data[index];
    index -= b.size;
  }
  throw std::out_of_range("parameter index out of range");
}

void ParamView::set(long index, double value) {
  for (const auto& b : blocks_) {
    if (index < b.size) {
      b.data[index] = value;
      return;
    }
    index -= b.size;
  }
  throw std::out_of_range("parameter index out of range");
}

void ParamView::add(long index, double delta) { set(index, get(index) + delta); }

Eigen::VectorXd mlm_predict(const ToyModel& model, const std::vector<int>& tokens,
                            const std::vector<int>& masked_positions, int predict_position) {
  if (model.mode != ModelMode::Masked) throw std::logic_error("mlm_predict requires a masked model");
  check_positions(model, tokens, masked_positions, predict_position);
  const Eigen::VectorXd logits = logits_from_context(
      model, context_vector(model, unmasked_token_ids(tokens, masked_positions), predict_position));
  const double zmax = logits.maxCoeff();
  Eigen::VectorXd probs = (logits.array() - zmax).exp();
  probs /= probs.sum();
  return probs;
}

Eigen::VectorXd mlm_predict(const ToyModel& model, const std::vector<int>& tokens,
                            int masked_position) {
  return mlm_predict(model, tokens, {masked_position}, masked_position);
}

double masked_log_prob(const ToyModel& model, const std::vector<int>& tokens,
                       const std::vector<int>& masked_positions, int predict_position) {
  check_positions(model, tokens, masked_positions, predict_position);
  const Eigen::VectorXd logits = logits_from_context(
      model, context_vector(model, unmasked_token_ids(tokens, masked_positions), predict_position));
  return log_softmax_entry(logits, tokens[static_cast<std::size_t>(predict_position)]);
}

double pseudo_log_likelihood(const ToyModel& model, const std::vector<int>& tokens) {
  if (model.mode != ModelMode::Masked) {
    throw std::logic_error("pseudo log-likelihood requires a masked model");
  }
  if (tokens.empty()) throw std::invalid_argument("cannot score an empty sentence");
  double total = 0.0;
  for (int i = 0; i < static_cast<int>(tokens.size()); ++i) {
    total += masked_log_prob(model, tokens, {i}, i);
  }
  return total / static_cast<double>(tokens.size());
}

double pseudo_perplexity(const ToyModel& model, const std::vector<int>& tokens) {
  return std::exp(-pseudo_log_likelihood(model, tokens));
}

double alm_sentence_loss(const ToyModel& model, const std::vector<int>& tokens) {
  if (model.mode != ModelMode::Autoregressive) {
    throw std::logic_error("sentence loss requires an autoregressive model");
  }
  if (tokens.empty()) throw std::invalid_argument("cannot score an empty sentence");
  std::vector<int> prefix{model.vocab.bos_id()};
  double total = 0.0;
  for (int i = 0; i < static_cast<int>(tokens.size()); ++i) {
    const int slot = i + 1;  // position of the predicted token in the BOS-prefixed sequence
    if (slot >= model.max_len) throw std::out_of_range("sentence exceeds model max length");
    const Eigen::VectorXd logits = logits_from_context(model, context_vector(model, prefix, slot));
    total -= log_softmax_entry(logits, tokens[static_cast<std::size_t>(i)]);
    prefix.push_back(tokens[static_cast<std::size_t>(i)]);
  }
  return total / static_cast<double>(tokens.size());
}

Var masked_log_prob_var(GradientTape& tape, const ToyModel& model, ModelGradients& grads,
                        const std::vector<int>& tokens, const std::vector<int>& masked_positions,
                        int predict_position) {
  check_positions(model, tokens, masked_positions, predict_position);
  return forward_log_prob_var(tape, model, grads, unmasked_token_ids(tokens, masked_positions),
                              predict_position, tokens[static_cast<std::size_t>(predict_position)]);
}

Var pseudo_log_likelihood_var(GradientTape& tape, const ToyModel& model, ModelGradients& grads,
                              const std::vector<int>& tokens) {
  if (tokens.empty()) throw std::invalid_argument("cannot score an empty sentence");
  std::vector<Var> per_position;
  per_position.reserve(tokens.size());
  for (int i = 0; i < static_cast<int>(tokens.size()); ++i) {
    per_position.push_back(masked_log_prob_var(tape, model, grads, tokens, {i}, i));
  }
  return tape.mean(per_position);
}

Var alm_sentence_loss_var(GradientTape& tape, const ToyModel& model, ModelGradients& grads,
                          const std::vector<int>& tokens) {
  if (tokens.empty()) throw std::invalid_argument("cannot score an empty sentence");
  std::vector<Var> losses;
  std::vector<int> prefix{model.vocab.bos_id()};
  for (int i = 0; i < static_cast<int>(tokens.size()); ++i) {
    const int slot = i + 1;
    if (slot >= model.max_len) throw std::out_of_range("sentence exceeds model max length");
    losses.push_back(tape.neg(forward_log_prob_var(tape, model, grads, prefix, slot,
                                                   tokens[static_cast<std::size_t>(i)])));
    prefix.push_back(tokens[static_cast<std::size_t>(i)]);
  }
  return tape.mean(losses);
}

namespace {

constexpr std::uint32_t kCheckpointMagic = 0x44544131;  // "DTA1"
constexpr std::uint32_t kCheckpointVersion = 1;

void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char buf[4];
  for (int i = 0; i < 4; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(buf), 4);
}

std::uint32_t read_u32(std::istream& in) {
  unsigned char buf[4];
  in.read(reinterpret_cast<char*>(buf), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[i]) << (8 * i);
  return v;
}

void write_matrix(std::ostream& out, const Eigen::MatrixXd& m) {
  write_u32(out, static_cast<std::uint32_t>(m.rows()));
  write_u32(out, static_cast<std::uint32_t>(m.cols()));
  for (long c = 0; c < m.cols(); ++c) {
    for (long r = 0; r < m.rows(); ++r) {
      std::uint64_t bits = 0;
      const double v = m(r, c);
      std::memcpy(&bits, &v, sizeof(bits));
      unsigned char buf[8];
      for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
      out.write(reinterpret_cast<const char*>(buf), 8);
    }
  }
}

Eigen::MatrixXd read_matrix(std::istream& in) {
  const std::uint32_t rows = read_u32(in);
  const std::uint32_t cols = read_u32(in);
  Eigen::MatrixXd m(rows, cols);
  for (std::uint32_t c = 0; c < cols; ++c) {
    for (std::uint32_t r = 0; r < rows; ++r) {
      unsigned char buf[8];
      in.read(reinterpret_cast<char*>(buf), 8);
      std::uint64_t bits = 0;
      for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
      double v = 0.0;
      std::memcpy(&v, &bits, sizeof(v));
      m(r, c) = v;
    }
  }
  return m;
}

}  // namespace

void save_checkpoint(const ToyModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path.string());
  write_u32(out, kCheckpointMagic);
  write_u32(out, kCheckpointVersion);
  write_u32(out, model.mode == ModelMode::Masked ? 0u : 1u);
  write_u32(out, static_cast<std::uint32_t>(model.dim));
  write_u32(out, static_cast<std::uint32_t>(model.max_len));
  write_u32(out, static_cast<std::uint32_t>(model.vocab.size()));
  for (const auto& tok : model.vocab.tokens()) {
    write_u32(out, static_cast<std::uint32_t>(tok.size()));
    out.write(tok.data(), static_cast<std::streamsize>(tok.size()));
  }
  write_matrix(out, model.token_embeddings);
  write_matrix(out, model.position_embeddings);
  write_matrix(out, model.hidden_weight);
  write_matrix(out, model.hidden_bias);
  write_matrix(out, model.output_bias);
  if (!out) throw std::runtime_error("failed while writing checkpoint: " + path.string());
}

ToyModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
  if (read_u32(in) != kCheckpointMagic) throw std::runtime_error("not a model checkpoint: " + path.string());
  const std::uint32_t version = read_u32(in);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  ToyModel model;
  model.mode = read_u32(in) == 0u ? ModelMode::Masked : ModelMode::Autoregressive;
  model.dim = static_cast<int>(read_u32(in));
  model.max_len = static_cast<int>(read_u32(in));
  const std::uint32_t vocab_size = read_u32(in);
  std::vector<std::string> tokens;
  tokens.reserve(vocab_size);
  for (std::uint32_t i = 0; i < vocab_size; ++i) {
    const std::uint32_t len = read_u32(in);
    std::string tok(len, '\0');
    in.read(tok.data(), static_cast<std::streamsize>(len));
    tokens.push_back(std::move(tok));
  }
  model.vocab = Vocabulary::from_tokens(tokens);
  model.token_embeddings = read_matrix(in);
  model.position_embeddings = read_matrix(in);
  model.hidden_weight = read_matrix(in);
  model.hidden_bias = read_matrix(in);
  model.output_bias = read_matrix(in);
  if (!in) throw std::runtime_error("truncated checkpoint: " + path.string());
  return model;
}

double corpus_lm_loss(const ToyModel& model, const std::vector<std::vector<int>>& sentences) {
  if (sentences.empty()) throw std::invalid_argument("cannot evaluate an empty corpus");
  double total = 0.0;
  for (const auto& tokens : sentences) {
    total += model.mode == ModelMode::Masked ? -pseudo_log_likelihood(model, tokens)
                                             : alm_sentence_loss(model, tokens);
  }
  return total / static_cast<double>(sentences.size());
}

PretrainResult pretrain(ToyModel& model, const std::vector<std::vector<int>>& corpus,
                        const std::vector<std::vector<int>>& heldout, const PretrainConfig& config) {
  if (corpus.empty()) throw std::invalid_argument("pretraining corpus is empty");
  PretrainResult result;
  if (!heldout.empty()) result.heldout_loss.push_back(corpus_lm_loss(model, heldout));
  if (config.epochs == 0) return result;

  AdamW optimizer(model.parameter_count(),
                  AdamWConfig{config.learning_rate, 0.9, 0.999, 1e-8, config.weight_decay});
  ModelGradients grads(model);
  Rng rng(config.seed);
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      GradientTape tape;
      grads.zero();
      std::vector<Var> losses;
      for (std::size_t k = start; k < end; ++k) {
        const auto& tokens = corpus[order[k]];
        if (tokens.empty()) continue;
        if (model.mode == ModelMode::Masked) {
          std::vector<int> mask;
          for (int i = 0; i < static_cast<int>(tokens.size()); ++i) {
            if (rng.bernoulli(config.mask_prob)) mask.push_back(i);
          }
          if (mask.empty()) mask.push_back(static_cast<int>(rng.below(tokens.size())));
          std::vector<Var> predictions;
          predictions.reserve(mask.size());
          for (const int position : mask) {
            predictions.push_back(
                tape.neg(masked_log_prob_var(tape, model, grads, tokens, mask, position)));
          }
          losses.push_back(tape.mean(predictions));
        } else {
          losses.push_back(alm_sentence_loss_var(tape, model, grads, tokens));
        }
      }
      if (losses.empty()) continue;
      const Var loss = tape.mean(losses);
      if (!std::isfinite(tape.value(loss))) {
        throw std::runtime_error("pretraining diverged: non-finite loss at epoch " +
                                 std::to_string(epoch + 1));
      }
      tape.backward(loss);
      optimizer.step(ParamView(model), ParamView(grads));
    }
    if (!heldout.empty()) {
      const double held = corpus_lm_loss(model, heldout);
      if (!std::isfinite(held)) {
        throw std::runtime_error("pretraining diverged: non-finite held-out loss at epoch " +
                                 std::to_string(epoch + 1));
      }
      result.heldout_loss.push_back(held);
    }
  }
  return result;
}

}  // namespace distalign
