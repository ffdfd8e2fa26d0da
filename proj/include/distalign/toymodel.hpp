#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "distalign/tape.hpp"
#include "distalign/vocab.hpp"

namespace distalign {

enum class ModelMode { Masked, Autoregressive };

// Mean-pooled bag-of-embeddings language model with one tanh hidden layer and
// an output layer weight-tied to the token embeddings. Small enough to train
// at desk scale, expressive enough to pick up token co-occurrence skew.
struct ToyModel {
  ModelMode mode = ModelMode::Masked;
  int dim = 32;
  int max_len = 16;
  Vocabulary vocab;
  Eigen::MatrixXd token_embeddings;     // |V| x dim, tied with the output layer
  Eigen::MatrixXd position_embeddings;  // max_len x dim
  Eigen::MatrixXd hidden_weight;        // dim x dim
  Eigen::VectorXd hidden_bias;          // dim
  Eigen::VectorXd output_bias;          // |V|

  static ToyModel create(Vocabulary vocab, ModelMode mode, int dim, int max_len,
                         double init_scale, std::uint64_t seed);

  long parameter_count() const;
  bool all_finite() const;
};

struct ModelGradients {
  explicit ModelGradients(const ToyModel& model);
  void zero();

  Eigen::MatrixXd token_embeddings;
  Eigen::MatrixXd position_embeddings;
  Eigen::MatrixXd hidden_weight;
  Eigen::VectorXd hidden_bias;
  Eigen::VectorXd output_bias;
};

// Flat view over the parameter (or gradient) storage in a fixed block order;
// used by the optimizer and by finite-difference probes.
class ParamView {
 public:
  ParamView(ToyModel& model);
  ParamView(ModelGradients& grads);

  long size() const { return total_; }
  double get(long index) const;
  void set(long index, double value);
  void add(long index, double delta);

 private:
  struct Block {
    double* data;
    long size;
  };
  std::vector<Block> blocks_;
  long total_ = 0;
};

// --- plain forward path (detection / evaluation) ---

// Softmax over the vocab for the token at `predict_position`, with every
// position in `masked_positions` removed from the mean-pooled context.
Eigen::VectorXd mlm_predict(const ToyModel& model, const std::vector<int>& tokens,
                            const std::vector<int>& masked_positions, int predict_position);
// Single-mask convenience overload.
Eigen::VectorXd mlm_predict(const ToyModel& model, const std::vector<int>& tokens,
                            int masked_position);

// log p(tokens[predict_position]) under the mask set.
double masked_log_prob(const ToyModel& model, const std::vector<int>& tokens,
                       const std::vector<int>& masked_positions, int predict_position);

// Mean per-token log-likelihood with every position masked in turn (<= 0).
double pseudo_log_likelihood(const ToyModel& model, const std::vector<int>& tokens);
double pseudo_perplexity(const ToyModel& model, const std::vector<int>& tokens);

// Mean next-token negative log-likelihood from mean-pooled prefixes; the
// sequence is implicitly BOS-prefixed so the first token has a prefix.
double alm_sentence_loss(const ToyModel& model, const std::vector<int>& tokens);

// --- tape forward path (training) ---

Var masked_log_prob_var(GradientTape& tape, const ToyModel& model, ModelGradients& grads,
                        const std::vector<int>& tokens, const std::vector<int>& masked_positions,
                        int predict_position);
Var pseudo_log_likelihood_var(GradientTape& tape, const ToyModel& model, ModelGradients& grads,
                              const std::vector<int>& tokens);
Var alm_sentence_loss_var(GradientTape& tape, const ToyModel& model, ModelGradients& grads,
                          const std::vector<int>& tokens);

// --- checkpointing ---

// Versioned little-endian binary container; round-trips bit-exactly.
void save_checkpoint(const ToyModel& model, const std::filesystem::path& path);
ToyModel load_checkpoint(const std::filesystem::path& path);

// --- pretraining ---

struct PretrainConfig {
  int epochs = 10;
  int batch_size = 16;
  double learning_rate = 3e-3;
  double weight_decay = 0.01;
  // Each position is masked independently with this probability (at least one
  // per sentence), so contexts with several simultaneous masks are trained —
  // the scoring prior masks attribute, target, and article together.
  double mask_prob = 0.25;
  std::uint64_t seed = 42;
};

struct PretrainResult {
  // heldout_loss[0] is the loss before training, then one entry per epoch.
  std::vector<double> heldout_loss;
};

// Masked-token objective (or causal NLL in autoregressive mode) over the
// corpus. Throws on divergence. Deterministic for a fixed seed.
PretrainResult pretrain(ToyModel& model, const std::vector<std::vector<int>>& corpus,
                        const std::vector<std::vector<int>>& heldout, const PretrainConfig& config);

// Mean language-model loss (masked pseudo-NLL or causal NLL) over sentences.
double corpus_lm_loss(const ToyModel& model, const std::vector<std::vector<int>>& sentences);

}  // namespace distalign
