#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "distalign/bias.hpp"
#include "distalign/corpus.hpp"
#include "distalign/scoring.hpp"
#include "distalign/tape.hpp"
#include "distalign/toymodel.hpp"

namespace distalign {

enum class LossKind { Uniform, WeightedAdaptive };

const char* to_string(LossKind kind);
std::optional<LossKind> loss_kind_from_string(const std::string& s);

// Per-category adaptive-training state: EMA of batch KL, Welford variance
// aggregates, the loss-scaling constant, and the high-KL flag.
struct GroupState {
  Category category = Category::Balanced;
  double ema_mean = 0.0;
  bool ema_initialized = false;
  long welford_count = 0;
  double welford_mean = 0.0;
  double welford_m2 = 0.0;
  double alpha = 1e-5;
  bool is_high_kl = false;

  double variance() const { return welford_count > 0 ? welford_m2 / static_cast<double>(welford_count) : 0.0; }
};

struct TrainConfig {
  TargetMode target = TargetMode::Equal;
  LossKind loss = LossKind::Uniform;
  double beta = 0.95;   // EMA momentum
  double gamma = 0.0;   // language-model loss weight; 0 disables the term
  int batch_size = 5;
  // Evaluation chunk size; validation KL is a per-profession mean, so this
  // shapes batching only, never values.
  int val_batch_size = 3;
  double learning_rate = 1.5e-3;  // desk-scale default; BERT-scale would use 2e-5
  int patience = 5;
  double improvement_threshold_equal = 1e-4;
  double improvement_threshold_real_world = 1e-3;
  int max_epochs = 40;
  std::vector<std::uint64_t> seeds{42, 52, 62, 72, 82};
  double alpha_high = 1e-6;  // for categories above the mean validation KL
  double alpha_low = 1e-5;

  double improvement_threshold() const {
    return target == TargetMode::Equal ? improvement_threshold_equal : improvement_threshold_real_world;
  }
};

struct LossBreakdown {
  double kl_component = 0.0;  // the value entering the optimiser (scaled for adaptive runs)
  double lm_component = 0.0;
  double total = 0.0;  // kl + gamma * lm
  double lambda = 1.0;
  double mu_kl = 1.0;
  double var_factor = 1.0;
  double batch_kl = 0.0;  // unscaled mean KL of the batch
};

// EMA update, first call initialises to the batch value; returns the new mean.
double ema_update(GroupState& state, double batch_kl, double beta);

// Standard single-pass mean/variance update over batch KLs.
void welford_update(GroupState& state, double batch_kl);

// 1 / (1 + Var), in (0, 1].
double var_factor(const GroupState& state);

// Clamped stability multiplier; high-KL groups use the cautious branch.
double stability_weight(double mu, double v, bool is_high_kl);

// batch_kl / (ema + alpha), with the EMA already including the current batch.
double adaptive_loss(double batch_kl, const GroupState& state);

// total = kl + gamma * lm.
double combined_loss(double kl_loss, double lm_loss, double gamma);

// Flags categories whose validation KL mean exceeds the ALL mean and assigns
// the smaller alpha to them.
std::map<Category, GroupState> identify_groups(const BiasReport& validation_report,
                                               double alpha_high = 1e-6, double alpha_low = 1e-5);

// --- differentiable batch losses ---

// Mean per-profession KL over the batch (the uniform objective).
Var uniform_kl_loss_var(GradientTape& tape, TapeScoring& scoring,
                        const std::vector<std::string>& batch, const DesiredDistribution& desired);

// Updates the group's EMA and Welford state with the batch KL, then returns
// lambda * batch_kl / (mu + alpha) where lambda, mu, and alpha are constants
// of the step (gradient flows only through the batch KL). Throws on a
// category-mixed batch when `categories` is given.
Var weighted_adaptive_loss_var(GradientTape& tape, Var batch_kl, GroupState& state, double beta,
                               LossBreakdown& breakdown);

// --- fine-tuning ---

struct HistoryRow {
  int epoch = 0;
  std::string split;     // "train" | "validation"
  std::string category;  // DP_male | DP_female | DP_balanced | ALL
  double kl_mean = 0.0;
  double kl_var = 0.0;
  double lambda = std::numeric_limits<double>::quiet_NaN();
  double mu_kl = std::numeric_limits<double>::quiet_NaN();
  double var_factor = std::numeric_limits<double>::quiet_NaN();
  double lm_loss = std::numeric_limits<double>::quiet_NaN();
  double total_loss = std::numeric_limits<double>::quiet_NaN();
};

struct FinetuneResult {
  ToyModel model;  // best-validation checkpoint
  std::vector<HistoryRow> history;
  int epochs_run = 0;
  int best_epoch = 0;  // 0 = the pre-tuning model was never improved on
  double initial_validation_kl = 0.0;
  double best_validation_kl = 0.0;
  bool aborted = false;  // non-finite loss; model holds the last good checkpoint
};

struct FinetuneInputs {
  const std::vector<Profession>* professions;
  const std::vector<GenderedPair>* pairs;
  const std::vector<SentenceTemplate>* templates;  // full set; split picks ids
  const SplitAssignment* split;
};

FinetuneResult finetune(const ToyModel& base, const FinetuneInputs& inputs,
                        const TrainConfig& config, std::uint64_t seed);

void write_history_csv(const std::filesystem::path& path, const std::vector<HistoryRow>& history);

// --- multi-seed evaluation ---

struct SeedOutcome {
  std::uint64_t seed = 0;
  bool completed = false;
  int epochs_run = 0;
  double best_validation_kl = 0.0;
  ToyModel model;  // the tuned checkpoint (valid when completed)
  std::map<Category, double> test_kl;  // per-category mean on the test split
  double test_all_kl = 0.0;
  double heldout_lm_loss = std::numeric_limits<double>::quiet_NaN();
  std::vector<KlRecord> test_records;
  std::vector<HistoryRow> history;
};

struct MultiSeedReport {
  BiasReport base_test;  // the shared before-tuning reference
  double base_heldout_lm_loss = std::numeric_limits<double>::quiet_NaN();
  std::vector<SeedOutcome> seeds;
  // Seed-averaged values over completed runs.
  std::map<Category, double> tuned_kl;
  double tuned_all_kl = 0.0;
  double tuned_heldout_lm_loss = std::numeric_limits<double>::quiet_NaN();
  std::map<Category, double> drop_percent;
  double all_drop_percent = 0.0;
  std::map<Category, SignificanceResult> significance;
  SignificanceResult all_significance;
  int completed_seeds = 0;
};

double drop_percent(double base, double tuned);

MultiSeedReport multi_seed_run(const ToyModel& base, const FinetuneInputs& inputs,
                               const TrainConfig& config,
                               const std::vector<std::vector<int>>& heldout_tokens);

// --- hyperparameter sweep selection ---

struct SweepRun {
  std::string config_key;  // canonical "batch_size=..,beta=..,gamma=.." string
  int batch_size = 5;
  double beta = 0.95;
  double gamma = 0.0;
  std::map<Category, double> improvement_percent;  // vs base validation, per category
  double all_improvement_percent = 0.0;
  double r_score = 0.0;  // mean / population std of the category improvements
  double median_improvement = 0.0;
  bool selected = false;
};

// Fills r_score and median_improvement from the category improvements.
void finalize_sweep_run(SweepRun& run);

// Keeps runs whose ALL improvement is within 1 point of the mean ALL
// improvement, ranks them by R descending, takes the top two, and picks the
// one with the higher median category improvement. Ties break on larger ALL
// improvement, then lexicographic config key. Returns the index into `runs`.
std::size_t select_hyperparameters(const std::vector<SweepRun>& runs);

void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRun>& runs);

}  // namespace distalign
