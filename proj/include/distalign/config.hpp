#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "distalign/bias.hpp"
#include "distalign/mitigation.hpp"
#include "distalign/toymodel.hpp"

namespace distalign {

// Flat JSON config with section-prefixed keys ("train.beta", "paths.pairs",
// ...). Every key can be overridden on the command line with --set key=value.
struct RunConfig {
  // paths
  std::filesystem::path professions_path = "data/professions.csv";
  std::filesystem::path pairs_path = "data/gendered_pairs.csv";
  std::filesystem::path templates_path = "data/templates.txt";
  std::filesystem::path corpus_dir = "out/corpus";
  std::filesystem::path checkpoint_dir = "out/checkpoints";
  std::filesystem::path report_dir = "out/reports";

  TrainConfig train;

  // model. Width 64 keeps enough slack capacity that the language-model
  // anchor can protect text the KL objective does not touch; 32 recovers the
  // skew but fails that separation.
  ModelMode model_mode = ModelMode::Masked;
  int model_dim = 64;
  int model_max_len = 16;
  double model_init_scale = 0.05;
  std::uint64_t model_seed = 42;

  // synthetic corpus skew
  double skew_male_prob_male_dominated = 0.2;
  double skew_male_prob_female_dominated = 0.8;
  double skew_male_prob_balanced = 0.8;
  std::map<std::string, double> skew_overrides;  // per-profession male probability
  // Undersampling two templates gives the rarity split the template
  // categorisation needs something to find.
  std::map<std::string, double> skew_template_weights{{"T1", 0.1}, {"T6", 0.01}};
  int skew_corpus_size = 8000;
  int skew_heldout_size = 800;
  double skew_filler_ratio = 0.15;
  std::uint64_t skew_seed = 42;

  // pretraining
  int pretrain_epochs = 70;
  int pretrain_batch_size = 16;
  double pretrain_learning_rate = 3e-3;
  double pretrain_mask_prob = 0.25;
  std::uint64_t pretrain_seed = 42;

  // splits and template categorisation. The pseudo-perplexity cutoff is only
  // meaningful relative to the model scoring it; the default suits the toy
  // model, BERT-scale models would use 15.
  std::uint64_t split_seed = 42;
  std::array<double, 3> split_ratios{0.65, 0.15, 0.20};
  double ppl_cutoff = 2.6;

  // sweep grids
  std::vector<int> sweep_batch_sizes{5, 8};
  std::vector<double> sweep_betas{0.60, 0.80, 0.95};
  std::vector<double> sweep_gammas{0.001, 0.01, 0.1, 0.2, 0.5, 0.8, 1.0};

  static RunConfig from_json_file(const std::filesystem::path& path);
  static RunConfig from_json_text(const std::string& text);
  std::string to_json_text() const;
  void save_json(const std::filesystem::path& path) const;

  // Applies one `key=value` override; value is parsed as JSON when possible,
  // otherwise taken as a string. Throws on unknown keys.
  void apply_override(const std::string& assignment);

  // Resolves the per-profession skew table for the given professions.
  SkewConfig skew_config(const std::vector<Profession>& professions) const;
};

}  // namespace distalign
