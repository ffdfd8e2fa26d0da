#pragma once

#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "distalign/corpus.hpp"
#include "distalign/scoring.hpp"

namespace distalign {

enum class TargetMode { Equal, RealWorld };

const char* to_string(TargetMode mode);
std::optional<TargetMode> target_mode_from_string(const std::string& s);

// Per-profession reference gender split: (0.5, 0.5) everywhere for Equal,
// (1 - female_share, female_share) for RealWorld.
struct DesiredDistribution {
  TargetMode mode = TargetMode::Equal;
  std::map<std::string, GenderDistribution> targets;

  static DesiredDistribution equal(const std::vector<Profession>& professions);
  static DesiredDistribution real_world(const std::vector<Profession>& professions);

  const GenderDistribution& target_for(const std::string& profession) const;
};

struct KlRecord {
  std::string profession;
  Category category = Category::Balanced;
  double kl = 0.0;
};

struct CategoryStats {
  double mean = 0.0;
  double variance = 0.0;  // population variance
  int count = 0;
};

struct SignificanceResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;
  bool significant = false;
  bool degenerate = false;  // identical zero-variance samples carry no evidence
};

struct BiasReport {
  TargetMode mode = TargetMode::Equal;
  std::map<Category, CategoryStats> per_category;
  CategoryStats all;
  std::vector<KlRecord> records;
  std::optional<SignificanceResult> significance;
  std::string dataset_id;  // hash of the evaluation data; reports must match to merge
  // Held-out language-model loss measured alongside the bias evaluation;
  // NaN when not measured.
  double heldout_lm_loss = std::numeric_limits<double>::quiet_NaN();
};

// Half-mean KL divergence of the predicted from the desired distribution for
// one profession. A zero desired component contributes zero.
double kl_profession(const GenderDistribution& desired, const GenderDistribution& predicted);

// Mean KL over records; throws on an empty list.
double bias_score(const std::vector<KlRecord>& records);

// Population mean/variance per category plus the ALL row over the union.
// Empty categories are omitted.
std::map<Category, CategoryStats> category_stats(const std::vector<KlRecord>& records);
CategoryStats overall_stats(const std::vector<KlRecord>& records);

// Welch's unequal-variance t-test, one-sided alternative "after < before",
// significant at the 95% level. Sample variances are floored at 1e-12;
// identical zero-variance samples yield p = 1 and the degenerate flag.
SignificanceResult significance_test(const std::vector<double>& kl_before,
                                     const std::vector<double>& kl_after);

// One-sided tail helper exposed for reuse: P(T_df >= t).
double student_t_upper_tail(double t, double df);

// Scores every profession and assembles the report; significance is left
// empty (it needs a before/after pair).
BiasReport evaluate_bias(const ToyModel& model, const std::vector<Profession>& professions,
                         const std::vector<SentenceTemplate>& templates,
                         const std::vector<GenderedPair>& pairs, const DesiredDistribution& desired,
                         ScoringMode mode, std::string dataset_id = "");

void write_bias_report_json(const std::filesystem::path& path, const BiasReport& report);
BiasReport read_bias_report_json(const std::filesystem::path& path);

// Category KL columns plus ALL, one row per statistic.
void write_bias_report_csv(const std::filesystem::path& path, const BiasReport& report);

}  // namespace distalign
