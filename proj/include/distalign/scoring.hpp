#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "distalign/corpus.hpp"
#include "distalign/tape.hpp"
#include "distalign/toymodel.hpp"

namespace distalign {

// Masked models exponentiate the association score directly; autoregressive
// models use the sentence loss, where lower means stronger, so the exponent
// is negated.
enum class ScoringMode { Masked, Autoregressive };

struct AssociationRecord {
  Gender gender = Gender::Male;
  std::string word;
  std::string profession;
  std::string template_id;
  double score = 0.0;
  bool floored = false;  // probability hit the 1e-300 floor before the log
};

// Normalised (p_male, p_female) for one profession; both in (0,1), sum 1.
struct GenderDistribution {
  double p_male = 0.5;
  double p_female = 0.5;
};

// Log-likelihood ratio of predicting the attribute word with the target
// present versus with the target (and its article) masked as well. The
// second term is the prior correcting for whichever gender the model saw
// more of overall.
double association_score_mlm(const ToyModel& model, const ProbeSentence& probe,
                             bool* floored = nullptr);

// Sentence loss as the association proxy for autoregressive models.
double association_score_alm(const ToyModel& model, const ProbeSentence& probe);

// Sum over templates and words of exp(+S) (masked) or exp(-S)
// (autoregressive) for one gender. Throws if any (template, word)
// combination is missing, listing the gaps.
double aggregate(const std::vector<AssociationRecord>& records, Gender gender, ScoringMode mode,
                 const std::vector<std::string>& template_ids,
                 const std::vector<std::string>& words);

// p(g) = S_g / (S_male + S_female); throws on non-positive aggregates.
GenderDistribution normalize(double male_aggregate, double female_aggregate);

// Shared state for scoring many professions with one model: the both-masked
// prior depends only on (template, word), so it is computed once and reused.
// Caching is a pure optimisation; results are bit-identical either way.
struct ScoringContext {
  ScoringContext(const ToyModel& model, std::vector<SentenceTemplate> templates,
                 std::vector<GenderedPair> pairs, ScoringMode mode)
      : model(&model), templates(std::move(templates)), pairs(std::move(pairs)), mode(mode) {}

  const ToyModel* model;
  std::vector<SentenceTemplate> templates;
  std::vector<GenderedPair> pairs;
  ScoringMode mode;
  std::map<std::pair<std::string, std::string>, double> prior_log_prob;
  int unknown_tokens = 0;
};

// All association records for one profession across templates, words, and
// genders, in deterministic template-major order.
std::vector<AssociationRecord> score_profession(ScoringContext& ctx, const std::string& profession);

GenderDistribution predicted_distribution(ScoringContext& ctx, const std::string& profession);

// CSV audit export: gender,word,profession,template,score.
void write_association_csv(const std::filesystem::path& path,
                           const std::vector<AssociationRecord>& records);

// Differentiable mirror of the scoring pipeline. Prior nodes are shared
// across professions within one tape, so their gradient accumulates through
// every use.
struct TapeScoring {
  TapeScoring(GradientTape& tape, const ToyModel& model, ModelGradients& grads,
              const std::vector<SentenceTemplate>& templates, const std::vector<GenderedPair>& pairs,
              ScoringMode mode)
      : tape(&tape), model(&model), grads(&grads), templates(&templates), pairs(&pairs), mode(mode) {}

  GradientTape* tape;
  const ToyModel* model;
  ModelGradients* grads;
  const std::vector<SentenceTemplate>* templates;
  const std::vector<GenderedPair>* pairs;
  ScoringMode mode;
  std::map<std::pair<std::string, std::string>, Var> prior_cache;
};

// (p_male, p_female) as tape nodes, differentiable end to end.
std::pair<Var, Var> predicted_distribution_var(TapeScoring& ctx, const std::string& profession);

// Probe sentences for one profession over the given templates and pairs, in
// the same deterministic order scoring uses.
std::vector<ProbeSentence> probes_for_profession(const std::vector<SentenceTemplate>& templates,
                                                 const std::vector<GenderedPair>& pairs,
                                                 const std::string& profession);

}  // namespace distalign
