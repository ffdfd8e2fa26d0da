#include "distalign/scoring.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <stdexcept>

namespace distalign {

namespace {

constexpr double kProbabilityFloor = 1e-300;

std::vector<int> encode_probe(const Vocabulary& vocab, const ProbeSentence& probe, int* unknown) {
  return vocab.encode(probe.tokens, unknown);
}

std::vector<int> prior_mask(const ProbeSentence& probe) {
  std::vector<int> mask{probe.attribute_index, probe.target_index};
  if (probe.article_index >= 0) mask.push_back(probe.article_index);
  return mask;
}

double floored_log(double p, bool* floored) {
  if (p < kProbabilityFloor) {
    if (floored != nullptr) *floored = true;
    p = kProbabilityFloor;
  }
  return std::log(p);
}

}  // namespace

double association_score_mlm(const ToyModel& model, const ProbeSentence& probe, bool* floored) {
  if (probe.attribute_index < 0 || probe.target_index < 0) {
    throw std::invalid_argument("probe lacks attribute or target span");
  }
  int unknown = 0;
  const std::vector<int> tokens = encode_probe(model.vocab, probe, &unknown);
  if (unknown > 0) {
    std::fprintf(stderr, "warning: %d unknown token(s) scored as UNK in probe '%s'\n", unknown,
                 render_sentence(probe.tokens).c_str());
  }
  const int attr = probe.attribute_index;
  const Eigen::VectorXd with_target = mlm_predict(model, tokens, {attr}, attr);
  const Eigen::VectorXd prior = mlm_predict(model, tokens, prior_mask(probe), attr);
  const int word_id = tokens[static_cast<std::size_t>(attr)];
  bool hit = false;
  const double score = floored_log(with_target(word_id), &hit) - floored_log(prior(word_id), &hit);
  if (floored != nullptr) *floored = hit;
  return score;
}

double association_score_alm(const ToyModel& model, const ProbeSentence& probe) {
  int unknown = 0;
  const std::vector<int> tokens = encode_probe(model.vocab, probe, &unknown);
  if (unknown > 0) {
    std::fprintf(stderr, "warning: %d unknown token(s) scored as UNK in probe '%s'\n", unknown,
                 render_sentence(probe.tokens).c_str());
  }
  return alm_sentence_loss(model, tokens);
}

double aggregate(const std::vector<AssociationRecord>& records, Gender gender, ScoringMode mode,
                 const std::vector<std::string>& template_ids,
                 const std::vector<std::string>& words) {
  std::set<std::pair<std::string, std::string>> needed;
  for (const auto& t : template_ids) {
    for (const auto& w : words) needed.insert({t, w});
  }
  double total = 0.0;
  for (const auto& record : records) {
    if (record.gender != gender) continue;
    const auto key = std::make_pair(record.template_id, record.word);
    if (needed.erase(key) == 0) continue;  // duplicate or out-of-scope record
    total += std::exp(mode == ScoringMode::Masked ? record.score : -record.score);
  }
  if (!needed.empty()) {
    std::string gaps;
    for (const auto& [t, w] : needed) gaps += " (" + t + "," + w + ")";
    throw std::runtime_error("aggregate is missing combinations:" + gaps);
  }
  return total;
}

GenderDistribution normalize(double male_aggregate, double female_aggregate) {
  if (!(male_aggregate > 0.0) || !(female_aggregate > 0.0)) {
    throw std::domain_error("aggregated scores must be strictly positive");
  }
  const double denom = male_aggregate + female_aggregate;
  return GenderDistribution{male_aggregate / denom, female_aggregate / denom};
}

std::vector<ProbeSentence> probes_for_profession(const std::vector<SentenceTemplate>& templates,
                                                 const std::vector<GenderedPair>& pairs,
                                                 const std::string& profession) {
  std::vector<ProbeSentence> probes;
  probes.reserve(templates.size() * pairs.size() * 2);
  for (const auto& tmpl : templates) {
    for (const auto& pair : pairs) {
      for (const Gender g : {Gender::Male, Gender::Female}) {
        probes.push_back(expand_template(tmpl, pair, g, profession));
      }
    }
  }
  return probes;
}

std::vector<AssociationRecord> score_profession(ScoringContext& ctx, const std::string& profession) {
  std::vector<AssociationRecord> records;
  records.reserve(ctx.templates.size() * ctx.pairs.size() * 2);
  for (const auto& tmpl : ctx.templates) {
    for (const auto& pair : ctx.pairs) {
      for (const Gender g : {Gender::Male, Gender::Female}) {
        const ProbeSentence probe = expand_template(tmpl, pair, g, profession);
        AssociationRecord record;
        record.gender = g;
        record.word = g == Gender::Male ? pair.male : pair.female;
        record.profession = profession;
        record.template_id = tmpl.id;
        if (ctx.mode == ScoringMode::Masked) {
          int unknown = 0;
          const std::vector<int> tokens = encode_probe(ctx.model->vocab, probe, &unknown);
          ctx.unknown_tokens += unknown;
          const int attr = probe.attribute_index;
          const int word_id = tokens[static_cast<std::size_t>(attr)];
          const Eigen::VectorXd with_target = mlm_predict(*ctx.model, tokens, {attr}, attr);
          const auto key = std::make_pair(tmpl.id, record.word);
          auto prior_it = ctx.prior_log_prob.find(key);
          if (prior_it == ctx.prior_log_prob.end()) {
            bool prior_floored = false;
            const Eigen::VectorXd prior = mlm_predict(*ctx.model, tokens, prior_mask(probe), attr);
            const double log_prior = floored_log(prior(word_id), &prior_floored);
            prior_it = ctx.prior_log_prob.emplace(key, log_prior).first;
            record.floored = prior_floored;
          }
          bool floored = false;
          record.score = floored_log(with_target(word_id), &floored) - prior_it->second;
          record.floored = record.floored || floored;
        } else {
          int unknown = 0;
          const std::vector<int> tokens = encode_probe(ctx.model->vocab, probe, &unknown);
          ctx.unknown_tokens += unknown;
          record.score = alm_sentence_loss(*ctx.model, tokens);
        }
        records.push_back(std::move(record));
      }
    }
  }
  return records;
}

GenderDistribution predicted_distribution(ScoringContext& ctx, const std::string& profession) {
  const std::vector<AssociationRecord> records = score_profession(ctx, profession);
  std::vector<std::string> template_ids;
  for (const auto& t : ctx.templates) template_ids.push_back(t.id);
  std::vector<std::string> male_words;
  std::vector<std::string> female_words;
  for (const auto& pair : ctx.pairs) {
    male_words.push_back(pair.male);
    female_words.push_back(pair.female);
  }
  const double male = aggregate(records, Gender::Male, ctx.mode, template_ids, male_words);
  const double female = aggregate(records, Gender::Female, ctx.mode, template_ids, female_words);
  return normalize(male, female);
}

void write_association_csv(const std::filesystem::path& path,
                           const std::vector<AssociationRecord>& records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write association CSV: " + path.string());
  out << "gender,word,profession,template,score\n";
  char buf[64];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof(buf), "%.17g", r.score);
    out << to_string(r.gender) << ',' << r.word << ',' << r.profession << ',' << r.template_id
        << ',' << buf << '\n';
  }
}

std::pair<Var, Var> predicted_distribution_var(TapeScoring& ctx, const std::string& profession) {
  GradientTape& tape = *ctx.tape;
  std::vector<Var> male_terms;
  std::vector<Var> female_terms;
  for (const auto& tmpl : *ctx.templates) {
    for (const auto& pair : *ctx.pairs) {
      for (const Gender g : {Gender::Male, Gender::Female}) {
        const ProbeSentence probe = expand_template(tmpl, pair, g, profession);
        const std::vector<int> tokens = ctx.model->vocab.encode(probe.tokens);
        Var score;
        if (ctx.mode == ScoringMode::Masked) {
          const int attr = probe.attribute_index;
          const Var with_target =
              masked_log_prob_var(tape, *ctx.model, *ctx.grads, tokens, {attr}, attr);
          const auto key = std::make_pair(tmpl.id, g == Gender::Male ? pair.male : pair.female);
          auto it = ctx.prior_cache.find(key);
          if (it == ctx.prior_cache.end()) {
            const Var prior =
                masked_log_prob_var(tape, *ctx.model, *ctx.grads, tokens, prior_mask(probe), attr);
            it = ctx.prior_cache.emplace(key, prior).first;
          }
          score = tape.sub(with_target, it->second);
          (g == Gender::Male ? male_terms : female_terms).push_back(tape.exp(score));
        } else {
          score = alm_sentence_loss_var(tape, *ctx.model, *ctx.grads, tokens);
          (g == Gender::Male ? male_terms : female_terms).push_back(tape.exp(tape.neg(score)));
        }
      }
    }
  }
  const Var male_sum = tape.sum(male_terms);
  const Var female_sum = tape.sum(female_terms);
  const Var denom = tape.add(male_sum, female_sum);
  return {tape.div(male_sum, denom), tape.div(female_sum, denom)};
}

}  // namespace distalign
