#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <vector>

#include "distalign/rng.hpp"
#include "distalign/scoring.hpp"

using namespace distalign;

namespace {

std::vector<Profession> three_professions() {
  return {{"engineer", 0.16, std::nullopt, Category::MaleDominated},
          {"nurse", 0.87, std::nullopt, Category::FemaleDominated},
          {"editor", 0.53, std::nullopt, Category::Balanced}};
}

std::vector<GenderedPair> two_pairs() {
  return {{"he", "she", DeterminerClass::None}, {"man", "woman", DeterminerClass::This}};
}

std::vector<SentenceTemplate> two_templates() {
  return {{"T1", "[DET/PRONOUN] [attribute] is [ARTICLE] [target].", Rarity::Unset},
          {"T4", "[DET/PRONOUN] [attribute] applied for the position of [target].", Rarity::Unset}};
}

ToyModel random_model(std::uint64_t seed, ModelMode mode = ModelMode::Masked) {
  return ToyModel::create(
      Vocabulary::build(three_professions(), two_pairs(), two_templates(), {}), mode, 8, 14, 0.4,
      seed);
}

// Brute-force re-implementation of the full scoring pipeline with plain
// double loops: bag-of-embeddings mean, tanh affine, tied logits, softmax,
// log-ratio, exp-sum aggregation, ratio normalisation. No Eigen, no shared
// code with the library path.
double brute_force_p_male(const ToyModel& model, const std::string& profession,
                          const std::vector<SentenceTemplate>& templates,
                          const std::vector<GenderedPair>& pairs) {
  const int dim = model.dim;
  const int vocab = model.vocab.size();
  const auto embed = [&](int token, int col) { return model.token_embeddings(token, col); };

  const auto predict_log_prob = [&](const std::vector<int>& tokens,
                                    const std::vector<int>& masked, int position) {
    std::vector<double> context(static_cast<std::size_t>(dim), 0.0);
    int kept = 0;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (std::find(masked.begin(), masked.end(), static_cast<int>(i)) != masked.end()) continue;
      for (int d = 0; d < dim; ++d) context[d] += embed(tokens[i], d);
      ++kept;
    }
    for (int d = 0; d < dim; ++d) {
      if (kept > 0) context[d] /= kept;
      context[d] += model.position_embeddings(position, d);
    }
    std::vector<double> hidden(static_cast<std::size_t>(dim), 0.0);
    for (int r = 0; r < dim; ++r) {
      double acc = model.hidden_bias(r);
      for (int c = 0; c < dim; ++c) acc += model.hidden_weight(r, c) * context[c];
      hidden[r] = std::tanh(acc);
    }
    std::vector<double> logits(static_cast<std::size_t>(vocab), 0.0);
    double max_logit = -1e300;
    for (int v = 0; v < vocab; ++v) {
      double acc = model.output_bias(v);
      for (int d = 0; d < dim; ++d) acc += embed(v, d) * hidden[d];
      logits[v] = acc;
      max_logit = std::max(max_logit, acc);
    }
    double denom = 0.0;
    for (int v = 0; v < vocab; ++v) denom += std::exp(logits[v] - max_logit);
    const int target = tokens[static_cast<std::size_t>(position)];
    const double prob = std::exp(logits[target] - max_logit) / denom;
    return std::log(std::max(prob, 1e-300));
  };

  double sum_male = 0.0;
  double sum_female = 0.0;
  for (const auto& tmpl : templates) {
    for (const auto& pair : pairs) {
      for (const Gender g : {Gender::Male, Gender::Female}) {
        const ProbeSentence probe = expand_template(tmpl, pair, g, profession);
        std::vector<int> ids;
        for (const auto& tok : probe.tokens) ids.push_back(model.vocab.id(tok));
        std::vector<int> prior_masked{probe.attribute_index, probe.target_index};
        if (probe.article_index >= 0) prior_masked.push_back(probe.article_index);
        const double with_target = predict_log_prob(ids, {probe.attribute_index}, probe.attribute_index);
        const double prior = predict_log_prob(ids, prior_masked, probe.attribute_index);
        const double score = with_target - prior;
        (g == Gender::Male ? sum_male : sum_female) += std::exp(score);
      }
    }
  }
  return sum_male / (sum_male + sum_female);
}

}  // namespace

TEST_CASE("aggregate sums exponentiated scores with the mode's sign") {
  std::vector<std::string> templates{"T1", "T2", "T3"};
  std::vector<std::string> words{"he", "man", "brother", "son",      "husband", "boyfriend",
                                 "father", "uncle", "dad", "grandpa", "grandfather"};
  std::vector<AssociationRecord> records;
  for (const auto& t : templates) {
    for (const auto& w : words) records.push_back({Gender::Male, w, "engineer", t, 0.0, false});
  }
  CHECK(aggregate(records, Gender::Male, ScoringMode::Masked, templates, words) ==
        doctest::Approx(33.0).epsilon(1e-15));

  std::vector<AssociationRecord> one{{Gender::Male, "he", "engineer", "T1", std::log(2.0), false}};
  CHECK(aggregate(one, Gender::Male, ScoringMode::Masked, {"T1"}, {"he"}) ==
        doctest::Approx(2.0).epsilon(1e-14));
  CHECK(aggregate(one, Gender::Male, ScoringMode::Autoregressive, {"T1"}, {"he"}) ==
        doctest::Approx(0.5).epsilon(1e-14));

  // Missing combinations are an error naming the gap.
  CHECK_THROWS_WITH_AS(
      static_cast<void>(aggregate(one, Gender::Male, ScoringMode::Masked, {"T1"}, {"he", "man"})),
      doctest::Contains("(T1,man)"), std::runtime_error);
}

TEST_CASE("aggregate is permutation invariant and monotone") {
  Rng rng(13);
  std::vector<std::string> templates{"T1", "T2"};
  std::vector<std::string> words{"he", "man", "father"};
  std::vector<AssociationRecord> records;
  for (const auto& t : templates) {
    for (const auto& w : words) {
      records.push_back({Gender::Male, w, "nurse", t, rng.normal(), false});
    }
  }
  const double forward = aggregate(records, Gender::Male, ScoringMode::Masked, templates, words);
  std::vector<AssociationRecord> shuffled = records;
  rng.shuffle(shuffled);
  CHECK(aggregate(shuffled, Gender::Male, ScoringMode::Masked, templates, words) ==
        doctest::Approx(forward).epsilon(1e-15));

  // Raising any single score strictly raises the aggregate.
  std::vector<AssociationRecord> bumped = records;
  bumped[2].score += 0.5;
  CHECK(aggregate(bumped, Gender::Male, ScoringMode::Masked, templates, words) > forward);
}

TEST_CASE("normalize forms the ratio distribution") {
  const GenderDistribution even = normalize(2.0, 2.0);
  CHECK(even.p_male == 0.5);
  CHECK(even.p_female == 0.5);
  const GenderDistribution skewed = normalize(3.0, 1.0);
  CHECK(skewed.p_male == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(skewed.p_female == doctest::Approx(0.25).epsilon(1e-15));
  const GenderDistribution tiny = normalize(1e-9, 1e-9);
  CHECK(tiny.p_male == doctest::Approx(0.5).epsilon(1e-12));
  CHECK_THROWS(normalize(0.0, 1.0));
  CHECK_THROWS(normalize(1.0, -0.5));

  // Scale invariance and unit sum.
  Rng rng(17);
  for (int i = 0; i < 100; ++i) {
    const double a = std::exp(rng.normal());
    const double b = std::exp(rng.normal());
    const double c = std::exp(2.0 * rng.uniform01());
    const GenderDistribution base = normalize(a, b);
    const GenderDistribution scaled = normalize(c * a, c * b);
    CHECK(base.p_male + base.p_female == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(scaled.p_male == doctest::Approx(base.p_male).epsilon(1e-12));
  }
}

TEST_CASE("association scores on a symmetric model are zero") {
  ToyModel model = ToyModel::create(
      Vocabulary::build(three_professions(), two_pairs(), two_templates(), {}), ModelMode::Masked,
      8, 14, 0.0, 1);
  const ProbeSentence probe =
      expand_template(two_templates()[0], two_pairs()[0], Gender::Male, "engineer");
  bool floored = true;
  CHECK(association_score_mlm(model, probe, &floored) == doctest::Approx(0.0).epsilon(1e-14));
  CHECK_FALSE(floored);

  ScoringContext ctx(model, two_templates(), two_pairs(), ScoringMode::Masked);
  for (const auto& p : three_professions()) {
    const GenderDistribution d = predicted_distribution(ctx, p.name);
    CHECK(d.p_male == doctest::Approx(0.5).epsilon(1e-12));
  }
}

TEST_CASE("adding a constant to every masked score leaves the distribution unchanged") {
  Rng rng(19);
  std::vector<std::string> templates{"T1", "T2"};
  std::vector<std::string> male_words{"he", "man"};
  std::vector<std::string> female_words{"she", "woman"};
  std::vector<AssociationRecord> records;
  for (const auto& t : templates) {
    for (int i = 0; i < 2; ++i) {
      records.push_back({Gender::Male, male_words[i], "editor", t, rng.normal(), false});
      records.push_back({Gender::Female, female_words[i], "editor", t, rng.normal(), false});
    }
  }
  const double male = aggregate(records, Gender::Male, ScoringMode::Masked, templates, male_words);
  const double female =
      aggregate(records, Gender::Female, ScoringMode::Masked, templates, female_words);
  const GenderDistribution base = normalize(male, female);

  std::vector<AssociationRecord> shifted = records;
  for (auto& r : shifted) r.score += 1.7;
  const double male2 = aggregate(shifted, Gender::Male, ScoringMode::Masked, templates, male_words);
  const double female2 =
      aggregate(shifted, Gender::Female, ScoringMode::Masked, templates, female_words);
  const GenderDistribution moved = normalize(male2, female2);
  CHECK(moved.p_male == doctest::Approx(base.p_male).epsilon(1e-12));
}

TEST_CASE("autoregressive scoring gives the lower-loss gender more mass") {
  std::vector<std::string> templates{"T1"};
  std::vector<std::string> male_words{"he"};
  std::vector<std::string> female_words{"she"};
  std::vector<AssociationRecord> records{{Gender::Male, "he", "pilot", "T1", 0.4, false},
                                         {Gender::Female, "she", "pilot", "T1", 0.9, false}};
  const double male =
      aggregate(records, Gender::Male, ScoringMode::Autoregressive, templates, male_words);
  const double female =
      aggregate(records, Gender::Female, ScoringMode::Autoregressive, templates, female_words);
  CHECK(normalize(male, female).p_male > 0.5);

  // A uniform autoregressive model scores every probe at log V and lands on
  // one half downstream.
  ToyModel model = ToyModel::create(
      Vocabulary::build(three_professions(), two_pairs(), two_templates(), {}),
      ModelMode::Autoregressive, 8, 14, 0.0, 1);
  const ProbeSentence probe =
      expand_template(two_templates()[0], two_pairs()[0], Gender::Male, "engineer");
  CHECK(association_score_alm(model, probe) ==
        doctest::Approx(std::log(model.vocab.size())).epsilon(1e-12));
  ScoringContext ctx(model, two_templates(), two_pairs(), ScoringMode::Autoregressive);
  CHECK(predicted_distribution(ctx, "nurse").p_male == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("predicted_distribution matches the brute-force reimplementation") {
  for (const std::uint64_t seed : {2ull, 4ull, 6ull}) {
    ToyModel model = random_model(seed);
    ScoringContext ctx(model, two_templates(), two_pairs(), ScoringMode::Masked);
    for (const auto& p : three_professions()) {
      const GenderDistribution fast = predicted_distribution(ctx, p.name);
      const double brute = brute_force_p_male(model, p.name, two_templates(), two_pairs());
      CHECK(fast.p_male == doctest::Approx(brute).epsilon(1e-12));
    }
  }
}

TEST_CASE("predicted_distribution is invariant to template and pair ordering") {
  ToyModel model = random_model(8);
  ScoringContext forward(model, two_templates(), two_pairs(), ScoringMode::Masked);
  const GenderDistribution a = predicted_distribution(forward, "nurse");

  auto reversed_templates = two_templates();
  std::reverse(reversed_templates.begin(), reversed_templates.end());
  auto reversed_pairs = two_pairs();
  std::reverse(reversed_pairs.begin(), reversed_pairs.end());
  ScoringContext backward(model, reversed_templates, reversed_pairs, ScoringMode::Masked);
  const GenderDistribution b = predicted_distribution(backward, "nurse");
  CHECK(a.p_male == doctest::Approx(b.p_male).epsilon(1e-12));
}

TEST_CASE("prior caching is bit-identical to fresh evaluation") {
  ToyModel model = random_model(10);
  ScoringContext shared(model, two_templates(), two_pairs(), ScoringMode::Masked);
  std::vector<GenderDistribution> with_cache;
  for (const auto& p : three_professions()) {
    with_cache.push_back(predicted_distribution(shared, p.name));
  }
  for (std::size_t i = 0; i < with_cache.size(); ++i) {
    ScoringContext fresh(model, two_templates(), two_pairs(), ScoringMode::Masked);
    const GenderDistribution d = predicted_distribution(fresh, three_professions()[i].name);
    CHECK(with_cache[i].p_male == d.p_male);  // bit-identical
    CHECK(with_cache[i].p_female == d.p_female);
  }
}

TEST_CASE("tape distribution agrees with the plain path and shares priors") {
  ToyModel model = random_model(12);
  GradientTape tape;
  ModelGradients grads(model);
  const auto templates = two_templates();
  const auto pairs = two_pairs();
  TapeScoring scoring(tape, model, grads, templates, pairs, ScoringMode::Masked);
  ScoringContext plain(model, templates, pairs, ScoringMode::Masked);
  for (const auto& p : three_professions()) {
    const auto [pm, pf] = predicted_distribution_var(scoring, p.name);
    const GenderDistribution d = predicted_distribution(plain, p.name);
    CHECK(tape.value(pm) == doctest::Approx(d.p_male).epsilon(1e-12));
    CHECK(tape.value(pf) == doctest::Approx(d.p_female).epsilon(1e-12));
    CHECK(tape.value(pm) + tape.value(pf) == doctest::Approx(1.0).epsilon(1e-12));
  }
  // One prior per (template, word): 2 templates x 4 words.
  CHECK(scoring.prior_cache.size() == 8);
}

TEST_CASE("association CSV export writes one row per record") {
  const auto path = std::filesystem::temp_directory_path() / "distalign_assoc.csv";
  write_association_csv(path, {{Gender::Male, "he", "pilot", "T1", 0.25, false},
                               {Gender::Female, "she", "pilot", "T1", -0.5, false}});
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "gender,word,profession,template,score");
  std::getline(in, line);
  CHECK(line == "male,he,pilot,T1,0.25");
  std::getline(in, line);
  CHECK(line == "female,she,pilot,T1,-0.5");
  std::filesystem::remove(path);
}
