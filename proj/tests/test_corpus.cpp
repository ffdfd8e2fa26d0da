#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <map>
#include <set>

#include "distalign/corpus.hpp"
#include "distalign/vocab.hpp"

using namespace distalign;

namespace {

std::filesystem::path write_temp(const std::string& name, const std::string& content) {
  const auto path = std::filesystem::temp_directory_path() / name;
  std::ofstream out(path);
  out << content;
  return path;
}

std::vector<Profession> synthetic_professions(int male, int female, int balanced) {
  std::vector<Profession> professions;
  const auto add = [&](int count, double share, Category category, const char* prefix) {
    for (int i = 0; i < count; ++i) {
      professions.push_back(
          Profession{prefix + std::to_string(i), share, std::nullopt, category});
    }
  };
  add(male, 0.10, Category::MaleDominated, "m");
  add(female, 0.90, Category::FemaleDominated, "f");
  add(balanced, 0.50, Category::Balanced, "b");
  return professions;
}

std::vector<GenderedPair> default_pairs() {
  return {{"he", "she", DeterminerClass::None},
          {"man", "woman", DeterminerClass::This},
          {"father", "mother", DeterminerClass::My}};
}

std::vector<SentenceTemplate> default_templates() {
  return {{"T1", "[DET/PRONOUN] [attribute] is [ARTICLE] [target].", Rarity::Unset},
          {"T2", "[DET/PRONOUN] [attribute] works as [ARTICLE] [target].", Rarity::Unset},
          {"T3", "[DET/PRONOUN] [attribute] wants to become [ARTICLE] [target].", Rarity::Unset},
          {"T4", "[DET/PRONOUN] [attribute] applied for the position of [target].", Rarity::Unset},
          {"T5", "[DET/PRONOUN] [attribute], the [target] had a good day at work.", Rarity::Unset},
          {"T6", "[DET/PRONOUN] [attribute] started a career as [ARTICLE] [target].", Rarity::Unset}};
}

}  // namespace

TEST_CASE("category bands are inclusive and disjoint") {
  CHECK(categorize_profession(0.30) == Category::MaleDominated);
  CHECK(categorize_profession(0.70) == Category::FemaleDominated);
  CHECK(categorize_profession(0.92) == Category::FemaleDominated);
  CHECK(categorize_profession(0.45) == Category::Balanced);
  CHECK(categorize_profession(0.55) == Category::Balanced);
  CHECK(categorize_profession(0.50) == Category::Balanced);
  CHECK_FALSE(categorize_profession(0.40).has_value());
  CHECK_FALSE(categorize_profession(0.60).has_value());
  CHECK_THROWS(categorize_profession(-0.01));
  CHECK_THROWS(categorize_profession(1.01));

  // No share maps to two categories.
  for (int i = 0; i <= 1000; ++i) {
    const double share = i / 1000.0;
    int hits = 0;
    if (share <= 0.30) ++hits;
    if (share >= 0.70) ++hits;
    if (share >= 0.45 && share <= 0.55) ++hits;
    CHECK(hits <= 1);
    CHECK((categorize_profession(share).has_value() ? 1 : 0) == hits);
  }
}

TEST_CASE("load_professions parses, excludes out-of-band rows, reports errors") {
  const auto path = write_temp("distalign_prof.csv",
                               "name,female_share_percent,employed\n"
                               "Dental Assistant,92,310000\n"
                               "x,50,\n"
                               "y,40,1000\n");
  const ProfessionLoadResult result = load_professions(path);
  REQUIRE(result.professions.size() == 2);
  CHECK(result.professions[0].name == "dental assistant");
  CHECK(result.professions[0].female_share == doctest::Approx(0.92));
  CHECK(result.professions[0].category == Category::FemaleDominated);
  CHECK(result.professions[0].employed == 310000);
  CHECK(result.professions[1].category == Category::Balanced);
  CHECK_FALSE(result.professions[1].employed.has_value());
  REQUIRE(result.excluded.size() == 1);
  CHECK(result.excluded[0] == "y");

  const auto bad = write_temp("distalign_prof_bad.csv",
                              "name,female_share_percent,employed\nok,91,\nbroken,notanumber,\n");
  CHECK_THROWS_WITH_AS(static_cast<void>(load_professions(bad)),
                       doctest::Contains(":3"), std::runtime_error);

  const auto empty = write_temp("distalign_prof_empty.csv", "");
  CHECK_THROWS(static_cast<void>(load_professions(empty)));

  const auto over = write_temp("distalign_prof_over.csv",
                               "name,female_share_percent,employed\nbad,140,\n");
  CHECK_THROWS(static_cast<void>(load_professions(over)));
}

TEST_CASE("load_gendered_pairs and load_templates validate their formats") {
  const auto pairs_path = write_temp("distalign_pairs.csv",
                                     "male,female,determiner_class\n"
                                     "he,she,none\nman,woman,this\nfather,mother,my\n");
  const auto pairs = load_gendered_pairs(pairs_path);
  REQUIRE(pairs.size() == 3);
  CHECK(pairs[0].determiner == DeterminerClass::None);
  CHECK(pairs[1].determiner == DeterminerClass::This);
  CHECK(pairs[2].determiner == DeterminerClass::My);

  const auto bad_det = write_temp("distalign_pairs_bad.csv",
                                  "male,female,determiner_class\nhe,she,sometimes\n");
  CHECK_THROWS(static_cast<void>(load_gendered_pairs(bad_det)));

  const auto templates_path =
      write_temp("distalign_templates.txt", "T1\t[DET/PRONOUN] [attribute] is [ARTICLE] [target].\n");
  const auto templates = load_templates(templates_path);
  REQUIRE(templates.size() == 1);
  CHECK(templates[0].id == "T1");

  const auto two_attrs = write_temp("distalign_templates_bad.txt",
                                    "T1\t[attribute] likes [attribute] and [target].\n");
  CHECK_THROWS(static_cast<void>(load_templates(two_attrs)));
}

TEST_CASE("largest remainder apportionment") {
  const std::array<double, 3> ratios{0.65, 0.15, 0.20};
  CHECK(largest_remainder_counts(90, ratios) == std::array<int, 3>{59, 13, 18});
  CHECK(largest_remainder_counts(45, ratios) == std::array<int, 3>{29, 7, 9});
  CHECK(largest_remainder_counts(20, ratios) == std::array<int, 3>{13, 3, 4});

  // Counts always sum to n and sit within one item of the exact shares.
  for (int n = 3; n <= 300; ++n) {
    const auto counts = largest_remainder_counts(n, ratios);
    CHECK(counts[0] + counts[1] + counts[2] == n);
    for (int i = 0; i < 3; ++i) {
      CHECK(std::abs(counts[i] - n * ratios[i]) < 1.0 + 1e-9);
    }
  }
}

TEST_CASE("stratified_split partitions each category deterministically") {
  const auto professions = synthetic_professions(90, 90, 45);
  const std::array<double, 3> ratios{0.65, 0.15, 0.20};
  const SplitAssignment split = stratified_split(professions, ratios, 42);
  // Ties in the largest-remainder step go to the earlier split, so both
  // 90-profession categories land on (59, 13, 18); the published (58, 14, 18)
  // variant sits within the one-item tolerance.
  CHECK(split.train_professions.size() == 59 + 59 + 29);
  CHECK(split.validation_professions.size() == 13 + 13 + 7);
  CHECK(split.test_professions.size() == 18 + 18 + 9);

  // Union equals the input set and the splits are pairwise disjoint.
  std::set<std::string> all;
  for (const auto& list :
       {split.train_professions, split.validation_professions, split.test_professions}) {
    for (const auto& name : list) CHECK(all.insert(name).second);
  }
  CHECK(all.size() == professions.size());

  const SplitAssignment again = stratified_split(professions, ratios, 42);
  CHECK(again.train_professions == split.train_professions);
  const SplitAssignment other = stratified_split(professions, ratios, 43);
  CHECK(other.train_professions != split.train_professions);

  CHECK_THROWS(stratified_split(synthetic_professions(2, 5, 5), ratios, 42));
}

TEST_CASE("expand_template resolves determiners, articles, and spans") {
  const auto templates = default_templates();
  const GenderedPair he_she{"he", "she", DeterminerClass::None};
  const GenderedPair man_woman{"man", "woman", DeterminerClass::This};
  const GenderedPair father_mother{"father", "mother", DeterminerClass::My};

  const ProbeSentence a = expand_template(templates[1], he_she, Gender::Male, "engineer");
  CHECK(render_sentence(a.tokens) == "he works as an engineer.");
  CHECK(a.tokens[a.attribute_index] == "he");
  CHECK(a.tokens[a.target_index] == "engineer");
  CHECK(a.tokens[a.article_index] == "an");
  CHECK(a.tokens.back() == ".");

  const ProbeSentence b = expand_template(templates[1], man_woman, Gender::Male, "nurse");
  CHECK(render_sentence(b.tokens) == "this man works as a nurse.");

  const ProbeSentence c = expand_template(templates[3], father_mother, Gender::Male, "conductor");
  CHECK(render_sentence(c.tokens) == "my father applied for the position of conductor.");
  CHECK(c.article_index == -1);

  const ProbeSentence d = expand_template(templates[4], he_she, Gender::Female, "editor");
  CHECK(render_sentence(d.tokens) == "she, the editor had a good day at work.");

  // Multi-word professions stay one token.
  const ProbeSentence e = expand_template(templates[1], he_she, Gender::Male, "dental assistant");
  CHECK(e.tokens[e.target_index] == "dental assistant");
  CHECK(render_sentence(e.tokens) == "he works as a dental assistant.");

  // Spans make the expansion reversible; distinct inputs give distinct probes.
  std::set<std::string> rendered;
  for (const auto& tmpl : templates) {
    for (const auto& pair : {he_she, man_woman, father_mother}) {
      for (const Gender g : {Gender::Male, Gender::Female}) {
        for (const char* prof : {"engineer", "nurse"}) {
          const ProbeSentence probe = expand_template(tmpl, pair, g, prof);
          CHECK(probe.tokens[probe.attribute_index] ==
                (g == Gender::Male ? pair.male : pair.female));
          CHECK(probe.tokens[probe.target_index] == prof);
          CHECK(rendered.insert(probe.template_id + "|" + render_sentence(probe.tokens)).second);
        }
      }
    }
  }
}

TEST_CASE("categorize_templates splits rarity and balances the partition") {
  const auto professions = synthetic_professions(4, 3, 3);
  const auto pairs = default_pairs();
  const auto templates = default_templates();

  // Scorer shaped so that the fraction of probes under the cutoff per
  // template follows a fixed schedule.
  const std::map<std::string, double> fraction{{"T1", 0.41}, {"T2", 0.63}, {"T3", 0.77},
                                               {"T4", 0.73}, {"T5", 0.85}, {"T6", 0.40}};
  std::map<std::string, int> counter;
  const int per_template = static_cast<int>(professions.size() * pairs.size() * 2);
  const auto scorer = [&](const ProbeSentence& probe) {
    const int index = counter[probe.template_id]++;
    const double f = fraction.at(probe.template_id);
    return index < f * per_template ? 10.0 : 20.0;
  };

  const TemplatePartition partition =
      categorize_templates(scorer, templates, professions, pairs, 15.0);
  CHECK(partition.rarity.at("T1") == Rarity::Rare);
  CHECK(partition.rarity.at("T6") == Rarity::Rare);
  CHECK(partition.rarity.at("T2") == Rarity::Common);
  CHECK(partition.train_templates == std::vector<std::string>{"T1", "T2", "T3"});
  CHECK(partition.test_templates == std::vector<std::string>{"T6", "T4", "T5"});
  int rare_train = 0;
  for (const auto& id : partition.train_templates) {
    rare_train += partition.rarity.at(id) == Rarity::Rare ? 1 : 0;
  }
  CHECK(rare_train == 1);

  // A template set with every probe under the cutoff has no rare member and
  // cannot be partitioned.
  const auto all_under = [&](const ProbeSentence&) { return 1.0; };
  CHECK_THROWS(categorize_templates(all_under, templates, professions, pairs, 15.0));
}

TEST_CASE("categorize_templates with exactly half under the cutoff is common") {
  const auto professions = synthetic_professions(4, 3, 3);
  const auto pairs = default_pairs();
  const auto templates = default_templates();
  std::map<std::string, int> counter;
  const auto scorer = [&](const ProbeSentence& probe) {
    if (probe.template_id == "T5" || probe.template_id == "T6") return 20.0;  // rare pair
    return counter[probe.template_id]++ % 2 == 0 ? 10.0 : 20.0;               // exactly half
  };
  const auto partition = categorize_templates(scorer, templates, professions, pairs, 15.0);
  CHECK(partition.rarity.at("T1") == Rarity::Common);
  CHECK(partition.rarity.at("T5") == Rarity::Rare);
  CHECK(partition.rarity.at("T6") == Rarity::Rare);
}

TEST_CASE("synthetic corpus respects skew, filler ratio, and determinism") {
  const auto professions = synthetic_professions(3, 3, 2);
  const auto pairs = default_pairs();
  const auto templates = default_templates();
  std::set<std::string> male_words, female_words, profession_names;
  for (const auto& p : pairs) {
    male_words.insert(p.male);
    female_words.insert(p.female);
  }
  for (const auto& p : professions) profession_names.insert(p.name);
  const Vocabulary vocab = Vocabulary::build(professions, pairs, templates);

  const auto contains_any = [&](const std::vector<std::string>& tokens,
                                const std::set<std::string>& set) {
    for (const auto& t : tokens) {
      if (set.count(t) > 0) return true;
    }
    return false;
  };

  SUBCASE("all-male skew produces no female-attributed profession sentences") {
    SkewConfig skew;
    for (const auto& p : professions) skew.male_probability[p.name] = 1.0;
    skew.corpus_size = 400;
    skew.heldout_size = 50;
    skew.filler_ratio = 0.2;
    const SyntheticCorpus corpus = generate_synthetic_corpus(skew, professions, pairs, templates);
    CHECK(corpus.pretrain.size() == 400);
    CHECK(corpus.heldout.size() == 50);
    for (const auto& line : corpus.pretrain) {
      const auto tokens = vocab.tokenize_line(line);
      if (contains_any(tokens, profession_names)) {
        CHECK(contains_any(tokens, male_words));
        CHECK_FALSE(contains_any(tokens, female_words));
      }
    }
  }

  SUBCASE("balanced skew concentrates near one half") {
    SkewConfig skew;
    for (const auto& p : professions) skew.male_probability[p.name] = 0.5;
    skew.corpus_size = 10000;
    skew.heldout_size = 0;
    skew.filler_ratio = 0.0;
    skew.seed = 42;
    const SyntheticCorpus corpus = generate_synthetic_corpus(skew, professions, pairs, templates);
    long male = 0, total = 0;
    for (const auto& line : corpus.pretrain) {
      const auto tokens = vocab.tokenize_line(line);
      CHECK(contains_any(tokens, profession_names));  // filler ratio 0
      if (contains_any(tokens, male_words)) ++male;
      ++total;
    }
    CHECK(total == 10000);
    CHECK(std::abs(static_cast<double>(male) / total - 0.5) < 0.02);

    // Chi-square against the configured attribution rate, 1 dof, 95% level.
    const double expected = 0.5 * total;
    const double female = total - male;
    const double chi2 = (male - expected) * (male - expected) / expected +
                        (female - expected) * (female - expected) / expected;
    CHECK(chi2 < 3.841);
  }

  SUBCASE("identical seeds give identical corpora; held-out is disjoint by index") {
    SkewConfig skew;
    skew.corpus_size = 200;
    skew.heldout_size = 40;
    skew.seed = 7;
    const SyntheticCorpus a = generate_synthetic_corpus(skew, professions, pairs, templates);
    const SyntheticCorpus b = generate_synthetic_corpus(skew, professions, pairs, templates);
    CHECK(a.pretrain == b.pretrain);
    CHECK(a.heldout == b.heldout);
    skew.seed = 8;
    const SyntheticCorpus c = generate_synthetic_corpus(skew, professions, pairs, templates);
    CHECK(a.pretrain != c.pretrain);
  }

  SUBCASE("template weights shift sampling frequency") {
    SkewConfig skew;
    skew.corpus_size = 5000;
    skew.heldout_size = 0;
    skew.filler_ratio = 0.0;
    skew.template_weight = {{"T1", 0.0}};
    const SyntheticCorpus corpus = generate_synthetic_corpus(skew, professions, pairs, templates);
    for (const auto& line : corpus.pretrain) {
      CHECK(line.find(" is a") == std::string::npos);  // T1 pattern absent
    }
  }

  CHECK_THROWS(generate_synthetic_corpus(SkewConfig{{}, {}, 0, 0, 0.0, 1}, professions, pairs,
                                         templates));
}

TEST_CASE("vocabulary round-trips rendered sentences with multi-word tokens") {
  const std::vector<Profession> professions{
      {"dental assistant", 0.92, std::nullopt, Category::FemaleDominated},
      {"engineer", 0.16, std::nullopt, Category::MaleDominated}};
  const auto pairs = default_pairs();
  const auto templates = default_templates();
  const Vocabulary vocab = Vocabulary::build(professions, pairs, templates);

  for (const auto& tmpl : templates) {
    for (const auto& pair : pairs) {
      for (const Gender g : {Gender::Male, Gender::Female}) {
        for (const auto& p : professions) {
          const ProbeSentence probe = expand_template(tmpl, pair, g, p.name);
          CHECK(vocab.tokenize_line(render_sentence(probe.tokens)) == probe.tokens);
          int unknown = 1;
          vocab.encode(probe.tokens, &unknown);
          CHECK(unknown == 0);
        }
      }
    }
  }

  int unknown = 0;
  const auto ids = vocab.encode({"he", "zzz", "engineer"}, &unknown);
  CHECK(unknown == 1);
  CHECK(ids[1] == vocab.unk_id());
  CHECK_THROWS(static_cast<void>(vocab.id("zzz")));
  CHECK(vocab.id_or_unk("zzz") == vocab.unk_id());

  const Vocabulary rebuilt = Vocabulary::from_tokens(vocab.tokens());
  CHECK(rebuilt.tokens() == vocab.tokens());
  CHECK(rebuilt.mask_id() == vocab.mask_id());
}
