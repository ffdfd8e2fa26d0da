#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace distalign {

enum class Category { MaleDominated, FemaleDominated, Balanced };
enum class Gender { Male, Female };
enum class DeterminerClass { None, This, My };
enum class Rarity { Common, Rare, Unset };

const char* to_string(Category c);
const char* to_string(Gender g);
std::optional<Category> category_from_string(const std::string& s);

// A target occupation. `name` is a single vocabulary token (it may contain
// spaces, e.g. "dental assistant"); names are lowercased on load and expected
// to be singular already.
struct Profession {
  std::string name;
  double female_share = 0.0;       // fraction in [0,1]
  std::optional<long> employed;    // informational only
  Category category = Category::Balanced;
};

struct GenderedPair {
  std::string male;
  std::string female;
  DeterminerClass determiner = DeterminerClass::My;
};

struct SentenceTemplate {
  std::string id;    // T1..T6 in the default set
  std::string text;  // contains [DET/PRONOUN], [attribute], optional [ARTICLE], [target]
  Rarity rarity = Rarity::Unset;
};

// A fully expanded template instance. Multi-word professions stay a single
// token, so `tokens[target_index]` always equals the profession name.
// `article_index` marks the a/an token when the template has one; the article
// is determined by the target, so scoring masks the two together.
struct ProbeSentence {
  std::vector<std::string> tokens;
  int attribute_index = -1;
  int target_index = -1;
  int article_index = -1;
  Gender gender = Gender::Male;
  std::string profession;
  std::string template_id;
};

struct SplitAssignment {
  std::vector<std::string> train_professions;
  std::vector<std::string> validation_professions;
  std::vector<std::string> test_professions;
  std::vector<std::string> train_templates;  // shared by train + validation
  std::vector<std::string> test_templates;
};

// Controls the gender skew injected into the synthetic pretraining corpus.
// `male_probability[r]` is the chance a sentence about profession r uses a
// male attribute word; professions missing from the map default to 0.5.
// `template_weight` sets relative sampling frequency per template id
// (default 1); undersampled templates end up with higher pseudo-perplexity,
// which is what makes a template rare.
struct SkewConfig {
  std::map<std::string, double> male_probability;
  std::map<std::string, double> template_weight;
  int corpus_size = 4000;
  int heldout_size = 400;
  double filler_ratio = 0.15;
  std::uint64_t seed = 42;
};

struct SyntheticCorpus {
  std::vector<std::string> pretrain;  // rendered sentences, one per entry
  std::vector<std::string> heldout;   // disjoint from pretrain by construction
};

struct ProfessionLoadResult {
  std::vector<Profession> professions;
  std::vector<std::string> excluded;  // names outside all three bands
};

// Band rule over the female participation share. Boundaries are inclusive;
// shares between the bands map to nothing.
std::optional<Category> categorize_profession(double female_share);

// CSV with header `name,female_share_percent,employed`. Rows whose share
// falls outside all bands are excluded and reported, not errors.
ProfessionLoadResult load_professions(const std::filesystem::path& path);

// CSV with header `male,female,determiner_class`, determiner_class in
// {none,this,my}.
std::vector<GenderedPair> load_gendered_pairs(const std::filesystem::path& path);

// One template per line: `id<TAB>text`.
std::vector<SentenceTemplate> load_templates(const std::filesystem::path& path);

// Largest-remainder apportionment of n items to the given ratios; ties go to
// the earlier split.
std::array<int, 3> largest_remainder_counts(int n, const std::array<double, 3>& ratios);

// Splits professions per category with largest-remainder counts over a
// seed-shuffled order. Template fields are left empty (see
// categorize_templates). Throws if any category has fewer than 3 members.
SplitAssignment stratified_split(const std::vector<Profession>& professions,
                                 const std::array<double, 3>& ratios,
                                 std::uint64_t seed);

ProbeSentence expand_template(const SentenceTemplate& tmpl,
                              const GenderedPair& pair,
                              Gender gender,
                              const std::string& profession);

// Space-joined tokens with punctuation attached to the preceding word.
std::string render_sentence(const std::vector<std::string>& tokens);

struct TemplatePartition {
  std::map<std::string, Rarity> rarity;
  std::map<std::string, double> fraction_under_cutoff;
  std::vector<std::string> train_templates;
  std::vector<std::string> test_templates;
};

// Labels each template Rare when fewer than half of its probe sentences score
// a pseudo-perplexity below `cutoff` (ties are Common), then picks one rare
// and two common templates per side, in input order. Throws when fewer than
// 2 rare or 4 common templates exist.
TemplatePartition categorize_templates(
    const std::function<double(const ProbeSentence&)>& pseudo_perplexity,
    const std::vector<SentenceTemplate>& templates,
    const std::vector<Profession>& professions,
    const std::vector<GenderedPair>& pairs,
    double cutoff = 15.0);

// Neutral sentences mixed into the synthetic corpus; none of their words is a
// profession token.
const std::vector<std::string>& filler_sentences();

SyntheticCorpus generate_synthetic_corpus(const SkewConfig& skew,
                                          const std::vector<Profession>& professions,
                                          const std::vector<GenderedPair>& pairs,
                                          const std::vector<SentenceTemplate>& templates);

}  // namespace distalign
