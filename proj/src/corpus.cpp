#include "distalign/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "distalign/rng.hpp"

namespace distalign {

namespace {

std::string lowercase(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split_csv_row(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(trim(field));
  if (!line.empty() && line.back() == ',') fields.push_back("");
  return fields;
}

bool is_vowel(char c) {
  switch (std::tolower(static_cast<unsigned char>(c))) {
    case 'a': case 'e': case 'i': case 'o': case 'u': return true;
    default: return false;
  }
}

// Splits template text into word and placeholder tokens, detaching trailing
// '.' and ',' into their own tokens.
std::vector<std::string> tokenize_template_text(const std::string& text) {
  std::vector<std::string> tokens;
  std::stringstream ss(text);
  std::string chunk;
  while (ss >> chunk) {
    std::string tail;
    while (!chunk.empty() && (chunk.back() == '.' || chunk.back() == ',')) {
      tail.insert(tail.begin(), chunk.back());
      chunk.pop_back();
    }
    if (!chunk.empty()) tokens.push_back(chunk);
    for (char c : tail) tokens.emplace_back(1, c);
  }
  return tokens;
}

}  // namespace

const char* to_string(Category c) {
  switch (c) {
    case Category::MaleDominated: return "DP_male";
    case Category::FemaleDominated: return "DP_female";
    case Category::Balanced: return "DP_balanced";
  }
  return "?";
}

const char* to_string(Gender g) { return g == Gender::Male ? "male" : "female"; }

std::optional<Category> category_from_string(const std::string& s) {
  if (s == "DP_male") return Category::MaleDominated;
  if (s == "DP_female") return Category::FemaleDominated;
  if (s == "DP_balanced") return Category::Balanced;
  return std::nullopt;
}

std::optional<Category> categorize_profession(double female_share) {
  if (female_share < 0.0 || female_share > 1.0) {
    throw std::invalid_argument("female share must lie in [0,1], got " + std::to_string(female_share));
  }
  if (female_share <= 0.30) return Category::MaleDominated;
  if (female_share >= 0.70) return Category::FemaleDominated;
  if (female_share >= 0.45 && female_share <= 0.55) return Category::Balanced;
  return std::nullopt;
}

ProfessionLoadResult load_professions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open professions file: " + path.string());

  ProfessionLoadResult result;
  std::string line;
  int line_no = 0;
  bool saw_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    if (!saw_header) {
      saw_header = true;  // header row: name,female_share_percent,employed
      continue;
    }
    const auto fields = split_csv_row(line);
    if (fields.size() < 2 || fields.size() > 3 || fields[0].empty()) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": malformed profession row");
    }
    double percent = 0.0;
    try {
      std::size_t used = 0;
      percent = std::stod(fields[1], &used);
      if (used != fields[1].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": bad female_share_percent '" + fields[1] + "'");
    }
    if (percent < 0.0 || percent > 100.0) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": female_share_percent outside [0,100]");
    }
    Profession p;
    p.name = lowercase(fields[0]);
    p.female_share = percent / 100.0;
    if (fields.size() == 3 && !fields[2].empty()) {
      try {
        p.employed = std::stol(fields[2]);
      } catch (const std::exception&) {
        p.employed = std::nullopt;  // informational column, tolerate dashes etc.
      }
    }
    const auto category = categorize_profession(p.female_share);
    if (!category) {
      result.excluded.push_back(p.name);
      continue;
    }
    p.category = *category;
    result.professions.push_back(std::move(p));
  }
  if (!saw_header || (result.professions.empty() && result.excluded.empty())) {
    throw std::runtime_error("professions file is empty: " + path.string());
  }
  return result;
}

std::vector<GenderedPair> load_gendered_pairs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open gendered pairs file: " + path.string());
  std::vector<GenderedPair> pairs;
  std::string line;
  int line_no = 0;
  bool saw_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    if (!saw_header) {
      saw_header = true;
      continue;
    }
    const auto fields = split_csv_row(line);
    if (fields.size() != 3 || fields[0].empty() || fields[1].empty()) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": malformed gendered pair row");
    }
    GenderedPair pair;
    pair.male = lowercase(fields[0]);
    pair.female = lowercase(fields[1]);
    const std::string det = lowercase(fields[2]);
    if (det == "none") {
      pair.determiner = DeterminerClass::None;
    } else if (det == "this") {
      pair.determiner = DeterminerClass::This;
    } else if (det == "my") {
      pair.determiner = DeterminerClass::My;
    } else {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": unknown determiner_class '" + fields[2] + "'");
    }
    pairs.push_back(std::move(pair));
  }
  if (pairs.empty()) throw std::runtime_error("gendered pairs file is empty: " + path.string());
  return pairs;
}

std::vector<SentenceTemplate> load_templates(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open templates file: " + path.string());
  std::vector<SentenceTemplate> templates;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": expected `id<TAB>text`");
    }
    SentenceTemplate t;
    t.id = trim(line.substr(0, tab));
    t.text = trim(line.substr(tab + 1));
    const auto count = [&](const std::string& needle) {
      std::size_t n = 0, pos = 0;
      while ((pos = t.text.find(needle, pos)) != std::string::npos) {
        ++n;
        pos += needle.size();
      }
      return n;
    };
    if (count("[attribute]") != 1 || count("[target]") != 1) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                               ": template must contain exactly one [attribute] and one [target]");
    }
    templates.push_back(std::move(t));
  }
  if (templates.empty()) throw std::runtime_error("templates file is empty: " + path.string());
  return templates;
}

std::array<int, 3> largest_remainder_counts(int n, const std::array<double, 3>& ratios) {
  std::array<int, 3> counts{};
  std::array<double, 3> remainders{};
  int assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = n * ratios[i];
    counts[i] = static_cast<int>(std::floor(exact + 1e-9));
    remainders[i] = exact - counts[i];
    assigned += counts[i];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return remainders[a] > remainders[b]; });
  for (int k = 0; k < n - assigned; ++k) counts[order[static_cast<std::size_t>(k % 3)]] += 1;
  return counts;
}

SplitAssignment stratified_split(const std::vector<Profession>& professions,
                                 const std::array<double, 3>& ratios,
                                 std::uint64_t seed) {
  const double ratio_sum = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(ratio_sum - 1.0) > 1e-9) throw std::invalid_argument("split ratios must sum to 1");

  SplitAssignment split;
  Rng rng(seed);
  const std::array<Category, 3> order{Category::MaleDominated, Category::FemaleDominated, Category::Balanced};
  for (const Category category : order) {
    std::vector<std::string> members;
    for (const auto& p : professions) {
      if (p.category == category) members.push_back(p.name);
    }
    if (members.empty()) continue;
    if (members.size() < 3) {
      throw std::runtime_error(std::string("category ") + to_string(category) +
                               " has fewer than 3 professions; cannot split");
    }
    rng.shuffle(members);
    const auto counts = largest_remainder_counts(static_cast<int>(members.size()), ratios);
    auto cursor = members.begin();
    split.train_professions.insert(split.train_professions.end(), cursor, cursor + counts[0]);
    cursor += counts[0];
    split.validation_professions.insert(split.validation_professions.end(), cursor, cursor + counts[1]);
    cursor += counts[1];
    split.test_professions.insert(split.test_professions.end(), cursor, cursor + counts[2]);
  }
  return split;
}

ProbeSentence expand_template(const SentenceTemplate& tmpl,
                              const GenderedPair& pair,
                              Gender gender,
                              const std::string& profession) {
  ProbeSentence probe;
  probe.gender = gender;
  probe.profession = profession;
  probe.template_id = tmpl.id;

  const std::string attribute = gender == Gender::Male ? pair.male : pair.female;
  for (const std::string& raw : tokenize_template_text(tmpl.text)) {
    if (raw == "[DET/PRONOUN]") {
      switch (pair.determiner) {
        case DeterminerClass::None: break;  // he/she take no determiner
        case DeterminerClass::This: probe.tokens.push_back("this"); break;
        case DeterminerClass::My: probe.tokens.push_back("my"); break;
      }
    } else if (raw == "[attribute]") {
      probe.attribute_index = static_cast<int>(probe.tokens.size());
      probe.tokens.push_back(attribute);
    } else if (raw == "[ARTICLE]") {
      probe.article_index = static_cast<int>(probe.tokens.size());
      probe.tokens.push_back(!profession.empty() && is_vowel(profession.front()) ? "an" : "a");
    } else if (raw == "[target]") {
      probe.target_index = static_cast<int>(probe.tokens.size());
      probe.tokens.push_back(profession);
    } else {
      probe.tokens.push_back(raw);
    }
  }
  return probe;
}

std::string render_sentence(const std::vector<std::string>& tokens) {
  std::string out;
  for (const auto& tok : tokens) {
    const bool punctuation = tok == "." || tok == ",";
    if (!out.empty() && !punctuation) out += ' ';
    out += tok;
  }
  return out;
}

TemplatePartition categorize_templates(
    const std::function<double(const ProbeSentence&)>& pseudo_perplexity,
    const std::vector<SentenceTemplate>& templates,
    const std::vector<Profession>& professions,
    const std::vector<GenderedPair>& pairs,
    double cutoff) {
  TemplatePartition partition;
  std::vector<std::string> rare_ids;
  std::vector<std::string> common_ids;
  for (const auto& tmpl : templates) {
    long under = 0;
    long total = 0;
    for (const auto& profession : professions) {
      for (const auto& pair : pairs) {
        for (const Gender g : {Gender::Male, Gender::Female}) {
          const ProbeSentence probe = expand_template(tmpl, pair, g, profession.name);
          if (pseudo_perplexity(probe) < cutoff) ++under;
          ++total;
        }
      }
    }
    const double fraction = total > 0 ? static_cast<double>(under) / static_cast<double>(total) : 0.0;
    partition.fraction_under_cutoff[tmpl.id] = fraction;
    const Rarity rarity = fraction < 0.5 ? Rarity::Rare : Rarity::Common;
    partition.rarity[tmpl.id] = rarity;
    (rarity == Rarity::Rare ? rare_ids : common_ids).push_back(tmpl.id);
  }
  if (rare_ids.size() < 2 || common_ids.size() < 4) {
    throw std::runtime_error(
        "template partition infeasible: need at least 2 rare and 4 common templates, found " +
        std::to_string(rare_ids.size()) + " rare and " + std::to_string(common_ids.size()) + " common");
  }
  partition.train_templates = {rare_ids[0], common_ids[0], common_ids[1]};
  partition.test_templates = {rare_ids[1], common_ids[2], common_ids[3]};
  return partition;
}

const std::vector<std::string>& filler_sentences() {
  static const std::vector<std::string> sentences = {
      "the day at work was good.",
      "the office meeting was in the morning.",
      "work was good today.",
      "the team had a good day.",
      "a good position is hard to find.",
      "the morning at the office was calm.",
      "every day is a new start.",
      "the weather today was bright and calm.",
  };
  return sentences;
}

SyntheticCorpus generate_synthetic_corpus(const SkewConfig& skew,
                                          const std::vector<Profession>& professions,
                                          const std::vector<GenderedPair>& pairs,
                                          const std::vector<SentenceTemplate>& templates) {
  if (skew.corpus_size <= 0) throw std::invalid_argument("corpus size must be positive");
  if (skew.filler_ratio < 0.0 || skew.filler_ratio > 1.0) {
    throw std::invalid_argument("filler ratio must lie in [0,1]");
  }
  for (const auto& [name, prob] : skew.male_probability) {
    if (prob < 0.0 || prob > 1.0) {
      throw std::invalid_argument("male probability for '" + name + "' outside [0,1]");
    }
  }
  if (professions.empty() || pairs.empty() || templates.empty()) {
    throw std::invalid_argument("corpus generation needs professions, pairs, and templates");
  }

  Rng rng(skew.seed);
  const auto& fillers = filler_sentences();
  std::vector<double> cumulative_weight(templates.size());
  double weight_total = 0.0;
  for (std::size_t i = 0; i < templates.size(); ++i) {
    const auto it = skew.template_weight.find(templates[i].id);
    const double w = it != skew.template_weight.end() ? it->second : 1.0;
    if (w < 0.0) throw std::invalid_argument("template weight for " + templates[i].id + " is negative");
    weight_total += w;
    cumulative_weight[i] = weight_total;
  }
  if (!(weight_total > 0.0)) throw std::invalid_argument("template weights sum to zero");
  const auto sample_template = [&]() -> const SentenceTemplate& {
    const double r = rng.uniform01() * weight_total;
    const auto it = std::upper_bound(cumulative_weight.begin(), cumulative_weight.end(), r);
    const std::size_t idx = std::min(templates.size() - 1,
                                     static_cast<std::size_t>(it - cumulative_weight.begin()));
    return templates[idx];
  };
  const int total = skew.corpus_size + skew.heldout_size;
  SyntheticCorpus corpus;
  corpus.pretrain.reserve(static_cast<std::size_t>(skew.corpus_size));
  corpus.heldout.reserve(static_cast<std::size_t>(skew.heldout_size));
  for (int i = 0; i < total; ++i) {
    std::string line;
    if (rng.bernoulli(skew.filler_ratio)) {
      line = fillers[static_cast<std::size_t>(rng.below(fillers.size()))];
    } else {
      const auto& profession = professions[static_cast<std::size_t>(rng.below(professions.size()))];
      const auto it = skew.male_probability.find(profession.name);
      const double male_prob = it != skew.male_probability.end() ? it->second : 0.5;
      const Gender gender = rng.bernoulli(male_prob) ? Gender::Male : Gender::Female;
      const auto& pair = pairs[static_cast<std::size_t>(rng.below(pairs.size()))];
      const auto& tmpl = sample_template();
      line = render_sentence(expand_template(tmpl, pair, gender, profession.name).tokens);
    }
    if (i < skew.corpus_size) {
      corpus.pretrain.push_back(std::move(line));
    } else {
      corpus.heldout.push_back(std::move(line));
    }
  }
  return corpus;
}

}  // namespace distalign
