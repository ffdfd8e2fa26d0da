#include "distalign/vocab.hpp"

#include <sstream>
#include <stdexcept>

namespace distalign {

namespace {

std::vector<std::string> split_words(const std::string& line) {
  std::vector<std::string> words;
  std::stringstream ss(line);
  std::string chunk;
  while (ss >> chunk) {
    std::string tail;
    while (!chunk.empty() && (chunk.back() == '.' || chunk.back() == ',')) {
      tail.insert(tail.begin(), chunk.back());
      chunk.pop_back();
    }
    if (!chunk.empty()) words.push_back(chunk);
    for (char c : tail) words.emplace_back(1, c);
  }
  return words;
}

int count_words(const std::string& token) {
  int words = 1;
  for (char c : token) {
    if (c == ' ') ++words;
  }
  return words;
}

}  // namespace

void Vocabulary::add(const std::string& token) {
  if (token.empty() || ids_.count(token) > 0) return;
  ids_[token] = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
  max_token_words_ = std::max(max_token_words_, count_words(token));
}

Vocabulary Vocabulary::build(const std::vector<Profession>& professions,
                             const std::vector<GenderedPair>& pairs,
                             const std::vector<SentenceTemplate>& templates,
                             const std::vector<std::string>& extra_sentences) {
  Vocabulary vocab;
  vocab.add(kPad);
  vocab.add(kMask);
  vocab.add(kUnk);
  vocab.add(kBos);
  vocab.pad_id_ = vocab.ids_.at(kPad);
  vocab.mask_id_ = vocab.ids_.at(kMask);
  vocab.unk_id_ = vocab.ids_.at(kUnk);
  vocab.bos_id_ = vocab.ids_.at(kBos);

  for (const auto& p : professions) vocab.add(p.name);
  for (const auto& pair : pairs) {
    vocab.add(pair.male);
    vocab.add(pair.female);
  }
  // Expanding every probe covers determiners, both articles, template words,
  // and punctuation exactly as the scoring pipeline will produce them.
  for (const auto& tmpl : templates) {
    for (const auto& pair : pairs) {
      for (const Gender g : {Gender::Male, Gender::Female}) {
        for (const auto& p : professions) {
          for (const auto& tok : expand_template(tmpl, pair, g, p.name).tokens) vocab.add(tok);
        }
      }
    }
  }
  for (const auto& sentence : extra_sentences) {
    for (const auto& word : split_words(sentence)) vocab.add(word);
  }
  return vocab;
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& tokens) {
  Vocabulary vocab;
  for (const auto& tok : tokens) vocab.add(tok);
  const auto special = [&](const char* name) {
    const auto it = vocab.ids_.find(name);
    if (it == vocab.ids_.end()) throw std::runtime_error(std::string("vocabulary misses special token ") + name);
    return it->second;
  };
  vocab.pad_id_ = special(kPad);
  vocab.mask_id_ = special(kMask);
  vocab.unk_id_ = special(kUnk);
  vocab.bos_id_ = special(kBos);
  return vocab;
}

int Vocabulary::id(const std::string& token) const {
  const auto it = ids_.find(token);
  if (it == ids_.end()) throw std::out_of_range("token not in vocabulary: '" + token + "'");
  return it->second;
}

int Vocabulary::id_or_unk(const std::string& token) const {
  const auto it = ids_.find(token);
  return it == ids_.end() ? unk_id_ : it->second;
}

std::vector<int> Vocabulary::encode(const std::vector<std::string>& tokens, int* unknown_count) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  int unknown = 0;
  for (const auto& tok : tokens) {
    const auto it = ids_.find(tok);
    if (it == ids_.end()) {
      ++unknown;
      ids.push_back(unk_id_);
    } else {
      ids.push_back(it->second);
    }
  }
  if (unknown_count != nullptr) *unknown_count = unknown;
  return ids;
}

std::vector<std::string> Vocabulary::tokenize_line(const std::string& line) const {
  const std::vector<std::string> words = split_words(line);
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < words.size()) {
    const std::size_t longest = std::min(words.size() - i, static_cast<std::size_t>(max_token_words_));
    std::size_t taken = 1;
    std::string merged = words[i];
    for (std::size_t span = longest; span > 1; --span) {
      std::string candidate = words[i];
      for (std::size_t k = 1; k < span; ++k) candidate += ' ' + words[i + k];
      if (ids_.count(candidate) > 0) {
        merged = std::move(candidate);
        taken = span;
        break;
      }
    }
    tokens.push_back(std::move(merged));
    i += taken;
  }
  return tokens;
}

}  // namespace distalign
