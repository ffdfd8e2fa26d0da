#pragma once

#include <map>
#include <string>
#include <vector>

#include "distalign/corpus.hpp"

namespace distalign {

// Token <-> id bijection with the four special tokens at fixed low ids.
// Profession names that contain spaces are stored as single tokens; the
// tokenizer re-merges them greedily when reading rendered text back in.
class Vocabulary {
 public:
  static constexpr const char* kPad = "<pad>";
  static constexpr const char* kMask = "<mask>";
  static constexpr const char* kUnk = "<unk>";
  static constexpr const char* kBos = "<bos>";

  Vocabulary() = default;

  static Vocabulary build(const std::vector<Profession>& professions,
                          const std::vector<GenderedPair>& pairs,
                          const std::vector<SentenceTemplate>& templates,
                          const std::vector<std::string>& extra_sentences = filler_sentences());

  // Reconstructs a vocabulary from an explicit token list (checkpoint load).
  static Vocabulary from_tokens(const std::vector<std::string>& tokens);

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  bool contains(const std::string& token) const { return ids_.count(token) > 0; }
  // Id of a known token; throws for unknown ones.
  int id(const std::string& token) const;
  // Id of the token, or the UNK id when missing.
  int id_or_unk(const std::string& token) const;

  int pad_id() const { return pad_id_; }
  int mask_id() const { return mask_id_; }
  int unk_id() const { return unk_id_; }
  int bos_id() const { return bos_id_; }

  // Encodes tokens to ids, mapping unknown tokens to UNK. When
  // `unknown_count` is given it receives the number of UNK substitutions.
  std::vector<int> encode(const std::vector<std::string>& tokens, int* unknown_count = nullptr) const;

  // Splits a rendered sentence: whitespace split, trailing '.'/',' detached,
  // then greedy longest-match merge of multi-word vocabulary entries.
  std::vector<std::string> tokenize_line(const std::string& line) const;

 private:
  void add(const std::string& token);

  std::vector<std::string> tokens_;
  std::map<std::string, int> ids_;
  int pad_id_ = -1;
  int mask_id_ = -1;
  int unk_id_ = -1;
  int bos_id_ = -1;
  int max_token_words_ = 1;
};

}  // namespace distalign
