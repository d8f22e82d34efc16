#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace csasr {

// ---- UTF-8 helpers ----
std::vector<uint32_t> utf8_decode(const std::string& s);
std::string utf8_encode(const std::vector<uint32_t>& cps);
std::string utf8_encode_one(uint32_t cp);

enum class Script { Latin, Devanagari, Bengali, Digit, Symbol, Mixed };

// Classifies a word by Unicode block; Mixed when more than one letter script
// is present. Throws on empty input.
Script script_of(const std::string& word);

struct NormalizationRules {
  std::set<uint32_t> kept_symbols{'_', '/', '=', '+', '%', '@'};
  bool lowercase_latin = true;
  bool split_script_boundaries = true;
  bool split_digit_boundaries = true;
};

// Transcript cleaning: strips punctuation except kept symbols, lowercases
// Latin, splits glued script/digit boundaries, collapses whitespace.
std::string normalize_transcript(const std::string& raw,
                                 const NormalizationRules& rules = {});

// ---- BPE ----

// Special token ids shared with the acoustic model. Blank sits at 0 so CTC
// and the decoder use one vocabulary.
struct SpecialIds {
  int blank = 0;
  int pad = 1;
  int unk = 2;
  int sos = 3;
  int eos = 4;
  int count() const { return 5; }
};

struct TokenSequence {
  std::vector<int> ids;
  bool framed = false;  // sos/eos wrapping
};

class BpeModel {
 public:
  // Greedy pair-merge training. Ties break on higher count first, then
  // lexicographically smallest pair. Words get a word-end marker symbol so
  // decoding restores boundaries.
  static BpeModel train(const std::vector<std::string>& corpus_lines,
                        int vocab_size);

  TokenSequence encode(const std::string& text, bool frame = false) const;
  std::string decode(const TokenSequence& t) const;

  int vocab_size() const { return static_cast<int>(id_to_token_.size()); }
  const SpecialIds& specials() const { return specials_; }
  const std::vector<std::pair<std::string, std::string>>& merges() const {
    return merges_;
  }
  int token_id(const std::string& tok) const;  // -1 when absent

  void save(const std::string& path) const;
  static BpeModel load(const std::string& path);

 private:
  SpecialIds specials_;
  std::vector<std::pair<std::string, std::string>> merges_;
  std::map<std::string, int> token_to_id_;
  std::vector<std::string> id_to_token_;

  std::vector<std::string> apply_merges(const std::string& word) const;
  void finalize_vocab(const std::set<std::string>& tokens);
};

inline constexpr const char* kWordEndMarker = "▁";  // lower one-eighth block

}  // namespace csasr
