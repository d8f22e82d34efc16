#include "csasr/text.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace csasr {

std::vector<uint32_t> utf8_decode(const std::string& s) {
  std::vector<uint32_t> out;
  size_t i = 0;
  while (i < s.size()) {
    unsigned char c = s[i];
    uint32_t cp = 0;
    int extra = 0;
    if (c < 0x80) {
      cp = c;
    } else if ((c >> 5) == 0x6) {
      cp = c & 0x1F;
      extra = 1;
    } else if ((c >> 4) == 0xE) {
      cp = c & 0x0F;
      extra = 2;
    } else if ((c >> 3) == 0x1E) {
      cp = c & 0x07;
      extra = 3;
    } else {
      throw std::invalid_argument("utf8: invalid lead byte");
    }
    if (i + extra >= s.size()) throw std::invalid_argument("utf8: truncated");
    for (int k = 1; k <= extra; ++k) {
      unsigned char cc = s[i + k];
      if ((cc >> 6) != 0x2) throw std::invalid_argument("utf8: bad continuation");
      cp = (cp << 6) | (cc & 0x3F);
    }
    out.push_back(cp);
    i += 1 + extra;
  }
  return out;
}

std::string utf8_encode_one(uint32_t cp) {
  std::string out;
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xF0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
  return out;
}

std::string utf8_encode(const std::vector<uint32_t>& cps) {
  std::string out;
  for (uint32_t cp : cps) out += utf8_encode_one(cp);
  return out;
}

namespace {

enum class CharClass { LatinLetter, DevanagariLetter, BengaliLetter, Digit, Symbol, Space, Drop };

bool is_devanagari(uint32_t cp) { return cp >= 0x0900 && cp <= 0x097F && !(cp >= 0x0966 && cp <= 0x096F); }
bool is_bengali(uint32_t cp) { return cp >= 0x0980 && cp <= 0x09FF && !(cp >= 0x09E6 && cp <= 0x09EF); }
bool is_digit_cp(uint32_t cp) {
  return (cp >= '0' && cp <= '9') || (cp >= 0x0966 && cp <= 0x096F) ||
         (cp >= 0x09E6 && cp <= 0x09EF);
}
bool is_latin_letter(uint32_t cp) {
  return (cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z');
}

CharClass classify(uint32_t cp, const std::set<uint32_t>& kept) {
  if (cp == ' ' || cp == '\t' || cp == '\n' || cp == '\r') return CharClass::Space;
  if (is_latin_letter(cp)) return CharClass::LatinLetter;
  if (is_digit_cp(cp)) return CharClass::Digit;
  if (is_devanagari(cp)) return CharClass::DevanagariLetter;
  if (is_bengali(cp)) return CharClass::BengaliLetter;
  if (kept.count(cp)) return CharClass::Symbol;
  return CharClass::Drop;
}

}  // namespace

Script script_of(const std::string& word) {
  if (word.empty()) throw std::invalid_argument("script_of: empty word");
  bool latin = false, dev = false, ben = false, digit = false;
  for (uint32_t cp : utf8_decode(word)) {
    if (is_latin_letter(cp)) latin = true;
    else if (is_devanagari(cp)) dev = true;
    else if (is_bengali(cp)) ben = true;
    else if (is_digit_cp(cp)) digit = true;
  }
  int letter_scripts = (latin ? 1 : 0) + (dev ? 1 : 0) + (ben ? 1 : 0);
  if (letter_scripts > 1) return Script::Mixed;
  if (latin) return Script::Latin;
  if (dev) return Script::Devanagari;
  if (ben) return Script::Bengali;
  if (digit) return Script::Digit;
  return Script::Symbol;
}

std::string normalize_transcript(const std::string& raw,
                                 const NormalizationRules& rules) {
  std::vector<uint32_t> cps = utf8_decode(raw);
  std::string out;
  CharClass prev = CharClass::Space;
  auto emit_space = [&] {
    if (!out.empty() && out.back() != ' ') out += ' ';
  };
  for (uint32_t cp : cps) {
    CharClass cls = classify(cp, rules.kept_symbols);
    switch (cls) {
      case CharClass::Drop:
      case CharClass::Space:
        emit_space();
        prev = CharClass::Space;
        continue;
      case CharClass::Symbol:
        // kept symbols become standalone tokens
        emit_space();
        out += utf8_encode_one(cp);
        emit_space();
        prev = CharClass::Space;
        continue;
      default:
        break;
    }
    bool boundary = false;
    if (prev != CharClass::Space && prev != cls) {
      bool prev_letter = prev == CharClass::LatinLetter ||
                         prev == CharClass::DevanagariLetter ||
                         prev == CharClass::BengaliLetter;
      bool cur_letter = cls == CharClass::LatinLetter ||
                        cls == CharClass::DevanagariLetter ||
                        cls == CharClass::BengaliLetter;
      if (rules.split_script_boundaries && prev_letter && cur_letter) boundary = true;
      if (rules.split_digit_boundaries &&
          ((prev_letter && cls == CharClass::Digit) ||
           (prev == CharClass::Digit && cur_letter)))
        boundary = true;
    }
    if (boundary) emit_space();
    if (rules.lowercase_latin && cls == CharClass::LatinLetter && cp >= 'A' && cp <= 'Z')
      cp += 'a' - 'A';
    out += utf8_encode_one(cp);
    prev = cls;
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

// ---- BPE ----

namespace {

std::vector<std::string> word_symbols(const std::string& word) {
  std::vector<std::string> syms;
  for (uint32_t cp : utf8_decode(word)) syms.push_back(utf8_encode_one(cp));
  syms.push_back(kWordEndMarker);
  return syms;
}

std::vector<std::string> split_words(const std::string& line) {
  std::vector<std::string> words;
  std::istringstream is(line);
  std::string w;
  while (is >> w) words.push_back(w);
  return words;
}

}  // namespace

void BpeModel::finalize_vocab(const std::set<std::string>& tokens) {
  id_to_token_ = {"<blank>", "<pad>", "<unk>", "<sos>", "<eos>"};
  for (const auto& t : tokens) id_to_token_.push_back(t);
  for (size_t i = 0; i < id_to_token_.size(); ++i)
    token_to_id_[id_to_token_[i]] = static_cast<int>(i);
}

BpeModel BpeModel::train(const std::vector<std::string>& corpus_lines,
                         int vocab_size) {
  std::map<std::vector<std::string>, int64_t> words;  // symbolized word -> freq
  for (const auto& line : corpus_lines)
    for (const auto& w : split_words(line)) ++words[word_symbols(w)];
  if (words.empty()) throw std::runtime_error("bpe: empty corpus");

  std::set<std::string> vocab_tokens;
  for (const auto& [syms, _] : words)
    for (const auto& s : syms) vocab_tokens.insert(s);
  int base = static_cast<int>(vocab_tokens.size());
  if (vocab_size < base)
    throw std::invalid_argument("bpe: vocab_size below base symbol count (" +
                                std::to_string(base) + ")");

  BpeModel m;
  int merges_left = vocab_size - base;
  while (merges_left > 0) {
    std::map<std::pair<std::string, std::string>, int64_t> pair_counts;
    for (const auto& [syms, freq] : words)
      for (size_t i = 0; i + 1 < syms.size(); ++i)
        pair_counts[{syms[i], syms[i + 1]}] += freq;
    // best pair: highest count, then lexicographically smallest
    std::pair<std::string, std::string> best;
    int64_t best_count = 0;
    for (const auto& [pr, cnt] : pair_counts)
      if (cnt > best_count) {
        best_count = cnt;
        best = pr;
      }
    if (best_count < 2) break;  // no pair repeats
    m.merges_.push_back(best);
    std::string merged = best.first + best.second;
    vocab_tokens.insert(merged);
    std::map<std::vector<std::string>, int64_t> next;
    for (const auto& [syms, freq] : words) {
      std::vector<std::string> ns;
      for (size_t i = 0; i < syms.size(); ++i) {
        if (i + 1 < syms.size() && syms[i] == best.first && syms[i + 1] == best.second) {
          ns.push_back(merged);
          ++i;
        } else {
          ns.push_back(syms[i]);
        }
      }
      next[ns] += freq;
    }
    words = std::move(next);
    --merges_left;
  }
  m.finalize_vocab(vocab_tokens);
  return m;
}

std::vector<std::string> BpeModel::apply_merges(const std::string& word) const {
  std::vector<std::string> syms = word_symbols(word);
  for (const auto& [a, b] : merges_) {
    std::vector<std::string> ns;
    for (size_t i = 0; i < syms.size(); ++i) {
      if (i + 1 < syms.size() && syms[i] == a && syms[i + 1] == b) {
        ns.push_back(a + b);
        ++i;
      } else {
        ns.push_back(syms[i]);
      }
    }
    syms = std::move(ns);
  }
  return syms;
}

int BpeModel::token_id(const std::string& tok) const {
  auto it = token_to_id_.find(tok);
  return it == token_to_id_.end() ? -1 : it->second;
}

TokenSequence BpeModel::encode(const std::string& text, bool frame) const {
  TokenSequence t;
  t.framed = frame;
  if (frame) t.ids.push_back(specials_.sos);
  for (const auto& w : split_words(text))
    for (const auto& s : apply_merges(w)) {
      int id = token_id(s);
      t.ids.push_back(id >= 0 ? id : specials_.unk);
    }
  if (frame) t.ids.push_back(specials_.eos);
  return t;
}

std::string BpeModel::decode(const TokenSequence& t) const {
  std::string joined;
  for (int id : t.ids) {
    if (id == specials_.sos || id == specials_.eos || id == specials_.pad ||
        id == specials_.blank)
      continue;
    if (id < 0 || id >= vocab_size())
      throw std::out_of_range("bpe decode: id out of range");
    joined += id_to_token_[id];
  }
  // word-end markers back to spaces
  std::string out;
  size_t i = 0;
  std::string marker = kWordEndMarker;
  while (i < joined.size()) {
    if (joined.compare(i, marker.size(), marker) == 0) {
      out += ' ';
      i += marker.size();
    } else {
      out += joined[i++];
    }
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

void BpeModel::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("bpe: cannot open " + path);
  os << "csasr-bpe 1\n";
  os << "specials " << specials_.blank << " " << specials_.pad << " "
     << specials_.unk << " " << specials_.sos << " " << specials_.eos << "\n";
  os << "merges " << merges_.size() << "\n";
  for (const auto& [a, b] : merges_) os << a << " " << b << "\n";
  os << "vocab " << id_to_token_.size() << "\n";
  for (size_t i = 0; i < id_to_token_.size(); ++i)
    os << id_to_token_[i] << " " << i << "\n";
}

BpeModel BpeModel::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("bpe: cannot open " + path);
  std::string tag;
  int version;
  is >> tag >> version;
  if (tag != "csasr-bpe" || version != 1)
    throw std::runtime_error("bpe: unrecognized model file " + path);
  BpeModel m;
  std::string kw;
  is >> kw >> m.specials_.blank >> m.specials_.pad >> m.specials_.unk >>
      m.specials_.sos >> m.specials_.eos;
  size_t n_merges;
  is >> kw >> n_merges;
  m.merges_.resize(n_merges);
  for (auto& [a, b] : m.merges_) is >> a >> b;
  size_t n_vocab;
  is >> kw >> n_vocab;
  m.id_to_token_.resize(n_vocab);
  for (size_t i = 0; i < n_vocab; ++i) {
    std::string tok;
    size_t id;
    is >> tok >> id;
    if (id >= n_vocab) throw std::runtime_error("bpe: bad vocab id");
    m.id_to_token_[id] = tok;
  }
  if (!is) throw std::runtime_error("bpe: truncated model file " + path);
  for (size_t i = 0; i < m.id_to_token_.size(); ++i)
    m.token_to_id_[m.id_to_token_[i]] = static_cast<int>(i);
  return m;
}

}  // namespace csasr
