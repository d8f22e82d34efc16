#include <random>
#include <sstream>

#include "csasr/text.hpp"
#include "doctest.h"

using namespace csasr;

TEST_CASE("normalize: glued scripts split") {
  CHECK(normalize_transcript("attributesअट्रिब्यूट") == "attributes अट्रिब्यूट");
  CHECK(normalize_transcript("Hello, World!") == "hello world");
  CHECK(normalize_transcript("file2open 50%") == "file 2 open 50 %");
  CHECK(normalize_transcript("") == "");
  CHECK(normalize_transcript("   \t ") == "");
}

TEST_CASE("normalize: kept symbols survive") {
  for (std::string sym : {"_", "/", "=", "+", "%", "@"}) {
    std::string norm = normalize_transcript("a " + sym + " b");
    CHECK(norm.find(sym) != std::string::npos);
  }
  // other punctuation is removed (as a separator, never gluing words)
  CHECK(normalize_transcript("a.b,c;d!e?") == "a b c d e");
}

TEST_CASE("normalize is idempotent") {
  std::vector<std::string> samples = {
      "attributesअट्रिब्यूट", "Hello, World!", "file2open 50%",
      "mixा90टhree", "a  b   c", "बाংলা words42इन",
  };
  for (const auto& s : samples) {
    std::string once = normalize_transcript(s);
    CHECK(normalize_transcript(once) == once);
  }
}

TEST_CASE("normalize output alphabet is closed") {
  // only input letters/digits, kept symbols and spaces remain
  std::string norm = normalize_transcript("Don't—stop № (now)!");
  for (uint32_t cp : utf8_decode(norm)) {
    bool ok = (cp >= 'a' && cp <= 'z') || (cp >= '0' && cp <= '9') || cp == ' ';
    CHECK(ok);
  }
}

TEST_CASE("normalize: no token mixes scripts or letters with digits") {
  std::mt19937_64 gen(17);
  std::vector<std::string> pieces = {"ab", "अट", "বা", "12", "Xy", "७"};
  for (int trial = 0; trial < 50; ++trial) {
    std::string s;
    int n = 1 + static_cast<int>(gen() % 6);
    for (int i = 0; i < n; ++i) {
      s += pieces[gen() % pieces.size()];
      if (gen() % 4 == 0) s += ' ';
    }
    std::string norm = normalize_transcript(s);
    std::istringstream is(norm);
    std::string tok;
    while (is >> tok) {
      Script sc = script_of(tok);
      CHECK(sc != Script::Mixed);
      if (sc == Script::Digit) {
        for (uint32_t cp : utf8_decode(tok)) {
          bool is_letter = (cp >= 'a' && cp <= 'z');
          CHECK(!is_letter);
        }
      }
    }
  }
}

TEST_CASE("script_of") {
  CHECK(script_of("hello") == Script::Latin);
  CHECK(script_of("अट्रिब्यूट") == Script::Devanagari);
  CHECK(script_of("বাংলা") == Script::Bengali);
  CHECK(script_of("helloअ") == Script::Mixed);
  CHECK(script_of("42") == Script::Digit);
  CHECK(script_of("%") == Script::Symbol);
  CHECK_THROWS(script_of(""));
}

TEST_CASE("bpe first merge on low/lower corpus") {
  BpeModel m = BpeModel::train({"low low lower"}, 20);
  REQUIRE(!m.merges().empty());
  CHECK(m.merges()[0].first == "l");
  CHECK(m.merges()[0].second == "o");
}

TEST_CASE("bpe zero merges at base vocab") {
  // base symbols for "abc": a b c + word-end marker = 4
  BpeModel m = BpeModel::train({"abc"}, 4);
  CHECK(m.merges().empty());
  CHECK_THROWS(BpeModel::train({"abc"}, 3));
  CHECK_THROWS(BpeModel::train({}, 100));
}

TEST_CASE("bpe single repeated word collapses to one token") {
  BpeModel m = BpeModel::train({"spark spark spark spark"}, 50);
  TokenSequence t = m.encode("spark");
  CHECK(t.ids.size() == 1);
  CHECK(m.decode(t) == "spark");
}

TEST_CASE("bpe round trip and unk") {
  std::vector<std::string> corpus = {
      "the cat sat on the mat", "the dog ate the cat food",
      "a cat and a dog", "खुला file खोलो",
  };
  BpeModel m = BpeModel::train(corpus, 80);
  for (const auto& line : corpus) {
    TokenSequence t = m.encode(line);
    CHECK(m.decode(t) == line);
  }
  // unseen character maps to unk
  TokenSequence t = m.encode("zebra");
  bool has_unk = false;
  for (int id : t.ids) has_unk = has_unk || id == m.specials().unk;
  CHECK(has_unk);
  // empty input
  CHECK(m.encode("").ids.empty());
  TokenSequence framed = m.encode("", true);
  REQUIRE(framed.ids.size() == 2);
  CHECK(framed.ids[0] == m.specials().sos);
  CHECK(framed.ids[1] == m.specials().eos);

  TokenSequence bad;
  bad.ids = {m.vocab_size() + 3};
  CHECK_THROWS(m.decode(bad));
}

TEST_CASE("bpe determinism and model file round trip") {
  std::vector<std::string> corpus = {"ab ab abc bc bc ca", "abc ab ca"};
  BpeModel a = BpeModel::train(corpus, 12);
  BpeModel b = BpeModel::train(corpus, 12);
  CHECK(a.merges() == b.merges());

  a.save("t_bpe.model");
  BpeModel c = BpeModel::load("t_bpe.model");
  CHECK(c.merges() == a.merges());
  CHECK(c.vocab_size() == a.vocab_size());
  TokenSequence t1 = a.encode("abc ab");
  TokenSequence t2 = c.encode("abc ab");
  CHECK(t1.ids == t2.ids);
}
