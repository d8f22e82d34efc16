#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace csasr {

enum class EditOp { Match, Substitution, Insertion, Deletion };

struct AlignedPair {
  EditOp op;
  std::optional<std::string> ref_word, hyp_word;
};

struct Alignment {
  std::vector<AlignedPair> ops;
  int64_t matches = 0, substitutions = 0, insertions = 0, deletions = 0;
};

// Minimum-edit-cost alignment with unit costs. Ties prefer
// match > substitution > deletion > insertion.
Alignment align(const std::vector<std::string>& ref,
                const std::vector<std::string>& hyp);

// English word -> acceptable native-script renderings.
using TransliterationLexicon = std::map<std::string, std::set<std::string>>;

TransliterationLexicon load_lexicon_tsv(const std::string& path);

struct ScoreReport {
  int64_t ref_words = 0, substitutions = 0, deletions = 0, insertions = 0;
  // substitutions forgiven by the transliteration rule (T-WER only)
  int64_t forgiven = 0;
  double wer = 0.0, t_wer = 0.0;
  std::vector<std::string> missing_hyp_ids;
  struct PerUtt {
    std::string utt_id;
    int64_t ref_words, substitutions, deletions, insertions, forgiven;
  };
  std::vector<PerUtt> per_utt;

  std::string to_text() const;
  std::string to_json() const;
};

// Corpus-level WER/T-WER over utterances paired by id. Missing hypotheses
// score as all deletions and are flagged. T-WER re-counts a substitution as
// correct when the reference word is Latin-script and the hypothesis word is
// one of its transliterations.
ScoreReport score_corpus(const std::map<std::string, std::string>& refs,
                         const std::map<std::string, std::string>& hyps,
                         const TransliterationLexicon& lexicon = {});

std::vector<std::string> split_on_spaces(const std::string& s);

}  // namespace csasr
