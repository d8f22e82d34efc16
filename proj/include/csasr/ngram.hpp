#pragma once

#include <map>
#include <string>
#include <vector>

namespace csasr {

inline constexpr const char* kBos = "<s>";
inline constexpr const char* kEos = "</s>";
inline constexpr const char* kUnk = "<unk>";

// Raw n-gram counts per order (index 0 = unigrams). Sentences are framed
// with <s>/</s>; words at or below the frequency floor map to <unk>.
struct NgramCounts {
  int order = 2;
  std::vector<std::map<std::vector<std::string>, int64_t>> tables;
  std::vector<std::string> vocab;  // predictable words: excludes <s>

  int64_t get(const std::vector<std::string>& gram) const;
};

NgramCounts count_ngrams(const std::vector<std::string>& corpus_lines, int order,
                         int64_t unk_max_count = 1);

enum class Smoothing { Mle, KneserNey };

struct ArpaEntry {
  double logp = 0.0;       // log10
  double backoff = 0.0;    // log10; meaningful only when has_backoff
  bool has_backoff = false;
};

struct ArpaModel {
  int order = 2;
  std::vector<std::map<std::vector<std::string>, ArpaEntry>> tables;
  std::vector<std::string> vocab;  // excludes <s>
  std::vector<std::string> warnings;

  // Backoff query: log10 P(word | context); OOV words are mapped to <unk>.
  double word_log10(const std::vector<std::string>& context,
                    const std::string& word) const;
  // Sum of conditional log10 probabilities including the </s> transition.
  double sentence_log10(const std::vector<std::string>& words) const;
  // Full-vocabulary sum of P(w|context); should be 1 for any valid model.
  double context_mass(const std::vector<std::string>& context) const;
};

// Interpolated modified Kneser-Ney (three discounts per order from
// count-of-counts) or maximum likelihood (testing aid; no backoff mass).
ArpaModel estimate(const NgramCounts& counts, Smoothing smoothing);

void arpa_write(const ArpaModel& m, const std::string& path);
ArpaModel arpa_read(const std::string& path);

double perplexity(const ArpaModel& m, const std::vector<std::string>& corpus_lines);

}  // namespace csasr
