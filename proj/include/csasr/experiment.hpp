#pragma once

#include <map>
#include <string>
#include <vector>

#include "csasr/data.hpp"
#include "csasr/frontend.hpp"

namespace csasr {

// JSONL manifest: one object per line with utt_id, wav, duration, text, lang
// (lang in {native, nonnative, cs}). Duplicate ids and bad fields are
// reported with line numbers.
Manifest parse_manifest(const std::string& path);
void write_manifest(const std::string& path, const Manifest& m);
// Total speech hours per language tag.
std::map<std::string, double> manifest_hours(const Manifest& m);

// Flat key=value file with dotted keys (model.d_model=512). '#' starts a
// comment. Unknown keys are rejected so typos fail loudly.
class ExperimentConfig {
 public:
  static ExperimentConfig load(const std::string& path);
  static ExperimentConfig from_string(const std::string& text);

  bool has(const std::string& key) const { return kv_.count(key) > 0; }
  std::string get(const std::string& key, const std::string& def) const;
  double get_num(const std::string& key, double def) const;
  int64_t get_int(const std::string& key, int64_t def) const;
  void set(const std::string& key, const std::string& value);

  // Sorted key=value serialization of the entries under the given dotted
  // prefixes; stage configs are frozen in this form.
  std::string canonical(const std::vector<std::string>& prefixes) const;
  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
};

// Pipeline stages in execution order.
const std::vector<std::string>& pipeline_stages();

// Runs the requested stages (in pipeline order) under exp_dir, one
// subdirectory per stage. A completed stage with an unchanged frozen config
// is skipped; a changed config refuses to run unless force is set. The
// experiment directory is protected by a lock file for the duration.
void run_pipeline(const ExperimentConfig& cfg, const std::string& exp_dir,
                  const std::vector<std::string>& stages, bool force = false);

// ---- toy dataset ----

// Token inventory of the two disjoint toy languages and the tone frequency
// each token is rendered as. First half is language A (Latin), second half
// language B (Devanagari).
struct ToyToken {
  std::string word;
  double freq_hz;
  bool lang_a;
};
const std::vector<ToyToken>& toy_tokens();

// Writes wav/ plus native.jsonl, nonnative.jsonl and cs.jsonl under out_dir;
// `size` utterances per pool. Audio is a fixed tone burst per token, so
// transcripts are exact by construction and the whole set is deterministic
// in the seed.
void make_toy_dataset(const std::string& out_dir, uint64_t seed, int size);

// Independent decoder for toy audio: energy segmentation plus a matched
// filter over the tone table. Used to check that the token→tone mapping is
// invertible.
std::string matched_filter_transcribe(const AudioBuffer& audio);

}  // namespace csasr
