#include "csasr/scoring.hpp"

#include <fstream>
#include <sstream>

#include "csasr/text.hpp"

namespace csasr {

std::vector<std::string> split_on_spaces(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

Alignment align(const std::vector<std::string>& ref,
                const std::vector<std::string>& hyp) {
  size_t R = ref.size(), H = hyp.size();
  // cost[i][j]: edit distance between ref[0..i) and hyp[0..j)
  std::vector<std::vector<int>> cost(R + 1, std::vector<int>(H + 1));
  std::vector<std::vector<EditOp>> back(R + 1, std::vector<EditOp>(H + 1));
  for (size_t i = 0; i <= R; ++i) {
    cost[i][0] = static_cast<int>(i);
    back[i][0] = EditOp::Deletion;
  }
  for (size_t j = 1; j <= H; ++j) {
    cost[0][j] = static_cast<int>(j);
    back[0][j] = EditOp::Insertion;
  }
  for (size_t i = 1; i <= R; ++i)
    for (size_t j = 1; j <= H; ++j) {
      bool eq = ref[i - 1] == hyp[j - 1];
      int diag = cost[i - 1][j - 1] + (eq ? 0 : 1);
      int del = cost[i - 1][j] + 1;
      int ins = cost[i][j - 1] + 1;
      // tie preference: match > substitution > deletion > insertion
      int best = diag;
      EditOp op = eq ? EditOp::Match : EditOp::Substitution;
      if (del < best) {
        best = del;
        op = EditOp::Deletion;
      }
      if (ins < best) {
        best = ins;
        op = EditOp::Insertion;
      }
      cost[i][j] = best;
      back[i][j] = op;
    }
  Alignment a;
  size_t i = R, j = H;
  std::vector<AlignedPair> rev;
  while (i > 0 || j > 0) {
    EditOp op = back[i][j];
    if (i == 0) op = EditOp::Insertion;
    if (j == 0) op = EditOp::Deletion;
    switch (op) {
      case EditOp::Match:
      case EditOp::Substitution:
        rev.push_back({op, ref[i - 1], hyp[j - 1]});
        --i;
        --j;
        break;
      case EditOp::Deletion:
        rev.push_back({op, ref[i - 1], std::nullopt});
        --i;
        break;
      case EditOp::Insertion:
        rev.push_back({op, std::nullopt, hyp[j - 1]});
        --j;
        break;
    }
  }
  a.ops.assign(rev.rbegin(), rev.rend());
  for (const auto& p : a.ops) switch (p.op) {
      case EditOp::Match: ++a.matches; break;
      case EditOp::Substitution: ++a.substitutions; break;
      case EditOp::Insertion: ++a.insertions; break;
      case EditOp::Deletion: ++a.deletions; break;
    }
  return a;
}

TransliterationLexicon load_lexicon_tsv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("lexicon: cannot open " + path);
  TransliterationLexicon lex;
  std::string line;
  size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw std::runtime_error("lexicon: missing tab on line " +
                               std::to_string(lineno));
    std::string en = line.substr(0, tab);
    std::string native = line.substr(tab + 1);
    if (script_of(en) != Script::Latin)
      throw std::runtime_error("lexicon: non-Latin key on line " +
                               std::to_string(lineno));
    Script ns = script_of(native);
    if (ns != Script::Devanagari && ns != Script::Bengali)
      throw std::runtime_error("lexicon: value must be native script, line " +
                               std::to_string(lineno));
    lex[en].insert(native);
  }
  return lex;
}

ScoreReport score_corpus(const std::map<std::string, std::string>& refs,
                         const std::map<std::string, std::string>& hyps,
                         const TransliterationLexicon& lexicon) {
  ScoreReport rep;
  for (const auto& [id, ref_text] : refs) {
    std::vector<std::string> ref = split_on_spaces(ref_text);
    std::vector<std::string> hyp;
    auto it = hyps.find(id);
    if (it == hyps.end())
      rep.missing_hyp_ids.push_back(id);
    else
      hyp = split_on_spaces(it->second);
    Alignment a = align(ref, hyp);
    int64_t forgiven = 0;
    for (const auto& p : a.ops) {
      if (p.op != EditOp::Substitution) continue;
      // forgiveness applies to English (Latin-script) reference words only
      if (script_of(*p.ref_word) != Script::Latin) continue;
      auto lx = lexicon.find(*p.ref_word);
      if (lx != lexicon.end() && lx->second.count(*p.hyp_word)) ++forgiven;
    }
    rep.ref_words += static_cast<int64_t>(ref.size());
    rep.substitutions += a.substitutions;
    rep.deletions += a.deletions;
    rep.insertions += a.insertions;
    rep.forgiven += forgiven;
    rep.per_utt.push_back({id, static_cast<int64_t>(ref.size()), a.substitutions,
                           a.deletions, a.insertions, forgiven});
  }
  if (rep.ref_words > 0) {
    double errors = static_cast<double>(rep.substitutions + rep.deletions + rep.insertions);
    rep.wer = 100.0 * errors / static_cast<double>(rep.ref_words);
    rep.t_wer = 100.0 * (errors - static_cast<double>(rep.forgiven)) /
                static_cast<double>(rep.ref_words);
  }
  return rep;
}

std::string ScoreReport::to_text() const {
  std::ostringstream os;
  os.precision(2);
  os << std::fixed;
  os << "N=" << ref_words << " S=" << substitutions << " D=" << deletions
     << " I=" << insertions << " forgiven=" << forgiven << "\n";
  os << "WER=" << wer << "% T-WER=" << t_wer << "%\n";
  if (!missing_hyp_ids.empty()) {
    os << "missing hypotheses:";
    for (const auto& id : missing_hyp_ids) os << " " << id;
    os << "\n";
  }
  for (const auto& u : per_utt)
    os << u.utt_id << " N=" << u.ref_words << " S=" << u.substitutions
       << " D=" << u.deletions << " I=" << u.insertions << "\n";
  return os.str();
}

std::string ScoreReport::to_json() const {
  std::ostringstream os;
  os.precision(6);
  os << "{\"ref_words\":" << ref_words << ",\"substitutions\":" << substitutions
     << ",\"deletions\":" << deletions << ",\"insertions\":" << insertions
     << ",\"forgiven\":" << forgiven << ",\"wer\":" << wer
     << ",\"t_wer\":" << t_wer << ",\"missing\":[";
  for (size_t i = 0; i < missing_hyp_ids.size(); ++i)
    os << (i ? "," : "") << "\"" << missing_hyp_ids[i] << "\"";
  os << "]}";
  return os.str();
}

}  // namespace csasr
