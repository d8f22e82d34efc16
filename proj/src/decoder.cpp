#include "csasr/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "csasr/scoring.hpp"
#include "csasr/text.hpp"

namespace csasr {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// deterministic ordering among equal scores: shorter first, then lexicographic
bool better(const Hypothesis& a, const Hypothesis& b) {
  if (a.combined != b.combined) return a.combined > b.combined;
  if (a.tokens.size() != b.tokens.size()) return a.tokens.size() < b.tokens.size();
  return a.tokens < b.tokens;
}
}  // namespace

void DecodeConfig::validate() const {
  if (beam_size < 1) throw std::invalid_argument("decode: beam_size >= 1");
  if (nbest_size < 1 || nbest_size > beam_size)
    throw std::invalid_argument("decode: need 1 <= nbest <= beam");
  if (ctc_decode_weight < 0.0 || ctc_decode_weight > 1.0)
    throw std::invalid_argument("decode: ctc weight outside [0,1]");
  if (max_length_ratio <= 0.0)
    throw std::invalid_argument("decode: max_length_ratio must be positive");
}

NBestList beam_search(const AttScorer& att, const CtcPrefixScorer* ctc,
                      int64_t enc_frames, int vocab_size, int eos,
                      const DecodeConfig& cfg, const std::vector<int>& banned) {
  cfg.validate();
  if (enc_frames < 1) throw std::invalid_argument("decode: empty encoder states");
  const double lam = ctc ? cfg.ctc_decode_weight : 0.0;
  const int64_t max_len = std::max<int64_t>(
      1, static_cast<int64_t>(cfg.max_length_ratio * double(enc_frames)));
  std::set<int> skip(banned.begin(), banned.end());
  skip.erase(eos);

  struct Live {
    Hypothesis hyp;            // combined holds the partial joint score
    CtcPrefixScorer::State st;
    bool ended = false;
  };
  Live root;
  if (ctc) root.st = ctc->initial();
  std::vector<Live> beam = {std::move(root)};
  NBestList finished;

  auto close = [&](const Live& l, const std::vector<double>& lp) {
    Hypothesis done = l.hyp;
    done.att_score += lp[eos];
    done.ctc_score = ctc ? ctc->score(l.st, eos, nullptr) : 0.0;
    done.combined = lam * done.ctc_score + (1.0 - lam) * done.att_score;
    if (std::isfinite(done.combined)) finished.push_back(std::move(done));
  };

  for (int64_t step = 0; step < max_len && !beam.empty(); ++step) {
    // eos competes with ordinary tokens for beam slots; beam 1 with
    // lambda=0 is then exactly greedy argmax decoding
    std::vector<Live> pool;
    for (Live& l : beam) {
      std::vector<double> lp = att(l.hyp.tokens);
      if (static_cast<int>(lp.size()) != vocab_size)
        throw std::invalid_argument("decode: scorer width mismatch");
      for (int c = 0; c < vocab_size; ++c) {
        if (skip.count(c)) continue;
        Live ext;
        ext.hyp = l.hyp;
        ext.st = l.st;
        ext.hyp.att_score += lp[c];
        if (c == eos) {
          ext.ended = true;
          ext.hyp.ctc_score = ctc ? ctc->score(l.st, eos, nullptr) : 0.0;
          ext.hyp.combined =
              lam * ext.hyp.ctc_score + (1.0 - lam) * ext.hyp.att_score;
        } else {
          ext.hyp.tokens.push_back(c);
          double ctc_prefix = 0.0;
          if (ctc) {
            ctc_prefix = ctc->score(l.st, c, &ext.st);
            if (ctc_prefix == kNegInf) continue;  // unreachable prefix
          }
          ext.hyp.combined =
              lam * ctc_prefix + (1.0 - lam) * ext.hyp.att_score;
        }
        if (std::isfinite(ext.hyp.combined)) pool.push_back(std::move(ext));
      }
    }
    std::sort(pool.begin(), pool.end(),
              [](const Live& a, const Live& b) { return better(a.hyp, b.hyp); });
    if (static_cast<int>(pool.size()) > cfg.beam_size)
      pool.resize(cfg.beam_size);
    beam.clear();
    for (Live& l : pool) {
      if (l.ended)
        finished.push_back(std::move(l.hyp));
      else
        beam.push_back(std::move(l));
    }
  }
  // hypotheses alive at the length cap are force-closed with eos
  for (Live& l : beam) close(l, att(l.hyp.tokens));

  std::sort(finished.begin(), finished.end(), better);
  NBestList out;
  std::set<std::vector<int>> seen;
  for (Hypothesis& h : finished) {
    if (!seen.insert(h.tokens).second) continue;
    h.am_rank = static_cast<int>(out.size());
    out.push_back(std::move(h));
    if (static_cast<int>(out.size()) == cfg.nbest_size) break;
  }
  return out;
}

double ctc_prefix_score(const Tensor& log_probs, const std::vector<int>& prefix,
                        bool complete, int blank) {
  const int eos_sentinel = static_cast<int>(log_probs.shape[1]) + 1;
  CtcPrefixScorer scorer(log_probs, blank, eos_sentinel);
  CtcPrefixScorer::State st = scorer.initial();
  double score = 0.0;
  for (int c : prefix) {
    CtcPrefixScorer::State next;
    score = scorer.score(st, c, &next);
    if (score == kNegInf) return kNegInf;
    st = std::move(next);
  }
  if (complete) return scorer.score(st, eos_sentinel, nullptr);
  return score;
}

NBestList rescore_nbest(const NBestList& nbest, const ArpaModel& lm, double beta,
                        const std::function<std::string(const std::vector<int>&)>& detok,
                        double word_reward) {
  NBestList out = nbest;
  for (size_t i = 0; i < out.size(); ++i) {
    Hypothesis& h = out[i];
    h.am_rank = static_cast<int>(i);
    h.text = detok(h.tokens);
    std::vector<std::string> words = split_on_spaces(h.text);
    h.lm_log10 = lm.sentence_log10(words);
    h.combined = nbest[i].combined + beta * std::log(10.0) * h.lm_log10 +
                 word_reward * static_cast<double>(words.size());
  }
  std::sort(out.begin(), out.end(), better);
  return out;
}

NBestList decode_utterance(ConformerModel& model, const Var& feats,
                           const DecodeConfig& cfg) {
  Rng rng(0);  // eval mode: never consulted
  Var enc = model.encode(feats, false, rng);
  SpecialIds sp;
  const int vocab = static_cast<int>(model.config().vocab_size);

  Tensor ctc_lp = model.ctc_log_probs(enc)->value;
  CtcPrefixScorer scorer(ctc_lp, sp.blank, sp.eos);

  AttScorer att = [&](const std::vector<int>& prefix) {
    std::vector<int> y_in = {sp.sos};
    y_in.insert(y_in.end(), prefix.begin(), prefix.end());
    Var logits = model.decoder_forward(enc, y_in, false, rng);
    Var lp = log_softmax(logits, 1);
    const int64_t last = lp->value.shape[0] - 1;
    std::vector<double> row(vocab);
    for (int v = 0; v < vocab; ++v) row[v] = lp->value.data[last * vocab + v];
    return row;
  };

  bool use_ctc = cfg.ctc_decode_weight > 0.0;
  NBestList nbest = beam_search(att, use_ctc ? &scorer : nullptr,
                                enc->value.shape[0], vocab, sp.eos, cfg,
                                {sp.blank, sp.pad, sp.sos});
  return nbest;
}

void write_nbest(const std::string& path,
                 const std::map<std::string, NBestList>& lists) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("nbest: cannot write " + path);
  os.precision(12);
  for (const auto& [utt, nbest] : lists)
    for (size_t r = 0; r < nbest.size(); ++r) {
      const Hypothesis& h = nbest[r];
      os << utt << "\t" << r << "\t" << h.att_score << "\t" << h.ctc_score
         << "\t" << h.lm_log10 << "\t" << h.combined << "\t";
      for (size_t i = 0; i < h.tokens.size(); ++i)
        os << (i ? " " : "") << h.tokens[i];
      os << "\t" << h.text << "\n";
    }
}

std::map<std::string, NBestList> read_nbest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("nbest: cannot open " + path);
  std::map<std::string, NBestList> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream fs(line);
    std::string part;
    while (std::getline(fs, part, '\t')) f.push_back(part);
    if (f.size() < 7 || f.size() > 8)
      throw std::runtime_error("nbest: bad record at line " +
                               std::to_string(lineno));
    Hypothesis h;
    h.am_rank = std::stoi(f[1]);
    h.att_score = std::stod(f[2]);
    h.ctc_score = std::stod(f[3]);
    h.lm_log10 = std::stod(f[4]);
    h.combined = std::stod(f[5]);
    for (const std::string& t : split_on_spaces(f[6]))
      h.tokens.push_back(std::stoi(t));
    if (f.size() == 8) h.text = f[7];
    out[f[0]].push_back(std::move(h));
  }
  return out;
}

}  // namespace csasr
