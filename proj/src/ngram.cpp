#include "csasr/ngram.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "csasr/scoring.hpp"

namespace csasr {

namespace {
constexpr double kLogZero = -99.0;  // conventional "effectively impossible"
}

int64_t NgramCounts::get(const std::vector<std::string>& gram) const {
  if (gram.empty() || gram.size() > tables.size()) return 0;
  const auto& t = tables[gram.size() - 1];
  auto it = t.find(gram);
  return it == t.end() ? 0 : it->second;
}

NgramCounts count_ngrams(const std::vector<std::string>& corpus_lines, int order,
                         int64_t unk_max_count) {
  if (order < 1) throw std::runtime_error("ngram: order must be >= 1");
  NgramCounts c;
  c.order = order;
  c.tables.resize(order);

  std::map<std::string, int64_t> word_freq;
  std::vector<std::vector<std::string>> sentences;
  sentences.reserve(corpus_lines.size());
  for (const auto& line : corpus_lines) {
    sentences.push_back(split_on_spaces(line));
    for (const auto& w : sentences.back()) ++word_freq[w];
  }

  std::set<std::string> vocab = {kEos, kUnk};
  for (const auto& [w, f] : word_freq)
    if (f > unk_max_count) vocab.insert(w);

  for (auto& sent : sentences) {
    std::vector<std::string> framed;
    framed.reserve(sent.size() + 2);
    framed.push_back(kBos);
    for (auto& w : sent) framed.push_back(vocab.count(w) ? w : kUnk);
    framed.push_back(kEos);
    for (int n = 1; n <= order; ++n)
      for (size_t i = 0; i + n <= framed.size(); ++i)
        ++c.tables[n - 1][std::vector<std::string>(framed.begin() + i,
                                                   framed.begin() + i + n)];
  }
  c.vocab.assign(vocab.begin(), vocab.end());
  return c;
}

namespace {

struct Discounts {
  double d[4] = {0.0, 0.0, 0.0, 0.0};  // d[k] applies to count k, d[3] to >=3
  double of(int64_t count) const { return d[std::min<int64_t>(count, 3)]; }
};

// Chen-Goodman modified discounts from count-of-counts; degenerate statistics
// fall back to a flat 0.75.
Discounts discounts_for(const std::map<std::vector<std::string>, int64_t>& table,
                        std::vector<std::string>* warnings, int order_1based) {
  int64_t n[5] = {0, 0, 0, 0, 0};
  for (const auto& [g, cnt] : table)
    if (cnt >= 1 && cnt <= 4) ++n[cnt];
  Discounts d;
  bool ok = n[1] > 0 && n[2] > 0 && n[3] > 0 && n[4] > 0;
  if (ok) {
    double y = static_cast<double>(n[1]) / (n[1] + 2.0 * n[2]);
    d.d[1] = 1.0 - 2.0 * y * n[2] / n[1];
    d.d[2] = 2.0 - 3.0 * y * n[3] / n[2];
    d.d[3] = 3.0 - 4.0 * y * n[4] / n[3];
    ok = d.d[1] > 0 && d.d[2] > 0 && d.d[3] > 0;
  }
  if (!ok) {
    d.d[1] = d.d[2] = d.d[3] = 0.75;
    warnings->push_back("order " + std::to_string(order_1based) +
                        ": degenerate count-of-counts, using discount 0.75");
  }
  return d;
}

}  // namespace

ArpaModel estimate(const NgramCounts& counts, Smoothing smoothing) {
  if (counts.tables.empty() || counts.tables[0].empty())
    throw std::runtime_error("ngram: empty counts");
  const int N = counts.order;
  ArpaModel m;
  m.order = N;
  m.tables.resize(N);
  m.vocab = counts.vocab;

  if (smoothing == Smoothing::Mle) {
    // Unigram denominator: all tokens except <s>.
    int64_t total = 0;
    for (const auto& [g, cnt] : counts.tables[0])
      if (g[0] != kBos) total += cnt;
    for (const auto& [g, cnt] : counts.tables[0]) {
      double p = g[0] == kBos ? 0.0 : static_cast<double>(cnt) / total;
      m.tables[0][g].logp = p > 0 ? std::log10(p) : kLogZero;
    }
    if (!m.tables[0].count({kUnk})) m.tables[0][{kUnk}].logp = kLogZero;
    for (int n = 2; n <= N; ++n) {
      for (const auto& [g, cnt] : counts.tables[n - 1]) {
        std::vector<std::string> h(g.begin(), g.end() - 1);
        int64_t ch = counts.get(h);
        m.tables[n - 1][g].logp =
            std::log10(static_cast<double>(cnt) / static_cast<double>(ch));
        // No smoothing means no backoff mass; record an explicit ~zero weight
        // so stored contexts still normalize.
        auto& ctx = m.tables[n - 2][h];
        ctx.backoff = kLogZero;
        ctx.has_backoff = true;
      }
    }
    return m;
  }

  // Adjusted counts: raw at the highest order; continuation counts below,
  // except n-grams starting with <s>, which cannot be extended to the left.
  std::vector<std::map<std::vector<std::string>, int64_t>> adj(N);
  adj[N - 1] = counts.tables[N - 1];
  for (int n = N - 1; n >= 1; --n) {
    for (const auto& [g, cnt] : adj[n]) {
      std::vector<std::string> suffix(g.begin() + 1, g.end());
      ++adj[n - 1][suffix];
    }
    for (const auto& [g, cnt] : counts.tables[n - 1])
      if (g[0] == kBos) adj[n - 1][g] = cnt;
  }

  std::vector<Discounts> disc(N);
  for (int n = 1; n <= N; ++n)
    disc[n - 1] = discounts_for(adj[n - 1], &m.warnings, n);

  // Unigrams: interpolate with the uniform distribution over the
  // predictable vocabulary.
  {
    const Discounts& D = disc[0];
    double total = 0.0;
    int64_t nk[4] = {0, 0, 0, 0};
    for (const auto& [g, cnt] : adj[0]) {
      if (g[0] == kBos) continue;
      total += static_cast<double>(cnt);
      ++nk[std::min<int64_t>(cnt, 3)];
    }
    double gamma = (D.d[1] * nk[1] + D.d[2] * nk[2] + D.d[3] * nk[3]) / total;
    double uniform = 1.0 / static_cast<double>(m.vocab.size());
    for (const auto& w : m.vocab) {
      auto it = adj[0].find({w});
      double a = it == adj[0].end() ? 0.0 : static_cast<double>(it->second);
      double p = std::max(a - D.of(static_cast<int64_t>(a)), 0.0) / total +
                 gamma * uniform;
      m.tables[0][{w}].logp = std::log10(p);
    }
    m.tables[0][{kBos}].logp = kLogZero;
  }

  for (int n = 2; n <= N; ++n) {
    const Discounts& D = disc[n - 1];
    const auto& table = adj[n - 1];
    // Grams sharing a context are contiguous in the sorted map.
    for (auto it = table.begin(); it != table.end();) {
      std::vector<std::string> h(it->first.begin(), it->first.end() - 1);
      double denom = 0.0;
      double held = 0.0;  // discount mass withheld from this context
      auto run_end = it;
      while (run_end != table.end() &&
             std::equal(h.begin(), h.end(), run_end->first.begin()))
        ++run_end;
      for (auto g = it; g != run_end; ++g) {
        denom += static_cast<double>(g->second);
        held += D.of(g->second);
      }
      double gamma = held / denom;
      std::vector<std::string> hbar(h.begin() + 1, h.end());
      for (auto g = it; g != run_end; ++g) {
        std::vector<std::string> lower(hbar);
        lower.push_back(g->first.back());
        double plow = std::pow(10.0, m.tables[n - 2].at(lower).logp);
        double p =
            std::max(static_cast<double>(g->second) - D.of(g->second), 0.0) /
                denom +
            gamma * plow;
        m.tables[n - 1][g->first].logp = std::log10(p);
      }
      auto& ctx = m.tables[n - 2][h];
      ctx.backoff = std::log10(gamma);
      ctx.has_backoff = true;
      it = run_end;
    }
  }
  return m;
}

double ArpaModel::word_log10(const std::vector<std::string>& context,
                             const std::string& word) const {
  auto known = [&](const std::string& w) {
    return tables[0].count({w}) ? w : std::string(kUnk);
  };
  std::vector<std::string> h;
  size_t start = context.size() > static_cast<size_t>(order - 1)
                     ? context.size() - (order - 1)
                     : 0;
  for (size_t i = start; i < context.size(); ++i) h.push_back(known(context[i]));
  std::string w = known(word);

  double bo = 0.0;
  while (true) {
    std::vector<std::string> g(h);
    g.push_back(w);
    const auto& t = tables[g.size() - 1];
    auto it = t.find(g);
    if (it != t.end()) return bo + it->second.logp;
    if (h.empty()) throw std::runtime_error("ngram: <unk> missing from model");
    auto ctx = tables[h.size() - 1].find(h);
    if (ctx != tables[h.size() - 1].end() && ctx->second.has_backoff)
      bo += ctx->second.backoff;
    h.erase(h.begin());
  }
}

double ArpaModel::sentence_log10(const std::vector<std::string>& words) const {
  std::vector<std::string> ctx = {kBos};
  double total = 0.0;
  for (size_t i = 0; i <= words.size(); ++i) {
    std::string w = i < words.size() ? words[i] : std::string(kEos);
    total += word_log10(ctx, w);
    ctx.push_back(w);
  }
  return total;
}

double ArpaModel::context_mass(const std::vector<std::string>& context) const {
  double mass = 0.0;
  for (const auto& w : vocab) mass += std::pow(10.0, word_log10(context, w));
  return mass;
}

void arpa_write(const ArpaModel& m, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("arpa: cannot write " + path);
  os << "\\data\\\n";
  for (int n = 1; n <= m.order; ++n)
    os << "ngram " << n << "=" << m.tables[n - 1].size() << "\n";
  char buf[64];
  for (int n = 1; n <= m.order; ++n) {
    os << "\n\\" << n << "-grams:\n";
    for (const auto& [g, e] : m.tables[n - 1]) {
      std::snprintf(buf, sizeof buf, "%.6f", e.logp);
      os << buf << "\t";
      for (size_t i = 0; i < g.size(); ++i) os << (i ? " " : "") << g[i];
      if (e.has_backoff) {
        std::snprintf(buf, sizeof buf, "%.6f", e.backoff);
        os << "\t" << buf;
      }
      os << "\n";
    }
  }
  os << "\n\\end\\\n";
}

ArpaModel arpa_read(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("arpa: cannot open " + path);
  auto fail = [&](size_t lineno, const std::string& what) {
    throw std::runtime_error("arpa: " + path + ":" + std::to_string(lineno) +
                             ": " + what);
  };
  ArpaModel m;
  std::vector<size_t> declared;
  std::string line;
  size_t lineno = 0;
  // header
  bool in_data = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line == "\\data\\") {
      in_data = true;
      continue;
    }
    if (line.rfind("ngram ", 0) == 0) {
      if (!in_data) fail(lineno, "ngram count outside \\data\\");
      auto eq = line.find('=');
      if (eq == std::string::npos) fail(lineno, "malformed ngram count");
      declared.push_back(std::stoul(line.substr(eq + 1)));
      continue;
    }
    break;  // first section header
  }
  if (declared.empty()) fail(lineno, "missing \\data\\ header");
  m.order = static_cast<int>(declared.size());
  m.tables.resize(m.order);

  int current = 0;  // order of the section being read, 0 = none
  bool ended = false;
  do {
    if (line.empty()) continue;
    if (line == "\\end\\") {
      ended = true;
      break;
    }
    if (line.size() > 2 && line[0] == '\\' && line.back() == ':') {
      current = std::atoi(line.c_str() + 1);
      if (current < 1 || current > m.order) fail(lineno, "unexpected section");
      continue;
    }
    if (current == 0) fail(lineno, "entry outside any n-gram section");
    std::vector<std::string> fields;
    std::istringstream fs(line);
    std::string f;
    while (std::getline(fs, f, '\t')) fields.push_back(f);
    if (fields.size() < 2 || fields.size() > 3) fail(lineno, "bad field count");
    ArpaEntry e;
    try {
      e.logp = std::stod(fields[0]);
      if (fields.size() == 3) {
        e.backoff = std::stod(fields[2]);
        e.has_backoff = true;
      }
    } catch (const std::exception&) {
      fail(lineno, "non-numeric field");
    }
    std::vector<std::string> gram = split_on_spaces(fields[1]);
    if (static_cast<int>(gram.size()) != current) fail(lineno, "wrong gram length");
    m.tables[current - 1][gram] = e;
  } while (++lineno, std::getline(is, line));
  if (!ended) fail(lineno, "missing \\end\\");
  for (int n = 1; n <= m.order; ++n)
    if (m.tables[n - 1].size() != declared[n - 1])
      fail(lineno, "section " + std::to_string(n) + " has " +
                       std::to_string(m.tables[n - 1].size()) + " entries, header says " +
                       std::to_string(declared[n - 1]));
  for (const auto& [g, e] : m.tables[0])
    if (g[0] != kBos) m.vocab.push_back(g[0]);
  return m;
}

double perplexity(const ArpaModel& m, const std::vector<std::string>& corpus_lines) {
  double total = 0.0;
  int64_t tokens = 0;
  for (const auto& line : corpus_lines) {
    std::vector<std::string> ws = split_on_spaces(line);
    total += m.sentence_log10(ws);
    tokens += static_cast<int64_t>(ws.size()) + 1;  // </s> counts
  }
  if (tokens == 0) return 1.0;
  return std::pow(10.0, -total / static_cast<double>(tokens));
}

}  // namespace csasr
