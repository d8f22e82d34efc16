#include "csasr/experiment.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "csasr/decoder.hpp"
#include "csasr/ngram.hpp"
#include "csasr/scoring.hpp"
#include "csasr/text.hpp"
#include "csasr/trainer.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace csasr {

// ---- manifest ----

Manifest parse_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest: " + path);
  Manifest m;
  std::map<std::string, int> seen;  // utt_id -> line
  std::string line;
  int lineno = 0;
  auto fail = [&](const std::string& msg) {
    throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      fail(std::string("malformed JSON: ") + e.what());
    }
    for (const char* f : {"utt_id", "wav", "duration", "text", "lang"})
      if (!j.contains(f)) fail(std::string("missing field '") + f + "'");
    Utterance u;
    try {
      u.id = j.at("utt_id").get<std::string>();
      u.wav = j.at("wav").get<std::string>();
      u.duration = j.at("duration").get<double>();
      u.text = j.at("text").get<std::string>();
      u.source = j.at("lang").get<std::string>();
    } catch (const json::exception& e) {
      fail(std::string("bad field type: ") + e.what());
    }
    if (u.duration <= 0) fail("duration must be > 0");
    if (u.source != "native" && u.source != "nonnative" && u.source != "cs")
      fail("lang must be one of native/nonnative/cs, got '" + u.source + "'");
    auto it = seen.find(u.id);
    if (it != seen.end())
      fail("duplicate utt_id '" + u.id + "' (first seen at line " +
           std::to_string(it->second) + ")");
    seen[u.id] = lineno;
    m.push_back(std::move(u));
  }
  return m;
}

void write_manifest(const std::string& path, const Manifest& m) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest: " + path);
  for (const auto& u : m) {
    json j{{"utt_id", u.id},     {"wav", u.wav}, {"duration", u.duration},
           {"text", u.text},     {"lang", u.source}};
    out << j.dump() << "\n";
  }
}

std::map<std::string, double> manifest_hours(const Manifest& m) {
  std::map<std::string, double> h;
  for (const auto& u : m) h[u.source] += u.duration / 3600.0;
  return h;
}

// ---- config ----

namespace {

// Every key the pipeline reads; parsing rejects anything else.
const std::vector<std::string>& known_keys() {
  static const std::vector<std::string> keys = {
      "data.native", "data.nonnative", "data.cs", "data.dev_every",
      "features.n_mels", "features.window_ms", "features.hop_ms",
      "features.n_fft", "features.fmin", "features.fmax",
      "bpe.vocab_size",
      "lm.order", "lm.smoothing",
      "model.d_model", "model.attention_heads", "model.encoder_layers",
      "model.decoder_layers", "model.ff_units", "model.conv_kernel",
      "model.subsample_channels", "model.dropout", "model.ctc_weight",
      "model.label_smoothing",
      "mix.variant", "mix.cs_fraction", "mix.seed", "mix.subset_hours",
      "mix.native_hours", "mix.nonnative_hours", "mix.cs_hours",
      "pretrain.epochs", "pretrain.batch_size", "pretrain.factor",
      "pretrain.warmup", "pretrain.seed", "pretrain.max_steps",
      "pretrain.frozen",
      "finetune.epochs", "finetune.max_steps", "finetune.patience",
      "finetune.seed",
      "decode.beam", "decode.nbest", "decode.ctc_weight", "decode.lm_weight",
      "decode.word_reward", "decode.max_length_ratio",
      "score.lexicon",
  };
  return keys;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ','))
    if (!trim(part).empty()) out.push_back(trim(part));
  return out;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_string(const std::string& text) {
  ExperimentConfig cfg;
  std::stringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config line " + std::to_string(lineno) +
                               ": expected key=value, got '" + t + "'");
    cfg.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return from_string(ss.str());
  } catch (const std::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  const auto& keys = known_keys();
  if (std::find(keys.begin(), keys.end(), key) == keys.end())
    throw std::runtime_error("unknown config key '" + key + "'");
  kv_[key] = value;
}

std::string ExperimentConfig::get(const std::string& key,
                                  const std::string& def) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? def : it->second;
}

double ExperimentConfig::get_num(const std::string& key, double def) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return def;
  try {
    size_t pos;
    double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("config key '" + key + "': not a number: '" +
                             it->second + "'");
  }
}

int64_t ExperimentConfig::get_int(const std::string& key, int64_t def) const {
  double v = get_num(key, double(def));
  int64_t i = int64_t(std::llround(v));
  if (double(i) != v)
    throw std::runtime_error("config key '" + key + "': not an integer");
  return i;
}

std::string ExperimentConfig::canonical(
    const std::vector<std::string>& prefixes) const {
  std::ostringstream out;
  for (const auto& [k, v] : kv_)  // std::map iterates sorted
    for (const auto& p : prefixes)
      if (k.rfind(p + ".", 0) == 0) {
        out << k << "=" << v << "\n";
        break;
      }
  return out.str();
}

// ---- toy dataset ----

const std::vector<ToyToken>& toy_tokens() {
  static const std::vector<ToyToken> toks = {
      {"bip", 400.0, true},    {"bop", 550.0, true},
      {"dip", 700.0, true},    {"dap", 850.0, true},
      {"रा", 1000.0, false},   {"गा", 1150.0, false},
      {"मा", 1300.0, false},   {"पा", 1450.0, false},
  };
  return toks;
}

namespace {

constexpr int kToySr = 16000;
constexpr double kBurstSec = 0.10;
constexpr double kGapSec = 0.06;
constexpr double kEdgeSec = 0.05;

AudioBuffer render_toy(const std::vector<int>& token_ids) {
  const auto& toks = toy_tokens();
  int burst = int(kBurstSec * kToySr), gap = int(kGapSec * kToySr),
      edge = int(kEdgeSec * kToySr);
  AudioBuffer a;
  a.sample_rate = kToySr;
  a.samples.assign(edge, 0.0);
  for (size_t i = 0; i < token_ids.size(); ++i) {
    if (i) a.samples.insert(a.samples.end(), gap, 0.0);
    double f = toks[size_t(token_ids[i])].freq_hz;
    for (int n = 0; n < burst; ++n) {
      double w = 0.5 * (1.0 - std::cos(2.0 * M_PI * n / (burst - 1)));
      a.samples.push_back(0.25 * w *
                          std::sin(2.0 * M_PI * f * n / kToySr));
    }
  }
  a.samples.insert(a.samples.end(), edge, 0.0);
  return a;
}

std::vector<int> toy_utt_tokens(Rng& rng, const std::string& lang) {
  int n = 3 + int(rng.randint(4));
  std::vector<int> ids;
  for (int i = 0; i < n; ++i) {
    if (lang == "native") ids.push_back(int(rng.randint(4)));
    else if (lang == "nonnative") ids.push_back(4 + int(rng.randint(4)));
    else ids.push_back(int(rng.randint(8)));
  }
  if (lang == "cs") {
    // guarantee both languages appear
    bool a = false, b = false;
    for (int id : ids) (id < 4 ? a : b) = true;
    if (!a) ids.back() = int(rng.randint(4));
    if (!b) ids.back() = 4 + int(rng.randint(4));
  }
  return ids;
}

}  // namespace

void make_toy_dataset(const std::string& out_dir, uint64_t seed, int size) {
  if (size <= 0) throw std::invalid_argument("toy dataset: size must be > 0");
  fs::create_directories(fs::path(out_dir) / "wav");
  Rng rng(seed);
  for (const std::string lang : {"native", "nonnative", "cs"}) {
    Manifest m;
    for (int i = 0; i < size; ++i) {
      std::vector<int> ids = toy_utt_tokens(rng, lang);
      AudioBuffer a = render_toy(ids);
      Utterance u;
      u.id = "toy-" + lang + "-" + std::to_string(i);
      u.wav = (fs::path(out_dir) / "wav" / (u.id + ".wav")).string();
      u.duration = double(a.samples.size()) / a.sample_rate;
      std::string text;
      for (size_t k = 0; k < ids.size(); ++k)
        text += (k ? " " : "") + toy_tokens()[size_t(ids[k])].word;
      u.text = text;
      u.source = lang;
      save_wav(u.wav, a);
      m.push_back(std::move(u));
    }
    write_manifest((fs::path(out_dir) / (lang + ".jsonl")).string(), m);
  }
}

std::string matched_filter_transcribe(const AudioBuffer& audio) {
  const auto& toks = toy_tokens();
  int sr = audio.sample_rate;
  const std::vector<double>& s = audio.samples;
  // active-sample runs, closing sub-20ms dropouts (zero crossings of the tone)
  int close_gap = sr / 50, min_len = sr * 3 / 100;
  std::vector<std::pair<int, int>> runs;
  int start = -1, last_active = -1;
  for (int i = 0; i <= int(s.size()); ++i) {
    bool active = i < int(s.size()) && std::fabs(s[i]) > 1e-4;
    if (active) {
      if (start < 0) start = i;
      else if (i - last_active > close_gap) {
        runs.emplace_back(start, last_active + 1);
        start = i;
      }
      last_active = i;
    }
  }
  if (start >= 0) runs.emplace_back(start, last_active + 1);

  std::string text;
  for (auto [b, e] : runs) {
    if (e - b < min_len) continue;
    size_t best = 0;
    double best_pow = -1;
    for (size_t k = 0; k < toks.size(); ++k) {
      double w = 2.0 * M_PI * toks[k].freq_hz / sr, re = 0, im = 0;
      for (int n = b; n < e; ++n) {
        re += s[size_t(n)] * std::cos(w * (n - b));
        im += s[size_t(n)] * std::sin(w * (n - b));
      }
      double p = re * re + im * im;
      if (p > best_pow) { best_pow = p; best = k; }
    }
    text += (text.empty() ? "" : " ") + toks[best].word;
  }
  return text;
}

// ---- pipeline ----

namespace {

struct LockFile {
  std::string path;
  explicit LockFile(const std::string& p) : path(p) {
    int fd = ::open(p.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0)
      throw std::runtime_error("experiment directory is locked (" + p +
                               " exists); remove it if no other run owns it");
    ::close(fd);
  }
  ~LockFile() { ::unlink(path.c_str()); }
};

struct StageCtx {
  const ExperimentConfig& cfg;
  std::string exp;  // experiment root
  std::string dir;  // this stage's directory
};

std::string stage_path(const std::string& exp, const std::string& stage,
                       const std::string& file) {
  return (fs::path(exp) / stage / file).string();
}

void require_artifact(const std::string& path, const std::string& producer) {
  if (!fs::exists(path))
    throw std::runtime_error("missing required artifact: " + path +
                             " (run the '" + producer + "' stage first)");
}

Manifest load_pool(const ExperimentConfig& cfg, const std::string& key) {
  std::string path = cfg.get(key, "");
  if (path.empty())
    throw std::runtime_error("config key '" + key + "' is required");
  return parse_manifest(path);
}

bool is_dev(size_t index, int64_t dev_every) {
  return dev_every > 0 && (index % size_t(dev_every)) == size_t(dev_every) - 1;
}

// train/dev split of a pool, deterministic by manifest order
std::pair<Manifest, Manifest> split_pool(const Manifest& m, int64_t dev_every) {
  Manifest train, dev;
  for (size_t i = 0; i < m.size(); ++i)
    (is_dev(i, dev_every) ? dev : train).push_back(m[i]);
  return {train, dev};
}

LogMelConfig mel_config(const ExperimentConfig& cfg) {
  LogMelConfig mc;
  mc.n_mels = int(cfg.get_int("features.n_mels", 80));
  mc.window_ms = cfg.get_num("features.window_ms", 25.0);
  mc.hop_ms = cfg.get_num("features.hop_ms", 10.0);
  mc.n_fft = int(cfg.get_int("features.n_fft", 512));
  mc.fmin = cfg.get_num("features.fmin", 20.0);
  mc.fmax = cfg.get_num("features.fmax", 7600.0);
  return mc;
}

std::vector<std::string> norm_lines(const Manifest& m) {
  std::vector<std::string> lines;
  for (const auto& u : m) lines.push_back(normalize_transcript(u.text));
  return lines;
}

void stage_prepare(const StageCtx& c) {
  int64_t dev_every = c.cfg.get_int("data.dev_every", 10);
  LogMelConfig mc = mel_config(c.cfg);
  FeatureArchiveWriter writer(c.dir + "/feats");
  CmvnStats stats;
  std::ofstream tsv(c.dir + "/transcripts.tsv");
  for (const char* key : {"data.native", "data.nonnative", "data.cs"}) {
    Manifest m = load_pool(c.cfg, key);
    for (size_t i = 0; i < m.size(); ++i) {
      FeatureMatrix f = log_mel(load_wav(m[i].wav), mc);
      writer.write(m[i].id, f);
      bool dev = is_dev(i, dev_every);
      if (!dev) stats.accumulate(f);
      tsv << m[i].id << "\t" << m[i].source << "\t" << (dev ? "dev" : "train")
          << "\t" << normalize_transcript(m[i].text) << "\n";
    }
  }
  writer.close();
  stats.save(c.dir + "/cmvn.stats");
}

void stage_bpe(const StageCtx& c) {
  int64_t dev_every = c.cfg.get_int("data.dev_every", 10);
  int vocab = int(c.cfg.get_int("bpe.vocab_size", 0));
  if (vocab <= 0)
    throw std::runtime_error("config key 'bpe.vocab_size' is required");
  std::vector<std::string> lines;
  for (const char* key : {"data.native", "data.nonnative", "data.cs"}) {
    Manifest m = load_pool(c.cfg, key);
    auto [train, dev] = split_pool(m, dev_every);
    for (const auto& l : norm_lines(train)) lines.push_back(l);
  }
  BpeModel bpe = BpeModel::train(lines, vocab);
  bpe.save(c.dir + "/bpe.model");
}

void stage_lm(const StageCtx& c) {
  int64_t dev_every = c.cfg.get_int("data.dev_every", 10);
  int order = int(c.cfg.get_int("lm.order", 3));
  std::string smooth = c.cfg.get("lm.smoothing", "kneser_ney");
  std::vector<std::string> train_lines, dev_lines;
  for (const char* key : {"data.native", "data.nonnative", "data.cs"}) {
    Manifest m = load_pool(c.cfg, key);
    auto [train, dev] = split_pool(m, dev_every);
    for (const auto& l : norm_lines(train)) train_lines.push_back(l);
    for (const auto& l : norm_lines(dev)) dev_lines.push_back(l);
  }
  NgramCounts counts = count_ngrams(train_lines, order);
  Smoothing s;
  if (smooth == "kneser_ney") s = Smoothing::KneserNey;
  else if (smooth == "mle") s = Smoothing::Mle;
  else throw std::runtime_error("lm.smoothing must be kneser_ney or mle");
  ArpaModel lm = estimate(counts, s);
  arpa_write(lm, c.dir + "/lm.arpa");
  if (!dev_lines.empty()) {
    std::ofstream out(c.dir + "/ppl.txt");
    out << "dev_perplexity " << perplexity(lm, dev_lines) << "\n";
  }
}

ConformerConfig model_config(const ExperimentConfig& cfg, int vocab_size) {
  ConformerConfig mc;
  mc.feat_dim = cfg.get_int("features.n_mels", 80);
  mc.d_model = cfg.get_int("model.d_model", 512);
  mc.attention_heads = cfg.get_int("model.attention_heads", 4);
  mc.encoder_layers = cfg.get_int("model.encoder_layers", 8);
  mc.decoder_layers = cfg.get_int("model.decoder_layers", 4);
  mc.ff_units = cfg.get_int("model.ff_units", 2048);
  mc.conv_kernel = cfg.get_int("model.conv_kernel", 15);
  mc.subsample_channels = cfg.get_int("model.subsample_channels", 0);
  mc.dropout = cfg.get_num("model.dropout", 0.1);
  mc.ctc_weight = cfg.get_num("model.ctc_weight", 0.3);
  mc.label_smoothing = cfg.get_num("model.label_smoothing", 0.1);
  mc.vocab_size = vocab_size;
  mc.validate();
  return mc;
}

StageConfig pretrain_stage_config(const ExperimentConfig& cfg) {
  StageConfig sc;
  sc.stage = "pretrain";
  sc.epochs = int(cfg.get_int("pretrain.epochs", 60));
  sc.batch_size = int(cfg.get_int("pretrain.batch_size", 64));
  sc.schedule.factor = cfg.get_num("pretrain.factor", 5.0);
  sc.schedule.d_model = cfg.get_int("model.d_model", 512);
  sc.schedule.warmup_steps = cfg.get_int("pretrain.warmup", 20000);
  sc.seed = uint64_t(cfg.get_int("pretrain.seed", 1));
  sc.max_steps = cfg.get_int("pretrain.max_steps", 0);
  sc.frozen_prefixes = split_commas(cfg.get("pretrain.frozen", ""));
  sc.alpha = cfg.get_num("model.ctc_weight", 0.3);
  return sc;
}

// feature + token assembly shared by the training stages
struct Assembled {
  std::vector<TrainItem> items;
};

Assembled assemble(const Manifest& m, const FeatureArchiveReader& feats,
                   const CmvnStats& stats, const BpeModel& bpe) {
  Assembled a;
  for (const auto& u : m) {
    if (!feats.has(u.id))
      throw std::runtime_error("utterance '" + u.id +
                               "' missing from feature archive; re-run prepare");
    TrainItem it;
    it.id = u.id;
    it.feats = cmvn_apply(feats.read(u.id), stats).frames;
    it.tokens = bpe.encode(normalize_transcript(u.text)).ids;
    a.items.push_back(std::move(it));
  }
  return a;
}

MixSpec mix_spec(const ExperimentConfig& cfg) {
  MixSpec spec;
  std::string variant = cfg.get("mix.variant", "ev");
  if (variant == "ev") spec.variant = MixSpec::Variant::Ev;
  else if (variant == "sv") spec.variant = MixSpec::Variant::Sv;
  else throw std::runtime_error("mix.variant must be ev or sv");
  spec.cs_fraction = cfg.get_num("mix.cs_fraction", 0.5);
  spec.seed = uint64_t(cfg.get_int("mix.seed", 0));
  for (const auto& h : split_commas(cfg.get("mix.subset_hours", "")))
    spec.nonnative_subset_hours.push_back(std::stod(h));
  spec.native_target = cfg.get_num("mix.native_hours", -1.0);
  spec.nonnative_target = cfg.get_num("mix.nonnative_hours", -1.0);
  spec.cs_target = cfg.get_num("mix.cs_hours", -1.0);
  return spec;
}

void run_training_stage(const StageCtx& c, bool finetune) {
  require_artifact(stage_path(c.exp, "prepare", "feats.idx"), "prepare");
  require_artifact(stage_path(c.exp, "bpe", "bpe.model"), "bpe");
  FeatureArchiveReader feats(stage_path(c.exp, "prepare", "feats"));
  CmvnStats stats = CmvnStats::load(stage_path(c.exp, "prepare", "cmvn.stats"));
  BpeModel bpe = BpeModel::load(stage_path(c.exp, "bpe", "bpe.model"));

  int64_t dev_every = c.cfg.get_int("data.dev_every", 10);
  auto [cs_train, cs_dev] = split_pool(load_pool(c.cfg, "data.cs"), dev_every);

  Manifest train_manifest;
  if (finetune) {
    train_manifest = cs_train;
  } else {
    auto [nat_train, nat_dev] =
        split_pool(load_pool(c.cfg, "data.native"), dev_every);
    auto [non_train, non_dev] =
        split_pool(load_pool(c.cfg, "data.nonnative"), dev_every);
    MixPlan plan = build_mix_plan(nat_train, non_train, cs_train, mix_spec(c.cfg));
    train_manifest = plan.selected;
    json j{{"target_native", plan.target_native},
           {"target_nonnative", plan.target_nonnative},
           {"target_cs", plan.target_cs},
           {"native_hours", plan.native_hours},
           {"nonnative_hours", plan.nonnative_hours},
           {"cs_hours", plan.cs_hours},
           {"utterances", plan.selected.size()}};
    std::ofstream(c.dir + "/mix.json") << j.dump(2) << "\n";
  }

  StageConfig sc = pretrain_stage_config(c.cfg);
  std::string init;
  if (finetune) {
    sc = StageConfig::finetune_from(sc);
    sc.epochs = int(c.cfg.get_int("finetune.epochs", 20));
    sc.max_steps = c.cfg.get_int("finetune.max_steps", 0);
    sc.early_stop_patience = int(c.cfg.get_int("finetune.patience", 3));
    sc.seed = uint64_t(c.cfg.get_int("finetune.seed", 1));
    init = stage_path(c.exp, "pretrain", "best.ckpt");
    require_artifact(init, "pretrain");
  }

  ParamStore ps;
  Rng rng(sc.seed);
  ConformerModel model(model_config(c.cfg, bpe.vocab_size()), ps, rng);
  Trainer trainer(model, ps, sc);
  trainer.detokenize = [bpe](const std::vector<int>& ids) {
    return bpe.decode(TokenSequence{ids, false});
  };
  Assembled train = assemble(train_manifest, feats, stats, bpe);
  Assembled dev = assemble(cs_dev, feats, stats, bpe);
  trainer.run(train.items, dev.items, c.dir, init);
}

void stage_decode(const StageCtx& c) {
  require_artifact(stage_path(c.exp, "prepare", "feats.idx"), "prepare");
  require_artifact(stage_path(c.exp, "bpe", "bpe.model"), "bpe");
  std::string ckpt = stage_path(c.exp, "finetune", "best.ckpt");
  if (!fs::exists(ckpt)) ckpt = stage_path(c.exp, "pretrain", "best.ckpt");
  require_artifact(ckpt, "pretrain (or finetune)");

  FeatureArchiveReader feats(stage_path(c.exp, "prepare", "feats"));
  CmvnStats stats = CmvnStats::load(stage_path(c.exp, "prepare", "cmvn.stats"));
  BpeModel bpe = BpeModel::load(stage_path(c.exp, "bpe", "bpe.model"));

  ParamStore ps;
  Rng rng(1);
  ConformerModel model(model_config(c.cfg, bpe.vocab_size()), ps, rng);
  ps.load_checkpoint(ckpt);

  DecodeConfig dc;
  dc.beam_size = int(c.cfg.get_int("decode.beam", 10));
  dc.nbest_size = int(c.cfg.get_int("decode.nbest", 10));
  dc.ctc_decode_weight = c.cfg.get_num("decode.ctc_weight", 0.3);
  dc.lm_weight = c.cfg.get_num("decode.lm_weight", 0.3);
  dc.word_reward = c.cfg.get_num("decode.word_reward", 0.0);
  dc.max_length_ratio = c.cfg.get_num("decode.max_length_ratio", 1.0);
  dc.validate();

  ArpaModel lm;
  bool use_lm = dc.lm_weight != 0.0;
  if (use_lm) {
    require_artifact(stage_path(c.exp, "lm", "lm.arpa"), "lm");
    lm = arpa_read(stage_path(c.exp, "lm", "lm.arpa"));
  }
  auto detok = [&bpe](const std::vector<int>& ids) {
    return bpe.decode(TokenSequence{ids, false});
  };

  int64_t dev_every = c.cfg.get_int("data.dev_every", 10);
  auto [cs_train, cs_dev] = split_pool(load_pool(c.cfg, "data.cs"), dev_every);
  std::map<std::string, NBestList> lists;
  std::ofstream hyp(c.dir + "/hyp.tsv");
  for (const auto& u : cs_dev) {
    Tensor f = cmvn_apply(feats.read(u.id), stats).frames;
    NBestList nb = decode_utterance(model, make_var(f), dc);
    if (use_lm) nb = rescore_nbest(nb, lm, dc.lm_weight, detok, dc.word_reward);
    else
      for (auto& h : nb) h.text = detok(h.tokens);
    lists[u.id] = nb;
    hyp << u.id << "\t" << (nb.empty() ? "" : nb[0].text) << "\n";
  }
  write_nbest(c.dir + "/nbest.tsv", lists);
}

void stage_score(const StageCtx& c) {
  std::string hyp_path = stage_path(c.exp, "decode", "hyp.tsv");
  require_artifact(hyp_path, "decode");
  int64_t dev_every = c.cfg.get_int("data.dev_every", 10);
  auto [cs_train, cs_dev] = split_pool(load_pool(c.cfg, "data.cs"), dev_every);
  std::map<std::string, std::string> refs, hyps;
  for (const auto& u : cs_dev) refs[u.id] = normalize_transcript(u.text);
  std::ifstream in(hyp_path);
  std::string line;
  while (std::getline(in, line)) {
    size_t tab = line.find('\t');
    if (tab == std::string::npos) continue;
    hyps[line.substr(0, tab)] = line.substr(tab + 1);
  }
  TransliterationLexicon lex;
  std::string lex_path = c.cfg.get("score.lexicon", "");
  if (!lex_path.empty()) lex = load_lexicon_tsv(lex_path);
  ScoreReport report = score_corpus(refs, hyps, lex);
  std::ofstream(c.dir + "/report.txt") << report.to_text();
  std::ofstream(c.dir + "/report.json") << report.to_json() << "\n";
  std::cout << "score: WER " << report.wer << "% T-WER " << report.t_wer
            << "%\n";
}

struct StageDef {
  std::string name;
  std::vector<std::string> prefixes;  // config keys frozen with the stage
  std::function<void(const StageCtx&)> run;
};

const std::vector<StageDef>& stage_defs() {
  static const std::vector<StageDef> defs = {
      {"prepare", {"data", "features"}, stage_prepare},
      {"bpe", {"data", "bpe"}, stage_bpe},
      {"lm", {"data", "lm"}, stage_lm},
      {"pretrain",
       {"data", "features", "bpe", "model", "mix", "pretrain"},
       [](const StageCtx& c) { run_training_stage(c, false); }},
      {"finetune",
       {"data", "features", "bpe", "model", "mix", "pretrain", "finetune"},
       [](const StageCtx& c) { run_training_stage(c, true); }},
      {"decode",
       {"data", "features", "bpe", "model", "mix", "pretrain", "finetune",
        "decode", "lm"},
       stage_decode},
      {"score",
       {"data", "features", "bpe", "model", "mix", "pretrain", "finetune",
        "decode", "lm", "score"},
       stage_score},
  };
  return defs;
}

}  // namespace

const std::vector<std::string>& pipeline_stages() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& d : stage_defs()) n.push_back(d.name);
    return n;
  }();
  return names;
}

void run_pipeline(const ExperimentConfig& cfg, const std::string& exp_dir,
                  const std::vector<std::string>& stages, bool force) {
  for (const auto& s : stages)
    if (std::find(pipeline_stages().begin(), pipeline_stages().end(), s) ==
        pipeline_stages().end())
      throw std::runtime_error("unknown stage '" + s + "'");
  fs::create_directories(exp_dir);
  LockFile lock((fs::path(exp_dir) / ".lock").string());

  for (const auto& def : stage_defs()) {
    if (std::find(stages.begin(), stages.end(), def.name) == stages.end())
      continue;
    fs::path dir = fs::path(exp_dir) / def.name;
    std::string canon = cfg.canonical(def.prefixes);
    fs::path frozen_path = dir / "config.frozen";
    if (fs::exists(frozen_path)) {
      std::ifstream in(frozen_path);
      std::stringstream ss;
      ss << in.rdbuf();
      bool done = fs::exists(dir / ".done");
      if (ss.str() == canon && done && !force) {
        std::cout << "stage " << def.name << ": up to date, skipping\n";
        continue;
      }
      if (ss.str() != canon && !force)
        throw std::runtime_error(
            "stage " + def.name +
            ": config changed since this directory was produced; rerun with "
            "--force to overwrite");
      fs::remove_all(dir);
    }
    fs::create_directories(dir);
    std::ofstream(frozen_path) << canon;
    std::cout << "stage " << def.name << ": running\n";
    StageCtx ctx{cfg, exp_dir, dir.string()};
    def.run(ctx);
    std::ofstream(dir / ".done") << "ok\n";
  }
}

}  // namespace csasr
