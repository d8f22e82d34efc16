#include <filesystem>
#include <fstream>

#include "csasr/experiment.hpp"
#include "csasr/frontend.hpp"
#include "doctest.h"

using namespace csasr;
namespace fs = std::filesystem;

namespace {

std::string write_tmp(const std::string& name, const std::string& content) {
  fs::create_directories("t_cli");
  std::string path = "t_cli/" + name;
  std::ofstream(path) << content;
  return path;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// tiny end-to-end config over the toy dataset in `dir`
ExperimentConfig toy_config(const std::string& dir) {
  ExperimentConfig cfg = ExperimentConfig::from_string(R"(
data.native = )" + dir + R"(/native.jsonl
data.nonnative = )" + dir + R"(/nonnative.jsonl
data.cs = )" + dir + R"(/cs.jsonl
data.dev_every = 4
features.n_mels = 10
features.n_fft = 256
bpe.vocab_size = 40
lm.order = 2
model.d_model = 16
model.attention_heads = 2
model.encoder_layers = 1
model.decoder_layers = 1
model.ff_units = 16
model.conv_kernel = 3
model.subsample_channels = 4
model.dropout = 0
pretrain.epochs = 1
pretrain.batch_size = 8
pretrain.max_steps = 2
pretrain.factor = 1
pretrain.warmup = 100
finetune.epochs = 1
finetune.max_steps = 1
decode.beam = 2
decode.nbest = 2
decode.lm_weight = 0.3
)");
  return cfg;
}

}  // namespace

TEST_CASE("manifest parsing accepts valid lines and sums hours") {
  std::string p = write_tmp("ok.jsonl",
      R"({"utt_id":"a","wav":"a.wav","duration":360.0,"text":"hi","lang":"native"})"
      "\n"
      R"({"utt_id":"b","wav":"b.wav","duration":720.0,"text":"yo","lang":"cs"})"
      "\n");
  Manifest m = parse_manifest(p);
  REQUIRE(m.size() == 2);
  CHECK(m[0].id == "a");
  CHECK(m[1].duration == doctest::Approx(720.0));
  auto hours = manifest_hours(m);
  CHECK(hours["native"] == doctest::Approx(0.1));
  CHECK(hours["cs"] == doctest::Approx(0.2));
}

TEST_CASE("manifest parsing rejects bad input with line numbers") {
  std::string dup = write_tmp("dup.jsonl",
      R"({"utt_id":"a","wav":"a.wav","duration":1.0,"text":"x","lang":"cs"})" "\n"
      R"({"utt_id":"a","wav":"b.wav","duration":1.0,"text":"y","lang":"cs"})" "\n");
  CHECK_THROWS_WITH_AS(parse_manifest(dup),
                       doctest::Contains("duplicate utt_id 'a'"),
                       std::runtime_error);
  CHECK_THROWS_WITH_AS(parse_manifest(dup), doctest::Contains(":2:"),
                       std::runtime_error);

  std::string missing = write_tmp("missing.jsonl",
      R"({"utt_id":"a","wav":"a.wav","text":"x","lang":"cs"})" "\n");
  CHECK_THROWS_WITH_AS(parse_manifest(missing),
                       doctest::Contains("missing field 'duration'"),
                       std::runtime_error);

  std::string bad = write_tmp("bad.jsonl", "{not json\n");
  CHECK_THROWS_WITH_AS(parse_manifest(bad), doctest::Contains("malformed"),
                       std::runtime_error);

  std::string lang = write_tmp("lang.jsonl",
      R"({"utt_id":"a","wav":"a.wav","duration":1.0,"text":"x","lang":"en"})" "\n");
  CHECK_THROWS(parse_manifest(lang));
  std::string zero = write_tmp("zero.jsonl",
      R"({"utt_id":"a","wav":"a.wav","duration":0.0,"text":"x","lang":"cs"})" "\n");
  CHECK_THROWS_WITH_AS(parse_manifest(zero), doctest::Contains("duration"),
                       std::runtime_error);
}

TEST_CASE("manifest round trips through write_manifest") {
  Manifest m = {{"u1", "w.wav", "नमस्ते hello", 3.5, "cs"}};
  std::string p = "t_cli/rt.jsonl";
  fs::create_directories("t_cli");
  write_manifest(p, m);
  Manifest back = parse_manifest(p);
  REQUIRE(back.size() == 1);
  CHECK(back[0].id == m[0].id);
  CHECK(back[0].text == m[0].text);
  CHECK(back[0].duration == doctest::Approx(3.5));
}

TEST_CASE("config parses dotted keys and rejects unknown ones") {
  ExperimentConfig cfg = ExperimentConfig::from_string(
      "# comment\nmodel.d_model = 128\n\nmix.variant=sv\n");
  CHECK(cfg.get_int("model.d_model", 0) == 128);
  CHECK(cfg.get("mix.variant", "") == "sv");
  CHECK(cfg.get_int("model.encoder_layers", 8) == 8);  // default
  CHECK_THROWS_WITH_AS(ExperimentConfig::from_string("model.dmodel=1\n"),
                       doctest::Contains("unknown config key"),
                       std::runtime_error);
  CHECK_THROWS_WITH_AS(ExperimentConfig::from_string("model.d_model\n"),
                       doctest::Contains("key=value"), std::runtime_error);
  ExperimentConfig bad = ExperimentConfig::from_string("model.d_model=abc\n");
  CHECK_THROWS_WITH_AS(bad.get_int("model.d_model", 0),
                       doctest::Contains("not a number"), std::runtime_error);
}

TEST_CASE("canonical serialization is sorted and prefix-scoped") {
  ExperimentConfig cfg = ExperimentConfig::from_string(
      "model.d_model=16\nmix.variant=ev\nmodel.attention_heads=2\n");
  CHECK(cfg.canonical({"model"}) ==
        "model.attention_heads=2\nmodel.d_model=16\n");
  CHECK(cfg.canonical({"decode"}).empty());
  // order of prefixes does not matter
  CHECK(cfg.canonical({"mix", "model"}) == cfg.canonical({"model", "mix"}));
}

TEST_CASE("toy dataset is deterministic and cs mixes both languages") {
  fs::remove_all("t_toy_a");
  fs::remove_all("t_toy_b");
  make_toy_dataset("t_toy_a", 7, 8);
  make_toy_dataset("t_toy_b", 7, 8);
  for (const char* pool : {"native", "nonnative", "cs"}) {
    Manifest a = parse_manifest("t_toy_a/" + std::string(pool) + ".jsonl");
    Manifest b = parse_manifest("t_toy_b/" + std::string(pool) + ".jsonl");
    REQUIRE(a.size() == 8);
    for (size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].text == b[i].text);
      CHECK(slurp(a[i].wav) == slurp(b[i].wav));  // identical audio bytes
    }
  }
  // language purity / mixing
  auto has_lang = [](const std::string& text, bool lang_a) {
    for (const auto& t : toy_tokens())
      if (t.lang_a == lang_a && text.find(t.word) != std::string::npos)
        return true;
    return false;
  };
  for (const auto& u : parse_manifest("t_toy_a/native.jsonl"))
    CHECK(!has_lang(u.text, false));
  for (const auto& u : parse_manifest("t_toy_a/nonnative.jsonl"))
    CHECK(!has_lang(u.text, true));
  for (const auto& u : parse_manifest("t_toy_a/cs.jsonl")) {
    CHECK(has_lang(u.text, true));
    CHECK(has_lang(u.text, false));
  }
}

TEST_CASE("matched-filter oracle inverts the token-to-tone mapping") {
  fs::remove_all("t_toy_mf");
  make_toy_dataset("t_toy_mf", 11, 6);
  int checked = 0;
  for (const char* pool : {"native", "nonnative", "cs"}) {
    for (const auto& u :
         parse_manifest("t_toy_mf/" + std::string(pool) + ".jsonl")) {
      CHECK(matched_filter_transcribe(load_wav(u.wav)) == u.text);
      ++checked;
    }
  }
  CHECK(checked == 18);
}

TEST_CASE("pipeline stages run, skip when up to date, and refuse on drift") {
  fs::remove_all("t_toy_pipe");
  fs::remove_all("t_exp");
  make_toy_dataset("t_toy_pipe", 3, 12);
  ExperimentConfig cfg = toy_config("t_toy_pipe");

  run_pipeline(cfg, "t_exp", {"prepare"});
  CHECK(fs::exists("t_exp/prepare/feats.idx"));
  CHECK(fs::exists("t_exp/prepare/cmvn.stats"));
  CHECK(fs::exists("t_exp/prepare/.done"));
  CHECK(!fs::exists("t_exp/.lock"));  // released

  // idempotence: re-run changes no artifact bytes
  std::string before = slurp("t_exp/prepare/feats.feats");
  auto mtime = fs::last_write_time("t_exp/prepare/feats.feats");
  run_pipeline(cfg, "t_exp", {"prepare"});
  CHECK(slurp("t_exp/prepare/feats.feats") == before);
  CHECK(fs::last_write_time("t_exp/prepare/feats.feats") == mtime);

  // config drift refuses without force, reruns with it
  ExperimentConfig drift = cfg;
  drift.set("features.n_mels", "12");
  CHECK_THROWS_WITH_AS(run_pipeline(drift, "t_exp", {"prepare"}),
                       doctest::Contains("--force"), std::runtime_error);
  run_pipeline(drift, "t_exp", {"prepare"}, true);
  CHECK(slurp("t_exp/prepare/config.frozen") !=
        slurp("t_exp/prepare/.done"));  // frozen copy present and distinct
  CHECK(slurp("t_exp/prepare/config.frozen").find("features.n_mels=12") !=
        std::string::npos);
  run_pipeline(cfg, "t_exp", {"prepare"}, true);  // restore

  // lock file excludes concurrent runs
  std::ofstream("t_exp/.lock") << "held\n";
  CHECK_THROWS_WITH_AS(run_pipeline(cfg, "t_exp", {"prepare"}),
                       doctest::Contains("locked"), std::runtime_error);
  fs::remove("t_exp/.lock");

  CHECK_THROWS_WITH_AS(run_pipeline(cfg, "t_exp", {"nosuch"}),
                       doctest::Contains("unknown stage"), std::runtime_error);
}

TEST_CASE("training stages demand their prerequisites by name") {
  fs::remove_all("t_exp2");
  ExperimentConfig cfg = toy_config("t_toy_pipe");  // dataset from prior test
  CHECK_THROWS_WITH_AS(run_pipeline(cfg, "t_exp2", {"pretrain"}),
                       doctest::Contains("prepare"), std::runtime_error);
  run_pipeline(cfg, "t_exp2", {"prepare", "bpe"});
  CHECK_THROWS_WITH_AS(run_pipeline(cfg, "t_exp2", {"finetune"}),
                       doctest::Contains("best.ckpt"), std::runtime_error);
  CHECK_THROWS_WITH_AS(run_pipeline(cfg, "t_exp2", {"score"}),
                       doctest::Contains("decode"), std::runtime_error);
}

TEST_CASE("full toy pipeline wires prepare through score") {
  fs::remove_all("t_exp_full");
  ExperimentConfig cfg = toy_config("t_toy_pipe");  // dataset from prior test
  run_pipeline(cfg, "t_exp_full",
               {"prepare", "bpe", "lm", "pretrain", "finetune", "decode",
                "score"});
  CHECK(fs::exists("t_exp_full/bpe/bpe.model"));
  CHECK(fs::exists("t_exp_full/lm/lm.arpa"));
  CHECK(fs::exists("t_exp_full/pretrain/best.ckpt"));
  CHECK(fs::exists("t_exp_full/pretrain/mix.json"));
  CHECK(fs::exists("t_exp_full/finetune/best.ckpt"));
  CHECK(fs::exists("t_exp_full/decode/nbest.tsv"));
  CHECK(fs::exists("t_exp_full/decode/hyp.tsv"));

  std::string report = slurp("t_exp_full/score/report.json");
  CHECK(report.find("\"wer\"") != std::string::npos);
  CHECK(report.find("\"t_wer\"") != std::string::npos);

  // every stage directory carries the config that produced it
  for (const char* st : {"prepare", "bpe", "lm", "pretrain", "finetune",
                         "decode", "score"})
    CHECK(fs::exists("t_exp_full/" + std::string(st) + "/config.frozen"));
}
