#include <cmath>
#include <cstdio>
#include <fstream>

#include "csasr/frontend.hpp"
#include "doctest.h"

using namespace csasr;

TEST_CASE("wav round trip and scaling") {
  AudioBuffer a;
  a.sample_rate = 16000;
  a.samples.assign(16000, 0.0);
  save_wav("t_silence.wav", a);
  AudioBuffer b = load_wav("t_silence.wav");
  CHECK(b.samples.size() == 16000);
  for (double v : b.samples) CHECK(v == 0.0);

  // int16 16384 -> 0.5
  a.samples.assign(8, 16384.0 / 32768.0);
  save_wav("t_half.wav", a);
  b = load_wav("t_half.wav");
  for (double v : b.samples) CHECK(std::fabs(v - 0.5) <= 1.0 / 32768.0);
}

TEST_CASE("8 kHz input is upsampled to 2N samples") {
  AudioBuffer a;
  a.sample_rate = 8000;
  a.samples.resize(4000);
  for (size_t i = 0; i < a.samples.size(); ++i)
    a.samples[i] = 0.25 * std::sin(2 * 3.14159265358979 * 440.0 * i / 8000.0);
  save_wav("t_8k.wav", a);
  AudioBuffer b = load_wav("t_8k.wav");
  CHECK(b.sample_rate == 16000);
  CHECK(b.samples.size() == 8000);
}

TEST_CASE("wav format errors carry byte offsets") {
  {
    std::ofstream os("t_bad.wav", std::ios::binary);
    os << "JUNKJUNKJUNKJUNK";
  }
  CHECK_THROWS_AS(load_wav("t_bad.wav"), WavFormatError);
  // truncated data chunk
  {
    AudioBuffer a;
    a.sample_rate = 16000;
    a.samples.assign(100, 0.1);
    save_wav("t_trunc.wav", a);
    std::ifstream is("t_trunc.wav", std::ios::binary);
    std::vector<char> buf((std::istreambuf_iterator<char>(is)),
                          std::istreambuf_iterator<char>());
    std::ofstream os("t_trunc.wav", std::ios::binary);
    os.write(buf.data(), static_cast<std::streamsize>(buf.size() - 50));
  }
  CHECK_THROWS_AS(load_wav("t_trunc.wav"), WavFormatError);
}

TEST_CASE("speed perturbation lengths") {
  AudioBuffer a;
  a.sample_rate = 16000;
  a.samples.resize(16000);
  for (size_t i = 0; i < a.samples.size(); ++i)
    a.samples[i] = std::sin(0.01 * i);

  AudioBuffer same = speed_perturb(a, 1.0);
  CHECK(same.samples == a.samples);

  CHECK(speed_perturb(a, 0.9).samples.size() == 17778);
  CHECK(speed_perturb(a, 1.1).samples.size() == 14545);
  CHECK_THROWS(speed_perturb(a, 0.0));
  CHECK_THROWS(speed_perturb(a, -1.0));

  // energy preserved exactly at factor 1.0
  double e0 = 0, e1 = 0;
  for (double v : a.samples) e0 += v * v;
  for (double v : same.samples) e1 += v * v;
  CHECK(std::fabs(e1 - e0) / e0 < 0.01);
}

TEST_CASE("log_mel shape and content") {
  AudioBuffer a;
  a.sample_rate = 16000;
  a.samples.assign(16000, 0.0);
  LogMelConfig cfg;
  FeatureMatrix zero = log_mel(a, cfg);
  CHECK(zero.num_frames() == 98);
  CHECK(zero.dim() == 80);
  for (double v : zero.frames.data)
    CHECK(v == doctest::Approx(std::log(1e-10)));

  // pure 1 kHz sine: argmax Mel bin has center frequency nearest 1 kHz
  for (size_t i = 0; i < a.samples.size(); ++i)
    a.samples[i] = 0.5 * std::sin(2 * 3.14159265358979 * 1000.0 * i / 16000.0);
  FeatureMatrix f = log_mel(a, cfg);
  int64_t mid = f.num_frames() / 2;
  int argmax = 0;
  for (int m = 1; m < cfg.n_mels; ++m)
    if (f.frames.at(mid, m) > f.frames.at(mid, argmax)) argmax = m;
  int nearest = 0;
  double best = 1e18;
  for (int m = 0; m < cfg.n_mels; ++m) {
    double d = std::fabs(mel_bin_center_hz(cfg, m) - 1000.0);
    if (d < best) {
      best = d;
      nearest = m;
    }
  }
  CHECK(argmax == nearest);

  AudioBuffer tiny;
  tiny.sample_rate = 16000;
  tiny.samples.assign(100, 0.0);
  CHECK_THROWS(log_mel(tiny, cfg));
}

TEST_CASE("log_mel frame count formula") {
  LogMelConfig cfg;
  for (int64_t len : {400, 401, 559, 560, 561, 7000, 16123}) {
    AudioBuffer a;
    a.sample_rate = 16000;
    a.samples.assign(static_cast<size_t>(len), 0.01);
    CHECK(log_mel(a, cfg).num_frames() == 1 + (len - 400) / 160);
  }
}

TEST_CASE("cmvn") {
  Rng rng(21);
  FeatureMatrix f;
  f.frames = Tensor({50, 4});
  for (double& v : f.frames.data) v = rng.normal(3.0, 2.0);
  CmvnStats s;
  s.accumulate(f);
  FeatureMatrix g = cmvn_apply(f, s);
  for (int64_t d = 0; d < 4; ++d) {
    double mu = 0, var = 0;
    for (int64_t t = 0; t < 50; ++t) mu += g.frames.at(t, d);
    mu /= 50;
    for (int64_t t = 0; t < 50; ++t) {
      double x = g.frames.at(t, d) - mu;
      var += x * x;
    }
    var /= 50;
    CHECK(std::fabs(mu) < 1e-6);
    CHECK(std::fabs(var - 1.0) < 1e-5);
  }
  // column [1,3] with own stats -> [-1,1]
  FeatureMatrix two;
  two.frames = Tensor({2, 1}, {1, 3});
  CmvnStats s2;
  s2.accumulate(two);
  FeatureMatrix n2 = cmvn_apply(two, s2);
  CHECK(n2.frames.data[0] == doctest::Approx(-1.0));
  CHECK(n2.frames.data[1] == doctest::Approx(1.0));

  // fixed point: already normalized features with own stats stay unchanged
  CmvnStats s3;
  s3.accumulate(g);
  FeatureMatrix h = cmvn_apply(g, s3);
  for (size_t i = 0; i < h.frames.data.size(); ++i)
    CHECK(std::fabs(h.frames.data[i] - g.frames.data[i]) < 1e-6);

  // zero-variance error names the dimension
  FeatureMatrix cst;
  cst.frames = Tensor({3, 2}, {1, 5, 1, 5, 1, 5});
  CmvnStats s4;
  s4.accumulate(cst);
  CHECK_THROWS_WITH_AS(cmvn_apply(cst, s4),
                       doctest::Contains("dimension 0"), std::runtime_error);
}

TEST_CASE("cmvn merge matches pooled stats") {
  Rng rng(22);
  FeatureMatrix a, b, ab;
  a.frames = Tensor({7, 3});
  b.frames = Tensor({11, 3});
  for (double& v : a.frames.data) v = rng.normal();
  for (double& v : b.frames.data) v = rng.normal();
  ab.frames = Tensor({18, 3});
  std::copy(a.frames.data.begin(), a.frames.data.end(), ab.frames.data.begin());
  std::copy(b.frames.data.begin(), b.frames.data.end(),
            ab.frames.data.begin() + a.frames.data.size());
  CmvnStats sa, sb, spool;
  sa.accumulate(a);
  sb.accumulate(b);
  spool.accumulate(ab);
  sa.merge(sb);
  CHECK(sa.count == spool.count);
  for (size_t d = 0; d < 3; ++d) {
    CHECK(std::fabs(sa.sum[d] - spool.sum[d]) < 1e-9);
    CHECK(std::fabs(sa.sumsq[d] - spool.sumsq[d]) < 1e-9);
  }
}

TEST_CASE("cmvn stats file round trip") {
  Rng rng(23);
  FeatureMatrix f;
  f.frames = Tensor({5, 2});
  for (double& v : f.frames.data) v = rng.normal();
  CmvnStats s;
  s.accumulate(f);
  s.save("t_cmvn.stats");
  CmvnStats l = CmvnStats::load("t_cmvn.stats");
  CHECK(l.count == s.count);
  CHECK(l.sum == s.sum);
  CHECK(l.sumsq == s.sumsq);
}

TEST_CASE("spec augment") {
  Rng rng(31);
  FeatureMatrix f;
  f.frames = Tensor({60, 20});
  for (double& v : f.frames.data) v = rng.uniform(0.5, 2.0);  // strictly nonzero

  SpecAugmentPolicy zero;
  zero.max_freq_width = 0;
  zero.max_time_width = 0;
  CHECK(spec_augment(f, zero).frames.data == f.frames.data);

  SpecAugmentPolicy p;
  p.num_freq_masks = 1;
  p.max_freq_width = 5;
  p.num_time_masks = 0;
  p.seed = 77;
  FeatureMatrix m = spec_augment(f, p);
  // exactly one contiguous band of <=5 dims zeroed across every frame
  std::vector<bool> zeroed(20, false);
  for (int64_t d = 0; d < 20; ++d) {
    bool all0 = true, any0 = false;
    for (int64_t t = 0; t < 60; ++t) {
      if (m.frames.at(t, d) == 0.0) any0 = true;
      else all0 = false;
    }
    CHECK(all0 == any0);  // column fully zero or untouched
    zeroed[d] = all0;
  }
  int width = 0, transitions = 0;
  for (int d = 0; d < 20; ++d) {
    if (zeroed[d]) ++width;
    if (d > 0 && zeroed[d] != zeroed[d - 1]) ++transitions;
  }
  CHECK(width <= 5);
  CHECK(transitions <= 2);  // one contiguous band

  // determinism: same seed twice, different seeds differ
  FeatureMatrix m2 = spec_augment(f, p);
  CHECK(m.frames.data == m2.frames.data);
  p.seed = 78;
  p.num_time_masks = 2;
  FeatureMatrix m3 = spec_augment(f, p);
  CHECK(m.frames.data != m3.frames.data);
}

TEST_CASE("spec augment never alters unmasked cells") {
  Rng rng(32);
  for (int trial = 0; trial < 30; ++trial) {
    FeatureMatrix f;
    int64_t T = 5 + rng.randint(40), D = 4 + rng.randint(30);
    f.frames = Tensor({T, D});
    for (double& v : f.frames.data) v = rng.uniform(0.5, 2.0);
    SpecAugmentPolicy p;
    p.num_freq_masks = static_cast<int>(rng.randint(4));
    p.max_freq_width = static_cast<int>(rng.randint(static_cast<int64_t>(D + 3)));
    p.num_time_masks = static_cast<int>(rng.randint(4));
    p.max_time_width = static_cast<int>(rng.randint(static_cast<int64_t>(T + 3)));
    p.seed = static_cast<uint64_t>(rng.randint(1 << 20));
    FeatureMatrix m = spec_augment(f, p);
    REQUIRE(m.frames.shape == f.frames.shape);
    for (size_t i = 0; i < m.frames.data.size(); ++i) {
      bool same = m.frames.data[i] == f.frames.data[i];
      bool masked = m.frames.data[i] == 0.0;
      CHECK((same || masked));
    }
  }
}

TEST_CASE("feature archive round trip") {
  Rng rng(41);
  FeatureMatrix a, b;
  a.frames = Tensor({9, 4});
  b.frames = Tensor({3, 4});
  for (double& v : a.frames.data) v = rng.normal();
  for (double& v : b.frames.data) v = rng.normal();
  {
    FeatureArchiveWriter w("t_arch");
    w.write("utt_a", a);
    w.write("utt_b", b);
    w.close();
  }
  FeatureArchiveReader r("t_arch");
  CHECK(r.has("utt_a"));
  CHECK(!r.has("utt_c"));
  CHECK(r.utt_ids().size() == 2);
  CHECK(r.num_frames("utt_a") == 9);
  CHECK(r.read("utt_a").frames.data == a.frames.data);
  CHECK(r.read("utt_b").frames.data == b.frames.data);
  CHECK_THROWS(r.read("utt_c"));
}
