#include "csasr/frontend.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <map>
#include <numbers>

namespace csasr {

namespace {

uint32_t rd_u32(const std::vector<char>& b, size_t off) {
  uint32_t v;
  std::memcpy(&v, b.data() + off, 4);
  return v;
}
uint16_t rd_u16(const std::vector<char>& b, size_t off) {
  uint16_t v;
  std::memcpy(&v, b.data() + off, 2);
  return v;
}

AudioBuffer upsample_2x(const AudioBuffer& a) {
  AudioBuffer out;
  out.sample_rate = a.sample_rate * 2;
  size_t n = a.samples.size();
  out.samples.resize(2 * n);
  for (size_t i = 0; i < n; ++i) {
    out.samples[2 * i] = a.samples[i];
    double next = (i + 1 < n) ? a.samples[i + 1] : a.samples[i];
    out.samples[2 * i + 1] = 0.5 * (a.samples[i] + next);
  }
  return out;
}

// In-place iterative radix-2 FFT; n must be a power of two.
void fft(std::vector<std::complex<double>>& a) {
  size_t n = a.size();
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
    std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0);
      for (size_t k = 0; k < len / 2; ++k) {
        auto u = a[i + k], v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

}  // namespace

AudioBuffer load_wav(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("wav: cannot open " + path);
  std::vector<char> buf((std::istreambuf_iterator<char>(is)),
                        std::istreambuf_iterator<char>());
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0)
    throw WavFormatError("wav: missing RIFF header", 0);
  if (std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
    throw WavFormatError("wav: not a WAVE file", 8);

  size_t pos = 12;
  int channels = 0, bits = 0;
  uint32_t rate = 0;
  bool have_fmt = false;
  AudioBuffer out;
  bool have_data = false;
  while (pos + 8 <= buf.size()) {
    char id[5] = {0};
    std::memcpy(id, buf.data() + pos, 4);
    uint32_t sz = rd_u32(buf, pos + 4);
    size_t body = pos + 8;
    if (body + sz > buf.size())
      throw WavFormatError("wav: truncated chunk " + std::string(id), pos);
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (sz < 16) throw WavFormatError("wav: short fmt chunk", pos);
      uint16_t fmt_tag = rd_u16(buf, body);
      if (fmt_tag != 1) throw WavFormatError("wav: not PCM", body);
      channels = rd_u16(buf, body + 2);
      rate = rd_u32(buf, body + 4);
      bits = rd_u16(buf, body + 14);
      if (channels != 1) throw WavFormatError("wav: only mono supported", body + 2);
      if (bits != 16) throw WavFormatError("wav: only 16-bit PCM supported", body + 14);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      if (!have_fmt) throw WavFormatError("wav: data before fmt", pos);
      size_t n = sz / 2;
      out.samples.resize(n);
      for (size_t i = 0; i < n; ++i) {
        int16_t s;
        std::memcpy(&s, buf.data() + body + 2 * i, 2);
        out.samples[i] = static_cast<double>(s) / 32768.0;
      }
      out.sample_rate = static_cast<int>(rate);
      have_data = true;
    }
    pos = body + sz + (sz & 1);
  }
  if (!have_data) throw WavFormatError("wav: no data chunk", buf.size());
  if (out.sample_rate == 8000) out = upsample_2x(out);
  if (out.sample_rate != 16000)
    throw WavFormatError("wav: unsupported sample rate " +
                             std::to_string(out.sample_rate), 0);
  return out;
}

void save_wav(const std::string& path, const AudioBuffer& audio) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("wav: cannot open for write " + path);
  uint32_t n = static_cast<uint32_t>(audio.samples.size());
  uint32_t data_bytes = n * 2;
  uint32_t riff_size = 36 + data_bytes;
  uint32_t rate = static_cast<uint32_t>(audio.sample_rate);
  uint32_t byte_rate = rate * 2;
  uint16_t block_align = 2, channels = 1, bits = 16, fmt_pcm = 1;
  uint32_t fmt_size = 16;
  os.write("RIFF", 4);
  os.write(reinterpret_cast<char*>(&riff_size), 4);
  os.write("WAVEfmt ", 8);
  os.write(reinterpret_cast<char*>(&fmt_size), 4);
  os.write(reinterpret_cast<char*>(&fmt_pcm), 2);
  os.write(reinterpret_cast<char*>(&channels), 2);
  os.write(reinterpret_cast<char*>(&rate), 4);
  os.write(reinterpret_cast<char*>(&byte_rate), 4);
  os.write(reinterpret_cast<char*>(&block_align), 2);
  os.write(reinterpret_cast<char*>(&bits), 2);
  os.write("data", 4);
  os.write(reinterpret_cast<char*>(&data_bytes), 4);
  for (double v : audio.samples) {
    double c = std::clamp(v, -1.0, 1.0 - 1.0 / 32768.0);
    int16_t s = static_cast<int16_t>(std::lrint(c * 32768.0));
    os.write(reinterpret_cast<char*>(&s), 2);
  }
}

AudioBuffer speed_perturb(const AudioBuffer& a, double factor) {
  if (factor <= 0.0)
    throw std::invalid_argument("speed_perturb: factor must be positive");
  if (factor == 1.0) return a;
  AudioBuffer out;
  out.sample_rate = a.sample_rate;
  int64_t in_len = static_cast<int64_t>(a.samples.size());
  int64_t out_len = static_cast<int64_t>(std::llround(in_len / factor));
  out.samples.resize(out_len);
  for (int64_t i = 0; i < out_len; ++i) {
    double p = i * factor;
    int64_t i0 = static_cast<int64_t>(p);
    if (i0 >= in_len - 1) {
      out.samples[i] = a.samples[in_len - 1];
    } else {
      double frac = p - i0;
      out.samples[i] = (1 - frac) * a.samples[i0] + frac * a.samples[i0 + 1];
    }
  }
  return out;
}

double mel_bin_center_hz(const LogMelConfig& cfg, int m, int /*sample_rate*/) {
  double mel_lo = hz_to_mel(cfg.fmin), mel_hi = hz_to_mel(cfg.fmax);
  double step = (mel_hi - mel_lo) / (cfg.n_mels + 1);
  return mel_to_hz(mel_lo + (m + 1) * step);
}

FeatureMatrix log_mel(const AudioBuffer& a, const LogMelConfig& cfg) {
  int win = static_cast<int>(std::lround(cfg.window_ms * a.sample_rate / 1000.0));
  int hop = static_cast<int>(std::lround(cfg.hop_ms * a.sample_rate / 1000.0));
  int64_t len = static_cast<int64_t>(a.samples.size());
  if (len < win)
    throw std::invalid_argument("log_mel: audio shorter than one window");
  int64_t T = 1 + (len - win) / hop;
  int n_bins = cfg.n_fft / 2 + 1;

  // Hann window
  std::vector<double> window(win);
  for (int i = 0; i < win; ++i)
    window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / win);

  // triangular Mel filters over FFT bins
  double mel_lo = hz_to_mel(cfg.fmin), mel_hi = hz_to_mel(cfg.fmax);
  std::vector<double> edges(cfg.n_mels + 2);
  for (int m = 0; m < cfg.n_mels + 2; ++m)
    edges[m] = mel_to_hz(mel_lo + m * (mel_hi - mel_lo) / (cfg.n_mels + 1));
  auto bin_hz = [&](int k) {
    return static_cast<double>(k) * a.sample_rate / cfg.n_fft;
  };

  FeatureMatrix out;
  out.frames = Tensor({T, cfg.n_mels});
  out.frame_shift = cfg.hop_ms / 1000.0;
  std::vector<std::complex<double>> spec(cfg.n_fft);
  std::vector<double> power(n_bins);
  for (int64_t t = 0; t < T; ++t) {
    for (int i = 0; i < cfg.n_fft; ++i) {
      double v = (i < win) ? a.samples[t * hop + i] * window[i] : 0.0;
      spec[i] = {v, 0.0};
    }
    fft(spec);
    for (int k = 0; k < n_bins; ++k) power[k] = std::norm(spec[k]);
    for (int m = 0; m < cfg.n_mels; ++m) {
      double lo = edges[m], c = edges[m + 1], hi = edges[m + 2];
      double e = 0.0;
      for (int k = 0; k < n_bins; ++k) {
        double f = bin_hz(k);
        if (f <= lo || f >= hi) continue;
        double w = (f <= c) ? (f - lo) / (c - lo) : (hi - f) / (hi - c);
        e += w * power[k];
      }
      out.frames.at(t, m) = std::log(std::max(e, cfg.floor));
    }
  }
  return out;
}

void CmvnStats::accumulate(const FeatureMatrix& f) {
  int64_t D = f.dim();
  if (sum.empty()) {
    sum.assign(D, 0.0);
    sumsq.assign(D, 0.0);
  }
  if (static_cast<int64_t>(sum.size()) != D)
    throw std::invalid_argument("cmvn: dimension mismatch");
  for (int64_t t = 0; t < f.num_frames(); ++t)
    for (int64_t d = 0; d < D; ++d) {
      double v = f.frames.at(t, d);
      sum[d] += v;
      sumsq[d] += v * v;
    }
  count += f.num_frames();
}

void CmvnStats::merge(const CmvnStats& other) {
  if (sum.empty()) {
    *this = other;
    return;
  }
  if (sum.size() != other.sum.size())
    throw std::invalid_argument("cmvn merge: dimension mismatch");
  count += other.count;
  for (size_t d = 0; d < sum.size(); ++d) {
    sum[d] += other.sum[d];
    sumsq[d] += other.sumsq[d];
  }
}

void CmvnStats::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cmvn: cannot open " + path);
  os.precision(17);
  os << sum.size() << " " << count << "\n";
  for (double v : sum) os << v << " ";
  os << "\n";
  for (double v : sumsq) os << v << " ";
  os << "\n";
}

CmvnStats CmvnStats::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cmvn: cannot open " + path);
  size_t dim;
  CmvnStats s;
  is >> dim >> s.count;
  s.sum.resize(dim);
  s.sumsq.resize(dim);
  for (auto& v : s.sum) is >> v;
  for (auto& v : s.sumsq) is >> v;
  if (!is) throw std::runtime_error("cmvn: malformed stats file " + path);
  return s;
}

FeatureMatrix cmvn_apply(const FeatureMatrix& f, const CmvnStats& s) {
  if (s.count <= 0) throw std::invalid_argument("cmvn: empty stats");
  int64_t D = f.dim();
  if (static_cast<int64_t>(s.sum.size()) != D)
    throw std::invalid_argument("cmvn: stats dimension mismatch");
  std::vector<double> mean(D), inv_std(D);
  for (int64_t d = 0; d < D; ++d) {
    mean[d] = s.sum[d] / s.count;
    double var = s.sumsq[d] / s.count - mean[d] * mean[d];
    if (var <= 0.0)
      throw std::runtime_error("cmvn: degenerate variance in dimension " +
                               std::to_string(d));
    inv_std[d] = 1.0 / std::sqrt(var);
  }
  FeatureMatrix out = f;
  for (int64_t t = 0; t < f.num_frames(); ++t)
    for (int64_t d = 0; d < D; ++d)
      out.frames.at(t, d) = (f.frames.at(t, d) - mean[d]) * inv_std[d];
  return out;
}

FeatureMatrix spec_augment(const FeatureMatrix& f, const SpecAugmentPolicy& p) {
  if (p.max_freq_width < 0 || p.max_time_width < 0)
    throw std::invalid_argument("spec_augment: widths must be >= 0");
  FeatureMatrix out = f;
  Rng rng(p.seed);
  int64_t T = f.num_frames(), D = f.dim();
  for (int i = 0; i < p.num_freq_masks; ++i) {
    int64_t w = rng.randint(std::min<int64_t>(p.max_freq_width, D) + 1);
    if (w == 0) continue;
    int64_t d0 = rng.randint(D - w + 1);
    for (int64_t t = 0; t < T; ++t)
      for (int64_t d = d0; d < d0 + w; ++d) out.frames.at(t, d) = 0.0;
  }
  for (int i = 0; i < p.num_time_masks; ++i) {
    int64_t w = rng.randint(std::min<int64_t>(p.max_time_width, T) + 1);
    if (w == 0) continue;
    int64_t t0 = rng.randint(T - w + 1);
    for (int64_t t = t0; t < t0 + w; ++t)
      for (int64_t d = 0; d < D; ++d) out.frames.at(t, d) = 0.0;
  }
  return out;
}

// ---- feature archive ----

struct FeatureArchiveWriter::Impl {
  std::ofstream data, index;
  int64_t offset = 0;
};

FeatureArchiveWriter::FeatureArchiveWriter(const std::string& base)
    : impl_(new Impl) {
  impl_->data.open(base + ".feats", std::ios::binary);
  impl_->index.open(base + ".idx");
  if (!impl_->data || !impl_->index)
    throw std::runtime_error("feature archive: cannot open " + base);
}
FeatureArchiveWriter::~FeatureArchiveWriter() = default;

void FeatureArchiveWriter::write(const std::string& utt_id, const FeatureMatrix& f) {
  impl_->index << utt_id << " " << impl_->offset << " " << f.num_frames() << " "
               << f.dim() << "\n";
  impl_->data.write(reinterpret_cast<const char*>(f.frames.data.data()),
                    static_cast<std::streamsize>(f.frames.data.size() * sizeof(double)));
  impl_->offset += static_cast<int64_t>(f.frames.data.size() * sizeof(double));
}

void FeatureArchiveWriter::close() {
  impl_->data.close();
  impl_->index.close();
}

struct FeatureArchiveReader::Impl {
  struct Entry {
    int64_t offset, T, D;
  };
  std::map<std::string, Entry> entries;
  std::vector<std::string> order;
  std::string data_path;
};

FeatureArchiveReader::FeatureArchiveReader(const std::string& base)
    : impl_(new Impl) {
  impl_->data_path = base + ".feats";
  std::ifstream idx(base + ".idx");
  if (!idx) throw std::runtime_error("feature archive: cannot open index " + base);
  std::string id;
  Impl::Entry e;
  while (idx >> id >> e.offset >> e.T >> e.D) {
    impl_->entries[id] = e;
    impl_->order.push_back(id);
  }
}
FeatureArchiveReader::~FeatureArchiveReader() = default;

bool FeatureArchiveReader::has(const std::string& utt_id) const {
  return impl_->entries.count(utt_id) > 0;
}

std::vector<std::string> FeatureArchiveReader::utt_ids() const {
  return impl_->order;
}

int64_t FeatureArchiveReader::num_frames(const std::string& utt_id) const {
  auto it = impl_->entries.find(utt_id);
  if (it == impl_->entries.end())
    throw std::out_of_range("feature archive: no utterance " + utt_id);
  return it->second.T;
}

FeatureMatrix FeatureArchiveReader::read(const std::string& utt_id) const {
  auto it = impl_->entries.find(utt_id);
  if (it == impl_->entries.end())
    throw std::out_of_range("feature archive: no utterance " + utt_id);
  std::ifstream data(impl_->data_path, std::ios::binary);
  if (!data) throw std::runtime_error("feature archive: cannot open data file");
  data.seekg(it->second.offset);
  FeatureMatrix f;
  f.frames = Tensor({it->second.T, it->second.D});
  data.read(reinterpret_cast<char*>(f.frames.data.data()),
            static_cast<std::streamsize>(f.frames.data.size() * sizeof(double)));
  if (!data) throw std::runtime_error("feature archive: truncated record " + utt_id);
  return f;
}

}  // namespace csasr
