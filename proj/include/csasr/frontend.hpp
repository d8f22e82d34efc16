#pragma once

#include <memory>
#include <optional>
#include <string>

#include "csasr/rng.hpp"
#include "csasr/tensor.hpp"

namespace csasr {

// Mono PCM audio scaled to [-1, 1].
struct AudioBuffer {
  std::vector<double> samples;
  int sample_rate = 16000;
};

struct WavFormatError : std::runtime_error {
  size_t byte_offset;
  WavFormatError(const std::string& msg, size_t offset)
      : std::runtime_error(msg + " (byte offset " + std::to_string(offset) + ")"),
        byte_offset(offset) {}
};

// Reads 16-bit PCM mono WAV. 8 kHz input is upsampled to 16 kHz.
AudioBuffer load_wav(const std::string& path);
void save_wav(const std::string& path, const AudioBuffer& audio);

// Linear-interpolation resampling of the time axis; output length
// round(len/factor). Factor 1.0 returns a bit-identical buffer.
AudioBuffer speed_perturb(const AudioBuffer& a, double factor);

struct FeatureMatrix {
  Tensor frames;  // T x D
  double frame_shift = 0.01;
  int64_t dim() const { return frames.cols(); }
  int64_t num_frames() const { return frames.rows(); }
};

struct LogMelConfig {
  double window_ms = 25.0;
  double hop_ms = 10.0;
  int n_fft = 512;
  int n_mels = 80;
  double fmin = 20.0;
  double fmax = 7600.0;
  double floor = 1e-10;
};

// Natural-log Mel filterbank energies. Frame count is
// 1 + floor((len - window)/hop); throws if the audio is shorter than one
// window.
FeatureMatrix log_mel(const AudioBuffer& a, const LogMelConfig& cfg = {});

// Center frequency (Hz) of Mel bin m under cfg; used by tests to check
// filterbank geometry.
double mel_bin_center_hz(const LogMelConfig& cfg, int m, int sample_rate = 16000);

// Per-dimension accumulators for cepstral mean/variance normalization.
// Mergeable: stats of a union is the elementwise sum.
struct CmvnStats {
  int64_t count = 0;
  std::vector<double> sum, sumsq;

  void accumulate(const FeatureMatrix& f);
  void merge(const CmvnStats& other);
  void save(const std::string& path) const;
  static CmvnStats load(const std::string& path);
};

FeatureMatrix cmvn_apply(const FeatureMatrix& f, const CmvnStats& s);

struct SpecAugmentPolicy {
  int num_freq_masks = 2;
  int max_freq_width = 27;
  int num_time_masks = 2;
  int max_time_width = 40;
  uint64_t seed = 0;
};

FeatureMatrix spec_augment(const FeatureMatrix& f, const SpecAugmentPolicy& p);

// Per-utterance binary feature records with a text index file
// (utt_id offset T D per line; data file holds little-endian doubles).
class FeatureArchiveWriter {
 public:
  explicit FeatureArchiveWriter(const std::string& base_path);
  ~FeatureArchiveWriter();
  void write(const std::string& utt_id, const FeatureMatrix& f);
  void close();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

class FeatureArchiveReader {
 public:
  explicit FeatureArchiveReader(const std::string& base_path);
  ~FeatureArchiveReader();
  bool has(const std::string& utt_id) const;
  FeatureMatrix read(const std::string& utt_id) const;
  std::vector<std::string> utt_ids() const;
  int64_t num_frames(const std::string& utt_id) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace csasr
