#pragma once

#include <optional>
#include <string>
#include <vector>

#include "prosynth/audio.hpp"
#include "prosynth/text.hpp"

namespace ps {

/// One corpus item. Durations are per-phoneme frame counts and must sum to
/// the mel frame count exactly.
struct UtteranceRecord {
  std::string utt_id;
  std::string speaker_id;
  std::string text;
  std::vector<std::string> words;
  std::vector<std::string> phonemes;
  WordGrouping grouping;
  std::vector<int> durations;
  MelSpectrogram mel;
  std::optional<PitchTrack> pitch;

  Index total_frames() const {
    Index total = 0;
    for (int d : durations) total += d;
    return total;
  }

  void validate() const;
};

// Manifest: one record per line, fields separated by '|':
//   utt_id|speaker_id|text|phonemes|word_spans|durations|mel_path|pitch_path
// phonemes and durations are space-separated; word_spans are space-separated
// start:end phoneme-index ranges; pitch_path may be empty. Paths are relative
// to the manifest's directory. Mel and pitch tensors use the container in
// tensor_io.hpp (pitch as frames x 3: f0, periodicity, voiced).
std::vector<UtteranceRecord> load_manifest(const std::string& manifest_path);

/// Writes manifest plus mel/ and pitch/ tensor files under out_dir.
/// Returns the manifest path.
std::string save_corpus(const std::vector<UtteranceRecord>& records,
                        const std::string& out_dir);

/// Knobs of the synthetic corpus; tests derive expected statistics from
/// these same values.
struct SyntheticCorpusParams {
  int lowband_bins = 20;
  double speaker_lowband_offset = 1.0;  // low-band mel gap between speakers
  double word_perturb_amp = 0.4;        // word-level prosody shift amplitude
  double pitch_perturb_octaves = 0.3;   // f0 shift per unit word perturbation
  double base_pitch_hz = 110.0;
  int min_words = 2, max_words = 4;
  int min_dur = 2, max_dur = 6;
};

const std::vector<std::pair<std::string, std::vector<std::string>>>&
synthetic_lexicon();
std::vector<std::string> synthetic_phoneme_inventory();
bool synthetic_phoneme_voiced(const std::string& phoneme);

/// Deterministic in (seed, counts, cfg, params): reruns are byte-identical.
/// Each record carries a template mel built from a per-speaker base contour,
/// per-phoneme spectral signatures, and per-word low-band perturbations,
/// plus exact durations and a ground-truth pitch track.
std::vector<UtteranceRecord> generate_synthetic_corpus(
    std::uint64_t seed, int n_speakers, int n_utterances, const AudioConfig& cfg,
    const SyntheticCorpusParams& params = {});

/// Phoneme/word vocabularies covering a record set (pad/unk included).
PhonemeVocabulary build_phoneme_vocabulary(const std::vector<UtteranceRecord>& records);
WordVocabulary build_word_vocabulary(const std::vector<UtteranceRecord>& records);

}  // namespace ps
