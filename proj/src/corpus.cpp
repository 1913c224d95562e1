#include "prosynth/corpus.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "prosynth/tensor_io.hpp"

namespace fs = std::filesystem;

namespace ps {

void UtteranceRecord::validate() const {
  grouping.validate();
  if (static_cast<int>(phonemes.size()) != grouping.phonemes())
    throw IntegrityError("utterance " + utt_id + ": word_spans do not cover phonemes");
  if (static_cast<int>(words.size()) != grouping.words())
    throw IntegrityError("utterance " + utt_id + ": word count mismatch");
  if (durations.size() != phonemes.size())
    throw IntegrityError("utterance " + utt_id + ": durations/phonemes length mismatch");
  for (int d : durations)
    if (d < 0)
      throw IntegrityError("utterance " + utt_id + ": negative duration");
  mel.validate();
  if (total_frames() != mel.frames())
    throw IntegrityError("utterance " + utt_id + ": sum(durations)=" +
                         std::to_string(total_frames()) + " but mel frames=" +
                         std::to_string(mel.frames()));
  if (pitch) {
    pitch->validate();
    if (pitch->frames() != mel.frames())
      throw IntegrityError("utterance " + utt_id + ": pitch/mel frame mismatch");
  }
}

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream is(s);
  std::vector<std::string> out;
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

Mat pitch_to_matrix(const PitchTrack& p) {
  Mat m(p.frames(), 3);
  for (Index i = 0; i < p.frames(); ++i) {
    m(i, 0) = p.f0(i);
    m(i, 1) = p.periodicity(i);
    m(i, 2) = p.voiced[i] ? 1.0 : 0.0;
  }
  return m;
}

PitchTrack matrix_to_pitch(const Mat& m) {
  if (m.cols() != 3) throw ParseError("pitch tensor must have 3 columns");
  PitchTrack p;
  p.f0 = m.col(0);
  p.periodicity = m.col(1);
  p.voiced.resize(m.rows());
  for (Index i = 0; i < m.rows(); ++i) p.voiced[i] = m(i, 2) != 0.0;
  return p;
}

}  // namespace

std::vector<UtteranceRecord> load_manifest(const std::string& manifest_path) {
  std::ifstream is(manifest_path);
  if (!is) throw ArgumentError("load_manifest: cannot open " + manifest_path);
  const fs::path base = fs::path(manifest_path).parent_path();
  std::vector<UtteranceRecord> records;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split(line, '|');
    if (fields.size() != 8)
      throw ParseError("manifest line " + std::to_string(line_no) +
                       ": expected 8 '|'-separated fields, got " +
                       std::to_string(fields.size()));
    UtteranceRecord rec;
    rec.utt_id = fields[0];
    rec.speaker_id = fields[1];
    rec.text = fields[2];
    rec.phonemes = split_ws(fields[3]);
    for (const auto& span : split_ws(fields[4])) {
      const auto colon = span.find(':');
      if (colon == std::string::npos)
        throw ParseError("manifest line " + std::to_string(line_no) +
                         ": malformed word span '" + span + "'");
      try {
        rec.grouping.word_spans.emplace_back(std::stoi(span.substr(0, colon)),
                                             std::stoi(span.substr(colon + 1)));
      } catch (const std::exception&) {
        throw ParseError("manifest line " + std::to_string(line_no) +
                         ": malformed word span '" + span + "'");
      }
    }
    for (const auto& d : split_ws(fields[5])) {
      try {
        rec.durations.push_back(std::stoi(d));
      } catch (const std::exception&) {
        throw ParseError("manifest line " + std::to_string(line_no) +
                         ": malformed duration '" + d + "'");
      }
    }
    rec.words = split_ws(rec.text);
    const fs::path mel_path = base / fields[6];
    if (!fs::exists(mel_path))
      throw ArgumentError("manifest line " + std::to_string(line_no) +
                          ": mel file missing: " + mel_path.string());
    rec.mel.data = load_tensor(mel_path.string());
    rec.mel.config.n_mels = static_cast<int>(rec.mel.data.cols());
    if (!fields[7].empty()) {
      const fs::path pitch_path = base / fields[7];
      if (!fs::exists(pitch_path))
        throw ArgumentError("manifest line " + std::to_string(line_no) +
                            ": pitch file missing: " + pitch_path.string());
      rec.pitch = matrix_to_pitch(load_tensor(pitch_path.string()));
    }
    rec.validate();
    records.push_back(std::move(rec));
  }
  return records;
}

std::string save_corpus(const std::vector<UtteranceRecord>& records,
                        const std::string& out_dir) {
  fs::create_directories(fs::path(out_dir) / "mel");
  fs::create_directories(fs::path(out_dir) / "pitch");
  const std::string manifest_path = (fs::path(out_dir) / "manifest.psv").string();
  std::ofstream os(manifest_path);
  if (!os) throw ArgumentError("save_corpus: cannot write " + manifest_path);
  for (const auto& rec : records) {
    rec.validate();
    const std::string mel_rel = "mel/" + rec.utt_id + ".pst";
    save_tensor((fs::path(out_dir) / mel_rel).string(), rec.mel.data);
    std::string pitch_rel;
    if (rec.pitch) {
      pitch_rel = "pitch/" + rec.utt_id + ".pst";
      save_tensor((fs::path(out_dir) / pitch_rel).string(), pitch_to_matrix(*rec.pitch));
    }
    os << rec.utt_id << '|' << rec.speaker_id << '|' << rec.text << '|';
    for (std::size_t i = 0; i < rec.phonemes.size(); ++i)
      os << (i ? " " : "") << rec.phonemes[i];
    os << '|';
    for (std::size_t i = 0; i < rec.grouping.word_spans.size(); ++i)
      os << (i ? " " : "") << rec.grouping.word_spans[i].first << ':'
         << rec.grouping.word_spans[i].second;
    os << '|';
    for (std::size_t i = 0; i < rec.durations.size(); ++i)
      os << (i ? " " : "") << rec.durations[i];
    os << '|' << mel_rel << '|' << pitch_rel << '\n';
  }
  return manifest_path;
}

const std::vector<std::pair<std::string, std::vector<std::string>>>&
synthetic_lexicon() {
  static const std::vector<std::pair<std::string, std::vector<std::string>>> lex = {
      {"bama", {"B", "AA", "M", "AA"}}, {"keet", {"K", "EE", "T"}},
      {"solo", {"S", "OO", "L", "OO"}}, {"dana", {"D", "AA", "N", "AA"}},
      {"mimi", {"M", "EE", "M", "EE"}}, {"tasa", {"T", "AA", "S", "AA"}},
      {"neko", {"N", "EE", "K", "OO"}}, {"lopu", {"L", "OO", "P", "OO"}},
      {"kada", {"K", "AA", "D", "AA"}}, {"sobe", {"S", "OO", "B", "EE"}},
      {"temo", {"T", "EE", "M", "OO"}}, {"nalu", {"N", "AA", "L", "OO"}},
      {"pika", {"P", "EE", "K", "AA"}}, {"domo", {"D", "OO", "M", "OO"}},
      {"seta", {"S", "EE", "T", "AA"}}, {"buno", {"B", "OO", "N", "OO"}},
  };
  return lex;
}

std::vector<std::string> synthetic_phoneme_inventory() {
  return {"AA", "EE", "OO", "B", "D", "K", "L", "M", "N", "P", "S", "T"};
}

bool synthetic_phoneme_voiced(const std::string& phoneme) {
  // Vowels and sonorants carry pitch; the stop/fricative set does not.
  return phoneme == "AA" || phoneme == "EE" || phoneme == "OO" ||
         phoneme == "L" || phoneme == "M" || phoneme == "N" ||
         phoneme == "B" || phoneme == "D";
}

std::vector<UtteranceRecord> generate_synthetic_corpus(
    std::uint64_t seed, int n_speakers, int n_utterances, const AudioConfig& cfg,
    const SyntheticCorpusParams& params) {
  if (n_speakers < 1 || n_utterances < 1)
    throw ArgumentError("generate_synthetic_corpus: counts must be >= 1");
  cfg.validate();
  const int n_mels = cfg.n_mels;
  const int nb = std::min(params.lowband_bins, n_mels);
  Rng rng(seed);

  // Per-phoneme spectral signatures: smooth random bump mixtures, fixed for
  // the whole corpus.
  const auto inventory = synthetic_phoneme_inventory();
  std::map<std::string, Vec> signatures;
  for (const auto& p : inventory) {
    Vec sig = Vec::Zero(n_mels);
    for (int b = 0; b < 3; ++b) {
      const double center = rng.uniform(0.1, 0.9) * n_mels;
      const double width = rng.uniform(3.0, 10.0);
      const double amp = rng.uniform(-1.5, 1.5);
      for (int m = 0; m < n_mels; ++m)
        sig(m) += amp * std::exp(-0.5 * std::pow((m - center) / width, 2.0));
    }
    signatures[p] = sig;
  }

  // Per-speaker base contours. The low-band speaker offset lives only in
  // bins [0, nb) so speaker separation there is exact by construction;
  // per-speaker character wiggles live above the low band.
  std::vector<Vec> base(n_speakers);
  std::vector<double> base_pitch(n_speakers);
  for (int s = 0; s < n_speakers; ++s) {
    Vec b(n_mels);
    for (int m = 0; m < n_mels; ++m) b(m) = -2.0 - 3.0 * m / n_mels;
    const double offset =
        params.speaker_lowband_offset * (s - 0.5 * (n_speakers - 1));
    b.head(nb).array() += offset;
    for (int m = nb; m < n_mels; ++m)
      b(m) += 0.3 * std::sin(2.0 * M_PI * (m - nb) / 17.0 + rng.uniform(0.0, 2.0 * M_PI));
    base[s] = b;
    base_pitch[s] = params.base_pitch_hz * std::pow(2.0, s / 3.0);
  }

  // Low-band prosody bump shape shared by all words.
  Vec bump = Vec::Zero(n_mels);
  for (int m = 0; m < nb; ++m)
    bump(m) = std::pow(std::sin(M_PI * (m + 0.5) / nb), 2.0);

  const auto& lex = synthetic_lexicon();
  std::vector<UtteranceRecord> records;
  records.reserve(n_utterances);
  for (int u = 0; u < n_utterances; ++u) {
    UtteranceRecord rec;
    char id[32];
    std::snprintf(id, sizeof(id), "syn%04d", u);
    rec.utt_id = id;
    const int spk = static_cast<int>(rng.uniform_int(n_speakers));
    rec.speaker_id = "spk" + std::to_string(spk);
    const int n_words = params.min_words +
        static_cast<int>(rng.uniform_int(params.max_words - params.min_words + 1));
    std::vector<double> word_perturb(n_words);
    int cursor = 0;
    for (int w = 0; w < n_words; ++w) {
      const auto& [word, phones] = lex[rng.uniform_int(lex.size())];
      rec.words.push_back(word);
      rec.text += (w ? " " : "") + word;
      rec.grouping.word_spans.emplace_back(cursor, cursor + static_cast<int>(phones.size()));
      cursor += static_cast<int>(phones.size());
      for (const auto& p : phones) rec.phonemes.push_back(p);
      word_perturb[w] = params.word_perturb_amp * rng.uniform(-1.0, 1.0);
    }
    for (std::size_t i = 0; i < rec.phonemes.size(); ++i)
      rec.durations.push_back(params.min_dur +
          static_cast<int>(rng.uniform_int(params.max_dur - params.min_dur + 1)));

    const Index frames = rec.total_frames();
    Mat mel(frames, n_mels);
    PitchTrack pitch;
    pitch.f0 = Vec::Zero(frames);
    pitch.periodicity = Vec::Zero(frames);
    pitch.voiced.assign(frames, 0);
    Index f = 0;
    for (int w = 0; w < n_words; ++w) {
      const auto [ps_, pe] = rec.grouping.word_spans[w];
      for (int p = ps_; p < pe; ++p) {
        const std::string& phone = rec.phonemes[p];
        const bool voiced = synthetic_phoneme_voiced(phone);
        const int dur = rec.durations[p];
        for (int k = 0; k < dur; ++k, ++f) {
          const double env = 0.3 * std::sin(M_PI * (k + 0.5) / dur);
          mel.row(f) = (base[spk] + signatures[phone] + word_perturb[w] * bump).transpose();
          mel.row(f).array() += env;
          if (voiced) {
            pitch.f0(f) = base_pitch[spk] *
                std::pow(2.0, params.pitch_perturb_octaves * word_perturb[w]) *
                (1.0 + 0.01 * std::sin(2.0 * M_PI * f / 9.0));
            pitch.periodicity(f) = 0.9 + 0.05 * std::sin(2.0 * M_PI * f / 5.0);
            pitch.voiced[f] = 1;
          } else {
            pitch.periodicity(f) = 0.1;
          }
        }
      }
    }
    rec.mel = MelSpectrogram{std::move(mel), cfg};
    rec.pitch = std::move(pitch);
    rec.validate();
    records.push_back(std::move(rec));
  }
  return records;
}

PhonemeVocabulary build_phoneme_vocabulary(const std::vector<UtteranceRecord>& records) {
  PhonemeVocabulary vocab;
  for (const auto& r : records)
    for (const auto& p : r.phonemes) vocab.add(p);
  return vocab;
}

WordVocabulary build_word_vocabulary(const std::vector<UtteranceRecord>& records) {
  WordVocabulary vocab;
  for (const auto& r : records)
    for (const auto& w : r.words) vocab.add(w);
  return vocab;
}

}  // namespace ps
