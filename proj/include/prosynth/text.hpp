#pragma once

#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "prosynth/common.hpp"

namespace ps {

/// Contiguous, non-overlapping (start, end) phoneme-index ranges, one per
/// word, covering [0, P).
struct WordGrouping {
  std::vector<std::pair<int, int>> word_spans;

  int words() const { return static_cast<int>(word_spans.size()); }
  int phonemes() const { return word_spans.empty() ? 0 : word_spans.back().second; }

  void validate() const {
    if (word_spans.empty()) throw IntegrityError("WordGrouping: needs >= 1 word");
    int expect = 0;
    for (const auto& [s, e] : word_spans) {
      if (s != expect || e <= s)
        throw IntegrityError("WordGrouping: spans must be contiguous and non-empty");
      expect = e;
    }
  }

  /// Word index containing phoneme p.
  int word_of(int p) const {
    for (int w = 0; w < words(); ++w)
      if (p >= word_spans[w].first && p < word_spans[w].second) return w;
    throw ArgumentError("WordGrouping: phoneme index out of range");
  }
};

class PhonemeVocabulary {
 public:
  PhonemeVocabulary() { id_of_["<pad>"] = 0; symbols_.push_back("<pad>"); }

  explicit PhonemeVocabulary(const std::vector<std::string>& symbols)
      : PhonemeVocabulary() {
    for (const auto& s : symbols) add(s);
  }

  int add(const std::string& symbol) {
    auto it = id_of_.find(symbol);
    if (it != id_of_.end()) return it->second;
    const int id = static_cast<int>(symbols_.size());
    id_of_[symbol] = id;
    symbols_.push_back(symbol);
    return id;
  }

  int id(const std::string& symbol) const {
    auto it = id_of_.find(symbol);
    if (it == id_of_.end())
      throw ArgumentError("PhonemeVocabulary: unknown symbol '" + symbol + "'");
    return it->second;
  }

  bool contains(const std::string& symbol) const { return id_of_.count(symbol) > 0; }
  const std::string& symbol(int id) const { return symbols_.at(id); }
  int size() const { return static_cast<int>(symbols_.size()); }
  int pad_id() const { return 0; }

 private:
  std::map<std::string, int> id_of_;
  std::vector<std::string> symbols_;
};

/// Word-token vocabulary with a reserved <unk> for out-of-corpus words.
class WordVocabulary {
 public:
  WordVocabulary() {
    id_of_["<unk>"] = 0;
    tokens_.push_back("<unk>");
  }
  int add(const std::string& w) {
    auto it = id_of_.find(w);
    if (it != id_of_.end()) return it->second;
    const int id = static_cast<int>(tokens_.size());
    id_of_[w] = id;
    tokens_.push_back(w);
    return id;
  }
  int id(const std::string& w) const {
    auto it = id_of_.find(w);
    return it == id_of_.end() ? 0 : it->second;
  }
  const std::string& token(int id) const { return tokens_.at(id); }
  int size() const { return static_cast<int>(tokens_.size()); }

 private:
  std::map<std::string, int> id_of_;
  std::vector<std::string> tokens_;
};

struct G2pResult {
  std::vector<std::string> phonemes;
  std::vector<std::string> words;
  WordGrouping grouping;
};

/// Grapheme-to-phoneme adapter. A real G2P tool can be plugged in behind this
/// interface; the bundled stub is dictionary-based.
class G2p {
 public:
  virtual ~G2p() = default;
  virtual G2pResult convert(const std::string& text) const = 0;
};

/// Dictionary lookup with a deterministic letter-wise fallback: a word absent
/// from the dictionary is spelled out as one uppercase letter phoneme per
/// alphabetic character. Punctuation is dropped during tokenization.
class DictionaryG2p : public G2p {
 public:
  DictionaryG2p() = default;
  explicit DictionaryG2p(std::map<std::string, std::vector<std::string>> dict)
      : dict_(std::move(dict)) {}
  DictionaryG2p(
      std::initializer_list<std::pair<const std::string, std::vector<std::string>>>
          init)
      : dict_(init) {}

  /// Loads "word<TAB>phoneme phoneme ..." lines (UTF-8).
  static DictionaryG2p from_file(const std::string& path);

  void add_entry(const std::string& word, std::vector<std::string> phonemes) {
    dict_[word] = std::move(phonemes);
  }

  G2pResult convert(const std::string& text) const override;

 private:
  std::map<std::string, std::vector<std::string>> dict_;
};

/// Repeats word-level rows to phoneme level: output row i is the feature of
/// the word whose span contains phoneme i.
template <class Derived>
Mat expand_word_level(const Eigen::MatrixBase<Derived>& word_feats,
                      const WordGrouping& grouping) {
  grouping.validate();
  if (word_feats.rows() != grouping.words())
    throw ArgumentError("expand_word_level: row count != word count");
  Mat out(grouping.phonemes(), word_feats.cols());
  for (int w = 0; w < grouping.words(); ++w)
    for (int p = grouping.word_spans[w].first; p < grouping.word_spans[w].second; ++p)
      out.row(p) = word_feats.row(w);
  return out;
}

/// Arithmetic mean of phoneme-level rows over each word span.
template <class Derived>
Mat pool_phoneme_to_word(const Eigen::MatrixBase<Derived>& phone_feats,
                         const WordGrouping& grouping) {
  grouping.validate();
  if (phone_feats.rows() != grouping.phonemes())
    throw ArgumentError("pool_phoneme_to_word: row count != phoneme count");
  Mat out(grouping.words(), phone_feats.cols());
  for (int w = 0; w < grouping.words(); ++w) {
    const auto [s, e] = grouping.word_spans[w];
    out.row(w) = phone_feats.middleRows(s, e - s).colwise().mean();
  }
  return out;
}

/// L x P averaging matrix M with pool(x) = M * x; used where pooling must be
/// part of a gradient graph.
Mat pooling_matrix(const WordGrouping& grouping);

}  // namespace ps
