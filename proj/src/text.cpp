#include "prosynth/text.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

namespace ps {

DictionaryG2p DictionaryG2p::from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ArgumentError("DictionaryG2p: cannot open " + path);
  std::map<std::string, std::vector<std::string>> dict;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw ParseError("dictionary line " + std::to_string(line_no) +
                       ": missing tab separator");
    const std::string word = line.substr(0, tab);
    std::istringstream rest(line.substr(tab + 1));
    std::vector<std::string> phones;
    std::string p;
    while (rest >> p) phones.push_back(p);
    if (phones.empty())
      throw ParseError("dictionary line " + std::to_string(line_no) +
                       ": word with no phonemes");
    dict[word] = std::move(phones);
  }
  return DictionaryG2p(std::move(dict));
}

G2pResult DictionaryG2p::convert(const std::string& text) const {
  if (text.empty()) throw ArgumentError("g2p: empty text");
  // Tokenize on whitespace, strip non-alphanumeric characters.
  std::istringstream is(text);
  std::string raw;
  G2pResult result;
  int cursor = 0;
  while (is >> raw) {
    std::string word;
    for (char c : raw)
      if (std::isalnum(static_cast<unsigned char>(c)))
        word += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (word.empty()) continue;
    std::vector<std::string> phones;
    auto it = dict_.find(word);
    if (it != dict_.end()) {
      phones = it->second;
    } else {
      // Letter-wise fallback spelling.
      for (char c : word)
        phones.push_back(std::string(1, static_cast<char>(
                                            std::toupper(static_cast<unsigned char>(c)))));
    }
    result.words.push_back(word);
    result.grouping.word_spans.emplace_back(cursor, cursor + static_cast<int>(phones.size()));
    cursor += static_cast<int>(phones.size());
    for (auto& p : phones) result.phonemes.push_back(std::move(p));
  }
  if (result.words.empty())
    throw ArgumentError("g2p: text contains no speakable tokens");
  result.grouping.validate();
  return result;
}

Mat pooling_matrix(const WordGrouping& grouping) {
  grouping.validate();
  Mat m = Mat::Zero(grouping.words(), grouping.phonemes());
  for (int w = 0; w < grouping.words(); ++w) {
    const auto [s, e] = grouping.word_spans[w];
    for (int p = s; p < e; ++p) m(w, p) = 1.0 / (e - s);
  }
  return m;
}

}  // namespace ps
