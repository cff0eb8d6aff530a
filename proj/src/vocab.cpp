#include "nightcap/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <string_view>
#include <unordered_map>

#include "nightcap/error.hpp"

namespace nightcap {

namespace {

constexpr std::string_view kStripped = ".,!?;:\"'";

}  // namespace

Vocabulary::Vocabulary() : id_to_word_{"<pad>", "<start>", "<end>", "<unk>"} {
  for (std::size_t i = 0; i < id_to_word_.size(); ++i) word_to_id_.emplace(id_to_word_[i], i);
}

Vocabulary Vocabulary::from_words(std::span<const std::string> corpus_words) {
  Vocabulary v;
  for (const auto& w : corpus_words) {
    if (w.empty()) throw DataError("vocabulary: empty word");
    if (!v.word_to_id_.emplace(w, v.id_to_word_.size()).second) {
      throw DataError("vocabulary: duplicate word '" + w + "'");
    }
    v.id_to_word_.push_back(w);
  }
  return v;
}

std::optional<std::size_t> Vocabulary::find(std::string_view word) const {
  auto it = word_to_id_.find(word);
  if (it == word_to_id_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocabulary::word(std::size_t id) const {
  if (id >= id_to_word_.size()) {
    throw DataError("token id " + std::to_string(id) + " out of range for vocabulary of size " +
                    std::to_string(id_to_word_.size()));
  }
  return id_to_word_[id];
}

std::vector<std::string> Vocabulary::corpus_words() const {
  return {id_to_word_.begin() + kReserved, id_to_word_.end()};
}

std::vector<std::string> tokenize(std::string_view caption) {
  std::vector<std::string> tokens;
  std::string current;
  for (char ch : caption) {
    if (kStripped.find(ch) != std::string_view::npos) continue;
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!current.empty()) tokens.push_back(std::move(current));
      current.clear();
      continue;
    }
    current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

std::string normalize_caption(std::string_view caption) {
  std::string out;
  for (const auto& t : tokenize(caption)) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

Vocabulary build_vocabulary(std::span<const std::string> captions, std::size_t min_count) {
  if (min_count == 0) throw ParameterError("build_vocabulary: min_count must be >= 1");
  std::unordered_map<std::string, std::size_t> counts;
  std::size_t total = 0;
  for (const auto& c : captions) {
    for (auto& t : tokenize(c)) {
      ++counts[std::move(t)];
      ++total;
    }
  }
  if (total == 0) throw DataError("build_vocabulary: corpus contains no words");

  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [w, n] : counts) {
    if (n >= min_count) ranked.emplace_back(w, n);
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  std::vector<std::string> words;
  Vocabulary reserved;
  for (auto& [w, n] : ranked) {
    if (reserved.contains(w)) continue;  // a literal "<unk>" in a caption stays UNK
    words.push_back(std::move(w));
  }
  return Vocabulary::from_words(words);
}

std::vector<std::size_t> encode_words(const Vocabulary& vocab, std::span<const std::string> words,
                                      std::size_t max_len) {
  if (max_len < 2) throw ParameterError("encode_caption: max_len must be >= 2");
  std::vector<std::size_t> ids;
  ids.reserve(max_len);
  ids.push_back(Vocabulary::kStart);
  const std::size_t kept = std::min(words.size(), max_len - 2);
  for (std::size_t i = 0; i < kept; ++i) ids.push_back(vocab.id_or_unk(words[i]));
  ids.push_back(Vocabulary::kEnd);
  ids.resize(max_len, Vocabulary::kPad);
  return ids;
}

std::vector<std::size_t> encode_caption(const Vocabulary& vocab, std::string_view caption,
                                        std::size_t max_len) {
  const auto words = tokenize(caption);
  return encode_words(vocab, words, max_len);
}

std::string decode_ids(const Vocabulary& vocab, std::span<const std::size_t> ids) {
  for (auto id : ids) vocab.word(id);  // range check everything up front
  std::string out;
  for (auto id : ids) {
    if (id == Vocabulary::kEnd) break;
    if (id == Vocabulary::kPad || id == Vocabulary::kStart) continue;
    if (!out.empty()) out += ' ';
    out += vocab.word(id);
  }
  return out;
}

}  // namespace nightcap
