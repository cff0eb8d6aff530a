#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace nightcap {

/// Bidirectional word <-> id map. Ids 0-3 are reserved for PAD, START, END
/// and UNK; corpus words follow contiguously.
class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kStart = 1;
  static constexpr std::size_t kEnd = 2;
  static constexpr std::size_t kUnk = 3;
  static constexpr std::size_t kReserved = 4;

  Vocabulary();

  /// Builds from corpus words listed in id order (ids kReserved, kReserved+1, ...).
  static Vocabulary from_words(std::span<const std::string> corpus_words);

  std::size_t size() const { return id_to_word_.size(); }
  bool contains(std::string_view word) const { return find(word).has_value(); }
  std::optional<std::size_t> find(std::string_view word) const;
  std::size_t id_or_unk(std::string_view word) const { return find(word).value_or(kUnk); }
  /// Throws DataError for ids outside [0, size).
  const std::string& word(std::size_t id) const;
  const std::vector<std::string>& words() const { return id_to_word_; }
  /// Corpus words only, in id order.
  std::vector<std::string> corpus_words() const;

  friend bool operator==(const Vocabulary&, const Vocabulary&) = default;

 private:
  std::map<std::string, std::size_t, std::less<>> word_to_id_;
  std::vector<std::string> id_to_word_;
};

/// Lowercases, strips .,!?;:"' and splits on whitespace.
std::vector<std::string> tokenize(std::string_view caption);
/// Tokens joined by single spaces.
std::string normalize_caption(std::string_view caption);

/// Words with frequency >= min_count, ordered by descending frequency then
/// lexicographically.
Vocabulary build_vocabulary(std::span<const std::string> captions, std::size_t min_count = 1);

/// [START, ids..., END] right-padded with PAD to max_len. Longer captions are
/// truncated to max_len - 2 words.
std::vector<std::size_t> encode_caption(const Vocabulary& vocab, std::string_view caption,
                                        std::size_t max_len);
std::vector<std::size_t> encode_words(const Vocabulary& vocab, std::span<const std::string> words,
                                      std::size_t max_len);

/// Joins words up to the first END, dropping PAD and START.
std::string decode_ids(const Vocabulary& vocab, std::span<const std::size_t> ids);

}  // namespace nightcap
