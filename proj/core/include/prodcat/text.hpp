#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "prodcat/catalog.hpp"

namespace prodcat {

/// Lowercases and splits on runs of Unicode whitespace. Input is UTF-8;
/// invalid bytes pass through untouched.
std::vector<std::string> tokenize(std::string_view text);

/// UTF-8 aware lowercasing (ASCII, Latin-1, Latin Extended-A, Greek, Cyrillic).
std::string to_lower(std::string_view text);

/// Turns an attribute name or value into plain words: '_', '-' and '/' become
/// spaces, whitespace runs collapse, the result is lowercased and trimmed.
std::string naturalize(std::string_view name_or_value);

/// Token <-> index map with three reserved entries. Immutable once built and
/// safe to share across threads.
class Dictionary {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kUnk = 1;
  static constexpr std::int32_t kSep = 2;
  static constexpr std::size_t kReserved = 3;
  static constexpr std::string_view kPadToken = "<pad>";
  static constexpr std::string_view kUnkToken = "<unk>";
  static constexpr std::string_view kSepToken = "__sep__";

  Dictionary();

  std::size_t size() const { return tokens_.size(); }
  bool contains(std::string_view token) const;
  /// Index for a text token; the literal PAD/UNK spellings and unknown tokens
  /// map to kUnk, the separator literal maps to kSep.
  std::int32_t lookup(std::string_view token) const;
  const std::string& token(std::int32_t index) const { return tokens_.at(static_cast<std::size_t>(index)); }
  std::uint64_t frequency(std::int32_t index) const { return freqs_.at(static_cast<std::size_t>(index)); }

  /// Appends a new token. Throws if it is already present.
  std::int32_t add(std::string token, std::uint64_t frequency);

  /// `index<TAB>token<TAB>frequency` per line, ascending, reserved rows first.
  std::string to_text() const;
  static Dictionary parse(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static Dictionary load(const std::filesystem::path& path);

  friend bool operator==(const Dictionary& a, const Dictionary& b) {
    return a.tokens_ == b.tokens_ && a.freqs_ == b.freqs_;
  }

 private:
  std::vector<std::string> tokens_;
  std::vector<std::uint64_t> freqs_;
  std::unordered_map<std::string, std::int32_t> index_;
};

/// Keeps the `max_size - 3` most frequent tokens of the corpus, ties broken
/// lexicographically. Requires max_size >= 3.
Dictionary build_dictionary(std::span<const std::string> corpus, std::size_t max_size);

/// Joint dictionary over naturalized structured attribute names and values.
/// Every attribute-name token is kept; value tokens fill the remaining room by
/// frequency. Throws ConfigError when the name tokens alone do not fit.
Dictionary build_attribute_dictionary(std::span<const Product> products, std::size_t max_size);

/// `name value __sep__ name value ...` in stored attribute order; the
/// separator is replaced by a single space when `with_separator` is false.
std::string serialize_structured(const Product& product, bool with_separator = true);

/// Minimum encoded length: the widest default convolution filter.
inline constexpr std::size_t kMinEncodedLength = 5;

struct TokenSequence {
  std::vector<std::int32_t> indices;
  std::string source_attribute;
  /// Number of leading PAD entries added by padding.
  std::size_t pad_count = 0;

  std::size_t real_length() const { return indices.size() - pad_count; }
};

/// Tokenizes, maps through `dict`, keeps the first `max_len` tokens and
/// left-pads with PAD up to `min_len`.
TokenSequence encode(std::string_view text, const Dictionary& dict, std::size_t max_len,
                     std::size_t min_len = kMinEncodedLength);

}  // namespace prodcat
