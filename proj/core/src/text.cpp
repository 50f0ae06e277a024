#include "prodcat/text.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "prodcat/error.hpp"

namespace prodcat {

namespace {

// Decodes one UTF-8 code point starting at `pos`. Malformed sequences yield
// the single byte as-is with length 1.
struct Decoded {
  char32_t cp;
  std::size_t len;
  bool valid;
};

Decoded decode(std::string_view s, std::size_t pos) {
  const auto b0 = static_cast<unsigned char>(s[pos]);
  if (b0 < 0x80) {
    return {b0, 1, true};
  }
  std::size_t len = 0;
  char32_t cp = 0;
  if ((b0 & 0xE0) == 0xC0) {
    len = 2;
    cp = b0 & 0x1F;
  } else if ((b0 & 0xF0) == 0xE0) {
    len = 3;
    cp = b0 & 0x0F;
  } else if ((b0 & 0xF8) == 0xF0) {
    len = 4;
    cp = b0 & 0x07;
  } else {
    return {b0, 1, false};
  }
  if (pos + len > s.size()) {
    return {b0, 1, false};
  }
  for (std::size_t i = 1; i < len; ++i) {
    const auto b = static_cast<unsigned char>(s[pos + i]);
    if ((b & 0xC0) != 0x80) {
      return {b0, 1, false};
    }
    cp = (cp << 6) | (b & 0x3F);
  }
  return {cp, len, true};
}

void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xF0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
}

bool is_space(char32_t cp) {
  return (cp >= 0x09 && cp <= 0x0D) || cp == 0x20 || cp == 0x85 || cp == 0xA0 || cp == 0x1680 ||
         (cp >= 0x2000 && cp <= 0x200A) || cp == 0x2028 || cp == 0x2029 || cp == 0x202F || cp == 0x205F ||
         cp == 0x3000;
}

char32_t lower(char32_t cp) {
  if (cp >= 'A' && cp <= 'Z') return cp + 32;
  if (cp < 0xC0) return cp;
  if (cp <= 0xDE) return cp == 0xD7 ? cp : cp + 32;
  if (cp >= 0x100 && cp <= 0x17F) {
    if (cp == 0x130) return U'i';
    if (cp == 0x178) return 0xFF;
    const bool even_upper = (cp <= 0x12F) || (cp >= 0x132 && cp <= 0x137) || (cp >= 0x14A && cp <= 0x177);
    const bool odd_upper = (cp >= 0x139 && cp <= 0x148) || (cp >= 0x179 && cp <= 0x17E);
    if ((even_upper && cp % 2 == 0) || (odd_upper && cp % 2 == 1)) return cp + 1;
    return cp;
  }
  if (cp >= 0x391 && cp <= 0x3A9 && cp != 0x3A2) return cp + 32;
  if (cp == 0x386) return 0x3AC;
  if (cp >= 0x388 && cp <= 0x38A) return cp + 37;
  if (cp == 0x38C) return 0x3CC;
  if (cp == 0x38E || cp == 0x38F) return cp + 63;
  if (cp >= 0x410 && cp <= 0x42F) return cp + 32;
  if (cp >= 0x400 && cp <= 0x40F) return cp + 80;
  return cp;
}

struct TokenCount {
  std::string token;
  std::uint64_t count;
};

// Most frequent first, then lexicographic.
std::vector<TokenCount> ranked(const std::map<std::string, std::uint64_t>& counts) {
  std::vector<TokenCount> out;
  out.reserve(counts.size());
  for (const auto& [token, count] : counts) {
    out.push_back({token, count});
  }
  std::stable_sort(out.begin(), out.end(), [](const TokenCount& a, const TokenCount& b) { return a.count > b.count; });
  return out;
}

bool is_reserved_spelling(std::string_view token) {
  return token == Dictionary::kPadToken || token == Dictionary::kUnkToken || token == Dictionary::kSepToken;
}

}  // namespace

std::string to_lower(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (std::size_t pos = 0; pos < text.size();) {
    const auto d = decode(text, pos);
    if (d.valid) {
      append_utf8(out, lower(d.cp));
    } else {
      out += text[pos];
    }
    pos += d.len;
  }
  return out;
}

std::vector<std::string> tokenize(std::string_view text) {
  const std::string lowered = to_lower(text);
  const std::string_view s = lowered;
  std::vector<std::string> tokens;
  std::size_t start = std::string_view::npos;
  for (std::size_t pos = 0; pos < s.size();) {
    const auto d = decode(s, pos);
    if (d.valid && is_space(d.cp)) {
      if (start != std::string_view::npos) {
        tokens.emplace_back(s.substr(start, pos - start));
        start = std::string_view::npos;
      }
    } else if (start == std::string_view::npos) {
      start = pos;
    }
    pos += d.len;
  }
  if (start != std::string_view::npos) {
    tokens.emplace_back(s.substr(start));
  }
  return tokens;
}

std::string naturalize(std::string_view name_or_value) {
  std::string replaced(name_or_value);
  std::replace_if(replaced.begin(), replaced.end(), [](char c) { return c == '_' || c == '-' || c == '/'; }, ' ');
  std::string out;
  for (const auto& token : tokenize(replaced)) {
    if (!out.empty()) {
      out += ' ';
    }
    out += token;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dictionary

Dictionary::Dictionary() {
  add(std::string(kPadToken), 0);
  add(std::string(kUnkToken), 0);
  add(std::string(kSepToken), 0);
}

bool Dictionary::contains(std::string_view token) const { return index_.find(std::string(token)) != index_.end(); }

std::int32_t Dictionary::lookup(std::string_view token) const {
  if (token == kPadToken || token == kUnkToken) {
    return kUnk;
  }
  const auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

std::int32_t Dictionary::add(std::string token, std::uint64_t frequency) {
  const auto index = static_cast<std::int32_t>(tokens_.size());
  if (!index_.emplace(token, index).second) {
    throw std::invalid_argument("dictionary: duplicate token '" + token + "'");
  }
  tokens_.push_back(std::move(token));
  freqs_.push_back(frequency);
  return index;
}

std::string Dictionary::to_text() const {
  std::string out;
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    out += std::to_string(i);
    out += '\t';
    out += tokens_[i];
    out += '\t';
    out += std::to_string(freqs_[i]);
    out += '\n';
  }
  return out;
}

Dictionary Dictionary::parse(std::string_view text) {
  Dictionary dict;
  std::size_t expected = 0;
  std::size_t start = 0;
  std::size_t line_no = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) {
      end = text.size();
    }
    const auto line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string_view::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string_view::npos) {
      throw std::invalid_argument("dictionary line " + std::to_string(line_no) + ": expected index<TAB>token<TAB>frequency");
    }
    std::size_t index = 0;
    std::uint64_t freq = 0;
    try {
      std::size_t used = 0;
      index = std::stoull(std::string(line.substr(0, t1)), &used);
      if (used != t1) throw std::invalid_argument("index");
      const auto freq_text = std::string(line.substr(t2 + 1));
      freq = std::stoull(freq_text, &used);
      if (used != freq_text.size()) throw std::invalid_argument("frequency");
    } catch (const std::exception&) {
      throw std::invalid_argument("dictionary line " + std::to_string(line_no) + ": bad number");
    }
    const auto token = std::string(line.substr(t1 + 1, t2 - t1 - 1));
    if (index != expected) {
      throw std::invalid_argument("dictionary line " + std::to_string(line_no) + ": indices must be dense and ascending");
    }
    if (index < kReserved) {
      if (token != dict.tokens_[index]) {
        throw std::invalid_argument("dictionary line " + std::to_string(line_no) + ": reserved row mismatch");
      }
      dict.freqs_[index] = freq;
    } else {
      dict.add(token, freq);
    }
    ++expected;
  }
  if (expected < kReserved) {
    throw std::invalid_argument("dictionary: missing reserved rows");
  }
  return dict;
}

void Dictionary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot write dictionary " + path.string());
  }
  out << to_text();
}

Dictionary Dictionary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot read dictionary " + path.string());
  }
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str());
}

Dictionary build_dictionary(std::span<const std::string> corpus, std::size_t max_size) {
  if (max_size < Dictionary::kReserved) {
    throw std::invalid_argument("build_dictionary: max_size must be >= 3");
  }
  std::map<std::string, std::uint64_t> counts;
  for (const auto& text : corpus) {
    for (auto& token : tokenize(text)) {
      if (!is_reserved_spelling(token)) {
        ++counts[std::move(token)];
      }
    }
  }
  Dictionary dict;
  for (auto& [token, count] : ranked(counts)) {
    if (dict.size() >= max_size) {
      break;
    }
    dict.add(std::move(token), count);
  }
  return dict;
}

Dictionary build_attribute_dictionary(std::span<const Product> products, std::size_t max_size) {
  if (max_size < Dictionary::kReserved) {
    throw std::invalid_argument("build_attribute_dictionary: max_size must be >= 3");
  }
  std::map<std::string, std::uint64_t> joint;
  std::map<std::string, std::uint64_t> names;
  for (const auto& product : products) {
    for (const auto& [name, value] : product.structured) {
      for (auto& token : tokenize(naturalize(name))) {
        if (!is_reserved_spelling(token)) {
          ++joint[token];
          names[token] = 0;
        }
      }
      for (auto& token : tokenize(naturalize(value))) {
        if (!is_reserved_spelling(token)) {
          ++joint[std::move(token)];
        }
      }
    }
  }
  if (names.size() + Dictionary::kReserved > max_size) {
    throw ConfigError("attribute dictionary needs max_size >= " + std::to_string(names.size() + Dictionary::kReserved) +
                      " to hold every attribute-name token (got " + std::to_string(max_size) + ")");
  }
  for (auto& [token, count] : names) {
    count = joint[token];
  }
  Dictionary dict;
  for (auto& [token, count] : ranked(names)) {
    dict.add(std::move(token), count);
  }
  for (auto& [token, count] : ranked(joint)) {
    if (dict.size() >= max_size) {
      break;
    }
    if (!names.contains(token)) {
      dict.add(std::move(token), count);
    }
  }
  return dict;
}

std::string serialize_structured(const Product& product, bool with_separator) {
  const std::string joiner = with_separator ? " " + std::string(Dictionary::kSepToken) + " " : " ";
  std::string out;
  for (const auto& [name, value] : product.structured) {
    std::string part = naturalize(name);
    const std::string v = naturalize(value);
    if (!v.empty()) {
      if (!part.empty()) {
        part += ' ';
      }
      part += v;
    }
    if (part.empty()) {
      continue;
    }
    if (!out.empty()) {
      out += joiner;
    }
    out += part;
  }
  return out;
}

TokenSequence encode(std::string_view text, const Dictionary& dict, std::size_t max_len, std::size_t min_len) {
  if (max_len < 1) {
    throw std::invalid_argument("encode: max_len must be >= 1");
  }
  const auto tokens = tokenize(text);
  const std::size_t kept = std::min(tokens.size(), max_len);
  TokenSequence seq;
  seq.pad_count = kept < min_len ? min_len - kept : 0;
  seq.indices.assign(seq.pad_count, Dictionary::kPad);
  seq.indices.reserve(seq.pad_count + kept);
  for (std::size_t i = 0; i < kept; ++i) {
    seq.indices.push_back(dict.lookup(tokens[i]));
  }
  return seq;
}

}  // namespace prodcat
