#include "collapse/tokenizer.hpp"

#include "collapse/errors.hpp"

namespace collapse {

const char* vocab_kind_name(VocabKind kind) {
  return kind == VocabKind::byte_level ? "byte" : "external";
}

VocabKind parse_vocab_kind(std::string_view name) {
  if (name == "byte") {
    return VocabKind::byte_level;
  }
  if (name == "external") {
    return VocabKind::external;
  }
  throw FormatError("unknown vocab kind '" + std::string(name) + "'");
}

TokenSequence encode(std::string_view text) {
  TokenSequence ids;
  ids.reserve(text.size());
  for (const char c : text) {
    ids.push_back(static_cast<TokenId>(static_cast<unsigned char>(c)));
  }
  return ids;
}

std::string decode(std::span<const TokenId> ids, std::size_t vocab_size) {
  std::string text;
  text.reserve(ids.size());
  for (const TokenId id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_size || id >= 256) {
      throw IndexError("decode: token id " + std::to_string(id) + " is not a byte in a vocabulary of " +
                       std::to_string(vocab_size));
    }
    text.push_back(static_cast<char>(static_cast<unsigned char>(id)));
  }
  return text;
}

namespace {

// Length of the well-formed UTF-8 sequence starting at s[i], or 0.
std::size_t utf8_sequence_length(const std::string& s, std::size_t i) {
  const auto byte = [&](std::size_t k) { return static_cast<unsigned char>(s[k]); };
  const unsigned char b0 = byte(i);
  if (b0 < 0x80) {
    return 1;
  }
  std::size_t len = 0;
  unsigned char lo = 0x80;
  unsigned char hi = 0xBF;
  if (b0 >= 0xC2 && b0 <= 0xDF) {
    len = 2;
  } else if (b0 >= 0xE0 && b0 <= 0xEF) {
    len = 3;
    if (b0 == 0xE0) {
      lo = 0xA0;
    } else if (b0 == 0xED) {
      hi = 0x9F;
    }
  } else if (b0 >= 0xF0 && b0 <= 0xF4) {
    len = 4;
    if (b0 == 0xF0) {
      lo = 0x90;
    } else if (b0 == 0xF4) {
      hi = 0x8F;
    }
  } else {
    return 0;
  }
  if (i + len > s.size()) {
    return 0;
  }
  for (std::size_t k = 1; k < len; ++k) {
    const unsigned char b = byte(i + k);
    const unsigned char l = k == 1 ? lo : 0x80;
    const unsigned char h = k == 1 ? hi : 0xBF;
    if (b < l || b > h) {
      return 0;
    }
  }
  return len;
}

}  // namespace

std::string display_text(std::span<const TokenId> ids) {
  const std::string raw = decode(ids);
  std::string out;
  out.reserve(raw.size());
  std::size_t i = 0;
  while (i < raw.size()) {
    const std::size_t len = utf8_sequence_length(raw, i);
    if (len == 0) {
      out += "\xEF\xBF\xBD";
      ++i;
    } else {
      out.append(raw, i, len);
      i += len;
    }
  }
  return out;
}

}  // namespace collapse
