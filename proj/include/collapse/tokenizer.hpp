#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace collapse {

using TokenId = std::int32_t;
using TokenSequence = std::vector<TokenId>;

enum class VocabKind { byte_level, external };

struct Vocab {
  std::size_t size = 256;
  VocabKind kind = VocabKind::byte_level;
};

inline constexpr std::size_t kByteVocabSize = 256;

// Generation with an empty prompt starts from this byte (newline). It is
// context only: never returned, scored, or counted in metrics.
inline constexpr TokenId kStartToken = 10;

const char* vocab_kind_name(VocabKind kind);
VocabKind parse_vocab_kind(std::string_view name);

// UTF-8 bytes of `text`, one id per byte.
TokenSequence encode(std::string_view text);

// Exact inverse of encode. Throws IndexError for ids outside [0, vocab_size)
// and for ids >= 256, which have no byte representation.
std::string decode(std::span<const TokenId> ids, std::size_t vocab_size = kByteVocabSize);

// Human-readable rendering for transcripts and logs: like decode, but every
// byte that is not part of a well-formed UTF-8 sequence becomes U+FFFD.
std::string display_text(std::span<const TokenId> ids);

}  // namespace collapse
