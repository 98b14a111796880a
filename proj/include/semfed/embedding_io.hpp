#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "semfed/datamodel.hpp"

namespace semfed {

// SFUB embedding file:
//   magic "SFUB" | version u32 = 1 | rows u32 | dim u32 | stage u8 |
//   rows*dim little-endian f32, row-major.
inline constexpr std::uint32_t kEmbeddingFormatVersion = 1;
inline constexpr std::size_t kEmbeddingHeaderSize = 4 + 4 + 4 + 4 + 1;

std::vector<std::uint8_t> embeddings_to_bytes(const EmbeddingMatrix& m);
// The whole span must be exactly one embedding payload.
EmbeddingMatrix embeddings_from_bytes(std::span<const std::uint8_t> bytes);

void write_embeddings(const std::string& path, const EmbeddingMatrix& m);
EmbeddingMatrix read_embeddings(const std::string& path);

}  // namespace semfed
