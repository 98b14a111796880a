#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "semfed/datamodel.hpp"

namespace semfed {

// Federation wire message:
//   magic "SFM1" | type u8 (1 = upload, 2 = sync response) | version u32 = 1 |
//   domain label length u16 | label UTF-8 bytes | SFUB embedding payload.
inline constexpr std::uint32_t kProtocolVersion = 1;

enum class MessageType : std::uint8_t {
  kUpload = 1,
  kSyncResponse = 2,
};

struct WireMessage {
  MessageType type = MessageType::kUpload;
  std::uint32_t version = kProtocolVersion;
  std::string domain;
  EmbeddingMatrix embeddings;
};

std::vector<std::uint8_t> serialize_message(const WireMessage& msg);
// Any malformation (magic, type, version, truncation, embedded payload) is a
// protocol error.
WireMessage deserialize_message(std::span<const std::uint8_t> bytes);

}  // namespace semfed
