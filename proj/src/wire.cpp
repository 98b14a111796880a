#include "semfed/wire.hpp"

#include "semfed/bytes.hpp"
#include "semfed/embedding_io.hpp"
#include "semfed/error.hpp"

namespace semfed {

namespace {
constexpr char kMagic[4] = {'S', 'F', 'M', '1'};
}

std::vector<std::uint8_t> serialize_message(const WireMessage& msg) {
  if (msg.domain.size() > 0xFFFF) fail(ErrorCode::kProtocol, "domain label too long");
  ByteWriter w;
  w.raw(std::string_view(kMagic, 4));
  w.u8(static_cast<std::uint8_t>(msg.type));
  w.u32(msg.version);
  w.u16(static_cast<std::uint16_t>(msg.domain.size()));
  w.raw(msg.domain);
  w.raw(embeddings_to_bytes(msg.embeddings));
  return w.take();
}

WireMessage deserialize_message(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, ErrorCode::kProtocol);
  if (r.str(4) != std::string_view(kMagic, 4)) fail(ErrorCode::kProtocol, "bad message magic");
  WireMessage msg;
  const std::uint8_t type = r.u8();
  if (type != static_cast<std::uint8_t>(MessageType::kUpload) &&
      type != static_cast<std::uint8_t>(MessageType::kSyncResponse)) {
    fail(ErrorCode::kProtocol, "unknown message type " + std::to_string(type));
  }
  msg.type = static_cast<MessageType>(type);
  msg.version = r.u32();
  if (msg.version != kProtocolVersion) {
    fail(ErrorCode::kProtocol, "unsupported protocol version " + std::to_string(msg.version));
  }
  msg.domain = r.str(r.u16());
  try {
    msg.embeddings = embeddings_from_bytes(r.rest());
  } catch (const Error& e) {
    fail(ErrorCode::kProtocol, std::string("embedded payload: ") + e.what());
  }
  msg.embeddings.domain = msg.domain;
  return msg;
}

}  // namespace semfed
