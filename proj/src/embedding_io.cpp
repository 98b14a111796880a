#include "semfed/embedding_io.hpp"

#include "semfed/bytes.hpp"
#include "semfed/error.hpp"

namespace semfed {

namespace {
constexpr char kMagic[4] = {'S', 'F', 'U', 'B'};
}

std::vector<std::uint8_t> embeddings_to_bytes(const EmbeddingMatrix& m) {
  ByteWriter w;
  w.bytes().reserve(kEmbeddingHeaderSize + m.data.size() * 4);
  w.raw(std::string_view(kMagic, 4));
  w.u32(kEmbeddingFormatVersion);
  w.u32(static_cast<std::uint32_t>(m.rows()));
  w.u32(static_cast<std::uint32_t>(m.dim()));
  w.u8(static_cast<std::uint8_t>(m.stage));
  for (Real v : m.data.data()) w.f32(static_cast<float>(v));
  return w.take();
}

EmbeddingMatrix embeddings_from_bytes(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, ErrorCode::kFormat);
  if (r.remaining() < kEmbeddingHeaderSize) {
    fail(ErrorCode::kFormat, "embedding payload shorter than header");
  }
  if (r.str(4) != std::string_view(kMagic, 4)) fail(ErrorCode::kFormat, "bad embedding magic");
  const std::uint32_t version = r.u32();
  if (version != kEmbeddingFormatVersion) {
    fail(ErrorCode::kFormat, "unsupported embedding format version " + std::to_string(version));
  }
  const std::size_t rows = r.u32();
  const std::size_t dim = r.u32();
  const std::uint8_t stage = r.u8();
  if (stage > static_cast<std::uint8_t>(Stage::kSynchronized)) {
    fail(ErrorCode::kFormat, "unknown stage tag " + std::to_string(stage));
  }
  const std::size_t payload = rows * dim * 4;
  if (r.remaining() != payload) {
    fail(ErrorCode::kFormat, "header claims " + std::to_string(rows) + "x" + std::to_string(dim) +
                                 " floats but payload has " + std::to_string(r.remaining()) +
                                 " bytes");
  }
  EmbeddingMatrix m{Matrix(rows, dim), static_cast<Stage>(stage), {}};
  for (auto& v : m.data.data()) v = static_cast<Real>(r.f32());
  return m;
}

void write_embeddings(const std::string& path, const EmbeddingMatrix& m) {
  write_file_bytes(path, embeddings_to_bytes(m));
}

EmbeddingMatrix read_embeddings(const std::string& path) {
  return embeddings_from_bytes(read_file_bytes(path));
}

}  // namespace semfed
