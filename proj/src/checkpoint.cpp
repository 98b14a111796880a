#include "semfed/checkpoint.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "semfed/bytes.hpp"
#include "semfed/error.hpp"

namespace semfed {

namespace {
constexpr char kMagic[4] = {'S', 'F', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::kIo, "cannot write " + tmp);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorCode::kIo, "write failed for " + tmp);
  }
  fs::rename(tmp, target);
}

const Matrix& Checkpoint::get(const std::string& name) const {
  for (const auto& [n, m] : tensors) {
    if (n == name) return m;
  }
  fail(ErrorCode::kFormat, "checkpoint has no tensor '" + name + "'");
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.first == name) return true;
  }
  return false;
}

std::vector<std::uint8_t> Checkpoint::to_bytes() const {
  ByteWriter w;
  w.raw(std::string_view(kMagic, 4));
  w.u32(kVersion);
  const std::string meta = metadata.dump();
  w.u32(static_cast<std::uint32_t>(meta.size()));
  w.raw(meta);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, m] : tensors) {
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.raw(name);
    w.u32(static_cast<std::uint32_t>(m.rows()));
    w.u32(static_cast<std::uint32_t>(m.cols()));
    for (Real v : m.data()) w.f32(static_cast<float>(v));
  }
  return w.take();
}

Checkpoint Checkpoint::from_bytes(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, ErrorCode::kFormat);
  if (r.str(4) != std::string_view(kMagic, 4)) fail(ErrorCode::kFormat, "bad checkpoint magic");
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    fail(ErrorCode::kFormat, "unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  const std::uint32_t meta_len = r.u32();
  try {
    ck.metadata = nlohmann::json::parse(r.str(meta_len));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, std::string("checkpoint metadata: ") + e.what());
  }
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str(r.u16());
    const std::size_t rows = r.u32();
    const std::size_t cols = r.u32();
    r.need(rows * cols * 4);
    Matrix m(rows, cols);
    for (auto& v : m.data()) v = static_cast<Real>(r.f32());
    ck.tensors.emplace_back(std::move(name), std::move(m));
  }
  if (r.remaining() != 0) fail(ErrorCode::kFormat, "trailing bytes in checkpoint");
  return ck;
}

void Checkpoint::save(const std::string& path) const { write_file_bytes(path, to_bytes()); }

Checkpoint Checkpoint::load(const std::string& path) {
  return from_bytes(read_file_bytes(path));
}

}  // namespace semfed
