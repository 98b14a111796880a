#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "semfed/matrix.hpp"

namespace semfed {

// Versioned container for model artifacts:
//   magic "SFCK" | version u32 = 1 | metadata length u32 | metadata JSON bytes |
//   tensor count u32 | per tensor: name length u16, name bytes, rows u32,
//   cols u32, rows*cols little-endian f32.
struct Checkpoint {
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<std::pair<std::string, Matrix>> tensors;

  void add(std::string name, const Matrix& m) { tensors.emplace_back(std::move(name), m); }
  // Throws a format error naming the tensor if absent.
  const Matrix& get(const std::string& name) const;
  bool has(const std::string& name) const;

  std::vector<std::uint8_t> to_bytes() const;
  static Checkpoint from_bytes(std::span<const std::uint8_t> bytes);

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

}  // namespace semfed
