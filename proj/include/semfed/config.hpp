#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "semfed/federation.hpp"
#include "semfed/fkd.hpp"
#include "semfed/promptrec.hpp"
#include "semfed/seqrec.hpp"
#include "semfed/tiny_lm.hpp"

namespace semfed {

enum class Ablation { kFull, kTextOnly, kIdOnly, kKdLocal, kFkdNoProjection };

const char* ablation_name(Ablation a);
Ablation parse_ablation(const std::string& name);

struct DomainData {
  std::string name;
  std::string items;
  std::string interactions;
  std::string text;  // raw text embeddings (SFUB)

  bool operator==(const DomainData&) const = default;
};

struct RunConfig {
  std::vector<DomainData> domains = {{"a", "", "", ""}, {"b", "", "", ""}};
  // Domains that get the ID path, Stage 2 and evaluation; empty means all.
  std::vector<std::string> stage2_domains;
  std::size_t min_len = 5;
  std::size_t keep_last = 50;
  std::uint64_t seed = 7;
  double sigma = 0.1;
  ServerConfig server;
  SeqRecConfig seqrec;
  FkdConfig fkd;
  TinyLmConfig lm;
  FinetuneConfig stage2;
  std::size_t n_soft = 1;
  // Training examples per user taken from the most recent prefixes; 0 = all.
  std::size_t prefixes = 0;
  std::string prompt_template = default_template();
  Ablation ablation = Ablation::kFull;

  bool operator==(const RunConfig&) const = default;

  // Throws a config error naming the offending key.
  void validate() const;
  std::vector<std::string> active_stage2_domains() const;
  const DomainData& domain(const std::string& name) const;
};

// Flat `key = value` lines; `#` starts a comment. Relative data paths are
// resolved against base_dir.
RunConfig parse_config_text(const std::string& text, const std::string& base_dir = "");
RunConfig parse_config(const std::string& path);
std::string serialize_config(const RunConfig& cfg);

// Sets one key as if it appeared in a config file.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);

}  // namespace semfed
