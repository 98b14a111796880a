#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "semfed/datamodel.hpp"

namespace semfed {

// Two or more domains whose items share planted semantic clusters. Text
// embeddings of an item sit around its cluster centre (centres are common to
// all domains), and sequences follow a first-order Markov chain: from item i
// the walk moves to the fixed successor of i with probability follow_item,
// otherwise to a uniform item of the successor cluster with probability
// follow_cluster, otherwise to a uniform item of the domain. The cluster
// successor map is shared by all domains.
struct FixtureConfig {
  std::vector<std::string> domains = {"a", "b"};
  std::size_t items_per_domain = 200;
  std::size_t users_per_domain = 500;
  std::size_t clusters = 20;
  std::size_t text_dim = 64;
  Real text_spread = Real(0.35);
  Real text_norm = Real(1);
  std::size_t min_len = 8;
  std::size_t max_len = 16;
  double follow_item = 0.6;
  double follow_cluster = 0.3;
  std::uint64_t seed = 7;
};

struct FixtureDomain {
  Catalog catalog;
  std::vector<InteractionLog> logs;
  EmbeddingMatrix text;                 // raw stage
  std::vector<std::size_t> cluster_of;  // per item
  std::vector<std::size_t> successor;   // per item
};

struct Fixture {
  std::vector<FixtureDomain> domains;
  std::vector<std::size_t> cluster_successor;
  Matrix centres;
};

Fixture make_fixture(const FixtureConfig& cfg);

// Writes items.jsonl, interactions.jsonl and text.sfub for every domain under
// dir/<domain>/.
void write_fixture(const Fixture& fixture, const std::string& dir);

}  // namespace semfed
