#include "semfed/synthetic.hpp"

#include <algorithm>
#include <filesystem>
#include <numeric>

#include "semfed/embedding_io.hpp"
#include "semfed/error.hpp"
#include "semfed/rng.hpp"

namespace semfed {

namespace {

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  std::shuffle(v.begin(), v.end(), rng.engine());
  return v;
}

}  // namespace

Fixture make_fixture(const FixtureConfig& cfg) {
  if (cfg.domains.empty() || cfg.clusters == 0 || cfg.items_per_domain < cfg.clusters) {
    fail(ErrorCode::kConfig, "fixture needs at least one domain and one item per cluster");
  }
  if (cfg.min_len < 3 || cfg.max_len < cfg.min_len) {
    fail(ErrorCode::kConfig, "fixture sequence lengths must satisfy 3 <= min_len <= max_len");
  }
  Rng root(cfg.seed);
  Fixture fx;

  Rng centre_rng = root.derive(1);
  fx.centres = synth_embeddings(cfg.clusters, cfg.text_dim, cfg.text_norm, centre_rng).data;
  fx.cluster_successor = shuffled(cfg.clusters, centre_rng);

  for (std::size_t d = 0; d < cfg.domains.size(); ++d) {
    Rng rng = root.derive(100 + d);
    FixtureDomain dom;
    dom.catalog = Catalog(cfg.domains[d]);
    for (std::size_t i = 0; i < cfg.items_per_domain; ++i) {
      const std::string id = cfg.domains[d] + "-" + std::to_string(i);
      dom.catalog.add(id, "item " + id, "synthetic item " + std::to_string(i));
    }

    // Balanced cluster sizes, randomly placed over item indices.
    const std::vector<std::size_t> order = shuffled(cfg.items_per_domain, rng);
    dom.cluster_of.resize(cfg.items_per_domain);
    std::vector<std::vector<std::size_t>> members(cfg.clusters);
    for (std::size_t r = 0; r < order.size(); ++r) {
      dom.cluster_of[order[r]] = r % cfg.clusters;
    }
    for (std::size_t i = 0; i < cfg.items_per_domain; ++i) {
      members[dom.cluster_of[i]].push_back(i);
    }
    dom.successor.resize(cfg.items_per_domain);
    for (std::size_t i = 0; i < cfg.items_per_domain; ++i) {
      const auto& next = members[fx.cluster_successor[dom.cluster_of[i]]];
      dom.successor[i] = next[rng.uniform_index(next.size())];
    }

    dom.text = synth_embeddings_around(fx.centres, dom.cluster_of, cfg.text_spread,
                                       cfg.text_norm, rng);
    dom.text.domain = cfg.domains[d];

    for (std::size_t u = 0; u < cfg.users_per_domain; ++u) {
      InteractionLog log;
      log.user_id = cfg.domains[d] + "-u" + std::to_string(u);
      log.domain = cfg.domains[d];
      const std::size_t len = cfg.min_len + rng.uniform_index(cfg.max_len - cfg.min_len + 1);
      std::size_t cur = rng.uniform_index(cfg.items_per_domain);
      log.sequence.push_back(cur);
      while (log.sequence.size() < len) {
        const double r = rng.uniform();
        if (r < cfg.follow_item) {
          cur = dom.successor[cur];
        } else if (r < cfg.follow_item + cfg.follow_cluster) {
          const auto& next = members[fx.cluster_successor[dom.cluster_of[cur]]];
          cur = next[rng.uniform_index(next.size())];
        } else {
          cur = rng.uniform_index(cfg.items_per_domain);
        }
        log.sequence.push_back(cur);
      }
      dom.logs.push_back(std::move(log));
    }
    fx.domains.push_back(std::move(dom));
  }
  return fx;
}

void write_fixture(const Fixture& fixture, const std::string& dir) {
  for (const FixtureDomain& dom : fixture.domains) {
    const std::filesystem::path base = std::filesystem::path(dir) / dom.catalog.domain();
    std::filesystem::create_directories(base);
    write_items((base / "items.jsonl").string(), dom.catalog);
    write_interactions((base / "interactions.jsonl").string(), dom.logs, dom.catalog);
    write_embeddings((base / "text.sfub").string(), dom.text);
  }
}

}  // namespace semfed
