#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "semfed/datamodel.hpp"
#include "semfed/wire.hpp"

namespace semfed {

class Rng;

// What a client sends to the server: its encrypted item-text embeddings and
// nothing else.
struct ClientUpload {
  std::string domain;
  EmbeddingMatrix embeddings;  // stage = encrypted
  std::uint32_t version = kProtocolVersion;
};

std::vector<std::uint8_t> serialize_upload(const ClientUpload& upload);
ClientUpload deserialize_upload(std::span<const std::uint8_t> bytes);

// Uploads stacked in arrival order (domain A rows, then domain B rows, ...).
struct PooledEmbeddings {
  Matrix points;
  std::vector<std::string> domains;
  std::vector<std::size_t> offsets;  // global index of each domain's item 0
  std::vector<std::size_t> counts;

  std::size_t global_index(std::size_t domain_slot, std::size_t local) const {
    return offsets[domain_slot] + local;
  }
};

PooledEmbeddings pool(const std::vector<ClientUpload>& uploads);

// k-means++ seeding: first centre uniform, each next with probability
// proportional to squared distance to the nearest chosen centre.
Matrix kmeanspp_init(const Matrix& points, std::size_t k, Rng& rng);

struct CentroidTable {
  std::size_t k = 0;
  Matrix centroids;
  std::vector<std::size_t> assignments;  // global item index -> cluster
  double inertia = 0;
  std::size_t iterations = 0;
  bool converged = false;
  std::vector<double> inertia_history;  // after each Lloyd iteration
};

// Sum of squared Euclidean distances of points to their assigned centroid.
double compute_inertia(const Matrix& points, const Matrix& centroids,
                       const std::vector<std::size_t>& assignments);
// Index of the nearest centroid; ties go to the lowest index.
std::size_t nearest_centroid(std::span<const Real> point, const Matrix& centroids);

// k-means++ seeding followed by Lloyd iterations until no label changes and
// the largest centroid displacement is below tol, or max_iter is reached.
// An emptied cluster is reseeded at the point farthest from its centroid.
// The whole procedure runs `restarts` times from the same rng and the run with
// the lowest inertia is kept, the earliest on ties.
CentroidTable cluster(const Matrix& points, std::size_t k, std::size_t max_iter, double tol,
                      Rng& rng, std::size_t restarts = 10);

struct SyncedEmbeddings {
  std::vector<std::string> domains;
  std::vector<EmbeddingMatrix> per_domain;  // stage = synchronized

  const EmbeddingMatrix& for_domain(const std::string& domain) const;
};

SyncedEmbeddings synchronize(const CentroidTable& table, const PooledEmbeddings& pooled);

struct ServerConfig {
  std::size_t k = 90;
  std::size_t max_iter = 300;
  double tol = 1e-4;
  std::uint64_t seed = 7;
  std::size_t rounds = 1;
  std::size_t restarts = 10;

  bool operator==(const ServerConfig&) const = default;
};

struct RoundReport {
  std::size_t k = 0;
  double inertia = 0;
  std::size_t iterations = 0;
  bool converged = false;
  std::vector<std::string> domains;
  // occupancy[c][d]: items of domain slot d in cluster c.
  std::vector<std::vector<std::size_t>> occupancy;
  std::vector<std::string> warnings;
};

// In-process message exchange with barrier semantics: the server only acts
// once every expected upload has been posted.
class Exchange {
 public:
  void post_upload(std::vector<std::uint8_t> bytes);
  std::size_t pending_uploads() const { return uploads_.size(); }
  const std::vector<std::vector<std::uint8_t>>& uploads() const { return uploads_; }

  void post_response(const std::string& domain, std::vector<std::uint8_t> bytes);
  bool has_response(const std::string& domain) const;
  // Throws a protocol error if no response exists for the domain.
  const std::vector<std::uint8_t>& response(const std::string& domain) const;
  std::size_t response_count() const { return responses_.size(); }

 private:
  std::vector<std::vector<std::uint8_t>> uploads_;
  std::map<std::string, std::vector<std::uint8_t>> responses_;
};

struct RoundResult {
  RoundReport report;
  CentroidTable table;
  SyncedEmbeddings synced;
};

// Server side of one round: decode every upload, pool, cluster, synchronize
// and post one sync response per domain. Any decoding or protocol failure
// throws before a single response is posted.
RoundResult serve_round(Exchange& exchange, std::size_t expected_clients, const ServerConfig& cfg);

// Convenience wrapper running clients and server in-process. With rounds > 1,
// each further round re-clusters the previous round's synchronized rows.
RoundResult run_round(const std::vector<ClientUpload>& uploads, const ServerConfig& cfg);

}  // namespace semfed
