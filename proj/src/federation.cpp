#include "semfed/federation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "semfed/error.hpp"
#include "semfed/rng.hpp"

namespace semfed {

std::vector<std::uint8_t> serialize_upload(const ClientUpload& upload) {
  if (upload.embeddings.stage != Stage::kEncrypted) {
    fail(ErrorCode::kProtocol, "uploads must carry encrypted embeddings");
  }
  return serialize_message(
      WireMessage{MessageType::kUpload, upload.version, upload.domain, upload.embeddings});
}

ClientUpload deserialize_upload(std::span<const std::uint8_t> bytes) {
  WireMessage msg = deserialize_message(bytes);
  if (msg.type != MessageType::kUpload) fail(ErrorCode::kProtocol, "expected an upload message");
  if (msg.embeddings.stage != Stage::kEncrypted) {
    fail(ErrorCode::kProtocol, "upload payload is not tagged encrypted");
  }
  return ClientUpload{msg.domain, std::move(msg.embeddings), msg.version};
}

PooledEmbeddings pool(const std::vector<ClientUpload>& uploads) {
  if (uploads.empty()) fail(ErrorCode::kProtocol, "no uploads to pool");
  const std::size_t dim = uploads[0].embeddings.dim();
  std::size_t total = 0;
  std::set<std::string> seen;
  for (const ClientUpload& u : uploads) {
    if (u.embeddings.dim() != dim) {
      fail(ErrorCode::kProtocol, "domain '" + u.domain + "' has dim " +
                                     std::to_string(u.embeddings.dim()) + ", expected " +
                                     std::to_string(dim));
    }
    if (!seen.insert(u.domain).second) {
      fail(ErrorCode::kProtocol, "duplicate upload for domain '" + u.domain + "'");
    }
    total += u.embeddings.rows();
  }
  PooledEmbeddings pooled;
  pooled.points = Matrix(total, dim);
  std::size_t at = 0;
  for (const ClientUpload& u : uploads) {
    pooled.domains.push_back(u.domain);
    pooled.offsets.push_back(at);
    pooled.counts.push_back(u.embeddings.rows());
    const auto src = u.embeddings.data.data();
    std::copy(src.begin(), src.end(),
              pooled.points.data().begin() + static_cast<std::ptrdiff_t>(at * dim));
    at += u.embeddings.rows();
  }
  return pooled;
}

namespace {

double squared_distance(std::span<const Real> a, std::span<const Real> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = double(a[i]) - double(b[i]);
    s += d * d;
  }
  return s;
}

}  // namespace

Matrix kmeanspp_init(const Matrix& points, std::size_t k, Rng& rng) {
  const std::size_t n = points.rows();
  if (k == 0 || k > n) {
    fail(ErrorCode::kConfig, "k = " + std::to_string(k) + " must lie in [1, " +
                                 std::to_string(n) + "]");
  }
  Matrix centres(k, points.cols());
  std::vector<bool> chosen(n, false);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());

  auto take = [&](std::size_t c, std::size_t idx) {
    chosen[idx] = true;
    auto src = points.row(idx);
    std::copy(src.begin(), src.end(), centres.row(c).begin());
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], squared_distance(points.row(i), src));
    }
  };

  take(0, rng.uniform_index(n));
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) total += d2[i];
    std::size_t pick = n;
    if (total > 0) {
      const double target = rng.uniform() * total;
      double acc = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (d2[i] <= 0) continue;
        acc += d2[i];
        pick = i;
        if (acc > target) break;
      }
    } else {
      // Every point coincides with a chosen centre; fall back to a uniform
      // draw among the points not yet picked.
      std::vector<std::size_t> rest;
      for (std::size_t i = 0; i < n; ++i) {
        if (!chosen[i]) rest.push_back(i);
      }
      pick = rest[rng.uniform_index(rest.size())];
    }
    take(c, pick);
  }
  return centres;
}

std::size_t nearest_centroid(std::span<const Real> point, const Matrix& centroids) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.rows(); ++c) {
    const double d = squared_distance(point, centroids.row(c));
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

double compute_inertia(const Matrix& points, const Matrix& centroids,
                       const std::vector<std::size_t>& assignments) {
  double s = 0;
  for (std::size_t i = 0; i < points.rows(); ++i) {
    s += squared_distance(points.row(i), centroids.row(assignments[i]));
  }
  return s;
}

namespace {

std::vector<std::size_t> assign_all(const Matrix& points, const Matrix& centroids) {
  std::vector<std::size_t> labels(points.rows());
  for (std::size_t i = 0; i < points.rows(); ++i) {
    labels[i] = nearest_centroid(points.row(i), centroids);
  }
  return labels;
}

// Means of assigned points, accumulated in index order in double precision.
// Empty clusters are reseeded at the point farthest from its current centre;
// that point is relabelled so it is not used twice.
Matrix update_means(const Matrix& points, const Matrix& centroids,
                    std::vector<std::size_t>& labels) {
  const std::size_t k = centroids.rows();
  const std::size_t dim = points.cols();
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t l : labels) ++counts[l];

  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] != 0) continue;
    std::size_t far = points.rows();
    double far_d = -1;
    for (std::size_t i = 0; i < points.rows(); ++i) {
      if (counts[labels[i]] <= 1) continue;
      const double d = squared_distance(points.row(i), centroids.row(labels[i]));
      if (d > far_d) {
        far_d = d;
        far = i;
      }
    }
    if (far == points.rows()) continue;  // nothing can be spared
    --counts[labels[far]];
    labels[far] = c;
    counts[c] = 1;
  }

  std::vector<double> acc(k * dim, 0.0);
  for (std::size_t i = 0; i < points.rows(); ++i) {
    auto p = points.row(i);
    double* a = acc.data() + labels[i] * dim;
    for (std::size_t j = 0; j < dim; ++j) a[j] += double(p[j]);
  }
  Matrix means(k, dim);
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] == 0) {
      auto src = centroids.row(c);
      std::copy(src.begin(), src.end(), means.row(c).begin());
      continue;
    }
    for (std::size_t j = 0; j < dim; ++j) {
      means(c, j) = static_cast<Real>(acc[c * dim + j] / double(counts[c]));
    }
  }
  return means;
}

CentroidTable lloyd(const Matrix& points, std::size_t k, std::size_t max_iter, double tol,
                    Rng& rng) {
  CentroidTable table;
  table.k = k;
  table.centroids = kmeanspp_init(points, k, rng);
  std::vector<std::size_t> labels = assign_all(points, table.centroids);
  for (std::size_t iter = 1; iter <= max_iter; ++iter) {
    Matrix means = update_means(points, table.centroids, labels);
    double shift = 0;
    for (std::size_t c = 0; c < k; ++c) {
      shift = std::max(shift, std::sqrt(squared_distance(means.row(c), table.centroids.row(c))));
    }
    table.centroids = std::move(means);
    std::vector<std::size_t> next = assign_all(points, table.centroids);
    const bool changed = next != labels;
    labels = std::move(next);
    table.iterations = iter;
    table.inertia_history.push_back(compute_inertia(points, table.centroids, labels));
    if (!changed && shift < tol) {
      table.converged = true;
      break;
    }
  }
  table.assignments = std::move(labels);
  table.inertia = compute_inertia(points, table.centroids, table.assignments);
  return table;
}

}  // namespace

CentroidTable cluster(const Matrix& points, std::size_t k, std::size_t max_iter, double tol,
                      Rng& rng, std::size_t restarts) {
  if (max_iter < 1) fail(ErrorCode::kConfig, "max_iter must be at least 1");
  if (!(tol > 0)) fail(ErrorCode::kConfig, "tol must be positive");
  if (restarts < 1) fail(ErrorCode::kConfig, "restarts must be at least 1");
  CentroidTable best = lloyd(points, k, max_iter, tol, rng);
  for (std::size_t r = 1; r < restarts; ++r) {
    CentroidTable next = lloyd(points, k, max_iter, tol, rng);
    if (next.inertia < best.inertia) best = std::move(next);
  }
  return best;
}

const EmbeddingMatrix& SyncedEmbeddings::for_domain(const std::string& domain) const {
  for (std::size_t i = 0; i < domains.size(); ++i) {
    if (domains[i] == domain) return per_domain[i];
  }
  fail(ErrorCode::kState, "no synchronized embeddings for domain '" + domain + "'");
}

SyncedEmbeddings synchronize(const CentroidTable& table, const PooledEmbeddings& pooled) {
  if (table.assignments.size() != pooled.points.rows()) {
    fail(ErrorCode::kState, "assignments do not cover the pooled items");
  }
  SyncedEmbeddings out;
  for (std::size_t d = 0; d < pooled.domains.size(); ++d) {
    EmbeddingMatrix m{Matrix(pooled.counts[d], table.centroids.cols()), Stage::kSynchronized,
                      pooled.domains[d]};
    for (std::size_t j = 0; j < pooled.counts[d]; ++j) {
      auto src = table.centroids.row(table.assignments[pooled.global_index(d, j)]);
      std::copy(src.begin(), src.end(), m.data.row(j).begin());
    }
    out.domains.push_back(pooled.domains[d]);
    out.per_domain.push_back(std::move(m));
  }
  return out;
}

void Exchange::post_upload(std::vector<std::uint8_t> bytes) { uploads_.push_back(std::move(bytes)); }

void Exchange::post_response(const std::string& domain, std::vector<std::uint8_t> bytes) {
  responses_[domain] = std::move(bytes);
}

bool Exchange::has_response(const std::string& domain) const {
  return responses_.count(domain) != 0;
}

const std::vector<std::uint8_t>& Exchange::response(const std::string& domain) const {
  auto it = responses_.find(domain);
  if (it == responses_.end()) fail(ErrorCode::kProtocol, "no response for domain '" + domain + "'");
  return it->second;
}

RoundResult serve_round(Exchange& exchange, std::size_t expected_clients, const ServerConfig& cfg) {
  if (exchange.pending_uploads() != expected_clients) {
    fail(ErrorCode::kProtocol, "barrier: expected " + std::to_string(expected_clients) +
                                   " uploads, have " + std::to_string(exchange.pending_uploads()));
  }
  std::vector<ClientUpload> uploads;
  uploads.reserve(expected_clients);
  for (const auto& bytes : exchange.uploads()) uploads.push_back(deserialize_upload(bytes));

  RoundResult result;
  const PooledEmbeddings pooled = pool(uploads);
  if (uploads.size() == 1) {
    result.report.warnings.push_back("single client: clustering one domain only");
  }
  Rng rng(cfg.seed);
  result.table = cluster(pooled.points, cfg.k, cfg.max_iter, cfg.tol, rng, cfg.restarts);
  result.synced = synchronize(result.table, pooled);

  RoundReport& rep = result.report;
  rep.k = result.table.k;
  rep.inertia = result.table.inertia;
  rep.iterations = result.table.iterations;
  rep.converged = result.table.converged;
  rep.domains = pooled.domains;
  rep.occupancy.assign(rep.k, std::vector<std::size_t>(pooled.domains.size(), 0));
  for (std::size_t d = 0; d < pooled.domains.size(); ++d) {
    for (std::size_t j = 0; j < pooled.counts[d]; ++j) {
      ++rep.occupancy[result.table.assignments[pooled.global_index(d, j)]][d];
    }
  }

  // Encode everything before posting anything.
  std::vector<std::vector<std::uint8_t>> responses;
  for (std::size_t d = 0; d < result.synced.domains.size(); ++d) {
    responses.push_back(serialize_message(WireMessage{MessageType::kSyncResponse,
                                                      kProtocolVersion, result.synced.domains[d],
                                                      result.synced.per_domain[d]}));
  }
  for (std::size_t d = 0; d < responses.size(); ++d) {
    exchange.post_response(result.synced.domains[d], std::move(responses[d]));
  }
  return result;
}

RoundResult run_round(const std::vector<ClientUpload>& uploads, const ServerConfig& cfg) {
  if (cfg.rounds < 1) fail(ErrorCode::kConfig, "rounds must be at least 1");
  std::vector<ClientUpload> current = uploads;
  RoundResult result;
  for (std::size_t round = 0; round < cfg.rounds; ++round) {
    Exchange exchange;
    for (const ClientUpload& u : current) exchange.post_upload(serialize_upload(u));
    ServerConfig round_cfg = cfg;
    round_cfg.seed = round == 0 ? cfg.seed : derive_seed(cfg.seed, "round", round);
    result = serve_round(exchange, current.size(), round_cfg);
    // Clients decode their own responses, exactly as over a socket.
    for (std::size_t d = 0; d < current.size(); ++d) {
      WireMessage msg = deserialize_message(exchange.response(current[d].domain));
      if (msg.type != MessageType::kSyncResponse) {
        fail(ErrorCode::kProtocol, "expected a sync response");
      }
      current[d].embeddings = msg.embeddings;
      current[d].embeddings.stage = Stage::kEncrypted;
    }
  }
  return result;
}

}  // namespace semfed
