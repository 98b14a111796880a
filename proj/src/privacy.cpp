#include "semfed/privacy.hpp"

#include <cmath>

#include "semfed/error.hpp"
#include "semfed/rng.hpp"

namespace semfed {

EmbeddingMatrix perturb(const EmbeddingMatrix& raw, const PerturbationConfig& cfg) {
  if (raw.stage != Stage::kRaw) {
    fail(ErrorCode::kState, std::string("perturb expects raw embeddings, got ") +
                                stage_name(raw.stage));
  }
  if (!std::isfinite(cfg.sigma) || cfg.sigma < 0) {
    fail(ErrorCode::kConfig, "sigma must be finite and non-negative");
  }
  if (!raw.data.all_finite()) fail(ErrorCode::kInput, "raw embeddings contain non-finite values");
  EmbeddingMatrix out = raw;
  out.stage = Stage::kPerturbed;
  if (cfg.sigma == 0) return out;
  Rng rng(cfg.seed);
  for (auto& v : out.data.data()) v += static_cast<Real>(rng.normal(0.0, double(cfg.sigma)));
  return out;
}

SimilarityTable masked_similarity(const EmbeddingMatrix& perturbed) {
  const std::size_t n = perturbed.rows();
  if (n == 0) fail(ErrorCode::kInput, "similarity of an empty embedding set");
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    norms[i] = std::sqrt(squared_norm(perturbed.data.row(i)));
    if (norms[i] == 0.0) {
      fail(ErrorCode::kDegenerateInput, "row " + std::to_string(i) + " has zero norm");
    }
  }
  SimilarityTable table{Matrix(n, n)};
  for (std::size_t i = 0; i < n; ++i) {
    table.scores(i, i) = Real(-1);  // cos(p, p) - 2
    for (std::size_t j = i + 1; j < n; ++j) {
      double c = dot(perturbed.data.row(i), perturbed.data.row(j)) / (norms[i] * norms[j]);
      c = std::clamp(c, -1.0, 1.0);
      table.scores(i, j) = static_cast<Real>(c);
      table.scores(j, i) = static_cast<Real>(c);
    }
  }
  return table;
}

EncryptedEmbeddings similarity_replace(const EmbeddingMatrix& perturbed,
                                       const SimilarityTable& table) {
  const std::size_t n = perturbed.rows();
  if (n < 2) fail(ErrorCode::kNoNeighbor, "similarity replacement needs at least two items");
  if (table.scores.rows() != n || table.scores.cols() != n) {
    fail(ErrorCode::kDimension, "similarity table does not match embedding count");
  }
  EncryptedEmbeddings out;
  out.rows = EmbeddingMatrix{Matrix(n, perturbed.dim()), Stage::kEncrypted, perturbed.domain};
  out.replacement_map.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    auto scores = table.scores.row(j);
    // The mask alone can tie with an antipodal row at -1.
    std::size_t best = j == 0 ? 1 : 0;
    for (std::size_t k = best + 1; k < n; ++k) {
      if (k != j && scores[k] > scores[best]) best = k;
    }
    out.replacement_map[j] = best;
    auto src = perturbed.data.row(best);
    std::copy(src.begin(), src.end(), out.rows.data.row(j).begin());
  }
  return out;
}

EncryptionTrace encrypt_with_trace(const EmbeddingMatrix& raw, const PerturbationConfig& cfg) {
  EncryptionTrace trace;
  trace.perturbed = perturb(raw, cfg);
  trace.encrypted = similarity_replace(trace.perturbed, masked_similarity(trace.perturbed));
  return trace;
}

EmbeddingMatrix encrypt(const EmbeddingMatrix& raw, const PerturbationConfig& cfg) {
  return encrypt_with_trace(raw, cfg).encrypted.rows;
}

double audit_similarity(const EmbeddingMatrix& raw, const EmbeddingMatrix& other) {
  if (!raw.data.same_shape(other.data)) {
    fail(ErrorCode::kDimension, "audit needs matrices of the same shape");
  }
  if (raw.rows() == 0) fail(ErrorCode::kInput, "audit of an empty embedding set");
  double total = 0;
  for (std::size_t i = 0; i < raw.rows(); ++i) total += cosine(raw.data.row(i), other.data.row(i));
  return total / double(raw.rows());
}

}  // namespace semfed
