#pragma once

#include <cstdint>
#include <vector>

#include "semfed/datamodel.hpp"

namespace semfed {

struct PerturbationConfig {
  Real sigma = Real(0.1);  // noise standard deviation per coordinate
  std::uint64_t seed = 0;
};

// Masked cosine scores: scores(j, j') = cos(p'_j, p'_j') - 2 [j == j'].
struct SimilarityTable {
  Matrix scores;
};

struct EncryptedEmbeddings {
  EmbeddingMatrix rows;                      // stage = encrypted
  std::vector<std::size_t> replacement_map;  // item j -> neighbour j' != j; client-local
};

// p'_j = p_j + eps_j, eps_j ~ N(0, sigma^2 I).
EmbeddingMatrix perturb(const EmbeddingMatrix& raw, const PerturbationConfig& cfg);

SimilarityTable masked_similarity(const EmbeddingMatrix& perturbed);

// Replaces every row by the perturbed row of its most similar other item.
// Ties go to the lowest index.
EncryptedEmbeddings similarity_replace(const EmbeddingMatrix& perturbed,
                                       const SimilarityTable& table);

struct EncryptionTrace {
  EmbeddingMatrix perturbed;
  EncryptedEmbeddings encrypted;
};

// perturb -> masked_similarity -> similarity_replace.
EncryptionTrace encrypt_with_trace(const EmbeddingMatrix& raw, const PerturbationConfig& cfg);
EmbeddingMatrix encrypt(const EmbeddingMatrix& raw, const PerturbationConfig& cfg);

// Mean over items of cos(raw_j, other_j).
double audit_similarity(const EmbeddingMatrix& raw, const EmbeddingMatrix& other);

}  // namespace semfed
