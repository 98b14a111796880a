#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "semfed/autodiff.hpp"
#include "semfed/checkpoint.hpp"
#include "semfed/datamodel.hpp"
#include "semfed/layers.hpp"
#include "semfed/seqrec.hpp"

namespace semfed {

class Rng;

struct FkdConfig {
  Real alpha = Real(0.5);
  Real beta = Real(0.2);
  std::size_t fused_dim = 128;
  std::size_t batch = 32;
  std::size_t epochs = 10;
  Real lr = Real(1e-4);
  std::uint64_t negative_seed = 7;
  std::uint64_t seed = 7;

  void validate() const;

  bool operator==(const FkdConfig&) const = default;
};

// Encoders map each modality into the fused space, decoders map back.
struct FkdModel {
  Mlp2 encoder_id;
  Mlp2 encoder_text;
  Mlp2 decoder_id;
  Mlp2 decoder_text;

  FkdModel() = default;
  FkdModel(std::size_t id_dim, std::size_t text_dim, std::size_t fused_dim, std::uint64_t seed);

  std::size_t id_dim() const { return encoder_id.in_dim(); }
  std::size_t text_dim() const { return encoder_text.in_dim(); }
  std::size_t fused_dim() const { return encoder_id.out_dim(); }

  // Requires id_dim == text_dim == fused_dim.
  void set_identity();
  ParamList params();

  Checkpoint to_checkpoint() const;
  static FkdModel from_checkpoint(const Checkpoint& ck);
};

struct SequenceReps {
  Matrix id;    // E^id, m x d
  Matrix text;  // G^text, m x z
};

SequenceReps sequence_reps(std::span<const std::size_t> sequence, SeqRecModel& seqrec,
                           const EmbeddingMatrix& text);

// m items the user never interacted with, uniform without replacement (with
// replacement when fewer than m remain).
std::vector<std::size_t> counterfactual_sample(std::span<const std::size_t> history,
                                               std::size_t catalog_size, std::size_t m, Rng& rng);

// mean_rows(Encoder_id(E)) - mean_rows(Encoder_text(G)), 1 x d'.
Var mediator(Tape& tape, FkdModel& model, Var id, Var text);

struct MediatorPair {
  Var factual;
  Var counterfactual;
};

// Mean over users of |D - D_hat|^2.
Var kd_loss(std::span<const MediatorPair> pairs);

struct ReconLosses {
  Var text;  // MSE(G, Dec_text(Enc_text(G)))
  Var id;    // MSE(E, Dec_id(Enc_id(E)))
};

ReconLosses recon_losses(Tape& tape, FkdModel& model, Var id, Var text);

// -[log s(u.p) + log(1 - s(u.n))] with both scores clamped to [-30, 30].
Var rec_loss(Var user_minus_last, Var positive, Var negative);

// Dec_id(Enc_id(x)) row by row.
Var decode_id(Tape& tape, FkdModel& model, Var id);

// Everything one user contributes to the objective.
struct FkdExample {
  Matrix id;               // factual E^id
  Matrix text;             // factual G
  Matrix user_minus_last;  // E^{u-1}
  Matrix cf_id;            // counterfactual E^id
  Matrix cf_text;          // counterfactual G
};

struct FkdLoss {
  Var kd, text_recon, id_recon, rec, total;
};

// kd + alpha * text_recon + beta * id_recon + rec, where the reconstruction
// terms are averaged over users and rec is summed over users.
FkdLoss total_loss(Tape& tape, FkdModel& model, std::span<const FkdExample> batch,
                   const FkdConfig& cfg);

struct FkdEpoch {
  std::size_t epoch = 0;
  double kd = 0, text_recon = 0, id_recon = 0, rec = 0, total = 0;
};

struct FkdResult {
  FkdModel model;
  Matrix enhanced;  // t x 2*fused_dim, see enhanced_item_table
  // Entry 0 is measured before any update.
  std::vector<FkdEpoch> curve;
};

// `sequences` are the users' training prefixes (length >= 2 are used).
FkdResult train_fkd(const std::vector<std::vector<std::size_t>>& sequences, SeqRecModel& seqrec,
                    const EmbeddingMatrix& text, const FkdConfig& cfg);

// Per item: the distilled ID encoding of the item seen as a one-item sequence,
// next to the distilled encoding of its text, so the row carries both
// modalities.
Matrix enhanced_item_table(FkdModel& model, SeqRecModel& seqrec, const EmbeddingMatrix& text);

std::string loss_curve_csv(const std::vector<FkdEpoch>& curve);

// Artifact: model parameters, enhanced table and loss curve.
void save_fkd(const std::string& path, const FkdResult& result);
FkdResult load_fkd(const std::string& path);

}  // namespace semfed
