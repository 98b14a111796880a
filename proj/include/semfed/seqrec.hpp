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

namespace semfed {

struct SeqRecConfig {
  std::size_t d = 50;
  std::size_t num_blocks = 2;
  std::size_t num_heads = 1;
  std::size_t max_len = 50;
  Real dropout = Real(0.2);
  Real lr = Real(1e-4);
  std::size_t epochs = 10;
  std::size_t batch = 64;
  std::uint64_t seed = 7;

  // Throws a config error naming the offending field.
  void validate() const;

  bool operator==(const SeqRecConfig&) const = default;
};

// Self-attentive next-item model over item indices 0..t-1. Row 0 of the
// embedding table is the reserved padding row, so item i lives in row i + 1.
// Sequences are fed unpadded, which is what left padding plus masking of the
// padded positions computes.
class SeqRecModel {
 public:
  SeqRecModel() = default;
  SeqRecModel(std::size_t num_items, const SeqRecConfig& cfg);

  std::size_t num_items() const { return num_items_; }
  const SeqRecConfig& config() const { return cfg_; }

  bool frozen() const { return frozen_; }
  void freeze();
  ParamList params();

  // Contextual hidden states, one row per position (m x d).
  Var forward(Tape& tape, std::span<const std::size_t> sequence, const ForwardMode& mode);
  // Scores against every item, padding excluded (m x t).
  Var logits(Tape& tape, Var hidden);

  // Embedding row of item i (1 x d).
  Matrix item_embedding(std::size_t item) const;

  Checkpoint to_checkpoint() const;
  static SeqRecModel from_checkpoint(const Checkpoint& ck);
  void save(const std::string& path) const { to_checkpoint().save(path); }
  static SeqRecModel load(const std::string& path) { return from_checkpoint(Checkpoint::load(path)); }

 private:
  void check_sequence(std::span<const std::size_t> sequence) const;

  std::size_t num_items_ = 0;
  SeqRecConfig cfg_;
  bool frozen_ = false;
  Embedding items_;
  Embedding positions_;
  std::vector<TransformerBlock> blocks_;
  LayerNorm final_norm_;
};

struct SequenceEncoding {
  Matrix per_position;  // E^id, m x d
  Matrix user;          // E^u, 1 x d
};

SequenceEncoding encode_sequence(SeqRecModel& model, std::span<const std::size_t> sequence);
// Final hidden state of the sequence without its last item.
Matrix encode_user_minus_last(SeqRecModel& model, std::span<const std::size_t> sequence);

// Mean next-item cross-entropy per predicted position over `sequences`.
Var pretrain_loss(Tape& tape, SeqRecModel& model,
                  const std::vector<std::vector<std::size_t>>& sequences, const ForwardMode& mode);

struct PretrainResult {
  SeqRecModel model;
  // Index 0 is the loss before any update; index e the mean training loss of
  // epoch e.
  std::vector<double> losses;
  std::vector<std::string> warnings;
};

PretrainResult pretrain(const std::vector<InteractionLog>& logs, std::size_t num_items,
                        const SeqRecConfig& cfg);

// Fraction of sequences whose last item is the top-scored prediction from the
// preceding items. Sequences shorter than 2 are skipped.
double next_item_hit_rate(SeqRecModel& model,
                          const std::vector<std::vector<std::size_t>>& sequences);

}  // namespace semfed
