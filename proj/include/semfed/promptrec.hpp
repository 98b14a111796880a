#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "semfed/autodiff.hpp"
#include "semfed/layers.hpp"
#include "semfed/tiny_lm.hpp"

namespace semfed {

// Two-layer map from a source vector to n_soft soft-prompt rows of width h.
struct Projector {
  Mlp2 mlp;
  std::size_t n_soft = 1;
  std::size_t width = 0;

  Projector() = default;
  Projector(std::size_t in, std::size_t n_soft, std::size_t width, Activation act,
            std::uint64_t seed, const char* tag);

  std::size_t in_dim() const { return mlp.in_dim(); }
  Activation activation() const { return mlp.activation; }

  // (1 x in) -> (n_soft x width)
  Var forward(Tape& tape, Var source);
  void collect(ParamList& out) { mlp.collect(out); }
};

Var project_user(Tape& tape, Projector& proj, Var user);
Var project_item(Tape& tape, Projector& proj, Var item);

struct HybridPrompt {
  std::vector<std::int64_t> instruction;
  Var soft_user;
  Var soft_item;
  std::int64_t target = -1;  // -1 when generating

  std::size_t length() const { return instruction.size() + soft_user.rows() + soft_item.rows(); }
};

// [instruction tokens][M_u][M_i] followed by the target token. Throws a
// prompt error for a target outside the item vocabulary or an overlong prompt.
HybridPrompt build_prompt(const TinyLM& lm, const std::vector<std::int64_t>& instruction,
                          Var soft_user, Var soft_item, std::optional<std::size_t> target_item);

// Logits for the first generated position (1 x |V|).
Var prompt_logits(Tape& tape, TinyLM& lm, const HybridPrompt& prompt);
// -log p(target | prompt); only the target position contributes.
Var ce_loss(Tape& tape, TinyLM& lm, const HybridPrompt& prompt);
// Greedy argmax over the full vocabulary.
std::int64_t generate_next(Tape& tape, TinyLM& lm, const HybridPrompt& prompt);

// Stage-2 model: language model plus the two projectors. Without projectors
// the source vectors are zero-padded or truncated to the LM width.
struct PromptModel {
  TinyLM lm;
  Projector user_proj;
  Projector item_proj;
  bool use_projectors = true;
  std::vector<std::int64_t> instruction;

  PromptModel() = default;
  PromptModel(TinyLM lm, std::size_t user_dim, std::size_t item_dim, std::size_t n_soft,
              bool use_projectors, const std::string& template_text, std::uint64_t seed);

  // Projector parameters (empty without projectors).
  ParamList projector_params();

  HybridPrompt prompt(Tape& tape, const Matrix& user, const Matrix& item,
                      std::optional<std::size_t> target_item);

  Checkpoint to_checkpoint() const;
  static PromptModel from_checkpoint(const Checkpoint& ck);
};

struct PromptExample {
  Matrix user;  // 1 x user_dim
  Matrix item;  // 1 x item_dim
  std::size_t target = 0;
};

struct FinetuneConfig {
  std::size_t epochs = 5;
  Real lr = Real(1e-4);
  std::size_t batch = 32;
  bool freeze_backbone = true;
  std::uint64_t seed = 7;

  void validate() const;

  bool operator==(const FinetuneConfig&) const = default;
};

struct FinetuneCurve {
  std::vector<double> train;  // [0] before any update
  std::vector<double> valid;  // [0] before any update
};

FinetuneCurve finetune(PromptModel& model, const std::vector<PromptExample>& train,
                       const std::vector<PromptExample>& valid, const FinetuneConfig& cfg);

// Mean cross-entropy per example.
double mean_loss(PromptModel& model, const std::vector<PromptExample>& examples);

struct Metrics {
  double hit_at_1 = 0;
  double valid_ratio = 0;
  std::size_t count = 0;
};

std::vector<std::int64_t> predict(PromptModel& model, const std::vector<PromptExample>& examples);
Metrics score_predictions(const Vocabulary& vocab, const std::vector<std::int64_t>& predicted,
                          const std::vector<std::size_t>& targets);
Metrics evaluate(PromptModel& model, const std::vector<PromptExample>& examples);

}  // namespace semfed
