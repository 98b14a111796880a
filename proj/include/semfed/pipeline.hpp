#pragma once

#include <string>

#include <json.hpp>

#include "semfed/config.hpp"
#include "semfed/datamodel.hpp"
#include "semfed/promptrec.hpp"
#include "semfed/seqrec.hpp"

namespace semfed {

struct RunReport {
  // Everything except wall-clock timings; identical config and seed give a
  // byte-identical dump of this object.
  nlohmann::json body = nlohmann::json::object();
  // Seconds per stage.
  nlohmann::json timings = nlohmann::json::object();
};

struct RunOptions {
  std::string out_dir = "out";
  // Reuse stage artifacts whose recorded fingerprint matches the config.
  bool resume = true;
};

// Executes ingest, encrypt, federate, pretrain, distill, finetune and eval in
// order, skipping the stages the ablation mode removes. Artifacts and
// report.json / timings.json are written under out_dir. Errors are rethrown
// with the failing stage's name prefixed.
RunReport run_pipeline(const RunConfig& cfg, const RunOptions& options);

struct DomainDataset {
  Catalog catalog;
  SplitSet splits;
  std::size_t users = 0;
  std::size_t prepared_users = 0;
};

// Loads, prepares and splits one domain's data.
DomainDataset load_domain(const RunConfig& cfg, const DomainData& data);

// Source vectors for the two soft prompts of a history, per ablation mode:
// the seqrec user state and the enhanced (or plain ID) row of the last item,
// or in text-only mode the mean history text and the last item's text.
struct PromptSources {
  Ablation mode = Ablation::kFull;
  SeqRecModel* seqrec = nullptr;
  const Matrix* enhanced = nullptr;
  const EmbeddingMatrix* raw = nullptr;

  std::size_t user_dim() const;
  std::size_t item_dim() const;
  Matrix user(const std::vector<std::size_t>& history) const;
  Matrix item(const std::vector<std::size_t>& history) const;
  PromptExample example(const std::vector<std::size_t>& history, std::size_t target) const;
};

// One example per training prefix (history -> next item); `prefixes` keeps
// only the most recent ones per user, 0 keeps all.
std::vector<PromptExample> stage2_train_examples(const SplitSet& splits, const PromptSources& src,
                                                 std::size_t prefixes);
// train -> valid, or train + valid -> test.
std::vector<PromptExample> split_examples(const SplitSet& splits, const PromptSources& src,
                                          bool test);

// Stage seeds derived from the run seed, echoed in the report.
std::uint64_t stage_seed(const RunConfig& cfg, const char* stage, std::uint64_t index = 0);

}  // namespace semfed
