#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "semfed/autodiff.hpp"
#include "semfed/checkpoint.hpp"
#include "semfed/layers.hpp"

namespace semfed {

// Token ids: pad, end, the instruction words, then one token per item.
class Vocabulary {
 public:
  static constexpr std::int64_t kPad = 0;
  static constexpr std::int64_t kEnd = 1;

  Vocabulary() = default;
  Vocabulary(std::vector<std::string> words, std::size_t num_items);

  std::size_t size() const { return 2 + words_.size() + num_items_; }
  std::size_t num_items() const { return num_items_; }
  const std::vector<std::string>& words() const { return words_; }

  std::int64_t item_token(std::size_t item) const;
  bool is_item_token(std::int64_t token) const;
  std::size_t item_of(std::int64_t token) const;
  // Throws a prompt error for a word outside the instruction set.
  std::int64_t word_token(const std::string& word) const;
  std::vector<std::int64_t> encode_words(const std::string& text) const;

 private:
  std::vector<std::string> words_;
  std::size_t num_items_ = 0;
};

// Default instruction words; the template text is made of these.
std::vector<std::string> default_instruction_words();
std::string default_template();

struct TinyLmConfig {
  std::size_t hidden = 128;
  std::size_t num_blocks = 2;
  std::size_t num_heads = 2;
  std::size_t context = 32;
  std::uint64_t seed = 7;

  void validate() const;

  bool operator==(const TinyLmConfig&) const = default;
};

// Small causal decoder that reads token embeddings mixed with soft vectors.
class TinyLM {
 public:
  TinyLM() = default;
  TinyLM(Vocabulary vocab, const TinyLmConfig& cfg);

  const Vocabulary& vocab() const { return vocab_; }
  const TinyLmConfig& config() const { return cfg_; }
  std::size_t hidden() const { return cfg_.hidden; }

  ParamList params();

  Var embed_tokens(Tape& tape, std::span<const std::int64_t> tokens);
  // Hidden states for an input of already embedded rows (L x h).
  Var forward(Tape& tape, Var inputs);
  // Logits over the whole vocabulary for each row of hidden states.
  Var head(Tape& tape, Var hidden);

  // The untied output layer, exposed for fixtures that force logits.
  Linear& lm_head() { return lm_head_; }

  Checkpoint to_checkpoint() const;
  static TinyLM from_checkpoint(const Checkpoint& ck);

 private:
  Vocabulary vocab_;
  TinyLmConfig cfg_;
  Embedding tokens_;
  Embedding positions_;
  std::vector<TransformerBlock> blocks_;
  LayerNorm final_norm_;
  Linear lm_head_;
};

}  // namespace semfed
