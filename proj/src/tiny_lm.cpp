#include "semfed/tiny_lm.hpp"

#include <cmath>
#include <sstream>

#include "semfed/error.hpp"
#include "semfed/rng.hpp"

namespace semfed {

Vocabulary::Vocabulary(std::vector<std::string> words, std::size_t num_items)
    : words_(std::move(words)), num_items_(num_items) {}

std::int64_t Vocabulary::item_token(std::size_t item) const {
  if (item >= num_items_) fail(ErrorCode::kPrompt, "item " + std::to_string(item) + " not in vocabulary");
  return static_cast<std::int64_t>(2 + words_.size() + item);
}

bool Vocabulary::is_item_token(std::int64_t token) const {
  const auto first = static_cast<std::int64_t>(2 + words_.size());
  return token >= first && token < static_cast<std::int64_t>(size());
}

std::size_t Vocabulary::item_of(std::int64_t token) const {
  if (!is_item_token(token)) fail(ErrorCode::kPrompt, "token " + std::to_string(token) + " is not an item");
  return static_cast<std::size_t>(token) - 2 - words_.size();
}

std::int64_t Vocabulary::word_token(const std::string& word) const {
  for (std::size_t i = 0; i < words_.size(); ++i) {
    if (words_[i] == word) return static_cast<std::int64_t>(2 + i);
  }
  fail(ErrorCode::kPrompt, "word '" + word + "' is not an instruction token");
}

std::vector<std::int64_t> Vocabulary::encode_words(const std::string& text) const {
  std::istringstream is(text);
  std::vector<std::int64_t> out;
  for (std::string w; is >> w;) out.push_back(word_token(w));
  return out;
}

std::vector<std::string> default_instruction_words() {
  return {"user", "recently", "liked", "item", "recommend", "next", "the", "and", ":"};
}

std::string default_template() { return "user and item : recommend next"; }

void TinyLmConfig::validate() const {
  if (hidden == 0) fail(ErrorCode::kConfig, "lm.hidden must be positive");
  if (num_blocks == 0) fail(ErrorCode::kConfig, "lm.num_blocks must be positive");
  if (num_heads == 0 || hidden % num_heads != 0) {
    fail(ErrorCode::kConfig, "lm.num_heads must divide lm.hidden");
  }
  if (context < 2) fail(ErrorCode::kConfig, "lm.context must be at least 2");
}

TinyLM::TinyLM(Vocabulary vocab, const TinyLmConfig& cfg) : vocab_(std::move(vocab)), cfg_(cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, "tiny-lm-init"));
  const Real scale = Real(1) / std::sqrt(Real(cfg.hidden));
  tokens_ = Embedding(vocab_.size(), cfg.hidden, scale, rng);
  positions_ = Embedding(cfg.context, cfg.hidden, scale, rng);
  for (std::size_t b = 0; b < cfg.num_blocks; ++b) {
    blocks_.emplace_back(cfg.hidden, cfg.num_heads, 2 * cfg.hidden, Activation::kGelu, rng);
  }
  final_norm_ = LayerNorm(cfg.hidden);
  lm_head_ = Linear(cfg.hidden, vocab_.size(), rng);
}

ParamList TinyLM::params() {
  ParamList out;
  tokens_.collect(out);
  positions_.collect(out);
  for (auto& b : blocks_) b.collect(out);
  final_norm_.collect(out);
  lm_head_.collect(out);
  return out;
}

Var TinyLM::embed_tokens(Tape& tape, std::span<const std::int64_t> tokens) {
  std::vector<std::size_t> rows;
  rows.reserve(tokens.size());
  for (std::int64_t t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= vocab_.size()) {
      fail(ErrorCode::kPrompt, "token " + std::to_string(t) + " outside the vocabulary");
    }
    rows.push_back(static_cast<std::size_t>(t));
  }
  return tokens_.forward(tape, rows);
}

Var TinyLM::forward(Tape& tape, Var inputs) {
  const std::size_t len = inputs.rows();
  if (len == 0 || len > cfg_.context) {
    fail(ErrorCode::kPrompt, "prompt length " + std::to_string(len) + " outside [1, " +
                                 std::to_string(cfg_.context) + "]");
  }
  if (inputs.cols() != cfg_.hidden) fail(ErrorCode::kDimension, "prompt rows must have lm width");
  std::vector<std::size_t> pos(len);
  for (std::size_t j = 0; j < len; ++j) pos[j] = j;
  Var x = add(inputs, positions_.forward(tape, pos));
  const ForwardMode eval{};
  for (auto& b : blocks_) x = b.forward(tape, x, eval);
  return final_norm_.forward(tape, x);
}

Var TinyLM::head(Tape& tape, Var hidden) { return lm_head_.forward(tape, hidden); }

Checkpoint TinyLM::to_checkpoint() const {
  Checkpoint ck;
  ck.metadata = {{"kind", "tiny_lm"},
                 {"words", vocab_.words()},
                 {"num_items", vocab_.num_items()},
                 {"hidden", cfg_.hidden},
                 {"num_blocks", cfg_.num_blocks},
                 {"num_heads", cfg_.num_heads},
                 {"context", cfg_.context},
                 {"seed", cfg_.seed}};
  const ParamList ps = const_cast<TinyLM&>(*this).params();
  for (std::size_t i = 0; i < ps.size(); ++i) ck.add("lm" + std::to_string(i), ps[i]->value);
  return ck;
}

TinyLM TinyLM::from_checkpoint(const Checkpoint& ck) {
  const auto& md = ck.metadata;
  if (md.value("kind", "") != "tiny_lm") fail(ErrorCode::kFormat, "not a language model checkpoint");
  TinyLM lm;
  try {
    TinyLmConfig cfg;
    cfg.hidden = md.at("hidden").get<std::size_t>();
    cfg.num_blocks = md.at("num_blocks").get<std::size_t>();
    cfg.num_heads = md.at("num_heads").get<std::size_t>();
    cfg.context = md.at("context").get<std::size_t>();
    cfg.seed = md.at("seed").get<std::uint64_t>();
    lm = TinyLM(Vocabulary(md.at("words").get<std::vector<std::string>>(),
                           md.at("num_items").get<std::size_t>()),
                cfg);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, std::string("language model metadata: ") + e.what());
  }
  const ParamList ps = lm.params();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const Matrix& m = ck.get("lm" + std::to_string(i));
    if (!m.same_shape(ps[i]->value)) fail(ErrorCode::kFormat, "language model tensor shape mismatch");
    ps[i]->value = m;
  }
  return lm;
}

}  // namespace semfed
