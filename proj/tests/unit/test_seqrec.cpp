#include <filesystem>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "semfed/error.hpp"
#include "semfed/seqrec.hpp"

using namespace semfed;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::kIo;
}

SeqRecConfig small_config() {
  SeqRecConfig cfg;
  cfg.d = 8;
  cfg.num_blocks = 1;
  cfg.num_heads = 2;
  cfg.max_len = 6;
  cfg.dropout = 0;
  cfg.lr = Real(1e-2);
  cfg.epochs = 8;
  cfg.batch = 4;
  return cfg;
}

// Users walk the catalog in steps of one, so the next item is predictable.
std::vector<InteractionLog> cyclic_logs(std::size_t users, std::size_t items, std::size_t len) {
  std::vector<InteractionLog> logs;
  for (std::size_t u = 0; u < users; ++u) {
    InteractionLog log{"u" + std::to_string(u), {}, "a"};
    for (std::size_t j = 0; j < len; ++j) log.sequence.push_back((u + j) % items);
    logs.push_back(std::move(log));
  }
  return logs;
}

}  // namespace

TEST_CASE("forward shapes") {
  SeqRecModel model(10, small_config());
  Tape tape;
  const std::vector<std::size_t> seq{3, 1, 4};
  Var h = model.forward(tape, seq, ForwardMode{});
  CHECK(h.rows() == 3);
  CHECK(h.cols() == 8);
  Var s = model.logits(tape, h);
  CHECK(s.rows() == 3);
  CHECK(s.cols() == 10);

  const SequenceEncoding enc = encode_sequence(model, seq);
  CHECK(enc.per_position.rows() == 3);
  CHECK(enc.user.rows() == 1);
  for (std::size_t j = 0; j < 8; ++j) CHECK(enc.user(0, j) == enc.per_position(2, j));
  const Matrix minus = encode_user_minus_last(model, seq);
  const SequenceEncoding prefix = encode_sequence(model, std::vector<std::size_t>{3, 1});
  CHECK(bit_equal(minus, prefix.user));
  CHECK(model.item_embedding(4).cols() == 8);
}

TEST_CASE("causal states ignore later items") {
  SeqRecModel model(10, small_config());
  const SequenceEncoding a = encode_sequence(model, std::vector<std::size_t>{2, 5, 7});
  const SequenceEncoding b = encode_sequence(model, std::vector<std::size_t>{2, 5, 9});
  for (std::size_t j = 0; j < 8; ++j) {
    CHECK(a.per_position(0, j) == doctest::Approx(b.per_position(0, j)).epsilon(1e-6));
    CHECK(a.per_position(1, j) == doctest::Approx(b.per_position(1, j)).epsilon(1e-6));
  }
}

TEST_CASE("input checks") {
  SeqRecModel model(10, small_config());
  Tape tape;
  CHECK(code_of([&] { model.forward(tape, std::vector<std::size_t>{1, 10}, ForwardMode{}); }) ==
        ErrorCode::kInput);
  CHECK(code_of([&] { model.forward(tape, std::vector<std::size_t>(7, 1), ForwardMode{}); }) ==
        ErrorCode::kInput);
  CHECK(code_of([&] { model.forward(tape, std::vector<std::size_t>{}, ForwardMode{}); }) ==
        ErrorCode::kInput);
  SeqRecConfig bad = small_config();
  bad.num_heads = 3;
  CHECK(code_of([&] { bad.validate(); }) == ErrorCode::kConfig);
}

TEST_CASE("freeze stops gradients") {
  SeqRecModel model(10, small_config());
  model.freeze();
  CHECK(model.frozen());
  for (ParamTensor* p : model.params()) CHECK_FALSE(p->trainable);
  Tape tape;
  Var loss = pretrain_loss(tape, model, {{1, 2, 3}}, ForwardMode{});
  tape.backward(loss);
  for (ParamTensor* p : model.params()) {
    for (Real g : p->grad.data()) CHECK(g == 0);
  }
}

TEST_CASE("checkpoint round trip") {
  SeqRecModel model(12, small_config());
  const auto path = std::filesystem::temp_directory_path() / "semfed_test_seqrec.ckpt";
  model.save(path.string());
  SeqRecModel back = SeqRecModel::load(path.string());
  std::filesystem::remove(path);
  CHECK(back.num_items() == 12);
  CHECK(back.config() == model.config());
  const std::vector<std::size_t> seq{0, 11, 5};
  CHECK(bit_equal(encode_sequence(model, seq).per_position,
                  encode_sequence(back, seq).per_position));
}

TEST_CASE("pretraining learns a cyclic pattern") {
  const auto logs = cyclic_logs(40, 10, 6);
  const PretrainResult r = pretrain(logs, 10, small_config());
  REQUIRE(r.losses.size() == 9);
  CHECK(r.losses.back() < r.losses.front());
  SeqRecModel model = r.model;
  std::vector<std::vector<std::size_t>> seqs;
  for (const auto& l : logs) seqs.push_back(l.sequence);
  CHECK(next_item_hit_rate(model, seqs) > 0.5);
}

TEST_CASE("overlong logs are truncated with a warning") {
  SeqRecConfig cfg = small_config();
  cfg.epochs = 1;
  const PretrainResult r = pretrain(cyclic_logs(4, 10, 9), 10, cfg);
  REQUIRE(r.warnings.size() == 1);
  CHECK(r.warnings[0].find("truncated") != std::string::npos);
}

TEST_CASE("pretraining is deterministic") {
  SeqRecConfig cfg = small_config();
  cfg.dropout = Real(0.2);
  cfg.epochs = 2;
  const auto logs = cyclic_logs(12, 10, 5);
  const PretrainResult a = pretrain(logs, 10, cfg);
  const PretrainResult b = pretrain(logs, 10, cfg);
  CHECK(a.losses == b.losses);
  CHECK(a.model.to_checkpoint().to_bytes() == b.model.to_checkpoint().to_bytes());
}
