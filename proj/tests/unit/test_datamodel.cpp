#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>

#include "doctest.h"
#include "helpers.hpp"
#include "semfed/datamodel.hpp"
#include "semfed/embedding_io.hpp"
#include "semfed/error.hpp"
#include "semfed/federation.hpp"

using namespace semfed;
using testing::random_matrix;

namespace {

ErrorCode code_of(auto&& fn, std::string* message = nullptr) {
  try {
    fn();
  } catch (const Error& e) {
    if (message != nullptr) *message = e.what();
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::kIo;
}

Catalog abc_catalog() {
  return parse_items(
      "{\"item_id\": \"a\", \"title\": \"A\", \"description\": \"first\"}\n"
      "{\"item_id\": \"b\", \"title\": \"B\", \"description\": \"\"}\n"
      "{\"item_id\": \"c\", \"title\": \"C\", \"description\": \"third\"}\n"
      "{\"item_id\": \"d\", \"title\": \"D\", \"description\": \"\"}\n"
      "{\"item_id\": \"e\", \"title\": \"E\", \"description\": \"\"}\n",
      "x");
}

InteractionLog log_of(std::string user, std::vector<std::size_t> seq) {
  return InteractionLog{std::move(user), std::move(seq), "x"};
}

}  // namespace

TEST_CASE("items load in file order") {
  CHECK(parse_items("", "x").empty());
  const Catalog two = parse_items(
      "{\"item_id\": \"i1\", \"title\": \"t\", \"description\": \"d\"}\n"
      "{\"item_id\": \"i2\", \"title\": \"u\", \"description\": \"e\"}\n",
      "x");
  REQUIRE(two.size() == 2);
  CHECK(two[0].index == 0);
  CHECK(two[1].index == 1);
  CHECK(two[1].item_id == "i2");
  CHECK(two.find("i2") == std::optional<std::size_t>(1));
}

TEST_CASE("malformed item lines name the line") {
  std::string msg;
  CHECK(code_of([] { parse_items("{\"item_id\": \"a\", \"title\": \"\", \"description\": \"\"}\nnot json\n", "x"); },
                &msg) == ErrorCode::kParse);
  CHECK(msg.find("line 2") != std::string::npos);
  CHECK(code_of([] { parse_items("{\"title\": \"t\", \"description\": \"\"}\n", "x"); }) ==
        ErrorCode::kParse);
}

TEST_CASE("interactions resolve against the catalog") {
  const Catalog cat = abc_catalog();
  CHECK(parse_interactions("", cat).empty());
  const auto logs = parse_interactions(
      "{\"user_id\": \"u1\", \"items\": [\"c\", \"a\", \"b\"]}\n"
      "{\"user_id\": \"u2\", \"items\": [\"e\"]}\n",
      cat);
  REQUIRE(logs.size() == 2);
  CHECK(logs[0].sequence == std::vector<std::size_t>{2, 0, 1});
  CHECK(logs[1].user_id == "u2");
  std::string msg;
  CHECK(code_of([&] { parse_interactions("{\"user_id\": \"u\", \"items\": [\"zz\"]}\n", cat); },
                &msg) == ErrorCode::kReference);
  CHECK(msg.find("zz") != std::string::npos);
}

TEST_CASE("jsonl files round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "semfed_dm_test";
  std::filesystem::create_directories(dir);
  const Catalog cat = abc_catalog();
  const std::vector<InteractionLog> logs = {log_of("u1", {0, 1, 2}), log_of("u2", {4, 3})};
  write_items((dir / "items.jsonl").string(), cat);
  write_interactions((dir / "inter.jsonl").string(), logs, cat);
  const Catalog back = load_items((dir / "items.jsonl").string(), "x");
  CHECK(back.size() == cat.size());
  CHECK(back[2].description == "third");
  const auto logs_back = load_interactions((dir / "inter.jsonl").string(), back);
  REQUIRE(logs_back.size() == 2);
  CHECK(logs_back[1].sequence == logs[1].sequence);
  std::filesystem::remove_all(dir);
}

TEST_CASE("prepare_dataset filters and truncates") {
  SUBCASE("short sequences are dropped") {
    CHECK(prepare_dataset({log_of("u", {0, 1})}, 5, kKeepAll).empty());
  }
  SUBCASE("long sequences keep the most recent items") {
    std::vector<std::size_t> seq;
    for (std::size_t i = 0; i < 12; ++i) seq.push_back(i % 5);
    const auto out = prepare_dataset({log_of("u", seq)}, 5, 10);
    REQUIRE(out.size() == 1);
    CHECK(out[0].sequence == std::vector<std::size_t>(seq.begin() + 2, seq.end()));
  }
  SUBCASE("no-op when everything qualifies") {
    const std::vector<InteractionLog> in = {log_of("u", {0, 1, 2, 3, 4}),
                                            log_of("v", {4, 3, 2, 1, 0, 1})};
    const auto out = prepare_dataset(in, 5, kKeepAll);
    REQUIRE(out.size() == 2);
    CHECK(out[1].sequence == in[1].sequence);
  }
  SUBCASE("idempotent") {
    const std::vector<InteractionLog> in = {log_of("u", {0, 1, 2, 3, 4, 0, 1}),
                                            log_of("v", {1, 2}), log_of("w", {3, 3, 3, 3, 3})};
    const auto once = prepare_dataset(in, 3, 4);
    const auto twice = prepare_dataset(once, 3, 4);
    REQUIRE(once.size() == twice.size());
    for (std::size_t i = 0; i < once.size(); ++i) CHECK(once[i].sequence == twice[i].sequence);
  }
}

TEST_CASE("stratified sampling") {
  Rng rng(9);
  std::vector<InteractionLog> users;
  // 20 users: 7 with lengths in [5,10), 13 with lengths in [10,15].
  for (std::size_t u = 0; u < 20; ++u) {
    const std::size_t len = u < 7 ? 5 + u % 5 : 10 + u % 6;
    users.push_back(log_of("u" + std::to_string(u), std::vector<std::size_t>(len, 0)));
  }
  SUBCASE("one wide stratum keeps everyone") {
    CHECK(stratified_sample(users, {0, kKeepAll}, 100, rng).size() == 20);
  }
  SUBCASE("zero per stratum") {
    CHECK(stratified_sample(users, {5, 10, 16}, 0, rng).empty());
  }
  SUBCASE("capped per stratum") {
    const auto out = stratified_sample(users, {5, 10, 16}, 3, rng);
    CHECK(out.size() == 6);
    CHECK(std::count_if(out.begin(), out.end(), [](const auto& l) { return l.sequence.size() < 10; }) == 3);
    const auto small = stratified_sample(users, {5, 10, 16}, 10, rng);
    CHECK(small.size() == 17);
  }
  SUBCASE("deterministic given the seed") {
    Rng a(4), b(4);
    const auto x = stratified_sample(users, {5, 10, 16}, 2, a);
    const auto y = stratified_sample(users, {5, 10, 16}, 2, b);
    REQUIRE(x.size() == y.size());
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(x[i].user_id == y[i].user_id);
  }
  SUBCASE("bounds must increase") {
    CHECK(code_of([&] { stratified_sample(users, {10, 5}, 1, rng); }) == ErrorCode::kConfig);
  }
}

TEST_CASE("leave-one-out splits") {
  const SplitSet s = leave_one_out({log_of("u", {0, 1, 2}), log_of("v", {0, 1, 2, 3, 4})});
  CHECK(s[0].train == std::vector<std::size_t>{0});
  CHECK(s[0].valid == 1);
  CHECK(s[0].test == 2);
  CHECK(s[1].train == std::vector<std::size_t>{0, 1, 2});
  CHECK(s[1].valid == 3);
  CHECK(s[1].test == 4);
  std::string msg;
  CHECK(code_of([] { leave_one_out({log_of("short", {0, 1})}); }, &msg) == ErrorCode::kSplit);
  CHECK(msg.find("short") != std::string::npos);
}

TEST_CASE("embedding files round trip bit-exactly") {
  Rng rng(10);
  for (Stage st : {Stage::kRaw, Stage::kPerturbed, Stage::kEncrypted, Stage::kSynchronized}) {
    EmbeddingMatrix m{random_matrix(3, 4, rng), st, "x"};
    const EmbeddingMatrix back = embeddings_from_bytes(embeddings_to_bytes(m));
    CHECK(bit_equal(back.data, m.data));
    CHECK(back.stage == st);
  }
  EmbeddingMatrix empty{Matrix(0, 5), Stage::kRaw, "x"};
  const EmbeddingMatrix e = embeddings_from_bytes(embeddings_to_bytes(empty));
  CHECK(e.rows() == 0);
  CHECK(e.dim() == 5);
}

TEST_CASE("embedding file layout") {
  EmbeddingMatrix m{Matrix::from_rows({{1, -2}}), Stage::kEncrypted, "x"};
  const auto bytes = embeddings_to_bytes(m);
  REQUIRE(bytes.size() == kEmbeddingHeaderSize + 8);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "SFUB");
  CHECK(bytes[4] == 1);
  CHECK(bytes[8] == 1);
  CHECK(bytes[12] == 2);
  CHECK(bytes[16] == 2);
  // 1.0f little-endian
  CHECK(bytes[17] == 0x00);
  CHECK(bytes[20] == 0x3f);
}

TEST_CASE("malformed embedding payloads") {
  Rng rng(11);
  const auto bytes = embeddings_to_bytes(EmbeddingMatrix{random_matrix(2, 3, rng), Stage::kRaw, ""});
  auto truncated = bytes;
  truncated.pop_back();
  CHECK(code_of([&] { embeddings_from_bytes(truncated); }) == ErrorCode::kFormat);
  auto magic = bytes;
  magic[0] = 'X';
  CHECK(code_of([&] { embeddings_from_bytes(magic); }) == ErrorCode::kFormat);
  auto stage = bytes;
  stage[16] = 9;
  CHECK(code_of([&] { embeddings_from_bytes(stage); }) == ErrorCode::kFormat);
  auto longer = bytes;
  longer.push_back(0);
  CHECK(code_of([&] { embeddings_from_bytes(longer); }) == ErrorCode::kFormat);
}

TEST_CASE("synthetic embeddings") {
  SUBCASE("rows are rescaled to the target norm") {
    Rng rng(12);
    const EmbeddingMatrix m = synth_embeddings(50, 16, Real(1), rng);
    for (std::size_t i = 0; i < m.rows(); ++i) {
      const double n = std::sqrt(squared_norm(m.data.row(i)));
      CHECK(n >= 0.999);
      CHECK(n <= 1.001);
    }
  }
  SUBCASE("same seed gives the same matrix") {
    Rng a(3), b(3);
    CHECK(bit_equal(synth_embeddings(10, 8, Real(1), a, 2).data,
                    synth_embeddings(10, 8, Real(1), b, 2).data));
  }
  SUBCASE("k-means recovers two planted clusters") {
    Rng rng(13);
    const EmbeddingMatrix m = synth_embeddings(40, 32, Real(1), rng, 2, Real(0.05));
    Rng krng(1);
    const CentroidTable t = cluster(m.data, 2, 100, 1e-6, krng);
    for (std::size_t i = 0; i < 40; ++i) {
      CHECK((t.assignments[i] == t.assignments[i % 2]));
    }
    CHECK(t.assignments[0] != t.assignments[1]);
  }
}
