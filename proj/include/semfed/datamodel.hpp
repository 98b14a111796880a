#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "semfed/matrix.hpp"

namespace semfed {

class Rng;

struct Item {
  std::string item_id;
  std::string title;
  std::string description;
  std::size_t index = 0;
};

// Items of one domain, indexed densely in file order.
class Catalog {
 public:
  Catalog() = default;
  explicit Catalog(std::string domain) : domain_(std::move(domain)) {}

  // Throws a parse error on a duplicate id.
  const Item& add(std::string item_id, std::string title, std::string description);

  const std::string& domain() const { return domain_; }
  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  const Item& operator[](std::size_t i) const { return items_[i]; }
  const std::vector<Item>& items() const { return items_; }
  std::optional<std::size_t> find(const std::string& item_id) const;

 private:
  std::string domain_;
  std::vector<Item> items_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

struct InteractionLog {
  std::string user_id;
  std::vector<std::size_t> sequence;  // chronological item indices
  std::string domain;
};

enum class Stage : std::uint8_t {
  kRaw = 0,
  kPerturbed = 1,
  kEncrypted = 2,
  kSynchronized = 3,
};

const char* stage_name(Stage s);

// One embedding row per item index.
struct EmbeddingMatrix {
  Matrix data;
  Stage stage = Stage::kRaw;
  std::string domain;

  std::size_t rows() const { return data.rows(); }
  std::size_t dim() const { return data.cols(); }
};

struct UserSplit {
  std::string user_id;
  std::vector<std::size_t> train;
  std::size_t valid = 0;
  std::size_t test = 0;
};

using SplitSet = std::vector<UserSplit>;

inline constexpr std::size_t kKeepAll = std::numeric_limits<std::size_t>::max();

// items.jsonl: {"item_id", "title", "description"} per line.
Catalog load_items(const std::string& path, const std::string& domain);
Catalog parse_items(const std::string& text, const std::string& domain);
// interactions.jsonl: {"user_id", "items": [...]} per line, chronological.
std::vector<InteractionLog> load_interactions(const std::string& path, const Catalog& catalog);
std::vector<InteractionLog> parse_interactions(const std::string& text, const Catalog& catalog);

void write_items(const std::string& path, const Catalog& catalog);
void write_interactions(const std::string& path, const std::vector<InteractionLog>& logs,
                        const Catalog& catalog);

// Drops sequences shorter than min_len and keeps the most recent keep_last
// interactions of the rest.
std::vector<InteractionLog> prepare_dataset(const std::vector<InteractionLog>& logs,
                                            std::size_t min_len, std::size_t keep_last);

// Strata are [bounds[i], bounds[i+1]) by sequence length; the last bound may
// be kKeepAll for an open-ended stratum. At most per_stratum users are drawn
// uniformly from each stratum; output keeps input order.
std::vector<InteractionLog> stratified_sample(const std::vector<InteractionLog>& logs,
                                              const std::vector<std::size_t>& bounds,
                                              std::size_t per_stratum, Rng& rng);

// Last interaction is the test item, the one before it validation.
SplitSet leave_one_out(const std::vector<InteractionLog>& logs);

// Rows drawn i.i.d. Gaussian and rescaled to norm_target. With clusters > 0,
// item i is planted around centre (i % clusters) with relative spread.
EmbeddingMatrix synth_embeddings(std::size_t count, std::size_t dim, Real norm_target, Rng& rng,
                                 std::size_t clusters = 0, Real spread = Real(0.1));

// Rows = centres[assignment[i]] + spread * unit Gaussian direction, rescaled
// to norm_target.
EmbeddingMatrix synth_embeddings_around(const Matrix& centres,
                                        const std::vector<std::size_t>& assignment,
                                        Real spread, Real norm_target, Rng& rng);

}  // namespace semfed
