#include "semfed/datamodel.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "semfed/bytes.hpp"
#include "semfed/error.hpp"
#include "semfed/rng.hpp"

namespace semfed {

using nlohmann::json;

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::kRaw: return "raw";
    case Stage::kPerturbed: return "perturbed";
    case Stage::kEncrypted: return "encrypted";
    case Stage::kSynchronized: return "synchronized";
  }
  return "unknown";
}

const Item& Catalog::add(std::string item_id, std::string title, std::string description) {
  if (by_id_.count(item_id) != 0) fail(ErrorCode::kParse, "duplicate item_id '" + item_id + "'");
  const std::size_t index = items_.size();
  by_id_.emplace(item_id, index);
  items_.push_back(Item{std::move(item_id), std::move(title), std::move(description), index});
  return items_.back();
}

std::optional<std::size_t> Catalog::find(const std::string& item_id) const {
  auto it = by_id_.find(item_id);
  if (it == by_id_.end()) return std::nullopt;
  return it->second;
}

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

template <typename Fn>
void for_each_record(const std::string& text, Fn&& fn) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) {
      continue;
    }
    json record;
    try {
      record = json::parse(line);
    } catch (const json::exception& e) {
      fail(ErrorCode::kParse, "line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!record.is_object()) {
      fail(ErrorCode::kParse, "line " + std::to_string(line_no) + ": expected a JSON object");
    }
    fn(record, line_no);
  }
}

std::string string_field(const json& record, const char* key, std::size_t line_no,
                         bool required) {
  auto it = record.find(key);
  if (it == record.end()) {
    if (required) {
      fail(ErrorCode::kParse, "line " + std::to_string(line_no) + ": missing '" + key + "'");
    }
    return {};
  }
  if (!it->is_string()) {
    fail(ErrorCode::kParse, "line " + std::to_string(line_no) + ": '" + key + "' is not a string");
  }
  return it->get<std::string>();
}

}  // namespace

Catalog parse_items(const std::string& text, const std::string& domain) {
  Catalog catalog(domain);
  for_each_record(text, [&](const json& r, std::size_t line_no) {
    std::string id = string_field(r, "item_id", line_no, true);
    std::string title = string_field(r, "title", line_no, false);
    std::string description = string_field(r, "description", line_no, false);
    if (catalog.find(id)) {
      fail(ErrorCode::kParse, "line " + std::to_string(line_no) + ": duplicate item_id '" + id + "'");
    }
    catalog.add(std::move(id), std::move(title), std::move(description));
  });
  return catalog;
}

Catalog load_items(const std::string& path, const std::string& domain) {
  return parse_items(slurp(path), domain);
}

std::vector<InteractionLog> parse_interactions(const std::string& text, const Catalog& catalog) {
  std::vector<InteractionLog> logs;
  for_each_record(text, [&](const json& r, std::size_t line_no) {
    InteractionLog log;
    log.user_id = string_field(r, "user_id", line_no, true);
    log.domain = catalog.domain();
    auto items = r.find("items");
    if (items == r.end() || !items->is_array()) {
      fail(ErrorCode::kParse, "line " + std::to_string(line_no) + ": 'items' must be an array");
    }
    for (const auto& v : *items) {
      if (!v.is_string()) {
        fail(ErrorCode::kParse, "line " + std::to_string(line_no) + ": item ids must be strings");
      }
      const std::string id = v.get<std::string>();
      auto idx = catalog.find(id);
      if (!idx) {
        fail(ErrorCode::kReference, "line " + std::to_string(line_no) + ": unknown item_id '" +
                                        id + "' for user '" + log.user_id + "'");
      }
      log.sequence.push_back(*idx);
    }
    logs.push_back(std::move(log));
  });
  return logs;
}

std::vector<InteractionLog> load_interactions(const std::string& path, const Catalog& catalog) {
  return parse_interactions(slurp(path), catalog);
}

void write_items(const std::string& path, const Catalog& catalog) {
  std::string out;
  for (const Item& item : catalog.items()) {
    json j = {{"item_id", item.item_id}, {"title", item.title}, {"description", item.description}};
    out += j.dump();
    out += '\n';
  }
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(out.data()), out.size()));
}

void write_interactions(const std::string& path, const std::vector<InteractionLog>& logs,
                        const Catalog& catalog) {
  std::string out;
  for (const InteractionLog& log : logs) {
    json items = json::array();
    for (std::size_t idx : log.sequence) items.push_back(catalog[idx].item_id);
    out += json{{"user_id", log.user_id}, {"items", items}}.dump();
    out += '\n';
  }
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(out.data()), out.size()));
}

std::vector<InteractionLog> prepare_dataset(const std::vector<InteractionLog>& logs,
                                            std::size_t min_len, std::size_t keep_last) {
  if (min_len < 1) fail(ErrorCode::kConfig, "min_len must be at least 1");
  if (keep_last < 1) fail(ErrorCode::kConfig, "keep_last must be at least 1");
  std::vector<InteractionLog> out;
  for (const InteractionLog& log : logs) {
    if (log.sequence.size() < min_len) continue;
    InteractionLog kept = log;
    if (kept.sequence.size() > keep_last) {
      kept.sequence.erase(kept.sequence.begin(),
                          kept.sequence.end() - static_cast<std::ptrdiff_t>(keep_last));
    }
    out.push_back(std::move(kept));
  }
  return out;
}

std::vector<InteractionLog> stratified_sample(const std::vector<InteractionLog>& logs,
                                              const std::vector<std::size_t>& bounds,
                                              std::size_t per_stratum, Rng& rng) {
  for (std::size_t i = 1; i < bounds.size(); ++i) {
    if (bounds[i] <= bounds[i - 1]) fail(ErrorCode::kConfig, "strata bounds must increase");
  }
  if (bounds.size() < 2) fail(ErrorCode::kConfig, "need at least two strata bounds");
  std::vector<std::size_t> chosen;
  for (std::size_t s = 0; s + 1 < bounds.size(); ++s) {
    std::vector<std::size_t> members;
    for (std::size_t u = 0; u < logs.size(); ++u) {
      const std::size_t len = logs[u].sequence.size();
      if (len >= bounds[s] && len < bounds[s + 1]) members.push_back(u);
    }
    // Partial Fisher-Yates: the first `take` slots are a uniform sample.
    const std::size_t take = std::min(per_stratum, members.size());
    for (std::size_t i = 0; i < take; ++i) {
      const std::size_t j = i + rng.uniform_index(members.size() - i);
      std::swap(members[i], members[j]);
    }
    chosen.insert(chosen.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take));
  }
  std::sort(chosen.begin(), chosen.end());
  std::vector<InteractionLog> out;
  out.reserve(chosen.size());
  for (std::size_t u : chosen) out.push_back(logs[u]);
  return out;
}

SplitSet leave_one_out(const std::vector<InteractionLog>& logs) {
  SplitSet splits;
  splits.reserve(logs.size());
  for (const InteractionLog& log : logs) {
    const auto& s = log.sequence;
    if (s.size() < 3) {
      fail(ErrorCode::kSplit, "user '" + log.user_id + "' has " + std::to_string(s.size()) +
                                  " interactions; leave-one-out needs at least 3");
    }
    UserSplit split;
    split.user_id = log.user_id;
    split.train.assign(s.begin(), s.end() - 2);
    split.valid = s[s.size() - 2];
    split.test = s.back();
    splits.push_back(std::move(split));
  }
  return splits;
}

namespace {

void rescale_row(std::span<Real> row, Real norm_target) {
  const double n = std::sqrt(squared_norm(row));
  if (n == 0.0) return;
  const double f = double(norm_target) / n;
  for (auto& v : row) v = static_cast<Real>(double(v) * f);
}

}  // namespace

EmbeddingMatrix synth_embeddings(std::size_t count, std::size_t dim, Real norm_target, Rng& rng,
                                 std::size_t clusters, Real spread) {
  if (dim < 2) fail(ErrorCode::kConfig, "embedding dim must be at least 2");
  if (clusters == 0) {
    EmbeddingMatrix out{Matrix(count, dim), Stage::kRaw, {}};
    for (std::size_t i = 0; i < count; ++i) {
      auto row = out.data.row(i);
      for (auto& v : row) v = static_cast<Real>(rng.normal());
      rescale_row(row, norm_target);
    }
    return out;
  }
  Matrix centres(clusters, dim);
  for (std::size_t c = 0; c < clusters; ++c) {
    auto row = centres.row(c);
    for (auto& v : row) v = static_cast<Real>(rng.normal());
    rescale_row(row, Real(1));
  }
  std::vector<std::size_t> assignment(count);
  for (std::size_t i = 0; i < count; ++i) assignment[i] = i % clusters;
  return synth_embeddings_around(centres, assignment, spread, norm_target, rng);
}

EmbeddingMatrix synth_embeddings_around(const Matrix& centres,
                                        const std::vector<std::size_t>& assignment,
                                        Real spread, Real norm_target, Rng& rng) {
  const std::size_t dim = centres.cols();
  EmbeddingMatrix out{Matrix(assignment.size(), dim), Stage::kRaw, {}};
  std::vector<Real> noise(dim);
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    if (assignment[i] >= centres.rows()) fail(ErrorCode::kInput, "cluster id out of range");
    for (auto& v : noise) v = static_cast<Real>(rng.normal());
    rescale_row(noise, spread);
    auto row = out.data.row(i);
    auto c = centres.row(assignment[i]);
    for (std::size_t j = 0; j < dim; ++j) row[j] = c[j] + noise[j];
    rescale_row(row, norm_target);
  }
  return out;
}

}  // namespace semfed
