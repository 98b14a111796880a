#include "semfed/config.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "semfed/error.hpp"

namespace semfed {

const char* ablation_name(Ablation a) {
  switch (a) {
    case Ablation::kFull: return "full";
    case Ablation::kTextOnly: return "text_only";
    case Ablation::kIdOnly: return "id_only";
    case Ablation::kKdLocal: return "kd_local";
    case Ablation::kFkdNoProjection: return "fkd_no_projection";
  }
  return "unknown";
}

Ablation parse_ablation(const std::string& name) {
  for (Ablation a : {Ablation::kFull, Ablation::kTextOnly, Ablation::kIdOnly, Ablation::kKdLocal,
                     Ablation::kFkdNoProjection}) {
    if (name == ablation_name(a)) return a;
  }
  fail(ErrorCode::kConfig, "ablation: unknown mode '" + name + "'");
}

namespace {

[[noreturn]] void bad_key(const std::string& key, const std::string& why) {
  fail(ErrorCode::kConfig, key + ": " + why);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string part; std::getline(ss, part, ',');) {
    part = trim(part);
    if (!part.empty()) out.push_back(part);
  }
  return out;
}

std::string join_list(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    bad_key(key, "expected a nonnegative integer, got '" + v + "'");
  }
  return out;
}

std::size_t parse_count(const std::string& key, const std::string& v) {
  return static_cast<std::size_t>(parse_u64(key, v));
}

template <typename T>
T parse_real(const std::string& key, const std::string& v) {
  T out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) {
    bad_key(key, "expected a finite number, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  bad_key(key, "expected true or false, got '" + v + "'");
}

template <typename T>
std::string format_real(T v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define SEMFED_COUNT(expr)                                                                  \
  Field {                                                                                   \
    [](RunConfig& c, const std::string& k, const std::string& v) { expr = parse_count(k, v); }, \
        [](const RunConfig& c) { return std::to_string(expr); }                             \
  }
#define SEMFED_REAL(expr, type)                                                                 \
  Field {                                                                                       \
    [](RunConfig& c, const std::string& k, const std::string& v) { expr = parse_real<type>(k, v); }, \
        [](const RunConfig& c) { return format_real(expr); }                                    \
  }

// Fixed key order; also the serialization order.
const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"stage2.domains",
       Field{[](RunConfig& c, const std::string&, const std::string& v) {
               c.stage2_domains = split_list(v);
             },
             [](const RunConfig& c) { return join_list(c.stage2_domains); }}},
      {"min_len", SEMFED_COUNT(c.min_len)},
      {"keep_last",
       Field{[](RunConfig& c, const std::string& k, const std::string& v) {
               c.keep_last = v == "all" ? kKeepAll : parse_count(k, v);
             },
             [](const RunConfig& c) {
               return c.keep_last == kKeepAll ? std::string("all") : std::to_string(c.keep_last);
             }}},
      {"seed",
       Field{[](RunConfig& c, const std::string& k, const std::string& v) { c.seed = parse_u64(k, v); },
             [](const RunConfig& c) { return std::to_string(c.seed); }}},
      {"sigma", SEMFED_REAL(c.sigma, double)},
      {"k", SEMFED_COUNT(c.server.k)},
      {"max_iter", SEMFED_COUNT(c.server.max_iter)},
      {"restarts", SEMFED_COUNT(c.server.restarts)},
      {"tol", SEMFED_REAL(c.server.tol, double)},
      {"rounds", SEMFED_COUNT(c.server.rounds)},
      {"seqrec.d", SEMFED_COUNT(c.seqrec.d)},
      {"seqrec.blocks", SEMFED_COUNT(c.seqrec.num_blocks)},
      {"seqrec.heads", SEMFED_COUNT(c.seqrec.num_heads)},
      {"seqrec.max_len", SEMFED_COUNT(c.seqrec.max_len)},
      {"seqrec.dropout", SEMFED_REAL(c.seqrec.dropout, Real)},
      {"seqrec.lr", SEMFED_REAL(c.seqrec.lr, Real)},
      {"seqrec.epochs", SEMFED_COUNT(c.seqrec.epochs)},
      {"seqrec.batch", SEMFED_COUNT(c.seqrec.batch)},
      {"alpha", SEMFED_REAL(c.fkd.alpha, Real)},
      {"beta", SEMFED_REAL(c.fkd.beta, Real)},
      {"fkd.fused_dim", SEMFED_COUNT(c.fkd.fused_dim)},
      {"fkd.epochs", SEMFED_COUNT(c.fkd.epochs)},
      {"fkd.batch", SEMFED_COUNT(c.fkd.batch)},
      {"fkd.lr", SEMFED_REAL(c.fkd.lr, Real)},
      {"lm.hidden", SEMFED_COUNT(c.lm.hidden)},
      {"lm.blocks", SEMFED_COUNT(c.lm.num_blocks)},
      {"lm.heads", SEMFED_COUNT(c.lm.num_heads)},
      {"lm.context", SEMFED_COUNT(c.lm.context)},
      {"stage2.epochs", SEMFED_COUNT(c.stage2.epochs)},
      {"stage2.lr", SEMFED_REAL(c.stage2.lr, Real)},
      {"stage2.batch", SEMFED_COUNT(c.stage2.batch)},
      {"stage2.freeze_backbone",
       Field{[](RunConfig& c, const std::string& k, const std::string& v) {
               c.stage2.freeze_backbone = parse_bool(k, v);
             },
             [](const RunConfig& c) {
               return std::string(c.stage2.freeze_backbone ? "true" : "false");
             }}},
      {"stage2.n_soft", SEMFED_COUNT(c.n_soft)},
      {"stage2.prefixes", SEMFED_COUNT(c.prefixes)},
      {"stage2.template",
       Field{[](RunConfig& c, const std::string&, const std::string& v) { c.prompt_template = v; },
             [](const RunConfig& c) { return c.prompt_template; }}},
      {"ablation",
       Field{[](RunConfig& c, const std::string&, const std::string& v) {
               c.ablation = parse_ablation(v);
             },
             [](const RunConfig& c) { return std::string(ablation_name(c.ablation)); }}},
  };
  return table;
}

#undef SEMFED_COUNT
#undef SEMFED_REAL

void set_domains(RunConfig& cfg, const std::string& value) {
  std::vector<DomainData> next;
  for (const std::string& name : split_list(value)) {
    DomainData d{name, "", "", ""};
    for (const DomainData& old : cfg.domains) {
      if (old.name == name) d = old;
    }
    next.push_back(d);
  }
  cfg.domains = std::move(next);
}

std::string resolve(const std::string& path, const std::string& base_dir) {
  if (path.empty() || base_dir.empty() || std::filesystem::path(path).is_absolute()) return path;
  return (std::filesystem::path(base_dir) / path).lexically_normal().string();
}

}  // namespace

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "domains") {
    set_domains(cfg, value);
    return;
  }
  if (key.rfind("data.", 0) == 0) {
    const auto dot = key.rfind('.');
    const std::string name = key.substr(5, dot - 5);
    const std::string part = key.substr(dot + 1);
    for (DomainData& d : cfg.domains) {
      if (d.name != name) continue;
      if (part == "items") d.items = value;
      else if (part == "interactions") d.interactions = value;
      else if (part == "text") d.text = value;
      else bad_key(key, "unknown key");
      return;
    }
    bad_key(key, "domain '" + name + "' is not listed in domains");
  }
  for (const auto& [name, field] : fields()) {
    if (name == key) {
      field.set(cfg, key, value);
      return;
    }
  }
  bad_key(key, "unknown key");
}

RunConfig parse_config_text(const std::string& text, const std::string& base_dir) {
  std::vector<std::pair<std::string, std::string>> entries;
  std::set<std::string> seen;
  std::istringstream is(text);
  std::size_t line_no = 0;
  for (std::string line; std::getline(is, line);) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      fail(ErrorCode::kConfig, "line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (!seen.insert(key).second) bad_key(key, "duplicate key");
    entries.emplace_back(std::move(key), std::move(value));
  }
  RunConfig cfg;
  for (const auto& [k, v] : entries) {
    if (k == "domains") set_config_value(cfg, k, v);
  }
  for (const auto& [k, v] : entries) {
    if (k == "domains") continue;
    const bool is_path = k.rfind("data.", 0) == 0;
    set_config_value(cfg, k, is_path ? resolve(v, base_dir) : v);
  }
  cfg.validate();
  return cfg;
}

RunConfig parse_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kConfig, "cannot open config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), std::filesystem::path(path).parent_path().string());
}

std::string serialize_config(const RunConfig& cfg) {
  std::ostringstream os;
  std::vector<std::string> names;
  for (const DomainData& d : cfg.domains) names.push_back(d.name);
  os << "domains = " << join_list(names) << '\n';
  for (const DomainData& d : cfg.domains) {
    os << "data." << d.name << ".items = " << d.items << '\n';
    os << "data." << d.name << ".interactions = " << d.interactions << '\n';
    os << "data." << d.name << ".text = " << d.text << '\n';
  }
  for (const auto& [name, field] : fields()) os << name << " = " << field.get(cfg) << '\n';
  return os.str();
}

void RunConfig::validate() const {
  if (domains.empty()) bad_key("domains", "at least one domain is required");
  std::set<std::string> names;
  for (const DomainData& d : domains) {
    if (!names.insert(d.name).second) bad_key("domains", "duplicate domain '" + d.name + "'");
  }
  for (const std::string& d : stage2_domains) {
    if (!names.count(d)) bad_key("stage2.domains", "domain '" + d + "' is not listed in domains");
  }
  if (min_len < 3) bad_key("min_len", "must be at least 3 for leave-one-out splits");
  if (keep_last < 3) bad_key("keep_last", "must be at least 3");
  if (!(sigma >= 0)) bad_key("sigma", "must be >= 0");
  if (server.k == 0) bad_key("k", "must be positive");
  if (server.max_iter == 0) bad_key("max_iter", "must be positive");
  if (server.restarts == 0) bad_key("restarts", "must be positive");
  if (!(server.tol > 0)) bad_key("tol", "must be positive");
  if (server.rounds == 0) bad_key("rounds", "must be positive");
  if (!(fkd.alpha >= 0)) bad_key("alpha", "must be >= 0");
  if (!(fkd.beta >= 0)) bad_key("beta", "must be >= 0");
  seqrec.validate();
  fkd.validate();
  lm.validate();
  stage2.validate();
  if (n_soft == 0) bad_key("stage2.n_soft", "must be positive");
  const Vocabulary probe(default_instruction_words(), 1);
  std::size_t words = 0;
  try {
    words = probe.encode_words(prompt_template).size();
  } catch (const Error& e) {
    bad_key("stage2.template", e.what());
  }
  if (words + 2 * n_soft > lm.context) {
    bad_key("stage2.template", "prompt does not fit in lm.context");
  }
}

std::vector<std::string> RunConfig::active_stage2_domains() const {
  if (!stage2_domains.empty()) return stage2_domains;
  std::vector<std::string> out;
  for (const DomainData& d : domains) out.push_back(d.name);
  return out;
}

const DomainData& RunConfig::domain(const std::string& name) const {
  for (const DomainData& d : domains) {
    if (d.name == name) return d;
  }
  fail(ErrorCode::kConfig, "unknown domain '" + name + "'");
}

}  // namespace semfed
