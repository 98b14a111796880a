#include "semfed/pipeline.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <optional>

#include "semfed/bytes.hpp"
#include "semfed/datamodel.hpp"
#include "semfed/embedding_io.hpp"
#include "semfed/error.hpp"
#include "semfed/privacy.hpp"
#include "semfed/rng.hpp"

namespace semfed {

using nlohmann::json;
namespace fs = std::filesystem;

std::uint64_t stage_seed(const RunConfig& cfg, const char* stage, std::uint64_t index) {
  return derive_seed(cfg.seed, stage, index);
}

DomainDataset load_domain(const RunConfig& cfg, const DomainData& dd) {
  for (const auto& [key, path] : {std::pair{"items", dd.items}, {"interactions", dd.interactions}}) {
    if (path.empty() || !fs::exists(path)) {
      fail(ErrorCode::kConfig, "data." + dd.name + "." + key + ": file '" + path + "' not found");
    }
  }
  DomainDataset out;
  out.catalog = load_items(dd.items, dd.name);
  const auto logs = load_interactions(dd.interactions, out.catalog);
  const auto prepared = prepare_dataset(logs, cfg.min_len, cfg.keep_last);
  out.splits = leave_one_out(prepared);
  out.users = logs.size();
  out.prepared_users = prepared.size();
  if (out.splits.empty()) fail(ErrorCode::kInput, "domain " + dd.name + " has no usable users");
  return out;
}

namespace {

std::vector<std::size_t> tail(const std::vector<std::size_t>& v, std::size_t n) {
  if (v.size() <= n) return v;
  return std::vector<std::size_t>(v.end() - static_cast<std::ptrdiff_t>(n), v.end());
}

}  // namespace

std::size_t PromptSources::user_dim() const {
  return mode == Ablation::kTextOnly ? raw->dim() : seqrec->config().d;
}

std::size_t PromptSources::item_dim() const {
  switch (mode) {
    case Ablation::kTextOnly: return raw->dim();
    case Ablation::kIdOnly: return seqrec->config().d;
    default: return enhanced->cols();
  }
}

Matrix PromptSources::user(const std::vector<std::size_t>& history) const {
  if (mode == Ablation::kTextOnly) {
    Matrix mean(1, raw->dim());
    for (std::size_t i : history) {
      auto row = raw->data.row(i);
      for (std::size_t j = 0; j < row.size(); ++j) mean(0, j) += row[j];
    }
    mean *= Real(1) / Real(history.size());
    return mean;
  }
  return encode_sequence(*seqrec, tail(history, seqrec->config().max_len)).user;
}

Matrix PromptSources::item(const std::vector<std::size_t>& history) const {
  const std::size_t last = history.back();
  switch (mode) {
    case Ablation::kTextOnly: return Matrix::row_vector(raw->data.row(last));
    case Ablation::kIdOnly: return seqrec->item_embedding(last);
    default: return Matrix::row_vector(enhanced->row(last));
  }
}

PromptExample PromptSources::example(const std::vector<std::size_t>& history,
                                     std::size_t target) const {
  return PromptExample{user(history), item(history), target};
}

std::vector<PromptExample> stage2_train_examples(const SplitSet& splits, const PromptSources& src,
                                                 std::size_t prefixes) {
  std::vector<PromptExample> out;
  for (const UserSplit& s : splits) {
    const std::size_t n = s.train.size();
    const std::size_t first = prefixes == 0 || prefixes >= n ? 1 : n - prefixes;
    for (std::size_t j = first; j < n; ++j) {
      const std::vector<std::size_t> history(s.train.begin(),
                                             s.train.begin() + static_cast<std::ptrdiff_t>(j));
      out.push_back(src.example(history, s.train[j]));
    }
  }
  return out;
}

std::vector<PromptExample> split_examples(const SplitSet& splits, const PromptSources& src,
                                          bool test) {
  std::vector<PromptExample> out;
  for (const UserSplit& s : splits) {
    if (!test) {
      out.push_back(src.example(s.train, s.valid));
      continue;
    }
    std::vector<std::size_t> history = s.train;
    history.push_back(s.valid);
    out.push_back(src.example(history, s.test));
  }
  return out;
}

namespace {

bool uses_text(Ablation a) { return a != Ablation::kIdOnly; }
bool uses_federation(Ablation a) { return a == Ablation::kFull || a == Ablation::kFkdNoProjection; }
bool uses_seqrec(Ablation a) { return a != Ablation::kTextOnly; }
bool uses_fkd(Ablation a) {
  return a == Ablation::kFull || a == Ablation::kKdLocal || a == Ablation::kFkdNoProjection;
}

std::string fnv_hex(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  write_file_bytes(path.string(), std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::optional<json> read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  try {
    return json::parse(in);
  } catch (const json::exception&) {
    return std::nullopt;
  }
}

struct DomainState {
  DomainData data;
  std::size_t slot = 0;
  Catalog catalog;
  SplitSet splits;
  EmbeddingMatrix raw;
  EmbeddingMatrix encrypted;
  EmbeddingMatrix synced;
};

class Runner {
 public:
  Runner(const RunConfig& cfg, const RunOptions& opt)
      : cfg_(cfg), opt_(opt), fingerprint_(fnv_hex(serialize_config(cfg))) {}

  RunReport run();

 private:
  template <typename F>
  void stage(const std::string& name, F&& body) {
    const auto start = std::chrono::steady_clock::now();
    try {
      body();
    } catch (const Error& e) {
      fail(e.code(), "stage " + name + ": " + e.what());
    } catch (const std::exception& e) {
      fail(ErrorCode::kIo, "stage " + name + ": " + e.what());
    }
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - start;
    report_.timings[name] = dt.count();
    report_.body["stages"].push_back(name);
  }

  // The stored section of a stage whose artifacts are all present and were
  // produced under the same config.
  std::optional<json> cached(const fs::path& sidecar, const std::vector<fs::path>& artifacts) {
    if (!opt_.resume) return std::nullopt;
    for (const auto& a : artifacts) {
      if (!fs::exists(a)) return std::nullopt;
    }
    auto j = read_json(sidecar);
    if (!j || j->value("fingerprint", "") != fingerprint_ || !j->contains("section")) {
      return std::nullopt;
    }
    report_.timings["cached"].push_back(sidecar.filename().string());
    return j->at("section");
  }

  void store(const fs::path& sidecar, const json& section) {
    write_text(sidecar, json{{"fingerprint", fingerprint_}, {"section", section}}.dump(2) + "\n");
  }

  fs::path domain_dir(const std::string& d) const { return fs::path(opt_.out_dir) / d; }

  void ingest();
  void encrypt_all();
  void federate();
  void run_domain(DomainState& dom);

  const RunConfig& cfg_;
  const RunOptions& opt_;
  std::string fingerprint_;
  RunReport report_;
  std::vector<DomainState> domains_;
};

void Runner::ingest() {
  for (std::size_t i = 0; i < cfg_.domains.size(); ++i) {
    const DomainData& dd = cfg_.domains[i];
    DomainState dom;
    dom.data = dd;
    dom.slot = i;
    DomainDataset data = load_domain(cfg_, dd);
    dom.catalog = std::move(data.catalog);
    dom.splits = std::move(data.splits);
    json section = {{"items", dom.catalog.size()},
                    {"users", data.users},
                    {"prepared_users", data.prepared_users}};
    if (uses_text(cfg_.ablation)) {
      if (dd.text.empty() || !fs::exists(dd.text)) {
        fail(ErrorCode::kConfig, "data." + dd.name + ".text: file '" + dd.text + "' not found");
      }
      dom.raw = read_embeddings(dd.text);
      dom.raw.domain = dd.name;
      if (dom.raw.stage != Stage::kRaw) {
        fail(ErrorCode::kInput, "text embeddings of domain " + dd.name + " are not raw");
      }
      if (dom.raw.rows() != dom.catalog.size()) {
        fail(ErrorCode::kInput, "domain " + dd.name + ": " + std::to_string(dom.raw.rows()) +
                                    " text rows for " + std::to_string(dom.catalog.size()) +
                                    " items");
      }
      section["text_dim"] = dom.raw.dim();
    }
    report_.body["data"][dd.name] = section;
    domains_.push_back(std::move(dom));
  }
}

void Runner::encrypt_all() {
  for (DomainState& dom : domains_) {
    const fs::path artifact = domain_dir(dom.data.name) / "text.enc.sfub";
    const fs::path sidecar = domain_dir(dom.data.name) / "encrypt.json";
    const std::uint64_t seed = stage_seed(cfg_, "encrypt", dom.slot);
    report_.body["seeds"]["encrypt." + dom.data.name] = seed;
    if (auto section = cached(sidecar, {artifact})) {
      dom.encrypted = read_embeddings(artifact.string());
      report_.body["encryption"][dom.data.name] = *section;
      continue;
    }
    dom.encrypted = encrypt(dom.raw, PerturbationConfig{static_cast<Real>(cfg_.sigma), seed});
    write_embeddings(artifact.string(), dom.encrypted);
    const json section = {{"sigma", cfg_.sigma},
                          {"rows", dom.encrypted.rows()},
                          {"audit_similarity", audit_similarity(dom.raw, dom.encrypted)}};
    store(sidecar, section);
    report_.body["encryption"][dom.data.name] = section;
  }
}

void Runner::federate() {
  const fs::path sidecar = fs::path(opt_.out_dir) / "federate.json";
  std::vector<fs::path> artifacts;
  for (const DomainState& dom : domains_) {
    artifacts.push_back(domain_dir(dom.data.name) / "text.sync.sfub");
  }
  ServerConfig server = cfg_.server;
  server.seed = stage_seed(cfg_, "federate");
  report_.body["seeds"]["federate"] = server.seed;
  if (auto section = cached(sidecar, artifacts)) {
    for (std::size_t i = 0; i < domains_.size(); ++i) {
      domains_[i].synced = read_embeddings(artifacts[i].string());
    }
    report_.body["clustering"] = *section;
    return;
  }
  std::vector<ClientUpload> uploads;
  for (const DomainState& dom : domains_) {
    uploads.push_back(ClientUpload{dom.data.name, dom.encrypted, kProtocolVersion});
  }
  const RoundResult round = run_round(uploads, server);
  std::size_t mixed = 0, single = 0, empty = 0;
  for (const auto& row : round.report.occupancy) {
    std::size_t present = 0;
    for (std::size_t n : row) present += n > 0 ? 1 : 0;
    if (present == 0) ++empty;
    else if (present == 1) ++single;
    else ++mixed;
  }
  for (std::size_t i = 0; i < domains_.size(); ++i) {
    domains_[i].synced = round.synced.for_domain(domains_[i].data.name);
    write_embeddings(artifacts[i].string(), domains_[i].synced);
  }
  const json section = {{"k", round.report.k},
                        {"rounds", server.rounds},
                        {"inertia", round.report.inertia},
                        {"iterations", round.report.iterations},
                        {"converged", round.report.converged},
                        {"domains", round.report.domains},
                        {"mixed_clusters", mixed},
                        {"single_domain_clusters", single},
                        {"empty_clusters", empty},
                        {"occupancy", round.report.occupancy},
                        {"warnings", round.report.warnings}};
  store(sidecar, section);
  report_.body["clustering"] = section;
}

json metrics_json(const Metrics& m) {
  return {{"hit_at_1", m.hit_at_1}, {"valid_ratio", m.valid_ratio}, {"count", m.count}};
}

void Runner::run_domain(DomainState& dom) {
  const std::string& d = dom.data.name;
  const fs::path dir = domain_dir(d);
  std::vector<std::vector<std::size_t>> train_seqs;
  std::vector<InteractionLog> train_logs;
  for (const UserSplit& s : dom.splits) {
    train_seqs.push_back(s.train);
    train_logs.push_back(InteractionLog{s.user_id, s.train, d});
  }

  std::optional<SeqRecModel> seqrec;
  std::vector<Matrix> seqrec_before;
  if (uses_seqrec(cfg_.ablation)) {
    stage("pretrain." + d, [&] {
      SeqRecConfig sc = cfg_.seqrec;
      sc.seed = stage_seed(cfg_, "seqrec", dom.slot);
      report_.body["seeds"]["seqrec." + d] = sc.seed;
      const fs::path artifact = dir / "model.seqrec";
      const fs::path sidecar = dir / "pretrain.json";
      if (auto section = cached(sidecar, {artifact})) {
        seqrec = SeqRecModel::load(artifact.string());
        report_.body["seqrec"][d] = *section;
        return;
      }
      PretrainResult res = pretrain(train_logs, dom.catalog.size(), sc);
      res.model.save(artifact.string());
      const json section = {{"losses", res.losses}, {"warnings", res.warnings}};
      store(sidecar, section);
      report_.body["seqrec"][d] = section;
      seqrec = std::move(res.model);
    });
    seqrec_before = snapshot(seqrec->params());
  }

  Matrix enhanced;
  if (uses_fkd(cfg_.ablation)) {
    stage("distill." + d, [&] {
      FkdConfig fc = cfg_.fkd;
      fc.seed = stage_seed(cfg_, "fkd", dom.slot);
      fc.negative_seed = stage_seed(cfg_, "fkd-negative", dom.slot);
      report_.body["seeds"]["fkd." + d] = fc.seed;
      report_.body["seeds"]["fkd-negative." + d] = fc.negative_seed;
      const fs::path artifact = dir / "model.fkd";
      const fs::path sidecar = dir / "distill.json";
      if (auto section = cached(sidecar, {artifact})) {
        enhanced = load_fkd(artifact.string()).enhanced;
        report_.body["fkd"][d] = *section;
        return;
      }
      const EmbeddingMatrix& text =
          cfg_.ablation == Ablation::kKdLocal ? dom.raw : dom.synced;
      FkdResult res = train_fkd(train_seqs, *seqrec, text, fc);
      save_fkd(artifact.string(), res);
      write_text(dir / "fkd_loss.csv", loss_curve_csv(res.curve));
      json curve = json::array();
      for (const FkdEpoch& e : res.curve) {
        curve.push_back({{"epoch", e.epoch},
                         {"kd", e.kd},
                         {"t_re", e.text_recon},
                         {"i_re", e.id_recon},
                         {"rec", e.rec},
                         {"total", e.total}});
      }
      const json section = {{"text", cfg_.ablation == Ablation::kKdLocal ? "local" : "synchronized"},
                            {"curve", curve}};
      store(sidecar, section);
      report_.body["fkd"][d] = section;
      enhanced = std::move(res.enhanced);
    });
  }

  const PromptSources feat{cfg_.ablation, seqrec ? &*seqrec : nullptr, &enhanced, &dom.raw};
  std::optional<PromptModel> model;
  stage("finetune." + d, [&] {
    FinetuneConfig fc = cfg_.stage2;
    fc.seed = stage_seed(cfg_, "stage2", dom.slot);
    const bool projectors = cfg_.ablation != Ablation::kFkdNoProjection;
    // Without projectors nothing upstream of the LM is trainable.
    if (!projectors) fc.freeze_backbone = false;
    TinyLmConfig lc = cfg_.lm;
    lc.seed = stage_seed(cfg_, "lm", dom.slot);
    report_.body["seeds"]["stage2." + d] = fc.seed;
    report_.body["seeds"]["lm." + d] = lc.seed;
    const fs::path artifact = dir / "model.stage2";
    const fs::path sidecar = dir / "finetune.json";
    if (auto section = cached(sidecar, {artifact})) {
      model = PromptModel::from_checkpoint(Checkpoint::load(artifact.string()));
      report_.body["stage2"][d] = *section;
      return;
    }
    const auto train = stage2_train_examples(dom.splits, feat, cfg_.prefixes);
    const auto valid = split_examples(dom.splits, feat, false);
    model = PromptModel(TinyLM(Vocabulary(default_instruction_words(), dom.catalog.size()), lc),
                        feat.user_dim(), feat.item_dim(), cfg_.n_soft, projectors,
                        cfg_.prompt_template, fc.seed);
    const std::vector<Matrix> lm_before = snapshot(model->lm.params());
    const FinetuneCurve curve = finetune(*model, train, valid, fc);
    model->to_checkpoint().save(artifact.string());
    json section = {{"train_examples", train.size()},
                    {"valid_examples", valid.size()},
                    {"freeze_backbone", fc.freeze_backbone},
                    {"projectors", projectors},
                    {"train_loss", curve.train},
                    {"valid_loss", curve.valid}};
    if (fc.freeze_backbone) {
      section["lm_unchanged"] = bit_equal(lm_before, snapshot(model->lm.params()));
    }
    store(sidecar, section);
    report_.body["stage2"][d] = section;
  });

  if (seqrec) {
    report_.body["frozen"][d]["seqrec_unchanged"] =
        bit_equal(seqrec_before, snapshot(seqrec->params()));
  }

  stage("eval." + d, [&] {
    const auto valid = split_examples(dom.splits, feat, false);
    const auto test = split_examples(dom.splits, feat, true);
    report_.body["metrics"][d] = {{"valid", metrics_json(evaluate(*model, valid))},
                                  {"test", metrics_json(evaluate(*model, test))}};
  });
}

RunReport Runner::run() {
  cfg_.validate();
  fs::create_directories(opt_.out_dir);
  report_.body["config"] = serialize_config(cfg_);
  report_.body["ablation"] = ablation_name(cfg_.ablation);
  report_.body["seeds"]["run"] = cfg_.seed;
  report_.body["stages"] = json::array();

  stage("ingest", [&] { ingest(); });
  if (uses_federation(cfg_.ablation)) {
    stage("encrypt", [&] { encrypt_all(); });
    stage("federate", [&] { federate(); });
  }
  double hit = 0, valid = 0;
  const auto active = cfg_.active_stage2_domains();
  for (const std::string& name : active) {
    for (DomainState& dom : domains_) {
      if (dom.data.name == name) run_domain(dom);
    }
    hit += report_.body["metrics"][name]["test"]["hit_at_1"].get<double>();
    valid += report_.body["metrics"][name]["test"]["valid_ratio"].get<double>();
  }
  report_.body["summary"] = {{"hit_at_1", hit / double(active.size())},
                             {"valid_ratio", valid / double(active.size())}};
  write_text(fs::path(opt_.out_dir) / "report.json", report_.body.dump(2) + "\n");
  write_text(fs::path(opt_.out_dir) / "timings.json", report_.timings.dump(2) + "\n");
  return report_;
}

}  // namespace

RunReport run_pipeline(const RunConfig& cfg, const RunOptions& options) {
  Runner runner(cfg, options);
  return runner.run();
}

}  // namespace semfed
