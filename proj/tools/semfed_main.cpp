#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "semfed/bytes.hpp"
#include "semfed/config.hpp"
#include "semfed/embedding_io.hpp"
#include "semfed/error.hpp"
#include "semfed/federation.hpp"
#include "semfed/fkd.hpp"
#include "semfed/pipeline.hpp"
#include "semfed/privacy.hpp"
#include "semfed/promptrec.hpp"
#include "semfed/rng.hpp"
#include "semfed/seqrec.hpp"
#include "semfed/synthetic.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace semfed;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string out_dir = "out";
};

RunConfig load_config(const Globals& g) {
  RunConfig cfg = g.config.empty() ? RunConfig{} : parse_config(g.config);
  if (g.seed) cfg.seed = *g.seed;
  cfg.validate();
  return cfg;
}

std::uint64_t seed_or(const Globals& g, std::uint64_t fallback) { return g.seed.value_or(fallback); }

std::size_t domain_slot(const RunConfig& cfg, const std::string& domain) {
  for (std::size_t i = 0; i < cfg.domains.size(); ++i) {
    if (cfg.domains[i].name == domain) return i;
  }
  fail(ErrorCode::kConfig, "domain '" + domain + "' is not listed in the config");
}

void write_text(const std::string& path, const std::string& text) {
  write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::vector<std::vector<std::size_t>> train_prefixes(const SplitSet& splits) {
  std::vector<std::vector<std::size_t>> out;
  for (const UserSplit& s : splits) out.push_back(s.train);
  return out;
}

void print_curve(const char* label, const std::vector<double>& values) {
  for (std::size_t e = 0; e < values.size(); ++e) {
    std::printf("%s epoch=%zu loss=%.6f\n", label, e, values[e]);
  }
}

// Parses "key=lo..hi:step" into the list of values to try.
std::pair<std::string, std::vector<std::string>> parse_grid(const std::string& spec) {
  const auto eq = spec.find('=');
  const auto dots = spec.find("..");
  const auto colon = spec.rfind(':');
  if (eq == std::string::npos || dots == std::string::npos || colon == std::string::npos ||
      !(eq < dots && dots < colon)) {
    fail(ErrorCode::kConfig, "grid must look like key=lo..hi:step, got '" + spec + "'");
  }
  const std::string key = spec.substr(0, eq);
  double lo = 0, hi = 0, step = 0;
  try {
    lo = std::stod(spec.substr(eq + 1, dots - eq - 1));
    hi = std::stod(spec.substr(dots + 2, colon - dots - 2));
    step = std::stod(spec.substr(colon + 1));
  } catch (const std::exception&) {
    fail(ErrorCode::kConfig, "grid bounds are not numbers in '" + spec + "'");
  }
  if (!(step > 0) || hi < lo) fail(ErrorCode::kConfig, "grid needs lo <= hi and step > 0");
  std::vector<std::string> values;
  for (double v = lo; v <= hi + step * 1e-9; v += step) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    values.emplace_back(buf);
  }
  return {key, values};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated cross-domain sequential recommendation with soft-prompted language models"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed_value = 0;
  auto* seed_opt = app.add_option("--seed", seed_value, "Random seed")->group("Global");
  app.add_option("--config", g.config, "Run configuration (key = value)")->group("Global");
  app.add_option("--out-dir", g.out_dir, "Output directory")->group("Global");
  app.fallthrough();

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Load, filter and split one domain");
  std::string in_domain = "a", in_items, in_inter;
  ingest->add_option("--domain", in_domain);
  ingest->add_option("--items", in_items)->required();
  ingest->add_option("--interactions", in_inter)->required();

  // synth-embed
  auto* synth = app.add_subcommand("synth-embed", "Synthetic raw text embeddings for a catalog");
  std::string se_items, se_out;
  std::size_t se_dim = 768, se_clusters = 0;
  double se_norm = 1.0, se_spread = 0.1;
  synth->add_option("--items", se_items)->required();
  synth->add_option("--dim", se_dim);
  synth->add_option("--norm", se_norm);
  synth->add_option("--clusters", se_clusters);
  synth->add_option("--spread", se_spread);
  synth->add_option("--out", se_out)->required();

  // synth-fixture
  auto* fixture = app.add_subcommand("synth-fixture", "Two-domain fixture with planted clusters and a run config");
  FixtureConfig fx;
  fixture->add_option("--items", fx.items_per_domain);
  fixture->add_option("--users", fx.users_per_domain);
  fixture->add_option("--clusters", fx.clusters);
  fixture->add_option("--text-dim", fx.text_dim);
  fixture->add_option("--text-spread", fx.text_spread);
  fixture->add_option("--min-len", fx.min_len);
  fixture->add_option("--max-len", fx.max_len);
  fixture->add_option("--follow-item", fx.follow_item);
  fixture->add_option("--follow-cluster", fx.follow_cluster);

  // encrypt
  auto* enc = app.add_subcommand("encrypt", "Perturb and similarity-replace raw embeddings");
  double enc_sigma = 0.1;
  std::string enc_in, enc_out;
  enc->add_option("--sigma", enc_sigma);
  enc->add_option("--in", enc_in)->required();
  enc->add_option("--out", enc_out)->required();

  // audit-privacy
  auto* audit = app.add_subcommand("audit-privacy", "Mean cosine similarity between raw and encrypted rows");
  std::string au_raw, au_enc;
  audit->add_option("--raw", au_raw)->required();
  audit->add_option("--enc", au_enc)->required();

  // federate
  auto* fed = app.add_subcommand("federate", "One server round over encrypted uploads");
  std::vector<std::string> fed_in;
  ServerConfig fed_cfg;
  fed->add_option("--in", fed_in, "Encrypted SFUB file per domain")->required();
  fed->add_option("--k", fed_cfg.k);
  fed->add_option("--max-iter", fed_cfg.max_iter);
  fed->add_option("--restarts", fed_cfg.restarts);
  fed->add_option("--tol", fed_cfg.tol);
  fed->add_option("--rounds", fed_cfg.rounds);

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "Pretrain the sequential model of one domain");
  std::string pre_domain = "a", pre_out;
  pre->add_option("--domain", pre_domain);
  pre->add_option("--out", pre_out)->required();

  // distill
  auto* dis = app.add_subcommand("distill", "Fact-counter knowledge distillation");
  std::string dis_domain = "a", dis_seqrec, dis_synced, dis_out;
  std::optional<double> dis_alpha, dis_beta;
  std::optional<std::size_t> dis_epochs, dis_batch;
  dis->add_option("--domain", dis_domain);
  dis->add_option("--seqrec", dis_seqrec)->required();
  dis->add_option("--synced", dis_synced)->required();
  dis->add_option("--alpha", dis_alpha);
  dis->add_option("--beta", dis_beta);
  dis->add_option("--epochs", dis_epochs);
  dis->add_option("--batch", dis_batch);
  dis->add_option("--out", dis_out)->required();

  // finetune
  auto* ft = app.add_subcommand("finetune", "Stage-2 soft-prompt tuning");
  std::string ft_domain = "a", ft_seqrec, ft_fkd, ft_out;
  std::optional<std::size_t> ft_epochs;
  std::optional<double> ft_lr;
  bool ft_tune_backbone = false;
  ft->add_option("--domain", ft_domain);
  ft->add_option("--seqrec", ft_seqrec)->required();
  ft->add_option("--fkd", ft_fkd)->required();
  ft->add_option("--epochs", ft_epochs);
  ft->add_option("--lr", ft_lr);
  ft->add_flag("--tune-backbone", ft_tune_backbone, "Also train the language model");
  ft->add_option("--out", ft_out)->required();

  // eval
  auto* ev = app.add_subcommand("eval", "Hit@1 and valid ratio of a stage-2 model");
  std::string ev_model, ev_split = "test", ev_report;
  ev->add_option("--model", ev_model)->required();
  ev->add_option("--split", ev_split)->check(CLI::IsMember({"valid", "test"}));
  ev->add_option("--report", ev_report, "JSON report path (default: <model>.<split>.json)");

  // run
  auto* run = app.add_subcommand("run", "Full pipeline");
  std::string run_ablation, run_grid;
  bool run_fresh = false;
  run->add_option("--ablation", run_ablation);
  run->add_option("--grid", run_grid, "key=lo..hi:step");
  run->add_flag("--no-resume", run_fresh, "Recompute every stage");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  if (seed_opt->count() > 0) g.seed = seed_value;

  try {
    if (*ingest) {
      RunConfig cfg = load_config(g);
      DomainData dd{in_domain, in_items, in_inter, ""};
      const DomainDataset data = load_domain(cfg, dd);
      const fs::path dir = fs::path(g.out_dir) / in_domain;
      std::vector<InteractionLog> logs;
      json splits = json::array();
      for (const UserSplit& s : data.splits) {
        std::vector<std::size_t> seq = s.train;
        seq.push_back(s.valid);
        seq.push_back(s.test);
        logs.push_back(InteractionLog{s.user_id, seq, in_domain});
        splits.push_back({{"user_id", s.user_id},
                          {"train", s.train.size()},
                          {"valid", data.catalog[s.valid].item_id},
                          {"test", data.catalog[s.test].item_id}});
      }
      fs::create_directories(dir);
      write_interactions((dir / "interactions.prepared.jsonl").string(), logs, data.catalog);
      write_text((dir / "splits.json").string(), splits.dump(1) + "\n");
      std::printf("items=%zu users=%zu prepared=%zu\n", data.catalog.size(), data.users,
                  data.prepared_users);
    } else if (*synth) {
      const Catalog catalog = load_items(se_items, "synthetic");
      Rng rng(seed_or(g, 7));
      EmbeddingMatrix m = synth_embeddings(catalog.size(), se_dim, static_cast<Real>(se_norm), rng,
                                           se_clusters, static_cast<Real>(se_spread));
      write_embeddings(se_out, m);
      std::printf("rows=%zu dim=%zu\n", m.rows(), m.dim());
    } else if (*fixture) {
      fx.seed = seed_or(g, fx.seed);
      const Fixture f = make_fixture(fx);
      write_fixture(f, g.out_dir);
      RunConfig cfg;
      for (DomainData& d : cfg.domains) {
        const fs::path base = fs::absolute(fs::path(g.out_dir) / d.name);
        d.items = (base / "items.jsonl").string();
        d.interactions = (base / "interactions.jsonl").string();
        d.text = (base / "text.sfub").string();
      }
      cfg.seed = fx.seed;
      cfg.server.k = fx.clusters;
      write_text((fs::path(g.out_dir) / "run.cfg").string(), serialize_config(cfg));
      std::printf("wrote %s\n", (fs::path(g.out_dir) / "run.cfg").string().c_str());
    } else if (*enc) {
      const EmbeddingMatrix raw = read_embeddings(enc_in);
      const EmbeddingMatrix out =
          encrypt(raw, PerturbationConfig{static_cast<Real>(enc_sigma), seed_or(g, 7)});
      write_embeddings(enc_out, out);
      std::printf("rows=%zu audit_similarity=%.6f\n", out.rows(), audit_similarity(raw, out));
    } else if (*audit) {
      std::printf("%.6f\n", audit_similarity(read_embeddings(au_raw), read_embeddings(au_enc)));
    } else if (*fed) {
      fed_cfg.seed = seed_or(g, fed_cfg.seed);
      std::vector<ClientUpload> uploads;
      for (const std::string& path : fed_in) {
        EmbeddingMatrix m = read_embeddings(path);
        if (m.domain.empty()) m.domain = fs::path(path).stem().stem().string();
        uploads.push_back(ClientUpload{m.domain, m, kProtocolVersion});
      }
      const RoundResult r = run_round(uploads, fed_cfg);
      fs::create_directories(g.out_dir);
      for (std::size_t i = 0; i < r.synced.domains.size(); ++i) {
        write_embeddings((fs::path(g.out_dir) / (r.synced.domains[i] + ".sync.sfub")).string(),
                         r.synced.per_domain[i]);
      }
      const json rep = {{"k", r.report.k},           {"inertia", r.report.inertia},
                        {"iterations", r.report.iterations}, {"converged", r.report.converged},
                        {"domains", r.report.domains}, {"occupancy", r.report.occupancy},
                        {"warnings", r.report.warnings}};
      write_text((fs::path(g.out_dir) / "federate.json").string(), rep.dump(2) + "\n");
      for (const auto& w : r.report.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
      std::printf("k=%zu inertia=%.6f iterations=%zu converged=%s\n", r.report.k, r.report.inertia,
                  r.report.iterations, r.report.converged ? "true" : "false");
    } else if (*pre) {
      const RunConfig cfg = load_config(g);
      const DomainDataset data = load_domain(cfg, cfg.domain(pre_domain));
      std::vector<InteractionLog> logs;
      for (const UserSplit& s : data.splits) logs.push_back({s.user_id, s.train, pre_domain});
      SeqRecConfig sc = cfg.seqrec;
      sc.seed = stage_seed(cfg, "seqrec", domain_slot(cfg, pre_domain));
      const PretrainResult res = pretrain(logs, data.catalog.size(), sc);
      res.model.save(pre_out);
      for (const auto& w : res.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
      print_curve("pretrain", res.losses);
    } else if (*dis) {
      RunConfig cfg = load_config(g);
      if (dis_alpha) set_config_value(cfg, "alpha", std::to_string(*dis_alpha));
      if (dis_beta) set_config_value(cfg, "beta", std::to_string(*dis_beta));
      if (dis_epochs) cfg.fkd.epochs = *dis_epochs;
      if (dis_batch) cfg.fkd.batch = *dis_batch;
      cfg.validate();
      const DomainDataset data = load_domain(cfg, cfg.domain(dis_domain));
      SeqRecModel seqrec = SeqRecModel::load(dis_seqrec);
      if (!seqrec.frozen()) seqrec.freeze();
      const EmbeddingMatrix text = read_embeddings(dis_synced);
      FkdConfig fc = cfg.fkd;
      const std::size_t slot = domain_slot(cfg, dis_domain);
      fc.seed = stage_seed(cfg, "fkd", slot);
      fc.negative_seed = stage_seed(cfg, "fkd-negative", slot);
      const FkdResult res = train_fkd(train_prefixes(data.splits), seqrec, text, fc);
      save_fkd(dis_out, res);
      const std::string csv = loss_curve_csv(res.curve);
      write_text(dis_out + ".csv", csv);
      std::fputs(csv.c_str(), stdout);
    } else if (*ft) {
      RunConfig cfg = load_config(g);
      if (ft_epochs) cfg.stage2.epochs = *ft_epochs;
      if (ft_lr) set_config_value(cfg, "stage2.lr", std::to_string(*ft_lr));
      if (ft_tune_backbone) cfg.stage2.freeze_backbone = false;
      cfg.validate();
      const DomainDataset data = load_domain(cfg, cfg.domain(ft_domain));
      SeqRecModel seqrec = SeqRecModel::load(ft_seqrec);
      const FkdResult fkd = load_fkd(ft_fkd);
      const PromptSources src{Ablation::kFull, &seqrec, &fkd.enhanced, nullptr};
      const auto train = stage2_train_examples(data.splits, src, cfg.prefixes);
      const auto valid = split_examples(data.splits, src, false);
      FinetuneConfig fc = cfg.stage2;
      fc.seed = seed_or(g, stage_seed(cfg, "stage2", domain_slot(cfg, ft_domain)));
      TinyLmConfig lc = cfg.lm;
      lc.seed = derive_seed(fc.seed, "lm");
      PromptModel model(TinyLM(Vocabulary(default_instruction_words(), data.catalog.size()), lc),
                        src.user_dim(), src.item_dim(), cfg.n_soft, true, cfg.prompt_template,
                        fc.seed);
      const FinetuneCurve curve = finetune(model, train, valid, fc);
      Checkpoint ck = model.to_checkpoint();
      ck.metadata["sources"] = {{"config", g.config.empty() ? "" : fs::absolute(g.config).string()},
                                {"domain", ft_domain},
                                {"seqrec", fs::absolute(ft_seqrec).string()},
                                {"fkd", fs::absolute(ft_fkd).string()}};
      ck.save(ft_out);
      print_curve("train", curve.train);
      print_curve("valid", curve.valid);
    } else if (*ev) {
      const Checkpoint ck = Checkpoint::load(ev_model);
      PromptModel model = PromptModel::from_checkpoint(ck);
      const json sources = ck.metadata.value("sources", json::object());
      Globals eg = g;
      if (eg.config.empty()) eg.config = sources.value("config", "");
      const RunConfig cfg = load_config(eg);
      const std::string domain = sources.value("domain", "a");
      const DomainDataset data = load_domain(cfg, cfg.domain(domain));
      SeqRecModel seqrec = SeqRecModel::load(sources.value("seqrec", ""));
      const FkdResult fkd = load_fkd(sources.value("fkd", ""));
      const PromptSources src{Ablation::kFull, &seqrec, &fkd.enhanced, nullptr};
      const Metrics m = evaluate(model, split_examples(data.splits, src, ev_split == "test"));
      std::printf("hit@1=%.6f valid=%.6f\n", m.hit_at_1, m.valid_ratio);
      const std::string path = ev_report.empty() ? ev_model + "." + ev_split + ".json" : ev_report;
      write_text(path, json{{"split", ev_split},
                            {"domain", domain},
                            {"hit_at_1", m.hit_at_1},
                            {"valid_ratio", m.valid_ratio},
                            {"count", m.count}}
                               .dump(2) +
                           "\n");
    } else if (*run) {
      RunConfig cfg = load_config(g);
      if (!run_ablation.empty()) cfg.ablation = parse_ablation(run_ablation);
      RunOptions opt;
      opt.out_dir = g.out_dir;
      opt.resume = !run_fresh;
      if (run_grid.empty()) {
        const RunReport rep = run_pipeline(cfg, opt);
        std::printf("hit@1=%.6f valid=%.6f report=%s\n",
                    rep.body["summary"]["hit_at_1"].get<double>(),
                    rep.body["summary"]["valid_ratio"].get<double>(),
                    (fs::path(opt.out_dir) / "report.json").string().c_str());
      } else {
        const auto [key, values] = parse_grid(run_grid);
        for (const std::string& v : values) {
          RunConfig c = cfg;
          set_config_value(c, key, v);
          c.validate();
          RunOptions o = opt;
          o.out_dir = (fs::path(g.out_dir) / (key + "=" + v)).string();
          const RunReport rep = run_pipeline(c, o);
          std::printf("%s=%s hit@1=%.6f valid=%.6f\n", key.c_str(), v.c_str(),
                      rep.body["summary"]["hit_at_1"].get<double>(),
                      rep.body["summary"]["valid_ratio"].get<double>());
        }
      }
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error [%s]: %s\n", error_code_name(e.code()), e.what());
    return e.is_runtime() ? 2 : 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
