// One PASS/FAIL line per acceptance criterion. Thresholds are fixed here.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gradients.hpp"
#include "semfed/config.hpp"
#include "semfed/datamodel.hpp"
#include "semfed/embedding_io.hpp"
#include "semfed/error.hpp"
#include "semfed/federation.hpp"
#include "semfed/fkd.hpp"
#include "semfed/pipeline.hpp"
#include "semfed/privacy.hpp"
#include "semfed/rng.hpp"
#include "semfed/synthetic.hpp"

using namespace semfed;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  Matrix m(rows, cols);
  for (auto& x : m.data()) x = rng.uniform_real(-1, 1);
  return m;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

bool strictly_decreasing(const std::vector<double>& v, std::size_t n) {
  if (v.size() < n + 1) return false;
  for (std::size_t i = 1; i <= n; ++i) {
    if (!(v[i] < v[i - 1])) return false;
  }
  return true;
}

fs::path work_root() { return fs::temp_directory_path() / "semfed_acceptance"; }

Outcome privacy_monotonicity() {
  const double sigmas[] = {0.005, 0.05, 0.1, 0.5};
  constexpr std::size_t kSeeds = 5;
  std::vector<double> mean(4, 0);
  for (std::size_t s = 0; s < kSeeds; ++s) {
    Rng rng(100 + s);
    const EmbeddingMatrix raw = synth_embeddings(200, 768, Real(1), rng, 20, Real(0.3));
    for (std::size_t i = 0; i < 4; ++i) {
      const EmbeddingMatrix enc = encrypt(raw, PerturbationConfig{Real(sigmas[i]), 7 + s});
      mean[i] += audit_similarity(raw, enc) / kSeeds;
    }
  }
  bool ok = true;
  for (std::size_t i = 1; i < 4; ++i) ok &= mean[i] < mean[i - 1];
  return {ok, fmt("audit %.4f > %.4f > %.4f > %.4f", mean[0], mean[1], mean[2], mean[3])};
}

Outcome self_replacement() {
  Rng rng(2024);
  std::size_t self = 0, total = 0;
  for (std::size_t c = 0; c < 1000; ++c) {
    const std::size_t n = 2 + rng.uniform_index(49);
    const std::size_t dim = 1 + rng.uniform_index(32);
    EmbeddingMatrix raw{random_matrix(n, dim, rng), Stage::kRaw, "a"};
    // Every fourth catalog repeats one row everywhere.
    if (c % 4 == 0) {
      for (std::size_t i = 1; i < n; ++i) {
        std::copy(raw.data.row(0).begin(), raw.data.row(0).end(), raw.data.row(i).begin());
      }
    }
    const Real sigma = c % 3 == 0 ? Real(0) : Real(rng.uniform_real(0, 0.5));
    const EncryptionTrace t = encrypt_with_trace(raw, PerturbationConfig{sigma, c});
    for (std::size_t j = 0; j < n; ++j) {
      ++total;
      self += t.encrypted.replacement_map[j] == j;
    }
  }
  return {self == 0, fmt("%zu of %zu rows mapped to themselves", self, total)};
}

double brute_force_two_means(const Matrix& points) {
  const std::size_t n = points.rows();
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t mask = 1; mask + 1 < (std::size_t{1} << n); ++mask) {
    std::vector<std::size_t> labels(n);
    std::vector<double> sums(2 * points.cols(), 0), count(2, 0);
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = (mask >> i) & 1;
      count[labels[i]] += 1;
      for (std::size_t j = 0; j < points.cols(); ++j) sums[labels[i] * points.cols() + j] += points(i, j);
    }
    double inertia = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < points.cols(); ++j) {
        const double d = points(i, j) - sums[labels[i] * points.cols() + j] / count[labels[i]];
        inertia += d * d;
      }
    }
    best = std::min(best, inertia);
  }
  return best;
}

Outcome clustering_oracle() {
  std::size_t fixed = 0, optimal = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    Rng rng(5000 + s);
    const std::size_t n = 3 + rng.uniform_index(8);
    const Matrix pts = random_matrix(n, 1 + rng.uniform_index(3), rng);
    const CentroidTable t = cluster(pts, 2, 300, 1e-4, rng);
    bool fp = true;
    for (std::size_t i = 0; i < n; ++i) fp &= nearest_centroid(pts.row(i), t.centroids) == t.assignments[i];
    fixed += fp;
    optimal += t.inertia <= brute_force_two_means(pts) + 1e-6;
  }
  return {fixed == 100 && optimal >= 90,
          fmt("fixed point %zu/100, optimal inertia %zu/100", fixed, optimal)};
}

Outcome synchronization() {
  Rng rng(77);
  std::vector<ClientUpload> uploads;
  for (const char* d : {"a", "b"}) {
    const EmbeddingMatrix raw = synth_embeddings(30, 16, Real(1), rng, 4, Real(0.2));
    uploads.push_back(ClientUpload{d, encrypt(raw, PerturbationConfig{Real(0.1), rng.next_u64()})});
  }
  ServerConfig cfg;
  cfg.k = 6;
  const RoundResult r = run_round(uploads, cfg);
  std::size_t off = 0, rows = 0;
  for (const EmbeddingMatrix& m : r.synced.per_domain) {
    for (std::size_t i = 0; i < m.rows(); ++i) {
      ++rows;
      bool hit = false;
      for (std::size_t c = 0; c < r.table.centroids.rows() && !hit; ++c) {
        hit = std::equal(m.data.row(i).begin(), m.data.row(i).end(), r.table.centroids.row(c).begin());
      }
      off += !hit;
    }
  }
  cfg.k = 60;
  const RoundResult full = run_round(uploads, cfg);
  bool identity = full.synced.per_domain.size() == 2;
  for (std::size_t d = 0; d < 2 && identity; ++d) {
    identity = bit_equal(full.synced.per_domain[d].data, uploads[d].embeddings.data);
  }
  return {off == 0 && identity,
          fmt("%zu/%zu rows off-centroid, k = t identity %s", off, rows, identity ? "holds" : "broken")};
}

Outcome privacy_boundary() {
  const fs::path dir = work_root() / "boundary";
  fs::remove_all(dir);
  FixtureConfig fx;
  fx.domains = {"a"};
  fx.items_per_domain = 40;
  fx.users_per_domain = 60;
  const Fixture f = make_fixture(fx);
  // Same catalog and text, users split into two disjoint halves.
  std::vector<InteractionLog> first, second;
  for (std::size_t u = 0; u < f.domains[0].logs.size(); ++u) {
    (u % 2 == 0 ? first : second).push_back(f.domains[0].logs[u]);
  }
  std::vector<std::vector<std::uint8_t>> uploads;
  std::size_t shared_users = 0;
  std::set<std::string> seen;
  for (const auto* logs : {&first, &second}) {
    const fs::path d = dir / std::to_string(uploads.size());
    fs::create_directories(d);
    write_items((d / "items.jsonl").string(), f.domains[0].catalog);
    write_interactions((d / "interactions.jsonl").string(), *logs, f.domains[0].catalog);
    write_embeddings((d / "text.sfub").string(), f.domains[0].text);

    RunConfig cfg;
    cfg.domains = {DomainData{"a", (d / "items.jsonl").string(), (d / "interactions.jsonl").string(),
                              (d / "text.sfub").string()}};
    const DomainDataset ds = load_domain(cfg, cfg.domains[0]);
    for (const UserSplit& s : ds.splits) shared_users += !seen.insert(s.user_id).second;
    const EmbeddingMatrix raw = read_embeddings(cfg.domains[0].text);
    const EmbeddingMatrix enc =
        encrypt(raw, PerturbationConfig{Real(cfg.sigma), stage_seed(cfg, "encrypt", 0)});
    uploads.push_back(serialize_upload(ClientUpload{"a", enc}));
  }
  fs::remove_all(dir);
  const bool same = uploads[0] == uploads[1];
  return {same && shared_users == 0,
          fmt("%zu upload bytes, %s, %zu shared users", uploads[0].size(),
              same ? "identical" : "different", shared_users)};
}

Outcome gradient_suite() {
  std::string worst;
  const double err = acceptance_gradient_suite(worst);
  return {err < 1e-4, fmt("worst relative error %.2e (%s)", err, worst.c_str())};
}

Outcome loss_identities() {
  Rng rng(31);
  FkdModel model(6, 6, 6, 5);
  Tape tape;
  Var id = tape.constant(random_matrix(4, 6, rng));
  Var text = tape.constant(random_matrix(4, 6, rng));
  Var d = mediator(tape, model, id, text);
  const MediatorPair same[] = {{d, d}, {d, d}};
  const double kd = kd_loss(same).value()[0];

  Var zero = tape.constant(Matrix(1, 6));
  const double rec = rec_loss(zero, tape.constant(random_matrix(1, 6, rng)),
                              tape.constant(random_matrix(1, 6, rng))).value()[0];

  FkdModel ident(6, 6, 6, 5);
  ident.set_identity();
  ReconLosses r = recon_losses(tape, ident, id, text);
  const double recon = std::max(std::abs(r.text.value()[0]), std::abs(r.id.value()[0]));

  std::vector<FkdExample> batch;
  for (std::size_t m : {3, 5}) {
    batch.push_back(FkdExample{random_matrix(m, 6, rng), random_matrix(m, 6, rng),
                               random_matrix(1, 6, rng), random_matrix(m, 6, rng),
                               random_matrix(m, 6, rng)});
  }
  FkdConfig cfg;
  FkdLoss l = total_loss(tape, model, batch, cfg);
  const double weighted = double(l.kd.value()[0]) + double(cfg.alpha) * l.text_recon.value()[0] +
                          double(cfg.beta) * l.id_recon.value()[0] + double(l.rec.value()[0]);
  const double total_gap = std::abs(double(l.total.value()[0]) - weighted);

  const double rec_gap = std::abs(rec - 2 * std::log(2.0));
  return {kd == 0 && rec_gap <= 1e-5 && recon == 0 && total_gap <= 1e-6,
          fmt("kd %.1e, |rec - 2ln2| %.1e, recon %.1e, |total - sum| %.1e", kd, rec_gap, recon,
              total_gap)};
}

// The fixture used for the end-to-end criteria and the run settings that go
// with it.
RunConfig fixture_run(const fs::path& dir) {
  FixtureConfig fx;
  fx.users_per_domain = 1000;
  if (!fs::exists(dir / "a" / "text.sfub") || !fs::exists(dir / "b" / "text.sfub")) {
    write_fixture(make_fixture(fx), dir.string());
  }
  RunConfig cfg;
  for (DomainData& d : cfg.domains) {
    d.items = (dir / d.name / "items.jsonl").string();
    d.interactions = (dir / d.name / "interactions.jsonl").string();
    d.text = (dir / d.name / "text.sfub").string();
  }
  const char* settings[][2] = {
      {"stage2.domains", "a"}, {"k", "20"},           {"seqrec.lr", "1e-3"},
      {"seqrec.epochs", "5"},  {"fkd.lr", "1e-3"},    {"fkd.epochs", "5"},
      {"stage2.lr", "1e-3"},   {"stage2.epochs", "3"}, {"stage2.prefixes", "3"}};
  for (const auto& kv : settings) set_config_value(cfg, kv[0], kv[1]);
  return cfg;
}

double test_hit(const RunReport& r) { return r.body["metrics"]["a"]["test"]["hit_at_1"].get<double>(); }

RunReport fresh_run(const RunConfig& cfg, const fs::path& out) {
  fs::remove_all(out);
  return run_pipeline(cfg, RunOptions{out.string(), false});
}

Outcome frozen_boundary() {
  const fs::path dir = work_root() / "frozen";
  fs::remove_all(dir);
  FixtureConfig fx;
  fx.items_per_domain = 30;
  fx.users_per_domain = 60;
  fx.text_dim = 16;
  write_fixture(make_fixture(fx), (dir / "data").string());
  RunConfig cfg;
  for (DomainData& d : cfg.domains) {
    d.items = (dir / "data" / d.name / "items.jsonl").string();
    d.interactions = (dir / "data" / d.name / "interactions.jsonl").string();
    d.text = (dir / "data" / d.name / "text.sfub").string();
  }
  const char* settings[][2] = {{"k", "6"},           {"seqrec.d", "16"}, {"seqrec.epochs", "2"},
                               {"fkd.fused_dim", "16"}, {"fkd.epochs", "2"}, {"lm.hidden", "32"},
                               {"stage2.epochs", "2"}, {"stage2.freeze_backbone", "true"}};
  for (const auto& kv : settings) set_config_value(cfg, kv[0], kv[1]);
  const RunReport r = fresh_run(cfg, dir / "run");
  const std::string before = slurp(dir / "run" / "a" / "model.seqrec");
  fs::remove_all(dir);
  bool ok = !before.empty();
  std::size_t checked = 0;
  for (const auto& [d, v] : r.body["frozen"].items()) {
    ok &= v["seqrec_unchanged"].get<bool>();
    ok &= r.body["stage2"][d]["lm_unchanged"].get<bool>();
    ++checked;
  }
  ok &= checked == 2;
  return {ok, fmt("seqrec and language model unchanged in %zu domains", checked)};
}

struct EndToEnd {
  RunReport first;
  double seconds = 0;
};

Outcome learning_signal(const EndToEnd& run, std::size_t items) {
  const json& b = run.first.body;
  const double hit = test_hit(run.first);
  const double floor = 5.0 / double(items);
  const auto seq = b["seqrec"]["a"]["losses"].get<std::vector<double>>();
  std::vector<double> fkd;
  for (const auto& e : b["fkd"]["a"]["curve"]) fkd.push_back(e["total"].get<double>());
  const auto s2 = b["stage2"]["a"]["train_loss"].get<std::vector<double>>();
  const bool mono = strictly_decreasing(seq, 3) && strictly_decreasing(fkd, 3) &&
                    strictly_decreasing(s2, 3);
  return {hit >= floor && mono && run.seconds < 600,
          fmt("Hit@1 %.3f (floor %.3f), losses %s over 3 epochs, %.0f s", hit, floor,
              mono ? "decrease" : "do not decrease", run.seconds)};
}

Outcome ablation_ordering(const RunConfig& base, const fs::path& dir) {
  const auto start = std::chrono::steady_clock::now();
  std::size_t ordered = 0;
  std::string rows;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    double hit[4];
    const Ablation modes[] = {Ablation::kFull, Ablation::kKdLocal, Ablation::kIdOnly,
                              Ablation::kTextOnly};
    for (std::size_t m = 0; m < 4; ++m) {
      RunConfig cfg = base;
      cfg.seed = seed;
      cfg.ablation = modes[m];
      hit[m] = test_hit(fresh_run(cfg, dir / (std::to_string(seed) + ablation_name(modes[m]))));
    }
    const bool ok = hit[0] >= hit[1] && hit[1] >= std::max(hit[2], hit[3]);
    ordered += ok;
    rows += fmt(" [%.3f %.3f %.3f %.3f]", hit[0], hit[1], hit[2], hit[3]);
  }
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {ordered >= 4 && seconds < 1800,
          fmt("ordered in %zu/5 seeds, %.0f s; full kd_local id_only text_only:", ordered, seconds) +
              rows};
}

Outcome determinism(const EndToEnd& run, const RunConfig& cfg, const fs::path& dir) {
  const RunReport again = fresh_run(cfg, dir / "repeat");
  const bool same = slurp(dir / "first" / "report.json") == slurp(dir / "repeat" / "report.json") &&
                    run.first.body.dump() == again.body.dump();
  return {same, same ? "report.json byte-identical" : "reports differ"};
}

}  // namespace

int main() {
  int failed = 0;
  auto report = [&](int n, const char* name, const std::function<Outcome()>& fn) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s %2d %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", n, name, o.detail.c_str(), s);
    std::fflush(stdout);
    failed += !o.pass;
    return o;
  };

  auto timed = [](double limit, const std::function<Outcome()>& fn) {
    return [=] {
      const auto start = std::chrono::steady_clock::now();
      Outcome o = fn();
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      if (s >= limit) {
        o.pass = false;
        o.detail += fmt(" (over the %.0f s budget)", limit);
      }
      return o;
    };
  };

  report(1, "privacy monotonicity", timed(10, privacy_monotonicity));
  report(2, "no self-replacement", timed(5, self_replacement));
  report(3, "clustering oracle", timed(30, clustering_oracle));
  report(4, "synchronization", timed(5, synchronization));
  report(5, "privacy boundary", privacy_boundary);
  report(6, "gradient suite", timed(60, gradient_suite));
  report(7, "loss identities", loss_identities);
  report(8, "frozen boundary", frozen_boundary);

  const fs::path e2e = work_root() / "e2e";
  const RunConfig cfg = fixture_run(e2e / "data");
  EndToEnd run;
  std::string run_error;
  try {
    const auto start = std::chrono::steady_clock::now();
    run.first = fresh_run(cfg, e2e / "first");
    run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  } catch (const std::exception& e) {
    run_error = e.what();
  }
  auto needs_run = [&](std::function<Outcome()> fn) {
    return [=, &run_error] {
      if (!run_error.empty()) return Outcome{false, "pipeline error: " + run_error};
      return fn();
    };
  };
  const std::size_t items = load_items(cfg.domains[0].items, "a").size();
  report(9, "end-to-end learning signal", needs_run([&] { return learning_signal(run, items); }));
  report(10, "ablation ordering", [&] { return ablation_ordering(cfg, e2e / "ablation"); });
  report(11, "determinism", needs_run([&] { return determinism(run, cfg, e2e); }));
  fs::remove_all(work_root());

  std::printf("%d of 11 criteria failed\n", failed);
  return failed == 0 ? 0 : 1;
}
