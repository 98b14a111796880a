#include "semfed/fkd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "semfed/adam.hpp"
#include "semfed/error.hpp"
#include "semfed/rng.hpp"

namespace semfed {

void FkdConfig::validate() const {
  auto bad = [](const std::string& field, const std::string& why) {
    fail(ErrorCode::kConfig, "fkd." + field + ": " + why);
  };
  if (!(alpha >= 0) || !std::isfinite(alpha)) bad("alpha", "must be >= 0");
  if (!(beta >= 0) || !std::isfinite(beta)) bad("beta", "must be >= 0");
  if (fused_dim == 0) bad("fused_dim", "must be positive");
  if (batch == 0) bad("batch", "must be positive");
  if (!(lr > 0) || !std::isfinite(lr)) bad("lr", "must be positive");
}

FkdModel::FkdModel(std::size_t id_dim, std::size_t text_dim, std::size_t fused, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "fkd-init"));
  encoder_id = Mlp2(id_dim, fused, fused, Activation::kGelu, rng);
  encoder_text = Mlp2(text_dim, fused, fused, Activation::kGelu, rng);
  decoder_id = Mlp2(fused, fused, id_dim, Activation::kGelu, rng);
  decoder_text = Mlp2(fused, fused, text_dim, Activation::kGelu, rng);
}

void FkdModel::set_identity() {
  encoder_id.set_identity();
  encoder_text.set_identity();
  decoder_id.set_identity();
  decoder_text.set_identity();
}

ParamList FkdModel::params() {
  ParamList out;
  encoder_id.collect(out);
  encoder_text.collect(out);
  decoder_id.collect(out);
  decoder_text.collect(out);
  return out;
}

Checkpoint FkdModel::to_checkpoint() const {
  Checkpoint ck;
  ck.metadata = {{"kind", "fkd"},
                 {"id_dim", id_dim()},
                 {"text_dim", text_dim()},
                 {"fused_dim", fused_dim()},
                 {"activations",
                  {static_cast<int>(encoder_id.activation), static_cast<int>(encoder_text.activation),
                   static_cast<int>(decoder_id.activation),
                   static_cast<int>(decoder_text.activation)}}};
  const ParamList ps = const_cast<FkdModel&>(*this).params();
  for (std::size_t i = 0; i < ps.size(); ++i) ck.add("p" + std::to_string(i), ps[i]->value);
  return ck;
}

FkdModel FkdModel::from_checkpoint(const Checkpoint& ck) {
  const auto& md = ck.metadata;
  if (md.value("kind", "") != "fkd") fail(ErrorCode::kFormat, "not an fkd checkpoint");
  FkdModel model;
  try {
    model = FkdModel(md.at("id_dim").get<std::size_t>(), md.at("text_dim").get<std::size_t>(),
                     md.at("fused_dim").get<std::size_t>(), 0);
    const auto acts = md.at("activations").get<std::vector<int>>();
    Mlp2* parts[] = {&model.encoder_id, &model.encoder_text, &model.decoder_id,
                     &model.decoder_text};
    for (std::size_t i = 0; i < 4 && i < acts.size(); ++i) {
      parts[i]->activation = static_cast<Activation>(acts[i]);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, std::string("fkd checkpoint metadata: ") + e.what());
  }
  const ParamList ps = model.params();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const Matrix& m = ck.get("p" + std::to_string(i));
    if (!m.same_shape(ps[i]->value)) fail(ErrorCode::kFormat, "fkd tensor shape mismatch");
    ps[i]->value = m;
  }
  return model;
}

SequenceReps sequence_reps(std::span<const std::size_t> sequence, SeqRecModel& seqrec,
                           const EmbeddingMatrix& text) {
  SequenceReps reps;
  reps.id = encode_sequence(seqrec, sequence).per_position;
  reps.text = Matrix(sequence.size(), text.dim());
  for (std::size_t j = 0; j < sequence.size(); ++j) {
    if (sequence[j] >= text.rows()) {
      fail(ErrorCode::kState, "no text embedding row for item " + std::to_string(sequence[j]));
    }
    auto src = text.data.row(sequence[j]);
    std::copy(src.begin(), src.end(), reps.text.row(j).begin());
  }
  return reps;
}

std::vector<std::size_t> counterfactual_sample(std::span<const std::size_t> history,
                                               std::size_t catalog_size, std::size_t m, Rng& rng) {
  if (catalog_size == 0) fail(ErrorCode::kSampling, "empty catalog");
  std::vector<bool> seen(catalog_size, false);
  for (std::size_t i : history) {
    if (i < catalog_size) seen[i] = true;
  }
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < catalog_size; ++i) {
    if (!seen[i]) pool.push_back(i);
  }
  if (pool.empty()) fail(ErrorCode::kSampling, "user interacted with the entire catalog");
  std::vector<std::size_t> out;
  out.reserve(m);
  if (pool.size() >= m) {
    for (std::size_t j = 0; j < m; ++j) {
      const std::size_t pick = j + rng.uniform_index(pool.size() - j);
      std::swap(pool[j], pool[pick]);
      out.push_back(pool[j]);
    }
  } else {
    for (std::size_t j = 0; j < m; ++j) out.push_back(pool[rng.uniform_index(pool.size())]);
  }
  return out;
}

Var mediator(Tape& tape, FkdModel& model, Var id, Var text) {
  if (id.rows() == 0 || text.rows() == 0) fail(ErrorCode::kInput, "mediator of an empty sequence");
  return sub(mean_rows(model.encoder_id.forward(tape, id)),
             mean_rows(model.encoder_text.forward(tape, text)));
}

Var kd_loss(std::span<const MediatorPair> pairs) {
  if (pairs.empty()) fail(ErrorCode::kInput, "kd loss over an empty batch");
  Var total = squared_norm(sub(pairs[0].factual, pairs[0].counterfactual));
  for (std::size_t i = 1; i < pairs.size(); ++i) {
    total = add(total, squared_norm(sub(pairs[i].factual, pairs[i].counterfactual)));
  }
  return scale(total, Real(1) / Real(pairs.size()));
}

ReconLosses recon_losses(Tape& tape, FkdModel& model, Var id, Var text) {
  Var text_back = model.decoder_text.forward(tape, model.encoder_text.forward(tape, text));
  Var id_back = model.decoder_id.forward(tape, model.encoder_id.forward(tape, id));
  return ReconLosses{mse(text, text_back), mse(id, id_back)};
}

Var rec_loss(Var user_minus_last, Var positive, Var negative) {
  constexpr Real kLimit = Real(30);
  Var pos = clamp(sum(mul(user_minus_last, positive)), -kLimit, kLimit);
  Var neg = clamp(sum(mul(user_minus_last, negative)), -kLimit, kLimit);
  // log(1 - s(x)) = log s(-x)
  return scale(add(log_sigmoid(pos), log_sigmoid(scale(neg, Real(-1)))), Real(-1));
}

Var decode_id(Tape& tape, FkdModel& model, Var id) {
  return model.decoder_id.forward(tape, model.encoder_id.forward(tape, id));
}

FkdLoss total_loss(Tape& tape, FkdModel& model, std::span<const FkdExample> batch,
                   const FkdConfig& cfg) {
  if (batch.empty()) fail(ErrorCode::kInput, "empty fkd batch");
  std::vector<MediatorPair> pairs;
  Var text_recon{}, id_recon{}, rec{};
  for (std::size_t u = 0; u < batch.size(); ++u) {
    const FkdExample& ex = batch[u];
    Var id = tape.constant(ex.id);
    Var text = tape.constant(ex.text);
    Var cf_id = tape.constant(ex.cf_id);
    Var cf_text = tape.constant(ex.cf_text);
    pairs.push_back({mediator(tape, model, id, text), mediator(tape, model, cf_id, cf_text)});

    ReconLosses r = recon_losses(tape, model, id, text);
    Var positive = decode_id(tape, model, slice_rows(id, id.rows() - 1, 1));
    Var negative = decode_id(tape, model, slice_rows(cf_id, cf_id.rows() - 1, 1));
    Var user_rec = rec_loss(tape.constant(ex.user_minus_last), positive, negative);
    if (u == 0) {
      text_recon = r.text;
      id_recon = r.id;
      rec = user_rec;
    } else {
      text_recon = add(text_recon, r.text);
      id_recon = add(id_recon, r.id);
      rec = add(rec, user_rec);
    }
  }
  const Real inv = Real(1) / Real(batch.size());
  FkdLoss loss;
  loss.kd = kd_loss(pairs);
  loss.text_recon = scale(text_recon, inv);
  loss.id_recon = scale(id_recon, inv);
  loss.rec = rec;
  loss.total = add(add(add(loss.kd, scale(loss.text_recon, cfg.alpha)),
                       scale(loss.id_recon, cfg.beta)),
                   loss.rec);
  return loss;
}

Matrix enhanced_item_table(FkdModel& model, SeqRecModel& seqrec, const EmbeddingMatrix& text) {
  const std::size_t t = seqrec.num_items();
  Matrix ctx(t, seqrec.config().d);
  for (std::size_t i = 0; i < t; ++i) {
    const std::size_t one[] = {i};
    const Matrix c = encode_sequence(seqrec, one).per_position;
    std::copy(c.data().begin(), c.data().end(), ctx.row(i).begin());
  }
  Tape tape;
  const Var parts[] = {model.encoder_id.forward(tape, tape.constant(std::move(ctx))),
                       model.encoder_text.forward(tape, tape.constant(text.data))};
  return concat_cols(parts).value();
}

namespace {

struct UserData {
  std::vector<std::size_t> sequence;
  SequenceReps reps;
  Matrix user_minus_last;
};

void fill_counterfactuals(std::vector<FkdExample>& examples, const std::vector<UserData>& users,
                          SeqRecModel& seqrec, const EmbeddingMatrix& text, std::uint64_t seed,
                          std::size_t epoch) {
  Rng rng(derive_seed(seed, "fkd-counterfactual", epoch));
  for (std::size_t u = 0; u < users.size(); ++u) {
    const auto& seq = users[u].sequence;
    const auto cf = counterfactual_sample(seq, seqrec.num_items(), seq.size(), rng);
    SequenceReps reps = sequence_reps(cf, seqrec, text);
    examples[u].cf_id = std::move(reps.id);
    examples[u].cf_text = std::move(reps.text);
  }
}

FkdEpoch batch_values(const FkdLoss& l) {
  FkdEpoch e;
  e.kd = l.kd.value()[0];
  e.text_recon = l.text_recon.value()[0];
  e.id_recon = l.id_recon.value()[0];
  e.rec = l.rec.value()[0];
  e.total = l.total.value()[0];
  return e;
}

FkdEpoch mean_of(std::size_t epoch, const std::vector<FkdEpoch>& parts) {
  FkdEpoch e;
  e.epoch = epoch;
  for (const FkdEpoch& p : parts) {
    e.kd += p.kd;
    e.text_recon += p.text_recon;
    e.id_recon += p.id_recon;
    e.rec += p.rec;
    e.total += p.total;
  }
  const double n = double(parts.size());
  e.kd /= n;
  e.text_recon /= n;
  e.id_recon /= n;
  e.rec /= n;
  e.total /= n;
  return e;
}

}  // namespace

FkdResult train_fkd(const std::vector<std::vector<std::size_t>>& sequences, SeqRecModel& seqrec,
                    const EmbeddingMatrix& text, const FkdConfig& cfg) {
  cfg.validate();
  if (!seqrec.frozen()) fail(ErrorCode::kState, "seqrec must be frozen before distillation");
  if (text.rows() < seqrec.num_items()) {
    fail(ErrorCode::kState, "text embeddings cover " + std::to_string(text.rows()) + " of " +
                                std::to_string(seqrec.num_items()) + " items");
  }
  FkdResult result;
  result.model = FkdModel(seqrec.config().d, text.dim(), cfg.fused_dim, cfg.seed);
  FkdModel& model = result.model;

  std::vector<UserData> users;
  for (const auto& seq : sequences) {
    if (seq.size() < 2) continue;
    UserData u;
    u.sequence = seq;
    u.reps = sequence_reps(seq, seqrec, text);
    u.user_minus_last = Matrix::row_vector(u.reps.id.row(seq.size() - 2));
    users.push_back(std::move(u));
  }
  std::vector<FkdExample> examples(users.size());
  for (std::size_t u = 0; u < users.size(); ++u) {
    examples[u].id = users[u].reps.id;
    examples[u].text = users[u].reps.text;
    examples[u].user_minus_last = users[u].user_minus_last;
  }

  auto run_epoch = [&](std::size_t epoch, std::vector<std::size_t>& order, Adam* adam) {
    fill_counterfactuals(examples, users, seqrec, text, cfg.negative_seed, epoch);
    std::vector<FkdEpoch> parts;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch) {
      std::vector<FkdExample> batch;
      for (std::size_t i = b; i < std::min(order.size(), b + cfg.batch); ++i) {
        batch.push_back(examples[order[i]]);
      }
      Tape tape;
      if (adam != nullptr) adam->zero_grad();
      FkdLoss loss = total_loss(tape, model, batch, cfg);
      if (!std::isfinite(loss.total.value()[0])) {
        fail(ErrorCode::kTraining, "fkd loss diverged in epoch " + std::to_string(epoch));
      }
      parts.push_back(batch_values(loss));
      if (adam != nullptr) {
        tape.backward(loss.total);
        adam->step();
      }
    }
    result.curve.push_back(mean_of(epoch, parts));
  };

  std::vector<std::size_t> order(users.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (!users.empty()) {
    ParamList params = model.params();
    Adam adam(params, AdamConfig{cfg.lr});
    Rng shuffle_rng(derive_seed(cfg.seed, "fkd-shuffle"));
    run_epoch(0, order, nullptr);
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), shuffle_rng.engine());
      run_epoch(epoch, order, &adam);
    }
  }
  result.enhanced = enhanced_item_table(model, seqrec, text);
  return result;
}

std::string loss_curve_csv(const std::vector<FkdEpoch>& curve) {
  std::ostringstream os;
  os.precision(9);
  os << "epoch,kd,t_re,i_re,rec,total\n";
  for (const FkdEpoch& e : curve) {
    os << e.epoch << ',' << e.kd << ',' << e.text_recon << ',' << e.id_recon << ',' << e.rec << ','
       << e.total << '\n';
  }
  return os.str();
}

void save_fkd(const std::string& path, const FkdResult& result) {
  Checkpoint ck = result.model.to_checkpoint();
  ck.add("enhanced", result.enhanced);
  nlohmann::json curve = nlohmann::json::array();
  for (const FkdEpoch& e : result.curve) {
    curve.push_back({e.epoch, e.kd, e.text_recon, e.id_recon, e.rec, e.total});
  }
  ck.metadata["curve"] = curve;
  ck.save(path);
}

FkdResult load_fkd(const std::string& path) {
  const Checkpoint ck = Checkpoint::load(path);
  FkdResult result;
  result.model = FkdModel::from_checkpoint(ck);
  result.enhanced = ck.get("enhanced");
  try {
    for (const auto& row : ck.metadata.value("curve", nlohmann::json::array())) {
      result.curve.push_back(FkdEpoch{row.at(0).get<std::size_t>(), row.at(1).get<double>(),
                                      row.at(2).get<double>(), row.at(3).get<double>(),
                                      row.at(4).get<double>(), row.at(5).get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, std::string("fkd loss curve: ") + e.what());
  }
  return result;
}

}  // namespace semfed
