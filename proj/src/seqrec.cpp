#include "semfed/seqrec.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "semfed/adam.hpp"
#include "semfed/error.hpp"
#include "semfed/rng.hpp"

namespace semfed {

void SeqRecConfig::validate() const {
  auto bad = [](const std::string& field, const std::string& why) {
    fail(ErrorCode::kConfig, "seqrec." + field + ": " + why);
  };
  if (d == 0) bad("d", "must be positive");
  if (num_blocks == 0) bad("num_blocks", "must be positive");
  if (num_heads == 0 || d % num_heads != 0) bad("num_heads", "must divide d");
  if (max_len < 2) bad("max_len", "must be at least 2");
  if (!(dropout >= 0 && dropout < 1)) bad("dropout", "must lie in [0, 1)");
  if (!(lr > 0) || !std::isfinite(lr)) bad("lr", "must be positive");
  if (batch == 0) bad("batch", "must be positive");
}

SeqRecModel::SeqRecModel(std::size_t num_items, const SeqRecConfig& cfg)
    : num_items_(num_items), cfg_(cfg) {
  cfg.validate();
  if (num_items == 0) fail(ErrorCode::kInput, "seqrec needs a nonempty catalog");
  Rng rng(derive_seed(cfg.seed, "seqrec-init"));
  const Real scale = Real(1) / std::sqrt(Real(cfg.d));
  items_ = Embedding(num_items + 1, cfg.d, scale, rng);
  for (Real& v : items_.table.value.row(0)) v = Real(0);
  positions_ = Embedding(cfg.max_len, cfg.d, scale, rng);
  for (std::size_t b = 0; b < cfg.num_blocks; ++b) {
    blocks_.emplace_back(cfg.d, cfg.num_heads, cfg.d, Activation::kGelu, rng);
  }
  final_norm_ = LayerNorm(cfg.d);
}

void SeqRecModel::freeze() {
  set_trainable(params(), false);
  frozen_ = true;
}

ParamList SeqRecModel::params() {
  ParamList out;
  items_.collect(out);
  positions_.collect(out);
  for (auto& b : blocks_) b.collect(out);
  final_norm_.collect(out);
  return out;
}

void SeqRecModel::check_sequence(std::span<const std::size_t> sequence) const {
  if (sequence.empty()) fail(ErrorCode::kInput, "empty sequence");
  if (sequence.size() > cfg_.max_len) {
    fail(ErrorCode::kInput, "sequence of length " + std::to_string(sequence.size()) +
                                " exceeds max_len " + std::to_string(cfg_.max_len));
  }
  for (std::size_t item : sequence) {
    if (item >= num_items_) {
      fail(ErrorCode::kInput, "unknown item index " + std::to_string(item));
    }
  }
}

Var SeqRecModel::forward(Tape& tape, std::span<const std::size_t> sequence,
                         const ForwardMode& mode) {
  check_sequence(sequence);
  const std::size_t m = sequence.size();
  std::vector<std::size_t> rows(m);
  std::vector<std::size_t> pos(m);
  for (std::size_t j = 0; j < m; ++j) {
    rows[j] = sequence[j] + 1;
    pos[j] = j;
  }
  Var x = scale(items_.forward(tape, rows), std::sqrt(Real(cfg_.d)));
  x = add(x, positions_.forward(tape, pos));
  x = apply_dropout(x, mode);
  for (auto& b : blocks_) x = b.forward(tape, x, mode);
  return final_norm_.forward(tape, x);
}

Var SeqRecModel::logits(Tape& tape, Var hidden) {
  Var table = slice_rows(tape.param(items_.table), 1, num_items_);
  return matmul_bt(hidden, table);
}

Matrix SeqRecModel::item_embedding(std::size_t item) const {
  if (item >= num_items_) fail(ErrorCode::kInput, "unknown item index " + std::to_string(item));
  return Matrix::row_vector(items_.table.value.row(item + 1));
}

Checkpoint SeqRecModel::to_checkpoint() const {
  Checkpoint ck;
  ck.metadata = {{"kind", "seqrec"},
                 {"num_items", num_items_},
                 {"d", cfg_.d},
                 {"num_blocks", cfg_.num_blocks},
                 {"num_heads", cfg_.num_heads},
                 {"max_len", cfg_.max_len},
                 {"dropout", cfg_.dropout},
                 {"lr", cfg_.lr},
                 {"epochs", cfg_.epochs},
                 {"batch", cfg_.batch},
                 {"seed", cfg_.seed},
                 {"frozen", frozen_}};
  auto& self = const_cast<SeqRecModel&>(*this);
  const ParamList ps = self.params();
  for (std::size_t i = 0; i < ps.size(); ++i) ck.add("p" + std::to_string(i), ps[i]->value);
  return ck;
}

SeqRecModel SeqRecModel::from_checkpoint(const Checkpoint& ck) {
  const auto& md = ck.metadata;
  if (md.value("kind", "") != "seqrec") fail(ErrorCode::kFormat, "not a seqrec checkpoint");
  SeqRecConfig cfg;
  try {
    cfg.d = md.at("d").get<std::size_t>();
    cfg.num_blocks = md.at("num_blocks").get<std::size_t>();
    cfg.num_heads = md.at("num_heads").get<std::size_t>();
    cfg.max_len = md.at("max_len").get<std::size_t>();
    cfg.dropout = md.at("dropout").get<Real>();
    cfg.lr = md.at("lr").get<Real>();
    cfg.epochs = md.at("epochs").get<std::size_t>();
    cfg.batch = md.at("batch").get<std::size_t>();
    cfg.seed = md.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, std::string("seqrec checkpoint metadata: ") + e.what());
  }
  SeqRecModel model(md.at("num_items").get<std::size_t>(), cfg);
  const ParamList ps = model.params();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const Matrix& m = ck.get("p" + std::to_string(i));
    if (!m.same_shape(ps[i]->value)) fail(ErrorCode::kFormat, "seqrec tensor shape mismatch");
    ps[i]->value = m;
  }
  if (md.value("frozen", false)) model.freeze();
  return model;
}

SequenceEncoding encode_sequence(SeqRecModel& model, std::span<const std::size_t> sequence) {
  Tape tape;
  Var h = model.forward(tape, sequence, ForwardMode{});
  SequenceEncoding out;
  out.per_position = h.value();
  out.user = Matrix::row_vector(out.per_position.row(out.per_position.rows() - 1));
  return out;
}

Matrix encode_user_minus_last(SeqRecModel& model, std::span<const std::size_t> sequence) {
  if (sequence.size() < 2) {
    fail(ErrorCode::kInput, "user representation without the last item needs length >= 2");
  }
  return encode_sequence(model, sequence.first(sequence.size() - 1)).user;
}

Var pretrain_loss(Tape& tape, SeqRecModel& model,
                  const std::vector<std::vector<std::size_t>>& sequences, const ForwardMode& mode) {
  std::vector<Var> parts;
  std::size_t count = 0;
  for (const auto& seq : sequences) {
    if (seq.size() < 2) continue;
    std::span<const std::size_t> input(seq.data(), seq.size() - 1);
    std::vector<std::int64_t> targets(seq.begin() + 1, seq.end());
    Var logits = model.logits(tape, model.forward(tape, input, mode));
    parts.push_back(cross_entropy(logits, targets));
    count += targets.size();
  }
  if (count == 0) fail(ErrorCode::kInput, "no sequence with a next-item target");
  Var total = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) total = add(total, parts[i]);
  return scale(total, Real(1) / Real(count));
}

namespace {

std::vector<std::vector<std::size_t>> batch_of(const std::vector<std::vector<std::size_t>>& seqs,
                                               const std::vector<std::size_t>& order,
                                               std::size_t begin, std::size_t size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = begin; i < std::min(order.size(), begin + size); ++i) {
    out.push_back(seqs[order[i]]);
  }
  return out;
}

std::size_t targets_in(const std::vector<std::vector<std::size_t>>& batch) {
  std::size_t n = 0;
  for (const auto& s : batch) n += s.size() - 1;
  return n;
}

}  // namespace

PretrainResult pretrain(const std::vector<InteractionLog>& logs, std::size_t num_items,
                        const SeqRecConfig& cfg) {
  PretrainResult result;
  result.model = SeqRecModel(num_items, cfg);
  SeqRecModel& model = result.model;

  std::vector<std::vector<std::size_t>> seqs;
  std::size_t truncated = 0;
  for (const auto& log : logs) {
    if (log.sequence.size() < 2) continue;
    if (log.sequence.size() > cfg.max_len) {
      ++truncated;
      seqs.emplace_back(log.sequence.end() - static_cast<std::ptrdiff_t>(cfg.max_len),
                        log.sequence.end());
    } else {
      seqs.push_back(log.sequence);
    }
  }
  if (truncated > 0) {
    result.warnings.push_back(std::to_string(truncated) + " sequences truncated to the most recent " +
                              std::to_string(cfg.max_len) + " items");
  }

  ParamList params = model.params();
  Adam adam(params, AdamConfig{cfg.lr});
  Rng shuffle_rng(derive_seed(cfg.seed, "seqrec-shuffle"));
  Rng dropout_rng(derive_seed(cfg.seed, "seqrec-dropout"));
  std::vector<std::size_t> order(seqs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  if (!seqs.empty()) {
    Rng probe_rng(derive_seed(cfg.seed, "seqrec-probe"));
    double sum = 0;
    std::size_t count = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch) {
      auto batch = batch_of(seqs, order, b, cfg.batch);
      Tape tape;
      const std::size_t n = targets_in(batch);
      Var loss = pretrain_loss(tape, model, batch, ForwardMode{cfg.dropout, &probe_rng});
      sum += double(loss.value()[0]) * double(n);
      count += n;
    }
    result.losses.push_back(sum / double(count));
  }

  for (std::size_t epoch = 1; epoch <= cfg.epochs && !seqs.empty(); ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng.engine());
    double sum = 0;
    std::size_t count = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch) {
      auto batch = batch_of(seqs, order, b, cfg.batch);
      adam.zero_grad();
      Tape tape;
      Var loss = pretrain_loss(tape, model, batch, ForwardMode{cfg.dropout, &dropout_rng});
      const double value = loss.value()[0];
      if (!std::isfinite(value)) {
        fail(ErrorCode::kTraining, "seqrec loss diverged in epoch " + std::to_string(epoch));
      }
      tape.backward(loss);
      adam.step();
      const std::size_t n = targets_in(batch);
      sum += value * double(n);
      count += n;
    }
    result.losses.push_back(sum / double(count));
  }
  model.freeze();
  return result;
}

double next_item_hit_rate(SeqRecModel& model,
                          const std::vector<std::vector<std::size_t>>& sequences) {
  std::size_t hits = 0;
  std::size_t total = 0;
  for (const auto& seq : sequences) {
    if (seq.size() < 2) continue;
    Tape tape;
    std::span<const std::size_t> prefix(seq.data(), seq.size() - 1);
    Var h = model.forward(tape, prefix, ForwardMode{});
    Var last = slice_rows(h, prefix.size() - 1, 1);
    const Matrix& scores = model.logits(tape, last).value();
    const auto row = scores.row(0);
    const std::size_t best =
        static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    hits += best == seq.back() ? 1 : 0;
    ++total;
  }
  return total == 0 ? 0.0 : double(hits) / double(total);
}

}  // namespace semfed
