#include "semfed/promptrec.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "semfed/adam.hpp"
#include "semfed/error.hpp"
#include "semfed/rng.hpp"

namespace semfed {

Projector::Projector(std::size_t in, std::size_t n_soft_, std::size_t width_, Activation act,
                     std::uint64_t seed, const char* tag)
    : n_soft(n_soft_), width(width_) {
  if (n_soft == 0 || width == 0) fail(ErrorCode::kConfig, "projector output must be nonempty");
  Rng rng(derive_seed(seed, tag));
  mlp = Mlp2(in, width, n_soft * width, act, rng);
}

Var Projector::forward(Tape& tape, Var source) {
  if (source.rows() != 1 || source.cols() != in_dim()) {
    fail(ErrorCode::kDimension, "projector expects 1 x " + std::to_string(in_dim()) + ", got " +
                                    std::to_string(source.rows()) + " x " +
                                    std::to_string(source.cols()));
  }
  return reshape(mlp.forward(tape, source), n_soft, width);
}

Var project_user(Tape& tape, Projector& proj, Var user) { return proj.forward(tape, user); }
Var project_item(Tape& tape, Projector& proj, Var item) { return proj.forward(tape, item); }

HybridPrompt build_prompt(const TinyLM& lm, const std::vector<std::int64_t>& instruction,
                          Var soft_user, Var soft_item, std::optional<std::size_t> target_item) {
  HybridPrompt p;
  p.instruction = instruction;
  p.soft_user = soft_user;
  p.soft_item = soft_item;
  if (target_item) {
    if (*target_item >= lm.vocab().num_items()) {
      fail(ErrorCode::kPrompt, "target item " + std::to_string(*target_item) + " not in vocabulary");
    }
    p.target = lm.vocab().item_token(*target_item);
  }
  if (soft_user.cols() != lm.hidden() || soft_item.cols() != lm.hidden()) {
    fail(ErrorCode::kPrompt, "soft prompt width does not match the language model");
  }
  if (p.length() > lm.config().context) {
    fail(ErrorCode::kPrompt, "prompt of length " + std::to_string(p.length()) +
                                 " exceeds context " + std::to_string(lm.config().context));
  }
  return p;
}

Var prompt_logits(Tape& tape, TinyLM& lm, const HybridPrompt& prompt) {
  std::vector<Var> rows;
  if (!prompt.instruction.empty()) rows.push_back(lm.embed_tokens(tape, prompt.instruction));
  rows.push_back(prompt.soft_user);
  rows.push_back(prompt.soft_item);
  Var hidden = lm.forward(tape, concat_rows(rows));
  return lm.head(tape, slice_rows(hidden, hidden.rows() - 1, 1));
}

Var ce_loss(Tape& tape, TinyLM& lm, const HybridPrompt& prompt) {
  if (prompt.target < 0) fail(ErrorCode::kPrompt, "prompt has no target");
  const std::int64_t target[] = {prompt.target};
  return cross_entropy(prompt_logits(tape, lm, prompt), target);
}

std::int64_t generate_next(Tape& tape, TinyLM& lm, const HybridPrompt& prompt) {
  const Matrix& logits = prompt_logits(tape, lm, prompt).value();
  const auto row = logits.row(0);
  return static_cast<std::int64_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

PromptModel::PromptModel(TinyLM lm_, std::size_t user_dim, std::size_t item_dim,
                         std::size_t n_soft, bool use_projectors_,
                         const std::string& template_text, std::uint64_t seed)
    : lm(std::move(lm_)), use_projectors(use_projectors_) {
  instruction = lm.vocab().encode_words(template_text);
  if (use_projectors) {
    user_proj = Projector(user_dim, n_soft, lm.hidden(), Activation::kSilu, seed, "user-projector");
    item_proj = Projector(item_dim, n_soft, lm.hidden(), Activation::kRelu, seed, "item-projector");
  }
}

ParamList PromptModel::projector_params() {
  ParamList out;
  if (use_projectors) {
    user_proj.collect(out);
    item_proj.collect(out);
  }
  return out;
}

namespace {

// Zero-pads or truncates a row vector to `width`.
Matrix fit_width(const Matrix& v, std::size_t width) {
  Matrix out(1, width);
  const std::size_t n = std::min(width, v.cols());
  for (std::size_t j = 0; j < n; ++j) out(0, j) = v(0, j);
  return out;
}

}  // namespace

HybridPrompt PromptModel::prompt(Tape& tape, const Matrix& user, const Matrix& item,
                                 std::optional<std::size_t> target_item) {
  Var mu, mi;
  if (use_projectors) {
    mu = project_user(tape, user_proj, tape.constant(user));
    mi = project_item(tape, item_proj, tape.constant(item));
  } else {
    mu = tape.constant(fit_width(user, lm.hidden()));
    mi = tape.constant(fit_width(item, lm.hidden()));
  }
  return build_prompt(lm, instruction, mu, mi, target_item);
}

Checkpoint PromptModel::to_checkpoint() const {
  Checkpoint ck = lm.to_checkpoint();
  ck.metadata["lm_kind"] = ck.metadata["kind"];
  ck.metadata["kind"] = "prompt_model";
  ck.metadata["use_projectors"] = use_projectors;
  ck.metadata["instruction"] = instruction;
  if (use_projectors) {
    ck.metadata["user_dim"] = user_proj.in_dim();
    ck.metadata["item_dim"] = item_proj.in_dim();
    ck.metadata["n_soft"] = user_proj.n_soft;
    auto& self = const_cast<PromptModel&>(*this);
    const ParamList ps = self.projector_params();
    for (std::size_t i = 0; i < ps.size(); ++i) ck.add("proj" + std::to_string(i), ps[i]->value);
  }
  return ck;
}

PromptModel PromptModel::from_checkpoint(const Checkpoint& ck) {
  if (ck.metadata.value("kind", "") != "prompt_model") {
    fail(ErrorCode::kFormat, "not a stage-2 model checkpoint");
  }
  Checkpoint lm_ck = ck;
  lm_ck.metadata["kind"] = ck.metadata.value("lm_kind", "");
  PromptModel model;
  model.lm = TinyLM::from_checkpoint(lm_ck);
  try {
    model.use_projectors = ck.metadata.at("use_projectors").get<bool>();
    model.instruction = ck.metadata.at("instruction").get<std::vector<std::int64_t>>();
    if (model.use_projectors) {
      const auto n_soft = ck.metadata.at("n_soft").get<std::size_t>();
      model.user_proj = Projector(ck.metadata.at("user_dim").get<std::size_t>(), n_soft,
                                  model.lm.hidden(), Activation::kSilu, 0, "user-projector");
      model.item_proj = Projector(ck.metadata.at("item_dim").get<std::size_t>(), n_soft,
                                  model.lm.hidden(), Activation::kRelu, 0, "item-projector");
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, std::string("stage-2 model metadata: ") + e.what());
  }
  const ParamList ps = model.projector_params();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const Matrix& m = ck.get("proj" + std::to_string(i));
    if (!m.same_shape(ps[i]->value)) fail(ErrorCode::kFormat, "projector tensor shape mismatch");
    ps[i]->value = m;
  }
  return model;
}

void FinetuneConfig::validate() const {
  if (!(lr > 0) || !std::isfinite(lr)) fail(ErrorCode::kConfig, "stage2.lr must be positive");
  if (batch == 0) fail(ErrorCode::kConfig, "stage2.batch must be positive");
}

namespace {

Var batch_loss(Tape& tape, PromptModel& model, const std::vector<PromptExample>& examples,
               const std::vector<std::size_t>& order, std::size_t begin, std::size_t end) {
  Var total{};
  for (std::size_t i = begin; i < end; ++i) {
    const PromptExample& ex = examples[order[i]];
    Var l = ce_loss(tape, model.lm, model.prompt(tape, ex.user, ex.item, ex.target));
    total = i == begin ? l : add(total, l);
  }
  return scale(total, Real(1) / Real(end - begin));
}

}  // namespace

double mean_loss(PromptModel& model, const std::vector<PromptExample>& examples) {
  if (examples.empty()) return 0.0;
  double sum = 0;
  for (const PromptExample& ex : examples) {
    Tape tape;
    sum += ce_loss(tape, model.lm, model.prompt(tape, ex.user, ex.item, ex.target)).value()[0];
  }
  return sum / double(examples.size());
}

FinetuneCurve finetune(PromptModel& model, const std::vector<PromptExample>& train,
                       const std::vector<PromptExample>& valid, const FinetuneConfig& cfg) {
  cfg.validate();
  ParamList lm_params = model.lm.params();
  set_trainable(lm_params, !cfg.freeze_backbone);
  ParamList params = model.projector_params();
  params.insert(params.end(), lm_params.begin(), lm_params.end());
  Adam adam(params, AdamConfig{cfg.lr});
  Rng shuffle_rng(derive_seed(cfg.seed, "stage2-shuffle"));

  FinetuneCurve curve;
  curve.train.push_back(mean_loss(model, train));
  curve.valid.push_back(mean_loss(model, valid));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 1; epoch <= cfg.epochs && !train.empty(); ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng.engine());
    double sum = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch) {
      const std::size_t e = std::min(order.size(), b + cfg.batch);
      adam.zero_grad();
      Tape tape;
      Var loss = batch_loss(tape, model, train, order, b, e);
      const double value = loss.value()[0];
      if (!std::isfinite(value)) {
        fail(ErrorCode::kTraining, "stage-2 loss diverged in epoch " + std::to_string(epoch));
      }
      tape.backward(loss);
      adam.step();
      sum += value * double(e - b);
    }
    curve.train.push_back(sum / double(train.size()));
    curve.valid.push_back(mean_loss(model, valid));
  }
  return curve;
}

std::vector<std::int64_t> predict(PromptModel& model, const std::vector<PromptExample>& examples) {
  std::vector<std::int64_t> out;
  out.reserve(examples.size());
  for (const PromptExample& ex : examples) {
    Tape tape;
    out.push_back(generate_next(tape, model.lm, model.prompt(tape, ex.user, ex.item, std::nullopt)));
  }
  return out;
}

Metrics score_predictions(const Vocabulary& vocab, const std::vector<std::int64_t>& predicted,
                          const std::vector<std::size_t>& targets) {
  if (predicted.empty()) fail(ErrorCode::kEvaluation, "nothing to evaluate");
  if (predicted.size() != targets.size()) {
    fail(ErrorCode::kEvaluation, "prediction and target counts differ");
  }
  std::size_t hits = 0, valid = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (!vocab.is_item_token(predicted[i])) continue;
    ++valid;
    if (vocab.item_of(predicted[i]) == targets[i]) ++hits;
  }
  const double n = double(predicted.size());
  return Metrics{double(hits) / n, double(valid) / n, predicted.size()};
}

Metrics evaluate(PromptModel& model, const std::vector<PromptExample>& examples) {
  if (examples.empty()) fail(ErrorCode::kEvaluation, "evaluation split is empty");
  std::vector<std::size_t> targets;
  for (const PromptExample& ex : examples) targets.push_back(ex.target);
  return score_predictions(model.lm.vocab(), predict(model, examples), targets);
}

}  // namespace semfed
