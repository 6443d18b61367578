#include <cmath>
#include <fstream>
#include <map>
#include <numbers>

#include "collapse/errors.hpp"
#include "collapse/experiments.hpp"
#include "collapse/optimizer.hpp"

namespace collapse {

void PretrainConfig::validate() const {
  if (steps < 0) {
    throw ConfigError("pretrain steps must be >= 0");
  }
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("pretrain lr must be a finite value >= 0");
  }
  if (batch_size < 1) {
    throw ConfigError("pretrain batch_size must be >= 1");
  }
  if (warmup_steps < 0) {
    throw ConfigError("warmup_steps must be >= 0");
  }
  if (!(min_lr_ratio >= 0.0 && min_lr_ratio <= 1.0)) {
    throw ConfigError("min_lr_ratio must be in [0, 1]");
  }
  if (eval_every < 0) {
    throw ConfigError("eval_every must be >= 0");
  }
}

double pretrain_lr(const PretrainConfig& cfg, int step) {
  if (step < cfg.warmup_steps) {
    return cfg.learning_rate * static_cast<double>(step + 1) /
           static_cast<double>(cfg.warmup_steps);
  }
  const int decay_steps = cfg.steps - cfg.warmup_steps;
  if (decay_steps <= 1) {
    return cfg.learning_rate;
  }
  const double progress =
      static_cast<double>(step - cfg.warmup_steps) / static_cast<double>(decay_steps - 1);
  const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0)));
  return cfg.learning_rate * (cfg.min_lr_ratio + (1.0 - cfg.min_lr_ratio) * cosine);
}

PretrainResult pretrain(const ModelConfig& config, const Corpus& train,
                        std::span<const Corpus> validation, const PretrainConfig& cfg,
                        const std::optional<std::filesystem::path>& log_path) {
  config.validate();
  cfg.validate();
  const auto block = static_cast<std::size_t>(config.block_size);
  if (train.tokens.size() < block + 1) {
    throw CorpusError("pretraining corpus '" + train.name + "' is shorter than block_size + 1");
  }

  PretrainResult result{init_model(config, cfg.seed), {}, 0.0};
  ModelState& model = result.model;
  AdamState adam = AdamState::for_model(model);
  Rng crops = Rng::stream(cfg.seed, "pretrain-crops");
  Rng dropout_rng = Rng::stream(cfg.seed, "dropout");

  std::vector<std::vector<std::size_t>> windows;
  for (const Corpus& c : validation) {
    windows.push_back(select_windows(c, block, cfg.eval));
  }
  auto evaluate = [&]() {
    std::vector<double> out;
    for (std::size_t c = 0; c < validation.size(); ++c) {
      out.push_back(eval_val_loss(model, validation[c], windows[c]));
    }
    return out;
  };

  std::ofstream log;
  if (log_path) {
    log.open(*log_path, std::ios::trunc);
    if (!log) {
      throw Error("cannot write " + log_path->string());
    }
    log << "step,lr,train_loss";
    for (const Corpus& c : validation) {
      log << ",val_loss_" << c.name;
    }
    log << '\n' << std::flush;
  }
  auto log_row = [&](int step, double lr, double loss, const std::vector<double>& vals) {
    if (!log) {
      return;
    }
    log << step << ',' << format_double(lr) << ',' << format_double(loss);
    for (std::size_t c = 0; c < validation.size(); ++c) {
      log << ',' << (vals.empty() ? std::string() : format_double(vals[c]));
    }
    log << '\n' << std::flush;
  };

  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  const std::uint64_t span = train.tokens.size() - block;
  std::vector<TokenId> inputs(batch * block);
  std::vector<TokenId> targets(batch * block);
  for (int step = 0; step < cfg.steps; ++step) {
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t start = crops.below(span);
      for (std::size_t t = 0; t < block; ++t) {
        inputs[b * block + t] = train.tokens[start + t];
        targets[b * block + t] = train.tokens[start + t + 1];
      }
    }
    TrainConfig train_cfg;
    train_cfg.learning_rate = pretrain_lr(cfg, step);
    train_cfg.beta1 = cfg.beta1;
    train_cfg.beta2 = cfg.beta2;
    train_cfg.grad_clip = cfg.grad_clip;
    Tape tape;
    const Tensor logits = forward(model, inputs, batch, Mode::train, &tape, &dropout_rng);
    const Tensor loss = cross_entropy_logits(logits, targets, &tape);
    tape.backward(loss);
    auto params = model.parameters();
    clip_grad_norm(params, cfg.grad_clip);
    adam_step(params, adam, train_cfg);
    model.zero_grad();
    result.final_train_loss = loss.item();

    const bool last = step + 1 == cfg.steps;
    const bool eval_now = last || (cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0);
    std::vector<double> vals;
    if (eval_now) {
      vals = evaluate();
    }
    log_row(step, train_cfg.learning_rate, result.final_train_loss, vals);
    if (last) {
      result.val_losses = vals;
    }
  }
  if (cfg.steps == 0) {
    result.val_losses = evaluate();
  }
  return result;
}

namespace {

const std::string_view kPretrainKeys[] = {
    "kind",      "preset",       "steps",       "lr",         "batch_size",       "warmup_steps",
    "min_lr_ratio", "beta1",     "beta2",       "grad_clip",  "eval_every",       "windows_per_eval",
    "eval_seed", "seed",         "corpus",      "corpora",    "out"};

PlanValues resolved_pretrain_plan(PlanValues v) {
  v.require_known(kPretrainKeys);
  v.set("kind", "pretrain");
  const std::string preset = v.get("preset", "tiny");
  v.set("preset", preset);
  v.set("out", v.get("out", "runs/base/" + preset));
  return v;
}

std::map<std::string, std::string> without_info(const PlanValues& v) {
  std::map<std::string, std::string> out;
  for (const auto& [k, val] : v.entries()) {
    if (!k.starts_with("info.")) {
      out.emplace(k, val);
    }
  }
  return out;
}

}  // namespace

PlanValues pretrain_from_plan(const PlanValues& plan) {
  const PlanValues v = resolved_pretrain_plan(plan);
  PretrainConfig cfg;
  cfg.steps = v.get_int("steps", cfg.steps);
  cfg.learning_rate = v.get_double("lr", cfg.learning_rate);
  cfg.batch_size = v.get_int("batch_size", cfg.batch_size);
  cfg.warmup_steps = v.get_int("warmup_steps", cfg.warmup_steps);
  cfg.min_lr_ratio = v.get_double("min_lr_ratio", cfg.min_lr_ratio);
  cfg.beta1 = v.get_double("beta1", cfg.beta1);
  cfg.beta2 = v.get_double("beta2", cfg.beta2);
  cfg.grad_clip = v.get_double("grad_clip", cfg.grad_clip);
  cfg.eval_every = v.get_int("eval_every", cfg.eval_every);
  cfg.eval.windows_per_eval = v.get_int("windows_per_eval", cfg.eval.windows_per_eval);
  cfg.eval.seed = v.get_u64("eval_seed", cfg.eval.seed);
  cfg.seed = v.get_u64("seed", cfg.seed);
  cfg.validate();
  const ModelConfig config = preset_config(v.get("preset"));
  const std::filesystem::path out = v.get("out");

  const Corpus train = load_corpus(v.get("corpus", "corpora/pretrain.txt"), "pretrain");
  const std::vector<Corpus> val = load_corpora(parse_corpus_list(v.get_list("corpora", {})));

  std::filesystem::create_directories(out);
  const PretrainResult result = pretrain(config, train, val, cfg, out / "pretrain.csv");
  save_checkpoint(result.model, out / "model.ckpt");

  PlanValues meta = v;
  meta.set("info.train_digest", train.digest);
  meta.set("info.checkpoint_digest", sha256_file(out / "model.ckpt"));
  meta.set("info.param_count", std::to_string(count_params(config)));
  meta.set("info.final_train_loss", format_double(result.final_train_loss));
  meta.set("info.version", kVersion);
  for (std::size_t c = 0; c < val.size(); ++c) {
    meta.set("info.final_val_loss_" + val[c].name, format_double(result.val_losses[c]));
  }
  meta.save(out / "pretrain.meta");
  return meta;
}

std::optional<PlanValues> pretrain_outputs_current(const PlanValues& plan) {
  const PlanValues v = resolved_pretrain_plan(plan);
  const std::filesystem::path out = v.get("out");
  if (!std::filesystem::exists(out / "pretrain.meta") ||
      !std::filesystem::exists(out / "model.ckpt")) {
    return std::nullopt;
  }
  PlanValues meta = PlanValues::load(out / "pretrain.meta");
  if (without_info(meta) != without_info(v) ||
      meta.get("info.checkpoint_digest", "") != sha256_file(out / "model.ckpt") ||
      meta.get("info.train_digest", "") !=
          sha256_file(v.get("corpus", "corpora/pretrain.txt"))) {
    return std::nullopt;
  }
  return meta;
}

}  // namespace collapse
