#include "collapse/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include "collapse/errors.hpp"

namespace collapse {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) {
    return {};
  }
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

template <typename T>
T parse_number(const std::string& text, const std::string& key) {
  T value{};
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw ConfigError("'" + key + "': cannot parse '" + text + "' as a number");
  }
  return value;
}

// Values are single-line, so the prompt is stored with \n, \t and \\ escapes.
std::string escape_value(const std::string& s) {
  std::string out;
  for (const char c : s) {
    switch (c) {
      case '\\':
        out += "\\\\";
        break;
      case '\n':
        out += "\\n";
        break;
      case '\t':
        out += "\\t";
        break;
      case '\r':
        out += "\\r";
        break;
      default:
        out += c;
    }
  }
  return out;
}

std::string unescape_value(const std::string& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '\\' || i + 1 == s.size()) {
      out += s[i];
      continue;
    }
    const char c = s[++i];
    out += c == 'n' ? '\n' : c == 't' ? '\t' : c == 'r' ? '\r' : c;
  }
  return out;
}

std::string join(const std::vector<std::string>& items, const char* sep = ",") {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    out += (i ? sep : "") + items[i];
  }
  return out;
}

constexpr std::string_view kSelftrainKeys[] = {
    "temperature",   "top_k",          "max_new_tokens",    "prompt",
    "beta1",         "beta2",          "adam_eps",          "grad_clip",
    "weight_decay",  "lr",             "max_iters",         "collapse_threshold",
    "collapse_patience", "windows_per_eval", "eval_seed",   "eval_stride",
    "snapshot_every"};

}  // namespace

// ---- PlanValues ------------------------------------------------------------

PlanValues PlanValues::parse(std::string_view text, const std::string& origin) {
  PlanValues plan;
  plan.origin_ = origin;
  std::istringstream in{std::string(text)};
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped.front() == '#') {
      continue;
    }
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(number) + ": expected key=value");
    }
    const std::string key = trim(std::string_view(stripped).substr(0, eq));
    if (key.empty()) {
      throw ConfigError(origin + ":" + std::to_string(number) + ": empty key");
    }
    if (plan.has(key)) {
      throw ConfigError(origin + ":" + std::to_string(number) + ": duplicate key '" + key + "'");
    }
    plan.values_[key] = trim(std::string_view(stripped).substr(eq + 1));
  }
  return plan;
}

PlanValues PlanValues::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ConfigError("cannot read plan file " + path.string());
  }
  std::ostringstream text;
  text << in.rdbuf();
  return parse(text.str(), path.string());
}

void PlanValues::set_override(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError("override '" + std::string(assignment) + "' is not key=value");
  }
  values_[trim(assignment.substr(0, eq))] = trim(assignment.substr(eq + 1));
}

std::string PlanValues::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) {
    throw ConfigError(origin_ + ": missing key '" + key + "'");
  }
  return it->second;
}

std::string PlanValues::get(const std::string& key, const std::string& fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

int PlanValues::get_int(const std::string& key, int fallback) const {
  return has(key) ? parse_number<int>(get(key), key) : fallback;
}

double PlanValues::get_double(const std::string& key, double fallback) const {
  return has(key) ? parse_number<double>(get(key), key) : fallback;
}

std::uint64_t PlanValues::get_u64(const std::string& key, std::uint64_t fallback) const {
  return has(key) ? parse_number<std::uint64_t>(get(key), key) : fallback;
}

std::vector<std::string> PlanValues::get_list(const std::string& key,
                                              const std::vector<std::string>& fallback) const {
  if (!has(key)) {
    return fallback;
  }
  std::vector<std::string> out;
  std::istringstream in(get(key));
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) {
      out.push_back(item);
    }
  }
  return out;
}

void PlanValues::require_known(std::span<const std::string_view> known,
                               std::span<const std::string_view> known_prefixes) const {
  for (const auto& [key, value] : values_) {
    if (key.starts_with("info.")) {
      continue;
    }
    const bool ok =
        std::ranges::find(known, key) != known.end() ||
        std::ranges::any_of(known_prefixes, [&](std::string_view p) { return key.starts_with(p); });
    if (!ok) {
      throw ConfigError(origin_ + ": unknown key '" + key + "'");
    }
  }
}

std::string PlanValues::to_text() const {
  std::string out;
  for (const auto& [key, value] : values_) {
    out += key + "=" + value + "\n";
  }
  return out;
}

void PlanValues::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error("cannot write " + path.string());
  }
  out << to_text();
}

// ---- corpora and configs ---------------------------------------------------

std::vector<CorpusSpec> parse_corpus_list(const std::vector<std::string>& items) {
  std::vector<CorpusSpec> out;
  for (const std::string& item : items) {
    const auto colon = item.find(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == item.size()) {
      throw ConfigError("corpus entry '" + item + "' is not name:path");
    }
    CorpusSpec spec{item.substr(0, colon), item.substr(colon + 1)};
    for (const CorpusSpec& prev : out) {
      if (prev.name == spec.name) {
        throw ConfigError("corpus name '" + spec.name + "' listed twice");
      }
    }
    out.push_back(std::move(spec));
  }
  return out;
}

std::vector<Corpus> load_corpora(std::span<const CorpusSpec> specs) {
  std::vector<Corpus> out;
  for (const CorpusSpec& s : specs) {
    out.push_back(load_corpus(s.path, s.name));
  }
  return out;
}

SelfTrainConfig selftrain_config_from(const PlanValues& v) {
  SelfTrainConfig cfg;
  cfg.sampling.temperature = v.get_double("temperature", cfg.sampling.temperature);
  cfg.sampling.top_k = v.get_int("top_k", cfg.sampling.top_k);
  cfg.sampling.max_new_tokens = v.get_int("max_new_tokens", cfg.sampling.max_new_tokens);
  cfg.sampling.prompt = unescape_value(v.get("prompt", ""));
  cfg.train.learning_rate = v.get_double("lr", cfg.train.learning_rate);
  cfg.train.beta1 = v.get_double("beta1", cfg.train.beta1);
  cfg.train.beta2 = v.get_double("beta2", cfg.train.beta2);
  cfg.train.eps = v.get_double("adam_eps", cfg.train.eps);
  cfg.train.grad_clip = v.get_double("grad_clip", cfg.train.grad_clip);
  cfg.train.weight_decay = v.get_double("weight_decay", cfg.train.weight_decay);
  cfg.stop.max_iters = v.get_int("max_iters", cfg.stop.max_iters);
  cfg.stop.collapse_threshold = v.get_double("collapse_threshold", cfg.stop.collapse_threshold);
  cfg.stop.collapse_patience = v.get_int("collapse_patience", cfg.stop.collapse_patience);
  cfg.eval.windows_per_eval = v.get_int("windows_per_eval", cfg.eval.windows_per_eval);
  cfg.eval.seed = v.get_u64("eval_seed", cfg.eval.seed);
  cfg.eval_stride = v.get_int("eval_stride", cfg.eval_stride);
  cfg.snapshot_every = v.get_int("snapshot_every", cfg.snapshot_every);
  cfg.validate();
  return cfg;
}

void write_selftrain_config(const SelfTrainConfig& cfg, PlanValues& v) {
  v.set("temperature", format_double(cfg.sampling.temperature));
  v.set("top_k", std::to_string(cfg.sampling.top_k));
  v.set("max_new_tokens", std::to_string(cfg.sampling.max_new_tokens));
  v.set("prompt", escape_value(cfg.sampling.prompt));
  v.set("lr", format_double(cfg.train.learning_rate));
  v.set("beta1", format_double(cfg.train.beta1));
  v.set("beta2", format_double(cfg.train.beta2));
  v.set("adam_eps", format_double(cfg.train.eps));
  v.set("grad_clip", format_double(cfg.train.grad_clip));
  v.set("weight_decay", format_double(cfg.train.weight_decay));
  v.set("max_iters", std::to_string(cfg.stop.max_iters));
  v.set("collapse_threshold", format_double(cfg.stop.collapse_threshold));
  v.set("collapse_patience", std::to_string(cfg.stop.collapse_patience));
  v.set("windows_per_eval", std::to_string(cfg.eval.windows_per_eval));
  v.set("eval_seed", std::to_string(cfg.eval.seed));
  v.set("eval_stride", std::to_string(cfg.eval_stride));
  v.set("snapshot_every", std::to_string(cfg.snapshot_every));
}

// ---- RunSpec ---------------------------------------------------------------

PlanValues RunSpec::to_values() const {
  PlanValues v;
  v.set("kind", "selftrain");
  v.set("run_id", run_id);
  v.set("preset", preset);
  v.set("seed", std::to_string(seed));
  v.set("checkpoint", checkpoint.string());
  if (!checkpoint_digest.empty()) {
    v.set("checkpoint_digest", checkpoint_digest);
  }
  std::vector<std::string> items;
  for (const CorpusSpec& c : corpora) {
    items.push_back(c.name + ":" + c.path.string());
    const auto it = corpus_digests.find(c.name);
    if (it != corpus_digests.end()) {
      v.set("corpus_digest." + c.name, it->second);
    }
  }
  v.set("corpora", join(items));
  write_selftrain_config(config, v);
  v.set("info.version", kVersion);
  return v;
}

RunSpec RunSpec::from_values(const PlanValues& v) {
  std::vector<std::string_view> known(std::begin(kSelftrainKeys), std::end(kSelftrainKeys));
  for (const char* k : {"kind", "run_id", "preset", "seed", "checkpoint", "checkpoint_digest",
                        "corpora", "out"}) {
    known.emplace_back(k);
  }
  const std::string_view prefixes[] = {"corpus_digest."};
  v.require_known(known, prefixes);
  if (v.get("kind", "selftrain") != "selftrain") {
    throw ConfigError("run plan kind must be 'selftrain'");
  }
  RunSpec spec;
  spec.seed = v.get_u64("seed", 0);
  spec.preset = v.get("preset", "custom");
  spec.run_id = v.get("run_id", "run");
  spec.checkpoint = v.get("checkpoint");
  spec.checkpoint_digest = v.get("checkpoint_digest", "");
  spec.corpora = parse_corpus_list(v.get_list("corpora", {}));
  if (spec.corpora.empty()) {
    throw ConfigError("run plan lists no corpora");
  }
  for (const CorpusSpec& c : spec.corpora) {
    const std::string key = "corpus_digest." + c.name;
    if (v.has(key)) {
      spec.corpus_digests[c.name] = v.get(key);
    }
  }
  spec.config = selftrain_config_from(v);
  return spec;
}

// ---- runs ------------------------------------------------------------------

bool RunSummary::valid_stop() const {
  return stop_reason == "collapsed" || stop_reason == "max_iters" ||
         stop_reason == "numeric_failure";
}

int RunSummary::collapse_or_cap() const {
  return collapse_iteration ? *collapse_iteration : max_iters + 1;
}

double median(std::vector<double> values) {
  if (values.empty()) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  std::ranges::sort(values);
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double least_squares_slope(std::span<const double> x, std::span<const double> y) {
  double sx = 0.0;
  double sy = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < std::min(x.size(), y.size()); ++i) {
    if (std::isfinite(x[i]) && std::isfinite(y[i])) {
      sx += x[i];
      sy += y[i];
      ++n;
    }
  }
  if (n < 2) {
    return 0.0;
  }
  const double mx = sx / static_cast<double>(n);
  const double my = sy / static_cast<double>(n);
  double sxy = 0.0;
  double sxx = 0.0;
  for (std::size_t i = 0; i < std::min(x.size(), y.size()); ++i) {
    if (std::isfinite(x[i]) && std::isfinite(y[i])) {
      sxy += (x[i] - mx) * (y[i] - my);
      sxx += (x[i] - mx) * (x[i] - mx);
    }
  }
  return sxx > 0.0 ? sxy / sxx : 0.0;
}

RunSummary execute_run(const RunSpec& spec, const std::filesystem::path& dir) {
  RunSpec resolved = spec;
  const std::string digest = sha256_file(spec.checkpoint);
  if (!spec.checkpoint_digest.empty() && spec.checkpoint_digest != digest) {
    throw ConfigError("checkpoint " + spec.checkpoint.string() + " has digest " + digest +
                      ", run plan expects " + spec.checkpoint_digest);
  }
  resolved.checkpoint_digest = digest;
  std::vector<Corpus> corpora = load_corpora(spec.corpora);
  for (const Corpus& c : corpora) {
    const auto it = spec.corpus_digests.find(c.name);
    if (it != spec.corpus_digests.end() && it->second != c.digest) {
      throw ConfigError("corpus '" + c.name + "' has digest " + c.digest +
                        ", run plan expects " + it->second);
    }
    resolved.corpus_digests[c.name] = c.digest;
  }
  const ModelState initial = load_checkpoint(spec.checkpoint);

  std::filesystem::create_directories(dir);
  PlanValues meta = resolved.to_values();
  meta.set("info.param_count", std::to_string(count_params(initial)));
  meta.save(dir / "run.meta");
  run_self_training(initial, spec.config, corpora, spec.seed, dir);
  return summarize_run(dir);
}

RunSummary summarize_run(const std::filesystem::path& dir) {
  const PlanValues meta = PlanValues::load(dir / "run.meta");
  const RunSpec spec = RunSpec::from_values(meta);
  RunSummary s;
  s.run_id = spec.run_id;
  s.preset = spec.preset;
  s.learning_rate = spec.config.train.learning_rate;
  s.seed = spec.seed;
  s.max_iters = spec.config.stop.max_iters;
  s.checkpoint_digest = spec.checkpoint_digest;
  s.param_count = meta.has("info.param_count")
                      ? static_cast<std::int64_t>(meta.get_u64("info.param_count", 0))
                      : 0;

  if (std::filesystem::exists(dir / "result.meta")) {
    const PlanValues result = PlanValues::load(dir / "result.meta");
    s.stop_reason = result.get("stop_reason", "error");
    s.error = result.get("error", "");
    s.wall_seconds = result.get_double("wall_seconds", 0.0);
  } else {
    s.stop_reason = "incomplete";
  }
  if (!std::filesystem::exists(dir / "records.csv")) {
    return s;
  }
  const RecordsTable table = read_records_csv(dir / "records.csv");
  s.corpus_names = table.corpus_names;
  s.iterations = static_cast<int>(table.records.size());
  for (const IterationRecord& r : table.records) {
    if (r.collapsed) {
      s.collapse_iteration = r.iteration;
      break;
    }
  }
  if (table.records.empty()) {
    return s;
  }
  s.final_train_loss = table.records.back().train_loss;
  std::vector<double> tail;
  for (std::size_t i = table.records.size() >= 5 ? table.records.size() - 5 : 0;
       i < table.records.size(); ++i) {
    tail.push_back(table.records[i].train_loss);
  }
  s.tail_train_loss = median(tail);

  const std::size_t mid = (table.records.size() - 1) / 2;
  for (std::size_t c = 0; c < table.corpus_names.size(); ++c) {
    std::vector<double> xs;
    std::vector<double> ys;
    double first = std::numeric_limits<double>::quiet_NaN();
    double at_mid = first;
    double last = first;
    for (const IterationRecord& r : table.records) {
      const double v = r.val_losses[c];
      if (std::isnan(v)) {
        continue;
      }
      if (std::isnan(first)) {
        first = v;
      }
      if (static_cast<std::size_t>(r.iteration) <= mid) {
        at_mid = v;
      }
      last = v;
      xs.push_back(r.iteration);
      ys.push_back(v);
    }
    s.val_first.push_back(first);
    s.val_mid.push_back(at_mid);
    s.val_last.push_back(last);
    s.val_slope.push_back(least_squares_slope(xs, ys));
  }
  return s;
}

// ---- sweeps ----------------------------------------------------------------

std::string run_id_for(const std::string& preset, double lr, std::uint64_t seed) {
  return preset + "_lr" + format_double(lr) + "_s" + std::to_string(seed);
}

ExperimentPlan ExperimentPlan::from_values(const PlanValues& v) {
  std::vector<std::string_view> known(std::begin(kSelftrainKeys), std::end(kSelftrainKeys));
  for (const char* k : {"kind", "presets", "learning_rates", "seeds", "corpora", "out", "jobs"}) {
    known.emplace_back(k);
  }
  const std::string_view prefixes[] = {"checkpoint."};
  v.require_known(known, prefixes);

  ExperimentPlan plan;
  plan.selftrain = selftrain_config_from(v);
  plan.presets = v.get_list("presets", plan.presets);
  if (v.has("learning_rates")) {
    plan.learning_rates.clear();
    for (const std::string& s : v.get_list("learning_rates", {})) {
      plan.learning_rates.push_back(parse_number<double>(s, "learning_rates"));
    }
  } else if (v.has("lr")) {
    plan.learning_rates = {plan.selftrain.train.learning_rate};
  }
  if (v.has("seeds")) {
    plan.seeds.clear();
    for (const std::string& s : v.get_list("seeds", {})) {
      plan.seeds.push_back(parse_number<std::uint64_t>(s, "seeds"));
    }
  }
  plan.corpora = parse_corpus_list(v.get_list("corpora", {}));
  for (const auto& [key, value] : v.entries()) {
    if (key.starts_with("checkpoint.")) {
      plan.checkpoints[key.substr(11)] = value;
    }
  }
  plan.out = v.get("out", plan.out.string());
  plan.jobs = v.get_int("jobs", plan.jobs);
  if (plan.presets.empty() || plan.learning_rates.empty() || plan.seeds.empty()) {
    throw ConfigError("plan needs at least one preset, learning rate and seed");
  }
  if (plan.corpora.empty()) {
    throw ConfigError("plan lists no corpora");
  }
  if (plan.jobs < 1) {
    throw ConfigError("jobs must be >= 1");
  }
  return plan;
}

PlanValues ExperimentPlan::to_values() const {
  PlanValues v;
  write_selftrain_config(selftrain, v);
  v.erase("lr");
  v.set("presets", join(presets));
  std::vector<std::string> items;
  for (const double lr : learning_rates) {
    items.push_back(format_double(lr));
  }
  v.set("learning_rates", join(items));
  items.clear();
  for (const std::uint64_t s : seeds) {
    items.push_back(std::to_string(s));
  }
  v.set("seeds", join(items));
  items.clear();
  for (const CorpusSpec& c : corpora) {
    items.push_back(c.name + ":" + c.path.string());
  }
  v.set("corpora", join(items));
  for (const auto& [preset, path] : checkpoints) {
    v.set("checkpoint." + preset, path.string());
  }
  v.set("out", out.string());
  v.set("jobs", std::to_string(jobs));
  return v;
}

std::vector<RunSpec> ExperimentPlan::runs() const {
  std::vector<RunSpec> out;
  for (const std::string& preset : presets) {
    const auto ckpt = checkpoints.find(preset);
    if (ckpt == checkpoints.end()) {
      throw ConfigError("plan has no checkpoint." + preset);
    }
    for (const double lr : learning_rates) {
      for (const std::uint64_t seed : seeds) {
        RunSpec spec;
        spec.run_id = run_id_for(preset, lr, seed);
        spec.preset = preset;
        spec.seed = seed;
        spec.config = selftrain;
        spec.config.train.learning_rate = lr;
        spec.corpora = corpora;
        spec.checkpoint = ckpt->second;
        out.push_back(std::move(spec));
      }
    }
  }
  return out;
}

std::vector<RunSummary> run_sweep(const ExperimentPlan& plan) {
  std::vector<RunSpec> specs = plan.runs();
  // Absolute paths keep every run.meta usable from any working directory.
  for (RunSpec& spec : specs) {
    spec.checkpoint = std::filesystem::absolute(spec.checkpoint);
    for (CorpusSpec& c : spec.corpora) {
      c.path = std::filesystem::absolute(c.path);
    }
  }
  for (const auto& [preset, path] : plan.checkpoints) {
    if (std::ranges::find(plan.presets, preset) != plan.presets.end() &&
        !std::filesystem::exists(path)) {
      throw ConfigError("base checkpoint for '" + preset + "' not found: " + path.string());
    }
  }
  std::filesystem::create_directories(plan.out);
  plan.to_values().save(plan.out / "plan.txt");

  std::vector<RunSummary> summaries(specs.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto worker = [&]() {
    for (std::size_t i = next++; i < specs.size(); i = next++) {
      const RunSpec& spec = specs[i];
      RunSummary s;
      try {
        s = execute_run(spec, plan.out / spec.run_id);
      } catch (const std::exception& e) {
        s.run_id = spec.run_id;
        s.preset = spec.preset;
        s.learning_rate = spec.config.train.learning_rate;
        s.seed = spec.seed;
        s.max_iters = spec.config.stop.max_iters;
        s.stop_reason = "error";
        s.error = e.what();
      }
      std::lock_guard lock(log_mutex);
      std::cerr << "[" << (i + 1) << "/" << specs.size() << "] " << s.run_id << ": "
                << s.stop_reason;
      if (s.collapse_iteration) {
        std::cerr << " at iteration " << *s.collapse_iteration;
      }
      if (!s.error.empty()) {
        std::cerr << " (" << s.error << ")";
      }
      std::cerr << '\n';
      summaries[i] = std::move(s);
    }
  };
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(plan.jobs),
                                                    std::max<std::size_t>(specs.size(), 1));
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back(worker);
    }
    for (std::thread& t : pool) {
      t.join();
    }
  }
  write_summaries(summaries, plan.out / "summaries.csv");
  return summaries;
}

std::vector<RunSummary> run_lr_sweep(const ExperimentPlan& plan) {
  if (plan.presets.size() != 1) {
    throw ConfigError("an lr sweep uses exactly one preset");
  }
  return run_sweep(plan);
}

std::vector<RunSummary> run_size_sweep(const ExperimentPlan& plan) {
  if (plan.learning_rates.size() != 1) {
    throw ConfigError("a size sweep uses exactly one learning rate");
  }
  return run_sweep(plan);
}

std::string summaries_csv(std::span<const RunSummary> runs) {
  std::vector<std::string> names;
  for (const RunSummary& r : runs) {
    if (!r.corpus_names.empty()) {
      names = r.corpus_names;
      break;
    }
  }
  std::string out =
      "run_id,preset,lr,seed,params,stop_reason,iterations,max_iters,collapse_iteration,"
      "final_train_loss,tail_train_loss";
  for (const std::string& n : names) {
    out += ",val_first_" + n + ",val_mid_" + n + ",val_last_" + n + ",val_slope_" + n;
  }
  out += ",checkpoint_digest\n";
  for (const RunSummary& r : runs) {
    out += r.run_id + "," + r.preset + "," + format_double(r.learning_rate) + "," +
           std::to_string(r.seed) + "," + std::to_string(r.param_count) + "," + r.stop_reason +
           "," + std::to_string(r.iterations) + "," + std::to_string(r.max_iters) + "," +
           (r.collapse_iteration ? std::to_string(*r.collapse_iteration) : "") + "," +
           format_double(r.final_train_loss) + "," + format_double(r.tail_train_loss);
    for (std::size_t c = 0; c < names.size(); ++c) {
      const bool have = c < r.val_first.size();
      const auto cell = [&](const std::vector<double>& v) {
        return have ? format_double(v[c]) : std::string();
      };
      out += "," + cell(r.val_first) + "," + cell(r.val_mid) + "," + cell(r.val_last) + "," +
             cell(r.val_slope);
    }
    out += "," + r.checkpoint_digest + "\n";
  }
  return out;
}

void write_summaries(std::span<const RunSummary> runs, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error("cannot write " + path.string());
  }
  out << summaries_csv(runs);
}

std::vector<RunSummary> load_sweep(const std::filesystem::path& sweep_dir) {
  std::ifstream in(sweep_dir / "summaries.csv");
  if (!in) {
    throw FormatError("cannot read " + (sweep_dir / "summaries.csv").string());
  }
  std::string line;
  std::getline(in, line);
  std::vector<RunSummary> out;
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    const std::string run_id = line.substr(0, line.find(','));
    const auto dir = sweep_dir / run_id;
    if (std::filesystem::exists(dir / "run.meta")) {
      out.push_back(summarize_run(dir));
    } else {
      RunSummary s;
      s.run_id = run_id;
      s.stop_reason = "error";
      s.error = "run directory missing";
      out.push_back(std::move(s));
    }
  }
  return out;
}

}  // namespace collapse
