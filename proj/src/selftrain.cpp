#include "collapse/selftrain.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "collapse/errors.hpp"

namespace collapse {

void StopCriteria::validate() const {
  if (max_iters < 1) {
    throw ConfigError("max_iters must be >= 1");
  }
  if (!(collapse_threshold > 0.0 && collapse_threshold < 1.0)) {
    throw ConfigError("collapse_threshold must be in (0, 1)");
  }
  if (collapse_patience < 1) {
    throw ConfigError("collapse_patience must be >= 1");
  }
}

void SelfTrainConfig::validate() const {
  sampling.validate();
  train.validate();
  stop.validate();
  if (eval_stride < 1) {
    throw ConfigError("eval_stride must be >= 1");
  }
  if (snapshot_every < 0) {
    throw ConfigError("snapshot_every must be >= 0");
  }
}

double distinct_ngram_ratio(std::span<const TokenId> ids, std::size_t n) {
  if (n == 0 || ids.size() < n) {
    return 1.0;
  }
  std::set<std::vector<TokenId>> seen;
  const std::size_t total = ids.size() - n + 1;
  for (std::size_t i = 0; i < total; ++i) {
    seen.emplace(ids.begin() + static_cast<std::ptrdiff_t>(i),
                 ids.begin() + static_cast<std::ptrdiff_t>(i + n));
  }
  return static_cast<double>(seen.size()) / static_cast<double>(total);
}

CollapseMetrics sequence_metrics(std::span<const TokenId> ids, double train_loss) {
  CollapseMetrics m;
  m.train_loss = train_loss;
  m.distinct_4gram_ratio = distinct_ngram_ratio(ids, 4);
  if (ids.empty()) {
    return m;
  }
  std::map<TokenId, std::size_t> counts;
  for (const TokenId id : ids) {
    ++counts[id];
  }
  const auto n = static_cast<double>(ids.size());
  std::size_t top = 0;
  double entropy = 0.0;
  for (const auto& [id, c] : counts) {
    top = std::max(top, c);
    const double p = static_cast<double>(c) / n;
    entropy -= p * std::log(p);
  }
  m.max_token_fraction = static_cast<double>(top) / n;
  m.token_entropy = std::max(0.0, entropy);
  return m;
}

bool detect_collapse(std::span<const CollapseMetrics> history, const StopCriteria& criteria) {
  const auto need = static_cast<std::size_t>(criteria.collapse_patience);
  if (history.size() < need) {
    return false;
  }
  return std::all_of(history.end() - static_cast<std::ptrdiff_t>(need), history.end(),
                     [&](const CollapseMetrics& m) {
                       return m.distinct_4gram_ratio < criteria.collapse_threshold;
                     });
}

SelfTrainState SelfTrainState::start(const ModelState& initial, const SelfTrainConfig& config,
                                     std::uint64_t seed) {
  config.validate();
  SelfTrainState s;
  s.model = initial.clone();
  s.adam = AdamState::for_model(s.model);
  s.sampling_rng = Rng::stream(seed, "sampling");
  s.dropout_rng = Rng::stream(seed, "dropout");
  s.config = config;
  return s;
}

namespace {

// Mean loss over all generated tokens as a differentiable scalar.
Tensor windowed_loss(const ModelState& model, std::span<const TokenId> generated,
                     const std::string& prompt, Mode mode, Tape* tape, Rng* dropout_rng) {
  if (generated.empty()) {
    throw ContractError("cannot score an empty sequence");
  }
  const TokenId context = prompt.empty() ? kStartToken : encode(prompt).back();
  TokenSequence stream;
  stream.reserve(generated.size() + 1);
  stream.push_back(context);
  stream.insert(stream.end(), generated.begin(), generated.end());

  const std::size_t n = generated.size();
  const auto block = static_cast<std::size_t>(model.config.block_size);
  const std::size_t full = n / block;
  const std::size_t rest = n % block;

  auto group_loss = [&](std::size_t first_window, std::size_t windows, std::size_t len) {
    std::vector<TokenId> inputs;
    std::vector<TokenId> targets;
    for (std::size_t w = first_window; w < first_window + windows; ++w) {
      const std::size_t s = w * block;
      inputs.insert(inputs.end(), stream.begin() + static_cast<std::ptrdiff_t>(s),
                    stream.begin() + static_cast<std::ptrdiff_t>(s + len));
      targets.insert(targets.end(), stream.begin() + static_cast<std::ptrdiff_t>(s + 1),
                     stream.begin() + static_cast<std::ptrdiff_t>(s + len + 1));
    }
    const Tensor logits = forward(model, inputs, windows, mode, tape, dropout_rng);
    const Tensor mean = cross_entropy_logits(logits, targets, tape);
    const double weight = static_cast<double>(targets.size()) / static_cast<double>(n);
    return weight == 1.0 ? mean : scale(mean, static_cast<float>(weight), tape);
  };

  if (rest == 0) {
    return group_loss(0, full, block);
  }
  Tensor tail = group_loss(full, 1, rest);
  if (full == 0) {
    return tail;
  }
  return add(group_loss(0, full, block), tail, tape);
}

}  // namespace

double sequence_loss(const ModelState& model, std::span<const TokenId> generated,
                     const std::string& prompt) {
  return windowed_loss(model, generated, prompt, Mode::eval, nullptr, nullptr).item();
}

IterationRecord self_train_step(SelfTrainState& state) {
  const auto t0 = std::chrono::steady_clock::now();
  TokenSequence sample = generate(state.model, state.config.sampling, state.sampling_rng);
  ++state.sequences_generated;
  IterationRecord rec = train_on_sequence(state, std::move(sample));
  rec.wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

IterationRecord train_on_sequence(SelfTrainState& state, TokenSequence sample) {
  const auto t0 = std::chrono::steady_clock::now();
  const SelfTrainConfig& cfg = state.config;
  state.last_sample = std::move(sample);

  state.model.zero_grad();
  Tape tape;
  const Tensor loss = windowed_loss(state.model, state.last_sample, cfg.sampling.prompt,
                                    Mode::train, &tape, &state.dropout_rng);
  tape.backward(loss);

  auto params = state.model.parameters();
  const double clip = clip_grad_norm(params, cfg.train.grad_clip);
  adam_step(params, state.adam, cfg.train);
  state.model.zero_grad();

  IterationRecord rec;
  rec.iteration = state.iteration;
  rec.train_loss = loss.item();
  rec.metrics = sequence_metrics(state.last_sample, rec.train_loss);
  rec.clip_scale = clip;
  ++state.iteration;
  rec.wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

const char* stop_reason_name(StopReason reason) {
  switch (reason) {
    case StopReason::collapsed:
      return "collapsed";
    case StopReason::max_iters:
      return "max_iters";
    case StopReason::numeric_failure:
      return "numeric_failure";
  }
  return "unknown";
}

StopReason parse_stop_reason(std::string_view name) {
  if (name == "collapsed") {
    return StopReason::collapsed;
  }
  if (name == "max_iters") {
    return StopReason::max_iters;
  }
  if (name == "numeric_failure") {
    return StopReason::numeric_failure;
  }
  throw FormatError("unknown stop reason '" + std::string(name) + "'");
}

std::string format_double(double v) {
  if (std::isnan(v)) {
    return "";
  }
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string records_csv_header(std::span<const std::string> corpus_names) {
  std::string h = "iter,train_loss";
  for (const std::string& name : corpus_names) {
    h += ",val_loss_" + name;
  }
  h += ",distinct_4gram_ratio,max_token_fraction,token_entropy,clip_scale,collapsed,sample_file";
  return h;
}

std::string records_csv_row(const IterationRecord& r) {
  std::string row = std::to_string(r.iteration) + "," + format_double(r.train_loss);
  for (const double v : r.val_losses) {
    row += "," + format_double(v);
  }
  row += "," + format_double(r.metrics.distinct_4gram_ratio) + "," +
         format_double(r.metrics.max_token_fraction) + "," +
         format_double(r.metrics.token_entropy) + "," + format_double(r.clip_scale) + "," +
         (r.collapsed ? "1" : "0") + "," + r.sample_file;
  return row;
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') {
    out.emplace_back();
  }
  return out;
}

double parse_double_cell(const std::string& s) {
  if (s.empty()) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw FormatError("records.csv: bad number '" + s + "'");
  }
  return v;
}

}  // namespace

RecordsTable read_records_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw FormatError("cannot read " + path.string());
  }
  std::string line;
  if (!std::getline(in, line)) {
    throw FormatError("records.csv is empty: " + path.string());
  }
  const auto header = split_csv(line);
  RecordsTable table;
  for (const std::string& col : header) {
    if (col.starts_with("val_loss_")) {
      table.corpus_names.push_back(col.substr(9));
    }
  }
  if (header != split_csv(records_csv_header(table.corpus_names))) {
    throw FormatError("records.csv: unexpected header in " + path.string());
  }
  const std::size_t nc = table.corpus_names.size();
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    const auto cells = split_csv(line);
    if (cells.size() != header.size()) {
      throw FormatError("records.csv: row with " + std::to_string(cells.size()) + " cells, expected " +
                        std::to_string(header.size()));
    }
    IterationRecord r;
    r.iteration = std::stoi(cells[0]);
    r.train_loss = parse_double_cell(cells[1]);
    for (std::size_t c = 0; c < nc; ++c) {
      r.val_losses.push_back(parse_double_cell(cells[2 + c]));
    }
    r.metrics.train_loss = r.train_loss;
    r.metrics.distinct_4gram_ratio = parse_double_cell(cells[2 + nc]);
    r.metrics.max_token_fraction = parse_double_cell(cells[3 + nc]);
    r.metrics.token_entropy = parse_double_cell(cells[4 + nc]);
    r.clip_scale = parse_double_cell(cells[5 + nc]);
    r.collapsed = cells[6 + nc] == "1";
    r.sample_file = cells[7 + nc];
    if (r.iteration != static_cast<int>(table.records.size())) {
      throw FormatError("records.csv: iterations are not densely indexed");
    }
    table.records.push_back(std::move(r));
  }
  return table;
}

RunResult run_self_training(const ModelState& initial, const SelfTrainConfig& config,
                            std::span<const Corpus> corpora, std::uint64_t seed,
                            const std::optional<std::filesystem::path>& out_dir) {
  const auto started = std::chrono::steady_clock::now();
  SelfTrainState state = SelfTrainState::start(initial, config, seed);
  const auto block = static_cast<std::size_t>(initial.config.block_size);
  std::vector<std::vector<std::size_t>> windows;
  std::vector<std::string> names;
  for (const Corpus& c : corpora) {
    windows.push_back(select_windows(c, block, config.eval));
    names.push_back(c.name);
  }
  auto evaluate_all = [&](const ModelState& m) {
    std::vector<double> out;
    for (std::size_t c = 0; c < corpora.size(); ++c) {
      out.push_back(eval_val_loss(m, corpora[c], windows[c]));
    }
    return out;
  };

  std::ofstream records_out;
  std::ofstream timing_out;
  if (out_dir) {
    std::filesystem::create_directories(*out_dir / "samples");
    if (config.snapshot_every > 0) {
      std::filesystem::create_directories(*out_dir / "snapshots");
    }
    records_out.open(*out_dir / "records.csv", std::ios::trunc);
    timing_out.open(*out_dir / "timing.csv", std::ios::trunc);
    if (!records_out || !timing_out) {
      throw Error("cannot write run logs in " + out_dir->string());
    }
    records_out << records_csv_header(names) << '\n' << std::flush;
    timing_out << "iter,wall_ms\n" << std::flush;
  }

  RunResult result;
  std::vector<CollapseMetrics> history;
  result.reason = StopReason::max_iters;
  for (int i = 0; i < config.stop.max_iters; ++i) {
    IterationRecord rec;
    try {
      std::vector<double> vals(corpora.size(), std::numeric_limits<double>::quiet_NaN());
      if (i % config.eval_stride == 0) {
        vals = evaluate_all(state.model);
      }
      rec = self_train_step(state);
      rec.val_losses = std::move(vals);
    } catch (const NumericError& e) {
      result.reason = StopReason::numeric_failure;
      result.error = e.what();
      break;
    }
    history.push_back(rec.metrics);
    rec.collapsed = detect_collapse(history, config.stop);
    if (out_dir) {
      rec.sample_file = "samples/iter_" + std::to_string(i) + ".txt";
      std::ofstream sample(*out_dir / rec.sample_file, std::ios::binary | std::ios::trunc);
      const std::string bytes = decode(state.last_sample, static_cast<std::size_t>(
                                                              state.model.config.vocab_size));
      sample.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
      records_out << records_csv_row(rec) << '\n' << std::flush;
      timing_out << i << ',' << format_double(rec.wall_ms) << '\n' << std::flush;
      if (config.snapshot_every > 0 && (i + 1) % config.snapshot_every == 0) {
        const auto base = *out_dir / "snapshots" / ("iter_" + std::to_string(i + 1));
        save_checkpoint(state.model, base.string() + ".ckpt");
        save_adam_state(state.adam, base.string() + ".adam");
        std::ofstream(base.string() + ".rng") << state.sampling_rng.save_state() << '\n'
                                              << state.dropout_rng.save_state() << '\n';
      }
    }
    result.records.push_back(rec);
    if (rec.collapsed) {
      result.reason = StopReason::collapsed;
      result.collapse_iteration = i;
      break;
    }
  }

  if (result.reason != StopReason::numeric_failure) {
    try {
      result.final_val_losses = evaluate_all(state.model);
    } catch (const NumericError& e) {
      result.reason = StopReason::numeric_failure;
      result.error = e.what();
    }
  }
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  if (out_dir) {
    std::ofstream meta(*out_dir / "result.meta", std::ios::trunc);
    meta << "stop_reason=" << stop_reason_name(result.reason) << '\n'
         << "iterations=" << result.records.size() << '\n'
         << "collapse_iteration="
         << (result.collapse_iteration ? std::to_string(*result.collapse_iteration) : "") << '\n';
    for (std::size_t c = 0; c < result.final_val_losses.size(); ++c) {
      meta << "final_val_loss_" << names[c] << '=' << format_double(result.final_val_losses[c])
           << '\n';
    }
    meta << "wall_seconds=" << format_double(result.wall_seconds) << '\n';
    if (!result.error.empty()) {
      meta << "error=" << result.error << '\n';
    }
  }
  result.final_model = std::move(state.model);
  return result;
}

}  // namespace collapse
