// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails.
//
//   acceptance [--stage oracles|bases|all] [--work DIR] [--plans DIR]
//
// "oracles" runs only the numerical checks, which need no models. "bases"
// only (re)builds the pretrained base models listed in
// <plans>/pretrain_*.plan; finished bases whose plan and digests still match
// are reused. "all" additionally runs the learning-rate and size sweeps into
// <work> and evaluates every criterion. Paths in plan files are relative to
// the working directory (the source tree under ctest).

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "collapse/errors.hpp"
#include "collapse/evalsuite.hpp"
#include "collapse/experiments.hpp"
#include "collapse/model.hpp"
#include "collapse/optimizer.hpp"
#include "collapse/sampler.hpp"
#include "collapse/selftrain.hpp"
#include "collapse/tensor.hpp"
#include "reference_model.hpp"

namespace fs = std::filesystem;
using namespace collapse;
using collapse::oracle::reference_loss;

namespace {

struct Verdict {
  int id;
  std::string name;
  bool pass;
  std::string detail;
};

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void ensure_bases(const fs::path& plans) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(plans)) {
    const std::string name = e.path().filename().string();
    if (name.starts_with("pretrain_") && name.ends_with(".plan")) {
      files.push_back(e.path());
    }
  }
  std::ranges::sort(files);
  for (const fs::path& f : files) {
    const PlanValues plan = PlanValues::load(f);
    if (const auto meta = pretrain_outputs_current(plan)) {
      std::cout << "base " << meta->get("preset") << ": reusing " << meta->get("out") << "\n";
      continue;
    }
    const auto t0 = std::chrono::steady_clock::now();
    std::cout << "base " << plan.get("preset", "tiny") << ": pretraining from " << f.string()
              << std::endl;
    const PlanValues meta = pretrain_from_plan(plan);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "base " << meta.get("preset") << ": done in " << fmt("%.0f", secs) << " s\n";
  }
  for (const fs::path& f : files) {
    const auto meta = pretrain_outputs_current(PlanValues::load(f));
    if (!meta) {
      throw collapse::Error("base model for " + f.string() + " is missing after pretraining");
    }
    std::cout << "base " << meta->get("preset") << ": " << meta->get("info.param_count")
              << " params";
    for (const auto& [k, v] : meta->entries()) {
      if (k.starts_with("info.final_val_loss_")) {
        std::cout << ", val " << k.substr(20) << " " << fmt("%.4f", std::stod(v));
      }
    }
    std::cout << "\n";
  }
}

std::vector<RunSummary> sweep(const fs::path& plan_file, const fs::path& out, bool size) {
  PlanValues v = PlanValues::load(plan_file);
  v.set("out", fs::absolute(out).string());
  const ExperimentPlan plan = ExperimentPlan::from_values(v);
  fs::remove_all(plan.out);
  const std::vector<RunSummary> runs = size ? run_size_sweep(plan) : run_lr_sweep(plan);
  for (const RunSummary& r : runs) {
    if (fs::exists(plan.out / r.run_id / "records.csv")) {
      run_transcript_capture(plan.out / r.run_id);
    }
  }
  emit_report(plan.out, plan.out / "report");
  return runs;
}

std::vector<const RunSummary*> select(const std::vector<RunSummary>& runs,
                                      const std::function<bool(const RunSummary&)>& keep) {
  std::vector<const RunSummary*> out;
  for (const RunSummary& r : runs) {
    if (keep(r)) {
      out.push_back(&r);
    }
  }
  return out;
}

std::vector<double> sorted_rates(const std::vector<RunSummary>& runs) {
  std::vector<double> rates;
  for (const RunSummary& r : runs) {
    if (std::ranges::find(rates, r.learning_rate) == rates.end()) {
      rates.push_back(r.learning_rate);
    }
  }
  std::ranges::sort(rates);
  return rates;
}

std::string list(const std::vector<double>& xs, const char* spec) {
  std::string s = "[";
  for (std::size_t i = 0; i < xs.size(); ++i) {
    s += (i ? " " : "") + fmt(spec, xs[i]);
  }
  return s + "]";
}

// ---- criteria ----------------------------------------------------------------

Verdict collapse_occurs(const std::vector<RunSummary>& lr_runs) {
  const double top = sorted_rates(lr_runs).back();
  const auto runs = select(lr_runs, [&](const RunSummary& r) { return r.learning_rate == top; });
  int collapsed = 0;
  double slowest = 0.0;
  std::vector<double> at;
  for (const RunSummary* r : runs) {
    if (r->stop_reason == "collapsed" && r->collapse_iteration && *r->collapse_iteration < 2000) {
      ++collapsed;
      at.push_back(*r->collapse_iteration);
    }
    slowest = std::max(slowest, r->wall_seconds);
  }
  const bool pass = runs.size() == 5 && collapsed >= 4 && slowest < 15 * 60;
  return {1, "collapse occurs", pass,
          std::to_string(collapsed) + "/" + std::to_string(runs.size()) + " runs at lr=" +
              fmt("%g", top) + " collapsed (need >=4/5), collapse iterations " +
              list(at, "%.0f") + ", slowest run " + fmt("%.1f", slowest) + " s (limit 900 s)"};
}

Verdict lr_ordering(const std::vector<RunSummary>& lr_runs) {
  std::vector<double> medians;
  for (const double lr : sorted_rates(lr_runs)) {
    std::vector<double> it;
    for (const RunSummary* r :
         select(lr_runs, [&](const RunSummary& r) { return r.learning_rate == lr; })) {
      it.push_back(r->collapse_or_cap());
    }
    medians.push_back(median(it));
  }
  const bool pass = medians.size() == 3 && std::ranges::is_sorted(medians, std::greater<>());
  return {2, "lr ordering", pass,
          "median collapse iteration per lr " + list(sorted_rates(lr_runs), "%g") + " = " +
              list(medians, "%.1f") + " (must be non-increasing)"};
}

Verdict val_rise(int id, const char* name, const std::vector<RunSummary>& lr_runs,
                 std::size_t corpus) {
  const auto rates = sorted_rates(lr_runs);
  const double mid = rates[rates.size() / 2];
  const auto runs = select(lr_runs, [&](const RunSummary& r) { return r.learning_rate == mid; });
  std::vector<double> first;
  std::vector<double> last;
  int rising = 0;
  std::string corpus_name = "?";
  for (const RunSummary* r : runs) {
    if (r->val_first.size() <= corpus) {
      continue;
    }
    corpus_name = r->corpus_names[corpus];
    first.push_back(r->val_first[corpus]);
    last.push_back(r->val_last[corpus]);
    rising += r->val_slope[corpus] > 0.0 ? 1 : 0;
  }
  const double f = median(first);
  const double l = median(last);
  const bool pass = runs.size() == 5 && first.size() == 5 && l >= 1.05 * f && rising >= 4;
  return {id, name, pass,
          corpus_name + " at lr=" + fmt("%g", mid) + ": median val_loss(0) " + fmt("%.4f", f) +
              ", median val_loss(last) " + fmt("%.4f", l) + " (ratio " + fmt("%.3f", l / f) +
              ", need >=1.05), positive slope in " + std::to_string(rising) + "/" +
              std::to_string(runs.size()) + " seeds (need >=4)"};
}

Verdict train_loss_to_zero(const std::vector<RunSummary>& lr_runs,
                           const std::vector<RunSummary>& size_runs) {
  std::vector<double> tails;
  for (const auto* runs : {&lr_runs, &size_runs}) {
    for (const RunSummary& r : *runs) {
      if (r.stop_reason == "collapsed") {
        tails.push_back(r.tail_train_loss);
      }
    }
  }
  const double m = median(tails);
  return {4, "train loss collapses", !tails.empty() && m < 0.2,
          "median over " + std::to_string(tails.size()) +
              " collapsed runs of the final-5-iteration train loss median = " + fmt("%.4f", m) +
              " nats/token (need <0.2)"};
}

Verdict size_effect(const std::vector<RunSummary>& size_runs) {
  std::map<std::string, std::vector<double>> by_preset;
  std::map<std::string, std::int64_t> params;
  for (const RunSummary& r : size_runs) {
    by_preset[r.preset].push_back(r.collapse_or_cap());
    params[r.preset] = r.param_count;
  }
  std::string detail = size_runs.empty()
                           ? "no runs"
                           : "at lr=" + fmt("%g", size_runs.front().learning_rate) + ":";
  for (const char* p : {"tiny", "small", "medium"}) {
    if (by_preset.count(p)) {
      detail += std::string(" ") + p + " (" + std::to_string(params[p]) + " params) median " +
                fmt("%.1f", median(by_preset[p])) + " " + list(by_preset[p], "%.0f") + ";";
    }
  }
  const bool have = by_preset["tiny"].size() == 5 && by_preset["medium"].size() == 5;
  const bool pass = have && median(by_preset["medium"]) <= median(by_preset["tiny"]);
  return {5, "size effect", pass, detail + " need medium <= tiny"};
}

// Gradient check, softmax, cross-entropy, top-k sampler and Adam oracles.
Verdict numerical_oracles() {
  std::vector<std::string> failures;
  std::string detail;

  {  // autodiff vs central differences of an independent double-precision forward
    ModelConfig c;
    c.n_layer = 2;
    c.n_head = 2;
    c.n_embd = 16;
    c.block_size = 8;
    c.vocab_size = 32;
    ModelState m = init_model(c, 21);
    Rng noise(77);
    for (Tensor& t : m.parameters()) {
      for (float& v : t.mutable_data()) {
        v += static_cast<float>(0.3 * noise.normal());
      }
    }
    const TokenSequence inputs{3, 17, 5, 30, 2, 2, 9, 11, 4, 0, 31, 8, 8, 1, 20, 13};
    const TokenSequence targets{17, 5, 30, 2, 2, 9, 11, 6, 0, 31, 8, 8, 1, 20, 13, 7};
    m.zero_grad();
    Tape tape;
    const Tensor loss = cross_entropy_logits(forward(m, inputs, 2, Mode::eval, &tape), targets, &tape);
    tape.backward(loss);
    std::vector<std::vector<double>> params;
    for (const Tensor& t : m.parameters()) {
      params.emplace_back(t.data().begin(), t.data().end());
    }
    const double ref = reference_loss(c, params, inputs, targets, 2);
    const double forward_err = std::abs(ref - loss.item());
    double worst = 0.0;
    const std::vector<Tensor> tensors = m.parameters();
    for (std::size_t k = 0; k < params.size(); ++k) {
      double diff = 0.0;
      double na = 0.0;
      double nn = 0.0;
      for (std::size_t i = 0; i < params[k].size(); ++i) {
        const double saved = params[k][i];
        params[k][i] = saved + 1e-6;
        const double up = reference_loss(c, params, inputs, targets, 2);
        params[k][i] = saved - 1e-6;
        const double down = reference_loss(c, params, inputs, targets, 2);
        params[k][i] = saved;
        const double numeric = (up - down) / 2e-6;
        const double analytic = tensors[k].grad()[i];
        diff += (numeric - analytic) * (numeric - analytic);
        na += analytic * analytic;
        nn += numeric * numeric;
      }
      const double denom = std::sqrt(std::max(na, nn));
      worst = std::max(worst, denom == 0.0 ? 0.0 : std::sqrt(diff) / denom);
    }
    detail += "forward vs double reference " + fmt("%.1e", forward_err) + ", ";
    if (!(forward_err < 1e-4)) {
      failures.push_back("reference forward");
    }
    detail += "grad rel err " + fmt("%.2e", worst);
    if (!(worst < 1e-3)) {
      failures.push_back("gradient check");
    }
  }
  {  // softmax rows
    Rng rng(5);
    std::vector<float> x(64 * 256);
    for (float& v : x) {
      v = static_cast<float>(4.0 * rng.normal());
    }
    const Tensor s = softmax(Tensor::from_data({64, 256}, x));
    double worst = 0.0;
    for (std::size_t r = 0; r < 64; ++r) {
      double sum = 0.0;
      for (std::size_t c = 0; c < 256; ++c) {
        sum += s.at(r, c);
      }
      worst = std::max(worst, std::abs(sum - 1.0));
    }
    detail += ", softmax row sum err " + fmt("%.1e", worst);
    if (!(worst <= 1e-6)) {
      failures.push_back("softmax");
    }
  }
  {  // cross-entropy vs long-double log-sum-exp
    Rng rng(6);
    std::vector<float> x(4 * 7);
    for (float& v : x) {
      v = static_cast<float>(2.0 * rng.normal());
    }
    const std::int32_t targets[] = {0, 6, 3, 3};
    const double ce = cross_entropy_logits(Tensor::from_data({4, 7}, x), targets).item();
    long double oracle = 0.0L;
    for (std::size_t r = 0; r < 4; ++r) {
      long double mx = x[r * 7];
      for (std::size_t c = 0; c < 7; ++c) {
        mx = std::max<long double>(mx, x[r * 7 + c]);
      }
      long double acc = 0.0L;
      for (std::size_t c = 0; c < 7; ++c) {
        acc += std::exp(static_cast<long double>(x[r * 7 + c]) - mx);
      }
      oracle += mx + std::log(acc) - x[r * 7 + static_cast<std::size_t>(targets[r])];
    }
    const double err = std::abs(ce - static_cast<double>(oracle / 4.0L));
    detail += ", cross-entropy err " + fmt("%.1e", err);
    if (!(err < 1e-5)) {
      failures.push_back("cross-entropy");
    }
  }
  {  // top-k sampler, total variation at 1e5 draws
    const std::vector<float> logits{2.0F, 1.0F, 0.0F, -1.0F};
    SamplingConfig cfg;
    cfg.temperature = 0.8;
    cfg.top_k = 2;
    const double a = std::exp(2.0 / 0.8);
    const double b = std::exp(1.0 / 0.8);
    const double expected[4] = {a / (a + b), b / (a + b), 0.0, 0.0};
    Rng rng(2024);
    int counts[4] = {0, 0, 0, 0};
    for (int i = 0; i < 100000; ++i) {
      counts[sample_next(logits, cfg, rng)] += 1;
    }
    double tv = 0.0;
    for (int i = 0; i < 4; ++i) {
      tv += 0.5 * std::abs(counts[i] / 100000.0 - expected[i]);
    }
    detail += ", top-k TV " + fmt("%.4f", tv);
    if (!(tv < 0.02)) {
      failures.push_back("sampler");
    }
  }
  {  // Adam vs scalar recurrence, 10 steps
    TrainConfig cfg;
    cfg.learning_rate = 1e-2;
    Tensor p = Tensor::parameter({1, 2}, {0.5F, -1.25F});
    std::vector<Tensor> params{p};
    AdamState state = AdamState::for_parameters(params);
    long double x[2] = {0.5L, -1.25L};
    long double m[2] = {0, 0};
    long double v[2] = {0, 0};
    for (int t = 1; t <= 10; ++t) {
      const float g[2] = {0.3F * static_cast<float>(t), -0.7F + 0.1F * static_cast<float>(t)};
      p.mutable_grad()[0] = g[0];
      p.mutable_grad()[1] = g[1];
      adam_step(params, state, cfg);
      for (int i = 0; i < 2; ++i) {
        m[i] = 0.9L * m[i] + 0.1L * g[i];
        v[i] = 0.95L * v[i] + 0.05L * g[i] * g[i];
        x[i] -= 1e-2L * (m[i] / (1.0L - std::pow(0.9L, t))) /
                (std::sqrt(v[i] / (1.0L - std::pow(0.95L, t))) + 1e-8L);
      }
    }
    const double err = std::max(std::abs(p.data()[0] - static_cast<double>(x[0])),
                                std::abs(p.data()[1] - static_cast<double>(x[1])));
    detail += ", Adam err " + fmt("%.1e", err);
    if (!(err < 1e-7)) {
      failures.push_back("adam");
    }
  }
  std::string failed;
  for (const std::string& f : failures) {
    failed += " " + f;
  }
  return {7, "numerical oracles", failures.empty(),
          detail + (failed.empty() ? "" : "; failed:" + failed)};
}

Verdict determinism(const std::vector<RunSummary>& lr_runs, const fs::path& lr_dir,
                    const std::vector<RunSummary>& size_runs, const fs::path& size_dir,
                    const fs::path& work) {
  // Seed 1 of every learning rate, plus seed 1 of the largest preset.
  std::vector<fs::path> dirs;
  for (const RunSummary& r : lr_runs) {
    if (r.seed == 1) {
      dirs.push_back(lr_dir / r.run_id);
    }
  }
  for (const RunSummary& r : size_runs) {
    if (r.seed == 1 && r.preset == "medium") {
      dirs.push_back(size_dir / r.run_id);
    }
  }
  int identical = 0;
  std::string mismatched;
  for (const fs::path& d : dirs) {
    const fs::path again = work / "rerun" / d.filename();
    fs::remove_all(again);
    try {
      execute_run(RunSpec::from_values(PlanValues::load(d / "run.meta")), again);
    } catch (const std::exception& e) {
      mismatched += " " + d.filename().string() + "(" + e.what() + ")";
      continue;
    }
    if (read_text(d / "records.csv") == read_text(again / "records.csv")) {
      ++identical;
    } else {
      mismatched += " " + d.filename().string();
    }
  }
  const bool pass = !dirs.empty() && identical == static_cast<int>(dirs.size());
  return {8, "determinism", pass,
          std::to_string(identical) + "/" + std::to_string(dirs.size()) +
              " runs re-executed from run.meta reproduce records.csv byte for byte" +
              (mismatched.empty() ? "" : "; differing:" + mismatched)};
}

Verdict transcript_shape(const std::vector<RunSummary>& lr_runs, const fs::path& lr_dir) {
  int checked = 0;
  int good = 0;
  std::string bad;
  for (const RunSummary& r : lr_runs) {
    if (r.stop_reason != "collapsed") {
      continue;
    }
    ++checked;
    const fs::path dir = lr_dir / r.run_id;
    const std::string doc = read_text(dir / "transcript.md");
    std::vector<int> rows;
    std::istringstream in(doc);
    std::string line;
    while (std::getline(in, line)) {
      if (line.starts_with("## Iteration ")) {
        rows.push_back(std::stoi(line.substr(13)));
      }
    }
    const int last = r.iterations - 1;
    std::vector<int> want;
    for (const int i : {0, 50, 100, last}) {
      const int c = std::clamp(i, 0, last);
      if (std::ranges::find(want, c) == want.end()) {
        want.push_back(c);
      }
    }
    std::ranges::sort(want);
    const TokenSequence final_sample =
        encode(read_text(dir / "samples" / ("iter_" + std::to_string(last) + ".txt")));
    const double ratio = distinct_ngram_ratio(final_sample, 4);
    if (rows == want && !final_sample.empty() && ratio < 0.1) {
      ++good;
    } else {
      bad += " " + r.run_id;
    }
  }
  const bool pass = checked > 0 && good == checked;
  return {9, "transcript shape", pass,
          std::to_string(good) + "/" + std::to_string(checked) +
              " collapsed runs have rows {0,50,100,last} (clamped) and a final sample with "
              "distinct 4-gram ratio < 0.1" +
              (bad.empty() ? "" : "; failing:" + bad)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks for the self-training collapse lab"};
  std::string stage = "all";
  std::string work = "runs/acceptance";
  std::string plans = "plans";
  app.add_option("--stage", stage, "oracles, bases or all")
      ->check(CLI::IsMember({"oracles", "bases", "all"}));
  app.add_option("--work", work, "Directory for sweep outputs");
  app.add_option("--plans", plans, "Directory holding the plan files");
  CLI11_PARSE(app, argc, argv);

  try {
    if (stage == "oracles") {
      const Verdict v = numerical_oracles();
      std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << v.id << " (" << v.name
                << "): " << v.detail << "\n";
      return v.pass ? 0 : 1;
    }
    ensure_bases(plans);
    if (stage == "bases") {
      return 0;
    }
    const fs::path work_dir = fs::absolute(work);
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path lr_dir = work_dir / "lr_sweep";
    const fs::path size_dir = work_dir / "size_sweep";
    const std::vector<RunSummary> lr_runs = sweep(fs::path(plans) / "lr_sweep.plan", lr_dir, false);
    const std::vector<RunSummary> size_runs =
        sweep(fs::path(plans) / "size_sweep.plan", size_dir, true);

    std::vector<Verdict> verdicts;
    verdicts.push_back(collapse_occurs(lr_runs));
    verdicts.push_back(lr_ordering(lr_runs));
    verdicts.push_back(val_rise(3, "validation loss rises", lr_runs, 0));
    verdicts.push_back(train_loss_to_zero(lr_runs, size_runs));
    verdicts.push_back(size_effect(size_runs));
    verdicts.push_back(val_rise(6, "second corpus", lr_runs, 1));
    verdicts.push_back(numerical_oracles());
    verdicts.push_back(determinism(lr_runs, lr_dir, size_runs, size_dir, work_dir));
    verdicts.push_back(transcript_shape(lr_runs, lr_dir));

    std::ostringstream report;
    bool all = true;
    for (const Verdict& v : verdicts) {
      report << (v.pass ? "PASS" : "FAIL") << " criterion " << v.id << " (" << v.name
             << "): " << v.detail << "\n";
      all = all && v.pass;
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report << (all ? "all criteria passed" : "some criteria failed") << " in " << fmt("%.0f", secs)
           << " s\n";
    std::cout << "\n" << report.str();
    std::ofstream(work_dir / "acceptance.txt", std::ios::trunc) << report.str();
    return all ? 0 : 1;
  } catch (const std::exception& e) {
    std::cerr << "acceptance: " << e.what() << "\n";
    return 2;
  }
}
