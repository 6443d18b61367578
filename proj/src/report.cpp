#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "collapse/errors.hpp"
#include "collapse/experiments.hpp"

namespace collapse {

// ---- transcripts -----------------------------------------------------------

std::vector<int> transcript_iterations(int last) {
  std::set<int> rows;
  for (const int i : {0, 50, 100, last}) {
    rows.insert(std::clamp(i, 0, std::max(last, 0)));
  }
  return {rows.begin(), rows.end()};
}

std::string run_transcript_capture(const std::filesystem::path& run_dir) {
  const RecordsTable table = read_records_csv(run_dir / "records.csv");
  std::string run_id = run_dir.filename().string();
  std::string reason;
  if (std::filesystem::exists(run_dir / "run.meta")) {
    run_id = PlanValues::load(run_dir / "run.meta").get("run_id", run_id);
  }
  if (std::filesystem::exists(run_dir / "result.meta")) {
    reason = PlanValues::load(run_dir / "result.meta").get("stop_reason", "");
  }

  std::ostringstream doc;
  doc << "# Transcript: " << run_id << "\n\n";
  doc << "iterations: " << table.records.size() << "\n";
  if (!reason.empty()) {
    doc << "stop reason: " << reason << "\n";
  }
  if (table.records.empty()) {
    doc << "\n(no iterations recorded)\n";
  }
  const int last = static_cast<int>(table.records.size()) - 1;
  for (const int it : table.records.empty() ? std::vector<int>{} : transcript_iterations(last)) {
    doc << "\n## Iteration " << it << "\n\n";
    const IterationRecord& rec = table.records[static_cast<std::size_t>(it)];
    const std::string rel =
        rec.sample_file.empty() ? "samples/iter_" + std::to_string(it) + ".txt" : rec.sample_file;
    std::ifstream in(run_dir / rel, std::ios::binary);
    if (!in) {
      doc << "(sample missing: " << rel << ")\n";
      continue;
    }
    std::ostringstream bytes;
    bytes << in.rdbuf();
    const TokenSequence ids = encode(bytes.str());
    doc << "train loss: " << format_double(rec.train_loss) << "\n";
    doc << "distinct 4-gram ratio: " << format_double(distinct_ngram_ratio(ids, 4)) << "\n\n";
    doc << "````text\n" << display_text(ids) << "\n````\n";
  }
  const std::string text = doc.str();
  std::ofstream out(run_dir / "transcript.md", std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error("cannot write " + (run_dir / "transcript.md").string());
  }
  out << text;
  return text;
}

// ---- figures ---------------------------------------------------------------

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, sep)) {
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == sep) {
    out.emplace_back();
  }
  return out;
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  std::string s = buf;
  return s == "-0" || s == "-0.0" || s == "-0.00" ? s.substr(1) : s;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (const char c : s) {
    switch (c) {
      case '&':
        out += "&amp;";
        break;
      case '<':
        out += "&lt;";
        break;
      case '>':
        out += "&gt;";
        break;
      case '"':
        out += "&quot;";
        break;
      default:
        out += c;
    }
  }
  return out;
}

// Round a raw step to 1, 2 or 5 times a power of ten.
double nice_step(double raw) {
  if (!(raw > 0.0) || !std::isfinite(raw)) {
    return 1.0;
  }
  const double p = std::pow(10.0, std::floor(std::log10(raw)));
  const double m = raw / p;
  return (m <= 1.0 ? 1.0 : m <= 2.0 ? 2.0 : m <= 5.0 ? 5.0 : 10.0) * p;
}

struct Axis {
  double lo = 0.0;
  double hi = 1.0;
  double step = 0.2;
};

Axis nice_axis(double lo, double hi) {
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double step = nice_step((hi - lo) / 5.0);
  return {std::floor(lo / step) * step, std::ceil(hi / step) * step, step};
}

int tick_digits(double step) {
  return step >= 1.0 ? 0 : static_cast<int>(std::ceil(-std::log10(step) - 1e-9));
}

// Median over the runs that have a finite value at each x.
std::vector<SeriesPoint> median_series(const std::string& label,
                                       const std::vector<std::vector<double>>& curves) {
  std::size_t longest = 0;
  for (const auto& c : curves) {
    longest = std::max(longest, c.size());
  }
  std::vector<SeriesPoint> out;
  for (std::size_t i = 0; i < longest; ++i) {
    std::vector<double> vals;
    for (const auto& c : curves) {
      if (i < c.size() && std::isfinite(c[i])) {
        vals.push_back(c[i]);
      }
    }
    if (!vals.empty()) {
      out.push_back({label, static_cast<double>(i), median(vals)});
    }
  }
  return out;
}

struct Curves {
  std::vector<std::vector<double>> train;
  std::vector<std::vector<std::vector<double>>> val;  // [corpus][run][iter]
};

Figure loss_figure(const std::string& name,
                   const std::vector<std::pair<std::string, Curves>>& groups, std::size_t corpus) {
  Figure fig{name, figure_title(name), "step", "loss", {}};
  for (const auto& [label, curves] : groups) {
    if (corpus < curves.val.size()) {
      auto v = median_series("val " + label, curves.val[corpus]);
      fig.points.insert(fig.points.end(), v.begin(), v.end());
    }
    auto t = median_series("train " + label, curves.train);
    fig.points.insert(fig.points.end(), t.begin(), t.end());
  }
  return fig;
}

}  // namespace

std::string figure_title(const std::string& name) {
  if (name == "loss_vs_lr") {
    return "Self-training loss by learning rate";
  }
  if (name.starts_with("loss_vs_lr_")) {
    return "Self-training loss by learning rate (" + name.substr(11) + ")";
  }
  if (name == "loss_vs_size") {
    return "Self-training loss by model size";
  }
  if (name == "collapse_vs_size") {
    return "Collapse onset by model size";
  }
  return name;
}

std::string figure_csv(const Figure& figure) {
  std::string out = "series," + figure.x_label + "," + figure.y_label + "\n";
  for (const SeriesPoint& p : figure.points) {
    out += p.series + "," + format_double(p.x) + "," + format_double(p.y) + "\n";
  }
  return out;
}

Figure parse_figure_csv(std::string_view csv, const std::string& name) {
  std::istringstream in{std::string(csv)};
  std::string line;
  if (!std::getline(in, line)) {
    throw FormatError("figure csv '" + name + "' is empty");
  }
  const auto header = split(line, ',');
  if (header.size() != 3 || header[0] != "series") {
    throw FormatError("figure csv '" + name + "': unexpected header");
  }
  Figure fig{name, figure_title(name), header[1], header[2], {}};
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    const auto cells = split(line, ',');
    if (cells.size() != 3) {
      throw FormatError("figure csv '" + name + "': bad row '" + line + "'");
    }
    auto number = [](const std::string& c) {
      return c.empty() ? std::numeric_limits<double>::quiet_NaN() : std::stod(c);
    };
    fig.points.push_back({cells[0], number(cells[1]), number(cells[2])});
  }
  return fig;
}

std::string figure_svg(const Figure& figure) {
  constexpr double kWidth = 720.0;
  constexpr double kHeight = 440.0;
  constexpr double kLeft = 70.0;
  constexpr double kRight = 190.0;
  constexpr double kTop = 40.0;
  constexpr double kBottom = 55.0;
  static const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                   "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

  std::vector<std::string> order;
  std::map<std::string, std::vector<std::pair<double, double>>> series;
  double xmin = INFINITY;
  double xmax = -INFINITY;
  double ymin = INFINITY;
  double ymax = -INFINITY;
  for (const SeriesPoint& p : figure.points) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
      continue;
    }
    if (!series.count(p.series)) {
      order.push_back(p.series);
    }
    series[p.series].emplace_back(p.x, p.y);
    xmin = std::min(xmin, p.x);
    xmax = std::max(xmax, p.x);
    ymin = std::min(ymin, p.y);
    ymax = std::max(ymax, p.y);
  }
  if (order.empty()) {
    xmin = 0.0;
    xmax = 1.0;
    ymin = 0.0;
    ymax = 1.0;
  }
  const Axis xa = nice_axis(xmin, xmax);
  const Axis ya = nice_axis(ymin, ymax);
  const double pw = kWidth - kLeft - kRight;
  const double ph = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - xa.lo) / (xa.hi - xa.lo) * pw; };
  auto py = [&](double y) { return kTop + ph - (y - ya.lo) / (ya.hi - ya.lo) * ph; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fixed(kWidth, 0)
      << "\" height=\"" << fixed(kHeight, 0) << "\" viewBox=\"0 0 " << fixed(kWidth, 0) << ' '
      << fixed(kHeight, 0) << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << fixed(kLeft + pw / 2, 1) << "\" y=\"22\" text-anchor=\"middle\" "
      << "font-size=\"15\">" << xml_escape(figure.title) << "</text>\n";

  const int xd = tick_digits(xa.step);
  const int yd = tick_digits(ya.step);
  for (int i = 0; xa.lo + i * xa.step <= xa.hi + xa.step * 1e-9; ++i) {
    const double x = xa.lo + i * xa.step;
    svg << "<line x1=\"" << fixed(px(x), 2) << "\" y1=\"" << fixed(kTop, 2) << "\" x2=\""
        << fixed(px(x), 2) << "\" y2=\"" << fixed(kTop + ph, 2) << "\" stroke=\"#e0e0e0\"/>\n";
    svg << "<text x=\"" << fixed(px(x), 2) << "\" y=\"" << fixed(kTop + ph + 18, 2)
        << "\" text-anchor=\"middle\">" << fixed(x, xd) << "</text>\n";
  }
  for (int i = 0; ya.lo + i * ya.step <= ya.hi + ya.step * 1e-9; ++i) {
    const double y = ya.lo + i * ya.step;
    svg << "<line x1=\"" << fixed(kLeft, 2) << "\" y1=\"" << fixed(py(y), 2) << "\" x2=\""
        << fixed(kLeft + pw, 2) << "\" y2=\"" << fixed(py(y), 2) << "\" stroke=\"#e0e0e0\"/>\n";
    svg << "<text x=\"" << fixed(kLeft - 8, 2) << "\" y=\"" << fixed(py(y) + 4, 2)
        << "\" text-anchor=\"end\">" << fixed(y, yd) << "</text>\n";
  }
  svg << "<rect x=\"" << fixed(kLeft, 2) << "\" y=\"" << fixed(kTop, 2) << "\" width=\""
      << fixed(pw, 2) << "\" height=\"" << fixed(ph, 2)
      << "\" fill=\"none\" stroke=\"black\"/>\n";
  svg << "<text x=\"" << fixed(kLeft + pw / 2, 1) << "\" y=\"" << fixed(kHeight - 14, 1)
      << "\" text-anchor=\"middle\">" << xml_escape(figure.x_label) << "</text>\n";
  svg << "<text transform=\"translate(18," << fixed(kTop + ph / 2, 1)
      << ") rotate(-90)\" text-anchor=\"middle\">" << xml_escape(figure.y_label) << "</text>\n";

  // "val X" and "train X" share a color; train series are dashed.
  std::vector<std::string> groups;
  for (std::size_t s = 0; s < order.size(); ++s) {
    const bool dashed = order[s].starts_with("train ");
    const std::string group =
        dashed ? order[s].substr(6) : order[s].starts_with("val ") ? order[s].substr(4) : order[s];
    auto it = std::ranges::find(groups, group);
    if (it == groups.end()) {
      groups.push_back(group);
      it = groups.end() - 1;
    }
    const char* stroke =
        kPalette[static_cast<std::size_t>(it - groups.begin()) % std::size(kPalette)];
    const auto& pts = series[order[s]];
    svg << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"1.5\""
        << (dashed ? " stroke-dasharray=\"5,3\"" : "") << " points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) {
      svg << (i ? " " : "") << fixed(px(pts[i].first), 2) << ',' << fixed(py(pts[i].second), 2);
    }
    svg << "\"/>\n";
    if (pts.size() == 1) {
      svg << "<circle cx=\"" << fixed(px(pts[0].first), 2) << "\" cy=\""
          << fixed(py(pts[0].second), 2) << "\" r=\"3\" fill=\"" << stroke << "\"/>\n";
    }
    const double ly = kTop + 10 + 18.0 * static_cast<double>(s);
    const double lx = kLeft + pw + 12;
    svg << "<line x1=\"" << fixed(lx, 2) << "\" y1=\"" << fixed(ly, 2) << "\" x2=\""
        << fixed(lx + 22, 2) << "\" y2=\"" << fixed(ly, 2) << "\" stroke=\"" << stroke
        << "\" stroke-width=\"2\"" << (dashed ? " stroke-dasharray=\"5,3\"" : "") << "/>\n";
    svg << "<text x=\"" << fixed(lx + 28, 2) << "\" y=\"" << fixed(ly + 4, 2) << "\">"
        << xml_escape(order[s]) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

std::vector<Figure> build_figures(std::span<const RunSummary> runs,
                                  const std::filesystem::path& sweep_dir) {
  std::vector<const RunSummary*> usable;
  std::vector<RecordsTable> tables;
  for (const RunSummary& r : runs) {
    const auto path = sweep_dir / r.run_id / "records.csv";
    if (r.valid_stop() && std::filesystem::exists(path)) {
      usable.push_back(&r);
      tables.push_back(read_records_csv(path));
    }
  }
  std::vector<std::string> corpus_names;
  for (const RecordsTable& t : tables) {
    if (!t.corpus_names.empty()) {
      corpus_names = t.corpus_names;
      break;
    }
  }
  std::set<std::string> presets;
  for (const RunSummary& r : runs) {
    presets.insert(r.preset);
  }

  // Groups keep first-appearance order of the plan.
  auto group_by = [&](auto key_of) {
    std::vector<std::pair<std::string, Curves>> groups;
    for (std::size_t i = 0; i < usable.size(); ++i) {
      const std::string key = key_of(*usable[i]);
      auto it = std::ranges::find_if(groups, [&](const auto& g) { return g.first == key; });
      if (it == groups.end()) {
        groups.emplace_back(key, Curves{{}, std::vector<std::vector<std::vector<double>>>(
                                                corpus_names.size())});
        it = groups.end() - 1;
      }
      std::vector<double> train;
      for (const IterationRecord& rec : tables[i].records) {
        train.push_back(rec.train_loss);
      }
      it->second.train.push_back(std::move(train));
      for (std::size_t c = 0; c < corpus_names.size() && c < tables[i].corpus_names.size(); ++c) {
        std::vector<double> val;
        for (const IterationRecord& rec : tables[i].records) {
          val.push_back(rec.val_losses[c]);
        }
        it->second.val[c].push_back(std::move(val));
      }
    }
    return groups;
  };

  std::vector<Figure> figures;
  if (presets.size() <= 1) {
    const auto groups =
        group_by([](const RunSummary& r) { return "lr=" + format_double(r.learning_rate); });
    for (std::size_t c = 0; c < std::max<std::size_t>(corpus_names.size(), 1); ++c) {
      const std::string suffix = c == 0 ? "" : "_" + corpus_names[c];
      figures.push_back(loss_figure("loss_vs_lr" + suffix, groups, c));
    }
    return figures;
  }

  const auto groups = group_by([](const RunSummary& r) {
    return r.preset + " (" + std::to_string(r.param_count) + " params)";
  });
  figures.push_back(loss_figure("loss_vs_size", groups, 0));

  Figure onset{"collapse_vs_size", figure_title("collapse_vs_size"), "params",
               "collapse_iteration", {}};
  std::map<std::int64_t, std::vector<double>> by_size;
  for (const RunSummary* r : usable) {
    by_size[r->param_count].push_back(r->collapse_or_cap());
  }
  for (const auto& [params, values] : by_size) {
    for (const double v : values) {
      onset.points.push_back({"run", static_cast<double>(params), v});
    }
  }
  for (const auto& [params, values] : by_size) {
    onset.points.push_back({"median", static_cast<double>(params), median(values)});
  }
  figures.push_back(std::move(onset));
  return figures;
}

void emit_report(std::span<const Figure> figures, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  for (const Figure& f : figures) {
    std::ofstream csv(out_dir / (f.name + ".csv"), std::ios::binary | std::ios::trunc);
    std::ofstream svg(out_dir / (f.name + ".svg"), std::ios::binary | std::ios::trunc);
    if (!csv || !svg) {
      throw Error("cannot write report files in " + out_dir.string());
    }
    csv << figure_csv(f);
    svg << figure_svg(f);
  }
}

void emit_report(const std::filesystem::path& sweep_dir, const std::filesystem::path& out_dir) {
  const std::vector<RunSummary> runs = load_sweep(sweep_dir);
  const std::vector<Figure> figures = build_figures(runs, sweep_dir);
  emit_report(figures, out_dir);
  write_summaries(runs, out_dir / "summaries.csv");
}

}  // namespace collapse
