#include "simviz/evalviz.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <stdexcept>

#include "simviz/figures.hpp"
#include "simviz/io.hpp"
#include "simviz/synthdata.hpp"

namespace simviz::evalviz {

double ncc(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b))
    throw std::invalid_argument("ncc: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  const int64_t n = a.numel();
  if (n < 2) throw std::invalid_argument("ncc: need at least two elements");
  const double ma = a.mean(), mb = b.mean();
  double num = 0.0, va = 0.0, vb = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    num += da * db;
    va += da * da;
    vb += db * db;
  }
  if (va == 0.0 || vb == 0.0) throw std::invalid_argument("ncc: zero-variance input");
  return num / (std::sqrt(va) * std::sqrt(vb));
}

namespace {
std::vector<double> average_ranks(const std::vector<double>& v) {
  const size_t n = v.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t i, size_t j) { return v[i] < v[j]; });
  std::vector<double> ranks(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;  // average rank, 1-based
    for (size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}
}  // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2)
    throw std::invalid_argument("spearman: need two equally long series");
  const auto ra = average_ranks(a), rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double num = 0, va = 0, vb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    num += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0 || vb == 0) throw std::invalid_argument("spearman: constant series");
  return num / std::sqrt(va * vb);
}

double variance(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size());
}

PatternEstimate extract_pattern(const Tensor& raw, const Tensor& simulated,
                                const warp::WarpField* field, const std::string& source) {
  PatternEstimate p;
  p.source = source;
  if (field) {
    p.values = warp::log_jacobian_map(*field).log_det;
  } else {
    if (!raw.same_shape(simulated))
      throw std::invalid_argument("extract_pattern: raw/simulated shape mismatch");
    p.values = raw;
    for (int64_t i = 0; i < p.values.numel(); ++i) p.values[i] -= simulated[i];
  }
  return p;
}

Tensor group_average_map(const std::vector<PatternEstimate>& patterns) {
  if (patterns.empty()) throw std::invalid_argument("group_average_map: no patterns");
  Tensor mean = patterns[0].values;
  for (size_t i = 1; i < patterns.size(); ++i) {
    if (!patterns[i].values.same_shape(mean))
      throw std::invalid_argument("group_average_map: grids differ");
    for (int64_t v = 0; v < mean.numel(); ++v) mean[v] += patterns[i].values[v];
  }
  for (int64_t v = 0; v < mean.numel(); ++v) mean[v] /= static_cast<double>(patterns.size());
  return mean;
}

// ---------------------------------------------------------------------------
// Report rendering
// ---------------------------------------------------------------------------

namespace {

int64_t display_scale(const std::vector<int64_t>& shape) {
  const int64_t w = shape.back();
  return std::max<int64_t>(1, 128 / w);
}

}  // namespace

ReportFiles render_report(const std::string& run_dir) {
  std::vector<std::string> missing;
  const std::string eval_path = run_dir + "/metrics/evaluation.json";
  for (const std::string& p : {run_dir + "/config.json", run_dir + "/manifest.json", eval_path})
    if (!io::file_exists(p)) missing.push_back(p);
  if (!missing.empty()) {
    std::string msg = "render_report: missing inputs:";
    for (const auto& m : missing) msg += "\n - " + m;
    throw std::runtime_error(msg);
  }

  const io::json ev = io::read_json_file(eval_path);
  const std::string dataset_dir = ev.at("dataset_dir").get<std::string>();
  if (!io::file_exists(dataset_dir + "/dataset.json")) missing.push_back(dataset_dir + "/dataset.json");

  const auto panel_ids = ev.at("panel_subjects").get<std::vector<int64_t>>();
  std::vector<std::string> methods;
  for (const auto& [m, entry] : ev.at("ncc").items()) {
    (void)entry;
    methods.push_back(m);
  }

  // Every per-subject artifact the report draws from.
  auto pattern_stem = [&](const std::string& method, int64_t id) {
    return run_dir + "/patterns/" + method + "/pattern_" + std::to_string(id);
  };
  for (const auto& m : methods) {
    for (const auto& [sid, v] : ev.at("ncc").at(m).at("per_subject").items()) {
      (void)v;
      const std::string stem = pattern_stem(m, std::stoll(sid));
      if (!io::file_exists(stem + ".bin")) missing.push_back(stem + ".bin");
    }
  }
  for (int64_t id : panel_ids) {
    const std::string stem = run_dir + "/patterns/proposed/sim_" + std::to_string(id);
    if (!io::file_exists(stem + ".bin")) missing.push_back(stem + ".bin");
    const std::string cyc = run_dir + "/patterns/proposed/cycle_" + std::to_string(id);
    if (!io::file_exists(cyc + ".bin")) missing.push_back(cyc + ".bin");
  }
  if (!missing.empty()) {
    std::string msg = "render_report: missing inputs:";
    for (const auto& m : missing) msg += "\n - " + m;
    throw std::runtime_error(msg);
  }

  const synth::SyntheticDataset ds = synth::load_dataset(dataset_dir);
  std::map<int64_t, const synth::ImageSample*> by_id;
  for (const auto& s : ds.samples) by_id[s.subject_id] = &s;

  io::ensure_dir(run_dir + "/figures");
  ReportFiles out;
  const int64_t scale = display_scale(ds.shape);

  // Per-subject panels: raw / simulated / cycle / pattern / ground truth.
  for (int64_t id : panel_ids) {
    const synth::ImageSample* s = by_id.at(id);
    const Tensor raw = s->pixels;
    const Tensor sim =
        io::read_array_artifact(run_dir + "/patterns/proposed/sim_" + std::to_string(id)).values;
    const Tensor cyc =
        io::read_array_artifact(run_dir + "/patterns/proposed/cycle_" + std::to_string(id)).values;
    const Tensor pat =
        io::read_array_artifact(run_dir + "/patterns/proposed/pattern_" + std::to_string(id)).values;
    const Tensor gt = synth::ground_truth_pattern(*s);

    std::vector<fig::Canvas> tiles;
    tiles.push_back(fig::captioned(fig::render_gray(fig::central_slice(raw), scale), "RAW"));
    tiles.push_back(fig::captioned(fig::render_gray(fig::central_slice(sim), scale), "SIMULATED"));
    tiles.push_back(fig::captioned(fig::render_gray(fig::central_slice(cyc), scale), "CYCLE"));
    tiles.push_back(fig::captioned(fig::render_diverging(fig::central_slice(pat), scale), "PATTERN"));
    tiles.push_back(fig::captioned(fig::render_diverging(fig::central_slice(gt), scale), "TRUTH"));
    const std::string rel = "figures/panel_subject_" + std::to_string(id) + ".png";
    fig::write_png(run_dir + "/" + rel, fig::hstack(tiles));
    out.files.push_back(rel);
  }

  // Logit trajectories over the removal direction, ordered by raw logit.
  {
    const auto raw = ev.at("logits").at("raw").get<std::vector<double>>();
    const auto sim = ev.at("logits").at("simulated").get<std::vector<double>>();
    const auto cyc = ev.at("logits").at("cycle").get<std::vector<double>>();
    std::vector<size_t> order(raw.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(), [&](size_t i, size_t j) { return raw[i] < raw[j]; });
    auto pick = [&](const std::vector<double>& v) {
      std::vector<double> o;
      o.reserve(v.size());
      for (size_t i : order) o.push_back(v[i]);
      return o;
    };
    std::vector<fig::Series> series{{"RAW", pick(raw), {40, 80, 200}},
                                    {"SIMULATED", pick(sim), {230, 140, 30}},
                                    {"CYCLE", pick(cyc), {40, 160, 60}}};
    const std::string rel = "figures/logit_trajectories.png";
    fig::write_png(run_dir + "/" + rel, fig::line_chart(series, 560, 280, "TEST LOGITS"));
    out.files.push_back(rel);
  }

  // NCC summary bars + CSV + group-average maps.
  {
    std::vector<std::string> labels;
    std::vector<double> means;
    std::string csv = "method,mean_ncc,sd_ncc,n\n";
    for (const auto& m : methods) {
      const auto& entry = ev.at("ncc").at(m);
      labels.push_back(m);
      means.push_back(entry.at("mean").get<double>());
      char line[160];
      std::snprintf(line, sizeof(line), "%s,%.9f,%.9f,%lld\n", m.c_str(),
                    entry.at("mean").get<double>(), entry.at("sd").get<double>(),
                    static_cast<long long>(entry.at("n").get<int64_t>()));
      csv += line;
    }
    const std::string rel = "figures/ncc_summary.png";
    fig::write_png(run_dir + "/" + rel,
                   fig::bar_chart(labels, means, std::max<int64_t>(360, 90 * static_cast<int64_t>(labels.size())),
                                  260, "MEAN NCC VS GROUND TRUTH"));
    out.files.push_back(rel);

    std::ofstream f(run_dir + "/metrics/summary.csv", std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write summary.csv");
    f << csv;
    out.files.push_back("metrics/summary.csv");

    for (const auto& m : methods) {
      std::vector<PatternEstimate> pats;
      for (const auto& [sid, v] : ev.at("ncc").at(m).at("per_subject").items()) {
        (void)v;
        PatternEstimate p;
        p.subject_id = std::stoll(sid);
        p.values = io::read_array_artifact(pattern_stem(m, p.subject_id)).values;
        p.source = m;
        pats.push_back(std::move(p));
      }
      const Tensor avg = group_average_map(pats);
      const std::string rel2 = "figures/group_map_" + m + ".png";
      fig::write_png(run_dir + "/" + rel2,
                     fig::captioned(fig::render_diverging(fig::central_slice(avg), scale),
                                    "GROUP MEAN " + m));
      out.files.push_back(rel2);
    }
  }

  // Declared file set, so completion is manifest-checkable.
  io::json decl;
  decl["files"] = out.files;
  io::write_json_file(run_dir + "/figures/report_manifest.json", decl);
  out.files.push_back("figures/report_manifest.json");
  return out;
}

}  // namespace simviz::evalviz
