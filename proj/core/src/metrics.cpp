#include "b2w/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "b2w/error.hpp"
#include "b2w/parallel.hpp"
#include "b2w/raster_io.hpp"
#include "b2w/scene_io.hpp"

namespace b2w {
namespace {

using nlohmann::json;

constexpr const char* kModule = "metrics";

[[noreturn]] void fail(Errc code, const std::string& message) { throw Error(kModule, code, message); }

void require_same_shape(const DepthMap& pred, const DepthMap& ref) {
  if (!pred.same_shape(ref)) {
    fail(Errc::dimension_mismatch, "prediction is " + std::to_string(pred.width) + "x" + std::to_string(pred.height) +
                                       " but reference is " + std::to_string(ref.width) + "x" + std::to_string(ref.height));
  }
}

ScaleShift solve(const std::vector<double>& p, const std::vector<double>& r) {
  ScaleShift out;
  out.count = p.size();
  const double n = static_cast<double>(p.size());
  double mp = 0.0;
  double mr = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    mp += p[i];
    mr += r[i];
  }
  mp /= n;
  mr /= n;
  const auto [lo, hi] = std::minmax_element(p.begin(), p.end());
  if (p.size() < 2 || *lo == *hi) {
    out.scale = 0.0;
    out.shift = mr;
    out.degenerate = true;
    return out;
  }
  double cov = 0.0;
  double var = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    cov += (p[i] - mp) * (r[i] - mr);
    var += (p[i] - mp) * (p[i] - mp);
  }
  out.scale = cov / var;
  out.shift = mr - out.scale * mp;
  return out;
}

const std::vector<ReferenceRow> kReferenceRows = {
    {"bedroom", 0.131, 0.441, 0.115},     {"kitchen", 0.137, 0.476, 0.122}, {"living room", 0.139, 0.451, 0.121},
    {"bathroom", 0.156, 0.537, 0.135},    {"dining room", 0.141, 0.473, 0.124}, {"office", 0.135, 0.460, 0.121},
    {"Avg.", 0.140, 0.473, 0.123},
};

json summary_json(const ClassSummary& s) {
  return json{{"name", s.name}, {"images", s.images}, {"abs_rel", s.abs_rel}, {"rmse", s.rmse}, {"rmsle", s.rmsle}};
}

void append_row(std::string& out, std::string_view name, double a, double b, double c) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%-16s %7.3f %7.3f %7.3f\n", std::string(name).c_str(), a, b, c);
  out += buf;
}

}  // namespace

Mask valid_depth_pixels(const DepthMap& pred, const DepthMap& ref) {
  require_same_shape(pred, ref);
  Mask m(pred.width, pred.height);
  for (std::size_t i = 0; i < m.size(); ++i) {
    m.data[i] = (std::isfinite(pred.data[i]) && std::isfinite(ref.data[i]) && ref.data[i] > 0.0) ? 1 : 0;
  }
  return m;
}

ScaleShift fit_scale_shift(const DepthMap& pred, const DepthMap& ref, const Mask* mask) {
  Mask valid = valid_depth_pixels(pred, ref);
  if (mask) {
    if (!mask->same_shape(pred)) fail(Errc::dimension_mismatch, "mask and depth dimensions differ");
    for (std::size_t i = 0; i < valid.size(); ++i) valid.data[i] = valid.data[i] && mask->data[i];
  }
  std::vector<double> p;
  std::vector<double> r;
  for (std::size_t i = 0; i < valid.size(); ++i) {
    if (valid.data[i]) {
      p.push_back(pred.data[i]);
      r.push_back(ref.data[i]);
    }
  }
  if (p.empty()) fail(Errc::invalid_argument, "no valid pixels to fit scale and shift");
  return solve(p, r);
}

DepthErrorReport depth_errors(const DepthMap& pred, const DepthMap& ref, const DepthErrorOptions& options) {
  const Mask valid = valid_depth_pixels(pred, ref);
  const std::size_t count = count_set(valid);
  if (count == 0) fail(Errc::invalid_argument, "no pixels are finite in both depth maps");
  if (!(options.trim_fraction >= 0.0 && options.trim_fraction < 1.0)) {
    fail(Errc::invalid_argument, "trim fraction must lie in [0, 1)");
  }

  DepthErrorReport out;
  out.count = count;
  if (options.align) {
    ScaleShift fit = fit_scale_shift(pred, ref, &valid);
    if (options.trim_fraction > 0.0 && !fit.degenerate) {
      std::vector<std::pair<double, std::size_t>> residual;
      for (std::size_t i = 0; i < valid.size(); ++i) {
        if (valid.data[i]) residual.emplace_back(std::abs(fit.scale * pred.data[i] + fit.shift - ref.data[i]), i);
      }
      std::stable_sort(residual.begin(), residual.end(),
                       [](const auto& a, const auto& b) { return a.first < b.first; });
      const std::size_t keep = std::max<std::size_t>(2, residual.size() - static_cast<std::size_t>(
                                                                            options.trim_fraction * residual.size()));
      Mask kept(valid.width, valid.height);
      for (std::size_t k = 0; k < std::min(keep, residual.size()); ++k) kept.data[residual[k].second] = 1;
      fit = fit_scale_shift(pred, ref, &kept);
    }
    out.scale = fit.scale;
    out.shift = fit.shift;
    out.degenerate = fit.degenerate;
  }

  double abs_rel = 0.0;
  double sq = 0.0;
  double sq_log = 0.0;
  for (std::size_t i = 0; i < valid.size(); ++i) {
    if (!valid.data[i]) continue;
    const double p = options.align ? out.scale * pred.data[i] + out.shift : pred.data[i];
    const double r = ref.data[i];
    abs_rel += std::abs(p - r) / r;
    sq += (p - r) * (p - r);
    const double lg = std::log(std::max(p, kLogDepthFloor)) - std::log(r);
    sq_log += lg * lg;
  }
  const double n = static_cast<double>(count);
  out.abs_rel = abs_rel / n;
  out.rmse = std::sqrt(sq / n);
  out.rmsle = std::sqrt(sq_log / n);
  return out;
}

DepthErrorReport depth_errors(const DepthMap& pred, const DepthMap& ref, bool align) {
  return depth_errors(pred, ref, DepthErrorOptions{align, 0.0});
}

LabelEvaluation confusion_and_bacc(std::span<const LabelPair> pairs, std::span<const std::string> classes) {
  if (pairs.empty()) fail(Errc::invalid_argument, "no label pairs to evaluate");
  if (classes.empty()) fail(Errc::invalid_argument, "class set is empty");
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (!index.emplace(classes[i], i).second) fail(Errc::duplicate_id, "class '" + classes[i] + "' declared twice");
  }
  LabelEvaluation out;
  out.matrix.classes.assign(classes.begin(), classes.end());
  out.matrix.counts.assign(classes.size(), std::vector<std::size_t>(classes.size(), 0));
  for (const auto& [requested, predicted] : pairs) {
    const auto r = index.find(requested);
    const auto p = index.find(predicted);
    if (r == index.end()) fail(Errc::invalid_argument, "requested label '" + requested + "' is not a declared class");
    if (p == index.end()) fail(Errc::invalid_argument, "predicted label '" + predicted + "' is not a declared class");
    ++out.matrix.counts[r->second][p->second];
  }
  double recall_sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    std::size_t row = 0;
    for (std::size_t n : out.matrix.counts[c]) row += n;
    if (row == 0) continue;
    recall_sum += static_cast<double>(out.matrix.counts[c][c]) / static_cast<double>(row);
    ++present;
  }
  out.balanced_accuracy = 100.0 * recall_sum / static_cast<double>(present);
  return out;
}

const std::vector<std::string>& default_scene_classes() {
  static const std::vector<std::string> classes = {"bedroom", "kitchen", "living room", "bathroom", "dining room", "office"};
  return classes;
}

std::span<const ReferenceRow> reference_depth_rows() { return kReferenceRows; }

std::vector<ManifestItem> parse_manifest(std::string_view text, const std::filesystem::path& base_dir) {
  std::vector<ManifestItem> items;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    std::vector<std::string> fields;
    std::size_t pos = 0;
    while (true) {
      const std::size_t tab = line.find('\t', pos);
      fields.push_back(line.substr(pos, tab == std::string::npos ? std::string::npos : tab - pos));
      if (tab == std::string::npos) break;
      pos = tab + 1;
    }
    if (fields.size() != 4) {
      fail(Errc::parse_error, "manifest line " + std::to_string(line_no) + " has " + std::to_string(fields.size()) +
                                  " tab-separated fields; expected 4");
    }
    auto resolve = [&](const std::string& p) {
      std::filesystem::path path(p);
      return path.is_absolute() ? path : base_dir / path;
    };
    items.push_back(ManifestItem{resolve(fields[0]), resolve(fields[1]), fields[2], fields[3], line_no});
  }
  return items;
}

BatchReport evaluate_batch(std::span<const ManifestItem> items, const BatchOptions& options) {
  BatchReport report;
  report.items.resize(items.size());
  parallel_for(items.size(), options.threads, [&](std::size_t i) {
    ItemResult& res = report.items[i];
    res.item = items[i];
    try {
      const auto& classes = options.classes;
      if (std::find(classes.begin(), classes.end(), res.item.requested) == classes.end()) {
        fail(Errc::invalid_argument, "requested label '" + res.item.requested + "' is not a declared class");
      }
      if (std::find(classes.begin(), classes.end(), res.item.predicted) == classes.end()) {
        fail(Errc::invalid_argument, "predicted label '" + res.item.predicted + "' is not a declared class");
      }
      const DepthMap ref = read_depth_file(res.item.primitive_depth);
      const DepthMap pred = read_depth_file(res.item.inferred_depth);
      res.errors = depth_errors(pred, ref, options.depth);
    } catch (const std::exception& e) {
      res.failure = e.what();
    }
  });

  std::vector<ClassSummary> sums(options.classes.size());
  for (std::size_t c = 0; c < sums.size(); ++c) sums[c].name = options.classes[c];
  report.overall.name = "Avg.";
  std::vector<LabelPair> pairs;
  for (const ItemResult& res : report.items) {
    if (!res.errors) {
      ++report.failures;
      continue;
    }
    const std::size_t c = static_cast<std::size_t>(
        std::find(options.classes.begin(), options.classes.end(), res.item.requested) - options.classes.begin());
    for (ClassSummary* s : {&sums[c], &report.overall}) {
      ++s->images;
      s->abs_rel += res.errors->abs_rel;
      s->rmse += res.errors->rmse;
      s->rmsle += res.errors->rmsle;
    }
    pairs.emplace_back(res.item.requested, res.item.predicted);
  }
  auto finish = [](ClassSummary& s) {
    if (s.images == 0) return;
    const double n = static_cast<double>(s.images);
    s.abs_rel /= n;
    s.rmse /= n;
    s.rmsle /= n;
  };
  for (ClassSummary& s : sums) {
    if (s.images == 0) continue;
    finish(s);
    report.per_class.push_back(s);
  }
  finish(report.overall);
  if (!pairs.empty()) report.labels = confusion_and_bacc(pairs, options.classes);
  return report;
}

json batch_report_to_json(const BatchReport& report) {
  json items = json::array();
  for (const ItemResult& r : report.items) {
    json j{{"line", r.item.line},
           {"primitive_depth", r.item.primitive_depth.string()},
           {"inferred_depth", r.item.inferred_depth.string()},
           {"requested", r.item.requested},
           {"predicted", r.item.predicted}};
    if (r.errors) {
      j["abs_rel"] = r.errors->abs_rel;
      j["rmse"] = r.errors->rmse;
      j["rmsle"] = r.errors->rmsle;
      j["pixels"] = r.errors->count;
      j["scale"] = r.errors->scale;
      j["shift"] = r.errors->shift;
      j["degenerate_alignment"] = r.errors->degenerate;
    } else {
      j["failure"] = r.failure;
    }
    items.push_back(std::move(j));
  }
  json per_class = json::array();
  for (const ClassSummary& s : report.per_class) per_class.push_back(summary_json(s));
  json out{{"version", kFormatVersion},
           {"items", items},
           {"per_class", per_class},
           {"overall", summary_json(report.overall)},
           {"failures", report.failures}};
  if (report.labels) {
    out["labels"] = json{{"classes", report.labels->matrix.classes},
                         {"confusion", report.labels->matrix.counts},
                         {"balanced_accuracy", report.labels->balanced_accuracy}};
  } else {
    out["labels"] = nullptr;
  }
  return out;
}

std::string format_depth_table(const BatchReport& report, bool with_reference) {
  std::string out;
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%-16s %7s %7s %7s\n", "Cfg.", "AbsRel", "RMSE", "RMSLE");
  out += buf;
  for (const ClassSummary& s : report.per_class) append_row(out, s.name, s.abs_rel, s.rmse, s.rmsle);
  append_row(out, "Avg.", report.overall.abs_rel, report.overall.rmse, report.overall.rmsle);
  if (report.labels) {
    std::snprintf(buf, sizeof(buf), "bAcc %.2f\n", report.labels->balanced_accuracy);
    out += buf;
  }
  if (with_reference) {
    out += "\nreference (trained renderer, NYUv2)\n";
    for (const ReferenceRow& r : kReferenceRows) append_row(out, r.name, r.abs_rel, r.rmse, r.rmsle);
  }
  return out;
}

}  // namespace b2w
