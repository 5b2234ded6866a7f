#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "b2w/raster.hpp"

namespace b2w {

struct ScaleShift {
  double scale = 1.0;
  double shift = 0.0;
  bool degenerate = false;  // prediction constant over the mask: scale = 0, shift = mean(ref)
  std::size_t count = 0;
};

// Pixels finite in both rasters with ref > 0.
Mask valid_depth_pixels(const DepthMap& pred, const DepthMap& ref);

// argmin_{s,t} sum (s pred + t - ref)^2 over the mask intersected with the
// valid pixels. A null mask means all valid pixels.
ScaleShift fit_scale_shift(const DepthMap& pred, const DepthMap& ref, const Mask* mask = nullptr);

struct DepthErrorOptions {
  bool align = false;
  // When aligning, refit after discarding this fraction of largest residuals.
  double trim_fraction = 0.0;
};

struct DepthErrorReport {
  double abs_rel = 0.0;
  double rmse = 0.0;
  double rmsle = 0.0;
  std::size_t count = 0;
  double scale = 1.0;
  double shift = 0.0;
  bool degenerate = false;
};

// Predictions are clamped to >= 1e-3 m inside the log.
inline constexpr double kLogDepthFloor = 1e-3;

DepthErrorReport depth_errors(const DepthMap& pred, const DepthMap& ref, const DepthErrorOptions& options);
DepthErrorReport depth_errors(const DepthMap& pred, const DepthMap& ref, bool align);

struct ConfusionMatrix {
  std::vector<std::string> classes;
  std::vector<std::vector<std::size_t>> counts;  // [requested][predicted]
};

struct LabelEvaluation {
  ConfusionMatrix matrix;
  double balanced_accuracy = 0.0;  // percent, over classes with at least one request
};

using LabelPair = std::pair<std::string, std::string>;  // (requested, predicted)

LabelEvaluation confusion_and_bacc(std::span<const LabelPair> pairs, std::span<const std::string> classes);

const std::vector<std::string>& default_scene_classes();

// Published depth-consistency figures for the trained depth-conditioned
// renderer on NYUv2 (per class and average). Documentation constants only.
struct ReferenceRow {
  std::string_view name;
  double abs_rel;
  double rmse;
  double rmsle;
};
std::span<const ReferenceRow> reference_depth_rows();

struct ManifestItem {
  std::filesystem::path primitive_depth;
  std::filesystem::path inferred_depth;
  std::string requested;
  std::string predicted;
  std::size_t line = 0;
};

// Tab-separated: primitive depth, inferred depth, requested label, predicted
// label. Blank lines and '#' comments are skipped; relative paths resolve
// against base_dir.
std::vector<ManifestItem> parse_manifest(std::string_view text, const std::filesystem::path& base_dir);

struct ItemResult {
  ManifestItem item;
  std::optional<DepthErrorReport> errors;
  std::string failure;
};

struct ClassSummary {
  std::string name;
  std::size_t images = 0;
  double abs_rel = 0.0;
  double rmse = 0.0;
  double rmsle = 0.0;
};

struct BatchOptions {
  DepthErrorOptions depth{true, 0.0};
  std::vector<std::string> classes = default_scene_classes();
  unsigned threads = 0;
};

struct BatchReport {
  std::vector<ItemResult> items;
  std::vector<ClassSummary> per_class;
  ClassSummary overall;
  std::optional<LabelEvaluation> labels;
  std::size_t failures = 0;
};

// Items are evaluated in parallel and aggregated in manifest order. A failing
// item is recorded and excluded; the batch continues.
BatchReport evaluate_batch(std::span<const ManifestItem> items, const BatchOptions& options);

nlohmann::json batch_report_to_json(const BatchReport& report);
// Columns: Cfg., AbsRel, RMSE, RMSLE.
std::string format_depth_table(const BatchReport& report, bool with_reference = false);

}  // namespace b2w
