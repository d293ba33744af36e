#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "speckle/model.hpp"
#include "speckle/taxonomy.hpp"

namespace speckle {

// Reference figures from the original full-dataset evaluation of this
// architecture; ours are hardware- and data-dependent, so they are printed
// for context only and never asserted.
namespace reference {
inline constexpr double kSecondsPerSample = 0.00339;
inline constexpr double kImagesPerSecond = 295.0;
inline constexpr double kTestAccuracy59 = 0.9505;
inline constexpr double kMacroF1 = 0.951;
inline constexpr double kWeightedF1 = 0.951;
inline constexpr double kBestValAccuracy = 0.9376;
// Family-level bounds from the same evaluation: every nine-family recall was
// at least 0.92 and most exceeded 0.98; five-family accuracy approached 0.99.
inline constexpr double kNineFamilyRecallFloor = 0.92;
inline constexpr double kNineFamilyRecallTypical = 0.98;
inline constexpr double kFiveFamilyAccuracyApprox = 0.99;
inline constexpr std::size_t kResnet50Params = 25000000;
inline constexpr double kResnet50Accuracy30 = 0.980;
inline constexpr double kResnet50Accuracy59 = 0.9396;
}  // namespace reference

/// Integer count matrix; rows are true classes, columns are predictions.
struct ConfusionMatrix {
  std::size_t n = 0;
  std::vector<std::int64_t> counts;  // n * n

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t classes) : n(classes), counts(classes * classes, 0) {}

  std::int64_t& at(std::size_t truth, std::size_t pred) { return counts[truth * n + pred]; }
  std::int64_t at(std::size_t truth, std::size_t pred) const { return counts[truth * n + pred]; }

  std::int64_t total() const;
  std::int64_t trace() const;
  std::int64_t row_sum(std::size_t truth) const;
  std::int64_t col_sum(std::size_t pred) const;
};

ConfusionMatrix confusion(const std::vector<int>& preds, const std::vector<int>& labels,
                          std::size_t n);

struct MetricReport {
  double accuracy = 0.0;
  std::vector<double> precision;
  std::vector<double> recall;
  std::vector<double> f1;
  std::vector<std::int64_t> support;
  double macro_f1 = 0.0;
  double weighted_f1 = 0.0;
};

/// Per-class precision/recall/F1 with the zero-division-as-zero convention;
/// macro is the unweighted mean, weighted the support-weighted mean.
MetricReport report(const ConfusionMatrix& cm);

/// Sums confusion counts over family blocks; the total is preserved.
ConfusionMatrix group_confusion(const ConfusionMatrix& cm, const Taxonomy& taxonomy, Granularity g);

/// Verifies that grouping the fine confusion equals building the confusion of
/// the grouped predictions. On violation returns false and writes a diff.
bool grouped_equivalence_check(const std::vector<int>& preds, const std::vector<int>& labels,
                               const Taxonomy& taxonomy, Granularity g, std::string* diff = nullptr);

struct BenchResult {
  double seconds_per_sample = 0.0;
  double images_per_second = 0.0;
  std::size_t samples = 0;
  std::size_t warmup = 0;
  std::size_t threads = 1;
};

/// Wall-clock forward timing over the image set, excluding warmup iterations
/// and all preprocessing. Single-threaded unless threads > 1 is requested.
BenchResult benchmark(const Model& model, const std::vector<Tensor>& images, std::size_t warmup,
                      std::size_t threads = 1);

std::string bench_summary(const BenchResult& r);

enum class ReportFormat { CSV, JSON };

void export_report(const MetricReport& report, const ConfusionMatrix& cm,
                   const std::filesystem::path& path, ReportFormat format);

void write_confusion_csv(const ConfusionMatrix& cm, const std::filesystem::path& path);
ConfusionMatrix read_confusion_csv(const std::filesystem::path& path);

/// PGM heatmap for ".pgm" paths, otherwise a labeled text grid.
void render_confusion_plot(const ConfusionMatrix& cm, const std::filesystem::path& path,
                           const std::vector<std::string>* labels = nullptr);

}  // namespace speckle
