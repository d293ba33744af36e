#include "speckle/metrics.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

namespace speckle {

std::int64_t ConfusionMatrix::total() const {
  std::int64_t sum = 0;
  for (std::int64_t v : counts) sum += v;
  return sum;
}

std::int64_t ConfusionMatrix::trace() const {
  std::int64_t sum = 0;
  for (std::size_t i = 0; i < n; ++i) sum += at(i, i);
  return sum;
}

std::int64_t ConfusionMatrix::row_sum(std::size_t truth) const {
  std::int64_t sum = 0;
  for (std::size_t p = 0; p < n; ++p) sum += at(truth, p);
  return sum;
}

std::int64_t ConfusionMatrix::col_sum(std::size_t pred) const {
  std::int64_t sum = 0;
  for (std::size_t t = 0; t < n; ++t) sum += at(t, pred);
  return sum;
}

ConfusionMatrix confusion(const std::vector<int>& preds, const std::vector<int>& labels,
                          std::size_t n) {
  if (preds.size() != labels.size()) {
    throw std::invalid_argument("confusion: " + std::to_string(preds.size()) + " predictions vs " +
                                std::to_string(labels.size()) + " labels");
  }
  if (n == 0) throw std::invalid_argument("confusion: class count must be >= 1");
  ConfusionMatrix cm(n);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] < 0 || static_cast<std::size_t>(preds[i]) >= n) {
      throw std::invalid_argument("confusion: prediction " + std::to_string(preds[i]) +
                                  " out of range at index " + std::to_string(i));
    }
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= n) {
      throw std::invalid_argument("confusion: label " + std::to_string(labels[i]) +
                                  " out of range at index " + std::to_string(i));
    }
    cm.at(static_cast<std::size_t>(labels[i]), static_cast<std::size_t>(preds[i])) += 1;
  }
  return cm;
}

MetricReport report(const ConfusionMatrix& cm) {
  const std::int64_t total = cm.total();
  if (cm.n == 0 || total == 0) throw std::invalid_argument("report: confusion matrix is empty");
  MetricReport r;
  r.precision.resize(cm.n);
  r.recall.resize(cm.n);
  r.f1.resize(cm.n);
  r.support.resize(cm.n);
  r.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(total);
  double f1_sum = 0.0;
  double weighted_sum = 0.0;
  for (std::size_t c = 0; c < cm.n; ++c) {
    const std::int64_t tp = cm.at(c, c);
    const std::int64_t row = cm.row_sum(c);
    const std::int64_t col = cm.col_sum(c);
    r.support[c] = row;
    r.precision[c] = col == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(col);
    r.recall[c] = row == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(row);
    const double pr = r.precision[c] + r.recall[c];
    r.f1[c] = pr == 0.0 ? 0.0 : 2.0 * r.precision[c] * r.recall[c] / pr;
    f1_sum += r.f1[c];
    weighted_sum += static_cast<double>(row) * r.f1[c];
  }
  r.macro_f1 = f1_sum / static_cast<double>(cm.n);
  r.weighted_f1 = weighted_sum / static_cast<double>(total);
  return r;
}

ConfusionMatrix group_confusion(const ConfusionMatrix& cm, const Taxonomy& taxonomy, Granularity g) {
  if (cm.n != taxonomy.size()) {
    throw std::invalid_argument("group_confusion: matrix has " + std::to_string(cm.n) +
                                " classes but taxonomy has " + std::to_string(taxonomy.size()));
  }
  ConfusionMatrix grouped(taxonomy.family_count(g));
  for (std::size_t t = 0; t < cm.n; ++t) {
    const std::size_t gt = taxonomy.family_index(static_cast<int>(t), g);
    for (std::size_t p = 0; p < cm.n; ++p) {
      grouped.at(gt, taxonomy.family_index(static_cast<int>(p), g)) += cm.at(t, p);
    }
  }
  return grouped;
}

bool grouped_equivalence_check(const std::vector<int>& preds, const std::vector<int>& labels,
                               const Taxonomy& taxonomy, Granularity g, std::string* diff) {
  ConfusionMatrix fine = confusion(preds, labels, taxonomy.size());
  ConfusionMatrix via_matrix = group_confusion(fine, taxonomy, g);

  std::vector<int> grouped_preds(preds.size()), grouped_labels(labels.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    grouped_preds[i] = static_cast<int>(taxonomy.family_index(preds[i], g));
    grouped_labels[i] = static_cast<int>(taxonomy.family_index(labels[i], g));
  }
  ConfusionMatrix via_samples = confusion(grouped_preds, grouped_labels, taxonomy.family_count(g));

  if (via_matrix.counts == via_samples.counts) return true;
  if (diff) {
    std::ostringstream out;
    out << "grouped confusion mismatch at granularity " << granularity_name(g) << ":";
    for (std::size_t t = 0; t < via_matrix.n; ++t) {
      for (std::size_t p = 0; p < via_matrix.n; ++p) {
        if (via_matrix.at(t, p) != via_samples.at(t, p)) {
          out << " [" << t << "," << p << "] " << via_matrix.at(t, p) << "!=" << via_samples.at(t, p);
        }
      }
    }
    *diff = out.str();
  }
  return false;
}

BenchResult benchmark(const Model& model, const std::vector<Tensor>& images, std::size_t warmup,
                      std::size_t threads) {
  if (images.empty()) throw std::invalid_argument("benchmark: image set is empty");
  BenchResult r;
  r.samples = images.size();
  r.warmup = std::max<std::size_t>(1, warmup);
  r.threads = std::max<std::size_t>(1, threads);

  for (std::size_t i = 0; i < r.warmup; ++i) forward(model, images[i % images.size()]);

  const auto t0 = std::chrono::steady_clock::now();
  if (r.threads == 1) {
    for (const Tensor& img : images) forward(model, img);
  } else {
    std::vector<std::thread> pool;
    std::exception_ptr first_error;
    std::mutex error_mutex;
    for (std::size_t wkr = 0; wkr < r.threads; ++wkr) {
      pool.emplace_back([&, wkr]() {
        try {
          for (std::size_t i = wkr; i < images.size(); i += r.threads) forward(model, images[i]);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
  }
  const auto t1 = std::chrono::steady_clock::now();
  const double elapsed = std::chrono::duration<double>(t1 - t0).count();
  r.seconds_per_sample = elapsed / static_cast<double>(images.size());
  r.images_per_second = static_cast<double>(images.size()) / elapsed;
  return r;
}

std::string bench_summary(const BenchResult& r) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "%.6f s/sample, %.1f images/s over %zu samples (warmup %zu, threads %zu)\n"
                "reference hardware (hardware-dependent): %.5f s/sample, %.0f images/s",
                r.seconds_per_sample, r.images_per_second, r.samples, r.warmup, r.threads,
                reference::kSecondsPerSample, reference::kImagesPerSecond);
  return buf;
}

namespace {

nlohmann::json report_to_json(const MetricReport& report, const ConfusionMatrix& cm) {
  nlohmann::json doc;
  doc["accuracy"] = report.accuracy;
  doc["macro_f1"] = report.macro_f1;
  doc["weighted_f1"] = report.weighted_f1;
  doc["per_class"] = nlohmann::json::array();
  for (std::size_t c = 0; c < cm.n; ++c) {
    doc["per_class"].push_back({{"class", c},
                                {"precision", report.precision[c]},
                                {"recall", report.recall[c]},
                                {"f1", report.f1[c]},
                                {"support", report.support[c]}});
  }
  doc["confusion"] = nlohmann::json::array();
  for (std::size_t t = 0; t < cm.n; ++t) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t p = 0; p < cm.n; ++p) row.push_back(cm.at(t, p));
    doc["confusion"].push_back(std::move(row));
  }
  return doc;
}

}  // namespace

void export_report(const MetricReport& report, const ConfusionMatrix& cm,
                   const std::filesystem::path& path, ReportFormat format) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  if (format == ReportFormat::JSON) {
    out << report_to_json(report, cm).dump(2) << "\n";
  } else {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "accuracy,%.17g\n", report.accuracy);
    out << buf;
    std::snprintf(buf, sizeof(buf), "macro_f1,%.17g\n", report.macro_f1);
    out << buf;
    std::snprintf(buf, sizeof(buf), "weighted_f1,%.17g\n", report.weighted_f1);
    out << buf;
    out << "class,precision,recall,f1,support\n";
    for (std::size_t c = 0; c < cm.n; ++c) {
      std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%lld\n", c, report.precision[c],
                    report.recall[c], report.f1[c], static_cast<long long>(report.support[c]));
      out << buf;
    }
    out << "confusion\n";
    for (std::size_t t = 0; t < cm.n; ++t) {
      for (std::size_t p = 0; p < cm.n; ++p) out << (p ? "," : "") << cm.at(t, p);
      out << "\n";
    }
  }
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

void write_confusion_csv(const ConfusionMatrix& cm, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  for (std::size_t t = 0; t < cm.n; ++t) {
    for (std::size_t p = 0; p < cm.n; ++p) out << (p ? "," : "") << cm.at(t, p);
    out << "\n";
  }
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

ConfusionMatrix read_confusion_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path.string() + ": cannot open confusion file");
  std::vector<std::vector<std::int64_t>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::int64_t> row;
    std::istringstream cells(line);
    std::string cell;
    while (std::getline(cells, cell, ',')) row.push_back(std::stoll(cell));
    rows.push_back(std::move(row));
  }
  ConfusionMatrix cm(rows.size());
  for (std::size_t t = 0; t < rows.size(); ++t) {
    if (rows[t].size() != rows.size()) {
      throw std::runtime_error(path.string() + ": confusion matrix is not square");
    }
    for (std::size_t p = 0; p < rows.size(); ++p) cm.at(t, p) = rows[t][p];
  }
  return cm;
}

void render_confusion_plot(const ConfusionMatrix& cm, const std::filesystem::path& path,
                           const std::vector<std::string>* labels) {
  if (cm.n == 0) throw std::invalid_argument("render_confusion_plot: empty matrix");
  if (path.extension() == ".pgm") {
    const std::size_t cell = std::max<std::size_t>(1, 512 / cm.n);
    const std::size_t side = cm.n * cell;
    std::int64_t peak = 1;
    for (std::int64_t v : cm.counts) peak = std::max(peak, v);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
    out << "P5\n" << side << " " << side << "\n255\n";
    std::vector<std::uint8_t> row(side);
    for (std::size_t y = 0; y < side; ++y) {
      const std::size_t t = y / cell;
      for (std::size_t x = 0; x < side; ++x) {
        const double v = static_cast<double>(cm.at(t, x / cell)) / static_cast<double>(peak);
        row[x] = static_cast<std::uint8_t>(std::lround(255.0 * v));
      }
      out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(side));
    }
    if (!out) throw std::runtime_error(path.string() + ": write failed");
    return;
  }

  std::ofstream out(path);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  auto label_of = [&](std::size_t i) {
    return labels && i < labels->size() ? (*labels)[i] : std::to_string(i);
  };
  std::size_t width = 5;
  for (std::size_t i = 0; i < cm.n; ++i) width = std::max(width, label_of(i).size() + 1);
  out << std::string(width, ' ');
  for (std::size_t p = 0; p < cm.n; ++p) {
    std::string l = label_of(p);
    out << " " << std::string(width > l.size() ? width - l.size() : 0, ' ') << l;
  }
  out << "\n";
  for (std::size_t t = 0; t < cm.n; ++t) {
    std::string l = label_of(t);
    out << l << std::string(width > l.size() ? width - l.size() : 0, ' ');
    for (std::size_t p = 0; p < cm.n; ++p) {
      std::string v = std::to_string(cm.at(t, p));
      out << " " << std::string(width > v.size() ? width - v.size() : 0, ' ') << v;
    }
    out << "\n";
  }
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

}  // namespace speckle
