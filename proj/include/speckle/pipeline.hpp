#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "speckle/taxonomy.hpp"
#include "speckle/tensor.hpp"
#include "speckle/trainer.hpp"

namespace speckle {

/// 8-bit image, row-major, RGB interleaved when 3-channel.
struct RawImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;  // 1 or 3
  std::vector<std::uint8_t> pixels;
};

/// Binary PGM (P5) or PPM (P6), maxval 255 only.
RawImage read_image(const std::filesystem::path& path);
void write_image(const RawImage& img, const std::filesystem::path& path);

/// 3-channel -> green plane, 1-channel -> passthrough; output values stay in [0, 255].
Tensor extract_green(const RawImage& img);

/// Rescale [0, 255] -> [0, 1]. Not idempotent: applying it twice divides by 255 twice.
Tensor normalize(const Tensor& t);

/// Bilinear resampling with half-pixel centers; an identical target size copies exactly.
Tensor resize_bilinear(const Tensor& t, std::size_t out_h, std::size_t out_w);

Tensor flip_horizontal(const Tensor& t);
Tensor flip_vertical(const Tensor& t);

/// Independently flips horizontally and vertically, each with probability 0.5.
Tensor augment_flips(const Tensor& t, std::mt19937_64& rng);

/// The full ingestion chain: green channel -> resize -> [0, 1] rescale.
Tensor preprocess(const RawImage& img, std::size_t target = 512);

enum class Split { Train, Val, Test };

struct ManifestEntry {
  std::string relative_path;
  int class_id = 0;
};

struct DatasetManifest {
  std::filesystem::path root;  // directory containing the manifest file
  std::vector<ManifestEntry> entries;
  Split split = Split::Train;
};

/// Parses a line-oriented "<relative_path>\t<class_name>" manifest, resolving
/// class names against the taxonomy. Malformed lines, unknown classes,
/// duplicate paths and empty manifests are rejected with the offending
/// file/line named.
DatasetManifest load_manifest(const std::filesystem::path& path, const Taxonomy& taxonomy,
                              Split split = Split::Train);

RawImage load_image(const DatasetManifest& manifest, const ManifestEntry& entry);

void write_manifest(const std::filesystem::path& path,
                    const std::vector<std::pair<std::string, std::string>>& rows);

/// Dataset view over a manifest; images are preprocessed to resolution x resolution.
class ManifestDataset : public Dataset {
 public:
  ManifestDataset(DatasetManifest manifest, std::size_t resolution, bool preload = true);

  std::size_t size() const override { return manifest_.entries.size(); }
  Sample at(std::size_t i) const override;
  int label_at(std::size_t i) const override { return manifest_.entries[i].class_id; }

 private:
  DatasetManifest manifest_;
  std::size_t resolution_;
  std::vector<Sample> cache_;  // empty when not preloaded
};

/// Applies random flips on top of another dataset. Flip bits derive from
/// (seed, epoch, index), so results are independent of evaluation order.
class AugmentedDataset : public Dataset {
 public:
  AugmentedDataset(const Dataset& inner, std::uint64_t seed) : inner_(inner), seed_(seed) {}

  std::size_t size() const override { return inner_.size(); }
  Sample at(std::size_t i) const override;
  int label_at(std::size_t i) const override { return inner_.label_at(i); }
  void set_epoch(int epoch) const override { epoch_.store(epoch); }

 private:
  const Dataset& inner_;
  std::uint64_t seed_;
  mutable std::atomic<int> epoch_{0};
};

/// Correlated-field parameters for the synthetic speckle generator.
struct SpeckleParams {
  double correlation_length = 4.0;  // pixels, > 0
  double anisotropy = 1.0;          // major/minor axis ratio, >= 1
  double orientation = 0.0;         // major-axis angle, radians
  double mean_intensity = 0.35;     // target mean of the [0,1] image, in (0, 1]
  std::uint64_t seed = 42;
};

/// Sum of two squared smoothed Gaussian fields, rescaled to the target mean
/// and quantized to 8 bits. Deterministic for a fixed seed.
RawImage synth_speckle(const SpeckleParams& params, std::size_t h, std::size_t w);

struct SynthClassSpec {
  std::string name;  // must exist in the taxonomy used for loading
  SpeckleParams params;
};

struct SynthDatasetOptions {
  std::filesystem::path out_dir;
  std::vector<SynthClassSpec> classes;
  std::size_t per_class_train = 100;
  std::size_t per_class_val = 20;
  std::size_t per_class_test = 20;
  std::size_t resolution = 128;
  std::uint64_t seed = 42;
};

/// Writes out_dir/<class>/<split>_<index>.pgm plus train/val/test manifests and
/// a params.json that records the generator parameters of every image.
void emit_synthetic_dataset(const SynthDatasetOptions& options);

/// Default per-class parameter ladder: geometrically spaced correlation lengths.
std::vector<SpeckleParams> default_synth_ladder(std::size_t num_classes, std::uint64_t seed);

}  // namespace speckle
