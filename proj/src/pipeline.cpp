#include "speckle/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace speckle {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::string read_header_token(std::istream& in) {
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (!std::isspace(c)) break;
  }
  if (c == EOF) return {};
  std::string token(1, static_cast<char>(c));
  while ((c = in.peek()) != EOF && !std::isspace(c) && c != '#') {
    token.push_back(static_cast<char>(in.get()));
  }
  return token;
}

std::size_t parse_header_int(std::istream& in, const std::filesystem::path& path, const char* what) {
  std::string token = read_header_token(in);
  if (token.empty()) {
    throw std::runtime_error(path.string() + ": truncated image header while reading " + what);
  }
  try {
    std::size_t pos = 0;
    unsigned long v = std::stoul(token, &pos);
    if (pos != token.size()) throw std::invalid_argument(token);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error(path.string() + ": malformed image header, bad " + std::string(what) +
                             " '" + token + "'");
  }
}

}  // namespace

RawImage read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path.string() + ": cannot open image file");
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  if (!in || m0 != 'P' || (m1 != '5' && m1 != '6')) {
    throw std::runtime_error(path.string() + ": unsupported image format (need binary PGM P5 or PPM P6)");
  }
  RawImage img;
  img.channels = (m1 == '5') ? 1 : 3;
  img.width = parse_header_int(in, path, "width");
  img.height = parse_header_int(in, path, "height");
  std::size_t maxval = parse_header_int(in, path, "maxval");
  if (maxval != 255) {
    throw std::runtime_error(path.string() + ": only 8-bit images (maxval 255) are supported, got " +
                             std::to_string(maxval));
  }
  int sep = in.get();
  if (sep == EOF || !std::isspace(sep)) {
    throw std::runtime_error(path.string() + ": malformed image header, missing separator before data");
  }
  if (img.width == 0 || img.height == 0) {
    throw std::runtime_error(path.string() + ": image dimensions must be >= 1");
  }
  img.pixels.resize(img.width * img.height * img.channels);
  if (!in.read(reinterpret_cast<char*>(img.pixels.data()),
               static_cast<std::streamsize>(img.pixels.size()))) {
    throw std::runtime_error(path.string() + ": truncated pixel data");
  }
  return img;
}

void write_image(const RawImage& img, const std::filesystem::path& path) {
  if (img.channels != 1 && img.channels != 3) {
    throw std::invalid_argument("write_image: channels must be 1 or 3");
  }
  if (img.pixels.size() != img.width * img.height * img.channels) {
    throw std::invalid_argument("write_image: pixel buffer does not match dimensions");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  out << (img.channels == 1 ? "P5" : "P6") << "\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

Tensor extract_green(const RawImage& img) {
  if (img.channels != 1 && img.channels != 3) {
    throw std::invalid_argument("extract_green: expected 1 or 3 channels, got " +
                                std::to_string(img.channels));
  }
  Tensor out({img.height, img.width, 1});
  const std::size_t n = img.width * img.height;
  if (img.channels == 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<double>(img.pixels[i]);
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<double>(img.pixels[i * 3 + 1]);
  }
  return out;
}

Tensor normalize(const Tensor& t) {
  Tensor out(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = t[i] / 255.0;
  return out;
}

Tensor resize_bilinear(const Tensor& t, std::size_t out_h, std::size_t out_w) {
  if (t.rank() != 3) {
    throw std::invalid_argument("resize_bilinear expects [h, w, c], got " + shape_to_string(t.shape()));
  }
  if (out_h == 0 || out_w == 0) throw std::invalid_argument("resize_bilinear: target size must be >= 1");
  const std::size_t h = t.dim(0), w = t.dim(1), c = t.dim(2);
  if (out_h == h && out_w == w) return t;
  Tensor out({out_h, out_w, c});
  const double sy = static_cast<double>(h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(w) / static_cast<double>(out_w);
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    double fy = (static_cast<double>(oy) + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(h - 1));
    const std::size_t y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double dy = fy - static_cast<double>(y0);
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      double fx = (static_cast<double>(ox) + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(w - 1));
      const std::size_t x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double dx = fx - static_cast<double>(x0);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double v00 = t.at3(y0, x0, ch), v01 = t.at3(y0, x1, ch);
        const double v10 = t.at3(y1, x0, ch), v11 = t.at3(y1, x1, ch);
        const double top = v00 + dx * (v01 - v00);
        const double bottom = v10 + dx * (v11 - v10);
        out.at3(oy, ox, ch) = top + dy * (bottom - top);
      }
    }
  }
  return out;
}

Tensor flip_horizontal(const Tensor& t) {
  if (t.rank() != 3) throw std::invalid_argument("flip expects [h, w, c]");
  const std::size_t h = t.dim(0), w = t.dim(1), c = t.dim(2);
  Tensor out(t.shape());
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t ch = 0; ch < c; ++ch) out.at3(y, x, ch) = t.at3(y, w - 1 - x, ch);
    }
  }
  return out;
}

Tensor flip_vertical(const Tensor& t) {
  if (t.rank() != 3) throw std::invalid_argument("flip expects [h, w, c]");
  const std::size_t h = t.dim(0), w = t.dim(1), c = t.dim(2);
  Tensor out(t.shape());
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t ch = 0; ch < c; ++ch) out.at3(y, x, ch) = t.at3(h - 1 - y, x, ch);
    }
  }
  return out;
}

Tensor augment_flips(const Tensor& t, std::mt19937_64& rng) {
  const bool flip_h = (rng() >> 63) != 0;
  const bool flip_v = (rng() >> 63) != 0;
  Tensor out = t;
  if (flip_h) out = flip_horizontal(out);
  if (flip_v) out = flip_vertical(out);
  return out;
}

Tensor preprocess(const RawImage& img, std::size_t target) {
  return normalize(resize_bilinear(extract_green(img), target, target));
}

DatasetManifest load_manifest(const std::filesystem::path& path, const Taxonomy& taxonomy,
                              Split split) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path.string() + ": cannot open manifest");
  DatasetManifest manifest;
  manifest.root = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  manifest.split = split;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 >= line.size()) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                               ": expected '<relative_path>\\t<class_name>'");
    }
    std::string rel = line.substr(0, tab);
    std::string class_name = line.substr(tab + 1);
    if (!taxonomy.has_class(class_name)) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                               ": unknown material class '" + class_name + "'");
    }
    if (!seen.insert(rel).second) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                               ": duplicate image path '" + rel + "'");
    }
    manifest.entries.push_back({std::move(rel), taxonomy.id_of(class_name)});
  }
  if (manifest.entries.empty()) {
    throw std::runtime_error(path.string() + ": manifest contains no entries");
  }
  return manifest;
}

RawImage load_image(const DatasetManifest& manifest, const ManifestEntry& entry) {
  return read_image(manifest.root / entry.relative_path);
}

void write_manifest(const std::filesystem::path& path,
                    const std::vector<std::pair<std::string, std::string>>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  for (const auto& [rel, class_name] : rows) out << rel << "\t" << class_name << "\n";
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

ManifestDataset::ManifestDataset(DatasetManifest manifest, std::size_t resolution, bool preload)
    : manifest_(std::move(manifest)), resolution_(resolution) {
  if (preload) {
    cache_.reserve(manifest_.entries.size());
    for (const ManifestEntry& e : manifest_.entries) {
      cache_.push_back({preprocess(load_image(manifest_, e), resolution_), e.class_id});
    }
  }
}

Sample ManifestDataset::at(std::size_t i) const {
  if (!cache_.empty()) return cache_[i];
  const ManifestEntry& e = manifest_.entries[i];
  return {preprocess(load_image(manifest_, e), resolution_), e.class_id};
}

Sample AugmentedDataset::at(std::size_t i) const {
  Sample s = inner_.at(i);
  const std::uint64_t key = splitmix64(seed_ ^ splitmix64(static_cast<std::uint64_t>(epoch_.load()) ^
                                                          splitmix64(static_cast<std::uint64_t>(i))));
  if (key & 1) s.image = flip_horizontal(s.image);
  if (key & 2) s.image = flip_vertical(s.image);
  return s;
}

namespace {

void blur_axis_wrapped(std::vector<double>& field, std::size_t h, std::size_t w, double sigma,
                       bool along_x) {
  if (sigma <= 0.0) return;
  const std::ptrdiff_t radius = std::max<std::ptrdiff_t>(1, static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
    const double v = std::exp(-0.5 * static_cast<double>(k * k) / (sigma * sigma));
    kernel[static_cast<std::size_t>(k + radius)] = v;
    sum += v;
  }
  for (double& v : kernel) v /= sum;

  std::vector<double> out(field.size());
  const std::ptrdiff_t extent = static_cast<std::ptrdiff_t>(along_x ? w : h);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
        std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(along_x ? x : y) + k;
        pos = ((pos % extent) + extent) % extent;
        const std::size_t sy = along_x ? y : static_cast<std::size_t>(pos);
        const std::size_t sx = along_x ? static_cast<std::size_t>(pos) : x;
        acc += kernel[static_cast<std::size_t>(k + radius)] * field[sy * w + sx];
      }
      out[y * w + x] = acc;
    }
  }
  field.swap(out);
}

void blur_rotated_wrapped(std::vector<double>& field, std::size_t h, std::size_t w,
                          double sigma_major, double sigma_minor, double orientation) {
  const std::ptrdiff_t radius =
      std::max<std::ptrdiff_t>(1, static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma_major)));
  const double cos_t = std::cos(orientation), sin_t = std::sin(orientation);
  const std::size_t side = static_cast<std::size_t>(2 * radius + 1);
  std::vector<double> kernel(side * side);
  double sum = 0.0;
  for (std::ptrdiff_t dy = -radius; dy <= radius; ++dy) {
    for (std::ptrdiff_t dx = -radius; dx <= radius; ++dx) {
      const double u = cos_t * static_cast<double>(dx) + sin_t * static_cast<double>(dy);
      const double v = -sin_t * static_cast<double>(dx) + cos_t * static_cast<double>(dy);
      const double val = std::exp(-0.5 * (u * u / (sigma_major * sigma_major) +
                                          v * v / (sigma_minor * sigma_minor)));
      kernel[static_cast<std::size_t>(dy + radius) * side + static_cast<std::size_t>(dx + radius)] = val;
      sum += val;
    }
  }
  for (double& v : kernel) v /= sum;

  std::vector<double> out(field.size());
  const std::ptrdiff_t hh = static_cast<std::ptrdiff_t>(h), ww = static_cast<std::ptrdiff_t>(w);
  for (std::ptrdiff_t y = 0; y < hh; ++y) {
    for (std::ptrdiff_t x = 0; x < ww; ++x) {
      double acc = 0.0;
      for (std::ptrdiff_t dy = -radius; dy <= radius; ++dy) {
        const std::size_t sy = static_cast<std::size_t>((((y + dy) % hh) + hh) % hh);
        for (std::ptrdiff_t dx = -radius; dx <= radius; ++dx) {
          const std::size_t sx = static_cast<std::size_t>((((x + dx) % ww) + ww) % ww);
          acc += kernel[static_cast<std::size_t>(dy + radius) * side +
                        static_cast<std::size_t>(dx + radius)] *
                 field[sy * w + sx];
        }
      }
      out[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)] = acc;
    }
  }
  field.swap(out);
}

}  // namespace

RawImage synth_speckle(const SpeckleParams& params, std::size_t h, std::size_t w) {
  if (params.correlation_length <= 0.0) {
    throw std::invalid_argument("synth_speckle: correlation_length must be > 0");
  }
  if (params.anisotropy < 1.0) throw std::invalid_argument("synth_speckle: anisotropy must be >= 1");
  if (params.mean_intensity <= 0.0 || params.mean_intensity > 1.0) {
    throw std::invalid_argument("synth_speckle: mean_intensity must be in (0, 1]");
  }
  if (h == 0 || w == 0) throw std::invalid_argument("synth_speckle: image size must be >= 1");

  std::mt19937_64 rng(params.seed);
  auto unit = [&rng]() { return (static_cast<double>(rng() >> 11) + 1.0) * 0x1.0p-53; };  // (0, 1]
  auto fill_gaussian = [&](std::vector<double>& field) {
    for (std::size_t i = 0; i < field.size(); i += 2) {
      const double u1 = unit(), u2 = unit();
      const double r = std::sqrt(-2.0 * std::log(u1));
      field[i] = r * std::cos(2.0 * M_PI * u2);
      if (i + 1 < field.size()) field[i + 1] = r * std::sin(2.0 * M_PI * u2);
    }
  };

  std::vector<double> a(h * w), b(h * w);
  fill_gaussian(a);
  fill_gaussian(b);

  const double sigma_major = params.correlation_length;
  const double sigma_minor = params.correlation_length / params.anisotropy;
  if (params.orientation == 0.0) {
    blur_axis_wrapped(a, h, w, sigma_major, true);
    blur_axis_wrapped(a, h, w, sigma_minor, false);
    blur_axis_wrapped(b, h, w, sigma_major, true);
    blur_axis_wrapped(b, h, w, sigma_minor, false);
  } else {
    blur_rotated_wrapped(a, h, w, sigma_major, sigma_minor, params.orientation);
    blur_rotated_wrapped(b, h, w, sigma_major, sigma_minor, params.orientation);
  }

  std::vector<double> intensity(h * w);
  double mean = 0.0;
  for (std::size_t i = 0; i < intensity.size(); ++i) {
    intensity[i] = a[i] * a[i] + b[i] * b[i];
    mean += intensity[i];
  }
  mean /= static_cast<double>(intensity.size());
  const double scale = params.mean_intensity / mean;

  RawImage img;
  img.width = w;
  img.height = h;
  img.channels = 1;
  img.pixels.resize(h * w);
  for (std::size_t i = 0; i < intensity.size(); ++i) {
    const double v = std::min(1.0, intensity[i] * scale);
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return img;
}

std::vector<SpeckleParams> default_synth_ladder(std::size_t num_classes, std::uint64_t seed) {
  std::vector<SpeckleParams> ladder(num_classes);
  double corr = 1.5;
  for (std::size_t i = 0; i < num_classes; ++i) {
    ladder[i].correlation_length = corr;
    ladder[i].anisotropy = 1.0;
    ladder[i].orientation = 0.0;
    ladder[i].mean_intensity = 0.35;
    ladder[i].seed = seed;
    corr *= 1.45;
  }
  return ladder;
}

void emit_synthetic_dataset(const SynthDatasetOptions& options) {
  if (options.classes.empty()) throw std::invalid_argument("emit_synthetic_dataset: no classes given");
  if (options.per_class_train == 0) {
    throw std::invalid_argument("emit_synthetic_dataset: per_class_train must be >= 1");
  }
  if (options.resolution < 4) throw std::invalid_argument("emit_synthetic_dataset: resolution must be >= 4");

  std::filesystem::create_directories(options.out_dir);
  struct SplitPlan {
    const char* tag;
    std::size_t count;
  };
  const SplitPlan plans[3] = {{"train", options.per_class_train},
                              {"val", options.per_class_val},
                              {"test", options.per_class_test}};

  nlohmann::json record;
  record["seed"] = options.seed;
  record["resolution"] = options.resolution;
  record["images"] = nlohmann::json::array();
  std::vector<std::vector<std::pair<std::string, std::string>>> manifests(3);

  for (std::size_t ci = 0; ci < options.classes.size(); ++ci) {
    const SynthClassSpec& cls = options.classes[ci];
    std::filesystem::create_directories(options.out_dir / cls.name);
    for (std::size_t si = 0; si < 3; ++si) {
      for (std::size_t k = 0; k < plans[si].count; ++k) {
        SpeckleParams params = cls.params;
        params.seed = splitmix64(options.seed ^ splitmix64((ci << 40) ^ (si << 32) ^ k));
        RawImage img = synth_speckle(params, options.resolution, options.resolution);
        const std::string filename = std::string(plans[si].tag) + "_" + std::to_string(k) + ".pgm";
        const std::string rel = cls.name + "/" + filename;
        write_image(img, options.out_dir / rel);
        manifests[si].push_back({rel, cls.name});
        nlohmann::json entry;
        entry["path"] = rel;
        entry["class"] = cls.name;
        entry["correlation_length"] = params.correlation_length;
        entry["anisotropy"] = params.anisotropy;
        entry["orientation"] = params.orientation;
        entry["mean_intensity"] = params.mean_intensity;
        entry["seed"] = params.seed;
        record["images"].push_back(std::move(entry));
      }
    }
  }
  write_manifest(options.out_dir / "train.tsv", manifests[0]);
  if (!manifests[1].empty()) write_manifest(options.out_dir / "val.tsv", manifests[1]);
  if (!manifests[2].empty()) write_manifest(options.out_dir / "test.tsv", manifests[2]);

  std::ofstream params_out(options.out_dir / "params.json");
  if (!params_out) throw std::runtime_error("cannot write params.json");
  params_out << record.dump(2) << "\n";
}

}  // namespace speckle
