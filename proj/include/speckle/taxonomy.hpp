#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "speckle/model.hpp"
#include "speckle/tensor.hpp"

namespace speckle {

enum class Granularity { Fine, Nine, Five };

Granularity granularity_from_string(const std::string& name);
const char* granularity_name(Granularity g);

struct MaterialClass {
  int id = 0;
  std::string name;
  std::string family9;
  std::string family5;
  bool hazardous = false;
};

struct Preset {
  double power_percent = 0.0;
  double speed_mm_per_s = 0.0;
  double frequency_hz = 0.0;
  bool allowed = true;
};

/// Material classes with their nine- and five-family groupings and the
/// family-level cutting presets. Immutable once built; validation happens
/// at construction.
class Taxonomy {
 public:
  /// Builds from parts, enforcing structural invariants (dense ids, unique
  /// names, five-family coarsens nine-family, presets cover every five-family,
  /// hazardous classes resolve to a disallowed preset).
  static Taxonomy from_parts(std::vector<MaterialClass> classes,
                             std::map<std::string, Preset> presets, std::string version);

  /// Parses the JSON config and additionally enforces the shipped-taxonomy
  /// class and family counts (59 classes, 9 families, 5 families).
  static Taxonomy from_json(const std::string& text, const std::string& origin);
  static Taxonomy from_json_file(const std::string& path);

  std::size_t size() const { return classes_.size(); }
  const std::vector<MaterialClass>& classes() const { return classes_; }
  const MaterialClass& class_by_id(int id) const;
  int id_of(const std::string& name) const;  // throws on unknown name
  bool has_class(const std::string& name) const;

  std::size_t family_count(Granularity g) const;
  /// Dense group index of a class at the given granularity; Fine is the identity.
  std::size_t family_index(int class_id, Granularity g) const;
  const std::string& family_name(Granularity g, std::size_t index) const;
  /// Family identifier of a class; Fine returns the class's own name.
  std::string family_of(int class_id, Granularity g) const;

  const Preset& preset_for(int class_id) const;
  const Preset& preset_for_family5(const std::string& family5) const;
  const std::string& version() const { return version_; }

 private:
  Taxonomy() = default;
  std::vector<MaterialClass> classes_;          // sorted by id, ids dense from 0
  std::map<std::string, Preset> presets_;       // keyed by family5
  std::vector<std::string> family9_names_;      // first-appearance order
  std::vector<std::string> family5_names_;
  std::vector<std::size_t> family9_index_;      // per class
  std::vector<std::size_t> family5_index_;
  std::map<std::string, int> id_by_name_;
  std::string version_;
};

/// Spec'd loader: parse + validate the shipped config format.
inline Taxonomy load_taxonomy(const std::string& path) { return Taxonomy::from_json_file(path); }

/// Sums fine-grained class probabilities into family groups; total mass is preserved.
std::vector<double> aggregate_probabilities(const std::vector<double>& fine_probs,
                                            const Taxonomy& taxonomy, Granularity g);

/// One classification decision with its family grouping and cutting preset.
struct Decision {
  int class_id = 0;
  std::string class_name;
  double confidence = 0.0;
  std::string family9;
  std::string family5;
  Preset preset;
  bool allowed = true;
  std::string refusal_reason;  // empty when allowed
};

Decision classify_with_preset(const Model& model, const Tensor& image, const Taxonomy& taxonomy);

}  // namespace speckle
