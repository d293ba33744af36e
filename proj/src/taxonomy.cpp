#include "speckle/taxonomy.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace speckle {

Granularity granularity_from_string(const std::string& name) {
  if (name == "fine") return Granularity::Fine;
  if (name == "nine") return Granularity::Nine;
  if (name == "five") return Granularity::Five;
  throw std::invalid_argument("unknown granularity '" + name + "' (expected fine, nine, or five)");
}

const char* granularity_name(Granularity g) {
  switch (g) {
    case Granularity::Fine: return "fine";
    case Granularity::Nine: return "nine";
    case Granularity::Five: return "five";
  }
  return "?";
}

namespace {

std::size_t index_of(std::vector<std::string>& names, const std::string& name) {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return i;
  }
  names.push_back(name);
  return names.size() - 1;
}

}  // namespace

Taxonomy Taxonomy::from_parts(std::vector<MaterialClass> classes,
                              std::map<std::string, Preset> presets, std::string version) {
  if (classes.empty()) throw std::invalid_argument("taxonomy: class list is empty");
  std::sort(classes.begin(), classes.end(),
            [](const MaterialClass& a, const MaterialClass& b) { return a.id < b.id; });
  Taxonomy t;
  std::map<std::string, std::string> family9_to_5;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    const MaterialClass& c = classes[i];
    if (c.id != static_cast<int>(i)) {
      throw std::invalid_argument("taxonomy: class ids must be dense from 0, got id " +
                                  std::to_string(c.id) + " at position " + std::to_string(i));
    }
    if (c.name.empty()) throw std::invalid_argument("taxonomy: class " + std::to_string(c.id) + " has an empty name");
    if (c.family9.empty() || c.family5.empty()) {
      throw std::invalid_argument("taxonomy: class '" + c.name + "' is missing a family");
    }
    if (!t.id_by_name_.emplace(c.name, c.id).second) {
      throw std::invalid_argument("taxonomy: duplicate class name '" + c.name + "'");
    }
    auto [it, inserted] = family9_to_5.emplace(c.family9, c.family5);
    if (!inserted && it->second != c.family5) {
      throw std::invalid_argument("taxonomy: nine-family '" + c.family9 +
                                  "' straddles five-families '" + it->second + "' and '" + c.family5 +
                                  "'");
    }
    t.family9_index_.push_back(index_of(t.family9_names_, c.family9));
    t.family5_index_.push_back(index_of(t.family5_names_, c.family5));
  }
  for (const std::string& f5 : t.family5_names_) {
    if (presets.find(f5) == presets.end()) {
      throw std::invalid_argument("taxonomy: missing preset for five-family '" + f5 + "'");
    }
  }
  for (const auto& [name, preset] : presets) {
    if (preset.power_percent <= 0.0 || preset.power_percent > 100.0) {
      throw std::invalid_argument("taxonomy: preset '" + name + "' power_percent must be in (0, 100]");
    }
    if (preset.speed_mm_per_s <= 0.0 || preset.frequency_hz <= 0.0) {
      throw std::invalid_argument("taxonomy: preset '" + name + "' speed and frequency must be > 0");
    }
  }
  for (const MaterialClass& c : classes) {
    if (c.hazardous && presets.at(c.family5).allowed) {
      throw std::invalid_argument("taxonomy: hazardous class '" + c.name + "' maps to five-family '" +
                                  c.family5 + "' whose preset is marked allowed");
    }
  }
  t.classes_ = std::move(classes);
  t.presets_ = std::move(presets);
  t.version_ = std::move(version);
  return t;
}

Taxonomy Taxonomy::from_json(const std::string& text, const std::string& origin) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(origin + ": invalid JSON: " + e.what());
  }
  if (!doc.is_object() || !doc.contains("classes") || !doc.contains("presets")) {
    throw std::invalid_argument(origin + ": taxonomy config needs 'classes' and 'presets'");
  }
  std::vector<MaterialClass> classes;
  try {
    for (const auto& entry : doc.at("classes")) {
      MaterialClass c;
      c.id = entry.at("id").get<int>();
      c.name = entry.at("name").get<std::string>();
      c.family9 = entry.at("family9").get<std::string>();
      c.family5 = entry.at("family5").get<std::string>();
      c.hazardous = entry.at("hazardous").get<bool>();
      classes.push_back(std::move(c));
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(origin + ": malformed class entry: " + e.what());
  }
  std::map<std::string, Preset> presets;
  try {
    for (const auto& [name, body] : doc.at("presets").items()) {
      Preset p;
      p.power_percent = body.at("power_percent").get<double>();
      p.speed_mm_per_s = body.at("speed_mm_per_s").get<double>();
      p.frequency_hz = body.at("frequency_hz").get<double>();
      p.allowed = body.at("allowed").get<bool>();
      presets.emplace(name, p);
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(origin + ": malformed preset entry: " + e.what());
  }
  std::string version = doc.value("version", std::string("unversioned"));

  if (classes.size() != 59) {
    throw std::invalid_argument(origin + ": taxonomy must define exactly 59 classes, got " +
                                std::to_string(classes.size()));
  }
  Taxonomy t = from_parts(std::move(classes), std::move(presets), std::move(version));
  if (t.family_count(Granularity::Nine) != 9) {
    throw std::invalid_argument(origin + ": taxonomy must define exactly 9 nine-families, got " +
                                std::to_string(t.family_count(Granularity::Nine)));
  }
  if (t.family_count(Granularity::Five) != 5) {
    throw std::invalid_argument(origin + ": taxonomy must define exactly 5 five-families, got " +
                                std::to_string(t.family_count(Granularity::Five)));
  }
  return t;
}

Taxonomy Taxonomy::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path + ": cannot open taxonomy config");
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str(), path);
}

const MaterialClass& Taxonomy::class_by_id(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= classes_.size()) {
    throw std::invalid_argument("class id " + std::to_string(id) + " out of range for " +
                                std::to_string(classes_.size()) + " classes");
  }
  return classes_[static_cast<std::size_t>(id)];
}

int Taxonomy::id_of(const std::string& name) const {
  auto it = id_by_name_.find(name);
  if (it == id_by_name_.end()) throw std::invalid_argument("unknown material class '" + name + "'");
  return it->second;
}

bool Taxonomy::has_class(const std::string& name) const {
  return id_by_name_.find(name) != id_by_name_.end();
}

std::size_t Taxonomy::family_count(Granularity g) const {
  switch (g) {
    case Granularity::Fine: return classes_.size();
    case Granularity::Nine: return family9_names_.size();
    case Granularity::Five: return family5_names_.size();
  }
  return 0;
}

std::size_t Taxonomy::family_index(int class_id, Granularity g) const {
  class_by_id(class_id);  // range check
  switch (g) {
    case Granularity::Fine: return static_cast<std::size_t>(class_id);
    case Granularity::Nine: return family9_index_[static_cast<std::size_t>(class_id)];
    case Granularity::Five: return family5_index_[static_cast<std::size_t>(class_id)];
  }
  return 0;
}

const std::string& Taxonomy::family_name(Granularity g, std::size_t index) const {
  switch (g) {
    case Granularity::Fine: return classes_.at(index).name;
    case Granularity::Nine: return family9_names_.at(index);
    case Granularity::Five: return family5_names_.at(index);
  }
  throw std::invalid_argument("bad granularity");
}

std::string Taxonomy::family_of(int class_id, Granularity g) const {
  return family_name(g, family_index(class_id, g));
}

const Preset& Taxonomy::preset_for(int class_id) const {
  return preset_for_family5(class_by_id(class_id).family5);
}

const Preset& Taxonomy::preset_for_family5(const std::string& family5) const {
  auto it = presets_.find(family5);
  if (it == presets_.end()) {
    throw std::invalid_argument("no preset for five-family '" + family5 + "'");
  }
  return it->second;
}

std::vector<double> aggregate_probabilities(const std::vector<double>& fine_probs,
                                            const Taxonomy& taxonomy, Granularity g) {
  if (fine_probs.size() != taxonomy.size()) {
    throw std::invalid_argument("probability vector length " + std::to_string(fine_probs.size()) +
                                " does not match taxonomy size " + std::to_string(taxonomy.size()));
  }
  std::vector<double> grouped(taxonomy.family_count(g), 0.0);
  for (std::size_t c = 0; c < fine_probs.size(); ++c) {
    grouped[taxonomy.family_index(static_cast<int>(c), g)] += fine_probs[c];
  }
  return grouped;
}

Decision classify_with_preset(const Model& model, const Tensor& image, const Taxonomy& taxonomy) {
  if (model.spec.num_classes != taxonomy.size()) {
    throw std::invalid_argument("model has " + std::to_string(model.spec.num_classes) +
                                " classes but taxonomy has " + std::to_string(taxonomy.size()));
  }
  auto [class_id, confidence] = predict(model, image);
  const MaterialClass& c = taxonomy.class_by_id(static_cast<int>(class_id));
  Decision d;
  d.class_id = c.id;
  d.class_name = c.name;
  d.confidence = confidence;
  d.family9 = c.family9;
  d.family5 = c.family5;
  d.preset = taxonomy.preset_for(c.id);
  d.allowed = d.preset.allowed;
  if (!d.allowed) {
    d.refusal_reason = "material family '" + c.family5 + "' is not approved for cutting";
  }
  return d;
}

}  // namespace speckle
