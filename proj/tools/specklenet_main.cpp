#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "speckle/errors.hpp"
#include "speckle/metrics.hpp"
#include "speckle/model.hpp"
#include "speckle/pipeline.hpp"
#include "speckle/taxonomy.hpp"
#include "speckle/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string default_taxonomy_path() {
  const char* env = std::getenv("SPECKLENET_TAXONOMY");
  return env ? env : "data/taxonomy.json";
}

void emit(const json& doc, bool as_json) {
  if (as_json) {
    std::cout << doc.dump() << "\n";
    return;
  }
  for (const auto& [key, value] : doc.items()) {
    if (value.is_structured()) {
      std::cout << key << ": " << value.dump() << "\n";
    } else if (value.is_string()) {
      std::cout << key << ": " << value.get<std::string>() << "\n";
    } else {
      std::cout << key << ": " << value.dump() << "\n";
    }
  }
}

struct SynthArgs {
  std::string out_dir;
  std::string taxonomy = default_taxonomy_path();
  std::size_t classes = 8;
  std::size_t per_train = 100, per_val = 20, per_test = 20;
  std::size_t resolution = 128;
  std::uint64_t seed = 42;
  bool json_out = false;
};

int run_synth(const SynthArgs& args) {
  speckle::Taxonomy taxonomy = speckle::load_taxonomy(args.taxonomy);
  if (args.classes == 0 || args.classes > taxonomy.size()) {
    throw std::invalid_argument("--classes must be in [1, " + std::to_string(taxonomy.size()) + "]");
  }
  speckle::SynthDatasetOptions options;
  options.out_dir = args.out_dir;
  options.per_class_train = args.per_train;
  options.per_class_val = args.per_val;
  options.per_class_test = args.per_test;
  options.resolution = args.resolution;
  options.seed = args.seed;
  auto ladder = speckle::default_synth_ladder(args.classes, args.seed);
  for (std::size_t c = 0; c < args.classes; ++c) {
    options.classes.push_back({taxonomy.classes()[c].name, ladder[c]});
  }
  speckle::emit_synthetic_dataset(options);

  json doc;
  doc["command"] = "synth";
  doc["out_dir"] = args.out_dir;
  doc["classes"] = args.classes;
  doc["per_class"] = {{"train", args.per_train}, {"val", args.per_val}, {"test", args.per_test}};
  doc["resolution"] = args.resolution;
  doc["seed"] = args.seed;
  emit(doc, args.json_out);
  return 0;
}

struct TrainArgs {
  std::string train_manifest;
  std::string val_manifest;
  std::string out_weights;
  std::string history_csv;
  std::string taxonomy = default_taxonomy_path();
  std::size_t resolution = 512;
  double lr = 1e-3;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 500;
  std::size_t patience = 50;
  std::string schedule = "plateau";
  double plateau_factor = 0.5;
  int plateau_patience = 10;
  std::uint64_t seed = 42;
  std::size_t threads = 0;
  bool no_augment = false;
  bool json_out = false;
  bool quiet = false;
};

int run_train(const TrainArgs& args) {
  speckle::Taxonomy taxonomy = speckle::load_taxonomy(args.taxonomy);
  speckle::DatasetManifest train_manifest =
      speckle::load_manifest(args.train_manifest, taxonomy, speckle::Split::Train);
  speckle::DatasetManifest val_manifest =
      speckle::load_manifest(args.val_manifest, taxonomy, speckle::Split::Val);
  speckle::ManifestDataset train_data(train_manifest, args.resolution);
  speckle::ManifestDataset val_data(val_manifest, args.resolution);
  speckle::AugmentedDataset augmented(train_data, args.seed);

  speckle::TrainingConfig config;
  config.learning_rate = args.lr;
  config.batch_size = args.batch_size;
  config.max_epochs = args.max_epochs;
  config.early_stop_patience = args.patience;
  config.seed = args.seed;
  config.threads = args.threads;
  config.lr_schedule.kind = args.schedule == "constant" ? speckle::LrScheduleKind::Constant
                                                        : speckle::LrScheduleKind::ReduceOnPlateau;
  config.lr_schedule.factor = args.plateau_factor;
  config.lr_schedule.patience = args.plateau_patience;

  speckle::Model model = speckle::init_model(speckle::canonical_spec(), args.seed);
  const speckle::Dataset& train_view =
      args.no_augment ? static_cast<const speckle::Dataset&>(train_data) : augmented;

  if (!args.quiet && !args.json_out) {
    std::cout << "training on " << train_data.size() << " images, validating on " << val_data.size()
              << " (seed " << args.seed << ")\n";
  }
  speckle::TrainResult result = speckle::train(model, train_view, val_data, config);

  speckle::save_weights(result.model, args.out_weights);
  const std::string history_path =
      args.history_csv.empty() ? args.out_weights + ".history.csv" : args.history_csv;
  speckle::write_history_csv(result.history, history_path);

  json doc;
  doc["command"] = "train";
  doc["epochs_run"] = result.history.records.size();
  doc["best_epoch"] = result.history.best_epoch;
  doc["best_val_accuracy"] = result.history.best_val_accuracy;
  doc["weights"] = args.out_weights;
  doc["history"] = history_path;
  doc["seed"] = args.seed;
  emit(doc, args.json_out);
  return 0;
}

struct EvalArgs {
  std::string weights;
  std::string manifest;
  std::string taxonomy = default_taxonomy_path();
  std::string granularity = "fine";
  std::string report_path;
  std::string confusion_path;
  std::string plot_path;
  std::size_t resolution = 512;
  std::uint64_t seed = 42;
  bool json_out = false;
};

int run_eval(const EvalArgs& args) {
  speckle::Taxonomy taxonomy = speckle::load_taxonomy(args.taxonomy);
  speckle::Model model = speckle::load_weights(args.weights);
  if (model.spec.num_classes != taxonomy.size()) {
    throw std::invalid_argument("model has " + std::to_string(model.spec.num_classes) +
                                " classes but taxonomy has " + std::to_string(taxonomy.size()));
  }
  const speckle::Granularity granularity = speckle::granularity_from_string(args.granularity);
  speckle::DatasetManifest manifest =
      speckle::load_manifest(args.manifest, taxonomy, speckle::Split::Test);
  speckle::ManifestDataset dataset(manifest, args.resolution);

  std::vector<int> preds, labels;
  preds.reserve(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    speckle::Sample s = dataset.at(i);
    preds.push_back(static_cast<int>(speckle::predict(model, s.image).first));
    labels.push_back(s.label);
  }

  speckle::ConfusionMatrix fine = speckle::confusion(preds, labels, taxonomy.size());
  speckle::ConfusionMatrix grouped = speckle::group_confusion(fine, taxonomy, granularity);
  speckle::MetricReport metrics = speckle::report(grouped);

  if (!args.report_path.empty()) {
    const auto format = fs::path(args.report_path).extension() == ".csv"
                            ? speckle::ReportFormat::CSV
                            : speckle::ReportFormat::JSON;
    speckle::export_report(metrics, grouped, args.report_path, format);
  }
  if (!args.confusion_path.empty()) speckle::write_confusion_csv(grouped, args.confusion_path);
  if (!args.plot_path.empty()) {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < grouped.n; ++i) names.push_back(taxonomy.family_name(granularity, i));
    speckle::render_confusion_plot(grouped, args.plot_path, &names);
  }

  json doc;
  doc["command"] = "eval";
  doc["granularity"] = args.granularity;
  doc["samples"] = dataset.size();
  doc["accuracy"] = metrics.accuracy;
  doc["macro_f1"] = metrics.macro_f1;
  doc["weighted_f1"] = metrics.weighted_f1;
  doc["seed"] = args.seed;
  emit(doc, args.json_out);
  return 0;
}

struct ClassifyArgs {
  std::string weights;
  std::string image;
  std::string taxonomy = default_taxonomy_path();
  std::size_t resolution = 512;
  std::uint64_t seed = 42;
};

int run_classify(const ClassifyArgs& args) {
  speckle::Taxonomy taxonomy = speckle::load_taxonomy(args.taxonomy);
  speckle::Model model = speckle::load_weights(args.weights);
  speckle::RawImage raw = speckle::read_image(args.image);
  speckle::Tensor input = speckle::preprocess(raw, args.resolution);
  speckle::Decision d = speckle::classify_with_preset(model, input, taxonomy);

  json doc;
  doc["class"] = d.class_name;
  doc["confidence"] = d.confidence;
  doc["family9"] = d.family9;
  doc["family5"] = d.family5;
  doc["preset"] = {{"power_percent", d.preset.power_percent},
                   {"speed_mm_per_s", d.preset.speed_mm_per_s},
                   {"frequency_hz", d.preset.frequency_hz},
                   {"allowed", d.preset.allowed}};
  doc["allowed"] = d.allowed;
  if (!d.allowed) doc["refusal_reason"] = d.refusal_reason;
  doc["seed"] = args.seed;
  std::cout << doc.dump() << "\n";
  return 0;
}

struct BenchArgs {
  std::string weights;
  std::string manifest;
  std::string taxonomy = default_taxonomy_path();
  std::size_t count = 16;
  std::size_t warmup = 2;
  std::size_t resolution = 512;
  std::size_t threads = 1;
  std::uint64_t seed = 42;
  bool json_out = false;
};

int run_bench(const BenchArgs& args) {
  speckle::Model model = speckle::load_weights(args.weights);
  std::vector<speckle::Tensor> images;
  if (!args.manifest.empty()) {
    speckle::Taxonomy taxonomy = speckle::load_taxonomy(args.taxonomy);
    speckle::DatasetManifest manifest =
        speckle::load_manifest(args.manifest, taxonomy, speckle::Split::Test);
    speckle::ManifestDataset dataset(manifest, args.resolution);
    for (std::size_t i = 0; i < dataset.size(); ++i) images.push_back(dataset.at(i).image);
  } else {
    speckle::SpeckleParams params;
    for (std::size_t i = 0; i < args.count; ++i) {
      params.seed = args.seed + i;
      images.push_back(speckle::preprocess(speckle::synth_speckle(params, args.resolution, args.resolution),
                                           args.resolution));
    }
  }

  speckle::BenchResult r = speckle::benchmark(model, images, args.warmup, args.threads);
  if (args.json_out) {
    json doc;
    doc["command"] = "bench";
    doc["seconds_per_sample"] = r.seconds_per_sample;
    doc["images_per_second"] = r.images_per_second;
    doc["samples"] = r.samples;
    doc["warmup"] = r.warmup;
    doc["threads"] = r.threads;
    doc["reference_seconds_per_sample"] = speckle::reference::kSecondsPerSample;
    doc["reference_images_per_second"] = speckle::reference::kImagesPerSecond;
    doc["reference_note"] = "hardware-dependent";
    doc["seed"] = args.seed;
    std::cout << doc.dump() << "\n";
  } else {
    std::cout << speckle::bench_summary(r) << "\nseed: " << args.seed << "\n";
  }
  return 0;
}

struct InspectArgs {
  std::string target = "canonical";
  std::size_t resolution = 512;
  bool json_out = false;
};

int run_inspect(const InspectArgs& args) {
  speckle::ModelSpec spec;
  if (args.target == "canonical") {
    spec = speckle::canonical_spec();
  } else {
    spec = speckle::load_weights(args.target).spec;
  }
  const auto shapes = speckle::layer_output_shapes(spec, args.resolution, args.resolution);
  const auto params = speckle::parameter_shapes(spec);
  const std::size_t total = speckle::parameter_count(spec);

  json layers = json::array();
  std::size_t slot = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const speckle::LayerSpec& l = spec.layers[i];
    json layer;
    layer["index"] = i;
    layer["kind"] = speckle::layer_kind_name(l.kind);
    layer["output_shape"] = shapes[i];
    std::size_t count = 0;
    if (l.has_params()) {
      count = speckle::shape_product(params[slot].first) + speckle::shape_product(params[slot].second);
      ++slot;
    }
    layer["parameters"] = count;
    layers.push_back(std::move(layer));
  }

  if (args.json_out) {
    json doc;
    doc["command"] = "inspect";
    doc["target"] = args.target;
    doc["resolution"] = args.resolution;
    doc["layers"] = layers;
    doc["total_parameters"] = total;
    doc["weight_payload_bytes"] = speckle::weight_payload_bytes(spec);
    doc["reference_resnet50_parameters"] = speckle::reference::kResnet50Params;
    std::cout << doc.dump() << "\n";
  } else {
    for (const auto& layer : layers) {
      std::cout << "layer " << layer["index"] << " " << layer["kind"].get<std::string>() << " -> "
                << layer["output_shape"].dump() << " params " << layer["parameters"] << "\n";
    }
    std::cout << "weight payload bytes: " << speckle::weight_payload_bytes(spec) << "\n";
    if (total > 0) {
      std::cout << "reference ResNet-50 backbone: " << speckle::reference::kResnet50Params
                << " parameters ("
                << static_cast<double>(speckle::reference::kResnet50Params) / static_cast<double>(total)
                << "x larger)\n";
    }
    std::cout << "total parameters: " << total << "\n";
  }
  return 0;
}

std::string one_line(std::string message) {
  std::replace(message.begin(), message.end(), '\n', ' ');
  return message;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"specklenet: train, evaluate and serve the lightweight speckle material classifier"};
  app.require_subcommand(1);

  SynthArgs synth;
  CLI::App* synth_cmd = app.add_subcommand("synth", "generate a deterministic synthetic speckle dataset");
  synth_cmd->add_option("--out", synth.out_dir, "output directory")->required();
  synth_cmd->add_option("--classes", synth.classes, "number of classes (taxonomy ids 0..n-1)");
  synth_cmd->add_option("--train", synth.per_train, "train images per class");
  synth_cmd->add_option("--val", synth.per_val, "validation images per class");
  synth_cmd->add_option("--test", synth.per_test, "test images per class");
  synth_cmd->add_option("--resolution", synth.resolution, "image side in pixels");
  synth_cmd->add_option("--seed", synth.seed, "generator seed");
  synth_cmd->add_option("--taxonomy", synth.taxonomy, "taxonomy config path");
  synth_cmd->add_flag("--json", synth.json_out, "machine-readable output");

  TrainArgs train_args;
  CLI::App* train_cmd = app.add_subcommand("train", "train the classifier on a manifest dataset");
  train_cmd->add_option("--train", train_args.train_manifest, "training manifest")->required();
  train_cmd->add_option("--val", train_args.val_manifest, "validation manifest")->required();
  train_cmd->add_option("--out", train_args.out_weights, "output weight file")->required();
  train_cmd->add_option("--history", train_args.history_csv, "history CSV path");
  train_cmd->add_option("--taxonomy", train_args.taxonomy, "taxonomy config path");
  train_cmd->add_option("--resolution", train_args.resolution, "preprocessing resolution");
  train_cmd->add_option("--lr", train_args.lr, "Adam learning rate");
  train_cmd->add_option("--batch-size", train_args.batch_size, "mini-batch size");
  train_cmd->add_option("--max-epochs", train_args.max_epochs, "epoch cap");
  train_cmd->add_option("--patience", train_args.patience, "early-stop patience (epochs)");
  train_cmd->add_option("--schedule", train_args.schedule, "lr schedule: constant or plateau")
      ->check(CLI::IsMember({"constant", "plateau"}));
  train_cmd->add_option("--plateau-factor", train_args.plateau_factor, "plateau reduction factor");
  train_cmd->add_option("--plateau-patience", train_args.plateau_patience, "plateau patience");
  train_cmd->add_option("--seed", train_args.seed, "training seed");
  train_cmd->add_option("--threads", train_args.threads, "worker threads (0 = auto)");
  train_cmd->add_flag("--no-augment", train_args.no_augment, "disable flip augmentation");
  train_cmd->add_flag("--quiet", train_args.quiet, "suppress progress output");
  train_cmd->add_flag("--json", train_args.json_out, "machine-readable output");

  EvalArgs eval_args;
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate weights on a manifest dataset");
  eval_cmd->add_option("--weights", eval_args.weights, "weight file")->required();
  eval_cmd->add_option("--manifest", eval_args.manifest, "dataset manifest")->required();
  eval_cmd->add_option("--taxonomy", eval_args.taxonomy, "taxonomy config path");
  eval_cmd->add_option("--granularity", eval_args.granularity, "fine, nine or five")
      ->check(CLI::IsMember({"fine", "nine", "five"}));
  eval_cmd->add_option("--report", eval_args.report_path, "metric report output (.json or .csv)");
  eval_cmd->add_option("--confusion", eval_args.confusion_path, "confusion CSV output");
  eval_cmd->add_option("--plot", eval_args.plot_path, "confusion plot output (.pgm or text)");
  eval_cmd->add_option("--resolution", eval_args.resolution, "preprocessing resolution");
  eval_cmd->add_option("--seed", eval_args.seed, "seed (reported for reproducibility)");
  eval_cmd->add_flag("--json", eval_args.json_out, "machine-readable output");

  ClassifyArgs classify_args;
  CLI::App* classify_cmd = app.add_subcommand("classify", "classify one image and resolve its preset");
  classify_cmd->add_option("--weights", classify_args.weights, "weight file")->required();
  classify_cmd->add_option("--image", classify_args.image, "PGM/PPM image path")->required();
  classify_cmd->add_option("--taxonomy", classify_args.taxonomy, "taxonomy config path");
  classify_cmd->add_option("--resolution", classify_args.resolution, "preprocessing resolution");
  classify_cmd->add_option("--seed", classify_args.seed, "seed (reported for reproducibility)");

  BenchArgs bench_args;
  CLI::App* bench_cmd = app.add_subcommand("bench", "measure forward-pass throughput");
  bench_cmd->add_option("--weights", bench_args.weights, "weight file")->required();
  bench_cmd->add_option("--manifest", bench_args.manifest, "optional manifest of bench images");
  bench_cmd->add_option("--taxonomy", bench_args.taxonomy, "taxonomy config path");
  bench_cmd->add_option("--count", bench_args.count, "synthetic image count when no manifest");
  bench_cmd->add_option("--warmup", bench_args.warmup, "warmup iterations (min 1)");
  bench_cmd->add_option("--resolution", bench_args.resolution, "input resolution");
  bench_cmd->add_option("--threads", bench_args.threads, "opt-in parallel mode");
  bench_cmd->add_option("--seed", bench_args.seed, "synthetic input seed");
  bench_cmd->add_flag("--json", bench_args.json_out, "machine-readable output");

  InspectArgs inspect_args;
  CLI::App* inspect_cmd = app.add_subcommand("inspect", "print layer shapes and parameter totals");
  inspect_cmd->add_option("target", inspect_args.target, "'canonical' or a weight file path");
  inspect_cmd->add_option("--resolution", inspect_args.resolution, "input resolution for shapes");
  inspect_cmd->add_flag("--json", inspect_args.json_out, "machine-readable output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    return 2;
  }

  try {
    if (*synth_cmd) return run_synth(synth);
    if (*train_cmd) return run_train(train_args);
    if (*eval_cmd) return run_eval(eval_args);
    if (*classify_cmd) return run_classify(classify_args);
    if (*bench_cmd) return run_bench(bench_args);
    if (*inspect_cmd) return run_inspect(inspect_args);
  } catch (const speckle::NumericError& e) {
    std::cerr << "error: " << one_line(e.what()) << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << one_line(e.what()) << "\n";
    return 3;
  }
  return 2;
}
