#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "speckle/model.hpp"
#include "speckle/tensor.hpp"

namespace speckle {

struct Sample {
  Tensor image;
  int label = 0;
};

/// Read-only sample source. at() must be safe for concurrent callers.
class Dataset {
 public:
  virtual ~Dataset() = default;
  virtual std::size_t size() const = 0;
  virtual Sample at(std::size_t i) const = 0;
  virtual int label_at(std::size_t i) const { return at(i).label; }
  /// Epoch hint for augmenting wrappers; plain datasets ignore it.
  virtual void set_epoch(int) const {}
};

class MemoryDataset : public Dataset {
 public:
  MemoryDataset() = default;
  explicit MemoryDataset(std::vector<Sample> samples) : samples_(std::move(samples)) {}

  void add(Tensor image, int label) { samples_.push_back({std::move(image), label}); }

  std::size_t size() const override { return samples_.size(); }
  Sample at(std::size_t i) const override { return samples_[i]; }
  int label_at(std::size_t i) const override { return samples_[i].label; }

 private:
  std::vector<Sample> samples_;
};

enum class LrScheduleKind { Constant, ReduceOnPlateau };

struct LrSchedule {
  LrScheduleKind kind = LrScheduleKind::ReduceOnPlateau;
  double factor = 0.5;
  int patience = 10;
};

struct TrainingConfig {
  double learning_rate = 1e-3;
  LrSchedule lr_schedule;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 500;
  std::size_t early_stop_patience = 50;
  std::uint64_t seed = 42;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::size_t threads = 0;  // 0 = hardware concurrency
};

struct AdamState {
  std::vector<Tensor> m_kernel, v_kernel;
  std::vector<Tensor> m_bias, v_bias;
  std::size_t t = 0;
};

AdamState make_adam_state(const Model& model);

/// Single Adam update with bias-corrected moments. The step counter is
/// incremented before the correction, so the first call uses t = 1.
void adam_step(Model& model, const Gradients& grads, AdamState& state, const TrainingConfig& config,
               double learning_rate);
inline void adam_step(Model& model, const Gradients& grads, AdamState& state,
                      const TrainingConfig& config) {
  adam_step(model, grads, state, config, config.learning_rate);
}

/// Element-wise Adam update on one tensor; exposed for direct testing.
void adam_update_tensor(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v, std::size_t t,
                        double lr, double beta1, double beta2, double epsilon);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  double learning_rate = 0.0;
};

struct TrainingHistory {
  std::vector<EpochRecord> records;
  std::size_t best_epoch = 0;
  double best_val_accuracy = 0.0;
};

struct LrScheduleState {
  double rate = 0.0;
  double best_val_accuracy = -std::numeric_limits<double>::infinity();
  int epochs_since_improvement = 0;
};

/// Consumes the latest epoch record and returns the rate for the next epoch.
double apply_lr_schedule(LrScheduleState& state, const TrainingHistory& history,
                         const TrainingConfig& config);

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Mean cross-entropy and argmax accuracy over the whole dataset, no augmentation.
EvalResult evaluate(const Model& model, const Dataset& dataset, std::size_t threads = 1);

struct BatchGradient {
  Gradients grads;  // mean over the batch
  double loss_sum = 0.0;
  std::size_t correct = 0;
};

/// Mean of per-sample gradients over the given indices. Per-sample work may run
/// on several threads; the reduction is in index order, so results do not
/// depend on the thread count.
BatchGradient compute_batch_gradient(const Model& model, const Dataset& dataset,
                                     const std::vector<std::size_t>& indices, std::size_t threads);

struct TrainResult {
  Model model;  // best checkpoint, never the last epoch
  TrainingHistory history;
};

/// Mini-batch training with early stopping on validation accuracy and
/// best-weights checkpointing. Deterministic for a fixed seed.
TrainResult train(const Model& initial, const Dataset& train_set, const Dataset& val_set,
                  const TrainingConfig& config);

void write_history_csv(const TrainingHistory& history, const std::string& path);
TrainingHistory read_history_csv(const std::string& path);

}  // namespace speckle
