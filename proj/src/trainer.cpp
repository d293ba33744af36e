#include "speckle/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "speckle/errors.hpp"
#include "speckle/ops.hpp"

namespace speckle {

namespace {

std::size_t effective_threads(std::size_t requested, std::size_t work_items) {
  std::size_t n = requested == 0 ? std::max<unsigned>(1, std::thread::hardware_concurrency()) : requested;
  return std::max<std::size_t>(1, std::min(n, work_items));
}

/// Runs fn(i) for i in [0, n) across the given number of threads. The first
/// exception a worker raises is rethrown on the calling thread after join.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads);
  std::exception_ptr first_error;
  std::mutex error_mutex;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w]() {
      for (std::size_t i = w; i < n; i += threads) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

void require_grad_shapes(const Model& model, const Gradients& grads) {
  if (grads.kernel.size() != model.params.size() || grads.bias.size() != model.params.size()) {
    throw std::invalid_argument("adam_step: gradient count does not match parameter count");
  }
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    require_same_shape(model.params[i].kernel, grads.kernel[i], "adam_step kernel");
    require_same_shape(model.params[i].bias, grads.bias[i], "adam_step bias");
  }
}

void validate_dataset(const Dataset& dataset, std::size_t num_classes, const char* name) {
  if (dataset.size() == 0) throw std::invalid_argument(std::string(name) + " split is empty");
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    int label = dataset.label_at(i);
    if (label < 0 || static_cast<std::size_t>(label) >= num_classes) {
      throw std::invalid_argument(std::string(name) + " label " + std::to_string(label) +
                                  " at index " + std::to_string(i) + " out of range for " +
                                  std::to_string(num_classes) + " classes");
    }
  }
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  // Fisher-Yates with an explicit draw so the permutation is stable across platforms.
  for (std::size_t i = n; i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

Model copy_snapped(const Model& model) {
  Model out = model;
  snap_params_to_f32(out);
  return out;
}

}  // namespace

AdamState make_adam_state(const Model& model) {
  AdamState s;
  for (const LayerParams& p : model.params) {
    s.m_kernel.emplace_back(p.kernel.shape());
    s.v_kernel.emplace_back(p.kernel.shape());
    s.m_bias.emplace_back(p.bias.shape());
    s.v_bias.emplace_back(p.bias.shape());
  }
  return s;
}

void adam_update_tensor(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v, std::size_t t,
                        double lr, double beta1, double beta2, double epsilon) {
  require_same_shape(param, grad, "adam update");
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    m[i] = beta1 * m[i] + (1.0 - beta1) * g;
    v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
    const double m_hat = m[i] / bc1;
    const double v_hat = v[i] / bc2;
    param[i] -= lr * m_hat / (std::sqrt(v_hat) + epsilon);
  }
}

void adam_step(Model& model, const Gradients& grads, AdamState& state, const TrainingConfig& config,
               double learning_rate) {
  require_grad_shapes(model, grads);
  state.t += 1;
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    adam_update_tensor(model.params[i].kernel, grads.kernel[i], state.m_kernel[i], state.v_kernel[i],
                       state.t, learning_rate, config.adam_beta1, config.adam_beta2,
                       config.adam_epsilon);
    adam_update_tensor(model.params[i].bias, grads.bias[i], state.m_bias[i], state.v_bias[i],
                       state.t, learning_rate, config.adam_beta1, config.adam_beta2,
                       config.adam_epsilon);
  }
}

double apply_lr_schedule(LrScheduleState& state, const TrainingHistory& history,
                         const TrainingConfig& config) {
  if (history.records.empty()) return state.rate;
  const double acc = history.records.back().val_accuracy;
  if (acc > state.best_val_accuracy) {
    state.best_val_accuracy = acc;
    state.epochs_since_improvement = 0;
  } else {
    state.epochs_since_improvement += 1;
  }
  if (config.lr_schedule.kind == LrScheduleKind::ReduceOnPlateau &&
      state.epochs_since_improvement >= config.lr_schedule.patience) {
    state.rate *= config.lr_schedule.factor;
    state.epochs_since_improvement = 0;
  }
  return state.rate;
}

EvalResult evaluate(const Model& model, const Dataset& dataset, std::size_t threads) {
  const std::size_t n = dataset.size();
  if (n == 0) throw std::invalid_argument("evaluate: dataset is empty");
  std::vector<double> losses(n, 0.0);
  std::vector<char> correct(n, 0);
  parallel_for(n, effective_threads(threads, n), [&](std::size_t i) {
    Sample s = dataset.at(i);
    Tensor probs = forward(model, s.image);
    losses[i] = cross_entropy(probs, static_cast<std::size_t>(s.label));
    correct[i] = argmax_with_confidence(probs).first == static_cast<std::size_t>(s.label) ? 1 : 0;
  });
  double loss_sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    loss_sum += losses[i];
    hits += correct[i];
  }
  if (!std::isfinite(loss_sum)) throw NumericError("evaluate: non-finite loss");
  return {loss_sum / static_cast<double>(n), static_cast<double>(hits) / static_cast<double>(n)};
}

BatchGradient compute_batch_gradient(const Model& model, const Dataset& dataset,
                                     const std::vector<std::size_t>& indices, std::size_t threads) {
  const std::size_t b = indices.size();
  if (b == 0) throw std::invalid_argument("compute_batch_gradient: empty batch");
  std::vector<Gradients> per_sample(b);
  std::vector<double> losses(b, 0.0);
  std::vector<char> correct(b, 0);
  parallel_for(b, effective_threads(threads, b), [&](std::size_t j) {
    Sample s = dataset.at(indices[j]);
    ForwardTrace trace = forward_trace(model, s.image);
    const Tensor& probs = trace.activations.back();
    losses[j] = cross_entropy(probs, static_cast<std::size_t>(s.label));
    correct[j] = argmax_with_confidence(probs).first == static_cast<std::size_t>(s.label) ? 1 : 0;
    per_sample[j] = backward_cross_entropy(model, trace, static_cast<std::size_t>(s.label));
  });

  BatchGradient out;
  out.grads = std::move(per_sample[0]);
  for (std::size_t j = 1; j < b; ++j) {
    for (std::size_t p = 0; p < out.grads.kernel.size(); ++p) {
      double* acc = out.grads.kernel[p].data();
      const double* add = per_sample[j].kernel[p].data();
      for (std::size_t i = 0; i < out.grads.kernel[p].size(); ++i) acc[i] += add[i];
      double* accb = out.grads.bias[p].data();
      const double* addb = per_sample[j].bias[p].data();
      for (std::size_t i = 0; i < out.grads.bias[p].size(); ++i) accb[i] += addb[i];
    }
  }
  const double inv = 1.0 / static_cast<double>(b);
  for (std::size_t p = 0; p < out.grads.kernel.size(); ++p) {
    for (std::size_t i = 0; i < out.grads.kernel[p].size(); ++i) out.grads.kernel[p][i] *= inv;
    for (std::size_t i = 0; i < out.grads.bias[p].size(); ++i) out.grads.bias[p][i] *= inv;
  }
  for (std::size_t j = 0; j < b; ++j) {
    out.loss_sum += losses[j];
    out.correct += correct[j];
  }
  if (!std::isfinite(out.loss_sum)) throw NumericError("training batch produced non-finite loss");
  return out;
}

TrainResult train(const Model& initial, const Dataset& train_set, const Dataset& val_set,
                  const TrainingConfig& config) {
  if (config.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (config.early_stop_patience < 1) throw std::invalid_argument("early_stop_patience must be >= 1");
  if (config.adam_beta1 <= 0.0 || config.adam_beta1 >= 1.0 || config.adam_beta2 <= 0.0 ||
      config.adam_beta2 >= 1.0) {
    throw std::invalid_argument("adam betas must lie in (0, 1)");
  }
  validate_dataset(train_set, initial.spec.num_classes, "train");
  validate_dataset(val_set, initial.spec.num_classes, "validation");

  Model model = initial;
  AdamState state = make_adam_state(model);
  std::mt19937_64 shuffle_rng(config.seed);
  const std::size_t threads = effective_threads(config.threads, config.batch_size);

  TrainResult result;
  result.history.best_val_accuracy = -1.0;
  LrScheduleState lr_state{config.learning_rate, -std::numeric_limits<double>::infinity(), 0};
  double current_lr = config.learning_rate;
  std::size_t epochs_since_best = 0;
  const std::size_t n = train_set.size();

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    train_set.set_epoch(static_cast<int>(epoch));
    std::vector<std::size_t> order = shuffled_indices(n, shuffle_rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t end = std::min(n, start + config.batch_size);
      std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                     order.begin() + static_cast<std::ptrdiff_t>(end));
      BatchGradient bg = compute_batch_gradient(model, train_set, batch, threads);
      adam_step(model, bg.grads, state, config, current_lr);
      loss_sum += bg.loss_sum;
      correct += bg.correct;
    }

    EvalResult val = evaluate(model, val_set, threads);
    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = loss_sum / static_cast<double>(n);
    record.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
    record.val_loss = val.loss;
    record.val_accuracy = val.accuracy;
    record.learning_rate = current_lr;
    result.history.records.push_back(record);

    if (val.accuracy > result.history.best_val_accuracy) {
      result.history.best_val_accuracy = val.accuracy;
      result.history.best_epoch = epoch;
      result.model = copy_snapped(model);
      epochs_since_best = 0;
    } else {
      epochs_since_best += 1;
    }

    current_lr = apply_lr_schedule(lr_state, result.history, config);
    if (epochs_since_best >= config.early_stop_patience) break;
  }
  return result;
}

void write_history_csv(const TrainingHistory& history, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  out << "epoch,train_loss,train_acc,val_loss,val_acc,lr\n";
  char line[256];
  for (const EpochRecord& r : history.records) {
    std::snprintf(line, sizeof(line), "%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.epoch, r.train_loss,
                  r.train_accuracy, r.val_loss, r.val_accuracy, r.learning_rate);
    out << line;
  }
  if (!out) throw std::runtime_error(path + ": write failed");
}

TrainingHistory read_history_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path + ": cannot open history file");
  TrainingHistory h;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path + ": empty history file");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    EpochRecord r;
    std::istringstream row(line);
    std::string field;
    auto next = [&](double& v) {
      if (!std::getline(row, field, ',')) throw std::runtime_error(path + ": malformed history row");
      v = std::stod(field);
    };
    double epoch = 0;
    next(epoch);
    r.epoch = static_cast<std::size_t>(epoch);
    next(r.train_loss);
    next(r.train_accuracy);
    next(r.val_loss);
    next(r.val_accuracy);
    next(r.learning_rate);
    h.records.push_back(r);
  }
  for (const EpochRecord& r : h.records) {
    if (h.best_epoch == 0 || r.val_accuracy > h.best_val_accuracy) {
      h.best_val_accuracy = r.val_accuracy;
      h.best_epoch = r.epoch;
    }
  }
  return h;
}

}  // namespace speckle
