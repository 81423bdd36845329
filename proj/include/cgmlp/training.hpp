#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cgmlp/cifar.hpp"
#include "cgmlp/model.hpp"

namespace cgmlp::train {

class TrainingDivergedError : public Error {
 public:
  using Error::Error;
};

// Fraction of rows whose argmax equals the label; ties pick the lowest class.
template <typename T>
double accuracy(const Tensor<T>& logits, std::span<const int> labels);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam. Moments are keyed by parameter name and created on
// first use with the parameter's shape.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  // Updates every parameter in place from its gradient (looked up by id).
  void step(const std::vector<std::pair<std::string, Tensor<T>>>& params,
            const Gradients<T>& grads);

  std::int64_t steps() const { return step_; }
  const AdamConfig& config() const { return cfg_; }
  const Tensor<T>& first_moment(const std::string& name) const { return m_.at(name); }
  const Tensor<T>& second_moment(const std::string& name) const { return v_.at(name); }

 private:
  AdamConfig cfg_;
  std::int64_t step_ = 0;
  std::map<std::string, Tensor<T>> m_;
  std::map<std::string, Tensor<T>> v_;
};

struct EarlyStopPolicy {
  int patience = 5;
  double min_delta = 0.001;
};

// True iff none of the last `patience` epochs beat the running maximum of
// all earlier epochs by more than min_delta. The first epoch always counts as
// an improvement, so the history must be longer than `patience`.
bool should_stop(std::span<const double> val_accs, const EarlyStopPolicy& policy);

// Streaming form of should_stop, fed one validation accuracy per epoch.
class EarlyStopper {
 public:
  explicit EarlyStopper(EarlyStopPolicy policy) : policy_(policy) {}
  // Returns true when training should stop after this epoch.
  bool update(double val_acc);
  int epochs_since_improvement() const { return since_; }

 private:
  EarlyStopPolicy policy_;
  std::optional<double> best_;
  int since_ = 0;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
  double wall_ms = 0.0;
};

struct TrainReport {
  std::string model;
  std::vector<EpochRecord> epochs;
  bool stopped_early = false;
  int stop_epoch = 0;
  double best_val_acc = 0.0;
  int best_epoch = 0;
  std::optional<double> test_acc;
  std::optional<double> test_loss;

  std::string to_text() const;
};

struct FitOptions {
  int epochs_max = 60;
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;
  AdamConfig adam;
  std::optional<EarlyStopPolicy> early_stop = EarlyStopPolicy{};
  // Stop as soon as an epoch's running train accuracy reaches this value.
  std::optional<double> stop_at_train_acc;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct EvalResult {
  double loss = 0.0;
  double acc = 0.0;
};

EvalResult evaluate(const Model<float>& model, const data::Dataset& ds,
                    std::size_t batch_size = 256);

// Trains with Adam on cross-entropy. Validation runs after every epoch; the
// parameters from the best-validation epoch are restored at the end and used
// for the single test evaluation. Throws TrainingDivergedError naming the
// epoch and batch on a non-finite loss.
TrainReport fit(Model<float>& model, const data::Dataset& train, const data::Dataset& val,
                const data::Dataset* test, const FitOptions& options);

struct ComparisonEntry {
  Model<float> model;
  TrainReport report;
};

// Builds and trains each config in order on identical data and batch order.
// Throws ConfigError when the configs target different datasets.
std::vector<ComparisonEntry> compare(const std::vector<ModelConfig>& configs,
                                     const data::Dataset& train, const data::Dataset& val,
                                     const data::Dataset* test, const FitOptions& options);

// --- history CSV --------------------------------------------------------------

inline constexpr const char* kHistoryHeader = "model,epoch,train_loss,train_acc,val_loss,val_acc";

struct HistoryRow {
  std::string model;
  int epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
};

// One row per model-epoch, grouped by model in report order, fixed 6 decimals.
void write_history_csv(std::ostream& out, const std::vector<TrainReport>& reports);
std::vector<HistoryRow> read_history_csv(std::istream& in);

}  // namespace cgmlp::train
