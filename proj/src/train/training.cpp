#include "cgmlp/training.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

#include "cgmlp/ops.hpp"

namespace cgmlp::train {

template <typename T>
double accuracy(const Tensor<T>& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw ShapeError("accuracy: logits " + to_string(logits.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t k = logits.dim(1);
  std::size_t correct = 0;
  for (std::size_t b = 0; b < labels.size(); ++b) {
    const T* row = logits.raw() + b * k;
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (row[j] > row[best]) best = j;
    }
    if (static_cast<int>(best) == labels[b]) ++correct;
  }
  return labels.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(labels.size());
}

template double accuracy(const Tensor<float>&, std::span<const int>);
template double accuracy(const Tensor<double>&, std::span<const int>);

template <typename T>
void Adam<T>::step(const std::vector<std::pair<std::string, Tensor<T>>>& params,
                   const Gradients<T>& grads) {
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (const auto& [name, param] : params) {
    const Tensor<T>& g = grads.of(param);
    if (g.shape() != param.shape()) {
      throw ShapeError("adam: gradient " + to_string(g.shape()) + " does not match parameter " +
                       name + " " + to_string(param.shape()));
    }
    auto mit = m_.find(name);
    if (mit == m_.end()) {
      mit = m_.emplace(name, Tensor<T>::zeros(param.shape())).first;
      v_.emplace(name, Tensor<T>::zeros(param.shape()));
    } else if (mit->second.shape() != param.shape()) {
      throw ShapeError("adam: moment shape for " + name + " changed");
    }
    auto m = mit->second.mutable_data();
    auto v = v_.at(name).mutable_data();
    auto gv = g.data();
    Tensor<T> p = param;
    auto pv = p.mutable_data();
    for (std::size_t i = 0; i < pv.size(); ++i) {
      const double gi = gv[i];
      const double mi = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
      const double vi = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      pv[i] = static_cast<T>(pv[i] - cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
    }
  }
}

template class Adam<float>;
template class Adam<double>;

bool should_stop(std::span<const double> val_accs, const EarlyStopPolicy& policy) {
  EarlyStopper stopper(policy);
  bool stop = false;
  for (double v : val_accs) stop = stopper.update(v);
  return stop;
}

bool EarlyStopper::update(double val_acc) {
  if (!best_ || val_acc - *best_ > policy_.min_delta) {
    since_ = 0;
  } else {
    ++since_;
  }
  if (!best_ || val_acc > *best_) best_ = val_acc;
  return since_ >= policy_.patience;
}

std::string TrainReport::to_text() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(6);
  os << "model: " << model << '\n';
  os << "epochs run: " << stop_epoch << '\n';
  os << "stopped early: " << (stopped_early ? "yes" : "no") << '\n';
  os << "best val acc: " << best_val_acc << " (epoch " << best_epoch << ")\n";
  if (test_acc) os << "test acc at best val: " << *test_acc << '\n';
  if (test_loss) os << "test loss at best val: " << *test_loss << '\n';
  os << "epoch  train_loss  train_acc  val_loss  val_acc\n";
  for (const auto& e : epochs) {
    os << std::setw(5) << e.epoch << "  " << e.train_loss << "  " << e.train_acc << "  "
       << e.val_loss << "  " << e.val_acc << '\n';
  }
  return os.str();
}

EvalResult evaluate(const Model<float>& model, const data::Dataset& ds, std::size_t batch_size) {
  if (ds.size() == 0) return {};
  double loss = 0.0, correct = 0.0;
  for (std::size_t start = 0; start < ds.size(); start += batch_size) {
    const std::size_t end = std::min(ds.size(), start + batch_size);
    std::vector<std::size_t> idx(end - start);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
    const data::Batch b = data::gather_batch(ds, idx);
    const Tensor<float> logits = model.forward(b.images);
    const double n = static_cast<double>(idx.size());
    loss += ops::cross_entropy(logits, std::span<const int>(b.labels)).item() * n;
    correct += accuracy(logits, std::span<const int>(b.labels)) * n;
  }
  const double total = static_cast<double>(ds.size());
  return {loss / total, correct / total};
}

TrainReport fit(Model<float>& model, const data::Dataset& train, const data::Dataset& val,
                const data::Dataset* test, const FitOptions& options) {
  if (options.epochs_max < 1) throw Error("fit: epochs_max must be >= 1");
  TrainReport report;
  report.model = model.config().name;
  Adam<float> adam(options.adam);
  std::optional<EarlyStopper> stopper;
  if (options.early_stop) stopper.emplace(*options.early_stop);
  const data::BatchPlan plan{options.batch_size, options.seed, false, true};

  Model<float> best = model.clone();
  const auto params = model.parameters();
  for (int epoch = 1; epoch <= options.epochs_max; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    double loss_sum = 0.0, correct = 0.0;
    std::size_t seen = 0, batch_index = 0;
    for (const auto& idx : data::epoch_batches(train.size(), plan, static_cast<std::size_t>(epoch))) {
      ++batch_index;
      const data::Batch b = data::gather_batch(train, idx);
      Tape<float> tape;
      Tensor<float> logits, loss;
      try {
        logits = model.bind(tape).forward(b.images);
        loss = ops::cross_entropy(logits, std::span<const int>(b.labels));
      } catch (const NonFiniteError& e) {
        throw TrainingDivergedError("non-finite values at epoch " + std::to_string(epoch) +
                                    ", batch " + std::to_string(batch_index) + ": " + e.what());
      }
      if (!std::isfinite(loss.item())) {
        throw TrainingDivergedError("non-finite loss at epoch " + std::to_string(epoch) +
                                    ", batch " + std::to_string(batch_index));
      }
      adam.step(params, tape.backward(loss));
      const double n = static_cast<double>(idx.size());
      loss_sum += loss.item() * n;
      correct += accuracy(logits, std::span<const int>(b.labels)) * n;
      seen += idx.size();
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(seen);
    rec.train_acc = correct / static_cast<double>(seen);
    const EvalResult v = evaluate(model, val);
    rec.val_loss = v.loss;
    rec.val_acc = v.acc;
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                      .count();
    report.epochs.push_back(rec);
    if (options.on_epoch) options.on_epoch(rec);

    if (report.best_epoch == 0 || rec.val_acc > report.best_val_acc) {
      report.best_val_acc = rec.val_acc;
      report.best_epoch = epoch;
      best = model.clone();
    }
    report.stop_epoch = epoch;
    if (stopper && stopper->update(rec.val_acc)) {
      report.stopped_early = epoch < options.epochs_max;
      break;
    }
    if (options.stop_at_train_acc && rec.train_acc >= *options.stop_at_train_acc) break;
  }

  // Restore the best-validation parameters into the caller's tensors.
  const auto best_params = best.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<float> dst = params[i].second;
    auto src = best_params[i].second.data();
    std::copy(src.begin(), src.end(), dst.mutable_data().begin());
  }
  if (test) {
    const EvalResult t = evaluate(model, *test);
    report.test_acc = t.acc;
    report.test_loss = t.loss;
  }
  return report;
}

std::vector<ComparisonEntry> compare(const std::vector<ModelConfig>& configs,
                                     const data::Dataset& train, const data::Dataset& val,
                                     const data::Dataset* test, const FitOptions& options) {
  for (const auto& cfg : configs) {
    if (cfg.dataset != configs.front().dataset) {
      throw ConfigError("compare: configs mix datasets (" + to_string(configs.front().dataset) +
                        " vs " + to_string(cfg.dataset) + ")");
    }
    if (cfg.dataset != train.kind) {
      throw ConfigError("compare: config " + cfg.name + " targets " + to_string(cfg.dataset) +
                        " but data is " + to_string(train.kind));
    }
  }
  std::vector<ComparisonEntry> out;
  for (const auto& cfg : configs) {
    ComparisonEntry entry{Model<float>::build(cfg), {}};
    entry.report = fit(entry.model, train, val, test, options);
    out.push_back(std::move(entry));
  }
  return out;
}

void write_history_csv(std::ostream& out, const std::vector<TrainReport>& reports) {
  out << kHistoryHeader << '\n';
  out << std::fixed << std::setprecision(6);
  for (const auto& r : reports) {
    for (const auto& e : r.epochs) {
      out << r.model << ',' << e.epoch << ',' << e.train_loss << ',' << e.train_acc << ','
          << e.val_loss << ',' << e.val_acc << '\n';
    }
  }
}

std::vector<HistoryRow> read_history_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kHistoryHeader) {
    throw Error("history CSV: missing or unexpected header");
  }
  std::vector<HistoryRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 6) throw Error("history CSV: expected 6 columns in '" + line + "'");
    try {
      rows.push_back({cells[0], std::stoi(cells[1]), std::stod(cells[2]), std::stod(cells[3]),
                      std::stod(cells[4]), std::stod(cells[5])});
    } catch (const std::exception&) {
      throw Error("history CSV: malformed number in '" + line + "'");
    }
  }
  return rows;
}

}  // namespace cgmlp::train
