#include "asckit/nn.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include "asckit/serialize.hpp"

namespace asckit::nn {

const std::vector<FilterConfiguration>& filter_configurations() {
  static const std::vector<FilterConfiguration> table = {
      {"CNN_sq", {{112, 5, 5}}},
      {"CNN_1", {{112, 3, 40}}},
      {"CNN_2", {{64, 3, 20}, {48, 3, 70}}},
      {"CNN_3", {{48, 3, 10}, {32, 3, 30}, {32, 3, 60}}},
      {"CNN_4", {{48, 3, 8}, {32, 3, 32}, {16, 3, 64}, {16, 3, 90}}},
      {"CNN_5", {{36, 3, 6}, {22, 3, 26}, {22, 3, 48}, {16, 3, 70}, {16, 3, 96}}},
  };
  return table;
}

const FilterConfiguration& filter_configuration(const std::string& name) {
  for (const auto& fc : filter_configurations()) {
    if (fc.name == name) return fc;
  }
  throw ConfigError("unknown filter configuration: " + name +
                    " (expected CNN_sq or CNN_1..CNN_5)");
}

namespace {

struct Snapshot {
  std::vector<std::vector<float>> params;
  std::vector<std::vector<float>> running;
};

Snapshot take_snapshot(Network<float>& net) {
  Snapshot s;
  for (auto* p : net.params()) s.params.push_back(p->value);
  for (auto* bn : net.batchnorm_layers()) {
    s.running.push_back(bn->running_mean());
    s.running.push_back(bn->running_var());
  }
  return s;
}

void restore_snapshot(Network<float>& net, const Snapshot& s) {
  auto params = net.params();
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = s.params[i];
  auto bns = net.batchnorm_layers();
  for (std::size_t i = 0; i < bns.size(); ++i) {
    bns[i]->running_mean() = s.running[2 * i];
    bns[i]->running_var() = s.running[2 * i + 1];
  }
}

Tensor4<float> gather_batch(const Tensor4<float>& all, const std::vector<int>& idx,
                            std::size_t lo, std::size_t hi) {
  Tensor4<float> batch(static_cast<int>(hi - lo), all.c, all.h, all.w);
  for (std::size_t i = lo; i < hi; ++i) {
    std::copy_n(all.sample(idx[i]), all.sample_size(), batch.sample(static_cast<int>(i - lo)));
  }
  return batch;
}

/// Inference-mode loss/accuracy over an index subset (includes the L2 term so
/// train and validation losses are the same quantity).
std::pair<double, double> evaluate_subset(Network<float>& net, const Tensor4<float>& all,
                                          const std::vector<int>& labels,
                                          const std::vector<int>& idx, int batch_size) {
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t lo = 0; lo < idx.size(); lo += batch_size) {
    const std::size_t hi = std::min(idx.size(), lo + batch_size);
    const Tensor4<float> batch = gather_batch(all, idx, lo, hi);
    const std::vector<double> probs = net.forward(batch, /*train=*/false);
    for (std::size_t i = lo; i < hi; ++i) {
      const int y = labels[idx[i]];
      const double* row = probs.data() + (i - lo) * net.config.classes;
      loss -= std::log(std::max(row[y], 1e-300));
      int arg = 0;
      for (int c = 1; c < net.config.classes; ++c) {
        if (row[c] > row[arg]) arg = c;
      }
      if (arg == y) ++correct;
    }
  }
  loss /= static_cast<double>(idx.size());
  if (net.config.l2 > 0.0) {
    for (auto* p : net.params()) {
      if (!p->l2) continue;
      double sq = 0.0;
      for (float v : p->value) sq += static_cast<double>(v) * v;
      loss += net.config.l2 * sq;
    }
  }
  return {loss, static_cast<double>(correct) / static_cast<double>(idx.size())};
}

}  // namespace

TrainingHistory train(Network<float>& net, const Tensor4<float>& patches,
                      const std::vector<int>& labels, const TrainingConfig& config) {
  if (patches.n < 1) throw DataError("train: empty patch set");
  if (static_cast<int>(labels.size()) != patches.n) throw DataError("train: label count mismatch");

  std::map<int, std::vector<int>> by_class;
  for (int i = 0; i < patches.n; ++i) by_class[labels[i]].push_back(i);
  for (int c = 0; c < net.config.classes; ++c) {
    if (!by_class.count(c)) {
      throw DataError("train: class " + std::to_string(c) + " missing from training data");
    }
  }

  // stratified validation split, seeded
  RngStream rng(config.seed);
  std::vector<int> train_idx, val_idx;
  for (auto& [c, idx] : by_class) {
    rng.shuffle(idx);
    const auto n_val =
        static_cast<std::size_t>(std::floor(config.val_fraction * static_cast<double>(idx.size())));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      (i < n_val ? val_idx : train_idx).push_back(idx[i]);
    }
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(val_idx.begin(), val_idx.end());
  const bool has_val = !val_idx.empty();

  AdamOptimizer<float> adam(net.params());
  TrainingHistory history;
  double lr = config.initial_lr;
  double best_val = std::numeric_limits<double>::infinity();
  Snapshot best_snapshot;
  int plateau_wait = 0, stop_wait = 0;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    rng.shuffle(train_idx);
    double loss_sum = 0.0;
    std::size_t seen = 0, correct = 0;
    std::vector<double> probs;
    for (std::size_t lo = 0; lo < train_idx.size(); lo += config.batch_size) {
      const std::size_t hi = std::min(train_idx.size(), lo + config.batch_size);
      const Tensor4<float> batch = gather_batch(patches, train_idx, lo, hi);
      std::vector<int> batch_labels(hi - lo);
      for (std::size_t i = lo; i < hi; ++i) batch_labels[i - lo] = labels[train_idx[i]];
      const double loss = net.loss_and_gradients(batch, batch_labels, &probs);
      adam.step(lr);
      loss_sum += loss * static_cast<double>(hi - lo);
      seen += hi - lo;
      for (std::size_t i = 0; i < hi - lo; ++i) {
        const double* row = probs.data() + i * net.config.classes;
        int arg = 0;
        for (int c = 1; c < net.config.classes; ++c) {
          if (row[c] > row[arg]) arg = c;
        }
        if (arg == batch_labels[i]) ++correct;
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = loss_sum / static_cast<double>(seen);
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(seen);
    if (has_val) {
      const auto [vl, va] = evaluate_subset(net, patches, labels, val_idx, config.batch_size);
      rec.val_loss = vl;
      rec.val_accuracy = va;
    } else {
      rec.val_loss = rec.train_loss;
      rec.val_accuracy = rec.train_accuracy;
    }
    history.epochs.push_back(rec);

    // strict improvement resets both patience counters
    if (rec.val_loss < best_val) {
      best_val = rec.val_loss;
      history.best_epoch = epoch;
      plateau_wait = 0;
      stop_wait = 0;
      if (config.restore_best) best_snapshot = take_snapshot(net);
    } else {
      ++plateau_wait;
      ++stop_wait;
      if (stop_wait >= config.early_stop_patience) {
        history.early_stopped = true;
        break;
      }
      if (plateau_wait >= config.plateau_patience) {
        lr /= config.plateau_factor;
        plateau_wait = 0;
      }
    }
  }

  history.best_val_loss = best_val;
  if (config.restore_best && history.best_epoch > 0 && !best_snapshot.params.empty()) {
    restore_snapshot(net, best_snapshot);
  }
  return history;
}

std::vector<std::vector<double>> predict_segments(Network<float>& net,
                                                  const Tensor4<float>& patches) {
  if (patches.n != 7) {
    throw DataError("predict_segments expects exactly 7 patches, got " +
                    std::to_string(patches.n));
  }
  const std::vector<double> probs = net.forward(patches, /*train=*/false);
  std::vector<std::vector<double>> out(7);
  for (int s = 0; s < 7; ++s) {
    out[s].assign(probs.begin() + static_cast<std::size_t>(s) * net.config.classes,
                  probs.begin() + static_cast<std::size_t>(s + 1) * net.config.classes);
  }
  return out;
}

void save_checkpoint(Network<float>& net, const std::string& path,
                     const std::vector<double>& scaler_mean,
                     const std::vector<double>& scaler_std) {
  const NetworkConfig& c = net.config;
  io::json head{{"format", "asckit-network"},
                {"version", 1},
                {"filter_configuration", c.filter_configuration},
                {"pre_activation", c.pre_activation},
                {"preact_inner", c.preact_inner},
                {"conv2_filters", c.conv2_filters},
                {"conv2_time", c.conv2_time},
                {"conv2_freq", c.conv2_freq},
                {"pool1_time", c.pool1_time},
                {"pool1_freq", c.pool1_freq},
                {"pool2_time", c.pool2_time},
                {"pool2_freq", c.pool2_freq},
                {"classes", c.classes},
                {"input_time", c.input_time},
                {"input_freq", c.input_freq},
                {"l2", c.l2},
                {"scaler_hash",
                 hex64(fnv1a64(scaler_mean.data(), scaler_mean.size() * sizeof(double)) ^
                       fnv1a64(scaler_std.data(), scaler_std.size() * sizeof(double)))}};
  io::BlobWriter w("ASCKNET1", head);
  for (auto* p : net.params()) w.add_f32(p->name, p->value);
  int bn_idx = 0;
  for (auto* bn : net.batchnorm_layers()) {
    w.add_f32("running_mean_" + std::to_string(bn_idx), bn->running_mean());
    w.add_f32("running_var_" + std::to_string(bn_idx), bn->running_var());
    ++bn_idx;
  }
  w.add_f64("scaler_mean", scaler_mean);
  w.add_f64("scaler_std", scaler_std);
  w.write(path);
}

Network<float> load_checkpoint(const std::string& path, std::vector<double>* scaler_mean,
                               std::vector<double>* scaler_std) {
  io::BlobReader r(path, "ASCKNET1");
  const auto& h = r.header();
  NetworkConfig c;
  c.filter_configuration = h.at("filter_configuration").get<std::string>();
  c.pre_activation = h.at("pre_activation").get<bool>();
  c.preact_inner = h.at("preact_inner").get<bool>();
  c.conv2_filters = h.at("conv2_filters").get<int>();
  c.conv2_time = h.at("conv2_time").get<int>();
  c.conv2_freq = h.at("conv2_freq").get<int>();
  c.pool1_time = h.at("pool1_time").get<int>();
  c.pool1_freq = h.at("pool1_freq").get<int>();
  c.pool2_time = h.at("pool2_time").get<int>();
  c.pool2_freq = h.at("pool2_freq").get<int>();
  c.classes = h.at("classes").get<int>();
  c.input_time = h.at("input_time").get<int>();
  c.input_freq = h.at("input_freq").get<int>();
  c.l2 = h.at("l2").get<double>();

  Network<float> net = build_network<float>(c, /*seed=*/0);
  for (auto* p : net.params()) p->value = r.f32(p->name);
  int bn_idx = 0;
  for (auto* bn : net.batchnorm_layers()) {
    bn->running_mean() = r.f32("running_mean_" + std::to_string(bn_idx));
    bn->running_var() = r.f32("running_var_" + std::to_string(bn_idx));
    ++bn_idx;
  }
  if (scaler_mean != nullptr) *scaler_mean = r.f64("scaler_mean");
  if (scaler_std != nullptr) *scaler_std = r.f64("scaler_std");
  return net;
}

void write_history_jsonl(const TrainingHistory& history, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write history: " + path);
  for (const auto& e : history.epochs) {
    io::json j{{"epoch", e.epoch},          {"lr", e.lr},
               {"train_loss", e.train_loss}, {"train_accuracy", e.train_accuracy},
               {"val_loss", e.val_loss},     {"val_accuracy", e.val_accuracy}};
    out << j.dump() << '\n';
  }
}

}  // namespace asckit::nn
