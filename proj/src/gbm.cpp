#include "asckit/gbm.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "asckit/serialize.hpp"

namespace asckit::gbm {

namespace {

void softmax_row(const double* raw, double* prob, int k) {
  double mx = raw[0];
  for (int i = 1; i < k; ++i) mx = std::max(mx, raw[i]);
  double sum = 0.0;
  for (int i = 0; i < k; ++i) {
    prob[i] = std::exp(raw[i] - mx);
    sum += prob[i];
  }
  for (int i = 0; i < k; ++i) prob[i] /= sum;
}

struct LeafState {
  std::vector<int> samples;
  int node = 0;          // index into tree.nodes
  double sum_g = 0.0;
  double sum_h = 0.0;
  // best candidate split of this leaf
  bool has_split = false;
  int feature = 0;
  int threshold = 0;
  double gain = 0.0;
  double left_g = 0.0, left_h = 0.0;
  int left_count = 0;
};

double leaf_value(double sum_g, double sum_h, double lambda) {
  const double denom = sum_h + lambda;
  return denom > 0.0 ? -sum_g / denom : 0.0;
}

double split_score(double g, double h, double lambda) {
  const double denom = h + lambda;
  return denom > 0.0 ? g * g / denom : 0.0;
}

/// Scans all (feature, bin) candidates of one leaf; histograms are built
/// directly from the leaf's samples in ascending index order so that gains
/// are bit-reproducible against an oracle that sums the same way.
void find_best_split(const BinnedDataset& data, const std::vector<double>& grad,
                     const std::vector<double>& hess, const GbmConfig& cfg, LeafState& leaf) {
  leaf.has_split = false;
  const int n_leaf = static_cast<int>(leaf.samples.size());
  if (n_leaf < 2 * cfg.min_data_in_leaf) return;

  const double parent_score = split_score(leaf.sum_g, leaf.sum_h, cfg.lambda_l2);

  std::vector<double> hist_g, hist_h;
  std::vector<int> hist_n;
  for (int f = 0; f < data.n_features; ++f) {
    const int bins = data.bin_count(f);
    if (bins < 2) continue;
    hist_g.assign(bins, 0.0);
    hist_h.assign(bins, 0.0);
    hist_n.assign(bins, 0);
    for (int i : leaf.samples) {
      const int b = data.bin_at(i, f);
      hist_g[b] += grad[i];
      hist_h[b] += hess[i];
      hist_n[b] += 1;
    }
    double gl = 0.0, hl = 0.0;
    int nl = 0;
    for (int t = 0; t < bins - 1; ++t) {  // split: bin <= t goes left
      gl += hist_g[t];
      hl += hist_h[t];
      nl += hist_n[t];
      const int nr = n_leaf - nl;
      if (nl < cfg.min_data_in_leaf || nr < cfg.min_data_in_leaf) continue;
      const double gain = split_score(gl, hl, cfg.lambda_l2) +
                          split_score(leaf.sum_g - gl, leaf.sum_h - hl, cfg.lambda_l2) -
                          parent_score;
      if (gain > 0.0 && (!leaf.has_split || gain > leaf.gain)) {
        // strict > keeps the lowest (feature, bin) on ties
        leaf.has_split = true;
        leaf.feature = f;
        leaf.threshold = t;
        leaf.gain = gain;
        leaf.left_g = gl;
        leaf.left_h = hl;
        leaf.left_count = nl;
      }
    }
  }
}

Tree grow_tree(const BinnedDataset& data, const std::vector<double>& grad,
               const std::vector<double>& hess, const GbmConfig& cfg, int round, int klass,
               FitDiagnostics* diag) {
  Tree tree;
  tree.nodes.push_back({});

  std::vector<LeafState> leaves(1);
  leaves[0].node = 0;
  leaves[0].samples.resize(data.n);
  for (int i = 0; i < data.n; ++i) leaves[0].samples[i] = i;
  for (int i = 0; i < data.n; ++i) {
    leaves[0].sum_g += grad[i];
    leaves[0].sum_h += hess[i];
  }
  find_best_split(data, grad, hess, cfg, leaves[0]);

  while (tree.leaf_count < cfg.num_leaves) {
    // split the leaf with the best gain; earliest leaf wins ties
    int best = -1;
    for (int l = 0; l < static_cast<int>(leaves.size()); ++l) {
      if (leaves[l].has_split && (best < 0 || leaves[l].gain > leaves[best].gain)) best = l;
    }
    if (best < 0) break;

    LeafState parent = std::move(leaves[best]);
    if (diag != nullptr && diag->record_splits) {
      diag->splits.push_back(
          {round, klass, parent.samples, parent.feature, parent.threshold, parent.gain});
    }

    LeafState left, right;
    left.samples.reserve(parent.left_count);
    right.samples.reserve(parent.samples.size() - parent.left_count);
    for (int i : parent.samples) {
      if (data.bin_at(i, parent.feature) <= parent.threshold) {
        left.samples.push_back(i);
      } else {
        right.samples.push_back(i);
      }
    }
    // direct sums (not parent minus sibling) so that every leaf statistic is
    // an ascending-sample-order sum, bit-comparable with the test oracle
    for (int i : left.samples) {
      left.sum_g += grad[i];
      left.sum_h += hess[i];
    }
    for (int i : right.samples) {
      right.sum_g += grad[i];
      right.sum_h += hess[i];
    }

    left.node = static_cast<int>(tree.nodes.size());
    right.node = left.node + 1;
    tree.nodes.push_back({});
    tree.nodes.push_back({});
    Tree::Node& pnode = tree.nodes[parent.node];
    pnode.feature = parent.feature;
    pnode.threshold = parent.threshold;
    pnode.left = left.node;
    pnode.right = right.node;

    find_best_split(data, grad, hess, cfg, left);
    find_best_split(data, grad, hess, cfg, right);

    leaves[best] = std::move(left);
    leaves.push_back(std::move(right));
    ++tree.leaf_count;
  }

  for (const LeafState& l : leaves) {
    tree.nodes[l.node].value = leaf_value(l.sum_g, l.sum_h, cfg.lambda_l2);
  }
  return tree;
}

}  // namespace

double Tree::predict_bins(const std::uint16_t* row) const {
  int node = 0;
  while (nodes[node].feature >= 0) {
    node = row[nodes[node].feature] <= nodes[node].threshold ? nodes[node].left
                                                             : nodes[node].right;
  }
  return nodes[node].value;
}

BinnedDataset bin_features(const std::vector<double>& X, int n, int n_features, int max_bins,
                           const std::vector<int>& labels) {
  if (n < 1) throw DataError("bin_features: empty dataset");
  if (max_bins < 2) throw ConfigError("max_bins must be >= 2");
  if (X.size() != static_cast<std::size_t>(n) * n_features) {
    throw DataError("bin_features: bad matrix shape");
  }

  BinnedDataset out;
  out.n = n;
  out.n_features = n_features;
  out.labels = labels;
  out.cut_points.resize(n_features);

  std::vector<double> col(n);
  for (int f = 0; f < n_features; ++f) {
    for (int i = 0; i < n; ++i) col[i] = X[static_cast<std::size_t>(i) * n_features + f];
    std::sort(col.begin(), col.end());
    // equal-frequency cuts at the quantile ranks, midpoint between neighbors
    std::vector<double>& cuts = out.cut_points[f];
    for (int q = 1; q < max_bins; ++q) {
      const int r = static_cast<int>(std::llround(static_cast<double>(q) * n / max_bins));
      if (r <= 0 || r >= n) continue;
      if (col[r - 1] < col[r]) {
        const double cut = 0.5 * (col[r - 1] + col[r]);
        if (cuts.empty() || cut > cuts.back()) cuts.push_back(cut);
      }
    }
  }

  out.bins = apply_bins(out.cut_points, X, n);
  return out;
}

std::vector<std::uint16_t> apply_bins(const std::vector<std::vector<double>>& cut_points,
                                      const std::vector<double>& X, int n) {
  const int n_features = static_cast<int>(cut_points.size());
  if (X.size() != static_cast<std::size_t>(n) * n_features) {
    throw DataError("apply_bins: bad matrix shape");
  }
  std::vector<std::uint16_t> bins(X.size());
  for (int i = 0; i < n; ++i) {
    for (int f = 0; f < n_features; ++f) {
      const double v = X[static_cast<std::size_t>(i) * n_features + f];
      const auto& cuts = cut_points[f];
      const auto it = std::upper_bound(cuts.begin(), cuts.end(), v);
      bins[static_cast<std::size_t>(i) * n_features + f] =
          static_cast<std::uint16_t>(it - cuts.begin());
    }
  }
  return bins;
}

Ensemble fit_gbm(const BinnedDataset& data, const GbmConfig& config, FitDiagnostics* diag) {
  const int n = data.n;
  const int k = config.n_classes;
  if (static_cast<int>(data.labels.size()) != n) throw DataError("fit_gbm: missing labels");

  std::vector<int> class_count(k, 0);
  for (int y : data.labels) {
    if (y < 0 || y >= k) throw DataError("fit_gbm: label out of range");
    ++class_count[y];
  }
  for (int c = 0; c < k; ++c) {
    if (class_count[c] == 0) {
      throw DataError("fit_gbm: class " + std::to_string(c) + " absent from training data");
    }
  }

  Ensemble ens;
  ens.config = config;
  ens.cut_points = data.cut_points;
  ens.base_scores.resize(k);
  for (int c = 0; c < k; ++c) {
    ens.base_scores[c] = std::log(static_cast<double>(class_count[c]) / n);
  }

  // raw[i*k + c], updated in place round by round
  std::vector<double> raw(static_cast<std::size_t>(n) * k);
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < k; ++c) raw[static_cast<std::size_t>(i) * k + c] = ens.base_scores[c];
  }

  std::vector<double> prob(static_cast<std::size_t>(n) * k);
  std::vector<double> grad(n), hess(n);

  for (int round = 0; round < config.num_rounds; ++round) {
    for (int i = 0; i < n; ++i) {
      softmax_row(raw.data() + static_cast<std::size_t>(i) * k,
                  prob.data() + static_cast<std::size_t>(i) * k, k);
    }
    for (int c = 0; c < k; ++c) {
      for (int i = 0; i < n; ++i) {
        const double p = prob[static_cast<std::size_t>(i) * k + c];
        grad[i] = p - (data.labels[i] == c ? 1.0 : 0.0);
        hess[i] = p * (1.0 - p);
      }
      Tree tree = grow_tree(data, grad, hess, config, round, c, diag);
      for (int i = 0; i < n; ++i) {
        raw[static_cast<std::size_t>(i) * k + c] +=
            config.learning_rate * tree.predict_bins(data.bins.data() +
                                                     static_cast<std::size_t>(i) * data.n_features);
      }
      ens.trees.push_back(std::move(tree));
    }
    if (diag != nullptr) {
      double loss = 0.0;
      for (int i = 0; i < n; ++i) {
        softmax_row(raw.data() + static_cast<std::size_t>(i) * k,
                    prob.data() + static_cast<std::size_t>(i) * k, k);
        loss -= std::log(std::max(prob[static_cast<std::size_t>(i) * k + data.labels[i]], 1e-300));
      }
      diag->round_loss.push_back(loss / n);
    }
  }
  return ens;
}

std::vector<double> raw_scores(const Ensemble& ensemble, const std::vector<double>& X, int n) {
  const int k = ensemble.config.n_classes;
  const int nf = ensemble.n_features();
  const std::vector<std::uint16_t> bins = apply_bins(ensemble.cut_points, X, n);

  std::vector<double> raw(static_cast<std::size_t>(n) * k);
  for (int i = 0; i < n; ++i) {
    const std::uint16_t* row = bins.data() + static_cast<std::size_t>(i) * nf;
    for (int c = 0; c < k; ++c) {
      double acc = ensemble.base_scores[c];
      for (std::size_t t = c; t < ensemble.trees.size(); t += k) {
        acc += ensemble.config.learning_rate * ensemble.trees[t].predict_bins(row);
      }
      raw[static_cast<std::size_t>(i) * k + c] = acc;
    }
  }
  return raw;
}

std::vector<double> predict_proba(const Ensemble& ensemble, const std::vector<double>& X, int n) {
  const int k = ensemble.config.n_classes;
  std::vector<double> raw = raw_scores(ensemble, X, n);
  for (int i = 0; i < n; ++i) {
    double* row = raw.data() + static_cast<std::size_t>(i) * k;
    std::vector<double> p(k);
    softmax_row(row, p.data(), k);
    std::copy(p.begin(), p.end(), row);
  }
  return raw;
}

void save_gbm(const Ensemble& ensemble, const std::string& path) {
  io::json head{{"format", "asckit-gbm"},
                {"version", 1},
                {"n_classes", ensemble.config.n_classes},
                {"learning_rate", ensemble.config.learning_rate},
                {"max_bins", ensemble.config.max_bins},
                {"num_leaves", ensemble.config.num_leaves},
                {"min_data_in_leaf", ensemble.config.min_data_in_leaf},
                {"num_rounds", ensemble.config.num_rounds},
                {"lambda_l2", ensemble.config.lambda_l2},
                {"n_features", ensemble.n_features()},
                {"n_trees", ensemble.trees.size()}};
  io::BlobWriter w("ASCKGBM1", head);
  w.add_f64("base_scores", ensemble.base_scores);

  std::vector<double> edges;
  std::vector<std::int32_t> edge_counts;
  for (const auto& cuts : ensemble.cut_points) {
    edge_counts.push_back(static_cast<std::int32_t>(cuts.size()));
    edges.insert(edges.end(), cuts.begin(), cuts.end());
  }
  w.add_i32("edge_counts", edge_counts);
  w.add_f64("edges", edges);

  std::vector<std::int32_t> topo;
  std::vector<double> values;
  std::vector<std::int32_t> node_counts;
  for (const Tree& t : ensemble.trees) {
    node_counts.push_back(static_cast<std::int32_t>(t.nodes.size()));
    for (const auto& nd : t.nodes) {
      topo.push_back(nd.feature);
      topo.push_back(nd.threshold);
      topo.push_back(nd.left);
      topo.push_back(nd.right);
      values.push_back(nd.value);
    }
  }
  w.add_i32("node_counts", node_counts);
  w.add_i32("topology", topo);
  w.add_f64("values", values);
  w.write(path);
}

Ensemble load_gbm(const std::string& path) {
  io::BlobReader r(path, "ASCKGBM1");
  Ensemble ens;
  const auto& h = r.header();
  ens.config.n_classes = h.at("n_classes").get<int>();
  ens.config.learning_rate = h.at("learning_rate").get<double>();
  ens.config.max_bins = h.at("max_bins").get<int>();
  ens.config.num_leaves = h.at("num_leaves").get<int>();
  ens.config.min_data_in_leaf = h.at("min_data_in_leaf").get<int>();
  ens.config.num_rounds = h.at("num_rounds").get<int>();
  ens.config.lambda_l2 = h.at("lambda_l2").get<double>();
  ens.base_scores = r.f64("base_scores");

  const auto edge_counts = r.i32("edge_counts");
  const auto edges = r.f64("edges");
  std::size_t off = 0;
  for (std::int32_t c : edge_counts) {
    ens.cut_points.emplace_back(edges.begin() + off, edges.begin() + off + c);
    off += c;
  }

  const auto node_counts = r.i32("node_counts");
  const auto topo = r.i32("topology");
  const auto values = r.f64("values");
  std::size_t ni = 0;
  for (std::int32_t count : node_counts) {
    Tree t;
    t.leaf_count = 0;
    for (std::int32_t j = 0; j < count; ++j, ++ni) {
      Tree::Node nd;
      nd.feature = topo[4 * ni];
      nd.threshold = topo[4 * ni + 1];
      nd.left = topo[4 * ni + 2];
      nd.right = topo[4 * ni + 3];
      nd.value = values[ni];
      if (nd.feature < 0) ++t.leaf_count;
      t.nodes.push_back(nd);
    }
    ens.trees.push_back(std::move(t));
  }
  return ens;
}

std::vector<GridPoint> grid_search(
    const GridSpec& grid, bool use_lda,
    const std::function<std::vector<double>(const GbmConfig&, std::optional<int>)>& evaluate,
    std::size_t* best_index) {
  if (grid.learning_rate.empty() || grid.max_bins.empty() || grid.num_leaves.empty() ||
      grid.min_data_in_leaf.empty() || (use_lda && grid.lda_dim.empty())) {
    throw ConfigError("grid_search: empty grid axis");
  }

  std::vector<GridPoint> points;
  const std::vector<std::optional<int>> dims =
      use_lda ? [&] {
        std::vector<std::optional<int>> d;
        for (int v : grid.lda_dim) d.emplace_back(v);
        return d;
      }()
              : std::vector<std::optional<int>>{std::nullopt};

  for (double lr : grid.learning_rate) {
    for (int mb : grid.max_bins) {
      for (int nl : grid.num_leaves) {
        for (int mdl : grid.min_data_in_leaf) {
          for (const auto& dim : dims) {
            GridPoint p;
            p.config.learning_rate = lr;
            p.config.max_bins = mb;
            p.config.num_leaves = nl;
            p.config.min_data_in_leaf = mdl;
            p.lda_dim = dim;
            p.fold_accuracy = evaluate(p.config, dim);
            double sum = 0.0;
            for (double a : p.fold_accuracy) sum += a;
            p.mean_accuracy = p.fold_accuracy.empty() ? 0.0 : sum / p.fold_accuracy.size();
            points.push_back(std::move(p));
          }
        }
      }
    }
  }

  std::size_t best = 0;
  for (std::size_t i = 1; i < points.size(); ++i) {
    const GridPoint& a = points[i];
    const GridPoint& b = points[best];
    if (a.mean_accuracy > b.mean_accuracy) {
      best = i;
      continue;
    }
    if (a.mean_accuracy < b.mean_accuracy) continue;
    const auto key = [](const GridPoint& p) {
      return std::make_tuple(p.config.num_leaves, p.config.max_bins, p.config.learning_rate,
                             p.config.min_data_in_leaf, p.lda_dim.value_or(0));
    };
    if (key(a) < key(b)) best = i;
  }
  if (best_index != nullptr) *best_index = best;
  return points;
}

}  // namespace asckit::gbm
