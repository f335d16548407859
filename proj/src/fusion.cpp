#include "asckit/fusion.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "asckit/serialize.hpp"

namespace asckit::fuse {

namespace {
constexpr double kGeomFloor = 1e-12;

int argmax_lowest(const std::vector<double>& v) {
  int arg = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i) {
    if (v[i] > v[arg]) arg = i;
  }
  return arg;
}

/// Ranks 1..n per model: the highest probability gets rank n; ties are broken
/// toward the lower class index receiving the lower rank.
std::vector<double> rank_vector(const std::vector<double>& p) {
  const int n = static_cast<int>(p.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (p[a] != p[b]) return p[a] < p[b];
    return a < b;
  });
  std::vector<double> rank(n);
  for (int pos = 0; pos < n; ++pos) rank[order[pos]] = static_cast<double>(pos + 1);
  return rank;
}

}  // namespace

void write_prob_csv(const std::string& path, const ProbTable& table) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write probability csv: " + path);
  out << "recording_id,label";
  const int k = table.empty() ? 15 : static_cast<int>(table[0].probs.size());
  for (int i = 0; i < k; ++i) out << ",p" << i;
  out << ",model_tag\n";
  char buf[32];
  for (const auto& row : table) {
    out << row.recording_id << ',';
    if (row.label >= 0) out << row.label;
    for (double p : row.probs) {
      std::snprintf(buf, sizeof(buf), "%.17g", p);
      out << ',' << buf;
    }
    out << ',' << row.model_tag << '\n';
  }
}

ProbTable read_prob_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open probability csv: " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty probability csv: " + path);

  ProbTable table;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (line.back() == ',') fields.push_back("");
    if (fields.size() < 4) {
      throw DataError("bad probability csv row at line " + std::to_string(line_no));
    }
    ProbRow row;
    row.recording_id = fields[0];
    row.label = fields[1].empty() ? -1 : std::stoi(fields[1]);
    for (std::size_t i = 2; i + 1 < fields.size(); ++i) row.probs.push_back(std::stod(fields[i]));
    row.model_tag = fields.back();
    table.push_back(std::move(row));
  }
  return table;
}

bool is_distribution(const std::vector<double>& p) {
  double sum = 0.0;
  for (double v : p) {
    if (v < 0.0 || !std::isfinite(v)) return false;
    sum += v;
  }
  return std::abs(sum - 1.0) <= 1e-6;
}

FusionMethod parse_fusion_method(const std::string& name) {
  if (name == "arithmetic") return FusionMethod::arithmetic;
  if (name == "geometric") return FusionMethod::geometric;
  if (name == "rank") return FusionMethod::rank;
  if (name == "stacking") return FusionMethod::stacking;
  throw ConfigError("unknown fusion method: " + name);
}

std::string fusion_method_name(FusionMethod m) {
  switch (m) {
    case FusionMethod::arithmetic: return "arithmetic";
    case FusionMethod::geometric: return "geometric";
    case FusionMethod::rank: return "rank";
    case FusionMethod::stacking: return "stacking";
  }
  return "?";
}

std::pair<std::vector<double>, int> fuse_simple(FusionMethod method, const ProbRow& p_cnn,
                                                const ProbRow& p_gbm) {
  if (p_cnn.recording_id != p_gbm.recording_id) {
    throw DataError("fuse: mismatched recording ids '" + p_cnn.recording_id + "' vs '" +
                    p_gbm.recording_id + "'");
  }
  if (p_cnn.probs.size() != p_gbm.probs.size() || p_cnn.probs.empty()) {
    throw DataError("fuse: probability size mismatch");
  }
  const int k = static_cast<int>(p_cnn.probs.size());
  std::vector<double> fused(k, 0.0);

  switch (method) {
    case FusionMethod::arithmetic:
      for (int i = 0; i < k; ++i) fused[i] = 0.5 * (p_cnn.probs[i] + p_gbm.probs[i]);
      break;
    case FusionMethod::geometric: {
      double sum = 0.0;
      for (int i = 0; i < k; ++i) {
        fused[i] = std::sqrt(std::max(p_cnn.probs[i], kGeomFloor) *
                             std::max(p_gbm.probs[i], kGeomFloor));
        sum += fused[i];
      }
      for (int i = 0; i < k; ++i) fused[i] /= sum;
      break;
    }
    case FusionMethod::rank: {
      const std::vector<double> ra = rank_vector(p_cnn.probs);
      const std::vector<double> rb = rank_vector(p_gbm.probs);
      double sum = 0.0;
      for (int i = 0; i < k; ++i) {
        fused[i] = 0.5 * (ra[i] + rb[i]);
        sum += fused[i];
      }
      for (int i = 0; i < k; ++i) fused[i] /= sum;
      break;
    }
    case FusionMethod::stacking:
      throw ConfigError("stacking requires a fitted meta learner; use predict_stacked");
  }
  return {fused, argmax_lowest(fused)};
}

MetaKind parse_meta_kind(const std::string& name) {
  if (name == "logistic") return MetaKind::logistic;
  if (name == "svm_linear") return MetaKind::svm_linear;
  if (name == "svm_rbf") return MetaKind::svm_rbf;
  throw ConfigError("unknown meta learner kind: " + name);
}

std::string meta_kind_name(MetaKind k) {
  switch (k) {
    case MetaKind::logistic: return "logistic";
    case MetaKind::svm_linear: return "svm_linear";
    case MetaKind::svm_rbf: return "svm_rbf";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// multinomial logistic regression (Newton with Armijo backtracking)

LogisticFit fit_multinomial_logistic(const std::vector<double>& X, int n, int dim,
                                     const std::vector<int>& y, int n_classes, double lambda,
                                     double tol, int max_iter) {
  const int d1 = dim + 1;  // bias column appended
  const int np = n_classes * d1;

  Eigen::MatrixXd Xb(n, d1);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < dim; ++j) Xb(i, j) = X[static_cast<std::size_t>(i) * dim + j];
    Xb(i, dim) = 1.0;
  }

  Eigen::VectorXd w = Eigen::VectorXd::Zero(np);  // class-major: w[c*d1 + j]

  const auto loss_grad = [&](const Eigen::VectorXd& wv, Eigen::VectorXd* grad,
                             Eigen::MatrixXd* prob_out) {
    Eigen::MatrixXd scores(n, n_classes);
    for (int c = 0; c < n_classes; ++c) {
      scores.col(c) = Xb * wv.segment(static_cast<Eigen::Index>(c) * d1, d1);
    }
    Eigen::MatrixXd prob(n, n_classes);
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
      const double mx = scores.row(i).maxCoeff();
      double sum = 0.0;
      for (int c = 0; c < n_classes; ++c) {
        prob(i, c) = std::exp(scores(i, c) - mx);
        sum += prob(i, c);
      }
      prob.row(i) /= sum;
      loss -= std::log(std::max(prob(i, y[i]), 1e-300));
    }
    loss /= n;
    double reg = 0.0;
    for (int c = 0; c < n_classes; ++c) {
      reg += wv.segment(static_cast<Eigen::Index>(c) * d1, dim).squaredNorm();
    }
    loss += 0.5 * lambda * reg;

    if (grad != nullptr) {
      grad->setZero(np);
      for (int c = 0; c < n_classes; ++c) {
        Eigen::VectorXd err = prob.col(c);
        for (int i = 0; i < n; ++i) {
          if (y[i] == c) err(i) -= 1.0;
        }
        grad->segment(static_cast<Eigen::Index>(c) * d1, d1) = Xb.transpose() * err / n;
        grad->segment(static_cast<Eigen::Index>(c) * d1, dim) +=
            lambda * wv.segment(static_cast<Eigen::Index>(c) * d1, dim);
      }
    }
    if (prob_out != nullptr) *prob_out = prob;
    return loss;
  };

  LogisticFit fit;
  Eigen::VectorXd grad(np);
  Eigen::MatrixXd prob;
  double loss = loss_grad(w, &grad, &prob);
  fit.loss_trace.push_back(loss);

  for (int iter = 0; iter < max_iter; ++iter) {
    if (grad.norm() < tol) break;

    // full Newton Hessian; np stays small for stacking inputs
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(np, np);
    for (int i = 0; i < n; ++i) {
      const Eigen::VectorXd xi = Xb.row(i).transpose();
      const Eigen::MatrixXd outer = xi * xi.transpose() / n;
      for (int c = 0; c < n_classes; ++c) {
        for (int c2 = 0; c2 < n_classes; ++c2) {
          const double s = prob(i, c) * ((c == c2 ? 1.0 : 0.0) - prob(i, c2));
          if (s != 0.0) {
            H.block(static_cast<Eigen::Index>(c) * d1, static_cast<Eigen::Index>(c2) * d1, d1,
                    d1) += s * outer;
          }
        }
      }
    }
    for (int c = 0; c < n_classes; ++c) {
      for (int j = 0; j < dim; ++j) {
        H(static_cast<Eigen::Index>(c) * d1 + j, static_cast<Eigen::Index>(c) * d1 + j) += lambda;
      }
    }
    H.diagonal().array() += 1e-10;  // softmax Hessian is singular along shifts

    const Eigen::VectorXd step = H.ldlt().solve(grad);
    double alpha = 1.0;
    double new_loss = loss;
    Eigen::VectorXd w_try;
    for (int ls = 0; ls < 40; ++ls) {
      w_try = w - alpha * step;
      new_loss = loss_grad(w_try, nullptr, nullptr);
      if (new_loss <= loss) break;
      alpha *= 0.5;
    }
    if (new_loss > loss) break;  // no descent direction left
    w = w_try;
    const double improvement = loss - new_loss;
    loss = loss_grad(w, &grad, &prob);
    fit.loss_trace.push_back(loss);
    if (improvement < tol) break;
  }

  fit.weights.assign(w.data(), w.data() + np);
  return fit;
}

// ---------------------------------------------------------------------------
// binary C-SVM via sequential minimal optimization (one-vs-rest multiclass)

namespace {

struct SvmProblem {
  const std::vector<double>* X;
  int n, dim;
  std::vector<double> y;  // +-1
  double C;
  double gamma;  // 0 => linear kernel
};

double kernel(const SvmProblem& p, int i, int j) {
  const double* a = p.X->data() + static_cast<std::size_t>(i) * p.dim;
  const double* b = p.X->data() + static_cast<std::size_t>(j) * p.dim;
  if (p.gamma <= 0.0) {
    double acc = 0.0;
    for (int k = 0; k < p.dim; ++k) acc += a[k] * b[k];
    return acc;
  }
  double d2 = 0.0;
  for (int k = 0; k < p.dim; ++k) {
    const double d = a[k] - b[k];
    d2 += d * d;
  }
  return std::exp(-p.gamma * d2);
}

/// Simplified SMO with deterministic max-|E_i - E_j| partner selection.
void smo_train(const SvmProblem& p, std::vector<double>& alpha, double& bias) {
  const int n = p.n;
  alpha.assign(n, 0.0);
  bias = 0.0;

  std::vector<std::vector<double>> K(n, std::vector<double>(n));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) K[i][j] = K[j][i] = kernel(p, i, j);
  }

  std::vector<double> f(n, 0.0);  // sum_j alpha_j y_j K(j, .), bias kept apart

  const double tol = 1e-4;
  int passes = 0;
  const int max_passes = 8;
  int iter_guard = 0;
  while (passes < max_passes && iter_guard < 200000) {
    int changed = 0;
    for (int i = 0; i < n; ++i) {
      ++iter_guard;
      const double Ei = f[i] + bias - p.y[i];
      const bool violates = (p.y[i] * Ei < -tol && alpha[i] < p.C) ||
                            (p.y[i] * Ei > tol && alpha[i] > 0.0);
      if (!violates) continue;

      int j = -1;
      double best_gap = -1.0;
      for (int cand = 0; cand < n; ++cand) {
        if (cand == i) continue;
        const double gap = std::abs(Ei - (f[cand] + bias - p.y[cand]));
        if (gap > best_gap) {
          best_gap = gap;
          j = cand;
        }
      }
      if (j < 0) continue;
      const double Ej = f[j] + bias - p.y[j];

      const double ai_old = alpha[i], aj_old = alpha[j];
      double lo, hi;
      if (p.y[i] != p.y[j]) {
        lo = std::max(0.0, aj_old - ai_old);
        hi = std::min(p.C, p.C + aj_old - ai_old);
      } else {
        lo = std::max(0.0, ai_old + aj_old - p.C);
        hi = std::min(p.C, ai_old + aj_old);
      }
      if (lo >= hi) continue;
      const double eta = 2.0 * K[i][j] - K[i][i] - K[j][j];
      if (eta >= 0.0) continue;

      double aj = aj_old - p.y[j] * (Ei - Ej) / eta;
      aj = std::clamp(aj, lo, hi);
      if (std::abs(aj - aj_old) < 1e-7) continue;
      const double ai = ai_old + p.y[i] * p.y[j] * (aj_old - aj);
      alpha[i] = ai;
      alpha[j] = aj;
      const double dai = (ai - ai_old) * p.y[i];
      const double daj = (aj - aj_old) * p.y[j];
      for (int t = 0; t < n; ++t) f[t] += dai * K[i][t] + daj * K[j][t];

      const double b1 = bias - Ei - p.y[i] * (ai - ai_old) * K[i][i] -
                        p.y[j] * (aj - aj_old) * K[i][j];
      const double b2 = bias - Ej - p.y[i] * (ai - ai_old) * K[i][j] -
                        p.y[j] * (aj - aj_old) * K[j][j];
      if (ai > 0.0 && ai < p.C) {
        bias = b1;
      } else if (aj > 0.0 && aj < p.C) {
        bias = b2;
      } else {
        bias = 0.5 * (b1 + b2);
      }
      ++changed;
    }
    passes = changed == 0 ? passes + 1 : 0;
  }
}

double svm_rbf_gamma(const std::vector<double>& X, int n, int dim) {
  // 1 / (dim * feature variance), the common "scale" heuristic
  double mean = 0.0, sq = 0.0;
  for (double v : X) {
    mean += v;
    sq += v * v;
  }
  const double m = mean / X.size();
  const double var = std::max(sq / X.size() - m * m, 1e-12);
  return 1.0 / (dim * var);
}

MetaLearner fit_meta_on(const std::vector<double>& X, int n, int dim, const std::vector<int>& y,
                        int n_classes, MetaKind kind, double reg) {
  MetaLearner meta;
  meta.kind = kind;
  meta.n_classes = n_classes;
  meta.input_dim = dim;
  meta.regularization = reg;

  if (kind == MetaKind::logistic) {
    meta.weights = fit_multinomial_logistic(X, n, dim, y, n_classes, reg).weights;
  } else {
    meta.gamma = kind == MetaKind::svm_rbf ? svm_rbf_gamma(X, n, dim) : 0.0;
    meta.svm.resize(n_classes);
    for (int c = 0; c < n_classes; ++c) {
      SvmProblem prob{&X, n, dim, {}, reg, meta.gamma};
      prob.y.resize(n);
      for (int i = 0; i < n; ++i) prob.y[i] = y[i] == c ? 1.0 : -1.0;
      std::vector<double> alpha;
      double bias = 0.0;
      smo_train(prob, alpha, bias);
      MetaLearner::SvmClass& sc = meta.svm[c];
      sc.bias = bias;
      for (int i = 0; i < n; ++i) {
        if (alpha[i] > 0.0) {
          sc.coeff.push_back(alpha[i] * prob.y[i]);
          sc.support.insert(sc.support.end(), X.begin() + static_cast<std::size_t>(i) * dim,
                            X.begin() + static_cast<std::size_t>(i + 1) * dim);
        }
      }
    }
  }
  meta.fitted = true;
  return meta;
}

}  // namespace

std::vector<double> meta_scores(const MetaLearner& meta, const std::vector<double>& features) {
  if (!meta.fitted) throw NumericError("meta learner used before fit");
  if (static_cast<int>(features.size()) != meta.input_dim) {
    throw DataError("meta learner input dimension mismatch");
  }
  std::vector<double> scores(meta.n_classes, 0.0);
  if (meta.kind == MetaKind::logistic) {
    const int d1 = meta.input_dim + 1;
    for (int c = 0; c < meta.n_classes; ++c) {
      double acc = meta.weights[static_cast<std::size_t>(c) * d1 + meta.input_dim];
      for (int j = 0; j < meta.input_dim; ++j) {
        acc += meta.weights[static_cast<std::size_t>(c) * d1 + j] * features[j];
      }
      scores[c] = acc;
    }
  } else {
    for (int c = 0; c < meta.n_classes; ++c) {
      const auto& sc = meta.svm[c];
      double acc = sc.bias;
      const std::size_t n_sv = sc.coeff.size();
      for (std::size_t s = 0; s < n_sv; ++s) {
        const double* sv = sc.support.data() + s * meta.input_dim;
        double k;
        if (meta.gamma <= 0.0) {
          k = 0.0;
          for (int j = 0; j < meta.input_dim; ++j) k += sv[j] * features[j];
        } else {
          double d2 = 0.0;
          for (int j = 0; j < meta.input_dim; ++j) {
            const double d = sv[j] - features[j];
            d2 += d * d;
          }
          k = std::exp(-meta.gamma * d2);
        }
        acc += sc.coeff[s] * k;
      }
      scores[c] = acc;
    }
  }
  return scores;
}

MetaLearner fit_meta_learner(MetaKind kind, const ProbTable& dev_cnn, const ProbTable& dev_gbm,
                             std::uint64_t seed) {
  std::map<std::string, const ProbRow*> gbm_by_id;
  for (const auto& r : dev_gbm) gbm_by_id[r.recording_id] = &r;

  // join by sorted recording id for a stable sample order
  std::map<std::string, const ProbRow*> cnn_by_id;
  for (const auto& r : dev_cnn) cnn_by_id[r.recording_id] = &r;
  if (cnn_by_id.size() != dev_cnn.size()) throw DataError("duplicate recording ids in cnn table");

  const int n = static_cast<int>(cnn_by_id.size());
  if (n == 0) throw DataError("fit_meta_learner: empty probability table");
  const int k = static_cast<int>(dev_cnn[0].probs.size());
  const int dim = 2 * k;

  std::vector<double> X;
  std::vector<int> y;
  X.reserve(static_cast<std::size_t>(n) * dim);
  for (const auto& [id, cnn_row] : cnn_by_id) {
    const auto it = gbm_by_id.find(id);
    if (it == gbm_by_id.end()) {
      throw DataError("recording '" + id + "' missing from the gbm probability table");
    }
    if (cnn_row->label < 0) throw DataError("recording '" + id + "' has no label for stacking");
    X.insert(X.end(), cnn_row->probs.begin(), cnn_row->probs.end());
    X.insert(X.end(), it->second->probs.begin(), it->second->probs.end());
    y.push_back(cnn_row->label);
  }
  if (gbm_by_id.size() != cnn_by_id.size()) {
    throw DataError("gbm probability table has recordings missing from the cnn table");
  }
  const int n_classes = *std::max_element(y.begin(), y.end()) + 1;

  // strong-regularization grid, picked by stratified 4-fold CV accuracy
  const std::vector<double> grid = kind == MetaKind::logistic
                                       ? std::vector<double>{10.0, 1.0, 0.1, 0.01, 0.001}
                                       : std::vector<double>{0.01, 0.1, 1.0, 10.0};

  std::map<int, std::vector<int>> by_class;
  for (int i = 0; i < n; ++i) by_class[y[i]].push_back(i);
  RngStream rng(seed);
  const int cv = 4;
  std::vector<std::vector<int>> fold_of(cv);
  for (auto& [c, idx] : by_class) {
    rng.shuffle(idx);
    for (std::size_t i = 0; i < idx.size(); ++i) fold_of[i % cv].push_back(idx[i]);
  }
  for (auto& f : fold_of) std::sort(f.begin(), f.end());

  double best_acc = -1.0;
  double best_reg = grid[0];
  for (double reg : grid) {
    std::size_t correct = 0, total = 0;
    for (int f = 0; f < cv; ++f) {
      std::vector<double> Xtr;
      std::vector<int> ytr;
      std::vector<char> in_test(n, 0);
      for (int i : fold_of[f]) in_test[i] = 1;
      for (int i = 0; i < n; ++i) {
        if (!in_test[i]) {
          Xtr.insert(Xtr.end(), X.begin() + static_cast<std::size_t>(i) * dim,
                     X.begin() + static_cast<std::size_t>(i + 1) * dim);
          ytr.push_back(y[i]);
        }
      }
      if (ytr.empty() || fold_of[f].empty()) continue;
      const MetaLearner m =
          fit_meta_on(Xtr, static_cast<int>(ytr.size()), dim, ytr, n_classes, kind, reg);
      for (int i : fold_of[f]) {
        const std::vector<double> feat(X.begin() + static_cast<std::size_t>(i) * dim,
                                       X.begin() + static_cast<std::size_t>(i + 1) * dim);
        const std::vector<double> scores = meta_scores(m, feat);
        int arg = 0;
        for (int c = 1; c < n_classes; ++c) {
          if (scores[c] > scores[arg]) arg = c;
        }
        if (arg == y[i]) ++correct;
        ++total;
      }
    }
    const double acc = total > 0 ? static_cast<double>(correct) / total : 0.0;
    const bool stronger = kind == MetaKind::logistic ? reg > best_reg : reg < best_reg;
    if (acc > best_acc || (acc == best_acc && stronger)) {
      best_acc = acc;
      best_reg = reg;
    }
  }

  return fit_meta_on(X, n, dim, y, n_classes, kind, best_reg);
}

int predict_stacked(const MetaLearner& meta, const ProbRow& p_cnn, const ProbRow& p_gbm) {
  if (!meta.fitted) throw NumericError("predict_stacked: meta learner not fitted");
  if (p_cnn.recording_id != p_gbm.recording_id) {
    throw DataError("predict_stacked: mismatched recording ids");
  }
  std::vector<double> feat;
  feat.reserve(p_cnn.probs.size() + p_gbm.probs.size());
  feat.insert(feat.end(), p_cnn.probs.begin(), p_cnn.probs.end());
  feat.insert(feat.end(), p_gbm.probs.begin(), p_gbm.probs.end());
  const std::vector<double> scores = meta_scores(meta, feat);
  int arg = 0;
  for (int c = 1; c < static_cast<int>(scores.size()); ++c) {
    if (scores[c] > scores[arg]) arg = c;
  }
  return arg;
}

void save_meta(const MetaLearner& meta, const std::string& path) {
  io::json head{{"format", "asckit-meta"},
                {"version", 1},
                {"kind", meta_kind_name(meta.kind)},
                {"n_classes", meta.n_classes},
                {"input_dim", meta.input_dim},
                {"regularization", meta.regularization},
                {"gamma", meta.gamma}};
  io::BlobWriter w("ASCKMET1", head);
  if (meta.kind == MetaKind::logistic) {
    w.add_f64("weights", meta.weights);
  } else {
    std::vector<std::int32_t> sv_counts;
    std::vector<double> coeffs, supports, biases;
    for (const auto& sc : meta.svm) {
      sv_counts.push_back(static_cast<std::int32_t>(sc.coeff.size()));
      coeffs.insert(coeffs.end(), sc.coeff.begin(), sc.coeff.end());
      supports.insert(supports.end(), sc.support.begin(), sc.support.end());
      biases.push_back(sc.bias);
    }
    w.add_i32("sv_counts", sv_counts);
    w.add_f64("coeffs", coeffs);
    w.add_f64("supports", supports);
    w.add_f64("biases", biases);
  }
  w.write(path);
}

MetaLearner load_meta(const std::string& path) {
  io::BlobReader r(path, "ASCKMET1");
  MetaLearner meta;
  meta.kind = parse_meta_kind(r.header().at("kind").get<std::string>());
  meta.n_classes = r.header().at("n_classes").get<int>();
  meta.input_dim = r.header().at("input_dim").get<int>();
  meta.regularization = r.header().at("regularization").get<double>();
  meta.gamma = r.header().at("gamma").get<double>();
  if (meta.kind == MetaKind::logistic) {
    meta.weights = r.f64("weights");
  } else {
    const auto sv_counts = r.i32("sv_counts");
    const auto coeffs = r.f64("coeffs");
    const auto supports = r.f64("supports");
    const auto biases = r.f64("biases");
    std::size_t off = 0;
    for (std::size_t c = 0; c < sv_counts.size(); ++c) {
      MetaLearner::SvmClass sc;
      sc.bias = biases[c];
      sc.coeff.assign(coeffs.begin() + off, coeffs.begin() + off + sv_counts[c]);
      sc.support.assign(supports.begin() + off * meta.input_dim,
                        supports.begin() + (off + sv_counts[c]) * meta.input_dim);
      off += sv_counts[c];
      meta.svm.push_back(std::move(sc));
    }
  }
  meta.fitted = true;
  return meta;
}

}  // namespace asckit::fuse
