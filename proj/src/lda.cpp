#include "asckit/lda.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>

#include "asckit/serialize.hpp"

namespace asckit::lda {

LdaModel fit_lda(const std::vector<double>& X, int n, int dim, const std::vector<int>& y,
                 int target_dim, bool strict_rank) {
  if (n <= 0 || dim <= 0 || X.size() != static_cast<std::size_t>(n) * dim) {
    throw DataError("lda: bad matrix shape");
  }
  if (static_cast<int>(y.size()) != n) throw DataError("lda: label count mismatch");
  if (target_dim < 1 || target_dim > dim) {
    throw ConfigError("lda: target dimension must be in [1, input_dim]");
  }

  std::map<int, std::vector<int>> by_class;
  for (int i = 0; i < n; ++i) by_class[y[i]].push_back(i);
  const int n_classes = static_cast<int>(by_class.size());
  if (n_classes < 2) throw DataError("lda: needs at least 2 classes (Sb is zero otherwise)");
  for (const auto& [c, idx] : by_class) {
    if (idx.size() < 2) {
      throw DataError("lda: class " + std::to_string(c) + " has fewer than 2 samples");
    }
  }

  using Mat = Eigen::MatrixXd;
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Vec = Eigen::VectorXd;
  const Eigen::Map<const RowMat> Xm(X.data(), n, dim);

  const Vec global_mean = Xm.colwise().mean().transpose();

  Mat Sw = Mat::Zero(dim, dim);
  Mat Sb = Mat::Zero(dim, dim);
  for (const auto& [c, idx] : by_class) {
    Vec mu = Vec::Zero(dim);
    for (int i : idx) mu += Xm.row(i).transpose();
    mu /= static_cast<double>(idx.size());
    for (int i : idx) {
      const Vec d = Xm.row(i).transpose() - mu;
      Sw.selfadjointView<Eigen::Lower>().rankUpdate(d, 1.0);
    }
    const Vec dm = mu - global_mean;
    Sb.selfadjointView<Eigen::Lower>().rankUpdate(dm, static_cast<double>(idx.size()));
  }
  Sw = Sw.selfadjointView<Eigen::Lower>();
  Sb = Sb.selfadjointView<Eigen::Lower>();

  // Sw + gamma * (trace/dim) * I, then the symmetric problem L^-1 Sb L^-T
  const double ridge = kShrinkage * std::max(Sw.trace() / dim, 1e-300);
  Mat Sw_reg = Sw + ridge * Mat::Identity(dim, dim);

  Eigen::LLT<Mat> llt(Sw_reg);
  if (llt.info() != Eigen::Success) throw NumericError("lda: Cholesky of Sw failed");
  const Mat L = llt.matrixL();

  Mat M = L.triangularView<Eigen::Lower>().solve(Sb);
  M = L.triangularView<Eigen::Lower>().solve(M.transpose()).eval();
  M = (0.5 * (M + M.transpose())).eval();  // symmetrize residual round-off

  Eigen::SelfAdjointEigenSolver<Mat> eig(M);
  if (eig.info() != Eigen::Success) throw NumericError("lda: eigensolver failed");

  // Eigen returns ascending order; we keep the top target_dim, descending.
  const Vec evals = eig.eigenvalues();
  const Mat evecs = eig.eigenvectors();

  const double rank_tol = 1e-9 * std::max(std::abs(evals(dim - 1)), 1.0);
  int rank = 0;
  for (int i = 0; i < dim; ++i) {
    if (evals(i) > rank_tol) ++rank;
  }
  rank = std::min(rank, n_classes - 1);

  LdaModel model;
  model.input_dim = dim;
  model.effective_rank = rank;
  model.requested_dim = target_dim;
  if (target_dim > rank) {
    if (strict_rank) {
      model.requested_dim = std::max(rank, 1);
    } else {
      model.rank_warning = true;
    }
  }

  const int d = model.requested_dim;
  model.mean.assign(global_mean.data(), global_mean.data() + dim);
  model.eigenvalues.resize(d);
  model.projection.resize(static_cast<std::size_t>(d) * dim);
  for (int k = 0; k < d; ++k) {
    const int src = dim - 1 - k;  // descending
    model.eigenvalues[k] = evals(src);
    Vec v = L.transpose().triangularView<Eigen::Upper>().solve(evecs.col(src));
    v.normalize();
    // deterministic sign: largest-magnitude component is positive
    int arg = 0;
    for (int i = 1; i < dim; ++i) {
      if (std::abs(v(i)) > std::abs(v(arg))) arg = i;
    }
    if (v(arg) < 0.0) v = -v;
    for (int i = 0; i < dim; ++i) model.projection[static_cast<std::size_t>(k) * dim + i] = v(i);
  }
  return model;
}

std::vector<double> transform(const LdaModel& model, const std::vector<double>& X, int n,
                              int dim) {
  if (dim != model.input_dim) throw DataError("lda transform: dimension mismatch");
  if (X.size() != static_cast<std::size_t>(n) * dim) throw DataError("lda transform: bad shape");
  const int d = model.requested_dim;
  std::vector<double> out(static_cast<std::size_t>(n) * d, 0.0);
  for (int i = 0; i < n; ++i) {
    const double* row = X.data() + static_cast<std::size_t>(i) * dim;
    double* dst = out.data() + static_cast<std::size_t>(i) * d;
    for (int k = 0; k < d; ++k) {
      const double* p = model.projection.data() + static_cast<std::size_t>(k) * dim;
      double acc = 0.0;
      for (int j = 0; j < dim; ++j) acc += (row[j] - model.mean[j]) * p[j];
      dst[k] = acc;
    }
  }
  return out;
}

void save_lda(const LdaModel& model, const std::string& path) {
  io::json head{{"format", "asckit-lda"},
                {"version", 1},
                {"input_dim", model.input_dim},
                {"requested_dim", model.requested_dim},
                {"effective_rank", model.effective_rank},
                {"rank_warning", model.rank_warning}};
  io::BlobWriter w("ASCKLDA1", head);
  w.add_f64("mean", model.mean);
  w.add_f64("eigenvalues", model.eigenvalues);
  w.add_f64("projection", model.projection);
  w.write(path);
}

LdaModel load_lda(const std::string& path) {
  io::BlobReader r(path, "ASCKLDA1");
  LdaModel m;
  m.input_dim = r.header().at("input_dim").get<int>();
  m.requested_dim = r.header().at("requested_dim").get<int>();
  m.effective_rank = r.header().at("effective_rank").get<int>();
  m.rank_warning = r.header().at("rank_warning").get<bool>();
  m.mean = r.f64("mean");
  m.eigenvalues = r.f64("eigenvalues");
  m.projection = r.f64("projection");
  return m;
}

}  // namespace asckit::lda
