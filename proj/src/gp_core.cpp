#include "asvgp/gp_core.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace asvgp {

using ad::Matrix;
using ad::Tape;
using ad::Var;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {
constexpr double kLog2Pi = 1.8378770664093453;
}

SubsetIndex::SubsetIndex(std::vector<int> idx) : indices(std::move(idx)) {
  if (!std::is_sorted(indices.begin(), indices.end()) ||
      std::adjacent_find(indices.begin(), indices.end()) != indices.end()) {
    throw std::invalid_argument("SubsetIndex: indices must be sorted and distinct");
  }
}

SubsetIndex SubsetIndex::all(int k) {
  std::vector<int> idx(k);
  for (int i = 0; i < k; ++i) {
    idx[i] = i;
  }
  return SubsetIndex(std::move(idx));
}

void SubsetIndex::validate(int candidate_count) const {
  if (!indices.empty() &&
      (indices.front() < 0 || indices.back() >= candidate_count)) {
    throw std::out_of_range("SubsetIndex: index outside candidate set");
  }
}

SvgpModel SvgpModel::init(const MatrixXd &candidates, BoundMode mode) {
  if (candidates.rows() < 1) {
    throw std::invalid_argument("SvgpModel: need at least one candidate point");
  }
  SvgpModel m;
  m.inducing_candidates = candidates;
  m.kernel = KernelParams::unit(static_cast<int>(candidates.cols()));
  m.log_noise_variance = 0.0;
  m.mode = mode;
  const int k = m.candidate_count();
  m.var_mean = VectorXd::Zero(k);
  m.var_factor_strict = MatrixXd::Zero(k, k);
  m.var_factor_log_diag = VectorXd::Zero(k);
  m.reset_variational_to_prior();
  return m;
}

MatrixXd SvgpModel::var_factor() const {
  const int k = candidate_count();
  MatrixXd f = MatrixXd::Zero(k, k);
  f.triangularView<Eigen::StrictlyLower>() = var_factor_strict;
  f.diagonal() = var_factor_log_diag.array().exp();
  return f;
}

MatrixXd SvgpModel::var_cov() const {
  MatrixXd f = var_factor();
  return f * f.transpose();
}

void SvgpModel::reset_variational_to_prior() {
  const int k = candidate_count();
  var_mean = VectorXd::Zero(k);
  MatrixXd l = gp::cholesky_jitter(
      kernel::gram(kernel, inducing_candidates, inducing_candidates));
  var_factor_strict = MatrixXd::Zero(k, k);
  var_factor_strict.triangularView<Eigen::StrictlyLower>() = l;
  var_factor_log_diag = l.diagonal().array().log();
}

namespace gp {

MatrixXd cholesky_jitter(const MatrixXd &a) {
  return ad::cholesky_with_jitter(a);
}

double exact_lml(const KernelParams &params, double log_noise_variance,
                 const MatrixXd &x, const VectorXd &y) {
  const int n = static_cast<int>(x.rows());
  if (n < 1) {
    throw std::invalid_argument("exact_lml: need at least one observation");
  }
  MatrixXd cov = kernel::gram(params, x, x);
  cov.diagonal().array() += std::exp(log_noise_variance);
  MatrixXd l = cholesky_jitter(cov);
  VectorXd c = l.triangularView<Eigen::Lower>().solve(y);
  double logdet = 2.0 * l.diagonal().array().log().sum();
  return -0.5 * (n * kLog2Pi + logdet + c.squaredNorm());
}

double gaussian_kl(const VectorXd &m0, const MatrixXd &s0, const VectorXd &m1,
                   const MatrixXd &s1) {
  const int n = static_cast<int>(m0.size());
  if (m1.size() != n || s0.rows() != n || s1.rows() != n) {
    throw ad::ShapeError("gaussian_kl: dimension mismatch");
  }
  MatrixXd l0 = cholesky_jitter(s0);
  MatrixXd l1 = cholesky_jitter(s1);
  // tr(S1^-1 S0) = ||L1^-1 L0||_F^2
  MatrixXd w = l1.triangularView<Eigen::Lower>().solve(l0);
  VectorXd d = l1.triangularView<Eigen::Lower>().solve(VectorXd(m1 - m0));
  double logdet0 = 2.0 * l0.diagonal().array().log().sum();
  double logdet1 = 2.0 * l1.diagonal().array().log().sum();
  return 0.5 * (w.squaredNorm() + d.squaredNorm() - n + logdet1 - logdet0);
}

std::pair<VectorXd, MatrixXd> collapsed_q_u(const SvgpModel &model,
                                            const SubsetIndex &subset,
                                            const MatrixXd &x,
                                            const VectorXd &y) {
  if (subset.empty()) {
    throw std::invalid_argument("collapsed_q_u: empty subset");
  }
  subset.validate(model.candidate_count());
  MatrixXd z = model.inducing_candidates(subset.indices, Eigen::all);
  MatrixXd kmm = kernel::gram(model.kernel, z, z);
  MatrixXd kmn = kernel::gram(model.kernel, z, x);
  double inv_noise = 1.0 / model.noise_variance();
  // With L = chol(Kmm) and A = L^-1 Kmn:
  //   S = L B^-1 L^T,  m = L B^-1 A y / s2,  B = I + A A^T / s2.
  // This keeps the conditioning at kappa(B) rather than kappa(Kmm)^2.
  MatrixXd l = cholesky_jitter(kmm);
  MatrixXd a = l.triangularView<Eigen::Lower>().solve(kmn);
  const int m_count = subset.size();
  MatrixXd b = MatrixXd::Identity(m_count, m_count) +
               inv_noise * (a * a.transpose());
  MatrixXd lb = cholesky_jitter(b);
  // V = LB^-1 L^T, so S = V^T V.
  MatrixXd v = lb.triangularView<Eigen::Lower>().solve(MatrixXd(l.transpose()));
  MatrixXd s = v.transpose() * v;
  s = 0.5 * (s + s.transpose());
  VectorXd rhs = lb.triangularView<Eigen::Lower>().solve(VectorXd(a * y));
  VectorXd m =
      inv_noise * (l * lb.transpose().triangularView<Eigen::Upper>().solve(rhs));
  return {m, s};
}

std::pair<VectorXd, VectorXd> predict(const SvgpModel &model,
                                      const SubsetIndex &subset,
                                      const VectorXd &m, const MatrixXd &s,
                                      const MatrixXd &x_test) {
  if (subset.empty()) {
    throw std::invalid_argument("predict: empty subset");
  }
  subset.validate(model.candidate_count());
  MatrixXd z = model.inducing_candidates(subset.indices, Eigen::all);
  MatrixXd kmm = kernel::gram(model.kernel, z, z);
  MatrixXd ktm = kernel::gram(model.kernel, x_test, z);
  MatrixXd l = cholesky_jitter(kmm);
  // beta = Ktm Kmm^-1, computed row-block as Kmm^-1 Kmt then transposed
  MatrixXd t0 = l.triangularView<Eigen::Lower>().solve(MatrixXd(ktm.transpose()));
  MatrixXd beta =
      l.transpose().triangularView<Eigen::Upper>().solve(t0).transpose();
  VectorXd mean = beta * m;
  MatrixXd p = beta * (kmm - s);
  VectorXd var = kernel::gram_diag(model.kernel, x_test) -
                 (beta.array() * p.array()).rowwise().sum().matrix();
  var = var.cwiseMax(0.0);
  return {mean, var};
}

ModelLeaves leaves(Tape &t, const SvgpModel &model) {
  ModelLeaves ml;
  auto kl = kernel::leaves(t, model.kernel);
  ml.log_lengthscales = kl.log_lengthscales;
  ml.log_variance = kl.log_variance;
  ml.log_noise = t.parameter("log_noise",
                             Matrix::Constant(1, 1, model.log_noise_variance));
  ml.z = t.parameter("z", model.inducing_candidates);
  if (model.mode == BoundMode::Uncollapsed) {
    ml.var_mean = t.parameter("var_mean", model.var_mean);
    ml.var_factor_strict =
        t.parameter("var_factor_strict", model.var_factor_strict);
    ml.var_factor_log_diag =
        t.parameter("var_factor_log_diag", model.var_factor_log_diag);
  }
  return ml;
}

namespace {

std::vector<int> all_cols(int d) {
  std::vector<int> c(d);
  for (int i = 0; i < d; ++i) {
    c[i] = i;
  }
  return c;
}

// log N(y | 0, s2 I) - tr(Knn)/(2 s2): the M = 0 limit of both bounds.
Var empty_subset_bound(Tape &t, const ModelLeaves &ml, const MatrixXd &x,
                       const VectorXd &y, double scale) {
  const double n = static_cast<double>(x.rows());
  Var inv_noise = t.exp(-ml.log_noise);
  Var data_quad = t.constant(y.squaredNorm()) + t.constant(n) * t.exp(ml.log_variance);
  Var ll = t.constant(-0.5) *
           (t.constant(n * kLog2Pi) + t.constant(n) * ml.log_noise +
            t.cmul(inv_noise, data_quad));
  return t.constant(scale) * ll;
}

} // namespace

Var collapsed_elbo(Tape &t, const ModelLeaves &ml, const SubsetIndex &subset,
                   const MatrixXd &x, const VectorXd &y) {
  const double n = static_cast<double>(x.rows());
  if (subset.empty()) {
    return empty_subset_bound(t, ml, x, y, 1.0);
  }
  const int m = subset.size();
  Var z = t.gather(ml.z, subset.indices, all_cols(ml.z.cols()));
  Var kmm = kernel::gram(t, ml.log_lengthscales, ml.log_variance, z, z);
  Var kmn = kernel::gram(t, ml.log_lengthscales, ml.log_variance, z,
                         t.constant(x));
  Var l = t.cholesky(kmm);
  Var a = t.tri_solve_lower(l, kmn); // M x N
  Var sig2 = t.exp(ml.log_noise);
  Var inv_sig2 = t.exp(-ml.log_noise);
  Var b = a * t.transpose(a) +
          t.cmul(sig2, t.constant(Matrix::Identity(m, m)));
  Var lb = t.cholesky(b);
  Var logdet = t.constant(2.0) * t.sum(t.log(t.diag_part(lb))) +
               t.constant(n - m) * ml.log_noise;
  Var c = t.tri_solve_lower(lb, a * t.constant(Matrix(y)));
  Var quad = t.cmul(inv_sig2,
                    t.constant(y.squaredNorm()) - t.sum(t.square(c)));
  Var loglik =
      t.constant(-0.5) * (t.constant(n * kLog2Pi) + logdet + quad);
  Var trace_term =
      t.constant(0.5) *
      t.cmul(inv_sig2,
             t.constant(n) * t.exp(ml.log_variance) - t.sum(t.square(a)));
  return loglik - trace_term;
}

Var uncollapsed_elbo(Tape &t, const ModelLeaves &ml, const SubsetIndex &subset,
                     const MatrixXd &x_batch, const VectorXd &y_batch,
                     double scale) {
  const double nb = static_cast<double>(x_batch.rows());
  if (subset.empty()) {
    return empty_subset_bound(t, ml, x_batch, y_batch, scale);
  }
  if (!ml.var_mean.valid()) {
    throw std::logic_error("uncollapsed_elbo: model leaves lack variational parameters");
  }
  const int m = subset.size();
  Var z = t.gather(ml.z, subset.indices, all_cols(ml.z.cols()));
  Var kmm = kernel::gram(t, ml.log_lengthscales, ml.log_variance, z, z);
  Var kmn = kernel::gram(t, ml.log_lengthscales, ml.log_variance, z,
                         t.constant(x_batch));
  Var l = t.cholesky(kmm);
  Var a0 = t.tri_solve_lower(l, kmn);
  Var a = t.tri_solve_lower_transpose(l, a0); // Kmm^-1 Kmn, M x Nb

  // Variational Gaussian restricted to the subset.
  const int k = static_cast<int>(ml.var_mean.rows());
  Matrix strict_mask = Matrix::Zero(k, k);
  strict_mask.triangularView<Eigen::StrictlyLower>().setConstant(1.0);
  Var f = t.cmul(t.constant(strict_mask), ml.var_factor_strict) +
          t.diag_embed(t.exp(ml.var_factor_log_diag));
  Var s_full = f * t.transpose(f);
  std::vector<int> zero_col{0};
  Var s_sub = t.gather(s_full, subset.indices, subset.indices);
  Var m_sub = t.gather(ml.var_mean, subset.indices, zero_col);

  Var mu = t.transpose(a) * m_sub; // Nb x 1
  Var kdiag = kernel::gram_diag(t, ml.log_variance, x_batch.rows());
  Var ones_row = t.constant(Matrix::Ones(1, m));
  Var q1 = t.transpose(ones_row * t.cmul(kmn, a));
  Var q2 = t.transpose(ones_row * t.cmul(a, s_sub * a));
  Var var = kdiag - q1 + q2;

  Var inv_sig2 = t.exp(-ml.log_noise);
  Var resid2 = t.square(mu - t.constant(Matrix(y_batch)));
  Var ell = t.constant(scale) *
            (t.constant(-0.5 * nb) * (t.constant(kLog2Pi) + ml.log_noise) +
             t.constant(-0.5) * t.cmul(inv_sig2, t.sum(var + resid2)));

  // KL[q(u) || p(u | Z)] over the subset; never scaled.
  Var w0 = t.tri_solve_lower(l, s_sub);
  Var w1 = t.tri_solve_lower_transpose(l, w0); // Kmm^-1 S
  Var alpha = t.tri_solve_lower(l, m_sub);
  Var logdet_kmm = t.constant(2.0) * t.sum(t.log(t.diag_part(l)));
  Var logdet_s = ad::logdet_spd(t, s_sub);
  Var kl = t.constant(0.5) *
           (t.trace(w1) + t.sum(t.square(alpha)) + t.constant(-1.0 * m) +
            logdet_kmm - logdet_s);
  return ell - kl;
}

Var exact_lml(Tape &t, Var log_lengthscales, Var log_variance, Var log_noise,
              const MatrixXd &x, const VectorXd &y) {
  const double n = static_cast<double>(x.rows());
  Var xs = t.constant(x);
  Var knn = kernel::gram(t, log_lengthscales, log_variance, xs, xs);
  Var cov = knn + t.cmul(t.exp(log_noise),
                         t.constant(Matrix::Identity(x.rows(), x.rows())));
  Var l = t.cholesky(cov);
  Var c = t.tri_solve_lower(l, t.constant(Matrix(y)));
  Var logdet = t.constant(2.0) * t.sum(t.log(t.diag_part(l)));
  return t.constant(-0.5) *
         (t.constant(n * kLog2Pi) + logdet + t.sum(t.square(c)));
}

double collapsed_elbo(const SvgpModel &model, const SubsetIndex &subset,
                      const MatrixXd &x, const VectorXd &y) {
  subset.validate(model.candidate_count());
  Tape t;
  return collapsed_elbo(t, leaves(t, model), subset, x, y).scalar();
}

double uncollapsed_elbo(const SvgpModel &model, const SubsetIndex &subset,
                        const MatrixXd &x_batch, const VectorXd &y_batch,
                        double scale) {
  subset.validate(model.candidate_count());
  SvgpModel tmp = model;
  tmp.mode = BoundMode::Uncollapsed;
  Tape t;
  return uncollapsed_elbo(t, leaves(t, tmp), subset, x_batch, y_batch, scale)
      .scalar();
}

double bound_value(const SvgpModel &model, const SubsetIndex &subset,
                   const MatrixXd &x, const VectorXd &y) {
  if (model.mode == BoundMode::Collapsed) {
    return collapsed_elbo(model, subset, x, y);
  }
  return uncollapsed_elbo(model, subset, x, y, 1.0);
}

Var bound(Tape &t, const ModelLeaves &ml, BoundMode mode,
          const SubsetIndex &subset, const MatrixXd &x, const VectorXd &y,
          double scale) {
  if (mode == BoundMode::Collapsed) {
    return collapsed_elbo(t, ml, subset, x, y);
  }
  return uncollapsed_elbo(t, ml, subset, x, y, scale);
}

} // namespace gp
} // namespace asvgp
