#pragma once

#include <cmath>
#include <vector>

#include "mibench/batch.hpp"
#include "mibench/errors.hpp"

namespace mibench {

// Finite joint laws p(x, y) as nx x ny probability tables, with exact
// expectations by enumeration.
using Table = Matrix;

inline void check_table(const Table& p) {
  require(p.size() > 0, "table: empty");
  require((p.array() >= 0.0).all(), "table: negative entry");
  require(std::abs(p.sum() - 1.0) < 1e-12, "table: entries must sum to 1");
}

inline Vector row_marginal(const Table& p) { return p.rowwise().sum(); }
inline Vector col_marginal(const Table& p) { return p.colwise().sum().transpose(); }

inline Table product_of_marginals(const Table& p) { return row_marginal(p) * col_marginal(p).transpose(); }

inline double kl_divergence(const Table& p, const Table& r) {
  require(p.rows() == r.rows() && p.cols() == r.cols(), "kl_divergence: shape mismatch");
  double s = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double pi = p.data()[i];
    if (pi == 0.0) continue;
    require(r.data()[i] > 0.0, "kl_divergence: p not absolutely continuous w.r.t. r");
    s += pi * std::log(pi / r.data()[i]);
  }
  return s;
}

inline double mutual_information(const Table& p) { return kl_divergence(p, product_of_marginals(p)); }

// Joint of (Q(x), y) for a code map over x values.
inline Table quantize_table(const Table& p, const std::vector<int>& code_of_x, int n_codes) {
  require(code_of_x.size() == static_cast<std::size_t>(p.rows()), "quantize_table: one code per x value");
  Table out = Table::Zero(n_codes, p.cols());
  for (Eigen::Index x = 0; x < p.rows(); ++x) out.row(code_of_x[static_cast<std::size_t>(x)]) += p.row(x);
  return out;
}

// r_Q(x, y) = p(x) p(y | Q(x)).
inline Table quantized_proposal(const Table& p, const std::vector<int>& code_of_x, int n_codes) {
  const Table pq = quantize_table(p, code_of_x, n_codes);
  const Vector px = row_marginal(p);
  Table r(p.rows(), p.cols());
  for (Eigen::Index x = 0; x < p.rows(); ++x) {
    const int c = code_of_x[static_cast<std::size_t>(x)];
    const double pc = pq.row(c).sum();
    r.row(x) = px[x] * pq.row(c) / pc;
  }
  return r;
}

// Exact generative bound of a proposal: E_p[log r(x,y) - log p(x) - log p(y)].
inline double exact_ir(const Table& p, const Table& r) {
  const Vector px = row_marginal(p);
  const Vector py = col_marginal(p);
  double s = 0.0;
  for (Eigen::Index x = 0; x < p.rows(); ++x)
    for (Eigen::Index y = 0; y < p.cols(); ++y)
      if (p(x, y) > 0.0) s += p(x, y) * (std::log(r(x, y)) - std::log(px[x]) - std::log(py[y]));
  return s;
}

// Exact-expectation versions of the discriminative objectives with critic
// table f over the same support.
inline double dv_exact(const Table& p, const Table& r, const Table& f) {
  return (p.array() * f.array()).sum() - std::log((r.array() * f.array().exp()).sum());
}

inline double mine_exact(const Table& p, const Table& r, const Table& f) { return dv_exact(p, r, f); }

inline double nwj_exact(const Table& p, const Table& r, const Table& f) {
  return (p.array() * f.array()).sum() + 1.0 - (r.array() * f.array().exp()).sum();
}

// Terms of the partition-variance bound for q = r e^f / Z.
struct VarianceTerms {
  double z = 0.0;
  double variance = 0.0;  // Var_r[e^f]
  double chi2 = 0.0;      // chi^2(q || r)
  double kl = 0.0;        // KL(q || r)
};

inline VarianceTerms variance_terms(const Table& r, const Table& f) {
  VarianceTerms t;
  const Matrix e = f.array().exp().matrix();
  t.z = (r.array() * e.array()).sum();
  t.variance = (r.array() * e.array().square()).sum() - t.z * t.z;
  double chi = 0.0;
  double kl = 0.0;
  for (Eigen::Index i = 0; i < r.size(); ++i) {
    const double ri = r.data()[i];
    if (ri == 0.0) continue;
    const double qi = ri * e.data()[i] / t.z;
    chi += qi * qi / ri;
    if (qi > 0.0) kl += qi * std::log(qi / ri);
  }
  t.chi2 = chi - 1.0;
  t.kl = kl;
  return t;
}

}  // namespace mibench
