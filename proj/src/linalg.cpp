#include "imfbridge/linalg.hpp"

#include <cmath>
#include <limits>

#include "imfbridge/errors.hpp"

namespace imfb {

bool is_symmetric(const Mat& m, double rel_tol) {
  if (m.rows() != m.cols()) return false;
  const double scale = std::max(1.0, max_abs(m));
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= rel_tol * scale;
}

Mat symmetrized(const Mat& m) { return 0.5 * (m + m.transpose()); }

Vec sym_eigenvalues(const Mat& m) {
  Eigen::SelfAdjointEigenSolver<Mat> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues();
}

double min_eigenvalue(const Mat& m) { return sym_eigenvalues(m).minCoeff(); }
double max_eigenvalue(const Mat& m) { return sym_eigenvalues(m).maxCoeff(); }

double condition_number(const Mat& m) {
  const Vec ev = sym_eigenvalues(m);
  if (ev.minCoeff() <= 0.0) return std::numeric_limits<double>::infinity();
  return ev.maxCoeff() / ev.minCoeff();
}

Mat spd_inverse(const Mat& m) {
  Eigen::LLT<Mat> llt(m);
  if (llt.info() != Eigen::Success) {
    throw Error(Errc::NonSPDMatrix, "Cholesky factorization failed");
  }
  return symmetrized(llt.solve(Mat::Identity(m.rows(), m.cols())));
}

double spd_logdet(const Mat& m) {
  Eigen::LLT<Mat> llt(m);
  if (llt.info() != Eigen::Success) {
    throw Error(Errc::NonSPDMatrix, "Cholesky factorization failed");
  }
  return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

double max_abs(const Mat& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

bool all_finite(const Mat& m) { return m.allFinite(); }

}  // namespace imfb
