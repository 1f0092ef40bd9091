#pragma once

#include <Eigen/Dense>

namespace imfb {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Small dense helpers shared by the modules. Inputs are expected to be
// symmetric where the name says so; nothing here symmetrizes silently.

bool is_symmetric(const Mat& m, double rel_tol = 1e-10);
Mat symmetrized(const Mat& m);

/// Eigenvalues of a symmetric matrix, ascending.
Vec sym_eigenvalues(const Mat& m);
double min_eigenvalue(const Mat& m);
double max_eigenvalue(const Mat& m);
/// Ratio of extreme eigenvalues; +inf when the smallest is <= 0.
double condition_number(const Mat& m);

/// Inverse of a symmetric positive-definite matrix via LLT. Throws
/// Error(NonSPDMatrix) if the factorization fails.
Mat spd_inverse(const Mat& m);
/// log det of an SPD matrix via LLT.
double spd_logdet(const Mat& m);

double max_abs(const Mat& m);
bool all_finite(const Mat& m);

}  // namespace imfb
