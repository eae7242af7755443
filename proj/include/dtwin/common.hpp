#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace dtwin {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A model or configuration value violates its documented domain.
class InvalidParameter : public Error {
public:
    using Error::Error;
};

/// A computation produced a non-finite value or a factorization failed.
class NumericFailure : public Error {
public:
    using Error::Error;
};

/// GP hyperparameter training did not converge on any restart.
class TrainingError : public Error {
public:
    TrainingError(const std::string& what, Vector best_log_theta, double best_nll)
        : Error(what), best_log_theta_(std::move(best_log_theta)), best_nll_(best_nll) {}

    const Vector& best_log_theta() const noexcept { return best_log_theta_; }
    double best_nll() const noexcept { return best_nll_; }

private:
    Vector best_log_theta_;
    double best_nll_;
};

inline bool all_finite(const Eigen::Ref<const Matrix>& m) {
    return m.allFinite();
}

inline void require(bool cond, const std::string& msg) {
    if (!cond) {
        throw InvalidParameter(msg);
    }
}

/// (P + Pᵀ)/2 in place.
inline void symmetrize(Matrix& p) {
    p = 0.5 * (p + p.transpose()).eval();
}

inline std::vector<double> to_std(const Vector& v) {
    return {v.data(), v.data() + v.size()};
}

inline Vector from_std(const std::vector<double>& v) {
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace dtwin
