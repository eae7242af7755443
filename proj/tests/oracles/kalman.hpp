#pragma once
// Textbook linear Kalman filter and random linear-Gaussian system helpers.

#include "dtwin/common.hpp"

#include <random>

namespace oracle {

using dtwin::Matrix;
using dtwin::Vector;

inline Matrix random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = n(rng);
    return m;
}

inline Matrix random_spd(std::mt19937_64& rng, Eigen::Index n, double floor = 0.1) {
    const Matrix a = random_matrix(rng, n, n);
    return a * a.transpose() + floor * Matrix::Identity(n, n);
}

struct KfState {
    Vector m;
    Matrix p;
};

inline KfState kf_predict(const KfState& s, const Matrix& a, const Matrix& q) {
    return {a * s.m, a * s.p * a.transpose() + q};
}

inline KfState kf_update(const KfState& s, const Matrix& h, const Vector& z, const Matrix& r) {
    const Matrix sm = h * s.p * h.transpose() + r;
    const Matrix k = s.p * h.transpose() * sm.inverse();
    return {s.m + k * (z - h * s.m), s.p - k * sm * k.transpose()};
}

}  // namespace oracle
