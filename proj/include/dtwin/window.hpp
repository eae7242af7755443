#pragma once

#include "dtwin/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace dtwin {

/// Where a measurement window came from.
struct Provenance {
    enum class Kind { synthetic, ingested };
    Kind kind = Kind::synthetic;
    std::uint64_t seed = 0;  // synthetic
    std::string path;        // ingested
};

/// One fast-timescale record taken at slow time t_s.
struct MeasurementWindow {
    double t_s = 0.0;                       // days
    std::vector<double> times;              // s
    Matrix accel;                           // samples × observed DOFs (m/s²)
    Matrix force;                           // samples × N (N)
    std::vector<std::size_t> observed_dofs; // 0-based
    Vector accel_noise_variance;            // per observed channel; empty when unknown
    Provenance provenance;

    std::size_t samples() const { return times.size(); }

    void validate() const {
        require(times.size() >= 2, "measurement window needs at least two samples");
        require(!observed_dofs.empty(), "measurement window observes no DOF");
        require(accel.rows() == static_cast<Eigen::Index>(times.size()) &&
                    force.rows() == static_cast<Eigen::Index>(times.size()),
                "measurement series lengths differ from the time grid");
        require(accel.cols() == static_cast<Eigen::Index>(observed_dofs.size()),
                "acceleration columns do not match observed DOFs");
        require(accel_noise_variance.size() == 0 || accel_noise_variance.size() == accel.cols(),
                "noise variance needs one entry per observed DOF");
        const double dt = times[1] - times[0];
        require(dt > 0.0, "time grid must be strictly increasing");
        for (std::size_t k = 1; k < times.size(); ++k) {
            const double step = times[k] - times[k - 1];
            require(std::abs(step - dt) <= 1e-9 * std::max(1.0, std::abs(times[k])) + 1e-6 * dt,
                    "time grid must be uniform");
        }
    }

    double dt() const { return times[1] - times[0]; }
};

}  // namespace dtwin
