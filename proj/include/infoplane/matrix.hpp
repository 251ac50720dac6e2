#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace infoplane {

// Row-major so that node i is one contiguous row, matching the trace payload.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

inline void require_shape(const Matrix& m, Eigen::Index rows, Eigen::Index cols,
                          const char* what) {
  if (m.rows() != rows || m.cols() != cols) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch, expected " +
                                std::to_string(rows) + "x" + std::to_string(cols) +
                                ", got " + std::to_string(m.rows()) + "x" +
                                std::to_string(m.cols()));
  }
}

}  // namespace infoplane
