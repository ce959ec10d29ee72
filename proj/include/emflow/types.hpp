#pragma once

#include <Eigen/Dense>

namespace emflow {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

// Inclusive token index range [first, last].
struct Span {
  Index first = 0;
  Index last = 0;

  Index length() const { return last - first + 1; }
  bool operator==(const Span&) const = default;
};

}  // namespace emflow
