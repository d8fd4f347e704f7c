#pragma once

#include <Eigen/Core>

namespace croco {

/// Row-major dynamic matrix; one embedding per row.
template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <class T>
using MatMap = Eigen::Map<Mat<T>>;

template <class T>
using ConstMatMap = Eigen::Map<const Mat<T>>;

}  // namespace croco
