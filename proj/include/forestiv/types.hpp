#pragma once

#include <Eigen/Core>

#include <stdexcept>
#include <string>

namespace forestiv {

using Scalar = double;
using Index = Eigen::Index;

using Vec = Eigen::VectorX<Scalar>;
using Mat = Eigen::MatrixX<Scalar>;

// Thrown for bad user input (files, schemas, configs). The CLI maps this
// class to exit code 2; every other exception maps to exit code 1.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace forestiv
