#pragma once

#include <stdexcept>

namespace fspnet {

/// Bad configuration: CLI flags, config file contents, unsupported sizes.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad or missing data: datasets, images, checkpoints.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fspnet
