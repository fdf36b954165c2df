#pragma once

#include <stdexcept>
#include <string>

namespace pldr {

struct shape_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct input_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Thrown when a regularized DAG loss overflows; reporting paths catch it and
// emit the overflow sentinel instead.
struct dag_overflow_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace pldr
