#pragma once

#include <stdexcept>
#include <string>

namespace ionnet {

// Base class so callers can catch everything thrown by the library in one place.
struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct domain_error : error {
  using error::error;
};

struct integrator_error : error {
  using error::error;
};

struct numerical_error : error {
  using error::error;
};

struct estimation_error : error {
  using error::error;
};

struct degenerate_input_error : error {
  using error::error;
};

struct undefined_visibility_error : error {
  using error::error;
};

struct handshake_timeout_error : error {
  int last_completed_step;
  handshake_timeout_error(const std::string &msg, int step)
      : error(msg), last_completed_step(step) {}
};

struct config_error : error {
  using error::error;
};

struct missing_preset_error : config_error {
  using config_error::config_error;
};

struct io_error : error {
  using error::error;
};

} // namespace ionnet
