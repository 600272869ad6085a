// Copyright 2026 The ETRIS Desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace etris {

/// Invalid model or run configuration (bad shapes, unsupported options).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad user input: malformed files, out-of-vocabulary words, over-length text.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values surfaced during a forward/backward pass or a probe.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Broken internal invariant (duplicate parameter names and the like).
class InternalError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace etris
