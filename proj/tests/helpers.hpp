#pragma once

#include <doctest.h>

#include <functional>
#include <optional>

#include "nact/pwl.hpp"

namespace testutil {

// Runs fn, which must throw nact::Error, and returns the thrown code.
inline nact::ErrorCode error_code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const nact::Error& e) {
    return e.code();
  } catch (const std::exception& e) {
    FAIL("expected nact::Error, got: ", e.what());
  }
  FAIL("expected nact::Error, nothing was thrown");
  return nact::ErrorCode::Internal;
}

}  // namespace testutil
