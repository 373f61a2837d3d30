// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace lowflow {

// Error taxonomy shared by the library and the CLI. The CLI maps these to
// process exit codes: UsageError -> 2, NumericError -> 3, IoError -> 4.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad arguments or malformed user-supplied values (flags, config keys).
struct UsageError : Error {
    using Error::Error;
};

// Out-of-domain inputs, degenerate linear systems, diverged iterations,
// non-finite intermediates.
struct NumericError : Error {
    using Error::Error;
};

// Missing or unreadable/unwritable files, malformed file contents.
struct IoError : Error {
    using Error::Error;
};

}  // namespace lowflow
