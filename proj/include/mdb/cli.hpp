#pragma once

namespace mdb {

/// Entry point behind the mdbnet binary. Exit codes: 0 success, 1 validation
/// failure, 2 internal error, 64 usage error.
int cli_run(int argc, const char* const* argv);

}  // namespace mdb
