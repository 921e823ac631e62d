#pragma once

#include <iosfwd>

namespace mlmi {

/// Entry point of the `mlmi` tool. Usage errors (unknown flags, missing
/// required options, bad config keys) return 2; runtime failures return 1.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mlmi
