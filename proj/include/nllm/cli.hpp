#pragma once

#include <iosfwd>

namespace nllm {

/// Exit status: 0 success, 1 runtime or file error, 2 usage or configuration error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace nllm
