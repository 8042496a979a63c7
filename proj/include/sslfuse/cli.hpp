#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace sslfuse {

// Exit codes: 0 success, 1 usage error, 2 data or validation error.
// `args` excludes the program name.
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int cli_main(int argc, const char* const* argv);

}  // namespace sslfuse
