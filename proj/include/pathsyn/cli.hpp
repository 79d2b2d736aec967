#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace pathsyn::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

// `args` excludes the program name. Every option can also come from
// `--config FILE` (key = value, dashes in flag names become underscores);
// flags win over the file.
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int cli_main(int argc, char** argv);

}  // namespace pathsyn::cli
