#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace kw::cli {

// Exit codes: 0 success, 1 validation / runtime failure, 2 usage error,
// 3 fetch stopped early because every key ran out of quota.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitQuota = 3;

int dispatch(int argc, char** argv);
// args excludes the program name.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace kw::cli
