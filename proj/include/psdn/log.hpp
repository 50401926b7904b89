#pragma once

#include <string>

namespace psdn {

enum class LogLevel { kError = 0, kInfo = 1, kDebug = 2 };

// Level comes from PSDN_LOG in {error, info, debug}; default info.
LogLevel log_level();
void set_log_level(LogLevel level);

void log_error(const std::string& msg);
void log_info(const std::string& msg);
void log_debug(const std::string& msg);

}  // namespace psdn
