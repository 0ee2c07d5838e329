#pragma once

#include <spdlog/spdlog.h>

namespace cfcv {

// Reads CFCV_LOG (trace|debug|info|warn|error|off) and configures the default
// stderr logger. Unknown values fall back to "warn".
void init_logging_from_env();

}  // namespace cfcv
