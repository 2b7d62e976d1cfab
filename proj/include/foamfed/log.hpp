#pragma once

#include <spdlog/spdlog.h>

#include <string>

namespace foamfed {

// Maps the CLI --log-level value onto spdlog. Unknown names throw.
inline void set_log_level(const std::string& level) {
  if (level == "error") spdlog::set_level(spdlog::level::err);
  else if (level == "warn") spdlog::set_level(spdlog::level::warn);
  else if (level == "info") spdlog::set_level(spdlog::level::info);
  else if (level == "debug") spdlog::set_level(spdlog::level::debug);
  else throw std::invalid_argument("unknown log level: " + level);
}

}  // namespace foamfed
