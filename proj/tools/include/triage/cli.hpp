#pragma once

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "triage/llmgw.hpp"

namespace triage::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

struct Hooks {
  /// Replaces the configured transport for every gateway the command builds.
  std::shared_ptr<llmgw::Transport> transport;
  llmgw::Gateway::Sleeper sleeper;
  llmgw::GatewayConfig::EnvLookup env = llmgw::GatewayConfig::process_env();
};

/// argv[0] is the program name. Errors go to `err` as one JSON line.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, const Hooks& hooks = {});

}  // namespace triage::cli
