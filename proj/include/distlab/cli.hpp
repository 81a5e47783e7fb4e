#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace distlab::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitRuntimeError = 1,
  kExitUsageError = 2,
};

/// Written as manifest.json next to every command's outputs.
struct RunManifest {
  std::string command;
  nlohmann::json config = nlohmann::json::object();  // fully resolved
  std::map<std::string, std::string> inputs;         // role/path -> content hash
  std::vector<std::string> outputs;
  std::uint64_t seed = 0;
  std::string started_at;
  double wall_seconds = 0.0;
  std::string status = "ok";
  std::string error;

  nlohmann::json to_json() const;
  void save(const std::filesystem::path& dir) const;
};

/// Runs one command line (args excludes the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace distlab::cli
