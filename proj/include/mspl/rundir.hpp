#pragma once

#include <string>

#include <json.hpp>

namespace mspl::cli {

// Output directory for one subcommand invocation. The resolved config is
// echoed before any work; finalize() walks the tree into manifest.json and
// writes run_meta.json (the only output allowed to vary between identical
// runs, since it carries wall time).
class RunDir {
 public:
  explicit RunDir(std::string root);

  const std::string& root() const { return root_; }
  std::string path(const std::string& relative) const;

  void write_config(const nlohmann::ordered_json& cfg);
  void finalize(const nlohmann::ordered_json& cfg, double wall_seconds);

 private:
  std::string root_;
};

}  // namespace mspl::cli
