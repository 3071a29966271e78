#include "mspl/rundir.hpp"

#include <filesystem>
#include <fstream>

#include "mspl/common.hpp"
#include "mspl/thread_pool.hpp"

namespace mspl::cli {

namespace fs = std::filesystem;

RunDir::RunDir(std::string root) : root_(std::move(root)) {
  MSPL_CHECK(!root_.empty(), "run dir: --out is required");
  std::error_code ec;
  fs::create_directories(root_, ec);
  MSPL_CHECK_IO(!ec, "run dir: cannot create ", root_);
}

std::string RunDir::path(const std::string& relative) const { return root_ + "/" + relative; }

void RunDir::write_config(const nlohmann::ordered_json& cfg) {
  std::ofstream os(path("config.json"), std::ios::binary | std::ios::trunc);
  MSPL_CHECK_IO(os.is_open(), "run dir: cannot write config.json");
  os << cfg.dump(2) << "\n";
  MSPL_CHECK_IO(os.good(), "run dir: write failed: config.json");
}

void RunDir::finalize(const nlohmann::ordered_json& cfg, double wall_seconds) {
  nlohmann::ordered_json manifest;
  auto files = nlohmann::ordered_json::array();
  std::vector<std::string> paths;
  for (const auto& entry : fs::recursive_directory_iterator(root_)) {
    if (!entry.is_regular_file()) {
      continue;
    }
    const std::string rel = fs::relative(entry.path(), root_).generic_string();
    if (rel == "manifest.json" || rel == "run_meta.json") {
      continue;
    }
    paths.push_back(rel);
  }
  std::sort(paths.begin(), paths.end());
  for (const std::string& rel : paths) {
    files.push_back({{"path", rel}, {"bytes", fs::file_size(fs::path(root_) / rel)}});
  }
  manifest["files"] = std::move(files);
  {
    std::ofstream os(path("manifest.json"), std::ios::binary | std::ios::trunc);
    MSPL_CHECK_IO(os.is_open(), "run dir: cannot write manifest.json");
    os << manifest.dump(2) << "\n";
  }

  nlohmann::ordered_json meta;
  meta["seed"] = cfg.at("seed");
  meta["threads"] = ThreadPool::instance().threads();
  meta["wall_seconds"] = wall_seconds;
  meta["config"] = cfg;
  std::ofstream os(path("run_meta.json"), std::ios::binary | std::ios::trunc);
  MSPL_CHECK_IO(os.is_open(), "run dir: cannot write run_meta.json");
  os << meta.dump(2) << "\n";
}

}  // namespace mspl::cli
