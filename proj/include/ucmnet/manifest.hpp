#pragma once

// Paired-sample manifests: one `index<TAB>clean<TAB>degraded` line per pair,
// `#` lines are comments, paths are relative to the manifest's directory.

#include <string>
#include <vector>

namespace ucmnet {

struct ManifestEntry {
  int index = 0;
  std::string clean_path;
  std::string degraded_path;
};

std::vector<ManifestEntry> read_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries,
                    const std::vector<std::string>& header_comments = {});

}  // namespace ucmnet
