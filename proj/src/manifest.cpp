#include "ucmnet/manifest.hpp"

#include <fstream>
#include <sstream>

#include "ucmnet/common.hpp"

namespace ucmnet {

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest: " + path);
  std::vector<ManifestEntry> entries;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    size_t start = 0;
    while (true) {
      const size_t tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 3)
      throw ParseError("manifest line " + std::to_string(lineno) + ": expected 3 tab-separated fields, got " +
                       std::to_string(fields.size()));
    ManifestEntry e;
    try {
      size_t used = 0;
      e.index = std::stoi(fields[0], &used);
      if (used != fields[0].size()) throw std::invalid_argument("trailing junk");
    } catch (const std::exception&) {
      throw ParseError("manifest line " + std::to_string(lineno) + ": bad index '" + fields[0] + "'");
    }
    e.clean_path = fields[1];
    e.degraded_path = fields[2];
    if (e.clean_path.empty() || e.degraded_path.empty())
      throw ParseError("manifest line " + std::to_string(lineno) + ": empty path");
    entries.push_back(std::move(e));
  }
  return entries;
}

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries,
                    const std::vector<std::string>& header_comments) {
  std::ofstream out(path, std::ios::binary);  // binary keeps line endings stable
  if (!out) throw IoError("cannot open manifest for writing: " + path);
  for (const auto& c : header_comments) out << "# " << c << "\n";
  for (const auto& e : entries) out << e.index << '\t' << e.clean_path << '\t' << e.degraded_path << '\n';
  if (!out) throw IoError("manifest write failed: " + path);
}

}  // namespace ucmnet
