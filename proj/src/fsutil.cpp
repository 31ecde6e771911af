#include "pplus/fsutil.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace pplus {

void atomic_write(const std::string& path, const void* data, size_t n) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp + " for writing");
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!out) throw std::runtime_error("short write to " + tmp);
  }
  fs::rename(tmp, path);
}

void atomic_write(const std::string& path, const std::string& bytes) {
  atomic_write(path, bytes.data(), bytes.size());
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void ensure_dir(const std::string& path) { fs::create_directories(path); }

std::vector<std::string> list_tree(const std::string& root) {
  std::vector<std::string> out;
  if (!fs::exists(root)) return out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) {
      out.push_back(fs::relative(e.path(), root).generic_string());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

bool trees_identical(const std::string& a, const std::string& b, std::string* first_diff) {
  const auto fa = list_tree(a);
  const auto fb = list_tree(b);
  if (fa != fb) {
    if (first_diff) *first_diff = "file lists differ";
    return false;
  }
  for (const auto& rel : fa) {
    if (read_file((fs::path(a) / rel).string()) != read_file((fs::path(b) / rel).string())) {
      if (first_diff) *first_diff = rel;
      return false;
    }
  }
  return true;
}

}  // namespace pplus
