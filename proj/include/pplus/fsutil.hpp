#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pplus {

// write-temp-then-rename so partially written artifacts never appear
void atomic_write(const std::string& path, const std::string& bytes);
void atomic_write(const std::string& path, const void* data, size_t n);
std::string read_file(const std::string& path);
void ensure_dir(const std::string& path);

// Sorted relative paths of all regular files below root.
std::vector<std::string> list_tree(const std::string& root);
// True when both trees hold the same relative file names with identical bytes.
bool trees_identical(const std::string& a, const std::string& b, std::string* first_diff = nullptr);

}  // namespace pplus
