#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace pplus {

// Token-id sequence with BOS/EOS framing, PAD fill, and at most one
// placeholder slot.
struct PromptTemplate {
  std::vector<int32_t> ids;    // fixed length (seq_len)
  std::vector<uint8_t> mask;   // 1 for BOS..EOS, 0 for PAD
  int placeholder_pos = -1;
  int content_len = 0;         // positions covered by the mask
  std::vector<std::string> words;  // parsed words in order
  std::vector<int> word_pos;       // template position of each word

  bool has_placeholder() const { return placeholder_pos >= 0; }
  bool operator==(const PromptTemplate& o) const { return ids == o.ids; }
};

class Vocabulary {
 public:
  static constexpr int32_t kBos = 0;
  static constexpr int32_t kEos = 1;
  static constexpr int32_t kPad = 2;
  static constexpr int32_t kPlaceholder = 3;

  Vocabulary() = default;
  static Vocabulary from_words(const std::vector<std::string>& words);
  static Vocabulary load_file(const std::string& path);

  int32_t id_of(const std::string& word) const;  // throws naming the word
  bool contains(const std::string& word) const;
  const std::string& word_of(int32_t id) const;
  // Total ids including dynamically added placeholders.
  int32_t size() const { return static_cast<int32_t>(names_.size()); }
  // Ids present before any dynamic placeholder was added; rows [0, natural)
  // of the lookup table form the density reference set.
  int32_t natural_size() const { return natural_; }
  bool is_placeholder(int32_t id) const;

  // Registers an extra placeholder token (e.g. per-layer inversion tokens);
  // its id never collides with natural-word ids.
  int32_t add_placeholder(const std::string& name);

  PromptTemplate tokenize(const std::string& text, int64_t seq_len) const;

  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, int32_t> index_;
  int32_t natural_ = 0;
};

std::string lowercase(const std::string& s);
std::vector<std::string> split_prompt_words(const std::string& text);

}  // namespace pplus
