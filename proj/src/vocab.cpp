#include "pplus/vocab.hpp"

#include <cctype>
#include <fstream>
#include <stdexcept>

namespace pplus {

std::string lowercase(const std::string& s) {
  std::string out = s;
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::vector<std::string> split_prompt_words(const std::string& text) {
  // Commas are their own tokens so "object, appearance" prompts keep the
  // separator visible to the encoder.
  std::string spaced;
  for (char c : text) {
    if (c == ',') {
      spaced += " , ";
    } else {
      spaced += c;
    }
  }
  std::vector<std::string> words;
  std::string cur;
  for (char c : spaced + " ") {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) {
        words.push_back(lowercase(cur));
        cur.clear();
      }
    } else {
      cur += c;
    }
  }
  return words;
}

Vocabulary Vocabulary::from_words(const std::vector<std::string>& words) {
  Vocabulary v;
  v.names_ = {"<bos>", "<eos>", "<pad>", "<token>"};
  for (const std::string& w : words) {
    std::string lw = lowercase(w);
    if (lw.empty()) continue;
    if (v.index_.count(lw)) {
      throw std::invalid_argument("duplicate vocabulary word '" + lw + "'");
    }
    v.index_.emplace(lw, static_cast<int32_t>(v.names_.size()));
    v.names_.push_back(lw);
  }
  for (int32_t i = 0; i < 4; ++i) v.index_.emplace(v.names_[static_cast<size_t>(i)], i);
  v.natural_ = static_cast<int32_t>(v.names_.size());
  return v;
}

Vocabulary Vocabulary::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open vocabulary file " + path);
  std::vector<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (!line.empty()) words.push_back(line);
  }
  return from_words(words);
}

int32_t Vocabulary::id_of(const std::string& word) const {
  auto it = index_.find(lowercase(word));
  if (it == index_.end()) {
    throw std::invalid_argument("out-of-vocabulary word '" + word + "'");
  }
  return it->second;
}

bool Vocabulary::contains(const std::string& word) const {
  return index_.count(lowercase(word)) > 0;
}

const std::string& Vocabulary::word_of(int32_t id) const {
  if (id < 0 || id >= size()) throw std::invalid_argument("token id out of range: " + std::to_string(id));
  return names_[static_cast<size_t>(id)];
}

bool Vocabulary::is_placeholder(int32_t id) const {
  return id == kPlaceholder || id >= natural_;
}

int32_t Vocabulary::add_placeholder(const std::string& name) {
  std::string lw = lowercase(name);
  if (index_.count(lw)) throw std::invalid_argument("token '" + lw + "' already exists");
  const int32_t id = static_cast<int32_t>(names_.size());
  index_.emplace(lw, id);
  names_.push_back(lw);
  return id;
}

PromptTemplate Vocabulary::tokenize(const std::string& text, int64_t seq_len) const {
  PromptTemplate t;
  t.words = split_prompt_words(text);
  if (static_cast<int64_t>(t.words.size()) + 2 > seq_len) {
    throw std::invalid_argument("prompt too long: " + std::to_string(t.words.size()) +
                                " words for sequence length " + std::to_string(seq_len));
  }
  t.ids.assign(static_cast<size_t>(seq_len), kPad);
  t.mask.assign(static_cast<size_t>(seq_len), 0);
  t.ids[0] = kBos;
  int pos = 1;
  for (const std::string& w : t.words) {
    const int32_t id = id_of(w);
    if (is_placeholder(id)) {
      if (t.placeholder_pos >= 0) {
        throw std::invalid_argument("prompt has more than one placeholder: '" + text + "'");
      }
      t.placeholder_pos = pos;
    }
    t.word_pos.push_back(pos);
    t.ids[static_cast<size_t>(pos)] = id;
    ++pos;
  }
  t.ids[static_cast<size_t>(pos)] = kEos;
  t.content_len = pos + 1;
  for (int i = 0; i < t.content_len; ++i) t.mask[static_cast<size_t>(i)] = 1;
  return t;
}

}  // namespace pplus
