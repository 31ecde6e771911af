#include "pplus/layers.hpp"

#include <cctype>
#include <sstream>
#include <stdexcept>
#include <tuple>

namespace pplus {

namespace {

const char* dir_name(LayerDir d) {
  switch (d) {
    case LayerDir::Down: return "down";
    case LayerDir::Mid: return "mid";
    case LayerDir::Up: return "up";
  }
  return "?";
}

LayerDir dir_from(const std::string& s) {
  if (s == "down") return LayerDir::Down;
  if (s == "mid") return LayerDir::Mid;
  if (s == "up") return LayerDir::Up;
  throw std::invalid_argument("bad layer direction '" + s + "'");
}

int dir_phase(LayerDir d) {
  switch (d) {
    case LayerDir::Down: return 0;
    case LayerDir::Mid: return 1;
    case LayerDir::Up: return 2;
  }
  return 3;
}

}  // namespace

std::string LayerId::str() const {
  std::ostringstream os;
  os << "(" << resolution << ", '" << dir_name(dir) << "', " << index << ")";
  return os.str();
}

LayerId LayerId::parse(const std::string& s) {
  // strip whitespace, then expect (RES,'DIR',IDX)
  std::string c;
  for (char ch : s) {
    if (!std::isspace(static_cast<unsigned char>(ch))) c += ch;
  }
  auto fail = [&] { throw std::invalid_argument("bad layer name '" + s + "'"); };
  if (c.size() < 7 || c.front() != '(' || c.back() != ')') fail();
  c = c.substr(1, c.size() - 2);
  std::vector<std::string> parts;
  std::string cur;
  for (char ch : c) {
    if (ch == ',') {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  parts.push_back(cur);
  if (parts.size() != 3) fail();
  std::string d = parts[1];
  if (d.size() >= 2 && d.front() == '\'' && d.back() == '\'') d = d.substr(1, d.size() - 2);
  LayerId id;
  try {
    id.resolution = std::stoll(parts[0]);
    id.dir = dir_from(d);
    id.index = std::stoll(parts[2]);
  } catch (const std::invalid_argument&) {
    fail();
  }
  if (id.resolution <= 0 || (id.resolution & (id.resolution - 1)) != 0 || id.index < 0) fail();
  return id;
}

bool LayerId::operator<(const LayerId& o) const {
  const int pa = dir_phase(dir), pb = dir_phase(o.dir);
  if (pa != pb) return pa < pb;
  // down runs outer->inner (descending resolution), up runs inner->outer
  const int64_t ra = dir == LayerDir::Down ? -resolution : resolution;
  const int64_t rb = o.dir == LayerDir::Down ? -o.resolution : o.resolution;
  return std::tie(ra, index) < std::tie(rb, o.index);
}

LayerRegistry::LayerRegistry(std::vector<LayerId> layers) : layers_(std::move(layers)) {}

LayerRegistry LayerRegistry::reference16() {
  std::vector<LayerId> v;
  auto add = [&](int64_t res, LayerDir d, int64_t idx) { v.push_back(LayerId{res, d, idx}); };
  add(64, LayerDir::Down, 0);
  add(64, LayerDir::Down, 1);
  add(32, LayerDir::Down, 0);
  add(32, LayerDir::Down, 1);
  add(16, LayerDir::Down, 0);
  add(16, LayerDir::Down, 1);
  add(8, LayerDir::Down, 0);
  add(16, LayerDir::Up, 0);
  add(16, LayerDir::Up, 1);
  add(16, LayerDir::Up, 2);
  add(32, LayerDir::Up, 0);
  add(32, LayerDir::Up, 1);
  add(32, LayerDir::Up, 2);
  add(64, LayerDir::Up, 0);
  add(64, LayerDir::Up, 1);
  add(64, LayerDir::Up, 2);
  return LayerRegistry(std::move(v));
}

int64_t LayerRegistry::position(const LayerId& id) const {
  for (size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i] == id) return static_cast<int64_t>(i);
  }
  throw std::invalid_argument("layer " + id.str() + " not in registry");
}

bool LayerRegistry::contains(const LayerId& id) const {
  for (const auto& l : layers_) {
    if (l == id) return true;
  }
  return false;
}

std::string LayerRegistry::fingerprint() const {
  std::string out;
  for (size_t i = 0; i < layers_.size(); ++i) {
    if (i) out += "; ";
    out += layers_[i].str();
  }
  return out;
}

bool LayerSubset::contains(const LayerId& id) const {
  for (const auto& l : layers) {
    if (l == id) return true;
  }
  return false;
}

std::string LayerSubset::range_str(const LayerRegistry& reg) const {
  if (layers.empty()) return "Empty set";
  if (layers.size() == 1) return layers[0].str();
  // verify contiguity in registry order
  const int64_t lo = reg.position(layers.front());
  for (size_t i = 0; i < layers.size(); ++i) {
    if (reg.position(layers[i]) != lo + static_cast<int64_t>(i)) {
      std::string out;
      for (size_t j = 0; j < layers.size(); ++j) {
        if (j) out += ", ";
        out += layers[j].str();
      }
      return out;
    }
  }
  return layers.front().str() + " - " + layers.back().str();
}

std::vector<LayerSubset> subset_sequence(const LayerRegistry& reg) {
  if (!(reg == LayerRegistry::reference16())) {
    throw std::invalid_argument("subset sequence is defined for the 16-layer reference registry only");
  }
  // 1-based inclusive position ranges; 0 means the empty set.
  const std::pair<int64_t, int64_t> ranges[8] = {
      {0, 0}, {7, 7}, {6, 7}, {6, 8}, {5, 8}, {5, 9}, {5, 10}, {1, 16}};
  std::vector<LayerSubset> out;
  for (const auto& [lo, hi] : ranges) {
    LayerSubset s;
    for (int64_t p = lo; p >= 1 && p <= hi; ++p) s.layers.push_back(reg.at(p - 1));
    out.push_back(std::move(s));
  }
  return out;
}

std::pair<int64_t, int64_t> parse_layer_range(const LayerRegistry& reg, const std::string& text) {
  // split top-level on '-' or ',' (never inside parentheses)
  std::vector<std::string> parts;
  std::string cur;
  int depth = 0;
  char sep = 0;
  for (char ch : text) {
    if (ch == '(') ++depth;
    if (ch == ')') --depth;
    if (depth == 0 && (ch == '-' || ch == ',') && !cur.empty()) {
      if (sep == 0) sep = ch;
      if (ch != sep) throw std::invalid_argument("layer range mixes '-' and ',' separators: " + text);
      parts.push_back(cur);
      cur.clear();
      continue;
    }
    cur += ch;
  }
  if (!cur.empty()) parts.push_back(cur);
  if (parts.empty()) throw std::invalid_argument("empty layer range: " + text);

  std::vector<int64_t> pos;
  for (const std::string& p : parts) pos.push_back(reg.position(LayerId::parse(p)) + 1);

  if (sep == '-') {
    if (pos.size() != 2) throw std::invalid_argument("layer range needs exactly two endpoints: " + text);
    if (pos[0] > pos[1]) throw std::invalid_argument("layer range endpoints out of order: " + text);
    return {pos[0], pos[1]};
  }
  for (size_t i = 1; i < pos.size(); ++i) {
    if (pos[i] != pos[i - 1] + 1) {
      throw std::invalid_argument("layer list is not contiguous in registry order: " + text);
    }
  }
  return {pos.front(), pos.back()};
}

}  // namespace pplus
