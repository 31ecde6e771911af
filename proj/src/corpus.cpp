#include "pplus/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "pplus/rng.hpp"

namespace pplus {

namespace {

constexpr double kBg[3] = {-0.7, -0.7, -0.7};

// 8-bit reference triples for the 11 color words.
constexpr int kColorU8[11][3] = {
    {0, 0, 0},       // black
    {0, 0, 255},     // blue
    {139, 69, 19},   // brown
    {128, 128, 128}, // gray
    {0, 160, 0},     // green
    {255, 140, 0},   // orange
    {255, 105, 180}, // pink
    {128, 0, 128},   // purple
    {255, 0, 0},     // red
    {255, 255, 255}, // white
    {255, 255, 0},   // yellow
};

double u8_to_unit(int v) { return v / 255.0 * 2.0 - 1.0; }

// Deterministic per-pixel hash for the noise texture, relative to the shape
// bounding box so the oracle can re-render it without knowing any seed.
double hash01(int64_t x, int64_t y) {
  uint64_t h = 0x9e3779b97f4a7c15ULL;
  h ^= static_cast<uint64_t>(x + 0x10001) * 0xff51afd7ed558ccdULL;
  h = (h ^ (h >> 33)) * 0xc4ceb9fe1a85ec53ULL;
  h ^= static_cast<uint64_t>(y + 0x20003) * 0x9e3779b97f4a7c15ULL;
  h = (h ^ (h >> 29)) * 0xff51afd7ed558ccdULL;
  h ^= h >> 32;
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

bool inside(ShapeKind s, double px, double py, double cx, double cy, double r) {
  const double dx = px - cx, dy = py - cy;
  switch (s) {
    case ShapeKind::Square:
      return std::abs(dx) <= r && std::abs(dy) <= r;
    case ShapeKind::Circle:
      return dx * dx + dy * dy <= r * r;
    case ShapeKind::Triangle: {
      if (dy < -r || dy > r) return false;
      const double half = (dy + r) / (2.0 * r) * r;  // apex up
      return std::abs(dx) <= half;
    }
    case ShapeKind::Cross: {
      const double arm = r / 3.0;
      return (std::abs(dx) <= arm && std::abs(dy) <= r) || (std::abs(dy) <= arm && std::abs(dx) <= r);
    }
    case ShapeKind::Ring: {
      const double d2 = dx * dx + dy * dy;
      return d2 <= r * r && d2 >= (0.55 * r) * (0.55 * r);
    }
    case ShapeKind::Diamond:
      return std::abs(dx) + std::abs(dy) <= r;
  }
  return false;
}

struct Palette {
  double c1[3];
  double c2[3];
};

Palette palette_of(int color) {
  Palette p;
  for (int c = 0; c < 3; ++c) {
    p.c1[c] = u8_to_unit(kColorU8[color][c]);
    p.c2[c] = 0.35 * p.c1[c] + 0.65 * kBg[c];  // darker companion tone
  }
  return p;
}

// Paints the given mask onto `img` with the requested texture; bx/by is the
// mask bounding-box origin all texture phases are anchored to.
void paint(std::vector<double>& img, const std::vector<uint8_t>& mask, int64_t size,
           TextureKind tex, const Palette& pal, int64_t bx, int64_t by, const double* bg) {
  for (int64_t y = 0; y < size; ++y) {
    for (int64_t x = 0; x < size; ++x) {
      double px[3];
      if (!mask[static_cast<size_t>(y * size + x)]) {
        px[0] = bg[0];
        px[1] = bg[1];
        px[2] = bg[2];
      } else {
        const int64_t rx = x - bx, ry = y - by;
        double f = 1.0;  // blend toward c1
        switch (tex) {
          case TextureKind::Solid:
            f = 1.0;
            break;
          case TextureKind::Stripes:
            f = ((ry / 4) % 2 == 0) ? 1.0 : 0.0;
            break;
          case TextureKind::Checker:
            f = (((rx / 4) + (ry / 4)) % 2 == 0) ? 1.0 : 0.0;
            break;
          case TextureKind::Noise:
            f = hash01(rx, ry);
            break;
          case TextureKind::Gradient: {
            // vertical ramp across the bounding box
            f = 1.0 - static_cast<double>(ry) / 31.0;
            f = std::min(1.0, std::max(0.0, f));
            break;
          }
        }
        for (int c = 0; c < 3; ++c) px[c] = pal.c2[c] + f * (pal.c1[c] - pal.c2[c]);
      }
      for (int c = 0; c < 3; ++c) {
        img[static_cast<size_t>((c * size + y) * size + x)] = px[c];
      }
    }
  }
}

std::vector<uint8_t> shape_mask(ShapeKind s, int64_t size, double cx, double cy, double r) {
  std::vector<uint8_t> mask(static_cast<size_t>(size * size), 0);
  for (int64_t y = 0; y < size; ++y) {
    for (int64_t x = 0; x < size; ++x) {
      mask[static_cast<size_t>(y * size + x)] =
          inside(s, static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5, cx, cy, r) ? 1 : 0;
    }
  }
  return mask;
}

bool mask_bbox(const std::vector<uint8_t>& mask, int64_t size, int64_t* bx, int64_t* by, int64_t* bw,
               int64_t* bh) {
  int64_t minx = size, miny = size, maxx = -1, maxy = -1;
  for (int64_t y = 0; y < size; ++y) {
    for (int64_t x = 0; x < size; ++x) {
      if (!mask[static_cast<size_t>(y * size + x)]) continue;
      minx = std::min(minx, x);
      maxx = std::max(maxx, x);
      miny = std::min(miny, y);
      maxy = std::max(maxy, y);
    }
  }
  if (maxx < 0) return false;
  *bx = minx;
  *by = miny;
  *bw = maxx - minx + 1;
  *bh = maxy - miny + 1;
  return true;
}

}  // namespace

const std::vector<std::string>& shape_names() {
  static const std::vector<std::string> v = {"square", "circle", "triangle", "cross", "ring", "diamond"};
  return v;
}

const std::vector<std::string>& color_names() {
  static const std::vector<std::string> v = {"black", "blue",   "brown", "gray",  "green", "orange",
                                             "pink",  "purple", "red",   "white", "yellow"};
  return v;
}

const std::vector<std::string>& texture_names() {
  static const std::vector<std::string> v = {"solid", "stripes", "checker", "noise", "gradient"};
  return v;
}

std::array<double, 3> color_rgb(int color) {
  if (color < 0 || color >= 11) throw std::invalid_argument("color index out of range");
  return {u8_to_unit(kColorU8[color][0]), u8_to_unit(kColorU8[color][1]), u8_to_unit(kColorU8[color][2])};
}

ShapeKind shape_from(const std::string& name) {
  const auto& v = shape_names();
  for (size_t i = 0; i < v.size(); ++i) {
    if (v[i] == name) return static_cast<ShapeKind>(i);
  }
  throw std::invalid_argument("unknown shape '" + name + "'");
}

TextureKind texture_from(const std::string& name) {
  const auto& v = texture_names();
  for (size_t i = 0; i < v.size(); ++i) {
    if (v[i] == name) return static_cast<TextureKind>(i);
  }
  throw std::invalid_argument("unknown texture '" + name + "'");
}

int color_from(const std::string& name) {
  const auto& v = color_names();
  for (size_t i = 0; i < v.size(); ++i) {
    if (v[i] == name) return static_cast<int>(i);
  }
  throw std::invalid_argument("unknown color '" + name + "'");
}

std::string caption_of(const SceneSpec& spec) {
  return color_names()[static_cast<size_t>(spec.color)] + " " +
         shape_names()[static_cast<size_t>(spec.shape)] + ", " +
         texture_names()[static_cast<size_t>(spec.texture)];
}

Tensor render(const SceneSpec& spec) {
  if (spec.size < 8) throw std::invalid_argument("render canvas too small");
  if (spec.radius < 2 || spec.cx - spec.radius < 0 || spec.cy - spec.radius < 0 ||
      spec.cx + spec.radius > spec.size || spec.cy + spec.radius > spec.size) {
    throw std::invalid_argument("shape does not fit the canvas");
  }
  const int64_t size = spec.size;
  std::vector<uint8_t> mask = shape_mask(spec.shape, size, static_cast<double>(spec.cx),
                                         static_cast<double>(spec.cy), static_cast<double>(spec.radius));
  int64_t bx = 0, by = 0, bw = 0, bh = 0;
  if (!mask_bbox(mask, size, &bx, &by, &bw, &bh)) {
    throw std::invalid_argument("shape rasterized to an empty mask");
  }
  std::vector<double> img(static_cast<size_t>(3 * size * size));
  paint(img, mask, size, spec.texture, palette_of(spec.color), bx, by, kBg);
  return Tensor::constant({3, size, size}, std::move(img));
}

AttributeScores attribute_oracle(const Tensor& img) {
  if (img.rank() != 3 || img.dim(0) != 3 || img.dim(1) != img.dim(2)) {
    throw std::invalid_argument("oracle expects a square (3,s,s) image");
  }
  const int64_t size = img.dim(1);
  auto px = [&](int64_t x, int64_t y, int c) { return img.at((c * size + y) * size + x); };

  // background estimate: per-channel median over the border ring
  double bg[3];
  {
    std::vector<double> border[3];
    for (int64_t i = 0; i < size; ++i) {
      for (int c = 0; c < 3; ++c) {
        border[c].push_back(px(i, 0, c));
        border[c].push_back(px(i, size - 1, c));
        border[c].push_back(px(0, i, c));
        border[c].push_back(px(size - 1, i, c));
      }
    }
    for (int c = 0; c < 3; ++c) {
      std::sort(border[c].begin(), border[c].end());
      bg[c] = border[c][border[c].size() / 2];
    }
  }

  auto dist2_to_bg = [&](int64_t x, int64_t y) {
    double s = 0;
    for (int c = 0; c < 3; ++c) {
      const double d = px(x, y, c) - bg[c];
      s += d * d;
    }
    return s;
  };

  // validity: clean border + a shape that covers a sane fraction of canvas
  double border_hits = 0, border_total = 0;
  for (int64_t i = 0; i < size; ++i) {
    for (const auto& [x, y] : {std::pair<int64_t, int64_t>{i, 0}, {i, size - 1}, {0, i}, {size - 1, i}}) {
      border_total += 1.0;
      if (dist2_to_bg(x, y) < 0.12 * 0.12 * 3) border_hits += 1.0;
    }
  }
  double validity = border_hits / border_total;

  // clean border -> trust a tight threshold (dark texture tones stay in the
  // mask); noisy generations need a looser one
  const double mask_thresh = validity > 0.9 ? 0.08 : 0.35;
  std::vector<uint8_t> mask(static_cast<size_t>(size * size), 0);
  int64_t mask_count = 0;
  for (int64_t y = 0; y < size; ++y) {
    for (int64_t x = 0; x < size; ++x) {
      if (dist2_to_bg(x, y) > mask_thresh * mask_thresh) {
        mask[static_cast<size_t>(y * size + x)] = 1;
        ++mask_count;
      }
    }
  }
  const double frac = static_cast<double>(mask_count) / static_cast<double>(size * size);
  if (frac < 0.02 || frac > 0.72) validity *= 0.3;

  AttributeScores out;
  out.validity = validity;
  const size_t ns = shape_names().size(), nc = color_names().size(), nt = texture_names().size();

  int64_t bx = 0, by = 0, bw = 0, bh = 0;
  if (!mask_bbox(mask, size, &bx, &by, &bw, &bh)) {
    // no structure at all: uniform low confidence everywhere
    out.shape_scores.assign(ns, 1.0 / static_cast<double>(ns) * validity);
    out.color_scores.assign(nc, 1.0 / static_cast<double>(nc) * validity);
    out.texture_scores.assign(nt, 1.0 / static_cast<double>(nt) * validity);
    out.shape = shape_names()[0];
    out.color = color_names()[0];
    out.texture = texture_names()[0];
    out.shape_conf = out.shape_scores[0];
    out.color_conf = out.color_scores[0];
    out.texture_conf = out.texture_scores[0];
    return out;
  }

  // stage 1: best geometry per shape by mask IoU over a small search window
  struct Geom {
    double cx, cy, r, iou;
  };
  std::vector<Geom> best_geom(ns, Geom{0, 0, 0, -1});
  const double gcx = (static_cast<double>(bx) + static_cast<double>(bx + bw)) / 2.0;
  const double gcy = (static_cast<double>(by) + static_cast<double>(by + bh)) / 2.0;
  const double base_r = static_cast<double>(std::max(bw, bh)) / 2.0;
  for (size_t s = 0; s < ns; ++s) {
    for (double dr = -1.0; dr <= 1.0; dr += 0.5) {
      for (double dx = -1.0; dx <= 1.0; dx += 0.5) {
        for (double dy = -1.0; dy <= 1.0; dy += 0.5) {
          const double r = base_r + dr;
          if (r < 1.5) continue;
          std::vector<uint8_t> cand =
              shape_mask(static_cast<ShapeKind>(s), size, gcx + dx, gcy + dy, r);
          int64_t inter = 0, uni = 0;
          for (size_t i = 0; i < cand.size(); ++i) {
            const bool a = mask[i] != 0, b = cand[i] != 0;
            inter += (a && b) ? 1 : 0;
            uni += (a || b) ? 1 : 0;
          }
          const double iou = uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
          if (iou > best_geom[s].iou) best_geom[s] = Geom{gcx + dx, gcy + dy, r, iou};
        }
      }
    }
  }

  // stage 2: full re-render distance for every (shape,color,texture)
  std::vector<double> shape_best(ns, 1e30), color_best(nc, 1e30), texture_best(nt, 1e30);
  std::vector<double> canvas(static_cast<size_t>(3 * size * size));
  for (size_t s = 0; s < ns; ++s) {
    const Geom& g = best_geom[s];
    if (g.iou < 0) continue;
    std::vector<uint8_t> cand = shape_mask(static_cast<ShapeKind>(s), size, g.cx, g.cy, g.r);
    int64_t cbx = 0, cby = 0, cbw = 0, cbh = 0;
    if (!mask_bbox(cand, size, &cbx, &cby, &cbw, &cbh)) continue;
    for (size_t c = 0; c < nc; ++c) {
      const Palette pal = palette_of(static_cast<int>(c));
      for (size_t t = 0; t < nt; ++t) {
        paint(canvas, cand, size, static_cast<TextureKind>(t), pal, cbx, cby, bg);
        double sum = 0;
        for (size_t i = 0; i < canvas.size(); ++i) {
          const double d = canvas[i] - img.at(static_cast<int64_t>(i));
          sum += d * d;
        }
        const double rms = std::sqrt(sum / static_cast<double>(canvas.size()));
        shape_best[s] = std::min(shape_best[s], rms);
        color_best[c] = std::min(color_best[c], rms);
        texture_best[t] = std::min(texture_best[t], rms);
      }
    }
  }

  auto to_conf = [&validity](const std::vector<double>& dists, std::vector<double>* scores,
                             std::string* label, double* conf, const std::vector<std::string>& names) {
    const size_t k = dists.size();
    scores->assign(k, 0.0);
    size_t arg = 0;
    for (size_t i = 1; i < k; ++i) {
      if (dists[i] < dists[arg]) arg = i;
    }
    if (dists[arg] < 1e-9) {
      (*scores)[arg] = validity;  // exact reproduction
    } else {
      double sum = 0;
      for (size_t i = 0; i < k; ++i) {
        const double w = std::exp(-(dists[i] * dists[i]) / (2.0 * 0.12 * 0.12));
        (*scores)[i] = w;
        sum += w;
      }
      for (double& v : *scores) v = sum > 0 ? v / sum * validity : validity / static_cast<double>(k);
    }
    *label = names[arg];
    *conf = (*scores)[arg];
  };

  to_conf(shape_best, &out.shape_scores, &out.shape, &out.shape_conf, shape_names());
  to_conf(color_best, &out.color_scores, &out.color, &out.color_conf, color_names());
  to_conf(texture_best, &out.texture_scores, &out.texture, &out.texture_conf, texture_names());
  return out;
}

ConceptRender make_concept(const ConceptFamily& fam, int count, uint64_t seed, int64_t size) {
  if (count < 1 || count > 6) throw std::invalid_argument("concept size must lie in [1, 6]");
  RandomSource rng(mix_seed(seed, 0xc07c));
  ConceptRender out;
  for (int i = 0; i < count; ++i) {
    SceneSpec spec;
    spec.shape = fam.shape;
    spec.color = fam.color;
    spec.texture = fam.texture;
    spec.size = size;
    const int64_t rmin = std::max<int64_t>(3, size / 8);
    const int64_t rmax = std::max<int64_t>(rmin + 1, size * 5 / 16);
    spec.radius = rmin + rng.uniform_int(rmax - rmin + 1);
    spec.cx = spec.radius + 1 + rng.uniform_int(size - 2 * spec.radius - 1);
    spec.cy = spec.radius + 1 + rng.uniform_int(size - 2 * spec.radius - 1);
    spec.seed = mix_seed(seed, static_cast<uint64_t>(i));
    out.specs.push_back(spec);
    out.images.push_back(render(spec));
  }
  out.caption = caption_of(out.specs[0]);
  out.shape_word = shape_names()[static_cast<size_t>(fam.shape)];
  return out;
}

std::vector<SceneSpec> corpus_specs(int64_t count, int64_t size, uint64_t seed,
                                    const std::vector<ConceptFamily>& excluded) {
  auto is_excluded = [&excluded](ShapeKind s, int c) {
    for (const auto& e : excluded) {
      if (e.shape == s && e.color == c) return true;  // the whole pair is held out
    }
    return false;
  };
  std::vector<std::pair<ShapeKind, int>> pairs;
  for (size_t s = 0; s < shape_names().size(); ++s) {
    for (size_t c = 0; c < color_names().size(); ++c) {
      if (!is_excluded(static_cast<ShapeKind>(s), static_cast<int>(c))) {
        pairs.emplace_back(static_cast<ShapeKind>(s), static_cast<int>(c));
      }
    }
  }
  std::vector<SceneSpec> out;
  out.reserve(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) {
    RandomSource rng(mix_seed(seed, 0x0c0f, static_cast<uint64_t>(i)));
    const auto& [s, c] = pairs[static_cast<size_t>(i) % pairs.size()];
    SceneSpec spec;
    spec.shape = s;
    spec.color = c;
    spec.texture = static_cast<TextureKind>(rng.uniform_int(static_cast<int64_t>(texture_names().size())));
    spec.size = size;
    const int64_t rmin = std::max<int64_t>(3, size / 8);
    const int64_t rmax = std::max<int64_t>(rmin + 1, size * 5 / 16);
    spec.radius = rmin + rng.uniform_int(rmax - rmin + 1);
    spec.cx = spec.radius + 1 + rng.uniform_int(size - 2 * spec.radius - 1);
    spec.cy = spec.radius + 1 + rng.uniform_int(size - 2 * spec.radius - 1);
    spec.seed = mix_seed(seed, 0xc0a1, static_cast<uint64_t>(i));
    out.push_back(spec);
  }
  return out;
}

}  // namespace pplus
