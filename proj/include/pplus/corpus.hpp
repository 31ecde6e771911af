#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pplus/tensor.hpp"

namespace pplus {

enum class ShapeKind { Square, Circle, Triangle, Cross, Ring, Diamond };
enum class TextureKind { Solid, Stripes, Checker, Noise, Gradient };

const std::vector<std::string>& shape_names();
const std::vector<std::string>& color_names();    // the 11 reference colors
const std::vector<std::string>& texture_names();
std::array<double, 3> color_rgb(int color);       // in [-1, 1]
ShapeKind shape_from(const std::string& name);
TextureKind texture_from(const std::string& name);
int color_from(const std::string& name);

// A fully procedural scene; rendering is a pure function of these fields.
// `seed` records how the jitter was drawn but does not influence pixels.
struct SceneSpec {
  ShapeKind shape = ShapeKind::Square;
  int color = 0;
  TextureKind texture = TextureKind::Solid;
  int64_t cx = 16, cy = 16, radius = 8;  // integer center/half-extent in pixels
  int64_t size = 32;
  uint64_t seed = 0;
};

std::string caption_of(const SceneSpec& spec);  // "red square, checker"
Tensor render(const SceneSpec& spec);

struct AttributeScores {
  std::string shape, color, texture;
  double shape_conf = 0, color_conf = 0, texture_conf = 0;
  std::vector<double> shape_scores, color_scores, texture_scores;  // per-label confidence
  double validity = 0;  // 1 on clean renders, ~0 on structureless images
};

// Template-matching classifier built from the renderer itself: it estimates
// the background and shape geometry, re-renders every (shape,color,texture)
// candidate, and scores each attribute by match distance. Exact labels with
// confidence 1.0 on noiseless renders.
AttributeScores attribute_oracle(const Tensor& img);

struct ConceptFamily {
  ShapeKind shape = ShapeKind::Square;
  int color = 0;
  TextureKind texture = TextureKind::Solid;
};

struct ConceptRender {
  std::vector<SceneSpec> specs;
  std::vector<Tensor> images;
  std::string caption;    // shared attribute caption
  std::string shape_word;
};

// 1-6 renders of one subject with jittered position/scale.
ConceptRender make_concept(const ConceptFamily& fam, int count, uint64_t seed, int64_t size = 32);

// Deterministic corpus: round-robin over every (shape,color,texture) combo
// not excluded, with jittered geometry, so each pair gets even coverage.
std::vector<SceneSpec> corpus_specs(int64_t count, int64_t size, uint64_t seed,
                                    const std::vector<ConceptFamily>& excluded);

}  // namespace pplus
