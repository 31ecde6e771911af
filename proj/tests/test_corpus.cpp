#include <map>
#include <set>

#include "doctest.h"
#include "pplus/corpus.hpp"
#include "pplus/png_io.hpp"
#include "pplus/rng.hpp"

using namespace pplus;

TEST_CASE("solid render paints the reference triple inside the shape") {
  SceneSpec spec;
  spec.shape = ShapeKind::Square;
  spec.color = color_from("red");
  spec.texture = TextureKind::Solid;
  spec.cx = 16;
  spec.cy = 16;
  spec.radius = 8;
  Tensor img = render(spec);
  const auto ref = color_rgb(spec.color);
  int64_t interior = 0;
  for (int64_t y = 0; y < 32; ++y) {
    for (int64_t x = 0; x < 32; ++x) {
      const bool in = std::abs(x + 0.5 - 16) <= 8 && std::abs(y + 0.5 - 16) <= 8;
      if (!in) continue;
      ++interior;
      for (int c = 0; c < 3; ++c) CHECK(img.at((c * 32 + y) * 32 + x) == ref[static_cast<size_t>(c)]);
    }
  }
  CHECK(interior == 256);
  CHECK(caption_of(spec) == "red square, solid");
}

TEST_CASE("render is deterministic") {
  SceneSpec spec;
  spec.shape = ShapeKind::Ring;
  spec.color = color_from("orange");
  spec.texture = TextureKind::Noise;
  spec.cx = 14;
  spec.cy = 17;
  spec.radius = 9;
  CHECK(render(spec).same_bits(render(spec)));
}

TEST_CASE("checker texture splits interior pixels evenly") {
  SceneSpec spec;
  spec.shape = ShapeKind::Square;
  spec.color = color_from("green");
  spec.texture = TextureKind::Checker;
  spec.cx = 16;
  spec.cy = 16;
  spec.radius = 8;
  Tensor img = render(spec);
  // count interior pixels per texture tone directly by color
  const auto c1 = color_rgb(spec.color);
  int64_t n1 = 0, n2 = 0;
  for (int64_t y = 0; y < 32; ++y) {
    for (int64_t x = 0; x < 32; ++x) {
      double d_bg = 0;
      for (int c = 0; c < 3; ++c) {
        const double d = img.at((c * 32 + y) * 32 + x) - (-0.7);
        d_bg += d * d;
      }
      if (d_bg < 1e-12) continue;  // background
      double d1 = 0;
      for (int c = 0; c < 3; ++c) {
        const double d = img.at((c * 32 + y) * 32 + x) - c1[static_cast<size_t>(c)];
        d1 += d * d;
      }
      (d1 < 1e-12 ? n1 : n2) += 1;
    }
  }
  CHECK(n1 + n2 == 256);
  CHECK(std::abs(n1 - n2) <= 16);  // within one row of pixels
}

TEST_CASE("oracle inverts the renderer on every attribute combo") {
  RandomSource rng(21);
  for (size_t s = 0; s < shape_names().size(); ++s) {
    for (size_t t = 0; t < texture_names().size(); ++t) {
      const int color = static_cast<int>(rng.uniform_int(11));
      SceneSpec spec;
      spec.shape = static_cast<ShapeKind>(s);
      spec.texture = static_cast<TextureKind>(t);
      spec.color = color;
      spec.radius = 5 + rng.uniform_int(5);
      spec.cx = spec.radius + 1 + rng.uniform_int(32 - 2 * spec.radius - 1);
      spec.cy = spec.radius + 1 + rng.uniform_int(32 - 2 * spec.radius - 1);
      AttributeScores res = attribute_oracle(render(spec));
      INFO("spec ", caption_of(spec), " cx=", spec.cx, " cy=", spec.cy, " r=", spec.radius);
      CHECK(res.shape == shape_names()[s]);
      CHECK(res.color == color_names()[static_cast<size_t>(color)]);
      CHECK(res.texture == texture_names()[t]);
      if (spec.texture == TextureKind::Solid) {
        CHECK(res.shape_conf == 1.0);
        CHECK(res.color_conf == 1.0);
        CHECK(res.texture_conf == 1.0);
      }
    }
  }
}

TEST_CASE("blended colors leave both source colors uncertain") {
  SceneSpec a;
  a.shape = ShapeKind::Square;
  a.color = color_from("red");
  a.texture = TextureKind::Solid;
  a.cx = a.cy = 16;
  a.radius = 8;
  SceneSpec b = a;
  b.color = color_from("blue");
  Tensor ia = render(a), ib = render(b);
  std::vector<double> mixed(static_cast<size_t>(ia.numel()));
  for (int64_t i = 0; i < ia.numel(); ++i) mixed[static_cast<size_t>(i)] = 0.5 * (ia.at(i) + ib.at(i));
  AttributeScores res = attribute_oracle(Tensor::constant(ia.shape(), std::move(mixed)));
  const auto& names = color_names();
  for (size_t i = 0; i < names.size(); ++i) {
    if (names[i] == "red" || names[i] == "blue") {
      CHECK(res.color_scores[i] <= 0.6);
    }
  }
}

TEST_CASE("structureless noise images get low confidence everywhere") {
  RandomSource rng(77);
  std::vector<double> vals(3 * 32 * 32);
  for (auto& v : vals) v = rng.uniform(-1.0, 1.0);
  AttributeScores res = attribute_oracle(Tensor::constant({3, 32, 32}, std::move(vals)));
  for (double v : res.shape_scores) CHECK(v < 0.5);
  for (double v : res.color_scores) CHECK(v < 0.5);
  for (double v : res.texture_scores) CHECK(v < 0.5);
}

TEST_CASE("make_concept sizes and reproducibility") {
  ConceptFamily fam{ShapeKind::Cross, color_from("yellow"), TextureKind::Solid};
  ConceptRender one = make_concept(fam, 1, 5);
  CHECK(one.images.size() == 1);

  ConceptRender a = make_concept(fam, 5, 123);
  ConceptRender b = make_concept(fam, 5, 123);
  REQUIRE(a.images.size() == 5);
  for (size_t i = 0; i < 5; ++i) CHECK(a.images[i].same_bits(b.images[i]));
  CHECK(a.caption == "yellow cross, solid");
  CHECK(a.shape_word == "cross");
  CHECK_THROWS_AS(make_concept(fam, 0, 1), std::invalid_argument);
  CHECK_THROWS_AS(make_concept(fam, 7, 1), std::invalid_argument);
}

TEST_CASE("corpus excludes held-out pairs and covers the rest") {
  const std::vector<ConceptFamily> held = {
      {ShapeKind::Cross, color_from("yellow"), TextureKind::Solid},
      {ShapeKind::Triangle, color_from("pink"), TextureKind::Solid},
      {ShapeKind::Ring, color_from("blue"), TextureKind::Solid},
  };
  const auto specs = corpus_specs(2000, 32, 9, held);
  REQUIRE(specs.size() == 2000);
  std::map<std::pair<int, int>, int64_t> counts;
  for (const auto& s : specs) counts[{static_cast<int>(s.shape), s.color}] += 1;
  for (const auto& h : held) {
    CHECK(counts.count({static_cast<int>(h.shape), h.color}) == 0);
  }
  // every included (shape,color) appears at least 20 times
  CHECK(counts.size() == 6 * 11 - 3);
  for (const auto& [key, n] : counts) CHECK(n >= 20);
}

TEST_CASE("png round trip preserves quantized pixels") {
  SceneSpec spec;
  spec.shape = ShapeKind::Diamond;
  spec.color = color_from("purple");
  spec.texture = TextureKind::Gradient;
  spec.cx = spec.cy = 16;
  spec.radius = 10;
  Tensor img = render(spec);
  const std::string tmp = "/tmp/pplus_test_roundtrip.png";
  write_png(tmp, img);
  Tensor back = read_png(tmp);
  REQUIRE(back.shape() == img.shape());
  for (int64_t i = 0; i < img.numel(); ++i) {
    CHECK(std::abs(back.at(i) - img.at(i)) <= 1.01 / 255.0 * 2.0);
  }
  // identical pixels encode to identical bytes
  CHECK(encode_png(img) == encode_png(render(spec)));
}
