#include <stdexcept>

#include "doctest.h"
#include "pplus/layers.hpp"
#include "pplus/model.hpp"
#include "pplus/ops.hpp"
#include "pplus/prompt.hpp"
#include "pplus/vocab.hpp"
#include "testutil.hpp"

using namespace pplus;
using pplus::test::data_path;
using pplus::test::micro_model;
using pplus::test::read_lines;
using pplus::test::toy_vocab;

TEST_CASE("shipped vocabulary has 256 ids") {
  Vocabulary v = toy_vocab();
  CHECK(v.size() == 256);
  CHECK(v.natural_size() == 256);
  CHECK(v.id_of("<bos>") == Vocabulary::kBos);
  CHECK(v.id_of("<token>") == Vocabulary::kPlaceholder);
  CHECK(v.contains("cat"));
  CHECK(v.contains(","));
}

TEST_CASE("tokenize frames prompts with BOS/EOS and pads") {
  Vocabulary v = toy_vocab();
  PromptTemplate t = v.tokenize("a cat", 12);
  CHECK(t.ids[0] == Vocabulary::kBos);
  CHECK(t.ids[1] == v.id_of("a"));
  CHECK(t.ids[2] == v.id_of("cat"));
  CHECK(t.ids[3] == Vocabulary::kEos);
  for (size_t i = 4; i < 12; ++i) CHECK(t.ids[i] == Vocabulary::kPad);
  CHECK(t.content_len == 4);
  CHECK(!t.has_placeholder());

  PromptTemplate empty = v.tokenize("", 12);
  CHECK(empty.ids[0] == Vocabulary::kBos);
  CHECK(empty.ids[1] == Vocabulary::kEos);
  CHECK(empty.ids[2] == Vocabulary::kPad);
  CHECK(empty.content_len == 2);

  PromptTemplate ph = v.tokenize("a <token>", 12);
  CHECK(ph.ids[2] == Vocabulary::kPlaceholder);
  CHECK(ph.placeholder_pos == 2);
}

TEST_CASE("tokenize rejects out-of-vocabulary words naming them") {
  Vocabulary v = toy_vocab();
  try {
    v.tokenize("a zebra", 12);
    FAIL("expected throw");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("zebra") != std::string::npos);
  }
  CHECK_THROWS_AS(v.tokenize("<token> of <token>", 12), std::invalid_argument);
}

TEST_CASE("dynamic placeholder ids never collide with natural ids") {
  Vocabulary v = toy_vocab();
  const int32_t id = v.add_placeholder("<t1>");
  CHECK(id >= v.natural_size());
  CHECK(v.is_placeholder(id));
  CHECK(v.size() == 257);
  PromptTemplate t = v.tokenize("a <t1>", 12);
  CHECK(t.placeholder_pos == 2);
  CHECK_THROWS_AS(v.add_placeholder("cat"), std::invalid_argument);
}

TEST_CASE("layer id round-trips on all 16 reference names") {
  const auto names = read_lines(data_path("layer_names.txt"));
  REQUIRE(names.size() == 16);
  LayerRegistry reg = LayerRegistry::reference16();
  for (size_t i = 0; i < names.size(); ++i) {
    LayerId id = LayerId::parse(names[i]);
    CHECK(id.str() == names[i]);
    CHECK(id == reg.at(static_cast<int64_t>(i)));
  }
  CHECK(LayerId::parse("(16,'down',1)").str() == "(16, 'down', 1)");
  CHECK(LayerId::parse("( 8 , 'down' , 0 )") == LayerId{8, LayerDir::Down, 0});
  CHECK_THROWS_AS(LayerId::parse("(15, 'down', 0)"), std::invalid_argument);
  CHECK_THROWS_AS(LayerId::parse("(16, 'sideways', 0)"), std::invalid_argument);
}

TEST_CASE("layer order follows u-net traversal") {
  LayerRegistry reg = LayerRegistry::reference16();
  for (int64_t i = 0; i + 1 < reg.size(); ++i) {
    CHECK(reg.at(i) < reg.at(i + 1));
  }
  // mid sits between the paths
  CHECK(LayerId{8, LayerDir::Down, 0} < LayerId{16, LayerDir::Mid, 0});
  CHECK(LayerId{16, LayerDir::Mid, 0} < LayerId{16, LayerDir::Up, 0});
}

TEST_CASE("subset sequence matches the reference enumeration") {
  LayerRegistry reg = LayerRegistry::reference16();
  const auto subsets = subset_sequence(reg);
  REQUIRE(subsets.size() == 8);

  const auto golden = read_lines(data_path("layer_subsets.txt"));
  REQUIRE(golden.size() == 8);
  for (size_t i = 0; i < 8; ++i) {
    const std::string line = std::to_string(i) + ": " + subsets[i].range_str(reg);
    CHECK(line == golden[i]);
  }

  CHECK(subsets[0].empty());
  CHECK(subsets[1].size() == 1);
  CHECK(subsets[1].layers[0].str() == "(8, 'down', 0)");
  CHECK(subsets[7].size() == 16);

  // monotone inclusion; every nonempty subset is a contiguous registry range
  for (size_t i = 0; i + 1 < 8; ++i) {
    for (const LayerId& l : subsets[i].layers) CHECK(subsets[i + 1].contains(l));
  }
  for (size_t i = 1; i < 8; ++i) {
    const int64_t lo = reg.position(subsets[i].layers.front());
    for (size_t j = 0; j < subsets[i].layers.size(); ++j) {
      CHECK(reg.position(subsets[i].layers[j]) == lo + static_cast<int64_t>(j));
    }
  }

  LayerRegistry micro = UNetConfig::micro5().build_registry();
  CHECK_THROWS_AS(subset_sequence(micro), std::invalid_argument);
}

TEST_CASE("layer range parsing") {
  LayerRegistry reg = LayerRegistry::reference16();
  auto [lo1, hi1] = parse_layer_range(reg, "(16, 'down', 1) - (16, 'up', 0)");
  CHECK(lo1 == 6);
  CHECK(hi1 == 8);
  CHECK(hi1 - lo1 + 1 == 3);

  auto [lo2, hi2] = parse_layer_range(reg, "(8, 'down', 0), (16, 'up', 0)");
  CHECK(lo2 == 7);
  CHECK(hi2 == 8);

  CHECK_THROWS_AS(parse_layer_range(reg, "(16, 'up', 0) - (16, 'down', 1)"), std::invalid_argument);
  CHECK_THROWS_AS(parse_layer_range(reg, "(8, 'down', 0), (16, 'up', 1)"), std::invalid_argument);
  CHECK_THROWS_AS(parse_layer_range(reg, ""), std::invalid_argument);
}

TEST_CASE("mix_extended") {
  Model m = micro_model();
  ExtendedPrompt p = m.broadcast_prompt("red square");
  ExtendedPrompt q = m.broadcast_prompt("blue circle");
  const int64_t n = m.registry.size();

  SUBCASE("mix(p,p,spec) is p layer-wise") {
    ExtendedPrompt r = mix_extended(p, p, MixSpec{1, n});
    for (int64_t i = 0; i < n; ++i) {
      CHECK(r.specs[static_cast<size_t>(i)].tmpl == p.specs[static_cast<size_t>(i)].tmpl);
    }
  }
  SUBCASE("k=1, K=n takes layer 1 from p and the rest from q") {
    ExtendedPrompt r = mix_extended(p, q, MixSpec{1, n});
    CHECK(r.specs[0].tmpl == p.specs[0].tmpl);
    for (int64_t i = 1; i < n; ++i) CHECK(r.specs[static_cast<size_t>(i)].tmpl == q.specs[static_cast<size_t>(i)].tmpl);
  }
  SUBCASE("every output layer comes from p or q") {
    ExtendedPrompt r = mix_extended(p, q, MixSpec{2, 4});
    for (int64_t i = 0; i < n; ++i) {
      const bool from_p = r.specs[static_cast<size_t>(i)].tmpl == p.specs[static_cast<size_t>(i)].tmpl;
      const bool from_q = r.specs[static_cast<size_t>(i)].tmpl == q.specs[static_cast<size_t>(i)].tmpl;
      CHECK((from_p || from_q));
    }
  }
  SUBCASE("bad separators and registry mismatch are rejected") {
    CHECK_THROWS_AS(mix_extended(p, q, MixSpec{0, n}), std::invalid_argument);
    CHECK_THROWS_AS(mix_extended(p, q, MixSpec{3, 3}), std::invalid_argument);
    CHECK_THROWS_AS(mix_extended(p, q, MixSpec{1, n + 1}), std::invalid_argument);
    Model ref = pplus::test::reference_model();
    ExtendedPrompt pr = ref.broadcast_prompt("red square");
    CHECK_THROWS_AS(mix_extended(p, pr, MixSpec{1, 2}), std::invalid_argument);
  }
}

TEST_CASE("teaser mix range covers exactly the three inner layers") {
  Model ref = pplus::test::reference_model();
  ExtendedPrompt style = ref.broadcast_prompt("blue circle");
  ExtendedPrompt shape = ref.broadcast_prompt("red square");
  auto [lo, hi] = parse_layer_range(ref.registry, "(16, 'down', 1) - (16, 'up', 0)");
  ExtendedPrompt mixed = mix_extended(style, shape, MixSpec{lo - 1, hi});
  int64_t from_shape = 0;
  for (int64_t i = 0; i < ref.registry.size(); ++i) {
    if (mixed.specs[static_cast<size_t>(i)].tmpl == shape.specs[static_cast<size_t>(i)].tmpl &&
        !(mixed.specs[static_cast<size_t>(i)].tmpl == style.specs[static_cast<size_t>(i)].tmpl)) {
      ++from_shape;
      CHECK(lo - 1 < i + 1);
      CHECK(i + 1 <= hi);
    }
  }
  CHECK(from_shape == 3);
}

TEST_CASE("encode determinism and substitution identity") {
  Model m = micro_model();
  ParamView pv = m.view();

  PromptTemplate ph = m.tokenize("a <token>");
  Tensor cat_row;
  {
    const auto& table = *m.params.at("lookup.table").value;
    const int32_t id = m.vocab.id_of("cat");
    std::vector<double> row(table.begin() + id * m.cfg.enc.d, table.begin() + (id + 1) * m.cfg.enc.d);
    cat_row = Tensor::constant({m.cfg.enc.d}, row);
  }

  Tensor c1 = m.encode(pv, ph, &cat_row);
  Tensor c2 = m.encode(pv, ph, &cat_row);
  CHECK(c1.same_bits(c2));

  Tensor plain = m.encode(pv, m.tokenize("a cat"), nullptr);
  CHECK(c1.same_bits(plain));

  CHECK_THROWS_AS(m.encode(pv, m.tokenize("a cat"), &cat_row), std::invalid_argument);
  CHECK_THROWS_AS(m.encode(pv, ph, nullptr), std::invalid_argument);
}

TEST_CASE("encode gradient w.r.t. override matches finite differences") {
  Model m = micro_model();
  PromptTemplate ph = m.tokenize("a photo of <token>");
  Tensor w = Tensor::constant({m.cfg.enc.seq_len, m.cfg.enc.d},
                              RandomSource(3).normal_vec(m.cfg.enc.seq_len * m.cfg.enc.d));
  auto f = [&](const Tensor& x, Graph& g) {
    ParamView pv(m.params, &g, false);
    Tensor ctx = m.encode(pv, ph, &x);
    return sum_all(mul(ctx, w));
  };
  Tensor x0 = Tensor::constant({m.cfg.enc.d}, RandomSource(4).normal_vec(m.cfg.enc.d));
  const double err = finite_diff_check(f, x0);
  CHECK(err < 1e-6);
}

TEST_CASE("route broadcast and locality") {
  Model m = micro_model();
  ParamView pv = m.view();
  ExtendedPrompt p = m.broadcast_prompt("red square");

  SUBCASE("broadcast routes identical contexts to any two layers") {
    Tensor a = m.route(pv, p, m.registry.at(0));
    Tensor b = m.route(pv, p, m.registry.at(3));
    CHECK(a.same_bits(b));
  }
  SUBCASE("changing one layer leaves other routes unchanged") {
    ExtendedPrompt q = p;
    q.specs[2] = m.spec_of("blue circle");  // (8,'down',0) in the micro registry
    Tensor base = m.route(pv, p, m.registry.at(4));
    Tensor same = m.route(pv, q, m.registry.at(4));
    CHECK(base.same_bits(same));
    Tensor changed = m.route(pv, q, m.registry.at(2));
    CHECK(!changed.same_bits(base));
  }
  SUBCASE("unknown layer is rejected") {
    CHECK_THROWS_AS(m.route(pv, p, LayerId{128, LayerDir::Down, 0}), std::invalid_argument);
  }
}

TEST_CASE("per-layer overrides give 16 distinct contexts on the reference registry") {
  Model ref = pplus::test::reference_model();
  ParamView pv = ref.view();
  PromptTemplate ph = ref.tokenize("a photo of <token>");
  RandomSource rng(9);
  std::vector<LayerSpec> specs;
  for (int64_t i = 0; i < ref.registry.size(); ++i) {
    specs.push_back(LayerSpec{ph, Tensor::constant({ref.cfg.enc.d}, rng.normal_vec(ref.cfg.enc.d))});
  }
  ExtendedPrompt p = ExtendedPrompt::per_layer(ref.registry, specs);
  LayerContexts ctx = ref.encode_extended(pv, p);
  REQUIRE(ctx.ctx.size() == 16);
  for (size_t i = 0; i < 16; ++i) {
    for (size_t j = i + 1; j < 16; ++j) {
      CHECK(!ctx.ctx[i].same_bits(ctx.ctx[j]));
    }
  }
}
