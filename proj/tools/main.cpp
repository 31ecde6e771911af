// pplus: command-line front end for the per-layer prompt conditioning lab.
//
// Exit codes:
//   0 success
//   2 usage error (unknown flag / bad arguments)
//   3 invalid layer range or mix separators
//   4 missing or invalid input file (checkpoint, concept, corpus)
//   5 numeric failure (non-finite loss or sample)
//   6 invalid configuration file
//   1 any other error

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "pplus/analysis.hpp"
#include "pplus/corpus.hpp"
#include "pplus/density.hpp"
#include "pplus/fsutil.hpp"
#include "pplus/invert.hpp"
#include "pplus/model.hpp"
#include "pplus/png_io.hpp"
#include "pplus/pretrain.hpp"
#include "pplus/sampler.hpp"
#include "pplus/selftest.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pplus;

namespace {

struct CliError : std::runtime_error {
  int code;
  std::string category;
  CliError(int code, std::string category, const std::string& msg)
      : std::runtime_error(msg), code(code), category(std::move(category)) {}
};

[[noreturn]] void fail(int code, const std::string& category, const std::string& msg) {
  throw CliError(code, category, msg);
}

// flags > config file > defaults
struct Resolver {
  json file;    // loaded --config contents (may be null)
  json echo;    // resolved values, written back as the run's config echo

  template <typename T>
  T pick(const CLI::Option* opt, const T& flag_value, const char* key, const T& def) {
    T v = def;
    if (file.is_object() && file.contains(key)) v = file.at(key).get<T>();
    if (opt != nullptr && opt->count() > 0) v = flag_value;
    echo[key] = v;
    return v;
  }
};

json load_config_file(const std::string& path, const std::string& command) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const std::exception& e) {
    fail(6, "config", "cannot parse config file " + path + ": " + e.what());
  }
  if (j.contains("command") && j.at("command").get<std::string>() != command) {
    fail(6, "config", "config file is for command '" + j.at("command").get<std::string>() +
                          "', not '" + command + "'");
  }
  return j;
}

uint64_t env_seed() {
  const char* v = std::getenv("PPLUS_SEED");
  if (v == nullptr) return 0;
  return static_cast<uint64_t>(std::strtoull(v, nullptr, 10));
}

void write_echo(const std::string& out_dir, const std::string& command, json echo) {
  echo["command"] = command;
  echo["schema_version"] = 1;
  ensure_dir(out_dir);
  atomic_write(out_dir + "/config.json", echo.dump(2) + "\n");
}

Model load_checkpoint(const std::string& path) {
  if (!fs::exists(path)) fail(4, "missing-file", "checkpoint not found: " + path);
  try {
    return Model::load(path);
  } catch (const std::exception& e) {
    fail(4, "bad-file", std::string("cannot load checkpoint: ") + e.what());
  }
}

InvertedConcept load_concept(const std::string& path) {
  if (!fs::exists(path)) fail(4, "missing-file", "concept file not found: " + path);
  try {
    return InvertedConcept::load(path);
  } catch (const std::exception& e) {
    fail(4, "bad-file", std::string("cannot load concept: ") + e.what());
  }
}

std::vector<std::string> read_lines_file(const std::string& path) {
  if (!fs::exists(path)) fail(4, "missing-file", "data file not found: " + path);
  std::ifstream in(path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

std::string img_name(int64_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "img_%05lld.png", static_cast<long long>(i));
  return buf;
}

// ---------------------------------------------------------------------------
// corpus

struct CorpusArgs {
  std::string out, config;
  int64_t count = 2000;
  int64_t size = 32;
  uint64_t seed = 0;
  std::string exclude = "yellow cross; pink triangle; blue ring";
  int64_t concept_count = 5;
};

std::vector<ConceptFamily> parse_exclusions(const std::string& text) {
  std::vector<ConceptFamily> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ';')) {
    const auto words = split_prompt_words(item);
    if (words.empty()) continue;
    if (words.size() != 2) fail(2, "usage", "exclusion must be 'color shape': '" + item + "'");
    out.push_back(ConceptFamily{shape_from(words[1]), color_from(words[0]), TextureKind::Solid});
  }
  return out;
}

int cmd_corpus(const CorpusArgs& a, Resolver& res) {
  const auto excluded = parse_exclusions(a.exclude);
  const auto specs = corpus_specs(a.count, a.size, a.seed, excluded);
  ensure_dir(a.out + "/images");

  std::ostringstream manifest;
  manifest << "index,file,shape,color,texture,cx,cy,radius,caption\n";
  for (size_t i = 0; i < specs.size(); ++i) {
    const SceneSpec& s = specs[i];
    const std::string file = "images/" + img_name(static_cast<int64_t>(i));
    write_png(a.out + "/" + file, render(s));
    manifest << i << "," << file << "," << shape_names()[static_cast<size_t>(s.shape)] << ","
             << color_names()[static_cast<size_t>(s.color)] << ","
             << texture_names()[static_cast<size_t>(s.texture)] << "," << s.cx << "," << s.cy << ","
             << s.radius << ",\"" << caption_of(s) << "\"\n";
  }
  atomic_write(a.out + "/manifest.csv", manifest.str());

  // one held-out concept directory per excluded pair
  for (const ConceptFamily& fam : excluded) {
    const std::string name = color_names()[static_cast<size_t>(fam.color)] + "_" +
                             shape_names()[static_cast<size_t>(fam.shape)];
    const std::string dir = a.out + "/concepts/" + name;
    ensure_dir(dir);
    ConceptRender cr = make_concept(fam, static_cast<int>(a.concept_count), mix_seed(a.seed, 0xf00d), a.size);
    std::ostringstream spec_csv;
    spec_csv << "file,shape,color,texture,cx,cy,radius,caption\n";
    for (size_t i = 0; i < cr.images.size(); ++i) {
      const std::string file = img_name(static_cast<int64_t>(i));
      write_png(dir + "/" + file, cr.images[i]);
      const SceneSpec& s = cr.specs[i];
      spec_csv << file << "," << shape_names()[static_cast<size_t>(s.shape)] << ","
               << color_names()[static_cast<size_t>(s.color)] << ","
               << texture_names()[static_cast<size_t>(s.texture)] << "," << s.cx << "," << s.cy << ","
               << s.radius << ",\"" << cr.caption << "\"\n";
    }
    atomic_write(dir + "/spec.csv", spec_csv.str());
  }

  write_echo(a.out, "corpus", res.echo);
  std::cout << "corpus: " << specs.size() << " images, " << excluded.size() << " held-out concepts -> "
            << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// shared corpus loading

std::vector<CaptionedImage> load_corpus_dir(const std::string& dir) {
  const std::string manifest = dir + "/manifest.csv";
  if (!fs::exists(manifest)) fail(4, "missing-file", "corpus manifest not found: " + manifest);
  std::vector<CaptionedImage> out;
  std::ifstream in(manifest);
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    // columns: index,file,...,caption (caption is the quoted tail)
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 + 1);
    const auto q1 = line.find('"');
    const auto q2 = line.rfind('"');
    if (c1 == std::string::npos || c2 == std::string::npos || q1 == std::string::npos || q2 <= q1) {
      fail(4, "bad-file", "malformed manifest row: " + line);
    }
    const std::string file = line.substr(c1 + 1, c2 - c1 - 1);
    const std::string caption = line.substr(q1 + 1, q2 - q1 - 1);
    out.push_back(CaptionedImage{read_png(dir + "/" + file), caption});
  }
  if (out.empty()) fail(4, "bad-file", "corpus manifest has no rows: " + manifest);
  return out;
}

ConceptDataset load_concept_dir(const std::string& dir, std::string* caption_out) {
  const std::string spec = dir + "/spec.csv";
  if (!fs::exists(spec)) fail(4, "missing-file", "concept spec not found: " + spec);
  ConceptDataset data;
  std::ifstream in(spec);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 + 1);
    const std::string file = line.substr(0, c1);
    const std::string shape = line.substr(c1 + 1, c2 - c1 - 1);
    data.images.push_back(read_png(dir + "/" + file));
    data.init_word_hint = shape;
    const auto q1 = line.find('"');
    const auto q2 = line.rfind('"');
    if (caption_out != nullptr && q1 != std::string::npos && q2 > q1) {
      *caption_out = line.substr(q1 + 1, q2 - q1 - 1);
    }
  }
  if (data.images.empty()) fail(4, "bad-file", "concept dir has no images: " + dir);
  return data;
}

// ---------------------------------------------------------------------------
// pretrain

struct PretrainArgs {
  std::string corpus, out, config;
  std::string preset = "micro-5";
  int64_t steps = 3000;
  double lr = 2e-3;
  int64_t batch = 8;
  uint64_t seed = 0;
  int jobs = 4;
  std::string data_dir = "data";
};

int cmd_pretrain(const PretrainArgs& a, Resolver& res) {
  ModelConfig mc;
  if (a.preset == "micro-5") {
    mc.unet = UNetConfig::micro5();
  } else if (a.preset == "reference-16") {
    mc.unet = UNetConfig::reference16();
  } else {
    fail(2, "usage", "unknown preset '" + a.preset + "' (micro-5 | reference-16)");
  }
  const auto corpus = load_corpus_dir(a.corpus);
  if (corpus[0].image.dim(1) != mc.unet.image_size) {
    fail(4, "bad-file", "corpus image size " + std::to_string(corpus[0].image.dim(1)) +
                            " does not match preset size " + std::to_string(mc.unet.image_size));
  }
  Model m = Model::build(Vocabulary::load_file(a.data_dir + "/vocabulary.txt"), mc, a.seed);

  PretrainConfig pc;
  pc.steps = a.steps;
  pc.lr = a.lr;
  pc.batch = a.batch;
  pc.seed = a.seed;
  pc.jobs = a.jobs;
  PretrainResult pr;
  try {
    pr = pretrain(m, corpus, pc);
  } catch (const std::runtime_error& e) {
    fail(5, "numeric", e.what());
  }

  ensure_dir(a.out);
  m.save(a.out + "/checkpoint.pplus");
  std::ostringstream log;
  log << "step,loss\n";
  for (const auto& [step, loss] : pr.loss_log) log << step << "," << loss << "\n";
  log << "# heldout_initial," << pr.heldout_initial << "\n";
  log << "# heldout_final," << pr.heldout_final << "\n";
  atomic_write(a.out + "/train_log.csv", log.str());
  write_echo(a.out, "pretrain", res.echo);
  std::cout << "pretrain: held-out loss " << pr.heldout_initial << " -> " << pr.heldout_final << " ("
            << a.preset << ", " << a.steps << " steps) -> " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// invert

struct InvertArgs {
  std::string checkpoint, concept_dir, out, config;
  std::string mode = "xti";
  int64_t steps = -1;
  double lr = -1;
  int64_t batch = 8;
  double reg_lambda = 0.0;
  bool single_image = false;
  std::string init = "coarse-word";
  std::string init_word;
  uint64_t seed = 0;
  int jobs = 4;
  std::string templates_file;
  std::string data_dir = "data";
};

int cmd_invert(const InvertArgs& a, Resolver& res) {
  Model m = load_checkpoint(a.checkpoint);
  ConceptDataset data = load_concept_dir(a.concept_dir, nullptr);

  InversionConfig cfg;
  cfg.mode = mode_from(a.mode);
  cfg.steps = a.steps;
  cfg.lr = a.lr;
  cfg.batch = a.batch;
  cfg.reg_lambda = a.reg_lambda;
  cfg.single_image = a.single_image;
  cfg.init = a.init;
  cfg.init_word = a.init_word;
  cfg.seed = a.seed;
  cfg.jobs = a.jobs;
  const std::string tf = a.templates_file.empty() ? a.data_dir + "/train_templates.txt" : a.templates_file;
  cfg.templates = read_lines_file(tf);

  InvertedConcept c;
  try {
    c = invert(m, data, cfg);
  } catch (const std::runtime_error& e) {
    fail(5, "numeric", e.what());
  }

  ensure_dir(a.out);
  c.save(a.out + "/concept.pplusc");
  std::ostringstream log;
  log << "step,recon_loss,reg_term\n";
  for (size_t i = 0; i < c.recon_trajectory.size(); ++i) {
    log << i << "," << c.recon_trajectory[i] << "," << c.reg_trajectory[i] << "\n";
  }
  log << "# eval_initial," << c.eval_initial << "\n";
  log << "# eval_final," << c.eval_final << "\n";
  log << "# final_loss," << c.final_loss << "\n";
  atomic_write(a.out + "/loss.csv", log.str());
  write_echo(a.out, "invert", res.echo);
  std::cout << "invert: " << a.mode << " final loss " << c.final_loss << " (eval " << c.eval_initial
            << " -> " << c.eval_final << ") -> " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// generate / mix

struct GenerateArgs {
  std::string checkpoint, out, config;
  std::string prompt;
  std::string concept_file;
  std::string tmpl = "a photo of <token>";
  int64_t steps = 50;
  double cfg_scale = 7.5;
  uint64_t seed = 0;
  int64_t count = 1;
};

void write_routing_csv(const std::string& path, const Model& m, const std::vector<std::string>& sources) {
  std::ostringstream os;
  os << "layer,conditioning\n";
  for (int64_t i = 0; i < m.registry.size(); ++i) {
    os << "\"" << m.registry.at(i).str() << "\",\"" << sources[static_cast<size_t>(i)] << "\"\n";
  }
  atomic_write(path, os.str());
}

int run_sampling(const Model& m, const ExtendedPrompt& p, const std::vector<std::string>& sources,
                 const std::string& out, int64_t steps, double cfg_scale, uint64_t seed, int64_t count,
                 Resolver& res, const char* command) {
  ensure_dir(out);
  for (int64_t i = 0; i < count; ++i) {
    SamplerConfig sc{steps, cfg_scale, seed + static_cast<uint64_t>(i)};
    Tensor img;
    try {
      img = ddim_sample(m, p, sc);
    } catch (const std::runtime_error& e) {
      fail(5, "numeric", e.what());
    }
    write_png(out + "/" + img_name(i), img);
  }
  write_routing_csv(out + "/routing.csv", m, sources);
  write_echo(out, command, res.echo);
  std::cout << command << ": " << count << " image(s) -> " << out << "\n";
  return 0;
}

int cmd_generate(const GenerateArgs& a, Resolver& res) {
  Model m = load_checkpoint(a.checkpoint);
  ExtendedPrompt p;
  std::vector<std::string> sources;
  if (!a.prompt.empty() && !a.concept_file.empty()) {
    fail(2, "usage", "--prompt and --concept are mutually exclusive");
  }
  if (!a.prompt.empty()) {
    p = m.broadcast_prompt(a.prompt);
    sources.assign(static_cast<size_t>(m.registry.size()), a.prompt);
  } else if (!a.concept_file.empty()) {
    InvertedConcept c = load_concept(a.concept_file);
    p = c.prompt_for(m, a.tmpl);
    for (int64_t i = 0; i < m.registry.size(); ++i) {
      const int64_t e = c.embeddings.size() == 1 ? 0 : i;
      sources.push_back(a.tmpl + " [e" + std::to_string(e) + "]");
    }
  } else {
    fail(2, "usage", "generate needs --prompt or --concept");
  }
  return run_sampling(m, p, sources, a.out, a.steps, a.cfg_scale, a.seed, a.count, res, "generate");
}

struct MixArgs {
  std::string checkpoint, out, config;
  std::string shape_concept, style_concept;
  int64_t k = 0, K = 0;
  std::string range;
  std::string tmpl = "a photo of <token>";
  int64_t steps = 50;
  double cfg_scale = 7.5;
  uint64_t seed = 0;
  int64_t count = 1;
};

int cmd_mix(const MixArgs& a, Resolver& res) {
  Model m = load_checkpoint(a.checkpoint);
  InvertedConcept shape_c = load_concept(a.shape_concept);
  InvertedConcept style_c = load_concept(a.style_concept);

  MixSpec spec;
  if (!a.range.empty()) {
    std::pair<int64_t, int64_t> lohi;
    try {
      lohi = parse_layer_range(m.registry, a.range);
    } catch (const std::invalid_argument& e) {
      fail(3, "layer-range", e.what());
    }
    spec = MixSpec{lohi.first - 1, lohi.second};
  } else {
    spec = MixSpec{a.k, a.K};
  }

  ExtendedPrompt style_p = style_c.prompt_for(m, a.tmpl);
  ExtendedPrompt shape_p = shape_c.prompt_for(m, a.tmpl);
  ExtendedPrompt mixed;
  try {
    // the shape source occupies the inner range (k, K]
    mixed = mix_extended(style_p, shape_p, spec);
  } catch (const std::invalid_argument& e) {
    fail(3, "layer-range", e.what());
  }
  std::vector<std::string> sources;
  for (int64_t i = 1; i <= m.registry.size(); ++i) {
    sources.push_back(spec.k < i && i <= spec.K ? "shape:" + a.shape_concept : "style:" + a.style_concept);
  }
  return run_sampling(m, mixed, sources, a.out, a.steps, a.cfg_scale, a.seed, a.count, res, "mix");
}

// ---------------------------------------------------------------------------
// attn-ratio

struct RatioArgs {
  std::string checkpoint, out, config;
  int64_t prompts = 12;
  int64_t seeds = 1;
  int64_t steps = 20;
  double cfg_scale = 7.5;
  uint64_t seed = 0;
  bool span_sum = false;
  bool include_specials = false;
};

int cmd_attn_ratio(const RatioArgs& a, Resolver& res) {
  Model m = load_checkpoint(a.checkpoint);
  // toy prompt bank: textures play the appearance role, shapes the object
  // role, alternating the two reference patterns
  std::vector<std::string> prompts;
  RandomSource rng(mix_seed(a.seed, 0xa77));
  for (int64_t i = 0; i < a.prompts; ++i) {
    const std::string obj = shape_names()[static_cast<size_t>(rng.uniform_int(6))];
    const std::string app = texture_names()[static_cast<size_t>(rng.uniform_int(5))];
    prompts.push_back(i % 2 == 0 ? app + " " + obj : obj + ", " + app);
  }
  RatioConfig cfg;
  cfg.steps = a.steps;
  cfg.guidance = a.cfg_scale;
  cfg.mass.span_sum = a.span_sum;
  cfg.mass.include_specials = a.include_specials;
  cfg.seeds.clear();
  for (int64_t s = 0; s < a.seeds; ++s) cfg.seeds.push_back(a.seed + static_cast<uint64_t>(s));

  const RatioReport report = attention_ratio(m, prompts, shape_names(), texture_names(), cfg);

  double coarse = 0, fine = 0;
  int64_t nc = 0, nf = 0;
  std::ostringstream csv;
  csv << "layer,ratio,band\n";
  for (const auto& [layer, ratio] : report.ratios) {
    const bool is_coarse = layer.resolution <= 16;
    csv << "\"" << layer.str() << "\"," << ratio << "," << (is_coarse ? "coarse" : "fine") << "\n";
    (is_coarse ? coarse : fine) += ratio;
    (is_coarse ? nc : nf) += 1;
  }
  const double coarse_mean = nc ? coarse / static_cast<double>(nc) : 0;
  const double fine_mean = nf ? fine / static_cast<double>(nf) : 0;
  const bool trend = coarse_mean > fine_mean;
  csv << "# coarse_mean," << coarse_mean << "\n# fine_mean," << fine_mean << "\n";
  csv << "# trend_coarse_gt_fine," << (trend ? "PASS" : "FAIL") << "\n";
  for (const auto& s : report.skipped) csv << "# skipped," << s << "\n";
  ensure_dir(a.out);
  atomic_write(a.out + "/attn_ratio.csv", csv.str());
  write_echo(a.out, "attn-ratio", res.echo);
  std::cout << "attn-ratio: coarse mean " << coarse_mean << " vs fine mean " << fine_mean
            << " [trend " << (trend ? "PASS" : "FAIL") << ", reported only] -> " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// subset-sweep

struct SweepArgs {
  std::string checkpoint, out, config;
  int64_t pairs = 4;
  int64_t seeds = 1;
  int64_t steps = 20;
  double cfg_scale = 7.5;
  uint64_t seed = 0;
};

int cmd_subset_sweep(const SweepArgs& a, Resolver& res) {
  Model m = load_checkpoint(a.checkpoint);
  RandomSource rng(mix_seed(a.seed, 0x5e));
  std::vector<PromptPair> pairs;
  for (int64_t i = 0; i < a.pairs; ++i) {
    PromptPair p;
    auto draw = [&rng](std::string* obj, std::string* col, std::string* sty, std::string* prompt) {
      *obj = shape_names()[static_cast<size_t>(rng.uniform_int(6))];
      *col = color_names()[static_cast<size_t>(rng.uniform_int(11))];
      *sty = texture_names()[static_cast<size_t>(rng.uniform_int(5))];
      *prompt = *col + " " + *obj + ", " + *sty;
    };
    draw(&p.object1, &p.color1, &p.style1, &p.prompt1);
    do {
      draw(&p.object2, &p.color2, &p.style2, &p.prompt2);
    } while (p.prompt2 == p.prompt1);
    pairs.push_back(p);
  }
  SweepConfig cfg;
  cfg.steps = a.steps;
  cfg.guidance = a.cfg_scale;
  cfg.seeds.clear();
  for (int64_t s = 0; s < a.seeds; ++s) cfg.seeds.push_back(a.seed + static_cast<uint64_t>(s));

  OracleEmbedder emb;
  const auto rows = subset_sweep(m, pairs, cfg, emb);

  auto crossover = [&rows](double SweepRow::* p1, double SweepRow::* p2) {
    for (const auto& row : rows) {
      if (row.*p2 >= row.*p1) return row.subset_index;
    }
    return static_cast<int>(rows.size());
  };
  const int obj_cross = crossover(&SweepRow::object_p1, &SweepRow::object_p2);
  const int col_cross = crossover(&SweepRow::color_p1, &SweepRow::color_p2);
  const bool trend = obj_cross <= col_cross;

  std::ostringstream csv;
  csv << "subset,object_p1,object_p2,color_p1,color_p2,style_p1,style_p2,missing\n";
  for (const auto& row : rows) {
    csv << row.subset_index << "," << row.object_p1 << "," << row.object_p2 << "," << row.color_p1 << ","
        << row.color_p2 << "," << row.style_p1 << "," << row.style_p2 << "," << (row.missing ? 1 : 0)
        << "\n";
  }
  csv << "# object_crossover," << obj_cross << "\n# color_crossover," << col_cross << "\n";
  csv << "# trend_object_before_color," << (trend ? "PASS" : "FAIL") << "\n";
  ensure_dir(a.out);
  atomic_write(a.out + "/subset_sweep.csv", csv.str());
  write_echo(a.out, "subset-sweep", res.echo);
  std::cout << "subset-sweep: object crossover " << obj_cross << ", color crossover " << col_cross
            << " [trend " << (trend ? "PASS" : "FAIL") << ", reported only] -> " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// density

struct DensityArgs {
  std::string checkpoint, out, config;
  std::string concepts;  // comma-separated .pplusc paths
  bool joint = false;
  double bandwidth = 0.0;
};

int cmd_density(const DensityArgs& a, Resolver& res) {
  Model m = load_checkpoint(a.checkpoint);
  LookupTable table(m.params.at("lookup.table").value, m.vocab.natural_size(), m.cfg.enc.d);
  DensityModel dm = fit_density(table, BandwidthPolicy{a.bandwidth, a.joint});
  for (const auto& w : dm.warnings) std::cerr << "warning: " << w << "\n";

  std::vector<LabeledEmbedding> extra;
  if (!a.concepts.empty()) {
    std::stringstream ss(a.concepts);
    std::string path;
    while (std::getline(ss, path, ',')) {
      if (path.empty()) continue;
      InvertedConcept c = load_concept(path);
      const std::string group = c.mode == InversionMode::TI ? "ti" : "xti";
      for (size_t i = 0; i < c.embeddings.size(); ++i) {
        extra.push_back(LabeledEmbedding{
            group, c.embeddings.size() == 1 ? -1 : static_cast<int64_t>(i), c.embeddings[i]});
      }
    }
  }
  const auto rows = density_report(dm, table, extra);

  std::vector<double> ti_scores, xti_scores;
  std::ostringstream csv;
  csv << "token_id,group,layer,log_density,percentile\n";
  for (const auto& row : rows) {
    csv << row.token_id << "," << row.group << "," << row.layer << "," << row.log_density << ","
        << row.percentile << "\n";
    if (row.group == "ti") ti_scores.push_back(row.log_density);
    if (row.group == "xti") xti_scores.push_back(row.log_density);
  }
  auto median = [](std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  if (!ti_scores.empty() && !xti_scores.empty()) {
    const bool trend = median(xti_scores) >= median(ti_scores);
    csv << "# ti_median," << median(ti_scores) << "\n# xti_median," << median(xti_scores) << "\n";
    csv << "# trend_xti_ge_ti," << (trend ? "PASS" : "FAIL") << "\n";
    std::cout << "density: ti median " << median(ti_scores) << ", xti median " << median(xti_scores)
              << " [trend " << (trend ? "PASS" : "FAIL") << ", reported only]\n";
  }
  ensure_dir(a.out);
  atomic_write(a.out + "/density.csv", csv.str());
  write_echo(a.out, "density", res.echo);
  std::cout << "density: " << rows.size() << " rows -> " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval (14-template metric run)

struct EvalArgs {
  std::string checkpoint, concept_file, refs, out, config;
  std::string subject_text;
  int64_t images_per_prompt = 2;
  int64_t steps = 20;
  double cfg_scale = 7.5;
  uint64_t seed = 0;
  std::string data_dir = "data";
};

int cmd_eval(const EvalArgs& a, Resolver& res) {
  Model m = load_checkpoint(a.checkpoint);
  InvertedConcept c = load_concept(a.concept_file);
  std::string caption;
  ConceptDataset refs = load_concept_dir(a.refs, &caption);
  const std::string subject = a.subject_text.empty() ? caption : a.subject_text;
  if (subject.empty()) fail(2, "usage", "eval needs --subject-text or a concept dir with captions");

  const auto templates = read_lines_file(a.data_dir + "/metric_prompts_14.txt");
  OracleEmbedder emb;

  std::ostringstream csv;
  csv << "template,text_similarity,subject_similarity\n";
  double text_mean = 0, subj_mean = 0;
  for (size_t ti = 0; ti < templates.size(); ++ti) {
    ExtendedPrompt p = c.prompt_for(m, templates[ti]);
    std::vector<Tensor> images;
    for (int64_t i = 0; i < a.images_per_prompt; ++i) {
      SamplerConfig sc{a.steps, a.cfg_scale,
                       mix_seed(a.seed, static_cast<uint64_t>(ti), static_cast<uint64_t>(i))};
      images.push_back(ddim_sample(m, p, sc));
    }
    // the prompt text with the placeholder replaced by the subject phrase
    std::string prompt_text = templates[ti];
    const auto pos = prompt_text.find("<token>");
    if (pos != std::string::npos) prompt_text.replace(pos, 7, subject);
    const double tsim = text_similarity(images, prompt_text, emb);
    const double ssim = subject_similarity(images, refs.images, emb);
    text_mean += tsim;
    subj_mean += ssim;
    csv << "\"" << templates[ti] << "\"," << tsim << "," << ssim << "\n";
  }
  text_mean /= static_cast<double>(templates.size());
  subj_mean /= static_cast<double>(templates.size());
  csv << "# mean," << text_mean << "," << subj_mean << "\n";
  ensure_dir(a.out);
  atomic_write(a.out + "/eval.csv", csv.str());
  write_echo(a.out, "eval", res.echo);
  std::cout << "eval: " << templates.size() << " templates, text " << text_mean << ", subject "
            << subj_mean << " -> " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// selftest

struct SelftestArgs {
  std::string out, config;
  uint64_t seed = 0;
  int jobs = 4;
  std::string data_dir = "data";
};

int cmd_selftest(const SelftestArgs& a, Resolver& res) {
  write_echo(a.out, "selftest", res.echo);
  const SelftestResult result = run_selftest(a.out, a.seed, a.jobs, a.data_dir);
  for (const auto& [name, ok] : result.checks) {
    std::cout << (ok ? "PASS " : "FAIL ") << name << "\n";
  }
  for (const auto& d : result.details) std::cout << "  " << d << "\n";
  std::cout << (result.all_passed() ? "selftest: all checks passed\n" : "selftest: FAILURES\n");
  return result.all_passed() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "pplus: toy text-conditioned diffusion lab with per-layer prompt routing,\n"
      "extended textual inversion, and embedding-density analysis.\n\n"
      "Exit codes: 0 ok, 2 usage, 3 bad layer range, 4 missing/invalid file,\n"
      "5 numeric failure, 6 bad config file. Global seed fallback: PPLUS_SEED."};
  app.require_subcommand(1);

  CorpusArgs ca;
  PretrainArgs pa;
  InvertArgs ia;
  GenerateArgs ga;
  MixArgs ma;
  RatioArgs ra;
  SweepArgs sa;
  DensityArgs da;
  EvalArgs ea;
  SelftestArgs ta;

  auto* corpus = app.add_subcommand("corpus", "generate the synthetic pretraining corpus");
  auto* c_out = corpus->add_option("--out", ca.out, "output directory")->required();
  auto* c_cfg = corpus->add_option("--config", ca.config, "JSON config file (flags override)");
  auto* c_count = corpus->add_option("--count", ca.count, "number of images");
  auto* c_size = corpus->add_option("--size", ca.size, "image size in pixels");
  auto* c_seed = corpus->add_option("--seed", ca.seed, "random seed");
  auto* c_excl = corpus->add_option("--exclude", ca.exclude, "held-out 'color shape' pairs, ';' separated");
  auto* c_cc = corpus->add_option("--concept-count", ca.concept_count, "images per held-out concept");

  auto* pre = app.add_subcommand("pretrain", "pretrain the toy denoiser on a corpus");
  auto* p_corpus = pre->add_option("--corpus", pa.corpus, "corpus directory")->required();
  auto* p_out = pre->add_option("--out", pa.out, "output directory")->required();
  auto* p_cfg = pre->add_option("--config", pa.config, "JSON config file");
  auto* p_preset = pre->add_option("--preset", pa.preset, "micro-5 | reference-16");
  auto* p_steps = pre->add_option("--steps", pa.steps, "optimization steps");
  auto* p_lr = pre->add_option("--lr", pa.lr, "learning rate");
  auto* p_batch = pre->add_option("--batch", pa.batch, "batch size");
  auto* p_seed = pre->add_option("--seed", pa.seed, "random seed");
  auto* p_jobs = pre->add_option("--jobs", pa.jobs, "worker threads");
  auto* p_data = pre->add_option("--data-dir", pa.data_dir, "word-list data directory");

  auto* inv = app.add_subcommand("invert", "optimize placeholder embeddings for a concept");
  auto* i_ck = inv->add_option("--checkpoint", ia.checkpoint, "model checkpoint")->required();
  auto* i_dir = inv->add_option("--concept-dir", ia.concept_dir, "concept image directory")->required();
  auto* i_out = inv->add_option("--out", ia.out, "output directory")->required();
  auto* i_cfg = inv->add_option("--config", ia.config, "JSON config file");
  auto* i_mode = inv->add_option("--mode", ia.mode, "ti | xti");
  auto* i_steps = inv->add_option("--steps", ia.steps, "steps (default 5000 ti / 500 xti)");
  auto* i_lr = inv->add_option("--lr", ia.lr, "learning rate (default 0.005, 0.001 single-image)");
  auto* i_batch = inv->add_option("--batch", ia.batch, "batch size");
  auto* i_reg = inv->add_option("--reg-lambda", ia.reg_lambda, "density regularization scale");
  auto* i_single = inv->add_flag("--single-image", ia.single_image, "train on the first image only");
  auto* i_init = inv->add_option("--init", ia.init, "coarse-word | mean-of-table | zeros");
  auto* i_word = inv->add_option("--init-word", ia.init_word, "descriptor word for coarse-word init");
  auto* i_seed = inv->add_option("--seed", ia.seed, "random seed");
  auto* i_jobs = inv->add_option("--jobs", ia.jobs, "worker threads");
  auto* i_tf = inv->add_option("--templates-file", ia.templates_file, "placeholder template bank");
  auto* i_data = inv->add_option("--data-dir", ia.data_dir, "word-list data directory");

  auto* gen = app.add_subcommand("generate", "sample images from a prompt or inverted concept");
  auto* g_ck = gen->add_option("--checkpoint", ga.checkpoint, "model checkpoint")->required();
  auto* g_out = gen->add_option("--out", ga.out, "output directory")->required();
  auto* g_cfg = gen->add_option("--config", ga.config, "JSON config file");
  auto* g_prompt = gen->add_option("--prompt", ga.prompt, "plain text prompt");
  auto* g_concept = gen->add_option("--concept", ga.concept_file, "inverted concept file");
  auto* g_tmpl = gen->add_option("--template", ga.tmpl, "placeholder template for --concept");
  auto* g_steps = gen->add_option("--steps", ga.steps, "denoising steps");
  auto* g_scale = gen->add_option("--cfg", ga.cfg_scale, "classifier-free guidance scale");
  auto* g_seed = gen->add_option("--seed", ga.seed, "random seed");
  auto* g_count = gen->add_option("--count", ga.count, "number of images");

  auto* mix = app.add_subcommand("mix", "blend two inverted concepts across layer ranges");
  auto* m_ck = mix->add_option("--checkpoint", ma.checkpoint, "model checkpoint")->required();
  auto* m_out = mix->add_option("--out", ma.out, "output directory")->required();
  auto* m_cfg = mix->add_option("--config", ma.config, "JSON config file");
  auto* m_shape = mix->add_option("--shape-concept", ma.shape_concept, "geometry source concept")->required();
  auto* m_style = mix->add_option("--style-concept", ma.style_concept, "appearance source concept")->required();
  auto* m_k = mix->add_option("--k", ma.k, "lower separator (1-based, exclusive)");
  auto* m_K = mix->add_option("--K", ma.K, "upper separator (inclusive)");
  auto* m_range = mix->add_option("--range", ma.range, "layer range, e.g. \"(16, 'down', 1) - (16, 'up', 0)\"");
  auto* m_tmpl = mix->add_option("--template", ma.tmpl, "placeholder template");
  auto* m_steps = mix->add_option("--steps", ma.steps, "denoising steps");
  auto* m_scale = mix->add_option("--cfg", ma.cfg_scale, "guidance scale");
  auto* m_seed = mix->add_option("--seed", ma.seed, "random seed");
  auto* m_count = mix->add_option("--count", ma.count, "number of images");

  auto* ratio = app.add_subcommand("attn-ratio", "object/appearance cross-attention ratio per layer");
  auto* r_ck = ratio->add_option("--checkpoint", ra.checkpoint, "model checkpoint")->required();
  auto* r_out = ratio->add_option("--out", ra.out, "output directory")->required();
  auto* r_cfg = ratio->add_option("--config", ra.config, "JSON config file");
  auto* r_prompts = ratio->add_option("--prompts", ra.prompts, "prompt count");
  auto* r_seeds = ratio->add_option("--seeds", ra.seeds, "seeds per prompt");
  auto* r_steps = ratio->add_option("--steps", ra.steps, "denoising steps");
  auto* r_scale = ratio->add_option("--cfg", ra.cfg_scale, "guidance scale");
  auto* r_seed = ratio->add_option("--seed", ra.seed, "random seed");
  auto* r_sum = ratio->add_flag("--span-sum", ra.span_sum, "sum multi-token spans instead of averaging");
  auto* r_inc = ratio->add_flag("--include-specials", ra.include_specials, "keep BOS/EOS mass in normalization");

  auto* sweep = app.add_subcommand("subset-sweep", "attribute similarity across growing layer subsets");
  auto* s_ck = sweep->add_option("--checkpoint", sa.checkpoint, "model checkpoint")->required();
  auto* s_out = sweep->add_option("--out", sa.out, "output directory")->required();
  auto* s_cfg = sweep->add_option("--config", sa.config, "JSON config file");
  auto* s_pairs = sweep->add_option("--pairs", sa.pairs, "prompt pairs");
  auto* s_seeds = sweep->add_option("--seeds", sa.seeds, "seeds per pair");
  auto* s_steps = sweep->add_option("--steps", sa.steps, "denoising steps");
  auto* s_scale = sweep->add_option("--cfg", sa.cfg_scale, "guidance scale");
  auto* s_seed = sweep->add_option("--seed", sa.seed, "random seed");

  auto* dens = app.add_subcommand("density", "KDE log-density of tokens against the lookup table");
  auto* d_ck = dens->add_option("--checkpoint", da.checkpoint, "model checkpoint")->required();
  auto* d_out = dens->add_option("--out", da.out, "output directory")->required();
  auto* d_cfg = dens->add_option("--config", da.config, "JSON config file");
  auto* d_concepts = dens->add_option("--concepts", da.concepts, "comma-separated concept files");
  auto* d_joint = dens->add_flag("--joint", da.joint, "joint product-kernel estimate");
  auto* d_bw = dens->add_option("--bandwidth", da.bandwidth, "fixed bandwidth (default: Scott's rule)");

  auto* evalc = app.add_subcommand("eval", "14-template similarity metrics for a concept");
  auto* e_ck = evalc->add_option("--checkpoint", ea.checkpoint, "model checkpoint")->required();
  auto* e_concept = evalc->add_option("--concept", ea.concept_file, "inverted concept file")->required();
  auto* e_refs = evalc->add_option("--refs", ea.refs, "reference concept directory")->required();
  auto* e_out = evalc->add_option("--out", ea.out, "output directory")->required();
  auto* e_cfg = evalc->add_option("--config", ea.config, "JSON config file");
  auto* e_subj = evalc->add_option("--subject-text", ea.subject_text, "textual description of the subject");
  auto* e_ipp = evalc->add_option("--images-per-prompt", ea.images_per_prompt, "images per template");
  auto* e_steps = evalc->add_option("--steps", ea.steps, "denoising steps");
  auto* e_scale = evalc->add_option("--cfg", ea.cfg_scale, "guidance scale");
  auto* e_seed = evalc->add_option("--seed", ea.seed, "random seed");
  auto* e_data = evalc->add_option("--data-dir", ea.data_dir, "word-list data directory");

  auto* self = app.add_subcommand("selftest", "run every built-in oracle check");
  auto* t_out = self->add_option("--out", ta.out, "output directory")->required();
  auto* t_cfg = self->add_option("--config", ta.config, "JSON config file");
  auto* t_seed = self->add_option("--seed", ta.seed, "random seed");
  auto* t_jobs = self->add_option("--jobs", ta.jobs, "worker threads");
  auto* t_data = self->add_option("--data-dir", ta.data_dir, "word-list data directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    std::cerr << "error: category=usage: " << e.what() << "\n";
    return 2;
  }

  try {
    Resolver res;
    if (corpus->parsed()) {
      if (c_cfg->count()) res.file = load_config_file(ca.config, "corpus");
      ca.count = res.pick(c_count, ca.count, "count", int64_t{2000});
      ca.size = res.pick(c_size, ca.size, "size", int64_t{32});
      ca.seed = res.pick(c_seed, ca.seed, "seed", env_seed());
      ca.exclude = res.pick(c_excl, ca.exclude, "exclude",
                            std::string("yellow cross; pink triangle; blue ring"));
      ca.concept_count = res.pick(c_cc, ca.concept_count, "concept_count", int64_t{5});
      (void)c_out;
      return cmd_corpus(ca, res);
    }
    if (pre->parsed()) {
      if (p_cfg->count()) res.file = load_config_file(pa.config, "pretrain");
      pa.corpus = res.pick(p_corpus, pa.corpus, "corpus", pa.corpus);
      pa.preset = res.pick(p_preset, pa.preset, "preset", std::string("micro-5"));
      pa.steps = res.pick(p_steps, pa.steps, "steps", int64_t{3000});
      pa.lr = res.pick(p_lr, pa.lr, "lr", 2e-3);
      pa.batch = res.pick(p_batch, pa.batch, "batch", int64_t{8});
      pa.seed = res.pick(p_seed, pa.seed, "seed", env_seed());
      pa.jobs = res.pick(p_jobs, pa.jobs, "jobs", 4);
      pa.data_dir = res.pick(p_data, pa.data_dir, "data_dir", std::string("data"));
      (void)p_out;
      return cmd_pretrain(pa, res);
    }
    if (inv->parsed()) {
      if (i_cfg->count()) res.file = load_config_file(ia.config, "invert");
      ia.checkpoint = res.pick(i_ck, ia.checkpoint, "checkpoint", ia.checkpoint);
      ia.concept_dir = res.pick(i_dir, ia.concept_dir, "concept_dir", ia.concept_dir);
      ia.mode = res.pick(i_mode, ia.mode, "mode", std::string("xti"));
      ia.steps = res.pick(i_steps, ia.steps, "steps", int64_t{-1});
      ia.lr = res.pick(i_lr, ia.lr, "lr", -1.0);
      ia.batch = res.pick(i_batch, ia.batch, "batch", int64_t{8});
      ia.reg_lambda = res.pick(i_reg, ia.reg_lambda, "reg_lambda", 0.0);
      ia.single_image = res.pick(i_single, ia.single_image, "single_image", false);
      ia.init = res.pick(i_init, ia.init, "init", std::string("coarse-word"));
      ia.init_word = res.pick(i_word, ia.init_word, "init_word", std::string());
      ia.seed = res.pick(i_seed, ia.seed, "seed", env_seed());
      ia.jobs = res.pick(i_jobs, ia.jobs, "jobs", 4);
      ia.templates_file = res.pick(i_tf, ia.templates_file, "templates_file", std::string());
      ia.data_dir = res.pick(i_data, ia.data_dir, "data_dir", std::string("data"));
      (void)i_out;
      return cmd_invert(ia, res);
    }
    if (gen->parsed()) {
      if (g_cfg->count()) res.file = load_config_file(ga.config, "generate");
      ga.checkpoint = res.pick(g_ck, ga.checkpoint, "checkpoint", ga.checkpoint);
      ga.prompt = res.pick(g_prompt, ga.prompt, "prompt", std::string());
      ga.concept_file = res.pick(g_concept, ga.concept_file, "concept", std::string());
      ga.tmpl = res.pick(g_tmpl, ga.tmpl, "template", std::string("a photo of <token>"));
      ga.steps = res.pick(g_steps, ga.steps, "steps", int64_t{50});
      ga.cfg_scale = res.pick(g_scale, ga.cfg_scale, "cfg", 7.5);
      ga.seed = res.pick(g_seed, ga.seed, "seed", env_seed());
      ga.count = res.pick(g_count, ga.count, "count", int64_t{1});
      (void)g_out;
      return cmd_generate(ga, res);
    }
    if (mix->parsed()) {
      if (m_cfg->count()) res.file = load_config_file(ma.config, "mix");
      ma.checkpoint = res.pick(m_ck, ma.checkpoint, "checkpoint", ma.checkpoint);
      ma.shape_concept = res.pick(m_shape, ma.shape_concept, "shape_concept", ma.shape_concept);
      ma.style_concept = res.pick(m_style, ma.style_concept, "style_concept", ma.style_concept);
      ma.k = res.pick(m_k, ma.k, "k", int64_t{0});
      ma.K = res.pick(m_K, ma.K, "K", int64_t{0});
      ma.range = res.pick(m_range, ma.range, "range", std::string());
      ma.tmpl = res.pick(m_tmpl, ma.tmpl, "template", std::string("a photo of <token>"));
      ma.steps = res.pick(m_steps, ma.steps, "steps", int64_t{50});
      ma.cfg_scale = res.pick(m_scale, ma.cfg_scale, "cfg", 7.5);
      ma.seed = res.pick(m_seed, ma.seed, "seed", env_seed());
      ma.count = res.pick(m_count, ma.count, "count", int64_t{1});
      (void)m_out;
      return cmd_mix(ma, res);
    }
    if (ratio->parsed()) {
      if (r_cfg->count()) res.file = load_config_file(ra.config, "attn-ratio");
      ra.checkpoint = res.pick(r_ck, ra.checkpoint, "checkpoint", ra.checkpoint);
      ra.prompts = res.pick(r_prompts, ra.prompts, "prompts", int64_t{12});
      ra.seeds = res.pick(r_seeds, ra.seeds, "seeds", int64_t{1});
      ra.steps = res.pick(r_steps, ra.steps, "steps", int64_t{20});
      ra.cfg_scale = res.pick(r_scale, ra.cfg_scale, "cfg", 7.5);
      ra.seed = res.pick(r_seed, ra.seed, "seed", env_seed());
      ra.span_sum = res.pick(r_sum, ra.span_sum, "span_sum", false);
      ra.include_specials = res.pick(r_inc, ra.include_specials, "include_specials", false);
      (void)r_out;
      return cmd_attn_ratio(ra, res);
    }
    if (sweep->parsed()) {
      if (s_cfg->count()) res.file = load_config_file(sa.config, "subset-sweep");
      sa.checkpoint = res.pick(s_ck, sa.checkpoint, "checkpoint", sa.checkpoint);
      sa.pairs = res.pick(s_pairs, sa.pairs, "pairs", int64_t{4});
      sa.seeds = res.pick(s_seeds, sa.seeds, "seeds", int64_t{1});
      sa.steps = res.pick(s_steps, sa.steps, "steps", int64_t{20});
      sa.cfg_scale = res.pick(s_scale, sa.cfg_scale, "cfg", 7.5);
      sa.seed = res.pick(s_seed, sa.seed, "seed", env_seed());
      (void)s_out;
      return cmd_subset_sweep(sa, res);
    }
    if (dens->parsed()) {
      if (d_cfg->count()) res.file = load_config_file(da.config, "density");
      da.checkpoint = res.pick(d_ck, da.checkpoint, "checkpoint", da.checkpoint);
      da.concepts = res.pick(d_concepts, da.concepts, "concepts", std::string());
      da.joint = res.pick(d_joint, da.joint, "joint", false);
      da.bandwidth = res.pick(d_bw, da.bandwidth, "bandwidth", 0.0);
      (void)d_out;
      return cmd_density(da, res);
    }
    if (evalc->parsed()) {
      if (e_cfg->count()) res.file = load_config_file(ea.config, "eval");
      ea.checkpoint = res.pick(e_ck, ea.checkpoint, "checkpoint", ea.checkpoint);
      ea.concept_file = res.pick(e_concept, ea.concept_file, "concept", ea.concept_file);
      ea.refs = res.pick(e_refs, ea.refs, "refs", ea.refs);
      ea.subject_text = res.pick(e_subj, ea.subject_text, "subject_text", std::string());
      ea.images_per_prompt = res.pick(e_ipp, ea.images_per_prompt, "images_per_prompt", int64_t{2});
      ea.steps = res.pick(e_steps, ea.steps, "steps", int64_t{20});
      ea.cfg_scale = res.pick(e_scale, ea.cfg_scale, "cfg", 7.5);
      ea.seed = res.pick(e_seed, ea.seed, "seed", env_seed());
      ea.data_dir = res.pick(e_data, ea.data_dir, "data_dir", std::string("data"));
      (void)e_out;
      return cmd_eval(ea, res);
    }
    if (self->parsed()) {
      if (t_cfg->count()) res.file = load_config_file(ta.config, "selftest");
      ta.seed = res.pick(t_seed, ta.seed, "seed", env_seed());
      ta.jobs = res.pick(t_jobs, ta.jobs, "jobs", 4);
      ta.data_dir = res.pick(t_data, ta.data_dir, "data_dir", std::string("data"));
      (void)t_out;
      return cmd_selftest(ta, res);
    }
  } catch (const CliError& e) {
    std::cerr << "error: category=" << e.category << ": " << e.what() << "\n";
    return e.code;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: category=invalid-argument: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: category=internal: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
