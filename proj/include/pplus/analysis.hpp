#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "pplus/embedder.hpp"
#include "pplus/invert.hpp"
#include "pplus/model.hpp"
#include "pplus/sampler.hpp"

namespace pplus {

enum class TokenClass { Object, Appearance, Other, Special };

// Head- and query-averaged attention mass per token position for one
// (layer, timestep) pair.
struct AttentionRecord {
  LayerId layer;
  int64_t timestep = 0;
  std::vector<double> token_mass;        // per template position
  std::vector<TokenClass> token_labels;  // aligned with token_mass
};

struct MassOptions {
  bool include_specials = false;  // count BOS/EOS mass when reporting
  bool span_sum = false;          // sum over a span instead of the mean
};

// Accumulates head/query means during generation; one record per
// (layer, timestep) with masses summed over heads and spatial queries.
class MassSink : public AttentionSink {
 public:
  MassSink(std::vector<TokenClass> labels, MassOptions opt);
  void record(const LayerId& layer, int head, int64_t timestep, const Tensor& weights,
              const std::vector<uint8_t>& key_mask) override;
  std::vector<AttentionRecord> finish() const;

 private:
  struct Cell {
    std::vector<double> sum;
    int64_t count = 0;
  };
  std::vector<TokenClass> labels_;
  MassOptions opt_;
  std::map<std::pair<std::string, int64_t>, Cell> cells_;
  std::map<std::string, LayerId> layer_of_;
};

// Ratio of object-span mass to appearance-span mass per layer, masses
// averaged over heads, spatial queries, timesteps, and records (batch).
std::map<std::string, double> ratio_from_records(const std::vector<AttentionRecord>& records,
                                                 const MassOptions& opt = {});

struct RatioConfig {
  int64_t steps = 10;
  double guidance = 7.5;
  std::vector<uint64_t> seeds = {0};
  MassOptions mass;
};

struct RatioReport {
  std::vector<std::pair<LayerId, double>> ratios;  // registry order
  int64_t prompts_used = 0;
  std::vector<std::string> skipped;  // prompts lacking a span, with reason
};

// Prompts follow "appearance object" / "object, appearance"; spans are
// labeled from the word lists. Prompts without both spans are skipped.
RatioReport attention_ratio(const Model& m, const std::vector<std::string>& prompts,
                            const std::vector<std::string>& object_words,
                            const std::vector<std::string>& appearance_words, const RatioConfig& cfg);

struct SweepRow {
  int subset_index = 0;
  // mean similarity of generated images to each prompt's attribute term
  double object_p1 = 0, object_p2 = 0;
  double color_p1 = 0, color_p2 = 0;
  double style_p1 = 0, style_p2 = 0;
  bool missing = false;  // embedder failed for this row
};

struct SweepConfig {
  int64_t steps = 10;
  double guidance = 7.5;
  std::vector<uint64_t> seeds = {0};
};

struct PromptPair {
  // "color object, style" with the three attribute terms spelled out
  std::string prompt1, object1, color1, style1;
  std::string prompt2, object2, color2, style2;
};

// For each of the eight canonical subsets, condition the subset layers on
// prompt2 and the complement on prompt1, generate with fixed seeds, and
// score both prompts' attribute terms.
std::vector<SweepRow> subset_sweep(const Model& m, const std::vector<PromptPair>& pairs,
                                   const SweepConfig& cfg, Embedder& embedder);

double text_similarity(const std::vector<Tensor>& images, const std::string& prompt, Embedder& embedder);
double subject_similarity(const std::vector<Tensor>& generated, const std::vector<Tensor>& references,
                          Embedder& embedder);

}  // namespace pplus
