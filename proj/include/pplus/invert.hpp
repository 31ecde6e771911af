#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pplus/density.hpp"
#include "pplus/model.hpp"

namespace pplus {

enum class InversionMode { TI, XTI };

const char* mode_name(InversionMode m);
InversionMode mode_from(const std::string& s);

struct InversionConfig {
  InversionMode mode = InversionMode::XTI;
  double lr = -1.0;     // unset -> 0.005 multi-image, 0.001 single-image
  int64_t steps = -1;   // unset -> 5000 TI, 500 XTI
  int64_t batch = 8;
  double reg_lambda = 0.0;  // 0.002 when the concept is meant for mixing
  std::string init = "coarse-word";  // coarse-word | mean-of-table | zeros
  std::string init_word;
  uint64_t seed = 0;
  int jobs = 4;
  bool single_image = false;
  std::vector<std::string> templates;  // placeholder caption bank

  InversionConfig resolved(int64_t dataset_size) const;
};

struct ConceptDataset {
  std::vector<Tensor> images;  // 1-6 renders of one subject, model-sized
  std::string init_word_hint;  // e.g. the subject's shape word
};

struct InvertedConcept {
  InversionMode mode = InversionMode::XTI;
  int64_t dim = 0;
  std::vector<std::vector<double>> embeddings;  // 1 (TI) or n (XTI)
  std::string registry_fp;
  std::vector<std::string> registry_names;
  std::string config_echo;  // JSON line
  double final_loss = 0.0;  // mean reconstruction loss over the last 50 steps
  // objective on a fixed evaluation batch before/after optimization
  double eval_initial = 0.0;
  double eval_final = 0.0;
  std::vector<double> recon_trajectory;
  std::vector<double> reg_trajectory;

  // Extended prompt that substitutes the learned embeddings into the given
  // placeholder template.
  ExtendedPrompt prompt_for(const Model& m, const std::string& template_text) const;

  void save(const std::string& path) const;
  static InvertedConcept load(const std::string& path);
};

// Initial embeddings: `coarse-word` copies the lookup row of the descriptor
// word into every slot, `mean-of-table` uses the column means of the natural
// rows, `zeros` is all zero.
std::vector<std::vector<double>> embed_init(const Model& m, const std::string& strategy,
                                            const std::string& word, int64_t count);

struct XtiBatchItem {
  int64_t image_index = 0;
  int64_t template_index = 0;
  int64_t t = 1;
  Tensor eps;
};

// Mean squared error between sampled and predicted noise.
Tensor noise_mse(const Tensor& eps, const Tensor& eps_hat);

// The (image, template, eps, t) draw used for batch element b of a step;
// deterministic in (seed, step, b) regardless of worker scheduling.
XtiBatchItem draw_batch_item(uint64_t seed, int64_t step, int64_t b, int64_t n_images,
                             int64_t n_templates, int64_t T, const Shape& img_shape);

// Reconstruction objective on `count` fixed draws; deterministic in seed.
double xti_eval_loss(const Model& m, const std::vector<Tensor>& images,
                     const std::vector<PromptTemplate>& templates,
                     const std::vector<std::vector<double>>& embeddings, int64_t count, uint64_t seed);

// Reconstruction objective: mean over batch items of the per-item MSE between
// the sampled noise and the model prediction, with layer i's template encoded
// using embeddings[i] at the placeholder (a single embedding broadcasts).
Tensor xti_loss(const Model& m, ParamView& pv, const std::vector<Tensor>& images,
                const std::vector<PromptTemplate>& templates,
                const std::vector<Tensor>& layer_embeddings, const std::vector<XtiBatchItem>& batch);

// Optimizes the placeholder embeddings against a frozen model. When
// cfg.reg_lambda > 0 the objective additionally subtracts
// lambda * sum_i log p_E(e_i), pulling embeddings toward the natural rows.
InvertedConcept invert(const Model& m, const ConceptDataset& data, const InversionConfig& cfg);

}  // namespace pplus
