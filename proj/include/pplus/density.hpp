#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace pplus {

// Token lookup table view: the natural (pretrained) rows form the density
// reference set; rows appended afterwards (optimized tokens) never do.
class LookupTable {
 public:
  LookupTable(std::shared_ptr<std::vector<double>> natural, int64_t natural_rows, int64_t dim);

  int64_t natural_rows() const { return natural_rows_; }
  int64_t dim() const { return dim_; }
  int64_t total_rows() const { return natural_rows_ + static_cast<int64_t>(appended_.size()); }

  int64_t append_optimized(std::vector<double> row);
  std::vector<double> row(int64_t i) const;
  const std::vector<double>& natural_flat() const { return *natural_; }

 private:
  std::shared_ptr<std::vector<double>> natural_;
  int64_t natural_rows_;
  int64_t dim_;
  std::vector<std::vector<double>> appended_;
};

struct BandwidthPolicy {
  double fixed = 0.0;  // > 0 overrides Scott's rule
  bool joint = false;  // joint product-kernel estimate instead of per-dimension
};

// Gaussian KDE over the reference rows. In the default per-dimension mode
// the score is the sum over dimensions of log of the mean 1-d kernel value;
// the joint mode uses one log-sum-exp over reference points.
struct DensityModel {
  int64_t n = 0;
  int64_t dim = 0;
  bool joint = false;
  std::vector<double> ref;        // n x dim, row-major
  std::vector<double> bandwidth;  // per dimension, all > 0
  std::vector<std::string> warnings;

  double log_density(const std::vector<double>& x) const;
  std::vector<double> log_density_grad(const std::vector<double>& x) const;
};

DensityModel fit_density(const LookupTable& table, const BandwidthPolicy& policy = {});
DensityModel fit_density_rows(const std::vector<double>& rows, int64_t n, int64_t dim,
                              const BandwidthPolicy& policy = {});

struct DensityRow {
  std::string group;  // natural | ti | xti
  int64_t token_id;   // natural-token id, or -1
  int64_t layer;      // XTI layer index, or -1
  double log_density;
  double percentile;  // placement within the natural-token distribution
};

struct LabeledEmbedding {
  std::string group;
  int64_t layer;
  std::vector<double> value;
};

// Scores every natural token plus the given optimized embeddings.
std::vector<DensityRow> density_report(const DensityModel& model, const LookupTable& table,
                                       const std::vector<LabeledEmbedding>& extra);

}  // namespace pplus
