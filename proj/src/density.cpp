#include "pplus/density.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pplus {

namespace {
constexpr double kLog2Pi = 1.8378770664093454835606594728112;
constexpr double kBandwidthFloor = 1e-6;
}  // namespace

LookupTable::LookupTable(std::shared_ptr<std::vector<double>> natural, int64_t natural_rows, int64_t dim)
    : natural_(std::move(natural)), natural_rows_(natural_rows), dim_(dim) {
  if (static_cast<int64_t>(natural_->size()) != natural_rows_ * dim_) {
    throw std::invalid_argument("lookup table storage does not match rows x dim");
  }
}

int64_t LookupTable::append_optimized(std::vector<double> row) {
  if (static_cast<int64_t>(row.size()) != dim_) {
    throw std::invalid_argument("appended row has wrong dimension");
  }
  appended_.push_back(std::move(row));
  return natural_rows_ + static_cast<int64_t>(appended_.size()) - 1;
}

std::vector<double> LookupTable::row(int64_t i) const {
  if (i < 0 || i >= total_rows()) throw std::invalid_argument("lookup row out of range");
  if (i < natural_rows_) {
    return std::vector<double>(natural_->begin() + i * dim_, natural_->begin() + (i + 1) * dim_);
  }
  return appended_[static_cast<size_t>(i - natural_rows_)];
}

DensityModel fit_density_rows(const std::vector<double>& rows, int64_t n, int64_t dim,
                              const BandwidthPolicy& policy) {
  if (n < 2) throw std::invalid_argument("density reference set needs at least 2 rows");
  if (static_cast<int64_t>(rows.size()) != n * dim) {
    throw std::invalid_argument("density rows size mismatch");
  }
  DensityModel m;
  m.n = n;
  m.dim = dim;
  m.joint = policy.joint;
  m.ref = rows;
  m.bandwidth.resize(static_cast<size_t>(dim));
  // Scott's factor: n^(-1/5) per dimension; n^(-1/(d+4)) for the joint mode.
  const double factor = policy.joint ? std::pow(static_cast<double>(n), -1.0 / (static_cast<double>(dim) + 4.0))
                                     : std::pow(static_cast<double>(n), -0.2);
  for (int64_t j = 0; j < dim; ++j) {
    double h;
    if (policy.fixed > 0.0) {
      h = policy.fixed;
    } else {
      double mu = 0.0;
      for (int64_t i = 0; i < n; ++i) mu += rows[static_cast<size_t>(i * dim + j)];
      mu /= static_cast<double>(n);
      double var = 0.0;
      for (int64_t i = 0; i < n; ++i) {
        const double d = rows[static_cast<size_t>(i * dim + j)] - mu;
        var += d * d;
      }
      var /= static_cast<double>(n);
      h = factor * std::sqrt(var);
    }
    if (h < kBandwidthFloor) {
      m.warnings.push_back("dimension " + std::to_string(j) + " has near-zero variance; bandwidth floored");
      h = kBandwidthFloor;
    }
    m.bandwidth[static_cast<size_t>(j)] = h;
  }
  return m;
}

DensityModel fit_density(const LookupTable& table, const BandwidthPolicy& policy) {
  return fit_density_rows(table.natural_flat(), table.natural_rows(), table.dim(), policy);
}

double DensityModel::log_density(const std::vector<double>& x) const {
  if (static_cast<int64_t>(x.size()) != dim) {
    throw std::invalid_argument("density query has wrong dimension");
  }
  const double logn = std::log(static_cast<double>(n));
  if (!joint) {
    // sum over dims of log mean 1-d kernel, each via log-sum-exp
    double total = 0.0;
    for (int64_t j = 0; j < dim; ++j) {
      const double h = bandwidth[static_cast<size_t>(j)];
      double mx = -std::numeric_limits<double>::infinity();
      for (int64_t i = 0; i < n; ++i) {
        const double d = (x[static_cast<size_t>(j)] - ref[static_cast<size_t>(i * dim + j)]) / h;
        mx = std::max(mx, -0.5 * d * d);
      }
      double sum = 0.0;
      for (int64_t i = 0; i < n; ++i) {
        const double d = (x[static_cast<size_t>(j)] - ref[static_cast<size_t>(i * dim + j)]) / h;
        sum += std::exp(-0.5 * d * d - mx);
      }
      total += mx + std::log(sum) - logn - std::log(h) - 0.5 * kLog2Pi;
    }
    return total;
  }
  double mx = -std::numeric_limits<double>::infinity();
  std::vector<double> logits(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    double q = 0.0;
    for (int64_t j = 0; j < dim; ++j) {
      const double d = (x[static_cast<size_t>(j)] - ref[static_cast<size_t>(i * dim + j)]) /
                       bandwidth[static_cast<size_t>(j)];
      q += d * d;
    }
    logits[static_cast<size_t>(i)] = -0.5 * q;
    mx = std::max(mx, logits[static_cast<size_t>(i)]);
  }
  double sum = 0.0;
  for (double l : logits) sum += std::exp(l - mx);
  double norm = 0.0;
  for (double h : bandwidth) norm += std::log(h) + 0.5 * kLog2Pi;
  return mx + std::log(sum) - logn - norm;
}

std::vector<double> DensityModel::log_density_grad(const std::vector<double>& x) const {
  if (static_cast<int64_t>(x.size()) != dim) {
    throw std::invalid_argument("density query has wrong dimension");
  }
  std::vector<double> grad(static_cast<size_t>(dim), 0.0);
  if (!joint) {
    for (int64_t j = 0; j < dim; ++j) {
      const double h = bandwidth[static_cast<size_t>(j)];
      double mx = -std::numeric_limits<double>::infinity();
      for (int64_t i = 0; i < n; ++i) {
        const double d = (x[static_cast<size_t>(j)] - ref[static_cast<size_t>(i * dim + j)]) / h;
        mx = std::max(mx, -0.5 * d * d);
      }
      double wsum = 0.0, dsum = 0.0;
      for (int64_t i = 0; i < n; ++i) {
        const double delta = x[static_cast<size_t>(j)] - ref[static_cast<size_t>(i * dim + j)];
        const double d = delta / h;
        const double w = std::exp(-0.5 * d * d - mx);
        wsum += w;
        dsum += w * (-delta / (h * h));
      }
      grad[static_cast<size_t>(j)] = dsum / wsum;
    }
    return grad;
  }
  std::vector<double> logits(static_cast<size_t>(n));
  double mx = -std::numeric_limits<double>::infinity();
  for (int64_t i = 0; i < n; ++i) {
    double q = 0.0;
    for (int64_t j = 0; j < dim; ++j) {
      const double d = (x[static_cast<size_t>(j)] - ref[static_cast<size_t>(i * dim + j)]) /
                       bandwidth[static_cast<size_t>(j)];
      q += d * d;
    }
    logits[static_cast<size_t>(i)] = -0.5 * q;
    mx = std::max(mx, logits[static_cast<size_t>(i)]);
  }
  double wsum = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double w = std::exp(logits[static_cast<size_t>(i)] - mx);
    wsum += w;
    for (int64_t j = 0; j < dim; ++j) {
      const double h = bandwidth[static_cast<size_t>(j)];
      const double delta = x[static_cast<size_t>(j)] - ref[static_cast<size_t>(i * dim + j)];
      grad[static_cast<size_t>(j)] += w * (-delta / (h * h));
    }
  }
  for (double& g : grad) g /= wsum;
  return grad;
}

std::vector<DensityRow> density_report(const DensityModel& model, const LookupTable& table,
                                       const std::vector<LabeledEmbedding>& extra) {
  std::vector<double> natural_scores(static_cast<size_t>(table.natural_rows()));
  for (int64_t i = 0; i < table.natural_rows(); ++i) {
    natural_scores[static_cast<size_t>(i)] = model.log_density(table.row(i));
  }
  std::vector<double> sorted = natural_scores;
  std::sort(sorted.begin(), sorted.end());
  auto percentile = [&sorted](double v) {
    const auto it = std::upper_bound(sorted.begin(), sorted.end(), v);
    return 100.0 * static_cast<double>(it - sorted.begin()) / static_cast<double>(sorted.size());
  };

  std::vector<DensityRow> rows;
  for (int64_t i = 0; i < table.natural_rows(); ++i) {
    const double v = natural_scores[static_cast<size_t>(i)];
    rows.push_back(DensityRow{"natural", i, -1, v, percentile(v)});
  }
  for (const auto& e : extra) {
    const double v = model.log_density(e.value);
    rows.push_back(DensityRow{e.group, -1, e.layer, v, percentile(v)});
  }
  return rows;
}

}  // namespace pplus
