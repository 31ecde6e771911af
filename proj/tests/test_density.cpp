#include <cmath>

#include "doctest.h"
#include "pplus/density.hpp"
#include "pplus/rng.hpp"
#include "testutil.hpp"

using namespace pplus;

namespace {

// Independent oracle: direct summation of the mean Gaussian kernel, no
// log-sum-exp, no shortcuts.
double naive_log_density(const DensityModel& m, const std::vector<double>& x) {
  if (!m.joint) {
    double total = 0.0;
    for (int64_t j = 0; j < m.dim; ++j) {
      const double h = m.bandwidth[static_cast<size_t>(j)];
      double mean = 0.0;
      for (int64_t i = 0; i < m.n; ++i) {
        const double d = x[static_cast<size_t>(j)] - m.ref[static_cast<size_t>(i * m.dim + j)];
        mean += std::exp(-0.5 * d * d / (h * h)) / (h * std::sqrt(2.0 * M_PI));
      }
      mean /= static_cast<double>(m.n);
      total += std::log(mean);
    }
    return total;
  }
  double mean = 0.0;
  for (int64_t i = 0; i < m.n; ++i) {
    double k = 1.0;
    for (int64_t j = 0; j < m.dim; ++j) {
      const double h = m.bandwidth[static_cast<size_t>(j)];
      const double d = x[static_cast<size_t>(j)] - m.ref[static_cast<size_t>(i * m.dim + j)];
      k *= std::exp(-0.5 * d * d / (h * h)) / (h * std::sqrt(2.0 * M_PI));
    }
    mean += k;
  }
  return std::log(mean / static_cast<double>(m.n));
}

}  // namespace

TEST_CASE("fit stores the given points and fixed bandwidth") {
  DensityModel m = fit_density_rows({0.0, 2.0}, 2, 1, BandwidthPolicy{0.5, false});
  CHECK(m.n == 2);
  CHECK(m.ref == std::vector<double>{0.0, 2.0});
  CHECK(m.bandwidth == std::vector<double>{0.5});
}

TEST_CASE("Scott bandwidth on an exactly unit-variance set") {
  std::vector<double> rows(1024);
  for (size_t i = 0; i < rows.size(); ++i) rows[i] = (i % 2 == 0) ? 1.0 : -1.0;
  DensityModel m = fit_density_rows(rows, 1024, 1);
  CHECK(std::abs(m.bandwidth[0] - std::pow(1024.0, -0.2)) <= 1e-12);
}

TEST_CASE("fit on the shipped toy table gives finite positive bandwidths") {
  Model model = pplus::test::micro_model();
  LookupTable table(model.params.at("lookup.table").value, model.vocab.natural_size(), model.cfg.enc.d);
  CHECK(table.natural_rows() == 256);
  CHECK(table.dim() == 48);
  DensityModel m = fit_density(table);
  for (double h : m.bandwidth) {
    CHECK(std::isfinite(h));
    CHECK(h > 0.0);
  }
  CHECK(m.warnings.empty());
}

TEST_CASE("zero-variance dimension gets the bandwidth floor and a warning") {
  DensityModel m = fit_density_rows({1.0, 1.0, 1.0, 1.0}, 4, 1);
  CHECK(m.bandwidth[0] == 1e-6);
  REQUIRE(m.warnings.size() == 1);
}

TEST_CASE("single reference point analytic value") {
  DensityModel m;
  m.n = 1;
  m.dim = 1;
  m.ref = {0.3};
  m.bandwidth = {0.7};
  const double v = m.log_density({0.3});
  CHECK(std::abs(v - (-std::log(0.7 * std::sqrt(2.0 * M_PI)))) <= 1e-12);
}

TEST_CASE("log-sum-exp implementation equals brute-force summation") {
  RandomSource rng(31);
  const int64_t n = 100, d = 8;
  std::vector<double> rows(static_cast<size_t>(n * d));
  for (auto& v : rows) v = rng.normal();
  for (bool joint : {false, true}) {
    DensityModel m = fit_density_rows(rows, n, d, BandwidthPolicy{0.0, joint});
    for (int q = 0; q < 20; ++q) {
      std::vector<double> x(static_cast<size_t>(d));
      for (auto& v : x) v = rng.normal();
      const double got = m.log_density(x);
      const double want = naive_log_density(m, x);
      CHECK(std::abs(got - want) <= 1e-12);
    }
  }
}

TEST_CASE("underflow guard keeps far queries finite") {
  DensityModel m = fit_density_rows({0.0, 1.0}, 2, 1, BandwidthPolicy{0.1, false});
  const double v = m.log_density({1e6});
  CHECK(std::isfinite(v));
  CHECK(v < -1e9);
}

TEST_CASE("translation equivariance") {
  RandomSource rng(32);
  const int64_t n = 40, d = 6;
  std::vector<double> rows(static_cast<size_t>(n * d));
  for (auto& v : rows) v = rng.normal();
  std::vector<double> shift(static_cast<size_t>(d));
  for (auto& v : shift) v = rng.uniform(-3.0, 3.0);

  DensityModel m = fit_density_rows(rows, n, d);
  std::vector<double> shifted = rows;
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < d; ++j) shifted[static_cast<size_t>(i * d + j)] += shift[static_cast<size_t>(j)];
  }
  DensityModel ms = fit_density_rows(shifted, n, d);
  for (int q = 0; q < 10; ++q) {
    std::vector<double> x(static_cast<size_t>(d)), xs(static_cast<size_t>(d));
    for (int64_t j = 0; j < d; ++j) {
      x[static_cast<size_t>(j)] = rng.normal();
      xs[static_cast<size_t>(j)] = x[static_cast<size_t>(j)] + shift[static_cast<size_t>(j)];
    }
    CHECK(std::abs(m.log_density(x) - ms.log_density(xs)) <= 1e-10);
  }
}

TEST_CASE("mean kernel integrates to one in 1-d") {
  RandomSource rng(33);
  std::vector<double> rows(12);
  for (auto& v : rows) v = rng.uniform(-2.0, 2.0);
  DensityModel m = fit_density_rows(rows, 12, 1);
  const double h = m.bandwidth[0];
  const double lo = *std::min_element(rows.begin(), rows.end()) - 10.0 * h;
  const double hi = *std::max_element(rows.begin(), rows.end()) + 10.0 * h;
  const int64_t steps = 20000;
  const double dx = (hi - lo) / static_cast<double>(steps);
  double integral = 0.0;
  for (int64_t i = 0; i <= steps; ++i) {
    const double x = lo + dx * static_cast<double>(i);
    const double fx = std::exp(m.log_density({x}));
    integral += (i == 0 || i == steps) ? 0.5 * fx : fx;
  }
  integral *= dx;
  CHECK(std::abs(integral - 1.0) <= 1e-4);
}

TEST_CASE("density gradient matches finite differences") {
  RandomSource rng(34);
  const int64_t n = 30, d = 5;
  std::vector<double> rows(static_cast<size_t>(n * d));
  for (auto& v : rows) v = rng.normal();
  for (bool joint : {false, true}) {
    DensityModel m = fit_density_rows(rows, n, d, BandwidthPolicy{0.0, joint});
    std::vector<double> x(static_cast<size_t>(d));
    for (auto& v : x) v = rng.normal();
    const std::vector<double> g = m.log_density_grad(x);
    const double eps = 1e-6;
    for (int64_t j = 0; j < d; ++j) {
      std::vector<double> xp = x, xm = x;
      xp[static_cast<size_t>(j)] += eps;
      xm[static_cast<size_t>(j)] -= eps;
      const double gn = (m.log_density(xp) - m.log_density(xm)) / (2.0 * eps);
      CHECK(std::abs(g[static_cast<size_t>(j)] - gn) / (std::abs(gn) + 1e-12) < 1e-8);
    }
  }
}

TEST_CASE("appended optimized rows stay out of the reference set") {
  Model model = pplus::test::micro_model();
  LookupTable table(model.params.at("lookup.table").value, model.vocab.natural_size(), model.cfg.enc.d);
  const int64_t before = table.natural_rows();
  const int64_t id = table.append_optimized(std::vector<double>(48, 0.25));
  CHECK(id == before);
  CHECK(table.total_rows() == before + 1);
  DensityModel m = fit_density(table);
  CHECK(m.n == before);

  const auto report =
      density_report(m, table, {{"ti", -1, std::vector<double>(48, 0.0)},
                                {"xti", 0, std::vector<double>(48, 0.0)},
                                {"xti", 1, std::vector<double>(48, 0.0)}});
  CHECK(report.size() == static_cast<size_t>(before) + 3);
  int ti_rows = 0, xti_rows = 0;
  for (const auto& row : report) {
    if (row.group == "natural") {
      CHECK(row.percentile >= 0.0);
      CHECK(row.percentile <= 100.0);
    } else if (row.group == "ti") {
      ++ti_rows;
    } else if (row.group == "xti") {
      ++xti_rows;
    }
  }
  CHECK(ti_rows == 1);
  CHECK(xti_rows == 2);
}
