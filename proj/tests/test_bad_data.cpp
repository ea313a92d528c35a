#include "doctest.h"

#include <cmath>
#include <random>
#include <sstream>

#include "critcase/bad_data.hpp"
#include "support.hpp"

using namespace critcase;
using testsupport::make_dataset;

namespace {

MeasurementDataset gaussian_dataset(std::size_t nodes, std::size_t times, std::uint64_t seed, double sd = 40.0) {
  auto ds = make_dataset(nodes, times);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(6351.0, sd);
  for (std::size_t t = 0; t < times; ++t) {
    for (std::size_t n = 0; n < nodes; ++n) ds.voltages.set(t, n, g(rng));
  }
  return ds;
}

}  // namespace

TEST_CASE("fit_gaussian") {
  const std::vector<double> flat{5.0, 5.0, 5.0};
  const auto f = fit_gaussian(flat);
  CHECK(f.mu == 5.0);
  CHECK(f.sigma == 0.0);
  CHECK(f.n == 3);

  const std::vector<double> ramp{1, 2, 3, 4, 5};
  const auto r = fit_gaussian(ramp);
  CHECK(r.mu == doctest::Approx(3.0));
  CHECK(r.sigma == doctest::Approx(1.41421).epsilon(1e-5));

  const std::vector<double> one{1.0};
  CHECK_THROWS_AS(fit_gaussian(one), Error);

  // sigma is zero only for constant input, even with awkward magnitudes
  const std::vector<double> near{6351.1, 6351.1, 6351.1, std::nextafter(6351.1, 7000.0)};
  CHECK(fit_gaussian(near).sigma > 0.0);
  const std::vector<double> same(1000, 0.1);
  CHECK(fit_gaussian(same).sigma == 0.0);
}

TEST_CASE("three-sigma coverage of a large Gaussian sample") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g(6351.0, 40.0);
  std::vector<double> v(100000);
  for (double& x : v) x = g(rng);
  const auto f = fit_gaussian(v);
  std::size_t inside = 0;
  for (double x : v) inside += std::abs(x - f.mu) <= 3.0 * f.sigma;
  CHECK(static_cast<double>(inside) / v.size() == doctest::Approx(0.997).epsilon(0.002 / 0.997));
}

TEST_CASE("clean data loses nothing at 7 sigma") {
  auto ds = make_dataset(3, 300);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (std::size_t t = 0; t < 300; ++t)
    for (std::size_t n = 0; n < 3; ++n) ds.voltages.set(t, n, 6351.0 + 20.0 * u(rng));
  const auto r = detect_bad_data(ds);
  CHECK(r.ledger.removed.empty());
  CHECK(r.clean == ds);
}

TEST_CASE("single planted outlier at 8 sigma is the only removal") {
  auto ds = gaussian_dataset(4, 500, 5);
  const auto base = fit_gaussian(present_voltages(ds));
  // Outlier built from the fit of the uncontaminated data.
  ds.voltages.set(123, 2, base.mu + 8.0 * base.sigma);
  const auto r = detect_bad_data(ds, 7.0);
  REQUIRE(r.ledger.removed.size() == 1);
  CHECK(r.ledger.removed[0] == SampleRef{2, 123, base.mu + 8.0 * base.sigma});
  CHECK_FALSE(r.clean.voltages.present(123, 2));
}

TEST_CASE("6.9 sigma is retained at k = 7") {
  auto ds = gaussian_dataset(4, 500, 6);
  const auto base = fit_gaussian(present_voltages(ds));
  ds.voltages.set(10, 1, base.mu + 6.9 * base.sigma);
  const auto r = detect_bad_data(ds, 7.0);
  // The contaminated fit only widens the band, so the sample stays.
  CHECK(r.ledger.removed.empty());
  CHECK(r.clean.voltages.present(10, 1));
}

TEST_CASE("ledger invariants") {
  auto ds = gaussian_dataset(5, 400, 8);
  ds.voltages.set(3, 0, 9000.0);
  ds.voltages.set(9, 4, 3000.0);
  ds.voltages.clear(11, 2);
  for (auto scope : {FitScope::pooled, FitScope::per_node}) {
    for (double k : {2.0, 3.0, 7.0}) {
      const auto r = detect_bad_data(ds, k, scope);
      for (const auto& b : r.ledger.bands) CHECK(b.hi - b.lo == doctest::Approx(2.0 * k * b.fit.sigma));
      for (const auto& s : r.ledger.removed) {
        CHECK_FALSE(r.ledger.band_for(s.node).contains(s.value));
        CHECK(ds.voltages.value(s.t_index, s.node) == s.value);
      }
      CHECK(std::is_sorted(r.ledger.removed.begin(), r.ledger.removed.end(), [](const auto& a, const auto& b) {
        return std::pair(a.node, a.t_index) < std::pair(b.node, b.t_index);
      }));
      // clean plus removed rebuilds the input
      auto rebuilt = r.clean;
      for (const auto& s : r.ledger.removed) rebuilt.voltages.set(s.t_index, s.node, s.value);
      CHECK(rebuilt == ds);
      // a second pass with the recorded bands removes nothing
      std::vector<SampleRef> again;
      const auto twice = apply_bands(r.clean, r.ledger, again);
      CHECK(again.empty());
      CHECK(twice == r.clean);
    }
  }
}

TEST_CASE("pooled fit equals the fit over all present voltages") {
  auto ds = gaussian_dataset(3, 200, 9);
  ds.voltages.clear(0, 0);
  const auto r = detect_bad_data(ds);
  const auto f = fit_gaussian(present_voltages(ds));
  REQUIRE(r.ledger.bands.size() == 1);
  CHECK(r.ledger.bands[0].fit.mu == f.mu);
  CHECK(r.ledger.bands[0].fit.sigma == f.sigma);
  CHECK(r.ledger.bands[0].fit.n == 599);
}

TEST_CASE("removal count is monotone in k") {
  auto ds = gaussian_dataset(4, 1000, 10);
  std::size_t previous = std::numeric_limits<std::size_t>::max();
  for (double k = 0.5; k <= 8.0; k += 0.25) {
    const auto n = detect_bad_data(ds, k).ledger.removed.size();
    CHECK(n <= previous);
    previous = n;
  }
}

TEST_CASE("three sigma removes about 0.3 percent and warns") {
  const auto ds = gaussian_dataset(10, 10000, 12);
  const auto r = detect_bad_data(ds, 3.0);
  const double frac = static_cast<double>(r.ledger.removed.size()) / ds.voltages.present_count();
  CHECK(std::abs(frac - 0.0027) < 0.002);
  CHECK_FALSE(r.warnings.empty());
  CHECK(detect_bad_data(ds, 7.0).warnings.empty());
}

TEST_CASE("per-node scope") {
  auto ds = gaussian_dataset(2, 300, 13);
  // Node 1 sits far below node 0; pooled would flag none of its own outliers.
  for (std::size_t t = 0; t < 300; ++t) ds.voltages.set(t, 1, ds.voltages.value(t, 1) - 2000.0);
  const auto f1 = fit_gaussian(std::vector<double>(
      [&] {
        std::vector<double> v;
        for (std::size_t t = 0; t < 300; ++t) v.push_back(ds.voltages.value(t, 1));
        return v;
      }()));
  ds.voltages.set(50, 1, f1.mu + 12.0 * f1.sigma);
  CHECK(detect_bad_data(ds, 7.0, FitScope::pooled).ledger.removed.empty());
  const auto r = detect_bad_data(ds, 7.0, FitScope::per_node);
  REQUIRE(r.ledger.removed.size() == 1);
  CHECK(r.ledger.removed[0].node == 1);
  CHECK(r.ledger.bands.size() == 2);
  CHECK(r.ledger.band_for(1).node == NodeId{1});

  auto sparse = make_dataset(2, 5);
  for (std::size_t t = 1; t < 5; ++t) sparse.voltages.clear(t, 1);
  CHECK_THROWS_AS(detect_bad_data(sparse, 7.0, FitScope::per_node), Error);
}

TEST_CASE("qq points") {
  const std::vector<double> two{1.0, 3.0};
  const auto q = qq_points(two);
  REQUIRE(q.size() == 2);
  // plotting positions 0.25 and 0.75, scaled by mu 2 and sigma 1
  CHECK(q[0].theoretical == doctest::Approx(2.0 + normal_quantile(0.25)));
  CHECK(q[1].theoretical == doctest::Approx(2.0 + normal_quantile(0.75)));
  CHECK(normal_quantile(0.75) == doctest::Approx(0.6744897501960817));
  CHECK(q[0].empirical == 1.0);
  CHECK(q[1].empirical == 3.0);
  CHECK_THROWS(qq_points(std::vector<double>{1.0}));

  std::mt19937_64 rng(14);
  std::normal_distribution<double> g(6351.0, 40.0);
  std::vector<double> v(5000);
  for (double& x : v) x = g(rng);
  auto pts = qq_points(v);
  CHECK(pts.size() == v.size());
  // near the identity line away from the extremes
  for (std::size_t i = 250; i < 4750; ++i) CHECK(std::abs(pts[i].empirical - pts[i].theoretical) < 8.0);

  const auto f = fit_gaussian(v);
  v.push_back(f.mu + 8.0 * f.sigma);
  pts = qq_points(v);
  const auto f2 = fit_gaussian(v);
  CHECK(pts.back().empirical - pts.back().theoretical > 4.0 * f2.sigma);
}

TEST_CASE("ledger csv") {
  auto ds = make_dataset(2, 200);
  ds.voltages.set(7, 1, 9000.0);
  const auto r = detect_bad_data(ds, 3.0);
  std::ostringstream os;
  write_ledger_csv(os, r.ledger, ds);
  const auto text = os.str();
  CHECK(text.rfind("node,timestamp,voltage,band_lo,band_hi\n", 0) == 0);
  CHECK(text.find("B,2017-01-05T01:10:00,9000,") != std::string::npos);
  CHECK(fit_scope_from_string(to_string(FitScope::per_node)) == FitScope::per_node);
}
