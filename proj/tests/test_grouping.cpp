#include "doctest.h"

#include <random>
#include <set>
#include <sstream>

#include "critcase/grouping.hpp"
#include "critcase/synth.hpp"
#include "support.hpp"

using namespace critcase;
using testsupport::brute_pearson;
using testsupport::make_dataset;

namespace {

using Series = std::vector<std::optional<double>>;

Series series(std::initializer_list<double> v) { return Series(v.begin(), v.end()); }

Series random_series(std::mt19937_64& rng, std::size_t n, double missing_rate = 0.0) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Series s(n);
  const double scale = std::exp(3.0 * g(rng));
  const double offset = 1000.0 * g(rng);
  for (auto& x : s) {
    if (u(rng) >= missing_rate) x = offset + scale * g(rng);
  }
  return s;
}

VoltageDiffMatrix diff_from(std::size_t n, const std::vector<std::tuple<std::size_t, std::size_t, double>>& entries) {
  VoltageDiffMatrix d;
  d.d = PairMatrix(n);
  for (std::size_t i = 0; i < n; ++i) d.d.set(i, i, 0.0, 100);
  for (const auto& [i, j, v] : entries) d.d.set(i, j, v, 100);
  return d;
}

Topology chain(std::size_t n) {
  Topology t;
  for (std::size_t i = 0; i < n; ++i) t.nodes.push_back({std::string(1, static_cast<char>('a' + i)), false});
  for (std::size_t i = 1; i < n; ++i) t.edges.push_back({i - 1, i});
  return t;
}

}  // namespace

TEST_CASE("voltage difference matrix") {
  SUBCASE("identical series") {
    auto ds = make_dataset(2, 150);
    for (std::size_t t = 0; t < 150; ++t) {
      ds.voltages.set(t, 0, 6300.0 + t);
      ds.voltages.set(t, 1, 6300.0 + t);
    }
    CHECK(voltage_diff_matrix(ds).d.at(0, 1) == 0.0);
  }
  SUBCASE("constant offset") {
    auto ds = make_dataset(2, 150);
    for (std::size_t t = 0; t < 150; ++t) ds.voltages.set(t, 1, 6360.0);
    const auto d = voltage_diff_matrix(ds);
    CHECK(d.d.at(0, 1) == 9.0);
    CHECK(d.d.at(1, 0) == 9.0);
    CHECK(d.d.at(0, 0) == 0.0);
    CHECK(d.d.support(0, 1) == 150);
  }
  SUBCASE("two samples: mean_abs 1.5, p95 3.0") {
    auto ds = make_dataset(2, 2);
    ds.voltages.set(0, 0, 100.0);
    ds.voltages.set(1, 0, 102.0);
    ds.voltages.set(0, 1, 100.0);
    ds.voltages.set(1, 1, 99.0);
    CHECK(voltage_diff_matrix(ds, DiffMetric::mean_abs, 1).d.at(0, 1) == 1.5);
    CHECK(voltage_diff_matrix(ds, DiffMetric::p95_abs, 1).d.at(0, 1) == 3.0);
  }
  SUBCASE("only common samples count") {
    auto ds = make_dataset(3, 200);
    for (std::size_t t = 0; t < 200; ++t) ds.voltages.set(t, 1, 6361.0);
    for (std::size_t t = 0; t < 50; ++t) {
      ds.voltages.clear(t, 0);
      ds.voltages.set(t, 1, 1.0);
    }
    const auto d = voltage_diff_matrix(ds);
    CHECK(d.d.at(0, 1) == 10.0);
    CHECK(d.d.support(0, 1) == 150);
  }
  SUBCASE("insufficient support on an edge names the pair") {
    auto ds = make_dataset(3, 120);
    for (std::size_t t = 0; t < 30; ++t) ds.voltages.clear(t, 2);
    try {
      voltage_diff_matrix(ds);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("B") != std::string::npos);
      CHECK(std::string(e.what()).find("C") != std::string::npos);
    }
    // Non-adjacent pairs with low support are simply undefined.
    auto ds2 = make_dataset(3, 120);
    ds2.topology.edges = {{0, 1}};
    for (std::size_t t = 0; t < 30; ++t) ds2.voltages.clear(t, 2);
    CHECK_FALSE(voltage_diff_matrix(ds2).d.at(0, 2).has_value());
  }
}

TEST_CASE("nearest rank percentile") {
  CHECK(nearest_rank_percentile({1.0, 3.0}, 0.95) == 3.0);
  CHECK(nearest_rank_percentile({5.0}, 0.95) == 5.0);
  std::vector<double> v;
  for (int i = 1; i <= 100; ++i) v.push_back(i);
  CHECK(nearest_rank_percentile(v, 0.95) == 95.0);
  CHECK(nearest_rank_percentile(v, 0.951) == 96.0);
}

TEST_CASE("group_by_voltage") {
  SUBCASE("threshold zero keeps every node alone") {
    const auto topo = chain(4);
    const auto d = diff_from(4, {{0, 1, 1.0}, {1, 2, 2.0}, {2, 3, 0.5}});
    CHECK(group_by_voltage(topo, d, 0.0, 11000.0).groups.size() == 4);
  }
  SUBCASE("chain with 10 V and 30 V at 22 V") {
    const auto topo = chain(3);
    const auto d = diff_from(3, {{0, 1, 10.0}, {1, 2, 30.0}});
    const auto p = group_by_voltage(topo, d, 0.2, 11000.0);
    REQUIRE(p.groups.size() == 2);
    CHECK(p.groups[0].nodes == std::vector<NodeId>{0, 1});
    CHECK(p.groups[1].nodes == std::vector<NodeId>{2});
    for (const auto& g : p.groups) CHECK(g.origin == GroupOrigin::voltage_component);
  }
  SUBCASE("exactly at the threshold merges") {
    const auto topo = chain(2);
    CHECK(group_by_voltage(topo, diff_from(2, {{0, 1, 22.0}}), 0.2, 11000.0).groups.size() == 1);
  }
  SUBCASE("non-adjacent equal voltages stay apart") {
    const auto topo = chain(3);
    const auto d = diff_from(3, {{0, 1, 50.0}, {1, 2, 50.0}, {0, 2, 0.0}});
    CHECK(group_by_voltage(topo, d, 0.2, 11000.0).groups.size() == 3);
  }
  SUBCASE("ordered by smallest node") {
    Topology t = chain(4);
    t.edges = {{3, 0}, {1, 2}};
    const auto p = group_by_voltage(t, diff_from(4, {{0, 3, 1.0}, {1, 2, 1.0}}), 0.2, 11000.0);
    REQUIRE(p.groups.size() == 2);
    CHECK(p.groups[0].nodes == std::vector<NodeId>{0, 3});
    CHECK(p.groups[1].nodes == std::vector<NodeId>{1, 2});
  }
}

TEST_CASE("default feeder analog forms three voltage components") {
  const auto [ds, truth] = generate(default_feeder_spec());
  const auto d = voltage_diff_matrix(ds);
  const auto p = group_by_voltage(ds.topology, d, 0.2, 11000.0);
  REQUIRE(p.groups.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(p.groups[i].nodes == truth.groups[i].nodes);
}

TEST_CASE("random topologies: partition laws and threshold monotonicity") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng() % 30;
    Topology t;
    for (std::size_t i = 0; i < n; ++i) t.nodes.push_back({"n" + std::to_string(i), rng() % 2 == 0});
    std::set<std::pair<NodeId, NodeId>> used;
    const std::size_t m = rng() % (2 * n);
    std::vector<std::tuple<std::size_t, std::size_t, double>> entries;
    for (std::size_t e = 0; e < m; ++e) {
      NodeId a = rng() % n, b = rng() % n;
      if (a == b || !used.insert(std::minmax(a, b)).second) continue;
      t.edges.push_back({a, b});
      entries.emplace_back(a, b, static_cast<double>(rng() % 60));
    }
    const auto d = diff_from(n, entries);
    std::size_t previous = n + 1;
    for (double pct = 0.0; pct <= 0.6; pct += 0.05) {
      const auto p = group_by_voltage(t, d, pct, 11000.0);
      CHECK(check_partition(p, t).empty());
      CHECK(p.groups.size() <= previous);
      previous = p.groups.size();
    }
  }
}

TEST_CASE("pearson examples") {
  const auto x = series({1, 2, 3, 5, 8});
  Series neg;
  for (const auto& v : x) neg.push_back(-*v);
  CHECK(*pearson_correlation(x, x, 2) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(*pearson_correlation(x, neg, 2) == doctest::Approx(-1.0).epsilon(1e-12));
  const auto r = pearson_correlation(series({1, 2, 3}), series({1, 2, 4}), 2);
  REQUIRE(r.has_value());
  CHECK(*r == doctest::Approx(0.98198).epsilon(1e-5));
  CHECK(std::abs(*r - *brute_pearson(series({1, 2, 3}), series({1, 2, 4}))) < 1e-12);
  // default support of 100 leaves a short overlap undefined
  CHECK_FALSE(pearson_correlation(series({1, 2, 3}), series({1, 2, 4})).has_value());
  // constant side is undefined
  CHECK_FALSE(pearson_correlation(series({1, 2, 3}), series({4, 4, 4}), 2).has_value());
  // missing cells are skipped, not read
  Series a{1.0, std::nullopt, 3.0, 4.0}, b{2.0, 100.0, 6.0, std::nullopt};
  CHECK(*pearson_correlation(a, b, 2) == doctest::Approx(1.0));
}

TEST_CASE("pearson matches brute force, symmetric, scale and offset invariant") {
  std::mt19937_64 rng(99);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 100 + rng() % 400;
    const auto x = random_series(rng, n, trial % 3 == 0 ? 0.1 : 0.0);
    auto y = random_series(rng, n, trial % 5 == 0 ? 0.1 : 0.0);
    const double mix = g(rng);
    for (std::size_t i = 0; i < n; ++i)
      if (x[i] && y[i]) y[i] = *y[i] + mix * *x[i];
    const auto r = pearson_correlation(x, y, 2);
    const auto oracle = brute_pearson(x, y);
    REQUIRE(r.has_value());
    REQUIRE(oracle.has_value());
    CHECK(std::abs(*r - *oracle) < 1e-9);
    CHECK(*pearson_correlation(y, x, 2) == *r);
    const double a = (trial % 2 ? -1.0 : 1.0) * std::exp(2.0 * g(rng));
    const double b = 1e3 * g(rng);
    Series z(n);
    for (std::size_t i = 0; i < n; ++i)
      if (x[i]) z[i] = a * *x[i] + b;
    CHECK(std::abs(*pearson_correlation(z, y, 2) - (a > 0 ? 1.0 : -1.0) * *r) < 1e-9);
  }
}

TEST_CASE("correlation refinement") {
  auto ds = make_dataset(4, 300);
  for (NodeId n = 0; n < 4; ++n) ds.topology.nodes[n].has_load = true;
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(0.0, 1.0);
  GroupPartition one{{NodeGroup{{0, 1, 2, 3}, GroupOrigin::voltage_component}}};

  SUBCASE("identical load signals never split") {
    for (std::size_t t = 0; t < 300; ++t) {
      const double c = 20.0 + g(rng);
      for (NodeId n = 0; n < 4; ++n) ds.currents.set(t, n, c);
    }
    const auto r = refine_by_correlation(one, ds);
    CHECK(r.partition == one);
    for (const auto& s : r.scores) CHECK(*s.mean_correlation == doctest::Approx(1.0));
  }
  SUBCASE("one independent load is split out") {
    // Six loads so the peers' means stay above the limit with one stranger among them.
    auto six = make_dataset(6, 300);
    for (NodeId n = 0; n < 6; ++n) six.topology.nodes[n].has_load = true;
    for (std::size_t t = 0; t < 300; ++t) {
      const double c = 20.0 + 5.0 * g(rng);
      for (NodeId n = 0; n < 6; ++n) six.currents.set(t, n, c + 0.5 * g(rng));
      six.currents.set(t, 2, 20.0 + g(rng));
    }
    GroupPartition p{{NodeGroup{{0, 1, 2, 3, 4, 5}, GroupOrigin::voltage_component}}};
    const auto r = refine_by_correlation(p, six);
    REQUIRE(r.partition.groups.size() == 2);
    CHECK(r.partition.groups[0].nodes == std::vector<NodeId>{0, 1, 3, 4, 5});
    CHECK(r.partition.groups[1].nodes == std::vector<NodeId>{2});
    CHECK(r.partition.groups[1].origin == GroupOrigin::correlation_split);
    // the remaining group is connected through the split-off node
    CHECK(check_partition(r.partition, six.topology).empty());
    CHECK(r.scores.size() == 6);
    CHECK(r.scores[2].split);
  }
  SUBCASE("two loads at 0.3: one pass splits only the lower id") {
    auto two = make_dataset(2, 400);
    two.topology.nodes[0].has_load = two.topology.nodes[1].has_load = true;
    for (std::size_t t = 0; t < 400; ++t) {
      const double common = g(rng);
      two.currents.set(t, 0, 30.0 + 0.3 * common + std::sqrt(0.91) * g(rng));
      two.currents.set(t, 1, 30.0 + 0.3 * common + std::sqrt(0.91) * g(rng));
    }
    const auto r0 = pearson_correlation(two.currents.column(0), two.currents.column(1));
    REQUIRE(r0.has_value());
    REQUIRE(*r0 < 0.7);
    GroupPartition p{{NodeGroup{{0, 1}, GroupOrigin::voltage_component}}};
    const auto r = refine_by_correlation(p, two);
    REQUIRE(r.partition.groups.size() == 2);
    CHECK(r.partition.groups[0].nodes == std::vector<NodeId>{0});
    CHECK(r.partition.groups[0].origin == GroupOrigin::correlation_split);
    CHECK(r.partition.groups[1].nodes == std::vector<NodeId>{1});
    CHECK(r.partition.groups[1].origin == GroupOrigin::voltage_component);
  }
  SUBCASE("a group with one load is never split") {
    auto solo = make_dataset(3, 200);
    solo.topology.nodes[1].has_load = true;
    for (std::size_t t = 0; t < 200; ++t) solo.currents.set(t, 1, 10.0 + g(rng));
    GroupPartition p{{NodeGroup{{0, 1, 2}, GroupOrigin::voltage_component}}};
    CHECK(refine_by_correlation(p, solo).partition == p);
  }
  SUBCASE("a load with no current at all in a multi-load group is an error") {
    for (std::size_t t = 0; t < 300; ++t)
      for (NodeId n = 0; n < 3; ++n) ds.currents.set(t, n, 10.0 + g(rng));
    CHECK_THROWS_AS(refine_by_correlation(one, ds), Error);
  }
  SUBCASE("voltage signal mode") {
    for (std::size_t t = 0; t < 300; ++t) {
      const double v = 6351.0 + 10.0 * g(rng);
      for (NodeId n = 0; n < 4; ++n) ds.voltages.set(t, n, v + 0.1 * g(rng));
    }
    const auto r = refine_by_correlation(one, ds, 0.7, CorrelationSignal::voltage);
    CHECK(r.partition == one);
  }
}

TEST_CASE("default feeder analog: five groups, two singleton splits at N07 and N38") {
  const auto [ds, truth] = generate(default_feeder_spec());
  const auto d = voltage_diff_matrix(ds);
  const auto r = refine_by_correlation(group_by_voltage(ds.topology, d, 0.2, 11000.0), ds);
  REQUIRE(r.partition.groups.size() == 5);
  std::vector<std::string> split_labels;
  for (const auto& g : r.partition.groups) {
    if (g.origin == GroupOrigin::correlation_split) {
      REQUIRE(g.nodes.size() == 1);
      split_labels.push_back(ds.topology.nodes[g.nodes[0]].label);
    }
  }
  CHECK(split_labels == std::vector<std::string>{"N07", "N38"});
  CHECK(check_partition(r.partition, ds.topology).empty());
  // Correlation matrix properties.
  const auto& cm = r.correlation;
  CHECK(cm.nodes.size() == 16);
  for (std::size_t i = 0; i < cm.nodes.size(); ++i) {
    CHECK(*cm.r.at(i, i) == doctest::Approx(1.0));
    for (std::size_t j = 0; j < cm.nodes.size(); ++j) {
      CHECK(cm.r.at(i, j) == cm.r.at(j, i));
      if (cm.r.at(i, j)) CHECK(std::abs(*cm.r.at(i, j)) <= 1.0);
    }
  }
}

TEST_CASE("partition checks catch broken laws") {
  const auto t = chain(3);
  CHECK_FALSE(check_partition({{NodeGroup{{0, 1}}}}, t).empty());                 // coverage
  CHECK_FALSE(check_partition({{NodeGroup{{0, 1, 2}}, NodeGroup{{1}}}}, t).empty());  // overlap
  CHECK_FALSE(check_partition({{NodeGroup{{0, 2}}, NodeGroup{{1}}}}, t).empty());     // disconnected
  CHECK_FALSE(
      check_partition({{NodeGroup{{0}}, NodeGroup{{1, 2}, GroupOrigin::correlation_split}}}, t).empty());
  CHECK(check_partition({{NodeGroup{{0, 1, 2}}}}, t).empty());
}

TEST_CASE("csv exports") {
  const auto t = chain(2);
  std::ostringstream part;
  write_partition_csv(part, {{NodeGroup{{0}}, NodeGroup{{1}, GroupOrigin::correlation_split}}}, t);
  CHECK(part.str() == "group_id,node,provenance\n1,a,voltage-component\n2,b,correlation-split\n");
  PairMatrix m(2);
  m.set(0, 0, 0.0, 5);
  m.set(0, 1, 1.5, 5);
  m.set(1, 1, 0.0, 5);
  std::ostringstream mat;
  write_pair_matrix_csv(mat, m, {"a", "b"});
  CHECK(mat.str().find("1.5") != std::string::npos);
  CHECK(diff_metric_from_string(to_string(DiffMetric::p95_abs)) == DiffMetric::p95_abs);
  CHECK(correlation_signal_from_string(to_string(CorrelationSignal::voltage)) == CorrelationSignal::voltage);
}
