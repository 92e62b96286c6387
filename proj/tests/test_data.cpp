#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "fedpt/data.hpp"

using namespace fedpt;

namespace {

std::multiset<int32_t> union_of(const FederatedDataset& fed) {
  std::multiset<int32_t> all;
  for (const auto& c : fed.clients) all.insert(c.begin(), c.end());
  return all;
}

std::vector<double> label_histogram(const Dataset& ds, const std::vector<int32_t>& idx) {
  std::vector<double> h(static_cast<size_t>(ds.num_classes), 0.0);
  for (int32_t i : idx) h[static_cast<size_t>(ds.labels[static_cast<size_t>(i)])] += 1.0;
  for (double& v : h) v /= static_cast<double>(idx.size());
  return h;
}

double tv_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s / 2.0;
}

double entropy_of(const std::vector<double>& h) {
  double e = 0.0;
  for (double p : h) {
    if (p > 0) e -= p * std::log(p);
  }
  return e;
}

}  // namespace

TEST_CASE("mixture: exact balance and zero-noise degeneracy") {
  const Dataset ds = synth_gaussian_mixture(2, {4}, 1000, 3.0, 0.5, 1);
  int c0 = 0;
  for (int32_t l : ds.labels) c0 += l == 0;
  CHECK(c0 == 500);

  const Dataset pure = synth_gaussian_mixture(3, {5}, 9, 2.0, 0.0, 1);
  for (int64_t i = 0; i < pure.size(); ++i) {
    const int k = pure.labels[static_cast<size_t>(i)];
    for (int j = 0; j < 5; ++j) {
      CHECK(pure.features(i, j) == (j == k ? 2.0f : 0.0f));
    }
  }

  CHECK_THROWS_AS(synth_gaussian_mixture(1, {4}, 100, 1.0, 1.0, 1), ConfigError);
  CHECK_THROWS_AS(synth_gaussian_mixture(4, {4}, 3, 1.0, 1.0, 1), ConfigError);
}

TEST_CASE("mixture at 6-sigma separation is learnable by an independent logistic fit") {
  // Plain softmax regression on raw features, written out longhand here so
  // it shares nothing with the library's model stack.
  const int k = 2, d = 2, n = 600;
  const Dataset ds = synth_gaussian_mixture(k, {d}, n, 6.0, 1.0, 77);

  std::vector<double> w(static_cast<size_t>(k * (d + 1)), 0.0);  // row-major, bias last
  for (int iter = 0; iter < 400; ++iter) {
    std::vector<double> grad(w.size(), 0.0);
    for (int64_t i = 0; i < n; ++i) {
      double logits[8] = {0};
      for (int c = 0; c < k; ++c) {
        for (int j = 0; j < d; ++j) logits[c] += w[static_cast<size_t>(c * (d + 1) + j)] * ds.features(i, j);
        logits[c] += w[static_cast<size_t>(c * (d + 1) + d)];
      }
      const double m = std::max(logits[0], logits[1]);
      const double z = std::exp(logits[0] - m) + std::exp(logits[1] - m);
      for (int c = 0; c < k; ++c) {
        const double p = std::exp(logits[c] - m) / z;
        const double err = p - (ds.labels[static_cast<size_t>(i)] == c ? 1.0 : 0.0);
        for (int j = 0; j < d; ++j) {
          grad[static_cast<size_t>(c * (d + 1) + j)] += err * ds.features(i, j) / n;
        }
        grad[static_cast<size_t>(c * (d + 1) + d)] += err / n;
      }
    }
    for (size_t j = 0; j < w.size(); ++j) w[j] -= 0.5 * grad[j];
  }

  int correct = 0;
  for (int64_t i = 0; i < n; ++i) {
    double best = -1e300;
    int arg = 0;
    for (int c = 0; c < k; ++c) {
      double logit = w[static_cast<size_t>(c * (d + 1) + d)];
      for (int j = 0; j < d; ++j) logit += w[static_cast<size_t>(c * (d + 1) + j)] * ds.features(i, j);
      if (logit > best) {
        best = logit;
        arg = c;
      }
    }
    correct += arg == ds.labels[static_cast<size_t>(i)];
  }
  CHECK(static_cast<double>(correct) / n >= 0.99);
}

TEST_CASE("dirichlet partition: exact quotas and conservation in full assignment") {
  auto ds = std::make_shared<Dataset>(synth_gaussian_mixture(10, {4}, 50000, 1.0, 1.0, 3));
  const FederatedDataset fed = dirichlet_partition(ds, {500, 1.0, 100, 11});
  REQUIRE(fed.num_clients() == 500);
  for (const auto& c : fed.clients) CHECK(c.size() == 100);

  // 500 x 100 fully covers the 50000 source examples.
  std::multiset<int32_t> all = union_of(fed);
  CHECK(all.size() == 50000);
  CHECK(std::set<int32_t>(all.begin(), all.end()).size() == 50000);
}

TEST_CASE("dirichlet partition: near-IID at huge alpha, single-label at tiny alpha") {
  auto ds = std::make_shared<Dataset>(synth_gaussian_mixture(4, {2}, 40000, 1.0, 1.0, 5));
  const std::vector<double> global = {0.25, 0.25, 0.25, 0.25};

  const FederatedDataset iid = dirichlet_partition(ds, {50, 1e6, 400, 21});
  for (const auto& c : iid.clients) {
    CHECK(tv_distance(label_histogram(*ds, c), global) < 0.1);
  }

  const FederatedDataset skewed = dirichlet_partition(ds, {50, 1e-6, 100, 22});
  for (const auto& c : skewed.clients) {
    const auto h = label_histogram(*ds, c);
    CHECK(*std::max_element(h.begin(), h.end()) > 0.9);
  }
}

TEST_CASE("dirichlet partition: per-client label entropy grows with alpha") {
  auto ds = std::make_shared<Dataset>(synth_gaussian_mixture(4, {2}, 40000, 1.0, 1.0, 5));
  double prev = -1.0;
  for (double alpha : {1e-6, 1.0, 1e6}) {
    const FederatedDataset fed = dirichlet_partition(ds, {50, alpha, 200, 31});
    double mean_entropy = 0.0;
    for (const auto& c : fed.clients) mean_entropy += entropy_of(label_histogram(*ds, c));
    mean_entropy /= static_cast<double>(fed.num_clients());
    CHECK(mean_entropy > prev);
    prev = mean_entropy;
  }
}

TEST_CASE("dirichlet partition: config validation") {
  auto ds = std::make_shared<Dataset>(synth_gaussian_mixture(2, {2}, 100, 1.0, 1.0, 5));
  CHECK_THROWS_AS(dirichlet_partition(ds, {10, 1.0, 11, 0}), ConfigError);  // 110 > 100
  CHECK_THROWS_AS(dirichlet_partition(ds, {0, 1.0, 10, 0}), ConfigError);
  CHECK_THROWS_AS(dirichlet_partition(ds, {10, 0.0, 10, 0}), ConfigError);
}

TEST_CASE("shard_equal: equal shards, conservation up to remainder, seed variation") {
  auto ds = std::make_shared<Dataset>(synth_gaussian_mixture(2, {2}, 100, 1.0, 1.0, 5));
  const FederatedDataset fed = shard_equal(ds, 10, 1);
  REQUIRE(fed.num_clients() == 10);
  for (const auto& c : fed.clients) CHECK(c.size() == 10);
  const std::multiset<int32_t> all = union_of(fed);
  CHECK(all.size() == 100);
  CHECK(std::set<int32_t>(all.begin(), all.end()).size() == 100);

  const FederatedDataset fed2 = shard_equal(ds, 10, 2);
  CHECK(fed.clients != fed2.clients);

  CHECK_THROWS_AS(shard_equal(ds, 101, 1), ConfigError);
}

TEST_CASE("batch_indices: partition property and degenerate batch size") {
  const std::vector<int32_t> examples = {5, 8, 13, 21, 34, 55, 89};
  Rng rng(9);
  const auto batches = batch_indices(examples, 3, rng, true);
  REQUIRE(batches.size() == 3);  // 3 + 3 + 1, last partial kept
  CHECK(batches[2].size() == 1);
  std::multiset<int32_t> flat;
  for (const auto& b : batches) flat.insert(b.begin(), b.end());
  CHECK(flat == std::multiset<int32_t>(examples.begin(), examples.end()));

  Rng rng2(9);
  const auto single = batch_indices(examples, 100, rng2, false);
  REQUIRE(single.size() == 1);
  CHECK(single[0] == examples);

  Rng rng3(9);
  CHECK_THROWS_AS(batch_indices(examples, 0, rng3, false), UsageError);
}

TEST_CASE("batch_indices: deterministic under a fixed seed") {
  const std::vector<int32_t> examples = {1, 2, 3, 4, 5, 6, 7, 8};
  Rng a(123), b(123), c(123), d(124);
  CHECK(batch_indices(examples, 3, a, true) == batch_indices(examples, 3, b, true));
  CHECK(batch_indices(examples, 3, c, true) != batch_indices(examples, 3, d, true));
}

TEST_CASE("dataset generation is byte-identical under a fixed seed") {
  const Dataset a = synth_gaussian_mixture(4, {8}, 500, 3.0, 1.0, 42);
  const Dataset b = synth_gaussian_mixture(4, {8}, 500, 3.0, 1.0, 42);
  REQUIRE(a.features.size() == b.features.size());
  for (int64_t i = 0; i < a.features.size(); ++i) {
    REQUIRE(a.features.data()[i] == b.features.data()[i]);
  }
  CHECK(a.labels == b.labels);

  const Dataset c = synth_gaussian_mixture(4, {8}, 500, 3.0, 1.0, 43);
  bool differs = false;
  for (int64_t i = 0; i < a.features.size(); ++i) {
    differs = differs || a.features.data()[i] != c.features.data()[i];
  }
  CHECK(differs);
}

TEST_CASE("dataset dump/load round trip is bit exact") {
  const auto dir = std::filesystem::temp_directory_path() / "fedpt_test_data";
  std::filesystem::create_directories(dir);
  const auto path = dir / "fed.bin";

  auto ds = std::make_shared<Dataset>(synth_gaussian_mixture(3, {2, 2, 1}, 300, 2.0, 0.7, 99));
  const FederatedDataset fed = dirichlet_partition(ds, {10, 1.0, 30, 7});
  save_dataset(path, fed);
  const FederatedDataset loaded = load_dataset(path);

  CHECK(loaded.clients == fed.clients);
  CHECK(loaded.source->num_classes == 3);
  CHECK(loaded.source->feature_shape == std::vector<int>{2, 2, 1});
  CHECK(loaded.source->labels == ds->labels);
  for (int64_t i = 0; i < ds->features.size(); ++i) {
    REQUIRE(loaded.source->features.data()[i] == ds->features.data()[i]);
  }
  std::filesystem::remove_all(dir);
}
