#include "fedpt/data.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace fedpt {

namespace {

int64_t shape_size(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

void fisher_yates(std::vector<int32_t>& v, Rng& rng) {
  for (size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[rng.below(i)]);
  }
}

}  // namespace

Dataset synth_gaussian_mixture(int num_classes, const std::vector<int>& feature_shape, int64_t n,
                               double separation, double noise_std, uint64_t seed) {
  if (num_classes < 2) throw ConfigError("synth_gaussian_mixture: need at least 2 classes");
  if (n < num_classes) throw ConfigError("synth_gaussian_mixture: need at least one example per class");
  if (feature_shape.empty()) throw ConfigError("synth_gaussian_mixture: empty feature shape");
  if (noise_std < 0.0 || separation < 0.0) {
    throw ConfigError("synth_gaussian_mixture: separation/noise must be non-negative");
  }
  const int64_t d = shape_size(feature_shape);

  // Class means sit on scaled unit directions. They depend only on
  // (K, d, separation), so train and held-out splits generated with
  // different seeds share the same mixture.
  MatrixRM<float> means = MatrixRM<float>::Zero(num_classes, d);
  if (num_classes <= d) {
    for (int k = 0; k < num_classes; ++k) means(k, k) = static_cast<float>(separation);
  } else {
    Rng dir_rng(derive_seed(0xA11D12EC7ULL, {static_cast<uint64_t>(num_classes),
                                             static_cast<uint64_t>(d)}));
    for (int k = 0; k < num_classes; ++k) {
      VectorXd u(d);
      for (int64_t j = 0; j < d; ++j) u[j] = dir_rng.normal();
      u *= separation / u.norm();
      for (int64_t j = 0; j < d; ++j) means(k, j) = static_cast<float>(u[j]);
    }
  }

  Dataset ds;
  ds.feature_shape = feature_shape;
  ds.num_classes = num_classes;
  ds.features.resize(n, d);
  ds.labels.resize(static_cast<size_t>(n));

  Rng rng(seed);
  for (int64_t i = 0; i < n; ++i) {
    const int k = static_cast<int>(i % num_classes);  // balanced to within one
    ds.labels[static_cast<size_t>(i)] = k;
    for (int64_t j = 0; j < d; ++j) {
      ds.features(i, j) =
          means(k, j) + static_cast<float>(noise_std == 0.0 ? 0.0 : noise_std * rng.normal());
    }
  }
  return ds;
}

FederatedDataset dirichlet_partition(std::shared_ptr<const Dataset> data,
                                     const PartitionConfig& cfg) {
  if (!data) throw UsageError("dirichlet_partition: null dataset");
  if (cfg.num_clients < 1) throw ConfigError("dirichlet_partition: need at least one client");
  if (!(cfg.alpha > 0.0)) throw ConfigError("dirichlet_partition: alpha must be positive");
  const int64_t n = data->size();
  const int k = data->num_classes;
  if (cfg.examples_per_client > 0 &&
      static_cast<int64_t>(cfg.examples_per_client) * cfg.num_clients > n) {
    throw ConfigError("dirichlet_partition: insufficient data for " +
                      std::to_string(cfg.num_clients) + " clients x " +
                      std::to_string(cfg.examples_per_client) + " examples");
  }
  if (cfg.examples_per_client == 0 && n < cfg.num_clients) {
    throw ConfigError("dirichlet_partition: fewer examples than clients");
  }

  Rng rng(cfg.seed);

  // Per-label pools, shuffled; draws pop from the back.
  std::vector<std::vector<int32_t>> pools(static_cast<size_t>(k));
  for (int64_t i = 0; i < n; ++i) {
    pools[static_cast<size_t>(data->labels[static_cast<size_t>(i)])].push_back(
        static_cast<int32_t>(i));
  }
  for (auto& pool : pools) fisher_yates(pool, rng);
  int64_t remaining = n;

  FederatedDataset fed;
  fed.source = std::move(data);
  fed.clients.resize(static_cast<size_t>(cfg.num_clients));

  std::vector<double> q(static_cast<size_t>(k));
  for (int c = 0; c < cfg.num_clients; ++c) {
    rng.dirichlet(cfg.alpha, q);
    const int64_t quota =
        cfg.examples_per_client > 0
            ? cfg.examples_per_client
            : n / cfg.num_clients + (c < static_cast<int>(n % cfg.num_clients) ? 1 : 0);
    auto& mine = fed.clients[static_cast<size_t>(c)];
    mine.reserve(static_cast<size_t>(quota));
    for (int64_t j = 0; j < quota; ++j) {
      size_t label = rng.categorical(q);
      if (pools[label].empty()) {
        // Label exhausted: uniform draw over everything still unassigned.
        int64_t r = static_cast<int64_t>(rng.below(static_cast<uint64_t>(remaining)));
        label = 0;
        while (r >= static_cast<int64_t>(pools[label].size())) {
          r -= static_cast<int64_t>(pools[label].size());
          ++label;
        }
      }
      mine.push_back(pools[label].back());
      pools[label].pop_back();
      --remaining;
    }
  }
  return fed;
}

FederatedDataset shard_equal(std::shared_ptr<const Dataset> data, int num_clients, uint64_t seed) {
  if (!data) throw UsageError("shard_equal: null dataset");
  const int64_t n = data->size();
  if (num_clients < 1 || num_clients > n) {
    throw ConfigError("shard_equal: client count must be in [1, dataset size]");
  }
  std::vector<int32_t> perm(static_cast<size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  fisher_yates(perm, rng);

  const int64_t per = n / num_clients;  // remainder dropped
  FederatedDataset fed;
  fed.source = std::move(data);
  fed.clients.resize(static_cast<size_t>(num_clients));
  for (int c = 0; c < num_clients; ++c) {
    fed.clients[static_cast<size_t>(c)].assign(perm.begin() + c * per,
                                               perm.begin() + (c + 1) * per);
  }
  return fed;
}

std::vector<std::vector<int32_t>> batch_indices(std::span<const int32_t> examples, int batch_size,
                                                Rng& rng, bool shuffle) {
  if (batch_size < 1) throw UsageError("batch_indices: batch size must be >= 1");
  std::vector<int32_t> order(examples.begin(), examples.end());
  if (shuffle) fisher_yates(order, rng);
  std::vector<std::vector<int32_t>> batches;
  for (size_t i = 0; i < order.size(); i += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(order.size(), i + static_cast<size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<int64_t>(i),
                         order.begin() + static_cast<int64_t>(end));
  }
  return batches;
}

Tensor<float> gather_batch(const Dataset& data, std::span<const int32_t> idx) {
  if (idx.empty()) throw UsageError("gather_batch: empty index list");
  std::vector<int> shape;
  shape.push_back(static_cast<int>(idx.size()));
  shape.insert(shape.end(), data.feature_shape.begin(), data.feature_shape.end());
  Tensor<float> t(std::move(shape));
  const int64_t d = data.feature_dim();
  for (size_t r = 0; r < idx.size(); ++r) {
    std::memcpy(t.data() + static_cast<int64_t>(r) * d, data.features.row(idx[r]).data(),
                static_cast<size_t>(d) * sizeof(float));
  }
  return t;
}

std::vector<int32_t> gather_labels(const Dataset& data, std::span<const int32_t> idx) {
  std::vector<int32_t> out;
  out.reserve(idx.size());
  for (int32_t i : idx) out.push_back(data.labels[static_cast<size_t>(i)]);
  return out;
}

void save_dataset(const std::filesystem::path& path, const FederatedDataset& fed) {
  if (!fed.source) throw UsageError("save_dataset: empty federation");
  const Dataset& ds = *fed.source;
  nlohmann::json header;
  header["format"] = "fedpt-data-v1";
  header["classes"] = ds.num_classes;
  header["feature_shape"] = ds.feature_shape;
  header["examples"] = ds.size();
  header["clients"] = fed.clients;

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << header.dump() << '\n';
  f.write(reinterpret_cast<const char*>(ds.features.data()),
          static_cast<std::streamsize>(ds.features.size() * sizeof(float)));
  f.write(reinterpret_cast<const char*>(ds.labels.data()),
          static_cast<std::streamsize>(ds.labels.size() * sizeof(int32_t)));
  if (!f.good()) throw IoError("write failed: " + path.string());
}

FederatedDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(f, line)) throw FormatError("missing dataset header");
  nlohmann::json header = nlohmann::json::parse(line, nullptr, false);
  if (header.is_discarded() || header.value("format", "") != "fedpt-data-v1") {
    throw FormatError("not a fedpt dataset file: " + path.string());
  }

  auto ds = std::make_shared<Dataset>();
  ds->num_classes = header.at("classes").get<int>();
  ds->feature_shape = header.at("feature_shape").get<std::vector<int>>();
  const int64_t n = header.at("examples").get<int64_t>();
  ds->features.resize(n, shape_size(ds->feature_shape));
  ds->labels.resize(static_cast<size_t>(n));
  f.read(reinterpret_cast<char*>(ds->features.data()),
         static_cast<std::streamsize>(ds->features.size() * sizeof(float)));
  f.read(reinterpret_cast<char*>(ds->labels.data()),
         static_cast<std::streamsize>(ds->labels.size() * sizeof(int32_t)));
  if (!f.good()) throw FormatError("truncated dataset file: " + path.string());

  FederatedDataset fed;
  fed.clients = header.at("clients").get<std::vector<std::vector<int32_t>>>();
  fed.source = std::move(ds);
  return fed;
}

}  // namespace fedpt
