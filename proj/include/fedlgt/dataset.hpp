#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fedlgt/tensor.hpp"

namespace fedlgt {

struct Sample {
  std::vector<double> features;
  std::vector<std::uint8_t> labels;  // 0/1 per class
  friend bool operator==(const Sample&, const Sample&) = default;
};

using SpecEcho = std::vector<std::pair<std::string, std::string>>;

struct FederatedDataset {
  std::size_t feature_dim = 0;
  std::size_t num_classes = 0;
  std::vector<std::vector<Sample>> clients;
  std::vector<Sample> test;
  SpecEcho spec;  // how the dataset was produced, in write order

  std::size_t num_clients() const { return clients.size(); }
  std::vector<std::size_t> client_sizes() const;
  friend bool operator==(const FederatedDataset&, const FederatedDataset&) = default;
};

// Stacks samples [first, first+count) into [n, feature_dim] and [n, C] tensors.
Tensor stack_features(const std::vector<Sample>& samples, std::span<const std::size_t> idx);
Tensor stack_labels(const std::vector<Sample>& samples, std::span<const std::size_t> idx);
Tensor stack_features(const std::vector<Sample>& samples);
Tensor stack_labels(const std::vector<Sample>& samples);

// Synthetic non-IID benchmark. Client sizes follow a clamped Pareto law
// round(min * u^-exponent) with u stratified over clients, so exponent 0
// gives every client `min_samples`.
struct DatasetSpec {
  std::size_t num_clients = 20;
  std::size_t num_classes = 16;
  std::size_t feature_dim = 32;
  double power_exponent = 1.0;
  std::size_t min_samples = 10;
  std::size_t max_samples = 80;
  // client_cliques[k] lists the class groups client k draws positives from.
  std::vector<std::vector<std::vector<std::size_t>>> client_cliques;
  double cooccurrence = 0.5;  // chance each non-anchor clique member is also present
  double background = 0.0;    // chance each class outside the clique is present
  double noise = 0.3;         // stddev of Gaussian feature noise
  std::size_t test_samples = 400;
  std::uint64_t seed = 1;

  void validate() const;
  SpecEcho to_echo() const;
  static DatasetSpec from_echo(const SpecEcho& echo);
  friend bool operator==(const DatasetSpec&, const DatasetSpec&) = default;
};

// Splits classes into consecutive groups of `clique_size` and hands them to
// clients round-robin.
std::vector<std::vector<std::vector<std::size_t>>> round_robin_cliques(std::size_t num_clients,
                                                                       std::size_t num_classes,
                                                                       std::size_t clique_size);

std::string format_cliques(const std::vector<std::vector<std::vector<std::size_t>>>& cliques);
std::vector<std::vector<std::vector<std::size_t>>> parse_cliques(std::string_view text);

// Class prototypes shared by every client, one unit row per class.
Tensor class_prototypes(std::size_t num_classes, std::size_t feature_dim, std::uint64_t seed);

std::vector<std::size_t> draw_client_sizes(const DatasetSpec& spec);

FederatedDataset generate(const DatasetSpec& spec);

enum class SkewKind { iid, label_dirichlet };
struct PartitionSkew {
  SkewKind kind = SkewKind::iid;
  double alpha = 0.5;
};

// Re-partitions a pooled sample list into K shards plus an optional held-out
// test fraction. Dirichlet skew groups samples by their first positive class.
FederatedDataset partition_existing(const std::vector<Sample>& samples, std::size_t num_clients,
                                    PartitionSkew skew, std::uint64_t seed, double test_fraction = 0.0,
                                    int max_retries = 100);

class DatasetFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Directory of `spec`, `client_<k>` and `test` text files.
void save_dataset(const FederatedDataset& ds, const std::filesystem::path& dir);
FederatedDataset load_dataset(const std::filesystem::path& dir);

}  // namespace fedlgt
