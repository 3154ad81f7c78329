#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedlgt/adam.hpp"
#include "fedlgt/camle.hpp"
#include "fedlgt/dataset.hpp"
#include "fedlgt/metrics.hpp"
#include "fedlgt/model.hpp"
#include "fedlgt/parameter_set.hpp"
#include "fedlgt/util.hpp"

namespace fedlgt {

// Ablation arms. `fedctran*` learn label embeddings; `*ule`/`fedlgt` use the
// frozen universal ones. `*camle`/`fedlgt` mask by global-model confidence,
// the rest by random label-mask training.
enum class TrainingMode { fedavg_plain, fedctran, fedctran_camle, fedctran_ule, fedlgt };
enum class SamplingStrategy { uniform, data_proportional };
// When CA-MLE probabilities are computed. The global model is fixed during a
// local update, so both choices yield identical states.
enum class CalibrationRefresh { per_batch, per_epoch };

std::string to_string(TrainingMode m);
std::string to_string(SamplingStrategy s);
std::string to_string(CalibrationRefresh r);
TrainingMode parse_training_mode(std::string_view s);
SamplingStrategy parse_sampling(std::string_view s);
CalibrationRefresh parse_refresh(std::string_view s);

LabelTokens label_tokens_for(TrainingMode m);
bool uses_camle(TrainingMode m);
// Table row label, e.g. "FedC-Tran + CA-MLE".
std::string display_name(TrainingMode m);

struct FederationConfig {
  std::size_t rounds = 50;
  std::size_t local_epochs = 5;
  double active_fraction = 0.5;
  SamplingStrategy sampling = SamplingStrategy::data_proportional;
  std::uint64_t seed = 0;
  TrainingMode mode = TrainingMode::fedlgt;
  std::size_t batch_size = 16;
  AdamConfig adam{};
  MaskFractionRange mask{};
  CalibrationConfig calibration{};
  CalibrationRefresh refresh = CalibrationRefresh::per_batch;
  std::size_t eval_every = 1;  // 0 disables per-round evaluation
  std::size_t parallel = 1;    // concurrent local updates per round

  void validate() const;
  // ceil(active_fraction * K)
  std::size_t clients_per_round(std::size_t total_clients) const;
};

struct RoundReport {
  std::size_t round = 0;  // 1-based
  std::vector<std::size_t> clients;
  std::vector<std::size_t> sizes;
  std::vector<double> weights;
  std::vector<double> losses;  // mean loss over each client's final local epoch
  double wall_time_ms = 0.0;
  std::optional<MetricsReport> metrics;
};

// Model definition plus frozen buffers shared read-only by every client.
struct ModelContext {
  ModelConfig config;
  ModelBuffers buffers;
};

// R distinct client ids. data_proportional draws successively without
// replacement with weight proportional to size.
std::vector<std::size_t> sample_clients(std::span<const std::size_t> sizes, std::size_t count,
                                        SamplingStrategy strategy, Rng& rng);
std::vector<std::size_t> sample_clients(std::span<const std::size_t> sizes, std::size_t count,
                                        SamplingStrategy strategy, std::uint64_t seed);

struct LocalUpdateResult {
  ParameterSet params;
  std::size_t steps = 0;
  double final_epoch_loss = 0.0;
};

// Per-sample states used for one batch.
LabelStateVector batch_states(const ParameterSet& global, const ModelContext& model, const Tensor& features,
                              const Tensor& targets, const FederationConfig& cfg, Rng& rng);

LocalUpdateResult local_update(const ParameterSet& global, const ModelContext& model,
                               const std::vector<Sample>& data, const FederationConfig& cfg, std::uint64_t seed);

std::vector<double> aggregation_weights(std::span<const std::size_t> sizes);

// Size-weighted average accumulated in ascending client order as a running
// mean, so identical inputs reproduce themselves exactly.
ParameterSet aggregate(std::span<const ParameterSet> locals, std::span<const std::size_t> sizes);

MetricsReport evaluate(const ParameterSet& params, const ModelContext& model, const std::vector<Sample>& samples);

struct TrainingResult {
  ParameterSet params;
  std::vector<RoundReport> reports;
};

using RoundObserver = std::function<void(const RoundReport&, const ParameterSet&)>;

TrainingResult run_training(const FederationConfig& cfg, const FederatedDataset& data, const ModelContext& model,
                            const ParameterSet& initial, const RoundObserver& observer = {});
// Initializes parameters from the federation seed.
TrainingResult run_training(const FederationConfig& cfg, const FederatedDataset& data, const ModelContext& model,
                            const RoundObserver& observer = {});

std::uint64_t init_seed(std::uint64_t federation_seed);

}  // namespace fedlgt
