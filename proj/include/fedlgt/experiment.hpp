#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "fedlgt/dataset.hpp"
#include "fedlgt/federation.hpp"
#include "fedlgt/label_embeddings.hpp"
#include "fedlgt/metrics.hpp"
#include "fedlgt/model.hpp"

namespace fedlgt {

enum class EmbeddingSource { synthetic, file, averaged };
enum class StateSource { synthetic, file };

struct EmbeddingSettings {
  EmbeddingSource source = EmbeddingSource::synthetic;
  std::filesystem::path path;     // ULE1 file (file) or fine-level file (averaged)
  std::filesystem::path mapping;  // coarse mapping (averaged only)
  StateSource states = StateSource::synthetic;
  std::size_t dim = 0;  // synthetic width; 0 means the model width
  std::uint64_t seed = 7;
  std::uint64_t projection_seed = 11;
};

// Everything one experiment needs. Parsed from an INI-style file with
// [dataset] [model] [federation] [calibration] [embeddings] [output] [ablation].
struct ExperimentConfig {
  std::optional<std::filesystem::path> dataset_path;  // when set, load instead of generating
  DatasetSpec dataset;
  ModelConfig model;          // num_classes, feature_dim and label_tokens are derived
  FederationConfig federation;
  EmbeddingSettings embeddings;
  std::filesystem::path output_dir = "out";
  std::size_t checkpoint_every = 0;
  std::size_t ablation_seeds = 3;

  // Fills the derived model fields for `mode`.
  ModelConfig model_for(TrainingMode mode, std::size_t num_classes, std::size_t feature_dim) const;
  void validate() const;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

ExperimentConfig parse_experiment_config(const std::string& text,
                                         const std::filesystem::path& base_dir = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
// Canonical text: every key, fixed order. Re-parses to an equal config.
std::string format_experiment_config(const ExperimentConfig& cfg);

// Applies --seed: both the dataset and federation seeds.
void override_seed(ExperimentConfig& cfg, std::uint64_t seed);

struct EmbeddingBundle {
  EmbeddingMatrix labels;   // projected to the model width
  StateEmbeddings states;   // projected to the model width
};
EmbeddingBundle build_embeddings(const EmbeddingSettings& s, std::size_t num_classes, std::size_t width);

FederatedDataset obtain_dataset(const ExperimentConfig& cfg);
ModelContext make_model_context(const ExperimentConfig& cfg, TrainingMode mode, const FederatedDataset& data,
                                const EmbeddingBundle& emb);

// One line per round with a fixed field order; wall time is left out so logs
// are byte-reproducible.
std::string round_record(const RoundReport& r);
std::string metrics_record(const MetricsReport& m);

// Subcommands. Each returns a process exit code: 0 ok, 1 runtime error.
struct TrainOutcome {
  TrainingResult result;
  std::filesystem::path checkpoint;
  std::optional<MetricsReport> final_metrics;
};
int cmd_gen_data(const ExperimentConfig& cfg, std::ostream& out, std::ostream& err);
TrainOutcome run_train(const ExperimentConfig& cfg, std::ostream& out);
int cmd_train(const ExperimentConfig& cfg, std::ostream& out, std::ostream& err);
MetricsReport run_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& dataset_dir);
int cmd_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& dataset_dir, std::ostream& out,
             std::ostream& err);

struct AblationArmResult {
  TrainingMode mode;
  std::vector<MetricsReport> per_seed;
  std::vector<std::vector<std::vector<std::size_t>>> sampled;  // [seed][round] -> clients
  MetricsReport mean;
};
std::vector<TrainingMode> ablation_arms();
std::vector<AblationArmResult> run_ablation(const ExperimentConfig& cfg, std::ostream& out);
std::string format_ablation(const std::vector<AblationArmResult>& arms);
int cmd_ablate(const ExperimentConfig& cfg, std::ostream& out, std::ostream& err);

}  // namespace fedlgt
