#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nethira/checkpoint.hpp"
#include "nethira/flow.hpp"
#include "nethira/metrics.hpp"
#include "nethira/model.hpp"
#include "nethira/training.hpp"

namespace nethira {

struct SplitSpec {
  std::array<double, 3> ratios{8.0, 1.0, 1.0};  // train, val, test
  std::size_t per_class_cap = 5000;
  std::uint64_t seed = 0;

  void validate() const;
};

struct DatasetSplit {
  std::vector<FlowRecord> train;
  std::vector<FlowRecord> val;
  std::vector<FlowRecord> test;
};

/// Per class: caps to per_class_cap by uniform sampling, shuffles, and takes
/// floor(n * r / sum) records for val and test (at least one each); the rest
/// go to train. Output keeps classes in ascending label order.
DatasetSplit split_dataset(std::span<const FlowRecord> records, const SplitSpec& spec);

/// Argmax class per record.
std::vector<int> predict(const Model& model, std::span<const FlowRecord> records);

MetricsReport evaluate(const Model& model, std::span<const FlowRecord> test);
MetricsReport evaluate(const ModelCheckpoint& ckpt, std::span<const FlowRecord> test);

/// SHA-256 over the canonical serialization of the records, one per line.
std::string records_sha256(std::span<const FlowRecord> records);

struct SweepRow {
  double fraction = 0.0;
  std::size_t train_size = 0;
  MetricsReport report;
  std::vector<FinetuneLogRow> log;
};

/// Fine-tunes from `init` on a stratified subsample of split.train for every
/// fraction (ascending) and evaluates on split.test.
std::vector<SweepRow> run_limited_label_sweep(const ModelCheckpoint& init, const DatasetSplit& split,
                                              std::span<const double> fractions,
                                              const FinetuneConfig& base);

struct AblationRow {
  FinetuneMode mode = FinetuneMode::kFull;
  MetricsReport report;
  std::string test_sha256;
  std::vector<FinetuneLogRow> log;
};

/// Pre-trained checkpoints used by the ablation. Missing entries are
/// pre-trained on demand from the corpus passed to run_ablation.
struct AblationCheckpoints {
  std::optional<ModelCheckpoint> full;
  std::optional<ModelCheckpoint> byte_only;
};

/// Runs every mode with the same seeds and split. FULL and SUP_ONLY start from
/// the full pre-training, BYTE_ONLY_PRETRAIN from a byte-task-only one, and
/// FROM_SCRATCH from random weights with the same architecture.
std::vector<AblationRow> run_ablation(const DatasetSplit& split, std::span<const FinetuneMode> modes,
                                      const PretrainConfig& pretrain_config,
                                      const FinetuneConfig& finetune_config,
                                      std::span<const FlowRecord> corpus,
                                      AblationCheckpoints checkpoints = {});

void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepRow> rows);
void write_ablation_csv(const std::filesystem::path& path, std::span<const AblationRow> rows);

/// Build revision baked in at configure time, "unknown" outside a git checkout.
std::string_view git_revision();

/// {"tool_version", "git_revision", "command", "config", "config_sha256", "datasets": {name: sha256}}
nlohmann::json run_manifest(std::string_view command, const nlohmann::json& config,
                            const std::map<std::string, std::string>& dataset_hashes);

}  // namespace nethira
