#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nethira/checkpoint.hpp"
#include "nethira/corruption.hpp"
#include "nethira/flow.hpp"
#include "nethira/model.hpp"

namespace nethira {

/// Which reconstruction losses contribute to pre-training.
struct TaskSet {
  bool byte = true;
  bool protocol = true;
  bool packet = true;

  /// Comma-separated subset of "byte,protocol,packet".
  static TaskSet parse(std::string_view text);
  std::string to_string() const;
  bool operator==(const TaskSet&) const = default;
};

struct PretrainConfig {
  std::size_t steps = 100000;
  double lr = 1e-4;
  std::size_t batch_size = 32;
  std::size_t warmup_steps = 0;  // 0 means 10% of steps
  std::uint64_t seed = 0;
  double grad_clip = 0.0;        // global-norm clip, 0 disables
  CorruptionConfig corruption;
  TaskSet tasks;
  ModelConfig model;

  void validate() const;
  std::size_t effective_warmup() const;
};

enum class FinetuneMode { kFull, kSupOnly, kFromScratch, kByteOnlyPretrain };

FinetuneMode parse_finetune_mode(std::string_view text);
std::string_view to_string(FinetuneMode mode);

struct FinetuneConfig {
  std::size_t epochs = 10;
  double lr = 2e-5;
  double lambda = 0.1;
  double label_fraction = 1.0;
  FinetuneMode mode = FinetuneMode::kFull;
  std::uint64_t seed = 0;
  std::size_t batch_size = 32;
  double warmup_fraction = 0.1;
  double drop_prob = 0.2;
  bool shuffle_within_layer = false;
  bool stop_grad_raw = false;
  std::size_t n_classes = 0;  // 0 infers max label + 1 from train and val
  ModelConfig model;          // architecture for from-scratch runs without an init

  void validate() const;
  /// lambda actually applied: 0 in SUP_ONLY mode.
  double effective_lambda() const { return mode == FinetuneMode::kSupOnly ? 0.0 : lambda; }
};

nlohmann::json to_json(const CorruptionConfig& c);
CorruptionConfig corruption_from_json(const nlohmann::json& j, CorruptionConfig base = {});
nlohmann::json to_json(const PretrainConfig& c);
PretrainConfig pretrain_config_from_json(const nlohmann::json& j, PretrainConfig base = {});
nlohmann::json to_json(const FinetuneConfig& c);
FinetuneConfig finetune_config_from_json(const nlohmann::json& j, FinetuneConfig base = {});

/// Adam with bias correction.
class Adam {
 public:
  explicit Adam(const Model& model, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(Model& model, const Gradients& grads, double lr);
  std::size_t steps() const { return t_; }

 private:
  double beta1_;
  double beta2_;
  double eps_;
  std::size_t t_ = 0;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
};

/// Linear warmup to `lr` over `warmup` updates, constant afterwards.
double scheduled_lr(double lr, std::size_t step, std::size_t warmup);

struct PretrainLogRow {
  std::size_t step = 0;
  double byte = 0.0;
  double protocol = 0.0;
  double packet = 0.0;

  double total() const { return byte + protocol + packet; }
  bool operator==(const PretrainLogRow&) const = default;
};

struct PretrainResult {
  ModelCheckpoint checkpoint;
  std::vector<PretrainLogRow> log;
};

using PretrainProgress = std::function<void(const PretrainLogRow&)>;

/// Minimizes byte + protocol + packet reconstruction loss. Each step draws
/// batch_size flows; every flow yields one sample per enabled task (flows
/// with fewer than two real packets use a byte-masked sample for the packet
/// task). Per-sample corruption seeds come from (seed, step, slot, task).
PretrainResult pretrain(const PretrainConfig& config, std::span<const FlowRecord> corpus,
                        const ModelCheckpoint* init = nullptr, const PretrainProgress& progress = {});

struct FinetuneLogRow {
  std::size_t epoch = 0;
  double l_sup = 0.0;
  double l_cons = 0.0;
  double val_f1 = 0.0;

  bool operator==(const FinetuneLogRow&) const = default;
};

struct BatchLogRow {
  std::size_t epoch = 0;
  std::size_t batch = 0;
  double l_sup = 0.0;
  double l_cons = 0.0;
  double l_total = 0.0;

  bool operator==(const BatchLogRow&) const = default;
};

struct FinetuneResult {
  ModelCheckpoint checkpoint;  // best validation epoch
  std::vector<FinetuneLogRow> log;
  std::vector<BatchLogRow> batch_log;
  std::size_t best_epoch = 0;
  std::size_t n_classes = 0;
  std::size_t train_size = 0;  // after label_fraction subsampling
};

using FinetuneProgress = std::function<void(const FinetuneLogRow&)>;

/// Fine-tunes with cross-entropy on the clean view plus lambda times the KL
/// between the clean view and its protocol- and packet-augmented views, then
/// keeps the epoch with the best validation macro-F1.
FinetuneResult finetune(const FinetuneConfig& config, const ModelCheckpoint* init,
                        std::span<const FlowRecord> train, std::span<const FlowRecord> val,
                        const FinetuneProgress& progress = {});

/// Per class keeps ceil(fraction * count) records (at least one), chosen by a
/// seeded shuffle; original order is preserved among the kept records.
std::vector<FlowRecord> stratified_subsample(std::span<const FlowRecord> records, double fraction,
                                             std::uint64_t seed);

/// Flow-level CSV writers for the loss logs.
void write_pretrain_log(const std::filesystem::path& path, std::span<const PretrainLogRow> log);
void write_finetune_log(const std::filesystem::path& path, std::span<const FinetuneLogRow> log);

}  // namespace nethira
