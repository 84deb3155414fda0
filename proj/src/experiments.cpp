#include "nethira/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "nethira/dataset.hpp"
#include "nethira/error.hpp"
#include "nethira/rng.hpp"
#include "parallel.hpp"

#ifndef NETHIRA_GIT_REVISION
#define NETHIRA_GIT_REVISION "unknown"
#endif

namespace nethira {

void SplitSpec::validate() const {
  for (double r : ratios)
    if (!(r > 0.0)) throw Error(ErrorCode::kInvalidArgument, "split ratios must be positive");
  if (per_class_cap < 3) throw Error(ErrorCode::kInvalidArgument, "per_class_cap must be at least 3");
}

DatasetSplit split_dataset(std::span<const FlowRecord> records, const SplitSpec& spec) {
  spec.validate();
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!records[i].label) throw Error(ErrorCode::kInvalidLabel, "unlabeled record in labeled set");
    by_class[*records[i].label].push_back(i);
  }
  const double sum = spec.ratios[0] + spec.ratios[1] + spec.ratios[2];
  DatasetSplit out;
  for (auto& [label, idx] : by_class) {
    if (idx.size() < 3) {
      throw Error(ErrorCode::kClassTooSmall,
                  "class " + std::to_string(label) + " has " + std::to_string(idx.size()) + " records");
    }
    Rng rng(derive_seed(spec.seed, {static_cast<std::uint64_t>(label)}));
    rng.shuffle(idx);
    const std::size_t n = std::min(idx.size(), spec.per_class_cap);
    auto part = [&](double r) {
      return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(static_cast<double>(n) * r / sum + 1e-9)));
    };
    const std::size_t n_val = part(spec.ratios[1]);
    const std::size_t n_test = part(spec.ratios[2]);
    const std::size_t n_train = n - n_val - n_test;
    if (n_train < 1) {
      throw Error(ErrorCode::kClassTooSmall, "class " + std::to_string(label) + " leaves no training records");
    }
    for (std::size_t k = 0; k < n; ++k) {
      auto& dst = k < n_train ? out.train : (k < n_train + n_val ? out.val : out.test);
      dst.push_back(records[idx[k]]);
    }
  }
  return out;
}

std::vector<int> predict(const Model& model, std::span<const FlowRecord> records) {
  if (!model.has_classifier()) throw Error(ErrorCode::kNoClassifierHead, "model has no classification head");
  std::vector<int> out(records.size());
  detail::parallel_for(records.size(), [&](std::size_t i) {
    out[i] = static_cast<int>(model.classify(to_tokens(records[i])).argmax());
  });
  return out;
}

MetricsReport evaluate(const Model& model, std::span<const FlowRecord> test) {
  if (!model.has_classifier()) throw Error(ErrorCode::kNoClassifierHead, "model has no classification head");
  std::vector<int> truth;
  truth.reserve(test.size());
  for (const FlowRecord& r : test) {
    if (!r.label) throw Error(ErrorCode::kInvalidLabel, "unlabeled record in test set");
    truth.push_back(*r.label);
  }
  return compute_metrics(truth, predict(model, test), model.config().n_classes);
}

MetricsReport evaluate(const ModelCheckpoint& ckpt, std::span<const FlowRecord> test) {
  return evaluate(ckpt.to_model(), test);
}

std::string records_sha256(std::span<const FlowRecord> records) {
  std::string text;
  for (const FlowRecord& r : records) {
    text += serialize_record(r);
    text += '\n';
  }
  return sha256_hex(std::string_view(text));
}

std::vector<SweepRow> run_limited_label_sweep(const ModelCheckpoint& init, const DatasetSplit& split,
                                              std::span<const double> fractions,
                                              const FinetuneConfig& base) {
  std::vector<double> sorted(fractions.begin(), fractions.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<SweepRow> rows;
  for (double f : sorted) {
    FinetuneConfig cfg = base;
    cfg.label_fraction = f;
    FinetuneResult r = finetune(cfg, &init, split.train, split.val);
    SweepRow row;
    row.fraction = f;
    row.train_size = r.train_size;
    row.report = evaluate(r.checkpoint, split.test);
    row.log = std::move(r.log);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<AblationRow> run_ablation(const DatasetSplit& split, std::span<const FinetuneMode> modes,
                                      const PretrainConfig& pretrain_config,
                                      const FinetuneConfig& finetune_config,
                                      std::span<const FlowRecord> corpus, AblationCheckpoints ckpts) {
  auto need = [&](FinetuneMode m) { return std::find(modes.begin(), modes.end(), m) != modes.end(); };
  if ((need(FinetuneMode::kFull) || need(FinetuneMode::kSupOnly) || need(FinetuneMode::kFromScratch)) &&
      !ckpts.full) {
    ckpts.full = pretrain(pretrain_config, corpus).checkpoint;
  }
  if (need(FinetuneMode::kByteOnlyPretrain) && !ckpts.byte_only) {
    PretrainConfig byte_only = pretrain_config;
    byte_only.tasks = TaskSet{true, false, false};
    ckpts.byte_only = pretrain(byte_only, corpus).checkpoint;
  }
  const std::string test_hash = records_sha256(split.test);
  std::vector<AblationRow> rows;
  for (FinetuneMode mode : modes) {
    FinetuneConfig cfg = finetune_config;
    cfg.mode = mode;
    const ModelCheckpoint* init =
        mode == FinetuneMode::kByteOnlyPretrain ? &*ckpts.byte_only : &*ckpts.full;
    FinetuneResult r = finetune(cfg, init, split.train, split.val);
    AblationRow row;
    row.mode = mode;
    row.report = evaluate(r.checkpoint, split.test);
    row.test_sha256 = test_hash;
    row.log = std::move(r.log);
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace {

std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out.precision(17);
  return out;
}

}  // namespace

void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepRow> rows) {
  std::ofstream out = open_csv(path);
  out << "fraction,train_size,macro_precision,macro_recall,macro_f1\n";
  for (const SweepRow& r : rows) {
    out << r.fraction << ',' << r.train_size << ',' << r.report.macro_precision << ','
        << r.report.macro_recall << ',' << r.report.macro_f1 << '\n';
  }
}

void write_ablation_csv(const std::filesystem::path& path, std::span<const AblationRow> rows) {
  std::ofstream out = open_csv(path);
  out << "mode,macro_precision,macro_recall,macro_f1,test_sha256\n";
  for (const AblationRow& r : rows) {
    out << to_string(r.mode) << ',' << r.report.macro_precision << ',' << r.report.macro_recall << ','
        << r.report.macro_f1 << ',' << r.test_sha256 << '\n';
  }
}

std::string_view git_revision() { return NETHIRA_GIT_REVISION; }

nlohmann::json run_manifest(std::string_view command, const nlohmann::json& config,
                            const std::map<std::string, std::string>& dataset_hashes) {
  nlohmann::json j;
  j["tool_version"] = kToolVersion;
  j["git_revision"] = git_revision();
  j["command"] = command;
  j["config"] = config;
  j["config_sha256"] = sha256_hex(std::string_view(config.dump()));
  j["datasets"] = dataset_hashes;
  j["zero_division"] = 0;
  return j;
}

}  // namespace nethira
