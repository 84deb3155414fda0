#include "nethira/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "nethira/error.hpp"
#include "nethira/experiments.hpp"
#include "nethira/rng.hpp"
#include "parallel.hpp"

namespace nethira {
namespace {

// Seed-derivation tags.
constexpr std::uint64_t kTagInit = 1;
constexpr std::uint64_t kTagBatches = 2;
constexpr std::uint64_t kTagByte = 3;
constexpr std::uint64_t kTagProtocol = 4;
constexpr std::uint64_t kTagPacket = 5;
constexpr std::uint64_t kTagSubsample = 6;
constexpr std::uint64_t kTagOrder = 7;
constexpr std::uint64_t kTagAugProtocol = 8;
constexpr std::uint64_t kTagAugPacket = 9;
constexpr std::uint64_t kTagHead = 10;

bool finite(double x) { return std::isfinite(x); }

void check_shape(const ModelConfig& cfg, const FlowRecord& r) {
  if (r.packet_count() != cfg.packets_per_flow || r.packet_len() != cfg.packet_len) {
    throw Error(ErrorCode::kInvalidArgument,
                "record shape " + std::to_string(r.packet_count()) + "x" + std::to_string(r.packet_len()) +
                    " does not match model " + std::to_string(cfg.packets_per_flow) + "x" +
                    std::to_string(cfg.packet_len));
  }
}

void clip_gradients(Gradients& g, double max_norm) {
  if (max_norm <= 0.0) return;
  const double norm = std::sqrt(g.squared_norm());
  if (norm > max_norm) g.scale(max_norm / norm);
}

std::vector<TokenSequence> tokenize(std::span<const FlowRecord> records) {
  std::vector<TokenSequence> out(records.size());
  detail::parallel_for(records.size(), [&](std::size_t i) { out[i] = to_tokens(records[i]); });
  return out;
}

std::vector<std::vector<FieldSpanMap>> all_field_maps(std::span<const FlowRecord> records) {
  std::vector<std::vector<FieldSpanMap>> out(records.size());
  detail::parallel_for(records.size(), [&](std::size_t i) { out[i] = field_maps(records[i]); });
  return out;
}

std::string format_terms(std::string_view what, double a, double b, double c) {
  std::ostringstream s;
  s << what << ": " << a << ", " << b << ", " << c;
  return s.str();
}

}  // namespace

TaskSet TaskSet::parse(std::string_view text) {
  TaskSet t{false, false, false};
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find(',', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view item = text.substr(pos, end - pos);
    while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
    while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
    if (item == "byte") {
      t.byte = true;
    } else if (item == "protocol") {
      t.protocol = true;
    } else if (item == "packet") {
      t.packet = true;
    } else if (!item.empty()) {
      throw Error(ErrorCode::kInvalidArgument, "unknown pre-training task '" + std::string(item) + "'");
    }
    pos = end + 1;
  }
  if (!t.byte && !t.protocol && !t.packet) throw Error(ErrorCode::kInvalidArgument, "empty task set");
  return t;
}

std::string TaskSet::to_string() const {
  std::string out;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += ',';
    out += name;
  };
  add(byte, "byte");
  add(protocol, "protocol");
  add(packet, "packet");
  return out;
}

void PretrainConfig::validate() const {
  if (steps < 1) throw Error(ErrorCode::kInvalidArgument, "steps must be at least 1");
  if (!(lr > 0.0)) throw Error(ErrorCode::kInvalidArgument, "lr must be positive");
  if (batch_size < 1) throw Error(ErrorCode::kInvalidArgument, "batch_size must be at least 1");
  if (grad_clip < 0.0) throw Error(ErrorCode::kInvalidArgument, "grad_clip must be non-negative");
  if (!tasks.byte && !tasks.protocol && !tasks.packet) {
    throw Error(ErrorCode::kInvalidArgument, "no pre-training task enabled");
  }
}

std::size_t PretrainConfig::effective_warmup() const {
  return warmup_steps > 0 ? warmup_steps : steps / 10;
}

FinetuneMode parse_finetune_mode(std::string_view text) {
  if (text == "full") return FinetuneMode::kFull;
  if (text == "sup-only") return FinetuneMode::kSupOnly;
  if (text == "from-scratch") return FinetuneMode::kFromScratch;
  if (text == "byte-only") return FinetuneMode::kByteOnlyPretrain;
  throw Error(ErrorCode::kInvalidArgument, "unknown fine-tuning mode '" + std::string(text) + "'");
}

std::string_view to_string(FinetuneMode mode) {
  switch (mode) {
    case FinetuneMode::kFull: return "full";
    case FinetuneMode::kSupOnly: return "sup-only";
    case FinetuneMode::kFromScratch: return "from-scratch";
    case FinetuneMode::kByteOnlyPretrain: return "byte-only";
  }
  return "?";
}

void FinetuneConfig::validate() const {
  if (epochs < 1) throw Error(ErrorCode::kInvalidArgument, "epochs must be at least 1");
  if (!(lr > 0.0)) throw Error(ErrorCode::kInvalidArgument, "lr must be positive");
  if (!(lambda >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "lambda must be non-negative");
  if (!(label_fraction > 0.0 && label_fraction <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "label_fraction must be in (0, 1]");
  }
  if (batch_size < 1) throw Error(ErrorCode::kInvalidArgument, "batch_size must be at least 1");
  if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "warmup_fraction must be in [0, 1]");
  }
  if (!(drop_prob >= 0.0 && drop_prob < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "drop_prob must be in [0, 1)");
  }
}

nlohmann::json to_json(const CorruptionConfig& c) {
  return {{"mask_ratio", c.mask_ratio},
          {"protocol_k", c.protocol_k},
          {"protocol_spans", c.protocol_spans},
          {"vicinity_jitter", c.vicinity_jitter},
          {"packet_mask_ratio", c.packet_mask_ratio},
          {"drop_prob", c.drop_prob},
          {"shuffle_within_layer", c.shuffle_within_layer}};
}

CorruptionConfig corruption_from_json(const nlohmann::json& j, CorruptionConfig c) {
  c.mask_ratio = j.value("mask_ratio", c.mask_ratio);
  c.protocol_k = j.value("protocol_k", c.protocol_k);
  c.protocol_spans = j.value("protocol_spans", c.protocol_spans);
  c.vicinity_jitter = j.value("vicinity_jitter", c.vicinity_jitter);
  c.packet_mask_ratio = j.value("packet_mask_ratio", c.packet_mask_ratio);
  c.drop_prob = j.value("drop_prob", c.drop_prob);
  c.shuffle_within_layer = j.value("shuffle_within_layer", c.shuffle_within_layer);
  return c;
}

nlohmann::json to_json(const PretrainConfig& c) {
  return {{"model", c.model.to_json()},
          {"corruption", to_json(c.corruption)},
          {"pretrain",
           {{"steps", c.steps},
            {"lr", c.lr},
            {"batch_size", c.batch_size},
            {"warmup_steps", c.warmup_steps},
            {"seed", c.seed},
            {"grad_clip", c.grad_clip},
            {"tasks", c.tasks.to_string()}}}};
}

PretrainConfig pretrain_config_from_json(const nlohmann::json& j, PretrainConfig c) {
  if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model"));
  if (j.contains("corruption")) c.corruption = corruption_from_json(j.at("corruption"), c.corruption);
  if (j.contains("pretrain")) {
    const auto& p = j.at("pretrain");
    c.steps = p.value("steps", c.steps);
    c.lr = p.value("lr", c.lr);
    c.batch_size = p.value("batch_size", c.batch_size);
    c.warmup_steps = p.value("warmup_steps", c.warmup_steps);
    c.seed = p.value("seed", c.seed);
    c.grad_clip = p.value("grad_clip", c.grad_clip);
    if (p.contains("tasks")) c.tasks = TaskSet::parse(p.at("tasks").get<std::string>());
  }
  return c;
}

nlohmann::json to_json(const FinetuneConfig& c) {
  return {{"model", c.model.to_json()},
          {"finetune",
           {{"epochs", c.epochs},
            {"lr", c.lr},
            {"lambda", c.lambda},
            {"label_fraction", c.label_fraction},
            {"mode", std::string(to_string(c.mode))},
            {"seed", c.seed},
            {"batch_size", c.batch_size},
            {"warmup_fraction", c.warmup_fraction},
            {"drop_prob", c.drop_prob},
            {"shuffle_within_layer", c.shuffle_within_layer},
            {"stop_grad_raw", c.stop_grad_raw},
            {"n_classes", c.n_classes}}}};
}

FinetuneConfig finetune_config_from_json(const nlohmann::json& j, FinetuneConfig c) {
  if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model"));
  if (j.contains("corruption")) {
    const auto& k = j.at("corruption");
    c.drop_prob = k.value("drop_prob", c.drop_prob);
    c.shuffle_within_layer = k.value("shuffle_within_layer", c.shuffle_within_layer);
  }
  if (j.contains("finetune")) {
    const auto& f = j.at("finetune");
    c.epochs = f.value("epochs", c.epochs);
    c.lr = f.value("lr", c.lr);
    c.lambda = f.value("lambda", c.lambda);
    c.label_fraction = f.value("label_fraction", c.label_fraction);
    if (f.contains("mode")) c.mode = parse_finetune_mode(f.at("mode").get<std::string>());
    c.seed = f.value("seed", c.seed);
    c.batch_size = f.value("batch_size", c.batch_size);
    c.warmup_fraction = f.value("warmup_fraction", c.warmup_fraction);
    c.drop_prob = f.value("drop_prob", c.drop_prob);
    c.shuffle_within_layer = f.value("shuffle_within_layer", c.shuffle_within_layer);
    c.stop_grad_raw = f.value("stop_grad_raw", c.stop_grad_raw);
    c.n_classes = f.value("n_classes", c.n_classes);
  }
  return c;
}

Adam::Adam(const Model& model, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const NamedTensor& p : model.parameters()) {
    m_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
    v_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
  }
}

void Adam::step(Model& model, const Gradients& grads, double lr) {
  auto& params = model.parameters();
  if (params.size() != m_.size() || grads.tensors.size() != m_.size()) {
    throw Error(ErrorCode::kInvalidArgument, "optimizer state does not match the model");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Matrix& g = grads.tensors[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
    params[i].value.array() -=
        lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

double scheduled_lr(double lr, std::size_t step, std::size_t warmup) {
  if (step >= warmup) return lr;
  return lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
}

PretrainResult pretrain(const PretrainConfig& config, std::span<const FlowRecord> corpus,
                        const ModelCheckpoint* init, const PretrainProgress& progress) {
  config.validate();
  if (corpus.empty()) throw Error(ErrorCode::kEmptyCorpus, "pre-training corpus is empty");

  std::optional<Model> holder;
  if (init) {
    holder.emplace(init->to_model());
  } else {
    ModelConfig mc = config.model;
    mc.packets_per_flow = corpus.front().packet_count();
    mc.packet_len = corpus.front().packet_len();
    mc.n_classes = 0;
    holder.emplace(mc, derive_seed(config.seed, {kTagInit}));
  }
  Model& model = *holder;
  for (const FlowRecord& r : corpus) check_shape(model.config(), r);

  const std::vector<TokenSequence> tokens = tokenize(corpus);
  std::vector<std::vector<FieldSpanMap>> maps;
  if (config.tasks.protocol) maps = all_field_maps(corpus);

  const CorruptionConfig& cc = config.corruption;
  const std::size_t warmup = config.effective_warmup();
  const std::size_t B = config.batch_size;
  const std::uint64_t first_step = init ? init->step : 0;

  Rng sampler(derive_seed(config.seed, {kTagBatches}));
  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  auto next_flow = [&]() {
    if (cursor == order.size()) {
      order = sampler.permutation(corpus.size());
      cursor = 0;
    }
    return order[cursor++];
  };

  Adam adam(model);
  Gradients total = model.zero_gradients();
  std::vector<PretrainTerms> terms(B);
  std::vector<std::size_t> batch(B);
  PretrainResult result;
  result.log.reserve(config.steps);

  for (std::size_t s = 0; s < config.steps; ++s) {
    const std::uint64_t step = first_step + s;
    for (std::size_t i = 0; i < B; ++i) batch[i] = next_flow();
    total.set_zero();
    detail::for_each_sample(model, B, total, [&](std::size_t i, Gradients& g) {
      const TokenSequence& x = tokens[batch[i]];
      PretrainTerms& t = terms[i];
      t = {};
      if (config.tasks.byte) {
        t.byte = model.reconstruction_loss(
            corrupt_byte(x, cc.mask_ratio, derive_seed(config.seed, {kTagByte, step, i})), &g);
      }
      if (config.tasks.protocol) {
        const std::uint64_t seed = derive_seed(config.seed, {kTagProtocol, step, i});
        TrainingSample sample;
        try {
          sample = corrupt_protocol(x, maps[batch[i]], cc.protocol_k, cc.protocol_spans,
                                    cc.vicinity_jitter, seed);
        } catch (const Error& e) {
          if (e.code() != ErrorCode::kNoEligibleSpans) throw;
          sample = corrupt_byte(x, cc.mask_ratio, seed);
        }
        t.protocol = model.reconstruction_loss(sample, &g);
      }
      if (config.tasks.packet) {
        const std::uint64_t seed = derive_seed(config.seed, {kTagPacket, step, i});
        TrainingSample sample = x.real_packets >= 2 ? corrupt_packet(x, cc.packet_mask_ratio, seed)
                                                    : corrupt_byte(x, cc.packet_mask_ratio, seed);
        t.packet = model.reconstruction_loss(sample, &g);
      }
    });

    PretrainLogRow row;
    row.step = static_cast<std::size_t>(step + 1);
    for (const PretrainTerms& t : terms) {
      row.byte += t.byte;
      row.protocol += t.protocol;
      row.packet += t.packet;
    }
    row.byte /= static_cast<double>(B);
    row.protocol /= static_cast<double>(B);
    row.packet /= static_cast<double>(B);
    if (!finite(row.byte) || !finite(row.protocol) || !finite(row.packet)) {
      throw Error(ErrorCode::kNonFiniteLoss,
                  format_terms("step " + std::to_string(row.step) + " byte/protocol/packet", row.byte,
                               row.protocol, row.packet));
    }
    total.scale(1.0 / static_cast<double>(B));
    if (!finite(total.squared_norm())) {
      throw Error(ErrorCode::kNonFiniteLoss, "step " + std::to_string(row.step) + ": non-finite gradient");
    }
    clip_gradients(total, config.grad_clip);
    adam.step(model, total, scheduled_lr(config.lr, s, warmup));
    result.log.push_back(row);
    if (progress) progress(row);
  }

  result.checkpoint = ModelCheckpoint::from_model(model, first_step + config.steps, sampler.state());
  return result;
}

std::vector<FlowRecord> stratified_subsample(std::span<const FlowRecord> records, double fraction,
                                             std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "fraction must be in (0, 1]");
  }
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!records[i].label) throw Error(ErrorCode::kInvalidLabel, "unlabeled record in labeled set");
    by_class[*records[i].label].push_back(i);
  }
  std::vector<char> keep(records.size(), 0);
  for (auto& [label, idx] : by_class) {
    const double want = std::ceil(fraction * static_cast<double>(idx.size()) - 1e-9);
    const std::size_t n = std::clamp<std::size_t>(static_cast<std::size_t>(want), 1, idx.size());
    if (n < idx.size()) {
      Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(label)}));
      rng.shuffle(idx);
    }
    for (std::size_t k = 0; k < n; ++k) keep[idx[k]] = 1;
  }
  std::vector<FlowRecord> out;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (keep[i]) out.push_back(records[i]);
  return out;
}

FinetuneResult finetune(const FinetuneConfig& config, const ModelCheckpoint* init,
                        std::span<const FlowRecord> train, std::span<const FlowRecord> val,
                        const FinetuneProgress& progress) {
  config.validate();
  if (train.empty()) throw Error(ErrorCode::kEmptyCorpus, "training set is empty");

  int max_label = -1;
  for (auto set : {train, val}) {
    for (const FlowRecord& r : set) {
      if (!r.label || *r.label < 0) throw Error(ErrorCode::kLabelMismatch, "record without a valid label");
      max_label = std::max(max_label, *r.label);
    }
  }
  const std::size_t n_classes =
      config.n_classes > 0 ? config.n_classes : static_cast<std::size_t>(max_label + 1);
  if (static_cast<std::size_t>(max_label) >= n_classes) {
    throw Error(ErrorCode::kLabelMismatch,
                "label " + std::to_string(max_label) + " outside [0, " + std::to_string(n_classes) + ")");
  }

  std::optional<Model> holder;
  if (config.mode == FinetuneMode::kFromScratch) {
    ModelConfig mc = init ? init->config : config.model;
    if (!init) {
      mc.packets_per_flow = train.front().packet_count();
      mc.packet_len = train.front().packet_len();
    }
    mc.n_classes = 0;
    holder.emplace(mc, derive_seed(config.seed, {kTagInit}));
  } else {
    if (!init) {
      throw Error(ErrorCode::kMissingInit,
                  "mode " + std::string(to_string(config.mode)) + " needs a pre-trained checkpoint");
    }
    holder.emplace(init->to_model());
  }
  Model& model = *holder;
  model.attach_classifier(n_classes, derive_seed(config.seed, {kTagHead}));
  for (auto set : {train, val})
    for (const FlowRecord& r : set) check_shape(model.config(), r);

  FinetuneResult result;
  result.n_classes = n_classes;
  const std::vector<FlowRecord> data =
      config.label_fraction < 1.0
          ? stratified_subsample(train, config.label_fraction, derive_seed(config.seed, {kTagSubsample}))
          : std::vector<FlowRecord>(train.begin(), train.end());
  result.train_size = data.size();

  const double lambda = config.effective_lambda();
  const std::vector<TokenSequence> raw = tokenize(data);
  std::vector<std::vector<FieldSpanMap>> maps;
  if (lambda > 0.0) maps = all_field_maps(data);

  const std::size_t n = data.size();
  const std::size_t B = std::min(config.batch_size, n);
  const std::size_t batches_per_epoch = (n + B - 1) / B;
  const std::size_t total_steps = batches_per_epoch * config.epochs;
  const auto warmup = static_cast<std::size_t>(
      std::ceil(config.warmup_fraction * static_cast<double>(total_steps) - 1e-9));

  Adam adam(model);
  Gradients total = model.zero_gradients();
  std::vector<FinetuneTerms> terms(B);
  std::vector<NamedTensor> best_params;
  double best_f1 = -1.0;
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    Rng shuffler(derive_seed(config.seed, {kTagOrder, epoch}));
    const std::vector<std::size_t> order = shuffler.permutation(n);
    double sum_sup = 0.0;
    double sum_cons = 0.0;
    for (std::size_t b = 0; b < batches_per_epoch; ++b) {
      const std::size_t begin = b * B;
      const std::size_t count = std::min(B, n - begin);
      total.set_zero();
      detail::for_each_sample(model, count, total, [&](std::size_t i, Gradients& g) {
        const std::size_t idx = order[begin + i];
        const FlowRecord& r = data[idx];
        TokenSequence proto;
        TokenSequence packet;
        if (lambda > 0.0) {
          proto = augment_protocol(r, maps[idx], derive_seed(config.seed, {kTagAugProtocol, epoch, idx}),
                                   config.shuffle_within_layer);
          packet = augment_packet(r, config.drop_prob, derive_seed(config.seed, {kTagAugPacket, epoch, idx}));
        }
        terms[i] = model.finetune_loss(raw[idx], proto, packet, *r.label, lambda, config.stop_grad_raw, &g);
      });
      BatchLogRow row;
      row.epoch = epoch;
      row.batch = b;
      for (std::size_t i = 0; i < count; ++i) {
        row.l_sup += terms[i].supervised;
        row.l_cons += terms[i].consistency;
        row.l_total += terms[i].total;
      }
      sum_sup += row.l_sup;
      sum_cons += row.l_cons;
      row.l_sup /= static_cast<double>(count);
      row.l_cons /= static_cast<double>(count);
      row.l_total /= static_cast<double>(count);
      if (!finite(row.l_total)) {
        throw Error(ErrorCode::kNonFiniteLoss,
                    format_terms("epoch " + std::to_string(epoch) + " batch " + std::to_string(b) +
                                     " sup/cons/total",
                                 row.l_sup, row.l_cons, row.l_total));
      }
      total.scale(1.0 / static_cast<double>(count));
      adam.step(model, total, scheduled_lr(config.lr, step++, warmup));
      result.batch_log.push_back(row);
    }

    FinetuneLogRow row;
    row.epoch = epoch;
    row.l_sup = sum_sup / static_cast<double>(n);
    row.l_cons = sum_cons / static_cast<double>(n);
    row.val_f1 = val.empty() ? 0.0 : evaluate(model, val).macro_f1;
    if (val.empty() || row.val_f1 > best_f1) {
      best_f1 = row.val_f1;
      best_params = model.parameters();
      result.best_epoch = epoch;
    }
    result.log.push_back(row);
    if (progress) progress(row);
  }

  model.parameters() = std::move(best_params);
  result.checkpoint = ModelCheckpoint::from_model(model, step);
  return result;
}

void write_pretrain_log(const std::filesystem::path& path, std::span<const PretrainLogRow> log) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out.precision(17);
  out << "step,l_byte,l_protocol,l_packet\n";
  for (const auto& r : log) out << r.step << ',' << r.byte << ',' << r.protocol << ',' << r.packet << '\n';
}

void write_finetune_log(const std::filesystem::path& path, std::span<const FinetuneLogRow> log) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out.precision(17);
  out << "epoch,l_sup,l_cons,val_f1\n";
  for (const auto& r : log) out << r.epoch << ',' << r.l_sup << ',' << r.l_cons << ',' << r.val_f1 << '\n';
}

}  // namespace nethira
