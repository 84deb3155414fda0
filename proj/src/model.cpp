#include "nethira/model.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "nethira/error.hpp"
#include "nethira/rng.hpp"

namespace nethira {

using autodiff::Tape;
using autodiff::Var;

namespace {

std::string layer_name(const char* stack, std::size_t i, const char* rest) {
  return std::string(stack) + "." + std::to_string(i) + "." + rest;
}

Matrix random_normal(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = stddev * rng.normal();
  }
  return m;
}

Matrix xavier(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
  return random_normal(static_cast<Eigen::Index>(fan_in), static_cast<Eigen::Index>(fan_out), stddev, rng);
}

void add_linear(std::vector<NamedTensor>& out, const std::string& prefix, std::size_t in,
                std::size_t n_out, Rng& rng) {
  out.push_back({prefix + ".w", xavier(in, n_out, rng)});
  out.push_back({prefix + ".b", Matrix::Zero(1, static_cast<Eigen::Index>(n_out))});
}

void add_norm(std::vector<NamedTensor>& out, const std::string& prefix, std::size_t d) {
  out.push_back({prefix + ".gain", Matrix::Ones(1, static_cast<Eigen::Index>(d))});
  out.push_back({prefix + ".bias", Matrix::Zero(1, static_cast<Eigen::Index>(d))});
}

void add_attention(std::vector<NamedTensor>& out, const std::string& prefix, std::size_t d,
                   Rng& rng) {
  for (const char* part : {".q", ".k", ".v", ".o"}) add_linear(out, prefix + part, d, d, rng);
}

std::vector<std::size_t> as_indices(std::span<const Token> tokens) {
  return {tokens.begin(), tokens.end()};
}

std::size_t active_length(const TokenSequence& seq) {
  const std::size_t valid = seq.valid_length();
  return valid == 0 ? seq.size() : std::min(valid, seq.size());
}

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::kInvalidArgument, what); };
  if (d_model == 0 || n_heads == 0 || d_ff == 0) fail("model widths must be positive");
  if (d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
  if (packets_per_flow == 0 || packet_len == 0) fail("M and L must be positive");
  if (vocab_size < 2) fail("vocabulary too small");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"d_model", d_model},       {"n_enc_layers", n_enc_layers},
          {"n_dec_layers", n_dec_layers}, {"n_heads", n_heads},
          {"d_ff", d_ff},             {"packets_per_flow", packets_per_flow},
          {"packet_len", packet_len}, {"vocab_size", vocab_size},
          {"n_classes", n_classes},   {"max_len", max_len()}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.d_model = j.value("d_model", c.d_model);
  c.n_enc_layers = j.value("n_enc_layers", c.n_enc_layers);
  c.n_dec_layers = j.value("n_dec_layers", c.n_dec_layers);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.d_ff = j.value("d_ff", c.d_ff);
  c.packets_per_flow = j.value("packets_per_flow", c.packets_per_flow);
  c.packet_len = j.value("packet_len", c.packet_len);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.n_classes = j.value("n_classes", c.n_classes);
  return c;
}

void Gradients::add(const Gradients& other) {
  for (std::size_t i = 0; i < tensors.size(); ++i) tensors[i] += other.tensors[i];
}

void Gradients::scale(double factor) {
  for (Matrix& t : tensors) t *= factor;
}

void Gradients::set_zero() {
  for (Matrix& t : tensors) t.setZero();
}

double Gradients::squared_norm() const {
  double s = 0.0;
  for (const Matrix& t : tensors) s += t.squaredNorm();
  return s;
}

ClassifierOutput ClassifierOutput::from_logits(Eigen::VectorXd logits) {
  ClassifierOutput out;
  out.probs = autodiff::softmax(logits);
  out.logits = std::move(logits);
  return out;
}

std::size_t ClassifierOutput::argmax() const {
  Eigen::Index best = 0;
  probs.maxCoeff(&best);
  return static_cast<std::size_t>(best);
}

// Builds one forward pass on a tape, binding each parameter at first use.
class Model::Graph {
 public:
  Graph(const Model& model, Gradients* grads)
      : model_(model), grads_(grads), bound_(model.params_.size()) {
    for (std::size_t i = 0; i < model.params_.size(); ++i) index_[model.params_[i].name] = i;
  }

  Tape& tape() { return tape_; }

  Var param(const std::string& name) {
    const auto it = index_.find(name);
    if (it == index_.end()) throw Error(ErrorCode::kInvalidArgument, "missing parameter " + name);
    std::optional<Var>& slot = bound_[it->second];
    if (!slot) {
      Matrix* sink = grads_ ? &grads_->tensors[it->second] : nullptr;
      slot = tape_.parameter(model_.params_[it->second].value, sink);
    }
    return *slot;
  }

  Var linear(Var x, const std::string& prefix) {
    return tape_.add_row(tape_.matmul(x, param(prefix + ".w")), param(prefix + ".b"));
  }

  Var norm(Var x, const std::string& prefix) {
    return tape_.layer_norm(x, param(prefix + ".gain"), param(prefix + ".bias"));
  }

  Var embed(std::span<const Token> tokens) {
    const std::vector<std::size_t> ids = as_indices(tokens);
    Var tok = tape_.gather_rows(param("embed.token"), ids);
    Var pos = tape_.slice_rows(param("embed.position"), 0, tokens.size());
    return tape_.add(tok, pos);
  }

  Var attention(Var x_q, Var x_kv, const std::string& prefix, bool causal) {
    Var q = linear(x_q, prefix + ".q");
    Var k = linear(x_kv, prefix + ".k");
    Var v = linear(x_kv, prefix + ".v");
    Var o = tape_.attention(q, k, v, model_.config_.n_heads, causal);
    return linear(o, prefix + ".o");
  }

  Var feed_forward(Var x, const std::string& prefix) {
    return linear(tape_.gelu(linear(x, prefix + ".fc1")), prefix + ".fc2");
  }

  Var encoder(Var x) {
    for (std::size_t i = 0; i < model_.config_.n_enc_layers; ++i) {
      x = norm(tape_.add(x, attention(x, x, layer_name("enc", i, "self"), false)),
               layer_name("enc", i, "ln1"));
      x = norm(tape_.add(x, feed_forward(x, layer_name("enc", i, "ff"))),
               layer_name("enc", i, "ln2"));
    }
    return x;
  }

  Var decoder(Var memory, std::span<const Token> shifted) {
    Var x = embed(shifted);
    for (std::size_t i = 0; i < model_.config_.n_dec_layers; ++i) {
      x = norm(tape_.add(x, attention(x, x, layer_name("dec", i, "self"), true)),
               layer_name("dec", i, "ln1"));
      x = norm(tape_.add(x, attention(x, memory, layer_name("dec", i, "cross"), false)),
               layer_name("dec", i, "ln2"));
      x = norm(tape_.add(x, feed_forward(x, layer_name("dec", i, "ff"))),
               layer_name("dec", i, "ln3"));
    }
    return x;
  }

  // Encoder over the input, teacher-forced decoder over the shifted target.
  Var hidden(std::span<const Token> input, std::span<const Token> target) {
    model_.check_tokens(input);
    model_.check_tokens(target);
    Var memory = encoder(embed(input));
    const std::vector<Token> shifted = shift_right(target, model_.config_.bos_token());
    return decoder(memory, shifted);
  }

  Var class_logits(const TokenSequence& seq) {
    if (!model_.has_classifier()) {
      throw Error(ErrorCode::kNoClassifierHead, "model has no classification head");
    }
    const std::span<const Token> active(seq.tokens.data(), active_length(seq));
    Var pooled = tape_.mean_rows(hidden(active, active));
    return linear(tape_.gelu(linear(pooled, "cls.fc1")), "cls.fc2");
  }

  Var reconstruction(const TrainingSample& sample) {
    const auto& masked = sample.plan.masked_positions;
    if (masked.empty()) throw Error(ErrorCode::kEmptyMaskSet, "no masked positions");
    const std::size_t n = active_length(sample.input);
    const std::span<const Token> input(sample.input.tokens.data(), n);
    const std::span<const Token> target(sample.target.tokens.data(), n);
    Var h = hidden(input, target);
    std::vector<std::size_t> targets;
    targets.reserve(masked.size());
    for (std::size_t p : masked) {
      if (p >= n) throw Error(ErrorCode::kInvalidArgument, "masked position inside padding");
      targets.push_back(target[p]);
    }
    Var logits = linear(tape_.gather_rows(h, masked), "head.out");
    return tape_.cross_entropy(logits, targets);
  }

 private:
  const Model& model_;
  Gradients* grads_;
  Tape tape_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::optional<Var>> bound_;
};

Model::Model(ModelConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  init_parameters(seed);
}

Model::Model(ModelConfig config, std::vector<NamedTensor> parameters)
    : config_(config), params_(std::move(parameters)) {
  config_.validate();
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const NamedTensor& t : params_) n += static_cast<std::size_t>(t.value.size());
  return n;
}

Gradients Model::zero_gradients() const {
  Gradients g;
  g.tensors.reserve(params_.size());
  for (const NamedTensor& t : params_) g.tensors.push_back(Matrix::Zero(t.value.rows(), t.value.cols()));
  return g;
}

void Model::init_parameters(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t d = config_.d_model;
  const double embed_std = 1.0 / std::sqrt(static_cast<double>(d));
  params_.clear();
  params_.push_back({"embed.token", random_normal(static_cast<Eigen::Index>(config_.vocab_size),
                                                  static_cast<Eigen::Index>(d), embed_std, rng)});
  params_.push_back({"embed.position", random_normal(static_cast<Eigen::Index>(config_.max_len()),
                                                     static_cast<Eigen::Index>(d), embed_std, rng)});
  for (std::size_t i = 0; i < config_.n_enc_layers; ++i) {
    add_attention(params_, layer_name("enc", i, "self"), d, rng);
    add_norm(params_, layer_name("enc", i, "ln1"), d);
    add_linear(params_, layer_name("enc", i, "ff.fc1"), d, config_.d_ff, rng);
    add_linear(params_, layer_name("enc", i, "ff.fc2"), config_.d_ff, d, rng);
    add_norm(params_, layer_name("enc", i, "ln2"), d);
  }
  for (std::size_t i = 0; i < config_.n_dec_layers; ++i) {
    add_attention(params_, layer_name("dec", i, "self"), d, rng);
    add_norm(params_, layer_name("dec", i, "ln1"), d);
    add_attention(params_, layer_name("dec", i, "cross"), d, rng);
    add_norm(params_, layer_name("dec", i, "ln2"), d);
    add_linear(params_, layer_name("dec", i, "ff.fc1"), d, config_.d_ff, rng);
    add_linear(params_, layer_name("dec", i, "ff.fc2"), config_.d_ff, d, rng);
    add_norm(params_, layer_name("dec", i, "ln3"), d);
  }
  add_linear(params_, "head.out", d, config_.vocab_size, rng);
  if (config_.n_classes > 0) {
    const std::size_t n_classes = config_.n_classes;
    config_.n_classes = 0;
    attach_classifier(n_classes, derive_seed(seed, {0xC1A55}));
  }
}

void Model::attach_classifier(std::size_t n_classes, std::uint64_t seed) {
  if (n_classes < 1) throw Error(ErrorCode::kInvalidArgument, "classifier needs at least one class");
  std::erase_if(params_, [](const NamedTensor& t) { return t.name.starts_with("cls."); });
  Rng rng(seed);
  add_linear(params_, "cls.fc1", config_.d_model, config_.d_model, rng);
  add_linear(params_, "cls.fc2", config_.d_model, n_classes, rng);
  config_.n_classes = n_classes;
}

void Model::check_tokens(std::span<const Token> tokens) const {
  if (tokens.size() > config_.max_len()) {
    throw Error(ErrorCode::kInvalidArgument, "sequence longer than the positional table");
  }
  for (Token t : tokens) {
    if (t >= config_.vocab_size) {
      throw Error(ErrorCode::kOutOfVocab, "token id " + std::to_string(t) + " is out of vocabulary");
    }
  }
}

Matrix Model::embed(std::span<const Token> tokens) const {
  check_tokens(tokens);
  Graph g(*this, nullptr);
  return g.tape().value(g.embed(tokens));
}

Matrix Model::encode(const Matrix& embedded) const {
  Graph g(*this, nullptr);
  return g.tape().value(g.encoder(g.tape().constant(embedded)));
}

Matrix Model::decode(const Matrix& memory, std::span<const Token> shifted_targets) const {
  check_tokens(shifted_targets);
  Graph g(*this, nullptr);
  Var h = g.decoder(g.tape().constant(memory), shifted_targets);
  return g.tape().value(g.linear(h, "head.out"));
}

ClassifierOutput Model::classify(const TokenSequence& tokens) const {
  Graph g(*this, nullptr);
  const Matrix& logits = g.tape().value(g.class_logits(tokens));
  return ClassifierOutput::from_logits(logits.row(0).transpose());
}

double Model::reconstruction_loss(const TrainingSample& sample, Gradients* grads) const {
  Graph g(*this, grads);
  Var loss = g.reconstruction(sample);
  const double value = g.tape().scalar(loss);
  if (grads) g.tape().backward(loss);
  return value;
}

PretrainTerms Model::pretrain_loss(const TrainingSample& byte, const TrainingSample& protocol,
                                   const TrainingSample& packet, Gradients* grads) const {
  PretrainTerms terms;
  terms.byte = reconstruction_loss(byte, grads);
  terms.protocol = reconstruction_loss(protocol, grads);
  terms.packet = reconstruction_loss(packet, grads);
  return terms;
}

double Model::supervised_loss(const TokenSequence& raw, int label, Gradients* grads) const {
  if (label < 0 || static_cast<std::size_t>(label) >= config_.n_classes) {
    throw Error(ErrorCode::kInvalidLabel, "label " + std::to_string(label) + " out of range");
  }
  Graph g(*this, grads);
  const std::size_t target = static_cast<std::size_t>(label);
  Var loss = g.tape().cross_entropy(g.class_logits(raw), std::span(&target, 1));
  const double value = g.tape().scalar(loss);
  if (grads) g.tape().backward(loss);
  return value;
}

FinetuneTerms Model::finetune_loss(const TokenSequence& raw, const TokenSequence& protocol,
                                   const TokenSequence& packet, int label, double lambda,
                                   bool stop_grad_raw, Gradients* grads) const {
  if (lambda < 0.0) throw Error(ErrorCode::kInvalidArgument, "lambda must be non-negative");
  if (!has_classifier()) throw Error(ErrorCode::kNoClassifierHead, "model has no classification head");
  if (label < 0 || static_cast<std::size_t>(label) >= config_.n_classes) {
    throw Error(ErrorCode::kInvalidLabel, "label " + std::to_string(label) + " out of range");
  }
  Graph g(*this, grads);
  Tape& tape = g.tape();
  const std::size_t target = static_cast<std::size_t>(label);
  Var raw_logits = g.class_logits(raw);
  Var sup = tape.cross_entropy(raw_logits, std::span(&target, 1));
  FinetuneTerms terms;
  terms.supervised = tape.scalar(sup);
  Var total = sup;
  if (lambda > 0.0) {
    Var kl_protocol = tape.kl_divergence(raw_logits, g.class_logits(protocol), stop_grad_raw);
    Var kl_packet = tape.kl_divergence(raw_logits, g.class_logits(packet), stop_grad_raw);
    Var cons = tape.add(kl_protocol, kl_packet);
    terms.consistency = tape.scalar(cons);
    total = tape.add(sup, tape.scale(cons, lambda));
  }
  terms.total = tape.scalar(total);
  if (grads) tape.backward(total);
  return terms;
}

std::vector<Token> shift_right(std::span<const Token> tokens, Token bos) {
  std::vector<Token> out;
  out.reserve(tokens.size());
  if (tokens.empty()) return out;
  out.push_back(bos);
  out.insert(out.end(), tokens.begin(), tokens.end() - 1);
  return out;
}

double reconstruction_loss(const Matrix& logits, std::span<const Token> target,
                           std::span<const std::size_t> masked_positions) {
  if (masked_positions.empty()) throw Error(ErrorCode::kEmptyMaskSet, "no masked positions");
  double loss = 0.0;
  for (std::size_t p : masked_positions) {
    const auto row = static_cast<Eigen::Index>(p);
    const Eigen::VectorXd z = logits.row(row).transpose();
    if (target[p] >= z.size()) throw Error(ErrorCode::kOutOfVocab, "target token out of vocabulary");
    loss += autodiff::log_sum_exp(z) - z(target[p]);
  }
  return loss;
}

double kl_divergence(const ClassifierOutput& p, const ClassifierOutput& q) {
  const Eigen::VectorXd log_p = p.logits.size() ? Eigen::VectorXd(p.logits.array() - autodiff::log_sum_exp(p.logits))
                                                : Eigen::VectorXd(p.probs.array().log());
  const Eigen::VectorXd log_q = q.logits.size() ? Eigen::VectorXd(q.logits.array() - autodiff::log_sum_exp(q.logits))
                                                : Eigen::VectorXd(q.probs.array().log());
  return (log_p.array().exp() * (log_p - log_q).array()).sum();
}

double cross_entropy(const ClassifierOutput& out, int label) {
  if (label < 0 || label >= out.logits.size()) {
    throw Error(ErrorCode::kInvalidLabel, "label " + std::to_string(label) + " out of range");
  }
  return autodiff::log_sum_exp(out.logits) - out.logits(label);
}

FinetuneTerms finetune_loss(const ClassifierOutput& raw, const ClassifierOutput& protocol,
                            const ClassifierOutput& packet, int label, double lambda) {
  if (lambda < 0.0) throw Error(ErrorCode::kInvalidArgument, "lambda must be non-negative");
  FinetuneTerms terms;
  terms.supervised = cross_entropy(raw, label);
  terms.consistency = kl_divergence(raw, protocol) + kl_divergence(raw, packet);
  terms.total = terms.supervised + lambda * terms.consistency;
  return terms;
}

}  // namespace nethira
