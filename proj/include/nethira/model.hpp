#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nethira/corruption.hpp"
#include "nethira/tape.hpp"

namespace nethira {

using autodiff::Matrix;

struct ModelConfig {
  std::size_t d_model = 256;
  std::size_t n_enc_layers = 6;
  std::size_t n_dec_layers = 6;
  std::size_t n_heads = 8;
  std::size_t d_ff = 1024;
  std::size_t packets_per_flow = 5;  // M
  std::size_t packet_len = 128;      // L
  std::size_t vocab_size = kVocabSize;
  std::size_t n_classes = 0;         // 0 until a classifier head is attached

  std::size_t max_len() const { return packets_per_flow * packet_len; }
  /// The last vocabulary id starts every decoder input.
  Token bos_token() const { return static_cast<Token>(vocab_size - 1); }

  /// Throws Error{kInvalidArgument} when the shape constraints do not hold.
  void validate() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);

  bool operator==(const ModelConfig&) const = default;
};

struct NamedTensor {
  std::string name;
  Matrix value;
};

/// Gradient buffers aligned with Model::parameters().
struct Gradients {
  std::vector<Matrix> tensors;

  void add(const Gradients& other);
  void scale(double factor);
  void set_zero();
  double squared_norm() const;
};

struct ClassifierOutput {
  Eigen::VectorXd logits;
  Eigen::VectorXd probs;

  static ClassifierOutput from_logits(Eigen::VectorXd logits);
  std::size_t argmax() const;
};

struct PretrainTerms {
  double byte = 0.0;
  double protocol = 0.0;
  double packet = 0.0;

  double total() const { return byte + protocol + packet; }
};

struct FinetuneTerms {
  double supervised = 0.0;
  double consistency = 0.0;  // KL(raw||protocol) + KL(raw||packet)
  double total = 0.0;        // supervised + lambda * consistency
};

/// Encoder-decoder transformer over byte tokens with a reconstruction head
/// and an optional classification head.
///
/// Post-LN blocks: x = LN(x + Attention(x)), x = LN(x + FFN(x)). The encoder
/// and decoder share the token and position embeddings. A sequence only
/// attends inside its real packets: every forward pass runs on the prefix of
/// `valid_length()` positions, which is exactly what key-masking the padding
/// packets would compute for those positions.
class Model {
 public:
  Model(ModelConfig config, std::uint64_t seed);
  Model(ModelConfig config, std::vector<NamedTensor> parameters);

  const ModelConfig& config() const { return config_; }
  const std::vector<NamedTensor>& parameters() const { return params_; }
  std::vector<NamedTensor>& parameters() { return params_; }
  std::size_t parameter_count() const;

  Gradients zero_gradients() const;

  bool has_classifier() const { return config_.n_classes > 0; }
  /// Attaches (or replaces) a freshly initialized classifier head.
  void attach_classifier(std::size_t n_classes, std::uint64_t seed);

  // Forward passes without gradients.

  /// Token plus positional embedding, one row per token.
  Matrix embed(std::span<const Token> tokens) const;
  /// Bidirectional encoder stack.
  Matrix encode(const Matrix& embedded) const;
  /// Teacher-forced decoder over BOS-shifted targets; [T, vocab] logits.
  Matrix decode(const Matrix& memory, std::span<const Token> shifted_targets) const;
  ClassifierOutput classify(const TokenSequence& tokens) const;

  // Losses. With a non-null `grads`, gradients are added into it.

  /// Reconstruction loss of one sample over its masked positions.
  double reconstruction_loss(const TrainingSample& sample, Gradients* grads = nullptr) const;
  /// Sum of the three reconstruction losses, each from its own forward pass.
  PretrainTerms pretrain_loss(const TrainingSample& byte, const TrainingSample& protocol,
                              const TrainingSample& packet, Gradients* grads = nullptr) const;
  /// Cross-entropy on the raw view plus lambda times the two KL terms. With
  /// lambda == 0 the augmented views are not run.
  FinetuneTerms finetune_loss(const TokenSequence& raw, const TokenSequence& protocol,
                              const TokenSequence& packet, int label, double lambda,
                              bool stop_grad_raw = false, Gradients* grads = nullptr) const;
  /// Supervised cross-entropy alone.
  double supervised_loss(const TokenSequence& raw, int label, Gradients* grads = nullptr) const;

 private:
  class Graph;

  void init_parameters(std::uint64_t seed);
  void check_tokens(std::span<const Token> tokens) const;

  ModelConfig config_;
  std::vector<NamedTensor> params_;
};

/// [BOS, t0, ..., t_{n-2}].
std::vector<Token> shift_right(std::span<const Token> tokens, Token bos);

/// Standalone loss math on plain values.
double reconstruction_loss(const Matrix& logits, std::span<const Token> target,
                           std::span<const std::size_t> masked_positions);
double kl_divergence(const ClassifierOutput& p, const ClassifierOutput& q);
double cross_entropy(const ClassifierOutput& out, int label);
FinetuneTerms finetune_loss(const ClassifierOutput& raw, const ClassifierOutput& protocol,
                            const ClassifierOutput& packet, int label, double lambda);

}  // namespace nethira
