#pragma once

// Hand-built toy model and samples for loss and gradient checks.

#include <vector>

#include "nethira/corruption.hpp"
#include "nethira/model.hpp"

namespace fixture {

using namespace nethira;

inline constexpr Token kToyMask = 10;  // vocab 12: bytes 0..9, MASK=10, BOS=11

inline ModelConfig tiny_config() {
  ModelConfig c;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_ff = 16;
  c.n_enc_layers = 1;
  c.n_dec_layers = 1;
  c.packets_per_flow = 2;
  c.packet_len = 4;
  c.vocab_size = 12;
  c.n_classes = 3;
  return c;
}

inline TokenSequence seq(std::vector<Token> t, std::size_t real = 2) { return TokenSequence{std::move(t), 4, real}; }

inline TrainingSample masked(TokenSequence target, std::vector<std::size_t> positions, CorruptionKind kind,
                             std::vector<std::size_t> perm = {0, 1}) {
  TrainingSample s;
  s.target = target;
  s.input = target;
  for (std::size_t p : positions) s.input.tokens[p] = kToyMask;
  s.plan.kind = kind;
  s.plan.masked_positions = std::move(positions);
  s.plan.permutation = std::move(perm);
  return s;
}

inline TrainingSample byte_sample() {
  return masked(seq({1, 2, 3, 4, 5, 6, 7, 8}), {1, 5}, CorruptionKind::kByte);
}

inline TrainingSample protocol_sample() {
  return masked(seq({1, 2, 3, 4, 5, 6, 7, 8}), {2, 3, 6}, CorruptionKind::kProtocol);
}

inline TrainingSample packet_sample() {
  return masked(seq({5, 6, 7, 8, 1, 2, 3, 4}), {0, 7}, CorruptionKind::kPacket, {1, 0});
}

inline TokenSequence raw_view() { return seq({1, 2, 3, 4, 5, 6, 7, 8}); }
inline TokenSequence protocol_view() { return seq({3, 1, 2, 4, 7, 5, 6, 8}); }
inline TokenSequence packet_view() { return seq({5, 6, 7, 8, 0, 0, 0, 0}, 1); }

}  // namespace fixture
