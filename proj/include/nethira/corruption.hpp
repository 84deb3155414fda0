#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "nethira/flow.hpp"
#include "nethira/protocol_map.hpp"

namespace nethira {

using Token = std::uint16_t;

inline constexpr Token kPadToken = 256;
inline constexpr Token kMaskToken = 257;
inline constexpr Token kBosToken = 258;
inline constexpr std::size_t kVocabSize = 259;

/// Flattened flow as model tokens. Positions at or beyond valid_length()
/// belong to padding packets.
struct TokenSequence {
  std::vector<Token> tokens;
  std::size_t packet_len = 0;
  std::size_t real_packets = 0;

  std::size_t size() const { return tokens.size(); }
  std::size_t packet_count() const { return packet_len == 0 ? 0 : tokens.size() / packet_len; }
  std::size_t valid_length() const { return real_packets * packet_len; }

  bool operator==(const TokenSequence&) const = default;
};

TokenSequence to_tokens(const FlowRecord& record);

enum class CorruptionKind { kByte, kProtocol, kPacket };

struct CorruptionPlan {
  CorruptionKind kind = CorruptionKind::kByte;
  std::vector<std::size_t> masked_positions;  // sorted, unique
  std::vector<std::size_t> permutation;       // slot i holds original packet permutation[i]
  std::uint64_t seed = 0;
};

struct TrainingSample {
  TokenSequence input;   // corrupted
  TokenSequence target;  // clean, in post-permutation order
  CorruptionPlan plan;
};

struct CorruptionConfig {
  double mask_ratio = 0.15;
  std::size_t protocol_k = 4;
  std::size_t protocol_spans = 8;
  std::size_t vicinity_jitter = 1;
  double packet_mask_ratio = 0.15;
  double drop_prob = 0.2;
  bool shuffle_within_layer = false;
};

/// Field maps of every packet slot of a record.
std::vector<FieldSpanMap> field_maps(const FlowRecord& record);

/// Masks ceil(ratio * eligible) positions drawn without replacement from the
/// non-padding region.
TrainingSample corrupt_byte(const TokenSequence& x, double ratio, std::uint64_t seed);

/// Draws `n_spans` starts (with replacement) from {span.offset + j : j <= jitter}
/// over the mapped fields of real packets and masks up to `k` bytes from each
/// start, clipped at the packet end.
TrainingSample corrupt_protocol(const TokenSequence& x, std::span<const FieldSpanMap> maps,
                                std::size_t k, std::size_t n_spans, std::size_t jitter,
                                std::uint64_t seed);

/// Applies a uniformly drawn non-identity permutation to the real packets and
/// then byte-masks the permuted sequence. Needs at least two real packets.
TrainingSample corrupt_packet(const TokenSequence& x, double ratio, std::uint64_t seed);
TrainingSample corrupt_packet(const FlowRecord& record, double ratio, std::uint64_t seed);

/// Field-order shuffle of each real packet, flattened.
TokenSequence augment_protocol(const FlowRecord& record, std::span<const FieldSpanMap> maps,
                               std::uint64_t seed, bool within_layer = false);

/// Random packet loss (at least one survivor) followed by reordering of the
/// survivors, repacked from slot 0 and padded back to M packets.
TokenSequence augment_packet(const FlowRecord& record, double drop_prob, std::uint64_t seed);

}  // namespace nethira
