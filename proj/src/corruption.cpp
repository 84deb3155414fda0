#include "nethira/corruption.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "nethira/error.hpp"
#include "nethira/ingest.hpp"

namespace nethira {

namespace {

std::size_t mask_count(double ratio, std::size_t eligible) {
  // Tolerate representation error in ratio * eligible (0.15 * 640 is 96).
  const double raw = ratio * static_cast<double>(eligible);
  auto count = static_cast<std::size_t>(std::ceil(raw - 1e-9));
  return std::clamp<std::size_t>(count, 1, eligible);
}

void check_ratio(double ratio) {
  if (!(ratio > 0.0 && ratio < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "mask ratio must lie in (0, 1)");
  }
}

// Samples `count` distinct positions in [0, eligible) by partial Fisher-Yates.
std::vector<std::size_t> sample_positions(std::size_t eligible, std::size_t count, Rng& rng) {
  std::vector<std::size_t> pool(eligible);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + rng.uniform_index(eligible - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(count);
  std::sort(pool.begin(), pool.end());
  return pool;
}

TrainingSample apply_mask(TokenSequence target, std::vector<std::size_t> positions,
                          CorruptionPlan plan) {
  TrainingSample sample;
  sample.input = target;
  for (std::size_t p : positions) sample.input.tokens[p] = kMaskToken;
  sample.target = std::move(target);
  plan.masked_positions = std::move(positions);
  sample.plan = std::move(plan);
  return sample;
}

std::vector<std::size_t> identity(std::size_t n) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  return perm;
}

TokenSequence from_packets(const std::vector<const Bytes*>& packets, std::size_t total_packets,
                           std::size_t packet_len) {
  TokenSequence seq;
  seq.packet_len = packet_len;
  seq.real_packets = packets.size();
  seq.tokens.assign(total_packets * packet_len, 0);
  for (std::size_t i = 0; i < packets.size(); ++i) {
    std::copy(packets[i]->begin(), packets[i]->end(),
              seq.tokens.begin() + static_cast<std::ptrdiff_t>(i * packet_len));
  }
  return seq;
}

}  // namespace

TokenSequence to_tokens(const FlowRecord& record) {
  TokenSequence seq;
  const Bytes flat = flatten(record);
  seq.tokens.assign(flat.begin(), flat.end());
  seq.packet_len = record.packet_len();
  seq.real_packets = record.real_packet_count;
  return seq;
}

std::vector<FieldSpanMap> field_maps(const FlowRecord& record) {
  std::vector<FieldSpanMap> maps;
  maps.reserve(record.packets.size());
  for (std::size_t i = 0; i < record.packets.size(); ++i) {
    maps.push_back(parse_fields(record.packets[i], i));
  }
  return maps;
}

TrainingSample corrupt_byte(const TokenSequence& x, double ratio, std::uint64_t seed) {
  check_ratio(ratio);
  const std::size_t eligible = x.valid_length();
  if (eligible == 0) throw Error(ErrorCode::kNoEligiblePositions, "flow is entirely padding");
  Rng rng(seed);
  CorruptionPlan plan{CorruptionKind::kByte, {}, identity(x.packet_count()), seed};
  return apply_mask(x, sample_positions(eligible, mask_count(ratio, eligible), rng),
                    std::move(plan));
}

TrainingSample corrupt_protocol(const TokenSequence& x, std::span<const FieldSpanMap> maps,
                                std::size_t k, std::size_t n_spans, std::size_t jitter,
                                std::uint64_t seed) {
  if (k == 0 || n_spans == 0) {
    throw Error(ErrorCode::kInvalidArgument, "protocol span length and count must be positive");
  }
  const std::size_t L = x.packet_len;
  std::vector<std::size_t> starts;
  for (const FieldSpanMap& map : maps) {
    if (map.packet_index >= x.real_packets) continue;
    for (const FieldSpan& span : map.spans) {
      for (std::size_t j = 0; j <= jitter; ++j) {
        const std::size_t local = span.offset + j;
        if (local < L) starts.push_back(map.packet_index * L + local);
      }
    }
  }
  std::sort(starts.begin(), starts.end());
  starts.erase(std::unique(starts.begin(), starts.end()), starts.end());
  if (starts.empty()) throw Error(ErrorCode::kNoEligibleSpans, "no field spans in real packets");

  Rng rng(seed);
  std::set<std::size_t> masked;
  for (std::size_t n = 0; n < n_spans; ++n) {
    const std::size_t start = starts[rng.uniform_index(starts.size())];
    const std::size_t packet_end = (start / L + 1) * L;
    const std::size_t stop = std::min(start + k, packet_end);
    for (std::size_t p = start; p < stop; ++p) masked.insert(p);
  }
  CorruptionPlan plan{CorruptionKind::kProtocol, {}, identity(x.packet_count()), seed};
  return apply_mask(x, {masked.begin(), masked.end()}, std::move(plan));
}

TrainingSample corrupt_packet(const TokenSequence& x, double ratio, std::uint64_t seed) {
  check_ratio(ratio);
  const std::size_t n = x.real_packets;
  if (n < 2) throw Error(ErrorCode::kTooFewPackets, "packet task needs at least two real packets");
  Rng rng(seed);

  // Rejection keeps the draw uniform over the n! - 1 non-identity orders.
  std::vector<std::size_t> real_perm = rng.permutation(n);
  while (std::is_sorted(real_perm.begin(), real_perm.end())) real_perm = rng.permutation(n);

  std::vector<std::size_t> perm = identity(x.packet_count());
  std::copy(real_perm.begin(), real_perm.end(), perm.begin());

  TokenSequence permuted = x;
  const std::size_t L = x.packet_len;
  for (std::size_t slot = 0; slot < n; ++slot) {
    std::copy_n(x.tokens.begin() + static_cast<std::ptrdiff_t>(perm[slot] * L), L,
                permuted.tokens.begin() + static_cast<std::ptrdiff_t>(slot * L));
  }
  const std::size_t eligible = permuted.valid_length();
  auto positions = sample_positions(eligible, mask_count(ratio, eligible), rng);
  CorruptionPlan plan{CorruptionKind::kPacket, {}, std::move(perm), seed};
  return apply_mask(std::move(permuted), std::move(positions), std::move(plan));
}

TrainingSample corrupt_packet(const FlowRecord& record, double ratio, std::uint64_t seed) {
  return corrupt_packet(to_tokens(record), ratio, seed);
}

TokenSequence augment_protocol(const FlowRecord& record, std::span<const FieldSpanMap> maps,
                               std::uint64_t seed, bool within_layer) {
  Rng rng(seed);
  TokenSequence seq = to_tokens(record);
  const std::size_t L = record.packet_len();
  for (const FieldSpanMap& map : maps) {
    if (map.packet_index >= record.real_packet_count) continue;
    const Bytes shuffled =
        shuffle_fields(record.packets[map.packet_index].bytes, map, rng, within_layer);
    std::copy(shuffled.begin(), shuffled.end(),
              seq.tokens.begin() + static_cast<std::ptrdiff_t>(map.packet_index * L));
  }
  return seq;
}

TokenSequence augment_packet(const FlowRecord& record, double drop_prob, std::uint64_t seed) {
  if (!(drop_prob >= 0.0 && drop_prob < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "drop probability must lie in [0, 1)");
  }
  Rng rng(seed);
  const std::size_t n = record.real_packet_count;
  std::vector<std::size_t> survivors;
  for (std::size_t i = 0; i < n; ++i) {
    if (!rng.bernoulli(drop_prob)) survivors.push_back(i);
  }
  if (survivors.empty() && n > 0) survivors.push_back(rng.uniform_index(n));
  rng.shuffle(survivors);

  std::vector<const Bytes*> packets;
  for (std::size_t i : survivors) packets.push_back(&record.packets[i].bytes);
  return from_packets(packets, record.packet_count(), record.packet_len());
}

}  // namespace nethira
