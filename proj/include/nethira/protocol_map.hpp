#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nethira/flow.hpp"
#include "nethira/rng.hpp"

namespace nethira {

enum class Layer : std::uint8_t { kEth, kIpv4, kIpv6, kTcp, kUdp };

std::string_view to_string(Layer layer);

/// A contiguous header field inside one packet.
struct FieldSpan {
  std::size_t offset = 0;
  std::size_t length = 0;
  Layer layer = Layer::kEth;
  std::string_view name;  // static string, e.g. "ip.ttl"

  std::size_t end() const { return offset + length; }
};

struct FieldSpanMap {
  std::size_t packet_index = 0;
  std::vector<FieldSpan> spans;  // sorted by offset, non-overlapping
  std::size_t header_end = 0;    // payload starts here

  const FieldSpan* find(std::string_view name) const;
  bool has_layer(Layer layer) const;
};

/// Dissects Ethernet (one optional 802.1Q tag), IPv4/IPv6 and TCP/UDP
/// headers. Works on frames of any length: a field is emitted only when it
/// lies completely inside `frame`, and dissection stops at the first layer
/// that cannot be parsed.
FieldSpanMap dissect_headers(std::span<const std::uint8_t> frame);

/// Field layout of a normalized packet.
FieldSpanMap parse_fields(const NormalizedPacket& packet, std::size_t packet_index = 0);

/// Permutes the byte blocks of the mapped fields at field granularity and
/// writes them back, in permuted order, over the positions the spans covered.
/// Bytes outside every span are untouched. With `within_layer`, blocks only
/// move among fields of the same layer.
Bytes shuffle_fields(std::span<const std::uint8_t> packet, const FieldSpanMap& map, Rng& rng,
                     bool within_layer = false);

/// Human-readable span table for the `fields` debug command.
std::string format_field_table(const FieldSpanMap& map, std::span<const std::uint8_t> packet);

}  // namespace nethira
