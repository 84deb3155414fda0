#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace nethira {

using Bytes = std::vector<std::uint8_t>;

/// One captured link-layer frame, before any normalization.
struct RawPacket {
  std::uint64_t capture_index = 0;
  std::int64_t timestamp_us = 0;
  Bytes link_bytes;
};

enum class Transport : std::uint8_t { kTcp = 6, kUdp = 17 };

struct IpAddress {
  std::uint8_t version = 4;
  std::array<std::uint8_t, 16> bytes{};  // IPv4 uses the first four

  auto operator<=>(const IpAddress&) const = default;
  std::string to_string() const;
};

struct FlowKey {
  IpAddress src_ip;
  std::uint16_t src_port = 0;
  IpAddress dst_ip;
  std::uint16_t dst_port = 0;
  Transport transport = Transport::kTcp;

  auto operator<=>(const FlowKey&) const = default;

  /// Orders the endpoints so that both directions of a session share a key.
  FlowKey canonical() const;
  std::string to_string() const;
};

struct NormalizedPacket {
  Bytes bytes;  // exactly L bytes
  std::size_t original_length = 0;
};

/// A flow cut to M packets of L bytes each; trailing slots past
/// real_packet_count are all-zero padding packets.
struct FlowRecord {
  FlowKey key;
  std::vector<NormalizedPacket> packets;
  std::size_t real_packet_count = 0;
  std::optional<int> label;

  std::size_t packet_count() const { return packets.size(); }
  std::size_t packet_len() const { return packets.empty() ? 0 : packets.front().bytes.size(); }
};

}  // namespace nethira
