#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string_view>
#include <vector>

#include "nethira/flow.hpp"
#include "nethira/ingest.hpp"

namespace nethira {

/// Fields of one Ethernet/IPv4 frame. `ip_protocol` selects TCP (6), UDP (17)
/// or anything else, in which case the payload directly follows the IPv4
/// header. Checksums are computed.
struct FrameSpec {
  std::array<std::uint8_t, 6> dst_mac{};
  std::array<std::uint8_t, 6> src_mac{};
  std::optional<std::uint16_t> vlan_tci;
  std::array<std::uint8_t, 4> src_ip{};
  std::array<std::uint8_t, 4> dst_ip{};
  std::uint8_t ttl = 64;
  std::uint8_t tos = 0;
  std::uint16_t ip_id = 0;
  std::uint8_t ip_protocol = 6;
  std::uint16_t src_port = 0;
  std::uint16_t dst_port = 0;
  std::uint32_t seq = 0;
  std::uint32_t ack = 0;
  std::uint8_t tcp_flags = 0x18;
  std::uint16_t window = 64240;
  Bytes payload;
};

Bytes build_frame(const FrameSpec& spec);

/// Internet checksum (RFC 1071) of `data`, seeded with a partial sum.
std::uint16_t internet_checksum(std::span<const std::uint8_t> data, std::uint32_t initial = 0);

/// Class names in label order.
inline constexpr std::array<std::string_view, 3> kSyntheticClasses{"beacon", "telemetry", "web"};

/// Three traffic classes that differ in TTL pattern, payload bytes and
/// packets per flow:
///   beacon     TCP, TTL alternating 255/254, 4-byte counter payload, 1-2 packets
///   telemetry  UDP, TTL 128, payload bytes stepping by +37, 2-4 packets
///   web        TCP, client TTL 64 / server TTL 58, HTTP text, 4-8 packets both ways
struct SyntheticSpec {
  std::size_t flows_per_class = 100;
  std::uint64_t seed = 0;
};

/// One capture per class; flows are contiguous and have distinct five-tuples.
std::vector<std::vector<RawPacket>> synthetic_captures(const SyntheticSpec& spec);

/// Captures pushed through the preprocessing pipeline, labeled by class.
std::vector<FlowRecord> synthetic_dataset(const SyntheticSpec& spec, std::size_t packets_per_flow,
                                          std::size_t packet_len);

/// Writes <dir>/<class>/capture.pcap for every class.
void write_synthetic_pcaps(const std::filesystem::path& dir, const SyntheticSpec& spec);

}  // namespace nethira
