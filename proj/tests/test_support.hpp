#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "nethira/corruption.hpp"
#include "nethira/ingest.hpp"
#include "nethira/rng.hpp"
#include "nethira/synthetic.hpp"

namespace test {

using namespace nethira;

inline std::filesystem::path data_dir() { return NETHIRA_TEST_DATA_DIR; }

inline std::uint8_t byte(Rng& rng) { return static_cast<std::uint8_t>(rng.uniform_index(256)); }

inline Bytes random_bytes(Rng& rng, std::size_t n) {
  Bytes out(n);
  for (auto& b : out) b = byte(rng);
  return out;
}

/// Random Ethernet/IPv4 TCP or UDP frame, sometimes VLAN-tagged.
inline FrameSpec random_frame_spec(Rng& rng) {
  FrameSpec f;
  for (auto& b : f.dst_mac) b = byte(rng);
  for (auto& b : f.src_mac) b = byte(rng);
  for (auto& b : f.src_ip) b = byte(rng);
  for (auto& b : f.dst_ip) b = byte(rng);
  if (rng.bernoulli(0.2)) f.vlan_tci = static_cast<std::uint16_t>(rng.uniform_index(4096));
  f.ttl = byte(rng);
  f.tos = byte(rng);
  f.ip_id = static_cast<std::uint16_t>(rng.uniform_index(65536));
  f.ip_protocol = rng.bernoulli(0.5) ? 6 : 17;
  f.src_port = static_cast<std::uint16_t>(rng.uniform_index(65536));
  f.dst_port = static_cast<std::uint16_t>(rng.uniform_index(65536));
  f.seq = static_cast<std::uint32_t>(rng.next());
  f.ack = static_cast<std::uint32_t>(rng.next());
  f.tcp_flags = byte(rng);
  f.window = static_cast<std::uint16_t>(rng.uniform_index(65536));
  f.payload = random_bytes(rng, rng.uniform_index(200));
  return f;
}

/// Ethernet/IPv6 UDP or TCP frame (no extension headers).
inline Bytes random_ipv6_frame(Rng& rng) {
  Bytes f = random_bytes(rng, 12);
  f.push_back(0x86);
  f.push_back(0xDD);
  const bool tcp = rng.bernoulli(0.5);
  const Bytes payload = random_bytes(rng, rng.uniform_index(100));
  const std::size_t l4_len = (tcp ? 20 : 8) + payload.size();
  Bytes ip = {0x60, 0, 0, 0, static_cast<std::uint8_t>(l4_len >> 8), static_cast<std::uint8_t>(l4_len),
              static_cast<std::uint8_t>(tcp ? 6 : 17), byte(rng)};
  const Bytes addrs = random_bytes(rng, 32);
  ip.insert(ip.end(), addrs.begin(), addrs.end());
  Bytes l4 = random_bytes(rng, tcp ? 20 : 8);
  if (tcp) l4[12] = 0x50;
  f.insert(f.end(), ip.begin(), ip.end());
  f.insert(f.end(), l4.begin(), l4.end());
  f.insert(f.end(), payload.begin(), payload.end());
  return f;
}

inline Bytes random_frame(Rng& rng) {
  return rng.bernoulli(0.15) ? random_ipv6_frame(rng) : build_frame(random_frame_spec(rng));
}

/// Record of `real` random TCP/UDP packets padded to m packets of l bytes.
inline FlowRecord random_record(Rng& rng, std::size_t real, std::size_t m = 5, std::size_t l = 128) {
  std::vector<RawPacket> packets;
  for (std::size_t i = 0; i < real; ++i) packets.push_back(RawPacket{i, 0, random_frame(rng)});
  return normalize_flow(packets, m, l);
}

}  // namespace test
