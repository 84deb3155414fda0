#include "nethira/synthetic.hpp"

#include <string>

#include "nethira/error.hpp"
#include "nethira/rng.hpp"

namespace nethira {
namespace {

void put16(Bytes& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

void put32(Bytes& out, std::uint32_t v) {
  put16(out, static_cast<std::uint16_t>(v >> 16));
  put16(out, static_cast<std::uint16_t>(v));
}

void set16(Bytes& out, std::size_t at, std::uint16_t v) {
  out[at] = static_cast<std::uint8_t>(v >> 8);
  out[at + 1] = static_cast<std::uint8_t>(v);
}

std::uint32_t partial_sum(std::span<const std::uint8_t> data) {
  std::uint32_t sum = 0;
  for (std::size_t i = 0; i + 1 < data.size(); i += 2) sum += static_cast<std::uint32_t>(data[i] << 8 | data[i + 1]);
  if (data.size() % 2) sum += static_cast<std::uint32_t>(data.back() << 8);
  return sum;
}

struct Endpoint {
  std::array<std::uint8_t, 6> mac;
  std::array<std::uint8_t, 4> ip;
  std::uint16_t port;
};

Endpoint random_endpoint(Rng& rng, std::uint8_t net, std::uint16_t port) {
  Endpoint e{};
  e.mac = {0x02, static_cast<std::uint8_t>(rng.uniform_index(256)), static_cast<std::uint8_t>(rng.uniform_index(256)),
           static_cast<std::uint8_t>(rng.uniform_index(256)), static_cast<std::uint8_t>(rng.uniform_index(256)),
           static_cast<std::uint8_t>(rng.uniform_index(256))};
  e.ip = {net, static_cast<std::uint8_t>(rng.uniform_index(256)), static_cast<std::uint8_t>(rng.uniform_index(256)),
          static_cast<std::uint8_t>(1 + rng.uniform_index(254))};
  e.port = port;
  return e;
}

FrameSpec frame_between(const Endpoint& from, const Endpoint& to) {
  FrameSpec f;
  f.src_mac = from.mac;
  f.dst_mac = to.mac;
  f.src_ip = from.ip;
  f.dst_ip = to.ip;
  f.src_port = from.port;
  f.dst_port = to.port;
  return f;
}

std::uint16_t ephemeral_port(Rng& rng) { return static_cast<std::uint16_t>(49152 + rng.uniform_index(16384)); }

std::vector<Bytes> beacon_flow(Rng& rng) {
  const Endpoint client = random_endpoint(rng, 10, ephemeral_port(rng));
  const Endpoint server = random_endpoint(rng, 172, 8443);
  const std::size_t n = 1 + rng.uniform_index(2);
  auto counter = static_cast<std::uint32_t>(rng.uniform_index(1u << 20));
  auto seq = static_cast<std::uint32_t>(rng.next());
  auto id = static_cast<std::uint16_t>(rng.uniform_index(65536));
  std::vector<Bytes> frames;
  for (std::size_t i = 0; i < n; ++i) {
    FrameSpec f = frame_between(client, server);
    f.ttl = i % 2 == 0 ? 255 : 254;
    f.ip_id = static_cast<std::uint16_t>(id + i);
    f.seq = seq;
    f.tcp_flags = 0x18;
    f.window = 1024;
    put32(f.payload, counter + static_cast<std::uint32_t>(i));
    for (std::size_t k = 0; k < 12; ++k) f.payload.push_back(static_cast<std::uint8_t>(k));
    seq += static_cast<std::uint32_t>(f.payload.size());
    frames.push_back(build_frame(f));
  }
  return frames;
}

std::vector<Bytes> telemetry_flow(Rng& rng) {
  const Endpoint sensor = random_endpoint(rng, 192, ephemeral_port(rng));
  const Endpoint collector = random_endpoint(rng, 192, 5140);
  const std::size_t n = 2 + rng.uniform_index(3);
  std::vector<Bytes> frames;
  auto id = static_cast<std::uint16_t>(rng.uniform_index(65536));
  for (std::size_t i = 0; i < n; ++i) {
    FrameSpec f = frame_between(sensor, collector);
    f.ip_protocol = 17;
    f.ttl = 128;
    f.ip_id = static_cast<std::uint16_t>(id + i);
    const std::size_t len = 32 + rng.uniform_index(65);
    auto b = static_cast<std::uint8_t>(rng.uniform_index(256));
    for (std::size_t k = 0; k < len; ++k) {
      f.payload.push_back(b);
      b = static_cast<std::uint8_t>(b + 37);
    }
    frames.push_back(build_frame(f));
  }
  return frames;
}

std::vector<Bytes> web_flow(Rng& rng) {
  static constexpr std::array<std::string_view, 4> kPaths{"/", "/index.html", "/api/v1/items", "/static/app.js"};
  static constexpr std::string_view kLetters = "abcdefghijklmnopqrstuvwxyz ";
  const Endpoint client = random_endpoint(rng, 10, ephemeral_port(rng));
  const Endpoint server = random_endpoint(rng, 203, 80);
  const std::size_t n = 4 + rng.uniform_index(5);
  auto client_seq = static_cast<std::uint32_t>(rng.next());
  auto server_seq = static_cast<std::uint32_t>(rng.next());
  auto id = static_cast<std::uint16_t>(rng.uniform_index(65536));
  std::vector<Bytes> frames;
  for (std::size_t i = 0; i < n; ++i) {
    const bool from_client = i % 2 == 0;
    FrameSpec f = from_client ? frame_between(client, server) : frame_between(server, client);
    f.ttl = from_client ? 64 : 58;
    f.ip_id = static_cast<std::uint16_t>(id + i);
    f.seq = from_client ? client_seq : server_seq;
    f.ack = from_client ? server_seq : client_seq;
    std::string text;
    if (from_client) {
      text = "GET " + std::string(kPaths[rng.uniform_index(kPaths.size())]) + " HTTP/1.1\r\nHost: example\r\n\r\n";
    } else {
      text = "HTTP/1.1 200 OK\r\nContent-Type: text/html\r\n\r\n";
      const std::size_t body = 16 + rng.uniform_index(48);
      for (std::size_t k = 0; k < body; ++k) text += kLetters[rng.uniform_index(kLetters.size())];
    }
    f.payload.assign(text.begin(), text.end());
    (from_client ? client_seq : server_seq) += static_cast<std::uint32_t>(text.size());
    frames.push_back(build_frame(f));
  }
  return frames;
}

}  // namespace

std::uint16_t internet_checksum(std::span<const std::uint8_t> data, std::uint32_t initial) {
  std::uint64_t sum = initial + static_cast<std::uint64_t>(partial_sum(data));
  while (sum >> 16) sum = (sum & 0xFFFF) + (sum >> 16);
  return static_cast<std::uint16_t>(~sum & 0xFFFF);
}

Bytes build_frame(const FrameSpec& s) {
  Bytes out(s.dst_mac.begin(), s.dst_mac.end());
  out.insert(out.end(), s.src_mac.begin(), s.src_mac.end());
  if (s.vlan_tci) {
    put16(out, 0x8100);
    put16(out, *s.vlan_tci);
  }
  put16(out, 0x0800);

  Bytes l4;
  if (s.ip_protocol == 6) {
    put16(l4, s.src_port);
    put16(l4, s.dst_port);
    put32(l4, s.seq);
    put32(l4, s.ack);
    l4.push_back(0x50);
    l4.push_back(s.tcp_flags);
    put16(l4, s.window);
    put16(l4, 0);  // checksum
    put16(l4, 0);  // urgent
  } else if (s.ip_protocol == 17) {
    put16(l4, s.src_port);
    put16(l4, s.dst_port);
    put16(l4, static_cast<std::uint16_t>(8 + s.payload.size()));
    put16(l4, 0);
  }
  l4.insert(l4.end(), s.payload.begin(), s.payload.end());
  if (s.ip_protocol == 6 || s.ip_protocol == 17) {
    Bytes pseudo(s.src_ip.begin(), s.src_ip.end());
    pseudo.insert(pseudo.end(), s.dst_ip.begin(), s.dst_ip.end());
    pseudo.push_back(0);
    pseudo.push_back(s.ip_protocol);
    put16(pseudo, static_cast<std::uint16_t>(l4.size()));
    std::uint16_t c = internet_checksum(l4, partial_sum(pseudo));
    if (s.ip_protocol == 17 && c == 0) c = 0xFFFF;
    set16(l4, s.ip_protocol == 6 ? 16 : 6, c);
  }

  Bytes ip;
  ip.push_back(0x45);
  ip.push_back(s.tos);
  put16(ip, static_cast<std::uint16_t>(20 + l4.size()));
  put16(ip, s.ip_id);
  put16(ip, 0x4000);  // don't fragment
  ip.push_back(s.ttl);
  ip.push_back(s.ip_protocol);
  put16(ip, 0);
  ip.insert(ip.end(), s.src_ip.begin(), s.src_ip.end());
  ip.insert(ip.end(), s.dst_ip.begin(), s.dst_ip.end());
  set16(ip, 10, internet_checksum(ip));

  out.insert(out.end(), ip.begin(), ip.end());
  out.insert(out.end(), l4.begin(), l4.end());
  return out;
}

std::vector<std::vector<RawPacket>> synthetic_captures(const SyntheticSpec& spec) {
  std::vector<std::vector<RawPacket>> captures(kSyntheticClasses.size());
  for (std::size_t c = 0; c < captures.size(); ++c) {
    Rng rng(derive_seed(spec.seed, {c}));
    std::int64_t ts = 1'700'000'000'000'000 + static_cast<std::int64_t>(c) * 1'000'000'000;
    for (std::size_t f = 0; f < spec.flows_per_class; ++f) {
      std::vector<Bytes> frames = c == 0 ? beacon_flow(rng) : c == 1 ? telemetry_flow(rng) : web_flow(rng);
      for (Bytes& b : frames) {
        ts += 200 + static_cast<std::int64_t>(rng.uniform_index(5000));
        captures[c].push_back(RawPacket{captures[c].size(), ts, std::move(b)});
      }
    }
  }
  return captures;
}

std::vector<FlowRecord> synthetic_dataset(const SyntheticSpec& spec, std::size_t packets_per_flow,
                                          std::size_t packet_len) {
  PreprocessOptions opts;
  opts.packets_per_flow = packets_per_flow;
  opts.packet_len = packet_len;
  std::vector<FlowRecord> out;
  const auto captures = synthetic_captures(spec);
  for (std::size_t c = 0; c < captures.size(); ++c) {
    PreprocessResult r = preprocess_packets(captures[c], opts, static_cast<int>(c));
    for (FlowRecord& rec : r.records) out.push_back(std::move(rec));
  }
  return out;
}

void write_synthetic_pcaps(const std::filesystem::path& dir, const SyntheticSpec& spec) {
  const auto captures = synthetic_captures(spec);
  for (std::size_t c = 0; c < captures.size(); ++c) {
    const std::filesystem::path sub = dir / std::string(kSyntheticClasses[c]);
    std::filesystem::create_directories(sub);
    write_pcap(sub / "capture.pcap", captures[c]);
  }
}

}  // namespace nethira
