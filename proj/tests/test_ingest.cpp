#include <doctest.h>

#include <fstream>
#include <set>
#include <sstream>

#include "nethira/dataset.hpp"
#include "nethira/error.hpp"
#include "nethira/ingest.hpp"
#include "test_support.hpp"

using namespace nethira;

namespace {


std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

RawPacket tcp_packet(std::uint64_t idx, std::array<std::uint8_t, 4> src, std::uint16_t sport,
                     std::array<std::uint8_t, 4> dst, std::uint16_t dport, Bytes payload = {}) {
  FrameSpec f;
  f.src_ip = src;
  f.dst_ip = dst;
  f.src_port = sport;
  f.dst_port = dport;
  f.payload = std::move(payload);
  return RawPacket{idx, static_cast<std::int64_t>(idx) * 10, build_frame(f)};
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return ErrorCode::kIo;
}

}  // namespace

TEST_CASE("pcap with only a global header is empty") {
  const Bytes file = encode_pcap({});
  CHECK(file.size() == 24);
  CHECK(parse_pcap(file).packets.empty());
}

TEST_CASE("pcap round trip through the writer in both byte orders") {
  test::Rng rng(1);
  std::vector<RawPacket> in = {{0, 1'600'000'000'123'456, test::random_frame(rng)},
                               {1, 1'600'000'001'000'001, test::random_frame(rng)}};
  for (ByteOrder order : {ByteOrder::kLittle, ByteOrder::kBig}) {
    const PcapContents out = parse_pcap(encode_pcap(in, order));
    REQUIRE(out.packets.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
      CHECK(out.packets[i].capture_index == i);
      CHECK(out.packets[i].timestamp_us == in[i].timestamp_us);
      CHECK(out.packets[i].link_bytes == in[i].link_bytes);
    }
  }
}

TEST_CASE("pcap header errors") {
  Bytes pcapng = {0x0A, 0x0D, 0x0D, 0x0A};
  pcapng.resize(64, 0);
  CHECK(code_of([&] { parse_pcap(pcapng); }) == ErrorCode::kUnsupportedFormat);

  Bytes unknown(24, 0x42);
  CHECK(code_of([&] { parse_pcap(unknown); }) == ErrorCode::kUnsupportedFormat);

  Bytes shortfile = encode_pcap({});
  shortfile.resize(23);
  CHECK(code_of([&] { parse_pcap(shortfile); }) == ErrorCode::kCorruptHeader);

  Bytes raw_ip = encode_pcap({});
  raw_ip[20] = 101;  // LINKTYPE_RAW
  CHECK(code_of([&] { parse_pcap(raw_ip); }) == ErrorCode::kUnsupportedFormat);

  CHECK(code_of([] { read_pcap("/nonexistent/capture.pcap"); }) == ErrorCode::kIo);
}

TEST_CASE("truncated trailing record is skipped and counted") {
  test::Rng rng(2);
  std::vector<RawPacket> in = {{0, 0, test::random_frame(rng)}, {1, 0, test::random_frame(rng)}};
  Bytes file = encode_pcap(in);
  file.resize(file.size() - 3);
  const PcapContents out = parse_pcap(file);
  CHECK(out.packets.size() == 1);
  CHECK(out.truncated_records == 1);
}

TEST_CASE("bidirectional and unidirectional segmentation") {
  const std::array<std::uint8_t, 4> a{10, 0, 0, 1}, b{10, 0, 0, 2};
  std::vector<RawPacket> pk = {tcp_packet(0, a, 1000, b, 80), tcp_packet(1, b, 80, a, 1000),
                               tcp_packet(2, a, 1000, b, 80)};
  const Segmentation bi = segment_flows(pk, FlowDirection::kBidirectional);
  REQUIRE(bi.flows.size() == 1);
  CHECK(bi.flows[0].packets.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(bi.flows[0].packets[i].capture_index == i);

  const Segmentation uni = segment_flows(pk, FlowDirection::kUnidirectional);
  REQUIRE(uni.flows.size() == 2);
  CHECK(uni.flows[0].packets.size() == 2);
  CHECK(uni.flows[1].packets.size() == 1);
}

TEST_CASE("non-TCP/UDP packets are skipped and counted") {
  FrameSpec icmp;
  icmp.ip_protocol = 1;
  icmp.payload = {8, 0, 0, 0, 0, 1, 0, 1};
  std::vector<RawPacket> pk = {{0, 0, build_frame(icmp)}};
  const Segmentation s = segment_flows(pk, FlowDirection::kBidirectional);
  CHECK(s.flows.empty());
  CHECK(s.skipped == 1);
}

TEST_CASE("canonical key is shared by both directions") {
  test::Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    FrameSpec f = test::random_frame_spec(rng);
    FrameSpec r = f;
    std::swap(r.src_ip, r.dst_ip);
    std::swap(r.src_port, r.dst_port);
    const auto k1 = extract_flow_key({0, 0, build_frame(f)});
    const auto k2 = extract_flow_key({0, 0, build_frame(r)});
    REQUIRE(k1);
    REQUIRE(k2);
    CHECK(k1->canonical() == k2->canonical());
    CHECK(k1->canonical().canonical() == k1->canonical());
  }
}

TEST_CASE("segmentation partitions the capture") {
  test::Rng rng(4);
  std::vector<RawPacket> pk;
  for (std::uint64_t i = 0; i < 500; ++i) {
    Bytes frame;
    const double u = rng.uniform01();
    if (u < 0.1) {
      frame = test::random_bytes(rng, 1 + rng.uniform_index(60));  // garbage
    } else if (u < 0.2) {
      FrameSpec f = test::random_frame_spec(rng);
      f.ip_protocol = 1;
      frame = build_frame(f);
    } else {
      FrameSpec f = test::random_frame_spec(rng);
      f.src_ip = {10, 0, 0, static_cast<std::uint8_t>(rng.uniform_index(4))};
      f.dst_ip = {10, 0, 1, static_cast<std::uint8_t>(rng.uniform_index(4))};
      f.src_port = static_cast<std::uint16_t>(rng.uniform_index(3));
      f.dst_port = static_cast<std::uint16_t>(rng.uniform_index(3));
      frame = build_frame(f);
    }
    pk.push_back({i, 0, frame});
  }
  for (FlowDirection d : {FlowDirection::kBidirectional, FlowDirection::kUnidirectional}) {
    const Segmentation s = segment_flows(pk, d);
    std::set<std::uint64_t> seen;
    std::size_t total = 0;
    for (const Flow& f : s.flows) {
      for (std::size_t i = 0; i < f.packets.size(); ++i) {
        CHECK(seen.insert(f.packets[i].capture_index).second);
        if (i > 0) CHECK(f.packets[i - 1].capture_index < f.packets[i].capture_index);
      }
      total += f.packets.size();
    }
    CHECK(total + s.skipped == pk.size());
  }
}

TEST_CASE("anonymize zeroes exactly the address and port fields of a TCP/IPv4 packet") {
  test::Rng rng(5);
  FrameSpec f = test::random_frame_spec(rng);
  f.vlan_tci.reset();
  f.ip_protocol = 6;
  const Bytes frame = build_frame(f);
  Bytes expected = frame;
  for (std::size_t i = 0; i < 12; ++i) expected[i] = 0;   // MACs
  for (std::size_t i = 26; i < 34; ++i) expected[i] = 0;  // IPv4 src, dst
  for (std::size_t i = 34; i < 38; ++i) expected[i] = 0;  // ports
  CHECK(anonymize({0, 0, frame}).link_bytes == expected);
}

TEST_CASE("anonymize handles VLAN and IPv6 offsets") {
  test::Rng rng(6);
  FrameSpec f = test::random_frame_spec(rng);
  f.vlan_tci = 7;
  f.ip_protocol = 17;
  const Bytes frame = build_frame(f);
  Bytes expected = frame;
  for (std::size_t i : {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11}) expected[i] = 0;
  for (std::size_t i = 30; i < 42; ++i) expected[i] = 0;  // shifted by the 4-byte tag
  CHECK(anonymize({0, 0, frame}).link_bytes == expected);

  const Bytes v6 = test::random_ipv6_frame(rng);
  Bytes expected6 = v6;
  for (std::size_t i = 0; i < 12; ++i) expected6[i] = 0;
  for (std::size_t i = 22; i < 58; ++i) expected6[i] = 0;  // addresses and ports
  CHECK(anonymize({0, 0, v6}).link_bytes == expected6);
}

TEST_CASE("anonymize is idempotent and keeps the length") {
  test::Rng rng(7);
  for (int i = 0; i < 500; ++i) {
    Bytes frame = test::random_frame(rng);
    if (rng.bernoulli(0.2)) frame.resize(rng.uniform_index(frame.size()) + 1);
    const RawPacket once = anonymize({0, 0, frame});
    CHECK(once.link_bytes.size() == frame.size());
    CHECK(anonymize(once).link_bytes == once.link_bytes);
  }
}

TEST_CASE("packets already anonymous pass through unchanged") {
  test::Rng rng(8);
  const RawPacket p = anonymize({0, 0, test::random_frame(rng)});
  CHECK(anonymize(p).link_bytes == p.link_bytes);
}

TEST_CASE("normalize_flow padding and truncation") {
  SUBCASE("one short packet") {
    Bytes ten(10);
    for (std::size_t i = 0; i < 10; ++i) ten[i] = static_cast<std::uint8_t>(i + 1);
    std::vector<RawPacket> flow = {{0, 0, ten}};
    const FlowRecord r = normalize_flow(flow, 5, 128);
    CHECK(r.real_packet_count == 1);
    REQUIRE(r.packets.size() == 5);
    CHECK(r.packets[0].original_length == 10);
    for (std::size_t i = 0; i < 128; ++i) CHECK(r.packets[0].bytes[i] == (i < 10 ? i + 1 : 0));
    for (std::size_t p = 1; p < 5; ++p) CHECK(r.packets[p].bytes == Bytes(128, 0));
  }
  SUBCASE("first M packets in capture order") {
    std::vector<RawPacket> flow;
    for (std::uint8_t i = 0; i < 7; ++i) flow.push_back({i, 0, Bytes(20, i)});
    const FlowRecord r = normalize_flow(flow, 5, 128);
    CHECK(r.real_packet_count == 5);
    for (std::size_t p = 0; p < 5; ++p) CHECK(r.packets[p].bytes[0] == p);
  }
  SUBCASE("long packet keeps its first L bytes") {
    test::Rng rng(9);
    const Bytes big = test::random_bytes(rng, 200);
    std::vector<RawPacket> flow = {{0, 0, big}};
    const FlowRecord r = normalize_flow(flow, 5, 128);
    CHECK(r.packets[0].bytes == Bytes(big.begin(), big.begin() + 128));
    CHECK(r.packets[0].original_length == 200);
  }
  SUBCASE("empty flow") {
    CHECK(code_of([] { normalize_flow({}, 5, 128); }) == ErrorCode::kEmptyFlow);
  }
}

TEST_CASE("flatten layout") {
  FlowRecord r;
  r.real_packet_count = 5;
  for (std::uint8_t p = 0; p < 5; ++p) {
    NormalizedPacket np{Bytes(128, 0), 128};
    np.bytes[0] = static_cast<std::uint8_t>(0xA0 + p);
    r.packets.push_back(np);
  }
  const Bytes flat = flatten(r);
  REQUIRE(flat.size() == 640);
  for (std::size_t p = 0; p < 5; ++p) CHECK(flat[p * 128] == 0xA0 + p);
  std::size_t nonzero = 0;
  for (auto b : flat) nonzero += b != 0;
  CHECK(nonzero == 5);

  FlowRecord zero = normalize_flow(std::vector<RawPacket>{{0, 0, Bytes(1, 0)}}, 5, 128);
  CHECK(flatten(zero) == Bytes(640, 0));
}

TEST_CASE("pipeline output shape and anonymity hold over random captures") {
  test::Rng rng(10);
  std::vector<RawPacket> pk;
  for (std::uint64_t i = 0; i < 300; ++i) pk.push_back({i, 0, test::random_frame(rng)});
  const PreprocessResult r = preprocess_packets(pk, {});
  for (const FlowRecord& rec : r.records) {
    CHECK(flatten(rec).size() == 640);
    for (std::size_t p = rec.real_packet_count; p < 5; ++p) CHECK(rec.packets[p].bytes == Bytes(128, 0));
    for (std::size_t p = 0; p < rec.real_packet_count; ++p) {
      for (std::size_t i = 0; i < 12; ++i) CHECK(rec.packets[p].bytes[i] == 0);
    }
  }
}

TEST_CASE("golden capture produces the reference dataset bit for bit") {
  const auto dir = test::data_dir();
  const std::string expected = read_text(dir / "golden.jsonl");
  const PcapContents pcap = read_pcap(dir / "golden" / "golden.pcap");
  CHECK(pcap.packets.size() == 20);
  const PreprocessResult r = preprocess_packets(pcap.packets, {});
  std::ostringstream out;
  write_dataset(out, r.records);
  CHECK(out.str() == expected);
  CHECK(r.stats.skipped_packets == 1);

  const PreprocessResult again = preprocess_directory(dir / "golden", {});
  std::ostringstream out2;
  write_dataset(out2, again.records);
  CHECK(out2.str() == expected);
}

TEST_CASE("label_from_dirname assigns ids in sorted class order") {
  const auto tmp = std::filesystem::temp_directory_path() / "nethira_test_labels";
  std::filesystem::remove_all(tmp);
  write_synthetic_pcaps(tmp, {5, 1});
  PreprocessOptions opts;
  opts.label_from_dirname = true;
  const PreprocessResult r = preprocess_directory(tmp, opts);
  REQUIRE(r.class_names.size() == 3);
  for (std::size_t c = 0; c < 3; ++c) CHECK(r.class_names[c] == kSyntheticClasses[c]);
  const auto direct = synthetic_dataset({5, 1}, 5, 128);
  REQUIRE(direct.size() == r.records.size());
  for (std::size_t i = 0; i < direct.size(); ++i) CHECK(serialize_record(direct[i]) == serialize_record(r.records[i]));
  std::filesystem::remove_all(tmp);
}

TEST_CASE("base64 and sha256 reference vectors") {
  auto enc = [](std::string_view s) {
    return base64_encode(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
  };
  CHECK(enc("") == "");
  CHECK(enc("f") == "Zg==");
  CHECK(enc("fo") == "Zm8=");
  CHECK(enc("foo") == "Zm9v");
  CHECK(enc("foobar") == "Zm9vYmFy");
  const Bytes dec = base64_decode("Zm9vYmE=");
  CHECK(std::string(dec.begin(), dec.end()) == "fooba");
  CHECK(code_of([] { base64_decode("Zm9*"); }) == ErrorCode::kCorruptFile);
  CHECK(sha256_hex(std::string_view("abc")) ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("dataset records and manifest round trip") {
  test::Rng rng(11);
  std::vector<FlowRecord> recs;
  for (int i = 0; i < 5; ++i) {
    FlowRecord r = test::random_record(rng, 1 + rng.uniform_index(5));
    if (i % 2) r.label = i;
    recs.push_back(r);
  }
  const auto path = std::filesystem::temp_directory_path() / "nethira_test_ds.jsonl";
  write_dataset(path, recs);
  const auto back = read_dataset(path);
  REQUIRE(back.size() == recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    CHECK(flatten(back[i]) == flatten(recs[i]));
    CHECK(back[i].label == recs[i].label);
    CHECK(back[i].real_packet_count == recs[i].real_packet_count);
  }

  DatasetManifest m;
  m.packets_per_flow = 5;
  m.packet_len = 128;
  m.class_names = {"a", "b"};
  m.config_hash = "x";
  m.dataset_sha256 = file_sha256(path);
  m.flows = 5;
  m.anpf = 2.5;
  const DatasetManifest m2 = manifest_from_json(to_json(m));
  CHECK(to_json(m2) == to_json(m));
  std::filesystem::remove(path);

  CHECK(code_of([] { parse_record("{\"label\":null}"); }) == ErrorCode::kCorruptFile);
  CHECK(code_of([] { parse_record("not json"); }) == ErrorCode::kCorruptFile);
}
