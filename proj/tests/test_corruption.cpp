#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "nethira/corruption.hpp"
#include "nethira/error.hpp"
#include "test_support.hpp"

using namespace nethira;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return ErrorCode::kIo;
}

void check_sample(const TrainingSample& s) {
  const auto& m = s.plan.masked_positions;
  CHECK(std::is_sorted(m.begin(), m.end()));
  CHECK(std::adjacent_find(m.begin(), m.end()) == m.end());
  std::vector<char> masked(s.input.size(), 0);
  for (std::size_t p : m) {
    REQUIRE(p < s.input.valid_length());
    masked[p] = 1;
  }
  for (std::size_t i = 0; i < s.input.size(); ++i) {
    if (masked[i]) {
      CHECK(s.input.tokens[i] == kMaskToken);
    } else {
      CHECK(s.input.tokens[i] == s.target.tokens[i]);
    }
  }
}

std::vector<Bytes> packet_blocks(const TokenSequence& t) {
  std::vector<Bytes> out;
  for (std::size_t p = 0; p < t.packet_count(); ++p) {
    Bytes b;
    for (std::size_t i = 0; i < t.packet_len; ++i) b.push_back(static_cast<std::uint8_t>(t.tokens[p * t.packet_len + i]));
    out.push_back(b);
  }
  return out;
}

}  // namespace

TEST_CASE("tokens mirror the flattened bytes") {
  test::Rng rng(1);
  const FlowRecord r = test::random_record(rng, 3);
  const TokenSequence t = to_tokens(r);
  const Bytes flat = flatten(r);
  REQUIRE(t.size() == flat.size());
  for (std::size_t i = 0; i < flat.size(); ++i) CHECK(t.tokens[i] == flat[i]);
  CHECK(t.real_packets == 3);
  CHECK(t.valid_length() == 384);
}

TEST_CASE("byte masking counts") {
  test::Rng rng(2);
  const TokenSequence full = to_tokens(test::random_record(rng, 5));
  CHECK(corrupt_byte(full, 1e-9, 1).plan.masked_positions.size() == 1);
  CHECK(corrupt_byte(full, 0.15, 1).plan.masked_positions.size() == 96);
  const TokenSequence two = to_tokens(test::random_record(rng, 2));
  CHECK(corrupt_byte(two, 0.15, 1).plan.masked_positions.size() == 39);  // ceil(0.15 * 256)
  const TrainingSample s = corrupt_byte(full, 0.15, 7);
  CHECK(s.plan.kind == CorruptionKind::kByte);
  CHECK(s.target == full);
  CHECK(corrupt_byte(full, 0.15, 7).plan.masked_positions == s.plan.masked_positions);
  CHECK(corrupt_byte(full, 0.15, 8).plan.masked_positions != s.plan.masked_positions);
}

TEST_CASE("byte masking errors") {
  TokenSequence empty{std::vector<Token>(640, 0), 128, 0};
  CHECK(code_of([&] { corrupt_byte(empty, 0.15, 1); }) == ErrorCode::kNoEligiblePositions);
  test::Rng rng(3);
  const TokenSequence x = to_tokens(test::random_record(rng, 2));
  CHECK(code_of([&] { corrupt_byte(x, 0.0, 1); }) == ErrorCode::kInvalidArgument);
  CHECK(code_of([&] { corrupt_byte(x, 1.0, 1); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("byte masking is uniform over eligible positions") {
  TokenSequence x{std::vector<Token>(40, 1), 10, 4};
  std::vector<std::size_t> hits(40, 0);
  const std::size_t trials = 20000;
  for (std::uint64_t s = 0; s < trials; ++s)
    for (std::size_t p : corrupt_byte(x, 0.1, s).plan.masked_positions) ++hits[p];
  // 4 of 40 positions per trial, so every position expects trials / 10 hits.
  const double expect = trials / 10.0;
  const double sigma = std::sqrt(trials * 0.1 * 0.9);
  for (std::size_t h : hits) CHECK(std::abs(static_cast<double>(h) - expect) < 4.5 * sigma);
}

TEST_CASE("protocol masking with one allowed start") {
  TokenSequence x{std::vector<Token>(640, 5), 128, 1};
  std::vector<FieldSpanMap> maps(5);
  maps[0].spans.push_back({22, 1, Layer::kIpv4, "ip.ttl"});
  maps[0].header_end = 23;
  const TrainingSample s = corrupt_protocol(x, maps, 1, 1, 0, 9);
  CHECK(s.plan.masked_positions == std::vector<std::size_t>{22});
  CHECK(s.plan.kind == CorruptionKind::kProtocol);
  const TrainingSample four = corrupt_protocol(x, maps, 4, 1, 0, 9);
  CHECK(four.plan.masked_positions == std::vector<std::size_t>{22, 23, 24, 25});
}

TEST_CASE("protocol masks are clipped at the packet end") {
  TokenSequence x{std::vector<Token>(64, 5), 16, 4};
  std::vector<FieldSpanMap> maps(4);
  maps[1].packet_index = 1;
  maps[1].spans.push_back({14, 2, Layer::kEth, "eth.type"});
  maps[1].header_end = 16;
  const TrainingSample s = corrupt_protocol(x, maps, 4, 1, 0, 1);
  CHECK(s.plan.masked_positions == std::vector<std::size_t>{30, 31});
}

TEST_CASE("protocol masking errors") {
  TokenSequence x{std::vector<Token>(640, 5), 128, 2};
  std::vector<FieldSpanMap> maps(5);
  CHECK(code_of([&] { corrupt_protocol(x, maps, 4, 8, 1, 1); }) == ErrorCode::kNoEligibleSpans);
  // Spans on padding packets are not eligible.
  maps[3].packet_index = 3;
  maps[3].spans.push_back({0, 6, Layer::kEth, "eth.dst"});
  CHECK(code_of([&] { corrupt_protocol(x, maps, 4, 8, 1, 1); }) == ErrorCode::kNoEligibleSpans);
}

TEST_CASE("protocol masks start at field boundaries or one byte in") {
  test::Rng rng(4);
  for (int i = 0; i < 500; ++i) {
    const FlowRecord r = test::random_record(rng, 1 + rng.uniform_index(5));
    const auto maps = field_maps(r);
    const TokenSequence x = to_tokens(r);
    const std::size_t k = 1 + rng.uniform_index(6);
    const TrainingSample s = corrupt_protocol(x, maps, k, 8, 1, rng.next());
    check_sample(s);
    CHECK(!s.plan.masked_positions.empty());
    for (std::size_t p : s.plan.masked_positions) {
      const std::size_t pkt = p / 128;
      const std::size_t off = p % 128;
      CHECK(pkt < r.real_packet_count);
      CHECK(off < maps[pkt].header_end + k);
      bool covered = false;
      for (const FieldSpan& span : maps[pkt].spans)
        for (std::size_t j = 0; j <= 1; ++j)
          if (span.offset + j <= off && off < span.offset + j + k) covered = true;
      CHECK(covered);
    }
  }
}

TEST_CASE("packet corruption with two real packets swaps them") {
  test::Rng rng(5);
  const FlowRecord r = test::random_record(rng, 2);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const TrainingSample s = corrupt_packet(r, 0.15, seed);
    CHECK(s.plan.permutation == std::vector<std::size_t>{1, 0, 2, 3, 4});
    CHECK(s.plan.kind == CorruptionKind::kPacket);
    const auto orig = packet_blocks(to_tokens(r));
    const auto got = packet_blocks(s.target);
    CHECK(got[0] == orig[1]);
    CHECK(got[1] == orig[0]);
    for (std::size_t p = 2; p < 5; ++p) CHECK(got[p] == orig[p]);
    check_sample(s);
  }
}

TEST_CASE("packet corruption needs two real packets") {
  test::Rng rng(6);
  const FlowRecord r = test::random_record(rng, 1);
  CHECK(code_of([&] { corrupt_packet(r, 0.15, 1); }) == ErrorCode::kTooFewPackets);
}

TEST_CASE("packet permutation is uniform over non-identity permutations of three packets") {
  test::Rng rng(7);
  const FlowRecord r = test::random_record(rng, 3);
  const TokenSequence x = to_tokens(r);
  std::map<std::vector<std::size_t>, std::size_t> counts;
  const std::size_t n = 10000;
  for (std::uint64_t seed = 0; seed < n; ++seed) {
    const TrainingSample s = corrupt_packet(x, 0.15, seed);
    std::vector<std::size_t> head(s.plan.permutation.begin(), s.plan.permutation.begin() + 3);
    ++counts[head];
    CHECK(s.plan.permutation[3] == 3);
    CHECK(s.plan.permutation[4] == 4);
  }
  REQUIRE(counts.size() == 5);
  CHECK(counts.count({0, 1, 2}) == 0);
  const double expect = n / 5.0;
  const double sigma = std::sqrt(n * 0.2 * 0.8);
  double chi2 = 0.0;
  for (const auto& [perm, c] : counts) {
    CHECK(std::abs(static_cast<double>(c) - expect) <= 3.0 * sigma);
    chi2 += (c - expect) * (c - expect) / expect;
  }
  CHECK(chi2 < 13.277);  // chi-square critical value, 4 degrees of freedom, alpha = 0.01
}

TEST_CASE("packet corruption preserves the packet multiset") {
  test::Rng rng(8);
  for (int i = 0; i < 300; ++i) {
    const FlowRecord r = test::random_record(rng, 2 + rng.uniform_index(4));
    const TrainingSample s = corrupt_packet(r, 0.15, rng.next());
    auto a = packet_blocks(to_tokens(r));
    auto b = packet_blocks(s.target);
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);
    check_sample(s);
    CHECK(s.plan.masked_positions.size() ==
          static_cast<std::size_t>(std::ceil(0.15 * static_cast<double>(r.real_packet_count * 128) - 1e-9)));
  }
}

TEST_CASE("augment_protocol leaves payload and unmapped bytes alone") {
  test::Rng rng(9);
  for (int i = 0; i < 200; ++i) {
    const FlowRecord r = test::random_record(rng, 1 + rng.uniform_index(5));
    const auto maps = field_maps(r);
    const TokenSequence out = augment_protocol(r, maps, rng.next());
    const Bytes flat = flatten(r);
    REQUIRE(out.size() == flat.size());
    for (std::size_t p = 0; p < 5; ++p) {
      std::vector<char> covered(128, 0);
      if (p < r.real_packet_count)
        for (const FieldSpan& s : maps[p].spans) std::fill_n(covered.begin() + static_cast<long>(s.offset), s.length, 1);
      for (std::size_t k = 0; k < 128; ++k) {
        CHECK(out.tokens[p * 128 + k] < 256);
        if (!covered[k]) CHECK(out.tokens[p * 128 + k] == flat[p * 128 + k]);
      }
    }
  }
}

TEST_CASE("augment_protocol with single-span maps is the identity") {
  test::Rng rng(10);
  const FlowRecord r = test::random_record(rng, 3);
  std::vector<FieldSpanMap> maps(5);
  for (std::size_t p = 0; p < 5; ++p) {
    maps[p].packet_index = p;
    maps[p].spans.push_back({0, 6, Layer::kEth, "eth.dst"});
    maps[p].header_end = 6;
  }
  const TokenSequence out = augment_protocol(r, maps, 123);
  CHECK(out == to_tokens(r));
}

TEST_CASE("augment_packet without drops") {
  test::Rng rng(11);
  const FlowRecord one = test::random_record(rng, 1);
  CHECK(augment_packet(one, 0.0, 5) == to_tokens(one));

  const FlowRecord three = test::random_record(rng, 3);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const TokenSequence out = augment_packet(three, 0.0, seed);
    CHECK(out.real_packets == 3);
    auto a = packet_blocks(to_tokens(three));
    auto b = packet_blocks(out);
    std::sort(a.begin(), a.begin() + 3);
    std::sort(b.begin(), b.begin() + 3);
    CHECK(a == b);
    for (auto t : out.tokens) CHECK(t < 256);
  }
}

TEST_CASE("augment_packet survivor distribution keeps at least one packet") {
  test::Rng rng(12);
  const FlowRecord two = test::random_record(rng, 2);
  const std::size_t n = 10000;
  std::size_t both = 0;
  for (std::uint64_t seed = 0; seed < n; ++seed) {
    const TokenSequence out = augment_packet(two, 0.5, seed);
    REQUIRE((out.real_packets == 1 || out.real_packets == 2));
    both += out.real_packets == 2;
    for (std::size_t p = out.real_packets; p < 5; ++p)
      for (std::size_t k = 0; k < 128; ++k) CHECK(out.tokens[p * 128 + k] == 0);
  }
  // P(2 survive) = 0.25; P(1 survives) = 0.5 + 0.25 (all dropped, one restored).
  const double sigma = std::sqrt(n * 0.25 * 0.75);
  CHECK(std::abs(static_cast<double>(both) - 0.25 * n) <= 3.0 * sigma);
}

TEST_CASE("corruption invariants over random flows and seeds") {
  test::Rng rng(13);
  const CorruptionConfig c;
  for (int i = 0; i < 1000; ++i) {
    const FlowRecord r = test::random_record(rng, 1 + rng.uniform_index(5));
    const TokenSequence x = to_tokens(r);
    const std::uint64_t seed = rng.next();
    const TrainingSample b = corrupt_byte(x, c.mask_ratio, seed);
    check_sample(b);
    const TrainingSample p = corrupt_protocol(x, field_maps(r), c.protocol_k, c.protocol_spans, c.vicinity_jitter, seed);
    check_sample(p);
    if (r.real_packet_count >= 2) {
      const TrainingSample k = corrupt_packet(x, c.packet_mask_ratio, seed);
      check_sample(k);
      CHECK(k.plan.permutation != std::vector<std::size_t>{0, 1, 2, 3, 4});
      CHECK(corrupt_packet(x, c.packet_mask_ratio, seed).input == k.input);
    }
    CHECK(corrupt_byte(x, c.mask_ratio, seed).input == b.input);
    CHECK(augment_packet(r, c.drop_prob, seed) == augment_packet(r, c.drop_prob, seed));
    CHECK(augment_protocol(r, field_maps(r), seed) == augment_protocol(r, field_maps(r), seed));
  }
}
