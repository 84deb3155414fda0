#include <doctest.h>

#include <cmath>
#include <map>

#include "nethira/error.hpp"
#include "nethira/experiments.hpp"
#include "nethira/synthetic.hpp"
#include "nethira/training.hpp"

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

ModelConfig toy_model() {
  ModelConfig c;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_ff = 16;
  c.n_enc_layers = 1;
  c.n_dec_layers = 1;
  c.packets_per_flow = 2;
  c.packet_len = 16;
  return c;
}

const std::vector<FlowRecord>& data() {
  static const auto d = synthetic_dataset(SyntheticSpec{8, 3}, 2, 16);
  return d;
}

PretrainConfig toy_pretrain() {
  PretrainConfig c;
  c.steps = 6;
  c.batch_size = 3;
  c.lr = 1e-3;
  c.seed = 5;
  c.model = toy_model();
  return c;
}

FinetuneConfig toy_finetune() {
  FinetuneConfig c;
  c.epochs = 2;
  c.batch_size = 4;
  c.lr = 1e-3;
  c.seed = 6;
  return c;
}

const ModelCheckpoint& pretrained() {
  static const ModelCheckpoint ckpt = pretrain(toy_pretrain(), data()).checkpoint;
  return ckpt;
}

const DatasetSplit& split() {
  static const DatasetSplit s = split_dataset(data(), SplitSpec{});
  return s;
}

}  // namespace

TEST_CASE("config validation") {
  PretrainConfig p = toy_pretrain();
  p.steps = 0;
  CHECK(code_of([&] { p.validate(); }) == ErrorCode::kInvalidArgument);
  p = toy_pretrain();
  p.tasks = TaskSet{false, false, false};
  CHECK_THROWS_AS(p.validate(), Error);
  p = toy_pretrain();
  p.steps = 25;
  CHECK(p.effective_warmup() == 2);
  p.warmup_steps = 7;
  CHECK(p.effective_warmup() == 7);
  PretrainConfig big;
  CHECK(big.effective_warmup() == 10000);

  FinetuneConfig f = toy_finetune();
  f.label_fraction = 0.0;
  CHECK_THROWS_AS(f.validate(), Error);
  f.label_fraction = 1.5;
  CHECK_THROWS_AS(f.validate(), Error);
  f = toy_finetune();
  f.mode = FinetuneMode::kSupOnly;
  CHECK(f.effective_lambda() == 0.0);
}

TEST_CASE("config JSON round trip and parsing") {
  const PretrainConfig p = toy_pretrain();
  const PretrainConfig p2 = pretrain_config_from_json(to_json(p));
  CHECK(to_json(p2) == to_json(p));
  const FinetuneConfig f = toy_finetune();
  CHECK(to_json(finetune_config_from_json(to_json(f))) == to_json(f));
  CHECK(TaskSet::parse("byte,packet") == TaskSet{true, false, true});
  CHECK(TaskSet::parse(TaskSet{}.to_string()) == TaskSet{});
  CHECK_THROWS_AS(TaskSet::parse("byte,bogus"), Error);
  for (auto m : {FinetuneMode::kFull, FinetuneMode::kSupOnly, FinetuneMode::kFromScratch,
                 FinetuneMode::kByteOnlyPretrain}) {
    CHECK(parse_finetune_mode(to_string(m)) == m);
  }
  CHECK_THROWS_AS(parse_finetune_mode("other"), Error);
}

TEST_CASE("warmup schedule") {
  CHECK(scheduled_lr(1.0, 0, 10) == doctest::Approx(0.1));
  CHECK(scheduled_lr(1.0, 9, 10) == doctest::Approx(1.0));
  CHECK(scheduled_lr(1.0, 500, 10) == 1.0);
  CHECK(scheduled_lr(1.0, 0, 0) == 1.0);
}

TEST_CASE("Adam moves parameters against the gradient") {
  Model m(toy_model(), 1);
  Adam adam(m);
  Gradients g = m.zero_gradients();
  g.tensors[0].setOnes();
  const Matrix before = m.parameters()[0].value;
  adam.step(m, g, 0.01);
  CHECK((before.array() - m.parameters()[0].value.array() - 0.01).abs().maxCoeff() < 1e-6);
  CHECK(m.parameters()[1].value == Model(toy_model(), 1).parameters()[1].value);
  CHECK(adam.steps() == 1);
}

TEST_CASE("pre-training on an empty corpus") {
  std::vector<FlowRecord> none;
  CHECK(code_of([&] { pretrain(toy_pretrain(), none); }) == ErrorCode::kEmptyCorpus);
}

TEST_CASE("pre-training logs are finite, non-negative and reproducible") {
  std::vector<PretrainLogRow> seen;
  const PretrainResult a = pretrain(toy_pretrain(), data(), nullptr, [&](const auto& r) { seen.push_back(r); });
  REQUIRE(a.log.size() == 6);
  CHECK(seen == a.log);
  for (const auto& row : a.log) {
    CHECK(std::isfinite(row.total()));
    CHECK(row.byte > 0.0);
    CHECK(row.protocol > 0.0);
    CHECK(row.packet > 0.0);
  }
  const PretrainResult b = pretrain(toy_pretrain(), data());
  CHECK(a.log == b.log);
  CHECK(encode_checkpoint(a.checkpoint) == encode_checkpoint(b.checkpoint));
  CHECK(a.checkpoint.step == 6);

  PretrainConfig other = toy_pretrain();
  other.seed = 99;
  CHECK(pretrain(other, data()).log != a.log);

  PretrainConfig byte_only = toy_pretrain();
  byte_only.tasks = TaskSet{true, false, false};
  for (const auto& row : pretrain(byte_only, data()).log) {
    CHECK(row.protocol == 0.0);
    CHECK(row.packet == 0.0);
  }
}

TEST_CASE("pre-training resumes from a checkpoint") {
  PretrainConfig c = toy_pretrain();
  c.steps = 2;
  const PretrainResult r = pretrain(c, data(), &pretrained());
  CHECK(r.log.size() == 2);
  CHECK(r.checkpoint.config == pretrained().config);
}

TEST_CASE("stratified subsample") {
  const auto& train = split().train;
  std::map<int, std::size_t> full;
  for (const auto& r : train) ++full[*r.label];
  for (double f : {0.01, 0.1, 0.5, 1.0}) {
    const auto sub = stratified_subsample(train, f, 4);
    std::map<int, std::size_t> got;
    for (const auto& r : sub) ++got[*r.label];
    for (const auto& [label, n] : full) {
      const auto want = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(f * static_cast<double>(n) - 1e-9)));
      CHECK(got[label] == want);
    }
    CHECK(records_sha256(stratified_subsample(train, f, 4)) == records_sha256(sub));
  }
  CHECK(records_sha256(stratified_subsample(train, 1.0, 4)) == records_sha256(train));
}

TEST_CASE("fine-tuning argument errors") {
  const auto& s = split();
  CHECK(code_of([&] { finetune(toy_finetune(), nullptr, s.train, s.val); }) == ErrorCode::kMissingInit);
  auto unlabeled = s.train;
  unlabeled[0].label.reset();
  CHECK(code_of([&] { finetune(toy_finetune(), &pretrained(), unlabeled, s.val); }) == ErrorCode::kLabelMismatch);
  FinetuneConfig narrow = toy_finetune();
  narrow.n_classes = 2;
  CHECK(code_of([&] { finetune(narrow, &pretrained(), s.train, s.val); }) == ErrorCode::kLabelMismatch);
}

TEST_CASE("fine-tuning loss bookkeeping") {
  const auto& s = split();
  const FinetuneResult full = finetune(toy_finetune(), &pretrained(), s.train, s.val);
  CHECK(full.n_classes == 3);
  CHECK(full.log.size() == 2);
  CHECK(full.train_size == s.train.size());
  for (const auto& b : full.batch_log) {
    CHECK(b.l_total >= b.l_sup);
    CHECK(b.l_cons >= 0.0);
    CHECK(b.l_total == doctest::Approx(b.l_sup + 0.1 * b.l_cons));
  }
  CHECK(full.log.back().l_cons > 0.0);

  FinetuneConfig sup = toy_finetune();
  sup.mode = FinetuneMode::kSupOnly;
  FinetuneConfig zero = toy_finetune();
  zero.lambda = 0.0;
  const FinetuneResult a = finetune(sup, &pretrained(), s.train, s.val);
  const FinetuneResult b = finetune(zero, &pretrained(), s.train, s.val);
  CHECK(a.log == b.log);
  CHECK(encode_checkpoint(a.checkpoint) == encode_checkpoint(b.checkpoint));
  for (const auto& row : a.log) CHECK(row.l_cons == 0.0);

  const FinetuneResult again = finetune(toy_finetune(), &pretrained(), s.train, s.val);
  CHECK(again.batch_log == full.batch_log);
  CHECK(encode_checkpoint(again.checkpoint) == encode_checkpoint(full.checkpoint));
}

TEST_CASE("fine-tuning keeps the best validation epoch") {
  const auto& s = split();
  FinetuneConfig c = toy_finetune();
  c.epochs = 3;
  const FinetuneResult r = finetune(c, &pretrained(), s.train, s.val);
  double best = -1.0;
  for (const auto& row : r.log) best = std::max(best, row.val_f1);
  CHECK(r.log[r.best_epoch].val_f1 == best);
  CHECK(evaluate(r.checkpoint, s.val).macro_f1 == best);
}

TEST_CASE("from-scratch fine-tuning uses the configured architecture") {
  const auto& s = split();
  FinetuneConfig c = toy_finetune();
  c.mode = FinetuneMode::kFromScratch;
  c.model = toy_model();
  const FinetuneResult r = finetune(c, nullptr, s.train, s.val);
  CHECK(r.checkpoint.config.d_model == 8);
  CHECK(r.checkpoint.config.n_classes == 3);
}

TEST_CASE("limited-label sweep") {
  const auto& s = split();
  const std::vector<double> fractions = {0.5, 0.2, 1.0};
  const auto rows = run_limited_label_sweep(pretrained(), s, fractions, toy_finetune());
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].fraction == 0.2);
  CHECK(rows[2].fraction == 1.0);
  CHECK(rows[0].train_size <= rows[1].train_size);
  CHECK(rows[1].train_size <= rows[2].train_size);
  const FinetuneResult direct = finetune(toy_finetune(), &pretrained(), s.train, s.val);
  CHECK(rows[2].log == direct.log);
  CHECK(rows[2].report == evaluate(direct.checkpoint, s.test));
}

TEST_CASE("ablation runs every mode on the same test set") {
  const auto& s = split();
  const std::vector<FinetuneMode> modes = {FinetuneMode::kFull, FinetuneMode::kSupOnly, FinetuneMode::kFromScratch,
                                           FinetuneMode::kByteOnlyPretrain};
  PretrainConfig p = toy_pretrain();
  p.steps = 2;
  AblationCheckpoints ckpts;
  ckpts.full = pretrained();
  const auto rows = run_ablation(s, modes, p, toy_finetune(), data(), ckpts);
  REQUIRE(rows.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(rows[i].mode == modes[i]);
    CHECK(rows[i].test_sha256 == records_sha256(s.test));
    CHECK(rows[i].report.n_classes() == 3);
  }
  for (const auto& row : rows[1].log) CHECK(row.l_cons == 0.0);
}
