// nethira command-line interface.

#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nethira/checkpoint.hpp"
#include "nethira/dataset.hpp"
#include "nethira/error.hpp"
#include "nethira/experiments.hpp"
#include "nethira/ingest.hpp"
#include "nethira/protocol_map.hpp"
#include "nethira/synthetic.hpp"
#include "nethira/training.hpp"

namespace fs = std::filesystem;
using namespace nethira;
using nlohmann::json;

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
};

json load_config(const Globals& g) {
  if (g.config_path.empty()) return json::object();
  return read_json(g.config_path);
}

std::vector<double> parse_fractions(const std::string& text) {
  std::vector<double> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(std::stod(item));
  }
  if (out.empty()) throw Error(ErrorCode::kInvalidArgument, "no fractions given");
  return out;
}

std::vector<FlowRecord> strip_labels(std::span<const FlowRecord> records) {
  std::vector<FlowRecord> out(records.begin(), records.end());
  for (FlowRecord& r : out) r.label.reset();
  return out;
}

SplitSpec split_spec(const json& cfg, const Globals& g) {
  SplitSpec s;
  if (cfg.contains("split")) {
    const json& j = cfg.at("split");
    if (j.contains("ratios")) s.ratios = j.at("ratios").get<std::array<double, 3>>();
    s.per_class_cap = j.value("per_class_cap", s.per_class_cap);
    s.seed = j.value("seed", s.seed);
  }
  if (g.seed) s.seed = *g.seed;
  return s;
}

json with_run_flags(json j, const Globals& g) {
  j["deterministic"] = g.deterministic;
  return j;
}

void print_pretrain_row(const PretrainLogRow& r, std::size_t every) {
  if (every == 0 || r.step % every != 0) return;
  std::fprintf(stderr, "step %zu  byte %.4f  protocol %.4f  packet %.4f\n", r.step, r.byte, r.protocol,
               r.packet);
}

void print_finetune_row(const FinetuneLogRow& r) {
  std::fprintf(stderr, "epoch %zu  sup %.4f  cons %.4f  val_f1 %.4f\n", r.epoch, r.l_sup, r.l_cons,
               r.val_f1);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical masked pre-training and consistency fine-tuning for traffic classification"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Seed overriding every seed in the config");
  app.add_flag("--deterministic", g.deterministic,
               "Record deterministic mode in the run manifest (reductions are always ordered)");

  // preprocess
  auto* pre = app.add_subcommand("preprocess", "PCAP directory to flow dataset");
  std::string pcap_dir, pre_out;
  PreprocessOptions popts;
  bool unidirectional = false;
  pre->add_option("--pcap-dir", pcap_dir)->required()->check(CLI::ExistingDirectory);
  pre->add_option("--out", pre_out)->required();
  pre->add_option("--m", popts.packets_per_flow, "Packets per flow")->capture_default_str();
  pre->add_option("--l", popts.packet_len, "Bytes per packet")->capture_default_str();
  pre->add_flag("--unidirectional", unidirectional);
  pre->add_flag("--label-from-dirname", popts.label_from_dirname);

  // pretrain
  auto* pt = app.add_subcommand("pretrain", "Masked reconstruction pre-training");
  std::string corpus_path, pt_out, pt_tasks, pt_init, pt_log;
  std::optional<std::size_t> pt_steps;
  std::size_t log_every = 100;
  pt->add_option("--corpus", corpus_path)->required()->check(CLI::ExistingFile);
  pt->add_option("--out", pt_out)->required();
  pt->add_option("--tasks", pt_tasks, "Subset of byte,protocol,packet");
  pt->add_option("--steps", pt_steps);
  pt->add_option("--init", pt_init, "Continue from a checkpoint")->check(CLI::ExistingFile);
  pt->add_option("--log", pt_log, "Loss CSV (default <out>.loss.csv)");
  pt->add_option("--log-every", log_every)->capture_default_str();

  // finetune
  auto* ft = app.add_subcommand("finetune", "Consistency-regularized fine-tuning");
  std::string ft_init, ft_train, ft_val, ft_out, ft_mode, ft_log;
  std::optional<double> ft_fraction, ft_lambda;
  std::optional<std::size_t> ft_epochs;
  ft->add_option("--init", ft_init)->check(CLI::ExistingFile);
  ft->add_option("--train", ft_train)->required()->check(CLI::ExistingFile);
  ft->add_option("--val", ft_val)->required()->check(CLI::ExistingFile);
  ft->add_option("--mode", ft_mode, "full|sup-only|from-scratch|byte-only");
  ft->add_option("--label-fraction", ft_fraction);
  ft->add_option("--lambda", ft_lambda);
  ft->add_option("--epochs", ft_epochs);
  ft->add_option("--out", ft_out)->required();
  ft->add_option("--log", ft_log, "Loss CSV (default <out>.loss.csv)");

  // eval
  auto* ev = app.add_subcommand("eval", "Metrics of a fine-tuned checkpoint");
  std::string ev_ckpt, ev_test, ev_out;
  ev->add_option("--ckpt", ev_ckpt)->required()->check(CLI::ExistingFile);
  ev->add_option("--test", ev_test)->required()->check(CLI::ExistingFile);
  ev->add_option("--out", ev_out, "Report JSON");

  // split
  auto* sp = app.add_subcommand("split", "Per-class capped train/val/test split");
  std::string sp_dataset, sp_prefix;
  sp->add_option("--dataset", sp_dataset)->required()->check(CLI::ExistingFile);
  sp->add_option("--out-prefix", sp_prefix, "Writes <prefix>.{train,val,test}.jsonl")->required();

  // sweep
  auto* sw = app.add_subcommand("sweep", "Limited-label sweep");
  std::string sw_init, sw_dataset, sw_out, sw_fractions = "0.01,0.02,0.03,0.04,0.05,0.06,0.07,0.08,0.09,0.1";
  sw->add_option("--init", sw_init)->required()->check(CLI::ExistingFile);
  sw->add_option("--dataset", sw_dataset, "Labeled dataset, split internally")->required()->check(CLI::ExistingFile);
  sw->add_option("--fractions", sw_fractions)->capture_default_str();
  sw->add_option("--out", sw_out)->required();

  // ablate
  auto* ab = app.add_subcommand("ablate", "Ablation over fine-tuning modes");
  std::string ab_dataset, ab_corpus, ab_out, ab_full, ab_byte, ab_modes = "full,from-scratch,byte-only,sup-only";
  ab->add_option("--dataset", ab_dataset, "Labeled dataset, split internally")->required()->check(CLI::ExistingFile);
  ab->add_option("--corpus", ab_corpus, "Unlabeled pre-training corpus (default: the train split)")
      ->check(CLI::ExistingFile);
  ab->add_option("--init-full", ab_full)->check(CLI::ExistingFile);
  ab->add_option("--init-byte-only", ab_byte)->check(CLI::ExistingFile);
  ab->add_option("--modes", ab_modes)->capture_default_str();
  ab->add_option("--out", ab_out)->required();

  // fields
  auto* fl = app.add_subcommand("fields", "Print the header field spans of captured packets");
  std::string fl_pcap, fl_dataset;
  std::size_t fl_index = 0, fl_count = 1, fl_flow = 0, fl_packet = 0;
  auto* fl_pcap_opt = fl->add_option("--pcap", fl_pcap, "Raw capture")->check(CLI::ExistingFile);
  auto* fl_dataset_opt = fl->add_option("--dataset", fl_dataset, "Preprocessed dataset")->check(CLI::ExistingFile);
  fl_pcap_opt->excludes(fl_dataset_opt);
  fl->add_option("--index", fl_index, "First packet (--pcap)")->capture_default_str()->needs(fl_pcap_opt);
  fl->add_option("--count", fl_count, "Packets to print (--pcap)")->capture_default_str()->needs(fl_pcap_opt);
  fl->add_option("--flow", fl_flow, "Flow index (--dataset)")->capture_default_str()->needs(fl_dataset_opt);
  fl->add_option("--packet", fl_packet, "Packet index in the flow (--dataset)")
      ->capture_default_str()
      ->needs(fl_dataset_opt);

  // synth
  auto* sy = app.add_subcommand("synth", "Write the 3-class synthetic captures");
  std::string sy_dir;
  SyntheticSpec sspec;
  sy->add_option("--out-dir", sy_dir)->required();
  sy->add_option("--flows-per-class", sspec.flows_per_class)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    const json cfg = load_config(g);

    if (*pre) {
      popts.direction = unidirectional ? FlowDirection::kUnidirectional : FlowDirection::kBidirectional;
      PreprocessResult r = preprocess_directory(pcap_dir, popts);
      write_dataset(fs::path(pre_out), r.records);
      DatasetManifest m;
      m.packets_per_flow = popts.packets_per_flow;
      m.packet_len = popts.packet_len;
      m.class_names = r.class_names;
      const json options = {{"m", popts.packets_per_flow},
                            {"l", popts.packet_len},
                            {"unidirectional", unidirectional},
                            {"label_from_dirname", popts.label_from_dirname}};
      m.config_hash = sha256_hex(std::string_view(options.dump()));
      m.dataset_sha256 = file_sha256(pre_out);
      m.flows = r.records.size();
      m.anpf = r.stats.anpf();
      m.skipped_packets = r.stats.skipped_packets;
      m.truncated_records = r.stats.truncated_records;
      write_json(manifest_path(pre_out), to_json(m));
      std::printf("captures %zu  packets %zu  skipped %zu  flows %zu  ANPF %.3f\n", r.stats.captures,
                  r.stats.packets, r.stats.skipped_packets, r.records.size(), r.stats.anpf());
    } else if (*pt) {
      PretrainConfig pc = pretrain_config_from_json(cfg);
      if (g.seed) pc.seed = *g.seed;
      if (pt_steps) pc.steps = *pt_steps;
      if (!pt_tasks.empty()) pc.tasks = TaskSet::parse(pt_tasks);
      const auto corpus = read_dataset(corpus_path);
      std::optional<ModelCheckpoint> init;
      if (!pt_init.empty()) init = load_checkpoint(pt_init);
      PretrainResult r = pretrain(pc, corpus, init ? &*init : nullptr,
                                  [&](const PretrainLogRow& row) { print_pretrain_row(row, log_every); });
      save_checkpoint(r.checkpoint, pt_out);
      write_pretrain_log(pt_log.empty() ? pt_out + ".loss.csv" : pt_log, r.log);
      write_json(pt_out + ".run.json",
                 run_manifest("pretrain", with_run_flags(to_json(pc), g), {{"corpus", file_sha256(corpus_path)}}));
    } else if (*ft) {
      FinetuneConfig fc = finetune_config_from_json(cfg);
      if (g.seed) fc.seed = *g.seed;
      if (!ft_mode.empty()) fc.mode = parse_finetune_mode(ft_mode);
      if (ft_fraction) fc.label_fraction = *ft_fraction;
      if (ft_lambda) fc.lambda = *ft_lambda;
      if (ft_epochs) fc.epochs = *ft_epochs;
      const auto train = read_dataset(ft_train);
      const auto val = read_dataset(ft_val);
      std::optional<ModelCheckpoint> init;
      if (!ft_init.empty()) init = load_checkpoint(ft_init);
      FinetuneResult r = finetune(fc, init ? &*init : nullptr, train, val, print_finetune_row);
      save_checkpoint(r.checkpoint, ft_out);
      write_finetune_log(ft_log.empty() ? ft_out + ".loss.csv" : ft_log, r.log);
      std::map<std::string, std::string> hashes{{"train", file_sha256(ft_train)}, {"val", file_sha256(ft_val)}};
      if (!ft_init.empty()) hashes["init"] = file_sha256(ft_init);
      write_json(ft_out + ".run.json", run_manifest("finetune", with_run_flags(to_json(fc), g), hashes));
      std::printf("best epoch %zu  train records %zu\n", r.best_epoch, r.train_size);
    } else if (*ev) {
      const auto test = read_dataset(ev_test);
      const MetricsReport rep = evaluate(load_checkpoint(ev_ckpt), test);
      if (!ev_out.empty()) write_json(ev_out, rep.to_json());
      std::printf("macro PR %.4f  RC %.4f  F1 %.4f\n", rep.macro_precision, rep.macro_recall, rep.macro_f1);
    } else if (*sp) {
      const auto data = read_dataset(sp_dataset);
      const DatasetSplit s = split_dataset(data, split_spec(cfg, g));
      write_dataset(fs::path(sp_prefix + ".train.jsonl"), s.train);
      write_dataset(fs::path(sp_prefix + ".val.jsonl"), s.val);
      write_dataset(fs::path(sp_prefix + ".test.jsonl"), s.test);
      std::printf("train %zu  val %zu  test %zu\n", s.train.size(), s.val.size(), s.test.size());
    } else if (*sw) {
      FinetuneConfig fc = finetune_config_from_json(cfg);
      if (g.seed) fc.seed = *g.seed;
      const auto data = read_dataset(sw_dataset);
      const SplitSpec ss = split_spec(cfg, g);
      const DatasetSplit s = split_dataset(data, ss);
      const auto fractions = parse_fractions(sw_fractions);
      const auto rows = run_limited_label_sweep(load_checkpoint(sw_init), s, fractions, fc);
      write_sweep_csv(sw_out, rows);
      json config = with_run_flags(to_json(fc), g);
      config["fractions"] = fractions;
      config["split_seed"] = ss.seed;
      write_json(sw_out + ".run.json",
                 run_manifest("sweep", config,
                              {{"dataset", file_sha256(sw_dataset)}, {"init", file_sha256(sw_init)},
                               {"test_split", records_sha256(s.test)}}));
      for (const auto& r : rows) std::printf("fraction %.4f  train %zu  F1 %.4f\n", r.fraction, r.train_size, r.report.macro_f1);
    } else if (*ab) {
      PretrainConfig pc = pretrain_config_from_json(cfg);
      FinetuneConfig fc = finetune_config_from_json(cfg);
      if (g.seed) {
        pc.seed = *g.seed;
        fc.seed = *g.seed;
      }
      const auto data = read_dataset(ab_dataset);
      const SplitSpec ss = split_spec(cfg, g);
      const DatasetSplit s = split_dataset(data, ss);
      std::vector<FinetuneMode> modes;
      std::stringstream in(ab_modes);
      for (std::string item; std::getline(in, item, ',');) modes.push_back(parse_finetune_mode(item));
      const auto corpus = ab_corpus.empty() ? strip_labels(s.train) : read_dataset(ab_corpus);
      AblationCheckpoints ckpts;
      if (!ab_full.empty()) ckpts.full = load_checkpoint(ab_full);
      if (!ab_byte.empty()) ckpts.byte_only = load_checkpoint(ab_byte);
      const auto rows = run_ablation(s, modes, pc, fc, corpus, std::move(ckpts));
      write_ablation_csv(ab_out, rows);
      json config = with_run_flags(to_json(pc), g);
      config.update(to_json(fc));
      config["split_seed"] = ss.seed;
      write_json(ab_out + ".run.json", run_manifest("ablate", config,
                                                    {{"dataset", file_sha256(ab_dataset)},
                                                     {"test_split", records_sha256(s.test)}}));
      for (const auto& r : rows) std::printf("%-12s F1 %.4f\n", std::string(to_string(r.mode)).c_str(), r.report.macro_f1);
    } else if (*fl && fl_pcap.empty() && fl_dataset.empty()) {
      throw Error(ErrorCode::kInvalidArgument, "fields needs --pcap or --dataset");
    } else if (*fl && !fl_dataset.empty()) {
      const auto records = read_dataset(fl_dataset);
      if (fl_flow >= records.size()) {
        throw Error(ErrorCode::kInvalidArgument, "flow index out of range");
      }
      const FlowRecord& r = records[fl_flow];
      if (fl_packet >= r.packet_count()) {
        throw Error(ErrorCode::kInvalidArgument, "packet index out of range");
      }
      const NormalizedPacket& pkt = r.packets[fl_packet];
      std::printf("flow %zu packet %zu (%s)\n%s\n", fl_flow, fl_packet,
                  fl_packet < r.real_packet_count ? "real" : "padding",
                  format_field_table(parse_fields(pkt, fl_packet), pkt.bytes).c_str());
    } else if (*fl) {
      const PcapContents pcap = read_pcap(fl_pcap);
      for (std::size_t i = fl_index; i < std::min(pcap.packets.size(), fl_index + fl_count); ++i) {
        const Bytes& frame = pcap.packets[i].link_bytes;
        FieldSpanMap map = dissect_headers(frame);
        map.packet_index = i;
        std::printf("packet %zu (%zu bytes)\n%s\n", i, frame.size(), format_field_table(map, frame).c_str());
      }
    } else if (*sy) {
      if (g.seed) sspec.seed = *g.seed;
      write_synthetic_pcaps(sy_dir, sspec);
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
