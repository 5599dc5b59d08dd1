#include "cxr/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "cxr/checkpoint.hpp"
#include "cxr/error.hpp"
#include "cxr/metrics.hpp"

namespace cxr {

namespace fs = std::filesystem;

KeyValues default_config() {
  KeyValues kv;
  const std::pair<const char*, const char*> defaults[] = {
      {"seed", "0"},
      {"data", "data"},
      {"synth.count", "2000"},
      {"synth.ratios", "0.7,0.1,0.2"},
      {"encoder.image_size", "64"},
      {"encoder.stem_channels", "16"},
      {"encoder.stem_stride", "2"},
      {"encoder.block_channels", "16,32,64,64"},
      {"encoder.block_strides", "2,2,2,1"},
      {"encoder.channels_per_group", "4"},
      {"decoder.embed_dim", "64"},
      {"decoder.hidden_dim", "64"},
      {"decoder.heads", "4"},
      {"decoder.layers", "2"},
      {"decoder.ffn_dim", "128"},
      {"decoder.max_len", "48"},
      {"augment.crop_scale_lo", "0.85"},
      {"augment.crop_scale_hi", "1.0"},
      {"augment.flip_prob", "0.5"},
      {"augment.mask_prob", "0.5"},
      {"augment.paired_mask", "false"},
      {"pretrain.method", "simclr"},
      {"pretrain.epochs", "20"},
      {"pretrain.batch_size", "16"},
      {"pretrain.lr_max", "0.001"},
      {"pretrain.lr_min", "0.00001"},
      {"pretrain.weight_decay", "0.000001"},
      {"pretrain.temperature", "0.5"},
      {"pretrain.literal_eq1", "false"},
      {"pretrain.projection_dim", "32"},
      {"pretrain.moco_momentum", "0.99"},
      {"pretrain.moco_queue", "1024"},
      {"pretrain.moco_lung_mask", "false"},
      {"finetune.decoder", "transformer"},
      {"finetune.epochs", "15"},
      {"finetune.batch_size", "16"},
      {"finetune.lr_max", "0.001"},
      {"finetune.lr_min", "0.00001"},
      {"finetune.weight_decay", "0.000001"},
      {"finetune.freeze_encoder", "false"},
      {"evaluate.split", "test"},
  };
  for (const auto& [k, v] : defaults) kv.set(k, v);
  return kv;
}

namespace {

std::vector<std::size_t> size_list(const KeyValues& cfg, const std::string& key) {
  std::vector<std::size_t> out;
  for (const auto& part : split(cfg.get(key), ',')) {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(part, &used);
      if (used != part.size() || v <= 0) throw ConfigError("");
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "': expected a comma-separated list of positive integers");
    }
  }
  return out;
}

std::size_t positive(const KeyValues& cfg, const std::string& key, bool allow_zero = false) {
  const long long v = cfg.get_int(key);
  if (v < 0 || (!allow_zero && v == 0)) {
    throw ConfigError("config key '" + key + "' must be " + (allow_zero ? "non-negative" : "positive"));
  }
  return static_cast<std::size_t>(v);
}

std::uint64_t seed_of(const KeyValues& cfg) {
  const long long v = cfg.get_int("seed");
  if (v < 0) throw ConfigError("config key 'seed' must be non-negative");
  return static_cast<std::uint64_t>(v);
}

}  // namespace

EncoderConfig encoder_config_from(const KeyValues& cfg) {
  EncoderConfig e;
  e.image_size = positive(cfg, "encoder.image_size");
  e.stem_channels = positive(cfg, "encoder.stem_channels");
  e.stem_stride = positive(cfg, "encoder.stem_stride");
  e.block_channels = size_list(cfg, "encoder.block_channels");
  e.block_strides = size_list(cfg, "encoder.block_strides");
  e.channels_per_group = positive(cfg, "encoder.channels_per_group");
  if (e.block_channels.size() != e.block_strides.size()) {
    throw ConfigError("encoder.block_channels and encoder.block_strides differ in length");
  }
  return e;
}

DecoderConfig decoder_config_from(const KeyValues& cfg, std::size_t vocab_size) {
  DecoderConfig d;
  d.kind = parse_decoder_kind(cfg.get("finetune.decoder"));
  d.vocab_size = vocab_size;
  d.embed_dim = positive(cfg, "decoder.embed_dim");
  d.hidden_dim = positive(cfg, "decoder.hidden_dim");
  d.heads = positive(cfg, "decoder.heads");
  d.layers = positive(cfg, "decoder.layers");
  d.ffn_dim = positive(cfg, "decoder.ffn_dim");
  d.max_len = positive(cfg, "decoder.max_len");
  const EncoderConfig e = encoder_config_from(cfg);
  d.feature_dim = e.output_dim();
  d.grid_positions = e.grid_positions();
  return d;
}

PretrainConfig pretrain_config_from(const KeyValues& cfg) {
  PretrainConfig p;
  p.method = parse_pretrain_method(cfg.get("pretrain.method"));
  p.epochs = positive(cfg, "pretrain.epochs", true);
  p.batch_size = positive(cfg, "pretrain.batch_size");
  p.lr_max = cfg.get_double("pretrain.lr_max");
  p.lr_min = cfg.get_double("pretrain.lr_min");
  p.weight_decay = cfg.get_double("pretrain.weight_decay");
  p.temperature = cfg.get_double("pretrain.temperature");
  p.literal_eq1 = cfg.get_bool("pretrain.literal_eq1");
  p.projection_dim = positive(cfg, "pretrain.projection_dim");
  p.moco_momentum = cfg.get_double("pretrain.moco_momentum");
  p.moco_queue = positive(cfg, "pretrain.moco_queue");
  p.moco_lung_mask = cfg.get_bool("pretrain.moco_lung_mask");
  const EncoderConfig e = encoder_config_from(cfg);
  p.augment.crop_scale_lo = cfg.get_double("augment.crop_scale_lo");
  p.augment.crop_scale_hi = cfg.get_double("augment.crop_scale_hi");
  p.augment.flip_prob = cfg.get_double("augment.flip_prob");
  p.augment.mask_prob = cfg.get_double("augment.mask_prob");
  p.augment.paired_mask = cfg.get_bool("augment.paired_mask");
  p.augment.out_height = e.image_size;
  p.augment.out_width = e.image_size;
  p.seed = seed_of(cfg);
  p.validate();
  if (p.projection_dim >= e.output_dim()) throw ConfigError("pretrain.projection_dim must be below the encoder width");
  return p;
}

FinetuneConfig finetune_config_from(const KeyValues& cfg) {
  FinetuneConfig f;
  f.decoder = parse_decoder_kind(cfg.get("finetune.decoder"));
  f.epochs = positive(cfg, "finetune.epochs", true);
  f.batch_size = positive(cfg, "finetune.batch_size");
  f.lr_max = cfg.get_double("finetune.lr_max");
  f.lr_min = cfg.get_double("finetune.lr_min");
  f.weight_decay = cfg.get_double("finetune.weight_decay");
  f.freeze_encoder = cfg.get_bool("finetune.freeze_encoder");
  f.seed = seed_of(cfg);
  f.validate();
  return f;
}

SynthConfig synth_config_from(const KeyValues& cfg) {
  SynthConfig s;
  s.count = positive(cfg, "synth.count");
  s.seed = seed_of(cfg);
  const auto parts = split(cfg.get("synth.ratios"), ',');
  if (parts.size() != 3) throw ConfigError("synth.ratios needs three comma-separated values");
  for (std::size_t i = 0; i < 3; ++i) {
    KeyValues one;
    one.set("synth.ratios", parts[i]);
    s.ratios[i] = one.get_double("synth.ratios");
  }
  double total = s.ratios[0] + s.ratios[1] + s.ratios[2];
  if (std::abs(total - 1.0) > 1e-9 || *std::min_element(s.ratios.begin(), s.ratios.end()) < 0.0) {
    throw ConfigError("synth.ratios must be non-negative and sum to 1");
  }
  return s;
}

void validate_config(const KeyValues& cfg) {
  const KeyValues defaults = default_config();
  for (const auto& [k, v] : cfg.entries()) {
    if (!defaults.contains(k)) throw ConfigError("unknown config key '" + k + "'");
  }
  seed_of(cfg);
  synth_config_from(cfg);
  decoder_config_from(cfg, kReservedTokens + 1);
  pretrain_config_from(cfg);
  finetune_config_from(cfg);
  Rng probe(0);
  Encoder<float> check(encoder_config_from(cfg), probe);
  (void)check;
  if (cfg.get("data").empty()) throw ConfigError("config key 'data' must not be empty");
  parse_split(cfg.get("evaluate.split"));
}

KeyValues resolve_config(const std::string& config_path, const KeyValues& overrides) {
  KeyValues cfg = default_config();
  auto apply = [&](const KeyValues& src) {
    for (const auto& [k, v] : src.entries()) {
      if (!cfg.contains(k)) throw ConfigError("unknown config key '" + k + "'");
      cfg.set(k, v);
    }
  };
  if (!config_path.empty()) apply(KeyValues::load(config_path));
  apply(overrides);
  validate_config(cfg);
  return cfg;
}

std::vector<std::string> architecture_keys() {
  return {"encoder.image_size",   "encoder.stem_channels",       "encoder.stem_stride",
          "encoder.block_channels", "encoder.block_strides",     "encoder.channels_per_group"};
}

Dataset read_dataset_splits(const std::string& root, const std::vector<Split>& splits) {
  Dataset ds;
  ds.manifest = read_manifest(root);
  for (const auto& r : ds.manifest.records) {
    if (std::find(splits.begin(), splits.end(), r.split) == splits.end()) {
      ds.images.emplace_back();
      ds.masks.emplace_back();
      continue;
    }
    try {
      ds.images.push_back(decode_pgm(read_text_file((fs::path(root) / r.image_path).string())));
      ds.masks.push_back(mask_from_image(decode_pgm(read_text_file((fs::path(root) / r.mask_path).string()))));
    } catch (const IoError&) {
      throw IoError((fs::path(root) / r.image_path).string(), "cannot read files of record '" + r.id + "'");
    } catch (const Error& e) {
      throw FormatError(r.id, e.what());
    }
  }
  return ds;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path, "cannot open for writing");
  out << text;
  if (!out) throw IoError(path, "write failed");
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path, "cannot open for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_run_metadata(const std::string& out_dir, const KeyValues& cfg) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError(out_dir, "cannot create output directory: " + ec.message());
  write_text_file((fs::path(out_dir) / "config.resolved").string(), cfg.serialize());
  write_text_file((fs::path(out_dir) / "seed").string(), cfg.get("seed") + "\n");
}

void run_synth_data(const KeyValues& cfg, const std::string& out_dir) {
  const SynthConfig sc = synth_config_from(cfg);
  write_run_metadata(out_dir, cfg);
  write_dataset(generate_dataset(sc), out_dir);
}

namespace {

std::string join(const fs::path& dir, const char* name) { return (dir / name).string(); }

void check_architecture(const KeyValues& ckpt_cfg, const KeyValues& cfg, bool check_decoder) {
  auto keys = architecture_keys();
  if (check_decoder) {
    for (const char* k : {"finetune.decoder", "decoder.embed_dim", "decoder.hidden_dim", "decoder.heads",
                          "decoder.layers", "decoder.ffn_dim", "decoder.max_len"}) {
      if (ckpt_cfg.contains(k)) keys.push_back(k);
    }
  }
  const auto lines = ckpt_cfg.diff(cfg, keys);
  if (!lines.empty()) {
    std::string msg = "checkpoint does not match the requested model (checkpoint -> requested):";
    for (const auto& l : lines) msg += "\n  " + l;
    throw ConfigError(msg);
  }
}

}  // namespace

void run_pretrain(const KeyValues& cfg, const std::string& out_dir) {
  const PretrainConfig pc = pretrain_config_from(cfg);
  const EncoderConfig ec = encoder_config_from(cfg);
  write_run_metadata(out_dir, cfg);
  const Dataset data = read_dataset_splits(cfg.get("data"), {Split::train});
  std::ostringstream log;
  const PretrainResult result = run_pretraining(pc, ec, data, &log);
  write_text_file(join(out_dir, "loss.tsv"), log.str());
  KeyValues meta = cfg;
  meta.set("checkpoint.kind", "encoder");
  write_checkpoint(join(out_dir, "encoder.ckpt"), Checkpoint{meta.serialize(), result.encoder});
}

void run_finetune(const KeyValues& cfg, const std::string& encoder_ckpt, const std::string& out_dir) {
  const FinetuneConfig fc = finetune_config_from(cfg);
  const EncoderConfig ec = encoder_config_from(cfg);
  Checkpoint encoder;
  if (!encoder_ckpt.empty()) {
    encoder = read_checkpoint(encoder_ckpt);
    const KeyValues ckpt_cfg = KeyValues::parse(encoder.config);
    check_architecture(ckpt_cfg, cfg, ckpt_cfg.get_or("checkpoint.kind", "") == "model");
  }
  write_run_metadata(out_dir, cfg);
  const Dataset data = read_dataset_splits(cfg.get("data"), {Split::train, Split::val});
  std::vector<std::string> train_reports;
  for (auto i : data.indices(Split::train)) train_reports.push_back(data.manifest.records[i].report);
  const Vocab vocab = Vocab::build(train_reports);

  Rng rng(derive_seed(fc.seed, 0xF1));
  ReportModel<float> model(ec, decoder_config_from(cfg, vocab.size()), rng);
  if (encoder_ckpt.empty()) {
    Encoder<float> init = initial_encoder(ec, fc.seed);
    ParamList<float> src;
    init.collect("encoder", src);
    encoder.params = snapshot(src);
  }
  ParamList<float> enc_params;
  model.encoder.collect("encoder", enc_params);
  load_params(encoder, enc_params, "encoder.");

  std::ostringstream curve;
  curve << "epoch\tstep\tlr\ttrain_loss\tval_loss\n";
  const FinetuneResult result = finetune(model, data, vocab, fc, &curve);
  write_text_file(join(out_dir, "curve.tsv"), curve.str());
  KeyValues meta = cfg;
  meta.set("checkpoint.kind", "model");
  meta.set("vocab", vocab.serialize());
  meta.set("finetune.best_epoch", std::to_string(result.best_epoch));
  write_checkpoint(join(out_dir, "model.ckpt"), Checkpoint{meta.serialize(), snapshot(model.params())});
}

MetricReport run_evaluate(const std::string& model_ckpt, const KeyValues& overrides, const std::string& out_dir) {
  const Checkpoint ckpt = read_checkpoint(model_ckpt);
  KeyValues cfg = KeyValues::parse(ckpt.config);
  if (cfg.get_or("checkpoint.kind", "") != "model") {
    throw ConfigError("checkpoint " + model_ckpt + " is not a full report model (run finetune first)");
  }
  for (const auto& [k, v] : overrides.entries()) cfg.set(k, v);
  const Split split = parse_split(cfg.get("evaluate.split"));
  const Vocab vocab = Vocab::parse(cfg.get("vocab"));
  const EncoderConfig ec = encoder_config_from(cfg);

  const Dataset data = read_dataset_splits(cfg.get("data"), {split});
  const auto indices = data.indices(split);
  if (indices.empty()) throw ConfigError("split '" + to_string(split) + "' is empty");

  Rng rng(0);
  ReportModel<float> model(ec, decoder_config_from(cfg, vocab.size()), rng);
  load_params(ckpt, model.params(), "");

  KeyValues resolved = cfg;
  write_run_metadata(out_dir, resolved);
  const auto generations = generate_reports(model, data, indices, vocab);
  std::vector<std::string> generated, references;
  std::vector<std::vector<std::string>> tags;
  for (std::size_t i = 0; i < generations.size(); ++i) {
    generated.push_back(generations[i].generated);
    references.push_back(generations[i].reference);
    tags.push_back(data.manifest.records[indices[i]].tags);
  }
  const MetricReport report = evaluate_reports(generated, references, tags, all_tags());
  write_text_file(join(out_dir, "generations.tsv"), format_generations(generations));
  write_text_file(join(out_dir, "metrics.tsv"), report.to_text());
  return report;
}

bool CompareResult::ok() const {
  return std::all_of(cells.begin(), cells.end(), [](const CompareCell& c) { return c.ok; });
}

int CompareResult::exit_code() const {
  for (const auto& c : cells)
    if (!c.ok) return c.exit_code == 0 ? 1 : c.exit_code;
  return 0;
}

namespace {

std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

void run_cell(const KeyValues& base, CompareCell& cell, const fs::path& dir) {
  try {
    KeyValues cfg = base;
    cfg.set("seed", std::to_string(cell.seed));
    cfg.set("pretrain.method", cell.method);
    validate_config(cfg);
    run_pretrain(cfg, (dir / "pretrain").string());
    run_finetune(cfg, (dir / "pretrain" / "encoder.ckpt").string(), (dir / "finetune").string());
    KeyValues eval;
    eval.set("evaluate.split", "test");
    cell.metrics = run_evaluate((dir / "finetune" / "model.ckpt").string(), eval, (dir / "evaluate").string());
    cell.ok = true;
  } catch (...) {
    cell.exit_code = exit_code_for_current_exception(&cell.error);
  }
}

}  // namespace

CompareResult run_compare(const KeyValues& cfg, const std::vector<std::string>& methods,
                          const std::vector<std::uint64_t>& seeds, const std::string& out_dir, std::size_t workers) {
  if (methods.empty()) throw ConfigError("compare: at least one method is required");
  if (seeds.empty()) throw ConfigError("compare: at least one seed is required");
  for (const auto& m : methods) parse_pretrain_method(m);
  KeyValues base = cfg;
  validate_config(base);
  write_run_metadata(out_dir, base);

  CompareResult result;
  for (const auto& m : methods)
    for (auto s : seeds) result.cells.push_back({m, s, false, {}, 0, {}});

  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < result.cells.size(); i = next++) {
      auto& cell = result.cells[i];
      run_cell(base, cell, fs::path(out_dir) / cell.method / ("seed" + std::to_string(cell.seed)));
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(workers, result.cells.size()));
  if (n == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }

  std::string table = "method\tB-1\tB-2\tB-3\tB-4\tM\tR-L\n";
  std::string keywords = "method";
  for (const auto& k : lung_keywords()) keywords += "\t" + k;
  keywords += "\tmacro\n";
  std::string runs = "method\tseed\tstatus\tB-1\tB-2\tB-3\tB-4\tM\tR-L\tlung_macro_f1\n";
  for (const auto& m : methods) {
    std::array<double, 6> sums{};
    std::map<std::string, double> kw;
    double macro = 0.0;
    std::size_t n_ok = 0;
    for (const auto& c : result.cells) {
      if (c.method != m) continue;
      runs += c.method + "\t" + std::to_string(c.seed) + "\t" + (c.ok ? "ok" : "failed");
      if (!c.ok) {
        runs += "\t\t\t\t\t\t\t\n";
        continue;
      }
      const std::array<double, 6> row{c.metrics.bleu[0], c.metrics.bleu[1], c.metrics.bleu[2],
                                      c.metrics.bleu[3], c.metrics.meteor,  c.metrics.rouge_l};
      for (std::size_t i = 0; i < 6; ++i) {
        sums[i] += row[i];
        runs += "\t" + fixed4(row[i]);
      }
      runs += "\t" + fixed4(c.metrics.lung_macro_f1()) + "\n";
      for (const auto& k : lung_keywords()) kw[k] += c.metrics.keywords.at(k).f1;
      macro += c.metrics.lung_macro_f1();
      ++n_ok;
    }
    if (n_ok == 0) continue;
    const double inv = 1.0 / static_cast<double>(n_ok);
    table += m;
    for (double s : sums) table += "\t" + fixed4(s * inv);
    table += "\n";
    keywords += m;
    for (const auto& k : lung_keywords()) keywords += "\t" + fixed4(kw[k] * inv);
    keywords += "\t" + fixed4(macro * inv) + "\n";
  }
  result.table = table;
  result.keywords = keywords;
  write_text_file(join(out_dir, "table.tsv"), table);
  write_text_file(join(out_dir, "keywords.tsv"), keywords);
  write_text_file(join(out_dir, "runs.tsv"), runs);
  return result;
}

std::size_t worker_threads() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("CXRC_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) n = std::min<std::size_t>(n, static_cast<std::size_t>(v));
  }
  return n;
}

int exit_code_for_current_exception(std::string* message) {
  auto set = [&](const std::string& m) {
    if (message) *message = m;
  };
  try {
    throw;
  } catch (const ConfigError& e) {
    set(e.what());
    return 2;
  } catch (const IoError& e) {
    set(e.what());
    return 3;
  } catch (const FormatError& e) {
    set(e.what());
    return 3;
  } catch (const NumericalError& e) {
    set(e.what());
    return 4;
  } catch (const std::exception& e) {
    set(e.what());
    return 1;
  } catch (...) {
    set("unknown error");
    return 1;
  }
}

}  // namespace cxr
