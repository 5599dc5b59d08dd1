// Acceptance suite: one PASS/FAIL line per criterion. Criteria to run may be
// given as arguments (e.g. `acceptance 1 3 7`); the default is all of them.
#include <chrono>
#include <cmath>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "contrastive_oracles.hpp"
#include "cxr/checkpoint.hpp"
#include "cxr/contrastive.hpp"
#include "cxr/error.hpp"
#include "cxr/metrics.hpp"
#include "cxr/pipeline.hpp"
#include "cxr/report.hpp"
#include "metric_oracles.hpp"
#include "op_cases.hpp"
#include "test_util.hpp"

using namespace cxr;
using namespace cxr::test;
namespace fs = std::filesystem;
namespace o = cxr::ops;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

EncoderConfig small_encoder() {
  EncoderConfig c;
  c.image_size = 16;
  c.stem_channels = 4;
  c.block_channels = {4, 8, 8, 8};
  c.block_strides = {2, 1, 2, 1};
  return c;
}

DecoderConfig small_decoder(DecoderKind kind) {
  DecoderConfig c;
  c.kind = kind;
  c.vocab_size = 10;
  c.embed_dim = 8;
  c.hidden_dim = 6;
  c.heads = 2;
  c.layers = 1;
  c.ffn_dim = 12;
  c.max_len = 10;
  c.feature_dim = 8;
  c.grid_positions = 4;
  return c;
}

const DecoderKind kDecoders[] = {DecoderKind::transformer, DecoderKind::lstm, DecoderKind::gru};

void criterion_gradients(Outcome& out) {
  const auto t0 = std::chrono::steady_clock::now();
  double op_worst = 0.0;
  std::string op_name;
  for (const auto& c : op_cases()) {
    const double e = worst_op_error(c, 20);
    if (e > op_worst) {
      op_worst = e;
      op_name = c.name;
    }
  }
  out.require(op_worst < 1e-4, "op " + op_name);

  double xent_worst = 0.0, ce_worst = 0.0, contrastive_model = 0.0, report_model = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(500 + seed);
    const std::size_t n = 2 + seed % 4;
    const TD x = random_tensor({2 * n, 5}, rng, 1.0, true);
    for (bool literal : {false, true}) {
      xent_worst = std::max(
          xent_worst, check_input(
                          [&](const std::vector<TD>& a) {
                            return nt_xent_loss(ContrastiveBatch<double>::halves(o::l2_normalize(a[0])),
                                                LossConfig{0.5, literal});
                          },
                          {x}, 0, seed));
    }

    // Teacher-forced cross-entropy at the logits, PAD targets ignored.
    const TD logits = random_tensor({6, 7}, rng, 2.0);
    const std::vector<int> targets{4, kPad, 2, 6, kPad, 5};
    ce_worst = std::max(ce_worst, grad_check(
                                      [&](const TD& l) {
                                        return o::cross_entropy(l, std::span<const int>(targets), kPad);
                                      },
                                      logits));

    Rng model_rng(700 + seed);
    ContrastiveModel<double> cm(small_encoder(), 4, model_rng);
    const auto cparams = cm.params();
    jitter_params(cparams, model_rng);
    const TD images = random_tensor({4, 1, 16, 16}, model_rng);
    contrastive_model = std::max(contrastive_model, check_params(
                                                        cparams,
                                                        [&] {
                                                          return nt_xent_loss(
                                                              ContrastiveBatch<double>::halves(cm.embed(images)),
                                                              LossConfig{});
                                                        },
                                                        1e-4, true));

    const DecoderKind kind = kDecoders[seed % 3];
    ReportModel<double> rm(small_encoder(), small_decoder(kind), model_rng);
    const auto rparams = rm.params();
    jitter_params(rparams, model_rng, 0.1);
    const TD pair_images = random_tensor({2, 1, 16, 16}, model_rng);
    const std::vector<std::vector<int>> reports{{kBos, 4, 5, 6, kEos}, {kBos, 7, kEos}};
    report_model = std::max(report_model, check_params(
                                              rparams, [&] { return teacher_forced_loss(rm, pair_images, reports); },
                                              1e-4, true));
  }
  const double elapsed = seconds_since(t0);
  out.require(xent_worst < 1e-4, "nt-xent");
  out.require(ce_worst < 1e-4, "cross-entropy");
  out.require(contrastive_model < 1e-3, "contrastive model");
  out.require(report_model < 1e-3, "report model");
  out.require(elapsed < 60.0, "runtime");
  out.detail << "20 seeds: ops " << op_worst << " (" << op_name << "), nt-xent " << xent_worst << ", cross-entropy " << ce_worst
             << ", contrastive model " << contrastive_model << ", report model " << report_model << ", " << elapsed
             << " s";
}

void criterion_metrics(Outcome& out) {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(2024);
  double worst = 0.0;
  std::vector<TokenSeq> cands, refs;
  for (int t = 0; t < 200; ++t) {
    const TokenSeq c = oracle::random_sequence(rng, 1, 30, 10);
    const TokenSeq r = oracle::random_sequence(rng, 1, 30, 10);
    cands.push_back(c);
    refs.push_back(r);
    for (int n = 1; n <= 4; ++n) worst = std::max(worst, std::abs(bleu(c, r, n) - oracle::bleu({c}, {r}, n)));
    worst = std::max(worst, std::abs(rouge_l(c, r) - oracle::rouge_l(c, r, 1.2)));
  }
  for (int n = 1; n <= 4; ++n)
    worst = std::max(worst, std::abs(corpus_bleu(cands, refs, n) - oracle::bleu(cands, refs, n)));
  double meteor_worst = 0.0;
  for (const auto& c : oracle::meteor_hand_cases())
    meteor_worst = std::max(meteor_worst, std::abs(meteor(tokenize(c.cand), tokenize(c.ref)) - c.expected));
  const double elapsed = seconds_since(t0);
  out.require(worst <= 1e-9, "bleu/rouge-l oracle");
  out.require(meteor_worst <= 1e-12, "meteor hand cases");
  out.require(elapsed < 10.0, "runtime");
  out.detail << "bleu/rouge-l max diff " << worst << " on 200 pairs, meteor max diff " << meteor_worst
             << " on 10 cases, " << elapsed << " s";
}

void criterion_eq1(Outcome& out) {
  Rng rng(1);
  double one_pair = 0.0;
  for (int t = 0; t < 20; ++t) {
    const auto z = random_unit_rows(2, 5, rng);
    one_pair = std::max(one_pair, std::abs(nt_xent_loss(ContrastiveBatch<double>{to_tensor(z), {1, 0}}, LossConfig{}).item()));
  }
  const std::vector<std::vector<double>> z{{1, 0}, {1, 0}, {0, 1}, {0, 1}};
  const std::vector<std::size_t> pair{1, 0, 3, 2};
  const double two = nt_xent_loss(ContrastiveBatch<double>{to_tensor(z), pair}, LossConfig{}).item();
  const double two_diff = std::abs(two - direct_loss(z, pair, 0.5, false));
  double literal_diff = 0.0;
  for (int t = 0; t < 20; ++t) {
    const std::size_t n = 1 + uniform_index(rng, 5);
    const auto zz = random_unit_rows(2 * n, 4, rng);
    std::vector<std::size_t> p(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = i + n;
      p[i + n] = i;
    }
    const double got = nt_xent_loss(ContrastiveBatch<double>{to_tensor(zz), p}, LossConfig{0.5, true}).item();
    literal_diff = std::max(literal_diff, std::abs(got - direct_loss(zz, p, 0.5, true)));
  }
  literal_diff = std::max(literal_diff, std::abs(nt_xent_loss(ContrastiveBatch<double>{to_tensor(z), pair},
                                                              LossConfig{0.5, true})
                                                     .item() -
                                                 direct_loss(z, pair, 0.5, true)));
  out.require(one_pair <= 1e-12, "N=1");
  out.require(two_diff <= 1e-9, "N=2 orthogonal");
  out.require(literal_diff <= 1e-12, "literal form");
  out.detail << "N=1 |loss| " << one_pair << ", N=2 diff " << two_diff << ", literal diff " << literal_diff;
}

void criterion_hyperparameters(Outcome& out) {
  const KeyValues cfg = default_config();
  const PretrainConfig pc = pretrain_config_from(cfg);
  const FinetuneConfig fc = finetune_config_from(cfg);
  const std::size_t total = 1000;
  out.require(cosine_lr(0, total, pc.lr_max, pc.lr_min) == 0.001, "pretrain lr start");
  out.require(cosine_lr(total, total, pc.lr_max, pc.lr_min) == 0.00001, "pretrain lr end");
  out.require(cosine_lr(0, total, fc.lr_max, fc.lr_min) == 0.001, "finetune lr start");
  out.require(cosine_lr(total, total, fc.lr_max, fc.lr_min) == 0.00001, "finetune lr end");
  out.require(AugmentConfig{}.mask_prob == 0.5 && pc.augment.mask_prob == 0.5, "mask_prob");
  out.require(LossConfig{}.temperature == 0.5 && pc.temperature == 0.5, "temperature");
  std::string sizes;
  for (std::size_t n : {10, 7470}) {
    std::size_t count[3] = {0, 0, 0};
    for (Split s : split_dataset(n, SynthConfig{}.ratios, 0)) ++count[static_cast<int>(s)];
    const std::size_t want[3] = {n * 7 / 10, n / 10, n * 2 / 10};
    for (int i = 0; i < 3; ++i) out.require(count[i] == want[i], "split sizes for n=" + std::to_string(n));
    sizes += " n=" + std::to_string(n) + ": " + std::to_string(count[0]) + "/" + std::to_string(count[1]) + "/" +
             std::to_string(count[2]);
  }
  out.detail << "lr " << cosine_lr(0, total, pc.lr_max, pc.lr_min) << " -> " << cosine_lr(total, total, pc.lr_max, pc.lr_min)
             << ", mask_prob " << pc.augment.mask_prob << ", tau " << pc.temperature << "," << sizes;
}

struct CompareSummary {
  bool ran = false;
  std::string error;
  std::map<std::string, double> bleu1;
  std::map<std::string, double> lung_f1;
  std::map<std::string, std::size_t> ok_cells;
  double wall = 0.0;
  double cpu = 0.0;
  std::string table;
};

CompareSummary& compare_summary() {
  static CompareSummary s;
  if (s.ran) return s;
  s.ran = true;
  try {
    TempDir dir("acceptance-compare");
    KeyValues overrides;
    overrides.set("data", dir / "data");
    const KeyValues cfg = resolve_config("", overrides);
    run_synth_data(cfg, dir / "data");
    const auto t0 = std::chrono::steady_clock::now();
    const double c0 = cpu_seconds();
    const CompareResult result =
        run_compare(cfg, {"scratch", "simclr", "simclr_lungseg"}, {0, 1, 2}, dir / "compare", worker_threads());
    s.wall = seconds_since(t0);
    s.cpu = cpu_seconds() - c0;
    s.table = result.table;
    for (const auto& c : result.cells) {
      if (!c.ok) {
        s.error += c.method + "/" + std::to_string(c.seed) + ": " + c.error + "; ";
        continue;
      }
      s.bleu1[c.method] += c.metrics.bleu[0];
      s.lung_f1[c.method] += c.metrics.lung_macro_f1();
      ++s.ok_cells[c.method];
    }
    for (auto& [m, v] : s.bleu1) v /= static_cast<double>(s.ok_cells[m]);
    for (auto& [m, v] : s.lung_f1) v /= static_cast<double>(s.ok_cells[m]);
  } catch (const std::exception& e) {
    s.error = e.what();
  }
  return s;
}

bool all_cells_ok(const CompareSummary& s, Outcome& out) {
  out.require(s.error.empty(), "compare runs: " + s.error);
  for (const char* m : {"scratch", "simclr", "simclr_lungseg"}) {
    const auto it = s.ok_cells.find(m);
    out.require(it != s.ok_cells.end() && it->second == 3, std::string("3 seeds of ") + m);
  }
  return out.pass;
}

void criterion_table1(Outcome& out) {
  auto& s = compare_summary();
  if (!all_cells_ok(s, out)) return;
  const double gap = s.bleu1.at("simclr") - s.bleu1.at("scratch");
  out.require(gap > 0.0, "simclr BLEU-1 above scratch");
  out.require(s.cpu < 900.0, "15 min CPU budget");
  out.detail << "BLEU-1 simclr " << s.bleu1.at("simclr") << " vs scratch " << s.bleu1.at("scratch") << " (gap " << gap
             << ", 3 seeds, transformer), compare " << s.cpu << " s CPU / " << s.wall << " s wall";
}

void criterion_table5(Outcome& out) {
  auto& s = compare_summary();
  if (!all_cells_ok(s, out)) return;
  const double gap = s.lung_f1.at("simclr_lungseg") - s.lung_f1.at("simclr");
  out.require(gap > 0.0, "simclr_lungseg keyword F1 above simclr");
  out.detail << "lung keyword macro F1 simclr_lungseg " << s.lung_f1.at("simclr_lungseg") << " vs simclr "
             << s.lung_f1.at("simclr") << " (gap " << gap << ", 3 seeds)";
}

void criterion_memorization(Outcome& out) {
  SynthConfig sc;
  sc.count = 1;
  sc.ratios = {1.0, 0.0, 0.0};
  sc.seed = 17;
  const Dataset data = generate_dataset(sc);
  const Vocab vocab = Vocab::build({data.manifest.records[0].report});
  for (auto kind : kDecoders) {
    KeyValues cfg = default_config();
    cfg.set("finetune.decoder", to_string(kind));
    Rng rng(3);
    ReportModel<float> model(encoder_config_from(cfg), decoder_config_from(cfg, vocab.size()), rng);
    FinetuneConfig fc = finetune_config_from(cfg);
    fc.epochs = 500;
    fc.batch_size = 1;
    const auto result = finetune(model, data, vocab, fc);
    const auto gen = generate_reports(model, data, {0}, vocab);
    const bool exact = gen.size() == 1 && gen[0].generated == gen[0].reference;
    out.require(exact, to_string(kind) + " generated '" + (gen.empty() ? "" : gen[0].generated) + "'");
    out.detail << to_string(kind) << " exact after " << result.curve.back().step << " steps (final loss "
               << result.curve.back().train_loss << "); ";
  }
}

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path().string());
  return out;
}

void criterion_determinism(Outcome& out) {
  TempDir dir("acceptance-determinism");
  KeyValues overrides;
  overrides.set("synth.count", "40");
  overrides.set("pretrain.epochs", "2");
  overrides.set("finetune.epochs", "2");
  overrides.set("pretrain.moco_queue", "32");
  std::size_t files = 0;
  std::map<std::string, std::string> first;
  for (int run = 0; run < 2; ++run) {
    const std::string root = dir / ("run" + std::to_string(run));
    overrides.set("data", root + "/data");
    const KeyValues cfg = resolve_config("", overrides);
    run_synth_data(cfg, root + "/data");
    for (const char* method : {"simclr_lungseg", "moco", "ae", "mlc"}) {
      KeyValues m = cfg;
      m.set("pretrain.method", method);
      run_pretrain(m, root + "/pretrain_" + method);
    }
    run_finetune(cfg, root + "/pretrain_simclr_lungseg/encoder.ckpt", root + "/finetune");
    KeyValues eval;
    eval.set("evaluate.split", "test");
    run_evaluate(root + "/finetune/model.ckpt", eval, root + "/evaluate");
    KeyValues cmp = cfg;
    cmp.set("finetune.decoder", "gru");
    run_compare(cmp, {"scratch", "simclr"}, {0, 1}, root + "/compare", worker_threads());
    auto bytes = tree_bytes(root);
    // The dataset root is recorded in resolved configs; mask it before comparing.
    for (auto& [name, content] : bytes) {
      for (std::size_t at; (at = content.find(root)) != std::string::npos;) content.replace(at, root.size(), "<root>");
    }
    if (run == 0) {
      first = std::move(bytes);
      files = first.size();
    } else {
      std::size_t differing = 0;
      std::string example;
      for (const auto& [name, content] : bytes) {
        const auto it = first.find(name);
        if (it == first.end() || it->second != content) {
          ++differing;
          if (example.empty()) example = name;
        }
      }
      out.require(bytes.size() == first.size(), "same file set");
      out.require(differing == 0, std::to_string(differing) + " files differ, e.g. " + example);
    }
  }
  out.detail << files << " files (dataset, 4 pretrain methods, finetune, evaluate, compare) byte-identical across reruns";
}

template <typename E>
std::string record_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const E& e) {
    if constexpr (std::is_same_v<E, FormatError>) return e.record();
    return e.what();
  } catch (const std::exception& e) {
    return std::string("wrong error: ") + e.what();
  }
  return "<accepted>";
}

void criterion_round_trips(Outcome& out) {
  TempDir dir("acceptance-formats");
  SynthConfig sc;
  sc.count = 30;
  sc.seed = 5;
  const Dataset ds = generate_dataset(sc);
  write_dataset(ds, dir / "data");
  const Dataset back = read_dataset(dir / "data");
  out.require(back.manifest == ds.manifest, "manifest");
  double pixel_err = 0.0;
  bool masks_equal = back.masks.size() == ds.masks.size();
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    const auto a = ds.images[i].pixels(), b = back.images[i].pixels();
    for (std::size_t k = 0; k < a.size(); ++k) pixel_err = std::max(pixel_err, std::abs(double(a[k]) - double(b[k])));
    masks_equal = masks_equal && ds.masks[i] == back.masks[i];
  }
  out.require(pixel_err <= 0.5 / 255.0 + 1e-7, "pixels within 8-bit quantization");
  out.require(masks_equal, "masks");

  Rng rng(8);
  Encoder<float> enc(EncoderConfig{}, rng);
  ParamList<float> params;
  enc.collect("encoder", params);
  const Checkpoint ck{"checkpoint.kind=encoder\n", snapshot(params)};
  write_checkpoint(dir / "e.ckpt", ck);
  const Checkpoint ck2 = read_checkpoint(dir / "e.ckpt");
  bool ck_equal = ck2.config == ck.config && ck2.params.size() == ck.params.size();
  for (std::size_t i = 0; ck_equal && i < ck.params.size(); ++i)
    ck_equal = ck2.params[i].name == ck.params[i].name && ck2.params[i].shape == ck.params[i].shape &&
               std::memcmp(ck2.params[i].values.data(), ck.params[i].values.data(),
                           ck.params[i].values.size() * sizeof(float)) == 0;
  out.require(ck_equal, "checkpoint");
  out.require(encode_checkpoint(ck2) == slurp(dir / "e.ckpt"), "checkpoint bytes");

  const std::string bytes = slurp(dir / "e.ckpt");
  const std::string magic = record_of<FormatError>([&] { decode_checkpoint("XXXX" + bytes.substr(4)); });
  const std::string cut = record_of<FormatError>([&] { decode_checkpoint(bytes.substr(0, bytes.size() - 7)); });
  out.require(magic == "header", "bad magic named '" + magic + "'");
  out.require(cut == ck.params.back().name, "truncation named '" + cut + "'");

  const auto& victim = ds.manifest.records[4];
  const std::string pgm = slurp(dir / ("data/" + victim.image_path));
  spit(dir / ("data/" + victim.image_path), pgm.substr(0, pgm.size() - 10));
  const std::string bad_pgm = record_of<FormatError>([&] { read_dataset(dir / "data"); });
  out.require(bad_pgm == victim.id, "corrupt image named '" + bad_pgm + "'");
  spit(dir / "data/manifest.tsv", "not a manifest\n");
  const std::string bad_manifest = record_of<FormatError>([&] { read_dataset(dir / "data"); });
  out.require(bad_manifest.find("manifest") != std::string::npos, "corrupt manifest named '" + bad_manifest + "'");
  out.detail << ds.images.size() << " samples, max pixel error " << pixel_err << " (8-bit), " << ck.params.size()
             << " checkpoint tensors bit-exact; corrupt files named: '" << magic << "', '" << cut << "', '" << bad_pgm
             << "', '" << bad_manifest << "'";
}

struct Criterion {
  int id;
  const char* title;
  void (*run)(Outcome&);
};

}  // namespace

int main(int argc, char** argv) {
  const Criterion criteria[] = {
      {1, "gradient correctness", criterion_gradients},
      {2, "metric oracle equivalence", criterion_metrics},
      {3, "contrastive loss fidelity", criterion_eq1},
      {4, "hyperparameter defaults", criterion_hyperparameters},
      {5, "pretraining beats scratch on BLEU-1", criterion_table1},
      {6, "lung masking raises lung keyword F1", criterion_table5},
      {7, "memorization oracle", criterion_memorization},
      {8, "determinism", criterion_determinism},
      {9, "format round-trips", criterion_round_trips},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failures = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    Outcome out;
    try {
      c.run(out);
    } catch (const std::exception& e) {
      out.pass = false;
      out.detail << " [exception: " << e.what() << "]";
    }
    failures += out.pass ? 0 : 1;
    std::cout << (out.pass ? "PASS" : "FAIL") << " criterion " << c.id << " (" << c.title << "): " << out.detail.str()
              << std::endl;
    if (c.id == 6 && !compare_summary().table.empty()) std::cout << compare_summary().table;
  }
  return failures == 0 ? 0 : 1;
}
