#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>

#include "cxr/checkpoint.hpp"
#include "cxr/config.hpp"
#include "test_util.hpp"

using namespace cxr;
using namespace cxr::test;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

Run cxrc(const TempDir& dir, const std::string& args) {
  const std::string out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd = std::string(CXRC_PATH) + " " + args + " >" + out + " 2>" + err;
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

bool exists(const std::string& path) { return std::filesystem::exists(path); }

// Small schedules so every command finishes in seconds.
const char* kFastConfig =
    "pretrain.epochs=1\n"
    "pretrain.batch_size=8\n"
    "finetune.epochs=1\n"
    "finetune.batch_size=8\n"
    "decoder.layers=1\n";

struct Workspace {
  TempDir dir{"cli"};
  std::string config = dir / "fast.cfg";
  std::string data = dir / "data";

  Workspace() {
    spit(config, kFastConfig);
    const Run r = cxrc(dir, "synth-data --n 20 --seed 4 --out " + data);
    REQUIRE(r.code == 0);
  }
  std::string common() const { return "--config " + config + " --data " + data; }
};

std::size_t count_lines(const std::string& text) {
  std::size_t n = 0;
  for (char c : text) n += c == '\n';
  return n;
}

}  // namespace

TEST_CASE("synth-data") {
  TempDir dir("cli-synth");
  const Run ok = cxrc(dir, "synth-data --n 10 --seed 1 --out " + (dir / "a"));
  REQUIRE(ok.code == 0);
  const std::string manifest = slurp(dir / "a/manifest.tsv");
  std::size_t train = 0, val = 0, test = 0;
  std::istringstream lines(manifest);
  std::string line;
  std::getline(lines, line);
  while (std::getline(lines, line)) {
    train += line.find("\ttrain\t") != std::string::npos;
    val += line.find("\tval\t") != std::string::npos;
    test += line.find("\ttest\t") != std::string::npos;
  }
  CHECK(train == 7);
  CHECK(val == 1);
  CHECK(test == 2);
  CHECK(exists(dir / "a/config.resolved"));
  CHECK(slurp(dir / "a/seed") == "1\n");

  REQUIRE(cxrc(dir, "synth-data --n 10 --seed 1 --out " + (dir / "b")).code == 0);
  CHECK(slurp(dir / "b/manifest.tsv") == manifest);

  CHECK(cxrc(dir, "synth-data --n 0 --out " + (dir / "c")).code == 2);
  CHECK(cxrc(dir, "synth-data --n 5 --set synth.ratio=1 --out " + (dir / "c")).code == 2);
  CHECK(cxrc(dir, "synth-data --n 5").code == 2);
  CHECK(cxrc(dir, "frobnicate").code == 2);

  spit(dir / "file", "x");
  const Run bad = cxrc(dir, "synth-data --n 5 --out " + (dir / "file/sub"));
  CHECK(bad.code == 3);
  CHECK(bad.err.find("file/sub") != std::string::npos);
}

TEST_CASE("pretrain and finetune") {
  Workspace ws;
  const TempDir& dir = ws.dir;
  CHECK(cxrc(dir, "pretrain --method byol " + ws.common() + " --out " + (dir / "x")).code == 2);
  CHECK(cxrc(dir, "pretrain --method simclr --config " + (dir / "missing.cfg") + " --data " + ws.data + " --out " +
                      (dir / "x"))
            .code == 3);

  REQUIRE(cxrc(dir, "pretrain --method scratch " + ws.common() + " --out " + (dir / "scratch")).code == 0);
  const Run simclr = cxrc(dir, "pretrain --method simclr_lungseg " + ws.common() + " --out " + (dir / "lung"));
  REQUIRE(simclr.code == 0);
  CHECK(exists(dir / "lung/encoder.ckpt"));
  CHECK(exists(dir / "lung/loss.tsv"));
  const KeyValues resolved = KeyValues::parse(slurp(dir / "lung/config.resolved"));
  CHECK(resolved.get("pretrain.method") == "simclr_lungseg");
  CHECK(resolved.get("augment.mask_prob") == "0.5");

  for (const char* decoder : {"transformer", "lstm", "gru"}) {
    INFO(decoder);
    const Run r = cxrc(dir, std::string("finetune --decoder ") + decoder + " --encoder-ckpt " + (dir / "lung/encoder.ckpt") +
                                " " + ws.common() + " --out " + (dir / ("ft_" + std::string(decoder))));
    CHECK(r.code == 0);
    CHECK(exists(dir / ("ft_" + std::string(decoder)) + "/model.ckpt"));
    CHECK(exists(dir / ("ft_" + std::string(decoder)) + "/curve.tsv"));
  }
  // Fixed seed reproduces the checkpoint.
  REQUIRE(cxrc(dir, "finetune --decoder gru --encoder-ckpt " + (dir / "lung/encoder.ckpt") + " " + ws.common() +
                        " --out " + (dir / "ft_gru2"))
              .code == 0);
  CHECK(slurp(dir / "ft_gru/model.ckpt") == slurp(dir / "ft_gru2/model.ckpt"));
  // Scratch encoder when no checkpoint is given.
  CHECK(cxrc(dir, "finetune " + ws.common() + " --out " + (dir / "ft_none")).code == 0);

  // A checkpoint with a different architecture is refused with a diff.
  const Run arch = cxrc(dir, "finetune --encoder-ckpt " + (dir / "lung/encoder.ckpt") + " " + ws.common() +
                                 " --set encoder.stem_channels=8 --out " + (dir / "y"));
  CHECK(arch.code == 2);
  CHECK(arch.err.find("encoder.stem_channels") != std::string::npos);
  const Run dec = cxrc(dir, "finetune --decoder lstm --encoder-ckpt " + (dir / "ft_transformer/model.ckpt") + " " +
                                ws.common() + " --out " + (dir / "y"));
  CHECK(dec.code == 2);
  CHECK(dec.err.find("finetune.decoder") != std::string::npos);
  CHECK(dec.err.find("transformer") != std::string::npos);

  // Corrupt checkpoint: the message names the damaged record.
  const Checkpoint good = read_checkpoint(dir / "lung/encoder.ckpt");
  std::string bytes = slurp(dir / "lung/encoder.ckpt");
  bytes.resize(bytes.size() - 5);
  spit(dir / "cut.ckpt", bytes);
  const Run corrupt =
      cxrc(dir, "finetune --encoder-ckpt " + (dir / "cut.ckpt") + " " + ws.common() + " --out " + (dir / "z"));
  CHECK(corrupt.code == 3);
  CHECK(corrupt.err.find(good.params.back().name) != std::string::npos);
  spit(dir / "junk.ckpt", "not a checkpoint");
  const Run junk = cxrc(dir, "finetune --encoder-ckpt " + (dir / "junk.ckpt") + " " + ws.common() + " --out " + (dir / "z"));
  CHECK(junk.code == 3);
  CHECK(junk.err.find("header") != std::string::npos);
  CHECK(cxrc(dir, "finetune --encoder-ckpt " + (dir / "none.ckpt") + " " + ws.common() + " --out " + (dir / "z")).code ==
        3);
}

TEST_CASE("evaluate and score") {
  Workspace ws;
  const TempDir& dir = ws.dir;
  REQUIRE(cxrc(dir, "finetune " + ws.common() + " --out " + (dir / "ft")).code == 0);
  const Run a = cxrc(dir, "evaluate --model-ckpt " + (dir / "ft/model.ckpt") + " --out " + (dir / "ev1"));
  REQUIRE(a.code == 0);
  const Run b = cxrc(dir, "evaluate --model-ckpt " + (dir / "ft/model.ckpt") + " --out " + (dir / "ev2"));
  REQUIRE(b.code == 0);
  CHECK(a.out == b.out);
  const std::string metrics = slurp(dir / "ev1/metrics.tsv");
  CHECK(metrics == slurp(dir / "ev2/metrics.tsv"));
  CHECK(slurp(dir / "ev1/generations.tsv") == slurp(dir / "ev2/generations.tsv"));
  CHECK(count_lines(slurp(dir / "ev1/generations.tsv")) == 4);
  for (const char* key : {"bleu_1", "bleu_4", "meteor", "rouge_l", "\nvolume\t", "\neffusion\t",
                          "\npneumothorax\t", "\ncalcification\t"})
    CHECK(metrics.find(key) != std::string::npos);
  CHECK(exists(dir / "ev1/config.resolved"));
  CHECK(exists(dir / "ev1/seed"));

  const Run self = cxrc(dir, "score --self --generations " + (dir / "ev1/generations.tsv"));
  CHECK(self.code == 0);
  CHECK(self.out.find("bleu_1\t1.000000") != std::string::npos);
  CHECK(self.out.find("rouge_l\t1.000000") != std::string::npos);

  CHECK(cxrc(dir, "evaluate --model-ckpt " + (dir / "ft/model.ckpt") + " --split dev --out " + (dir / "x")).code == 2);
  CHECK(cxrc(dir, "evaluate --model-ckpt " + (dir / "missing.ckpt") + " --out " + (dir / "x")).code == 3);

  // A dataset without a test split.
  REQUIRE(cxrc(dir, "synth-data --n 6 --set synth.ratios=1,0,0 --out " + (dir / "trainonly")).code == 0);
  const Run empty = cxrc(dir, "evaluate --model-ckpt " + (dir / "ft/model.ckpt") + " --data " + (dir / "trainonly") +
                                  " --out " + (dir / "x"));
  CHECK(empty.code == 2);
  CHECK(empty.err.find("empty") != std::string::npos);
}

TEST_CASE("compare") {
  Workspace ws;
  const TempDir& dir = ws.dir;
  const std::string args = "compare --methods scratch,simclr --seeds 0,1,2 " + ws.common();
  const Run a = cxrc(dir, args + " --out " + (dir / "c1"));
  REQUIRE(a.code == 0);
  const std::string table = slurp(dir / "c1/table.tsv");
  CHECK(table.rfind("method\tB-1\tB-2\tB-3\tB-4\tM\tR-L\n", 0) == 0);
  CHECK(count_lines(table) == 3);
  CHECK(table.find("\nscratch\t") != std::string::npos);
  CHECK(table.find("\nsimclr\t") != std::string::npos);
  CHECK(count_lines(slurp(dir / "c1/runs.tsv")) == 7);
  for (const char* m : {"scratch", "simclr"})
    for (int s = 0; s < 3; ++s)
      CHECK(exists(dir / ("c1/" + std::string(m) + "/seed" + std::to_string(s))));

  REQUIRE(cxrc(dir, args + " --out " + (dir / "c2")).code == 0);
  CHECK(slurp(dir / "c2/table.tsv") == table);
  CHECK(slurp(dir / "c2/keywords.tsv") == slurp(dir / "c1/keywords.tsv"));

  CHECK(cxrc(dir, "compare --methods scratch,byol --seeds 0 " + ws.common() + " --out " + (dir / "c3")).code == 2);
  CHECK(cxrc(dir, "compare --methods scratch --seeds x " + ws.common() + " --out " + (dir / "c3")).code == 2);

  // A diverging pretraining run fails its cells; the others are kept.
  const Run partial = cxrc(dir, "compare --methods scratch,simclr --seeds 0 " + ws.common() +
                                    " --set pretrain.lr_max=1e30 --set pretrain.lr_min=1e30 --out " + (dir / "c4"));
  CHECK(partial.code != 0);
  const std::string runs = slurp(dir / "c4/runs.tsv");
  CHECK(runs.find("scratch\t0\tok") != std::string::npos);
  CHECK(runs.find("simclr\t0\tfailed") != std::string::npos);
  CHECK(exists(dir / "c4/scratch/seed0/evaluate/metrics.tsv"));
}
