#pragma once

#include <string>
#include <vector>

#include "cxr/config.hpp"
#include "cxr/metrics.hpp"
#include "cxr/models.hpp"
#include "cxr/pretrain.hpp"
#include "cxr/report.hpp"
#include "cxr/synth.hpp"

namespace cxr {

// Every recognised key with its default value.
KeyValues default_config();
// Defaults, then the config file (if any), then overrides. Unknown keys are
// rejected and the result is validated.
KeyValues resolve_config(const std::string& config_path, const KeyValues& overrides);
void validate_config(const KeyValues& cfg);

EncoderConfig encoder_config_from(const KeyValues& cfg);
DecoderConfig decoder_config_from(const KeyValues& cfg, std::size_t vocab_size);
PretrainConfig pretrain_config_from(const KeyValues& cfg);
FinetuneConfig finetune_config_from(const KeyValues& cfg);
SynthConfig synth_config_from(const KeyValues& cfg);

// Keys whose values must agree between an encoder checkpoint and the run
// that loads it.
std::vector<std::string> architecture_keys();

// Loads only the images of the listed splits; other records keep empty images.
Dataset read_dataset_splits(const std::string& root, const std::vector<Split>& splits);

// Writes config.resolved and seed into out_dir (created if needed).
void write_run_metadata(const std::string& out_dir, const KeyValues& cfg);
void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

void run_synth_data(const KeyValues& cfg, const std::string& out_dir);
void run_pretrain(const KeyValues& cfg, const std::string& out_dir);
// encoder_ckpt may be empty (scratch encoder from the seed).
void run_finetune(const KeyValues& cfg, const std::string& encoder_ckpt, const std::string& out_dir);
// Evaluates a model checkpoint on one split. cfg overrides may set data and
// evaluate.split; everything else comes from the checkpoint.
MetricReport run_evaluate(const std::string& model_ckpt, const KeyValues& overrides, const std::string& out_dir);

struct CompareCell {
  std::string method;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  int exit_code = 0;
  MetricReport metrics;
};

struct CompareResult {
  std::vector<CompareCell> cells;
  std::string table;     // method B-1 B-2 B-3 B-4 M R-L, seed-averaged
  std::string keywords;  // per-method seed-averaged keyword F1
  bool ok() const;
  int exit_code() const;
};

// pretrain -> finetune -> evaluate(test) for every (method, seed), each in
// out_dir/<method>/seed<k>/. Cells run on up to `workers` threads.
CompareResult run_compare(const KeyValues& cfg, const std::vector<std::string>& methods,
                          const std::vector<std::uint64_t>& seeds, const std::string& out_dir, std::size_t workers);

// Worker cap from CXRC_THREADS (default: hardware concurrency, at least 1).
std::size_t worker_threads();

// Exit code for the exception currently being handled: 2 config/usage,
// 3 I/O or corrupt file, 4 numerical failure, 1 otherwise.
int exit_code_for_current_exception(std::string* message);

}  // namespace cxr
