// cxrc: synthetic data, pretraining, fine-tuning, evaluation and the
// pretraining-method comparison harness.
#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "cxr/metrics.hpp"
#include "cxr/pipeline.hpp"

namespace {

struct Common {
  std::string config;
  std::string out;
  std::string data;
  long long seed = -1;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, Common& c, bool with_data = true) {
  cmd->add_option("--config", c.config, "key=value config file");
  cmd->add_option("--out", c.out, "output directory")->required();
  if (with_data) cmd->add_option("--data", c.data, "dataset root");
  cmd->add_option("--seed", c.seed, "random seed");
  cmd->add_option("--set", c.sets, "override a config key (key=value), repeatable");
}

cxr::KeyValues overrides_of(const Common& c) {
  cxr::KeyValues kv;
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw cxr::ConfigError("--set expects key=value, got '" + s + "'");
    kv.set(s.substr(0, eq), s.substr(eq + 1));
  }
  if (!c.data.empty()) kv.set("data", c.data);
  if (c.seed >= 0) kv.set("seed", std::to_string(c.seed));
  return kv;
}

template <typename T>
std::vector<T> parse_list(const std::string& text, const char* what) {
  std::vector<T> out;
  for (const auto& part : cxr::split(text, ',')) {
    if (part.empty()) throw cxr::ConfigError(std::string("empty entry in ") + what);
    if constexpr (std::is_same_v<T, std::string>) {
      out.push_back(part);
    } else {
      try {
        std::size_t used = 0;
        const long long v = std::stoll(part, &used);
        if (used != part.size() || v < 0) throw std::invalid_argument(part);
        out.push_back(static_cast<T>(v));
      } catch (const std::exception&) {
        throw cxr::ConfigError(std::string("bad ") + what + " entry '" + part + "'");
      }
    }
  }
  return out;
}

int guarded(const std::function<void()>& body) {
  try {
    body();
    return 0;
  } catch (...) {
    std::string message;
    const int code = cxr::exit_code_for_current_exception(&message);
    std::cerr << "cxrc: error: " << message << '\n';
    return code;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contrastive pretraining and report generation workbench for synthetic chest X-rays"};
  app.require_subcommand(1);

  Common synth_opts;
  long long n = -1;
  auto* synth = app.add_subcommand("synth-data", "generate the synthetic dataset");
  synth->add_option("--n", n, "number of samples");
  add_common(synth, synth_opts, false);

  Common pre_opts;
  std::string method;
  auto* pre = app.add_subcommand("pretrain", "pretrain an encoder");
  pre->add_option("--method", method, "scratch, ae, mlc, simclr, simclr_lungseg or moco");
  add_common(pre, pre_opts);

  Common fine_opts;
  std::string encoder_ckpt, decoder;
  auto* fine = app.add_subcommand("finetune", "train encoder and report decoder end to end");
  fine->add_option("--encoder-ckpt", encoder_ckpt, "encoder checkpoint from pretrain (omit for a scratch encoder)");
  fine->add_option("--decoder", decoder, "transformer, lstm or gru");
  add_common(fine, fine_opts);

  std::string model_ckpt, split, eval_out, eval_data;
  auto* eval = app.add_subcommand("evaluate", "generate reports for a split and score them");
  eval->add_option("--model-ckpt", model_ckpt, "model checkpoint from finetune")->required();
  eval->add_option("--split", split, "train, val or test")->default_val("test");
  eval->add_option("--out", eval_out, "output directory")->required();
  eval->add_option("--data", eval_data, "dataset root (default: the one recorded in the checkpoint)");

  Common cmp_opts;
  std::string methods = "scratch,simclr", seeds = "0,1,2", cmp_decoder;
  auto* cmp = app.add_subcommand("compare", "pretrain, finetune and evaluate every (method, seed)");
  cmp->add_option("--methods", methods, "comma-separated pretrain methods")->default_val(methods);
  cmp->add_option("--seeds", seeds, "comma-separated seeds")->default_val(seeds);
  cmp->add_option("--decoder", cmp_decoder, "transformer, lstm or gru");
  add_common(cmp, cmp_opts);

  std::string gen_file, score_out;
  bool self_score = false;
  auto* score = app.add_subcommand("score", "score a generations file (id, generated, reference)");
  score->add_option("--generations", gen_file, "generations.tsv")->required();
  score->add_flag("--self", self_score, "score references against themselves");
  score->add_option("--out", score_out, "write metrics here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (synth->parsed()) {
    return guarded([&] {
      auto kv = overrides_of(synth_opts);
      if (n >= 0) kv.set("synth.count", std::to_string(n));
      const auto cfg = cxr::resolve_config(synth_opts.config, kv);
      cxr::run_synth_data(cfg, synth_opts.out);
    });
  }
  if (pre->parsed()) {
    return guarded([&] {
      auto kv = overrides_of(pre_opts);
      if (!method.empty()) kv.set("pretrain.method", method);
      cxr::run_pretrain(cxr::resolve_config(pre_opts.config, kv), pre_opts.out);
    });
  }
  if (fine->parsed()) {
    return guarded([&] {
      auto kv = overrides_of(fine_opts);
      if (!decoder.empty()) kv.set("finetune.decoder", decoder);
      cxr::run_finetune(cxr::resolve_config(fine_opts.config, kv), encoder_ckpt, fine_opts.out);
    });
  }
  if (eval->parsed()) {
    return guarded([&] {
      cxr::KeyValues kv;
      kv.set("evaluate.split", split);
      cxr::parse_split(split);
      if (!eval_data.empty()) kv.set("data", eval_data);
      const auto report = cxr::run_evaluate(model_ckpt, kv, eval_out);
      std::cout << report.to_text();
    });
  }
  if (cmp->parsed()) {
    return guarded([&] {
      auto kv = overrides_of(cmp_opts);
      if (!cmp_decoder.empty()) kv.set("finetune.decoder", cmp_decoder);
      const auto cfg = cxr::resolve_config(cmp_opts.config, kv);
      const auto result = cxr::run_compare(cfg, parse_list<std::string>(methods, "--methods"),
                                           parse_list<std::uint64_t>(seeds, "--seeds"), cmp_opts.out,
                                           cxr::worker_threads());
      std::cout << result.table << '\n' << result.keywords;
      for (const auto& c : result.cells)
        if (!c.ok) std::cerr << "cxrc: run " << c.method << " seed " << c.seed << " failed: " << c.error << '\n';
      if (!result.ok()) throw cxr::Error("compare: " + std::string("some runs failed"));
    });
  }
  if (score->parsed()) {
    return guarded([&] {
      std::vector<std::string> generated, references;
      std::istringstream in(cxr::read_text_file(gen_file));
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = cxr::split(line, '\t');
        if (f.size() != 3) throw cxr::FormatError(f.empty() ? "?" : f[0], "expected id<TAB>generated<TAB>reference");
        generated.push_back(self_score ? f[2] : f[1]);
        references.push_back(f[2]);
      }
      const auto report = cxr::evaluate_reports(generated, references, {}, {});
      if (score_out.empty()) {
        std::cout << report.to_text();
      } else {
        cxr::write_text_file(score_out, report.to_text());
      }
    });
  }
  return 2;
}
