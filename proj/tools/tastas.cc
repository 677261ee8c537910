// Copyright 2026 The tastas Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// tastas: synth | train | eval | report.
// Exit status: 0 success, 1 usage error, 2 runtime failure.

#include <Eigen/Core>
#include <openssl/crypto.h>
#include <openssl/opensslv.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tastas/checkpoint.hpp"
#include "tastas/config.hpp"
#include "tastas/evaluate.hpp"
#include "tastas/mixgen.hpp"
#include "tastas/trainer.hpp"

namespace fs = std::filesystem;
using namespace tastas;

namespace {

constexpr const char *kVersion = "0.1.0";
constexpr int kUsage = 1, kRuntime = 2;

// Thrown for bad flag values found after parsing.
struct UsageError : Error {
  using Error::Error;
};

std::string g_command_line;

void WriteText(const std::string &path, const std::string &text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path);
  os << text;
  if (!os) throw IoError("write failed: " + path);
}

// Deterministic provenance record: no timestamps, so reruns are byte-equal.
void WriteProvenance(const std::string &dir, const std::string &command, uint64_t seed,
                     const std::vector<std::string> &digest_files, nlohmann::ordered_json extra = {}) {
  nlohmann::ordered_json j;
  j["tool"] = "tastas";
  j["version"] = kVersion;
  j["command"] = command;
  j["command_line"] = g_command_line;
  j["seed"] = seed;
  j["libraries"] = {
      {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                    std::to_string(EIGEN_MINOR_VERSION)},
      {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." + std::to_string(NLOHMANN_JSON_VERSION_MINOR) +
                            "." + std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
      {"openssl", OPENSSL_VERSION_TEXT},
      {"cli11", CLI11_VERSION}};
  nlohmann::ordered_json digests = nlohmann::ordered_json::object();
  for (const auto &f : digest_files) digests[fs::path(f).filename().string()] = FileSha256(f);
  j["digests"] = digests;
  if (!extra.is_null())
    for (const auto &[k, v] : extra.items()) j[k] = v;
  WriteText(dir + "/provenance.json", j.dump(2) + "\n");
}

// ---- synth

struct SynthArgs {
  bool toy = false;
  std::string corpus_dir;
  size_t speakers = 8, utts = 10, S = 2, n_train = 0, n_valid = 0, n_test = 0;
  double duration = 1.0;
  std::vector<double> snr{0.0, 5.0};
  uint64_t seed = 0;
  std::string out;
  bool no_audio = false;
};

void AddSynth(CLI::App &app, SynthArgs &a) {
  auto *sub = app.add_subcommand("synth", "build a corpus split and write manifests plus WAV trees");
  auto *toy = sub->add_flag("--toy", a.toy, "use the synthetic harmonic-tone corpus");
  auto *corpus = sub->add_option("--corpus", a.corpus_dir, "corpus directory: <dir>/<speaker>/*.wav")
                     ->check(CLI::ExistingDirectory);
  toy->excludes(corpus);
  sub->add_option("--speakers", a.speakers, "toy corpus speakers")->check(CLI::Range(2, 100000));
  sub->add_option("--utts", a.utts, "toy utterances per speaker")->check(CLI::Range(2, 100000));
  sub->add_option("--duration", a.duration, "toy utterance length in seconds")->check(CLI::PositiveNumber);
  sub->add_option("--s", a.S, "sources per mixture")->required()->check(CLI::Range(2, 64));
  sub->add_option("--train", a.n_train, "training mixtures")->required();
  sub->add_option("--valid", a.n_valid, "validation mixtures")->required();
  sub->add_option("--test", a.n_test, "test mixtures")->required();
  sub->add_option("--snr", a.snr, "SNR range in dB (low high)")->expected(2);
  sub->add_option("--seed", a.seed, "random seed");
  sub->add_option("--out", a.out, "output directory")->required();
  sub->add_flag("--no-audio", a.no_audio, "write manifests only");
}

int RunSynth(const SynthArgs &a) {
  if (!a.toy && a.corpus_dir.empty()) throw UsageError("synth needs --toy or --corpus");
  if (a.snr[0] > a.snr[1]) throw UsageError("--snr low must not exceed high");
  Corpus corpus;
  if (a.toy) {
    ToyCorpusOptions o;
    o.n_speakers = a.speakers;
    o.utt_per_speaker = a.utts;
    o.duration_s = a.duration;
    o.seed = a.seed;
    corpus = MakeToyCorpus(o).corpus;
  } else {
    corpus = LoadCorpusDir(a.corpus_dir);
  }
  SplitOptions so;
  so.num_sources = a.S;
  so.n_train = a.n_train;
  so.n_valid = a.n_valid;
  so.n_test = a.n_test;
  so.snr_low_db = a.snr[0];
  so.snr_high_db = a.snr[1];
  so.seed = a.seed;
  SplitManifests m;
  try {
    m = BuildSplits(corpus, so);
  } catch (const InvalidArgument &e) {
    throw UsageError(e.what());
  }
  fs::create_directories(a.out);
  std::vector<std::string> files;
  size_t clipped = 0;
  for (const Manifest *man : {&m.train, &m.valid, &m.test}) {
    const std::string path = a.out + "/" + SplitName(man->split) + ".jsonl";
    WriteManifest(path, *man);
    files.push_back(path);
    if (!a.no_audio) clipped += WriteSplitAudio(a.out, *man, corpus);
  }
  if (clipped) std::cerr << "warning: " << clipped << " samples clipped while writing WAV files\n";
  WriteProvenance(a.out, "synth", a.seed, files, {{"corpus", corpus.id}});
  std::cout << "synth: " << m.train.records.size() << " train, " << m.valid.records.size() << " valid, "
            << m.test.records.size() << " test mixtures of " << a.S << " sources -> " << a.out << "\n";
  return 0;
}

// ---- train

struct TrainArgs {
  std::string config_file, spec, data, out;
  bool naive = false, remix = false, resume = false, quiet = false;
  std::vector<std::string> sets;
  std::map<std::string, std::string> direct;  // flag name -> value
};

void AddTrain(CLI::App &app, TrainArgs &a) {
  auto *sub = app.add_subcommand("train", "multi-step training (or naive joint training with --naive)");
  sub->add_option("--config", a.config_file, "flat key = value config file");
  sub->add_option("--spec", a.spec, "model, e.g. \"TasTas(I, 2, 2)\"");
  sub->add_option("--data", a.data, "directory holding train.jsonl and valid.jsonl");
  sub->add_option("--out", a.out, "output directory for checkpoints and traces");
  sub->add_flag("--naive", a.naive, "train every component jointly from scratch");
  sub->add_flag("--remix", a.remix, "online remixing of each training batch");
  sub->add_flag("--resume", a.resume, "continue after the last completed step");
  sub->add_flag("--quiet", a.quiet, "no per-epoch log on stderr");
  sub->add_option("--set", a.sets, "override any config key: key=value (repeatable)");
  for (const char *key : {"seed", "max_epochs", "patience", "lr", "batch_size", "segment", "lambda_id"}) {
    std::string flag = std::string("--") + key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    sub->add_option_function<std::string>(
        flag, [&a, key](const std::string &v) { a.direct[key] = v; }, std::string("config key ") + key);
  }
}

int RunTrain(const TrainArgs &a) {
  std::map<std::string, std::string> flags = a.direct;
  for (const auto &s : a.sets) {
    auto eq = s.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + s + "'");
    flags[s.substr(0, eq)] = s.substr(eq + 1);
  }
  if (!a.spec.empty()) flags["model_spec"] = a.spec;
  if (!a.data.empty()) flags["data_dir"] = a.data;
  if (!a.out.empty()) flags["out_dir"] = a.out;
  if (a.remix) flags["online_remix"] = "true";
  TrainConfig cfg;
  try {
    cfg = ResolveConfig(a.config_file, flags);
  } catch (const InvalidArgument &e) {
    throw UsageError(e.what());
  }
  if (cfg.data_dir.empty()) throw UsageError("train needs a data directory (--data or data_dir)");
  if (cfg.out_dir.empty()) throw UsageError("train needs an output directory (--out or out_dir)");

  TrainHooks hooks;
  if (!a.quiet) hooks.log = [](const std::string &s) { std::cerr << s << "\n"; };
  fs::create_directories(cfg.out_dir);
  WriteText(cfg.out_dir + "/config.txt", ConfigToText(cfg));
  const std::vector<std::string> manifests{cfg.data_dir + "/train.jsonl", cfg.data_dir + "/valid.jsonl"};
  for (const auto &m : manifests)
    if (!fs::exists(m)) throw MissingFileError("missing manifest: " + m);
  if (a.naive) {
    auto [ck, r] = NaiveJointTrain(cfg, hooks);
    WriteProvenance(cfg.out_dir, "train --naive", cfg.seed, manifests, {{"spec", ck.model.spec.Text()}});
    std::cout << "train: naive " << ck.model.spec.Text() << ", " << r.trace.size() << " epochs, best valid loss "
              << FormatLoss(r.best_valid_loss) << " -> " << cfg.out_dir << "/naive.ckpt\n";
    return 0;
  }
  MultistepResult r = RunMultistep(cfg, a.resume, hooks);
  WriteProvenance(cfg.out_dir, "train", cfg.seed, manifests, {{"spec", r.final.model.spec.Text()}});
  std::cout << "train: " << r.final.model.spec.Text() << ", steps";
  for (const auto &s : r.steps) std::cout << " " << s.step << "(" << FormatLoss(s.best_valid_loss) << ")";
  std::cout << " -> " << cfg.out_dir << "/model.ckpt\n";
  return 0;
}

// ---- eval

struct EvalArgs {
  std::string model, manifest, out;
  bool oracle_irm = false, self_test = false;
};

void AddEval(CLI::App &app, EvalArgs &a) {
  auto *sub = app.add_subcommand("eval", "score a checkpoint on a manifest (SI-SDRi)");
  sub->add_option("--model", a.model, "checkpoint bundle (model.ckpt)");
  sub->add_option("--manifest", a.manifest, "test manifest (.jsonl)")->required();
  sub->add_option("--out", a.out, "output directory")->required();
  sub->add_flag("--oracle-irm", a.oracle_irm, "add the ideal-ratio-mask upper bound row");
  sub->add_flag("--self-test", a.self_test, "score the references themselves instead of a model");
}

int RunEval(const EvalArgs &a) {
  if (a.model.empty() && !a.self_test) throw UsageError("eval needs --model (or --self-test)");
  Manifest test = ReadManifest(a.manifest);
  Corpus corpus = ResolveCorpus(test.corpus_id);
  std::optional<Checkpoint> ck;
  if (!a.self_test) ck = LoadCheckpoint(a.model);
  EvalOptions opts;
  opts.oracle_irm = a.oracle_irm;
  opts.self_test = a.self_test;
  EvalReport rep = EvaluateCheckpoint(ck ? &ck->model : nullptr, test, corpus, opts);
  fs::create_directories(a.out);
  WriteText(a.out + "/report.jsonl", ReportToJsonl(rep));
  WriteText(a.out + "/summary.json", SummaryToJson(rep).dump(2) + "\n");
  std::vector<std::string> inputs{a.manifest};
  if (ck) inputs.push_back(a.model);
  WriteProvenance(a.out, "eval", test.seed, inputs);
  std::cout << "eval: " << rep.method << " mean " << kMetricLabel << " " << FormatLoss(rep.mean_sdri) << " dB over "
            << rep.rows.size() << " mixtures";
  if (rep.irm_mean_sdri) std::cout << ", IRM " << FormatLoss(*rep.irm_mean_sdri) << " dB";
  std::cout << " -> " << a.out << "\n";
  return 0;
}

// ---- report

struct ReportArgs {
  std::vector<std::string> summaries;
  std::string out;
  bool json = false;
};

void AddReport(CLI::App &app, ReportArgs &a) {
  auto *sub = app.add_subcommand("report", "method-vs-SDRi table from eval summaries");
  sub->add_option("summaries", a.summaries, "summary.json files")->required()->check(CLI::ExistingFile);
  sub->add_option("--out", a.out, "also write report.txt and report.json here");
  sub->add_flag("--json", a.json, "print JSON instead of text");
}

int RunReport(const ReportArgs &a) {
  std::vector<nlohmann::json> in;
  for (const auto &f : a.summaries) {
    std::ifstream is(f);
    try {
      in.push_back(nlohmann::json::parse(is));
    } catch (const nlohmann::json::exception &e) {
      throw FormatError("malformed summary " + f + ": " + e.what());
    }
  }
  auto rows = BuildReportTable(in);
  const std::string text = ReportTableText(rows), json = ReportTableJson(rows).dump(2) + "\n";
  std::cout << (a.json ? json : text);
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    WriteText(a.out + "/report.txt", text);
    WriteText(a.out + "/report.json", json);
    WriteProvenance(a.out, "report", 0, a.summaries);
  }
  return 0;
}

}  // namespace

int main(int argc, char **argv) {
  for (int i = 0; i < argc; ++i) g_command_line += (i ? " " : "") + std::string(argv[i]);
  CLI::App app{"tastas: multi-speaker separation toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  SynthArgs synth;
  TrainArgs train;
  EvalArgs eval;
  ReportArgs report;
  AddSynth(app, synth);
  AddTrain(app, train);
  AddEval(app, eval);
  AddReport(app, report);
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp &e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    app.exit(e);
    return kUsage;
  }
  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    if (cmd == "synth") return RunSynth(synth);
    if (cmd == "train") return RunTrain(train);
    if (cmd == "eval") return RunEval(eval);
    return RunReport(report);
  } catch (const UsageError &e) {
    std::cerr << "tastas " << cmd << ": " << e.what() << "\nrun 'tastas " << cmd << " --help' for usage\n";
    return kUsage;
  } catch (const std::exception &e) {
    std::cerr << "tastas " << cmd << ": " << e.what() << "\n";
    return kRuntime;
  }
}
