// rlvr-lab: command-line entry point for every stage of the toy pipeline.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "rlvr/error.hpp"
#include "rlvr/eval.hpp"
#include "rlvr/llm_client.hpp"
#include "rlvr/merge.hpp"
#include "rlvr/pipeline.hpp"
#include "rlvr/rl_trainer.hpp"
#include "rlvr/sft.hpp"
#include "rlvr/tasks.hpp"
#include "rlvr/verifier.hpp"

namespace {

using namespace rlvr;

enum Exit { kOk = 0, kFailure = 1, kIncompatible = 2, kInvalidSpec = 3, kPlan = 4, kStage = 5 };

nlohmann::json readJson(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path, "cannot open");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidSpec(path + ": " + e.what());
  }
}

void writeFile(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path, "cannot open for writing");
  out << text;
}

std::unique_ptr<TextClient> makeClient(const std::string& configFile, const std::string& prefix) {
  auto cfg = loadEndpointConfig(configFile.empty() ? std::nullopt : std::optional<std::string>(configFile), prefix);
  if (cfg.endpoint.empty())
    throw InvalidSpec("no endpoint configured; set " + prefix + "_ENDPOINT or pass a client config file");
  return std::make_unique<HttpTextClient>(std::move(cfg));
}

OptionList parseOptions(const std::vector<std::string>& raw) {
  OptionList out;
  for (const auto& o : raw) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw InvalidSpec("option must look like LABEL=text: " + o);
    out.push_back({o.substr(0, eq), o.substr(eq + 1)});
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Toy RLVR laboratory: merging, curation, SFT, RLVR and evaluation"};
  app.require_subcommand(1);

  // merge
  auto* merge = app.add_subcommand("merge", "Linear merge of checkpoints");
  std::string mergeSpecPath, mergeOut;
  merge->add_option("--spec", mergeSpecPath, "Merge spec JSON")->required()->check(CLI::ExistingFile);
  merge->add_option("--out", mergeOut, "Output path (overrides the spec)");

  // verify
  auto* verify = app.add_subcommand("verify", "Match a predicted answer against the ground truth");
  std::string pred, truth, judgeConfig;
  std::vector<std::string> options;
  bool useJudge = false;
  verify->add_option("--pred", pred)->required();
  verify->add_option("--truth", truth)->required();
  verify->add_option("--options", options, "Options as LABEL=text");
  verify->add_flag("--judge", useJudge, "Consult the judge endpoint (RLVR_JUDGE_* variables)");
  verify->add_option("--judge-config", judgeConfig, "Judge endpoint config JSON");

  // curate
  auto* curate = app.add_subcommand("curate", "Question curation");
  curate->require_subcommand(1);
  auto* ingest = curate->add_subcommand("ingest", "Filter cleaned question records");
  std::string ingestIn, ingestOut, ingestReport;
  ingest->add_option("--in", ingestIn)->required()->check(CLI::ExistingFile);
  ingest->add_option("--out", ingestOut)->required();
  ingest->add_option("--report", ingestReport, "Rejection report JSON");
  auto* gen = curate->add_subcommand("gen", "Generate synthetic arithmetic questions");
  std::string genSpec, genOut;
  std::size_t genCount = 100;
  gen->add_option("--spec", genSpec, "SyntheticTaskSpec JSON")->check(CLI::ExistingFile);
  gen->add_option("--count", genCount)->check(CLI::PositiveNumber);
  gen->add_option("--out", genOut)->required();
  auto* clean = curate->add_subcommand("clean", "Clean raw questions through the cleaner endpoint");
  std::string cleanIn, cleanOut, cleanQuarantine, cleanerConfig;
  clean->add_option("--in", cleanIn, "JSONL of {id, text, answer}")->required()->check(CLI::ExistingFile);
  clean->add_option("--out", cleanOut)->required();
  clean->add_option("--quarantine", cleanQuarantine, "JSONL of failures");
  clean->add_option("--cleaner-config", cleanerConfig, "Cleaner endpoint config JSON (RLVR_CLEANER_* variables)");

  // sft
  auto* sft = app.add_subcommand("sft", "Rejection sampling and supervised fine-tuning");
  sft->require_subcommand(1);
  auto* sftSample = sft->add_subcommand("sample", "Best-of-n rejection sampling");
  std::string ssCkpt, ssQuestions, ssOutDir;
  RejectionConfig rc;
  sftSample->add_option("--checkpoint", ssCkpt)->required()->check(CLI::ExistingFile);
  sftSample->add_option("--questions", ssQuestions)->required()->check(CLI::ExistingFile);
  sftSample->add_option("--out-dir", ssOutDir)->required();
  sftSample->add_option("--n", rc.n)->check(CLI::PositiveNumber);
  sftSample->add_option("--temperature", rc.temperature);
  sftSample->add_option("--seed", rc.seed);
  auto* sftTrain = sft->add_subcommand("train", "Curriculum SFT on retained samples");
  std::string stCkpt, stBuckets, stConfig, stOut;
  sftTrain->add_option("--checkpoint", stCkpt)->required()->check(CLI::ExistingFile);
  sftTrain->add_option("--buckets", stBuckets)->required()->check(CLI::ExistingFile);
  sftTrain->add_option("--config", stConfig, "SftConfig JSON")->check(CLI::ExistingFile);
  sftTrain->add_option("--out", stOut)->required();

  // rlvr
  auto* rl = app.add_subcommand("rlvr", "Reinforcement learning with verifiable rewards");
  rl->require_subcommand(1);
  auto* rlTrain = rl->add_subcommand("train", "Group-relative policy optimization");
  std::string rlConfig, rlCkpt, rlPool, rlOut, rlMetricsDir;
  rlTrain->add_option("--config", rlConfig, "RlvrConfig JSON")->required()->check(CLI::ExistingFile);
  rlTrain->add_option("--checkpoint", rlCkpt)->required()->check(CLI::ExistingFile);
  rlTrain->add_option("--pool", rlPool, "Question JSONL")->required()->check(CLI::ExistingFile);
  rlTrain->add_option("--out", rlOut)->required();
  rlTrain->add_option("--metrics-dir", rlMetricsDir, "Directory for metrics and periodic checkpoints");

  // eval
  auto* ev = app.add_subcommand("eval", "Greedy pass@1 evaluation");
  std::string evCkpt, evDataset, evOut, evCsv, evJudgeConfig;
  bool evJudge = false;
  ev->add_option("--checkpoint", evCkpt)->required()->check(CLI::ExistingFile);
  ev->add_option("--dataset", evDataset)->required()->check(CLI::ExistingFile);
  ev->add_option("--out", evOut, "Report JSON")->required();
  ev->add_option("--csv", evCsv, "Also write the CSV report here");
  ev->add_flag("--judge", evJudge);
  ev->add_option("--judge-config", evJudgeConfig);

  // pipeline
  auto* pipe = app.add_subcommand("pipeline", "Run pipeline stages from one config");
  std::string pipeConfig, pipeWorkDir, pipeJudgeConfig;
  std::vector<std::string> pipeStages;
  pipe->add_option("--config", pipeConfig)->required()->check(CLI::ExistingFile);
  pipe->add_option("--work-dir", pipeWorkDir, "Overrides paths.work_dir");
  pipe->add_option("--stages", pipeStages, "Subset of merge,curate,sft-sample,sft-train,rlvr,eval")->delimiter(',');
  pipe->add_option("--judge-config", pipeJudgeConfig);

  // bootstrap
  auto* boot = app.add_subcommand("bootstrap", "Create sibling parent checkpoints for merging");
  std::string bootConfig, bootOutDir;
  boot->add_option("--config", bootConfig, "Pipeline config JSON")->required()->check(CLI::ExistingFile);
  boot->add_option("--out-dir", bootOutDir)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*merge) {
      MergeSpec spec = loadMergeSpec(mergeSpecPath);
      if (!mergeOut.empty()) spec.outputPath = mergeOut;
      if (spec.outputPath.empty()) throw InvalidSpec("merge spec has no output path");
      const Checkpoint out = mergeLinear(spec);
      writeCheckpoint(out, spec.outputPath);
      fmt::print("{}\n", nlohmann::ordered_json{{"output", spec.outputPath.string()},
                                                {"tensor_digest", tensorDigest(out)}}.dump());
    } else if (*verify) {
      std::unique_ptr<TextClient> judge;
      if (useJudge) judge = makeClient(judgeConfig, "RLVR_JUDGE");
      const MatchVerdict v = matchAnswers(pred, truth, parseOptions(options), judge.get());
      fmt::print("{}\n", nlohmann::ordered_json{{"matched", v.matched}, {"stage", toString(v.stage)},
                                                {"detail", v.detail}}.dump());
    } else if (*ingest) {
      const IngestResult r = ingestQuestions(std::filesystem::path(ingestIn));
      writeQuestions(ingestOut, r.records);
      const std::string report = toJson(r.report).dump(2);
      if (!ingestReport.empty()) writeFile(ingestReport, report + "\n");
      fmt::print("{}\n", report);
    } else if (*gen) {
      const SyntheticTaskSpec spec = genSpec.empty() ? SyntheticTaskSpec{} : syntheticSpecFromJson(readJson(genSpec));
      writeQuestions(genOut, generateTasks(spec, genCount));
    } else if (*clean) {
      auto client = makeClient(cleanerConfig, "RLVR_CLEANER");
      PromptedCleaner cleaner(*client);
      std::vector<RawQuestion> raws;
      std::ifstream in(cleanIn);
      for (std::string line; std::getline(in, line);) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        raws.push_back({j.at("id").get<std::string>(), j.at("text").get<std::string>(),
                        j.at("answer").get<std::string>()});
      }
      const CleaningResult r = cleanAll(cleaner, raws);
      writeQuestions(cleanOut, r.cleaned);
      if (!cleanQuarantine.empty()) {
        std::string q;
        for (const auto& [id, why] : r.quarantined) q += nlohmann::ordered_json{{"id", id}, {"reason", why}}.dump() + "\n";
        writeFile(cleanQuarantine, q);
      }
      fmt::print("cleaned {} quarantined {}\n", r.cleaned.size(), r.quarantined.size());
    } else if (*sftSample) {
      const PolicyModel model = PolicyModel::fromCheckpoint(readCheckpoint(ssCkpt));
      const RejectionResult r = rejectionSample(model, readQuestions(ssQuestions), rc);
      const std::filesystem::path dir = ssOutDir;
      std::filesystem::create_directories(dir);
      writeBuckets(dir / "buckets.jsonl", r.buckets);
      writeQuestions(dir / "annotated.jsonl", r.annotated);
      writeQuestions(dir / "rlvr_pool.jsonl", rlvrExport(r));
      for (const auto& b : r.buckets)
        fmt::print("k={} questions={} retained={}\n", b.k, b.questionIds.size(), b.retainedSamples.size());
    } else if (*sftTrain) {
      PolicyModel model = PolicyModel::fromCheckpoint(readCheckpoint(stCkpt));
      const SftConfig cfg = stConfig.empty() ? SftConfig{} : sftConfigFromJson(readJson(stConfig));
      const auto buckets = selectForSft(readBuckets(stBuckets), cfg.sampleFractionForFull, cfg.seed);
      const SftReport report = trainSft(model, buckets, cfg, [](std::size_t step, const SftStepResult& r) {
        fmt::print("step {} loss {}\n", step, r.loss);
      });
      model.mergeAdapters();
      writeCheckpoint(model.toCheckpoint(), stOut);
      fmt::print("{} steps\n", report.steps);
    } else if (*rlTrain) {
      PolicyModel model = PolicyModel::fromCheckpoint(readCheckpoint(rlCkpt));
      const RlvrConfig cfg = rlvrConfigFromJson(readJson(rlConfig));
      RlvrOutputs outputs;
      if (!rlMetricsDir.empty()) {
        std::filesystem::create_directories(rlMetricsDir);
        outputs.metricsJsonl = std::filesystem::path(rlMetricsDir) / "rlvr_metrics.jsonl";
        outputs.metricsCsv = std::filesystem::path(rlMetricsDir) / "rlvr_metrics.csv";
        outputs.checkpointDir = std::filesystem::path(rlMetricsDir) / "checkpoints";
      }
      const RlvrResult r = trainRlvr(model, readQuestions(rlPool), cfg, nullptr, outputs);
      writeCheckpoint(model.toCheckpoint(), rlOut);
      if (!r.steps.empty()) fmt::print("final mean reward {}\n", r.steps.back().meanReward);
    } else if (*ev) {
      std::unique_ptr<TextClient> judge;
      if (evJudge) judge = makeClient(evJudgeConfig, "RLVR_JUDGE");
      const PolicyModel model = PolicyModel::fromCheckpoint(readCheckpoint(evCkpt));
      EvalOptions opts;
      opts.datasetId = std::filesystem::path(evDataset).filename().string();
      opts.modelRef = std::filesystem::path(evCkpt).filename().string();
      opts.judge = judge.get();
      const EvalReport report = evaluate(model, readQuestions(evDataset), opts);
      exportReport(report, evOut, ReportFormat::Json);
      if (!evCsv.empty()) exportReport(report, evCsv, ReportFormat::Csv);
      fmt::print("pass@1 {} mean tokens {}\n", report.passAt1, report.meanTokens);
    } else if (*pipe) {
      const PipelineConfig cfg = loadPipelineConfig(
          pipeConfig, pipeWorkDir.empty() ? std::nullopt : std::optional<std::filesystem::path>(pipeWorkDir));
      const auto stages = pipeStages.empty() ? allStages() : parseStages(pipeStages);
      std::unique_ptr<TextClient> judge;
      if (cfg.eval.judge) judge = makeClient(pipeJudgeConfig, "RLVR_JUDGE");
      const PipelineResult r = runPipeline(cfg, stages, judge.get());
      for (const auto& [name, p] : r.passAt1) fmt::print("{} pass@1 {}\n", name, p);
      fmt::print("manifest {}\n", (cfg.workDir / "manifest.json").string());
    } else if (*boot) {
      const PipelineConfig cfg = loadPipelineConfig(bootConfig);
      const auto parents = bootstrapParents(cfg.arch, cfg.bootstrap, cfg.curate.trainSpec, cfg.seed);
      std::filesystem::create_directories(bootOutDir);
      for (std::size_t i = 0; i < parents.size(); ++i) {
        const auto path = std::filesystem::path(bootOutDir) / fmt::format("parent-{}.ckpt", i);
        writeCheckpoint(parents[i], path);
        fmt::print("{}\n", path.string());
      }
    }
  } catch (const IncompatibleCheckpoints& e) {
    std::fprintf(stderr, "incompatible checkpoints: %s\n", e.what());
    return kIncompatible;
  } catch (const InvalidSpec& e) {
    std::fprintf(stderr, "invalid spec: %s\n", e.what());
    return kInvalidSpec;
  } catch (const PlanError& e) {
    std::fprintf(stderr, "refused: %s\n", e.what());
    return kPlan;
  } catch (const StageFailure& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return kStage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailure;
  }
  return kOk;
}
