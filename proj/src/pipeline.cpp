#include "rlvr/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "rlvr/alphabet.hpp"
#include "rlvr/digest.hpp"
#include "rlvr/error.hpp"
#include "rlvr/eval.hpp"
#include "rlvr/merge.hpp"
#include "rlvr/random.hpp"

namespace rlvr {

BootstrapConfig bootstrapConfigFromJson(const nlohmann::json& j) {
  BootstrapConfig c;
  c.parents = j.value("parents", c.parents);
  c.questions = j.value("questions", c.questions);
  c.baseSteps = j.value("base_steps", c.baseSteps);
  c.finetuneSteps = j.value("finetune_steps", c.finetuneSteps);
  c.batchSize = j.value("batch_size", c.batchSize);
  c.learningRate = j.value("learning_rate", c.learningRate);
  c.initScale = j.value("init_scale", c.initScale);
  if (c.parents < 2) throw InvalidSpec("bootstrap needs at least two parents");
  if (c.questions < c.parents) throw InvalidSpec("bootstrap needs at least one question per parent");
  if (c.batchSize == 0) throw InvalidSpec("bootstrap batch size must be positive");
  if (!(c.learningRate >= 0.0)) throw InvalidSpec("bootstrap learning rate must be >= 0");
  return c;
}

void trainOnGroundTruth(PolicyModel& model, const std::vector<QuestionRecord>& questions, std::size_t steps,
                        std::size_t batchSize, double lr, std::uint64_t seed) {
  if (questions.empty() || steps == 0) return;
  std::vector<std::vector<TokenId>> prompts, targets;
  for (const auto& q : questions) {
    prompts.push_back(promptFor(q));
    auto t = alphabet::encode(q.answer);
    t.push_back(model.endToken());
    targets.push_back(std::move(t));
  }
  Adam adam;
  Rng rng(seed);
  for (std::size_t s = 0; s < steps; ++s) {
    std::vector<SftExample> batch;
    for (std::size_t b = 0; b < batchSize; ++b) {
      const auto i = static_cast<std::size_t>(rng.below(questions.size()));
      batch.push_back({questions[i].id, prompts[i], targets[i]});
    }
    sftStep(model, adam, batch, lr, s);
  }
}

std::vector<Checkpoint> bootstrapParents(const Architecture& arch, const BootstrapConfig& config,
                                         const SyntheticTaskSpec& tasks, std::uint64_t seed) {
  SyntheticTaskSpec spec = tasks;
  spec.seed = deriveSeed(seed, "bootstrap.tasks");
  const auto questions = generateTasks(spec, config.questions);
  PolicyModel base = PolicyModel::random(arch, deriveSeed(seed, "bootstrap.init"), config.initScale);
  trainOnGroundTruth(base, questions, config.baseSteps, config.batchSize, config.learningRate,
                     deriveSeed(seed, "bootstrap.base"));
  std::vector<Checkpoint> parents;
  for (std::size_t p = 0; p < config.parents; ++p) {
    std::vector<QuestionRecord> slice;
    for (std::size_t i = p; i < questions.size(); i += config.parents) slice.push_back(questions[i]);
    PolicyModel child = base;
    trainOnGroundTruth(child, slice, config.finetuneSteps, config.batchSize, config.learningRate,
                       deriveSeed(seed, {0xB007, p}));
    Checkpoint c = child.toCheckpoint();
    c.metadata["parent"] = std::to_string(p);
    parents.push_back(std::move(c));
  }
  return parents;
}

namespace {

Architecture archFromJson(const nlohmann::json& j) {
  Architecture a;
  a.embedDim = j.value("embed_dim", a.embedDim);
  a.hiddenDim = j.value("hidden_dim", a.hiddenDim);
  a.layers = j.value("layers", a.layers);
  a.window = j.value("window", a.window);
  a.contextLength = j.value("context_length", a.contextLength);
  if (a.embedDim == 0 || a.hiddenDim == 0 || a.window == 0 || a.contextLength < 2)
    throw InvalidSpec("model dimensions must be positive");
  return a;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::filesystem::path& p) {
  return p.is_relative() ? base / p : p;
}

template <typename F>
auto asSpecError(const char* section, F&& f) {
  try {
    return f();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidSpec(std::string("config section '") + section + "': " + e.what());
  }
}

}  // namespace

PipelineConfig pipelineConfigFromJson(const nlohmann::json& j, const std::filesystem::path& baseDir) {
  if (!j.is_object()) throw InvalidSpec("pipeline config must be a JSON object");
  PipelineConfig c;
  const nlohmann::json empty = nlohmann::json::object();
  auto section = [&](const char* key) -> const nlohmann::json& { return j.contains(key) ? j.at(key) : empty; };

  asSpecError("top level", [&] {
    c.seed = j.value("seed", c.seed);
    c.logLevel = j.value("log_level", c.logLevel);
    c.workDir = resolve(baseDir, section("paths").value("work_dir", std::string("run")));
    return 0;
  });
  c.arch = asSpecError("model", [&] { return archFromJson(section("model")); });

  asSpecError("merge", [&] {
    const auto& m = section("merge");
    c.mergeWeights = m.value("weights", std::vector<double>{});
    for (const auto& p : m.value("inputs", std::vector<std::string>{})) c.mergeInputs.push_back(resolve(baseDir, p));
    c.allowNegativeWeights = m.value("allow-negative-weights", false);
    c.bootstrap = bootstrapConfigFromJson(m.contains("bootstrap") ? m.at("bootstrap") : empty);
    return 0;
  });
  const std::size_t parents = c.mergeInputs.empty() ? c.bootstrap.parents : c.mergeInputs.size();
  if (c.mergeWeights.empty()) c.mergeWeights.assign(parents, 1.0 / static_cast<double>(parents));
  if (c.mergeWeights.size() != parents) throw InvalidSpec("merge.weights needs one weight per parent");
  validateWeights(c.mergeWeights, c.allowNegativeWeights);

  asSpecError("curate", [&] {
    const auto& cu = section("curate");
    const auto& train = cu.contains("train") ? cu.at("train") : empty;
    const auto& held = cu.contains("heldout") ? cu.at("heldout") : empty;
    c.curate.trainSpec = syntheticSpecFromJson(train);
    c.curate.trainCount = train.value("count", c.curate.trainCount);
    c.curate.heldoutSpec = syntheticSpecFromJson(held);
    c.curate.heldoutCount = held.value("count", c.curate.heldoutCount);
    if (cu.contains("ingest")) c.curate.ingestPath = resolve(baseDir, cu.at("ingest").get<std::string>());
    if (c.curate.trainCount == 0 || c.curate.heldoutCount == 0) throw InvalidSpec("curate counts must be positive");
    return 0;
  });
  c.sft = sftConfigFromJson(section("sft"));
  c.rlvr = rlvrConfigFromJson(section("rlvr"));
  asSpecError("rlvr", [&] {
    c.rlvrPool = section("rlvr").value("pool", c.rlvrPool);
    return 0;
  });
  if (c.rlvrPool != "all" && c.rlvrPool != "bucket0") throw InvalidSpec("rlvr.pool must be 'all' or 'bucket0'");
  asSpecError("eval", [&] {
    const auto& e = section("eval");
    if (e.contains("max_new_tokens")) c.eval.maxNewTokens = e.at("max_new_tokens").get<std::size_t>();
    c.eval.judge = e.value("judge", false);
    return 0;
  });

  nlohmann::json canonical = j;
  canonical.erase("paths");
  c.configHash = sha256Hex(canonical.dump());
  return c;
}

PipelineConfig loadPipelineConfig(const std::filesystem::path& path,
                                  const std::optional<std::filesystem::path>& workDir) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string(), "cannot open pipeline config");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidSpec(path.string() + ": " + e.what());
  }
  PipelineConfig c = pipelineConfigFromJson(j, path.parent_path());
  if (workDir) c.workDir = *workDir;
  return c;
}

const char* toString(Stage s) {
  switch (s) {
    case Stage::Merge: return "merge";
    case Stage::Curate: return "curate";
    case Stage::SftSample: return "sft-sample";
    case Stage::SftTrain: return "sft-train";
    case Stage::Rlvr: return "rlvr";
    case Stage::Eval: return "eval";
  }
  return "?";
}

std::vector<Stage> allStages() {
  return {Stage::Merge, Stage::Curate, Stage::SftSample, Stage::SftTrain, Stage::Rlvr, Stage::Eval};
}

std::vector<Stage> parseStages(const std::vector<std::string>& names) {
  std::vector<Stage> out;
  for (const auto& n : names) {
    bool found = false;
    for (Stage s : allStages())
      if (n == toString(s)) {
        out.push_back(s);
        found = true;
      }
    if (!found) throw PlanError("unknown stage '" + n + "' (expected merge, curate, sft-sample, sft-train, rlvr, eval)");
  }
  return out;
}

namespace {

namespace files {
const char* const kMerged = "merged.ckpt";
const char* const kTrain = "train.jsonl";
const char* const kHeldout = "heldout.jsonl";
const char* const kBuckets = "buckets.jsonl";
const char* const kAnnotated = "annotated.jsonl";
const char* const kBucket0 = "rlvr_pool.jsonl";
const char* const kSft = "sft.ckpt";
const char* const kRlvr = "rlvr.ckpt";
}  // namespace files

struct Requirement {
  Stage stage;
  Stage producer;
  std::string file;
};

std::vector<Requirement> requirements(const PipelineConfig& c) {
  return {
      {Stage::SftSample, Stage::Merge, files::kMerged},
      {Stage::SftSample, Stage::Curate, files::kTrain},
      {Stage::SftTrain, Stage::Merge, files::kMerged},
      {Stage::SftTrain, Stage::SftSample, files::kBuckets},
      {Stage::Rlvr, Stage::SftTrain, files::kSft},
      {Stage::Rlvr, Stage::SftSample, c.rlvrPool == "all" ? files::kAnnotated : files::kBucket0},
      {Stage::Eval, Stage::Curate, files::kHeldout},
  };
}

}  // namespace

void checkPlan(const PipelineConfig& config, const std::vector<Stage>& stages) {
  if (stages.empty()) throw PlanError("no stages requested");
  for (std::size_t i = 1; i < stages.size(); ++i)
    if (static_cast<int>(stages[i]) <= static_cast<int>(stages[i - 1]))
      throw PlanError(fmt::format("stage '{}' listed after '{}'; stages must follow merge, curate, sft-sample, "
                                  "sft-train, rlvr, eval without repeats",
                                  toString(stages[i]), toString(stages[i - 1])));
  auto requested = [&](Stage s) { return std::find(stages.begin(), stages.end(), s) != stages.end(); };
  for (const auto& r : requirements(config)) {
    if (!requested(r.stage)) continue;
    if (requested(r.producer) || std::filesystem::exists(config.workDir / r.file)) continue;
    throw PlanError(fmt::format("stage '{}' needs {} from stage '{}', which is not requested and not present in {}; "
                                "add '{}' before '{}' or run it first",
                                toString(r.stage), r.file, toString(r.producer), config.workDir.string(),
                                toString(r.producer), toString(r.stage)));
  }
  if (requested(Stage::Eval)) {
    bool any = false;
    for (auto [s, f] : {std::pair{Stage::Merge, files::kMerged}, std::pair{Stage::SftTrain, files::kSft},
                        std::pair{Stage::Rlvr, files::kRlvr}})
      any = any || requested(s) || std::filesystem::exists(config.workDir / f);
    if (!any) throw PlanError("stage 'eval' has no checkpoint to evaluate; run 'merge', 'sft-train' or 'rlvr' first");
  }
  if (requested(Stage::Merge))
    for (const auto& p : config.mergeInputs)
      if (!std::filesystem::exists(p)) throw PlanError("merge input " + p.string() + " does not exist");
  if (requested(Stage::Curate) && config.curate.ingestPath && !std::filesystem::exists(*config.curate.ingestPath))
    throw PlanError("ingest file " + config.curate.ingestPath->string() + " does not exist");
}

namespace {

class Runner {
 public:
  Runner(const PipelineConfig& c, JudgeClient* judge) : c_(c), judge_(judge) {}

  void run(Stage s) {
    artifacts_ = nlohmann::ordered_json::array();
    switch (s) {
      case Stage::Merge: merge(); break;
      case Stage::Curate: curate(); break;
      case Stage::SftSample: sftSample(); break;
      case Stage::SftTrain: sftTrain(); break;
      case Stage::Rlvr: rlvr(); break;
      case Stage::Eval: eval(); break;
    }
  }

  nlohmann::ordered_json takeArtifacts() { return std::move(artifacts_); }
  std::map<std::string, double> passAt1;

 private:
  std::filesystem::path path(const std::string& rel) const { return c_.workDir / rel; }

  void record(const std::string& rel) {
    nlohmann::ordered_json a;
    a["path"] = rel;
    a["sha256"] = fileSha256(path(rel));
    if (rel.ends_with(".ckpt")) a["tensor_digest"] = tensorDigest(readCheckpoint(path(rel)));
    artifacts_.push_back(std::move(a));
  }

  void writeText(const std::string& rel, const std::string& text) {
    std::ofstream out(path(rel), std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(path(rel).string(), "cannot open for writing");
    out << text;
    out.close();
    if (!out) throw IoError(path(rel).string(), "write failed");
    record(rel);
  }

  void writeCkpt(const std::string& rel, const Checkpoint& ckpt) {
    writeCheckpoint(ckpt, path(rel));
    record(rel);
  }

  void writeRecords(const std::string& rel, const std::vector<QuestionRecord>& records) {
    writeQuestions(path(rel), records);
    record(rel);
  }

  void merge() {
    std::vector<Checkpoint> inputs;
    std::vector<std::string> refs;
    if (c_.mergeInputs.empty()) {
      inputs = bootstrapParents(c_.arch, c_.bootstrap, c_.curate.trainSpec, deriveSeed(c_.seed, "merge"));
      std::filesystem::create_directories(path("parents"));
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        const auto rel = fmt::format("parents/parent-{}.ckpt", i);
        writeCkpt(rel, inputs[i]);
        refs.push_back(rel);
      }
    } else {
      for (const auto& p : c_.mergeInputs) {
        inputs.push_back(readCheckpoint(p));
        refs.push_back(p.filename().string());
      }
    }
    Checkpoint merged = mergeLinear(inputs, c_.mergeWeights, c_.allowNegativeWeights);
    merged.metadata["merge.inputs"] = nlohmann::json(refs).dump();
    writeCkpt(files::kMerged, merged);
  }

  void curate() {
    SyntheticTaskSpec train = c_.curate.trainSpec, held = c_.curate.heldoutSpec;
    train.seed = deriveSeed(c_.seed, "curate.train");
    held.seed = deriveSeed(c_.seed, "curate.heldout");
    writeRecords(files::kTrain, generateTasks(train, c_.curate.trainCount));
    writeRecords(files::kHeldout, generateTasks(held, c_.curate.heldoutCount));
    if (c_.curate.ingestPath) {
      IngestResult r = ingestQuestions(*c_.curate.ingestPath);
      writeRecords("ingested.jsonl", r.records);
      writeText("ingest_report.json", toJson(r.report).dump(2) + "\n");
    }
  }

  void sftSample() {
    const PolicyModel merged = PolicyModel::fromCheckpoint(readCheckpoint(path(files::kMerged)));
    RejectionConfig rc;
    rc.n = c_.sft.rejectionN;
    rc.temperature = c_.sft.rejectionTemperature;
    rc.seed = deriveSeed(c_.seed, "sft-sample");
    const RejectionResult result = rejectionSample(merged, readQuestions(path(files::kTrain)), rc, judge_);
    writeBuckets(path(files::kBuckets), result.buckets);
    record(files::kBuckets);
    writeRecords(files::kAnnotated, result.annotated);
    writeRecords(files::kBucket0, rlvrExport(result));

    std::map<std::size_t, std::size_t> perK;
    for (const auto& b : result.buckets) perK[b.k] = b.questionIds.size();
    auto table = nlohmann::ordered_json::array();
    for (const auto& row : bucketTable(perK, rc.n, c_.sft.sampleFractionForFull))
      table.push_back({{"k", row.k}, {"questions", row.questions}, {"total_cots", row.totalCoTs},
                       {"sft_cots", row.sftCoTs}, {"usage", row.usage}});
    writeText("bucket_table.json", table.dump(2) + "\n");
  }

  void sftTrain() {
    PolicyModel model = PolicyModel::fromCheckpoint(readCheckpoint(path(files::kMerged)));
    SftConfig cfg = c_.sft;
    cfg.seed = deriveSeed(c_.seed, "sft-train");
    const auto selected = selectForSft(readBuckets(path(files::kBuckets)), cfg.sampleFractionForFull,
                                       deriveSeed(cfg.seed, "select"));
    std::string losses = "step,loss,tokens\n";
    trainSft(model, selected, cfg, [&](std::size_t step, const SftStepResult& r) {
      losses += fmt::format("{},{},{}\n", step, r.loss, r.tokens);
    });
    model.mergeAdapters();
    writeCkpt(files::kSft, model.toCheckpoint());
    writeText("sft_losses.csv", losses);
  }

  void rlvr() {
    PolicyModel model = PolicyModel::fromCheckpoint(readCheckpoint(path(files::kSft)));
    RlvrConfig cfg = c_.rlvr;
    cfg.seed = deriveSeed(c_.seed, "rlvr");
    if (cfg.contextLimit == 0) cfg.contextLimit = c_.arch.contextLength;
    auto pool = readQuestions(path(c_.rlvrPool == "all" ? files::kAnnotated : files::kBucket0));
    if (pool.empty()) throw ContractViolation("rlvr pool " + c_.rlvrPool + " is empty");
    RlvrOutputs out;
    out.metricsJsonl = path("rlvr_metrics.jsonl");
    out.metricsCsv = path("rlvr_metrics.csv");
    out.checkpointDir = path("checkpoints");
    const RlvrResult r = trainRlvr(model, std::move(pool), cfg, judge_, out);
    for (const auto& f : r.written) record(std::filesystem::relative(f, c_.workDir).generic_string());
    writeCkpt(files::kRlvr, model.toCheckpoint());
    writeRecords("rlvr_pool_final.jsonl", r.pool);
  }

  void eval() {
    const auto heldout = readQuestions(path(files::kHeldout));
    std::filesystem::create_directories(path("eval"));
    nlohmann::ordered_json summary = nlohmann::ordered_json::object();
    for (auto [name, file] : {std::pair{"merged", files::kMerged}, std::pair{"sft", files::kSft},
                              std::pair{"rlvr", files::kRlvr}}) {
      if (!std::filesystem::exists(path(file))) continue;
      const PolicyModel model = PolicyModel::fromCheckpoint(readCheckpoint(path(file)));
      EvalOptions opts;
      opts.datasetId = files::kHeldout;
      opts.modelRef = file;
      opts.judge = c_.eval.judge ? judge_ : nullptr;
      opts.maxNewTokens = c_.eval.maxNewTokens;
      const EvalReport report = evaluate(model, heldout, opts);
      writeText(fmt::format("eval/{}.json", name), renderReport(report, ReportFormat::Json));
      writeText(fmt::format("eval/{}.csv", name), renderReport(report, ReportFormat::Csv));
      passAt1[name] = report.passAt1;
      summary[name] = {{"pass_at_1", report.passAt1}, {"mean_tokens", report.meanTokens}};
      spdlog::info("eval {}: pass@1 {:.3f} over {} questions", name, report.passAt1, heldout.size());
    }
    writeText("eval/summary.json", summary.dump(2) + "\n");
  }

  const PipelineConfig& c_;
  JudgeClient* judge_;
  nlohmann::ordered_json artifacts_;
};

}  // namespace

PipelineResult runPipeline(const PipelineConfig& config, const std::vector<Stage>& stages, JudgeClient* judge) {
  checkPlan(config, stages);
  if (auto level = spdlog::level::from_str(config.logLevel); level != spdlog::level::off || config.logLevel == "off")
    spdlog::set_level(level);
  std::filesystem::create_directories(config.workDir);

  PipelineResult result;
  Runner runner(config, judge);
  auto stageRows = nlohmann::ordered_json::array();
  nlohmann::ordered_json timings = nlohmann::ordered_json::object();
  for (Stage s : stages) {
    spdlog::info("stage {} started", toString(s));
    const auto t0 = std::chrono::steady_clock::now();
    try {
      runner.run(s);
    } catch (const std::exception& e) {
      throw StageFailure(toString(s), e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    timings[toString(s)] = secs;
    spdlog::info("stage {} finished in {:.2f}s", toString(s), secs);
    stageRows.push_back({{"name", toString(s)}, {"artifacts", runner.takeArtifacts()}});
  }
  result.passAt1 = runner.passAt1;

  nlohmann::ordered_json m;
  m["format"] = "rlvr-lab-manifest";
  m["version"] = 1;
  m["config_sha256"] = config.configHash;
  m["seed"] = config.seed;
  m["stages"] = std::move(stageRows);
  if (!result.passAt1.empty()) m["pass_at_1"] = result.passAt1;
  m["volatile"] = {"timings.json"};
  {
    std::ofstream out(config.workDir / "manifest.json", std::ios::binary | std::ios::trunc);
    out << m.dump(2) << '\n';
    if (!out) throw IoError((config.workDir / "manifest.json").string(), "write failed");
  }
  {
    std::ofstream out(config.workDir / "timings.json", std::ios::binary | std::ios::trunc);
    out << timings.dump(2) << '\n';
  }
  result.manifest = std::move(m);
  return result;
}

}  // namespace rlvr
