#include "rlvr/policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "json.hpp"
#include "rlvr/error.hpp"
#include "rlvr/random.hpp"

namespace rlvr {
namespace {

constexpr const char* kArchTag = "ffw-window-v1";

std::string linearName(std::size_t layer, std::size_t layers, const char* part) {
  if (layer == layers) return std::string("output.") + part;
  return "hidden." + std::to_string(layer) + "." + part;
}

std::size_t linearInDim(const Architecture& a, std::size_t layer) {
  return layer == 0 ? a.window * a.embedDim : a.hiddenDim;
}

std::size_t linearOutDim(const Architecture& a, std::size_t layer) {
  return layer == a.layers ? a.vocabSize : a.hiddenDim;
}

void validateArchitecture(const Architecture& a) {
  if (a.vocabSize < 2 || a.embedDim == 0 || a.window == 0 || a.contextLength < 2)
    throw ContractViolation("invalid policy architecture");
  if (a.layers > 0 && a.hiddenDim == 0) throw ContractViolation("hidden layers need hiddenDim > 0");
}

std::size_t parseCount(const std::map<std::string, std::string>& meta, const std::string& key) {
  auto it = meta.find(key);
  if (it == meta.end()) throw ContractViolation("checkpoint metadata lacks " + key);
  return static_cast<std::size_t>(std::stoull(it->second));
}

// Per-position activations needed for backpropagation.
struct StepCache {
  std::vector<long> slotTokens;
  std::vector<std::vector<double>> act;         // act[l] = input of linear layer l; act.back() = logits
  std::vector<std::vector<double>> adapterIn;   // masked input seen by the adapter of layer l
  std::vector<std::vector<double>> adapterMid;  // A * adapterIn
  std::vector<std::vector<double>> mask;        // inverted-dropout scale per input element, empty if off
};

void linearForward(const PolicyModel& m, std::size_t layer, StepCache& c, Rng* dropoutRng) {
  const auto& arch = m.architecture();
  const auto& p = m.parameters().entries;
  const auto& lay = m.layout();
  const Tensor& w = p[lay.weight[layer]].tensor;
  const Tensor& b = p[lay.bias[layer]].tensor;
  const std::vector<double>& in = c.act[layer];
  const std::size_t nIn = linearInDim(arch, layer), nOut = linearOutDim(arch, layer);
  std::vector<double>& out = c.act[layer + 1];
  out.assign(nOut, 0.0);
  for (std::size_t o = 0; o < nOut; ++o) {
    double acc = b[o];
    const double* row = w.data().data() + o * nIn;
    for (std::size_t j = 0; j < nIn; ++j) acc += row[j] * in[j];
    out[o] = acc;
  }
  const auto& slot = lay.linearAdapter[layer];
  if (slot.present) {
    const Tensor& A = p[slot.a].tensor;
    const Tensor& B = p[slot.b].tensor;
    const std::size_t r = A.rows();
    auto& adIn = c.adapterIn[layer];
    auto& mask = c.mask[layer];
    adIn = in;
    mask.clear();
    if (dropoutRng != nullptr && slot.dropout > 0.0) {
      mask.resize(nIn);
      const double keep = 1.0 / (1.0 - slot.dropout);
      for (std::size_t j = 0; j < nIn; ++j) {
        mask[j] = dropoutRng->uniform() >= slot.dropout ? keep : 0.0;
        adIn[j] *= mask[j];
      }
    }
    auto& mid = c.adapterMid[layer];
    mid.assign(r, 0.0);
    for (std::size_t k = 0; k < r; ++k) {
      double acc = 0.0;
      for (std::size_t j = 0; j < nIn; ++j) acc += A.at(k, j) * adIn[j];
      mid[k] = acc;
    }
    for (std::size_t o = 0; o < nOut; ++o) {
      double acc = 0.0;
      for (std::size_t k = 0; k < r; ++k) acc += B.at(o, k) * mid[k];
      const double delta = slot.scale * acc;
      if (delta != 0.0) out[o] += delta;
    }
  }
  if (layer < arch.layers)
    for (double& v : out) v = std::tanh(v);
}

void forwardStep(const PolicyModel& m, std::span<const TokenId> context, StepCache& c,
                 Rng* dropoutRng) {
  const auto& arch = m.architecture();
  const auto& p = m.parameters().entries;
  const auto& lay = m.layout();
  const std::size_t d = arch.embedDim, win = arch.window;
  c.slotTokens.assign(win, -1);
  c.act.resize(arch.layers + 2);
  c.adapterIn.resize(arch.layers + 1);
  c.adapterMid.resize(arch.layers + 1);
  c.mask.resize(arch.layers + 1);
  auto& x = c.act[0];
  x.assign(win * d, 0.0);
  const Tensor& embed = p[lay.embed].tensor;
  for (std::size_t j = 0; j < win; ++j) {
    // Slot win-1 holds the most recent token.
    if (context.size() + j < win) continue;
    const TokenId t = context[context.size() + j - win];
    if (t >= arch.vocabSize) throw ContractViolation("token id out of vocabulary");
    c.slotTokens[j] = static_cast<long>(t);
    for (std::size_t k = 0; k < d; ++k) x[j * d + k] = embed.at(t, k);
    if (lay.embedAdapter.present) {
      const Tensor& A = p[lay.embedAdapter.a].tensor;
      const Tensor& B = p[lay.embedAdapter.b].tensor;
      for (std::size_t k = 0; k < d; ++k) {
        double acc = 0.0;
        for (std::size_t r = 0; r < A.rows(); ++r) acc += B.at(t, r) * A.at(r, k);
        const double delta = lay.embedAdapter.scale * acc;
        if (delta != 0.0) x[j * d + k] += delta;
      }
    }
  }
  for (std::size_t l = 0; l <= arch.layers; ++l) linearForward(m, l, c, dropoutRng);
}

std::vector<double> logSoftmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

// Accumulates d(objective)/d(theta) given d(objective)/d(logits).
void backwardStep(const PolicyModel& m, const StepCache& c, std::vector<double> dOut,
                  Checkpoint& grad) {
  const auto& arch = m.architecture();
  const auto& p = m.parameters().entries;
  const auto& lay = m.layout();
  const bool base = m.baseTrainable();
  std::vector<double> dIn;
  for (std::size_t li = arch.layers + 1; li-- > 0;) {
    const std::size_t nIn = linearInDim(arch, li), nOut = linearOutDim(arch, li);
    const std::vector<double>& in = c.act[li];
    const Tensor& w = p[lay.weight[li]].tensor;
    if (base) {
      Tensor& gw = grad.entries[lay.weight[li]].tensor;
      Tensor& gb = grad.entries[lay.bias[li]].tensor;
      for (std::size_t o = 0; o < nOut; ++o) {
        if (dOut[o] == 0.0) continue;
        gb[o] += dOut[o];
        double* row = &gw[o * nIn];
        for (std::size_t j = 0; j < nIn; ++j) row[j] += dOut[o] * in[j];
      }
    }
    dIn.assign(nIn, 0.0);
    for (std::size_t o = 0; o < nOut; ++o) {
      if (dOut[o] == 0.0) continue;
      const double* row = w.data().data() + o * nIn;
      for (std::size_t j = 0; j < nIn; ++j) dIn[j] += row[j] * dOut[o];
    }
    const auto& slot = lay.linearAdapter[li];
    if (slot.present) {
      const Tensor& A = p[slot.a].tensor;
      const Tensor& B = p[slot.b].tensor;
      Tensor& gA = grad.entries[slot.a].tensor;
      Tensor& gB = grad.entries[slot.b].tensor;
      const std::size_t r = A.rows();
      const auto& mid = c.adapterMid[li];
      const auto& adIn = c.adapterIn[li];
      const auto& mask = c.mask[li];
      std::vector<double> du(r, 0.0);
      for (std::size_t o = 0; o < nOut; ++o) {
        for (std::size_t k = 0; k < r; ++k) {
          gB.at(o, k) += slot.scale * dOut[o] * mid[k];
          du[k] += slot.scale * B.at(o, k) * dOut[o];
        }
      }
      for (std::size_t k = 0; k < r; ++k) {
        for (std::size_t j = 0; j < nIn; ++j) {
          gA.at(k, j) += du[k] * adIn[j];
          const double back = A.at(k, j) * du[k];
          dIn[j] += mask.empty() ? back : back * mask[j];
        }
      }
    }
    if (li > 0) {
      dOut.assign(nIn, 0.0);
      for (std::size_t j = 0; j < nIn; ++j) dOut[j] = dIn[j] * (1.0 - in[j] * in[j]);
    }
  }
  // dIn now holds the gradient with respect to the concatenated embeddings.
  const std::size_t d = arch.embedDim;
  for (std::size_t j = 0; j < arch.window; ++j) {
    const long t = c.slotTokens[j];
    if (t < 0) continue;
    const auto tok = static_cast<std::size_t>(t);
    if (base) {
      Tensor& ge = grad.entries[lay.embed].tensor;
      for (std::size_t k = 0; k < d; ++k) ge.at(tok, k) += dIn[j * d + k];
    }
    if (lay.embedAdapter.present) {
      const auto& slot = lay.embedAdapter;
      const Tensor& A = p[slot.a].tensor;
      const Tensor& B = p[slot.b].tensor;
      Tensor& gA = grad.entries[slot.a].tensor;
      Tensor& gB = grad.entries[slot.b].tensor;
      for (std::size_t r = 0; r < A.rows(); ++r) {
        double acc = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
          acc += dIn[j * d + k] * A.at(r, k);
          gA.at(r, k) += slot.scale * B.at(tok, r) * dIn[j * d + k];
        }
        gB.at(tok, r) += slot.scale * acc;
      }
    }
  }
}

void checkPrefix(const PolicyModel& m, std::size_t length) {
  if (length >= m.architecture().contextLength)
    throw ContractViolation("prefix of length " + std::to_string(length) +
                            " does not fit context length " +
                            std::to_string(m.architecture().contextLength));
}

void checkSequenceFits(const PolicyModel& m, std::size_t promptLen, std::size_t completionLen) {
  if (promptLen + completionLen > m.architecture().contextLength)
    throw ContractViolation("prompt + completion exceeds context length");
}

template <typename Visit>
void forEachScoredToken(const PolicyModel& m, std::span<const WeightedCompletion> batch,
                        std::optional<std::uint64_t> dropoutSeed, Visit&& visit) {
  StepCache cache;
  std::vector<TokenId> ctx;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& item = batch[i];
    checkSequenceFits(m, item.prompt.size(), item.completion.size());
    ctx.assign(item.prompt.begin(), item.prompt.end());
    for (std::size_t t = 0; t < item.completion.size(); ++t) {
      std::optional<Rng> rng;
      if (dropoutSeed) rng.emplace(deriveSeed(*dropoutSeed, {i, t}));
      forwardStep(m, ctx, cache, rng ? &*rng : nullptr);
      visit(item, item.completion[t], cache);
      ctx.push_back(item.completion[t]);
    }
  }
}

}  // namespace

PolicyModel::PolicyModel(Architecture arch, Checkpoint params)
    : arch_(arch), params_(std::move(params)) {
  rebuildLayout();
}

PolicyModel PolicyModel::zeros(const Architecture& arch) {
  validateArchitecture(arch);
  Checkpoint params;
  params.add("embed", Tensor({arch.vocabSize, arch.embedDim}));
  for (std::size_t l = 0; l <= arch.layers; ++l) {
    params.add(linearName(l, arch.layers, "weight"),
               Tensor({linearOutDim(arch, l), linearInDim(arch, l)}));
    params.add(linearName(l, arch.layers, "bias"), Tensor({linearOutDim(arch, l)}));
  }
  return PolicyModel(arch, std::move(params));
}

PolicyModel PolicyModel::random(const Architecture& arch, std::uint64_t seed, double initScale) {
  PolicyModel m = zeros(arch);
  Rng rng(seed);
  for (auto& [name, t] : m.params_.entries) {
    if (name == "embed") {
      for (double& v : t.data()) v = initScale * rng.uniform(-1.0, 1.0);
    } else if (t.rank() == 2) {
      const double limit = initScale * std::sqrt(6.0 / static_cast<double>(t.rows() + t.cols()));
      for (double& v : t.data()) v = rng.uniform(-limit, limit);
    }
  }
  return m;
}

std::vector<std::string> PolicyModel::adaptableTargets() const {
  std::vector<std::string> out{"embed"};
  for (std::size_t l = 0; l <= arch_.layers; ++l) out.push_back(linearName(l, arch_.layers, "weight"));
  return out;
}

void PolicyModel::attachAdapter(const AdapterSpec& spec, std::uint64_t seed) {
  const auto targets = adaptableTargets();
  if (std::find(targets.begin(), targets.end(), spec.target) == targets.end())
    throw ContractViolation("adapter target is not an adaptable matrix: " + spec.target);
  for (const auto& a : adapters_)
    if (a.target == spec.target) throw ContractViolation("adapter already attached to " + spec.target);
  if (!(spec.dropout >= 0.0 && spec.dropout < 1.0)) throw ContractViolation("adapter dropout must be in [0,1)");
  if (!(spec.alpha > 0.0)) throw ContractViolation("adapter alpha must be positive");
  const Tensor& base = params_.at(spec.target);
  const std::size_t out = base.rows(), in = base.cols();
  if (spec.rank == 0 || spec.rank > std::min(out, in))
    throw ContractViolation("adapter rank must be in [1, min(dims)]");
  LowRankAdapter adapter{spec.target, spec.rank, spec.alpha, spec.dropout};
  Tensor a({spec.rank, in});
  Rng rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  for (double& v : a.data()) v = rng.uniform(-bound, bound);
  params_.add(adapter.nameA(), std::move(a));
  params_.add(adapter.nameB(), Tensor({out, spec.rank}));
  adapters_.push_back(adapter);
  rebuildLayout();
}

void PolicyModel::mergeAdapters() {
  for (const auto& ad : adapters_) {
    Tensor& base = params_.at(ad.target);
    const Tensor& a = params_.at(ad.nameA());
    const Tensor& b = params_.at(ad.nameB());
    for (std::size_t o = 0; o < base.rows(); ++o)
      for (std::size_t j = 0; j < base.cols(); ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < ad.rank; ++k) acc += b.at(o, k) * a.at(k, j);
        base.at(o, j) += ad.scale() * acc;
      }
  }
  std::erase_if(params_.entries, [](const NamedTensor& e) { return e.name.starts_with("adapter."); });
  adapters_.clear();
  rebuildLayout();
}

std::vector<bool> PolicyModel::trainableMask() const {
  std::vector<bool> mask(params_.entries.size());
  const bool base = baseTrainable();
  for (std::size_t i = 0; i < mask.size(); ++i)
    mask[i] = params_.entries[i].name.starts_with("adapter.") || base;
  return mask;
}

void PolicyModel::rebuildLayout() {
  layout_ = Layout{};
  layout_.embed = params_.indexOf("embed");
  for (std::size_t l = 0; l <= arch_.layers; ++l) {
    layout_.weight.push_back(params_.indexOf(linearName(l, arch_.layers, "weight")));
    layout_.bias.push_back(params_.indexOf(linearName(l, arch_.layers, "bias")));
  }
  layout_.linearAdapter.assign(arch_.layers + 1, {});
  for (const auto& ad : adapters_) {
    Layout::Slot slot{true, params_.indexOf(ad.nameA()), params_.indexOf(ad.nameB()), ad.scale(),
                      ad.dropout};
    if (ad.target == "embed") {
      // Dropout on token lookups is not applied.
      slot.dropout = 0.0;
      layout_.embedAdapter = slot;
      continue;
    }
    for (std::size_t l = 0; l <= arch_.layers; ++l)
      if (ad.target == linearName(l, arch_.layers, "weight")) layout_.linearAdapter[l] = slot;
  }
}

Checkpoint PolicyModel::toCheckpoint() const {
  Checkpoint out = params_;
  out.metadata["arch"] = kArchTag;
  out.metadata["vocab_size"] = std::to_string(arch_.vocabSize);
  out.metadata["embed_dim"] = std::to_string(arch_.embedDim);
  out.metadata["hidden_dim"] = std::to_string(arch_.hiddenDim);
  out.metadata["layers"] = std::to_string(arch_.layers);
  out.metadata["window"] = std::to_string(arch_.window);
  out.metadata["context_length"] = std::to_string(arch_.contextLength);
  out.metadata["frozen_base"] = frozenBase_ ? "true" : "false";
  nlohmann::ordered_json ads = nlohmann::ordered_json::array();
  for (const auto& a : adapters_)
    ads.push_back({{"target", a.target}, {"rank", a.rank}, {"alpha", a.alpha}, {"dropout", a.dropout}});
  out.metadata["adapters"] = ads.dump();
  return out;
}

PolicyModel PolicyModel::fromCheckpoint(const Checkpoint& ckpt) {
  const auto& meta = ckpt.metadata;
  auto arch_it = meta.find("arch");
  if (arch_it == meta.end() || arch_it->second != kArchTag)
    throw ContractViolation("checkpoint is not a policy checkpoint (arch tag)");
  Architecture arch;
  arch.vocabSize = parseCount(meta, "vocab_size");
  arch.embedDim = parseCount(meta, "embed_dim");
  arch.hiddenDim = parseCount(meta, "hidden_dim");
  arch.layers = parseCount(meta, "layers");
  arch.window = parseCount(meta, "window");
  arch.contextLength = parseCount(meta, "context_length");
  validateArchitecture(arch);

  PolicyModel expected = zeros(arch);
  auto ads_it = meta.find("adapters");
  if (ads_it != meta.end() && !ads_it->second.empty()) {
    for (const auto& a : nlohmann::json::parse(ads_it->second)) {
      AdapterSpec spec{a.at("target").get<std::string>(), a.at("rank").get<std::size_t>(),
                       a.at("alpha").get<double>(), a.at("dropout").get<double>()};
      expected.attachAdapter(spec, 0);
    }
  }
  if (!mergeCompatible(expected.params_, ckpt))
    throw ContractViolation("checkpoint tensors do not match the declared architecture");
  for (const auto& e : ckpt.entries)
    if (!e.tensor.allFinite()) throw ContractViolation("non-finite parameter in " + e.name);
  PolicyModel m(arch, ckpt);
  m.adapters_ = expected.adapters_;
  auto fb = meta.find("frozen_base");
  m.frozenBase_ = fb == meta.end() || fb->second != "false";
  m.rebuildLayout();
  return m;
}

std::vector<double> forwardLogProbs(const PolicyModel& model, std::span<const TokenId> prefix) {
  checkPrefix(model, prefix.size());
  StepCache cache;
  forwardStep(model, prefix, cache, nullptr);
  return logSoftmax(cache.act.back());
}

TokenSequence sample(const PolicyModel& model, std::span<const TokenId> prompt, double temperature,
                     std::uint64_t seed, std::size_t maxNewTokens) {
  if (!(temperature > 0.0)) throw ContractViolation("sampling temperature must be > 0");
  checkPrefix(model, prompt.size());
  Rng rng(seed);
  StepCache cache;
  std::vector<TokenId> ctx(prompt.begin(), prompt.end());
  TokenSequence out;
  const std::size_t limit = model.architecture().contextLength;
  std::vector<double> weights;
  while (ctx.size() < limit && out.size() < maxNewTokens) {
    forwardStep(model, ctx, cache, nullptr);
    const auto& logits = cache.act.back();
    const auto logp = logSoftmax(logits);
    const double mx = *std::max_element(logits.begin(), logits.end());
    weights.resize(logits.size());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
      weights[i] = std::exp((logits[i] - mx) / temperature);
      total += weights[i];
    }
    const double u = rng.uniform() * total;
    std::size_t pick = 0;
    double cum = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      if (weights[i] <= 0.0) continue;
      pick = i;
      cum += weights[i];
      if (u < cum) break;
    }
    const auto tok = static_cast<TokenId>(pick);
    out.tokens.push_back(tok);
    out.logProbs.push_back(logp[pick]);
    ctx.push_back(tok);
    if (tok == model.endToken()) break;
  }
  return out;
}

TokenSequence greedyDecode(const PolicyModel& model, std::span<const TokenId> prompt,
                           std::size_t maxNewTokens) {
  checkPrefix(model, prompt.size());
  StepCache cache;
  std::vector<TokenId> ctx(prompt.begin(), prompt.end());
  TokenSequence out;
  const std::size_t limit = model.architecture().contextLength;
  while (ctx.size() < limit && out.size() < maxNewTokens) {
    forwardStep(model, ctx, cache, nullptr);
    const auto logp = logSoftmax(cache.act.back());
    // max_element returns the first maximum, i.e. the lowest id.
    const auto pick = static_cast<std::size_t>(std::max_element(logp.begin(), logp.end()) - logp.begin());
    const auto tok = static_cast<TokenId>(pick);
    out.tokens.push_back(tok);
    out.logProbs.push_back(logp[pick]);
    ctx.push_back(tok);
    if (tok == model.endToken()) break;
  }
  return out;
}

SequenceScore logProbOfSequence(const PolicyModel& model, std::span<const TokenId> prompt,
                                std::span<const TokenId> completion) {
  const WeightedCompletion item{prompt, completion, 1.0};
  return {weightedLogProb(model, std::span(&item, 1)), completion.size()};
}

double weightedLogProb(const PolicyModel& model, std::span<const WeightedCompletion> batch,
                       std::optional<std::uint64_t> dropoutSeed) {
  double total = 0.0;
  forEachScoredToken(model, batch, dropoutSeed,
                     [&](const WeightedCompletion& item, TokenId target, const StepCache& c) {
                       if (item.weight == 0.0) return;
                       const auto logp = logSoftmax(c.act.back());
                       total += item.weight * logp[target];
                     });
  return total;
}

Checkpoint gradLogProbWeighted(const PolicyModel& model, std::span<const WeightedCompletion> batch,
                               std::optional<std::uint64_t> dropoutSeed) {
  for (const auto& item : batch)
    if (!std::isfinite(item.weight)) throw ContractViolation("non-finite weight in gradient batch");
  Checkpoint grad = model.parameters().zerosLike();
  forEachScoredToken(model, batch, dropoutSeed,
                     [&](const WeightedCompletion& item, TokenId target, const StepCache& c) {
                       if (item.weight == 0.0) return;
                       const auto logp = logSoftmax(c.act.back());
                       std::vector<double> dLogits(logp.size());
                       // d log softmax_y / d logits = onehot(y) - softmax
                       for (std::size_t v = 0; v < logp.size(); ++v)
                         dLogits[v] = -item.weight * std::exp(logp[v]);
                       dLogits[target] += item.weight;
                       backwardStep(model, c, std::move(dLogits), grad);
                     });
  return grad;
}

}  // namespace rlvr
