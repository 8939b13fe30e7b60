#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rlvr/tensor.hpp"

namespace rlvr {

using TokenId = std::uint32_t;

struct TokenSequence {
  std::vector<TokenId> tokens;
  // Empty, or one log-probability per token under the generating policy.
  std::vector<double> logProbs;

  std::size_t size() const { return tokens.size(); }
  bool operator==(const TokenSequence&) const = default;
};

// Fixed-window feed-forward scorer:
//   x      = concat(embed[t_{n-window}], ..., embed[t_{n-1}])   (empty slots are zero)
//   h_l    = tanh(hidden.l.weight * h_{l-1} + hidden.l.bias)     l = 0..layers-1, h_{-1} = x
//   logits = output.weight * h_{layers-1} + output.bias
struct Architecture {
  std::size_t vocabSize = 16;
  std::size_t embedDim = 8;
  std::size_t hiddenDim = 32;
  std::size_t layers = 1;
  std::size_t window = 8;
  std::size_t contextLength = 64;

  bool operator==(const Architecture&) const = default;
};

struct AdapterSpec {
  std::string target;  // "embed", "hidden.<l>.weight" or "output.weight"
  std::size_t rank = 4;
  double alpha = 4.0;
  double dropout = 0.1;
};

// Low-rank update W + (alpha/rank) * B * A on a 2-D parameter. The factor
// tensors live in the model's parameters as "adapter.<target>.A" (rank x in)
// and "adapter.<target>.B" (out x rank).
struct LowRankAdapter {
  std::string target;
  std::size_t rank = 0;
  double alpha = 0.0;
  double dropout = 0.0;

  double scale() const { return alpha / static_cast<double>(rank); }
  std::string nameA() const { return "adapter." + target + ".A"; }
  std::string nameB() const { return "adapter." + target + ".B"; }
};

class PolicyModel {
 public:
  static PolicyModel zeros(const Architecture& arch);
  // Xavier-uniform weights scaled by `initScale`, uniform(-1,1) embeddings, zero biases.
  static PolicyModel random(const Architecture& arch, std::uint64_t seed, double initScale = 1.0);
  static PolicyModel fromCheckpoint(const Checkpoint& ckpt);
  Checkpoint toCheckpoint() const;

  const Architecture& architecture() const { return arch_; }
  const Checkpoint& parameters() const { return params_; }
  // Shapes must not be changed through this reference.
  Checkpoint& mutableParameters() { return params_; }

  TokenId endToken() const { return static_cast<TokenId>(arch_.vocabSize - 1); }

  // Names of the 2-D parameters an adapter may target.
  std::vector<std::string> adaptableTargets() const;
  // A ~ uniform(+-1/sqrt(in)), B = 0, so the attached adapter starts as a no-op.
  void attachAdapter(const AdapterSpec& spec, std::uint64_t seed);
  // Folds every adapter into its base tensor and removes it.
  void mergeAdapters();
  const std::vector<LowRankAdapter>& adapters() const { return adapters_; }
  bool hasAdapters() const { return !adapters_.empty(); }

  // With adapters attached the base is frozen unless this is set to false.
  bool frozenBase() const { return frozenBase_; }
  void setFrozenBase(bool frozen) { frozenBase_ = frozen; }
  bool baseTrainable() const { return !(frozenBase_ && hasAdapters()); }
  // One flag per parameter entry, in entry order.
  std::vector<bool> trainableMask() const;

  // Entry indices resolved once per layout change.
  struct Layout {
    std::size_t embed = 0;
    std::vector<std::size_t> weight;  // linear layers 0..layers (last = output)
    std::vector<std::size_t> bias;
    struct Slot {
      bool present = false;
      std::size_t a = 0, b = 0;
      double scale = 0.0, dropout = 0.0;
    };
    Slot embedAdapter;
    std::vector<Slot> linearAdapter;
  };
  const Layout& layout() const { return layout_; }

 private:
  PolicyModel(Architecture arch, Checkpoint params);
  void rebuildLayout();

  Architecture arch_;
  Checkpoint params_;
  std::vector<LowRankAdapter> adapters_;
  bool frozenBase_ = true;
  Layout layout_;
};

// Log-probabilities of the next token given `prefix`.
// Throws ContractViolation when prefix.size() >= contextLength.
std::vector<double> forwardLogProbs(const PolicyModel& model, std::span<const TokenId> prefix);

// Samples from softmax(logits / temperature) until the end token or the
// context limit (or `maxNewTokens`). Recorded logProbs are under the
// untempered policy.
TokenSequence sample(const PolicyModel& model, std::span<const TokenId> prompt, double temperature,
                     std::uint64_t seed, std::size_t maxNewTokens = SIZE_MAX);

// Argmax decoding; ties go to the lowest token id.
TokenSequence greedyDecode(const PolicyModel& model, std::span<const TokenId> prompt,
                           std::size_t maxNewTokens = SIZE_MAX);

struct SequenceScore {
  double total = 0.0;
  std::size_t length = 0;
};

SequenceScore logProbOfSequence(const PolicyModel& model, std::span<const TokenId> prompt,
                                std::span<const TokenId> completion);

struct WeightedCompletion {
  std::span<const TokenId> prompt;
  std::span<const TokenId> completion;
  double weight = 0.0;
};

// Gradient of sum_i weight_i * log pi(completion_i | prompt_i). The result
// has one entry per model parameter; frozen entries stay zero. When
// `dropoutSeed` is set, adapter dropout is active with masks that are a
// pure function of (seed, item, position).
Checkpoint gradLogProbWeighted(const PolicyModel& model, std::span<const WeightedCompletion> batch,
                               std::optional<std::uint64_t> dropoutSeed = std::nullopt);

// Same objective value as the gradient above, for verification and reporting.
double weightedLogProb(const PolicyModel& model, std::span<const WeightedCompletion> batch,
                       std::optional<std::uint64_t> dropoutSeed = std::nullopt);

}  // namespace rlvr
