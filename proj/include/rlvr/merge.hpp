#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "rlvr/tasks.hpp"
#include "rlvr/tensor.hpp"
#include "rlvr/verifier.hpp"

namespace rlvr {

struct MergeInput {
  std::filesystem::path path;
  double weight = 0.0;
};

// JSON form:
//   {"inputs": [{"path": "...", "weight": 0.5}, ...],
//    "output": "merged.ckpt",
//    "allow-negative-weights": false}
struct MergeSpec {
  std::vector<MergeInput> inputs;
  std::filesystem::path outputPath;
  bool allowNegativeWeights = false;
};

MergeSpec mergeSpecFromJson(const nlohmann::json& j);
MergeSpec loadMergeSpec(const std::filesystem::path& path);

// At least two finite weights summing to 1 within 1e-9, none negative unless
// allowed. Throws InvalidSpec.
void validateWeights(std::span<const double> weights, bool allowNegative = false);

// out = sum_k w_k * in_k, entrywise. Each sum is the correctly rounded value
// of the exact sum of the rounded products, so the result does not depend on
// input order; zero-weight inputs do not contribute. Metadata comes from the
// first input plus "merge.weights".
// Throws InvalidSpec, then IncompatibleCheckpoints.
Checkpoint mergeLinear(std::span<const Checkpoint> inputs, std::span<const double> weights,
                       bool allowNegative = false);

// Validates weights, reads the inputs and merges; also records "merge.inputs".
// Writes nothing.
Checkpoint mergeLinear(const MergeSpec& spec);

// Hex SHA-256 over entry names, shapes and payload bytes; metadata is ignored.
std::string tensorDigest(const Checkpoint& ckpt);

// All weight vectors of length k on the simplex with coordinates in
// multiples of `step` (1/step must be an integer), in lexicographic order.
std::vector<std::vector<double>> simplexGrid(std::size_t k, double step);

struct SweepRow {
  std::vector<double> weights;
  double passAt1 = 0.0;
};

// Evaluates every merged grid point on `heldOut` and returns all rows by
// pass@1 descending, ties by weights ascending (lexicographic).
std::vector<SweepRow> sweepMergeWeights(std::span<const Checkpoint> checkpoints,
                                        const std::vector<std::vector<double>>& grid,
                                        const std::vector<QuestionRecord>& heldOut,
                                        JudgeClient* judge = nullptr);

}  // namespace rlvr
