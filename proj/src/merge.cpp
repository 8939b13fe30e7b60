#include "rlvr/merge.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>

#include "rlvr/digest.hpp"
#include "rlvr/error.hpp"
#include "rlvr/eval.hpp"
#include "rlvr/policy.hpp"

namespace rlvr {
namespace {

// Shewchuk's exact partials summation, rounded once at the end.
double exactSum(std::span<const double> xs) {
  std::vector<double> partials;
  for (double x : xs) {
    std::size_t i = 0;
    for (double y : partials) {
      if (std::fabs(x) < std::fabs(y)) std::swap(x, y);
      const double hi = x + y;
      const double lo = y - (hi - x);
      if (lo != 0.0) partials[i++] = lo;
      x = hi;
    }
    partials.resize(i);
    partials.push_back(x);
  }
  if (partials.empty()) return 0.0;
  double hi = partials.back();
  std::size_t n = partials.size() - 1;
  double lo = 0.0;
  while (n > 0) {
    const double x = hi;
    const double y = partials[--n];
    hi = x + y;
    lo = y - (hi - x);
    if (lo != 0.0) break;
  }
  // Half-way case: correct the rounding using the next partial's sign.
  if (n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0))) {
    const double y = lo * 2.0;
    const double x = hi + y;
    if (y == x - hi) hi = x;
  }
  return hi;
}

std::string weightsJson(std::span<const double> weights) {
  nlohmann::json j = nlohmann::json::array();
  for (double w : weights) j.push_back(w);
  return j.dump();
}

}  // namespace

MergeSpec mergeSpecFromJson(const nlohmann::json& j) {
  MergeSpec spec;
  try {
    for (const auto& in : j.at("inputs"))
      spec.inputs.push_back({in.at("path").get<std::string>(), in.at("weight").get<double>()});
    if (j.contains("output")) spec.outputPath = j.at("output").get<std::string>();
    spec.allowNegativeWeights = j.value("allow-negative-weights", false);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidSpec(std::string("malformed merge spec: ") + e.what());
  }
  return spec;
}

MergeSpec loadMergeSpec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string(), "cannot open merge spec");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidSpec(path.string() + ": " + e.what());
  }
  MergeSpec spec = mergeSpecFromJson(j);
  // Relative input paths are resolved against the spec's directory.
  const auto base = path.parent_path();
  for (auto& in : spec.inputs)
    if (in.path.is_relative()) in.path = base / in.path;
  if (!spec.outputPath.empty() && spec.outputPath.is_relative()) spec.outputPath = base / spec.outputPath;
  return spec;
}

void validateWeights(std::span<const double> weights, bool allowNegative) {
  if (weights.size() < 2) throw InvalidSpec("a merge needs at least two inputs");
  double sum = 0.0;
  for (double w : weights) {
    if (!std::isfinite(w)) throw InvalidSpec("merge weight is not finite");
    if (w < 0.0 && !allowNegative)
      throw InvalidSpec("negative merge weight " + std::to_string(w) + " (set allow-negative-weights to permit)");
    sum += w;
  }
  if (std::fabs(exactSum(weights) - 1.0) > 1e-9)
    throw InvalidSpec("merge weights sum to " + std::to_string(sum) + ", expected 1");
}

Checkpoint mergeLinear(std::span<const Checkpoint> inputs, std::span<const double> weights, bool allowNegative) {
  if (inputs.size() != weights.size()) throw InvalidSpec("number of weights differs from number of inputs");
  validateWeights(weights, allowNegative);
  for (std::size_t k = 1; k < inputs.size(); ++k)
    if (!mergeCompatible(inputs[0], inputs[k]))
      throw IncompatibleCheckpoints("input " + std::to_string(k) + " differs from input 0 in names, order or shapes");

  Checkpoint out = inputs[0].zerosLike();
  out.metadata = inputs[0].metadata;
  out.metadata["merge.weights"] = weightsJson(weights);

  std::vector<std::size_t> active;
  for (std::size_t k = 0; k < inputs.size(); ++k)
    if (weights[k] != 0.0) active.push_back(k);

  std::vector<double> terms(active.size());
  for (std::size_t e = 0; e < out.entries.size(); ++e) {
    auto dst = out.entries[e].tensor.data();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      for (std::size_t a = 0; a < active.size(); ++a)
        terms[a] = weights[active[a]] * inputs[active[a]].entries[e].tensor[i];
      dst[i] = terms.size() == 1 ? terms[0] : exactSum(terms);
    }
  }
  return out;
}

Checkpoint mergeLinear(const MergeSpec& spec) {
  std::vector<double> weights;
  for (const auto& in : spec.inputs) weights.push_back(in.weight);
  validateWeights(weights, spec.allowNegativeWeights);
  std::vector<Checkpoint> inputs;
  nlohmann::json refs = nlohmann::json::array();
  for (const auto& in : spec.inputs) {
    inputs.push_back(readCheckpoint(in.path));
    refs.push_back(in.path.filename().string());
  }
  Checkpoint out = mergeLinear(inputs, weights, spec.allowNegativeWeights);
  out.metadata["merge.inputs"] = refs.dump();
  return out;
}

std::string tensorDigest(const Checkpoint& ckpt) {
  std::string bytes;
  for (const auto& e : ckpt.entries) {
    bytes += e.name;
    bytes.push_back('\0');
    for (std::size_t d : e.tensor.shape()) bytes += std::to_string(d) + ",";
    bytes.push_back('\0');
    for (double v : e.tensor.data()) {
      std::uint64_t u = std::bit_cast<std::uint64_t>(v);
      for (int b = 0; b < 8; ++b) bytes.push_back(static_cast<char>((u >> (8 * b)) & 0xff));
    }
  }
  return sha256Hex(bytes);
}

std::vector<std::vector<double>> simplexGrid(std::size_t k, double step) {
  if (k < 2) throw InvalidSpec("simplex grid needs at least two coordinates");
  if (!(step > 0.0) || step > 1.0) throw InvalidSpec("grid step must lie in (0, 1]");
  const double stepsD = 1.0 / step;
  const auto steps = static_cast<std::size_t>(std::llround(stepsD));
  if (std::fabs(stepsD - static_cast<double>(steps)) > 1e-9) throw InvalidSpec("1/step must be an integer");

  std::vector<std::vector<double>> out;
  std::vector<std::size_t> counts(k, 0);
  // Enumerate compositions of `steps` into k parts, lexicographically.
  auto rec = [&](auto&& self, std::size_t pos, std::size_t left) -> void {
    if (pos + 1 == k) {
      counts[pos] = left;
      std::vector<double> w(k);
      for (std::size_t i = 0; i < k; ++i) w[i] = static_cast<double>(counts[i]) / static_cast<double>(steps);
      out.push_back(std::move(w));
      return;
    }
    for (std::size_t c = 0; c <= left; ++c) {
      counts[pos] = c;
      self(self, pos + 1, left - c);
    }
  };
  rec(rec, 0, steps);
  return out;
}

std::vector<SweepRow> sweepMergeWeights(std::span<const Checkpoint> checkpoints,
                                        const std::vector<std::vector<double>>& grid,
                                        const std::vector<QuestionRecord>& heldOut, JudgeClient* judge) {
  if (grid.empty()) throw InvalidSpec("empty weight grid");
  for (const auto& w : grid) {
    if (w.size() != checkpoints.size()) throw InvalidSpec("grid point has the wrong number of weights");
    validateWeights(w);
  }
  std::vector<SweepRow> rows;
  for (const auto& w : grid) {
    const PolicyModel model = PolicyModel::fromCheckpoint(mergeLinear(checkpoints, w));
    EvalOptions opts;
    opts.judge = judge;
    rows.push_back({w, evaluate(model, heldOut, opts).passAt1});
  }
  std::stable_sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) {
    if (a.passAt1 != b.passAt1) return a.passAt1 > b.passAt1;
    return a.weights < b.weights;
  });
  return rows;
}

}  // namespace rlvr
