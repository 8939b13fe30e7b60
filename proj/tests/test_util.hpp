#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "rlvr/policy.hpp"
#include "rlvr/random.hpp"

namespace rlvr::testing {

// 16-token vocabulary, two hidden layers, 160 parameters.
inline Architecture tinyArch() {
  Architecture a;
  a.vocabSize = 16;
  a.embedDim = 2;
  a.hiddenDim = 4;
  a.layers = 2;
  a.window = 3;
  a.contextLength = 12;
  return a;
}

// Hand-built policy that, given one of the listed prefixes, puts a logit of
// `margin` on the listed next token. Every rule gets a hidden unit that
// saturates to +1 only when the (right-aligned) window equals the prefix
// exactly; unlisted prefixes tie and decode to token 0. Two tables built
// from the same keys share everything but the output layer.
using PrefixRule = std::pair<std::vector<TokenId>, TokenId>;

inline PolicyModel tableModel(const std::vector<PrefixRule>& rules, std::size_t window = 8,
                              std::size_t contextLength = 16, double margin = 20.0) {
  Architecture a;
  a.vocabSize = 16;
  a.embedDim = 16;
  a.hiddenDim = rules.size();
  a.layers = 1;
  a.window = window;
  a.contextLength = contextLength;
  PolicyModel m = PolicyModel::zeros(a);
  Checkpoint& p = m.mutableParameters();
  for (std::size_t t = 0; t < 16; ++t) p.at("embed").at(t, t) = 1.0;
  const double s = 10.0;
  for (std::size_t r = 0; r < rules.size(); ++r) {
    const auto& key = rules[r].first;
    const std::size_t offset = window - key.size();
    for (std::size_t j = 0; j < window; ++j) {
      if (j < offset) {
        for (std::size_t t = 0; t < 16; ++t) p.at("hidden.0.weight").at(r, j * 16 + t) = -2.0 * s;
      } else {
        p.at("hidden.0.weight").at(r, j * 16 + key[j - offset]) = 2.0 * s;
      }
    }
    p.at("hidden.0.bias")[r] = -s * (2.0 * static_cast<double>(key.size()) - 1.0);
    p.at("output.weight").at(rules[r].second, r) += margin / 2.0;
    p.at("output.bias")[rules[r].second] += margin / 2.0;
  }
  return m;
}

// Table policy that answers every question with `answerOf(q)` followed by
// the end token. Prompts plus answers must fit in the window.
inline PolicyModel answerTable(const std::vector<std::vector<TokenId>>& prompts,
                               const std::vector<std::vector<TokenId>>& answers, std::size_t window = 8,
                               std::size_t contextLength = 16) {
  std::vector<PrefixRule> rules;
  for (std::size_t q = 0; q < prompts.size(); ++q) {
    std::vector<TokenId> prefix = prompts[q];
    for (TokenId t : answers[q]) {
      rules.push_back({prefix, t});
      prefix.push_back(t);
    }
    rules.push_back({prefix, 15});
  }
  return tableModel(rules, window, contextLength);
}

struct FdResult {
  double maxRelError = 0.0;
  std::size_t checked = 0;
};

// Central differences of `f` against `analytic` over every trainable
// coordinate. Relative error is |a - n| / max(|a|, |n|, floor).
inline FdResult finiteDifferenceCheck(const PolicyModel& model, const Checkpoint& analytic,
                                      const std::function<double(const PolicyModel&)>& f, double h = 1e-5,
                                      double floor = 1e-6) {
  FdResult r;
  const auto mask = model.trainableMask();
  PolicyModel probe = model;
  for (std::size_t e = 0; e < probe.parameters().entries.size(); ++e) {
    if (!mask[e]) continue;
    auto data = probe.mutableParameters().entries[e].tensor.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double x0 = data[i];
      data[i] = x0 + h;
      const double up = f(probe);
      data[i] = x0 - h;
      const double down = f(probe);
      data[i] = x0;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic.entries[e].tensor[i];
      const double denom = std::max({std::fabs(a), std::fabs(numeric), floor});
      r.maxRelError = std::max(r.maxRelError, std::fabs(a - numeric) / denom);
      ++r.checked;
    }
  }
  return r;
}

inline std::filesystem::path tempDir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("rlvr_lab_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace rlvr::testing
