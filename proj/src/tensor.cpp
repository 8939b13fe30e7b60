#include "rlvr/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "rlvr/error.hpp"

namespace rlvr {
namespace {

constexpr char kMagic[8] = {'R', 'L', 'V', 'R', 'C', 'K', 'P', 'T'};
constexpr int kFormatVersion = 1;

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void putU64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t getU64(std::string_view in) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(in[i]);
  return v;
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)), data_(product(shape_), 0.0) {
  for (std::size_t d : shape_)
    if (d == 0) throw ContractViolation("tensor dimensions must be positive");
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (std::size_t d : shape_)
    if (d == 0) throw ContractViolation("tensor dimensions must be positive");
  if (product(shape_) != data_.size())
    throw ContractViolation("tensor data length does not match shape");
}

std::size_t Tensor::cols() const {
  if (shape_.size() <= 1) return 1;
  return std::accumulate(shape_.begin() + 1, shape_.end(), std::size_t{1}, std::multiplies<>());
}

bool Tensor::allFinite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor& Checkpoint::add(std::string name, Tensor t) {
  if (contains(name)) throw ContractViolation("duplicate parameter name: " + name);
  entries.push_back({std::move(name), std::move(t)});
  return entries.back().tensor;
}

std::size_t Checkpoint::indexOf(const std::string& name) const {
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (entries[i].name == name) return i;
  return entries.size();
}

bool Checkpoint::contains(const std::string& name) const { return indexOf(name) < entries.size(); }

const Tensor& Checkpoint::at(const std::string& name) const {
  const std::size_t i = indexOf(name);
  if (i == entries.size()) throw ContractViolation("no parameter named " + name);
  return entries[i].tensor;
}

Tensor& Checkpoint::at(const std::string& name) {
  return const_cast<Tensor&>(std::as_const(*this).at(name));
}

std::size_t Checkpoint::parameterCount() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.tensor.size();
  return n;
}

Checkpoint Checkpoint::zerosLike() const {
  Checkpoint out;
  out.entries.reserve(entries.size());
  for (const auto& e : entries) out.entries.push_back({e.name, Tensor(e.tensor.shape())});
  return out;
}

bool mergeCompatible(const Checkpoint& a, const Checkpoint& b) {
  if (a.entries.size() != b.entries.size()) return false;
  for (std::size_t i = 0; i < a.entries.size(); ++i) {
    if (a.entries[i].name != b.entries[i].name) return false;
    if (a.entries[i].tensor.shape() != b.entries[i].tensor.shape()) return false;
  }
  return true;
}

std::string serializeCheckpoint(const Checkpoint& ckpt) {
  nlohmann::ordered_json header;
  header["format"] = "rlvr-ckpt";
  header["version"] = kFormatVersion;
  header["dtype"] = "f64";
  auto tensors = nlohmann::ordered_json::array();
  std::uint64_t offset = 0;
  for (const auto& e : ckpt.entries) {
    if (!e.tensor.allFinite()) throw ContractViolation("non-finite entry in tensor " + e.name);
    tensors.push_back({{"name", e.name},
                       {"shape", e.tensor.shape()},
                       {"offset", offset},
                       {"count", e.tensor.size()}});
    offset += 8 * e.tensor.size();
  }
  header["tensors"] = std::move(tensors);
  nlohmann::ordered_json meta = nlohmann::ordered_json::object();
  for (const auto& [k, v] : ckpt.metadata) meta[k] = v;
  header["metadata"] = std::move(meta);
  const std::string headerText = header.dump();

  std::string out;
  out.reserve(16 + headerText.size() + offset);
  out.append(kMagic, sizeof(kMagic));
  putU64(out, headerText.size());
  out.append(headerText);
  for (const auto& e : ckpt.entries) {
    for (double v : e.tensor.data()) putU64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

Checkpoint deserializeCheckpoint(std::string_view bytes, const std::string& origin) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw IoError(origin, "not a checkpoint file (bad magic)");
  const std::uint64_t headerLen = getU64(bytes.substr(8, 8));
  if (headerLen > bytes.size() - 16) throw IoError(origin, "truncated checkpoint header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(16, headerLen));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(origin, std::string("malformed checkpoint header: ") + e.what());
  }
  if (header.value("dtype", "") != "f64") throw IoError(origin, "unsupported dtype");
  const std::string_view payload = bytes.substr(16 + headerLen);

  Checkpoint ckpt;
  try {
    for (const auto& t : header.at("tensors")) {
      auto shape = t.at("shape").get<std::vector<std::size_t>>();
      const auto off = t.at("offset").get<std::uint64_t>();
      const auto count = t.at("count").get<std::uint64_t>();
      if (count != product(shape)) throw IoError(origin, "tensor count/shape mismatch");
      if (off + 8 * count > payload.size()) throw IoError(origin, "truncated tensor payload");
      std::vector<double> data(count);
      for (std::uint64_t i = 0; i < count; ++i)
        data[i] = std::bit_cast<double>(getU64(payload.substr(off + 8 * i, 8)));
      Tensor tensor(std::move(shape), std::move(data));
      if (!tensor.allFinite()) throw IoError(origin, "non-finite value in tensor");
      ckpt.add(t.at("name").get<std::string>(), std::move(tensor));
    }
    for (const auto& [k, v] : header.at("metadata").items()) ckpt.metadata[k] = v.get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(origin, std::string("malformed checkpoint header: ") + e.what());
  } catch (const ContractViolation& e) {
    throw IoError(origin, e.what());
  }
  return ckpt;
}

void writeCheckpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::string bytes = serializeCheckpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path.string(), "cannot open for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(path.string(), "write failed");
}

Checkpoint readCheckpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string(), "cannot open checkpoint");
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserializeCheckpoint(ss.str(), path.string());
}

}  // namespace rlvr
