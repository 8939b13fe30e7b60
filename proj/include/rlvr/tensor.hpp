#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace rlvr {

// Dense row-major float64 tensor.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  // Product of all trailing dimensions; 1 for vectors.
  std::size_t cols() const;

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  std::span<double> row(std::size_t r) { return std::span<double>(data_).subspan(r * cols(), cols()); }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols(), cols());
  }

  bool allFinite() const;
  void fill(double v);
  bool operator==(const Tensor&) const = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
  bool operator==(const NamedTensor&) const = default;
};

// Ordered collection of named parameter tensors plus string metadata.
class Checkpoint {
 public:
  std::vector<NamedTensor> entries;
  std::map<std::string, std::string> metadata;

  // Appends a new entry; throws ContractViolation on a duplicate name.
  Tensor& add(std::string name, Tensor t);
  bool contains(const std::string& name) const;
  // Index of `name`, or entries.size() when absent.
  std::size_t indexOf(const std::string& name) const;
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  std::size_t parameterCount() const;

  // Same shapes, all entries zero, no metadata.
  Checkpoint zerosLike() const;

  bool operator==(const Checkpoint&) const = default;
};

// Names, order and shapes all match.
bool mergeCompatible(const Checkpoint& a, const Checkpoint& b);

// Container layout:
//   8 bytes   magic "RLVRCKPT"
//   8 bytes   header length N, uint64 little-endian
//   N bytes   UTF-8 JSON header: {"format","version","dtype":"f64",
//             "tensors":[{"name","shape","offset","count"}...],"metadata":{...}}
//   payload   tensors in header order, little-endian IEEE-754 float64;
//             "offset" is the byte offset from the start of the payload.
void writeCheckpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint readCheckpoint(const std::filesystem::path& path);

std::string serializeCheckpoint(const Checkpoint& ckpt);
Checkpoint deserializeCheckpoint(std::string_view bytes, const std::string& origin = "<memory>");

}  // namespace rlvr
