#pragma once

#include <optional>

#include "onnxnet/error.hpp"

// Code of the onnxnet::Error thrown by f, or nullopt if it returns normally.
template <typename F>
std::optional<onnxnet::ErrorCode> error_of(F&& f) {
  try {
    f();
  } catch (const onnxnet::Error& e) {
    return e.code();
  }
  return std::nullopt;
}

#include <cmath>
#include <string>

#include "onnxnet/refexec.hpp"

// Empty when every tensor in `want` has a same-shaped counterpart in `got`
// whose elements satisfy |a - b| <= abs_tol + rel_tol * |b|; otherwise a
// description of the first mismatch.
inline std::string compare_tensors(const onnxnet::TensorMap& got, const onnxnet::TensorMap& want,
                                   double rel_tol = 1e-5, double abs_tol = 1e-6) {
  if (got.size() != want.size()) return "output count differs";
  for (const auto& [name, w] : want) {
    auto it = got.find(name);
    if (it == got.end()) return "missing output " + name;
    const auto& g = it->second;
    if (g.shape != w.shape) return name + ": shape " + g.shape.to_string() + " vs " + w.shape.to_string();
    for (std::size_t i = 0; i < w.data.size(); ++i) {
      const double a = g.data[i], b = w.data[i];
      if (!(std::fabs(a - b) <= abs_tol + rel_tol * std::fabs(b))) {
        return name + "[" + std::to_string(i) + "]: " + std::to_string(a) + " vs " + std::to_string(b);
      }
    }
  }
  return {};
}

#include <filesystem>
#include <fstream>
#include <sstream>

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) : path_(std::filesystem::temp_directory_path() / ("onnxnet_" + tag)) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

inline void spit(const std::filesystem::path& p, const std::string& content) {
  std::ofstream(p, std::ios::binary) << content;
}
