#pragma once

#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace maskprop {

// Dense row-major tensor of doubles. Axis order for rank-4 tensors is
// (t, y, x, c): depth, rows, cols, channels.
struct Tensor {
  std::vector<int> dims;
  std::vector<double> v;

  Tensor() = default;
  explicit Tensor(std::vector<int> d) : dims(std::move(d)) {
    v.assign(static_cast<std::size_t>(count(dims)), 0.0);
  }
  Tensor(std::vector<int> d, double fill) : dims(std::move(d)) {
    v.assign(static_cast<std::size_t>(count(dims)), fill);
  }

  static Tensor scalar(double x) {
    Tensor t({1});
    t.v[0] = x;
    return t;
  }

  static long count(const std::vector<int>& d) {
    long n = 1;
    for (int k : d) {
      if (k <= 0) throw std::invalid_argument("tensor: non-positive dim");
      n *= k;
    }
    return n;
  }

  long numel() const { return static_cast<long>(v.size()); }
  int rank() const { return static_cast<int>(dims.size()); }
  int dim(int i) const { return dims[static_cast<std::size_t>(i)]; }

  bool same_shape(const Tensor& o) const { return dims == o.dims; }

  // rank-4 accessors
  long idx4(int t, int y, int x, int c) const {
    return ((static_cast<long>(t) * dims[1] + y) * dims[2] + x) * dims[3] + c;
  }
  double& at4(int t, int y, int x, int c) { return v[static_cast<std::size_t>(idx4(t, y, x, c))]; }
  double at4(int t, int y, int x, int c) const { return v[static_cast<std::size_t>(idx4(t, y, x, c))]; }

  void fill(double x) { std::fill(v.begin(), v.end(), x); }

  std::string shape_str() const {
    std::string s = "(";
    for (std::size_t i = 0; i < dims.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(dims[i]);
    }
    return s + ")";
  }
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace maskprop
