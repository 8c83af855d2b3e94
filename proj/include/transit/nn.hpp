#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <unordered_map>
#include <vector>

#include "transit/autodiff.hpp"
#include "transit/rng.hpp"

namespace transit::nn {

using ad::Mat;

// Named tensor registry. Insertion order is fixed at construction time and shared
// with optimizer state and serialized checkpoints, so iteration is deterministic.
class ParamStore {
 public:
  int add(const std::string& name, int rows, int cols);
  int id(const std::string& name) const;
  bool has(const std::string& name) const;
  Mat& tensor(int id) { return tensors_[id]; }
  const Mat& tensor(int id) const { return tensors_[id]; }
  Mat& tensor(const std::string& name) { return tensors_[id(name)]; }
  const Mat& tensor(const std::string& name) const { return tensors_[id(name)]; }
  const std::string& name(int id) const { return names_[id]; }
  int count() const { return static_cast<int>(tensors_.size()); }
  size_t scalar_count() const;

 private:
  std::vector<std::string> names_;
  std::vector<Mat> tensors_;
  std::unordered_map<std::string, int> index_;
};

// Fills every tensor with U(-bound, bound), bound = 1/sqrt(fan_in), where fan_in is
// the row count for weight matrices and the column count for single-row tensors.
// Draw order follows registry order, then row-major within a tensor.
void init_uniform(ParamStore& params, Rng& rng);

// Binds store tensors to tape leaves on demand and collects their gradients.
// One binder per tape; grads accumulate across binders for chunked batching.
class ParamBinder {
 public:
  ParamBinder(ad::Tape& tape, const ParamStore& params);
  ad::Var operator()(const std::string& name);
  ad::Var operator()(int id);
  // grads must hold one matrix per store tensor (zero-initialized by callers).
  void accumulate_grads(std::vector<Mat>& grads) const;

 private:
  ad::Tape* tape_;
  const ParamStore* params_;
  std::vector<ad::Var> bound_;
};

std::vector<Mat> zero_grads(const ParamStore& params);

// Linear layers named <prefix>.w0/.b0 ... with ReLU between layers and a bare
// linear output. layers counts the linear stages.
ad::Var mlp_forward(ad::Tape& tape, ParamBinder& bind, const std::string& prefix,
                    int layers, ad::Var input);

// Registers an MLP's tensors: dims = {in, hidden..., out}.
void add_mlp(ParamStore& params, const std::string& prefix, const std::vector<int>& dims);

// AdamW with decoupled weight decay: p -= lr * (mhat / (sqrt(vhat) + eps) + wd * p).
class AdamW {
 public:
  AdamW() = default;
  AdamW(double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
        double eps = 1e-8);
  void attach(const ParamStore& params);  // zeroes state, aligned with the store
  void update(ParamStore& params, const std::vector<Mat>& grads);
  int step() const { return step_; }

  void save(std::ostream& out) const;
  void load(std::istream& in, const ParamStore& params);

  double lr = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

 private:
  std::vector<Mat> m_, v_;
  int step_ = 0;
};

// Binary tensor snapshot: name table plus raw little-endian doubles; loading
// restores values bit for bit. The stream must match the target store's layout.
void save_params(std::ostream& out, const ParamStore& params);
void load_params(std::istream& in, ParamStore& params);

// Raw stream primitives shared by the checkpoint formats. read_mat requires the
// stored shape to match m and throws TransitError on any mismatch or truncation.
void write_u32(std::ostream& out, uint32_t v);
uint32_t read_u32(std::istream& in);
void write_f64(std::ostream& out, double v);
double read_f64(std::istream& in);
void write_mat(std::ostream& out, const Mat& m);
void read_mat(std::istream& in, Mat& m, const std::string& what);

}  // namespace transit::nn
