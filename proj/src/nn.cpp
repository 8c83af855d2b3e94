#include "transit/nn.hpp"

#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "transit/common.hpp"

namespace transit::nn {

void write_u32(std::ostream& out, uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint32_t read_u32(std::istream& in) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw TransitError("tensor stream truncated");
  return v;
}

void write_f64(std::ostream& out, double v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

double read_f64(std::istream& in) {
  double v = 0.0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw TransitError("tensor stream truncated");
  return v;
}

void write_mat(std::ostream& out, const Mat& m) {
  write_u32(out, static_cast<uint32_t>(m.rows()));
  write_u32(out, static_cast<uint32_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) write_f64(out, m(i, j));
}

void read_mat(std::istream& in, Mat& m, const std::string& what) {
  uint32_t rows = read_u32(in);
  uint32_t cols = read_u32(in);
  if (rows != static_cast<uint32_t>(m.rows()) || cols != static_cast<uint32_t>(m.cols()))
    throw TransitError("tensor shape mismatch for " + what);
  for (uint32_t i = 0; i < rows; ++i)
    for (uint32_t j = 0; j < cols; ++j) m(i, j) = read_f64(in);
}

namespace {

constexpr uint32_t kParamMagic = 0x544e4e50;  // "TNNP"
constexpr uint32_t kOptMagic = 0x544f5054;    // "TOPT"

}  // namespace

int ParamStore::add(const std::string& name, int rows, int cols) {
  if (index_.count(name)) throw TransitError("duplicate parameter name: " + name);
  int id = static_cast<int>(tensors_.size());
  names_.push_back(name);
  tensors_.push_back(Mat::Zero(rows, cols));
  index_.emplace(name, id);
  return id;
}

int ParamStore::id(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw TransitError("unknown parameter name: " + name);
  return it->second;
}

bool ParamStore::has(const std::string& name) const { return index_.count(name) > 0; }

size_t ParamStore::scalar_count() const {
  size_t total = 0;
  for (const Mat& t : tensors_) total += static_cast<size_t>(t.size());
  return total;
}

void init_uniform(ParamStore& params, Rng& rng) {
  for (int id = 0; id < params.count(); ++id) {
    Mat& t = params.tensor(id);
    double fan_in = t.rows() > 1 ? static_cast<double>(t.rows())
                                 : static_cast<double>(t.cols());
    double bound = 1.0 / std::sqrt(fan_in);
    for (Eigen::Index i = 0; i < t.rows(); ++i)
      for (Eigen::Index j = 0; j < t.cols(); ++j) t(i, j) = rng.uniform(-bound, bound);
  }
}

ParamBinder::ParamBinder(ad::Tape& tape, const ParamStore& params)
    : tape_(&tape), params_(&params), bound_(params.count()) {}

ad::Var ParamBinder::operator()(int id) {
  if (!bound_[id].valid()) bound_[id] = tape_->param(params_->tensor(id));
  return bound_[id];
}

ad::Var ParamBinder::operator()(const std::string& name) {
  return (*this)(params_->id(name));
}

void ParamBinder::accumulate_grads(std::vector<Mat>& grads) const {
  for (size_t id = 0; id < bound_.size(); ++id)
    if (bound_[id].valid()) grads[id] += tape_->grad(bound_[id]);
}

std::vector<Mat> zero_grads(const ParamStore& params) {
  std::vector<Mat> grads;
  grads.reserve(params.count());
  for (int id = 0; id < params.count(); ++id) {
    const Mat& t = params.tensor(id);
    grads.push_back(Mat::Zero(t.rows(), t.cols()));
  }
  return grads;
}

void add_mlp(ParamStore& params, const std::string& prefix, const std::vector<int>& dims) {
  if (dims.size() < 2) throw TransitError("mlp needs at least one layer");
  for (size_t l = 0; l + 1 < dims.size(); ++l) {
    std::string tag = std::to_string(l);
    params.add(prefix + ".w" + tag, dims[l], dims[l + 1]);
    params.add(prefix + ".b" + tag, 1, dims[l + 1]);
  }
}

ad::Var mlp_forward(ad::Tape& tape, ParamBinder& bind, const std::string& prefix,
                    int layers, ad::Var input) {
  ad::Var h = input;
  for (int l = 0; l < layers; ++l) {
    std::string tag = std::to_string(l);
    h = tape.add_rowvec(tape.matmul(h, bind(prefix + ".w" + tag)),
                        bind(prefix + ".b" + tag));
    if (l + 1 < layers) h = tape.relu(h);
  }
  return h;
}

AdamW::AdamW(double lr_, double weight_decay_, double beta1_, double beta2_, double eps_)
    : lr(lr_), weight_decay(weight_decay_), beta1(beta1_), beta2(beta2_), eps(eps_) {}

void AdamW::attach(const ParamStore& params) {
  m_.clear();
  v_.clear();
  for (int id = 0; id < params.count(); ++id) {
    const Mat& t = params.tensor(id);
    m_.push_back(Mat::Zero(t.rows(), t.cols()));
    v_.push_back(Mat::Zero(t.rows(), t.cols()));
  }
  step_ = 0;
}

void AdamW::update(ParamStore& params, const std::vector<Mat>& grads) {
  if (m_.size() != static_cast<size_t>(params.count()))
    throw TransitError("optimizer not attached to this parameter store");
  ++step_;
  double bc1 = 1.0 - std::pow(beta1, step_);
  double bc2 = 1.0 - std::pow(beta2, step_);
  for (int id = 0; id < params.count(); ++id) {
    Mat& p = params.tensor(id);
    const Mat& g = grads[id];
    m_[id] = beta1 * m_[id] + (1.0 - beta1) * g;
    v_[id] = beta2 * v_[id] + (1.0 - beta2) * g.cwiseProduct(g);
    Mat mhat = m_[id] / bc1;
    Mat vhat = v_[id] / bc2;
    p -= lr * (mhat.array() / (vhat.array().sqrt() + eps)).matrix();
    if (weight_decay != 0.0) p -= lr * weight_decay * p;
  }
}

void AdamW::save(std::ostream& out) const {
  write_u32(out, kOptMagic);
  write_u32(out, 1);
  write_u32(out, static_cast<uint32_t>(step_));
  write_u32(out, static_cast<uint32_t>(m_.size()));
  for (const Mat& t : m_) write_mat(out, t);
  for (const Mat& t : v_) write_mat(out, t);
}

void AdamW::load(std::istream& in, const ParamStore& params) {
  if (read_u32(in) != kOptMagic) throw TransitError("not an optimizer state stream");
  if (read_u32(in) != 1) throw TransitError("unsupported optimizer state version");
  int saved_step = static_cast<int>(read_u32(in));
  uint32_t count = read_u32(in);
  if (count != static_cast<uint32_t>(params.count()))
    throw TransitError("optimizer state tensor count mismatch");
  attach(params);
  step_ = saved_step;
  for (uint32_t i = 0; i < count; ++i) read_mat(in, m_[i], "adam.m");
  for (uint32_t i = 0; i < count; ++i) read_mat(in, v_[i], "adam.v");
}

void save_params(std::ostream& out, const ParamStore& params) {
  write_u32(out, kParamMagic);
  write_u32(out, 1);
  write_u32(out, static_cast<uint32_t>(params.count()));
  for (int id = 0; id < params.count(); ++id) {
    const std::string& name = params.name(id);
    write_u32(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_mat(out, params.tensor(id));
  }
}

void load_params(std::istream& in, ParamStore& params) {
  if (read_u32(in) != kParamMagic) throw TransitError("not a parameter stream");
  if (read_u32(in) != 1) throw TransitError("unsupported parameter stream version");
  uint32_t count = read_u32(in);
  if (count != static_cast<uint32_t>(params.count()))
    throw TransitError("parameter count mismatch");
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t len = read_u32(in);
    std::string name(len, '\0');
    in.read(name.data(), len);
    if (!in) throw TransitError("tensor stream truncated in name table");
    if (name != params.name(static_cast<int>(i)))
      throw TransitError("parameter name mismatch: expected " +
                         params.name(static_cast<int>(i)) + ", found " + name);
    read_mat(in, params.tensor(static_cast<int>(i)), name);
  }
}

}  // namespace transit::nn
