#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "lttr/tensor.hpp"

namespace lttr {

uint64_t splitmix64(uint64_t& state);
// Independent sub-seed for a named stream of a master seed.
uint64_t derive_seed(uint64_t master, uint64_t stream);

// Deterministic across platforms: mt19937_64 is fully specified by the
// standard, and the distributions here are hand-rolled (std:: distribution
// objects are not portable).
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  double uniform01();  // [0, 1)
  double uniform(double a, double b);
  double normal(double mean, double stddev);
  int64_t randint(int64_t n);  // [0, n)

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i)
      std::swap(v[i], v[randint(i + 1)]);
  }

 private:
  std::mt19937_64 eng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

struct Parameter {
  std::string name;
  Tensor tensor;
};

// Insertion-ordered; the order defines the checkpoint layout.
class ParamStore {
 public:
  Tensor add(const std::string& name, Tensor t);
  bool has(const std::string& name) const { return index_.count(name) > 0; }
  const Tensor& get(const std::string& name) const;
  const std::vector<Parameter>& all() const { return params_; }
  int64_t total_elements() const;
  void zero_grad();

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, size_t> index_;
};

// Weight matrices: U(-1/sqrt(fan_in), 1/sqrt(fan_in)). Biases: zero.
// Embedding memories: N(0, 0.02).
Tensor make_weight(ParamStore& ps, const std::string& name, const Shape& shape,
                   int64_t fan_in, Rng& rng);
Tensor make_bias(ParamStore& ps, const std::string& name, int64_t n);
Tensor make_embedding(ParamStore& ps, const std::string& name,
                      const Shape& shape, Rng& rng);

struct Linear {
  Tensor w;  // (in, out)
  Tensor b;  // (out)
};
Linear make_linear(ParamStore& ps, const std::string& prefix, int64_t in,
                   int64_t out, Rng& rng);
Tensor apply_linear(const Linear& l, const Tensor& x);  // x (..., in)

struct LayerNormParams {
  Tensor gain;  // ones at init
  Tensor bias;  // zeros at init
};
LayerNormParams make_layer_norm(ParamStore& ps, const std::string& prefix,
                                int64_t n);
Tensor apply_layer_norm(const LayerNormParams& p, const Tensor& x);

class Sgd {
 public:
  Sgd(double lr, double momentum) : lr_(lr), momentum_(momentum) {}
  void step(ParamStore& ps);

 private:
  double lr_, momentum_;
  std::vector<std::vector<double>> vel_;
};

class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}
  void step(ParamStore& ps);

 private:
  double lr_, b1_, b2_, eps_;
  int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// Binary file: little-endian doubles, parameters flat-concatenated in store
// order. Sidecar <path>.json: {"format", "config", "params":[{name, offset
// (elements), shape}]}. config_json_text must be a valid JSON document.
void save_checkpoint(const ParamStore& ps, const std::string& path,
                     const std::string& config_json_text);
// Fills an already-built store by name; every store entry must be present
// with a matching shape and no extras may remain. Returns the embedded
// config document text.
std::string load_checkpoint(ParamStore& ps, const std::string& path);
std::string read_checkpoint_config(const std::string& path);

struct GradCheckOptions {
  double eps = 1e-5;
  int64_t max_per_param = 0;  // 0 checks every element
  uint64_t seed = 0;          // element sampling when max_per_param > 0
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  int64_t worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
  int64_t checked = 0;
  bool finite = true;
  std::string note;
};

// f must be a deterministic function of the store's current values.
// Relative error uses denominator max(1, |analytic|); perturbed evaluations
// run under NoGradGuard.
GradCheckReport check_gradients(const std::function<Tensor()>& f,
                                ParamStore& params,
                                const GradCheckOptions& opt = {});

}  // namespace lttr
