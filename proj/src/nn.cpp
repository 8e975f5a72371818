#include "lttr/nn.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "json.hpp"

namespace lttr {

uint64_t splitmix64(uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

uint64_t derive_seed(uint64_t master, uint64_t stream) {
  uint64_t s = master ^ (0xa0761d6478bd642fULL * (stream + 1));
  return splitmix64(s);
}

double Rng::uniform01() {
  return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double a, double b) { return a + (b - a) * uniform01(); }

double Rng::normal(double mean, double stddev) {
  if (have_spare_) {
    have_spare_ = false;
    return mean + stddev * spare_;
  }
  double u, v, s;
  do {
    u = 2.0 * uniform01() - 1.0;
    v = 2.0 * uniform01() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double m = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v * m;
  have_spare_ = true;
  return mean + stddev * u * m;
}

int64_t Rng::randint(int64_t n) {
  if (n <= 0) throw NumericError("randint: n must be positive");
  const uint64_t un = static_cast<uint64_t>(n);
  const uint64_t limit = std::numeric_limits<uint64_t>::max() -
                         std::numeric_limits<uint64_t>::max() % un;
  uint64_t x;
  do {
    x = eng_();
  } while (x >= limit);
  return static_cast<int64_t>(x % un);
}

Tensor ParamStore::add(const std::string& name, Tensor t) {
  if (index_.count(name))
    throw ConfigError("duplicate parameter name: " + name);
  if (!t.requires_grad())
    throw ConfigError("parameter " + name + " must require grad");
  index_[name] = params_.size();
  params_.push_back({name, t});
  return t;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
  return params_[it->second].tensor;
}

int64_t ParamStore::total_elements() const {
  int64_t n = 0;
  for (const Parameter& p : params_) n += p.tensor.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (Parameter& p : params_) p.tensor.zero_grad();
}

Tensor make_weight(ParamStore& ps, const std::string& name, const Shape& shape,
                   int64_t fan_in, Rng& rng) {
  if (fan_in <= 0) throw ConfigError("make_weight: fan_in must be positive");
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> data(shape_numel(shape));
  for (double& v : data) v = rng.uniform(-bound, bound);
  return ps.add(name, Tensor::leaf(shape, std::move(data)));
}

Tensor make_bias(ParamStore& ps, const std::string& name, int64_t n) {
  return ps.add(name, Tensor::leaf({n}, std::vector<double>(n, 0.0)));
}

Tensor make_embedding(ParamStore& ps, const std::string& name,
                      const Shape& shape, Rng& rng) {
  std::vector<double> data(shape_numel(shape));
  for (double& v : data) v = rng.normal(0.0, 0.02);
  return ps.add(name, Tensor::leaf(shape, std::move(data)));
}

Linear make_linear(ParamStore& ps, const std::string& prefix, int64_t in,
                   int64_t out, Rng& rng) {
  Linear l;
  l.w = make_weight(ps, prefix + ".w", {in, out}, in, rng);
  l.b = make_bias(ps, prefix + ".b", out);
  return l;
}

Tensor apply_linear(const Linear& l, const Tensor& x) {
  const int64_t in = l.w.shape()[0];
  if (x.rank() == 2) return add(matmul(x, l.w), l.b);
  if (x.shape().back() != in)
    throw ShapeError("linear: input " + shape_str(x.shape()) +
                     " does not end in " + std::to_string(in));
  Tensor flat = reshape(x, {x.numel() / in, in});
  Tensor y = add(matmul(flat, l.w), l.b);
  Shape os = x.shape();
  os.back() = l.w.shape()[1];
  return reshape(y, os);
}

LayerNormParams make_layer_norm(ParamStore& ps, const std::string& prefix,
                                int64_t n) {
  LayerNormParams p;
  p.gain = ps.add(prefix + ".gain", Tensor::leaf({n}, std::vector<double>(n, 1.0)));
  p.bias = make_bias(ps, prefix + ".bias", n);
  return p;
}

Tensor apply_layer_norm(const LayerNormParams& p, const Tensor& x) {
  return layer_norm(x, p.gain, p.bias);
}

void Sgd::step(ParamStore& ps) {
  auto& params = ps.all();
  if (vel_.size() != params.size()) {
    vel_.clear();
    for (const Parameter& p : params)
      vel_.emplace_back(p.tensor.numel(), 0.0);
  }
  for (size_t k = 0; k < params.size(); ++k) {
    Tensor t = params[k].tensor;
    t.node_->ensure_grad();
    const std::vector<double>& g = t.node_->grad;
    std::vector<double>& v = vel_[k];
    std::vector<double>& w = t.raw_value();
    for (size_t i = 0; i < w.size(); ++i) {
      v[i] = momentum_ * v[i] + g[i];
      w[i] -= lr_ * v[i];
    }
  }
}

void Adam::step(ParamStore& ps) {
  auto& params = ps.all();
  if (m_.size() != params.size()) {
    m_.clear();
    v_.clear();
    for (const Parameter& p : params) {
      m_.emplace_back(p.tensor.numel(), 0.0);
      v_.emplace_back(p.tensor.numel(), 0.0);
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (size_t k = 0; k < params.size(); ++k) {
    Tensor t = params[k].tensor;
    t.node_->ensure_grad();
    const std::vector<double>& g = t.node_->grad;
    std::vector<double>& m = m_[k];
    std::vector<double>& v = v_[k];
    std::vector<double>& w = t.raw_value();
    for (size_t i = 0; i < w.size(); ++i) {
      m[i] = b1_ * m[i] + (1.0 - b1_) * g[i];
      v[i] = b2_ * v[i] + (1.0 - b2_) * g[i] * g[i];
      const double mh = m[i] / c1;
      const double vh = v[i] / c2;
      w[i] -= lr_ * mh / (std::sqrt(vh) + eps_);
    }
  }
}

namespace {

void write_le_doubles(std::ofstream& out, const std::vector<double>& v) {
  // Assumes little-endian IEEE-754 host; static_assert guards the layout.
  static_assert(sizeof(double) == 8);
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * 8));
}

}  // namespace

void save_checkpoint(const ParamStore& ps, const std::string& path,
                     const std::string& config_json_text) {
  nlohmann::json cfg;
  try {
    cfg = nlohmann::json::parse(config_json_text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("checkpoint config is not valid JSON: ") +
                      e.what());
  }
  std::ofstream bin(path, std::ios::binary | std::ios::trunc);
  if (!bin) throw IoError("cannot open " + path + " for writing");
  nlohmann::json index;
  index["format"] = "lttr-checkpoint-v1";
  index["config"] = cfg;
  index["params"] = nlohmann::json::array();
  int64_t offset = 0;
  for (const Parameter& p : ps.all()) {
    write_le_doubles(bin, p.tensor.value());
    nlohmann::json e;
    e["name"] = p.name;
    e["offset"] = offset;
    e["shape"] = p.tensor.shape();
    index["params"].push_back(e);
    offset += p.tensor.numel();
  }
  bin.flush();
  if (!bin) throw IoError("write failed for " + path);
  std::ofstream js(path + ".json", std::ios::trunc);
  if (!js) throw IoError("cannot open " + path + ".json for writing");
  js << index.dump(2) << "\n";
  if (!js) throw IoError("write failed for " + path + ".json");
}

namespace {

nlohmann::json load_index(const std::string& path) {
  std::ifstream js(path + ".json");
  if (!js) throw IoError("cannot open " + path + ".json");
  nlohmann::json index;
  try {
    js >> index;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("bad checkpoint index: ") + e.what());
  }
  if (!index.is_object() || index.value("format", "") != "lttr-checkpoint-v1")
    throw IoError("unrecognized checkpoint format in " + path + ".json");
  return index;
}

}  // namespace

std::string load_checkpoint(ParamStore& ps, const std::string& path) {
  nlohmann::json index = load_index(path);
  std::ifstream bin(path, std::ios::binary);
  if (!bin) throw IoError("cannot open " + path);

  std::unordered_map<std::string, std::pair<int64_t, Shape>> entries;
  for (const auto& e : index["params"]) {
    Shape shape;
    for (const auto& d : e["shape"]) shape.push_back(d.get<int64_t>());
    entries[e["name"].get<std::string>()] = {e["offset"].get<int64_t>(), shape};
  }
  for (const Parameter& p : ps.all()) {
    auto it = entries.find(p.name);
    if (it == entries.end())
      throw IoError("checkpoint " + path + " is missing parameter " + p.name);
    if (it->second.second != p.tensor.shape())
      throw IoError("checkpoint shape " + shape_str(it->second.second) +
                    " for " + p.name + " does not match model " +
                    shape_str(p.tensor.shape()));
    Tensor t = p.tensor;
    bin.seekg(static_cast<std::streamoff>(it->second.first * 8));
    bin.read(reinterpret_cast<char*>(t.raw_value().data()),
             static_cast<std::streamsize>(t.numel() * 8));
    if (!bin) throw IoError("short read from " + path + " at " + p.name);
    entries.erase(it);
  }
  if (!entries.empty())
    throw IoError("checkpoint " + path + " has extra parameter " +
                  entries.begin()->first);
  return index["config"].dump();
}

std::string read_checkpoint_config(const std::string& path) {
  return load_index(path)["config"].dump();
}

GradCheckReport check_gradients(const std::function<Tensor()>& f,
                                ParamStore& params,
                                const GradCheckOptions& opt) {
  GradCheckReport rep;
  params.zero_grad();
  Tensor base = f();
  if (base.numel() != 1)
    throw ShapeError("check_gradients: f must return a scalar");
  if (!std::isfinite(base.item())) {
    rep.finite = false;
    rep.note = "f is non-finite at the base point";
    return rep;
  }
  base.backward();

  std::vector<std::vector<double>> analytic;
  for (const Parameter& p : params.all()) {
    Tensor t = p.tensor;
    t.node_->ensure_grad();
    analytic.push_back(t.node_->grad);
  }

  const auto eval = [&]() {
    NoGradGuard ng;
    return f().item();
  };

  const auto& plist = params.all();
  for (size_t k = 0; k < plist.size(); ++k) {
    Tensor t = plist[k].tensor;
    std::vector<double>& w = t.raw_value();
    const int64_t n = t.numel();

    std::vector<int64_t> idx;
    if (opt.max_per_param > 0 && n > opt.max_per_param) {
      std::vector<int64_t> all(n);
      for (int64_t i = 0; i < n; ++i) all[i] = i;
      Rng srng(derive_seed(opt.seed, 0x6772616400ULL + k));
      for (int64_t i = 0; i < opt.max_per_param; ++i) {
        std::swap(all[i], all[i + srng.randint(n - i)]);
        idx.push_back(all[i]);
      }
    } else {
      idx.resize(n);
      for (int64_t i = 0; i < n; ++i) idx[i] = i;
    }

    for (int64_t i : idx) {
      const double save = w[i];
      w[i] = save + opt.eps;
      const double fp = eval();
      w[i] = save - opt.eps;
      const double fm = eval();
      w[i] = save;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        rep.finite = false;
        rep.note = "f is non-finite near " + plist[k].name + "[" +
                   std::to_string(i) + "]";
        return rep;
      }
      const double num = (fp - fm) / (2.0 * opt.eps);
      const double ana = analytic[k][i];
      const double rel = std::fabs(ana - num) / std::max(1.0, std::fabs(ana));
      ++rep.checked;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst_param = plist[k].name;
        rep.worst_index = i;
        rep.analytic = ana;
        rep.numeric = num;
      }
    }
  }
  return rep;
}

}  // namespace lttr
