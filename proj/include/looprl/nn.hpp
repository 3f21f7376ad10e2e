#pragma once

// Actor-critic network over graph observations: two GATv2 layers, mean/max
// readout, a shared SELU trunk and separate policy and value heads. Gradients
// are derived by hand; the scalar type is a template parameter so tests can
// run in double and training in float.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "looprl/features.hpp"
#include "looprl/util.hpp"

namespace looprl::nn {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Readout { kMean, kSum };

inline const char* readout_name(Readout r) { return r == Readout::kMean ? "mean" : "sum"; }

inline Readout parse_readout(const std::string& s) {
  if (s == "mean") return Readout::kMean;
  if (s == "sum") return Readout::kSum;
  throw Error("unknown readout '" + s + "' (expected mean or sum)");
}

enum class Component { kBackbone, kShared, kPolicy, kValue };

inline const char* component_name(Component c) {
  switch (c) {
    case Component::kBackbone: return "backbone";
    case Component::kShared: return "shared";
    case Component::kPolicy: return "policy";
    case Component::kValue: return "value";
  }
  return "?";
}

inline Component parse_component(const std::string& s) {
  for (Component c : {Component::kBackbone, Component::kShared, Component::kPolicy, Component::kValue})
    if (s == component_name(c)) return c;
  throw Error("unknown network component '" + s + "'");
}

struct NetConfig {
  int features = FeatureLayout::kWidth;
  int heads = 4;
  int head_dim = 128;
  int hidden = 128;  // GAT output width
  int mlp = 128;     // trunk and head width
  int actions = 56;
  Readout readout = Readout::kMean;

  int readout_width() const { return 4 * hidden; }

  nlohmann::json to_json() const {
    return {{"features", features}, {"heads", heads},     {"head_dim", head_dim},
            {"hidden", hidden},     {"mlp", mlp},         {"actions", actions},
            {"readout", readout_name(readout)}};
  }
  static NetConfig from_json(const nlohmann::json& j) {
    NetConfig c;
    c.features = j.at("features").get<int>();
    c.heads = j.at("heads").get<int>();
    c.head_dim = j.at("head_dim").get<int>();
    c.hidden = j.at("hidden").get<int>();
    c.mlp = j.at("mlp").get<int>();
    c.actions = j.at("actions").get<int>();
    c.readout = parse_readout(j.at("readout").get<std::string>());
    return c;
  }
  bool operator==(const NetConfig&) const = default;
};

template <class T>
struct Tensor {
  std::string name;
  Component component = Component::kBackbone;
  Mat<T> value;
  Mat<T> grad;
};

inline constexpr double kSeluLambda = 1.0507009873554804934193349852946;
inline constexpr double kSeluAlpha = 1.6732632423543772848170429916717;
inline constexpr double kLeakySlope = 0.2;

template <class T>
T selu(T x) {
  return x > T(0) ? T(kSeluLambda) * x : T(kSeluLambda * kSeluAlpha) * (std::exp(x) - T(1));
}

template <class T>
T selu_grad(T x) {
  return x > T(0) ? T(kSeluLambda) : T(kSeluLambda * kSeluAlpha) * std::exp(x);
}

/// Several observations stacked into one block-diagonal graph. Neighbour
/// lists are stored CSR-style and always start with the node itself.
template <class T>
struct GraphBatch {
  Mat<T> x;
  std::vector<int> nbr_offsets;  // size nodes + 1
  std::vector<int> nbr;
  std::vector<int> graph_offsets;  // size graphs + 1

  int nodes() const { return static_cast<int>(x.rows()); }
  int graphs() const { return static_cast<int>(graph_offsets.size()) - 1; }
};

template <class T>
GraphBatch<T> make_batch(const std::vector<const GraphObservation*>& obs) {
  GraphBatch<T> b;
  int total = 0;
  int width = -1;
  b.graph_offsets.push_back(0);
  for (const auto* o : obs) {
    if (o->nodes() == 0) throw Error("empty graph");
    if (width >= 0 && o->x.cols() != width) throw Error("observations have different widths");
    width = static_cast<int>(o->x.cols());
    total += o->nodes();
    b.graph_offsets.push_back(total);
  }
  if (obs.empty()) throw Error("empty batch");
  b.x.resize(total, width);
  std::vector<std::vector<int>> adj(static_cast<std::size_t>(total));
  int base = 0;
  for (const auto* o : obs) {
    b.x.middleRows(base, o->nodes()) = o->x.cast<T>();
    for (int r = 0; r < o->nodes(); ++r) adj[static_cast<std::size_t>(base + r)].push_back(base + r);
    for (const auto& [p, c] : o->edges) {
      if (p < 0 || c < 0 || p >= o->nodes() || c >= o->nodes()) throw Error("dangling edge index");
      adj[static_cast<std::size_t>(base + p)].push_back(base + c);
      adj[static_cast<std::size_t>(base + c)].push_back(base + p);
    }
    base += o->nodes();
  }
  b.nbr_offsets.push_back(0);
  for (const auto& a : adj) {
    b.nbr.insert(b.nbr.end(), a.begin(), a.end());
    b.nbr_offsets.push_back(static_cast<int>(b.nbr.size()));
  }
  return b;
}

template <class T>
GraphBatch<T> make_batch(const GraphObservation& o) {
  return make_batch<T>(std::vector<const GraphObservation*>{&o});
}

template <class T>
struct GatCache {
  Mat<T> in, s, d, c, y, out;
  Mat<T> z;      // per neighbour entry: heads * head_dim
  Mat<T> alpha;  // per neighbour entry: heads
};

template <class T>
struct DenseCache {
  Mat<T> in, pre;
};

template <class T>
struct ForwardCache {
  GatCache<T> gat[2];
  Mat<T> readout;
  std::vector<int> argmax[2];  // graphs x hidden, node index of the max
  std::vector<DenseCache<T>> trunk, policy, value;
};

template <class T>
struct ForwardOutput {
  Mat<T> logits;  // graphs x actions
  Mat<T> value;   // graphs x 1
};

template <class T>
class ActorCritic {
 public:
  ActorCritic() : ActorCritic(NetConfig{}, 0) {}
  ActorCritic(const NetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    build();
    Rng rng(seed);
    initialize(rng);
  }

  const NetConfig& config() const { return cfg_; }
  std::vector<Tensor<T>>& tensors() { return params_; }
  const std::vector<Tensor<T>>& tensors() const { return params_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : params_) n += static_cast<std::size_t>(t.value.size());
    return n;
  }

  /// Hash over tensor names, shapes and the readout mode.
  std::uint64_t layout_hash() const {
    std::string s = cfg_.readout == Readout::kMean ? "mean;" : "sum;";
    for (const auto& t : params_)
      s += t.name + ":" + component_name(t.component) + ":" + std::to_string(t.value.rows()) + "x" +
           std::to_string(t.value.cols()) + ";";
    return fnv1a64(s);
  }

  /// Fresh values for every tensor of one component.
  void initialize_component(Component c, Rng& rng) {
    for (std::size_t k = 0; k < params_.size(); ++k)
      if (params_[k].component == c) init_tensor(k, rng);
  }

  void zero_grad() {
    for (auto& t : params_) t.grad.setZero();
  }

  /// Graph embedding (readout of both GAT layers), graphs x 4*hidden.
  Mat<T> embed(const GraphBatch<T>& b) const {
    ForwardCache<T> cache;
    run_backbone(b, cache);
    return cache.readout;
  }

  ForwardOutput<T> forward(const GraphBatch<T>& b, ForwardCache<T>* cache = nullptr) const {
    ForwardCache<T> local;
    ForwardCache<T>& c = cache ? *cache : local;
    run_backbone(b, c);
    const Mat<T> h = dense_stack(c.readout, trunk_, true, c.trunk);
    ForwardOutput<T> out;
    out.logits = dense_stack(h, policy_, false, c.policy);
    out.value = dense_stack(h, value_, false, c.value);
    return out;
  }

  /// Accumulates parameter gradients for d(loss)/d(logits) and
  /// d(loss)/d(value). Either may be empty (treated as zero).
  void backward(const GraphBatch<T>& b, const ForwardCache<T>& c, const Mat<T>& dlogits, const Mat<T>& dvalue) {
    const int graphs = b.graphs();
    Mat<T> dh = Mat<T>::Zero(graphs, cfg_.mlp);
    if (dlogits.size() > 0) dh += dense_stack_backward(dlogits, policy_, false, c.policy);
    if (dvalue.size() > 0) dh += dense_stack_backward(dvalue, value_, false, c.value);
    const Mat<T> dread = dense_stack_backward(dh, trunk_, true, c.trunk);
    // Readout backward.
    const int H = cfg_.hidden;
    Mat<T> dout[2] = {Mat<T>::Zero(b.nodes(), H), Mat<T>::Zero(b.nodes(), H)};
    for (int g = 0; g < graphs; ++g) {
      const int lo = b.graph_offsets[static_cast<std::size_t>(g)];
      const int n = b.graph_offsets[static_cast<std::size_t>(g) + 1] - lo;
      const T scale = cfg_.readout == Readout::kMean ? T(1) / T(n) : T(1);
      for (int layer = 0; layer < 2; ++layer) {
        const int base = layer * 2 * H;
        for (int r = lo; r < lo + n; ++r) dout[layer].row(r) += scale * dread.row(g).segment(base, H);
        for (int k = 0; k < H; ++k) {
          const int arg = c.argmax[layer][static_cast<std::size_t>(g * H + k)];
          dout[layer](arg, k) += dread(g, base + H + k);
        }
      }
    }
    const Mat<T> din2 = gat_backward(1, c.gat[1], b, dout[1], true);
    dout[0] += din2;
    gat_backward(0, c.gat[0], b, dout[0], false);
  }

  /// Copies the values of the given components from `other`, which must have
  /// the same layout for those tensors.
  void copy_components(const ActorCritic& other, const std::vector<Component>& which) {
    for (auto& t : params_) {
      if (std::find(which.begin(), which.end(), t.component) == which.end()) continue;
      const Tensor<T>* src = other.find(t.name);
      if (src == nullptr || src->value.rows() != t.value.rows() || src->value.cols() != t.value.cols())
        throw Error("shape mismatch for tensor '" + t.name + "'");
      t.value = src->value;
    }
  }

  const Tensor<T>* find(const std::string& name) const {
    for (const auto& t : params_)
      if (t.name == name) return &t;
    return nullptr;
  }
  Tensor<T>* find(const std::string& name) {
    for (auto& t : params_)
      if (t.name == name) return &t;
    return nullptr;
  }

  template <class U>
  ActorCritic<U> cast() const {
    ActorCritic<U> out(cfg_, 0);
    for (std::size_t k = 0; k < params_.size(); ++k) out.tensors()[k].value = params_[k].value.template cast<U>();
    return out;
  }

  bool all_finite() const {
    for (const auto& t : params_)
      if (!t.value.allFinite()) return false;
    return true;
  }

 private:
  struct Gat {
    int ws, wd, a, wo, bo;
  };
  struct Dense {
    int w, b;
  };

  int add(const std::string& name, Component c, int rows, int cols) {
    Tensor<T> t;
    t.name = name;
    t.component = c;
    t.value = Mat<T>::Zero(rows, cols);
    t.grad = Mat<T>::Zero(rows, cols);
    params_.push_back(std::move(t));
    return static_cast<int>(params_.size()) - 1;
  }

  void build() {
    if (cfg_.features < 1 || cfg_.heads < 1 || cfg_.head_dim < 1 || cfg_.hidden < 1 || cfg_.mlp < 1 || cfg_.actions < 1)
      throw Error("network dimensions must be positive");
    const int hd = cfg_.heads * cfg_.head_dim;
    for (int l = 0; l < 2; ++l) {
      const int in = l == 0 ? cfg_.features : cfg_.hidden;
      const std::string p = "gat" + std::to_string(l + 1) + ".";
      gat_[l].ws = add(p + "w_src", Component::kBackbone, in, hd);
      gat_[l].wd = add(p + "w_dst", Component::kBackbone, in, hd);
      gat_[l].a = add(p + "attn", Component::kBackbone, cfg_.heads, cfg_.head_dim);
      gat_[l].wo = add(p + "w_out", Component::kBackbone, hd, cfg_.hidden);
      gat_[l].bo = add(p + "b_out", Component::kBackbone, 1, cfg_.hidden);
    }
    auto dense = [&](const std::string& name, Component c, int in, int out) {
      return Dense{add(name + ".w", c, in, out), add(name + ".b", c, 1, out)};
    };
    trunk_ = {dense("shared1", Component::kShared, cfg_.readout_width(), cfg_.mlp),
              dense("shared2", Component::kShared, cfg_.mlp, cfg_.mlp)};
    policy_ = {dense("policy1", Component::kPolicy, cfg_.mlp, cfg_.mlp),
               dense("policy2", Component::kPolicy, cfg_.mlp, cfg_.mlp),
               dense("policy3", Component::kPolicy, cfg_.mlp, cfg_.actions)};
    value_ = {dense("value1", Component::kValue, cfg_.mlp, cfg_.mlp),
              dense("value2", Component::kValue, cfg_.mlp, cfg_.mlp),
              dense("value3", Component::kValue, cfg_.mlp, 1)};
  }

  // LeCun normal for weights, zero biases; the last policy layer starts small
  // so the initial policy is close to uniform.
  void init_tensor(std::size_t k, Rng& rng) {
    Tensor<T>& t = params_[k];
    if (t.name.size() >= 2 && (t.name.ends_with(".b") || t.name.ends_with("b_out"))) {
      t.value.setZero();
      return;
    }
    const double fan_in = t.name.ends_with("attn") ? static_cast<double>(cfg_.head_dim) : static_cast<double>(t.value.rows());
    double std = 1.0 / std::sqrt(fan_in);
    if (t.name == "policy3.w") std *= 0.01;
    for (Eigen::Index i = 0; i < t.value.size(); ++i) t.value.data()[i] = static_cast<T>(rng.normal() * std);
  }

  void initialize(Rng& rng) {
    for (std::size_t k = 0; k < params_.size(); ++k) init_tensor(k, rng);
  }

  const Mat<T>& P(int idx) const { return params_[static_cast<std::size_t>(idx)].value; }
  Mat<T>& G(int idx) { return params_[static_cast<std::size_t>(idx)].grad; }

  void gat_forward(int layer, const Mat<T>& in, const GraphBatch<T>& b, GatCache<T>& c) const {
    const Gat& g = gat_[layer];
    const int H = cfg_.heads;
    const int D = cfg_.head_dim;
    const T slope = T(kLeakySlope);
    c.in = in;
    c.s.noalias() = in * P(g.ws);
    c.d.noalias() = in * P(g.wd);
    const int entries = static_cast<int>(b.nbr.size());
    c.z.resize(entries, H * D);
    c.alpha.resize(entries, H);
    c.c = Mat<T>::Zero(b.nodes(), H * D);
    const Mat<T>& a = P(g.a);
    for (int i = 0; i < b.nodes(); ++i) {
      const int e0 = b.nbr_offsets[static_cast<std::size_t>(i)];
      const int e1 = b.nbr_offsets[static_cast<std::size_t>(i) + 1];
      for (int h = 0; h < H; ++h) {
        T best = -std::numeric_limits<T>::infinity();
        for (int e = e0; e < e1; ++e) {
          const int j = b.nbr[static_cast<std::size_t>(e)];
          auto z = c.z.row(e).segment(h * D, D);
          z = c.s.row(i).segment(h * D, D) + c.d.row(j).segment(h * D, D);
          T score = T(0);
          for (int k = 0; k < D; ++k) {
            const T v = z(k);
            score += a(h, k) * (v > T(0) ? v : slope * v);
          }
          c.alpha(e, h) = score;
          best = std::max(best, score);
        }
        T total = T(0);
        for (int e = e0; e < e1; ++e) {
          c.alpha(e, h) = std::exp(c.alpha(e, h) - best);
          total += c.alpha(e, h);
        }
        for (int e = e0; e < e1; ++e) {
          c.alpha(e, h) /= total;
          const int j = b.nbr[static_cast<std::size_t>(e)];
          c.c.row(i).segment(h * D, D) += c.alpha(e, h) * c.d.row(j).segment(h * D, D);
        }
      }
    }
    c.y.noalias() = c.c * P(g.wo);
    c.y.rowwise() += P(g.bo).row(0);
    c.out = c.y.unaryExpr([](T v) { return selu(v); });
  }

  Mat<T> gat_backward(int layer, const GatCache<T>& c, const GraphBatch<T>& b, const Mat<T>& dout, bool need_input) {
    const Gat& g = gat_[layer];
    const int H = cfg_.heads;
    const int D = cfg_.head_dim;
    const T slope = T(kLeakySlope);
    const Mat<T> dy = dout.cwiseProduct(c.y.unaryExpr([](T v) { return selu_grad(v); }));
    G(g.wo).noalias() += c.c.transpose() * dy;
    G(g.bo) += dy.colwise().sum();
    const Mat<T> dc = dy * P(g.wo).transpose();
    Mat<T> ds = Mat<T>::Zero(b.nodes(), H * D);
    Mat<T> dd = Mat<T>::Zero(b.nodes(), H * D);
    const Mat<T>& a = P(g.a);
    Mat<T>& da = G(g.a);
    std::vector<T> dalpha;
    for (int i = 0; i < b.nodes(); ++i) {
      const int e0 = b.nbr_offsets[static_cast<std::size_t>(i)];
      const int e1 = b.nbr_offsets[static_cast<std::size_t>(i) + 1];
      dalpha.assign(static_cast<std::size_t>(e1 - e0), T(0));
      for (int h = 0; h < H; ++h) {
        const auto dci = dc.row(i).segment(h * D, D);
        T weighted = T(0);
        for (int e = e0; e < e1; ++e) {
          const int j = b.nbr[static_cast<std::size_t>(e)];
          const T al = c.alpha(e, h);
          const T dal = dci.dot(c.d.row(j).segment(h * D, D));
          dalpha[static_cast<std::size_t>(e - e0)] = dal;
          weighted += al * dal;
          dd.row(j).segment(h * D, D) += al * dci;
        }
        for (int e = e0; e < e1; ++e) {
          const int j = b.nbr[static_cast<std::size_t>(e)];
          const T de = c.alpha(e, h) * (dalpha[static_cast<std::size_t>(e - e0)] - weighted);
          if (de == T(0)) continue;
          for (int k = 0; k < D; ++k) {
            const T v = c.z(e, h * D + k);
            const T u = v > T(0) ? v : slope * v;
            da(h, k) += de * u;
            const T dz = de * a(h, k) * (v > T(0) ? T(1) : slope);
            ds(i, h * D + k) += dz;
            dd(j, h * D + k) += dz;
          }
        }
      }
    }
    G(g.ws).noalias() += c.in.transpose() * ds;
    G(g.wd).noalias() += c.in.transpose() * dd;
    if (!need_input) return {};
    Mat<T> din = ds * P(g.ws).transpose();
    din.noalias() += dd * P(g.wd).transpose();
    return din;
  }

  void run_backbone(const GraphBatch<T>& b, ForwardCache<T>& c) const {
    if (b.x.cols() != cfg_.features)
      throw Error("observation width " + std::to_string(b.x.cols()) + " does not match network input " +
                  std::to_string(cfg_.features));
    gat_forward(0, b.x, b, c.gat[0]);
    gat_forward(1, c.gat[0].out, b, c.gat[1]);
    const int H = cfg_.hidden;
    const int graphs = b.graphs();
    c.readout.resize(graphs, 4 * H);
    for (int layer = 0; layer < 2; ++layer) {
      const Mat<T>& out = c.gat[layer].out;
      c.argmax[layer].assign(static_cast<std::size_t>(graphs * H), 0);
      for (int g = 0; g < graphs; ++g) {
        const int lo = b.graph_offsets[static_cast<std::size_t>(g)];
        const int n = b.graph_offsets[static_cast<std::size_t>(g) + 1] - lo;
        if (n == 0) throw Error("empty graph");
        auto block = out.middleRows(lo, n);
        Eigen::Matrix<T, 1, Eigen::Dynamic> pooled = block.colwise().sum();
        if (cfg_.readout == Readout::kMean) pooled /= T(n);
        c.readout.row(g).segment(layer * 2 * H, H) = pooled;
        for (int k = 0; k < H; ++k) {
          int arg = lo;
          for (int r = lo + 1; r < lo + n; ++r)
            if (out(r, k) > out(arg, k)) arg = r;
          c.argmax[layer][static_cast<std::size_t>(g * H + k)] = arg;
          c.readout(g, layer * 2 * H + H + k) = out(arg, k);
        }
      }
    }
  }

  Mat<T> dense_stack(const Mat<T>& x, const std::vector<Dense>& layers, bool activate_last,
                     std::vector<DenseCache<T>>& cache) const {
    cache.assign(layers.size(), {});
    Mat<T> h = x;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      cache[l].in = h;
      cache[l].pre.noalias() = h * P(layers[l].w);
      cache[l].pre.rowwise() += P(layers[l].b).row(0);
      const bool act = activate_last || l + 1 < layers.size();
      h = act ? Mat<T>(cache[l].pre.unaryExpr([](T v) { return selu(v); })) : cache[l].pre;
    }
    return h;
  }

  Mat<T> dense_stack_backward(const Mat<T>& dy, const std::vector<Dense>& layers, bool activate_last,
                              const std::vector<DenseCache<T>>& cache) {
    Mat<T> d = dy;
    for (std::size_t l = layers.size(); l-- > 0;) {
      const bool act = activate_last || l + 1 < layers.size();
      if (act) d = d.cwiseProduct(cache[l].pre.unaryExpr([](T v) { return selu_grad(v); }));
      G(layers[l].w).noalias() += cache[l].in.transpose() * d;
      G(layers[l].b) += d.colwise().sum();
      d = Mat<T>(d * P(layers[l].w).transpose());
    }
    return d;
  }

  NetConfig cfg_;
  std::vector<Tensor<T>> params_;
  Gat gat_[2]{};
  std::vector<Dense> trunk_, policy_, value_;
};

/// Adam with the usual defaults (beta1 0.9, beta2 0.999, eps 1e-8).
template <class T>
class Adam {
 public:
  explicit Adam(double lr = 1e-4, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  std::int64_t steps() const { return t_; }

  /// Updates every tensor whose component is in `which` (all when empty).
  void step(std::vector<Tensor<T>>& params, const std::vector<Component>& which = {}) {
    if (m_.size() != params.size()) {
      m_.clear();
      v_.clear();
      for (const auto& p : params) {
        m_.push_back(Mat<T>::Zero(p.value.rows(), p.value.cols()));
        v_.push_back(Mat<T>::Zero(p.value.rows(), p.value.cols()));
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    const T step = static_cast<T>(lr_ * std::sqrt(c2) / c1);
    const T b1 = static_cast<T>(b1_);
    const T b2 = static_cast<T>(b2_);
    const T eps = static_cast<T>(eps_ * std::sqrt(c2));
    for (std::size_t k = 0; k < params.size(); ++k) {
      if (!which.empty() && std::find(which.begin(), which.end(), params[k].component) == which.end()) continue;
      Mat<T>& m = m_[k];
      Mat<T>& v = v_[k];
      const Mat<T>& g = params[k].grad;
      m = b1 * m + (T(1) - b1) * g;
      v = b2 * v + (T(1) - b2) * g.cwiseProduct(g);
      params[k].value.array() -= step * m.array() / (v.array().sqrt() + eps);
    }
  }

 private:
  double lr_, b1_, b2_, eps_;
  std::int64_t t_ = 0;
  std::vector<Mat<T>> m_, v_;
};

inline constexpr char kCheckpointMagic[8] = {'L', 'O', 'O', 'P', 'R', 'L', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace ckpt_detail {

template <class V>
void put(std::ostream& out, const V& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <class V>
V get(std::istream& in, const std::string& path) {
  V v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!in) throw Error("checkpoint '" + path + "' is truncated");
  return v;
}

inline void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& in, const std::string& path) {
  const auto n = get<std::uint32_t>(in, path);
  if (n > (1u << 24)) throw Error("checkpoint '" + path + "' is corrupt");
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw Error("checkpoint '" + path + "' is truncated");
  return s;
}

}  // namespace ckpt_detail

/// Binary container: magic, version, network config (JSON), layout hash,
/// free-form metadata (JSON), then every tensor as name, component, shape
/// and float64 values.
template <class T>
void save_checkpoint(const std::string& path, const ActorCritic<T>& net, const nlohmann::json& meta = nlohmann::json::object()) {
  using namespace ckpt_detail;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint '" + path + "'");
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  put(out, kCheckpointVersion);
  put_string(out, net.config().to_json().dump());
  put<std::uint64_t>(out, net.layout_hash());
  put_string(out, meta.dump());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(net.tensors().size()));
  for (const auto& t : net.tensors()) {
    put_string(out, t.name);
    put_string(out, component_name(t.component));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.value.rows()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.value.cols()));
    for (Eigen::Index i = 0; i < t.value.size(); ++i) put<double>(out, static_cast<double>(t.value.data()[i]));
  }
  if (!out) throw Error("failed writing checkpoint '" + path + "'");
}

template <class T>
struct LoadedCheckpoint {
  ActorCritic<T> net;
  nlohmann::json meta;
};

template <class T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
  using namespace ckpt_detail;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint '" + path + "'");
  char magic[sizeof(kCheckpointMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) throw Error("'" + path + "' is not a checkpoint");
  const auto version = get<std::uint32_t>(in, path);
  if (version != kCheckpointVersion) throw Error("checkpoint '" + path + "' has unsupported version " + std::to_string(version));
  NetConfig cfg;
  try {
    cfg = NetConfig::from_json(nlohmann::json::parse(get_string(in, path)));
  } catch (const nlohmann::json::exception& e) {
    throw Error("checkpoint '" + path + "': bad config: " + e.what());
  }
  const auto hash = get<std::uint64_t>(in, path);
  LoadedCheckpoint<T> out{ActorCritic<T>(cfg, 0), {}};
  if (hash != out.net.layout_hash()) throw Error("checkpoint '" + path + "': layout hash mismatch");
  out.meta = nlohmann::json::parse(get_string(in, path), nullptr, false);
  if (out.meta.is_discarded()) throw Error("checkpoint '" + path + "': bad metadata");
  const auto count = get<std::uint32_t>(in, path);
  if (count != out.net.tensors().size()) throw Error("checkpoint '" + path + "': tensor count mismatch");
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::string name = get_string(in, path);
    const Component comp = parse_component(get_string(in, path));
    const auto rows = get<std::uint32_t>(in, path);
    const auto cols = get<std::uint32_t>(in, path);
    Tensor<T>* t = out.net.find(name);
    if (t == nullptr || t->component != comp || t->value.rows() != rows || t->value.cols() != cols)
      throw Error("checkpoint '" + path + "': unexpected tensor '" + name + "'");
    for (Eigen::Index i = 0; i < t->value.size(); ++i) t->value.data()[i] = static_cast<T>(get<double>(in, path));
  }
  return out;
}

}  // namespace looprl::nn
