#pragma once

#include <Eigen/Dense>
#include <array>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "psdn/graph.hpp"
#include "psdn/rng.hpp"

namespace psdn::ad {

template <class S>
class ParamStore {
 public:
  Parameter<S>& create(const std::string& name, int rows, int cols,
                       bool trainable = true) {
    if (by_name_.count(name))
      throw DataError("duplicate parameter name '" + name + "'");
    auto p = std::make_unique<Parameter<S>>();
    p->name = name;
    p->value = Mat<S>::Zero(rows, cols);
    p->trainable = trainable;
    p->index = static_cast<int>(params_.size());
    by_name_.emplace(name, p.get());
    params_.push_back(std::move(p));
    return *params_.back();
  }

  Parameter<S>* find(const std::string& name) const {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : it->second;
  }

  const std::vector<std::unique_ptr<Parameter<S>>>& all() const {
    return params_;
  }

  std::size_t scalar_count(bool trainable_only = true) const {
    std::size_t n = 0;
    for (const auto& p : params_)
      if (!trainable_only || p->trainable) n += p->value.size();
    return n;
  }

  std::uint64_t use_count_sum(const std::string& prefix) const {
    std::uint64_t n = 0;
    for (const auto& p : params_)
      if (p->name.rfind(prefix, 0) == 0)
        n += p->use_count.load(std::memory_order_relaxed);
    return n;
  }

 private:
  std::vector<std::unique_ptr<Parameter<S>>> params_;
  std::unordered_map<std::string, Parameter<S>*> by_name_;
};

// Initializers are computed in double and cast, so float and double model
// instantiations start from identical values.
template <class S>
void init_uniform_fan_in(Parameter<S>& p, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (Eigen::Index i = 0; i < p.value.size(); ++i)
    p.value.data()[i] = static_cast<S>(rng.uniform(-bound, bound));
}

template <class S>
void init_gaussian(Parameter<S>& p, double stddev, Rng& rng) {
  for (Eigen::Index i = 0; i < p.value.size(); ++i)
    p.value.data()[i] = static_cast<S>(rng.gaussian() * stddev);
}

template <class S>
void init_constant(Parameter<S>& p, double v) {
  p.value.setConstant(static_cast<S>(v));
}

// Per-gate orthogonal init for recurrent maps: p is [H x (gates*H)].
template <class S>
void init_orthogonal_gates(Parameter<S>& p, int gates, Rng& rng) {
  const int h = static_cast<int>(p.value.rows());
  if (p.value.cols() != static_cast<Eigen::Index>(gates) * h)
    throw DataError("orthogonal init: bad gate layout for '" + p.name + "'");
  for (int gate = 0; gate < gates; ++gate) {
    Eigen::MatrixXd a(h, h);
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < h; ++c) a(r, c) = rng.gaussian();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(h, h);
    Eigen::MatrixXd r_mat = q.transpose() * a;
    for (int c = 0; c < h; ++c)
      if (r_mat(c, c) < 0) q.col(c) = -q.col(c);
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < h; ++c)
        p.value(r, gate * h + c) = static_cast<S>(q(r, c));
  }
}

// Sinusoidal absolute positions, [t_len x dim].
template <class S>
Mat<S> sinusoidal_positions(int t_len, int dim) {
  Mat<S> pe(t_len, dim);
  for (int t = 0; t < t_len; ++t) {
    for (int i = 0; i < dim; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / dim);
      pe(t, i) = static_cast<S>(std::sin(t * freq));
      if (i + 1 < dim) pe(t, i + 1) = static_cast<S>(std::cos(t * freq));
    }
  }
  return pe;
}

// ---- layers -----------------------------------------------------------------

template <class S>
struct Linear {
  using GVar = typename Graph<S>::Var;
  Parameter<S>* w = nullptr;  // [in x out]
  Parameter<S>* b = nullptr;  // [1 x out]

  static Linear create(ParamStore<S>& ps, const std::string& prefix, int in,
                       int out, Rng& rng) {
    Linear l;
    l.w = &ps.create(prefix + ".w", in, out);
    l.b = &ps.create(prefix + ".b", 1, out);
    init_uniform_fan_in(*l.w, in, rng);
    init_uniform_fan_in(*l.b, in, rng);
    return l;
  }

  GVar forward(Graph<S>& g, GVar x) const {
    return g.add_rowvec(g.matmul(x, g.param(*w)), g.param(*b));
  }
};

template <class S>
struct LayerNorm {
  using GVar = typename Graph<S>::Var;
  Parameter<S>* gamma = nullptr;
  Parameter<S>* beta = nullptr;

  static LayerNorm create(ParamStore<S>& ps, const std::string& prefix,
                          int dim) {
    LayerNorm ln;
    ln.gamma = &ps.create(prefix + ".gamma", 1, dim);
    ln.beta = &ps.create(prefix + ".beta", 1, dim);
    init_constant(*ln.gamma, 1.0);
    return ln;
  }

  GVar forward(Graph<S>& g, GVar x) const {
    return g.layer_norm(x, g.param(*gamma), g.param(*beta));
  }
};

template <class S>
struct BatchNorm {
  using GVar = typename Graph<S>::Var;
  Parameter<S>* gamma = nullptr;
  Parameter<S>* beta = nullptr;
  Parameter<S>* run_mean = nullptr;  // buffers, not trainable
  Parameter<S>* run_var = nullptr;

  static BatchNorm create(ParamStore<S>& ps, const std::string& prefix,
                          int channels) {
    BatchNorm bn;
    bn.gamma = &ps.create(prefix + ".gamma", 1, channels);
    bn.beta = &ps.create(prefix + ".beta", 1, channels);
    bn.run_mean = &ps.create(prefix + ".running_mean", 1, channels, false);
    bn.run_var = &ps.create(prefix + ".running_var", 1, channels, false);
    init_constant(*bn.gamma, 1.0);
    init_constant(*bn.run_var, 1.0);
    return bn;
  }

  GVar forward(Graph<S>& g, GVar x) const {
    return g.batchnorm_cols(x, g.param(*gamma), g.param(*beta), *run_mean,
                            *run_var);
  }
};

template <class S>
struct Conv1d {
  using GVar = typename Graph<S>::Var;
  Parameter<S>* w = nullptr;  // [(k*Cin) x Cout]
  Parameter<S>* b = nullptr;
  int kernel = 3, stride = 1, pad = 1;

  static Conv1d create(ParamStore<S>& ps, const std::string& prefix, int cin,
                       int cout, int kernel, int stride, int pad, Rng& rng) {
    Conv1d c;
    c.kernel = kernel;
    c.stride = stride;
    c.pad = pad;
    c.w = &ps.create(prefix + ".w", kernel * cin, cout);
    c.b = &ps.create(prefix + ".b", 1, cout);
    init_uniform_fan_in(*c.w, kernel * cin, rng);
    init_uniform_fan_in(*c.b, kernel * cin, rng);
    return c;
  }

  GVar forward(Graph<S>& g, GVar x) const {
    return g.conv1d(x, g.param(*w), g.param(*b), kernel, stride, pad);
  }
};

// Two k3 convolutions with LeakyReLU, plus a (projected) shortcut.
// `stride` downsamples in the first convolution.
template <class S>
struct ResConvBlock1d {
  using GVar = typename Graph<S>::Var;
  Conv1d<S> conv1, conv2;
  Conv1d<S> shortcut;  // 1x1, only when stride != 1 or cin != cout
  bool projected = false;

  static ResConvBlock1d create(ParamStore<S>& ps, const std::string& prefix,
                               int cin, int cout, int stride, Rng& rng) {
    ResConvBlock1d b;
    b.conv1 = Conv1d<S>::create(ps, prefix + ".conv1", cin, cout, 3, stride, 1,
                                rng);
    b.conv2 = Conv1d<S>::create(ps, prefix + ".conv2", cout, cout, 3, 1, 1,
                                rng);
    b.projected = stride != 1 || cin != cout;
    if (b.projected)
      b.shortcut = Conv1d<S>::create(ps, prefix + ".shortcut", cin, cout, 1,
                                     stride, 0, rng);
    return b;
  }

  GVar forward(Graph<S>& g, GVar x) const {
    GVar y = g.leaky_relu(conv1.forward(g, x));
    y = g.leaky_relu(conv2.forward(g, y));
    GVar s = projected ? shortcut.forward(g, x) : x;
    return g.add(y, s);
  }
};

template <class S>
struct BiLstm {
  using GVar = typename Graph<S>::Var;
  Parameter<S>*fw_ih = nullptr, *fw_hh = nullptr, *fw_b = nullptr;
  Parameter<S>*bw_ih = nullptr, *bw_hh = nullptr, *bw_b = nullptr;

  static BiLstm create(ParamStore<S>& ps, const std::string& prefix, int in,
                       int hidden, Rng& rng) {
    BiLstm l;
    auto make_dir = [&](const std::string& d, Parameter<S>*& w_ih,
                        Parameter<S>*& w_hh, Parameter<S>*& b) {
      w_ih = &ps.create(prefix + "." + d + ".w_ih", in, 4 * hidden);
      w_hh = &ps.create(prefix + "." + d + ".w_hh", hidden, 4 * hidden);
      b = &ps.create(prefix + "." + d + ".b", 1, 4 * hidden);
      init_uniform_fan_in(*w_ih, in, rng);
      init_orthogonal_gates(*w_hh, 4, rng);
      // biases start at zero
    };
    make_dir("fwd", l.fw_ih, l.fw_hh, l.fw_b);
    make_dir("bwd", l.bw_ih, l.bw_hh, l.bw_b);
    return l;
  }

  GVar forward(Graph<S>& g, GVar x) const {
    GVar hf = g.lstm_seq(x, g.param(*fw_ih), g.param(*fw_hh), g.param(*fw_b));
    GVar hb = g.reverse_rows(g.lstm_seq(g.reverse_rows(x), g.param(*bw_ih),
                                        g.param(*bw_hh), g.param(*bw_b)));
    return g.concat_cols({hf, hb});
  }
};

template <class S>
struct Gru {
  using GVar = typename Graph<S>::Var;
  Parameter<S>*w_ih = nullptr, *w_hh = nullptr, *b_ih = nullptr,
              *b_hh = nullptr;

  static Gru create(ParamStore<S>& ps, const std::string& prefix, int in,
                    int hidden, Rng& rng) {
    Gru l;
    l.w_ih = &ps.create(prefix + ".w_ih", in, 3 * hidden);
    l.w_hh = &ps.create(prefix + ".w_hh", hidden, 3 * hidden);
    l.b_ih = &ps.create(prefix + ".b_ih", 1, 3 * hidden);
    l.b_hh = &ps.create(prefix + ".b_hh", 1, 3 * hidden);
    init_uniform_fan_in(*l.w_ih, in, rng);
    init_orthogonal_gates(*l.w_hh, 3, rng);
    return l;
  }

  GVar forward(Graph<S>& g, GVar x) const {
    return g.gru_seq(x, g.param(*w_ih), g.param(*w_hh), g.param(*b_ih),
                     g.param(*b_hh));
  }
};

template <class S>
struct MultiHeadSelfAttention {
  using GVar = typename Graph<S>::Var;
  Linear<S> qkv, out;
  int heads = 4;
  int dim = 0;

  static MultiHeadSelfAttention create(ParamStore<S>& ps,
                                       const std::string& prefix, int dim,
                                       int heads, Rng& rng) {
    if (dim % heads != 0)
      throw DataError("attention dim must be divisible by head count");
    MultiHeadSelfAttention a;
    a.heads = heads;
    a.dim = dim;
    a.qkv = Linear<S>::create(ps, prefix + ".qkv", dim, 3 * dim, rng);
    a.out = Linear<S>::create(ps, prefix + ".out", dim, dim, rng);
    return a;
  }

  GVar forward(Graph<S>& g, GVar x) const {
    const int dh = dim / heads;
    GVar proj = qkv.forward(g, x);
    std::vector<GVar> ctx;
    ctx.reserve(heads);
    for (int h = 0; h < heads; ++h) {
      GVar q = g.slice_cols(proj, h * dh, dh);
      GVar k = g.slice_cols(proj, dim + h * dh, dh);
      GVar v = g.slice_cols(proj, 2 * dim + h * dh, dh);
      GVar scores = g.scale(g.matmul_nt(q, k), 1.0 / std::sqrt(double(dh)));
      ctx.push_back(g.matmul(g.softmax_rows(scores), v));
    }
    return out.forward(g, g.concat_cols(ctx));
  }
};

template <class S>
struct ConformerBlock {
  using GVar = typename Graph<S>::Var;
  LayerNorm<S> ln_ffn1, ln_mhsa, ln_conv, ln_ffn2, ln_final;
  Linear<S> ffn1_in, ffn1_out, ffn2_in, ffn2_out;
  MultiHeadSelfAttention<S> mhsa;
  Linear<S> conv_pw1, conv_pw2;  // pointwise, GLU gate on pw1
  Parameter<S>* conv_dw_w = nullptr;  // [k x dim]
  Parameter<S>* conv_dw_b = nullptr;
  int kernel = 7;

  static ConformerBlock create(ParamStore<S>& ps, const std::string& prefix,
                               int dim, int heads, int ffn_mult, int kernel,
                               Rng& rng) {
    ConformerBlock b;
    b.kernel = kernel;
    b.ln_ffn1 = LayerNorm<S>::create(ps, prefix + ".ln_ffn1", dim);
    b.ffn1_in = Linear<S>::create(ps, prefix + ".ffn1_in", dim, ffn_mult * dim,
                                  rng);
    b.ffn1_out = Linear<S>::create(ps, prefix + ".ffn1_out", ffn_mult * dim,
                                   dim, rng);
    b.ln_mhsa = LayerNorm<S>::create(ps, prefix + ".ln_mhsa", dim);
    b.mhsa = MultiHeadSelfAttention<S>::create(ps, prefix + ".mhsa", dim,
                                               heads, rng);
    b.ln_conv = LayerNorm<S>::create(ps, prefix + ".ln_conv", dim);
    b.conv_pw1 = Linear<S>::create(ps, prefix + ".conv_pw1", dim, 2 * dim, rng);
    b.conv_dw_w = &ps.create(prefix + ".conv_dw.w", kernel, dim);
    b.conv_dw_b = &ps.create(prefix + ".conv_dw.b", 1, dim);
    init_uniform_fan_in(*b.conv_dw_w, kernel, rng);
    init_uniform_fan_in(*b.conv_dw_b, kernel, rng);
    b.conv_pw2 = Linear<S>::create(ps, prefix + ".conv_pw2", dim, dim, rng);
    b.ln_ffn2 = LayerNorm<S>::create(ps, prefix + ".ln_ffn2", dim);
    b.ffn2_in = Linear<S>::create(ps, prefix + ".ffn2_in", dim, ffn_mult * dim,
                                  rng);
    b.ffn2_out = Linear<S>::create(ps, prefix + ".ffn2_out", ffn_mult * dim,
                                   dim, rng);
    b.ln_final = LayerNorm<S>::create(ps, prefix + ".ln_final", dim);
    return b;
  }

  GVar forward(Graph<S>& g, GVar x) const {
    GVar h = g.add(x, g.scale(ffn(g, ln_ffn1.forward(g, x), ffn1_in, ffn1_out),
                              0.5));
    h = g.add(h, mhsa.forward(g, ln_mhsa.forward(g, h)));
    h = g.add(h, conv_module(g, ln_conv.forward(g, h)));
    h = g.add(h, g.scale(ffn(g, ln_ffn2.forward(g, h), ffn2_in, ffn2_out),
                         0.5));
    return ln_final.forward(g, h);
  }

 private:
  GVar ffn(Graph<S>& g, GVar y, const Linear<S>& in, const Linear<S>& out) const {
    return out.forward(g, g.silu(in.forward(g, y)));
  }

  GVar conv_module(Graph<S>& g, GVar y) const {
    GVar gated = g.glu_cols(conv_pw1.forward(g, y));
    GVar conv = g.dwconv1d(gated, g.param(*conv_dw_w), g.param(*conv_dw_b),
                           (kernel - 1) / 2);
    return conv_pw2.forward(g, g.silu(conv));
  }
};

// Input projection + sinusoidal positions + conformer blocks.
template <class S>
struct ConformerStack {
  using GVar = typename Graph<S>::Var;
  Linear<S> in_proj;
  std::vector<ConformerBlock<S>> blocks;
  int dim = 0;

  static ConformerStack create(ParamStore<S>& ps, const std::string& prefix,
                               int in, int dim, int n_blocks, int heads,
                               int ffn_mult, int kernel, Rng& rng) {
    ConformerStack s;
    s.dim = dim;
    s.in_proj = Linear<S>::create(ps, prefix + ".in_proj", in, dim, rng);
    for (int i = 0; i < n_blocks; ++i)
      s.blocks.push_back(ConformerBlock<S>::create(
          ps, prefix + ".block" + std::to_string(i), dim, heads, ffn_mult,
          kernel, rng));
    return s;
  }

  GVar forward(Graph<S>& g, GVar x) const {
    GVar h = in_proj.forward(g, x);
    const int t_len = static_cast<int>(g.value(h).rows());
    h = g.add(h, g.constant(sinusoidal_positions<S>(t_len, dim)));
    for (const auto& b : blocks) h = b.forward(g, h);
    return h;
  }
};

}  // namespace psdn::ad
