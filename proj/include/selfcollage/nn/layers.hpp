#pragma once

// Small layer library with explicit forward/backward passes. Single-sample
// semantics: token tensors are [n, d], feature maps are [c, h, w]. Layers
// cache what their backward needs, so an instance handles one forward /
// backward pair at a time.

#include <cmath>
#include <string>
#include <vector>

#include "selfcollage/core/rng.hpp"
#include "selfcollage/core/tensor.hpp"

namespace selfcollage::nn {

struct ParamRef {
    std::string name;
    Tensor* value;
    Tensor* grad;
};

inline void add_param(std::vector<ParamRef>& out, const std::string& name, Tensor& v, Tensor& g) {
    out.push_back(ParamRef{name, &v, &g});
}

// ---------------------------------------------------------------------------

class Linear {
public:
    Linear() = default;
    Linear(int in, int out) : in_(in), out_(out), w_({out, in}), b_({out}), gw_({out, in}), gb_({out}) {}

    void init(Rng& rng, double stddev = 0.02) {
        w_.fill_trunc_normal(rng, stddev);
        b_.fill(0.0);
    }

    Tensor forward(const Tensor& x) {
        n_ = x.dim(0);
        x_ = x;
        Tensor y({n_, out_});
        as_mat(y, n_, out_).noalias() = as_mat(x, n_, in_) * as_mat(w_, out_, in_).transpose();
        for (int i = 0; i < n_; ++i)
            for (int j = 0; j < out_; ++j) y.at2(i, j) += b_[static_cast<std::size_t>(j)];
        return y;
    }

    Tensor backward(const Tensor& gy) {
        as_mat(gw_, out_, in_).noalias() += as_mat(gy, n_, out_).transpose() * as_mat(x_, n_, in_);
        for (int i = 0; i < n_; ++i)
            for (int j = 0; j < out_; ++j) gb_[static_cast<std::size_t>(j)] += gy.at2(i, j);
        Tensor gx({n_, in_});
        as_mat(gx, n_, in_).noalias() = as_mat(gy, n_, out_) * as_mat(w_, out_, in_);
        return gx;
    }

    void params(std::vector<ParamRef>& out, const std::string& prefix) {
        add_param(out, prefix + "weight", w_, gw_);
        add_param(out, prefix + "bias", b_, gb_);
    }

    int in_dim() const { return in_; }
    int out_dim() const { return out_; }

private:
    int in_ = 0, out_ = 0, n_ = 0;
    Tensor w_, b_, gw_, gb_, x_;
};

// ---------------------------------------------------------------------------

class LayerNorm {
public:
    LayerNorm() = default;
    explicit LayerNorm(int d) : d_(d), g_({d}), b_({d}), gg_({d}), gb_({d}) { g_.fill(1.0); }

    Tensor forward(const Tensor& x) {
        n_ = x.dim(0);
        xhat_ = Tensor({n_, d_});
        inv_std_.assign(static_cast<std::size_t>(n_), 0.0);
        Tensor y({n_, d_});
        for (int i = 0; i < n_; ++i) {
            double mean = 0.0;
            for (int j = 0; j < d_; ++j) mean += x.at2(i, j);
            mean /= d_;
            double var = 0.0;
            for (int j = 0; j < d_; ++j) var += (x.at2(i, j) - mean) * (x.at2(i, j) - mean);
            var /= d_;
            const double inv = 1.0 / std::sqrt(var + kEps);
            inv_std_[static_cast<std::size_t>(i)] = inv;
            for (int j = 0; j < d_; ++j) {
                const double xh = (x.at2(i, j) - mean) * inv;
                xhat_.at2(i, j) = xh;
                y.at2(i, j) = xh * g_[static_cast<std::size_t>(j)] + b_[static_cast<std::size_t>(j)];
            }
        }
        return y;
    }

    Tensor backward(const Tensor& gy) {
        Tensor gx({n_, d_});
        for (int i = 0; i < n_; ++i) {
            double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
            for (int j = 0; j < d_; ++j) {
                const double dxh = gy.at2(i, j) * g_[static_cast<std::size_t>(j)];
                mean_dxhat += dxh;
                mean_dxhat_xhat += dxh * xhat_.at2(i, j);
                gg_[static_cast<std::size_t>(j)] += gy.at2(i, j) * xhat_.at2(i, j);
                gb_[static_cast<std::size_t>(j)] += gy.at2(i, j);
            }
            mean_dxhat /= d_;
            mean_dxhat_xhat /= d_;
            for (int j = 0; j < d_; ++j) {
                const double dxh = gy.at2(i, j) * g_[static_cast<std::size_t>(j)];
                gx.at2(i, j) = inv_std_[static_cast<std::size_t>(i)] *
                               (dxh - mean_dxhat - xhat_.at2(i, j) * mean_dxhat_xhat);
            }
        }
        return gx;
    }

    void params(std::vector<ParamRef>& out, const std::string& prefix) {
        add_param(out, prefix + "gamma", g_, gg_);
        add_param(out, prefix + "beta", b_, gb_);
    }

    static constexpr double kEps = 1e-6;

private:
    int d_ = 0, n_ = 0;
    Tensor g_, b_, gg_, gb_, xhat_;
    std::vector<double> inv_std_;
};

// ---------------------------------------------------------------------------

namespace detail {

// softmax over the last index of a [rows, cols] score block, in place
inline void softmax_rows(Tensor& s, int rows, int cols) {
    for (int i = 0; i < rows; ++i) {
        double mx = -1e300;
        for (int j = 0; j < cols; ++j) mx = std::max(mx, s.at2(i, j));
        double denom = 0.0;
        for (int j = 0; j < cols; ++j) {
            s.at2(i, j) = std::exp(s.at2(i, j) - mx);
            denom += s.at2(i, j);
        }
        for (int j = 0; j < cols; ++j) s.at2(i, j) /= denom;
    }
}

// dS = A * (dA - rowsum(dA * A))
inline Tensor softmax_backward_rows(const Tensor& a, const Tensor& da, int rows, int cols) {
    Tensor ds({rows, cols});
    for (int i = 0; i < rows; ++i) {
        double dot = 0.0;
        for (int j = 0; j < cols; ++j) dot += da.at2(i, j) * a.at2(i, j);
        for (int j = 0; j < cols; ++j) ds.at2(i, j) = a.at2(i, j) * (da.at2(i, j) - dot);
    }
    return ds;
}

}  // namespace detail

// Multi-head attention core shared by the self and cross variants: given
// projected Q [n, d] and KV [m, 2d], produce the concatenated head outputs.
class AttentionCore {
public:
    AttentionCore() = default;
    AttentionCore(int d, int heads) : d_(d), heads_(heads), hd_(d / heads) {}

    Tensor forward(const Tensor& q, const Tensor& kv) {
        n_ = q.dim(0);
        m_ = kv.dim(0);
        q_ = q;
        kv_ = kv;
        attn_.assign(static_cast<std::size_t>(heads_), Tensor());
        Tensor out({n_, d_});
        const double scale = 1.0 / std::sqrt(static_cast<double>(hd_));
        for (int h = 0; h < heads_; ++h) {
            Tensor s({n_, m_});
            for (int i = 0; i < n_; ++i)
                for (int j = 0; j < m_; ++j) {
                    double acc = 0.0;
                    for (int c = 0; c < hd_; ++c) acc += q.at2(i, h * hd_ + c) * kv.at2(j, h * hd_ + c);
                    s.at2(i, j) = acc * scale;
                }
            detail::softmax_rows(s, n_, m_);
            for (int i = 0; i < n_; ++i)
                for (int c = 0; c < hd_; ++c) {
                    double acc = 0.0;
                    for (int j = 0; j < m_; ++j) acc += s.at2(i, j) * kv.at2(j, d_ + h * hd_ + c);
                    out.at2(i, h * hd_ + c) = acc;
                }
            attn_[static_cast<std::size_t>(h)] = std::move(s);
        }
        return out;
    }

    // returns gq; writes gkv
    Tensor backward(const Tensor& gout, Tensor& gkv) {
        Tensor gq({n_, d_});
        gkv = Tensor({m_, 2 * d_});
        const double scale = 1.0 / std::sqrt(static_cast<double>(hd_));
        for (int h = 0; h < heads_; ++h) {
            const Tensor& a = attn_[static_cast<std::size_t>(h)];
            // dA = gout_h x V_h^T ; dV = A^T x gout_h
            Tensor da({n_, m_});
            for (int i = 0; i < n_; ++i)
                for (int j = 0; j < m_; ++j) {
                    double acc = 0.0;
                    for (int c = 0; c < hd_; ++c) acc += gout.at2(i, h * hd_ + c) * kv_.at2(j, d_ + h * hd_ + c);
                    da.at2(i, j) = acc;
                }
            for (int j = 0; j < m_; ++j)
                for (int c = 0; c < hd_; ++c) {
                    double acc = 0.0;
                    for (int i = 0; i < n_; ++i) acc += a.at2(i, j) * gout.at2(i, h * hd_ + c);
                    gkv.at2(j, d_ + h * hd_ + c) += acc;
                }
            const Tensor ds = detail::softmax_backward_rows(a, da, n_, m_);
            // dQ = dS x K * scale ; dK = dS^T x Q * scale
            for (int i = 0; i < n_; ++i)
                for (int c = 0; c < hd_; ++c) {
                    double acc = 0.0;
                    for (int j = 0; j < m_; ++j) acc += ds.at2(i, j) * kv_.at2(j, h * hd_ + c);
                    gq.at2(i, h * hd_ + c) = acc * scale;
                }
            for (int j = 0; j < m_; ++j)
                for (int c = 0; c < hd_; ++c) {
                    double acc = 0.0;
                    for (int i = 0; i < n_; ++i) acc += ds.at2(i, j) * q_.at2(i, h * hd_ + c);
                    gkv.at2(j, h * hd_ + c) += acc * scale;
                }
        }
        return gq;
    }

private:
    int d_ = 0, heads_ = 0, hd_ = 0, n_ = 0, m_ = 0;
    Tensor q_, kv_;
    std::vector<Tensor> attn_;
};

class MultiHeadSelfAttention {
public:
    MultiHeadSelfAttention() = default;
    MultiHeadSelfAttention(int d, int heads) : d_(d), qkv_(d, 3 * d), proj_(d, d), core_(d, heads) {}

    void init(Rng& rng) {
        qkv_.init(rng);
        proj_.init(rng);
    }

    Tensor forward(const Tensor& x) {
        const int n = x.dim(0);
        Tensor qkv = qkv_.forward(x);
        // split into q [n,d] and kv [n,2d]
        Tensor q({n, d_}), kv({n, 2 * d_});
        for (int i = 0; i < n; ++i) {
            for (int c = 0; c < d_; ++c) q.at2(i, c) = qkv.at2(i, c);
            for (int c = 0; c < 2 * d_; ++c) kv.at2(i, c) = qkv.at2(i, d_ + c);
        }
        return proj_.forward(core_.forward(q, kv));
    }

    Tensor backward(const Tensor& gy) {
        const Tensor gout = proj_.backward(gy);
        Tensor gkv;
        const Tensor gq = core_.backward(gout, gkv);
        const int n = gq.dim(0);
        Tensor gqkv({n, 3 * d_});
        for (int i = 0; i < n; ++i) {
            for (int c = 0; c < d_; ++c) gqkv.at2(i, c) = gq.at2(i, c);
            for (int c = 0; c < 2 * d_; ++c) gqkv.at2(i, d_ + c) = gkv.at2(i, c);
        }
        return qkv_.backward(gqkv);
    }

    void params(std::vector<ParamRef>& out, const std::string& prefix) {
        qkv_.params(out, prefix + "qkv/");
        proj_.params(out, prefix + "proj/");
    }

private:
    int d_ = 0;
    Linear qkv_, proj_;
    AttentionCore core_;
};

class MultiHeadCrossAttention {
public:
    MultiHeadCrossAttention() = default;
    MultiHeadCrossAttention(int d, int heads) : d_(d), q_(d, d), kv_(d, 2 * d), proj_(d, d), core_(d, heads) {}

    void init(Rng& rng) {
        q_.init(rng);
        kv_.init(rng);
        proj_.init(rng);
    }

    Tensor forward(const Tensor& x, const Tensor& mem) {
        return proj_.forward(core_.forward(q_.forward(x), kv_.forward(mem)));
    }

    // returns gx, accumulates the memory gradient into gmem (same shape as mem)
    Tensor backward(const Tensor& gy, Tensor& gmem) {
        const Tensor gout = proj_.backward(gy);
        Tensor gkv;
        const Tensor gq = core_.backward(gout, gkv);
        const Tensor gm = kv_.backward(gkv);
        if (gmem.numel() == 0) gmem = Tensor({gm.dim(0), gm.dim(1)});
        for (std::size_t i = 0; i < gmem.vec().size(); ++i) gmem[i] += gm[i];
        return q_.backward(gq);
    }

    void params(std::vector<ParamRef>& out, const std::string& prefix) {
        q_.params(out, prefix + "q/");
        kv_.params(out, prefix + "kv/");
        proj_.params(out, prefix + "proj/");
    }

private:
    int d_ = 0;
    Linear q_, kv_, proj_;
    AttentionCore core_;
};

// ---------------------------------------------------------------------------

class Mlp {
public:
    Mlp() = default;
    Mlp(int d, int hidden) : fc1_(d, hidden), fc2_(hidden, d) {}

    void init(Rng& rng) {
        fc1_.init(rng);
        fc2_.init(rng);
    }

    Tensor forward(const Tensor& x) {
        pre_ = fc1_.forward(x);
        Tensor h = pre_;
        for (auto& v : h.vec()) v = gelu(v);
        return fc2_.forward(h);
    }

    Tensor backward(const Tensor& gy) {
        Tensor gh = fc2_.backward(gy);
        for (std::size_t i = 0; i < gh.vec().size(); ++i) gh[i] *= gelu_grad(pre_[i]);
        return fc1_.backward(gh);
    }

    void params(std::vector<ParamRef>& out, const std::string& prefix) {
        fc1_.params(out, prefix + "fc1/");
        fc2_.params(out, prefix + "fc2/");
    }

    static double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }
    static double gelu_grad(double x) {
        const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
        const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
        return cdf + x * pdf;
    }

private:
    Linear fc1_, fc2_;
    Tensor pre_;
};

// Pre-norm transformer decoder block: self-attention over the patch tokens,
// cross-attention into the exemplar tokens, MLP; all residual.
class FimBlock {
public:
    FimBlock() = default;
    FimBlock(int d, int heads, int mlp_hidden)
        : ln_self_(d), attn_(d, heads), ln_cross_(d), cross_(d, heads), ln_mlp_(d), mlp_(d, mlp_hidden) {}

    void init(Rng& rng) {
        attn_.init(rng);
        cross_.init(rng);
        mlp_.init(rng);
    }

    Tensor forward(const Tensor& x, const Tensor& mem) {
        Tensor a = x;
        {
            const Tensor t = attn_.forward(ln_self_.forward(x));
            for (std::size_t i = 0; i < a.vec().size(); ++i) a[i] += t[i];
        }
        Tensor b = a;
        {
            const Tensor t = cross_.forward(ln_cross_.forward(a), mem);
            for (std::size_t i = 0; i < b.vec().size(); ++i) b[i] += t[i];
        }
        Tensor c = b;
        {
            const Tensor t = mlp_.forward(ln_mlp_.forward(b));
            for (std::size_t i = 0; i < c.vec().size(); ++i) c[i] += t[i];
        }
        return c;
    }

    Tensor backward(const Tensor& gc, Tensor& gmem) {
        Tensor gb = gc;
        {
            const Tensor t = ln_mlp_.backward(mlp_.backward(gc));
            for (std::size_t i = 0; i < gb.vec().size(); ++i) gb[i] += t[i];
        }
        Tensor ga = gb;
        {
            const Tensor t = ln_cross_.backward(cross_.backward(gb, gmem));
            for (std::size_t i = 0; i < ga.vec().size(); ++i) ga[i] += t[i];
        }
        Tensor gx = ga;
        {
            const Tensor t = ln_self_.backward(attn_.backward(ga));
            for (std::size_t i = 0; i < gx.vec().size(); ++i) gx[i] += t[i];
        }
        return gx;
    }

    void params(std::vector<ParamRef>& out, const std::string& prefix) {
        ln_self_.params(out, prefix + "ln_self/");
        attn_.params(out, prefix + "self_attn/");
        ln_cross_.params(out, prefix + "ln_cross/");
        cross_.params(out, prefix + "cross_attn/");
        ln_mlp_.params(out, prefix + "ln_mlp/");
        mlp_.params(out, prefix + "mlp/");
    }

private:
    LayerNorm ln_self_;
    MultiHeadSelfAttention attn_;
    LayerNorm ln_cross_;
    MultiHeadCrossAttention cross_;
    LayerNorm ln_mlp_;
    Mlp mlp_;
};

// ---------------------------------------------------------------------------
// Convolutional pieces operating on [c, h, w] maps.
// ---------------------------------------------------------------------------

class Conv2d {
public:
    Conv2d() = default;
    Conv2d(int cin, int cout, int ksize)
        : cin_(cin), cout_(cout), k_(ksize), w_({cout, cin * ksize * ksize}), b_({cout}),
          gw_({cout, cin * ksize * ksize}), gb_({cout}) {
        if (ksize != 1 && ksize != 3) throw InvalidInput("Conv2d: only 1x1 and 3x3 kernels");
    }

    void init(Rng& rng, double stddev = 0.02) {
        w_.fill_trunc_normal(rng, stddev);
        b_.fill(0.0);
    }

    // x: [cin, h, w] flattened
    Tensor forward(const Tensor& x, int h, int w) {
        h_ = h;
        w_img_ = w;
        const int hw = h * w, pd = cin_ * k_ * k_, pad = k_ / 2;
        cols_ = Tensor({pd, hw});
        for (int c = 0; c < cin_; ++c)
            for (int ky = 0; ky < k_; ++ky)
                for (int kx = 0; kx < k_; ++kx) {
                    const int row = (c * k_ + ky) * k_ + kx;
                    for (int y = 0; y < h; ++y) {
                        const int sy = y + ky - pad;
                        for (int x2 = 0; x2 < w; ++x2) {
                            const int sx = x2 + kx - pad;
                            double v = 0.0;
                            if (sy >= 0 && sy < h && sx >= 0 && sx < w)
                                v = x[static_cast<std::size_t>((c * h + sy)) * w + sx];
                            cols_.at2(row, y * w + x2) = v;
                        }
                    }
                }
        Tensor y({cout_, hw});
        as_mat(y, cout_, hw).noalias() = as_mat(w_, cout_, pd) * as_mat(cols_, pd, hw);
        for (int c = 0; c < cout_; ++c)
            for (int i = 0; i < hw; ++i) y.at2(c, i) += b_[static_cast<std::size_t>(c)];
        return y;
    }

    Tensor backward(const Tensor& gy) {
        const int hw = h_ * w_img_, pd = cin_ * k_ * k_, pad = k_ / 2;
        as_mat(gw_, cout_, pd).noalias() += as_mat(gy, cout_, hw) * as_mat(cols_, pd, hw).transpose();
        for (int c = 0; c < cout_; ++c)
            for (int i = 0; i < hw; ++i) gb_[static_cast<std::size_t>(c)] += gy.at2(c, i);
        Tensor gcols({pd, hw});
        as_mat(gcols, pd, hw).noalias() = as_mat(w_, cout_, pd).transpose() * as_mat(gy, cout_, hw);
        Tensor gx({cin_, h_, w_img_});
        for (int c = 0; c < cin_; ++c)
            for (int ky = 0; ky < k_; ++ky)
                for (int kx = 0; kx < k_; ++kx) {
                    const int row = (c * k_ + ky) * k_ + kx;
                    for (int y = 0; y < h_; ++y) {
                        const int sy = y + ky - pad;
                        if (sy < 0 || sy >= h_) continue;
                        for (int x2 = 0; x2 < w_img_; ++x2) {
                            const int sx = x2 + kx - pad;
                            if (sx < 0 || sx >= w_img_) continue;
                            gx[static_cast<std::size_t>((c * h_ + sy)) * w_img_ + sx] +=
                                gcols.at2(row, y * w_img_ + x2);
                        }
                    }
                }
        return gx;
    }

    void params(std::vector<ParamRef>& out, const std::string& prefix) {
        add_param(out, prefix + "weight", w_, gw_);
        add_param(out, prefix + "bias", b_, gb_);
    }

private:
    int cin_ = 0, cout_ = 0, k_ = 0, h_ = 0, w_img_ = 0;
    Tensor w_, b_, gw_, gb_, cols_;
};

class GroupNorm {
public:
    GroupNorm() = default;
    GroupNorm(int groups, int channels)
        : groups_(groups), c_(channels), g_({channels}), b_({channels}), gg_({channels}), gb_({channels}) {
        if (channels % groups != 0) throw InvalidInput("GroupNorm: channels must divide into groups");
        g_.fill(1.0);
    }

    Tensor forward(const Tensor& x, int h, int w) {
        h_ = h;
        w_img_ = w;
        const int cg = c_ / groups_;
        const int group_len = cg * h * w;
        xhat_ = Tensor({c_, h, w});
        inv_std_.assign(static_cast<std::size_t>(groups_), 0.0);
        Tensor y({c_, h, w});
        for (int g = 0; g < groups_; ++g) {
            const std::size_t off = static_cast<std::size_t>(g) * group_len;
            double mean = 0.0;
            for (int i = 0; i < group_len; ++i) mean += x[off + static_cast<std::size_t>(i)];
            mean /= group_len;
            double var = 0.0;
            for (int i = 0; i < group_len; ++i) {
                const double d = x[off + static_cast<std::size_t>(i)] - mean;
                var += d * d;
            }
            var /= group_len;
            const double inv = 1.0 / std::sqrt(var + kEps);
            inv_std_[static_cast<std::size_t>(g)] = inv;
            for (int i = 0; i < group_len; ++i)
                xhat_[off + static_cast<std::size_t>(i)] = (x[off + static_cast<std::size_t>(i)] - mean) * inv;
        }
        for (int c = 0; c < c_; ++c)
            for (int i = 0; i < h * w; ++i) {
                const std::size_t idx = static_cast<std::size_t>(c) * h * w + static_cast<std::size_t>(i);
                y[idx] = xhat_[idx] * g_[static_cast<std::size_t>(c)] + b_[static_cast<std::size_t>(c)];
            }
        return y;
    }

    Tensor backward(const Tensor& gy) {
        const int hw = h_ * w_img_;
        const int cg = c_ / groups_;
        const int group_len = cg * hw;
        Tensor gx({c_, h_, w_img_});
        for (int c = 0; c < c_; ++c)
            for (int i = 0; i < hw; ++i) {
                const std::size_t idx = static_cast<std::size_t>(c) * hw + static_cast<std::size_t>(i);
                gg_[static_cast<std::size_t>(c)] += gy[idx] * xhat_[idx];
                gb_[static_cast<std::size_t>(c)] += gy[idx];
            }
        for (int g = 0; g < groups_; ++g) {
            const std::size_t off = static_cast<std::size_t>(g) * group_len;
            double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
            for (int i = 0; i < group_len; ++i) {
                const std::size_t idx = off + static_cast<std::size_t>(i);
                const int c = g * cg + i / hw;
                const double dxh = gy[idx] * g_[static_cast<std::size_t>(c)];
                mean_dxhat += dxh;
                mean_dxhat_xhat += dxh * xhat_[idx];
            }
            mean_dxhat /= group_len;
            mean_dxhat_xhat /= group_len;
            const double inv = inv_std_[static_cast<std::size_t>(g)];
            for (int i = 0; i < group_len; ++i) {
                const std::size_t idx = off + static_cast<std::size_t>(i);
                const int c = g * cg + i / hw;
                const double dxh = gy[idx] * g_[static_cast<std::size_t>(c)];
                gx[idx] = inv * (dxh - mean_dxhat - xhat_[idx] * mean_dxhat_xhat);
            }
        }
        return gx;
    }

    void params(std::vector<ParamRef>& out, const std::string& prefix) {
        add_param(out, prefix + "gamma", g_, gg_);
        add_param(out, prefix + "beta", b_, gb_);
    }

    static constexpr double kEps = 1e-6;

private:
    int groups_ = 0, c_ = 0, h_ = 0, w_img_ = 0;
    Tensor g_, b_, gg_, gb_, xhat_;
    std::vector<double> inv_std_;
};

class Relu {
public:
    Tensor forward(const Tensor& x) {
        mask_.assign(x.vec().size(), 0);
        Tensor y = x;
        for (std::size_t i = 0; i < y.vec().size(); ++i) {
            if (y[i] > 0.0)
                mask_[i] = 1;
            else
                y[i] = 0.0;
        }
        return y;
    }

    Tensor backward(const Tensor& gy) {
        Tensor gx = gy;
        for (std::size_t i = 0; i < gx.vec().size(); ++i)
            if (!mask_[i]) gx[i] = 0.0;
        return gx;
    }

private:
    std::vector<std::uint8_t> mask_;
};

// Plain bilinear interpolation (align_corners = false) over [c, h, w] maps,
// with the transpose as backward.
class BilinearResize {
public:
    struct Lerp {
        int i0 = 0, i1 = 0;
        double w1 = 0.0;
    };

    static std::vector<Lerp> make_lerps(int in, int out) {
        std::vector<Lerp> l(static_cast<std::size_t>(out));
        const double scale = static_cast<double>(in) / out;
        for (int o = 0; o < out; ++o) {
            double src = (o + 0.5) * scale - 0.5;
            if (src < 0.0) src = 0.0;
            if (src > in - 1) src = in - 1;
            const int i0 = static_cast<int>(src);
            l[static_cast<std::size_t>(o)].i0 = i0;
            l[static_cast<std::size_t>(o)].i1 = std::min(i0 + 1, in - 1);
            l[static_cast<std::size_t>(o)].w1 = src - i0;
        }
        return l;
    }

    Tensor forward(const Tensor& x, int c, int h, int w, int out_h, int out_w) {
        c_ = c;
        h_ = h;
        w_in_ = w;
        oh_ = out_h;
        ow_ = out_w;
        ly_ = make_lerps(h, out_h);
        lx_ = make_lerps(w, out_w);
        Tensor y({c, out_h, out_w});
        for (int ch = 0; ch < c; ++ch) {
            const double* src = x.data() + static_cast<std::size_t>(ch) * h * w;
            double* dst = y.data() + static_cast<std::size_t>(ch) * out_h * out_w;
            for (int yy = 0; yy < out_h; ++yy) {
                const auto& py = ly_[static_cast<std::size_t>(yy)];
                for (int xx = 0; xx < out_w; ++xx) {
                    const auto& px = lx_[static_cast<std::size_t>(xx)];
                    const double top = (1 - px.w1) * src[py.i0 * w + px.i0] + px.w1 * src[py.i0 * w + px.i1];
                    const double bot = (1 - px.w1) * src[py.i1 * w + px.i0] + px.w1 * src[py.i1 * w + px.i1];
                    dst[yy * out_w + xx] = (1 - py.w1) * top + py.w1 * bot;
                }
            }
        }
        return y;
    }

    Tensor backward(const Tensor& gy) {
        Tensor gx({c_, h_, w_in_});
        for (int ch = 0; ch < c_; ++ch) {
            double* dst = gx.data() + static_cast<std::size_t>(ch) * h_ * w_in_;
            const double* src = gy.data() + static_cast<std::size_t>(ch) * oh_ * ow_;
            for (int yy = 0; yy < oh_; ++yy) {
                const auto& py = ly_[static_cast<std::size_t>(yy)];
                for (int xx = 0; xx < ow_; ++xx) {
                    const auto& px = lx_[static_cast<std::size_t>(xx)];
                    const double g = src[yy * ow_ + xx];
                    dst[py.i0 * w_in_ + px.i0] += (1 - py.w1) * (1 - px.w1) * g;
                    dst[py.i0 * w_in_ + px.i1] += (1 - py.w1) * px.w1 * g;
                    dst[py.i1 * w_in_ + px.i0] += py.w1 * (1 - px.w1) * g;
                    dst[py.i1 * w_in_ + px.i1] += py.w1 * px.w1 * g;
                }
            }
        }
        return gx;
    }

private:
    int c_ = 0, h_ = 0, w_in_ = 0, oh_ = 0, ow_ = 0;
    std::vector<Lerp> ly_, lx_;
};

// ---------------------------------------------------------------------------
// Fixed sinusoidal position embeddings.
// ---------------------------------------------------------------------------

// 1D over token index (used by the ViT backbone).
inline void add_token_position_embedding(Tensor& tokens, int d) {
    const int n = tokens.dim(0);
    for (int p = 0; p < n; ++p)
        for (int c = 0; c < d; ++c) {
            const double freq = std::pow(10000.0, -2.0 * (c / 2) / d);
            tokens.at2(p, c) += (c % 2 == 0) ? std::sin(p * freq) : std::cos(p * freq);
        }
}

// 2D over the patch grid: first half of the channels encodes the row, second
// half the column. Requires d divisible by 4.
inline Tensor grid_position_embedding(int h, int w, int d) {
    if (d % 4 != 0) throw InvalidInput("grid_position_embedding: dim must be divisible by 4");
    Tensor pe({h * w, d});
    const int half = d / 2;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int row = y * w + x;
            for (int c = 0; c < half / 2; ++c) {
                const double omega = std::pow(10000.0, -2.0 * c / half);
                pe.at2(row, 2 * c) = std::sin(y * omega);
                pe.at2(row, 2 * c + 1) = std::cos(y * omega);
                pe.at2(row, half + 2 * c) = std::sin(x * omega);
                pe.at2(row, half + 2 * c + 1) = std::cos(x * omega);
            }
        }
    return pe;
}

}  // namespace selfcollage::nn
