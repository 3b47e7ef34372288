#include "advlab/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace advlab::ops {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using MapConstMat = Eigen::Map<const RowMat<T>>;

[[noreturn]] void shape_error(const std::string& op, const std::string& what) {
    throw std::invalid_argument(op + ": " + what);
}

void require_rank(const std::string& op, const char* name, const Shape& s, int rank) {
    if (static_cast<int>(s.size()) != rank) {
        shape_error(op, std::string(name) + " must have rank " + std::to_string(rank) + ", got " + to_string(s));
    }
}

void require_same(const std::string& op, const Shape& a, const Shape& b) {
    if (a != b) shape_error(op, "shape mismatch " + to_string(a) + " vs " + to_string(b));
}

struct ConvGeometry {
    int channels, height, width; // image being scanned
    int kernel, stride, padding;
    int out_h, out_w;            // grid of kernel positions
};

// cols is [channels*k*k, out_h*out_w], row-major.
template <typename T>
void im2col(const T* img, const ConvGeometry& c, T* cols) {
    const int n = c.out_h * c.out_w;
    for (int ch = 0; ch < c.channels; ++ch) {
        const T* plane = img + static_cast<std::size_t>(ch) * c.height * c.width;
        for (int ki = 0; ki < c.kernel; ++ki) {
            for (int kj = 0; kj < c.kernel; ++kj) {
                T* row = cols + static_cast<std::size_t>((ch * c.kernel + ki) * c.kernel + kj) * n;
                for (int oy = 0; oy < c.out_h; ++oy) {
                    const int iy = oy * c.stride - c.padding + ki;
                    T* dst = row + oy * c.out_w;
                    if (iy < 0 || iy >= c.height) {
                        std::fill(dst, dst + c.out_w, T{0});
                        continue;
                    }
                    const T* src = plane + static_cast<std::size_t>(iy) * c.width;
                    for (int ox = 0; ox < c.out_w; ++ox) {
                        const int ix = ox * c.stride - c.padding + kj;
                        dst[ox] = (ix >= 0 && ix < c.width) ? src[ix] : T{0};
                    }
                }
            }
        }
    }
}

// Scatter-add of cols back onto the image (adjoint of im2col).
template <typename T>
void col2im_add(const T* cols, const ConvGeometry& c, T* img) {
    const int n = c.out_h * c.out_w;
    for (int ch = 0; ch < c.channels; ++ch) {
        T* plane = img + static_cast<std::size_t>(ch) * c.height * c.width;
        for (int ki = 0; ki < c.kernel; ++ki) {
            for (int kj = 0; kj < c.kernel; ++kj) {
                const T* row = cols + static_cast<std::size_t>((ch * c.kernel + ki) * c.kernel + kj) * n;
                for (int oy = 0; oy < c.out_h; ++oy) {
                    const int iy = oy * c.stride - c.padding + ki;
                    if (iy < 0 || iy >= c.height) continue;
                    T* dst = plane + static_cast<std::size_t>(iy) * c.width;
                    const T* src = row + oy * c.out_w;
                    for (int ox = 0; ox < c.out_w; ++ox) {
                        const int ix = ox * c.stride - c.padding + kj;
                        if (ix >= 0 && ix < c.width) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

template <typename T>
void check_bias(Graph<T>& g, const std::string& op, Var bias, int channels) {
    if (!bias.valid()) return;
    const Shape& bs = g.value(bias).shape();
    if (bs.size() != 1 || bs[0] != channels) {
        shape_error(op, "bias shape " + to_string(bs) + " does not match " + std::to_string(channels) + " output channels");
    }
}

} // namespace

template <typename T>
Var conv2d(Graph<T>& g, Var x, Var w, Var bias, int stride, int padding) {
    const std::string op = "conv2d";
    const Shape xs = g.value(x).shape();
    const Shape ws = g.value(w).shape();
    require_rank(op, "input", xs, 4);
    require_rank(op, "kernel", ws, 4);
    const int batch = xs[0], cin = xs[1], h = xs[2], wd = xs[3];
    const int cout = ws[0], k = ws[2];
    if (ws[1] != cin) shape_error(op, "kernel expects " + std::to_string(ws[1]) + " input channels, input " + to_string(xs) + " has " + std::to_string(cin));
    if (ws[3] != k || k % 2 == 0) shape_error(op, "kernel must be square with odd size, got " + to_string(ws));
    if (stride < 1 || padding < 0) shape_error(op, "stride must be >= 1 and padding >= 0");
    if ((h + 2 * padding - k) % stride != 0 || (wd + 2 * padding - k) % stride != 0 || h + 2 * padding < k || wd + 2 * padding < k) {
        shape_error(op, "input " + std::to_string(h) + "x" + std::to_string(wd) + " with kernel " + std::to_string(k) +
                            ", stride " + std::to_string(stride) + ", padding " + std::to_string(padding) +
                            " does not give an integral output size");
    }
    check_bias(g, op, bias, cout);
    const ConvGeometry geo{cin, h, wd, k, stride, padding, (h + 2 * padding - k) / stride + 1, (wd + 2 * padding - k) / stride + 1};
    const int kk = cin * k * k;
    const int n = geo.out_h * geo.out_w;

    Tensor<T> out({batch, cout, geo.out_h, geo.out_w});
    std::vector<T> cols(static_cast<std::size_t>(kk) * n);
    MapConstMat<T> wm(g.value(w).data(), cout, kk);
    const T* xd = g.value(x).data();
    const T* bd = bias.valid() ? g.value(bias).data() : nullptr;
    for (int b = 0; b < batch; ++b) {
        im2col(xd + static_cast<std::size_t>(b) * cin * h * wd, geo, cols.data());
        MapMat<T> ym(out.data() + static_cast<std::size_t>(b) * cout * n, cout, n);
        ym.noalias() = wm * MapConstMat<T>(cols.data(), kk, n);
        if (bd) {
            for (int c = 0; c < cout; ++c) ym.row(c).array() += bd[c];
        }
    }

    return g.record(std::move(out), {x, w, bias}, [=](Graph<T>& gr, int self) {
        const Tensor<T>& dy = gr.upstream(self);
        const bool need_x = gr.requires_grad(x);
        const bool need_w = gr.requires_grad(w);
        const bool need_b = bias.valid() && gr.requires_grad(bias);
        MapConstMat<T> wmat(gr.value(w).data(), cout, kk);
        std::vector<T> buf(static_cast<std::size_t>(kk) * n);
        T* dx = need_x ? gr.grad_accumulator(x).data() : nullptr;
        T* dw = need_w ? gr.grad_accumulator(w).data() : nullptr;
        T* db = need_b ? gr.grad_accumulator(bias).data() : nullptr;
        const T* xv = gr.value(x).data();
        for (int b = 0; b < batch; ++b) {
            MapConstMat<T> dym(dy.data() + static_cast<std::size_t>(b) * cout * n, cout, n);
            if (need_w) {
                im2col(xv + static_cast<std::size_t>(b) * cin * h * wd, geo, buf.data());
                MapMat<T>(dw, cout, kk).noalias() += dym * MapConstMat<T>(buf.data(), kk, n).transpose();
            }
            if (need_b) {
                for (int c = 0; c < cout; ++c) db[c] += dym.row(c).sum();
            }
            if (need_x) {
                MapMat<T>(buf.data(), kk, n).noalias() = wmat.transpose() * dym;
                col2im_add(buf.data(), geo, dx + static_cast<std::size_t>(b) * cin * h * wd);
            }
        }
    });
}

template <typename T>
Var conv_transpose2d(Graph<T>& g, Var x, Var w, Var bias, int stride, int padding) {
    const std::string op = "conv_transpose2d";
    const Shape xs = g.value(x).shape();
    const Shape ws = g.value(w).shape();
    require_rank(op, "input", xs, 4);
    require_rank(op, "kernel", ws, 4);
    const int batch = xs[0], cin = xs[1], h = xs[2], wd = xs[3];
    const int cout = ws[1], k = ws[2];
    if (ws[0] != cin) shape_error(op, "kernel expects " + std::to_string(ws[0]) + " input channels, input " + to_string(xs) + " has " + std::to_string(cin));
    if (ws[3] != k) shape_error(op, "kernel must be square, got " + to_string(ws));
    if (stride < 1 || padding < 0) shape_error(op, "stride must be >= 1 and padding >= 0");
    const int oh = (h - 1) * stride - 2 * padding + k;
    const int ow = (wd - 1) * stride - 2 * padding + k;
    if (oh <= 0 || ow <= 0) shape_error(op, "non-positive output size for input " + to_string(xs));
    check_bias(g, op, bias, cout);
    // The output image is scanned by the kernel on an h x w grid.
    const ConvGeometry geo{cout, oh, ow, k, stride, padding, h, wd};
    const int kk = cout * k * k;
    const int n = h * wd;

    Tensor<T> out({batch, cout, oh, ow});
    std::vector<T> cols(static_cast<std::size_t>(kk) * n);
    MapConstMat<T> wm(g.value(w).data(), cin, kk);
    const T* xd = g.value(x).data();
    const T* bd = bias.valid() ? g.value(bias).data() : nullptr;
    for (int b = 0; b < batch; ++b) {
        MapConstMat<T> xm(xd + static_cast<std::size_t>(b) * cin * n, cin, n);
        MapMat<T>(cols.data(), kk, n).noalias() = wm.transpose() * xm;
        T* ob = out.data() + static_cast<std::size_t>(b) * cout * oh * ow;
        col2im_add(cols.data(), geo, ob);
        if (bd) {
            for (int c = 0; c < cout; ++c) {
                T* plane = ob + static_cast<std::size_t>(c) * oh * ow;
                for (int i = 0; i < oh * ow; ++i) plane[i] += bd[c];
            }
        }
    }

    return g.record(std::move(out), {x, w, bias}, [=](Graph<T>& gr, int self) {
        const Tensor<T>& dy = gr.upstream(self);
        const bool need_x = gr.requires_grad(x);
        const bool need_w = gr.requires_grad(w);
        const bool need_b = bias.valid() && gr.requires_grad(bias);
        MapConstMat<T> wmat(gr.value(w).data(), cin, kk);
        std::vector<T> buf(static_cast<std::size_t>(kk) * n);
        T* dx = need_x ? gr.grad_accumulator(x).data() : nullptr;
        T* dw = need_w ? gr.grad_accumulator(w).data() : nullptr;
        T* db = need_b ? gr.grad_accumulator(bias).data() : nullptr;
        const T* xv = gr.value(x).data();
        for (int b = 0; b < batch; ++b) {
            const T* dyb = dy.data() + static_cast<std::size_t>(b) * cout * oh * ow;
            if (need_b) {
                for (int c = 0; c < cout; ++c) {
                    const T* plane = dyb + static_cast<std::size_t>(c) * oh * ow;
                    T acc{0};
                    for (int i = 0; i < oh * ow; ++i) acc += plane[i];
                    db[c] += acc;
                }
            }
            if (!need_x && !need_w) continue;
            im2col(dyb, geo, buf.data());
            MapConstMat<T> dcols(buf.data(), kk, n);
            if (need_x) {
                MapMat<T>(dx + static_cast<std::size_t>(b) * cin * n, cin, n).noalias() += wmat * dcols;
            }
            if (need_w) {
                MapConstMat<T> xm(xv + static_cast<std::size_t>(b) * cin * n, cin, n);
                MapMat<T>(dw, cin, kk).noalias() += xm * dcols.transpose();
            }
        }
    });
}

template <typename T>
Var max_pool2x2(Graph<T>& g, Var x) {
    const Shape xs = g.value(x).shape();
    require_rank("max_pool2x2", "input", xs, 4);
    if (xs[2] % 2 != 0 || xs[3] % 2 != 0) shape_error("max_pool2x2", "spatial size must be even, got " + to_string(xs));
    const int planes = xs[0] * xs[1], h = xs[2], w = xs[3], oh = h / 2, ow = w / 2;
    const Tensor<T>& xv = g.value(x);
    Tensor<T> out({xs[0], xs[1], oh, ow});
    std::vector<int> argmax(out.size());
    for (int p = 0; p < planes; ++p) {
        const std::size_t in0 = static_cast<std::size_t>(p) * h * w;
        for (int i = 0; i < oh; ++i) {
            for (int j = 0; j < ow; ++j) {
                int best = (2 * i) * w + 2 * j;
                for (int di = 0; di < 2; ++di) {
                    for (int dj = 0; dj < 2; ++dj) {
                        const int idx = (2 * i + di) * w + 2 * j + dj;
                        if (xv[in0 + idx] > xv[in0 + best]) best = idx;
                    }
                }
                const std::size_t o = static_cast<std::size_t>(p) * oh * ow + static_cast<std::size_t>(i) * ow + j;
                out[o] = xv[in0 + best];
                argmax[o] = best;
            }
        }
    }
    return g.record(std::move(out), {x}, [=, argmax = std::move(argmax)](Graph<T>& gr, int self) {
        const Tensor<T>& dy = gr.upstream(self);
        Tensor<T>& dx = gr.grad_accumulator(x);
        const std::size_t per_plane = static_cast<std::size_t>(oh) * ow;
        for (std::size_t o = 0; o < dy.size(); ++o) {
            dx[(o / per_plane) * h * w + static_cast<std::size_t>(argmax[o])] += dy[o];
        }
    });
}

template <typename T>
Var linear(Graph<T>& g, Var x, Var w, Var bias) {
    const std::string op = "linear";
    const Shape xs = g.value(x).shape();
    const Shape ws = g.value(w).shape();
    require_rank(op, "weight", ws, 2);
    if (xs.empty()) shape_error(op, "input needs a batch axis");
    const int batch = xs[0];
    const int in = static_cast<int>(g.value(x).size()) / std::max(batch, 1);
    const int outf = ws[0];
    if (ws[1] != in) shape_error(op, "weight " + to_string(ws) + " expects " + std::to_string(ws[1]) + " features, input " + to_string(xs) + " has " + std::to_string(in));
    check_bias(g, op, bias, outf);

    Tensor<T> out({batch, outf});
    MapConstMat<T> wm(g.value(w).data(), outf, in);
    for (int b = 0; b < batch; ++b) {
        Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> xv(g.value(x).data() + static_cast<std::size_t>(b) * in, in);
        Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> yv(out.data() + static_cast<std::size_t>(b) * outf, outf);
        yv.noalias() = wm * xv;
        if (bias.valid()) {
            yv += Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(g.value(bias).data(), outf);
        }
    }

    return g.record(std::move(out), {x, w, bias}, [=](Graph<T>& gr, int self) {
        using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
        const Tensor<T>& dy = gr.upstream(self);
        MapConstMat<T> wmat(gr.value(w).data(), outf, in);
        const bool need_x = gr.requires_grad(x);
        const bool need_w = gr.requires_grad(w);
        const bool need_b = bias.valid() && gr.requires_grad(bias);
        for (int b = 0; b < batch; ++b) {
            Eigen::Map<const Vec> dyv(dy.data() + static_cast<std::size_t>(b) * outf, outf);
            if (need_x) {
                Eigen::Map<Vec>(gr.grad_accumulator(x).data() + static_cast<std::size_t>(b) * in, in).noalias() += wmat.transpose() * dyv;
            }
            if (need_w) {
                Eigen::Map<const Vec> xv(gr.value(x).data() + static_cast<std::size_t>(b) * in, in);
                MapMat<T>(gr.grad_accumulator(w).data(), outf, in).noalias() += dyv * xv.transpose();
            }
            if (need_b) {
                Eigen::Map<Vec>(gr.grad_accumulator(bias).data(), outf) += dyv;
            }
        }
    });
}

template <typename T>
Var leaky_relu(Graph<T>& g, Var x, double slope) {
    const Tensor<T>& xv = g.value(x);
    Tensor<T> out(xv.shape());
    const T s = static_cast<T>(slope);
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] > T{0} ? xv[i] : s * xv[i];
    return g.record(std::move(out), {x}, [=](Graph<T>& gr, int self) {
        const Tensor<T>& dy = gr.upstream(self);
        const Tensor<T>& in = gr.value(x);
        Tensor<T>& dx = gr.grad_accumulator(x);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += in[i] > T{0} ? dy[i] : s * dy[i];
    });
}

template <typename T>
Var sigmoid(Graph<T>& g, Var x) {
    const Tensor<T>& xv = g.value(x);
    Tensor<T> out(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = T{1} / (T{1} + std::exp(-xv[i]));
    return g.record(std::move(out), {x}, [=](Graph<T>& gr, int self) {
        const Tensor<T>& dy = gr.upstream(self);
        const Tensor<T>& y = gr.value(Var{self});
        Tensor<T>& dx = gr.grad_accumulator(x);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * y[i] * (T{1} - y[i]);
    });
}

template <typename T>
Var group_norm(Graph<T>& g, Var x, Var gamma, Var beta, int groups, double eps) {
    const std::string op = "group_norm";
    const Shape xs = g.value(x).shape();
    require_rank(op, "input", xs, 4);
    const int batch = xs[0], channels = xs[1], hw = xs[2] * xs[3];
    if (groups < 1 || channels % groups != 0) {
        shape_error(op, std::to_string(groups) + " groups do not divide " + std::to_string(channels) + " channels");
    }
    require_same(op, g.value(gamma).shape(), Shape{channels});
    require_same(op, g.value(beta).shape(), Shape{channels});
    const int cpg = channels / groups;
    const std::size_t group_size = static_cast<std::size_t>(cpg) * hw;

    const Tensor<T>& xv = g.value(x);
    const T* gm = g.value(gamma).data();
    const T* bt = g.value(beta).data();
    Tensor<T> out(xs);
    std::vector<T> inv_std(static_cast<std::size_t>(batch) * groups);
    std::vector<T> mean(static_cast<std::size_t>(batch) * groups);
    for (int b = 0; b < batch; ++b) {
        for (int gi = 0; gi < groups; ++gi) {
            const std::size_t base = (static_cast<std::size_t>(b) * channels + static_cast<std::size_t>(gi) * cpg) * hw;
            double mu = 0.0;
            for (std::size_t i = 0; i < group_size; ++i) mu += xv[base + i];
            mu /= static_cast<double>(group_size);
            double var = 0.0;
            for (std::size_t i = 0; i < group_size; ++i) {
                const double d = xv[base + i] - mu;
                var += d * d;
            }
            var /= static_cast<double>(group_size);
            const T istd = static_cast<T>(1.0 / std::sqrt(var + eps));
            const std::size_t gidx = static_cast<std::size_t>(b) * groups + gi;
            inv_std[gidx] = istd;
            mean[gidx] = static_cast<T>(mu);
            for (int c = 0; c < cpg; ++c) {
                const int ch = gi * cpg + c;
                const std::size_t off = base + static_cast<std::size_t>(c) * hw;
                for (int i = 0; i < hw; ++i) {
                    out[off + i] = (xv[off + i] - mean[gidx]) * istd * gm[ch] + bt[ch];
                }
            }
        }
    }

    return g.record(std::move(out), {x, gamma, beta}, [=](Graph<T>& gr, int self) {
        const Tensor<T>& dy = gr.upstream(self);
        const Tensor<T>& in = gr.value(x);
        const T* gmv = gr.value(gamma).data();
        const bool need_x = gr.requires_grad(x);
        T* dgamma = gr.requires_grad(gamma) ? gr.grad_accumulator(gamma).data() : nullptr;
        T* dbeta = gr.requires_grad(beta) ? gr.grad_accumulator(beta).data() : nullptr;
        T* dx = need_x ? gr.grad_accumulator(x).data() : nullptr;
        std::vector<T> xhat(group_size), dxhat(group_size);
        for (int b = 0; b < batch; ++b) {
            for (int gi = 0; gi < groups; ++gi) {
                const std::size_t gidx = static_cast<std::size_t>(b) * groups + gi;
                const std::size_t base = (static_cast<std::size_t>(b) * channels + static_cast<std::size_t>(gi) * cpg) * hw;
                const T istd = inv_std[gidx];
                double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                for (int c = 0; c < cpg; ++c) {
                    const int ch = gi * cpg + c;
                    double dg = 0.0, dbt = 0.0;
                    for (int i = 0; i < hw; ++i) {
                        const std::size_t li = static_cast<std::size_t>(c) * hw + i;
                        const T xh = (in[base + li] - mean[gidx]) * istd;
                        const T d = dy[base + li];
                        xhat[li] = xh;
                        dxhat[li] = d * gmv[ch];
                        dg += d * xh;
                        dbt += d;
                        sum_dxhat += dxhat[li];
                        sum_dxhat_xhat += dxhat[li] * xh;
                    }
                    if (dgamma) dgamma[ch] += static_cast<T>(dg);
                    if (dbeta) dbeta[ch] += static_cast<T>(dbt);
                }
                if (!need_x) continue;
                const double m = static_cast<double>(group_size);
                for (std::size_t li = 0; li < group_size; ++li) {
                    dx[base + li] += static_cast<T>(istd * (dxhat[li] - sum_dxhat / m - xhat[li] * sum_dxhat_xhat / m));
                }
            }
        }
    });
}

template <typename T>
Var add(Graph<T>& g, Var a, Var b) {
    return axpby(g, 1.0, a, 1.0, b);
}

template <typename T>
Var axpby(Graph<T>& g, double a, Var x, double b, Var y) {
    require_same("axpby", g.value(x).shape(), g.value(y).shape());
    const Tensor<T>& xv = g.value(x);
    const Tensor<T>& yv = g.value(y);
    const T ta = static_cast<T>(a), tb = static_cast<T>(b);
    Tensor<T> out(xv.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ta * xv[i] + tb * yv[i];
    return g.record(std::move(out), {x, y}, [=](Graph<T>& gr, int self) {
        const Tensor<T>& dy = gr.upstream(self);
        if (gr.requires_grad(x)) {
            Tensor<T>& dx = gr.grad_accumulator(x);
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += ta * dy[i];
        }
        if (gr.requires_grad(y)) {
            Tensor<T>& dyy = gr.grad_accumulator(y);
            for (std::size_t i = 0; i < dyy.size(); ++i) dyy[i] += tb * dy[i];
        }
    });
}

template <typename T>
Var scale(Graph<T>& g, Var x, double c) {
    const Tensor<T>& xv = g.value(x);
    const T tc = static_cast<T>(c);
    Tensor<T> out(xv.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = tc * xv[i];
    return g.record(std::move(out), {x}, [=](Graph<T>& gr, int self) {
        const Tensor<T>& dy = gr.upstream(self);
        Tensor<T>& dx = gr.grad_accumulator(x);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += tc * dy[i];
    });
}

template <typename T>
Var add_scalar(Graph<T>& g, Var x, double c) {
    const Tensor<T>& xv = g.value(x);
    Tensor<T> out(xv.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] + static_cast<T>(c);
    return g.record(std::move(out), {x}, [=](Graph<T>& gr, int self) {
        const Tensor<T>& dy = gr.upstream(self);
        Tensor<T>& dx = gr.grad_accumulator(x);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
    });
}

template <typename T>
Var square(Graph<T>& g, Var x) {
    const Tensor<T>& xv = g.value(x);
    Tensor<T> out(xv.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * xv[i];
    return g.record(std::move(out), {x}, [=](Graph<T>& gr, int self) {
        const Tensor<T>& dy = gr.upstream(self);
        const Tensor<T>& in = gr.value(x);
        Tensor<T>& dx = gr.grad_accumulator(x);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += T{2} * in[i] * dy[i];
    });
}

template <typename T>
Var mul_const(Graph<T>& g, Var x, const Tensor<T>& c) {
    require_same("mul_const", g.value(x).shape(), c.shape());
    const Tensor<T>& xv = g.value(x);
    Tensor<T> out(xv.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * c[i];
    return g.record(std::move(out), {x}, [=](Graph<T>& gr, int self) {
        const Tensor<T>& dy = gr.upstream(self);
        Tensor<T>& dx = gr.grad_accumulator(x);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += c[i] * dy[i];
    });
}

template <typename T>
Var concat_channels(Graph<T>& g, Var a, Var b) {
    const std::string op = "concat_channels";
    const Shape as = g.value(a).shape();
    const Shape bs = g.value(b).shape();
    require_rank(op, "first input", as, 4);
    require_rank(op, "second input", bs, 4);
    if (as[0] != bs[0] || as[2] != bs[2] || as[3] != bs[3]) {
        shape_error(op, "batch/spatial mismatch " + to_string(as) + " vs " + to_string(bs));
    }
    const int batch = as[0], ca = as[1], cb = bs[1];
    const std::size_t hw = static_cast<std::size_t>(as[2]) * as[3];
    Tensor<T> out({batch, ca + cb, as[2], as[3]});
    const T* ad = g.value(a).data();
    const T* bd = g.value(b).data();
    for (int n = 0; n < batch; ++n) {
        T* dst = out.data() + static_cast<std::size_t>(n) * (ca + cb) * hw;
        std::copy_n(ad + static_cast<std::size_t>(n) * ca * hw, ca * hw, dst);
        std::copy_n(bd + static_cast<std::size_t>(n) * cb * hw, cb * hw, dst + ca * hw);
    }
    return g.record(std::move(out), {a, b}, [=](Graph<T>& gr, int self) {
        const T* dy = gr.upstream(self).data();
        const bool need_a = gr.requires_grad(a), need_b = gr.requires_grad(b);
        for (int n = 0; n < batch; ++n) {
            const T* src = dy + static_cast<std::size_t>(n) * (ca + cb) * hw;
            if (need_a) {
                T* da = gr.grad_accumulator(a).data() + static_cast<std::size_t>(n) * ca * hw;
                for (std::size_t i = 0; i < ca * hw; ++i) da[i] += src[i];
            }
            if (need_b) {
                T* db = gr.grad_accumulator(b).data() + static_cast<std::size_t>(n) * cb * hw;
                for (std::size_t i = 0; i < cb * hw; ++i) db[i] += src[ca * hw + i];
            }
        }
    });
}

template <typename T>
Var reshape(Graph<T>& g, Var x, Shape shape) {
    Tensor<T> out = g.value(x).reshaped(std::move(shape));
    return g.record(std::move(out), {x}, [=](Graph<T>& gr, int self) {
        const Tensor<T>& dy = gr.upstream(self);
        Tensor<T>& dx = gr.grad_accumulator(x);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
    });
}

template <typename T>
Var global_avg_pool(Graph<T>& g, Var x) {
    const Shape xs = g.value(x).shape();
    require_rank("global_avg_pool", "input", xs, 4);
    const int batch = xs[0], channels = xs[1];
    const std::size_t hw = static_cast<std::size_t>(xs[2]) * xs[3];
    const Tensor<T>& xv = g.value(x);
    Tensor<T> out({batch, channels});
    for (std::size_t bc = 0; bc < static_cast<std::size_t>(batch) * channels; ++bc) {
        T acc{0};
        for (std::size_t i = 0; i < hw; ++i) acc += xv[bc * hw + i];
        out[bc] = acc / static_cast<T>(hw);
    }
    return g.record(std::move(out), {x}, [=](Graph<T>& gr, int self) {
        const Tensor<T>& dy = gr.upstream(self);
        Tensor<T>& dx = gr.grad_accumulator(x);
        for (std::size_t bc = 0; bc < static_cast<std::size_t>(batch) * channels; ++bc) {
            const T d = dy[bc] / static_cast<T>(hw);
            for (std::size_t i = 0; i < hw; ++i) dx[bc * hw + i] += d;
        }
    });
}

template <typename T>
Var sum(Graph<T>& g, Var x) {
    const Tensor<T>& xv = g.value(x);
    T acc{0};
    for (T v : xv.values()) acc += v;
    return g.record(Tensor<T>({1}, {acc}), {x}, [=](Graph<T>& gr, int self) {
        const T d = gr.upstream(self)[0];
        Tensor<T>& dx = gr.grad_accumulator(x);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += d;
    });
}

template <typename T>
Var mean(Graph<T>& g, Var x) {
    const std::size_t n = g.value(x).size();
    if (n == 0) throw std::invalid_argument("mean of an empty tensor");
    return scale(g, sum(g, x), 1.0 / static_cast<double>(n));
}

namespace {

template <typename T>
int per_sample_size(Graph<T>& g, const std::string& op, Var pred, const Tensor<T>& target, int& batch) {
    const Shape& ps = g.value(pred).shape();
    require_same(op, ps, target.shape());
    if (ps.empty() || ps[0] < 1) shape_error(op, "input needs a non-empty batch axis, got " + to_string(ps));
    batch = ps[0];
    return static_cast<int>(target.size()) / batch;
}

} // namespace

template <typename T>
Var abs_error_sum(Graph<T>& g, Var pred, const Tensor<T>& target) {
    int batch = 0;
    const int n = per_sample_size(g, "abs_error_sum", pred, target, batch);
    const Tensor<T>& p = g.value(pred);
    Tensor<T> out({batch});
    for (int b = 0; b < batch; ++b) {
        T acc{0};
        for (int i = 0; i < n; ++i) acc += std::abs(p[static_cast<std::size_t>(b) * n + i] - target[static_cast<std::size_t>(b) * n + i]);
        out[static_cast<std::size_t>(b)] = acc;
    }
    return g.record(std::move(out), {pred}, [=](Graph<T>& gr, int self) {
        const Tensor<T>& dy = gr.upstream(self);
        const Tensor<T>& pv = gr.value(pred);
        Tensor<T>& dp = gr.grad_accumulator(pred);
        for (std::size_t i = 0; i < dp.size(); ++i) {
            const T d = pv[i] - target[i];
            const T sgn = d > T{0} ? T{1} : (d < T{0} ? T{-1} : T{0});
            dp[i] += sgn * dy[i / static_cast<std::size_t>(n)];
        }
    });
}

template <typename T>
Var squared_error_sum(Graph<T>& g, Var pred, const Tensor<T>& target) {
    int batch = 0;
    const int n = per_sample_size(g, "squared_error_sum", pred, target, batch);
    const Tensor<T>& p = g.value(pred);
    Tensor<T> out({batch});
    for (int b = 0; b < batch; ++b) {
        T acc{0};
        for (int i = 0; i < n; ++i) {
            const T d = p[static_cast<std::size_t>(b) * n + i] - target[static_cast<std::size_t>(b) * n + i];
            acc += d * d;
        }
        out[static_cast<std::size_t>(b)] = acc;
    }
    return g.record(std::move(out), {pred}, [=](Graph<T>& gr, int self) {
        const Tensor<T>& dy = gr.upstream(self);
        const Tensor<T>& pv = gr.value(pred);
        Tensor<T>& dp = gr.grad_accumulator(pred);
        for (std::size_t i = 0; i < dp.size(); ++i) {
            dp[i] += T{2} * (pv[i] - target[i]) * dy[i / static_cast<std::size_t>(n)];
        }
    });
}

template <typename T>
Var mean_abs_error(Graph<T>& g, Var pred, const Tensor<T>& target) {
    int batch = 0;
    const int n = per_sample_size(g, "mean_abs_error", pred, target, batch);
    return scale(g, abs_error_sum(g, pred, target), 1.0 / static_cast<double>(n));
}

template <typename T>
Var soft_dice(Graph<T>& g, Var prob, const Tensor<T>& target, double smooth) {
    int batch = 0;
    const int n = per_sample_size(g, "soft_dice", prob, target, batch);
    const Tensor<T>& p = g.value(prob);
    Tensor<T> out({batch});
    std::vector<double> inter(static_cast<std::size_t>(batch)), total(static_cast<std::size_t>(batch));
    for (int b = 0; b < batch; ++b) {
        double pt = 0.0, s = 0.0;
        for (int i = 0; i < n; ++i) {
            const std::size_t k = static_cast<std::size_t>(b) * n + i;
            pt += static_cast<double>(p[k]) * target[k];
            s += static_cast<double>(p[k]) + target[k];
        }
        inter[static_cast<std::size_t>(b)] = pt;
        total[static_cast<std::size_t>(b)] = s;
        out[static_cast<std::size_t>(b)] = static_cast<T>((2.0 * pt + smooth) / (s + smooth));
    }
    return g.record(std::move(out), {prob}, [=](Graph<T>& gr, int self) {
        const Tensor<T>& dy = gr.upstream(self);
        Tensor<T>& dp = gr.grad_accumulator(prob);
        for (int b = 0; b < batch; ++b) {
            const double num = 2.0 * inter[static_cast<std::size_t>(b)] + smooth;
            const double den = total[static_cast<std::size_t>(b)] + smooth;
            const double scale_b = dy[static_cast<std::size_t>(b)] / (den * den);
            for (int i = 0; i < n; ++i) {
                const std::size_t k = static_cast<std::size_t>(b) * n + i;
                dp[k] += static_cast<T>((2.0 * target[k] * den - num) * scale_b);
            }
        }
    });
}

template <typename T>
Var binary_cross_entropy(Graph<T>& g, Var prob, const Tensor<T>& target, double clamp) {
    int batch = 0;
    const int n = per_sample_size(g, "binary_cross_entropy", prob, target, batch);
    const Tensor<T>& p = g.value(prob);
    const double lo = clamp, hi = 1.0 - clamp;
    Tensor<T> out({batch});
    for (int b = 0; b < batch; ++b) {
        double acc = 0.0;
        for (int i = 0; i < n; ++i) {
            const std::size_t k = static_cast<std::size_t>(b) * n + i;
            const double q = std::clamp(static_cast<double>(p[k]), lo, hi);
            const double t = target[k];
            acc -= t * std::log(q) + (1.0 - t) * std::log(1.0 - q);
        }
        out[static_cast<std::size_t>(b)] = static_cast<T>(acc / n);
    }
    return g.record(std::move(out), {prob}, [=](Graph<T>& gr, int self) {
        const Tensor<T>& dy = gr.upstream(self);
        const Tensor<T>& pv = gr.value(prob);
        Tensor<T>& dp = gr.grad_accumulator(prob);
        for (std::size_t k = 0; k < dp.size(); ++k) {
            const double q = pv[k];
            if (q < lo || q > hi) continue;
            const double t = target[k];
            const double d = (-t / q + (1.0 - t) / (1.0 - q)) / n;
            dp[k] += static_cast<T>(d * dy[k / static_cast<std::size_t>(n)]);
        }
    });
}

template <typename T>
Var dot_per_sample(Graph<T>& g, Var x, const Tensor<T>& w) {
    int batch = 0;
    const int n = per_sample_size(g, "dot_per_sample", x, w, batch);
    const Tensor<T>& xv = g.value(x);
    Tensor<T> out({batch});
    for (int b = 0; b < batch; ++b) {
        T acc{0};
        for (int i = 0; i < n; ++i) acc += xv[static_cast<std::size_t>(b) * n + i] * w[static_cast<std::size_t>(b) * n + i];
        out[static_cast<std::size_t>(b)] = acc;
    }
    return g.record(std::move(out), {x}, [=](Graph<T>& gr, int self) {
        const Tensor<T>& dy = gr.upstream(self);
        Tensor<T>& dx = gr.grad_accumulator(x);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += w[i] * dy[i / static_cast<std::size_t>(n)];
    });
}

#define ADVLAB_INSTANTIATE_OPS(T)                                                                \
    template Var conv2d<T>(Graph<T>&, Var, Var, Var, int, int);                                  \
    template Var conv_transpose2d<T>(Graph<T>&, Var, Var, Var, int, int);                        \
    template Var max_pool2x2<T>(Graph<T>&, Var);                                                 \
    template Var linear<T>(Graph<T>&, Var, Var, Var);                                            \
    template Var leaky_relu<T>(Graph<T>&, Var, double);                                          \
    template Var sigmoid<T>(Graph<T>&, Var);                                                     \
    template Var group_norm<T>(Graph<T>&, Var, Var, Var, int, double);                           \
    template Var add<T>(Graph<T>&, Var, Var);                                                    \
    template Var axpby<T>(Graph<T>&, double, Var, double, Var);                                  \
    template Var scale<T>(Graph<T>&, Var, double);                                               \
    template Var add_scalar<T>(Graph<T>&, Var, double);                                          \
    template Var square<T>(Graph<T>&, Var);                                                      \
    template Var mul_const<T>(Graph<T>&, Var, const Tensor<T>&);                                 \
    template Var concat_channels<T>(Graph<T>&, Var, Var);                                        \
    template Var reshape<T>(Graph<T>&, Var, Shape);                                              \
    template Var global_avg_pool<T>(Graph<T>&, Var);                                             \
    template Var sum<T>(Graph<T>&, Var);                                                         \
    template Var mean<T>(Graph<T>&, Var);                                                        \
    template Var abs_error_sum<T>(Graph<T>&, Var, const Tensor<T>&);                             \
    template Var squared_error_sum<T>(Graph<T>&, Var, const Tensor<T>&);                         \
    template Var mean_abs_error<T>(Graph<T>&, Var, const Tensor<T>&);                            \
    template Var soft_dice<T>(Graph<T>&, Var, const Tensor<T>&, double);                         \
    template Var binary_cross_entropy<T>(Graph<T>&, Var, const Tensor<T>&, double);              \
    template Var dot_per_sample<T>(Graph<T>&, Var, const Tensor<T>&);

ADVLAB_INSTANTIATE_OPS(float)
ADVLAB_INSTANTIATE_OPS(double)

} // namespace advlab::ops
