#include "bagnet/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <vector>

namespace bagnet {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMat<T>>;

// 3x3, pad 1 patch matrix: row (c*3 + ky)*3 + kx, column y*w + x.
template <typename T>
void im2col3(const T* src, int channels, int h, int w, T* col) {
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int c = 0; c < channels; ++c) {
        const T* img = src + c * plane;
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                T* dst = col + ((static_cast<std::size_t>(c) * 3 + ky) * 3 + kx) * plane;
                for (int y = 0; y < h; ++y) {
                    const int sy = y + ky - 1;
                    T* row = dst + static_cast<std::size_t>(y) * w;
                    if (sy < 0 || sy >= h) {
                        std::fill(row, row + w, T{0});
                        continue;
                    }
                    const T* srow = img + static_cast<std::size_t>(sy) * w;
                    for (int x = 0; x < w; ++x) {
                        const int sx = x + kx - 1;
                        row[x] = (sx >= 0 && sx < w) ? srow[sx] : T{0};
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im3(const T* col, int channels, int h, int w, T* dst) {
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int c = 0; c < channels; ++c) {
        T* img = dst + c * plane;
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                const T* src = col + ((static_cast<std::size_t>(c) * 3 + ky) * 3 + kx) * plane;
                for (int y = 0; y < h; ++y) {
                    const int sy = y + ky - 1;
                    if (sy < 0 || sy >= h) {
                        continue;
                    }
                    const T* row = src + static_cast<std::size_t>(y) * w;
                    T* drow = img + static_cast<std::size_t>(sy) * w;
                    for (int x = 0; x < w; ++x) {
                        const int sx = x + kx - 1;
                        if (sx >= 0 && sx < w) {
                            drow[sx] += row[x];
                        }
                    }
                }
            }
        }
    }
}

Shape channel_vector(int c) { return Shape{c, 1, 1, 1}; }

void require_channel_vector(const Shape& s, int c, const char* what) {
    if (s != channel_vector(c)) {
        throw ShapeError(std::string(what) + " shape " + s.str() + " does not match " +
                         channel_vector(c).str());
    }
}

template <typename T>
Var maxpool2(Tape<T>& tape, Var input) {
    const Shape xs = tape.shape(input);
    if (xs.h % 2 != 0 || xs.w % 2 != 0) {
        throw ShapeError("downsample2 requires even spatial size, got " + xs.str());
    }
    const Shape os{xs.n, xs.c, xs.h / 2, xs.w / 2};
    const Tensor<T>& x = tape.value(input);
    Tensor<T> out(os);
    auto argmax = std::make_shared<std::vector<std::uint32_t>>(os.numel());
    std::size_t o = 0;
    for (int n = 0; n < xs.n; ++n) {
        for (int c = 0; c < xs.c; ++c) {
            for (int y = 0; y < os.h; ++y) {
                for (int xx = 0; xx < os.w; ++xx, ++o) {
                    std::size_t best = x.offset(n, c, 2 * y, 2 * xx);
                    const std::size_t cand[3] = {x.offset(n, c, 2 * y, 2 * xx + 1),
                                                 x.offset(n, c, 2 * y + 1, 2 * xx),
                                                 x.offset(n, c, 2 * y + 1, 2 * xx + 1)};
                    for (std::size_t idx : cand) {
                        if (x[idx] > x[best]) {
                            best = idx;
                        }
                    }
                    out[o] = x[best];
                    (*argmax)[o] = static_cast<std::uint32_t>(best);
                }
            }
        }
    }
    return tape.record(std::move(out), {input}, [input, xs, argmax](Tape<T>& t, const Tensor<T>& g) {
        Tensor<T> dx(xs);
        for (std::size_t i = 0; i < g.size(); ++i) {
            dx[(*argmax)[i]] += g[i];
        }
        t.accumulate(input, dx);
    });
}

}  // namespace

bool is_power_of_two(int v) { return v >= 1 && (v & (v - 1)) == 0; }

template <typename T>
ConvParams<T> ConvParams<T>::make(int in_channels, int out_channels, int kernel, bool with_bn) {
    if (kernel != 1 && kernel != 3) {
        throw ConfigError("unsupported kernel size " + std::to_string(kernel) + " (expected 1 or 3)");
    }
    ConvParams p;
    p.weight = Tensor<T>(Shape{out_channels, in_channels, kernel, kernel});
    p.bias = Tensor<T>(channel_vector(out_channels));
    p.has_bn = with_bn;
    if (with_bn) {
        p.bn_gamma = Tensor<T>(channel_vector(out_channels), T{1});
        p.bn_beta = Tensor<T>(channel_vector(out_channels), T{0});
        p.bn_running_mean = Tensor<T>(channel_vector(out_channels), T{0});
        p.bn_running_var = Tensor<T>(channel_vector(out_channels), T{1});
    }
    return p;
}

template <typename T>
Var conv2d(Tape<T>& tape, Var input, Var weight, Var bias) {
    const Shape xs = tape.shape(input);
    const Shape ws = tape.shape(weight);
    if (ws.h != ws.w || (ws.h != 1 && ws.h != 3)) {
        throw ConfigError("unsupported kernel shape " + ws.str() + " (expected 1x1 or 3x3)");
    }
    if (xs.c != ws.c) {
        throw ShapeError("conv2d channel mismatch: input " + xs.str() + " vs weight " + ws.str());
    }
    require_channel_vector(tape.shape(bias), ws.n, "conv2d bias");

    const int k = ws.h;
    const int c_in = xs.c;
    const int c_out = ws.n;
    const Eigen::Index patch = static_cast<Eigen::Index>(c_in) * k * k;
    const Eigen::Index pixels = static_cast<Eigen::Index>(xs.h) * xs.w;
    const Shape os{xs.n, c_out, xs.h, xs.w};

    const Tensor<T>& x = tape.value(input);
    const Tensor<T>& wt = tape.value(weight);
    const Tensor<T>& b = tape.value(bias);
    Tensor<T> out(os);
    ConstMap<T> W(wt.ptr(), c_out, patch);
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bvec(b.ptr(), c_out);
    RowMat<T> col;
    if (k == 3) {
        col.resize(patch, pixels);
    }
    for (int i = 0; i < xs.n; ++i) {
        const T* xi = x.ptr() + static_cast<std::size_t>(i) * c_in * pixels;
        MutMap<T> Y(out.ptr() + static_cast<std::size_t>(i) * c_out * pixels, c_out, pixels);
        if (k == 1) {
            Y.noalias() = W * ConstMap<T>(xi, c_in, pixels);
        } else {
            im2col3(xi, c_in, xs.h, xs.w, col.data());
            Y.noalias() = W * col;
        }
        Y.colwise() += bvec;
    }

    return tape.record(
        std::move(out), {input, weight, bias},
        [input, weight, bias, xs, k, c_in, c_out, patch, pixels](Tape<T>& t, const Tensor<T>& g) {
            const bool need_x = t.requires_grad(input);
            const bool need_w = t.requires_grad(weight);
            const bool need_b = t.requires_grad(bias);
            const Tensor<T>& xv = t.value(input);
            ConstMap<T> W(t.value(weight).ptr(), c_out, patch);

            RowMat<T> dW;
            if (need_w) {
                dW.setZero(c_out, patch);
            }
            Tensor<T> db(channel_vector(c_out));
            Tensor<T> dx;
            if (need_x) {
                dx = Tensor<T>(xs);
            }
            RowMat<T> col;
            RowMat<T> dcol;
            if (k == 3) {
                if (need_w) {
                    col.resize(patch, pixels);
                }
                if (need_x) {
                    dcol.resize(patch, pixels);
                }
            }
            for (int i = 0; i < xs.n; ++i) {
                ConstMap<T> G(g.ptr() + static_cast<std::size_t>(i) * c_out * pixels, c_out, pixels);
                const T* xi = xv.ptr() + static_cast<std::size_t>(i) * c_in * pixels;
                if (need_w) {
                    if (k == 1) {
                        dW.noalias() += G * ConstMap<T>(xi, c_in, pixels).transpose();
                    } else {
                        im2col3(xi, c_in, xs.h, xs.w, col.data());
                        dW.noalias() += G * col.transpose();
                    }
                }
                if (need_b) {
                    for (int c = 0; c < c_out; ++c) {
                        db[c] += G.row(c).sum();
                    }
                }
                if (need_x) {
                    T* dxi = dx.ptr() + static_cast<std::size_t>(i) * c_in * pixels;
                    if (k == 1) {
                        MutMap<T>(dxi, c_in, pixels).noalias() = W.transpose() * G;
                    } else {
                        dcol.noalias() = W.transpose() * G;
                        col2im3(dcol.data(), c_in, xs.h, xs.w, dxi);
                    }
                }
            }
            if (need_w) {
                Tensor<T> dw(Shape{c_out, c_in, k, k},
                             std::vector<T>(dW.data(), dW.data() + dW.size()));
                t.accumulate(weight, dw);
            }
            if (need_b) {
                t.accumulate(bias, db);
            }
            if (need_x) {
                t.accumulate(input, dx);
            }
        });
}

template <typename T>
Var batch_norm(Tape<T>& tape, Var input, Var gamma, Var beta, ConvParams<T>& params, Mode mode,
               bool update_running_stats) {
    using Acc = accum_t<T>;
    const Shape xs = tape.shape(input);
    const int channels = xs.c;
    require_channel_vector(tape.shape(gamma), channels, "batch_norm gamma");
    require_channel_vector(tape.shape(beta), channels, "batch_norm beta");
    require_channel_vector(params.bn_running_mean.shape(), channels, "batch_norm running mean");
    require_channel_vector(params.bn_running_var.shape(), channels, "batch_norm running var");
    if (!(params.bn_eps > T{0})) {
        throw ConfigError("batch_norm eps must be positive");
    }

    const Tensor<T>& x = tape.value(input);
    const Tensor<T>& gm = tape.value(gamma);
    const Tensor<T>& bt = tape.value(beta);
    const std::size_t plane = xs.plane();
    const std::size_t count = static_cast<std::size_t>(xs.n) * plane;
    const bool train = mode == Mode::train;

    auto inv_std = std::make_shared<std::vector<T>>(channels);
    std::vector<T> mean(channels);
    for (int c = 0; c < channels; ++c) {
        Acc m = 0.0;
        Acc v = 0.0;
        if (train) {
            for (int n = 0; n < xs.n; ++n) {
                const T* p = x.ptr() + x.offset(n, c, 0, 0);
                for (std::size_t i = 0; i < plane; ++i) {
                    m += static_cast<Acc>(p[i]);
                }
            }
            m /= static_cast<Acc>(count);
            for (int n = 0; n < xs.n; ++n) {
                const T* p = x.ptr() + x.offset(n, c, 0, 0);
                for (std::size_t i = 0; i < plane; ++i) {
                    const Acc d = static_cast<Acc>(p[i]) - m;
                    v += d * d;
                }
            }
            v /= static_cast<Acc>(count);
            if (!std::isfinite(v) || !std::isfinite(m)) {
                throw NumericError("batch_norm: non-finite batch statistics in channel " +
                                   std::to_string(c));
            }
        } else {
            m = static_cast<Acc>(params.bn_running_mean[c]);
            v = static_cast<Acc>(params.bn_running_var[c]);
        }
        mean[c] = static_cast<T>(m);
        (*inv_std)[c] = static_cast<T>(1.0 / std::sqrt(v + static_cast<Acc>(params.bn_eps)));
        if (train && update_running_stats) {
            const Acc mom = static_cast<Acc>(params.bn_momentum);
            const Acc unbiased = count > 1 ? v * static_cast<Acc>(count) / (count - 1) : v;
            params.bn_running_mean[c] =
                static_cast<T>((1.0 - mom) * params.bn_running_mean[c] + mom * m);
            params.bn_running_var[c] =
                static_cast<T>((1.0 - mom) * params.bn_running_var[c] + mom * unbiased);
        }
    }

    auto xhat = std::make_shared<Tensor<T>>(xs);
    Tensor<T> out(xs);
    for (int n = 0; n < xs.n; ++n) {
        for (int c = 0; c < channels; ++c) {
            const std::size_t off = x.offset(n, c, 0, 0);
            const T mu = mean[c];
            const T s = (*inv_std)[c];
            for (std::size_t i = 0; i < plane; ++i) {
                const T h = (x[off + i] - mu) * s;
                (*xhat)[off + i] = h;
                out[off + i] = gm[c] * h + bt[c];
            }
        }
    }

    return tape.record(
        std::move(out), {input, gamma, beta},
        [input, gamma, beta, xs, train, inv_std, xhat, plane, count](Tape<T>& t, const Tensor<T>& g) {
            const int channels = xs.c;
            const Tensor<T>& gm = t.value(gamma);
            Tensor<T> dgamma(channel_vector(channels));
            Tensor<T> dbeta(channel_vector(channels));
            std::vector<Acc> sum_dy(channels, 0.0);
            std::vector<Acc> sum_dy_xhat(channels, 0.0);
            for (int n = 0; n < xs.n; ++n) {
                for (int c = 0; c < channels; ++c) {
                    const std::size_t off = g.offset(n, c, 0, 0);
                    for (std::size_t i = 0; i < plane; ++i) {
                        sum_dy[c] += static_cast<Acc>(g[off + i]);
                        sum_dy_xhat[c] += static_cast<Acc>(g[off + i]) * (*xhat)[off + i];
                    }
                }
            }
            for (int c = 0; c < channels; ++c) {
                dgamma[c] = static_cast<T>(sum_dy_xhat[c]);
                dbeta[c] = static_cast<T>(sum_dy[c]);
            }
            if (t.requires_grad(input)) {
                Tensor<T> dx(xs);
                const Acc m = static_cast<Acc>(count);
                for (int n = 0; n < xs.n; ++n) {
                    for (int c = 0; c < channels; ++c) {
                        const std::size_t off = g.offset(n, c, 0, 0);
                        const Acc scale = static_cast<Acc>(gm[c]) * (*inv_std)[c];
                        for (std::size_t i = 0; i < plane; ++i) {
                            if (train) {
                                const Acc mean_dy = sum_dy[c] / m;
                                const Acc mean_dy_xhat = sum_dy_xhat[c] / m;
                                dx[off + i] = static_cast<T>(
                                    scale * (g[off + i] - mean_dy - (*xhat)[off + i] * mean_dy_xhat));
                            } else {
                                dx[off + i] = static_cast<T>(scale * g[off + i]);
                            }
                        }
                    }
                }
                t.accumulate(input, dx);
            }
            t.accumulate(gamma, dgamma);
            t.accumulate(beta, dbeta);
        });
}

template <typename T>
Var relu(Tape<T>& tape, Var input) {
    const Tensor<T>& x = tape.value(input);
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = x[i] > T{0} ? x[i] : T{0};
    }
    return tape.record(std::move(out), {input}, [input](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& xv = t.value(input);
        Tensor<T> dx(xv.shape());
        for (std::size_t i = 0; i < xv.size(); ++i) {
            dx[i] = xv[i] > T{0} ? g[i] : T{0};
        }
        t.accumulate(input, dx);
    });
}

template <typename T>
T sigmoid_value(T x) {
    T y;
    if (x >= T{0}) {
        y = T{1} / (T{1} + std::exp(-x));
    } else {
        const T e = std::exp(x);
        y = e / (T{1} + e);
    }
    constexpr T lo = std::numeric_limits<T>::min();
    constexpr T hi = T{1} - std::numeric_limits<T>::epsilon() / 2;
    return std::clamp(y, lo, hi);
}

template <typename T>
Var sigmoid(Tape<T>& tape, Var input) {
    const Tensor<T>& x = tape.value(input);
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = sigmoid_value(x[i]);
    }
    auto y = std::make_shared<Tensor<T>>(out);
    return tape.record(std::move(out), {input}, [input, y](Tape<T>& t, const Tensor<T>& g) {
        Tensor<T> dx(y->shape());
        for (std::size_t i = 0; i < y->size(); ++i) {
            const T v = (*y)[i];
            dx[i] = g[i] * v * (T{1} - v);
        }
        t.accumulate(input, dx);
    });
}

template <typename T>
Var downsample2(Tape<T>& tape, Var input, int factor) {
    if (!is_power_of_two(factor)) {
        throw ConfigError("downsample factor must be a power of two >= 1, got " +
                          std::to_string(factor));
    }
    const Shape xs = tape.shape(input);
    if (xs.h % factor != 0 || xs.w % factor != 0) {
        throw ShapeError("downsample2 by " + std::to_string(factor) + " needs h and w divisible by it, got " +
                         xs.str());
    }
    Var v = input;
    for (int f = factor; f > 1; f /= 2) {
        v = maxpool2(tape, v);
    }
    return v;
}

template <typename T>
Var upsample2(Tape<T>& tape, Var input, int factor) {
    if (!is_power_of_two(factor)) {
        throw ConfigError("upsample factor must be a power of two >= 1, got " + std::to_string(factor));
    }
    if (factor == 1) {
        return input;
    }
    const Shape xs = tape.shape(input);
    const Shape os{xs.n, xs.c, xs.h * factor, xs.w * factor};
    const Tensor<T>& x = tape.value(input);
    Tensor<T> out(os);
    for (int n = 0; n < xs.n; ++n) {
        for (int c = 0; c < xs.c; ++c) {
            for (int y = 0; y < os.h; ++y) {
                T* row = out.ptr() + out.offset(n, c, y, 0);
                const T* src = x.ptr() + x.offset(n, c, y / factor, 0);
                for (int xx = 0; xx < os.w; ++xx) {
                    row[xx] = src[xx / factor];
                }
            }
        }
    }
    return tape.record(std::move(out), {input}, [input, xs, os, factor](Tape<T>& t, const Tensor<T>& g) {
        Tensor<T> dx(xs);
        for (int n = 0; n < xs.n; ++n) {
            for (int c = 0; c < xs.c; ++c) {
                for (int y = 0; y < os.h; ++y) {
                    const T* row = g.ptr() + g.offset(n, c, y, 0);
                    T* dst = dx.ptr() + dx.offset(n, c, y / factor, 0);
                    for (int xx = 0; xx < os.w; ++xx) {
                        dst[xx / factor] += row[xx];
                    }
                }
            }
        }
        t.accumulate(input, dx);
    });
}

template <typename T>
Var concat_channels(Tape<T>& tape, Var a, Var b) {
    const Shape as = tape.shape(a);
    const Shape bs = tape.shape(b);
    if (as.n != bs.n || as.h != bs.h || as.w != bs.w) {
        throw ShapeError("concat_channels mismatch: " + as.str() + " vs " + bs.str());
    }
    const Shape os{as.n, as.c + bs.c, as.h, as.w};
    const Tensor<T>& av = tape.value(a);
    const Tensor<T>& bv = tape.value(b);
    Tensor<T> out(os);
    const std::size_t a_block = static_cast<std::size_t>(as.c) * as.plane();
    const std::size_t b_block = static_cast<std::size_t>(bs.c) * bs.plane();
    for (int n = 0; n < as.n; ++n) {
        T* dst = out.ptr() + n * (a_block + b_block);
        std::copy_n(av.ptr() + n * a_block, a_block, dst);
        std::copy_n(bv.ptr() + n * b_block, b_block, dst + a_block);
    }
    return tape.record(std::move(out), {a, b}, [a, b, as, bs, a_block, b_block](Tape<T>& t, const Tensor<T>& g) {
        Tensor<T> da(as);
        Tensor<T> db(bs);
        for (int n = 0; n < as.n; ++n) {
            const T* src = g.ptr() + n * (a_block + b_block);
            std::copy_n(src, a_block, da.ptr() + n * a_block);
            std::copy_n(src + a_block, b_block, db.ptr() + n * b_block);
        }
        t.accumulate(a, da);
        t.accumulate(b, db);
    });
}

template <typename T>
Var broadcast_mul(Tape<T>& tape, Var features, Var alpha) {
    const Shape fs = tape.shape(features);
    const Shape as = tape.shape(alpha);
    if (as.c != 1 || as.n != fs.n || as.h != fs.h || as.w != fs.w) {
        throw ShapeError("broadcast_mul needs a single-channel map matching features: features " +
                         fs.str() + " vs alpha " + as.str());
    }
    const Tensor<T>& f = tape.value(features);
    const Tensor<T>& al = tape.value(alpha);
    const std::size_t plane = fs.plane();
    Tensor<T> out(fs);
    for (int n = 0; n < fs.n; ++n) {
        const T* a = al.ptr() + n * plane;
        for (int c = 0; c < fs.c; ++c) {
            const std::size_t off = f.offset(n, c, 0, 0);
            for (std::size_t i = 0; i < plane; ++i) {
                out[off + i] = f[off + i] * a[i];
            }
        }
    }
    return tape.record(std::move(out), {features, alpha}, [features, alpha, fs, as, plane](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& f = t.value(features);
        const Tensor<T>& al = t.value(alpha);
        if (t.requires_grad(features)) {
            Tensor<T> df(fs);
            for (int n = 0; n < fs.n; ++n) {
                const T* a = al.ptr() + n * plane;
                for (int c = 0; c < fs.c; ++c) {
                    const std::size_t off = f.offset(n, c, 0, 0);
                    for (std::size_t i = 0; i < plane; ++i) {
                        df[off + i] = g[off + i] * a[i];
                    }
                }
            }
            t.accumulate(features, df);
        }
        if (t.requires_grad(alpha)) {
            Tensor<T> da(as);
            for (int n = 0; n < fs.n; ++n) {
                T* d = da.ptr() + n * plane;
                for (int c = 0; c < fs.c; ++c) {
                    const std::size_t off = f.offset(n, c, 0, 0);
                    for (std::size_t i = 0; i < plane; ++i) {
                        d[i] += g[off + i] * f[off + i];
                    }
                }
            }
            t.accumulate(alpha, da);
        }
    });
}

template <typename T>
Var bce_loss(Tape<T>& tape, Var prediction, const Tensor<T>& target, T clamp_eps) {
    using Acc = accum_t<T>;
    const Shape ps = tape.shape(prediction);
    if (ps != target.shape()) {
        throw ShapeError("bce_loss shape mismatch: prediction " + ps.str() + " vs target " +
                         target.shape().str());
    }
    if (!(clamp_eps > T{0}) || !(clamp_eps < T(0.5))) {
        throw ConfigError("bce clamp eps must lie in (0, 0.5)");
    }
    const Tensor<T>& p = tape.value(prediction);
    const T lo = clamp_eps;
    const T hi = T{1} - clamp_eps;
    Acc total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const Acc pc = static_cast<Acc>(std::clamp(p[i], lo, hi));
        const Acc y = static_cast<Acc>(target[i]);
        total -= y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc);
    }
    const Acc count = static_cast<Acc>(p.size());
    Tensor<T> out(Shape{1, 1, 1, 1}, static_cast<T>(total / count));
    auto y = std::make_shared<Tensor<T>>(target);
    return tape.record(std::move(out), {prediction}, [prediction, y, lo, hi, count](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& pv = t.value(prediction);
        const Acc scale = static_cast<Acc>(g[0]) / count;
        Tensor<T> dp(pv.shape());
        for (std::size_t i = 0; i < pv.size(); ++i) {
            // The clamp is part of the objective: no gradient where it is active.
            if (!(pv[i] > lo && pv[i] < hi)) {
                continue;
            }
            const Acc pc = static_cast<Acc>(pv[i]);
            dp[i] = static_cast<T>(scale * (pc - static_cast<Acc>((*y)[i])) / (pc * (1.0 - pc)));
        }
        t.accumulate(prediction, dp);
    });
}

template <typename T>
Var sum_squares(Tape<T>& tape, Var input) {
    using Acc = accum_t<T>;
    const Tensor<T>& x = tape.value(input);
    Acc total = 0.0;
    for (T v : x.data()) {
        total += static_cast<Acc>(v) * v;
    }
    return tape.record(Tensor<T>(Shape{1, 1, 1, 1}, static_cast<T>(total)), {input},
                       [input](Tape<T>& t, const Tensor<T>& g) {
                           const Tensor<T>& xv = t.value(input);
                           Tensor<T> dx(xv.shape());
                           for (std::size_t i = 0; i < xv.size(); ++i) {
                               dx[i] = T{2} * xv[i] * g[0];
                           }
                           t.accumulate(input, dx);
                       });
}

template <typename T>
Var sum_all(Tape<T>& tape, Var input) {
    using Acc = accum_t<T>;
    const Tensor<T>& x = tape.value(input);
    Acc total = 0.0;
    for (T v : x.data()) {
        total += static_cast<Acc>(v);
    }
    return tape.record(Tensor<T>(Shape{1, 1, 1, 1}, static_cast<T>(total)), {input},
                       [input](Tape<T>& t, const Tensor<T>& g) {
                           t.accumulate(input, Tensor<T>(t.shape(input), g[0]));
                       });
}

#define BAGNET_INSTANTIATE_OPS(T)                                                                 \
    template struct ConvParams<T>;                                                                \
    template Var conv2d(Tape<T>&, Var, Var, Var);                                                  \
    template Var batch_norm(Tape<T>&, Var, Var, Var, ConvParams<T>&, Mode, bool);                  \
    template Var relu(Tape<T>&, Var);                                                              \
    template Var sigmoid(Tape<T>&, Var);                                                           \
    template Var downsample2(Tape<T>&, Var, int);                                                  \
    template Var upsample2(Tape<T>&, Var, int);                                                    \
    template Var concat_channels(Tape<T>&, Var, Var);                                              \
    template Var broadcast_mul(Tape<T>&, Var, Var);                                                \
    template Var bce_loss(Tape<T>&, Var, const Tensor<T>&, T);                                     \
    template Var sum_squares(Tape<T>&, Var);                                                       \
    template Var sum_all(Tape<T>&, Var);                                                           \
    template T sigmoid_value(T);

BAGNET_INSTANTIATE_OPS(float)
BAGNET_INSTANTIATE_OPS(double)
BAGNET_INSTANTIATE_OPS(long double)

#undef BAGNET_INSTANTIATE_OPS

}  // namespace bagnet
