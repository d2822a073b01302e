// Copyright (c) 2026 PQKD Project Contributors
// SPDX-License-Identifier: Apache-2.0
#include "pqkd/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>

namespace pqkd {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<RowMat>;
using CMapRM = Eigen::Map<const RowMat>;

namespace {

struct ConvGeom {
    int batch, cin, h, w, cout, k, pad, ho, wo;
    bool batched_input;
};

ConvGeom conv_geometry(const Tensor& x, const Tensor& w, const Tensor& b, int padding) {
    if (w.ndim() != 4)
        throw ConfigError("conv2d: kernel must be [Cout,Cin,k,k], got " + shape_str(w.shape));
    if (x.ndim() != 3 && x.ndim() != 4)
        throw ConfigError("conv2d: input must be [B,Cin,H,W] or [Cin,H,W], got " +
                          shape_str(x.shape));
    ConvGeom g{};
    g.batched_input = (x.ndim() == 4);
    g.batch = g.batched_input ? x.dim(0) : 1;
    g.cin = x.dim(g.batched_input ? 1 : 0);
    g.h = x.dim(g.batched_input ? 2 : 1);
    g.w = x.dim(g.batched_input ? 3 : 2);
    g.cout = w.dim(0);
    g.k = w.dim(2);
    g.pad = padding;
    if (w.dim(1) != g.cin)
        throw ConfigError("conv2d: kernel expects Cin=" + std::to_string(w.dim(1)) +
                          " but input has Cin=" + std::to_string(g.cin));
    if (w.dim(3) != g.k)
        throw ConfigError("conv2d: kernel must be square, got " + shape_str(w.shape));
    if (g.k % 2 == 0) throw ConfigError("conv2d: kernel size must be odd, got k=" + std::to_string(g.k));
    if (padding < 0) throw ConfigError("conv2d: padding must be >= 0, got " + std::to_string(padding));
    if (b.ndim() != 1 || b.dim(0) != g.cout)
        throw ConfigError("conv2d: bias must be [Cout=" + std::to_string(g.cout) + "], got " +
                          shape_str(b.shape));
    g.ho = g.h + 2 * padding - g.k + 1;
    g.wo = g.w + 2 * padding - g.k + 1;
    if (g.ho <= 0 || g.wo <= 0)
        throw ConfigError("conv2d: kernel k=" + std::to_string(g.k) + " too large for input " +
                          shape_str(x.shape) + " with padding " + std::to_string(padding));
    return g;
}

// Gathers one padded image into patch-major columns: cols[Cin*k*k][Ho*Wo].
void im2col(const double* img, const ConvGeom& g, double* cols) {
    const int ckk = g.cin * g.k * g.k;
    const int owo = g.ho * g.wo;
    for (int c = 0; c < g.cin; ++c) {
        const double* plane = img + static_cast<std::size_t>(c) * g.h * g.w;
        for (int ki = 0; ki < g.k; ++ki) {
            for (int kj = 0; kj < g.k; ++kj) {
                double* row = cols + (static_cast<std::size_t>(c) * g.k * g.k + ki * g.k + kj) * owo;
                for (int oy = 0; oy < g.ho; ++oy) {
                    const int iy = oy - g.pad + ki;
                    double* dst = row + static_cast<std::size_t>(oy) * g.wo;
                    if (iy < 0 || iy >= g.h) {
                        std::fill(dst, dst + g.wo, 0.0);
                        continue;
                    }
                    const double* src = plane + static_cast<std::size_t>(iy) * g.w;
                    for (int ox = 0; ox < g.wo; ++ox) {
                        const int ix = ox - g.pad + kj;
                        dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0;
                    }
                }
            }
        }
    }
    (void)ckk;
}

void col2im_add(const double* cols, const ConvGeom& g, double* img) {
    const int owo = g.ho * g.wo;
    for (int c = 0; c < g.cin; ++c) {
        double* plane = img + static_cast<std::size_t>(c) * g.h * g.w;
        for (int ki = 0; ki < g.k; ++ki) {
            for (int kj = 0; kj < g.k; ++kj) {
                const double* row =
                    cols + (static_cast<std::size_t>(c) * g.k * g.k + ki * g.k + kj) * owo;
                for (int oy = 0; oy < g.ho; ++oy) {
                    const int iy = oy - g.pad + ki;
                    if (iy < 0 || iy >= g.h) continue;
                    double* dst = plane + static_cast<std::size_t>(iy) * g.w;
                    const double* src = row + static_cast<std::size_t>(oy) * g.wo;
                    for (int ox = 0; ox < g.wo; ++ox) {
                        const int ix = ox - g.pad + kj;
                        if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

// Batch gradient reductions run over a fixed number of chunks combined in
// chunk order, so results do not depend on the worker count.
constexpr int kGradChunks = 8;

}  // namespace

NodeRef conv2d(const NodeRef& x, const NodeRef& w, const NodeRef& b, int padding) {
    const ConvGeom g = conv_geometry(x->value, w->value, b->value, padding);
    const int ckk = g.cin * g.k * g.k;
    const int owo = g.ho * g.wo;

    Tensor out(g.batched_input ? std::vector<int>{g.batch, g.cout, g.ho, g.wo}
                               : std::vector<int>{g.cout, g.ho, g.wo});

    {
        CMapRM wm(w->value.ptr(), g.cout, ckk);
#pragma omp parallel
        {
            std::vector<double> cols(static_cast<std::size_t>(ckk) * owo);
#pragma omp for schedule(static)
            for (int bi = 0; bi < g.batch; ++bi) {
                const double* img = x->value.ptr() + static_cast<std::size_t>(bi) * g.cin * g.h * g.w;
                im2col(img, g, cols.data());
                CMapRM cm(cols.data(), ckk, owo);
                MapRM om(out.ptr() + static_cast<std::size_t>(bi) * g.cout * owo, g.cout, owo);
                om.noalias() = wm * cm;
                for (int o = 0; o < g.cout; ++o) om.row(o).array() += b->value.data[o];
            }
        }
    }

    auto node = std::make_shared<Node>();
    node->value = std::move(out);
    node->inputs = {x, w, b};
    node->requires_grad = x->requires_grad || w->requires_grad || b->requires_grad;
    if (node->requires_grad) {
        NodeRef xr = x, wr = w, br = b;
        node->backward_op = [xr, wr, br, g, ckk, owo](Node& self) {
            const bool need_dx = xr->requires_grad;
            const bool need_dw = wr->requires_grad;
            const bool need_db = br->requires_grad;
            if (need_dx) xr->ensure_grad();
            if (need_dw) wr->ensure_grad();
            if (need_db) br->ensure_grad();
            CMapRM wm(wr->value.ptr(), g.cout, ckk);

            const int chunks = std::min(kGradChunks, std::max(1, g.batch));
            std::vector<std::vector<double>> dw_chunk(
                need_dw ? chunks : 0, std::vector<double>(static_cast<std::size_t>(g.cout) * ckk, 0.0));
            std::vector<std::vector<double>> db_chunk(
                need_db ? chunks : 0, std::vector<double>(static_cast<std::size_t>(g.cout), 0.0));

#pragma omp parallel
            {
                std::vector<double> cols(static_cast<std::size_t>(ckk) * owo);
                std::vector<double> dcols(need_dx ? static_cast<std::size_t>(ckk) * owo : 0);
#pragma omp for schedule(static)
                for (int c = 0; c < chunks; ++c) {
                    const int lo = static_cast<int>(static_cast<std::int64_t>(g.batch) * c / chunks);
                    const int hi =
                        static_cast<int>(static_cast<std::int64_t>(g.batch) * (c + 1) / chunks);
                    for (int bi = lo; bi < hi; ++bi) {
                        const double* dout =
                            self.grad.ptr() + static_cast<std::size_t>(bi) * g.cout * owo;
                        CMapRM dom(dout, g.cout, owo);
                        if (need_dw || need_dx) {
                            const double* img =
                                xr->value.ptr() + static_cast<std::size_t>(bi) * g.cin * g.h * g.w;
                            im2col(img, g, cols.data());
                        }
                        if (need_dw) {
                            CMapRM cm(cols.data(), ckk, owo);
                            MapRM dwm(dw_chunk[c].data(), g.cout, ckk);
                            dwm.noalias() += dom * cm.transpose();
                        }
                        if (need_db) {
                            for (int o = 0; o < g.cout; ++o)
                                db_chunk[c][o] += dom.row(o).sum();
                        }
                        if (need_dx) {
                            MapRM dcm(dcols.data(), ckk, owo);
                            dcm.noalias() = wm.transpose() * dom;
                            double* dimg = xr->grad.ptr() +
                                           static_cast<std::size_t>(bi) * g.cin * g.h * g.w;
                            col2im_add(dcols.data(), g, dimg);
                        }
                    }
                }
            }
            if (need_dw) {
                for (int c = 0; c < chunks; ++c)
                    for (std::size_t i = 0; i < dw_chunk[c].size(); ++i)
                        wr->grad.data[i] += dw_chunk[c][i];
            }
            if (need_db) {
                for (int c = 0; c < chunks; ++c)
                    for (int o = 0; o < g.cout; ++o) br->grad.data[o] += db_chunk[c][o];
            }
        };
    }
    return node;
}

NodeRef relu(const NodeRef& x) {
    Tensor out = x->value;
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    auto node = std::make_shared<Node>();
    node->value = std::move(out);
    node->inputs = {x};
    node->requires_grad = x->requires_grad;
    if (node->requires_grad) {
        NodeRef xr = x;
        node->backward_op = [xr](Node& self) {
            Tensor& dx = xr->ensure_grad();
            for (std::size_t i = 0; i < dx.data.size(); ++i)
                if (xr->value.data[i] > 0.0) dx.data[i] += self.grad.data[i];
        };
    }
    return node;
}

NodeRef maxpool2x2(const NodeRef& x) {
    const Tensor& v = x->value;
    if (v.ndim() != 4) throw ConfigError("maxpool2x2: input must be [B,C,H,W], got " + shape_str(v.shape));
    const int batch = v.dim(0), ch = v.dim(1), h = v.dim(2), w = v.dim(3);
    if (h % 2 != 0 || w % 2 != 0)
        throw ConfigError("maxpool2x2: spatial dims must be even, got " + shape_str(v.shape));
    const int ho = h / 2, wo = w / 2;
    Tensor out({batch, ch, ho, wo});
    auto argmax = std::make_shared<std::vector<std::int32_t>>(out.data.size());
    const std::size_t planes = static_cast<std::size_t>(batch) * ch;
    for (std::size_t pl = 0; pl < planes; ++pl) {
        const double* src = v.ptr() + pl * h * w;
        double* dst = out.ptr() + pl * ho * wo;
        std::int32_t* am = argmax->data() + pl * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox) {
                const int base = (2 * oy) * w + 2 * ox;
                int best = base;
                double bv = src[base];
                const int cand[3] = {base + 1, base + w, base + w + 1};
                for (int c : cand)
                    if (src[c] > bv) { bv = src[c]; best = c; }
                dst[oy * wo + ox] = bv;
                am[oy * wo + ox] = best;
            }
        }
    }
    auto node = std::make_shared<Node>();
    node->value = std::move(out);
    node->inputs = {x};
    node->requires_grad = x->requires_grad;
    if (node->requires_grad) {
        NodeRef xr = x;
        node->backward_op = [xr, argmax, h, w, ho, wo](Node& self) {
            Tensor& dx = xr->ensure_grad();
            const std::size_t planes = self.grad.data.size() / (static_cast<std::size_t>(ho) * wo);
            for (std::size_t pl = 0; pl < planes; ++pl) {
                const double* dsrc = self.grad.ptr() + pl * ho * wo;
                const std::int32_t* am = argmax->data() + pl * ho * wo;
                double* ddst = dx.ptr() + pl * h * w;
                for (int i = 0; i < ho * wo; ++i) ddst[am[i]] += dsrc[i];
            }
        };
    }
    return node;
}

NodeRef global_avg_pool(const NodeRef& x) {
    const Tensor& v = x->value;
    if (v.ndim() != 4)
        throw ConfigError("global_avg_pool: input must be [B,C,H,W], got " + shape_str(v.shape));
    const int batch = v.dim(0), ch = v.dim(1), h = v.dim(2), w = v.dim(3);
    const double inv = 1.0 / (static_cast<double>(h) * w);
    Tensor out({batch, ch});
    for (int bi = 0; bi < batch; ++bi)
        for (int c = 0; c < ch; ++c) {
            const double* src = v.ptr() + (static_cast<std::size_t>(bi) * ch + c) * h * w;
            double s = 0.0;
            for (int i = 0; i < h * w; ++i) s += src[i];
            out.data[static_cast<std::size_t>(bi) * ch + c] = s * inv;
        }
    auto node = std::make_shared<Node>();
    node->value = std::move(out);
    node->inputs = {x};
    node->requires_grad = x->requires_grad;
    if (node->requires_grad) {
        NodeRef xr = x;
        node->backward_op = [xr, ch, h, w, inv](Node& self) {
            Tensor& dx = xr->ensure_grad();
            const int batch = self.grad.dim(0);
            for (int bi = 0; bi < batch; ++bi)
                for (int c = 0; c < ch; ++c) {
                    const double g = self.grad.data[static_cast<std::size_t>(bi) * ch + c] * inv;
                    double* dst = dx.ptr() + (static_cast<std::size_t>(bi) * ch + c) * h * w;
                    for (int i = 0; i < h * w; ++i) dst[i] += g;
                }
        };
    }
    return node;
}

NodeRef linear(const NodeRef& x, const NodeRef& w, const NodeRef& b) {
    const Tensor& xv = x->value;
    const Tensor& wv = w->value;
    const Tensor& bv = b->value;
    if (xv.ndim() != 2 || wv.ndim() != 2 || bv.ndim() != 1)
        throw ConfigError("linear: expected x:[B,F], w:[O,F], b:[O], got " + shape_str(xv.shape) +
                          ", " + shape_str(wv.shape) + ", " + shape_str(bv.shape));
    const int batch = xv.dim(0), feat = xv.dim(1), outd = wv.dim(0);
    if (wv.dim(1) != feat || bv.dim(0) != outd)
        throw ConfigError("linear: inconsistent dims x:" + shape_str(xv.shape) +
                          " w:" + shape_str(wv.shape) + " b:" + shape_str(bv.shape));
    Tensor out({batch, outd});
    {
        CMapRM xm(xv.ptr(), batch, feat);
        CMapRM wm(wv.ptr(), outd, feat);
        MapRM om(out.ptr(), batch, outd);
        om.noalias() = xm * wm.transpose();
        for (int o = 0; o < outd; ++o) om.col(o).array() += bv.data[o];
    }
    auto node = std::make_shared<Node>();
    node->value = std::move(out);
    node->inputs = {x, w, b};
    node->requires_grad = x->requires_grad || w->requires_grad || b->requires_grad;
    if (node->requires_grad) {
        NodeRef xr = x, wr = w, br = b;
        node->backward_op = [xr, wr, br, batch, feat, outd](Node& self) {
            CMapRM dym(self.grad.ptr(), batch, outd);
            if (xr->requires_grad) {
                MapRM dxm(xr->ensure_grad().ptr(), batch, feat);
                CMapRM wm(wr->value.ptr(), outd, feat);
                dxm.noalias() += dym * wm;
            }
            if (wr->requires_grad) {
                MapRM dwm(wr->ensure_grad().ptr(), outd, feat);
                CMapRM xm(xr->value.ptr(), batch, feat);
                dwm.noalias() += dym.transpose() * xm;
            }
            if (br->requires_grad) {
                Tensor& db = br->ensure_grad();
                for (int o = 0; o < outd; ++o) db.data[o] += dym.col(o).sum();
            }
        };
    }
    return node;
}

NodeRef dropout(const NodeRef& x, double p, RngStream& rng, bool train) {
    if (p < 0.0 || p >= 1.0)
        throw ConfigError("dropout: p must lie in [0,1), got " + std::to_string(p));
    if (!train || p == 0.0) return x;
    const double scale = 1.0 / (1.0 - p);
    auto mask = std::make_shared<std::vector<std::uint8_t>>(x->value.data.size());
    Tensor out = x->value;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        const bool keep = rng.next_unit() >= p;
        (*mask)[i] = keep;
        out.data[i] = keep ? out.data[i] * scale : 0.0;
    }
    auto node = std::make_shared<Node>();
    node->value = std::move(out);
    node->inputs = {x};
    node->requires_grad = x->requires_grad;
    if (node->requires_grad) {
        NodeRef xr = x;
        node->backward_op = [xr, mask, scale](Node& self) {
            Tensor& dx = xr->ensure_grad();
            for (std::size_t i = 0; i < dx.data.size(); ++i)
                if ((*mask)[i]) dx.data[i] += self.grad.data[i] * scale;
        };
    }
    return node;
}

NodeRef log_softmax(const NodeRef& x) {
    const Tensor& v = x->value;
    if (v.ndim() != 2)
        throw ConfigError("log_softmax: input must be [B,C], got " + shape_str(v.shape));
    const int batch = v.dim(0), classes = v.dim(1);
    Tensor out({batch, classes});
    for (int bi = 0; bi < batch; ++bi) {
        const double* row = v.ptr() + static_cast<std::size_t>(bi) * classes;
        double mx = row[0];
        for (int c = 1; c < classes; ++c) mx = std::max(mx, row[c]);
        double lse = 0.0;
        for (int c = 0; c < classes; ++c) lse += std::exp(row[c] - mx);
        lse = mx + std::log(lse);
        double* dst = out.ptr() + static_cast<std::size_t>(bi) * classes;
        for (int c = 0; c < classes; ++c) dst[c] = row[c] - lse;
    }
    auto node = std::make_shared<Node>();
    node->value = std::move(out);
    node->inputs = {x};
    node->requires_grad = x->requires_grad;
    if (node->requires_grad) {
        NodeRef xr = x;
        node->backward_op = [xr, batch, classes](Node& self) {
            Tensor& dx = xr->ensure_grad();
            for (int bi = 0; bi < batch; ++bi) {
                const double* dy = self.grad.ptr() + static_cast<std::size_t>(bi) * classes;
                const double* y = self.value.ptr() + static_cast<std::size_t>(bi) * classes;
                double gsum = 0.0;
                for (int c = 0; c < classes; ++c) gsum += dy[c];
                double* d = dx.ptr() + static_cast<std::size_t>(bi) * classes;
                for (int c = 0; c < classes; ++c) d[c] += dy[c] - std::exp(y[c]) * gsum;
            }
        };
    }
    return node;
}

NodeRef scale(const NodeRef& x, double c) {
    Tensor out = x->value;
    for (double& v : out.data) v *= c;
    auto node = std::make_shared<Node>();
    node->value = std::move(out);
    node->inputs = {x};
    node->requires_grad = x->requires_grad;
    if (node->requires_grad) {
        NodeRef xr = x;
        node->backward_op = [xr, c](Node& self) {
            Tensor& dx = xr->ensure_grad();
            for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += c * self.grad.data[i];
        };
    }
    return node;
}

NodeRef add(const NodeRef& a, const NodeRef& b) {
    check_same_shape(a->value, b->value, "add");
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b->value.data[i];
    auto node = std::make_shared<Node>();
    node->value = std::move(out);
    node->inputs = {a, b};
    node->requires_grad = a->requires_grad || b->requires_grad;
    if (node->requires_grad) {
        NodeRef ar = a, br = b;
        node->backward_op = [ar, br](Node& self) {
            if (ar->requires_grad) {
                Tensor& da = ar->ensure_grad();
                for (std::size_t i = 0; i < da.data.size(); ++i) da.data[i] += self.grad.data[i];
            }
            if (br->requires_grad) {
                Tensor& db = br->ensure_grad();
                for (std::size_t i = 0; i < db.data.size(); ++i) db.data[i] += self.grad.data[i];
            }
        };
    }
    return node;
}

NodeRef sum(const NodeRef& x) {
    double s = 0.0;
    for (double v : x->value.data) s += v;
    auto node = std::make_shared<Node>();
    node->value = Tensor::scalar(s);
    node->inputs = {x};
    node->requires_grad = x->requires_grad;
    if (node->requires_grad) {
        NodeRef xr = x;
        node->backward_op = [xr](Node& self) {
            Tensor& dx = xr->ensure_grad();
            const double g = self.grad.data[0];
            for (double& v : dx.data) v += g;
        };
    }
    return node;
}

NodeRef mean(const NodeRef& x) {
    const double n = static_cast<double>(x->value.numel());
    if (n == 0) throw UsageError("mean: empty tensor");
    double s = 0.0;
    for (double v : x->value.data) s += v;
    auto node = std::make_shared<Node>();
    node->value = Tensor::scalar(s / n);
    node->inputs = {x};
    node->requires_grad = x->requires_grad;
    if (node->requires_grad) {
        NodeRef xr = x;
        node->backward_op = [xr, n](Node& self) {
            Tensor& dx = xr->ensure_grad();
            const double g = self.grad.data[0] / n;
            for (double& v : dx.data) v += g;
        };
    }
    return node;
}

NodeRef square(const NodeRef& x) {
    Tensor out = x->value;
    for (double& v : out.data) v *= v;
    auto node = std::make_shared<Node>();
    node->value = std::move(out);
    node->inputs = {x};
    node->requires_grad = x->requires_grad;
    if (node->requires_grad) {
        NodeRef xr = x;
        node->backward_op = [xr](Node& self) {
            Tensor& dx = xr->ensure_grad();
            for (std::size_t i = 0; i < dx.data.size(); ++i)
                dx.data[i] += 2.0 * xr->value.data[i] * self.grad.data[i];
        };
    }
    return node;
}

NodeRef nll_mean(const NodeRef& logp, const std::vector<int>& labels) {
    const Tensor& v = logp->value;
    if (v.ndim() != 2)
        throw ConfigError("nll_mean: expected [B,C] log-probabilities, got " + shape_str(v.shape));
    const int batch = v.dim(0), classes = v.dim(1);
    if (static_cast<int>(labels.size()) != batch)
        throw ConfigError("nll_mean: " + std::to_string(labels.size()) + " labels for batch " +
                          std::to_string(batch));
    double s = 0.0;
    for (int bi = 0; bi < batch; ++bi) {
        const int y = labels[bi];
        if (y < 0 || y >= classes)
            throw DataError("nll_mean: label " + std::to_string(y) + " at row " +
                            std::to_string(bi) + " outside [0," + std::to_string(classes) + ")");
        s -= v.data[static_cast<std::size_t>(bi) * classes + y];
    }
    auto node = std::make_shared<Node>();
    node->value = Tensor::scalar(s / batch);
    node->inputs = {logp};
    node->requires_grad = logp->requires_grad;
    if (node->requires_grad) {
        NodeRef lr = logp;
        auto labs = std::make_shared<std::vector<int>>(labels);
        node->backward_op = [lr, labs, batch, classes](Node& self) {
            Tensor& dx = lr->ensure_grad();
            const double g = self.grad.data[0] / batch;
            for (int bi = 0; bi < batch; ++bi)
                dx.data[static_cast<std::size_t>(bi) * classes + (*labs)[bi]] -= g;
        };
    }
    return node;
}

NodeRef kl_mean_const(const NodeRef& logp, const Tensor& p_ref) {
    const Tensor& v = logp->value;
    check_same_shape(v, p_ref, "kl_mean_const");
    if (v.ndim() != 2) throw ConfigError("kl_mean_const: expected [B,C], got " + shape_str(v.shape));
    const int batch = v.dim(0), classes = v.dim(1);
    double s = 0.0;
    for (std::size_t i = 0; i < v.data.size(); ++i) {
        const double p = p_ref.data[i];
        if (p > 0.0) s += p * (std::log(p) - v.data[i]);
    }
    auto node = std::make_shared<Node>();
    node->value = Tensor::scalar(s / batch);
    node->inputs = {logp};
    node->requires_grad = logp->requires_grad;
    if (node->requires_grad) {
        NodeRef lr = logp;
        auto pref = std::make_shared<Tensor>(p_ref);
        node->backward_op = [lr, pref, batch](Node& self) {
            Tensor& dx = lr->ensure_grad();
            const double g = self.grad.data[0] / batch;
            for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] -= g * pref->data[i];
        };
    }
    return node;
}

Tensor softmax_rows(const Tensor& logits) {
    Tensor out = log_softmax_rows(logits);
    for (double& v : out.data) v = std::exp(v);
    return out;
}

Tensor log_softmax_rows(const Tensor& logits) {
    if (logits.ndim() != 2)
        throw ConfigError("log_softmax_rows: expected [B,C], got " + shape_str(logits.shape));
    const int batch = logits.dim(0), classes = logits.dim(1);
    Tensor out({batch, classes});
    for (int bi = 0; bi < batch; ++bi) {
        const double* row = logits.ptr() + static_cast<std::size_t>(bi) * classes;
        double mx = row[0];
        for (int c = 1; c < classes; ++c) mx = std::max(mx, row[c]);
        double lse = 0.0;
        for (int c = 0; c < classes; ++c) lse += std::exp(row[c] - mx);
        lse = mx + std::log(lse);
        for (int c = 0; c < classes; ++c)
            out.data[static_cast<std::size_t>(bi) * classes + c] = row[c] - lse;
    }
    return out;
}

}  // namespace pqkd
