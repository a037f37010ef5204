// SPDX-License-Identifier: Apache-2.0
//
// rffi: WiFi device fingerprinting and re-identification toolkit
// Copyright (C) 2026 The rffi Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------

#pragma once

// Residual CNN forward/backward over flat parameter vectors. Templated so the
// gradient check can run the same code in double precision.

#include "rffi/encoder.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <vector>

namespace rffi::nn {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

struct ConvSpec {
    int cin = 0, cout = 0, k = 3, stride = 1, pad = 1;
    int h = 0, w = 0, ho = 0, wo = 0;
    std::size_t weight = 0;  // offset of the [cout x (k*k*cin)] weight matrix
};

struct BnSpec {
    int c = 0;
    std::size_t gamma = 0, beta = 0;     // parameter offsets
    std::size_t mean = 0, var = 0;       // buffer offsets
};

struct BlockSpec {
    ConvSpec c1, c2, cp;
    BnSpec b1, b2, bp;
    bool projection = false;
};

struct Plan {
    ConvSpec stem;
    BnSpec stem_bn;
    std::vector<BlockSpec> blocks;
    int features = 0;
    int dim = 0;
    std::size_t dense_w = 0, dense_b = 0;
    std::size_t n_params = 0, n_buffers = 0;
    std::vector<TensorInfo> tensors;
};

Plan make_plan(const EncoderArchitecture& arch);

inline constexpr double kBnEps = 1e-5;
inline constexpr double kBnMomentum = 0.1;

// ---- primitive ops -------------------------------------------------------

// Activations are [channels x pixels], pixel = y * width + x.
// im2col rows are ordered (ky, kx, ci) so each copy moves a contiguous channel run.
template <typename T>
void im2col(const Mat<T>& in, const ConvSpec& c, Mat<T>& cols) {
    cols.setZero(static_cast<Eigen::Index>(c.k) * c.k * c.cin, static_cast<Eigen::Index>(c.ho) * c.wo);
    for (int oy = 0; oy < c.ho; ++oy)
        for (int ox = 0; ox < c.wo; ++ox) {
            const Eigen::Index col = oy * c.wo + ox;
            for (int ky = 0; ky < c.k; ++ky) {
                const int iy = oy * c.stride - c.pad + ky;
                if (iy < 0 || iy >= c.h) continue;
                for (int kx = 0; kx < c.k; ++kx) {
                    const int ix = ox * c.stride - c.pad + kx;
                    if (ix < 0 || ix >= c.w) continue;
                    cols.col(col).segment((ky * c.k + kx) * c.cin, c.cin) = in.col(iy * c.w + ix);
                }
            }
        }
}

template <typename T>
void col2im_add(const Mat<T>& cols, const ConvSpec& c, Mat<T>& din) {
    for (int oy = 0; oy < c.ho; ++oy)
        for (int ox = 0; ox < c.wo; ++ox) {
            const Eigen::Index col = oy * c.wo + ox;
            for (int ky = 0; ky < c.k; ++ky) {
                const int iy = oy * c.stride - c.pad + ky;
                if (iy < 0 || iy >= c.h) continue;
                for (int kx = 0; kx < c.k; ++kx) {
                    const int ix = ox * c.stride - c.pad + kx;
                    if (ix < 0 || ix >= c.w) continue;
                    din.col(iy * c.w + ix) += cols.col(col).segment((ky * c.k + kx) * c.cin, c.cin);
                }
            }
        }
}

template <typename T>
auto weight_map(const T* p, const ConvSpec& c) {
    return Eigen::Map<const Mat<T>>(p + c.weight, c.cout, static_cast<Eigen::Index>(c.k) * c.k * c.cin);
}

template <typename T>
void conv_forward(const Mat<T>& in, const ConvSpec& c, const T* params, Mat<T>& out, Mat<T>& scratch) {
    im2col(in, c, scratch);
    out.noalias() = weight_map(params, c) * scratch;
}

// Accumulates dW; writes dIn when requested.
template <typename T>
void conv_backward(const Mat<T>& in, const ConvSpec& c, const T* params, const Mat<T>& dout, T* grads, Mat<T>* din,
                   Mat<T>& scratch) {
    im2col(in, c, scratch);
    Eigen::Map<Mat<T>> dw(grads + c.weight, c.cout, static_cast<Eigen::Index>(c.k) * c.k * c.cin);
    dw.noalias() += dout * scratch.transpose();
    if (din) {
        Mat<T> dcols = weight_map(params, c).transpose() * dout;
        din->setZero(c.cin, static_cast<Eigen::Index>(c.h) * c.w);
        col2im_add(dcols, c, *din);
    }
}

// Batch-statistics normalization in place; keeps xhat and 1/std for backward.
template <typename T>
void bn_forward_train(std::vector<Mat<T>>& xs, const BnSpec& b, const T* params, T* buffers, std::vector<Mat<T>>& xhat,
                      Vec<T>& inv_std) {
    const auto c = static_cast<Eigen::Index>(b.c);
    Vec<T> mean = Vec<T>::Zero(c), var = Vec<T>::Zero(c);
    Eigen::Index count = 0;
    for (const auto& x : xs) {
        mean += x.rowwise().sum();
        count += x.cols();
    }
    mean /= static_cast<T>(count);
    for (const auto& x : xs) var += (x.colwise() - mean).array().square().matrix().rowwise().sum();
    var /= static_cast<T>(count);
    inv_std = (var.array() + static_cast<T>(kBnEps)).rsqrt().matrix();
    Eigen::Map<const Vec<T>> gamma(params + b.gamma, c), beta(params + b.beta, c);
    xhat.resize(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        xhat[i] = ((xs[i].colwise() - mean).array().colwise() * inv_std.array()).matrix();
        xs[i] = ((xhat[i].array().colwise() * gamma.array()).colwise() + beta.array()).matrix();
    }
    if (buffers) {
        Eigen::Map<Vec<T>> rm(buffers + b.mean, c), rv(buffers + b.var, c);
        const T m = static_cast<T>(kBnMomentum);
        const T unbias = count > 1 ? static_cast<T>(count) / static_cast<T>(count - 1) : T(1);
        rm = (T(1) - m) * rm + m * mean;
        rv = (T(1) - m) * rv + m * unbias * var;
    }
}

template <typename T>
void bn_forward_eval(Mat<T>& x, const BnSpec& b, const T* params, const T* buffers) {
    const auto c = static_cast<Eigen::Index>(b.c);
    Eigen::Map<const Vec<T>> gamma(params + b.gamma, c), beta(params + b.beta, c);
    Eigen::Map<const Vec<T>> rm(buffers + b.mean, c), rv(buffers + b.var, c);
    const Vec<T> scale = (gamma.array() * (rv.array() + static_cast<T>(kBnEps)).rsqrt()).matrix();
    const Vec<T> shift = beta - (scale.array() * rm.array()).matrix();
    x = ((x.array().colwise() * scale.array()).colwise() + shift.array()).matrix();
}

// dys in, dxs out (in place).
template <typename T>
void bn_backward(std::vector<Mat<T>>& dys, const BnSpec& b, const T* params, T* grads, const std::vector<Mat<T>>& xhat,
                 const Vec<T>& inv_std) {
    const auto c = static_cast<Eigen::Index>(b.c);
    Eigen::Map<const Vec<T>> gamma(params + b.gamma, c);
    Eigen::Map<Vec<T>> dgamma(grads + b.gamma, c), dbeta(grads + b.beta, c);
    Vec<T> sum_dxhat = Vec<T>::Zero(c), sum_dxhat_xhat = Vec<T>::Zero(c);
    Eigen::Index count = 0;
    for (std::size_t i = 0; i < dys.size(); ++i) {
        dbeta += dys[i].rowwise().sum();
        dgamma += (dys[i].array() * xhat[i].array()).matrix().rowwise().sum();
        dys[i] = (dys[i].array().colwise() * gamma.array()).matrix();  // now dxhat
        sum_dxhat += dys[i].rowwise().sum();
        sum_dxhat_xhat += (dys[i].array() * xhat[i].array()).matrix().rowwise().sum();
        count += dys[i].cols();
    }
    const T inv_m = T(1) / static_cast<T>(count);
    for (std::size_t i = 0; i < dys.size(); ++i) {
        auto& d = dys[i];
        d = ((d.array().colwise() - sum_dxhat.array() * inv_m) -
             (xhat[i].array().colwise() * (sum_dxhat_xhat.array() * inv_m)))
                .matrix();
        d = (d.array().colwise() * inv_std.array()).matrix();
    }
}

template <typename T>
void relu(Mat<T>& x) {
    x = x.cwiseMax(T(0));
}

template <typename T>
void relu_backward(Mat<T>& d, const Mat<T>& out) {
    d = (out.array() > T(0)).select(d, T(0));
}

// ---- network -------------------------------------------------------------

template <typename T>
Mat<T> to_input(const ReducedSpectrogram& s) {
    Mat<T> x(1, s.values.size());
    const auto cols = s.values.cols();
    for (Eigen::Index r = 0; r < s.values.rows(); ++r)
        for (Eigen::Index c = 0; c < cols; ++c) x(0, r * cols + c) = static_cast<T>(s.values(r, c));
    return x;
}

// Inference: running statistics, one sample.
template <typename T>
Vec<T> forward_eval(const Plan& plan, const T* params, const T* buffers, const Mat<T>& input) {
    Mat<T> scratch, a, b, skip;
    conv_forward(input, plan.stem, params, a, scratch);
    bn_forward_eval(a, plan.stem_bn, params, buffers);
    relu(a);
    for (const auto& blk : plan.blocks) {
        conv_forward(a, blk.c1, params, b, scratch);
        bn_forward_eval(b, blk.b1, params, buffers);
        relu(b);
        Mat<T> c2;
        conv_forward(b, blk.c2, params, c2, scratch);
        bn_forward_eval(c2, blk.b2, params, buffers);
        if (blk.projection) {
            conv_forward(a, blk.cp, params, skip, scratch);
            bn_forward_eval(skip, blk.bp, params, buffers);
            c2 += skip;
        } else {
            c2 += a;
        }
        relu(c2);
        a = std::move(c2);
    }
    const Vec<T> feat = a.rowwise().mean();
    Eigen::Map<const Mat<T>> wd(params + plan.dense_w, plan.dim, plan.features);
    Eigen::Map<const Vec<T>> bd(params + plan.dense_b, plan.dim);
    Vec<T> z = wd * feat + bd;
    const T norm = z.norm();
    if (norm > T(0)) z /= norm;
    return z;
}

// Training pass with batch statistics. Keeps what backward needs.
template <typename T>
struct TrainPass {
    struct BlockCache {
        std::vector<Mat<T>> in, xhat1, r1, xhat2, xhatp, out;
        Vec<T> inv1, inv2, invp;
    };
    std::vector<Mat<T>> input, stem_xhat, stem_out;
    Vec<T> stem_inv;
    std::vector<BlockCache> blocks;
    std::vector<Vec<T>> feat, z;
    std::vector<Vec<T>> emb;
};

template <typename T>
void forward_train(const Plan& plan, const T* params, T* buffers, std::vector<Mat<T>> input, TrainPass<T>& tp) {
    const std::size_t n = input.size();
    Mat<T> scratch;
    tp.input = std::move(input);
    std::vector<Mat<T>> cur(n);
    for (std::size_t i = 0; i < n; ++i) conv_forward(tp.input[i], plan.stem, params, cur[i], scratch);
    bn_forward_train(cur, plan.stem_bn, params, buffers, tp.stem_xhat, tp.stem_inv);
    for (auto& x : cur) relu(x);
    tp.stem_out = cur;
    tp.blocks.assign(plan.blocks.size(), {});
    for (std::size_t bi = 0; bi < plan.blocks.size(); ++bi) {
        const auto& blk = plan.blocks[bi];
        auto& bc = tp.blocks[bi];
        bc.in = cur;
        std::vector<Mat<T>> h(n);
        for (std::size_t i = 0; i < n; ++i) conv_forward(bc.in[i], blk.c1, params, h[i], scratch);
        bn_forward_train(h, blk.b1, params, buffers, bc.xhat1, bc.inv1);
        for (auto& x : h) relu(x);
        bc.r1 = h;
        std::vector<Mat<T>> o(n);
        for (std::size_t i = 0; i < n; ++i) conv_forward(bc.r1[i], blk.c2, params, o[i], scratch);
        bn_forward_train(o, blk.b2, params, buffers, bc.xhat2, bc.inv2);
        if (blk.projection) {
            std::vector<Mat<T>> s(n);
            for (std::size_t i = 0; i < n; ++i) conv_forward(bc.in[i], blk.cp, params, s[i], scratch);
            bn_forward_train(s, blk.bp, params, buffers, bc.xhatp, bc.invp);
            for (std::size_t i = 0; i < n; ++i) o[i] += s[i];
        } else {
            for (std::size_t i = 0; i < n; ++i) o[i] += bc.in[i];
        }
        for (auto& x : o) relu(x);
        bc.out = o;
        cur = std::move(o);
    }
    Eigen::Map<const Mat<T>> wd(params + plan.dense_w, plan.dim, plan.features);
    Eigen::Map<const Vec<T>> bd(params + plan.dense_b, plan.dim);
    tp.feat.resize(n);
    tp.z.resize(n);
    tp.emb.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        tp.feat[i] = cur[i].rowwise().mean();
        tp.z[i] = wd * tp.feat[i] + bd;
        tp.emb[i] = tp.z[i] / tp.z[i].norm();
    }
}

// Accumulates parameter gradients given dLoss/dEmbedding per sample.
template <typename T>
void backward(const Plan& plan, const T* params, T* grads, const TrainPass<T>& tp, const std::vector<Vec<T>>& demb) {
    const std::size_t n = demb.size();
    Mat<T> scratch;
    Eigen::Map<const Mat<T>> wd(params + plan.dense_w, plan.dim, plan.features);
    Eigen::Map<Mat<T>> dwd(grads + plan.dense_w, plan.dim, plan.features);
    Eigen::Map<Vec<T>> dbd(grads + plan.dense_b, plan.dim);

    std::vector<Mat<T>> d(n);
    const auto& last = plan.blocks.empty() ? tp.stem_out : tp.blocks.back().out;
    for (std::size_t i = 0; i < n; ++i) {
        const T norm = tp.z[i].norm();
        const Vec<T> dz = (demb[i] - tp.emb[i] * tp.emb[i].dot(demb[i])) / norm;
        dwd.noalias() += dz * tp.feat[i].transpose();
        dbd += dz;
        const Vec<T> dfeat = wd.transpose() * dz;
        const auto pixels = last[i].cols();
        d[i] = (dfeat / static_cast<T>(pixels)).replicate(1, pixels);
    }

    for (std::size_t bi = plan.blocks.size(); bi-- > 0;) {
        const auto& blk = plan.blocks[bi];
        const auto& bc = tp.blocks[bi];
        for (std::size_t i = 0; i < n; ++i) relu_backward(d[i], bc.out[i]);
        std::vector<Mat<T>> dmain = d;
        bn_backward(dmain, blk.b2, params, grads, bc.xhat2, bc.inv2);
        std::vector<Mat<T>> dr1(n);
        for (std::size_t i = 0; i < n; ++i) conv_backward(bc.r1[i], blk.c2, params, dmain[i], grads, &dr1[i], scratch);
        for (std::size_t i = 0; i < n; ++i) relu_backward(dr1[i], bc.r1[i]);
        bn_backward(dr1, blk.b1, params, grads, bc.xhat1, bc.inv1);
        std::vector<Mat<T>> din(n);
        for (std::size_t i = 0; i < n; ++i) conv_backward(bc.in[i], blk.c1, params, dr1[i], grads, &din[i], scratch);
        if (blk.projection) {
            bn_backward(d, blk.bp, params, grads, bc.xhatp, bc.invp);
            for (std::size_t i = 0; i < n; ++i) {
                Mat<T> dskip;
                conv_backward(bc.in[i], blk.cp, params, d[i], grads, &dskip, scratch);
                din[i] += dskip;
            }
        } else {
            for (std::size_t i = 0; i < n; ++i) din[i] += d[i];
        }
        d = std::move(din);
    }
    for (std::size_t i = 0; i < n; ++i) relu_backward(d[i], tp.stem_out[i]);
    bn_backward(d, plan.stem_bn, params, grads, tp.stem_xhat, tp.stem_inv);
    for (std::size_t i = 0; i < n; ++i) conv_backward<T>(tp.input[i], plan.stem, params, d[i], grads, nullptr, scratch);
}

// Mean triplet hinge over a batch laid out as [anchors | positives | negatives].
template <typename T>
T triplet_batch_loss(const std::vector<Vec<T>>& emb, T margin, std::vector<Vec<T>>* demb) {
    const std::size_t b = emb.size() / 3;
    T loss = 0;
    if (demb) demb->assign(emb.size(), Vec<T>::Zero(emb[0].size()));
    for (std::size_t i = 0; i < b; ++i) {
        const auto& a = emb[i];
        const auto& p = emb[b + i];
        const auto& ng = emb[2 * b + i];
        const T v = (a - p).squaredNorm() - (a - ng).squaredNorm() + margin;
        if (v <= T(0)) continue;
        loss += v;
        if (demb) {
            const T s = T(2) / static_cast<T>(b);
            (*demb)[i] += s * (ng - p);
            (*demb)[b + i] += s * (p - a);
            (*demb)[2 * b + i] += s * (a - ng);
        }
    }
    return loss / static_cast<T>(b);
}

template <typename T>
void init_params(const Plan& plan, std::vector<T>& params, std::vector<T>& buffers, std::uint64_t seed) {
    Rng rng(seed);
    params.assign(plan.n_params, T(0));
    buffers.assign(plan.n_buffers, T(0));
    for (const auto& t : plan.tensors) {
        if (!t.trainable) {
            if (t.name.ends_with(".running_var"))
                std::fill_n(buffers.begin() + static_cast<long>(t.offset), t.count, T(1));
            continue;
        }
        if (t.name.ends_with(".gamma")) {
            std::fill_n(params.begin() + static_cast<long>(t.offset), t.count, T(1));
        } else if (t.name.ends_with(".w")) {
            std::size_t fan_in = 1;
            for (std::size_t i = 1; i < t.shape.size(); ++i) fan_in *= static_cast<std::size_t>(t.shape[i]);
            const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
            for (std::size_t i = 0; i < t.count; ++i) params[t.offset + i] = static_cast<T>(sd * rng.normal());
        }
    }
}

}  // namespace rffi::nn
