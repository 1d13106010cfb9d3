// SPDX-License-Identifier: Apache-2.0
#include "epl/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace epl {
namespace {

[[noreturn]] void shape_fail(const std::string& op, const std::string& detail)
{
    throw ShapeError(op + ": " + detail);
}

struct ConvGeometry {
    std::size_t batch, channels, height, width;
    std::size_t out_channels, kh, kw;
    std::size_t out_h, out_w;
    std::size_t stride, pad;

    std::size_t patch() const { return channels * kh * kw; }
    std::size_t positions() const { return out_h * out_w; }
};

// Rows of `col` are (c, ky, kx) patch coordinates; columns are output positions.
void im2col(const float* image, const ConvGeometry& g, float* col)
{
    const std::size_t positions = g.positions();
    std::size_t row = 0;
    for (std::size_t c = 0; c < g.channels; ++c) {
        const float* plane = image + c * g.height * g.width;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
            for (std::size_t kx = 0; kx < g.kw; ++kx, ++row) {
                float* dst = col + row * positions;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad);
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                        static_cast<std::ptrdiff_t>(g.pad);
                        const bool inside = iy >= 0 && ix >= 0 &&
                                            iy < static_cast<std::ptrdiff_t>(g.height) &&
                                            ix < static_cast<std::ptrdiff_t>(g.width);
                        dst[oy * g.out_w + ox] = inside ? plane[iy * g.width + ix] : 0.0f;
                    }
                }
            }
        }
    }
}

void col2im_add(const double* col, const ConvGeometry& g, double* image)
{
    const std::size_t positions = g.positions();
    std::size_t row = 0;
    for (std::size_t c = 0; c < g.channels; ++c) {
        double* plane = image + c * g.height * g.width;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
            for (std::size_t kx = 0; kx < g.kw; ++kx, ++row) {
                const double* src = col + row * positions;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                        static_cast<std::ptrdiff_t>(g.pad);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
                        plane[iy * g.width + ix] += src[oy * g.out_w + ox];
                    }
                }
            }
        }
    }
}

void require_rank4(const std::string& op, const Tensor& x)
{
    if (x.rank() != 4) shape_fail(op, "expected (N,C,H,W) input, got " + shape_str(x.dims()));
}

}  // namespace

NodeId Graph::push(Tensor value, std::vector<std::size_t> inputs,
                   std::function<void(Graph&, std::size_t)> backward)
{
    Node n;
    n.value = std::move(value);
    n.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                  [this](std::size_t i) { return nodes_[i].requires_grad; });
    n.inputs = std::move(inputs);
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return {nodes_.size() - 1};
}

Tensor& Graph::grad_of(std::size_t i)
{
    auto& n = nodes_[i];
    if (n.grad.numel() == 0) n.grad = Tensor::zeros(n.value.dims());
    return n.grad;
}

NodeId Graph::constant(Tensor value)
{
    return push(std::move(value), {}, nullptr);
}

NodeId Graph::parameter(std::string id, Tensor value)
{
    Node n;
    n.value = std::move(value);
    n.param_id = std::move(id);
    n.requires_grad = true;
    nodes_.push_back(std::move(n));
    return {nodes_.size() - 1};
}

NodeId Graph::matmul(NodeId a, NodeId b)
{
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0)) {
        shape_fail("matmul", "cannot multiply " + shape_str(A.dims()) + " by " + shape_str(B.dims()));
    }
    const std::size_t M = A.dim(0), K = A.dim(1), N = B.dim(1);
    Tensor C({M, N});
    std::vector<double> acc(N);
    for (std::size_t i = 0; i < M; ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t k = 0; k < K; ++k) {
            const double aik = A[i * K + k];
            if (aik == 0.0) continue;
            const float* brow = B.ptr() + k * N;
            for (std::size_t j = 0; j < N; ++j) acc[j] += aik * brow[j];
        }
        for (std::size_t j = 0; j < N; ++j) C[i * N + j] = static_cast<float>(acc[j]);
    }
    return push(std::move(C), {a.index, b.index}, [M, K, N](Graph& g, std::size_t self) {
        const auto ia = g.nodes_[self].inputs[0];
        const auto ib = g.nodes_[self].inputs[1];
        const Tensor& dC = g.nodes_[self].grad;
        const Tensor& A = g.nodes_[ia].value;
        const Tensor& B = g.nodes_[ib].value;
        if (g.needs_grad(ia)) {
            // dA = dC * B^T, formed as axpy over rows of B^T.
            std::vector<float> bt(K * N);
            for (std::size_t k = 0; k < K; ++k)
                for (std::size_t j = 0; j < N; ++j) bt[j * K + k] = B[k * N + j];
            Tensor& dA = g.grad_of(ia);
            std::vector<double> acc(K);
            for (std::size_t i = 0; i < M; ++i) {
                std::fill(acc.begin(), acc.end(), 0.0);
                for (std::size_t j = 0; j < N; ++j) {
                    const double gij = dC[i * N + j];
                    if (gij == 0.0) continue;
                    const float* row = bt.data() + j * K;
                    for (std::size_t k = 0; k < K; ++k) acc[k] += gij * row[k];
                }
                for (std::size_t k = 0; k < K; ++k) dA[i * K + k] += static_cast<float>(acc[k]);
            }
        }
        if (g.needs_grad(ib)) {
            // dB = A^T * dC
            std::vector<double> acc(K * N, 0.0);
            for (std::size_t i = 0; i < M; ++i) {
                const float* grow = dC.ptr() + i * N;
                for (std::size_t k = 0; k < K; ++k) {
                    const double aik = A[i * K + k];
                    if (aik == 0.0) continue;
                    double* arow = acc.data() + k * N;
                    for (std::size_t j = 0; j < N; ++j) arow[j] += aik * grow[j];
                }
            }
            Tensor& dB = g.grad_of(ib);
            for (std::size_t e = 0; e < K * N; ++e) dB[e] += static_cast<float>(acc[e]);
        }
    });
}

NodeId Graph::add(NodeId a, NodeId b)
{
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.dims() != B.dims()) {
        shape_fail("add", "operand dims " + shape_str(A.dims()) + " and " + shape_str(B.dims()) + " differ");
    }
    Tensor C(A.dims());
    for (std::size_t i = 0; i < C.numel(); ++i) C[i] = A[i] + B[i];
    return push(std::move(C), {a.index, b.index}, [](Graph& g, std::size_t self) {
        for (std::size_t slot = 0; slot < 2; ++slot) {
            const auto in = g.nodes_[self].inputs[slot];
            if (!g.needs_grad(in)) continue;
            Tensor& d = g.grad_of(in);
            const Tensor& up = g.nodes_[self].grad;
            for (std::size_t i = 0; i < d.numel(); ++i) d[i] += up[i];
        }
    });
}

NodeId Graph::add_bias(NodeId x, NodeId bias)
{
    const Tensor& X = value(x);
    const Tensor& b = value(bias);
    if (X.rank() < 2 || b.rank() != 1 || b.dim(0) != X.dim(1)) {
        shape_fail("add_bias", "bias " + shape_str(b.dims()) + " does not match channels of " +
                                   shape_str(X.dims()));
    }
    const std::size_t N = X.dim(0), C = X.dim(1), inner = X.numel() / (N * C);
    Tensor Y(X.dims());
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            const std::size_t base = (n * C + c) * inner;
            for (std::size_t i = 0; i < inner; ++i) Y[base + i] = X[base + i] + b[c];
        }
    return push(std::move(Y), {x.index, bias.index}, [N, C, inner](Graph& g, std::size_t self) {
        const auto ix = g.nodes_[self].inputs[0];
        const auto ib = g.nodes_[self].inputs[1];
        const Tensor& up = g.nodes_[self].grad;
        if (g.needs_grad(ix)) {
            Tensor& dx = g.grad_of(ix);
            for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] += up[i];
        }
        if (g.needs_grad(ib)) {
            Tensor& db = g.grad_of(ib);
            for (std::size_t c = 0; c < C; ++c) {
                double s = 0.0;
                for (std::size_t n = 0; n < N; ++n) {
                    const float* p = up.ptr() + (n * C + c) * inner;
                    for (std::size_t i = 0; i < inner; ++i) s += p[i];
                }
                db[c] += static_cast<float>(s);
            }
        }
    });
}

NodeId Graph::conv2d(NodeId x, NodeId kernel, Conv2dOptions opts)
{
    const Tensor& X = value(x);
    const Tensor& W = value(kernel);
    require_rank4("conv2d", X);
    if (W.rank() != 4 || W.dim(1) != X.dim(1)) {
        shape_fail("conv2d", "kernel " + shape_str(W.dims()) + " incompatible with input " +
                                 shape_str(X.dims()));
    }
    if (opts.stride == 0) shape_fail("conv2d", "stride must be positive");
    ConvGeometry geo{X.dim(0), X.dim(1), X.dim(2), X.dim(3), W.dim(0), W.dim(2), W.dim(3),
                     0, 0, opts.stride, opts.padding};
    if (geo.height + 2 * geo.pad < geo.kh || geo.width + 2 * geo.pad < geo.kw) {
        shape_fail("conv2d", "kernel " + shape_str(W.dims()) + " larger than padded input " +
                                 shape_str(X.dims()));
    }
    geo.out_h = (geo.height + 2 * geo.pad - geo.kh) / geo.stride + 1;
    geo.out_w = (geo.width + 2 * geo.pad - geo.kw) / geo.stride + 1;

    const std::size_t K = geo.patch(), P = geo.positions(), O = geo.out_channels;
    Tensor Y({geo.batch, O, geo.out_h, geo.out_w});
    std::vector<float> col(K * P);
    std::vector<double> acc(P);
    const std::size_t image_size = geo.channels * geo.height * geo.width;
    for (std::size_t n = 0; n < geo.batch; ++n) {
        im2col(X.ptr() + n * image_size, geo, col.data());
        for (std::size_t o = 0; o < O; ++o) {
            std::fill(acc.begin(), acc.end(), 0.0);
            const float* wrow = W.ptr() + o * K;
            for (std::size_t k = 0; k < K; ++k) {
                const double w = wrow[k];
                const float* crow = col.data() + k * P;
                for (std::size_t p = 0; p < P; ++p) acc[p] += w * crow[p];
            }
            float* out = Y.ptr() + (n * O + o) * P;
            for (std::size_t p = 0; p < P; ++p) out[p] = static_cast<float>(acc[p]);
        }
    }

    return push(std::move(Y), {x.index, kernel.index}, [geo](Graph& g, std::size_t self) {
        const auto ix = g.nodes_[self].inputs[0];
        const auto iw = g.nodes_[self].inputs[1];
        const Tensor& X = g.nodes_[ix].value;
        const Tensor& W = g.nodes_[iw].value;
        const Tensor& dY = g.nodes_[self].grad;
        const std::size_t K = geo.patch(), P = geo.positions(), O = geo.out_channels;
        const std::size_t image_size = geo.channels * geo.height * geo.width;
        const bool want_dw = g.needs_grad(iw), want_dx = g.needs_grad(ix);

        std::vector<float> col(K * P), colt(want_dw ? K * P : 0);
        std::vector<double> dw(want_dw ? O * K : 0, 0.0);
        std::vector<double> dcol(want_dx ? K * P : 0), dimage(want_dx ? image_size : 0);
        for (std::size_t n = 0; n < geo.batch; ++n) {
            const float* dy = dY.ptr() + n * O * P;
            if (want_dw) {
                im2col(X.ptr() + n * image_size, geo, col.data());
                for (std::size_t k = 0; k < K; ++k)
                    for (std::size_t p = 0; p < P; ++p) colt[p * K + k] = col[k * P + p];
                for (std::size_t o = 0; o < O; ++o) {
                    double* drow = dw.data() + o * K;
                    for (std::size_t p = 0; p < P; ++p) {
                        const double gy = dy[o * P + p];
                        if (gy == 0.0) continue;
                        const float* crow = colt.data() + p * K;
                        for (std::size_t k = 0; k < K; ++k) drow[k] += gy * crow[k];
                    }
                }
            }
            if (want_dx) {
                std::fill(dcol.begin(), dcol.end(), 0.0);
                for (std::size_t o = 0; o < O; ++o) {
                    const float* wrow = W.ptr() + o * K;
                    const float* grow = dy + o * P;
                    for (std::size_t k = 0; k < K; ++k) {
                        const double w = wrow[k];
                        double* drow = dcol.data() + k * P;
                        for (std::size_t p = 0; p < P; ++p) drow[p] += w * grow[p];
                    }
                }
                std::fill(dimage.begin(), dimage.end(), 0.0);
                col2im_add(dcol.data(), geo, dimage.data());
                Tensor& dX = g.grad_of(ix);
                float* dst = dX.ptr() + n * image_size;
                for (std::size_t i = 0; i < image_size; ++i) dst[i] += static_cast<float>(dimage[i]);
            }
        }
        if (want_dw) {
            Tensor& dW = g.grad_of(iw);
            for (std::size_t e = 0; e < O * K; ++e) dW[e] += static_cast<float>(dw[e]);
        }
    });
}

NodeId Graph::relu(NodeId x)
{
    const Tensor& X = value(x);
    Tensor Y(X.dims());
    for (std::size_t i = 0; i < Y.numel(); ++i) Y[i] = X[i] > 0.0f ? X[i] : 0.0f;
    return push(std::move(Y), {x.index}, [](Graph& g, std::size_t self) {
        const auto ix = g.nodes_[self].inputs[0];
        const Tensor& X = g.nodes_[ix].value;
        const Tensor& up = g.nodes_[self].grad;
        Tensor& dx = g.grad_of(ix);
        for (std::size_t i = 0; i < dx.numel(); ++i) {
            if (X[i] > 0.0f) dx[i] += up[i];
        }
    });
}

NodeId Graph::max_pool2(NodeId x)
{
    const Tensor& X = value(x);
    require_rank4("max_pool2", X);
    const std::size_t N = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
    if (H < 2 || W < 2) shape_fail("max_pool2", "spatial dims too small in " + shape_str(X.dims()));
    const std::size_t Ho = H / 2, Wo = W / 2;
    Tensor Y({N, C, Ho, Wo});
    std::vector<std::size_t> argmax(Y.numel());
    for (std::size_t nc = 0; nc < N * C; ++nc) {
        const std::size_t in_base = nc * H * W, out_base = nc * Ho * Wo;
        for (std::size_t oy = 0; oy < Ho; ++oy)
            for (std::size_t ox = 0; ox < Wo; ++ox) {
                std::size_t best = in_base + (2 * oy) * W + 2 * ox;
                for (std::size_t dy = 0; dy < 2; ++dy)
                    for (std::size_t dx = 0; dx < 2; ++dx) {
                        const std::size_t idx = in_base + (2 * oy + dy) * W + 2 * ox + dx;
                        if (X[idx] > X[best]) best = idx;
                    }
                Y[out_base + oy * Wo + ox] = X[best];
                argmax[out_base + oy * Wo + ox] = best;
            }
    }
    return push(std::move(Y), {x.index}, [argmax = std::move(argmax)](Graph& g, std::size_t self) {
        const auto ix = g.nodes_[self].inputs[0];
        const Tensor& up = g.nodes_[self].grad;
        Tensor& dx = g.grad_of(ix);
        for (std::size_t i = 0; i < up.numel(); ++i) dx[argmax[i]] += up[i];
    });
}

NodeId Graph::avg_pool2(NodeId x)
{
    const Tensor& X = value(x);
    require_rank4("avg_pool2", X);
    const std::size_t N = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
    if (H < 2 || W < 2) shape_fail("avg_pool2", "spatial dims too small in " + shape_str(X.dims()));
    const std::size_t Ho = H / 2, Wo = W / 2;
    Tensor Y({N, C, Ho, Wo});
    for (std::size_t nc = 0; nc < N * C; ++nc) {
        const float* in = X.ptr() + nc * H * W;
        for (std::size_t oy = 0; oy < Ho; ++oy)
            for (std::size_t ox = 0; ox < Wo; ++ox) {
                const double s = static_cast<double>(in[2 * oy * W + 2 * ox]) + in[2 * oy * W + 2 * ox + 1] +
                                 in[(2 * oy + 1) * W + 2 * ox] + in[(2 * oy + 1) * W + 2 * ox + 1];
                Y[nc * Ho * Wo + oy * Wo + ox] = static_cast<float>(s * 0.25);
            }
    }
    return push(std::move(Y), {x.index}, [H, W, Ho, Wo, NC = N * C](Graph& g, std::size_t self) {
        const auto ix = g.nodes_[self].inputs[0];
        const Tensor& up = g.nodes_[self].grad;
        Tensor& dx = g.grad_of(ix);
        for (std::size_t nc = 0; nc < NC; ++nc) {
            float* d = dx.ptr() + nc * H * W;
            for (std::size_t oy = 0; oy < Ho; ++oy)
                for (std::size_t ox = 0; ox < Wo; ++ox) {
                    const float q = up[nc * Ho * Wo + oy * Wo + ox] * 0.25f;
                    d[2 * oy * W + 2 * ox] += q;
                    d[2 * oy * W + 2 * ox + 1] += q;
                    d[(2 * oy + 1) * W + 2 * ox] += q;
                    d[(2 * oy + 1) * W + 2 * ox + 1] += q;
                }
        }
    });
}

NodeId Graph::global_avg_pool(NodeId x)
{
    const Tensor& X = value(x);
    require_rank4("global_avg_pool", X);
    const std::size_t N = X.dim(0), C = X.dim(1), HW = X.dim(2) * X.dim(3);
    Tensor Y({N, C});
    for (std::size_t nc = 0; nc < N * C; ++nc) {
        double s = 0.0;
        for (std::size_t i = 0; i < HW; ++i) s += X[nc * HW + i];
        Y[nc] = static_cast<float>(s / static_cast<double>(HW));
    }
    return push(std::move(Y), {x.index}, [HW](Graph& g, std::size_t self) {
        const auto ix = g.nodes_[self].inputs[0];
        const Tensor& up = g.nodes_[self].grad;
        Tensor& dx = g.grad_of(ix);
        for (std::size_t nc = 0; nc < up.numel(); ++nc) {
            const float q = static_cast<float>(up[nc] / static_cast<double>(HW));
            for (std::size_t i = 0; i < HW; ++i) dx[nc * HW + i] += q;
        }
    });
}

NodeId Graph::flatten(NodeId x)
{
    const Tensor& X = value(x);
    if (X.rank() < 1) shape_fail("flatten", "scalar input");
    const std::size_t N = X.dim(0);
    Tensor Y = X.reshaped({N, X.numel() / N});
    return push(std::move(Y), {x.index}, [](Graph& g, std::size_t self) {
        const auto ix = g.nodes_[self].inputs[0];
        const Tensor& up = g.nodes_[self].grad;
        Tensor& dx = g.grad_of(ix);
        for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] += up[i];
    });
}

NodeId Graph::softmax_cross_entropy(NodeId logits, std::span<const int> labels)
{
    const Tensor& L = value(logits);
    if (L.rank() != 2) shape_fail("softmax_cross_entropy", "expected (N,K) logits, got " + shape_str(L.dims()));
    const std::size_t N = L.dim(0), K = L.dim(1);
    if (labels.size() != N) {
        shape_fail("softmax_cross_entropy",
                   std::to_string(labels.size()) + " labels for logits " + shape_str(L.dims()));
    }
    std::vector<int> y(labels.begin(), labels.end());
    for (int label : y) {
        if (label < 0 || static_cast<std::size_t>(label) >= K) {
            shape_fail("softmax_cross_entropy",
                       "label " + std::to_string(label) + " out of range for " + std::to_string(K) + " classes");
        }
    }
    // probabilities kept in double for the backward pass
    std::vector<double> prob(N * K);
    double total = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
        const float* row = L.ptr() + n * K;
        const double mx = *std::max_element(row, row + K);
        double z = 0.0;
        for (std::size_t k = 0; k < K; ++k) z += std::exp(static_cast<double>(row[k]) - mx);
        const double log_z = std::log(z) + mx;
        for (std::size_t k = 0; k < K; ++k) prob[n * K + k] = std::exp(row[k] - log_z);
        total += log_z - row[y[n]];
    }
    Tensor out({1}, static_cast<float>(total / static_cast<double>(N)));
    return push(std::move(out), {logits.index},
                [N, K, y = std::move(y), prob = std::move(prob)](Graph& g, std::size_t self) {
                    const auto il = g.nodes_[self].inputs[0];
                    const double scale = g.nodes_[self].grad[0] / static_cast<double>(N);
                    Tensor& dl = g.grad_of(il);
                    for (std::size_t n = 0; n < N; ++n)
                        for (std::size_t k = 0; k < K; ++k) {
                            const double target = static_cast<std::size_t>(y[n]) == k ? 1.0 : 0.0;
                            dl[n * K + k] += static_cast<float>(scale * (prob[n * K + k] - target));
                        }
                });
}

ParamMap Graph::gradients(NodeId loss)
{
    const Tensor& L = value(loss);
    if (L.numel() != 1) {
        throw ShapeError("gradients: loss node must be scalar, got " + shape_str(L.dims()));
    }
    for (auto& n : nodes_) n.grad = Tensor();
    grad_of(loss.index)[0] = 1.0f;
    for (std::size_t i = loss.index + 1; i-- > 0;) {
        auto& n = nodes_[i];
        if (n.backward && n.grad.numel() != 0) n.backward(*this, i);
    }
    ParamMap grads;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        auto& n = nodes_[i];
        if (!n.param_id) continue;
        grads[*n.param_id] = n.grad.numel() ? n.grad : Tensor::zeros(n.value.dims());
    }
    return grads;
}

}  // namespace epl
