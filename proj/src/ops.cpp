#include "banforge/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "banforge/parallel.hpp"

namespace banforge::ops {

namespace {

[[noreturn]] void shape_error(const char* op, const std::string& detail) {
    throw ArgumentError(std::string(op) + ": " + detail);
}

void require_same_graph(Var a, Var b, const char* op) {
    if (a.graph == nullptr || a.graph != b.graph) shape_error(op, "operands live on different graphs");
}

// C[m,n] += A[m,k] * B[k,n]. Row-parallel; each output row is produced by one
// thread with a fixed k order.
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const real* a, const real* b, real* c) {
    auto rows = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            real* crow = c + i * n;
            const real* arow = a + i * k;
            for (std::size_t p = 0; p < k; ++p) {
                const real av = arow[p];
                if (av == real(0)) continue;
                const real* brow = b + p * n;
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    };
    if (m * n * k >= 1u << 16) {
        parallel_for(m, rows);
    } else {
        rows(0, m);
    }
}

// C[m,n] += A[m,k] * B^T where B is [n,k].
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const real* a, const real* b, real* c) {
    auto rows = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const real* arow = a + i * k;
            real* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) {
                const real* brow = b + j * k;
                real acc = 0;
                for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
                crow[j] += acc;
            }
        }
    };
    if (m * n * k >= 1u << 16) {
        parallel_for(m, rows);
    } else {
        rows(0, m);
    }
}

// C[m,n] += A^T * B where A is [k,m], B is [k,n].
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const real* a, const real* b, real* c) {
    auto rows = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            real* crow = c + i * n;
            for (std::size_t p = 0; p < k; ++p) {
                const real av = a[p * m + i];
                if (av == real(0)) continue;
                const real* brow = b + p * n;
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    };
    if (m * n * k >= 1u << 16) {
        parallel_for(m, rows);
    } else {
        rows(0, m);
    }
}

struct ConvDims {
    std::size_t batch, cin, h, w;
    std::size_t cout, kh, kw;
    std::size_t stride, pad;
    std::size_t ho, wo;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int pad) {
    if (x.rank() != 4) shape_error("conv2d", "input must be [b,Cin,H,W], got " + x.shape_str());
    if (w.rank() != 4) shape_error("conv2d", "weight must be [Cout,Cin,kh,kw], got " + w.shape_str());
    if (stride < 1) shape_error("conv2d", "stride must be >= 1");
    if (pad < 0) shape_error("conv2d", "pad must be >= 0");
    ConvDims d{};
    d.batch = x.dim(0);
    d.cin = x.dim(1);
    d.h = x.dim(2);
    d.w = x.dim(3);
    d.cout = w.dim(0);
    d.kh = w.dim(2);
    d.kw = w.dim(3);
    d.stride = static_cast<std::size_t>(stride);
    d.pad = static_cast<std::size_t>(pad);
    if (w.dim(1) != d.cin) {
        shape_error("conv2d", "weight Cin " + std::to_string(w.dim(1)) + " != input Cin " + std::to_string(d.cin));
    }
    if (d.h + 2 * d.pad < d.kh || d.w + 2 * d.pad < d.kw) shape_error("conv2d", "kernel larger than padded input");
    d.ho = (d.h + 2 * d.pad - d.kh) / d.stride + 1;
    d.wo = (d.w + 2 * d.pad - d.kw) / d.stride + 1;
    return d;
}

// Unrolls one sample into col [Cin*kh*kw, Ho*Wo], matching the row-major
// flattening of the weight tensor.
void im2col(const real* x, const ConvDims& d, real* col) {
    const std::size_t l = d.ho * d.wo;
    for (std::size_t ci = 0; ci < d.cin; ++ci) {
        const real* plane = x + ci * d.h * d.w;
        for (std::size_t u = 0; u < d.kh; ++u) {
            for (std::size_t v = 0; v < d.kw; ++v) {
                real* crow = col + ((ci * d.kh + u) * d.kw + v) * l;
                for (std::size_t ho = 0; ho < d.ho; ++ho) {
                    const std::ptrdiff_t hi = static_cast<std::ptrdiff_t>(ho * d.stride + u) - static_cast<std::ptrdiff_t>(d.pad);
                    for (std::size_t wo = 0; wo < d.wo; ++wo) {
                        const std::ptrdiff_t wi = static_cast<std::ptrdiff_t>(wo * d.stride + v) - static_cast<std::ptrdiff_t>(d.pad);
                        real val = 0;
                        if (hi >= 0 && hi < static_cast<std::ptrdiff_t>(d.h) && wi >= 0 && wi < static_cast<std::ptrdiff_t>(d.w)) {
                            val = plane[static_cast<std::size_t>(hi) * d.w + static_cast<std::size_t>(wi)];
                        }
                        crow[ho * d.wo + wo] = val;
                    }
                }
            }
        }
    }
}

// Scatter-add of a col gradient back onto one input sample.
void col2im_add(const real* col, const ConvDims& d, real* dx) {
    const std::size_t l = d.ho * d.wo;
    for (std::size_t ci = 0; ci < d.cin; ++ci) {
        real* plane = dx + ci * d.h * d.w;
        for (std::size_t u = 0; u < d.kh; ++u) {
            for (std::size_t v = 0; v < d.kw; ++v) {
                const real* crow = col + ((ci * d.kh + u) * d.kw + v) * l;
                for (std::size_t ho = 0; ho < d.ho; ++ho) {
                    const std::ptrdiff_t hi = static_cast<std::ptrdiff_t>(ho * d.stride + u) - static_cast<std::ptrdiff_t>(d.pad);
                    if (hi < 0 || hi >= static_cast<std::ptrdiff_t>(d.h)) continue;
                    for (std::size_t wo = 0; wo < d.wo; ++wo) {
                        const std::ptrdiff_t wi = static_cast<std::ptrdiff_t>(wo * d.stride + v) - static_cast<std::ptrdiff_t>(d.pad);
                        if (wi < 0 || wi >= static_cast<std::ptrdiff_t>(d.w)) continue;
                        plane[static_cast<std::size_t>(hi) * d.w + static_cast<std::size_t>(wi)] += crow[ho * d.wo + wo];
                    }
                }
            }
        }
    }
}

} // namespace

Var matmul(Var a, Var b) {
    require_same_graph(a, b, "matmul");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
        shape_error("matmul", av.shape_str() + " x " + bv.shape_str());
    }
    const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    Tensor out({m, n});
    gemm_nn(m, n, k, av.data(), bv.data(), out.data());

    auto bw = [a, b, m, k, n](Graph& g, std::uint32_t self) {
        const Tensor& gy = g.grad(self);
        if (g.requires_grad(a.id)) {
            gemm_nt(m, k, n, gy.data(), g.value(b.id).data(), g.grad(a.id).data());
        }
        if (g.requires_grad(b.id)) {
            gemm_tn(k, n, m, g.value(a.id).data(), gy.data(), g.grad(b.id).data());
        }
    };
    return a.graph->record(std::move(out), {a.id, b.id}, bw, "matmul");
}

Var add(Var a, Var b) {
    require_same_graph(a, b, "add");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (!av.same_shape(bv)) shape_error("add", av.shape_str() + " vs " + bv.shape_str());
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] + bv[i];

    auto bw = [a, b](Graph& g, std::uint32_t self) {
        const Tensor& gy = g.grad(self);
        if (g.requires_grad(a.id)) {
            Tensor& ga = g.grad(a.id);
            for (std::size_t i = 0; i < gy.numel(); ++i) ga[i] += gy[i];
        }
        if (g.requires_grad(b.id)) {
            Tensor& gb = g.grad(b.id);
            for (std::size_t i = 0; i < gy.numel(); ++i) gb[i] += gy[i];
        }
    };
    return a.graph->record(std::move(out), {a.id, b.id}, bw, "add");
}

Var add_bias(Var x, Var bias) {
    require_same_graph(x, bias, "add_bias");
    const Tensor& xv = x.value();
    const Tensor& bv = bias.value();
    if (xv.rank() != 2 || bv.rank() != 1 || bv.dim(0) != xv.dim(1)) {
        shape_error("add_bias", xv.shape_str() + " + " + bv.shape_str());
    }
    const std::size_t m = xv.dim(0), n = xv.dim(1);
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xv[i * n + j] + bv[j];
    }

    auto bw = [x, bias, m, n](Graph& g, std::uint32_t self) {
        const Tensor& gy = g.grad(self);
        if (g.requires_grad(x.id)) {
            Tensor& gx = g.grad(x.id);
            for (std::size_t i = 0; i < gy.numel(); ++i) gx[i] += gy[i];
        }
        if (g.requires_grad(bias.id)) {
            Tensor& gb = g.grad(bias.id);
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) gb[j] += gy[i * n + j];
            }
        }
    };
    return x.graph->record(std::move(out), {x.id, bias.id}, bw, "add_bias");
}

Var add_channel_bias(Var x, Var bias) {
    require_same_graph(x, bias, "add_channel_bias");
    const Tensor& xv = x.value();
    const Tensor& bv = bias.value();
    if (xv.rank() != 4 || bv.rank() != 1 || bv.dim(0) != xv.dim(1)) {
        shape_error("add_channel_bias", xv.shape_str() + " + " + bv.shape_str());
    }
    const std::size_t b = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
    Tensor out(xv.shape());
    for (std::size_t s = 0; s < b; ++s) {
        for (std::size_t ci = 0; ci < c; ++ci) {
            const real add_v = bv[ci];
            const real* src = xv.data() + (s * c + ci) * hw;
            real* dst = out.data() + (s * c + ci) * hw;
            for (std::size_t i = 0; i < hw; ++i) dst[i] = src[i] + add_v;
        }
    }

    auto bw = [x, bias, b, c, hw](Graph& g, std::uint32_t self) {
        const Tensor& gy = g.grad(self);
        if (g.requires_grad(x.id)) {
            Tensor& gx = g.grad(x.id);
            for (std::size_t i = 0; i < gy.numel(); ++i) gx[i] += gy[i];
        }
        if (g.requires_grad(bias.id)) {
            Tensor& gb = g.grad(bias.id);
            for (std::size_t s = 0; s < b; ++s) {
                for (std::size_t ci = 0; ci < c; ++ci) {
                    const real* src = gy.data() + (s * c + ci) * hw;
                    real acc = 0;
                    for (std::size_t i = 0; i < hw; ++i) acc += src[i];
                    gb[ci] += acc;
                }
            }
        }
    };
    return x.graph->record(std::move(out), {x.id, bias.id}, bw, "add_channel_bias");
}

Var mul(Var a, Var b) {
    require_same_graph(a, b, "mul");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (!av.same_shape(bv)) shape_error("mul", av.shape_str() + " vs " + bv.shape_str());
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] * bv[i];

    auto bw = [a, b](Graph& g, std::uint32_t self) {
        const Tensor& gy = g.grad(self);
        if (g.requires_grad(a.id)) {
            Tensor& ga = g.grad(a.id);
            const Tensor& bval = g.value(b.id);
            for (std::size_t i = 0; i < gy.numel(); ++i) ga[i] += gy[i] * bval[i];
        }
        if (g.requires_grad(b.id)) {
            Tensor& gb = g.grad(b.id);
            const Tensor& aval = g.value(a.id);
            for (std::size_t i = 0; i < gy.numel(); ++i) gb[i] += gy[i] * aval[i];
        }
    };
    return a.graph->record(std::move(out), {a.id, b.id}, bw, "mul");
}

Var mul_const(Var a, Tensor factor) {
    const Tensor& av = a.value();
    if (!av.same_shape(factor)) shape_error("mul_const", av.shape_str() + " vs " + factor.shape_str());
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] * factor[i];

    auto bw = [a, factor = std::move(factor)](Graph& g, std::uint32_t self) {
        const Tensor& gy = g.grad(self);
        Tensor& ga = g.grad(a.id);
        for (std::size_t i = 0; i < gy.numel(); ++i) ga[i] += gy[i] * factor[i];
    };
    return a.graph->record(std::move(out), {a.id}, bw, "mul_const");
}

Var scale(Var a, double factor) {
    const Tensor& av = a.value();
    Tensor out(av.shape());
    const real f = static_cast<real>(factor);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] * f;

    auto bw = [a, f](Graph& g, std::uint32_t self) {
        const Tensor& gy = g.grad(self);
        Tensor& ga = g.grad(a.id);
        for (std::size_t i = 0; i < gy.numel(); ++i) ga[i] += gy[i] * f;
    };
    return a.graph->record(std::move(out), {a.id}, bw, "scale");
}

Var relu(Var x) {
    const Tensor& xv = x.value();
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = xv[i] > real(0) ? xv[i] : real(0);

    auto bw = [x](Graph& g, std::uint32_t self) {
        const Tensor& gy = g.grad(self);
        const Tensor& xval = g.value(x.id);
        Tensor& gx = g.grad(x.id);
        // Subgradient at 0 is 0.
        for (std::size_t i = 0; i < gy.numel(); ++i) gx[i] += xval[i] > real(0) ? gy[i] : real(0);
    };
    return x.graph->record(std::move(out), {x.id}, bw, "relu");
}

Var sigmoid(Var x) {
    const Tensor& xv = x.value();
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = real(1) / (real(1) + std::exp(-xv[i]));

    auto bw = [x](Graph& g, std::uint32_t self) {
        const Tensor& gy = g.grad(self);
        const Tensor& y = g.value(self);
        Tensor& gx = g.grad(x.id);
        for (std::size_t i = 0; i < gy.numel(); ++i) gx[i] += gy[i] * y[i] * (real(1) - y[i]);
    };
    return x.graph->record(std::move(out), {x.id}, bw, "sigmoid");
}

Var tanh(Var x) {
    const Tensor& xv = x.value();
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(xv[i]);

    auto bw = [x](Graph& g, std::uint32_t self) {
        const Tensor& gy = g.grad(self);
        const Tensor& y = g.value(self);
        Tensor& gx = g.grad(x.id);
        for (std::size_t i = 0; i < gy.numel(); ++i) gx[i] += gy[i] * (real(1) - y[i] * y[i]);
    };
    return x.graph->record(std::move(out), {x.id}, bw, "tanh");
}

Var log_softmax_rows(Var logits, double temperature) {
    if (temperature <= 0.0) throw ArgumentError("log_softmax temperature must be positive");
    const Tensor& zv = logits.value();
    if (zv.rank() != 2) shape_error("log_softmax", "expects [b,n], got " + zv.shape_str());
    const std::size_t rows = zv.dim(0), cols = zv.dim(1);
    const real inv_t = real(1) / static_cast<real>(temperature);
    Tensor out(zv.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const real* z = zv.data() + r * cols;
        real* y = out.data() + r * cols;
        real maxv = z[0];
        for (std::size_t c = 1; c < cols; ++c) maxv = std::max(maxv, z[c]);
        real sum = 0;
        for (std::size_t c = 0; c < cols; ++c) sum += std::exp((z[c] - maxv) * inv_t);
        const real lse = std::log(sum) + maxv * inv_t;
        for (std::size_t c = 0; c < cols; ++c) y[c] = z[c] * inv_t - lse;
    }

    auto bw = [logits, rows, cols, inv_t](Graph& g, std::uint32_t self) {
        const Tensor& gy = g.grad(self);
        const Tensor& y = g.value(self);
        Tensor& gz = g.grad(logits.id);
        for (std::size_t r = 0; r < rows; ++r) {
            const real* grow = gy.data() + r * cols;
            const real* yrow = y.data() + r * cols;
            real* out_row = gz.data() + r * cols;
            real gsum = 0;
            for (std::size_t c = 0; c < cols; ++c) gsum += grow[c];
            for (std::size_t c = 0; c < cols; ++c) {
                out_row[c] += (grow[c] - std::exp(yrow[c]) * gsum) * inv_t;
            }
        }
    };
    return logits.graph->record(std::move(out), {logits.id}, bw, "log_softmax");
}

Var sum_all(Var x) {
    const Tensor& xv = x.value();
    real total = 0;
    for (std::size_t i = 0; i < xv.numel(); ++i) total += xv[i];

    auto bw = [x](Graph& g, std::uint32_t self) {
        const real gy = g.grad(self)[0];
        Tensor& gx = g.grad(x.id);
        for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += gy;
    };
    return x.graph->record(Tensor::scalar(total), {x.id}, bw, "sum_all");
}

Var reshape(Var x, std::vector<std::size_t> shape) {
    const Tensor& xv = x.value();
    Tensor out(std::move(shape), std::vector<real>(xv.data(), xv.data() + xv.numel()));
    if (out.numel() != xv.numel()) shape_error("reshape", "element count changed");

    auto bw = [x](Graph& g, std::uint32_t self) {
        const Tensor& gy = g.grad(self);
        Tensor& gx = g.grad(x.id);
        for (std::size_t i = 0; i < gy.numel(); ++i) gx[i] += gy[i];
    };
    return x.graph->record(std::move(out), {x.id}, bw, "reshape");
}

Var slice_cols(Var x, std::size_t start, std::size_t len) {
    const Tensor& xv = x.value();
    if (xv.rank() != 2) shape_error("slice_cols", "expects [m,n], got " + xv.shape_str());
    const std::size_t m = xv.dim(0), n = xv.dim(1);
    if (len == 0 || start + len > n) shape_error("slice_cols", "range out of bounds");
    Tensor out({m, len});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < len; ++j) out[i * len + j] = xv[i * n + start + j];
    }

    auto bw = [x, start, len, m, n](Graph& g, std::uint32_t self) {
        const Tensor& gy = g.grad(self);
        Tensor& gx = g.grad(x.id);
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < len; ++j) gx[i * n + start + j] += gy[i * len + j];
        }
    };
    return x.graph->record(std::move(out), {x.id}, bw, "slice_cols");
}

Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw ArgumentError("concat_rows: no inputs");
    Graph* graph = parts[0].graph;
    const std::size_t cols = parts[0].value().dim(1);
    std::size_t rows = 0;
    std::vector<std::uint32_t> ids;
    ids.reserve(parts.size());
    for (const Var& p : parts) {
        if (p.graph != graph) shape_error("concat_rows", "operands live on different graphs");
        const Tensor& v = p.value();
        if (v.rank() != 2 || v.dim(1) != cols) shape_error("concat_rows", "column mismatch at " + v.shape_str());
        rows += v.dim(0);
        ids.push_back(p.id);
    }
    Tensor out({rows, cols});
    std::size_t offset = 0;
    for (const Var& p : parts) {
        const Tensor& v = p.value();
        std::copy(v.data(), v.data() + v.numel(), out.data() + offset);
        offset += v.numel();
    }

    auto bw = [ids, cols](Graph& g, std::uint32_t self) {
        const Tensor& gy = g.grad(self);
        std::size_t offset = 0;
        for (std::uint32_t id : ids) {
            const std::size_t count = g.value(id).numel();
            if (g.requires_grad(id)) {
                Tensor& gp = g.grad(id);
                for (std::size_t i = 0; i < count; ++i) gp[i] += gy[offset + i];
            }
            offset += count;
        }
    };
    return graph->record(std::move(out), std::move(ids), bw, "concat_rows");
}

Var concat_channels(Var a, Var b) {
    require_same_graph(a, b, "concat_channels");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() != 4 || bv.rank() != 4 || av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(2) ||
        av.dim(3) != bv.dim(3)) {
        shape_error("concat_channels", av.shape_str() + " vs " + bv.shape_str());
    }
    const std::size_t batch = av.dim(0), c1 = av.dim(1), c2 = bv.dim(1), hw = av.dim(2) * av.dim(3);
    Tensor out({batch, c1 + c2, av.dim(2), av.dim(3)});
    for (std::size_t s = 0; s < batch; ++s) {
        std::copy(av.data() + s * c1 * hw, av.data() + (s + 1) * c1 * hw, out.data() + s * (c1 + c2) * hw);
        std::copy(bv.data() + s * c2 * hw, bv.data() + (s + 1) * c2 * hw,
                  out.data() + s * (c1 + c2) * hw + c1 * hw);
    }

    auto bw = [a, b, batch, c1, c2, hw](Graph& g, std::uint32_t self) {
        const Tensor& gy = g.grad(self);
        if (g.requires_grad(a.id)) {
            Tensor& ga = g.grad(a.id);
            for (std::size_t s = 0; s < batch; ++s) {
                const real* src = gy.data() + s * (c1 + c2) * hw;
                real* dst = ga.data() + s * c1 * hw;
                for (std::size_t i = 0; i < c1 * hw; ++i) dst[i] += src[i];
            }
        }
        if (g.requires_grad(b.id)) {
            Tensor& gb = g.grad(b.id);
            for (std::size_t s = 0; s < batch; ++s) {
                const real* src = gy.data() + s * (c1 + c2) * hw + c1 * hw;
                real* dst = gb.data() + s * c2 * hw;
                for (std::size_t i = 0; i < c2 * hw; ++i) dst[i] += src[i];
            }
        }
    };
    return a.graph->record(std::move(out), {a.id, b.id}, bw, "concat_channels");
}

Var conv2d(Var x, Var w, int stride, int pad) {
    require_same_graph(x, w, "conv2d");
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    const ConvDims d = conv_dims(xv, wv, stride, pad);
    const std::size_t kdim = d.cin * d.kh * d.kw;
    const std::size_t l = d.ho * d.wo;

    Tensor out({d.batch, d.cout, d.ho, d.wo});
    parallel_for(d.batch, [&](std::size_t begin, std::size_t end) {
        std::vector<real> col(kdim * l);
        for (std::size_t s = begin; s < end; ++s) {
            im2col(xv.data() + s * d.cin * d.h * d.w, d, col.data());
            gemm_nn(d.cout, l, kdim, wv.data(), col.data(), out.data() + s * d.cout * l);
        }
    });

    auto bw = [x, w, d, kdim, l](Graph& g, std::uint32_t self) {
        const Tensor& gy = g.grad(self);
        const Tensor& xval = g.value(x.id);
        const Tensor& wval = g.value(w.id);
        if (g.requires_grad(w.id)) {
            // Serial over samples: the weight gradient accumulates across the
            // batch in a fixed order regardless of thread count.
            Tensor& gw = g.grad(w.id);
            std::vector<real> col(kdim * l);
            for (std::size_t s = 0; s < d.batch; ++s) {
                im2col(xval.data() + s * d.cin * d.h * d.w, d, col.data());
                gemm_nt(d.cout, kdim, l, gy.data() + s * d.cout * l, col.data(), gw.data());
            }
        }
        if (g.requires_grad(x.id)) {
            Tensor& gx = g.grad(x.id);
            parallel_for(d.batch, [&](std::size_t begin, std::size_t end) {
                std::vector<real> dcol(kdim * l);
                for (std::size_t s = begin; s < end; ++s) {
                    std::fill(dcol.begin(), dcol.end(), real(0));
                    gemm_tn(kdim, l, d.cout, wval.data(), gy.data() + s * d.cout * l, dcol.data());
                    col2im_add(dcol.data(), d, gx.data() + s * d.cin * d.h * d.w);
                }
            });
        }
    };
    return x.graph->record(std::move(out), {x.id, w.id}, bw, "conv2d");
}

Var avgpool2d(Var x, int k, int stride) {
    const Tensor& xv = x.value();
    if (xv.rank() != 4) shape_error("avgpool2d", "expects [b,C,H,W], got " + xv.shape_str());
    if (k < 1 || stride < 1) shape_error("avgpool2d", "window and stride must be >= 1");
    const std::size_t batch = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    const std::size_t kk = static_cast<std::size_t>(k), st = static_cast<std::size_t>(stride);
    if (h < kk || w < kk) shape_error("avgpool2d", "window larger than input");
    const std::size_t ho = (h - kk) / st + 1, wo = (w - kk) / st + 1;
    const real inv = real(1) / static_cast<real>(kk * kk);

    Tensor out({batch, c, ho, wo});
    for (std::size_t s = 0; s < batch; ++s) {
        for (std::size_t ci = 0; ci < c; ++ci) {
            const real* plane = xv.data() + (s * c + ci) * h * w;
            real* dst = out.data() + (s * c + ci) * ho * wo;
            for (std::size_t i = 0; i < ho; ++i) {
                for (std::size_t j = 0; j < wo; ++j) {
                    real acc = 0;
                    for (std::size_t u = 0; u < kk; ++u) {
                        for (std::size_t v = 0; v < kk; ++v) acc += plane[(i * st + u) * w + j * st + v];
                    }
                    dst[i * wo + j] = acc * inv;
                }
            }
        }
    }

    auto bw = [x, batch, c, h, w, ho, wo, kk, st, inv](Graph& g, std::uint32_t self) {
        const Tensor& gy = g.grad(self);
        Tensor& gx = g.grad(x.id);
        for (std::size_t s = 0; s < batch; ++s) {
            for (std::size_t ci = 0; ci < c; ++ci) {
                const real* src = gy.data() + (s * c + ci) * ho * wo;
                real* plane = gx.data() + (s * c + ci) * h * w;
                for (std::size_t i = 0; i < ho; ++i) {
                    for (std::size_t j = 0; j < wo; ++j) {
                        const real gv = src[i * wo + j] * inv;
                        for (std::size_t u = 0; u < kk; ++u) {
                            for (std::size_t v = 0; v < kk; ++v) plane[(i * st + u) * w + j * st + v] += gv;
                        }
                    }
                }
            }
        }
    };
    return x.graph->record(std::move(out), {x.id}, bw, "avgpool2d");
}

Var global_avgpool(Var x) {
    const Tensor& xv = x.value();
    if (xv.rank() != 4) shape_error("global_avgpool", "expects [b,C,H,W], got " + xv.shape_str());
    const std::size_t batch = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
    const real inv = real(1) / static_cast<real>(hw);
    Tensor out({batch, c});
    for (std::size_t s = 0; s < batch; ++s) {
        for (std::size_t ci = 0; ci < c; ++ci) {
            const real* plane = xv.data() + (s * c + ci) * hw;
            real acc = 0;
            for (std::size_t i = 0; i < hw; ++i) acc += plane[i];
            out[s * c + ci] = acc * inv;
        }
    }

    auto bw = [x, batch, c, hw, inv](Graph& g, std::uint32_t self) {
        const Tensor& gy = g.grad(self);
        Tensor& gx = g.grad(x.id);
        for (std::size_t s = 0; s < batch; ++s) {
            for (std::size_t ci = 0; ci < c; ++ci) {
                const real gv = gy[s * c + ci] * inv;
                real* plane = gx.data() + (s * c + ci) * hw;
                for (std::size_t i = 0; i < hw; ++i) plane[i] += gv;
            }
        }
    };
    return x.graph->record(std::move(out), {x.id}, bw, "global_avgpool");
}

Var embedding_lookup(Var table, const std::vector<int>& ids) {
    const Tensor& tv = table.value();
    if (tv.rank() != 2) shape_error("embedding_lookup", "table must be [V,E], got " + tv.shape_str());
    const std::size_t vocab = tv.dim(0), e = tv.dim(1);
    Tensor out({ids.size(), e});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
            throw ArgumentError("embedding_lookup: id " + std::to_string(ids[i]) + " out of range [0," +
                                std::to_string(vocab) + ")");
        }
        std::copy(tv.data() + static_cast<std::size_t>(ids[i]) * e, tv.data() + (static_cast<std::size_t>(ids[i]) + 1) * e,
                  out.data() + i * e);
    }

    auto bw = [table, ids, e](Graph& g, std::uint32_t self) {
        const Tensor& gy = g.grad(self);
        Tensor& gt = g.grad(table.id);
        for (std::size_t i = 0; i < ids.size(); ++i) {
            real* dst = gt.data() + static_cast<std::size_t>(ids[i]) * e;
            const real* src = gy.data() + i * e;
            for (std::size_t j = 0; j < e; ++j) dst[j] += src[j];
        }
    };
    return table.graph->record(std::move(out), {table.id}, bw, "embedding_lookup");
}

LstmState lstm_step(Var x, LstmState state, Var w_ih, Var w_hh, Var bias) {
    const std::size_t hidden = state.h.value().dim(1);
    Var gates = add_bias(add(matmul(x, w_ih), matmul(state.h, w_hh)), bias);
    Var in_gate = sigmoid(slice_cols(gates, 0, hidden));
    Var forget_gate = sigmoid(slice_cols(gates, hidden, hidden));
    Var cell_cand = tanh(slice_cols(gates, 2 * hidden, hidden));
    Var out_gate = sigmoid(slice_cols(gates, 3 * hidden, hidden));
    Var c_next = add(mul(forget_gate, state.c), mul(in_gate, cell_cand));
    Var h_next = mul(out_gate, tanh(c_next));
    return {h_next, c_next};
}

} // namespace banforge::ops
