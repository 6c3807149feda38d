#pragma once

// Dense 4-D float tensor (NCHW) and the differentiable primitives the
// rest of the library is built from.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include <cblas.h>

namespace msrnet {

struct shape_error : std::runtime_error {
    explicit shape_error(const std::string& what) : std::runtime_error(what) {}
};

struct Shape {
    int n = 0, c = 0, h = 0, w = 0;

    std::size_t numel() const {
        return std::size_t(n) * c * h * w;
    }
    bool operator==(const Shape& o) const = default;
    std::string str() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
               std::to_string(h) + "," + std::to_string(w) + ")";
    }
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape s, float fill = 0.f) : shape_(s), data_(s.numel(), fill) {}
    Tensor(Shape s, std::vector<float> data) : shape_(s), data_(std::move(data)) {
        if (data_.size() != shape_.numel())
            throw shape_error("tensor data length " + std::to_string(data_.size()) +
                              " != shape product " + shape_.str());
    }

    const Shape& shape() const { return shape_; }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }

    float& at(int n, int c, int h, int w) {
        return data_[((std::size_t(n) * shape_.c + c) * shape_.h + h) * shape_.w + w];
    }
    const float& at(int n, int c, int h, int w) const {
        return data_[((std::size_t(n) * shape_.c + c) * shape_.h + h) * shape_.w + w];
    }

    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    void fill(float v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        for (float v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

private:
    Shape shape_;
    std::vector<float> data_;
};

struct ConvKernel {
    Tensor weights;           // (out_channels, in_channels, kh, kw)
    std::vector<float> bias;  // length out_channels

    ConvKernel() = default;
    ConvKernel(Tensor w, std::vector<float> b) : weights(std::move(w)), bias(std::move(b)) {
        const Shape& s = weights.shape();
        if (s.h % 2 == 0 || s.w % 2 == 0)
            throw shape_error("conv kernel sides must be odd, got " + s.str());
        if (int(bias.size()) != s.n)
            throw shape_error("bias length != out_channels");
    }

    int out_channels() const { return weights.shape().n; }
    int in_channels() const { return weights.shape().c; }
    int kh() const { return weights.shape().h; }
    int kw() const { return weights.shape().w; }
};

enum class Padding { Same, Valid };

namespace detail {

// Above this many MACs conv2d switches from the float64-accumulating
// reference loops to im2col + sgemm (float32 accumulation).
inline constexpr std::size_t kGemmCutoverMacs = 1u << 20;

inline std::size_t conv_macs(const Shape& in, const ConvKernel& k, int oh, int ow) {
    return std::size_t(in.n) * k.out_channels() * oh * ow * k.in_channels() * k.kh() * k.kw();
}

inline void im2col(const Tensor& in, int img, int kh, int kw, int ph, int pw,
                   int oh, int ow, std::vector<float>& col) {
    const Shape& s = in.shape();
    const int rows = s.c * kh * kw;
    col.assign(std::size_t(rows) * oh * ow, 0.f);
    for (int c = 0; c < s.c; ++c) {
        for (int dy = 0; dy < kh; ++dy) {
            for (int dx = 0; dx < kw; ++dx) {
                const int row = (c * kh + dy) * kw + dx;
                float* dst = col.data() + std::size_t(row) * oh * ow;
                for (int y = 0; y < oh; ++y) {
                    const int sy = y + dy - ph;
                    if (sy < 0 || sy >= s.h) { dst += ow; continue; }
                    for (int x = 0; x < ow; ++x) {
                        const int sx = x + dx - pw;
                        *dst++ = (sx < 0 || sx >= s.w) ? 0.f : in.at(img, c, sy, sx);
                    }
                }
            }
        }
    }
}

inline void col2im_accumulate(const std::vector<float>& col, int img, int kh, int kw,
                              int ph, int pw, int oh, int ow, Tensor& out) {
    const Shape& s = out.shape();
    for (int c = 0; c < s.c; ++c) {
        for (int dy = 0; dy < kh; ++dy) {
            for (int dx = 0; dx < kw; ++dx) {
                const int row = (c * kh + dy) * kw + dx;
                const float* src = col.data() + std::size_t(row) * oh * ow;
                for (int y = 0; y < oh; ++y, src += ow) {
                    const int sy = y + dy - ph;
                    if (sy < 0 || sy >= s.h) continue;
                    for (int x = 0; x < ow; ++x) {
                        const int sx = x + dx - pw;
                        if (sx >= 0 && sx < s.w) out.at(img, c, sy, sx) += src[x];
                    }
                }
            }
        }
    }
}

}  // namespace detail

// Cross-correlation (no kernel flip), zero padding for `same`.
inline Tensor conv2d(const Tensor& input, const ConvKernel& kernel, Padding padding) {
    const Shape& in = input.shape();
    if (input.empty()) throw shape_error("conv2d: empty input tensor");
    if (in.c != kernel.in_channels())
        throw shape_error("conv2d: input channels " + std::to_string(in.c) +
                          " != kernel in_channels " + std::to_string(kernel.in_channels()));
    const int kh = kernel.kh(), kw = kernel.kw();
    const int ph = padding == Padding::Same ? (kh - 1) / 2 : 0;
    const int pw = padding == Padding::Same ? (kw - 1) / 2 : 0;
    const int oh = padding == Padding::Same ? in.h : in.h - (kh - 1);
    const int ow = padding == Padding::Same ? in.w : in.w - (kw - 1);
    if (oh <= 0 || ow <= 0)
        throw shape_error("conv2d: kernel larger than input for valid padding");

    const int oc = kernel.out_channels();
    Tensor out({in.n, oc, oh, ow});

    if (detail::conv_macs(in, kernel, oh, ow) >= detail::kGemmCutoverMacs) {
        const int rows = in.c * kh * kw;
        std::vector<float> col;
        for (int img = 0; img < in.n; ++img) {
            detail::im2col(input, img, kh, kw, ph, pw, oh, ow, col);
            cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans,
                        oc, oh * ow, rows, 1.f,
                        kernel.weights.data(), rows,
                        col.data(), oh * ow, 0.f,
                        &out.at(img, 0, 0, 0), oh * ow);
            for (int o = 0; o < oc; ++o) {
                float* p = &out.at(img, o, 0, 0);
                const float b = kernel.bias[o];
                for (int i = 0; i < oh * ow; ++i) p[i] += b;
            }
        }
        return out;
    }

    // Reference path: float64 accumulation.
    for (int img = 0; img < in.n; ++img)
        for (int o = 0; o < oc; ++o)
            for (int y = 0; y < oh; ++y)
                for (int x = 0; x < ow; ++x) {
                    double acc = kernel.bias[o];
                    for (int c = 0; c < in.c; ++c)
                        for (int dy = 0; dy < kh; ++dy) {
                            const int sy = y + dy - ph;
                            if (sy < 0 || sy >= in.h) continue;
                            for (int dx = 0; dx < kw; ++dx) {
                                const int sx = x + dx - pw;
                                if (sx < 0 || sx >= in.w) continue;
                                acc += double(input.at(img, c, sy, sx)) *
                                       kernel.weights.at(o, c, dy, dx);
                            }
                        }
                    out.at(img, o, y, x) = float(acc);
                }
    return out;
}

struct ConvGrads {
    Tensor grad_input;
    Tensor grad_weights;
    std::vector<float> grad_bias;
};

inline ConvGrads conv2d_backward(const Tensor& input, const ConvKernel& kernel,
                                 const Tensor& grad_out, Padding padding) {
    const Shape& in = input.shape();
    const Shape& go = grad_out.shape();
    const int kh = kernel.kh(), kw = kernel.kw();
    const int ph = padding == Padding::Same ? (kh - 1) / 2 : 0;
    const int pw = padding == Padding::Same ? (kw - 1) / 2 : 0;
    const int oh = padding == Padding::Same ? in.h : in.h - (kh - 1);
    const int ow = padding == Padding::Same ? in.w : in.w - (kw - 1);
    if (in.c != kernel.in_channels())
        throw shape_error("conv2d_backward: channel mismatch");
    if (go.n != in.n || go.c != kernel.out_channels() || go.h != oh || go.w != ow)
        throw shape_error("conv2d_backward: grad_out shape " + go.str() +
                          " inconsistent with forward output");

    ConvGrads g;
    g.grad_input = Tensor(in);
    g.grad_weights = Tensor(kernel.weights.shape());
    g.grad_bias.assign(kernel.out_channels(), 0.f);

    const int oc = kernel.out_channels();
    for (int o = 0; o < oc; ++o) {
        double acc = 0.0;
        for (int img = 0; img < go.n; ++img) {
            const float* p = &grad_out.at(img, o, 0, 0);
            for (int i = 0; i < oh * ow; ++i) acc += p[i];
        }
        g.grad_bias[o] = float(acc);
    }

    if (detail::conv_macs(in, kernel, oh, ow) >= detail::kGemmCutoverMacs) {
        const int rows = in.c * kh * kw;
        std::vector<float> col, gcol(std::size_t(rows) * oh * ow);
        std::vector<float> gw(kernel.weights.numel(), 0.f);
        for (int img = 0; img < in.n; ++img) {
            detail::im2col(input, img, kh, kw, ph, pw, oh, ow, col);
            // grad_W += grad_out * col^T
            cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans,
                        oc, rows, oh * ow, 1.f,
                        &grad_out.at(img, 0, 0, 0), oh * ow,
                        col.data(), oh * ow, 1.f,
                        gw.data(), rows);
            // grad_col = W^T * grad_out
            cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans,
                        rows, oh * ow, oc, 1.f,
                        kernel.weights.data(), rows,
                        &grad_out.at(img, 0, 0, 0), oh * ow, 0.f,
                        gcol.data(), oh * ow);
            detail::col2im_accumulate(gcol, img, kh, kw, ph, pw, oh, ow, g.grad_input);
        }
        std::memcpy(g.grad_weights.data(), gw.data(), gw.size() * sizeof(float));
        return g;
    }

    for (int img = 0; img < in.n; ++img)
        for (int o = 0; o < oc; ++o)
            for (int y = 0; y < oh; ++y)
                for (int x = 0; x < ow; ++x) {
                    const float go_v = grad_out.at(img, o, y, x);
                    if (go_v == 0.f) continue;
                    for (int c = 0; c < in.c; ++c)
                        for (int dy = 0; dy < kh; ++dy) {
                            const int sy = y + dy - ph;
                            if (sy < 0 || sy >= in.h) continue;
                            for (int dx = 0; dx < kw; ++dx) {
                                const int sx = x + dx - pw;
                                if (sx < 0 || sx >= in.w) continue;
                                g.grad_input.at(img, c, sy, sx) +=
                                    go_v * kernel.weights.at(o, c, dy, dx);
                                g.grad_weights.at(o, c, dy, dx) +=
                                    go_v * input.at(img, c, sy, sx);
                            }
                        }
                }
    return g;
}

inline Tensor relu(const Tensor& input) {
    Tensor out(input.shape());
    for (std::size_t i = 0; i < input.numel(); ++i)
        out[i] = input[i] > 0.f ? input[i] : 0.f;
    return out;
}

// Subgradient at exactly 0 is 0.
inline Tensor relu_backward(const Tensor& input, const Tensor& grad_out) {
    if (!(input.shape() == grad_out.shape()))
        throw shape_error("relu_backward: shape mismatch");
    Tensor out(input.shape());
    for (std::size_t i = 0; i < input.numel(); ++i)
        out[i] = input[i] > 0.f ? grad_out[i] : 0.f;
    return out;
}

inline Tensor concat_channels(const std::vector<const Tensor*>& inputs) {
    if (inputs.empty()) throw shape_error("concat_channels: no inputs");
    const Shape& s0 = inputs[0]->shape();
    int total_c = 0;
    for (const Tensor* t : inputs) {
        const Shape& s = t->shape();
        if (s.n != s0.n || s.h != s0.h || s.w != s0.w)
            throw shape_error("concat_channels: spatial/batch mismatch " + s.str() +
                              " vs " + s0.str());
        total_c += s.c;
    }
    Tensor out({s0.n, total_c, s0.h, s0.w});
    const std::size_t plane = std::size_t(s0.h) * s0.w;
    for (int img = 0; img < s0.n; ++img) {
        int co = 0;
        for (const Tensor* t : inputs) {
            const int tc = t->shape().c;
            std::memcpy(&out.at(img, co, 0, 0), &t->at(img, 0, 0, 0),
                        std::size_t(tc) * plane * sizeof(float));
            co += tc;
        }
    }
    return out;
}

// Channel slice [c_begin, c_begin+c_count); inverse of concat_channels.
inline Tensor slice_channels(const Tensor& input, int c_begin, int c_count) {
    const Shape& s = input.shape();
    if (c_begin < 0 || c_count <= 0 || c_begin + c_count > s.c)
        throw shape_error("slice_channels: range out of bounds");
    Tensor out({s.n, c_count, s.h, s.w});
    const std::size_t plane = std::size_t(s.h) * s.w;
    for (int img = 0; img < s.n; ++img)
        std::memcpy(&out.at(img, 0, 0, 0), &input.at(img, c_begin, 0, 0),
                    std::size_t(c_count) * plane * sizeof(float));
    return out;
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!(a.shape() == b.shape()))
        throw shape_error(std::string(op) + ": shape mismatch " + a.shape().str() +
                          " vs " + b.shape().str());
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] - b[i];
    return out;
}

inline Tensor scale(const Tensor& a, float s) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] * s;
    return out;
}

}  // namespace msrnet
