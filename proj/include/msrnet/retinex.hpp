#pragma once

// Classical single- and multi-scale Retinex in the log-domain form,
// the Gaussian surround, and the cascaded-convolution reformulation
// of MSR as a feedforward network.
//
// Boundary handling: the surround blur treats the image as evenly
// (mirror-) extended and convolves with the period-wrapped Gaussian.
// Under this extension the Gaussian semigroup identity
// blur(c1) . blur(sqrt(c2^2-c1^2)) == blur(c2) holds exactly, which is
// what makes the cascade construction match direct MSR at any scale.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "msrnet/tensor.hpp"

namespace msrnet {

struct GaussianSurround {
    double c = 0.0;                     // standard deviation, pixels
    int radius = 0;                     // kernel half-width
    std::vector<double> kernel;         // (2r+1)^2 entries, row-major, sum 1

    double at(int y, int x) const {     // y, x in [-radius, radius]
        const int side = 2 * radius + 1;
        return kernel[std::size_t(y + radius) * side + (x + radius)];
    }
};

inline GaussianSurround gaussian_kernel(double c, int radius) {
    if (c <= 0.0) throw std::invalid_argument("gaussian_kernel: c must be positive");
    if (radius < 1) throw std::invalid_argument("gaussian_kernel: radius must be >= 1");
    GaussianSurround g;
    g.c = c;
    g.radius = radius;
    const int side = 2 * radius + 1;
    g.kernel.resize(std::size_t(side) * side);
    double sum = 0.0;
    for (int y = -radius; y <= radius; ++y)
        for (int x = -radius; x <= radius; ++x) {
            const double v = std::exp(-(double(x) * x + double(y) * y) / (2.0 * c * c));
            g.kernel[std::size_t(y + radius) * side + (x + radius)] = v;
            sum += v;
        }
    for (double& v : g.kernel) v /= sum;
    return g;
}

// radius rule: ceil(3c), capped at the image min-dimension.
inline int surround_radius(double c, int min_dim) {
    return std::min(int(std::ceil(3.0 * c)), min_dim);
}

namespace detail {

// Gaussian of std sigma wrapped onto a circle of period P, normalized.
inline std::vector<double> wrapped_gaussian(double sigma, int P) {
    std::vector<double> k(P, 0.0);
    const int aliases = int(std::ceil(6.0 * sigma / P)) + 1;
    for (int j = 0; j < P; ++j)
        for (int a = -aliases; a <= aliases; ++a) {
            const double d = double(j) + double(a) * P;
            k[j] += std::exp(-d * d / (2.0 * sigma * sigma));
        }
    double sum = 0.0;
    for (double v : k) sum += v;
    for (double& v : k) v /= sum;
    return k;
}

// One axis of the mirror-boundary blur. len: axis length, stride: element
// stride along the axis, count/cstride: iteration over the other axis.
inline void blur_axis(const float* src, float* dst, int len, int stride,
                      int count, int cstride, const std::vector<double>& k,
                      const std::vector<int>& taps) {
    const int P = 2 * len;
    // source index for extended position t
    auto ext_index = [len](int t) { return t < len ? t : 2 * len - 1 - t; };
    for (int row = 0; row < count; ++row) {
        const float* s = src + std::size_t(row) * cstride;
        float* d = dst + std::size_t(row) * cstride;
        for (int i = 0; i < len; ++i) {
            double acc = 0.0;
            for (int off : taps) {
                int t = i + off;
                t %= P;
                if (t < 0) t += P;
                acc += k[(off % P + P) % P] * s[std::size_t(ext_index(t)) * stride];
            }
            d[std::size_t(i) * stride] = float(acc);
        }
    }
}

}  // namespace detail

// Mirror-boundary Gaussian blur, separable, exact wrapped kernel.
inline Tensor gaussian_blur_mirror(const Tensor& input, double sigma) {
    if (sigma <= 0.0) throw std::invalid_argument("gaussian_blur_mirror: sigma <= 0");
    const Shape& s = input.shape();
    Tensor tmp(s), out(s);

    auto make_taps = [](double sg, int len, std::vector<double>& k, std::vector<int>& taps) {
        const int P = 2 * len;
        k = detail::wrapped_gaussian(sg, P);
        taps.clear();
        const double cutoff = 1e-18;
        // offsets  -len .. len-1 cover the circle once
        for (int off = -len; off < len; ++off)
            if (k[(off % P + P) % P] > cutoff) taps.push_back(off);
    };

    std::vector<double> k;
    std::vector<int> taps;
    const std::size_t plane = std::size_t(s.h) * s.w;
    // horizontal
    make_taps(sigma, s.w, k, taps);
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            const std::size_t off = (std::size_t(n) * s.c + c) * plane;
            detail::blur_axis(input.data() + off, tmp.data() + off,
                              s.w, 1, s.h, s.w, k, taps);
        }
    // vertical
    make_taps(sigma, s.h, k, taps);
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            const std::size_t off = (std::size_t(n) * s.c + c) * plane;
            detail::blur_axis(tmp.data() + off, out.data() + off,
                              s.h, s.w, s.w, 1, k, taps);
        }
    return out;
}

inline Tensor log_floor_transform(const Tensor& image, double log_floor) {
    if (log_floor <= 0.0) throw std::invalid_argument("log_floor must be positive");
    Tensor out(image.shape());
    for (std::size_t i = 0; i < image.numel(); ++i)
        out[i] = float(std::log(std::max(double(image[i]), log_floor)));
    return out;
}

// R = log I - F * log I  (per channel, natural log)
inline Tensor ssr(const Tensor& image, const GaussianSurround& surround, double log_floor) {
    Tensor logi = log_floor_transform(image, log_floor);
    return sub(logi, gaussian_blur_mirror(logi, surround.c));
}

struct MsrScales {
    struct Scale {
        double c;
        double weight;
    };
    std::vector<Scale> scales;

    void validate() const {
        if (scales.empty()) throw std::invalid_argument("MsrScales: empty scale list");
        double wsum = 0.0;
        for (std::size_t i = 0; i < scales.size(); ++i) {
            if (scales[i].c <= 0.0) throw std::invalid_argument("MsrScales: c must be positive");
            if (i > 0 && scales[i].c <= scales[i - 1].c)
                throw std::invalid_argument("MsrScales: c must be strictly increasing");
            wsum += scales[i].weight;
        }
        if (std::abs(wsum - 1.0) > 1e-9)
            throw std::invalid_argument("MsrScales: weights must sum to 1");
    }

    static MsrScales defaults() {
        return MsrScales{{{15.0, 1.0 / 3}, {80.0, 1.0 / 3}, {250.0, 1.0 / 3}}};
    }
};

inline Tensor msr(const Tensor& image, const MsrScales& scales, double log_floor) {
    scales.validate();
    const int min_dim = std::min(image.shape().h, image.shape().w);
    Tensor acc(image.shape());
    for (const auto& sc : scales.scales) {
        GaussianSurround g = gaussian_kernel(sc.c, surround_radius(sc.c, min_dim));
        Tensor r = ssr(image, g, log_floor);
        for (std::size_t i = 0; i < acc.numel(); ++i) acc[i] += float(sc.weight) * r[i];
    }
    return acc;
}

// The cascade reformulation: log I flows through N chained Gaussian blur
// layers with variances c1^2, c2^2-c1^2, ..., a tap after each stage, a
// channel concat, a fixed 1x1 averaging convolution, and a residual
// subtraction from log I.
struct MsrCascade {
    std::vector<double> stage_sigmas;   // per-layer blur std-devs
    std::vector<double> weights;        // per-tap averaging weights
    double log_floor = 1.0 / 255.0;

    // taps[i]: blurred log image after stage i (std sqrt(c_1^2+...+delta_i))
    std::vector<Tensor> run_taps(const Tensor& image) const {
        Tensor cur = log_floor_transform(image, log_floor);
        std::vector<Tensor> taps;
        taps.reserve(stage_sigmas.size());
        for (double sg : stage_sigmas) {
            cur = gaussian_blur_mirror(cur, sg);
            taps.push_back(cur);
        }
        return taps;
    }

    Tensor run(const Tensor& image) const {
        const std::vector<Tensor> taps = run_taps(image);
        std::vector<const Tensor*> ptrs;
        for (const Tensor& t : taps) ptrs.push_back(&t);
        Tensor stacked = concat_channels(ptrs);

        // fixed 1x1 averaging convolution over the concatenated taps
        const int ch = image.shape().c;
        const int nscale = int(taps.size());
        Tensor w({ch, ch * nscale, 1, 1});
        for (int o = 0; o < ch; ++o)
            for (int s = 0; s < nscale; ++s)
                w.at(o, s * ch + o, 0, 0) = float(weights[s]);
        ConvKernel avg(std::move(w), std::vector<float>(ch, 0.f));
        Tensor blended = conv2d(stacked, avg, Padding::Same);

        return sub(log_floor_transform(image, log_floor), blended);
    }
};

inline MsrCascade build_msr_cascade(const MsrScales& scales, double log_floor = 1.0 / 255.0) {
    scales.validate();
    MsrCascade c;
    c.log_floor = log_floor;
    double prev_var = 0.0;
    for (const auto& sc : scales.scales) {
        const double var = sc.c * sc.c;
        if (var <= prev_var)
            throw std::invalid_argument("build_msr_cascade: non-increasing variances");
        c.stage_sigmas.push_back(std::sqrt(var - prev_var));
        c.weights.push_back(sc.weight);
        prev_var = var;
    }
    return c;
}

// Chromaticity-log color restoration: C_i = beta*(log(alpha*I_i) - log sum_j I_j),
// output = C_i * msr_out_i.
inline Tensor crf_baseline(const Tensor& msr_out, const Tensor& original,
                           double alpha = 125.0, double beta = 46.0) {
    check_same_shape(msr_out, original, "crf_baseline");
    const Shape& s = original.shape();
    if (s.c != 3) throw shape_error("crf_baseline: expects 3 channels");
    Tensor out(s);
    for (int n = 0; n < s.n; ++n)
        for (int y = 0; y < s.h; ++y)
            for (int x = 0; x < s.w; ++x) {
                double sum = 0.0;
                for (int c = 0; c < 3; ++c) sum += std::max(double(original.at(n, c, y, x)), 1e-12);
                for (int c = 0; c < 3; ++c) {
                    const double ic = std::max(double(original.at(n, c, y, x)), 1e-12);
                    const double mult = beta * (std::log(alpha * ic) - std::log(sum));
                    out.at(n, c, y, x) = float(mult * msr_out.at(n, c, y, x));
                }
            }
    return out;
}

// Percentile-clip the signed log-domain output and map affinely to [0,1].
// Degenerate (constant) input maps to mid-gray 0.5.
inline Tensor postprocess_display(const Tensor& retinex_out, double clip_percent) {
    if (clip_percent < 0.0 || clip_percent > 10.0)
        throw std::invalid_argument("postprocess_display: clip_percent must be in [0,10]");
    std::vector<float> sorted(retinex_out.data(), retinex_out.data() + retinex_out.numel());
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    auto quantile = [&](double q) {
        const std::size_t idx = std::size_t(std::llround(q * double(n - 1)));
        return double(sorted[std::min(idx, n - 1)]);
    };
    const double lo = quantile(clip_percent / 100.0);
    const double hi = quantile(1.0 - clip_percent / 100.0);
    Tensor out(retinex_out.shape());
    if (hi - lo < 1e-12) {
        out.fill(0.5f);
        return out;
    }
    const double inv = 1.0 / (hi - lo);
    for (std::size_t i = 0; i < out.numel(); ++i) {
        const double v = (double(retinex_out[i]) - lo) * inv;
        out[i] = float(std::clamp(v, 0.0, 1.0));
    }
    return out;
}

}  // namespace msrnet
