#pragma once

// Evaluation metrics: single-scale SSIM (11x11 Gaussian window, sigma 1.5,
// valid positions, BT.601 luminance), discrete entropy of the 8-bit
// intensity histogram, and the angular color error.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "msrnet/tensor.hpp"

namespace msrnet {

// (1,3,H,W) or (1,1,H,W) -> H*W luma plane
inline std::vector<double> luma_plane(const Tensor& img) {
    const Shape& s = img.shape();
    std::vector<double> out(std::size_t(s.h) * s.w);
    if (s.c == 1) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = img[i];
    } else if (s.c == 3) {
        for (int y = 0; y < s.h; ++y)
            for (int x = 0; x < s.w; ++x)
                out[std::size_t(y) * s.w + x] = 0.299 * img.at(0, 0, y, x) +
                                                0.587 * img.at(0, 1, y, x) +
                                                0.114 * img.at(0, 2, y, x);
    } else {
        throw shape_error("luma_plane: expects 1 or 3 channels");
    }
    return out;
}

namespace detail {

inline const std::vector<double>& ssim_window() {
    static const std::vector<double> w = [] {
        constexpr int R = 5;
        constexpr double sigma = 1.5;
        std::vector<double> k((2 * R + 1) * (2 * R + 1));
        double sum = 0.0;
        for (int y = -R; y <= R; ++y)
            for (int x = -R; x <= R; ++x) {
                const double v = std::exp(-(x * x + y * y) / (2.0 * sigma * sigma));
                k[std::size_t(y + R) * (2 * R + 1) + (x + R)] = v;
                sum += v;
            }
        for (double& v : k) v /= sum;
        return k;
    }();
    return w;
}

}  // namespace detail

// values expected in [0,1]; C1=(0.01)^2, C2=(0.03)^2
inline double ssim(const Tensor& a, const Tensor& b) {
    if (!(a.shape() == b.shape())) throw shape_error("ssim: dimension mismatch");
    const int h = a.shape().h, w = a.shape().w;
    constexpr int R = 5;
    if (h < 2 * R + 1 || w < 2 * R + 1)
        throw shape_error("ssim: image smaller than 11x11 window");
    const std::vector<double> xa = luma_plane(a), xb = luma_plane(b);
    const std::vector<double>& win = detail::ssim_window();
    constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;

    double total = 0.0;
    std::size_t count = 0;
    for (int y = R; y < h - R; ++y)
        for (int x = R; x < w - R; ++x) {
            double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
            std::size_t k = 0;
            for (int dy = -R; dy <= R; ++dy)
                for (int dx = -R; dx <= R; ++dx, ++k) {
                    const double va = xa[std::size_t(y + dy) * w + (x + dx)];
                    const double vb = xb[std::size_t(y + dy) * w + (x + dx)];
                    const double wt = win[k];
                    mx += wt * va;
                    my += wt * vb;
                    sxx += wt * va * va;
                    syy += wt * vb * vb;
                    sxy += wt * va * vb;
                }
            sxx -= mx * mx;
            syy -= my * my;
            sxy -= mx * my;
            total += ((2 * mx * my + c1) * (2 * sxy + c2)) /
                     ((mx * mx + my * my + c1) * (sxx + syy + c2));
            ++count;
        }
    return total / double(count);
}

// Shannon entropy (bits) of the 8-bit quantized luminance histogram.
inline double discrete_entropy(const Tensor& img) {
    const std::vector<double> luma = luma_plane(img);
    std::vector<std::size_t> hist(256, 0);
    for (double v : luma) {
        const int level = int(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
        ++hist[std::size_t(level)];
    }
    const double n = double(luma.size());
    double e = 0.0;
    for (std::size_t c : hist)
        if (c > 0) {
            const double p = double(c) / n;
            e -= p * std::log2(p);
        }
    return e;
}

enum class AngularMode { Global, PerPixel };

// Global mode: images flattened to single vectors, one arccos.
// Per-pixel mode: mean over pixels of the RGB-vector angle.
inline double angular_error_deg(const Tensor& y, const Tensor& yhat,
                                AngularMode mode = AngularMode::Global) {
    check_same_shape(y, yhat, "angular_error");
    constexpr double rad2deg = 180.0 / 3.14159265358979323846;
    if (mode == AngularMode::Global) {
        double dot = 0, na = 0, nb = 0;
        for (std::size_t i = 0; i < y.numel(); ++i) {
            dot += double(y[i]) * yhat[i];
            na += double(y[i]) * y[i];
            nb += double(yhat[i]) * yhat[i];
        }
        if (na == 0.0 || nb == 0.0)
            throw std::invalid_argument("angular_error: zero-norm operand in global mode");
        const double cosv = std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
        return std::acos(cosv) * rad2deg;
    }
    const Shape& s = y.shape();
    double total = 0.0;
    std::size_t count = 0;
    for (int n = 0; n < s.n; ++n)
        for (int py = 0; py < s.h; ++py)
            for (int px = 0; px < s.w; ++px) {
                double dot = 0, na = 0, nb = 0;
                for (int c = 0; c < s.c; ++c) {
                    const double va = y.at(n, c, py, px), vb = yhat.at(n, c, py, px);
                    dot += va * vb;
                    na += va * va;
                    nb += vb * vb;
                }
                if (na == 0.0 || nb == 0.0) continue;  // zero-vector pixels skipped
                total += std::acos(std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0)) *
                         rad2deg;
                ++count;
            }
    return count ? total / double(count) : 0.0;
}

struct MetricRow {
    std::string id;
    std::optional<double> ssim;
    double entropy = 0.0;
    std::optional<double> angular_deg;
};

struct MetricReport {
    std::vector<MetricRow> per_image;
    std::optional<double> mean_ssim;
    double mean_entropy = 0.0;
    std::optional<double> mean_angular_deg;

    void finalize() {
        double se = 0;
        double ss = 0, sa = 0;
        std::size_t ns = 0, na = 0;
        for (const MetricRow& r : per_image) {
            se += r.entropy;
            if (r.ssim) { ss += *r.ssim; ++ns; }
            if (r.angular_deg) { sa += *r.angular_deg; ++na; }
        }
        mean_entropy = per_image.empty() ? 0.0 : se / double(per_image.size());
        if (ns) mean_ssim = ss / double(ns);
        if (na) mean_angular_deg = sa / double(na);
    }

    void write_csv(const std::string& path) const {
        std::ofstream os(path);
        if (!os) throw std::runtime_error("cannot write report: " + path);
        os << "id,ssim,entropy,angular_deg\n";
        os.precision(12);
        for (const MetricRow& r : per_image) {
            os << r.id << ",";
            if (r.ssim) os << *r.ssim;
            os << "," << r.entropy << ",";
            if (r.angular_deg) os << *r.angular_deg;
            os << "\n";
        }
    }

    nlohmann::json aggregate_json() const {
        nlohmann::json j;
        j["count"] = per_image.size();
        j["mean_entropy"] = mean_entropy;
        if (mean_ssim) j["mean_ssim"] = *mean_ssim;
        else j["mean_ssim"] = nullptr;
        if (mean_angular_deg) j["mean_angular_deg"] = *mean_angular_deg;
        else j["mean_angular_deg"] = nullptr;
        j["niqe"] = "unavailable";  // needs a pretrained NSS model, out of scope
        return j;
    }
};

}  // namespace msrnet
