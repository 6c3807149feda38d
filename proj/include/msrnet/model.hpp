#pragma once

// The trainable MSR-net: multi-scale log transform (f1), difference of
// convolution (f2), 1x1 color restoration (f3). Layer shapes follow the
// conv1-32 / conv3-3 / conv3-32 / conv1-3 / conv1-3 configuration.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "msrnet/nn.hpp"
#include "msrnet/tensor.hpp"

namespace msrnet {

struct MsrNetConfig {
    int n = 4;                               // log-transform scales
    std::vector<double> v = {1, 10, 100, 300};
    int K = 10;                              // hidden conv depth
    int width = 32;                          // hidden channels
    int kernel_hidden = 3;
    int patch = 64;

    void validate() const {
        if (int(v.size()) != n) throw std::invalid_argument("MsrNetConfig: len(v) != n");
        for (double x : v)
            if (x <= 0) throw std::invalid_argument("MsrNetConfig: v entries must be positive");
        if (K < 1 || width < 1) throw std::invalid_argument("MsrNetConfig: K, width must be >= 1");
        if (kernel_hidden % 2 == 0) throw std::invalid_argument("MsrNetConfig: kernel must be odd");
    }

    bool operator==(const MsrNetConfig&) const = default;
};

class MsrNet {
public:
    explicit MsrNet(MsrNetConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        const int kh = cfg_.kernel_hidden;
        add_param("W-1", {cfg_.width, 3 * cfg_.n, 1, 1});
        add_param("W0", {3, cfg_.width, kh, kh});
        add_param("W1", {cfg_.width, 3, kh, kh});
        for (int m = 2; m <= cfg_.K; ++m)
            add_param("W" + std::to_string(m), {cfg_.width, cfg_.width, kh, kh});
        add_param("W" + std::to_string(cfg_.K + 1), {3, cfg_.width * cfg_.K, 1, 1});
        add_param("W" + std::to_string(cfg_.K + 2), {3, 3, 1, 1});
    }

    const MsrNetConfig& config() const { return cfg_; }

    std::vector<Parameter*> parameters() {
        std::vector<Parameter*> out;
        for (auto& [name, pair] : params_) {
            out.push_back(&pair.first);
            out.push_back(&pair.second);
        }
        return out;
    }

    Parameter& weight(const std::string& name) { return params_.at(name).first; }
    Parameter& bias(const std::string& name) { return params_.at(name).second; }
    const Parameter& weight(const std::string& name) const { return params_.at(name).first; }
    const Parameter& bias(const std::string& name) const { return params_.at(name).second; }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& [name, pair] : params_)
            n += pair.first.value.numel() + pair.second.value.numel();
        return n;
    }

    // He-normal weights, zero biases.
    void init(std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> normal(0.0, 1.0);
        // deterministic name order
        for (auto& [name, pair] : params_) {
            const Shape& s = pair.first.value.shape();
            const double std_dev = std::sqrt(2.0 / (double(s.c) * s.h * s.w));
            for (std::size_t i = 0; i < pair.first.value.numel(); ++i)
                pair.first.value[i] = float(normal(rng) * std_dev);
            pair.second.value.fill(0.f);
        }
    }

    void zero_grad() {
        for (Parameter* p : parameters()) p->zero_grad();
    }

    ConvKernel kernel(const std::string& name) const {
        const auto& pair = params_.at(name);
        std::vector<float> b(pair.second.value.data(),
                             pair.second.value.data() + pair.second.value.numel());
        return ConvKernel(pair.first.value, std::move(b));
    }

    // ---- forward ----

    // M_j = ln(1 + v_j x) / ln(1 + v_j)
    Tensor multilog(const Tensor& x) const {
        const Shape& s = x.shape();
        if (s.c != 3) throw shape_error("f1: input must have 3 channels");
        Tensor m({s.n, 3 * cfg_.n, s.h, s.w});
        const std::size_t plane = std::size_t(s.h) * s.w;
        for (int img = 0; img < s.n; ++img)
            for (int j = 0; j < cfg_.n; ++j) {
                const double vj = cfg_.v[j];
                const double inv_log = 1.0 / std::log1p(vj);
                for (int c = 0; c < 3; ++c) {
                    const float* src = &x.at(img, c, 0, 0);
                    float* dst = &m.at(img, j * 3 + c, 0, 0);
                    for (std::size_t i = 0; i < plane; ++i)
                        dst[i] = float(std::log1p(vj * double(src[i])) * inv_log);
                }
            }
        return m;
    }

    struct Trace {
        Tensor m;                   // 3n-channel multilog stack
        Tensor pre_relu_f1;         // M * W-1 + b-1
        Tensor x1;                  // f1 output
        std::vector<Tensor> pre_relu_h;  // pre-activation of H_1..H_K
        std::vector<Tensor> h;           // H_1..H_K
        Tensor h_cat;
        Tensor hk1;                 // H_{K+1}
        Tensor x2;                  // f2 output
        Tensor y;                   // f3 output
    };

    Tensor f1(const Tensor& x, Trace* tr = nullptr) const {
        Tensor m = multilog(x);
        Tensor pre = conv2d(m, kernel("W-1"), Padding::Same);
        Tensor act = relu(pre);
        Tensor x1 = conv2d(act, kernel("W0"), Padding::Same);
        if (tr) {
            tr->m = std::move(m);
            tr->pre_relu_f1 = std::move(pre);
            tr->x1 = x1;
        }
        return x1;
    }

    Tensor f2(const Tensor& x1, Trace* tr = nullptr) const {
        std::vector<Tensor> h, pre;
        h.reserve(cfg_.K);
        const Tensor* cur = &x1;
        for (int m = 1; m <= cfg_.K; ++m) {
            Tensor p = conv2d(*cur, kernel("W" + std::to_string(m)), Padding::Same);
            h.push_back(relu(p));
            pre.push_back(std::move(p));
            cur = &h.back();
        }
        std::vector<const Tensor*> ptrs;
        for (const Tensor& t : h) ptrs.push_back(&t);
        Tensor hcat = concat_channels(ptrs);
        Tensor hk1 = conv2d(hcat, kernel("W" + std::to_string(cfg_.K + 1)), Padding::Same);
        Tensor x2 = sub(x1, hk1);
        if (tr) {
            tr->pre_relu_h = std::move(pre);
            tr->h = std::move(h);
            tr->h_cat = std::move(hcat);
            tr->hk1 = std::move(hk1);
            tr->x2 = x2;
        }
        return x2;
    }

    Tensor f3(const Tensor& x2, Trace* tr = nullptr) const {
        Tensor y = conv2d(x2, kernel("W" + std::to_string(cfg_.K + 2)), Padding::Same);
        if (tr) tr->y = y;
        return y;
    }

    Tensor forward(const Tensor& x, Trace* tr = nullptr) const {
        if (tr) {
            f1(x, tr);
            f2(tr->x1, tr);
            return f3(tr->x2, tr);
        }
        return f3(f2(f1(x)));
    }

    // Backprop through f3 o f2 o f1, accumulating into parameter grads.
    // grad_y: dL/d(yhat). Returns dL/dx (rarely needed, but cheap).
    Tensor backward(const Tensor& x, const Trace& tr, const Tensor& grad_y) {
        const std::string wk2 = "W" + std::to_string(cfg_.K + 2);
        const std::string wk1 = "W" + std::to_string(cfg_.K + 1);

        ConvGrads g3 = conv2d_backward(tr.x2, kernel(wk2), grad_y, Padding::Same);
        accumulate(wk2, g3);
        Tensor grad_x2 = std::move(g3.grad_input);

        // X2 = X1 - H_{K+1}
        Tensor grad_hk1 = scale(grad_x2, -1.f);
        Tensor grad_x1 = grad_x2;  // first summand; f2's path adds more below

        ConvGrads gk1 = conv2d_backward(tr.h_cat, kernel(wk1), grad_hk1, Padding::Same);
        accumulate(wk1, gk1);

        // split concat grad back to H_1..H_K, then walk the chain in reverse
        Tensor grad_h_next;  // grad flowing into H_m from H_{m+1}
        for (int m = cfg_.K; m >= 1; --m) {
            Tensor grad_h = slice_channels(gk1.grad_input, (m - 1) * cfg_.width, cfg_.width);
            if (grad_h_next.numel() > 0) grad_h = add(grad_h, grad_h_next);
            Tensor grad_pre = relu_backward(tr.pre_relu_h[m - 1], grad_h);
            const Tensor& input_m = (m == 1) ? tr.x1 : tr.h[m - 2];
            ConvGrads gm = conv2d_backward(input_m, kernel("W" + std::to_string(m)),
                                           grad_pre, Padding::Same);
            accumulate("W" + std::to_string(m), gm);
            grad_h_next = std::move(gm.grad_input);
        }
        grad_x1 = add(grad_x1, grad_h_next);

        // f1
        ConvGrads g0 = conv2d_backward(relu(tr.pre_relu_f1), kernel("W0"), grad_x1, Padding::Same);
        accumulate("W0", g0);
        Tensor grad_pre1 = relu_backward(tr.pre_relu_f1, g0.grad_input);
        ConvGrads gm1 = conv2d_backward(tr.m, kernel("W-1"), grad_pre1, Padding::Same);
        accumulate("W-1", gm1);

        // through the multilog transform: dM_j/dx = v_j / ((1 + v_j x) ln(1+v_j))
        Tensor grad_x(x.shape());
        const Shape& s = x.shape();
        const std::size_t plane = std::size_t(s.h) * s.w;
        for (int img = 0; img < s.n; ++img)
            for (int j = 0; j < cfg_.n; ++j) {
                const double vj = cfg_.v[j];
                const double inv_log = 1.0 / std::log1p(vj);
                for (int c = 0; c < 3; ++c) {
                    const float* xi = &x.at(img, c, 0, 0);
                    const float* gm = &gm1.grad_input.at(img, j * 3 + c, 0, 0);
                    float* gx = &grad_x.at(img, c, 0, 0);
                    for (std::size_t i = 0; i < plane; ++i)
                        gx[i] += float(double(gm[i]) * vj / (1.0 + vj * double(xi[i])) * inv_log);
                }
            }
        return grad_x;
    }

    struct ForwardBackwardResult {
        double loss = 0.0;
        Tensor pred;
    };

    ForwardBackwardResult forward_backward(const Tensor& x, const Tensor& y, double lambda) {
        Trace tr;
        Tensor pred = forward(x, &tr);
        std::vector<Parameter*> ps = parameters();
        LossResult lr = loss_mse_l2(pred, y, ps, lambda);
        backward(x, tr, lr.grad_pred);
        return {lr.loss, std::move(pred)};
    }

    // Receptive-field radius of the network (pixels of context a border
    // pixel is missing); tiles overlapping by at least this are seamless.
    int receptive_radius() const {
        const int r = (cfg_.kernel_hidden - 1) / 2;
        return r * (cfg_.K + 1);  // W0 plus W1..WK
    }

private:
    void add_param(const std::string& name, Shape shape) {
        Tensor b({shape.n, 1, 1, 1});
        params_.emplace(name, std::make_pair(Parameter(name, Tensor(shape), true),
                                             Parameter(name + ".b", std::move(b), false)));
    }

    void accumulate(const std::string& name, const ConvGrads& g) {
        auto& [w, b] = params_.at(name);
        for (std::size_t i = 0; i < w.grad.numel(); ++i) w.grad[i] += g.grad_weights[i];
        for (std::size_t i = 0; i < b.grad.numel(); ++i) b.grad[i] += g.grad_bias[i];
    }

    MsrNetConfig cfg_;
    // name -> (weight, bias); std::map keeps a deterministic order
    std::map<std::string, std::pair<Parameter, Parameter>> params_;
};

// Full-image inference. Output is clamped to [0,1] at image-write time,
// not here; forward may legitimately leave [0,1].
enum class Tiling { Whole, Tiled };

inline Tensor enhance_image(const Tensor& image, const MsrNet& model,
                            Tiling tiling = Tiling::Whole, int tile = 256, int overlap = 16) {
    const Shape& s = image.shape();
    if (s.c != 3) throw shape_error("enhance_image: expects 3-channel input");
    if (tiling == Tiling::Whole || (s.h <= tile && s.w <= tile))
        return model.forward(image);

    if (overlap < model.receptive_radius())
        throw std::invalid_argument("enhance_image: overlap smaller than receptive radius " +
                                    std::to_string(model.receptive_radius()));
    Tensor out({s.n, 3, s.h, s.w});
    for (int y0 = 0; y0 < s.h; y0 += tile)
        for (int x0 = 0; x0 < s.w; x0 += tile) {
            const int y1 = std::min(y0 + tile, s.h);
            const int x1 = std::min(x0 + tile, s.w);
            // read with context margin; zero-pad convs see real neighbors
            const int ry0 = std::max(0, y0 - overlap), ry1 = std::min(s.h, y1 + overlap);
            const int rx0 = std::max(0, x0 - overlap), rx1 = std::min(s.w, x1 + overlap);
            Tensor patch({s.n, 3, ry1 - ry0, rx1 - rx0});
            for (int n = 0; n < s.n; ++n)
                for (int c = 0; c < 3; ++c)
                    for (int y = ry0; y < ry1; ++y)
                        for (int x = rx0; x < rx1; ++x)
                            patch.at(n, c, y - ry0, x - rx0) = image.at(n, c, y, x);
            Tensor res = model.forward(patch);
            for (int n = 0; n < s.n; ++n)
                for (int c = 0; c < 3; ++c)
                    for (int y = y0; y < y1; ++y)
                        for (int x = x0; x < x1; ++x)
                            out.at(n, c, y, x) = res.at(n, c, y - ry0, x - rx0);
        }
    return out;
}

// ---- checkpoint format ----
// magic "MSRN", u32 version, config, then entries sorted by name:
// u32 name length, name bytes, 4x u32 shape, little-endian float32 payload.
// Optimizer state travels as extra entries under the "opt." prefix.

namespace ckpt {

inline constexpr std::uint32_t kVersion = 1;

inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {(unsigned char)(v), (unsigned char)(v >> 8),
                          (unsigned char)(v >> 16), (unsigned char)(v >> 24)};
    os.write(reinterpret_cast<char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
           std::uint32_t(b[3]) << 24;
}

inline void write_f64(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int i = 0; i < 8; ++i) os.put(char((bits >> (8 * i)) & 0xff));
}

inline double read_f64(std::istream& is) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) {
        int c = is.get();
        if (c == EOF) throw std::runtime_error("checkpoint: truncated file");
        bits |= std::uint64_t(c & 0xff) << (8 * i);
    }
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

inline void write_entry(std::ostream& os, const std::string& name, const Tensor& t) {
    write_u32(os, std::uint32_t(name.size()));
    os.write(name.data(), std::streamsize(name.size()));
    const Shape& s = t.shape();
    write_u32(os, std::uint32_t(s.n));
    write_u32(os, std::uint32_t(s.c));
    write_u32(os, std::uint32_t(s.h));
    write_u32(os, std::uint32_t(s.w));
    // assumes little-endian host (x86/arm64); payload defined as LE float32
    os.write(reinterpret_cast<const char*>(t.data()),
             std::streamsize(t.numel() * sizeof(float)));
}

}  // namespace ckpt

struct Checkpoint {
    MsrNetConfig config;
    std::map<std::string, Tensor> entries;  // params + "opt.*" state
    std::int64_t iter = 0;                  // completed training iterations
};

inline void save_checkpoint(const std::string& path, MsrNet& model,
                            std::int64_t iter = 0, bool with_optimizer_state = true) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    os.write("MSRN", 4);
    ckpt::write_u32(os, ckpt::kVersion);
    const MsrNetConfig& c = model.config();
    ckpt::write_u32(os, std::uint32_t(c.n));
    for (double v : c.v) ckpt::write_f64(os, v);
    ckpt::write_u32(os, std::uint32_t(c.K));
    ckpt::write_u32(os, std::uint32_t(c.width));
    ckpt::write_u32(os, std::uint32_t(c.kernel_hidden));
    ckpt::write_u32(os, std::uint32_t(c.patch));

    std::map<std::string, const Tensor*> entries;
    Tensor iter_t({1, 1, 1, 1});
    iter_t[0] = float(iter);
    Tensor step_t({1, 1, 1, 1});
    for (Parameter* p : model.parameters()) {
        entries[p->name] = &p->value;
        if (with_optimizer_state) {
            entries["opt." + p->name + ".m"] = &p->adam_m;
            entries["opt." + p->name + ".v"] = &p->adam_v;
            step_t[0] = float(p->step_count);
        }
    }
    if (with_optimizer_state) {
        entries["opt.iter"] = &iter_t;
        entries["opt.step"] = &step_t;
    }
    ckpt::write_u32(os, std::uint32_t(entries.size()));
    for (const auto& [name, t] : entries) ckpt::write_entry(os, name, *t);
    if (!os) throw std::runtime_error("checkpoint write failed: " + path);
}

inline Checkpoint load_checkpoint_raw(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != "MSRN")
        throw std::runtime_error("checkpoint: bad magic bytes (not an MSRN checkpoint): " + path);
    const std::uint32_t version = ckpt::read_u32(is);
    if (version != ckpt::kVersion)
        throw std::runtime_error("checkpoint: unsupported format version " +
                                 std::to_string(version));
    Checkpoint out;
    out.config.n = int(ckpt::read_u32(is));
    out.config.v.resize(out.config.n);
    for (double& v : out.config.v) v = ckpt::read_f64(is);
    out.config.K = int(ckpt::read_u32(is));
    out.config.width = int(ckpt::read_u32(is));
    out.config.kernel_hidden = int(ckpt::read_u32(is));
    out.config.patch = int(ckpt::read_u32(is));
    const std::uint32_t count = ckpt::read_u32(is);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t len = ckpt::read_u32(is);
        std::string name(len, '\0');
        is.read(name.data(), len);
        Shape s;
        s.n = int(ckpt::read_u32(is));
        s.c = int(ckpt::read_u32(is));
        s.h = int(ckpt::read_u32(is));
        s.w = int(ckpt::read_u32(is));
        Tensor t(s);
        is.read(reinterpret_cast<char*>(t.data()), std::streamsize(t.numel() * sizeof(float)));
        if (!is) throw std::runtime_error("checkpoint: truncated entry " + name);
        out.entries.emplace(std::move(name), std::move(t));
    }
    if (auto it = out.entries.find("opt.iter"); it != out.entries.end())
        out.iter = std::int64_t(it->second[0]);
    return out;
}

inline MsrNet load_model(const std::string& path, std::int64_t* iter_out = nullptr) {
    Checkpoint c = load_checkpoint_raw(path);
    MsrNet model(c.config);
    std::int64_t step = 0;
    if (auto it = c.entries.find("opt.step"); it != c.entries.end())
        step = std::int64_t(it->second[0]);
    for (Parameter* p : model.parameters()) {
        auto it = c.entries.find(p->name);
        if (it == c.entries.end())
            throw std::runtime_error("checkpoint: missing parameter " + p->name);
        if (!(it->second.shape() == p->value.shape()))
            throw std::runtime_error("checkpoint: shape mismatch for " + p->name +
                                     " (architecture mismatch)");
        p->value = it->second;
        if (auto m = c.entries.find("opt." + p->name + ".m"); m != c.entries.end())
            p->adam_m = m->second;
        if (auto v = c.entries.find("opt." + p->name + ".v"); v != c.entries.end())
            p->adam_v = v->second;
        p->step_count = step;
    }
    if (iter_out) *iter_out = c.iter;
    return model;
}

}  // namespace msrnet
