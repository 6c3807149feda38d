#pragma once

// Parameters, the Frobenius-norm training loss with L2 weight penalty,
// the Adam optimizer and the stepped learning-rate schedule.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "msrnet/tensor.hpp"

namespace msrnet {

struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor adam_m;
    Tensor adam_v;
    std::int64_t step_count = 0;
    bool is_weight = true;  // weight tensors enter the L2 penalty, biases do not

    Parameter() = default;
    Parameter(std::string n, Tensor v, bool weight = true)
        : name(std::move(n)),
          value(std::move(v)),
          grad(value.shape()),
          adam_m(value.shape()),
          adam_v(value.shape()),
          is_weight(weight) {}

    void zero_grad() { grad.fill(0.f); }
};

struct TrainConfig {
    double lr0 = 1e-4;
    std::vector<std::int64_t> lr_drop_iters = {100000, 200000};
    double lr_drop_factor = 10.0;
    std::int64_t max_iters = 300000;
    int batch = 64;
    double lambda = 1e-6;
    std::uint64_t seed = 0;
    std::int64_t log_interval = 100;
    std::int64_t checkpoint_interval = 10000;

    void validate() const {
        if (lr0 <= 0) throw std::invalid_argument("lr0 must be positive");
        if (lambda < 0) throw std::invalid_argument("lambda must be non-negative");
        if (batch < 1) throw std::invalid_argument("batch must be >= 1");
        if (max_iters < 1) throw std::invalid_argument("max_iters must be >= 1");
        // drops beyond max_iters are fine: short runs just never reach them
        for (std::size_t i = 0; i < lr_drop_iters.size(); ++i) {
            if (lr_drop_iters[i] < 1)
                throw std::invalid_argument("lr drop iterations must be >= 1");
            if (i > 0 && lr_drop_iters[i] <= lr_drop_iters[i - 1])
                throw std::invalid_argument("lr_drop_iters must be strictly increasing");
        }
    }
};

inline double lr_at(std::int64_t iter, const TrainConfig& cfg) {
    if (iter < 0 || iter >= cfg.max_iters)
        throw std::out_of_range("lr_at: iteration " + std::to_string(iter) +
                                " outside [0, " + std::to_string(cfg.max_iters) + ")");
    double lr = cfg.lr0;
    for (std::int64_t drop : cfg.lr_drop_iters)
        if (iter >= drop) lr /= cfg.lr_drop_factor;
    return lr;
}

struct LossResult {
    double loss = 0.0;
    Tensor grad_pred;
};

// L = (1/N) sum_i ||pred_i - target_i||_F^2 + lambda * sum_W ||W||_F^2
// The lambda term covers weight tensors only; its gradient (2*lambda*W)
// is accumulated into each weight's grad here.
inline LossResult loss_mse_l2(const Tensor& pred, const Tensor& target,
                              std::vector<Parameter*>& params, double lambda) {
    check_same_shape(pred, target, "loss_mse_l2");
    const int batch = pred.shape().n;
    LossResult r;
    r.grad_pred = Tensor(pred.shape());
    double acc = 0.0;
    const double inv_n = 1.0 / batch;
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        const double d = double(pred[i]) - double(target[i]);
        acc += d * d;
        r.grad_pred[i] = float(2.0 * inv_n * d);
    }
    acc *= inv_n;
    if (lambda != 0.0) {
        for (Parameter* p : params) {
            if (!p->is_weight) continue;
            double wsq = 0.0;
            for (std::size_t i = 0; i < p->value.numel(); ++i) {
                wsq += double(p->value[i]) * p->value[i];
                p->grad[i] += float(2.0 * lambda * p->value[i]);
            }
            acc += lambda * wsq;
        }
    }
    r.loss = acc;
    return r;
}

// Standard bias-corrected Adam.
inline void adam_step(Parameter& p, double lr, double beta1 = 0.9,
                      double beta2 = 0.999, double eps = 1e-8) {
    p.step_count += 1;
    const double bc1 = 1.0 - std::pow(beta1, double(p.step_count));
    const double bc2 = 1.0 - std::pow(beta2, double(p.step_count));
    for (std::size_t i = 0; i < p.value.numel(); ++i) {
        const double g = p.grad[i];
        const double m = beta1 * p.adam_m[i] + (1.0 - beta1) * g;
        const double v = beta2 * p.adam_v[i] + (1.0 - beta2) * g * g;
        p.adam_m[i] = float(m);
        p.adam_v[i] = float(v);
        const double mhat = m / bc1;
        const double vhat = v / bc2;
        p.value[i] = float(p.value[i] - lr * mhat / (std::sqrt(vhat) + eps));
    }
}

}  // namespace msrnet
