#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "msrnet/model.hpp"
#include "msrnet/nn.hpp"
#include "msrnet/train.hpp"

using namespace msrnet;

TEST(Loss, ZeroWhenEqual) {
    Tensor a({1, 3, 2, 2}, std::vector<float>(12, 0.5f));
    std::vector<Parameter*> none;
    LossResult r = loss_mse_l2(a, a, none, 0.0);
    EXPECT_EQ(r.loss, 0.0);
    for (std::size_t i = 0; i < r.grad_pred.numel(); ++i) EXPECT_EQ(r.grad_pred[i], 0.f);
}

TEST(Loss, FrobeniusOfOnes) {
    Tensor pred({1, 3, 2, 2}, std::vector<float>(12, 1.f));
    Tensor target({1, 3, 2, 2}, std::vector<float>(12, 0.f));
    std::vector<Parameter*> none;
    LossResult r = loss_mse_l2(pred, target, none, 0.0);
    EXPECT_DOUBLE_EQ(r.loss, 12.0);
}

// Independent oracle: flatten everything and recompute with plain dot
// products, including the lambda term and its gradient contribution.
TEST(Loss, MatchesFlatVectorOracle) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<float> dist(-1.f, 1.f);
    const int batch = 3;
    Tensor pred({batch, 2, 4, 4}), target({batch, 2, 4, 4});
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        pred[i] = dist(rng);
        target[i] = dist(rng);
    }
    Parameter w("w", Tensor({2, 2, 3, 3}), true);
    Parameter b("b", Tensor({2, 1, 1, 1}), false);
    for (std::size_t i = 0; i < w.value.numel(); ++i) w.value[i] = dist(rng);
    for (std::size_t i = 0; i < b.value.numel(); ++i) b.value[i] = dist(rng);
    const double lambda = 0.013;

    std::vector<Parameter*> ps{&w, &b};
    LossResult r = loss_mse_l2(pred, target, ps, lambda);

    double want = 0;
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        const double d = double(pred[i]) - target[i];
        want += d * d;
    }
    want /= batch;
    double wsq = 0;
    for (std::size_t i = 0; i < w.value.numel(); ++i) wsq += double(w.value[i]) * w.value[i];
    want += lambda * wsq;  // biases excluded
    EXPECT_NEAR(r.loss, want, 1e-9 * std::abs(want));

    for (std::size_t i = 0; i < pred.numel(); ++i)
        EXPECT_NEAR(r.grad_pred[i], 2.0 / batch * (double(pred[i]) - target[i]), 1e-6);
    for (std::size_t i = 0; i < w.value.numel(); ++i)
        EXPECT_NEAR(w.grad[i], 2.0 * lambda * w.value[i], 1e-7);
    for (std::size_t i = 0; i < b.value.numel(); ++i) EXPECT_EQ(b.grad[i], 0.f);
}

TEST(Loss, ShapeMismatchThrows) {
    Tensor a({1, 3, 2, 2}), b({1, 3, 2, 3});
    std::vector<Parameter*> none;
    EXPECT_THROW(loss_mse_l2(a, b, none, 0.0), shape_error);
}

TEST(Adam, ZeroGradLeavesValueUnchanged) {
    Parameter p("p", Tensor({1, 1, 2, 2}, {1.f, -2.f, 3.f, 4.f}));
    adam_step(p, 0.1);
    EXPECT_FLOAT_EQ(p.value[0], 1.f);
    EXPECT_FLOAT_EQ(p.value[2], 3.f);
    EXPECT_EQ(p.step_count, 1);
}

// First step with constant grad g: bias correction makes |delta| ~ lr.
TEST(Adam, FirstStepMagnitudeIsLr) {
    for (float g : {0.5f, -3.f, 100.f}) {
        Parameter p("p", Tensor({1, 1, 1, 1}, {0.f}));
        p.grad[0] = g;
        const double lr = 1e-2;
        adam_step(p, lr);
        // m_hat = g, v_hat = g^2 -> delta = lr * g/(|g| + eps)
        const double want = lr * double(g) / (std::abs(double(g)) + 1e-8);
        EXPECT_NEAR(-p.value[0] + 0.0, want, 1e-8) << "g=" << g;
        EXPECT_NEAR(std::abs(double(p.value[0])), lr, 1e-6);
    }
}

// Two steps with fixed grad against a hand-rolled scalar Adam trace.
TEST(Adam, MatchesScalarReference) {
    const double lr = 3e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8, g = 0.7;
    Parameter p("p", Tensor({1, 1, 1, 1}, {0.25f}));

    double x = 0.25, m = 0, v = 0;
    for (int t = 1; t <= 2; ++t) {
        m = beta1 * m + (1 - beta1) * g;
        v = beta2 * v + (1 - beta2) * g * g;
        const double mhat = m / (1 - std::pow(beta1, t));
        const double vhat = v / (1 - std::pow(beta2, t));
        x -= lr * mhat / (std::sqrt(vhat) + eps);

        p.grad[0] = float(g);
        adam_step(p, lr, beta1, beta2, eps);
        EXPECT_NEAR(p.value[0], x, 1e-6) << "step " << t;
    }
}

TEST(LrSchedule, PaperValues) {
    TrainConfig cfg;
    EXPECT_DOUBLE_EQ(lr_at(0, cfg), 1e-4);
    EXPECT_DOUBLE_EQ(lr_at(99999, cfg), 1e-4);
    EXPECT_DOUBLE_EQ(lr_at(100000, cfg), 1e-5);
    EXPECT_DOUBLE_EQ(lr_at(199999, cfg), 1e-5);
    EXPECT_DOUBLE_EQ(lr_at(200000, cfg), 1e-6);
    EXPECT_DOUBLE_EQ(lr_at(299999, cfg), 1e-6);
    EXPECT_THROW(lr_at(-1, cfg), std::out_of_range);
    EXPECT_THROW(lr_at(300000, cfg), std::out_of_range);
}

TEST(LrSchedule, MonotoneNonIncreasing) {
    TrainConfig cfg;
    double prev = cfg.lr0;
    for (std::int64_t i = 0; i < cfg.max_iters; i += 997) {
        const double lr = lr_at(i, cfg);
        EXPECT_LE(lr, prev);
        prev = lr;
    }
}

TEST(TrainConfig, Validation) {
    TrainConfig cfg;
    cfg.lambda = -1.0;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
    cfg = TrainConfig{};
    cfg.lr_drop_iters = {200000, 100000};
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
    cfg = TrainConfig{};
    cfg.lr_drop_iters = {400000};  // beyond max_iters is allowed: never reached
    EXPECT_NO_THROW(cfg.validate());
    cfg.lr_drop_iters = {0};
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

namespace {

std::vector<TrainSample> tiny_dataset(int count, int side, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> dist(0.05f, 0.95f);
    std::vector<TrainSample> data;
    for (int i = 0; i < count; ++i) {
        TrainSample s;
        s.hq = Tensor({1, 3, side, side});
        s.ll = Tensor({1, 3, side, side});
        for (std::size_t j = 0; j < s.hq.numel(); ++j) {
            s.hq[j] = dist(rng);
            s.ll[j] = s.hq[j] * 0.5f;
        }
        data.push_back(std::move(s));
    }
    return data;
}

MsrNetConfig tiny_net_config(int side) {
    MsrNetConfig c;
    c.n = 2;
    c.v = {10, 300};
    c.K = 2;
    c.width = 4;
    c.patch = side;
    return c;
}

}  // namespace

TEST(TrainLoop, DeterministicLossTrace) {
    auto run = [] {
        MsrNet model(tiny_net_config(8));
        model.init(7);
        TrainConfig cfg;
        cfg.max_iters = 10;
        cfg.batch = 2;
        cfg.seed = 3;
        cfg.log_interval = 1;
        auto data = tiny_dataset(3, 8, 11);
        std::vector<double> losses;
        TrainCallbacks cb;
        cb.on_log = [&](std::int64_t, double, double loss) { losses.push_back(loss); };
        train_loop(model, data, cfg, "", "", 0, cb);
        return losses;
    };
    const auto a = run(), b = run();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);  // bit-identical
}

TEST(TrainLoop, ZeroLrLeavesParametersBitIdentical) {
    MsrNet model(tiny_net_config(8));
    model.init(7);
    std::vector<std::vector<float>> before;
    for (Parameter* p : model.parameters())
        before.emplace_back(p->value.data(), p->value.data() + p->value.numel());

    TrainConfig cfg;
    cfg.max_iters = 5;
    cfg.batch = 2;
    cfg.lambda = 0.0;
    // lr0 must be > 0 to pass validation; reproduce lr=0 via the schedule
    cfg.lr0 = 1e-30;
    cfg.lr_drop_iters = {1};
    cfg.lr_drop_factor = 1e30;  // 0 for float32 storage after the drop
    auto data = tiny_dataset(2, 8, 5);

    // run with literally zero lr through adam directly
    MsrNet m2(tiny_net_config(8));
    m2.init(7);
    Tensor x, y;
    for (int it = 0; it < 5; ++it) {
        detail::assemble_batch(data, 8, 2, cfg.seed, it, x, y);
        m2.zero_grad();
        m2.forward_backward(x, y, 0.0);
        for (Parameter* p : m2.parameters()) adam_step(*p, 0.0);
    }
    std::size_t idx = 0;
    for (Parameter* p : m2.parameters()) {
        const auto& orig = before[idx++];
        for (std::size_t i = 0; i < p->value.numel(); ++i)
            EXPECT_EQ(p->value[i], orig[i]);
    }
}

TEST(TrainLoop, LargeLambdaShrinksWeightsOnZeroTarget) {
    MsrNet model(tiny_net_config(8));
    model.init(13);
    // zero-target data
    std::vector<TrainSample> data(1);
    data[0].hq = Tensor({1, 3, 8, 8});
    data[0].ll = Tensor({1, 3, 8, 8}, std::vector<float>(192, 0.3f));

    auto weight_norm = [&]() {
        double s = 0;
        for (Parameter* p : model.parameters())
            if (p->is_weight)
                for (std::size_t i = 0; i < p->value.numel(); ++i)
                    s += double(p->value[i]) * p->value[i];
        return s;
    };

    TrainConfig cfg;
    cfg.max_iters = 30;
    cfg.batch = 1;
    cfg.lambda = 1.0;
    cfg.lr0 = 1e-3;
    cfg.lr_drop_iters = {};
    double prev = weight_norm();
    Tensor x, y;
    for (int it = 0; it < 30; ++it) {
        detail::assemble_batch(data, 8, 1, cfg.seed, it, x, y);
        model.zero_grad();
        model.forward_backward(x, y, cfg.lambda);
        for (Parameter* p : model.parameters()) adam_step(*p, cfg.lr0);
        const double now = weight_norm();
        EXPECT_LT(now, prev) << "iter " << it;
        prev = now;
    }
}

TEST(TrainLoop, OverfitsTinyDataset) {
    MsrNet model(tiny_net_config(8));
    model.init(1);
    auto data = tiny_dataset(1, 8, 3);
    TrainConfig cfg;
    cfg.max_iters = 3000;
    cfg.batch = 1;
    cfg.lambda = 0.0;
    cfg.lr0 = 3e-3;  // fast memorization; the paper-default 1e-4 is far slower

    // initial loss as the reference point
    Tensor x, y;
    detail::assemble_batch(data, 8, 1, cfg.seed, 0, x, y);
    const double initial = model.forward_backward(x, y, cfg.lambda).loss;
    model.zero_grad();

    auto res = train_loop(model, data, cfg, "", "");
    EXPECT_LT(res.final_loss, initial / 100.0)
        << "initial " << initial << " final " << res.final_loss;
}

TEST(Checkpoint, RoundTripAndBadMagic) {
    MsrNet model(tiny_net_config(8));
    model.init(99);
    const std::string path = ::testing::TempDir() + "ckpt_roundtrip.bin";
    save_checkpoint(path, model, 42);

    std::int64_t iter = 0;
    MsrNet loaded = load_model(path, &iter);
    EXPECT_EQ(iter, 42);
    EXPECT_EQ(loaded.config(), model.config());
    auto pa = model.parameters(), pb = loaded.parameters();
    ASSERT_EQ(pa.size(), pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i)
        for (std::size_t j = 0; j < pa[i]->value.numel(); ++j)
            EXPECT_EQ(pa[i]->value[j], pb[i]->value[j]);

    const std::string bad = ::testing::TempDir() + "ckpt_bad.bin";
    std::ofstream(bad, std::ios::binary) << "NOPE this is not a checkpoint";
    EXPECT_THROW(load_model(bad), std::runtime_error);
}

TEST(TrainLoop, ResumeMatchesUninterrupted) {
    const std::string dir = ::testing::TempDir();
    auto data = tiny_dataset(3, 8, 21);
    TrainConfig cfg;
    cfg.max_iters = 10;
    cfg.batch = 2;
    cfg.seed = 5;
    cfg.log_interval = 1;

    std::vector<double> full;
    {
        MsrNet m(tiny_net_config(8));
        m.init(5);
        TrainCallbacks cb;
        cb.on_log = [&](std::int64_t, double, double l) { full.push_back(l); };
        train_loop(m, data, cfg, "", "", 0, cb);
    }

    std::vector<double> split;
    const std::string ckpt = dir + "resume_test.bin";
    {
        MsrNet m(tiny_net_config(8));
        m.init(5);
        TrainConfig half = cfg;
        half.max_iters = 5;
        half.checkpoint_interval = 5;
        TrainCallbacks cb;
        cb.on_log = [&](std::int64_t, double, double l) { split.push_back(l); };
        train_loop(m, data, half, ckpt, "", 0, cb);
    }
    {
        std::int64_t iter = 0;
        MsrNet m = load_model(ckpt, &iter);
        ASSERT_EQ(iter, 5);
        TrainCallbacks cb;
        cb.on_log = [&](std::int64_t, double, double l) { split.push_back(l); };
        train_loop(m, data, cfg, "", "", iter, cb);
    }
    ASSERT_EQ(full.size(), split.size());
    for (std::size_t i = 0; i < full.size(); ++i) EXPECT_EQ(full[i], split[i]);
}
