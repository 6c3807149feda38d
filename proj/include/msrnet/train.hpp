#pragma once

// Training orchestration: deterministic patch-batch assembly, the Adam
// loop with the stepped learning-rate schedule, loss logging and
// periodic checkpoints.

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "msrnet/data.hpp"
#include "msrnet/model.hpp"
#include "msrnet/nn.hpp"

namespace msrnet {

struct TrainSample {
    Tensor hq;  // (1,3,H,W)
    Tensor ll;
};

struct TrainCallbacks {
    // iter (0-based, after the step), lr, loss
    std::function<void(std::int64_t, double, double)> on_log;
};

namespace detail {

// Uniform random patch batch, reproducible as a pure function of
// (seed, iter): resume at any iteration replays the same stream.
inline void assemble_batch(const std::vector<TrainSample>& data, int patch, int batch,
                           std::uint64_t seed, std::int64_t iter, Tensor& x, Tensor& y) {
    std::mt19937_64 rng(mix_seed(seed, std::uint64_t(iter), 0x6261746368ull));
    x = Tensor({batch, 3, patch, patch});
    y = Tensor({batch, 3, patch, patch});
    for (int b = 0; b < batch; ++b) {
        const std::size_t idx = rng() % data.size();
        const TrainSample& s = data[idx];
        const Shape& sh = s.hq.shape();
        const int r = int(rng() % std::uint64_t(sh.h - patch + 1));
        const int c = int(rng() % std::uint64_t(sh.w - patch + 1));
        for (int ch = 0; ch < 3; ++ch)
            for (int py = 0; py < patch; ++py)
                for (int px = 0; px < patch; ++px) {
                    x.at(b, ch, py, px) = s.ll.at(0, ch, r + py, c + px);
                    y.at(b, ch, py, px) = s.hq.at(0, ch, r + py, c + px);
                }
    }
}

}  // namespace detail

struct TrainResult {
    double final_loss = 0.0;
    std::int64_t iters_run = 0;
};

// Runs iterations [start_iter, cfg.max_iters). Loss log appends
// `iter,lr,loss` rows. Aborts with a diagnostic dump on non-finite loss.
inline TrainResult train_loop(MsrNet& model, const std::vector<TrainSample>& dataset,
                              const TrainConfig& cfg, const std::string& checkpoint_path,
                              const std::string& loss_log_path, std::int64_t start_iter = 0,
                              const TrainCallbacks& callbacks = {}) {
    cfg.validate();
    if (dataset.empty()) throw std::runtime_error("train_loop: empty dataset");
    const int patch = model.config().patch;
    for (const TrainSample& s : dataset)
        if (s.hq.shape().h < patch || s.hq.shape().w < patch)
            throw std::runtime_error("train_loop: sample smaller than patch size");

    std::ofstream log;
    if (!loss_log_path.empty()) {
        const bool fresh = start_iter == 0;
        log.open(loss_log_path, fresh ? std::ios::trunc : std::ios::app);
        if (fresh) log << "iter,lr,loss\n";
        log.precision(12);
    }

    TrainResult result;
    Tensor x, y;
    for (std::int64_t iter = start_iter; iter < cfg.max_iters; ++iter) {
        detail::assemble_batch(dataset, patch, cfg.batch, cfg.seed, iter, x, y);
        model.zero_grad();
        const double lr = lr_at(iter, cfg);
        const auto fb = model.forward_backward(x, y, cfg.lambda);

        if (!std::isfinite(fb.loss)) {
            std::string dump = checkpoint_path.empty() ? "loss_blowup.bin"
                                                       : checkpoint_path + ".blowup";
            save_checkpoint(dump, model, iter);
            char msg[160];
            std::snprintf(msg, sizeof msg,
                          "train_loop: non-finite loss at iter %" PRId64
                          " (diagnostic checkpoint: %s)", iter, dump.c_str());
            throw std::runtime_error(msg);
        }

        for (Parameter* p : model.parameters()) adam_step(*p, lr);

        result.final_loss = fb.loss;
        result.iters_run = iter + 1;
        if (log && (iter % cfg.log_interval == 0 || iter + 1 == cfg.max_iters))
            log << iter << "," << lr << "," << fb.loss << "\n" << std::flush;
        if (callbacks.on_log && (iter % cfg.log_interval == 0 || iter + 1 == cfg.max_iters))
            callbacks.on_log(iter, lr, fb.loss);
        if (!checkpoint_path.empty() &&
            ((iter + 1) % cfg.checkpoint_interval == 0 || iter + 1 == cfg.max_iters))
            save_checkpoint(checkpoint_path, model, iter + 1);
    }
    return result;
}

// Loads every manifest pair of the given split into memory.
inline std::vector<TrainSample> load_split(const std::vector<ImagePair>& manifest,
                                           const std::string& split) {
    std::vector<TrainSample> out;
    for (const ImagePair& p : manifest) {
        if (p.split != split) continue;
        TrainSample s;
        s.hq = read_png(p.hq_path);
        s.ll = read_png(p.ll_path);
        if (!(s.hq.shape() == s.ll.shape()))
            throw std::runtime_error("manifest pair dimension mismatch: " + p.ll_path);
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace msrnet
