// msrnet: one binary for the whole workflow — dataset synthesis, training,
// inference, classical Retinex, evaluation and runtime benchmarking.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "msrnet/data.hpp"
#include "msrnet/image_io.hpp"
#include "msrnet/metrics.hpp"
#include "msrnet/model.hpp"
#include "msrnet/retinex.hpp"
#include "msrnet/train.hpp"

extern "C" void openblas_set_num_threads(int);

namespace fs = std::filesystem;
using nlohmann::json;
using msrnet::Shape;
using msrnet::Tensor;

namespace {

void write_resolved_config(const std::string& out_path, const json& cfg) {
    fs::path p(out_path);
    fs::path target = fs::is_directory(p) ? p / "resolved_config.json"
                                          : p.parent_path().empty()
                                                ? fs::path(out_path + ".config.json")
                                                : p.parent_path() / (p.stem().string() + ".config.json");
    std::ofstream os(target);
    os << cfg.dump(2) << "\n";
}

std::vector<double> parse_scales(const std::string& s) {
    std::vector<double> out;
    std::string cur;
    for (char ch : s + ",") {
        if (ch == ',') {
            if (!cur.empty()) out.push_back(std::stod(cur));
            cur.clear();
        } else {
            cur += ch;
        }
    }
    return out;
}

Tensor side_by_side(const Tensor& a, const Tensor& b) {
    const Shape& s = a.shape();
    Tensor out({1, 3, s.h, s.w * 2});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < s.h; ++y)
            for (int x = 0; x < s.w; ++x) {
                out.at(0, c, y, x) = a.at(0, c, y, x);
                out.at(0, c, y, s.w + x) = b.at(0, c, y, x);
            }
    return out;
}

double ssim_per_channel_mean(const Tensor& a, const Tensor& b) {
    double total = 0.0;
    for (int c = 0; c < 3; ++c)
        total += msrnet::ssim(msrnet::slice_channels(a, c, 1), msrnet::slice_channels(b, c, 1));
    return total / 3.0;
}

struct TrainOpts {
    std::string manifest, out, resume;
    msrnet::MsrNetConfig net;
    msrnet::TrainConfig train;
};

int run_train(const TrainOpts& o) {
    auto manifest = msrnet::read_manifest(o.manifest);
    std::vector<msrnet::TrainSample> data = msrnet::load_split(manifest, "train");
    if (data.empty()) {
        std::cerr << "error: manifest has no train rows\n";
        return 2;
    }

    fs::create_directories(o.out);
    std::int64_t start_iter = 0;
    msrnet::MsrNet model = [&] {
        if (!o.resume.empty()) return msrnet::load_model(o.resume, &start_iter);
        msrnet::MsrNet m(o.net);
        m.init(o.train.seed);
        return m;
    }();

    json cfg{{"manifest", o.manifest},
             {"out", o.out},
             {"resume", o.resume},
             {"n", model.config().n},
             {"v", model.config().v},
             {"K", model.config().K},
             {"width", model.config().width},
             {"patch", model.config().patch},
             {"lr0", o.train.lr0},
             {"lr_drop_iters", o.train.lr_drop_iters},
             {"max_iters", o.train.max_iters},
             {"batch", o.train.batch},
             {"lambda", o.train.lambda},
             {"seed", o.train.seed}};
    write_resolved_config(o.out, cfg);

    const std::string ckpt = (fs::path(o.out) / "checkpoint.bin").string();
    const std::string losslog = (fs::path(o.out) / "loss.csv").string();
    msrnet::TrainCallbacks cb;
    cb.on_log = [](std::int64_t iter, double lr, double loss) {
        std::printf("iter %8lld  lr %.3g  loss %.6g\n", (long long)iter, lr, loss);
        std::fflush(stdout);
    };
    auto res = msrnet::train_loop(model, data, o.train, ckpt, losslog, start_iter, cb);
    std::printf("done: %lld iterations, final loss %.6g, checkpoint %s\n",
                (long long)res.iters_run, res.final_loss, ckpt.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MSR-net low-light image enhancement toolkit"};
    app.require_subcommand(1);
    int threads = 1;
    app.add_option("--threads", threads, "worker thread cap")->capture_default_str();

    // ---- synthesize ----
    auto* syn = app.add_subcommand("synthesize", "generate LL images + manifest from HQ images");
    std::string hq_dir, syn_out;
    int per_image = 10;
    std::uint64_t syn_seed = 0;
    double test_fraction = 0.2;
    syn->add_option("--hq-dir", hq_dir, "directory of HQ .png images")->required();
    syn->add_option("--out", syn_out, "output directory")->required();
    syn->add_option("--per-image", per_image, "LL variants per HQ image")->capture_default_str();
    syn->add_option("--seed", syn_seed, "RNG seed")->capture_default_str();
    syn->add_option("--test-fraction", test_fraction, "held-out fraction (by HQ parent)")
        ->capture_default_str();

    // ---- train ----
    auto* tr = app.add_subcommand("train", "train MSR-net on a synthesized manifest");
    TrainOpts topt;
    tr->set_config("--config", "", "key = value config file (flags override)");
    tr->add_option("--manifest", topt.manifest)->required();
    tr->add_option("--out", topt.out, "output directory")->required();
    tr->add_option("--resume", topt.resume, "checkpoint to continue from");
    tr->add_option("--n", topt.net.n, "log-transform scales")->capture_default_str();
    tr->add_option("--v", topt.net.v, "log-transform magnitudes")->capture_default_str();
    tr->add_option("--depth,-K", topt.net.K, "hidden conv depth")->capture_default_str();
    tr->add_option("--width", topt.net.width)->capture_default_str();
    tr->add_option("--patch", topt.net.patch)->capture_default_str();
    tr->add_option("--lr", topt.train.lr0)->capture_default_str();
    tr->add_option("--lr-drop-iters", topt.train.lr_drop_iters)->capture_default_str();
    tr->add_option("--max-iters", topt.train.max_iters)->capture_default_str();
    tr->add_option("--batch", topt.train.batch)->capture_default_str();
    tr->add_option("--lambda", topt.train.lambda)->capture_default_str();
    tr->add_option("--seed", topt.train.seed)->capture_default_str();
    tr->add_option("--log-interval", topt.train.log_interval)->capture_default_str();
    tr->add_option("--checkpoint-interval", topt.train.checkpoint_interval)
        ->capture_default_str();

    // ---- enhance ----
    auto* en = app.add_subcommand("enhance", "run a trained model on images");
    std::string en_model, en_input, en_output;
    int en_tile = 0, en_overlap = 16;
    bool en_sheet = false;
    en->add_option("--model", en_model)->required();
    en->add_option("--input", en_input, "input .png or directory")->required();
    en->add_option("--output", en_output, "output .png or directory")->required();
    en->add_option("--tile", en_tile, "tile size (0 = whole image)")->capture_default_str();
    en->add_option("--overlap", en_overlap, "tile context overlap")->capture_default_str();
    en->add_flag("--sheet", en_sheet, "also write input|output comparison sheets");

    // ---- msr ----
    auto* ms = app.add_subcommand("msr", "classical multi-scale Retinex");
    std::string msr_input, msr_output, msr_scales = "15,80,250";
    double msr_clip = 1.0;
    bool msr_cascade = false, msr_crf = false;
    double crf_alpha = 125.0, crf_beta = 46.0;
    ms->add_option("--input", msr_input)->required();
    ms->add_option("--output", msr_output)->required();
    ms->add_option("--scales", msr_scales, "comma-separated Gaussian std-devs")
        ->capture_default_str();
    ms->add_option("--clip", msr_clip, "display percentile clip")->capture_default_str();
    ms->add_flag("--cascade", msr_cascade, "run the cascaded-convolution network instead");
    ms->add_flag("--crf", msr_crf, "apply the chromaticity color restoration");
    ms->add_option("--crf-alpha", crf_alpha)->capture_default_str();
    ms->add_option("--crf-beta", crf_beta)->capture_default_str();

    // ---- evaluate ----
    auto* ev = app.add_subcommand("evaluate", "SSIM / entropy / angular error on the test split");
    std::string ev_manifest, ev_model, ev_enhanced_dir, ev_report = "report";
    std::string ev_angular = "global";
    bool ev_baseline = false, ev_ssim_per_channel = false;
    ev->add_option("--manifest", ev_manifest)->required();
    ev->add_option("--model", ev_model, "checkpoint to enhance with");
    ev->add_option("--enhanced-dir", ev_enhanced_dir, "pre-enhanced images (by LL filename)");
    ev->add_option("--report", ev_report, "output prefix (.csv/.json)")->capture_default_str();
    ev->add_option("--angular-mode", ev_angular, "global|perpixel")->capture_default_str();
    ev->add_flag("--baseline", ev_baseline, "score the un-enhanced LL input instead");
    ev->add_flag("--ssim-per-channel", ev_ssim_per_channel, "per-channel-mean SSIM variant");

    // ---- benchmark ----
    auto* be = app.add_subcommand("benchmark", "inference wall-clock timings");
    std::string be_model, be_sizes = "500,750,1000", be_out = "benchmark.csv";
    int be_repeat = 3;
    be->add_option("--model", be_model)->required();
    be->add_option("--sizes", be_sizes, "comma-separated square sizes")->capture_default_str();
    be->add_option("--repeat", be_repeat)->capture_default_str();
    be->add_option("--out", be_out)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }

    openblas_set_num_threads(threads);

    try {
        if (syn->parsed()) {
            if (per_image < 0) throw CLI::ValidationError("--per-image must be >= 0");
            auto sum = msrnet::synthesize_dataset(hq_dir, syn_out, per_image, syn_seed);
            if (per_image > 0) msrnet::split_dataset(sum.pairs, test_fraction, syn_seed);
            msrnet::write_manifest((fs::path(syn_out) / "manifest.jsonl").string(), sum.pairs);
            write_resolved_config(syn_out, json{{"hq_dir", hq_dir},
                                                {"out", syn_out},
                                                {"per_image", per_image},
                                                {"seed", syn_seed},
                                                {"test_fraction", test_fraction},
                                                {"pipeline_version", msrnet::kPipelineVersion}});
            std::printf("synthesized %zu pairs (%d inputs skipped)\n", sum.pairs.size(),
                        sum.skipped);
        } else if (tr->parsed()) {
            return run_train(topt);
        } else if (en->parsed()) {
            msrnet::MsrNet model = msrnet::load_model(en_model);
            const auto mode = en_tile > 0 ? msrnet::Tiling::Tiled : msrnet::Tiling::Whole;
            std::vector<std::pair<std::string, std::string>> jobs;
            if (fs::is_directory(en_input)) {
                fs::create_directories(en_output);
                for (const auto& e : fs::directory_iterator(en_input))
                    if (e.path().extension() == ".png")
                        jobs.emplace_back(e.path().string(),
                                          (fs::path(en_output) / e.path().filename()).string());
                std::sort(jobs.begin(), jobs.end());
            } else {
                jobs.emplace_back(en_input, en_output);
            }
            for (const auto& [in, out] : jobs) {
                Tensor img = msrnet::read_png(in);
                Tensor res = msrnet::enhance_image(img, model, mode, en_tile, en_overlap);
                msrnet::write_png(out, res);
                if (en_sheet) {
                    fs::path op(out);
                    msrnet::write_png(
                        (op.parent_path() / (op.stem().string() + "_sheet.png")).string(),
                        side_by_side(img, res));
                }
            }
            write_resolved_config(en_output, json{{"model", en_model},
                                                  {"input", en_input},
                                                  {"output", en_output},
                                                  {"tile", en_tile},
                                                  {"overlap", en_overlap}});
        } else if (ms->parsed()) {
            const std::vector<double> cs = parse_scales(msr_scales);
            msrnet::MsrScales scales;
            for (double c : cs) scales.scales.push_back({c, 1.0 / double(cs.size())});
            scales.validate();  // rejects non-increasing scale lists
            Tensor img = msrnet::read_png(msr_input);
            Tensor out = msr_cascade ? msrnet::build_msr_cascade(scales).run(img)
                                     : msrnet::msr(img, scales, 1.0 / 255.0);
            if (msr_crf) out = msrnet::crf_baseline(out, img, crf_alpha, crf_beta);
            msrnet::write_png(msr_output, msrnet::postprocess_display(out, msr_clip));
            write_resolved_config(msr_output, json{{"input", msr_input},
                                                   {"output", msr_output},
                                                   {"scales", cs},
                                                   {"clip", msr_clip},
                                                   {"cascade", msr_cascade},
                                                   {"crf", msr_crf}});
        } else if (ev->parsed()) {
            if (ev_angular != "global" && ev_angular != "perpixel")
                throw CLI::ValidationError("--angular-mode must be global or perpixel");
            const auto amode = ev_angular == "global" ? msrnet::AngularMode::Global
                                                      : msrnet::AngularMode::PerPixel;
            auto manifest = msrnet::read_manifest(ev_manifest);
            std::optional<msrnet::MsrNet> model;
            if (!ev_model.empty()) model.emplace(msrnet::load_model(ev_model));

            msrnet::MetricReport report;
            for (const auto& p : manifest) {
                if (p.split != "test") continue;
                Tensor ll = msrnet::read_png(p.ll_path);
                Tensor gt = msrnet::read_png(p.hq_path);
                Tensor candidate;
                if (ev_baseline) {
                    candidate = ll;
                } else if (model) {
                    candidate = msrnet::enhance_image(ll, *model);
                    for (std::size_t i = 0; i < candidate.numel(); ++i)
                        candidate[i] = std::clamp(candidate[i], 0.f, 1.f);
                } else if (!ev_enhanced_dir.empty()) {
                    fs::path cand = fs::path(ev_enhanced_dir) / fs::path(p.ll_path).filename();
                    if (!fs::exists(cand)) continue;
                    candidate = msrnet::read_png(cand.string());
                } else {
                    throw CLI::ValidationError(
                        "one of --model, --enhanced-dir or --baseline is required");
                }
                msrnet::MetricRow row;
                row.id = fs::path(p.ll_path).filename().string();
                row.entropy = msrnet::discrete_entropy(candidate);
                row.ssim = ev_ssim_per_channel ? ssim_per_channel_mean(candidate, gt)
                                               : msrnet::ssim(candidate, gt);
                row.angular_deg = msrnet::angular_error_deg(gt, candidate, amode);
                report.per_image.push_back(std::move(row));
            }
            if (report.per_image.empty()) throw std::runtime_error("no test rows in manifest");
            report.finalize();
            report.write_csv(ev_report + ".csv");
            json agg = report.aggregate_json();
            agg["config"] = json{{"manifest", ev_manifest},
                                 {"model", ev_model},
                                 {"enhanced_dir", ev_enhanced_dir},
                                 {"baseline", ev_baseline},
                                 {"angular_mode", ev_angular},
                                 {"ssim_per_channel", ev_ssim_per_channel}};
            std::ofstream(ev_report + ".json") << agg.dump(2) << "\n";
            std::printf("images %zu  mean ssim %.4f  mean entropy %.3f  mean angular %.3f deg\n",
                        report.per_image.size(), report.mean_ssim.value_or(-1.0),
                        report.mean_entropy, report.mean_angular_deg.value_or(-1.0));
        } else if (be->parsed()) {
            msrnet::MsrNet model = msrnet::load_model(be_model);
            const std::vector<double> sizes = parse_scales(be_sizes);
            std::ofstream os(be_out);
            os << "size,mean_s,stddev_s,repeat\n";
            os.precision(6);
            double prev_mean = 0.0;
            bool monotone = true;
            for (double sz : sizes) {
                const int side = int(sz);
                std::mt19937_64 rng(42);
                Tensor img({1, 3, side, side});
                for (std::size_t i = 0; i < img.numel(); ++i)
                    img[i] = float(msrnet::detail::uniform(rng, 0.0, 1.0));
                std::vector<double> times;
                for (int r = 0; r < be_repeat; ++r) {
                    const auto t0 = std::chrono::steady_clock::now();
                    Tensor out = msrnet::enhance_image(img, model, msrnet::Tiling::Tiled, 256,
                                                       model.receptive_radius());
                    const auto t1 = std::chrono::steady_clock::now();
                    times.push_back(std::chrono::duration<double>(t1 - t0).count());
                }
                double mean = 0;
                for (double t : times) mean += t;
                mean /= double(times.size());
                double var = 0;
                for (double t : times) var += (t - mean) * (t - mean);
                const double sd = times.size() > 1 ? std::sqrt(var / double(times.size() - 1)) : 0;
                os << side << "," << mean << "," << sd << "," << be_repeat << "\n";
                std::printf("%dx%d  mean %.3fs  stddev %.3fs\n", side, side, mean, sd);
                if (mean < prev_mean) monotone = false;
                prev_mean = mean;
            }
            if (!monotone)
                std::printf("note: timings not monotone in size (noise?)\n");
            write_resolved_config(be_out, json{{"model", be_model},
                                               {"sizes", sizes},
                                               {"repeat", be_repeat},
                                               {"out", be_out}});
        }
    } catch (const CLI::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
