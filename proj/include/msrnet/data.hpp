#pragma once

// Synthetic low-light degradation, dataset synthesis with JSONL manifests,
// aligned patch extraction and leakage-free train/test splitting.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "msrnet/image_io.hpp"
#include "msrnet/tensor.hpp"

namespace msrnet {

inline constexpr const char* kPipelineVersion = "contrast-brightness-clamp-gamma/1";

struct DegradeParams {
    double contrast = 1.0;
    double brightness = 0.0;
    double gamma = 1.0;
    std::uint64_t seed = 0;

    // calibrated stand-in ranges; the original distributions are unpublished
    static constexpr double kContrastLo = 0.5, kContrastHi = 0.9;
    static constexpr double kBrightnessLo = -0.2, kBrightnessHi = 0.0;
    static constexpr double kGammaLo = 1.5, kGammaHi = 3.5;
};

struct ImagePair {
    std::string hq_path;
    std::string ll_path;
    DegradeParams degrade;
    std::string split = "train";  // train|test
};

// ll = clamp((hq - 0.5)*contrast + 0.5 + brightness, 0, 1)^gamma
inline Tensor degrade(const Tensor& hq, const DegradeParams& p) {
    Tensor out(hq.shape());
    for (std::size_t i = 0; i < hq.numel(); ++i) {
        const double v =
            std::clamp((double(hq[i]) - 0.5) * p.contrast + 0.5 + p.brightness, 0.0, 1.0);
        out[i] = float(std::pow(v, p.gamma));
    }
    return out;
}

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    // splitmix64 over the combined words
    std::uint64_t x = seed + 0x9e3779b97f4a7c15ull * (a + 1) + 0xbf58476d1ce4e5b9ull * (b + 1);
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ull;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebull;
    x ^= x >> 31;
    return x;
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
    // fixed 53-bit construction, independent of std library internals
    const double u = double(rng() >> 11) * 0x1.0p-53;
    return lo + u * (hi - lo);
}

}  // namespace detail

inline DegradeParams random_degrade_params(std::uint64_t seed, std::uint64_t image_index,
                                           std::uint64_t variant) {
    std::mt19937_64 rng(detail::mix_seed(seed, image_index, variant));
    DegradeParams p;
    p.contrast = detail::uniform(rng, DegradeParams::kContrastLo, DegradeParams::kContrastHi);
    p.brightness =
        detail::uniform(rng, DegradeParams::kBrightnessLo, DegradeParams::kBrightnessHi);
    p.gamma = detail::uniform(rng, DegradeParams::kGammaLo, DegradeParams::kGammaHi);
    p.seed = seed;
    return p;
}

inline nlohmann::json pair_to_json(const ImagePair& p) {
    return nlohmann::json{{"hq", p.hq_path},
                          {"ll", p.ll_path},
                          {"contrast", p.degrade.contrast},
                          {"brightness", p.degrade.brightness},
                          {"gamma", p.degrade.gamma},
                          {"seed", p.degrade.seed},
                          {"split", p.split},
                          {"pipeline_version", kPipelineVersion}};
}

inline ImagePair pair_from_json(const nlohmann::json& j) {
    ImagePair p;
    p.hq_path = j.at("hq").get<std::string>();
    p.ll_path = j.at("ll").get<std::string>();
    p.degrade.contrast = j.at("contrast").get<double>();
    p.degrade.brightness = j.at("brightness").get<double>();
    p.degrade.gamma = j.at("gamma").get<double>();
    p.degrade.seed = j.at("seed").get<std::uint64_t>();
    p.split = j.value("split", "train");
    return p;
}

inline void write_manifest(const std::string& path, const std::vector<ImagePair>& pairs) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write manifest: " + path);
    for (const ImagePair& p : pairs) os << pair_to_json(p).dump() << "\n";
}

inline std::vector<ImagePair> read_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read manifest: " + path);
    std::vector<ImagePair> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        out.push_back(pair_from_json(nlohmann::json::parse(line)));
    }
    return out;
}

struct SynthesisSummary {
    std::vector<ImagePair> pairs;
    int skipped = 0;  // undecodable inputs
};

// Each HQ image yields `per_image` LL variants; LL PNGs land in
// out_dir/ll/. Deterministic given seed (inputs processed in sorted order,
// per-variant parameters derived from (seed, image index, variant)).
inline SynthesisSummary synthesize_dataset(const std::string& hq_dir, const std::string& out_dir,
                                           int per_image, std::uint64_t seed) {
    namespace fs = std::filesystem;
    std::vector<std::string> hq_files;
    for (const auto& e : fs::directory_iterator(hq_dir))
        if (e.is_regular_file() && e.path().extension() == ".png")
            hq_files.push_back(e.path().string());
    std::sort(hq_files.begin(), hq_files.end());
    if (hq_files.empty())
        throw std::runtime_error("synthesize_dataset: no .png images in " + hq_dir);

    fs::create_directories(fs::path(out_dir) / "ll");
    SynthesisSummary sum;
    int usable = 0;
    for (std::size_t idx = 0; idx < hq_files.size(); ++idx) {
        Tensor hq;
        try {
            hq = read_png(hq_files[idx]);
        } catch (const std::exception&) {
            ++sum.skipped;
            continue;
        }
        ++usable;
        const std::string stem = fs::path(hq_files[idx]).stem().string();
        for (int t = 0; t < per_image; ++t) {
            ImagePair pair;
            pair.hq_path = hq_files[idx];
            pair.degrade = random_degrade_params(seed, idx, std::uint64_t(t));
            pair.ll_path =
                (fs::path(out_dir) / "ll" / (stem + "_ll" + std::to_string(t) + ".png")).string();
            write_png(pair.ll_path, degrade(hq, pair.degrade));
            sum.pairs.push_back(std::move(pair));
        }
    }
    if (usable == 0) throw std::runtime_error("synthesize_dataset: no decodable images");
    return sum;
}

struct PatchPair {
    Tensor hq;
    Tensor ll;
    int row = 0, col = 0;
};

// Uniformly random aligned crops at identical coordinates.
inline std::vector<PatchPair> extract_patches(const Tensor& hq, const Tensor& ll, int patch,
                                              int per_pair, std::uint64_t seed) {
    check_same_shape(hq, ll, "extract_patches");
    const Shape& s = hq.shape();
    std::vector<PatchPair> out;
    if (s.h < patch || s.w < patch) return out;  // caller warns
    std::mt19937_64 rng(seed);
    for (int i = 0; i < per_pair; ++i) {
        PatchPair pp;
        pp.row = int(rng() % std::uint64_t(s.h - patch + 1));
        pp.col = int(rng() % std::uint64_t(s.w - patch + 1));
        pp.hq = Tensor({1, s.c, patch, patch});
        pp.ll = Tensor({1, s.c, patch, patch});
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < patch; ++y)
                for (int x = 0; x < patch; ++x) {
                    pp.hq.at(0, c, y, x) = hq.at(0, c, pp.row + y, pp.col + x);
                    pp.ll.at(0, c, y, x) = ll.at(0, c, pp.row + y, pp.col + x);
                }
        out.push_back(std::move(pp));
    }
    return out;
}

// Split by HQ parent so all LL children follow their parent.
inline void split_dataset(std::vector<ImagePair>& pairs, double test_fraction,
                          std::uint64_t seed) {
    if (test_fraction <= 0.0 || test_fraction >= 1.0)
        throw std::invalid_argument("split_dataset: test_fraction must be in (0,1)");
    std::vector<std::string> parents;
    for (const ImagePair& p : pairs)
        if (std::find(parents.begin(), parents.end(), p.hq_path) == parents.end())
            parents.push_back(p.hq_path);
    std::sort(parents.begin(), parents.end());
    std::mt19937_64 rng(detail::mix_seed(seed, 0xface));
    std::shuffle(parents.begin(), parents.end(), rng);
    const std::size_t n_test = std::size_t(std::llround(test_fraction * double(parents.size())));
    if (n_test == 0 || n_test == parents.size())
        throw std::runtime_error("split_dataset: fraction yields an empty side");
    std::vector<std::string> test_parents(parents.begin(), parents.begin() + n_test);
    std::sort(test_parents.begin(), test_parents.end());
    for (ImagePair& p : pairs)
        p.split = std::binary_search(test_parents.begin(), test_parents.end(), p.hq_path)
                      ? "test"
                      : "train";
}

}  // namespace msrnet
