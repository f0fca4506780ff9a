#include "aseg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "aseg/rng.hpp"
#include "aseg/serialize.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace aseg::phantom {

void PhantomConfig::validate() const {
    if (h < 16 || w < 16) throw std::invalid_argument("phantom: H, W must be >= 16");
    if (num_classes < 1) throw std::invalid_argument("phantom: K must be >= 1");
    if (contrast <= 0.0 || contrast > 1.0)
        throw std::invalid_argument("phantom: contrast must be in (0,1]");
    if (noise_std < 0.0) throw std::invalid_argument("phantom: noise_std must be >= 0");
}

double class_base_level(int class_id, int num_classes, bool symmetric_pair) {
    // mirror pairs share a base so they differ only by side
    int effective = symmetric_pair ? class_id / 2 : class_id;
    int levels = symmetric_pair ? (num_classes + 1) / 2 : num_classes;
    if (levels <= 1) return 0.55;
    return 0.3 + 0.5 * (double)effective / (double)(levels - 1);
}

namespace {

struct Blob {
    double cx, cy, rx, ry, p;
    double amp[3], phase[3];  // radial Fourier perturbation, harmonics 2..4

    bool inside(double x, double y) const {
        double dx = x - cx, dy = y - cy;
        double theta = std::atan2(dy, dx);
        double wobble = 0.0;
        for (int k = 0; k < 3; ++k) wobble += amp[k] * std::cos((k + 2) * theta + phase[k]);
        double r = std::pow(std::pow(std::fabs(dx) / rx, p) + std::pow(std::fabs(dy) / ry, p),
                            1.0 / p);
        return r <= 1.0 + wobble;
    }
};

metrics::BinaryMask rasterize(const Blob& b, int h, int w) {
    metrics::BinaryMask m(h, w);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            if (b.inside(c, r)) m.at(r, c) = 1;
    return m;
}

bool disjoint(const metrics::BinaryMask& a, const metrics::BinaryMask& b) {
    for (size_t i = 0; i < a.grid.size(); ++i)
        if (a.grid[i] && b.grid[i]) return false;
    return true;
}

metrics::BinaryMask mirror_h(const metrics::BinaryMask& m) {
    metrics::BinaryMask out(m.h, m.w);
    for (int r = 0; r < m.h; ++r)
        for (int c = 0; c < m.w; ++c) out.at(r, c) = m.at(r, m.w - 1 - c);
    return out;
}

// Draw one blob subject to area bounds, disjointness against placed masks and,
// in mirror mode, confinement to the left half.
metrics::BinaryMask place_blob(Rng& rng, int h, int w, bool left_half,
                               const std::vector<metrics::BinaryMask>& placed) {
    const double min_area = 0.01 * h * w, max_area = 0.40 * h * w;
    for (int attempt = 0; attempt < 400; ++attempt) {
        Blob b;
        double scale = std::min(h, w) * rng.uniform(0.11, 0.17);
        b.rx = scale * rng.uniform(0.8, 1.2);
        b.ry = scale * rng.uniform(0.8, 1.2);
        b.p = rng.uniform(1.6, 3.0);
        for (int k = 0; k < 3; ++k) {
            b.amp[k] = rng.uniform(0.0, 0.12);
            b.phase[k] = rng.uniform(0.0, 2.0 * M_PI);
        }
        double rmax = std::max(b.rx, b.ry) * 1.15 + 1.0;
        double xlo = rmax, xhi = (left_half ? w / 2.0 - 1.0 : w - 1.0) - rmax;
        double ylo = rmax, yhi = h - 1.0 - rmax;
        if (xhi <= xlo || yhi <= ylo) continue;
        b.cx = rng.uniform(xlo, xhi);
        b.cy = rng.uniform(ylo, yhi);
        metrics::BinaryMask m = rasterize(b, h, w);
        int64_t area = m.count();
        if (area < min_area || area > max_area) continue;
        bool ok = true;
        for (const auto& other : placed)
            if (!disjoint(m, other)) {
                ok = false;
                break;
            }
        if (ok) return m;
    }
    throw std::runtime_error("phantom: could not place a blob (image too crowded)");
}

PhantomSample make_sample(const PhantomConfig& cfg, uint64_t sample_seed) {
    Rng rng(sample_seed);
    PhantomSample s;
    s.seed = sample_seed;
    const int K = cfg.num_classes;
    std::vector<metrics::BinaryMask> masks;

    int k = 0;
    while (k < K) {
        if (cfg.symmetric_pair && k + 1 < K) {
            metrics::BinaryMask left = place_blob(rng, cfg.h, cfg.w, true, masks);
            metrics::BinaryMask right = mirror_h(left);
            bool ok = true;
            for (const auto& other : masks)
                if (!disjoint(right, other)) ok = false;
            if (!ok) continue;  // reroll the pair
            masks.push_back(left);
            masks.push_back(right);
            k += 2;
        } else {
            masks.push_back(place_blob(rng, cfg.h, cfg.w, false, masks));
            k += 1;
        }
    }
    for (int c = 0; c < K; ++c) s.class_ids.push_back(c);
    s.masks = std::move(masks);

    // grayscale intensity replicated over 3 channels; noise shared across
    // channels so 8-bit PGM round-trips keep all the information
    std::vector<float> plane((size_t)cfg.h * cfg.w, (float)kBackgroundLevel);
    for (int c = 0; c < K; ++c) {
        double base = class_base_level(c, K, cfg.symmetric_pair);
        double level = kBackgroundLevel + cfg.contrast * (base - kBackgroundLevel);
        for (size_t i = 0; i < plane.size(); ++i)
            if (s.masks[c].grid[i]) plane[i] = (float)level;
    }
    if (cfg.noise_std > 0.0)
        for (auto& v : plane)
            v = (float)std::clamp((double)v + rng.normal(0.0, cfg.noise_std), 0.0, 1.0);

    std::vector<float> img;
    img.reserve(plane.size() * 3);
    for (int ch = 0; ch < 3; ++ch) img.insert(img.end(), plane.begin(), plane.end());
    s.image = Tensor::from_data({3, cfg.h, cfg.w}, std::move(img));
    return s;
}

}  // namespace

std::vector<PhantomSample> generate(const PhantomConfig& config, int n) {
    config.validate();
    if (n < 1) throw std::invalid_argument("phantom: n must be >= 1");
    std::vector<PhantomSample> out(n);
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < n; ++i) out[i] = make_sample(config, mix_seed(config.seed, (uint64_t)i));
    return out;
}

std::pair<std::vector<PhantomSample>, std::vector<PhantomSample>> split(
    const std::vector<PhantomSample>& samples, double train_frac) {
    if (train_frac <= 0.0 || train_frac >= 1.0)
        throw std::invalid_argument("split: train_frac must be in (0,1)");
    size_t n_train = (size_t)((double)samples.size() * train_frac);
    if (n_train == 0 || n_train == samples.size())
        throw std::invalid_argument("split: a side would be empty");
    std::vector<PhantomSample> train(samples.begin(), samples.begin() + (ptrdiff_t)n_train);
    std::vector<PhantomSample> eval(samples.begin() + (ptrdiff_t)n_train, samples.end());
    return {std::move(train), std::move(eval)};
}

void export_dataset(const std::vector<PhantomSample>& samples, const std::string& dir) {
    fs::create_directories(dir);
    json index = json::array();
    char buf[64];
    for (size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        const int h = s.image.dim(1), w = s.image.dim(2);
        std::snprintf(buf, sizeof(buf), "sample_%04zu_img.pgm", i);
        std::string img_file = buf;
        std::vector<uint8_t> px((size_t)h * w);
        for (size_t p = 0; p < px.size(); ++p)
            px[p] = (uint8_t)std::lround(std::clamp(s.image.data()[p], 0.0f, 1.0f) * 255.0f);
        io::save_pgm(dir + "/" + img_file, px, h, w);

        json masks = json::object();
        for (size_t m = 0; m < s.masks.size(); ++m) {
            std::snprintf(buf, sizeof(buf), "sample_%04zu_class_%d.pgm", i, s.class_ids[m]);
            std::vector<uint8_t> mp(s.masks[m].grid.size());
            for (size_t p = 0; p < mp.size(); ++p) mp[p] = s.masks[m].grid[p] ? 255 : 0;
            io::save_pgm(dir + "/" + buf, mp, h, w);
            masks[std::to_string(s.class_ids[m])] = buf;
        }
        index.push_back({{"sample_id", i},
                         {"seed", s.seed},
                         {"class_ids", s.class_ids},
                         {"image", img_file},
                         {"masks", masks}});
    }
    std::ofstream os(dir + "/index.json");
    os << index.dump(2) << "\n";
    if (!os) throw std::runtime_error("export_dataset: failed writing index.json");
}

std::vector<PhantomSample> import_dataset(const std::string& dir) {
    std::ifstream is(dir + "/index.json");
    if (!is) throw std::runtime_error("import_dataset: missing " + dir + "/index.json");
    json index = json::parse(is);
    std::vector<PhantomSample> out;
    for (const auto& entry : index) {
        PhantomSample s;
        s.seed = entry.value("seed", 0ULL);
        int h = 0, w = 0;
        auto px = io::load_pgm(dir + "/" + entry["image"].get<std::string>(), h, w);
        std::vector<float> img;
        img.reserve((size_t)h * w * 3);
        for (int ch = 0; ch < 3; ++ch)
            for (size_t p = 0; p < px.size(); ++p) img.push_back((float)px[p] / 255.0f);
        s.image = Tensor::from_data({3, h, w}, std::move(img));
        std::vector<std::pair<int, std::string>> mask_files;
        for (const auto& [cls, file] : entry["masks"].items())
            mask_files.emplace_back(std::stoi(cls), file.get<std::string>());
        std::sort(mask_files.begin(), mask_files.end());
        for (const auto& [cls, file] : mask_files) {
            int mh = 0, mw = 0;
            auto mp = io::load_pgm(dir + "/" + file, mh, mw);
            if (mh != h || mw != w)
                throw std::runtime_error("import_dataset: mask/image size mismatch");
            metrics::BinaryMask m(mh, mw);
            for (size_t p = 0; p < mp.size(); ++p) m.grid[p] = mp[p] >= 128 ? 1 : 0;
            s.class_ids.push_back(cls);
            s.masks.push_back(std::move(m));
        }
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace aseg::phantom
