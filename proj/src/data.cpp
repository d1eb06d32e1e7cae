#include "witu/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "witu/tensor_io.hpp"

namespace witu::data {

Tensor make_phantom(const PhantomSpec& spec) {
    if (spec.size < 16) throw ConfigError("phantom size must be >= 16");
    if (spec.min_ellipses > spec.max_ellipses) throw ConfigError("phantom ellipse range is empty");
    if (spec.min_intensity > spec.max_intensity) throw ConfigError("phantom intensity range is empty");
    const std::size_t n = spec.size;
    Rng rng(spec.seed);
    std::uniform_int_distribution<std::size_t> count_dist(spec.min_ellipses, spec.max_ellipses);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const std::size_t count = count_dist(rng);
    std::vector<double> img(n * n, 0.0);
    for (std::size_t e = 0; e < count; ++e) {
        const double cx = (0.2 + 0.6 * unit(rng)) * n, cy = (0.2 + 0.6 * unit(rng)) * n;
        const double ax = (0.05 + 0.3 * unit(rng)) * n, ay = (0.05 + 0.3 * unit(rng)) * n;
        const double theta = std::numbers::pi * unit(rng);
        const double intensity = spec.min_intensity + (spec.max_intensity - spec.min_intensity) * unit(rng);
        const double ct = std::cos(theta), st = std::sin(theta);
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < n; ++c) {
                const double dx = c + 0.5 - cx, dy = r + 0.5 - cy;
                const double u = (dx * ct + dy * st) / ax, v = (-dx * st + dy * ct) / ay;
                if (u * u + v * v <= 1.0) img[r * n + c] += intensity;
            }
        }
    }
    Tensor out({1, n, n});
    for (std::size_t i = 0; i < n * n; ++i) out[i] = static_cast<float>(std::clamp(img[i], 0.0, 1.0));
    return out;
}

Tensor degrade(const Tensor& clean, const NoiseSpec& spec) {
    if (spec.gaussian_sigma < 0) throw ConfigError("noise sigma must be >= 0");
    if (spec.poisson_photons < 0) throw ConfigError("photon count must be > 0 when enabled");
    Tensor out = clean;
    Rng rng(spec.seed);
    if (spec.poisson_photons > 0) {
        for (auto& v : out.storage()) {
            std::poisson_distribution<long long> pois(std::max(0.0, static_cast<double>(v)) * spec.poisson_photons);
            v = static_cast<float>(static_cast<double>(pois(rng)) / spec.poisson_photons);
        }
    }
    if (spec.gaussian_sigma > 0) {
        std::normal_distribution<double> noise(0.0, spec.gaussian_sigma);
        for (auto& v : out.storage()) v = static_cast<float>(v + noise(rng));
    }
    if (spec.gaussian_sigma > 0 || spec.poisson_photons > 0) {
        for (auto& v : out.storage()) v = std::clamp(v, 0.0f, 1.0f);
    }
    return out;
}

Augmentation draw_augmentation(Rng& rng) {
    std::uniform_int_distribution<int> pick(0, 11);
    const int k = pick(rng);
    return {static_cast<Rotation>(k % 4), static_cast<Flip>(k / 4)};
}

namespace {

// Counter-clockwise quarter turns on the last two axes.
Tensor rotate(const Tensor& img, int quarter_turns) {
    quarter_turns = ((quarter_turns % 4) + 4) % 4;
    if (quarter_turns == 0) return img;
    if (img.ndim() < 2) throw ShapeError("rotation needs at least 2 axes");
    const std::size_t h = img.dim(img.ndim() - 2), w = img.dim(img.ndim() - 1);
    if (quarter_turns == 2) {
        Tensor out(img.dims());
        for (std::size_t p = 0; p < img.numel() / (h * w); ++p) {
            std::reverse_copy(img.ptr() + p * h * w, img.ptr() + (p + 1) * h * w, out.ptr() + p * h * w);
        }
        return out;
    }
    if (h != w) {
        throw PreconditionError("rotation requires square images, got " + std::to_string(h) + "x" +
                                std::to_string(w));
    }
    const std::size_t n = h, planes = img.numel() / (n * n);
    Tensor out(img.dims());
    for (std::size_t p = 0; p < planes; ++p) {
        const float* src = img.ptr() + p * n * n;
        float* dst = out.ptr() + p * n * n;
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < n; ++c) {
                std::size_t sr = r, sc = c;
                switch (quarter_turns) {
                    case 1: sr = c; sc = n - 1 - r; break;  // out(r,c) = in(c, n-1-r)
                    case 2: sr = n - 1 - r; sc = n - 1 - c; break;
                    case 3: sr = n - 1 - c; sc = r; break;
                }
                dst[r * n + c] = src[sr * n + sc];
            }
        }
    }
    return out;
}

Tensor flip(const Tensor& img, Flip f) {
    if (f == Flip::none) return img;
    const std::size_t h = img.dim(img.ndim() - 2), w = img.dim(img.ndim() - 1);
    const std::size_t planes = img.numel() / (h * w);
    Tensor out(img.dims());
    for (std::size_t p = 0; p < planes; ++p) {
        const float* src = img.ptr() + p * h * w;
        float* dst = out.ptr() + p * h * w;
        for (std::size_t r = 0; r < h; ++r) {
            for (std::size_t c = 0; c < w; ++c) {
                dst[r * w + c] = f == Flip::horizontal ? src[r * w + (w - 1 - c)] : src[(h - 1 - r) * w + c];
            }
        }
    }
    return out;
}

}  // namespace

Tensor apply_augmentation(const Tensor& img, const Augmentation& aug) {
    return flip(rotate(img, static_cast<int>(aug.rotation)), aug.flip);
}

Tensor undo_augmentation(const Tensor& img, const Augmentation& aug) {
    return rotate(flip(img, aug.flip), -static_cast<int>(aug.rotation));
}

ImagePair augment(const ImagePair& pair, const Augmentation& aug) {
    return {apply_augmentation(pair.ldct, aug), apply_augmentation(pair.fdct, aug), pair.tag};
}

ImagePair augment(const ImagePair& pair, Rng& rng) { return augment(pair, draw_augmentation(rng)); }

Tensor normalize(const Tensor& raw, double lo, double hi) {
    if (!(hi > lo)) throw ConfigError("normalize: hi must exceed lo");
    Tensor out(raw.dims());
    for (std::size_t i = 0; i < raw.numel(); ++i) {
        out[i] = static_cast<float>(std::clamp((raw[i] - lo) / (hi - lo), 0.0, 1.0));
    }
    return out;
}

Tensor denormalize(const Tensor& norm, double lo, double hi) {
    if (!(hi > lo)) throw ConfigError("denormalize: hi must exceed lo");
    Tensor out(norm.dims());
    for (std::size_t i = 0; i < norm.numel(); ++i) out[i] = static_cast<float>(norm[i] * (hi - lo) + lo);
    return out;
}

std::vector<CorpusEntry> Manifest::train() const {
    std::vector<CorpusEntry> out;
    std::copy_if(entries.begin(), entries.end(), std::back_inserter(out), [](const auto& e) { return !e.is_test(); });
    return out;
}

std::vector<CorpusEntry> Manifest::test() const {
    std::vector<CorpusEntry> out;
    std::copy_if(entries.begin(), entries.end(), std::back_inserter(out), [](const auto& e) { return e.is_test(); });
    return out;
}

ImagePair Manifest::load(const CorpusEntry& e) const {
    ImagePair p{load_tensor(root / e.ldct), load_tensor(root / e.fdct), e.ldct};
    if (p.ldct.dims() != p.fdct.dims()) {
        throw ShapeError("pair " + std::to_string(e.index) + ": ldct " + dims_to_string(p.ldct.dims()) +
                         " vs fdct " + dims_to_string(p.fdct.dims()));
    }
    return p;
}

Manifest read_manifest(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read manifest " + path.string());
    Manifest m;
    m.root = path.parent_path();
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        CorpusEntry e;
        std::string idx, seed;
        if (!std::getline(ls, idx, '\t') || !std::getline(ls, e.ldct, '\t') ||
            !std::getline(ls, e.fdct, '\t') || !std::getline(ls, seed)) {
            throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected 4 tab-separated fields");
        }
        try {
            e.index = std::stoull(idx);
            e.seed = std::stoull(seed);
        } catch (const std::exception&) {
            throw IoError(path.string() + ":" + std::to_string(lineno) + ": bad index or seed");
        }
        m.entries.push_back(std::move(e));
    }
    return m;
}

std::string format_manifest(const Manifest& m) {
    std::ostringstream os;
    for (const auto& e : m.entries) os << e.index << '\t' << e.ldct << '\t' << e.fdct << '\t' << e.seed << '\n';
    return os.str();
}

std::filesystem::path build_corpus(std::size_t n_train, std::size_t n_test, const PhantomSpec& phantom,
                                   const NoiseSpec& noise, const std::filesystem::path& out_dir) {
    if (n_train == 0 || n_test == 0) throw ConfigError("corpus needs at least one train and one test pair");
    namespace fs = std::filesystem;
    std::error_code ec;
    for (const char* sub : {"train", "test"}) {
        fs::create_directories(out_dir / sub, ec);
        if (ec) throw IoError("cannot create " + (out_dir / sub).string() + ": " + ec.message());
    }
    Manifest m;
    m.root = out_dir;
    for (std::size_t i = 0; i < n_train + n_test; ++i) {
        const bool test = i >= n_train;
        CorpusEntry e;
        e.index = i;
        e.seed = mix_seed(phantom.seed, i);
        char stem[32];
        std::snprintf(stem, sizeof stem, "%04zu", test ? i - n_train : i);
        const std::string dir = test ? "test/" : "train/";
        e.ldct = dir + stem + "_ldct.wten";
        e.fdct = dir + stem + "_fdct.wten";

        PhantomSpec ps = phantom;
        ps.seed = e.seed;
        NoiseSpec ns = noise;
        ns.seed = mix_seed(e.seed, noise.seed);
        Tensor clean = make_phantom(ps);
        save_tensor(out_dir / e.fdct, clean);
        save_tensor(out_dir / e.ldct, degrade(clean, ns));
        m.entries.push_back(std::move(e));
    }
    const fs::path manifest = out_dir / kManifestName;
    write_file_atomic(manifest, format_manifest(m));
    return manifest;
}

}  // namespace witu::data
