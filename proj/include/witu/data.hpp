#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "witu/rng.hpp"
#include "witu/tensor.hpp"

namespace witu::data {

struct PhantomSpec {
    std::size_t size = 64;
    std::size_t min_ellipses = 3;
    std::size_t max_ellipses = 8;
    double min_intensity = 0.1;
    double max_intensity = 0.6;
    std::uint64_t seed = 0;
};

struct NoiseSpec {
    double gaussian_sigma = 0.08;
    double poisson_photons = 0;  // 0 disables the photon-count perturbation
    std::uint64_t seed = 0;
};

struct ImagePair {
    Tensor ldct;  // [1,H,W] noisy input y
    Tensor fdct;  // [1,H,W] clean target x
    std::string tag;
};

// Sum of randomly placed, rotated ellipses, clamped to [0,1]. [1,H,W].
Tensor make_phantom(const PhantomSpec& spec);

// clamp(x [+ Poisson photon perturbation] + N(0, sigma^2), 0, 1); x is untouched.
Tensor degrade(const Tensor& clean, const NoiseSpec& spec);

enum class Rotation { r0, r90, r180, r270 };
enum class Flip { none, horizontal, vertical };

// Rotation (counter-clockwise) is applied first, then the flip.
struct Augmentation {
    Rotation rotation = Rotation::r0;
    Flip flip = Flip::none;
    bool operator==(const Augmentation&) const = default;
};

// Uniform over the 12 combinations.
Augmentation draw_augmentation(Rng& rng);
// Acts on the last two axes; r90 and r270 need square images.
Tensor apply_augmentation(const Tensor& img, const Augmentation& aug);
Tensor undo_augmentation(const Tensor& img, const Augmentation& aug);
ImagePair augment(const ImagePair& pair, const Augmentation& aug);
ImagePair augment(const ImagePair& pair, Rng& rng);

// (v - lo) / (hi - lo) clamped to [0,1]; denormalize is the affine inverse.
Tensor normalize(const Tensor& raw, double lo, double hi);
Tensor denormalize(const Tensor& norm, double lo, double hi);

inline constexpr double kHuWindowLo = -160.0;
inline constexpr double kHuWindowHi = 240.0;

struct CorpusEntry {
    std::size_t index = 0;
    std::string ldct;  // paths relative to the manifest directory
    std::string fdct;
    std::uint64_t seed = 0;
    bool is_test() const { return ldct.starts_with("test/"); }
};

// Lines "index<TAB>ldct_path<TAB>fdct_path<TAB>seed". Entries whose ldct
// path starts with "test/" form the held-out split.
struct Manifest {
    std::filesystem::path root;
    std::vector<CorpusEntry> entries;

    std::vector<CorpusEntry> train() const;
    std::vector<CorpusEntry> test() const;
    ImagePair load(const CorpusEntry& e) const;
};

inline constexpr const char* kManifestName = "manifest.tsv";

Manifest read_manifest(const std::filesystem::path& path);
std::string format_manifest(const Manifest& m);

// Per-image seed = mix_seed(phantom.seed, index); noise seed derives from it
// and noise.seed. Writes train/ and test/ WTEN files, then the manifest
// (atomically, last). Returns the manifest path.
std::filesystem::path build_corpus(std::size_t n_train, std::size_t n_test, const PhantomSpec& phantom,
                                   const NoiseSpec& noise, const std::filesystem::path& out_dir);

}  // namespace witu::data
