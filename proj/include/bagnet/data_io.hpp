#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bagnet/tensor.hpp"

namespace bagnet {

struct Sample {
    std::string id;
    std::filesystem::path image_path;
    std::filesystem::path mask_path;
    std::optional<int> fold;

    bool operator==(const Sample&) const = default;
};

// Tab-separated text, one sample per line:
//   id <TAB> image_path <TAB> mask_path [<TAB> fold]
// '#' starts a comment line. Two directive lines are recognised:
//   #! target_size <h> <w>
//   #! seed <s>
// Relative paths are resolved against base_dir, the directory holding the manifest file.
struct DatasetManifest {
    std::vector<Sample> samples;
    int target_height = 64;
    int target_width = 64;
    std::uint64_t seed = 0;
    std::filesystem::path base_dir;

    // base_dir is where the file lives, not what it says.
    bool operator==(const DatasetManifest& o) const {
        return samples == o.samples && target_height == o.target_height && target_width == o.target_width &&
               seed == o.seed;
    }

    std::filesystem::path resolve(const std::filesystem::path& p) const;
};

// ManifestError (with line number) for malformed rows, bad directives, duplicate ids or a
// target size not divisible by 16. Samples whose files do not exist produce warnings only.
DatasetManifest parse_manifest(const std::filesystem::path& path, std::vector<std::string>* warnings = nullptr);
DatasetManifest parse_manifest_text(const std::string& text, const std::filesystem::path& base_dir,
                                    std::vector<std::string>* warnings = nullptr);

std::string format_manifest(const DatasetManifest& manifest);
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

// 8-bit grayscale image scaled to [0, 1], shape (1, 1, h, w). Colour images are averaged over
// their colour channels (alpha ignored).
//   MissingFileError, DecodeError (unreadable or not 8-bit)
Tensor<float> load_image(const std::filesystem::path& path);

struct LoadedSample {
    Tensor<float> image;  // (1, 1, h, w), bilinear resize, values in [0, 1]
    Tensor<float> mask;   // (1, 1, h, w), nearest resize, values in {0, 1}
};

// Also SizeMismatchError when image and mask differ in native size. Messages carry the sample id.
LoadedSample load_sample(const Sample& sample, int target_height, int target_width,
                         const std::filesystem::path& base_dir = {});

// Generates n ellipse-lesion pairs under out_dir/images and out_dir/masks and writes
// out_dir/manifest.tsv. Same arguments give byte-identical files.
DatasetManifest synth_dataset(int n, int height, int width, std::uint64_t seed, const std::filesystem::path& out_dir);

// (1,1,h,w) tensor -> 8-bit PNG/PGM (by extension); values are clamped to [0, 1] and scaled by 255.
void write_gray_image(const std::filesystem::path& path, const Tensor<float>& image);

// Binary mask -> 0/255 image, optionally resized (nearest) to height x width.
void write_mask_image(const std::filesystem::path& path, const Tensor<float>& mask, int height = 0, int width = 0);

// Grayscale image with the boundary of `mask` drawn in red.
void write_overlay(const std::filesystem::path& path, const Tensor<float>& image, const Tensor<float>& mask);

// Bilinear resize of a (1,1,h,w) image tensor.
Tensor<float> resize_image(const Tensor<float>& image, int height, int width);

}  // namespace bagnet
