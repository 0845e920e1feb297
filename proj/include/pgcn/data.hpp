#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "pgcn/tensor.hpp"

namespace pgcn {

struct DatasetEntry {
    std::string image;  // path
    std::string label;  // "good" or the defect kind directory name
    std::string mask;   // ground-truth mask path; empty for good entries
};

struct DatasetIndex {
    std::string category;
    std::vector<DatasetEntry> train;  // all good
    std::vector<DatasetEntry> test;
};

// Indexes an MVTec-layout tree: <root>/<category>/{train/good, test/<kind>,
// ground_truth/<kind>}. Defect test images must have a ground-truth mask named
// <stem>_mask.png; a missing one aborts with the offending stem. Entries come
// back in lexicographic order, so repeated calls agree.
DatasetIndex load_mvtec(const std::string& root, const std::string& category);

enum class TextureFamily { sine_grating, checker, tiled_motif };

struct TextureSpec {
    TextureFamily family = TextureFamily::sine_grating;
    int period = 16;                            // pixels, in [8, 64]
    float orientation_deg = 0.0f;               // sine gratings only; others stay axis-aligned
    std::vector<std::array<float, 3>> palette;  // 2 or 3 colors, each channel in [0,1]
    float noise_sigma = 0.0f;                   // per-pixel noise, truncated at ±2σ; in [0, 0.1]
};

// Deterministic in (spec, dims, seed). With zero noise the pattern repeats
// exactly every `period` pixels along its axis. Dims must be ≥ 2·period.
Tensor synth_texture(const TextureSpec& spec, int h, int w, uint64_t seed);

enum class DefectKind { blotch, scratch, paste };

struct DefectSpec {
    DefectKind kind = DefectKind::blotch;
    int size = 8;            // blotch radius / scratch length / paste patch side
    float intensity = 0.4f;  // added to every touched channel, reflected at saturation
    uint64_t seed = 0;
};

// Returns (defective image, binary mask). The mask is nonzero exactly where
// some channel changed; pixels outside it are bit-identical to the input.
// size 0 returns the image unchanged with an empty mask.
std::pair<Tensor, Tensor> inject_defect(const Tensor& image, const DefectSpec& spec);

}  // namespace pgcn
