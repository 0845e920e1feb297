#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pgcn/comparison.hpp"
#include "pgcn/data.hpp"
#include "pgcn/generation.hpp"

namespace pgcn {

// Application-level settings. Every field maps to a "section.key" string the
// TOML loader and --section.key=value overrides share.
struct Config {
    struct Model {
        int c = 24;
        int window_m = 7;
        std::vector<int> encoder_depths{2, 2, 6, 2};
        std::vector<int> decoder_depths{2, 2, 6, 2};
        int tile_resolution = 224;
        bool share_encoders = false;
        bool relative_bias = true;
        // Comparator branch widths and decision-head width.
        int cmp_width1 = 64, cmp_width2 = 128, cmp_width3 = 256;
        int cmp_fc_hidden = 64;
    } model;

    struct Train {
        uint64_t seed = 0;
        float learning_rate = 1e-4f;
        int batch_size = 8;
        int steps = 100;
        std::string loss_variant = "corrected";
        int pair_pool = 64;  // comparator training draws from this many premade pairs
    } train;

    struct Infer {
        int grid_n = 4;
        float tau = 0.5f;
    } infer;

    struct Data {
        std::string root = "data";
        std::string category = "synthetic";
        std::string texture = "sine_grating";
        int period = 16;
        float orientation_deg = 0.0f;
        float noise_sigma = 0.02f;
        // 2-3 gray levels, or 2-3 RGB triples given as 6 or 9 floats.
        std::vector<float> palette{0.25f, 0.75f};
        int image_size = 256;
        int train_count = 40;
        int test_normal = 10;
        int test_defect = 10;
        int defect_size = 12;
    } data;
};

// Small-model profile sized for laptop-class smoke runs; touches model.* only.
void apply_desk_preset(Config& cfg);

// Sets one field from its string form; throws ConfigError on unknown keys or
// unparseable values. Lists accept "[2,2,6,2]" or bare "2,2,6,2".
void apply_override(Config& cfg, const std::string& key, const std::string& value);

// Parses TOML (subset: [section], key = value, comments; no multi-line values)
// over cfg. `origin` names the source in error messages.
void apply_config_text(Config& cfg, const std::string& text, const std::string& origin);

Config load_config_file(const std::string& path);

// Cross-field checks; throws ConfigError naming the offending field(s).
void validate_config(const Config& cfg);

// Every valid override key, for CLI registration and docs.
std::vector<std::string> config_keys();

GenConfig gen_config(const Config& cfg);
CmpConfig cmp_config(const Config& cfg);
TextureSpec texture_spec(const Config& cfg);
LossVariant config_loss_variant(const Config& cfg);

}  // namespace pgcn
