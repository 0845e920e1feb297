#include "pgcn/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "pgcn/error.hpp"

namespace pgcn {

namespace {

std::string trim(std::string_view s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string_view::npos) return {};
    size_t b = s.find_last_not_of(" \t\r");
    return std::string(s.substr(a, b - a + 1));
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const char* expected) {
    throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as " + expected);
}

int64_t parse_int(const std::string& key, const std::string& raw) {
    const std::string v = trim(raw);
    int64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, raw, "an integer");
    return out;
}

uint64_t parse_u64(const std::string& key, const std::string& raw) {
    const std::string v = trim(raw);
    uint64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size())
        bad_value(key, raw, "a non-negative integer");
    return out;
}

float parse_float(const std::string& key, const std::string& raw) {
    const std::string v = trim(raw);
    try {
        size_t used = 0;
        float out = std::stof(v, &used);
        if (used != v.size()) bad_value(key, raw, "a number");
        return out;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        bad_value(key, raw, "a number");
    }
}

bool parse_bool(const std::string& key, const std::string& raw) {
    const std::string v = trim(raw);
    if (v == "true") return true;
    if (v == "false") return false;
    bad_value(key, raw, "true or false");
}

std::string parse_string(const std::string& key, const std::string& raw) {
    std::string v = trim(raw);
    if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return v.substr(1, v.size() - 2);
    if (!v.empty() && (v.front() == '"' || v.back() == '"'))
        bad_value(key, raw, "a quoted string");
    return v;
}

std::vector<std::string> split_list(const std::string& key, const std::string& raw) {
    std::string v = trim(raw);
    if (!v.empty() && v.front() == '[') {
        if (v.back() != ']') bad_value(key, raw, "a [..] list");
        v = v.substr(1, v.size() - 2);
    }
    std::vector<std::string> items;
    size_t start = 0;
    while (start <= v.size()) {
        size_t comma = v.find(',', start);
        std::string item = trim(std::string_view(v).substr(
            start, comma == std::string::npos ? v.size() - start : comma - start));
        if (!item.empty()) items.push_back(item);
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return items;
}

std::vector<int> parse_int_list(const std::string& key, const std::string& raw) {
    std::vector<int> out;
    for (const auto& item : split_list(key, raw))
        out.push_back(static_cast<int>(parse_int(key, item)));
    return out;
}

std::vector<float> parse_float_list(const std::string& key, const std::string& raw) {
    std::vector<float> out;
    for (const auto& item : split_list(key, raw)) out.push_back(parse_float(key, item));
    return out;
}

struct KeyEntry {
    const char* name;
    std::function<void(Config&, const std::string&)> set;
};

const std::vector<KeyEntry>& key_table() {
    static const std::vector<KeyEntry> table = {
        {"model.c",
         [](Config& c, const std::string& v) {
             c.model.c = static_cast<int>(parse_int("model.c", v));
         }},
        {"model.window_m",
         [](Config& c, const std::string& v) {
             c.model.window_m = static_cast<int>(parse_int("model.window_m", v));
         }},
        {"model.encoder_depths",
         [](Config& c, const std::string& v) {
             c.model.encoder_depths = parse_int_list("model.encoder_depths", v);
         }},
        {"model.decoder_depths",
         [](Config& c, const std::string& v) {
             c.model.decoder_depths = parse_int_list("model.decoder_depths", v);
         }},
        {"model.tile_resolution",
         [](Config& c, const std::string& v) {
             c.model.tile_resolution = static_cast<int>(parse_int("model.tile_resolution", v));
         }},
        {"model.share_encoders",
         [](Config& c, const std::string& v) {
             c.model.share_encoders = parse_bool("model.share_encoders", v);
         }},
        {"model.relative_bias",
         [](Config& c, const std::string& v) {
             c.model.relative_bias = parse_bool("model.relative_bias", v);
         }},
        {"model.cmp_width1",
         [](Config& c, const std::string& v) {
             c.model.cmp_width1 = static_cast<int>(parse_int("model.cmp_width1", v));
         }},
        {"model.cmp_width2",
         [](Config& c, const std::string& v) {
             c.model.cmp_width2 = static_cast<int>(parse_int("model.cmp_width2", v));
         }},
        {"model.cmp_width3",
         [](Config& c, const std::string& v) {
             c.model.cmp_width3 = static_cast<int>(parse_int("model.cmp_width3", v));
         }},
        {"model.cmp_fc_hidden",
         [](Config& c, const std::string& v) {
             c.model.cmp_fc_hidden = static_cast<int>(parse_int("model.cmp_fc_hidden", v));
         }},
        {"train.seed",
         [](Config& c, const std::string& v) { c.train.seed = parse_u64("train.seed", v); }},
        {"train.learning_rate",
         [](Config& c, const std::string& v) {
             c.train.learning_rate = parse_float("train.learning_rate", v);
         }},
        {"train.batch_size",
         [](Config& c, const std::string& v) {
             c.train.batch_size = static_cast<int>(parse_int("train.batch_size", v));
         }},
        {"train.steps",
         [](Config& c, const std::string& v) {
             c.train.steps = static_cast<int>(parse_int("train.steps", v));
         }},
        {"train.loss_variant",
         [](Config& c, const std::string& v) {
             c.train.loss_variant = parse_string("train.loss_variant", v);
         }},
        {"train.pair_pool",
         [](Config& c, const std::string& v) {
             c.train.pair_pool = static_cast<int>(parse_int("train.pair_pool", v));
         }},
        {"infer.grid_n",
         [](Config& c, const std::string& v) {
             c.infer.grid_n = static_cast<int>(parse_int("infer.grid_n", v));
         }},
        {"infer.tau",
         [](Config& c, const std::string& v) { c.infer.tau = parse_float("infer.tau", v); }},
        {"data.root",
         [](Config& c, const std::string& v) { c.data.root = parse_string("data.root", v); }},
        {"data.category",
         [](Config& c, const std::string& v) {
             c.data.category = parse_string("data.category", v);
         }},
        {"data.texture",
         [](Config& c, const std::string& v) { c.data.texture = parse_string("data.texture", v); }},
        {"data.period",
         [](Config& c, const std::string& v) {
             c.data.period = static_cast<int>(parse_int("data.period", v));
         }},
        {"data.orientation_deg",
         [](Config& c, const std::string& v) {
             c.data.orientation_deg = parse_float("data.orientation_deg", v);
         }},
        {"data.noise_sigma",
         [](Config& c, const std::string& v) {
             c.data.noise_sigma = parse_float("data.noise_sigma", v);
         }},
        {"data.palette",
         [](Config& c, const std::string& v) {
             c.data.palette = parse_float_list("data.palette", v);
         }},
        {"data.image_size",
         [](Config& c, const std::string& v) {
             c.data.image_size = static_cast<int>(parse_int("data.image_size", v));
         }},
        {"data.train_count",
         [](Config& c, const std::string& v) {
             c.data.train_count = static_cast<int>(parse_int("data.train_count", v));
         }},
        {"data.test_normal",
         [](Config& c, const std::string& v) {
             c.data.test_normal = static_cast<int>(parse_int("data.test_normal", v));
         }},
        {"data.test_defect",
         [](Config& c, const std::string& v) {
             c.data.test_defect = static_cast<int>(parse_int("data.test_defect", v));
         }},
        {"data.defect_size",
         [](Config& c, const std::string& v) {
             c.data.defect_size = static_cast<int>(parse_int("data.defect_size", v));
         }},
    };
    return table;
}

std::string strip_comment(const std::string& line) {
    bool in_quotes = false;
    for (size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') in_quotes = !in_quotes;
        if (line[i] == '#' && !in_quotes) return line.substr(0, i);
    }
    return line;
}

}  // namespace

void apply_desk_preset(Config& cfg) {
    cfg.model.c = 16;
    cfg.model.window_m = 2;
    cfg.model.tile_resolution = 64;
    cfg.model.encoder_depths = {2, 2, 2, 2};
    cfg.model.decoder_depths = {2, 2, 2, 2};
    cfg.model.cmp_width1 = 16;
    cfg.model.cmp_width2 = 32;
    cfg.model.cmp_width3 = 64;
    cfg.model.cmp_fc_hidden = 32;
}

void apply_override(Config& cfg, const std::string& key, const std::string& value) {
    for (const auto& entry : key_table())
        if (key == entry.name) {
            entry.set(cfg, value);
            return;
        }
    throw ConfigError("unknown config key '" + key + "'");
}

void apply_config_text(Config& cfg, const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string body = trim(strip_comment(line));
        if (body.empty()) continue;
        const std::string at = origin + ":" + std::to_string(lineno);
        if (body.front() == '[') {
            if (body.back() != ']')
                throw ConfigError(at + ": malformed section header '" + body + "'");
            section = trim(std::string_view(body).substr(1, body.size() - 2));
            if (section.empty()) throw ConfigError(at + ": empty section name");
            continue;
        }
        const size_t eq = body.find('=');
        if (eq == std::string::npos)
            throw ConfigError(at + ": expected 'key = value', got '" + body + "'");
        const std::string key = trim(std::string_view(body).substr(0, eq));
        const std::string value = trim(std::string_view(body).substr(eq + 1));
        if (key.empty()) throw ConfigError(at + ": missing key before '='");
        if (section.empty()) throw ConfigError(at + ": key '" + key + "' outside any [section]");
        try {
            apply_override(cfg, section + "." + key, value);
        } catch (const ConfigError& e) {
            throw ConfigError(at + ": " + e.what());
        }
    }
}

Config load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifactError("cannot open config file '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    Config cfg;
    apply_config_text(cfg, buf.str(), path);
    return cfg;
}

void validate_config(const Config& cfg) {
    const auto& m = cfg.model;
    if (m.tile_resolution <= 0 || m.tile_resolution % 32 != 0 || m.window_m <= 0 ||
        (m.tile_resolution / 32) % m.window_m != 0)
        throw ConfigError(
            "model.tile_resolution (" + std::to_string(m.tile_resolution) +
            ") and model.window_m (" + std::to_string(m.window_m) +
            ") must satisfy: tile_resolution divisible by 32, tile_resolution/32 divisible "
            "by window_m");
    if (m.c <= 0 || m.c % 8 != 0)
        throw ConfigError("model.c must be a positive multiple of 8, got " + std::to_string(m.c));
    const std::pair<const char*, const std::vector<int>*> depth_fields[] = {
        {"model.encoder_depths", &m.encoder_depths}, {"model.decoder_depths", &m.decoder_depths}};
    for (auto [name, d] : depth_fields) {
        if (d->size() != 4) throw ConfigError(std::string(name) + " needs exactly 4 entries");
        for (int v : *d)
            if (v < 1) throw ConfigError(std::string(name) + " entries must be positive");
    }
    const std::pair<const char*, int> widths[] = {{"model.cmp_width1", m.cmp_width1},
                                                  {"model.cmp_width2", m.cmp_width2},
                                                  {"model.cmp_width3", m.cmp_width3},
                                                  {"model.cmp_fc_hidden", m.cmp_fc_hidden}};
    for (auto [name, v] : widths)
        if (v < 1) throw ConfigError(std::string(name) + " must be positive");

    if (!(cfg.train.learning_rate > 0.0f))
        throw ConfigError("train.learning_rate must be positive");
    if (cfg.train.batch_size < 1) throw ConfigError("train.batch_size must be positive");
    if (cfg.train.steps < 0) throw ConfigError("train.steps must be non-negative");
    if (cfg.train.pair_pool < 2) throw ConfigError("train.pair_pool must be at least 2");
    parse_loss_variant(cfg.train.loss_variant);  // throws ConfigError when unknown

    if (cfg.infer.grid_n < 3) throw ConfigError("infer.grid_n must be at least 3");
    if (!(cfg.infer.tau > 0.0f && cfg.infer.tau < 1.0f))
        throw ConfigError("infer.tau must lie strictly inside (0,1)");

    const size_t pn = cfg.data.palette.size();
    if (pn != 2 && pn != 3 && pn != 6 && pn != 9)
        throw ConfigError("data.palette needs 2-3 gray levels or 6/9 floats for RGB triples");
    texture_spec(cfg);  // validates data.texture
    const std::pair<const char*, int> counts[] = {{"data.train_count", cfg.data.train_count},
                                                  {"data.test_normal", cfg.data.test_normal},
                                                  {"data.test_defect", cfg.data.test_defect}};
    for (auto [name, v] : counts)
        if (v < 0) throw ConfigError(std::string(name) + " must be non-negative");
}

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const auto& entry : key_table()) keys.emplace_back(entry.name);
    return keys;
}

GenConfig gen_config(const Config& cfg) {
    GenConfig g;
    g.tile_resolution = cfg.model.tile_resolution;
    g.base_channels = cfg.model.c;
    g.window_m = cfg.model.window_m;
    for (int i = 0; i < 4; ++i) {
        g.encoder_depths[size_t(i)] = cfg.model.encoder_depths[size_t(i)];
        g.decoder_depths[size_t(i)] = cfg.model.decoder_depths[size_t(i)];
    }
    g.share_encoders = cfg.model.share_encoders;
    g.relative_bias = cfg.model.relative_bias;
    return g;
}

CmpConfig cmp_config(const Config& cfg) {
    return CmpConfig{cfg.model.cmp_width1, cfg.model.cmp_width2, cfg.model.cmp_width3,
                     cfg.model.cmp_fc_hidden};
}

TextureSpec texture_spec(const Config& cfg) {
    TextureSpec spec;
    if (cfg.data.texture == "sine_grating")
        spec.family = TextureFamily::sine_grating;
    else if (cfg.data.texture == "checker")
        spec.family = TextureFamily::checker;
    else if (cfg.data.texture == "tiled_motif")
        spec.family = TextureFamily::tiled_motif;
    else
        throw ConfigError("data.texture must be sine_grating, checker, or tiled_motif, got '" +
                          cfg.data.texture + "'");
    spec.period = cfg.data.period;
    spec.orientation_deg = cfg.data.orientation_deg;
    spec.noise_sigma = cfg.data.noise_sigma;
    const auto& p = cfg.data.palette;
    spec.palette.clear();
    if (p.size() == 2 || p.size() == 3)
        for (float v : p) spec.palette.push_back({v, v, v});
    else if (p.size() == 6 || p.size() == 9)
        for (size_t i = 0; i + 2 < p.size(); i += 3)
            spec.palette.push_back({p[i], p[i + 1], p[i + 2]});
    else
        throw ConfigError("data.palette needs 2-3 gray levels or 6/9 floats for RGB triples");
    return spec;
}

LossVariant config_loss_variant(const Config& cfg) {
    return parse_loss_variant(cfg.train.loss_variant);
}

}  // namespace pgcn
