#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pgcn/checkpoint.hpp"
#include "pgcn/config.hpp"
#include "pgcn/data.hpp"
#include "pgcn/error.hpp"
#include "pgcn/image.hpp"
#include "pgcn/inference.hpp"
#include "pgcn/metrics.hpp"

namespace fs = std::filesystem;
using namespace pgcn;

namespace {

// Settings sources in precedence order: defaults < preset < file < flags.
struct SettingsArgs {
    std::string config_path;
    std::string preset;
    std::vector<std::pair<std::string, std::string>> overrides;  // flag arrival order
};

void add_settings_options(CLI::App* sub, SettingsArgs& args) {
    sub->add_option("--config", args.config_path, "TOML settings file");
    sub->add_option("--preset", args.preset, "named profile (desk)")
        ->check(CLI::IsMember({"desk"}));
    for (const std::string& key : config_keys())
        sub->add_option_function<std::string>(
               "--" + key,
               [&args, key](const std::string& v) { args.overrides.emplace_back(key, v); },
               "override " + key)
            ->take_last();  // a repeated flag wins over earlier ones
}

Config build_config(const SettingsArgs& args) {
    Config cfg;
    if (args.preset == "desk") apply_desk_preset(cfg);
    if (!args.config_path.empty()) {
        std::ifstream in(args.config_path);
        if (!in)
            throw MissingArtifactError("cannot open config file '" + args.config_path + "'");
        std::stringstream buf;
        buf << in.rdbuf();
        apply_config_text(cfg, buf.str(), args.config_path);
    }
    for (const auto& [key, value] : args.overrides) apply_override(cfg, key, value);
    validate_config(cfg);
    return cfg;
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

std::vector<TileGrid> load_train_grids(const Config& cfg) {
    DatasetIndex idx = load_mvtec(cfg.data.root, cfg.data.category);
    if (idx.train.empty())
        throw IngestionError("no training images under " + cfg.data.root + "/" +
                             cfg.data.category + "/train/good");
    std::vector<TileGrid> grids;
    grids.reserve(idx.train.size());
    for (const auto& e : idx.train) grids.push_back(split_grid(read_png(e.image), cfg.infer.grid_n));
    return grids;
}

void write_loss_csv(const std::string& path, const std::vector<float>& losses) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IngestionError("cannot write loss csv '" + path + "'");
    out << "step,loss\n";
    for (size_t i = 0; i < losses.size(); ++i) out << (i + 1) << ',' << fmt(losses[i]) << '\n';
}

// Everything inference needs from the comparator: weights plus BN statistics.
ParamList comparator_state(ComparatorNet& net) {
    ParamList state = net.parameters();
    for (const auto& b : net.buffers()) state.push_back(b);
    return state;
}

GenerationNet restore_generator(const Config& cfg, const std::string& path) {
    Rng init(0);  // clobbered by the checkpoint
    GenerationNet gen(gen_config(cfg), init);
    ParamList params = gen.parameters();
    load_checkpoint(path, params);
    return gen;
}

ComparatorNet restore_comparator(const Config& cfg, const std::string& path) {
    Rng init(0);
    ComparatorNet cmp(cmp_config(cfg), init);
    ParamList state = comparator_state(cmp);
    load_checkpoint(path, state);
    return cmp;
}

int cmd_train_gen(const Config& cfg, const std::string& gen_out, const std::string& loss_csv) {
    Rng root(cfg.train.seed);
    Rng init = root.fork(1);
    GenerationNet net(gen_config(cfg), init);
    TrainStats stats;
    if (cfg.train.steps > 0) {
        std::vector<TileGrid> grids = load_train_grids(cfg);
        Rng tr = root.fork(2);
        stats = train_generation(net, grids, cfg.train.learning_rate, cfg.train.steps,
                                 cfg.train.batch_size, tr);
    }
    save_checkpoint(gen_out, net.parameters());
    write_loss_csv(loss_csv, stats.losses);
    if (stats.aborted) {
        std::cerr << "warning: training aborted on a non-finite loss after "
                  << stats.losses.size() << " steps; checkpoint holds the last good weights\n";
        return 1;
    }
    std::cout << "train-gen: " << stats.losses.size() << " steps";
    if (!stats.losses.empty()) std::cout << ", final loss " << fmt(stats.losses.back());
    std::cout << ", wrote " << gen_out << " and " << loss_csv << "\n";
    return 0;
}

int cmd_train_cmp(const Config& cfg, const std::string& gen_path, const std::string& cmp_out,
                  const std::string& loss_csv) {
    Rng root(cfg.train.seed);
    GenerationNet gen = restore_generator(cfg, gen_path);
    Rng cmp_init = root.fork(3);
    ComparatorNet cmp(cmp_config(cfg), cmp_init);
    TrainStats stats;
    if (cfg.train.steps > 0) {
        std::vector<TileGrid> grids = load_train_grids(cfg);
        Rng pr = root.fork(4);
        std::vector<PairExample> pairs =
            make_pairs(gen, grids, cfg.model.tile_resolution, pr, cfg.train.pair_pool);
        Rng tr = root.fork(5);
        stats = train_comparator(cmp, pairs, config_loss_variant(cfg), cfg.train.learning_rate,
                                 cfg.train.steps, cfg.train.batch_size, tr);
    }
    save_checkpoint(cmp_out, comparator_state(cmp));
    write_loss_csv(loss_csv, stats.losses);
    if (stats.aborted) {
        std::cerr << "warning: training aborted on a non-finite loss after "
                  << stats.losses.size() << " steps; checkpoint holds the last good weights\n";
        return 1;
    }
    std::cout << "train-cmp: " << stats.losses.size() << " steps";
    if (!stats.losses.empty()) std::cout << ", final loss " << fmt(stats.losses.back());
    std::cout << ", wrote " << cmp_out << " and " << loss_csv << "\n";
    return 0;
}

int cmd_infer(const Config& cfg, const std::string& gen_path, const std::string& cmp_path,
              const std::string& out_dir, const std::vector<std::string>& images) {
    GenerationNet gen = restore_generator(cfg, gen_path);
    ComparatorNet cmp = restore_comparator(cfg, cmp_path);
    fs::create_directories(out_dir);

    const int n = cfg.infer.grid_n;
    std::ofstream csv(fs::path(out_dir) / "results.csv", std::ios::trunc);
    if (!csv) throw IngestionError("cannot write results csv under '" + out_dir + "'");
    csv << "path,image_score";
    for (const char* dir : {"l2r", "r2l"})
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < n; ++c) csv << ',' << dir << "_r" << r << "c" << c;
    csv << '\n';

    int ok = 0;
    for (const std::string& path : images) {
        DetectionResult det;
        try {
            det = detect(read_png(path), gen, cmp, n, cfg.infer.tau);
        } catch (const Error& e) {
            std::cerr << "warning: skipping " << path << ": " << e.what() << "\n";
            continue;
        }
        const std::string stem = fs::path(path).stem().string();

        float hi = 0.0f;
        for (int64_t i = 0; i < det.anomaly_map.size(); ++i)
            hi = std::max(hi, det.anomaly_map.data()[i]);
        write_png_gray((fs::path(out_dir) / (stem + "_heat.png")).string(), det.anomaly_map,
                       0.0f, hi > 0.0f ? hi : 1.0f);

        Tensor mask(det.anomaly_map.shape(), 0.0f);
        const int th = det.left.tile_h, tw = det.left.tile_w, cw = mask.dim(1);
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < n; ++c) {
                if (!det.abnormal[static_cast<size_t>(r) * n + c]) continue;
                for (int y = 0; y < th; ++y)
                    for (int x = 0; x < tw; ++x)
                        mask.data()[static_cast<size_t>(r * th + y) * cw + c * tw + x] = 1.0f;
            }
        write_png_gray((fs::path(out_dir) / (stem + "_mask.png")).string(), mask, 0.0f, 1.0f);

        csv << path << ',' << fmt(det.image_score);
        for (const auto* maps : {&det.left, &det.right})
            for (float p : maps->prob) csv << ',' << fmt(p);
        csv << '\n';
        ++ok;
    }
    std::cout << "infer: " << ok << "/" << images.size() << " images into " << out_dir << "\n";
    return ok == 0 ? 3 : 0;
}

struct EvalScores {
    double image_auroc = 0.0;
    double pixel_auroc = 0.0;
    std::vector<std::pair<std::string, int>> rows;  // path, label
    std::vector<double> image_scores;
};

EvalScores evaluate_testset(const Config& cfg, const GenerationNet& gen, const ComparatorNet& cmp,
                            const DatasetIndex& idx, int grid_n) {
    EvalScores out;
    std::vector<int> image_labels;
    std::vector<double> px_scores;
    std::vector<int> px_labels;
    for (const auto& entry : idx.test) {
        Tensor image = read_png(entry.image);
        DetectionResult det = detect(image, gen, cmp, grid_n, cfg.infer.tau);
        const int label = entry.label == "good" ? 0 : 1;
        out.rows.emplace_back(entry.image, label);
        out.image_scores.push_back(det.image_score);
        image_labels.push_back(label);

        // Ground truth must land on the same center crop the grid uses.
        const auto& am = det.anomaly_map;
        const int ch = am.dim(0), cw = am.dim(1);
        const int y0 = (image.dim(1) - ch) / 2, x0 = (image.dim(2) - cw) / 2;
        Tensor gt;
        if (label) {
            gt = read_png(entry.mask);
            if (gt.dim(1) != image.dim(1) || gt.dim(2) != image.dim(2))
                throw IngestionError("mask dims disagree with image for '" + entry.image + "'");
        }
        for (int y = 0; y < ch; ++y)
            for (int x = 0; x < cw; ++x) {
                px_scores.push_back(am.data()[static_cast<size_t>(y) * cw + x]);
                const bool hot =
                    label && gt.data()[static_cast<size_t>(y0 + y) * image.dim(2) + (x0 + x)] >
                                 0.5f;
                px_labels.push_back(hot ? 1 : 0);
            }
    }
    out.image_auroc = auroc(out.image_scores, image_labels);
    out.pixel_auroc = auroc(px_scores, px_labels);
    return out;
}

int cmd_eval(const Config& cfg, const std::string& gen_path, const std::string& cmp_path,
             const std::string& out_dir, const std::string& grid_search) {
    GenerationNet gen = restore_generator(cfg, gen_path);
    ComparatorNet cmp = restore_comparator(cfg, cmp_path);
    DatasetIndex idx = load_mvtec(cfg.data.root, cfg.data.category);
    if (idx.test.empty())
        throw IngestionError("no test images under " + cfg.data.root + "/" + cfg.data.category);
    fs::create_directories(out_dir);

    EvalScores base = evaluate_testset(cfg, gen, cmp, idx, cfg.infer.grid_n);

    std::ofstream images_csv(fs::path(out_dir) / "images.csv", std::ios::trunc);
    images_csv << "path,label,score\n";
    for (size_t i = 0; i < base.rows.size(); ++i)
        images_csv << base.rows[i].first << ',' << base.rows[i].second << ','
                   << fmt(base.image_scores[i]) << '\n';

    std::ofstream summary(fs::path(out_dir) / "summary.csv", std::ios::trunc);
    summary << "category,image_auroc,pixel_auroc\n";
    summary << idx.category << ',' << fmt(base.image_auroc) << ',' << fmt(base.pixel_auroc)
            << '\n';
    std::cout << "eval: " << idx.category << " image_auroc " << fmt(base.image_auroc)
              << " pixel_auroc " << fmt(base.pixel_auroc) << "\n";

    if (!grid_search.empty()) {
        std::vector<int> candidates;
        std::stringstream ss(grid_search);
        std::string item;
        while (std::getline(ss, item, ',')) {
            if (item.empty()) continue;
            try {
                size_t used = 0;
                candidates.push_back(std::stoi(item, &used));
                if (used != item.size()) throw std::invalid_argument(item);
            } catch (const std::exception&) {
                throw ConfigError("--grid-search expects comma-separated integers, got '" +
                                  grid_search + "'");
            }
        }
        GridSearchResult result = grid_search_n(candidates, [&](int n) {
            EvalScores s = evaluate_testset(cfg, gen, cmp, idx, n);
            return std::pair{s.image_auroc, s.pixel_auroc};
        });
        std::ofstream grid_csv(fs::path(out_dir) / "grid.csv", std::ios::trunc);
        grid_csv << "n,image_auroc,pixel_auroc\n";
        for (const auto& row : result.table)
            grid_csv << row.n << ',' << fmt(row.image_auroc) << ',' << fmt(row.pixel_auroc)
                     << '\n';
        std::cout << "grid-search: best n " << result.best_n << "\n";
    }
    return 0;
}

int cmd_synth(const Config& cfg) {
    const TextureSpec spec = texture_spec(cfg);
    const int s = cfg.data.image_size;
    const fs::path base = fs::path(cfg.data.root) / cfg.data.category;
    const char* kinds[] = {"blotch", "scratch", "paste"};
    const DefectKind kind_ids[] = {DefectKind::blotch, DefectKind::scratch, DefectKind::paste};

    fs::create_directories(base / "train" / "good");
    fs::create_directories(base / "test" / "good");
    Rng root(cfg.train.seed);
    Rng seeds = root.fork(11);

    char stem[16];
    for (int i = 0; i < cfg.data.train_count; ++i) {
        std::snprintf(stem, sizeof stem, "%03d", i);
        write_png((base / "train" / "good" / (std::string(stem) + ".png")).string(),
                  synth_texture(spec, s, s, seeds.next_u64()));
    }
    for (int i = 0; i < cfg.data.test_normal; ++i) {
        std::snprintf(stem, sizeof stem, "%03d", i);
        write_png((base / "test" / "good" / (std::string(stem) + ".png")).string(),
                  synth_texture(spec, s, s, seeds.next_u64()));
    }
    for (int i = 0; i < cfg.data.test_defect; ++i) {
        const int k = i % 3;
        fs::create_directories(base / "test" / kinds[k]);
        fs::create_directories(base / "ground_truth" / kinds[k]);
        Tensor clean = synth_texture(spec, s, s, seeds.next_u64());
        Tensor bad, mask;
        do {  // pasting a patch onto an identical phase can change nothing; redraw
            DefectSpec d;
            d.kind = kind_ids[k];
            d.size = cfg.data.defect_size;
            d.intensity = (i % 2 ? -1.0f : 1.0f) * seeds.uniform(0.25f, 0.55f);
            d.seed = seeds.next_u64();
            std::tie(bad, mask) = inject_defect(clean, d);
        } while ([&] {
            for (int64_t j = 0; j < mask.size(); ++j)
                if (mask.data()[j] != 0.0f) return false;
            return true;
        }());
        std::snprintf(stem, sizeof stem, "%03d", i);
        write_png((base / "test" / kinds[k] / (std::string(stem) + ".png")).string(), bad);
        write_png_gray(
            (base / "ground_truth" / kinds[k] / (std::string(stem) + "_mask.png")).string(),
            mask, 0.0f, 1.0f);
    }
    std::cout << "synth: " << cfg.data.train_count << " train, " << cfg.data.test_normal
              << "+" << cfg.data.test_defect << " test under " << base.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"tile-prediction anomaly detection"};
    app.require_subcommand(1);
    SettingsArgs settings;

    auto* tg = app.add_subcommand("train-gen", "train the tile-prediction generator");
    std::string tg_out = "gen.ckpt", tg_csv = "train_gen_loss.csv";
    tg->add_option("--gen-out", tg_out, "generator checkpoint to write");
    tg->add_option("--loss-csv", tg_csv, "per-step loss csv to write");
    add_settings_options(tg, settings);

    auto* tc = app.add_subcommand("train-cmp", "train the comparator against a frozen generator");
    std::string tc_gen = "gen.ckpt", tc_out = "cmp.ckpt", tc_csv = "train_cmp_loss.csv";
    tc->add_option("--gen", tc_gen, "generator checkpoint to read");
    tc->add_option("--cmp-out", tc_out, "comparator checkpoint to write");
    tc->add_option("--loss-csv", tc_csv, "per-step loss csv to write");
    add_settings_options(tc, settings);

    auto* in = app.add_subcommand("infer", "score images and write heatmaps/masks");
    std::string in_gen = "gen.ckpt", in_cmp = "cmp.ckpt", in_dir = "infer_out";
    std::vector<std::string> in_images;
    in->add_option("--gen", in_gen, "generator checkpoint");
    in->add_option("--cmp", in_cmp, "comparator checkpoint");
    in->add_option("--out-dir", in_dir, "output directory");
    in->add_option("images", in_images, "input PNG files")->required();
    add_settings_options(in, settings);

    auto* ev = app.add_subcommand("eval", "compute image/pixel AUROC over a test set");
    std::string ev_gen = "gen.ckpt", ev_cmp = "cmp.ckpt", ev_dir = "eval_out", ev_grid;
    ev->add_option("--gen", ev_gen, "generator checkpoint");
    ev->add_option("--cmp", ev_cmp, "comparator checkpoint");
    ev->add_option("--out-dir", ev_dir, "output directory");
    ev->add_option("--grid-search", ev_grid, "comma-separated grid sizes to sweep");
    add_settings_options(ev, settings);

    auto* sy = app.add_subcommand("synth", "write a synthetic MVTec-layout dataset");
    add_settings_options(sy, settings);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        const Config cfg = build_config(settings);
        if (tg->parsed()) return cmd_train_gen(cfg, tg_out, tg_csv);
        if (tc->parsed()) return cmd_train_cmp(cfg, tc_gen, tc_out, tc_csv);
        if (in->parsed()) return cmd_infer(cfg, in_gen, in_cmp, in_dir, in_images);
        if (ev->parsed()) return cmd_eval(cfg, ev_gen, ev_cmp, ev_dir, ev_grid);
        if (sy->parsed()) return cmd_synth(cfg);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const MissingArtifactError& e) {
        std::cerr << "missing artifact: " << e.what() << "\n";
        return 3;
    } catch (const IngestionError& e) {
        std::cerr << "ingestion error: " << e.what() << "\n";
        return 3;
    } catch (const MetricError& e) {
        std::cerr << "metric undefined: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
