// Scratch experiment driver for sizing the acceptance experiments. Not shipped.
#include <chrono>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "pgcn/comparison.hpp"
#include "pgcn/data.hpp"
#include "pgcn/generation.hpp"
#include "pgcn/inference.hpp"
#include "pgcn/metrics.hpp"
#include "pgcn/ops.hpp"
#include "pgcn/random.hpp"
#include "pgcn/tiles.hpp"

using namespace pgcn;
using Clock = std::chrono::steady_clock;

static double secs_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

static GenConfig desk_gen() {
    GenConfig g;
    g.tile_resolution = 64;
    g.base_channels = 16;
    g.window_m = 2;
    g.encoder_depths = {2, 2, 2, 2};
    g.decoder_depths = {2, 2, 2, 2};
    return g;
}

static CmpConfig desk_cmp() {
    CmpConfig c;
    c.width1 = 16;
    c.width2 = 32;
    c.width3 = 64;
    c.fc_hidden = 32;
    return c;
}

static TextureSpec sine_spec() {
    TextureSpec s;
    s.family = TextureFamily::sine_grating;
    s.period = 16;
    s.orientation_deg = 30.0f;
    s.palette = {{0.25f, 0.25f, 0.25f}, {0.75f, 0.75f, 0.75f}};
    s.noise_sigma = 0.0f;
    return s;
}

static std::vector<TileGrid> make_grids(const TextureSpec& spec, int image_size, int n, int count,
                                        uint64_t seed0) {
    std::vector<TileGrid> grids;
    for (int i = 0; i < count; ++i)
        grids.push_back(split_grid(synth_texture(spec, image_size, image_size, seed0 + i), n));
    return grids;
}

static double heldout_mse(const GenerationNet& net, const std::vector<TileGrid>& grids,
                          uint64_t seed, int count) {
    Rng rng(seed);
    double acc = 0.0;
    int done = 0;
    for (const auto& g : grids) {
        auto triples = sample_triples(g, net.cfg.tile_resolution, rng, count / (int)grids.size() + 1);
        for (const auto& t : triples) {
            Tensor pred = net.generate_third(t.a, t.b);
            acc += mse_loss(pred, t.target).item();
            if (++done >= count) return acc / done;
        }
    }
    return acc / done;
}

static void cmd_time() {
    Rng rng(7);
    GenerationNet net(desk_gen(), rng);
    auto spec = sine_spec();
    auto grids = make_grids(spec, 192, 3, 4, 100);
    // forward timing
    auto triples = sample_triples(grids[0], 64, rng, 4);
    auto t0 = Clock::now();
    for (const auto& t : triples) (void)net.generate_third(t.a, t.b);
    std::printf("gen forward: %.3f s each\n", secs_since(t0) / 4);
    // train step timing at batch 1 and 4
    for (int bs : {1, 4}) {
        t0 = Clock::now();
        Rng tr(9);
        train_generation(net, grids, 1e-3f, 5, bs, tr);
        std::printf("gen step (batch %d): %.3f s each\n", bs, secs_since(t0) / 5);
    }
    // comparator
    ComparatorNet cmp(desk_cmp(), rng);
    auto pairs = make_pairs(net, grids, 64, rng, 16);
    t0 = Clock::now();
    for (int i = 0; i < 8; ++i) (void)cmp.compare(pairs[i].a, pairs[i].b, false);
    std::printf("cmp forward: %.3f s each\n", secs_since(t0) / 8);
    for (int bs : {4, 8}) {
        t0 = Clock::now();
        Rng tr(11);
        train_comparator(cmp, pairs, LossVariant::corrected_mean, 1e-3f, 5, bs, tr);
        std::printf("cmp step (batch %d): %.3f s each\n", bs, secs_since(t0) / 5);
    }
    // detect timing
    Tensor img = synth_texture(spec, 128, 128, 55);
    t0 = Clock::now();
    (void)detect(img, net, cmp, 4, 0.5f);
    std::printf("detect n=4 on 128px: %.3f s\n", secs_since(t0));
}

static void cmd_a4(int steps, float lr, int batch, int eval_every) {
    auto spec = sine_spec();
    auto grids = make_grids(spec, 192, 3, 64, 100);
    auto held = make_grids(spec, 192, 3, 8, 900);
    Rng root(42);
    Rng init = root.fork(1);
    GenerationNet net(desk_gen(), init);
    Rng tr = root.fork(2);
    auto t0 = Clock::now();
    std::printf("start mse=%.5f\n", heldout_mse(net, held, 777, 12));
    int done = 0;
    while (done < steps) {
        int chunk = std::min(eval_every, steps - done);
        auto stats = train_generation(net, grids, lr, chunk, batch, tr);
        done += chunk;
        double mse = heldout_mse(net, held, 777, 12);
        std::printf("step %4d  loss=%.5f  heldout=%.5f  %.1f s\n", done, stats.losses.back(), mse,
                    secs_since(t0));
        std::fflush(stdout);
        if (stats.aborted) {
            std::printf("ABORTED\n");
            break;
        }
        if (mse <= 0.008) break;
    }
}

// One member of a family, keyed by the image seed. Content varies within each
// family (stripe axis, checker period, motif draw) so a model cannot memorize
// a single texture, while the row-local copy structure that makes the third
// tile predictable survives every variation. Palettes stay on one shared gray
// scale so appearance statistics agree across families.
static TextureSpec family_member(int which, uint64_t image_seed) {
    TextureSpec s;
    s.period = 16;
    s.noise_sigma = 0.0f;
    Rng var(image_seed * 0x9e3779b97f4a7c15ull + static_cast<uint64_t>(which));
    if (which == 0) {
        s.family = TextureFamily::sine_grating;
        s.orientation_deg = var.below(2) ? 90.0f : 0.0f;
        s.palette = {{0.25f, 0.25f, 0.25f}, {0.75f, 0.75f, 0.75f}};
    } else if (which == 1) {
        s.family = TextureFamily::checker;
        s.period = 8 << var.below(3);
        s.palette = {{0.25f, 0.25f, 0.25f}, {0.75f, 0.75f, 0.75f}};
    } else {
        s.family = TextureFamily::tiled_motif;
        s.palette = {{0.2f, 0.2f, 0.2f}, {0.5f, 0.5f, 0.5f}, {0.8f, 0.8f, 0.8f}};
    }
    return s;
}

static std::vector<TileGrid> make_family_grids(int which, int image_size, int n, int count,
                                               uint64_t seed0) {
    std::vector<TileGrid> grids;
    for (int i = 0; i < count; ++i) {
        const uint64_t seed = seed0 + static_cast<uint64_t>(i);
        grids.push_back(
            split_grid(synth_texture(family_member(which, seed), image_size, image_size, seed), n));
    }
    return grids;
}

static GenerationNet train_family_gen(int family, uint64_t seed, int image_size, int n,
                                      int max_steps, float lr, int batch,
                                      const std::vector<TileGrid>& grids) {
    Rng root(seed);
    Rng init = root.fork(1);
    GenerationNet net(desk_gen(), init);
    Rng tr = root.fork(2);
    auto held = make_family_grids(family, image_size, n, 4, seed + 9000);
    int done = 0;
    while (done < max_steps) {
        auto stats = train_generation(net, grids, lr, 100, batch, tr);
        done += 100;
        double mse = heldout_mse(net, held, 777, 8);
        std::printf("  gen step %4d loss=%.5f heldout=%.5f\n", done, stats.losses.back(), mse);
        std::fflush(stdout);
        if (stats.aborted || mse <= 0.008) break;
    }
    return net;
}

struct SeparationReport {
    double p_matched = 0, p_defect = 0, in_act = 0, out_act = 0;
};

static SeparationReport measure_separation(const GenerationNet& gen, const ComparatorNet& cmp,
                                           const std::vector<TileGrid>& grids, uint64_t seed,
                                           int count, bool train_mode = false) {
    Rng rng(seed);
    auto pairs = make_pairs(gen, grids, gen.cfg.tile_resolution, rng, count);
    SeparationReport r;
    int nm = 0, nd = 0;
    double in_sum = 0, in_n = 0, out_sum = 0, out_n = 0;
    for (const auto& ex : pairs) {
        auto res = cmp.compare(ex.a, ex.b, train_mode);
        if (ex.y == 1) {
            r.p_matched += res.p.item();
            ++nm;
        } else {
            r.p_defect += res.p.item();
            ++nd;
            for (int64_t i = 0; i < ex.gt.size(); ++i) {
                if (ex.gt.data()[i] > 0.5f) {
                    in_sum += res.mask.data()[i];
                    in_n += 1;
                } else {
                    out_sum += res.mask.data()[i];
                    out_n += 1;
                }
            }
        }
    }
    r.p_matched /= nm;
    r.p_defect /= nd;
    r.in_act = in_sum / in_n;
    r.out_act = out_sum / out_n;
    return r;
}

static void cmd_a7(int gen_steps, int cmp_steps, float cmp_lr, int pool, const char* variant,
                   int image_size = 192, int n = 3) {
    auto grids = make_family_grids(0, image_size, n, 64, 100);
    auto t0 = Clock::now();
    GenerationNet net = train_family_gen(0, 42, image_size, n, gen_steps, 1e-3f, 2, grids);
    Rng root(43);
    Rng init = root.fork(3);
    ComparatorNet cmp(desk_cmp(), init);
    Rng pr = root.fork(4);
    auto pairs = make_pairs(net, grids, 64, pr, pool);
    Rng tr = root.fork(5);
    auto v = parse_loss_variant(variant);
    auto stats = train_comparator(cmp, pairs, v, cmp_lr, cmp_steps, 8, tr);
    if (stats.aborted) std::printf("  ABORTED at %zu\n", stats.losses.size());
    auto rep = measure_separation(net, cmp, grids, 4242, 32);
    std::printf("  cmp steps %4d loss=%.4f Pm=%.3f Pd=%.3f gap=%.3f in=%.4f out=%.4f ratio=%.2f\n",
                cmp_steps, stats.losses.back(), rep.p_matched, rep.p_defect,
                rep.p_matched - rep.p_defect, rep.in_act, rep.out_act,
                rep.in_act / std::max(1e-9, rep.out_act));
    auto tm = measure_separation(net, cmp, grids, 4242, 32, /*train_mode=*/true);
    std::printf("  train-mode: Pm=%.3f Pd=%.3f gap=%.3f ratio=%.2f\n", tm.p_matched, tm.p_defect,
                tm.p_matched - tm.p_defect, tm.in_act / std::max(1e-9, tm.out_act));
    std::printf("a7 total %.1f s\n", secs_since(t0));
}

struct FamTest {
    std::vector<Tensor> imgs;
    std::vector<Tensor> gts;
    std::vector<int> labels;
};

static FamTest make_family_test(int f, int image_size) {
    FamTest t;
    Rng ev(5000 + f);
    for (int i = 0; i < 40; ++i) {
        const bool defective = i >= 20;
        const uint64_t seed = 100000 + 100 * static_cast<uint64_t>(f) + static_cast<uint64_t>(i);
        Tensor img = synth_texture(family_member(f, seed), image_size, image_size, seed);
        Tensor gt(Shape{image_size, image_size}, 0.0f);
        if (defective) {
            DefectSpec ds;
            ds.kind = (i % 2) ? DefectKind::scratch : DefectKind::blotch;
            // Extent at least 12 px: blotch diameter 2*size, scratch length size.
            ds.size = ds.kind == DefectKind::blotch ? 6 + (int)ev.below(3) : 14 + (int)ev.below(7);
            ds.intensity = (i % 4 < 2 ? 1.0f : -1.0f) * (0.25f + 0.3f * ev.uniform());
            Tensor mask;
            do {
                ds.seed = ev.next_u64();
                std::tie(img, mask) = inject_defect(img, ds);
            } while (sum_all(mask).item() == 0.0f);
            gt = reshape(mask, Shape{image_size, image_size});
        }
        t.imgs.push_back(img);
        t.gts.push_back(gt);
        t.labels.push_back(defective ? 1 : 0);
    }
    return t;
}

static void cmd_a8(int gen_steps, int cmp_steps, int n, int image_size, float tau) {
    auto t0 = Clock::now();
    std::vector<GenerationNet> gens;
    std::vector<ComparatorNet> cmps;
    for (int f = 0; f < 3; ++f) {
        auto grids = make_family_grids(f, image_size, n, 48, 100 + 1000 * f);
        std::printf("family %d\n", f);
        gens.push_back(train_family_gen(f, 42 + f, image_size, n, gen_steps, 1e-3f, 2, grids));
        Rng root(77 + f);
        Rng init = root.fork(3);
        cmps.emplace_back(desk_cmp(), init);
        Rng pr = root.fork(4);
        auto pairs = make_pairs(gens[f], grids, 64, pr, 128);
        Rng tr = root.fork(5);
        train_comparator(cmps[f], pairs, LossVariant::balanced, 1e-3f, cmp_steps, 8, tr);
        auto rep = measure_separation(gens[f], cmps[f], grids, 4242, 32);
        std::printf("  sep gap=%.3f ratio=%.2f  (%.1f s)\n", rep.p_matched - rep.p_defect,
                    rep.in_act / std::max(1e-9, rep.out_act), secs_since(t0));
        std::fflush(stdout);
    }
    // full model x data matrix: diagonal = same-family (A8), off-diagonal = transfer (A9)
    std::vector<double> pool_s, pool_ps;
    std::vector<int> pool_l, pool_pl;
    double img_mat[3][3];
    double diag_img = 0, diag_pix = 0;
    for (int g = 0; g < 3; ++g) {
        FamTest t = make_family_test(g, image_size);
        for (int f = 0; f < 3; ++f) {
            std::vector<double> fs, fps;
            std::vector<int> fl, fpl;
            for (size_t i = 0; i < t.imgs.size(); ++i) {
                auto det = detect(t.imgs[i], gens[f], cmps[f], n, tau);
                fs.push_back(det.image_score);
                fl.push_back(t.labels[i]);
                if (f == g) {
                    pool_s.push_back(det.image_score);
                    pool_l.push_back(t.labels[i]);
                    for (int64_t p = 0; p < det.anomaly_map.size(); ++p) {
                        fps.push_back(det.anomaly_map.data()[p]);
                        fpl.push_back(t.gts[i].data()[p] > 0.5f ? 1 : 0);
                        pool_ps.push_back(det.anomaly_map.data()[p]);
                        pool_pl.push_back(t.gts[i].data()[p] > 0.5f ? 1 : 0);
                    }
                }
            }
            img_mat[f][g] = auroc(fs, fl);
            if (f == g) {
                double px = auroc(fps, fpl);
                diag_img += img_mat[f][g] / 3;
                diag_pix += px / 3;
                std::printf("model %d on family %d: image=%.4f pixel=%.4f  (%.1f s)\n", f, g,
                            img_mat[f][g], px, secs_since(t0));
            } else {
                std::printf("model %d on family %d: image=%.4f  (%.1f s)\n", f, g, img_mat[f][g],
                            secs_since(t0));
            }
            std::fflush(stdout);
        }
    }
    std::printf("mean same-family image=%.4f pixel=%.4f\n", diag_img, diag_pix);
    std::printf("pooled image=%.4f pixel=%.4f\n", auroc(pool_s, pool_l), auroc(pool_ps, pool_pl));
    double worst_drop = 0;
    for (int f = 0; f < 3; ++f)
        for (int g = 0; g < 3; ++g)
            if (f != g) worst_drop = std::max(worst_drop, img_mat[f][f] - img_mat[f][g]);
    std::printf("worst cross-family image drop=%.4f  total %.1f s\n", worst_drop, secs_since(t0));
}

static void cmd_pix() {
    const int image_size = 128, n = 4;
    auto grids = make_family_grids(0, image_size, n, 48, 100);
    GenerationNet gen = train_family_gen(0, 42, image_size, n, 600, 1e-3f, 2, grids);
    Rng root(77);
    Rng init = root.fork(3);
    ComparatorNet cmp(desk_cmp(), init);
    Rng pr = root.fork(4);
    auto pairs = make_pairs(gen, grids, 64, pr, 128);
    Rng tr = root.fork(5);
    train_comparator(cmp, pairs, LossVariant::corrected_mean, 1e-3f, 400, 8, tr);
    Rng ev(9100);
    for (int i = 0; i < 3; ++i) {
        Tensor img =
            synth_texture(family_member(0, 100000 + i), image_size, image_size, 100000 + i);
        Tensor gt(Shape{image_size, image_size}, 0.0f);
        const bool defective = i > 0;
        if (defective) {
            DefectSpec ds;
            ds.kind = i % 2 ? DefectKind::scratch : DefectKind::blotch;
            ds.size = 14;
            ds.intensity = 0.4f;
            Tensor mask;
            do {
                ds.seed = ev.next_u64();
                std::tie(img, mask) = inject_defect(img, ds);
            } while (sum_all(mask).item() == 0.0f);
            gt = reshape(mask, Shape{image_size, image_size});
        }
        auto det = detect(img, gen, cmp, n, 0.5f);
        // stats: inside gt, outside gt but inside defect tiles, elsewhere
        const int tile = image_size / n;
        std::vector<uint8_t> tile_has(n * n, 0);
        for (int y = 0; y < image_size; ++y)
            for (int x = 0; x < image_size; ++x)
                if (gt.data()[y * image_size + x] > 0.5f) tile_has[(y / tile) * n + x / tile] = 1;
        double in_s = 0, in_n = 0, near_s = 0, near_n = 0, far_s = 0, far_n = 0, mx = 0;
        for (int y = 0; y < image_size; ++y)
            for (int x = 0; x < image_size; ++x) {
                double v = det.anomaly_map.data()[y * image_size + x];
                mx = std::max(mx, v);
                if (gt.data()[y * image_size + x] > 0.5f) {
                    in_s += v;
                    in_n += 1;
                } else if (tile_has[(y / tile) * n + x / tile]) {
                    near_s += v;
                    near_n += 1;
                } else {
                    far_s += v;
                    far_n += 1;
                }
            }
        std::printf("img %d defective=%d score=%.3f map_max=%.3f in=%.3f (n=%.0f) near=%.3f (n=%.0f) far=%.3f\n",
                    i, defective, det.image_score, mx, in_n ? in_s / in_n : 0, in_n,
                    near_n ? near_s / near_n : 0, near_n, far_s / far_n);
        // per-tile verdicts and probs
        for (int r = 0; r < n; ++r) {
            for (int c = 0; c < n; ++c) std::printf(" %d", det.abnormal[r * n + c]);
            std::printf("   ");
            for (int c = 0; c < n; ++c)
                std::printf(" %.2f/%.2f", det.left.prob_at(r, c), det.right.prob_at(r, c));
            std::printf("\n");
        }
    }
}

int main(int argc, char** argv) {
    std::string cmd = argc > 1 ? argv[1] : "time";
    if (cmd == "time") cmd_time();
    if (cmd == "pix") cmd_pix();
    if (cmd == "a7") {
        int gs = argc > 2 ? std::atoi(argv[2]) : 800;
        int cs = argc > 3 ? std::atoi(argv[3]) : 400;
        float lr = argc > 4 ? std::strtof(argv[4], nullptr) : 1e-3f;
        int pool = argc > 5 ? std::atoi(argv[5]) : 128;
        const char* variant = argc > 6 ? argv[6] : "balanced";
        int sz = argc > 7 ? std::atoi(argv[7]) : 192;
        int n = argc > 8 ? std::atoi(argv[8]) : 3;
        cmd_a7(gs, cs, lr, pool, variant, sz, n);
    }
    if (cmd == "a8") {
        int gs = argc > 2 ? std::atoi(argv[2]) : 800;
        int cs = argc > 3 ? std::atoi(argv[3]) : 400;
        int n = argc > 4 ? std::atoi(argv[4]) : 4;
        int sz = argc > 5 ? std::atoi(argv[5]) : 128;
        float tau = argc > 6 ? std::strtof(argv[6], nullptr) : 0.5f;
        cmd_a8(gs, cs, n, sz, tau);
    }
    if (cmd == "a4") {
        int steps = argc > 2 ? std::atoi(argv[2]) : 2000;
        float lr = argc > 3 ? std::strtof(argv[3], nullptr) : 1e-3f;
        int batch = argc > 4 ? std::atoi(argv[4]) : 2;
        int every = argc > 5 ? std::atoi(argv[5]) : 100;
        cmd_a4(steps, lr, batch, every);
    }
    return 0;
}
