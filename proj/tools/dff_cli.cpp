// dff_cli: synth | solve | eval | gradcheck | ablate
//
// Exit codes: 0 success, 1 validation or I/O error, 2 numerical divergence.
// A --config JSON file may set any flag of a subcommand (key = long flag name
// without dashes); flags given on the command line win.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "dff/core.hpp"
#include "dff/fusion.hpp"
#include "dff/gradcheck.hpp"
#include "dff/io.hpp"
#include "dff/metrics.hpp"
#include "dff/scenes.hpp"
#include "dff/solver.hpp"
#include "dff/synth.hpp"
#include "dff/volume.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dff;

namespace {

/// Flag registry for one subcommand, doubling as the JSON overlay schema.
class FlagSet {
public:
    explicit FlagSet(CLI::App* app) : app_(app) {
        app_->add_option("--config", config_path_, "JSON file whose keys overlay the defaults of this subcommand");
    }

    template <typename T>
    CLI::Option* add(const std::string& flag, T& var, const std::string& desc) {
        CLI::Option* o = app_->add_option(flag, var, desc)->capture_default_str();
        const std::string key = flag.substr(2);
        setters_[key] = [&var, key](const json& j) {
            try {
                var = j.get<T>();
            } catch (const json::exception&) {
                throw Error("config key '" + key + "' has the wrong type");
            }
        };
        options_[key] = o;
        return o;
    }

    /// Applies the config file to every option not given explicitly.
    void overlay() const {
        if (config_path_.empty()) return;
        std::ifstream in(config_path_);
        if (!in) throw Error("missing file: " + config_path_);
        json j;
        try {
            in >> j;
        } catch (const json::exception& e) {
            throw Error(std::string("malformed config: ") + e.what());
        }
        if (!j.is_object()) throw Error("config must be a JSON object");
        for (const auto& [key, value] : j.items()) {
            auto it = setters_.find(key);
            if (it == setters_.end()) throw Error("unknown config key: " + key);
            if (options_.at(key)->count() == 0) it->second(value);
        }
    }

private:
    CLI::App* app_;
    std::string config_path_;
    std::map<std::string, std::function<void(const json&)>> setters_;
    std::map<std::string, CLI::Option*> options_;
};

struct SolverFlags {
    SolverConfig cfg;
    std::string sharpness = "laplacian_sq";
    std::string data_target = "normalized";

    void add_to(FlagSet& f) {
        f.add("--steps", cfg.steps, "Gradient-descent iterations");
        f.add("--lr", cfg.learning_rate, "Learning rate");
        f.add("--lambda-sv", cfg.lambda_sv, "Weight of the spatial variational loss");
        f.add("--lambda-fv", cfg.lambda_fv, "Weight of the focal variational loss");
        f.add("--lambda-reg", cfg.lambda_reg, "Tikhonov weight of the surface projection");
        f.add("--surf-res", cfg.surface_res, "Surface working resolution (per side)");
        f.add("--c2", cfg.channels, "Surface channels per plane");
        f.add("--beta", cfg.beta, "Smooth-L1 transition");
        f.add("--seed", cfg.seed, "Run seed");
        f.add("--data-weight", cfg.data_term_weight, "Weight of the sharpness data term");
        f.add("--log-every", cfg.log_every, "Trace interval in steps");
        f.add("--sharpness", sharpness, "Sharpness measure")->check(CLI::IsMember({"laplacian_sq", "tenengrad"}));
        f.add("--window", cfg.sharpness_window, "Sharpness box window");
        f.add("--data-target", data_target, "Data-term target")->check(CLI::IsMember({"normalized", "softmax"}));
        f.add("--sharpness-floor", cfg.sharpness_floor, "Sharpness floor of the normalized target");
    }

    SolverConfig finish() {
        cfg.sharpness = sharpness == "tenengrad" ? SharpnessKind::tenengrad : SharpnessKind::laplacian_sq;
        cfg.data_target = data_target == "softmax" ? DataTarget::softmax : DataTarget::normalized;
        cfg.validate();
        return cfg;
    }
};

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

std::vector<Variant> parse_variants(const std::string& list) {
    std::vector<Variant> v;
    for (const auto& name : split_list(list)) v.push_back(parse_variant(name));
    if (v.empty()) throw Error("ablate needs at least one variant");
    return v;
}

DepthMap load_gt(const StackManifest& m, const std::string& override_path) {
    if (!override_path.empty()) return load_depth(override_path);
    if (!m.depth_path) throw Error("solve needs ground-truth depth (manifest 'depth' or --gt)");
    return load_depth(*m.depth_path);
}

std::string trace_csv(const SolverTrace& t) {
    std::string s = "step,total,depth,sv,fv,rmse,invalid_trend_pct\n";
    for (const auto& r : t.records) {
        s += std::to_string(r.step);
        for (double v : {r.total, r.depth, r.sv, r.fv, r.rmse, r.invalid_trend_pct}) s += "," + format_number(v);
        s += "\n";
    }
    return s;
}

std::string ablation_csv(const std::vector<std::pair<std::string, AblationRow>>& rows) {
    std::string s = std::string("scene,variant,") + metrics_csv_header() + "\n";
    for (const auto& [scene, row] : rows) s += scene + "," + row.variant + "," + metrics_csv_row(row.metrics) + "\n";
    return s;
}

void emit(const std::string& text, const std::string& path) {
    if (path.empty())
        std::cout << text;
    else
        write_text_file(path, text);
}

// ---------------------------------------------------------------------------

struct SynthArgs {
    std::string rgb, depth, scene, out_manifest, scene_id;
    std::vector<double> focus;
    CameraParams cam;
    int layers = 16;
    int crop = 0;
    int size = 48;
    std::uint64_t seed = 0;
    double textureless = 0.25;
    double scene_depth = 2.0;
};

int run_synth(SynthArgs& a, const FlagSet& f) {
    f.overlay();
    if (a.out_manifest.empty()) throw Error("--out-manifest is required");
    a.cam.validate();
    if (a.layers < 2) throw Error("need at least two depth layers");
    if (a.crop < 0) throw Error("crop margin must be non-negative");

    Image rgb;
    DepthMap depth;
    std::vector<double> focus = a.focus;
    if (!a.scene.empty()) {
        if (!a.rgb.empty() || !a.depth.empty()) throw Error("--scene excludes --rgb/--depth");
        if (a.size < 8) throw Error("scene size must be at least 8");
        SceneConfig sc;
        sc.height = sc.width = a.size;
        if (!focus.empty()) sc.focus_distances = focus;
        sc.camera = a.cam;
        sc.layers = a.layers;
        const SyntheticScene s = a.scene == "two_layer" ? two_layer_scene(sc, a.seed, a.textureless)
                                                        : constant_depth_scene(sc, a.scene_depth, a.seed);
        rgb = s.rgb;
        depth = s.depth;
        focus = sc.focus_distances;
    } else {
        if (a.rgb.empty() || a.depth.empty()) throw Error("synth needs --rgb and --depth, or --scene");
        rgb = load_image(a.rgb);
        depth = load_depth(a.depth);
    }
    if (focus.empty()) throw Error("--focus is required");

    const FocalStack stack = synthesize_stack(rgb, depth, focus, a.cam, SynthOptions{a.layers});
    const fs::path manifest_path(a.out_manifest);
    const fs::path dir = manifest_path.parent_path();
    if (!dir.empty()) fs::create_directories(dir);
    const std::string stem = manifest_path.stem().string();

    StackManifest m;
    m.focal_distances = focus;
    m.scene_id = a.scene_id.empty() ? stem : a.scene_id;
    for (int n = 0; n < stack.size(); ++n) {
        char name[64];
        std::snprintf(name, sizeof name, "_plane%02d.png", n);
        const std::string file = stem + name;
        const Image plane = a.crop > 0 ? crop_border(stack.plane(n), a.crop) : stack.plane(n);
        save_image(dir / file, plane);
        m.image_paths.push_back(file);
    }
    const std::string depth_file = stem + "_depth.pfm";
    save_depth(a.crop > 0 ? crop_border(depth, a.crop) : depth, dir / depth_file);
    m.depth_path = depth_file;
    write_manifest(manifest_path, m);
    std::cout << "wrote " << stack.size() << " planes to " << manifest_path.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------

struct SolveArgs {
    SolverFlags solver;
    std::string manifest, gt, ablate, out_depth, out_probs, trace_csv, report;
};

int run_solve(SolveArgs& a, const FlagSet& f) {
    f.overlay();
    const SolverConfig cfg = a.solver.finish();
    if (a.manifest.empty()) throw Error("--manifest is required");
    const StackManifest m = read_manifest(a.manifest);
    const FocalStack stack = load_stack(m);
    const DepthMap gt = load_gt(m, a.gt);

    if (!a.ablate.empty()) {
        const auto rows = ablate(stack, gt, cfg, parse_variants(a.ablate));
        std::vector<std::pair<std::string, AblationRow>> named;
        for (const auto& r : rows) named.emplace_back(m.scene_id, r);
        emit(ablation_csv(named), a.report);
        return 0;
    }

    const SolverResult r = solve_scene(stack, gt, cfg);
    if (!a.out_depth.empty()) save_depth(r.depth, a.out_depth);
    if (!a.out_probs.empty()) save_probabilities(r.probabilities, a.out_probs);
    if (!a.trace_csv.empty()) write_text_file(a.trace_csv, trace_csv(r.trace));

    const TraceRecord& last = r.trace.records.back();
    json summary;
    summary["steps"] = cfg.steps;
    summary["total"] = last.total;
    summary["depth"] = last.depth;
    summary["sv"] = last.sv;
    summary["fv_sum"] = last.fv;
    summary["fv_mean"] = last.fv / static_cast<double>(r.probabilities.pixel_count());
    summary["rmse"] = last.rmse;
    summary["invalid_trend_pct"] = last.invalid_trend_pct;
    const std::string text = summary.dump(2) + "\n";
    emit(text, a.report);
    return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string pred, gt, probs, out = "json", report;
};

int run_eval(EvalArgs& a, const FlagSet& f) {
    f.overlay();
    if (a.pred.empty() || a.gt.empty()) throw Error("eval needs --pred and --gt");
    if (a.out != "json" && a.out != "csv") throw Error("--out must be json or csv");
    const DepthMap pred = load_depth(a.pred);
    const DepthMap gt = load_depth(a.gt);
    MetricsReport r = evaluate(pred, gt);
    if (!a.probs.empty()) {
        const FocusProbabilityMap p = load_probabilities(a.probs);
        if (p.height() != gt.height() || p.width() != gt.width())
            throw Error("dimension mismatch between probabilities and depth");
        r.invalid_trend_pct = invalid_focus_trend(p);
    }
    const std::string text = a.out == "json" ? to_json(r).dump(2) + "\n"
                                             : std::string(metrics_csv_header()) + "\n" + metrics_csv_row(r) + "\n";
    emit(text, a.report);
    return 0;
}

// ---------------------------------------------------------------------------

struct GradcheckArgs {
    std::uint64_t seed = 7;
    double tolerance = 1e-4;
};

int run_gradcheck(GradcheckArgs& a, const FlagSet& f) {
    f.overlay();
    std::vector<GradCheckResult> results = gradcheck_suite(a.seed);
    results.push_back(gradcheck_objective(a.seed, 5));
    results.push_back(gradcheck_objective(a.seed, 5, {}, false));
    bool ok = true;
    for (const auto& r : results) {
        std::printf("%-20s max_rel_error=%.3e checked=%d skipped=%d\n", r.name.c_str(), r.max_rel_error, r.checked,
                    r.skipped);
        ok = ok && r.max_rel_error < a.tolerance;
    }
    if (!ok) {
        std::fprintf(stderr, "error: gradient check above tolerance %.1e\n", a.tolerance);
        return 1;
    }
    return 0;
}

// ---------------------------------------------------------------------------

struct AblateArgs {
    SolverFlags solver;
    std::vector<std::string> manifests;
    int suite = 0;
    std::uint64_t suite_seed = 1;
    double textureless = 0.25;
    std::string variants = "no_sv,no_fv,no_integrability,no_q,inverse_q";
    std::string out_csv;
};

int run_ablate(AblateArgs& a, const FlagSet& f) {
    f.overlay();
    const SolverConfig cfg = a.solver.finish();
    const std::vector<Variant> variants = parse_variants(a.variants);
    if (a.manifests.empty() == (a.suite == 0)) throw Error("ablate needs either --manifest or --suite");
    if (a.suite < 0) throw Error("--suite must be positive");

    std::vector<std::pair<std::string, AblationRow>> rows;
    if (a.suite > 0) {
        for (int i = 0; i < a.suite; ++i) {
            const std::uint64_t seed = a.suite_seed + static_cast<std::uint64_t>(i);
            const SyntheticScene s = two_layer_scene(SceneConfig{}, seed, a.textureless);
            for (auto& r : ablate(s.stack, s.depth, cfg, variants)) rows.emplace_back("seed" + std::to_string(seed), r);
        }
    } else {
        for (const auto& path : a.manifests) {
            const StackManifest m = read_manifest(path);
            const FocalStack stack = load_stack(m);
            const DepthMap gt = load_gt(m, "");
            for (auto& r : ablate(stack, gt, cfg, variants)) rows.emplace_back(m.scene_id, r);
        }
    }
    emit(ablation_csv(rows), a.out_csv);

    std::map<std::string, std::vector<double>> by_variant;
    std::vector<std::string> order;
    for (const auto& [scene, r] : rows) {
        if (!by_variant.count(r.variant)) order.push_back(r.variant);
        by_variant[r.variant].push_back(r.metrics.rmse);
    }
    if (!a.out_csv.empty())
        for (const auto& v : order) {
            auto xs = by_variant[v];
            std::sort(xs.begin(), xs.end());
            const std::size_t n = xs.size();
            const double med = n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
            std::printf("%-18s median_rmse=%s\n", v.c_str(), format_number(med).c_str());
        }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Depth-from-focus engine"};
    app.require_subcommand(1);

    SynthArgs synth;
    CLI::App* s = app.add_subcommand("synth", "Render a focal stack from an image and depth map");
    FlagSet sf(s);
    sf.add("--rgb", synth.rgb, "All-in-focus PNG");
    sf.add("--depth", synth.depth, "Depth map (PFM or 16-bit PNG in mm)");
    sf.add("--scene", synth.scene, "Built-in scene instead of --rgb/--depth")
        ->check(CLI::IsMember({"two_layer", "constant"}));
    sf.add("--size", synth.size, "Built-in scene side length");
    sf.add("--seed", synth.seed, "Built-in scene seed");
    sf.add("--textureless", synth.textureless, "Textureless fraction of the two-layer scene");
    sf.add("--scene-depth", synth.scene_depth, "Depth of the constant scene (m)");
    sf.add("--focus", synth.focus, "Comma-separated focus distances (m)")->delimiter(',');
    sf.add("--f", synth.cam.focal_length, "Focal length (m)");
    sf.add("--fnum", synth.cam.f_number, "f-number");
    sf.add("--pitch", synth.cam.pixel_pitch, "Pixel pitch (m)");
    sf.add("--max-coc", synth.cam.max_coc_px, "Blur radius clamp (px)");
    sf.add("--layers", synth.layers, "Depth layers for compositing");
    sf.add("--crop", synth.crop, "Border crop margin (px)");
    sf.add("--scene-id", synth.scene_id, "Manifest scene id");
    sf.add("--out-manifest", synth.out_manifest, "Output manifest path");

    SolveArgs solve;
    CLI::App* so = app.add_subcommand("solve", "Optimise one scene");
    FlagSet of(so);
    solve.solver.add_to(of);
    of.add("--manifest", solve.manifest, "Scene manifest");
    of.add("--gt", solve.gt, "Ground-truth depth overriding the manifest's");
    of.add("--ablate", solve.ablate, "Comma-separated variants; writes a metrics table instead of maps");
    of.add("--out-depth", solve.out_depth, "Fused depth output (PFM or PNG)");
    of.add("--out-probs", solve.out_probs, "Focus probability output (JSON)");
    of.add("--trace-csv", solve.trace_csv, "Trace output");
    of.add("--report", solve.report, "Summary/table output (stdout if empty)");

    EvalArgs ev;
    CLI::App* e = app.add_subcommand("eval", "Compare a depth map with ground truth");
    FlagSet ef(e);
    ef.add("--pred", ev.pred, "Predicted depth");
    ef.add("--gt", ev.gt, "Ground-truth depth");
    ef.add("--probs", ev.probs, "Focus probabilities (JSON) for the invalid-trend metric");
    ef.add("--out", ev.out, "Report format")->check(CLI::IsMember({"json", "csv"}));
    ef.add("--report", ev.report, "Report path (stdout if empty)");

    GradcheckArgs gc;
    CLI::App* g = app.add_subcommand("gradcheck", "Finite-difference check of every analytic gradient");
    FlagSet gf(g);
    gf.add("--seed", gc.seed, "Seed");
    gf.add("--tolerance", gc.tolerance, "Maximum accepted relative error");

    AblateArgs ab;
    CLI::App* a = app.add_subcommand("ablate", "Ablation table over manifests or the synthetic suite");
    FlagSet af(a);
    ab.solver.add_to(af);
    af.add("--manifest", ab.manifests, "Scene manifest (repeatable)");
    af.add("--suite", ab.suite, "Number of synthetic two-layer scenes");
    af.add("--suite-seed", ab.suite_seed, "First suite seed");
    af.add("--textureless", ab.textureless, "Textureless fraction of suite scenes");
    af.add("--variants", ab.variants, "Comma-separated variants");
    af.add("--out-csv", ab.out_csv, "Per-scene metrics table (stdout if empty)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? 0 : 1;
    }

    try {
        if (s->parsed()) return run_synth(synth, sf);
        if (so->parsed()) return run_solve(solve, of);
        if (e->parsed()) return run_eval(ev, ef);
        if (g->parsed()) return run_gradcheck(gc, gf);
        if (a->parsed()) return run_ablate(ab, af);
    } catch (const DivergenceError& err) {
        std::fprintf(stderr, "diverged: %s\n", err.what());
        return 2;
    } catch (const std::exception& err) {
        std::fprintf(stderr, "error: %s\n", err.what());
        return 1;
    }
    return 1;
}
