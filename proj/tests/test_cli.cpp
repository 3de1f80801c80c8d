#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "dff/io.hpp"
#include "dff/metrics.hpp"
#include "json.hpp"
#include "support.hpp"

using namespace dff;
using dff::testing::TempDir;

namespace {

struct CliRun {
    int code = -1;
    std::string out;
};

CliRun cli(const std::string& args, const std::string& threads = "") {
    std::string cmd = threads.empty() ? "" : "DFF_THREADS=" + threads + " ";
    cmd += std::string(DFF_CLI_PATH) + " " + args + " 2>&1";
    CliRun r;
    FILE* p = popen(cmd.c_str(), "r");
    if (!p) return r;
    char buf[4096];
    std::size_t n;
    while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
    const int status = pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int line_count(const std::string& s) {
    int n = 0;
    for (char c : s) n += c == '\n';
    return n;
}

std::string synth_scene(const TempDir& dir, const std::string& extra = "", const std::string& threads = "") {
    const std::string manifest = dir / "scene.json";
    const CliRun r = cli("synth --scene two_layer --size 24 --seed 3 --textureless 0.25 --out-manifest " + manifest + " " +
                          extra,
                      threads);
    EXPECT_EQ(r.code, 0) << r.out;
    return manifest;
}

}  // namespace

TEST(Cli, EvalOfIdenticalMapsIsPerfect) {
    TempDir dir;
    const std::string manifest = synth_scene(dir);
    const std::string depth = dir / "scene_depth.pfm";
    const CliRun r = cli("eval --pred " + depth + " --gt " + depth + " --out json");
    ASSERT_EQ(r.code, 0) << r.out;
    const auto j = nlohmann::json::parse(r.out);
    EXPECT_EQ(j["rmse"].get<double>(), 0.0);
    EXPECT_EQ(j["delta1"].get<double>(), 1.0);
    EXPECT_TRUE(j["invalid_trend_pct"].is_null());
    const CliRun csv = cli("eval --pred " + depth + " --gt " + depth + " --out csv");
    ASSERT_EQ(csv.code, 0);
    EXPECT_EQ(csv.out.substr(0, csv.out.find('\n')), metrics_csv_header());
}

TEST(Cli, ZeroStepSolveReturnsUniformFusion) {
    TempDir dir;
    const std::string manifest = synth_scene(dir);
    const std::string out = dir / "d.pfm", probs = dir / "p.json", trace = dir / "t.csv";
    const CliRun r = cli("solve --manifest " + manifest + " --steps 0 --out-depth " + out + " --out-probs " + probs +
                      " --trace-csv " + trace);
    ASSERT_EQ(r.code, 0) << r.out;
    const FocalStack stack = load_stack(read_manifest(manifest));
    double mean = 0.0;
    for (double f : stack.focal_distances()) mean += f;
    mean /= stack.size();
    const DepthMap d = load_depth(out);
    for (double v : d.values().data) EXPECT_NEAR(v, mean, 1e-6);
    for (double p : load_probabilities(probs).data()) EXPECT_DOUBLE_EQ(p, 1.0 / stack.size());
    const std::string t = slurp(trace);
    EXPECT_EQ(t.substr(0, t.find('\n')), "step,total,depth,sv,fv,rmse,invalid_trend_pct");
    EXPECT_EQ(line_count(t), 2);

    const CliRun e = cli("eval --pred " + out + " --gt " + std::string(dir / "scene_depth.pfm") + " --probs " + probs);
    ASSERT_EQ(e.code, 0) << e.out;
    EXPECT_EQ(nlohmann::json::parse(e.out)["invalid_trend_pct"].get<double>(), 0.0);
}

TEST(Cli, GradcheckPasses) {
    const CliRun r = cli("gradcheck --seed 7");
    EXPECT_EQ(r.code, 0) << r.out;
    EXPECT_NE(r.out.find("L_fv"), std::string::npos);
}

TEST(Cli, ExitCodes) {
    EXPECT_EQ(cli("").code, 1);
    EXPECT_EQ(cli("--help").code, 0);
    EXPECT_EQ(cli("frobnicate").code, 1);
    EXPECT_EQ(cli("eval --pred /nonexistent.pfm --gt /nonexistent.pfm").code, 1);
    TempDir dir;
    const std::string manifest = synth_scene(dir);
    EXPECT_EQ(cli("solve --manifest " + manifest + " --lr -1").code, 1);
    EXPECT_EQ(cli("solve --manifest " + manifest + " --ablate no_such --steps 1").code, 1);
    const CliRun div = cli("solve --manifest " + manifest + " --lr 50 --steps 20");
    EXPECT_EQ(div.code, 2) << div.out;
    EXPECT_NE(div.out.find("diverged"), std::string::npos);
}

TEST(Cli, ConfigOverlayAndPrecedence) {
    TempDir dir;
    const std::string manifest = synth_scene(dir);
    const std::string cfg = dir / "cfg.json", trace = dir / "t.csv";
    write_text_file(cfg, R"({"steps": 0, "lambda-fv": 5.0})");
    ASSERT_EQ(cli("solve --manifest " + manifest + " --config " + cfg + " --trace-csv " + trace).code, 0);
    EXPECT_EQ(line_count(slurp(trace)), 2);
    ASSERT_EQ(cli("solve --manifest " + manifest + " --config " + cfg + " --steps 20 --trace-csv " + trace).code, 0);
    EXPECT_EQ(line_count(slurp(trace)), 4);

    write_text_file(cfg, R"({"no-such-key": 1})");
    EXPECT_EQ(cli("solve --manifest " + manifest + " --config " + cfg).code, 1);
    write_text_file(cfg, "{not json");
    EXPECT_EQ(cli("solve --manifest " + manifest + " --config " + cfg).code, 1);
}

TEST(Cli, OutputsAreByteIdenticalAcrossThreadCounts) {
    std::vector<std::vector<std::string>> runs;
    for (const std::string threads : {"1", "4"}) {
        TempDir dir;
        const std::string manifest = synth_scene(dir, "", threads);
        const std::string depth = dir / "d.pfm", png = dir / "d.png", probs = dir / "p.json", trace = dir / "t.csv",
                          report = dir / "r.json", metrics = dir / "m.csv", table = dir / "a.csv";
        ASSERT_EQ(cli("solve --manifest " + manifest + " --steps 30 --seed 9 --out-depth " + depth + " --out-probs " +
                          probs + " --trace-csv " + trace + " --report " + report,
                      threads)
                      .code,
                  0);
        ASSERT_EQ(cli("solve --manifest " + manifest + " --steps 30 --seed 9 --out-depth " + png, threads).code, 0);
        ASSERT_EQ(cli("eval --pred " + depth + " --gt " + std::string(dir / "scene_depth.pfm") + " --probs " + probs +
                          " --out csv --report " + metrics,
                      threads)
                      .code,
                  0);
        ASSERT_EQ(cli("ablate --manifest " + manifest + " --steps 10 --variants no_sv,inverse_q --out-csv " + table,
                      threads)
                      .code,
                  0);
        std::vector<std::string> files;
        for (const std::string f : {"scene.json", "scene_plane00.png", "scene_plane04.png", "scene_depth.pfm", "d.pfm",
                                    "d.png", "p.json", "t.csv", "r.json", "m.csv", "a.csv"})
            files.push_back(slurp(dir / f));
        runs.push_back(std::move(files));
    }
    for (std::size_t i = 0; i < runs[0].size(); ++i) {
        EXPECT_FALSE(runs[0][i].empty()) << i;
        EXPECT_EQ(runs[0][i], runs[1][i]) << i;
    }
}

TEST(Cli, SynthFromImageAndDepth) {
    TempDir dir;
    synth_scene(dir);
    const std::string manifest = dir / "custom.json";
    const CliRun r = cli("synth --rgb " + std::string(dir / "scene_plane02.png") + " --depth " +
                      std::string(dir / "scene_depth.pfm") + " --focus 0.8,1.2,1.6 --out-manifest " + manifest);
    ASSERT_EQ(r.code, 0) << r.out;
    const FocalStack s = load_stack(read_manifest(manifest));
    EXPECT_EQ(s.size(), 3);
    EXPECT_EQ(s.height(), 24);
    EXPECT_EQ(cli("synth --rgb " + std::string(dir / "scene_plane02.png") + " --depth " +
                  std::string(dir / "scene_depth.pfm") + " --focus 1.6,1.2 --out-manifest " + manifest)
                  .code,
              1);
}
