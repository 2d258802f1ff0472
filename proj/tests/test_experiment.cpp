#include <lowrank/experiment.hpp>

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

using namespace lowrank;

namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string &name) {
    const fs::path dir = fs::temp_directory_path() / "lowrank_experiment" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path &p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

std::string serialise(const ExperimentConfig &cfg) {
    std::ostringstream out;
    write_config(cfg, out);
    return out.str();
}

ExperimentConfig tiny_synthetic(Command command, const fs::path &out) {
    ExperimentConfig cfg;
    cfg.command = command;
    cfg.m = cfg.n = 16;
    cfg.ranks = {2};
    cfg.ratios = {0.6};
    cfg.stds = {0.0};
    cfg.trials = 2;
    cfg.solver_cfg.max_inner_iters = 400;
    cfg.out = out.string();
    return cfg;
}

int run_cli(const std::string &args) {
    const std::string cmd = std::string(LOWRANK_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

} // namespace

TEST(Config, RoundTripThroughText) {
    ExperimentConfig cfg;
    cfg.command = Command::DctSynth;
    cfg.m = 40;
    cfg.n = 30;
    cfg.ranks = {2, 4};
    cfg.ratios = {0.3, 0.55};
    cfg.stds = {0.0, 0.125, 0.1};
    cfg.keep_dc = true;
    cfg.seed = 12;
    cfg.trials = 3;
    cfg.solver = InnerSolver::Admmap;
    cfg.delta = 0.7;
    cfg.adjust = 1;
    cfg.sve.mode = KappaMode::Explicit;
    cfg.sve.kappa = 3.3;
    cfg.solver_cfg.beta = 0.002;
    cfg.solver_cfg.max_inner_iters = 77;
    cfg.out = "results/x";

    const std::string text = serialise(cfg);
    std::istringstream in(text);
    const ExperimentConfig back = parse_config(in, "memory");
    EXPECT_EQ(serialise(back), text);
    EXPECT_EQ(back.ranks, cfg.ranks);
    EXPECT_EQ(back.stds, cfg.stds);
    EXPECT_EQ(*back.delta, 0.7);
    EXPECT_EQ(back.solver_cfg.beta, 0.002);
}

TEST(Config, CommentsBlankLinesAndDefaults) {
    std::istringstream in("# experiment\n\ncommand = sve-trace   # trailing\nkappa_mode = real\nkappa_s = 0.8\n");
    const ExperimentConfig cfg = parse_config(in, "memory");
    EXPECT_EQ(cfg.command, Command::SveTrace);
    EXPECT_EQ(cfg.sve.mode, KappaMode::RealHeuristic);
    EXPECT_EQ(cfg.sve.s, 0.8);
    EXPECT_FALSE(cfg.delta.has_value());
    EXPECT_EQ(cfg.solver_cfg.beta, 1e-3);
}

TEST(Config, ErrorsNameSourceLineAndKey) {
    auto message = [](const std::string &text) {
        std::istringstream in(text);
        try {
            parse_config(in, "exp.cfg");
        } catch (const FormatError &e) {
            return std::string(e.what());
        }
        return std::string();
    };
    EXPECT_EQ(message("m = 10\nbeta = fast\n").rfind("exp.cfg:2: key 'beta'", 0), 0u);
    EXPECT_NE(message("colour = red\n").find("key 'colour'"), std::string::npos);
    EXPECT_NE(message("just words\n").find("exp.cfg:1"), std::string::npos);
    EXPECT_NE(message("solver = newton\n").find("newton"), std::string::npos);
    EXPECT_NE(message("sr = 0.5, x\n").find("key 'sr'"), std::string::npos);
}

TEST(Config, ValidationRules) {
    ExperimentConfig cfg;
    cfg.command = Command::DctSynth;
    cfg.kind = OperatorKind::SamplingMask;
    EXPECT_THROW(cfg.validate(), ArgumentError);
    cfg.kind = OperatorKind::PartialDct2D;
    cfg.image = "a.ppm";
    EXPECT_THROW(cfg.validate(), ArgumentError);
    cfg.image.clear();
    cfg.ranks = {200};
    EXPECT_THROW(cfg.validate(), ArgumentError);
    cfg.ranks = {5};
    EXPECT_NO_THROW(cfg.validate());

    ExperimentConfig img;
    img.command = Command::Complete;
    EXPECT_THROW(img.validate(), ArgumentError);
    img.image = "a.ppm";
    img.kind = OperatorKind::SamplingMask;
    EXPECT_NO_THROW(img.validate());
    img.missing = 1.0;
    EXPECT_THROW(img.validate(), ArgumentError);
}

TEST(Sweep, PointsCoverTheGrid) {
    ExperimentConfig cfg;
    cfg.ranks = {2, 3};
    cfg.ratios = {0.4, 0.6};
    cfg.stds = {0.0, 0.1, 0.2};
    const auto pts = sweep_points(cfg);
    ASSERT_EQ(pts.size(), 12u);
    EXPECT_EQ(pts.front().r, 2);
    EXPECT_EQ(pts.back().r, 3);
    EXPECT_EQ(pts.back().std, 0.2);
}

TEST(Runner, WorkerPoolMergesDeterministically) {
    std::vector<int> out(50, -1);
    setenv("LOWRANK_THREADS", "4", 1);
    EXPECT_EQ(worker_count(50), 4);
    EXPECT_EQ(worker_count(2), 2);
    run_parallel(50, [&](int i) { out[i] = i * i; });
    for (int i = 0; i < 50; ++i)
        EXPECT_EQ(out[i], i * i);
    EXPECT_THROW(run_parallel(5, [](int i) {
                     if (i == 3)
                         throw ArgumentError("boom");
                 }),
                 ArgumentError);
    unsetenv("LOWRANK_THREADS");
}

TEST(Runner, CompareProducesBaselineAndLrisdRows) {
    const fs::path dir = fresh_dir("compare");
    const ExperimentConfig cfg = tiny_synthetic(Command::Compare, dir);
    const ExperimentResult res = run_experiment(cfg);
    ASSERT_EQ(res.rows.size(), 4u);
    EXPECT_EQ(res.rows[0].method, "lr");
    EXPECT_EQ(res.rows[1].method, "lrisd");
    EXPECT_EQ(res.rows[0].metrics.rank_recovered, 0);
    EXPECT_EQ(res.rows[2].seed, 1u);
    EXPECT_EQ(res.operators.size(), 2u);

    write_outputs(cfg, res);
    for (const char *name : {"metrics.csv", "timings.csv", "trace.csv", "sve.csv", "summary.csv", "config.txt",
                             "operator_point0_seed0.txt"})
        EXPECT_TRUE(fs::exists(dir / name)) << name;
    const CsvTable summary = read_csv(dir / "summary.csv");
    EXPECT_EQ(summary.rows.size(), 2u);
    EXPECT_EQ(summary.rows[0][summary.column("trials")], "2");
    const CsvTable metrics = read_csv(dir / "metrics.csv");
    EXPECT_EQ(metrics.rows.size(), 4u);
    EXPECT_EQ(metrics.header.size(), 18u);
    EXPECT_EQ(metrics.rows[0][metrics.column("psnr_db")], "nan");
}

TEST(Runner, BaselineRowsComeFromTheSharedPath) {
    const fs::path dir = fresh_dir("baseline");
    const ExperimentConfig cfg = tiny_synthetic(Command::Compare, dir);
    const ExperimentResult res = run_experiment(cfg);

    SyntheticSpec spec{16, 16, 2, 0.6, 0.0, 0};
    const SyntheticInstance inst = synth_lowrank(spec);
    SveConfig off;
    off.enabled = false;
    SolverConfig scfg = cfg.solver_cfg;
    scfg.delta = 0.0;
    const LrisdResult direct = lrisd(inst.op, inst.b, InnerSolver::Admm, off, scfg);
    EXPECT_EQ(res.rows[0].recovered.front(), direct.X);
}

TEST(Runner, AdjustKeepsTheBestNearbyRank) {
    const fs::path dir = fresh_dir("adjust");
    ExperimentConfig cfg = tiny_synthetic(Command::Compare, dir);
    cfg.trials = 1;
    cfg.adjust = 1;
    const ExperimentResult res = run_experiment(cfg);
    ASSERT_EQ(res.rows.size(), 3u);
    EXPECT_EQ(res.rows[2].method, "lrisd-adjust");
    EXPECT_LE(res.rows[2].metrics.reer, res.rows[1].metrics.reer);
    EXPECT_LE(std::abs(res.rows[2].metrics.rank_recovered - res.rows[1].metrics.rank_recovered), 1);
}

TEST(Runner, CompleteOnFullyObservedImageIsExact) {
    const fs::path dir = fresh_dir("complete_full");
    save_image(synth_texture_image(12, 10, 2, 3.0, 5), dir / "in.ppm");
    ExperimentConfig cfg;
    cfg.command = Command::Complete;
    cfg.kind = OperatorKind::SamplingMask;
    cfg.image = (dir / "in.ppm").string();
    cfg.missing = 0.0;
    cfg.delta = 0.0;
    cfg.sve.mode = KappaMode::RealHeuristic;
    cfg.solver_cfg.beta = 1.0;
    cfg.solver_cfg.inner_tol = 1e-14;
    cfg.solver_cfg.feas_tol = 1e-10;
    cfg.solver_cfg.max_inner_iters = 5000;
    cfg.out = (dir / "out").string();
    const ExperimentResult res = run_experiment(cfg);
    for (const MethodRow &row : res.rows) {
        EXPECT_EQ(row.metrics.psnr_db, kPsnrCapDb) << row.method;
        EXPECT_EQ(row.metrics.t_count, 120);
    }
    write_outputs(cfg, res);
    EXPECT_TRUE(fs::exists(dir / "out" / "recovered_lrisd_admm_seed0.ppm"));
    const Image back = load_image(dir / "out" / "recovered_lr_admm_seed0.ppm");
    EXPECT_EQ(back.channels.size(), 3u);
}

TEST(Runner, MaskFileMustMatchImage) {
    const fs::path dir = fresh_dir("mask_file");
    save_image(synth_texture_image(8, 8, 2, 1.0, 1), dir / "in.ppm");
    std::ofstream(dir / "mask.txt") << "4 4 1\n0 0\n";
    ExperimentConfig cfg;
    cfg.command = Command::Complete;
    cfg.kind = OperatorKind::SamplingMask;
    cfg.image = (dir / "in.ppm").string();
    cfg.mask_file = (dir / "mask.txt").string();
    EXPECT_THROW(run_experiment(cfg), FormatError);
}

TEST(PlotData, SeriesFromRunOutputs) {
    const fs::path dir = fresh_dir("plots");
    ExperimentConfig cfg = tiny_synthetic(Command::DctSynth, dir);
    cfg.ratios = {0.7, 0.5};
    cfg.trials = 1;
    const ExperimentResult res = run_experiment(cfg);
    write_outputs(cfg, res);
    emit_plot_data(dir);

    const CsvTable by_sr = read_csv(dir / "plot_reer_vs_sr.csv");
    const std::size_t sr = by_sr.column("sr"), method = by_sr.column("method");
    for (std::size_t i = 1; i < by_sr.rows.size(); ++i) {
        if (by_sr.rows[i][method] == by_sr.rows[i - 1][method]) {
            EXPECT_LT(std::stod(by_sr.rows[i - 1][sr]), std::stod(by_sr.rows[i][sr]));
        }
    }

    const CsvTable ranks = read_csv(dir / "plot_rank_recovery.csv");
    EXPECT_EQ(ranks.header,
              (std::vector<std::string>{"point", "seed", "method", "solver", "true_r", "recovered_r"}));
    EXPECT_EQ(ranks.rows.size(), 2u);

    // The Stt series is the profile itself.
    const CsvTable stt = read_csv(dir / "plot_stt.csv");
    const MethodRow &lrisd_row = res.rows[1];
    const SveProfile &p = lrisd_row.profiles.front().front();
    std::size_t matched = 0;
    for (const auto &row : stt.rows) {
        if (row[stt.column("point")] != "0" || row[stt.column("method")] != "lrisd" ||
            row[stt.column("outer")] != "1")
            continue;
        const Index i = std::stoll(row[stt.column("index")]) - 1;
        EXPECT_EQ(std::stod(row[stt.column("stt")]), p.Stt(i));
        ++matched;
    }
    EXPECT_EQ(matched, static_cast<std::size_t>(p.Stt.size()));
}

TEST(PlotData, MissingColumnsAreFormatErrors) {
    const fs::path dir = fresh_dir("plots_bad");
    std::ofstream(dir / "metrics.csv") << "point,seed\n0,1\n";
    std::ofstream(dir / "sve.csv") << "point\n0\n";
    EXPECT_THROW(emit_plot_data(dir), FormatError);
}

TEST(Cli, ReRunsAreByteIdenticalAndExitCodesAreDistinct) {
    const fs::path dir = fresh_dir("cli");
    {
        std::ofstream cfg(dir / "exp.cfg");
        cfg << "command = compare\nm = 14\nn = 14\nrank = 2\nsr = 0.6\nstd = 0.05\nmax_inner_iters = 300\n";
    }
    const std::string base = "--config " + (dir / "exp.cfg").string() + " --trials 2 --seed 3 --out ";
    ASSERT_EQ(run_cli(base + (dir / "a").string()), 0);
    ASSERT_EQ(run_cli(base + (dir / "b").string()), 0);
    for (const char *name : {"metrics.csv", "trace.csv", "sve.csv", "summary.csv", "plot_stt.csv"})
        EXPECT_EQ(slurp(dir / "a" / name), slurp(dir / "b" / name)) << name;

    const ExperimentConfig resolved = load_config(dir / "a" / "config.txt");
    EXPECT_EQ(resolved.seed, 3u);
    EXPECT_EQ(resolved.trials, 2);

    EXPECT_EQ(run_cli("--solver newton --out " + (dir / "c").string()), 2);
    EXPECT_EQ(run_cli("--config " + (dir / "missing.cfg").string()), 2);
    EXPECT_EQ(run_cli("complete --out " + (dir / "d").string()), 2);
    EXPECT_EQ(run_cli("--kappa 3 --kappa-mode real"), 2);
    EXPECT_EQ(run_cli("--plot-only " + (dir / "a").string()), 0);
}

TEST(Cli, AdjustFlagDefaultsToTwo) {
    const fs::path dir = fresh_dir("cli_adjust");
    {
        std::ofstream cfg(dir / "exp.cfg");
        cfg << "m = 12\nn = 12\nrank = 2\nsr = 0.7\nmax_inner_iters = 200\n";
    }
    ASSERT_EQ(run_cli("compare --adjust --config " + (dir / "exp.cfg").string() + " --out " + (dir / "o").string()),
              0);
    const ExperimentConfig resolved = load_config(dir / "o" / "config.txt");
    EXPECT_EQ(resolved.adjust, 2);
    ASSERT_EQ(run_cli("compare --adjust 1 --config " + (dir / "exp.cfg").string() + " --out " +
                      (dir / "p").string()),
              0);
    EXPECT_EQ(load_config(dir / "p" / "config.txt").adjust, 1);
}
