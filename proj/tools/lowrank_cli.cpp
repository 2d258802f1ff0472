#include <lowrank/lowrank.hpp>

#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <utility>
#include <vector>

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitSolver = 3;

void print_summary(const lowrank::ExperimentConfig &cfg, const lowrank::ExperimentResult &res) {
    const auto out = std::filesystem::path(cfg.out) / "summary.csv";
    const lowrank::CsvTable t = lowrank::read_csv(out);
    for (const auto &row : t.rows) {
        for (std::size_t i = 0; i < row.size(); ++i)
            std::cout << (i ? "  " : "") << t.header[i] << '=' << row[i];
        std::cout << '\n';
    }
    std::cout << res.rows.size() << " recoveries written to " << cfg.out << '\n';
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Low-rank matrix recovery with truncated nuclear norm regularization"};
    app.set_version_flag("--version", "lowrank 1.0");

    std::string command, config_path, plot_dir, adjust;
    std::vector<std::pair<std::string, std::string>> overrides;
    auto override_opt = [&](const std::string &flag, const std::string &key, const std::string &help) {
        return app
            .add_option_function<std::string>(
                flag, [&overrides, key](const std::string &v) { overrides.emplace_back(key, v); }, help)
            ->type_name("VALUE");
    };

    app.add_option("command", command, "complete | dct-synth | sve-trace | compare (overrides the config)");
    app.add_option("--config", config_path, "key = value experiment file")->check(CLI::ExistingFile);
    override_opt("--seed", "seed", "first seed; trial t uses seed + t");
    override_opt("--trials", "trials", "trials per sweep point");
    override_opt("--solver", "solver", "inner solver: admm | apgl | admmap");
    auto *kappa = override_opt("--kappa", "kappa", "explicit SVE threshold");
    auto *kappa_mode = override_opt("--kappa-mode", "kappa_mode", "heuristic threshold: real | synth");
    override_opt("--kappa-s", "kappa_s", "scale s of the heuristic threshold");
    override_opt("--delta", "delta", "measurement ball radius, or 'auto' for sqrt(p)*std");
    override_opt("--mu", "mu", "fidelity weight of the APGL model");
    override_opt("--out", "out", "output directory");
    override_opt("--image", "image", "input PGM/PPM image (complete)");
    override_opt("--mask", "mask_file", "file of observed pixels (complete)");
    auto *adjust_opt = app.add_option("--adjust", adjust, "also search ranks within W of the estimate (default 2)")
                           ->expected(0, 1)
                           ->type_name("W");
    app.add_option("--plot-only", plot_dir, "regenerate plot data from an existing output directory")
        ->check(CLI::ExistingDirectory);
    kappa->excludes(kappa_mode);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    if (!plot_dir.empty()) {
        try {
            lowrank::emit_plot_data(plot_dir);
            return 0;
        } catch (const std::exception &e) {
            std::cerr << "error: " << e.what() << '\n';
            return kExitConfig;
        }
    }

    lowrank::ExperimentConfig cfg;
    try {
        if (!config_path.empty())
            cfg = lowrank::load_config(config_path);
        if (!command.empty())
            lowrank::set_config_value(cfg, "command", command);
        for (const auto &[key, value] : overrides) {
            try {
                lowrank::set_config_value(cfg, key, value);
            } catch (const lowrank::ArgumentError &err) {
                throw lowrank::FormatError("option for '" + key + "': " + err.what());
            }
        }
        if (kappa->count())
            cfg.sve.mode = lowrank::KappaMode::Explicit;
        if (adjust_opt->count())
            lowrank::set_config_value(cfg, "adjust", adjust.empty() ? "2" : adjust);
        cfg.validate();
    } catch (const std::exception &e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    }

    try {
        const lowrank::ExperimentResult res = lowrank::run_experiment(cfg);
        lowrank::write_outputs(cfg, res);
        lowrank::emit_plot_data(cfg.out);
        print_summary(cfg, res);
    } catch (const lowrank::SolverFailure &e) {
        std::cerr << "solver failure: " << e.what() << '\n';
        return kExitSolver;
    } catch (const lowrank::FormatError &e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
