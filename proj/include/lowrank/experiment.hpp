#pragma once

#include <lowrank/data.hpp>
#include <lowrank/errors.hpp>
#include <lowrank/image_io.hpp>
#include <lowrank/metrics.hpp>
#include <lowrank/operators.hpp>
#include <lowrank/solvers.hpp>
#include <lowrank/sve.hpp>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

namespace lowrank {

enum class Command { Complete, DctSynth, SveTrace, Compare };

inline const char *to_string(Command c) {
    switch (c) {
    case Command::Complete:
        return "complete";
    case Command::DctSynth:
        return "dct-synth";
    case Command::SveTrace:
        return "sve-trace";
    case Command::Compare:
        return "compare";
    }
    return "?";
}

inline const char *to_string(OperatorKind k) { return k == OperatorKind::SamplingMask ? "mask" : "dct"; }

inline const char *to_string(KappaMode k) {
    switch (k) {
    case KappaMode::Explicit:
        return "explicit";
    case KappaMode::RealHeuristic:
        return "real";
    case KappaMode::SyntheticHeuristic:
        return "synth";
    }
    return "?";
}

inline Command parse_command(const std::string &s) {
    for (Command c : {Command::Complete, Command::DctSynth, Command::SveTrace, Command::Compare})
        if (s == to_string(c))
            return c;
    throw ArgumentError("unknown command '" + s + "' (expected complete, dct-synth, sve-trace or compare)");
}

inline InnerSolver parse_solver(const std::string &s) {
    for (InnerSolver v : {InnerSolver::Admm, InnerSolver::Apgl, InnerSolver::Admmap})
        if (s == to_string(v))
            return v;
    throw ArgumentError("unknown solver '" + s + "' (expected admm, apgl or admmap)");
}

inline OperatorKind parse_operator_kind(const std::string &s) {
    if (s == "mask")
        return OperatorKind::SamplingMask;
    if (s == "dct")
        return OperatorKind::PartialDct2D;
    throw ArgumentError("unknown operator '" + s + "' (expected mask or dct)");
}

inline KappaMode parse_kappa_mode(const std::string &s) {
    for (KappaMode k : {KappaMode::Explicit, KappaMode::RealHeuristic, KappaMode::SyntheticHeuristic})
        if (s == to_string(k))
            return k;
    throw ArgumentError("unknown kappa mode '" + s + "' (expected explicit, real or synth)");
}

/// Shortest round-trip decimal form; "nan" for NaN.
inline std::string format_number(double v) {
    if (std::isnan(v))
        return "nan";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

namespace detail {

inline std::string trim(const std::string &s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string::npos)
        return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

inline std::vector<std::string> split(const std::string &s, char sep) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, sep))
        out.push_back(trim(item));
    if (!s.empty() && s.back() == sep)
        out.emplace_back();
    return out;
}

inline double parse_double(const std::string &s) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v))
        throw ArgumentError("expected a number, got '" + s + "'");
    return v;
}

inline long long parse_integer(const std::string &s) {
    long long v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw ArgumentError("expected an integer, got '" + s + "'");
    return v;
}

inline bool parse_bool(const std::string &s) {
    if (s == "true" || s == "1" || s == "yes")
        return true;
    if (s == "false" || s == "0" || s == "no")
        return false;
    throw ArgumentError("expected true or false, got '" + s + "'");
}

template <class T, class F> std::vector<T> parse_list(const std::string &s, F parse_one) {
    std::vector<T> out;
    for (const std::string &item : split(s, ','))
        out.push_back(parse_one(item));
    if (out.empty())
        throw ArgumentError("empty list");
    return out;
}

template <class T, class F> std::string join(const std::vector<T> &items, F format_one) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i)
            out += ", ";
        out += format_one(items[i]);
    }
    return out;
}

} // namespace detail

/// Everything needed to reproduce one experiment run.
struct ExperimentConfig {
    Command command = Command::Compare;
    OperatorKind kind = OperatorKind::PartialDct2D;

    // Synthetic data; every combination of (rank, sr, std) is one sweep point.
    Index m = 100;
    Index n = 100;
    std::vector<Index> ranks{5};
    std::vector<double> ratios{0.5};
    std::vector<double> stds{0.0};
    bool keep_dc = false;

    // Image data (complete).
    std::string image;
    std::string mask_file;
    double missing = 0.5;

    std::uint64_t seed = 0;
    int trials = 1;
    InnerSolver solver = InnerSolver::Admm;
    std::vector<InnerSolver> compare_solvers; // compare: empty means {solver}
    std::optional<double> delta;              // unset: sqrt(p) * std
    int adjust = -1;                          // half-width of the rank search; < 0 disables it
    SveConfig sve;
    SolverConfig solver_cfg;
    std::string out = "out";

    bool synthetic() const { return command != Command::Complete; }

    std::vector<InnerSolver> solvers() const {
        if (command == Command::Compare && !compare_solvers.empty())
            return compare_solvers;
        return {solver};
    }

    void validate() const {
        sve.validate();
        solver_cfg.validate();
        detail::require(trials >= 1, "trials must be at least 1");
        if (delta)
            detail::require(*delta >= 0.0, "delta must be nonnegative");
        if (command == Command::Complete) {
            detail::require(!image.empty(), "complete needs an image path (key 'image')");
            detail::require(missing >= 0.0 && missing < 1.0, "missing must lie in [0, 1)");
            detail::require(mask_file.empty() || kind == OperatorKind::SamplingMask,
                            "mask_file requires operator = mask");
            detail::require(kind == OperatorKind::SamplingMask || ratios.size() == 1,
                            "complete with operator = dct takes a single sr");
            return;
        }
        detail::require(image.empty() && mask_file.empty(), std::string(to_string(command)) +
                                                                " works on synthetic data; remove image/mask_file");
        if (command == Command::DctSynth)
            detail::require(kind == OperatorKind::PartialDct2D, "dct-synth requires operator = dct");
        detail::require(m >= 3 && n >= 3, "m and n must be at least 3");
        detail::require(!ranks.empty() && !ratios.empty() && !stds.empty(), "sweep lists must not be empty");
        for (Index r : ranks)
            detail::require(r >= 1 && r <= std::min(m, n), "rank must lie in [1, min(m,n)]");
        for (double sr : ratios)
            detail::require(sr > 0.0 && sr <= 1.0, "sr must lie in (0, 1]");
        for (double s : stds)
            detail::require(s >= 0.0, "std must be nonnegative");
    }
};

/// Applies one `key = value` setting. Throws ArgumentError for unknown keys or bad values.
inline void set_config_value(ExperimentConfig &cfg, const std::string &key, const std::string &value) {
    using namespace detail;
    auto count = [](const std::string &s) { return static_cast<int>(parse_integer(s)); };
    if (key == "command")
        cfg.command = parse_command(value);
    else if (key == "operator")
        cfg.kind = parse_operator_kind(value);
    else if (key == "m")
        cfg.m = parse_integer(value);
    else if (key == "n")
        cfg.n = parse_integer(value);
    else if (key == "rank")
        cfg.ranks = parse_list<Index>(value, [](const std::string &s) { return Index(parse_integer(s)); });
    else if (key == "sr")
        cfg.ratios = parse_list<double>(value, parse_double);
    else if (key == "std")
        cfg.stds = parse_list<double>(value, parse_double);
    else if (key == "keep_dc")
        cfg.keep_dc = parse_bool(value);
    else if (key == "image")
        cfg.image = value;
    else if (key == "mask_file")
        cfg.mask_file = value;
    else if (key == "missing")
        cfg.missing = parse_double(value);
    else if (key == "seed")
        cfg.seed = static_cast<std::uint64_t>(parse_integer(value));
    else if (key == "trials")
        cfg.trials = count(value);
    else if (key == "solver")
        cfg.solver = parse_solver(value);
    else if (key == "solvers")
        cfg.compare_solvers = parse_list<InnerSolver>(value, parse_solver);
    else if (key == "delta")
        cfg.delta = value == "auto" ? std::nullopt : std::optional<double>(parse_double(value));
    else if (key == "adjust")
        cfg.adjust = value == "off" ? -1 : count(value);
    else if (key == "kappa_mode")
        cfg.sve.mode = parse_kappa_mode(value);
    else if (key == "kappa")
        cfg.sve.kappa = parse_double(value);
    else if (key == "kappa_s")
        cfg.sve.s = parse_double(value);
    else if (key == "max_outer")
        cfg.sve.max_outer = count(value);
    else if (key == "stability")
        cfg.sve.stability = count(value);
    else if (key == "beta")
        cfg.solver_cfg.beta = parse_double(value);
    else if (key == "gamma")
        cfg.solver_cfg.gamma = parse_double(value);
    else if (key == "mu")
        cfg.solver_cfg.mu = parse_double(value);
    else if (key == "inner_tol")
        cfg.solver_cfg.inner_tol = parse_double(value);
    else if (key == "outer_tol")
        cfg.solver_cfg.outer_tol = parse_double(value);
    else if (key == "feas_tol")
        cfg.solver_cfg.feas_tol = parse_double(value);
    else if (key == "max_inner_iters")
        cfg.solver_cfg.max_inner_iters = count(value);
    else if (key == "max_ll_iters")
        cfg.solver_cfg.max_ll_iters = count(value);
    else if (key == "beta_max")
        cfg.solver_cfg.beta_max = parse_double(value);
    else if (key == "rho0")
        cfg.solver_cfg.rho0 = parse_double(value);
    else if (key == "eps_adapt")
        cfg.solver_cfg.eps_adapt = parse_double(value);
    else if (key == "out")
        cfg.out = value;
    else
        throw ArgumentError("unknown key");
}

/// Line-oriented `key = value` text; '#' starts a comment. Errors name the
/// source, line and key.
inline ExperimentConfig parse_config(std::istream &in, const std::string &source,
                                     ExperimentConfig cfg = ExperimentConfig{}) {
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos)
            line.erase(hash);
        line = detail::trim(line);
        if (line.empty())
            continue;
        const auto eq = line.find('=');
        const std::string where = source + ":" + std::to_string(lineno);
        if (eq == std::string::npos)
            throw FormatError(where + ": expected 'key = value'");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        try {
            set_config_value(cfg, key, value);
        } catch (const ArgumentError &err) {
            throw FormatError(where + ": key '" + key + "': " + err.what());
        }
    }
    return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path &path, ExperimentConfig cfg = ExperimentConfig{}) {
    std::ifstream in(path);
    if (!in)
        throw FormatError(path.string() + ": cannot open config file");
    return parse_config(in, path.string(), std::move(cfg));
}

/// Writes every key; parse_config on the output reproduces `cfg`.
inline void write_config(const ExperimentConfig &cfg, std::ostream &out) {
    using detail::join;
    const auto num = [](double v) { return format_number(v); };
    const SolverConfig &s = cfg.solver_cfg;
    out << "command = " << to_string(cfg.command) << '\n'
        << "operator = " << to_string(cfg.kind) << '\n'
        << "m = " << cfg.m << '\n'
        << "n = " << cfg.n << '\n'
        << "rank = " << join(cfg.ranks, [](Index r) { return std::to_string(r); }) << '\n'
        << "sr = " << join(cfg.ratios, num) << '\n'
        << "std = " << join(cfg.stds, num) << '\n'
        << "keep_dc = " << (cfg.keep_dc ? "true" : "false") << '\n';
    if (!cfg.image.empty())
        out << "image = " << cfg.image << '\n';
    if (!cfg.mask_file.empty())
        out << "mask_file = " << cfg.mask_file << '\n';
    out << "missing = " << num(cfg.missing) << '\n'
        << "seed = " << cfg.seed << '\n'
        << "trials = " << cfg.trials << '\n'
        << "solver = " << to_string(cfg.solver) << '\n';
    if (!cfg.compare_solvers.empty())
        out << "solvers = " << join(cfg.compare_solvers, [](InnerSolver v) { return std::string(to_string(v)); })
            << '\n';
    out << "delta = " << (cfg.delta ? num(*cfg.delta) : std::string("auto")) << '\n'
        << "adjust = " << (cfg.adjust < 0 ? std::string("off") : std::to_string(cfg.adjust)) << '\n'
        << "kappa_mode = " << to_string(cfg.sve.mode) << '\n'
        << "kappa = " << num(cfg.sve.kappa) << '\n'
        << "kappa_s = " << num(cfg.sve.s) << '\n'
        << "max_outer = " << cfg.sve.max_outer << '\n'
        << "stability = " << cfg.sve.stability << '\n'
        << "beta = " << num(s.beta) << '\n'
        << "gamma = " << num(s.gamma) << '\n'
        << "mu = " << num(s.mu) << '\n'
        << "inner_tol = " << num(s.inner_tol) << '\n'
        << "outer_tol = " << num(s.outer_tol) << '\n'
        << "feas_tol = " << num(s.feas_tol) << '\n'
        << "max_inner_iters = " << s.max_inner_iters << '\n'
        << "max_ll_iters = " << s.max_ll_iters << '\n'
        << "beta_max = " << num(s.beta_max) << '\n'
        << "rho0 = " << num(s.rho0) << '\n'
        << "eps_adapt = " << num(s.eps_adapt) << '\n'
        << "out = " << cfg.out << '\n';
}

// ---------------------------------------------------------------------------
// Running experiments.

struct SweepPoint {
    Index r = 0; // 0 when the true rank is unknown (images)
    double sr = 0.0;
    double std = 0.0;
};

/// One (method, solver) recovery of one trial, merged over channels.
struct MethodRow {
    int point = 0;
    std::uint64_t seed = 0;
    std::string method; // lr, lrisd, lrisd-adjust
    InnerSolver solver = InnerSolver::Admm;
    MetricsReport metrics;
    int outer_iterations = 0;
    int inner_iterations = 0;
    double seconds = 0.0;
    std::vector<Matrix> recovered;                    // per channel
    std::vector<std::vector<IterationRecord>> traces; // per channel
    std::vector<std::vector<SveProfile>> profiles;    // per channel
};

/// The measurement operator drawn for one (point, seed) trial.
struct TrialOperator {
    int point = 0;
    std::uint64_t seed = 0;
    LinearMap op;
};

struct ExperimentResult {
    std::vector<SweepPoint> points;
    std::vector<MethodRow> rows; // ordered by (point, seed, solver, method)
    std::vector<TrialOperator> operators;
};

/// Worker count: LOWRANK_THREADS when set to a positive integer, otherwise the
/// hardware concurrency; never more than `tasks`.
inline int worker_count(int tasks) {
    int limit = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    if (const char *env = std::getenv("LOWRANK_THREADS")) {
        try {
            const long long v = detail::parse_integer(detail::trim(env));
            if (v >= 1)
                limit = static_cast<int>(v);
        } catch (const ArgumentError &) {
        }
    }
    return std::max(1, std::min(limit, tasks));
}

/// Runs task(i) for i in [0, count) on a worker pool; the first failure (in
/// task order) is rethrown after all workers finish.
template <class Task> void run_parallel(int count, Task task) {
    std::vector<std::exception_ptr> errors(count);
    std::atomic<int> next{0};
    auto worker = [&] {
        for (int i = next++; i < count; i = next++) {
            try {
                task(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const int workers = worker_count(count);
    std::vector<std::thread> pool;
    for (int w = 1; w < workers; ++w)
        pool.emplace_back(worker);
    worker();
    for (std::thread &t : pool)
        t.join();
    for (const auto &e : errors)
        if (e)
            std::rethrow_exception(e);
}

namespace detail {

/// One recovery problem per channel with its ground truth.
struct TrialData {
    LinearMap op;
    std::vector<Matrix> truth;
    std::vector<Vector> b;
    PixelMask evaluate; // images only
    bool image = false;
};

inline PixelMask observed_pixels(const LinearMap &A) {
    PixelMask obs = PixelMask::Constant(A.rows(), A.cols(), false);
    for (const Entry &e : A.mask()->indices())
        obs(e.row, e.col) = true;
    return obs;
}

inline double channel_error(const TrialData &data, std::size_t c, const Matrix &X) {
    if (!data.image)
        return (X - data.truth[c]).squaredNorm();
    return psnr(X, data.truth[c], data.evaluate).se;
}

inline MetricsReport evaluate_recovery(const TrialData &data, const std::vector<Matrix> &X) {
    if (data.image) {
        MetricsReport rep = psnr(X, data.truth, data.evaluate);
        double num = 0.0, den = 0.0;
        for (std::size_t c = 0; c < X.size(); ++c) {
            num += (X[c] - data.truth[c]).squaredNorm();
            den += data.truth[c].squaredNorm();
        }
        rep.reer = den > 0.0 ? std::sqrt(num / den) : 0.0;
        return rep;
    }
    MetricsReport rep;
    rep.reer = relative_error(X.front(), data.truth.front());
    rep.se = (X.front() - data.truth.front()).squaredNorm();
    rep.t_count = X.front().size();
    rep.mse = rep.se / static_cast<double>(rep.t_count);
    rep.psnr_db = std::numeric_limits<double>::quiet_NaN();
    return rep;
}

inline void append_stage_traces(const std::vector<StageTrace> &stages, std::vector<IterationRecord> &out,
                                int &inner) {
    for (const StageTrace &st : stages) {
        out.insert(out.end(), st.iterations.begin(), st.iterations.end());
        inner += st.total_inner_iterations();
    }
}

} // namespace detail

/// Solver settings for one sweep point: delta defaults to sqrt(p) * std.
inline SolverConfig resolve_solver_config(const ExperimentConfig &cfg, Index measurements, double std) {
    SolverConfig s = cfg.solver_cfg;
    s.delta = cfg.delta ? *cfg.delta : noise_radius(measurements, std);
    return s;
}

namespace detail {

inline std::vector<MethodRow> run_trial(const ExperimentConfig &cfg, const TrialData &data, int point,
                                        std::uint64_t seed, double std) {
    const SolverConfig scfg = resolve_solver_config(cfg, data.op.measurements(), std);
    std::vector<MethodRow> rows;
    const std::size_t channels = data.truth.size();
    const Index q = std::min(data.op.rows(), data.op.cols());

    for (InnerSolver solver : cfg.solvers()) {
        auto start_row = [&](const char *method) {
            MethodRow row;
            row.point = point;
            row.seed = seed;
            row.method = method;
            row.solver = solver;
            row.recovered.resize(channels);
            row.traces.resize(channels);
            row.profiles.resize(channels);
            return row;
        };
        std::vector<std::pair<const char *, bool>> methods;
        if (cfg.command != Command::SveTrace)
            methods.emplace_back("lr", false);
        methods.emplace_back("lrisd", true);

        for (const auto &[method, use_sve] : methods) {
            MethodRow row = start_row(method);
            MethodRow adjusted = start_row("lrisd-adjust");
            const bool adjust = use_sve && cfg.adjust >= 0;
            SveConfig sve = cfg.sve;
            sve.enabled = use_sve;
            Index rank_max = 0, adjusted_rank_max = 0;
            const auto t0 = std::chrono::steady_clock::now();
            double adjust_seconds = 0.0;
            for (std::size_t c = 0; c < channels; ++c) {
                LrisdResult res = lrisd(data.op, data.b[c], solver, sve, scfg);
                append_stage_traces(res.stages, row.traces[c], row.inner_iterations);
                row.outer_iterations = std::max(row.outer_iterations, res.outer_iterations());
                row.profiles[c] = res.profiles;
                rank_max = std::max(rank_max, res.rank);
                if (adjust) {
                    const auto a0 = std::chrono::steady_clock::now();
                    Matrix best = res.X;
                    Index best_rank = res.rank;
                    double best_err = channel_error(data, c, res.X);
                    adjusted.traces[c] = row.traces[c];
                    adjusted.profiles[c] = res.profiles;
                    for (Index r = std::max<Index>(1, res.rank - cfg.adjust);
                         r <= std::min(q, res.rank + cfg.adjust); ++r) {
                        if (r == res.rank)
                            continue;
                        SolveResult alt = solve_stage(data.op, data.b[c], solver, r, scfg,
                                                      static_cast<int>(res.stages.size()));
                        append_stage_traces({alt.trace}, adjusted.traces[c], adjusted.inner_iterations);
                        const double err = channel_error(data, c, alt.X);
                        if (err < best_err) {
                            best_err = err;
                            best = std::move(alt.X);
                            best_rank = r;
                        }
                    }
                    adjusted.recovered[c] = std::move(best);
                    adjusted_rank_max = std::max(adjusted_rank_max, best_rank);
                    adjusted.outer_iterations = row.outer_iterations;
                    adjust_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - a0).count();
                }
                row.recovered[c] = std::move(res.X);
            }
            const double total =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            row.seconds = total - adjust_seconds;
            row.metrics = evaluate_recovery(data, row.recovered);
            row.metrics.rank_recovered = rank_max;
            if (adjust) {
                adjusted.inner_iterations += row.inner_iterations;
                adjusted.seconds = total;
                adjusted.metrics = evaluate_recovery(data, adjusted.recovered);
                adjusted.metrics.rank_recovered = adjusted_rank_max;
            }
            rows.push_back(std::move(row));
            if (adjust)
                rows.push_back(std::move(adjusted));
        }
    }
    return rows;
}

inline TrialData synthetic_trial(const ExperimentConfig &cfg, const SweepPoint &pt, std::uint64_t seed) {
    SyntheticSpec spec;
    spec.m = cfg.m;
    spec.n = cfg.n;
    spec.r = pt.r;
    spec.sr = pt.sr;
    spec.std = pt.std;
    spec.seed = seed;
    spec.kind = cfg.kind;
    spec.keep_dc = cfg.keep_dc;
    SyntheticInstance inst = synth_lowrank(spec);
    TrialData data{std::move(inst.op), {std::move(inst.truth)}, {std::move(inst.b)}, PixelMask(), false};
    return data;
}

inline TrialData image_trial(const ExperimentConfig &cfg, const Image &img, const SweepPoint &pt,
                             std::uint64_t seed) {
    const Index h = img.height(), w = img.width();
    std::optional<LinearMap> op;
    if (!cfg.mask_file.empty()) {
        op = load_mask_file(cfg.mask_file);
        if (op->rows() != h || op->cols() != w)
            throw FormatError(cfg.mask_file + ": mask is " + std::to_string(op->rows()) + "x" +
                              std::to_string(op->cols()) + " but the image is " + std::to_string(h) + "x" +
                              std::to_string(w));
    } else {
        op = make_operator(h, w, pt.sr, cfg.kind, seed, cfg.keep_dc);
    }
    TrialData data{std::move(*op), img.channels, {}, PixelMask(), true};
    for (const Matrix &ch : data.truth)
        data.b.push_back(data.op.apply(ch));
    data.evaluate = data.op.kind() == OperatorKind::SamplingMask
                        ? evaluation_mask(observed_pixels(data.op))
                        : PixelMask::Constant(h, w, true);
    return data;
}

inline double median(std::vector<double> v) {
    if (v.empty())
        return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const std::size_t mid = v.size() / 2;
    return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

inline std::ofstream open_output(const std::filesystem::path &path) {
    std::ofstream out(path);
    if (!out)
        throw FormatError(path.string() + ": cannot open file for writing");
    return out;
}

} // namespace detail

/// Sweep points in (rank, sr, std) order; images get a single point.
inline std::vector<SweepPoint> sweep_points(const ExperimentConfig &cfg) {
    std::vector<SweepPoint> pts;
    if (cfg.command == Command::Complete) {
        const double sr = cfg.kind == OperatorKind::SamplingMask ? 1.0 - cfg.missing : cfg.ratios.front();
        pts.push_back({0, sr, 0.0});
        return pts;
    }
    for (Index r : cfg.ranks)
        for (double sr : cfg.ratios)
            for (double s : cfg.stds)
                pts.push_back({r, sr, s});
    return pts;
}

/// Runs every (point, trial) pair; rows come back in deterministic order
/// regardless of worker scheduling.
inline ExperimentResult run_experiment(const ExperimentConfig &cfg) {
    cfg.validate();
    ExperimentResult result;
    result.points = sweep_points(cfg);
    std::optional<Image> img;
    if (cfg.command == Command::Complete)
        img = load_image(cfg.image);

    const int tasks = static_cast<int>(result.points.size()) * cfg.trials;
    std::vector<std::vector<MethodRow>> per_task(tasks);
    std::vector<std::optional<LinearMap>> ops(tasks);
    run_parallel(tasks, [&](int t) {
        const int point = t / cfg.trials;
        const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(t % cfg.trials);
        const SweepPoint &pt = result.points[point];
        const detail::TrialData data =
            img ? detail::image_trial(cfg, *img, pt, seed) : detail::synthetic_trial(cfg, pt, seed);
        per_task[t] = detail::run_trial(cfg, data, point, seed, pt.std);
        ops[t] = data.op;
    });
    for (int t = 0; t < tasks; ++t) {
        for (auto &row : per_task[t])
            result.rows.push_back(std::move(row));
        result.operators.push_back(
            {t / cfg.trials, cfg.seed + static_cast<std::uint64_t>(t % cfg.trials), std::move(*ops[t])});
    }
    return result;
}

inline const char *metrics_header() {
    return "command,point,m,n,r,sr,std,seed,method,solver,rank_recovered,reer,psnr_db,se,mse,t_count,"
           "outer_iterations,inner_iterations";
}

/// Writes metrics.csv, timings.csv, trace.csv, sve.csv, summary.csv,
/// config.txt, the operator of every trial and (for images) the recovered
/// images into cfg.out.
inline void write_outputs(const ExperimentConfig &cfg, const ExperimentResult &res) {
    namespace fs = std::filesystem;
    const fs::path dir(cfg.out);
    fs::create_directories(dir);
    const auto num = [](double v) { return format_number(v); };
    Index m = cfg.m, n = cfg.n;
    if (cfg.command == Command::Complete && !res.rows.empty()) {
        m = res.rows.front().recovered.front().rows();
        n = res.rows.front().recovered.front().cols();
    }

    {
        auto out = detail::open_output(dir / "config.txt");
        write_config(cfg, out);
    }
    {
        auto out = detail::open_output(dir / "metrics.csv");
        out << metrics_header() << '\n';
        for (const MethodRow &row : res.rows) {
            const SweepPoint &pt = res.points[row.point];
            const MetricsReport &mr = row.metrics;
            out << to_string(cfg.command) << ',' << row.point << ',' << m << ',' << n << ',' << pt.r << ','
                << num(pt.sr) << ',' << num(pt.std) << ',' << row.seed << ',' << row.method << ','
                << to_string(row.solver) << ',' << mr.rank_recovered << ',' << num(mr.reer) << ','
                << num(mr.psnr_db) << ',' << num(mr.se) << ',' << num(mr.mse) << ',' << mr.t_count << ','
                << row.outer_iterations << ',' << row.inner_iterations << '\n';
        }
    }
    {
        auto out = detail::open_output(dir / "timings.csv");
        out << "point,seed,method,solver,seconds\n";
        for (const MethodRow &row : res.rows)
            out << row.point << ',' << row.seed << ',' << row.method << ',' << to_string(row.solver) << ','
                << num(row.seconds) << '\n';
    }
    {
        auto out = detail::open_output(dir / "trace.csv");
        out << "point,seed,method,solver,channel,stage,l,k,objective,residual,beta\n";
        for (const MethodRow &row : res.rows)
            for (std::size_t c = 0; c < row.traces.size(); ++c)
                for (const IterationRecord &it : row.traces[c])
                    out << row.point << ',' << row.seed << ',' << row.method << ',' << to_string(row.solver) << ','
                        << c << ',' << it.stage << ',' << it.l << ',' << it.k << ',' << num(it.objective) << ','
                        << num(it.residual) << ',' << num(it.beta) << '\n';
    }
    {
        auto out = detail::open_output(dir / "sve.csv");
        out << "point,seed,method,solver,channel,outer,index,S,St,Stt,kappa,r_hat\n";
        for (const MethodRow &row : res.rows) {
            if (row.method == "lrisd-adjust")
                continue; // same profiles as the lrisd row
            for (std::size_t c = 0; c < row.profiles.size(); ++c)
                for (std::size_t o = 0; o < row.profiles[c].size(); ++o) {
                    const SveProfile &p = row.profiles[c][o];
                    for (Index i = 0; i < p.S.size(); ++i) {
                        out << row.point << ',' << row.seed << ',' << row.method << ',' << to_string(row.solver)
                            << ',' << c << ',' << o + 1 << ',' << i + 1 << ',' << num(p.S(i)) << ',';
                        if (i < p.St.size())
                            out << num(p.St(i));
                        out << ',';
                        if (i < p.Stt.size())
                            out << num(p.Stt(i));
                        out << ',' << num(p.kappa) << ',' << p.r_hat << '\n';
                    }
                }
        }
    }
    {
        auto out = detail::open_output(dir / "summary.csv");
        out << "point,m,n,r,sr,std,method,solver,trials,median_reer,median_psnr_db,median_rank,rank_hits\n";
        std::map<std::tuple<int, InnerSolver, std::string>, std::vector<const MethodRow *>> groups;
        for (const MethodRow &row : res.rows)
            groups[{row.point, row.solver, row.method}].push_back(&row);
        for (const auto &[key, rows] : groups) {
            const SweepPoint &pt = res.points[std::get<0>(key)];
            std::vector<double> reer, psnr_db, rank;
            int hits = 0;
            for (const MethodRow *row : rows) {
                reer.push_back(row->metrics.reer);
                psnr_db.push_back(row->metrics.psnr_db);
                rank.push_back(static_cast<double>(row->metrics.rank_recovered));
                hits += pt.r > 0 && row->metrics.rank_recovered == pt.r;
            }
            out << std::get<0>(key) << ',' << m << ',' << n << ',' << pt.r << ',' << num(pt.sr) << ','
                << num(pt.std) << ',' << std::get<2>(key) << ',' << to_string(std::get<1>(key)) << ','
                << rows.size() << ',' << num(detail::median(reer)) << ',' << num(detail::median(psnr_db)) << ','
                << num(detail::median(rank)) << ',' << hits << '\n';
        }
    }
    for (const TrialOperator &t : res.operators)
        save_operator_file(t.op, dir / ("operator_point" + std::to_string(t.point) + "_seed" +
                                        std::to_string(t.seed) + ".txt"));
    if (cfg.command == Command::Complete) {
        for (const MethodRow &row : res.rows) {
            const std::string ext = row.recovered.size() == 3 ? ".ppm" : ".pgm";
            save_image(row.recovered, dir / ("recovered_" + row.method + "_" + to_string(row.solver) + "_seed" +
                                             std::to_string(row.seed) + ext));
        }
    }
}

// ---------------------------------------------------------------------------
// Plot-ready data.

/// A comma-separated table with a header row.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::string source;

    std::size_t column(const std::string &name) const {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end())
            throw FormatError(source + ": missing column '" + name + "'");
        return static_cast<std::size_t>(it - header.begin());
    }
};

inline CsvTable read_csv(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in)
        throw FormatError(path.string() + ": cannot open file");
    CsvTable t;
    t.source = path.string();
    std::string line;
    if (!std::getline(in, line))
        throw FormatError(t.source + ": empty file");
    t.header = detail::split(line, ',');
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty())
            continue;
        auto fields = detail::split(line, ',');
        if (fields.size() != t.header.size())
            throw FormatError(t.source + ":" + std::to_string(lineno) + ": expected " +
                              std::to_string(t.header.size()) + " fields, got " + std::to_string(fields.size()));
        t.rows.push_back(std::move(fields));
    }
    return t;
}

namespace detail {

inline double field_number(const CsvTable &t, const std::vector<std::string> &row, std::size_t col) {
    try {
        return parse_double(row[col]);
    } catch (const ArgumentError &err) {
        throw FormatError(t.source + ": column '" + t.header[col] + "': " + err.what());
    }
}

// Median Reer per (method, solver, fixed...) group as a function of `x_name`,
// sorted by the group key and then x ascending.
inline void write_reer_series(const CsvTable &metrics, const std::string &x_name,
                              const std::vector<std::string> &fixed, const std::filesystem::path &path) {
    const std::size_t method = metrics.column("method"), solver = metrics.column("solver");
    const std::size_t x = metrics.column(x_name), reer = metrics.column("reer");
    std::vector<std::size_t> fixed_cols;
    for (const auto &f : fixed)
        fixed_cols.push_back(metrics.column(f));

    using Key = std::tuple<std::string, std::string, std::vector<double>, double>;
    std::map<Key, std::vector<double>> groups;
    for (const auto &row : metrics.rows) {
        std::vector<double> fv;
        for (std::size_t c : fixed_cols)
            fv.push_back(field_number(metrics, row, c));
        groups[{row[method], row[solver], fv, field_number(metrics, row, x)}].push_back(
            field_number(metrics, row, reer));
    }
    auto out = open_output(path);
    out << "method,solver";
    for (const auto &f : fixed)
        out << ',' << f;
    out << ',' << x_name << ",median_reer,trials\n";
    for (const auto &[key, values] : groups) {
        out << std::get<0>(key) << ',' << std::get<1>(key);
        for (double v : std::get<2>(key))
            out << ',' << format_number(v);
        out << ',' << format_number(std::get<3>(key)) << ',' << format_number(median(values)) << ','
            << values.size() << '\n';
    }
}

} // namespace detail

/// Turns metrics.csv and sve.csv in `dir` into one tidy CSV per figure family:
/// plot_reer_vs_std.csv, plot_reer_vs_sr.csv, plot_rank_recovery.csv, plot_stt.csv.
inline void emit_plot_data(const std::filesystem::path &dir) {
    const CsvTable metrics = read_csv(dir / "metrics.csv");
    const CsvTable sve = read_csv(dir / "sve.csv");

    detail::write_reer_series(metrics, "std", {"r", "sr"}, dir / "plot_reer_vs_std.csv");
    detail::write_reer_series(metrics, "sr", {"r", "std"}, dir / "plot_reer_vs_sr.csv");

    {
        const std::size_t point = metrics.column("point"), seed = metrics.column("seed");
        const std::size_t method = metrics.column("method"), solver = metrics.column("solver");
        const std::size_t r = metrics.column("r"), rec = metrics.column("rank_recovered");
        auto out = detail::open_output(dir / "plot_rank_recovery.csv");
        out << "point,seed,method,solver,true_r,recovered_r\n";
        for (const auto &row : metrics.rows)
            if (row[method] != "lr")
                out << row[point] << ',' << row[seed] << ',' << row[method] << ',' << row[solver] << ',' << row[r]
                    << ',' << row[rec] << '\n';
    }
    {
        const std::vector<std::size_t> cols{sve.column("point"),  sve.column("seed"),  sve.column("method"),
                                            sve.column("solver"), sve.column("channel"), sve.column("outer"),
                                            sve.column("index"),  sve.column("Stt"),   sve.column("kappa")};
        auto out = detail::open_output(dir / "plot_stt.csv");
        out << "point,seed,method,solver,channel,outer,index,stt,kappa\n";
        for (const auto &row : sve.rows) {
            if (row[cols[7]].empty())
                continue;
            for (std::size_t i = 0; i < cols.size(); ++i)
                out << (i ? "," : "") << row[cols[i]];
            out << '\n';
        }
    }
}

} // namespace lowrank
