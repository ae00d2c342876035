#pragma once
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>
#include <fmrlasso/gem.hpp>
#include <fmrlasso/io.hpp>
#include <fmrlasso/model_selection.hpp>
#include <fmrlasso/sim_lab.hpp>

namespace fmrlasso {
namespace cli {

enum class Command { fit, select, adapt, simulate, bench };

// Exit codes: 0 all fits converged, 1 error (JSON error object on stderr),
// 3 finished but at least one fit did not converge or a run failed.
inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitNotConverged = 3;

struct RunConfig
{
    Command command = Command::fit;
    std::string data_path;
    std::string response_column = "y";
    std::string validation_path; // select/adapt with --criterion validation

    std::optional<Index> k;
    std::vector<Index> k_range;
    std::vector<double> lambdas; // explicit values; otherwise a grid
    int grid = 20;
    Spacing spacing = Spacing::log;
    std::optional<double> lambda_min_ratio;
    std::vector<double> gammas{1.0};
    Criterion criterion = Criterion::bic;
    int folds = 10;

    std::uint64_t seed = 0;
    double tau = 1e-6;
    int max_iter = 10000;
    int active_set_period = 11;
    int starts = 1;
    bool standardize = false;
    int threads = 1;

    std::string output_path; // empty: stdout
    std::string tsv_path;    // simulate / bench plot data

    std::string model = "M1";
    std::optional<Index> p_tot;
    std::optional<Index> n;
    int runs = 20;
    Pipeline pipeline = Pipeline::one_stage;
    Criterion selection = Criterion::validation;
    int reps = 3;

    OptimOptions optim() const
    {
        OptimOptions o;
        o.tau = tau;
        o.max_iter = max_iter;
        o.active_set_period = active_set_period;
        o.seed = seed;
        o.n_starts = starts;
        return o;
    }
};

/// Threads from FMRLASSO_THREADS, used when --threads was not given.
inline std::optional<int> threads_from_env()
{
    const char* v = std::getenv("FMRLASSO_THREADS");
    if (!v || !*v) return std::nullopt;
    try {
        const int t = std::stoi(v);
        if (t >= 1) return t;
    } catch (const std::exception&) {
    }
    throw invalid_argument_error("FMRLASSO_THREADS must be a positive integer");
}

namespace detail {

struct Loaded
{
    Dataset data;
    std::optional<Vector> scales;
    std::vector<std::string> warnings;
};

inline Loaded load(const RunConfig& cfg, const std::string& path)
{
    if (path.empty()) throw invalid_argument_error("--data is required for this command");
    io::CsvLoad csv = io::load_csv(path, cfg.response_column);
    Loaded out{std::move(csv.data), std::nullopt, std::move(csv.warnings)};
    if (cfg.standardize) out.scales = io::standardize_columns(out.data, &out.warnings);
    return out;
}

inline std::optional<Dataset> load_validation(const RunConfig& cfg, const std::optional<Vector>& scales)
{
    if (cfg.criterion != Criterion::validation) return std::nullopt;
    if (cfg.validation_path.empty()) throw invalid_argument_error("--criterion validation needs --validation-data");
    Dataset v = io::load_csv(cfg.validation_path, cfg.response_column).data;
    if (scales) {
        if (v.p() != scales->size()) throw invalid_argument_error("validation data has a different column count");
        for (Index j = 0; j < v.p(); ++j) v.x.col(j) /= (*scales)(j);
    }
    return v;
}

inline std::vector<double> lambdas_for(const RunConfig& cfg, const Dataset& data)
{
    if (!cfg.lambdas.empty()) return cfg.lambdas;
    return lambda_grid(data, cfg.grid, cfg.spacing, cfg.lambda_min_ratio);
}

inline bool all_converged(const SelectionResult& s)
{
    for (const auto& r : s.table) {
        if (r.failure || !r.converged) return false;
    }
    return true;
}

inline void add_warnings(io::json& j, const std::vector<std::string>& w)
{
    for (const auto& s : w) j["warnings"].push_back(s);
}

inline void emit(const RunConfig& cfg, const io::json& j, std::ostream& out)
{
    if (cfg.output_path.empty()) {
        out << j.dump(2) << '\n';
        return;
    }
    std::ofstream f(cfg.output_path);
    if (!f) throw error("io_error", "cannot write '" + cfg.output_path + "'");
    f << j.dump(2) << '\n';
}

template <class Writer>
void emit_tsv(const std::string& path, Writer&& w)
{
    if (path.empty()) return;
    std::ofstream f(path);
    if (!f) throw error("io_error", "cannot write '" + path + "'");
    w(f);
}

inline int run_fit(const RunConfig& cfg, std::ostream& out)
{
    Loaded d = load(cfg, cfg.data_path);
    if (cfg.lambdas.size() != 1) throw invalid_argument_error("fit needs exactly one --lambda");
    if (cfg.gammas.size() != 1) throw invalid_argument_error("fit needs exactly one --gamma");
    const PenaltySpec pen{cfg.lambdas[0], cfg.gammas[0], std::nullopt};
    const FitResult fit = fit_bcd_gem(d.data, cfg.k.value_or(2), pen, cfg.optim());
    io::json j = io::fit_to_json(fit, d.data, d.scales);
    add_warnings(j, d.warnings);
    emit(cfg, j, out);
    return fit.converged ? kExitOk : kExitNotConverged;
}

inline std::vector<Index> k_range_for(const RunConfig& cfg)
{
    if (!cfg.k_range.empty()) return cfg.k_range;
    return {cfg.k.value_or(2)};
}

inline SelectionOptions selection_options(const RunConfig& cfg, const std::optional<Vector>& scales)
{
    SelectionOptions s;
    s.criterion = cfg.criterion;
    s.folds = cfg.folds;
    s.threads = cfg.threads;
    s.validation = load_validation(cfg, scales);
    return s;
}

inline int run_select(const RunConfig& cfg, std::ostream& out)
{
    Loaded d = load(cfg, cfg.data_path);
    const SelectionResult sel =
        select(d.data, k_range_for(cfg), lambdas_for(cfg, d.data), cfg.gammas, selection_options(cfg, d.scales), cfg.optim());
    io::json j = io::selection_to_json(sel, d.data, d.scales);
    j["warnings"] = d.warnings;
    emit(cfg, j, out);
    return all_converged(sel) ? kExitOk : kExitNotConverged;
}

inline int run_adapt(const RunConfig& cfg, std::ostream& out)
{
    Loaded d = load(cfg, cfg.data_path);
    if (cfg.gammas.size() != 1) throw invalid_argument_error("adapt needs exactly one --gamma");
    const SelectionOptions sopts = selection_options(cfg, d.scales);
    const OptimOptions opts = cfg.optim();
    const SelectionResult first = select(d.data, k_range_for(cfg), lambdas_for(cfg, d.data), cfg.gammas, sopts, opts);
    const Matrix w = adaptive_weights(first.best_fit.theta);
    const auto grid2 = cfg.lambdas.empty()
                           ? lambda_grid(lambda_max_weighted(d.data, w), cfg.grid, cfg.spacing, cfg.lambda_min_ratio)
                           : cfg.lambdas;
    const AdaptiveResult second = fit_adaptive(d.data, first.best_fit.theta, grid2, cfg.gammas[0], sopts, opts);
    io::json j;
    j["version"] = io::kFormatVersion;
    j["kind"] = "adapt";
    j["one_stage"] = io::selection_to_json(first, d.data, d.scales);
    j["adaptive"] = io::selection_to_json(second.selection, d.data, d.scales);
    j["weights"] = io::matrix_to_json(second.weights);
    j["warnings"] = d.warnings;
    emit(cfg, j, out);
    return all_converged(first) && all_converged(second.selection) ? kExitOk : kExitNotConverged;
}

inline ModelSpec model_for(const RunConfig& cfg)
{
    ModelSpec spec = preset(cfg.model);
    if (cfg.p_tot) spec = spec.with_p_tot(*cfg.p_tot);
    if (cfg.n) spec.n = *cfg.n;
    spec.validate();
    return spec;
}

inline int run_simulate(const RunConfig& cfg, std::ostream& out)
{
    const ModelSpec spec = model_for(cfg);
    StudyConfig sc;
    sc.n_runs = cfg.runs;
    sc.pipeline = cfg.pipeline;
    sc.selection = cfg.selection;
    sc.seed = cfg.seed;
    if (cfg.gammas.size() != 1) throw invalid_argument_error("simulate needs exactly one --gamma");
    sc.gamma = cfg.gammas[0];
    sc.grid_size = cfg.grid;
    sc.spacing = cfg.spacing;
    if (cfg.lambda_min_ratio) sc.lo_fraction = *cfg.lambda_min_ratio;
    sc.k = cfg.k;
    sc.folds = cfg.folds;
    sc.threads = cfg.threads;
    sc.opts = cfg.optim();
    const StudySummary s = run_study(spec, sc);
    emit(cfg, io::study_to_json(s), out);
    emit_tsv(cfg.tsv_path, [&](std::ostream& f) { io::study_to_tsv(f, s); });
    return s.n_failed == 0 ? kExitOk : kExitNotConverged;
}

inline int run_bench_cmd(const RunConfig& cfg, std::ostream& out)
{
    const ModelSpec spec = model_for(cfg);
    BenchConfig bc;
    bc.grid_size = cfg.grid;
    bc.reps = cfg.reps;
    bc.seed = cfg.seed;
    bc.k = cfg.k;
    if (cfg.gammas.size() != 1) throw invalid_argument_error("bench needs exactly one --gamma");
    bc.gamma = cfg.gammas[0];
    bc.spacing = cfg.spacing;
    if (cfg.lambda_min_ratio) bc.lo_fraction = *cfg.lambda_min_ratio;
    bc.opts = cfg.optim();
    const BenchResult b = run_bench(spec, bc);
    emit(cfg, io::bench_to_json(b), out);
    emit_tsv(cfg.tsv_path, [&](std::ostream& f) { io::bench_to_tsv(f, b); });
    for (const auto& r : b.rows) {
        if (!r.active.converged || !r.full.converged) return kExitNotConverged;
    }
    return kExitOk;
}

} // namespace detail

/// Executes one command. Results go to cfg.output_path (or `out`); failures print a JSON error object to `err`.
inline int run(const RunConfig& cfg, std::ostream& out = std::cout, std::ostream& err = std::cerr)
{
    try {
        cfg.optim().validate();
        if (cfg.threads < 1) throw invalid_argument_error("--threads must be >= 1");
        switch (cfg.command) {
        case Command::fit: return detail::run_fit(cfg, out);
        case Command::select: return detail::run_select(cfg, out);
        case Command::adapt: return detail::run_adapt(cfg, out);
        case Command::simulate: return detail::run_simulate(cfg, out);
        case Command::bench: return detail::run_bench_cmd(cfg, out);
        }
        throw invalid_argument_error("unknown command");
    } catch (const error& e) {
        err << io::error_to_json(e.kind(), e.what()).dump() << '\n';
    } catch (const nlohmann::json::exception& e) {
        err << io::error_to_json("json_error", e.what()).dump() << '\n';
    } catch (const std::exception& e) {
        err << io::error_to_json("internal_error", e.what()).dump() << '\n';
    }
    return kExitError;
}

} // namespace cli
} // namespace fmrlasso
