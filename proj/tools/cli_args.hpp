#pragma once
#include <map>
#include <optional>
#include <string>
#include <vector>
#include <CLI11.hpp>
#include <fmrlasso/cli.hpp>

namespace fmrlasso::cli {

// Raw flag values; options shared by several subcommands are bound once per subcommand.
struct ArgState
{
    RunConfig cfg;
    std::optional<Index> k;
    std::optional<Index> p_tot;
    std::optional<Index> n;
    std::optional<double> lambda_min_ratio;
    std::optional<int> threads;
    std::string k_range;
    std::string lambdas;
    std::string gammas;
    std::string spacing = "log";
    std::string criterion = "bic";
    std::string pipeline = "one-stage";
    std::string selection = "validation";
};

template <class T>
std::vector<T> parse_list(const std::string& text, const char* flag)
{
    std::vector<T> out;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto comma = text.find(',', pos);
        const std::string item = text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        try {
            std::size_t used = 0;
            if constexpr (std::is_integral_v<T>) out.push_back(static_cast<T>(std::stoll(item, &used)));
            else out.push_back(static_cast<T>(std::stod(item, &used)));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw invalid_argument_error(std::string(flag) + ": cannot parse '" + item + "'");
        }
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}

inline void bind_common(CLI::App* sub, ArgState& s)
{
    sub->add_option("--seed", s.cfg.seed, "RNG seed; every sub-seed derives from it");
    sub->add_option("--tau", s.cfg.tau, "relative stopping tolerance")->check(CLI::PositiveNumber);
    sub->add_option("--max-iter", s.cfg.max_iter, "EM iteration cap")->check(CLI::PositiveNumber);
    sub->add_option("--active-set-period", s.cfg.active_set_period, "full sweep every N iterations; 1 disables")
        ->check(CLI::PositiveNumber);
    sub->add_option("--starts", s.cfg.starts, "random restarts per fit")->check(CLI::PositiveNumber);
    sub->add_option("--gamma", s.gammas, "penalty exponent on pi: 0, 0.5 or 1 (comma list for select)");
    sub->add_option("--output", s.cfg.output_path, "JSON output file (default stdout)");
    sub->add_option("--threads", s.threads, "worker threads (default FMRLASSO_THREADS or 1)");
    sub->add_option("--k", s.k, "number of mixture components");
}

inline void bind_data(CLI::App* sub, ArgState& s)
{
    sub->add_option("--data", s.cfg.data_path, "CSV input with header row")->required();
    sub->add_option("--response", s.cfg.response_column, "response column name");
    sub->add_flag("--standardize", s.cfg.standardize, "scale X columns to unit sample sd before fitting");
}

inline void bind_grid(CLI::App* sub, ArgState& s)
{
    sub->add_option("--grid", s.cfg.grid, "number of lambda grid points")->check(CLI::PositiveNumber);
    sub->add_option("--spacing", s.spacing, "grid spacing")->check(CLI::IsMember({"linear", "log"}));
    sub->add_option("--lambda-min-ratio", s.lambda_min_ratio, "smallest grid value as a fraction of the largest");
}

inline void bind_selection(CLI::App* sub, ArgState& s)
{
    sub->add_option("--k-range", s.k_range, "comma list of component counts");
    sub->add_option("--lambda", s.lambdas, "comma list of lambda values (overrides the grid)");
    sub->add_option("--criterion", s.criterion, "bic, cv or validation")
        ->check(CLI::IsMember({"bic", "cv", "validation"}));
    sub->add_option("--folds", s.cfg.folds, "cross-validation folds");
    sub->add_option("--validation-data", s.cfg.validation_path, "held-out CSV for --criterion validation");
}

inline void bind_model(CLI::App* sub, ArgState& s)
{
    sub->add_option("--model", s.cfg.model, "M1..M5, M1_unbalanced or sparsity_series(i)");
    sub->add_option("--ptot", s.p_tot, "total number of covariates");
    sub->add_option("--n", s.n, "sample size override");
}

inline Criterion criterion_from(const std::string& c)
{
    if (c == "cv") return Criterion::cv;
    if (c == "validation") return Criterion::validation;
    return Criterion::bic;
}

/// Parses argv into a RunConfig. CLI11 exceptions (including --help) propagate to the caller.
inline RunConfig parse_args(int argc, const char* const* argv, CLI::App& app, ArgState& s)
{
    app.require_subcommand(1);
    auto* fit = app.add_subcommand("fit", "fit one mixture at a fixed lambda");
    auto* sel = app.add_subcommand("select", "grid search over k, lambda and gamma");
    auto* adapt = app.add_subcommand("adapt", "one-stage selection followed by the adaptive refit");
    auto* sim = app.add_subcommand("simulate", "repeated simulation study on a preset model");
    auto* bench = app.add_subcommand("bench", "active-set versus full-sweep timing");

    for (auto* sub : {fit, sel, adapt, sim, bench}) bind_common(sub, s);
    for (auto* sub : {fit, sel, adapt}) bind_data(sub, s);
    fit->add_option("--lambda", s.lambdas, "penalty level")->required();
    for (auto* sub : {sel, adapt, sim, bench}) bind_grid(sub, s);
    for (auto* sub : {sel, adapt}) bind_selection(sub, s);
    for (auto* sub : {sim, bench}) bind_model(sub, s);
    sim->add_option("--runs", s.cfg.runs, "simulation runs")->check(CLI::PositiveNumber);
    sim->add_option("--pipeline", s.pipeline, "one-stage or adaptive")
        ->check(CLI::IsMember({"one-stage", "adaptive"}));
    sim->add_option("--selection", s.selection, "tuning criterion: validation, bic or cv")
        ->check(CLI::IsMember({"bic", "cv", "validation"}));
    sim->add_option("--folds", s.cfg.folds, "cross-validation folds");
    sim->add_option("--tsv", s.cfg.tsv_path, "long-format TSV of per-run metrics");
    bench->add_option("--reps", s.cfg.reps, "repetitions; medians are reported")->check(CLI::PositiveNumber);
    bench->add_option("--tsv", s.cfg.tsv_path, "TSV table of the benchmark rows");

    app.parse(argc, argv);

    RunConfig& c = s.cfg;
    if (fit->parsed()) c.command = Command::fit;
    else if (sel->parsed()) c.command = Command::select;
    else if (adapt->parsed()) c.command = Command::adapt;
    else if (sim->parsed()) c.command = Command::simulate;
    else c.command = Command::bench;

    if (bench->parsed()) {
        c.spacing = Spacing::linear;
        if (!s.lambda_min_ratio) s.lambda_min_ratio = 0.2;
        if (bench->count("--grid") == 0) c.grid = 8;
    } else if (sim->parsed() && sim->count("--grid") == 0) {
        c.grid = 12;
    }
    if (!(bench->parsed() && bench->count("--spacing") == 0)) {
        c.spacing = s.spacing == "linear" ? Spacing::linear : Spacing::log;
    }
    c.k = s.k;
    c.p_tot = s.p_tot;
    c.n = s.n;
    c.lambda_min_ratio = s.lambda_min_ratio;
    if (!s.k_range.empty()) c.k_range = parse_list<Index>(s.k_range, "--k-range");
    if (!s.lambdas.empty()) c.lambdas = parse_list<double>(s.lambdas, "--lambda");
    if (!s.gammas.empty()) c.gammas = parse_list<double>(s.gammas, "--gamma");
    c.criterion = criterion_from(s.criterion);
    c.selection = criterion_from(s.selection);
    c.pipeline = s.pipeline == "adaptive" ? Pipeline::adaptive : Pipeline::one_stage;
    if (s.threads) c.threads = *s.threads;
    else if (auto t = threads_from_env()) c.threads = *t;
    return c;
}

} // namespace fmrlasso::cli
