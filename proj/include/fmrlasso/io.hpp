#pragma once
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>
#include <json.hpp>
#include <fmrlasso/core_model.hpp>
#include <fmrlasso/gem.hpp>
#include <fmrlasso/model_selection.hpp>
#include <fmrlasso/sim_lab.hpp>

namespace fmrlasso {
namespace io {

using json = nlohmann::json;

inline constexpr int kFormatVersion = 1;

struct CsvLoad
{
    Dataset data;
    std::string response_column;
    std::vector<std::string> warnings;
};

namespace detail {

// Splits one record; handles quoted fields with embedded commas and doubled quotes.
inline std::vector<std::string> split_csv_line(const std::string& line)
{
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

inline std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline bool parse_double(const std::string& text, double& out)
{
    const std::string t = trim(text);
    if (t.empty()) return false;
    std::size_t used = 0;
    try {
        out = std::stod(t, &used);
    } catch (const std::out_of_range&) {
        out = t[0] == '-' ? -kInf : kInf;
        return true;
    } catch (const std::exception&) {
        return false;
    }
    return used == t.size();
}

} // namespace detail

/**
 * Reads a CSV file with a header row. The response column becomes y; every
 * other column becomes a covariate in header order.
 */
inline CsvLoad parse_csv(std::istream& in, const std::string& response_column)
{
    std::string line;
    std::vector<std::string> header;
    while (std::getline(in, line)) {
        if (!detail::trim(line).empty()) {
            header = detail::split_csv_line(line);
            break;
        }
    }
    if (header.empty()) throw csv_error("empty_file", "CSV input is empty");
    for (auto& h : header) h = detail::trim(h);

    std::size_t resp = header.size();
    for (std::size_t c = 0; c < header.size(); ++c) {
        if (header[c] == response_column) resp = c;
    }
    if (resp == header.size()) {
        throw csv_error("missing_column", "response column '" + response_column + "' not found in header");
    }

    std::vector<std::vector<double>> rows;
    std::vector<std::size_t> nonfinite_rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        const auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size()) {
            throw csv_error("ragged_row", "line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                                              " fields, header has " + std::to_string(header.size()));
        }
        std::vector<double> vals(cells.size());
        bool finite = true;
        for (std::size_t c = 0; c < cells.size(); ++c) {
            if (!detail::parse_double(cells[c], vals[c])) {
                throw csv_error("non_numeric_cell", "line " + std::to_string(line_no) + ", column '" + header[c] +
                                                        "': cannot parse '" + cells[c] + "' as a number");
            }
            finite = finite && std::isfinite(vals[c]);
        }
        if (!finite) nonfinite_rows.push_back(line_no);
        rows.push_back(std::move(vals));
    }
    if (!nonfinite_rows.empty()) {
        std::string list;
        for (std::size_t i = 0; i < nonfinite_rows.size(); ++i) {
            list += (i ? ", " : "") + std::to_string(nonfinite_rows[i]);
        }
        throw csv_error("non_finite_value", "non-finite values on line(s) " + list);
    }
    if (rows.empty()) throw csv_error("empty_file", "CSV input has a header but no data rows");
    if (header.size() < 2) throw csv_error("missing_column", "CSV input has no covariate columns");

    const Index n = static_cast<Index>(rows.size());
    const Index p = static_cast<Index>(header.size()) - 1;
    Matrix x(n, p);
    Vector y(n);
    std::vector<std::string> names;
    for (std::size_t c = 0; c < header.size(); ++c) {
        if (c != resp) names.push_back(header[c]);
    }
    for (Index i = 0; i < n; ++i) {
        Index j = 0;
        for (std::size_t c = 0; c < header.size(); ++c) {
            const double v = rows[static_cast<std::size_t>(i)][c];
            if (c == resp) y(i) = v;
            else x(i, j++) = v;
        }
    }
    CsvLoad out;
    out.data = Dataset(std::move(x), std::move(y), std::move(names));
    out.response_column = response_column;
    out.warnings = dataset_warnings(out.data);
    return out;
}

inline CsvLoad load_csv(const std::string& path, const std::string& response_column)
{
    std::ifstream in(path);
    if (!in) throw csv_error("unreadable_file", "cannot open '" + path + "'");
    return parse_csv(in, response_column);
}

inline void write_csv(std::ostream& out, const Dataset& data, const std::string& response_column = "y")
{
    out.precision(17);
    out << response_column;
    for (const auto& c : data.column_names) out << ',' << c;
    out << '\n';
    for (Index i = 0; i < data.n(); ++i) {
        out << data.y(i);
        for (Index j = 0; j < data.p(); ++j) out << ',' << data.x(i, j);
        out << '\n';
    }
}

/// Divides each column by its sample standard deviation; returns the divisors (1 for constant columns).
inline Vector standardize_columns(Dataset& data, std::vector<std::string>* warnings = nullptr)
{
    Vector scale(data.p());
    const double n = static_cast<double>(data.n());
    for (Index j = 0; j < data.p(); ++j) {
        const auto col = data.x.col(j).array();
        const double mean = col.mean();
        const double var = n > 1 ? (col - mean).square().sum() / (n - 1.0) : 0.0;
        const double sd = std::sqrt(var);
        if (sd > 0.0) {
            scale(j) = sd;
            data.x.col(j) /= sd;
        } else {
            scale(j) = 1.0;
            if (warnings) warnings->push_back("column '" + data.column_names[static_cast<std::size_t>(j)] +
                                              "' has zero variance and was not rescaled");
        }
    }
    return scale;
}

inline json matrix_to_json(const Matrix& m)
{
    json rows = json::array();
    for (Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Index c = 0; c < m.cols(); ++c) {
            const double v = m(r, c);
            if (std::isinf(v)) row.push_back(nullptr); // +inf (frozen weight)
            else row.push_back(v);
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

inline json vector_to_json(const Vector& v)
{
    json out = json::array();
    for (Index i = 0; i < v.size(); ++i) out.push_back(v(i));
    return out;
}

inline Matrix matrix_from_json(const json& j)
{
    const Index rows = static_cast<Index>(j.size());
    const Index cols = rows > 0 ? static_cast<Index>(j.at(0).size()) : 0;
    Matrix m(rows, cols);
    for (Index r = 0; r < rows; ++r) {
        const auto& row = j.at(static_cast<std::size_t>(r));
        if (static_cast<Index>(row.size()) != cols) throw invalid_argument_error("matrix_from_json: ragged matrix");
        for (Index c = 0; c < cols; ++c) {
            const auto& cell = row.at(static_cast<std::size_t>(c));
            m(r, c) = cell.is_null() ? kInf : cell.get<double>();
        }
    }
    return m;
}

inline Vector vector_from_json(const json& j)
{
    Vector v(static_cast<Index>(j.size()));
    for (Index i = 0; i < v.size(); ++i) v(i) = j.at(static_cast<std::size_t>(i)).get<double>();
    return v;
}

inline json active_set_to_json(const SelectedSet& s, const std::vector<std::string>& names)
{
    json out = json::array();
    for (const auto& [r, j] : s.entries) {
        out.push_back({{"component", r + 1},
                       {"covariate", names.at(static_cast<std::size_t>(j))},
                       {"index", j + 1}});
    }
    return out;
}

/**
 * Fit in both parameterizations. When column_scales is given the fit was
 * computed on standardized covariates; phi/rho/beta refer to that problem and
 * beta_original_scale divides beta column-wise by the scales.
 */
inline json fit_to_json(const FitResult& fit, const Dataset& data, const std::optional<Vector>& column_scales = {})
{
    const NaturalParams nat = fit.theta.to_natural();
    json j;
    j["version"] = kFormatVersion;
    j["kind"] = "fit";
    j["k"] = fit.theta.k();
    j["n"] = data.n();
    j["p"] = data.p();
    j["columns"] = data.column_names;
    j["lambda"] = fit.penalty.lambda;
    j["gamma"] = fit.penalty.gamma;
    if (fit.penalty.weights) j["weights"] = matrix_to_json(*fit.penalty.weights);
    j["phi"] = matrix_to_json(fit.theta.phi);
    j["rho"] = vector_to_json(fit.theta.rho);
    j["pi"] = vector_to_json(fit.theta.pi);
    j["beta"] = matrix_to_json(nat.beta);
    j["sigma"] = vector_to_json(nat.sigma);
    j["standardized"] = column_scales.has_value();
    if (column_scales) {
        j["column_scales"] = vector_to_json(*column_scales);
        j["beta_original_scale"] = matrix_to_json(nat.beta * column_scales->cwiseInverse().asDiagonal());
    }
    j["active_set"] = active_set_to_json(fit.active_set, data.column_names);
    j["criterion"] = fit.criterion();
    j["criterion_trace"] = fit.criterion_trace;
    j["n_iterations"] = fit.n_iterations;
    j["converged"] = fit.converged;
    j["stationarity_residual"] = fit.stationarity_residual;
    j["stationarity_heuristic"] = fit.penalty.gamma != 0.0;
    j["bic"] = bic(fit, data);
    j["d_e"] = effective_dof(fit.theta);
    j["warnings"] = fit.warnings;
    return j;
}

struct LoadedFit
{
    MixtureParams theta;
    PenaltySpec penalty;
};

inline LoadedFit fit_from_json(const json& j)
{
    if (j.at("version").get<int>() != kFormatVersion) {
        throw invalid_argument_error("fit_from_json: unsupported format version");
    }
    LoadedFit out;
    out.theta.phi = matrix_from_json(j.at("phi"));
    out.theta.rho = vector_from_json(j.at("rho"));
    out.theta.pi = vector_from_json(j.at("pi"));
    out.theta.validate();
    out.penalty.lambda = j.at("lambda").get<double>();
    out.penalty.gamma = j.at("gamma").get<double>();
    if (j.contains("weights")) out.penalty.weights = matrix_from_json(j.at("weights"));
    return out;
}

inline json record_to_json(const SelectionRecord& r)
{
    auto num = [](double v) -> json { return std::isfinite(v) ? json(v) : json(nullptr); };
    json j{{"k", r.k},
           {"lambda", r.lambda},
           {"gamma", r.gamma},
           {"bic", num(r.bic)},
           {"cv_loss", num(r.cv_loss)},
           {"d_e", r.d_e},
           {"criterion", num(r.criterion)},
           {"n_iterations", r.n_iterations},
           {"converged", r.converged}};
    j["failure"] = r.failure ? json(*r.failure) : json(nullptr);
    return j;
}

inline json selection_to_json(const SelectionResult& sel, const Dataset& data,
                              const std::optional<Vector>& column_scales = {})
{
    json j;
    j["version"] = kFormatVersion;
    j["kind"] = "selection";
    j["criterion_kind"] = to_string(sel.criterion_kind);
    const auto& b = sel.best();
    j["best"] = {{"k", b.k}, {"lambda", b.lambda}, {"gamma", b.gamma}};
    j["table"] = json::array();
    for (const auto& r : sel.table) j["table"].push_back(record_to_json(r));
    j["best_fit"] = fit_to_json(sel.best_fit, data, column_scales);
    return j;
}

inline json metrics_to_json(const RunMetrics& m)
{
    return {{"pred_loss", m.pred_loss}, {"tp", m.tp}, {"fp", m.fp}, {"tpr", m.tpr}, {"fpr", m.fpr}};
}

inline json quartiles_to_json(const Quartiles& q)
{
    return {{"q25", q.q25}, {"median", q.median}, {"q75", q.q75}};
}

inline json metric_summary_to_json(const MetricSummary& s)
{
    return {{"n", s.n},
            {"pred_loss", quartiles_to_json(s.pred_loss)},
            {"tp", quartiles_to_json(s.tp)},
            {"fp", quartiles_to_json(s.fp)},
            {"tpr", quartiles_to_json(s.tpr)},
            {"fpr", quartiles_to_json(s.fpr)}};
}

inline json study_to_json(const StudySummary& s)
{
    json j;
    j["version"] = kFormatVersion;
    j["kind"] = "study";
    j["model"] = {{"name", s.spec.name},
                  {"n", s.spec.n},
                  {"p_tot", s.spec.p_tot},
                  {"k", s.spec.k()},
                  {"snr", snr(s.spec)}};
    j["config"] = {{"runs", s.config.n_runs},
                   {"pipeline", s.config.pipeline == Pipeline::adaptive ? "adaptive" : "one-stage"},
                   {"selection", to_string(s.config.selection)},
                   {"seed", s.config.seed},
                   {"gamma", s.config.gamma},
                   {"grid", s.config.grid_size}};
    j["runs"] = json::array();
    for (const auto& r : s.runs) {
        json row{{"run", r.run}, {"seed", r.seed}};
        row["one_stage"] = r.one_stage ? metrics_to_json(*r.one_stage) : json(nullptr);
        row["adaptive"] = r.adaptive ? metrics_to_json(*r.adaptive) : json(nullptr);
        row["lambda_one_stage"] = std::isfinite(r.lambda_one_stage) ? json(r.lambda_one_stage) : json(nullptr);
        row["lambda_adaptive"] = std::isfinite(r.lambda_adaptive) ? json(r.lambda_adaptive) : json(nullptr);
        row["failure"] = r.failure ? json(*r.failure) : json(nullptr);
        j["runs"].push_back(std::move(row));
    }
    j["summary"] = json::object();
    if (s.one_stage) j["summary"]["one_stage"] = metric_summary_to_json(*s.one_stage);
    if (s.adaptive) j["summary"]["adaptive"] = metric_summary_to_json(*s.adaptive);
    j["n_failed"] = s.n_failed;
    return j;
}

/// One row per run and method: boxplot-ready long format.
inline void study_to_tsv(std::ostream& out, const StudySummary& s)
{
    out.precision(10);
    out << "model\tp_tot\trun\tmethod\tpred_loss\ttp\tfp\ttpr\tfpr\n";
    for (const auto& r : s.runs) {
        auto emit = [&](const char* method, const RunMetrics& m) {
            out << s.spec.name << '\t' << s.spec.p_tot << '\t' << r.run << '\t' << method << '\t' << m.pred_loss << '\t'
                << m.tp << '\t' << m.fp << '\t' << m.tpr << '\t' << m.fpr << '\n';
        };
        if (r.one_stage) emit("FMRLasso", *r.one_stage);
        if (r.adaptive) emit("FMRAdapt", *r.adaptive);
    }
}

inline json bench_variant_to_json(const BenchVariant& v)
{
    return {{"bic", v.bic},
            {"cpu_seconds", v.cpu_seconds},
            {"em_iterations", v.em_iterations},
            {"converged", v.converged},
            {"stationarity_residual", v.stationarity_residual}};
}

inline json bench_to_json(const BenchResult& b)
{
    json j;
    j["version"] = kFormatVersion;
    j["kind"] = "bench";
    j["model"] = {{"name", b.spec.name}, {"n", b.config.n > 0 ? b.config.n : b.spec.n}, {"p_tot", b.spec.p_tot}};
    j["reps"] = b.config.reps;
    j["seed"] = b.config.seed;
    j["active_set_period"] = b.config.opts.active_set_period;
    j["rows"] = json::array();
    for (const auto& r : b.rows) {
        j["rows"].push_back({{"lambda", r.lambda},
                             {"active_set", bench_variant_to_json(r.active)},
                             {"full", bench_variant_to_json(r.full)}});
    }
    j["bic_optimal_row"] = b.best_index;
    j["speedup_at_bic_optimum"] = b.speedup_at_best();
    return j;
}

inline void bench_to_tsv(std::ostream& out, const BenchResult& b)
{
    out.precision(8);
    out << "lambda\tbic_active\tcpu_s_active\tem_iters_active\tbic_full\tcpu_s_full\tem_iters_full\n";
    for (const auto& r : b.rows) {
        out << r.lambda << '\t' << r.active.bic << '\t' << r.active.cpu_seconds << '\t' << r.active.em_iterations << '\t'
            << r.full.bic << '\t' << r.full.cpu_seconds << '\t' << r.full.em_iterations << '\n';
    }
}

inline json error_to_json(const std::string& kind, const std::string& message)
{
    return {{"version", kFormatVersion}, {"error", {{"kind", kind}, {"message", message}}}};
}

} // namespace io
} // namespace fmrlasso
