#include "bsvlab/scenario.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "bsvlab/report.hpp"

namespace bsvlab {

using nlohmann::json;

namespace {

const std::set<std::string> kChecks{"simulate",     "solve",          "apriori",         "viability",
                                    "viability-empirical", "comparison", "comparison-m1", "comparison-stacked",
                                    "comparison-empirical", "structural", "matrix"};

// ---- field access with JSON-pointer error paths ----------------------------

const json& need(const json& j, const std::string& key, const std::string& path)
{
    if (!j.is_object() || !j.contains(key)) {
        throw ConfigError(path + "/" + key, "missing required field");
    }
    return j.at(key);
}

double as_number(const json& j, const std::string& path)
{
    if (!j.is_number()) {
        throw ConfigError(path, "expected a number");
    }
    const double v = j.get<double>();
    if (!std::isfinite(v)) {
        throw ConfigError(path, "expected a finite number");
    }
    return v;
}

std::uint64_t as_count(const json& j, const std::string& path)
{
    if (!j.is_number_integer() && !j.is_number_unsigned()) {
        throw ConfigError(path, "expected a non-negative integer");
    }
    if (j.is_number_integer() && j.get<std::int64_t>() < 0) {
        throw ConfigError(path, "expected a non-negative integer");
    }
    return j.get<std::uint64_t>();
}

double num_or(const json& j, const std::string& key, double def, const std::string& path)
{
    return j.contains(key) ? as_number(j.at(key), path + "/" + key) : def;
}

Vec as_vec(const json& j, const std::string& path)
{
    if (j.is_number()) {
        Vec v(1);
        v(0) = as_number(j, path);
        return v;
    }
    if (!j.is_array()) {
        throw ConfigError(path, "expected an array of numbers");
    }
    Vec v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) {
        v(static_cast<Eigen::Index>(i)) = as_number(j[i], path + "/" + std::to_string(i));
    }
    return v;
}

Mat as_mat(const json& j, const std::string& path, Eigen::Index rows, Eigen::Index cols)
{
    if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows) {
        throw ConfigError(path, "expected " + std::to_string(rows) + " rows");
    }
    Mat m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const auto& row = j[static_cast<std::size_t>(r)];
        const std::string rp = path + "/" + std::to_string(r);
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
            throw ConfigError(rp, "expected " + std::to_string(cols) + " columns");
        }
        for (Eigen::Index c = 0; c < cols; ++c) {
            m(r, c) = as_number(row[static_cast<std::size_t>(c)], rp + "/" + std::to_string(c));
        }
    }
    return m;
}

Vec vec_of_size(const json& j, const std::string& path, int n)
{
    Vec v = as_vec(j, path);
    if (v.size() != n) {
        throw ConfigError(path, "expected length " + std::to_string(n));
    }
    return v;
}

std::string type_of(const json& j, const std::string& path)
{
    const auto& t = need(j, "type", path);
    if (!t.is_string()) {
        throw ConfigError(path + "/type", "expected a string");
    }
    return t.get<std::string>();
}

json vec_json(const Vec& v)
{
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        a.push_back(v(i));
    }
    return a;
}

json mat_json(const Mat& m)
{
    json a = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        a.push_back(vec_json(m.row(r).transpose()));
    }
    return a;
}

// ---- component builders ---------------------------------------------------

SetSpec build_set(const json& j, const std::string& path)
{
    const std::string type = type_of(j, path);
    SetSpec s;
    try {
        if (type == "ball") {
            const Vec c = as_vec(need(j, "center", path), path + "/center");
            s.body = ConvexBody::ball(c, num_or(j, "radius", 1.0, path));
        } else if (type == "box") {
            s.body = ConvexBody::box(as_vec(need(j, "lo", path), path + "/lo"), as_vec(need(j, "hi", path), path + "/hi"));
        } else if (type == "halfspaces") {
            const Vec b = as_vec(need(j, "offsets", path), path + "/offsets");
            const auto& nj = need(j, "normals", path);
            const Eigen::Index cols = nj.is_array() && !nj.empty() && nj[0].is_array()
                                          ? static_cast<Eigen::Index>(nj[0].size())
                                          : 0;
            s.body = ConvexBody::halfspaces(as_mat(nj, path + "/normals", b.size(), cols), b);
        } else if (type == "orthant") {
            s.body = ConvexBody::orthant_product(static_cast<int>(as_count(need(j, "positive", path), path + "/positive")),
                                                 static_cast<int>(j.contains("free") ? as_count(j["free"], path + "/free") : 0));
        } else if (type == "psd") {
            s.body = ConvexBody::psd_cone(static_cast<int>(as_count(need(j, "order", path), path + "/order")));
        } else if (type == "points") {
            const auto& pj = need(j, "points", path);
            if (!pj.is_array() || pj.empty()) {
                throw ConfigError(path + "/points", "expected a non-empty array of points");
            }
            for (std::size_t i = 0; i < pj.size(); ++i) {
                s.points.push_back(as_vec(pj[i], path + "/points/" + std::to_string(i)));
                if (s.points.back().size() != s.points.front().size()) {
                    throw ConfigError(path + "/points/" + std::to_string(i), "points must share one dimension");
                }
            }
        } else {
            throw ConfigError(path + "/type", "unknown set type '" + type + "'");
        }
    } catch (const std::invalid_argument& e) {
        throw ConfigError(path, e.what());
    }
    return s;
}

Generator build_generator(const json& j, const std::string& path, const Scenario& sc)
{
    const std::string type = type_of(j, path);
    const int m = sc.dim;
    const int d = sc.brownian_dim;
    const std::size_t atoms = sc.marks.size();
    try {
        if (type == "zero") {
            return zero_gen(m, d, atoms);
        }
        if (type == "projection_drift") {
            if (!sc.set || !sc.set->body) {
                throw ConfigError(path, "projection_drift needs a convex 'set'");
            }
            return projection_drift_gen(*sc.set->body, d, atoms);
        }
        if (type == "scaled_jump") {
            if (m != 1 || atoms != 1) {
                throw ConfigError(path, "scaled_jump needs dim 1 and exactly one atom");
            }
            return scaled_jump_gen(as_number(need(j, "c", path), path + "/c"), d, sc.marks.weight(0));
        }
        if (type == "affine") {
            AffineCoefficients co;
            co.a = j.contains("A") ? as_mat(j["A"], path + "/A", m, m) : Mat::Zero(m, m);
            co.b = j.contains("B") ? as_mat(j["B"], path + "/B", m, m * d) : Mat::Zero(m, m * d);
            for (std::size_t a = 0; a < atoms; ++a) {
                const std::string cp = path + "/C/" + std::to_string(a);
                if (j.contains("C")) {
                    if (!j["C"].is_array() || j["C"].size() != atoms) {
                        throw ConfigError(path + "/C", "expected one m x m matrix per atom");
                    }
                    co.c.push_back(as_mat(j["C"][a], cp, m, m));
                } else {
                    co.c.push_back(Mat::Zero(m, m));
                }
            }
            co.offset = j.contains("b") ? vec_of_size(j["b"], path + "/b", m) : Vec::Zero(m);
            co.offset_slope = j.contains("b_slope") ? vec_of_size(j["b_slope"], path + "/b_slope", m) : Vec::Zero(m);
            return affine_gen(co, d, sc.marks);
        }
        if (type == "constant" || type == "constant_matrix") {
            Vec v;
            if (type == "constant") {
                v = vec_of_size(need(j, "value", path), path + "/value", m);
            } else {
                if (sc.matrix_order < 1) {
                    throw ConfigError(path, "constant_matrix needs 'matrix_order'");
                }
                v = sym_to_vec(SymMatrix(as_mat(need(j, "value", path), path + "/value", sc.matrix_order, sc.matrix_order)));
            }
            return Generator("constant", m, d, atoms, 0.0,
                             std::vector<DependencyFlags>(static_cast<std::size_t>(m), DependencyFlags::none(m, atoms)),
                             [v](double, const Vec&, const Mat&, const Mat&) { return v; });
        }
    } catch (const std::invalid_argument& e) {
        throw ConfigError(path, e.what());
    }
    throw ConfigError(path + "/type", "unknown generator type '" + type + "'");
}

TerminalCondition build_terminal(const json& j, const std::string& path, const Scenario& sc)
{
    const std::string type = type_of(j, path);
    const int m = sc.dim;
    const int d = sc.brownian_dim;
    const auto atoms = static_cast<int>(sc.marks.size());
    TerminalCondition xi;
    xi.name = type;
    xi.m = m;
    if (type == "zero") {
        xi.fn = [m](std::span<const double>, std::span<const std::int32_t>) { return Vec(Vec::Zero(m)); };
    } else if (type == "constant") {
        const Vec v = vec_of_size(need(j, "value", path), path + "/value", m);
        xi.fn = [v](std::span<const double>, std::span<const std::int32_t>) { return v; };
    } else if (type == "brownian") {
        const auto c = j.contains("component") ? static_cast<int>(as_count(j["component"], path + "/component")) : 0;
        if (m != 1 || c >= d) {
            throw ConfigError(path, "brownian terminal needs dim 1 and a valid component");
        }
        xi.fn = [c](std::span<const double> w, std::span<const std::int32_t>) {
            Vec v(1);
            v(0) = w[static_cast<std::size_t>(c)];
            return v;
        };
    } else if (type == "jump_count") {
        const auto a = j.contains("atom") ? static_cast<int>(as_count(j["atom"], path + "/atom")) : 0;
        if (m != 1 || a >= atoms) {
            throw ConfigError(path, "jump_count terminal needs dim 1 and a valid atom");
        }
        const double scale = num_or(j, "scale", 1.0, path);
        const double offset = num_or(j, "offset", 0.0, path);
        xi.fn = [a, scale, offset](std::span<const double>, std::span<const std::int32_t> n) {
            Vec v(1);
            v(0) = offset + scale * n[static_cast<std::size_t>(a)];
            return v;
        };
    } else if (type == "circle") {
        if (m != 2) {
            throw ConfigError(path, "circle terminal needs dim 2");
        }
        xi.fn = [](std::span<const double> w, std::span<const std::int32_t>) {
            Vec v(2);
            v << std::cos(w[0]), std::sin(w[0]);
            return v;
        };
    } else if (type == "sign") {
        if (m != 1) {
            throw ConfigError(path, "sign terminal needs dim 1");
        }
        xi.fn = [](std::span<const double> w, std::span<const std::int32_t>) {
            Vec v(1);
            v(0) = w[0] >= 0.0 ? 1.0 : -1.0;
            return v;
        };
    } else if (type == "affine") {
        const Mat wc = j.contains("W") ? as_mat(j["W"], path + "/W", m, d) : Mat::Zero(m, d);
        const Mat nc = j.contains("N") ? as_mat(j["N"], path + "/N", m, atoms) : Mat::Zero(m, atoms);
        const Vec c = j.contains("c") ? vec_of_size(j["c"], path + "/c", m) : Vec::Zero(m);
        xi.fn = [wc, nc, c, d, atoms](std::span<const double> w, std::span<const std::int32_t> n) {
            Vec v = c;
            for (int k = 0; k < d; ++k) {
                v += wc.col(k) * w[static_cast<std::size_t>(k)];
            }
            for (int k = 0; k < atoms; ++k) {
                v += nc.col(k) * static_cast<double>(n[static_cast<std::size_t>(k)]);
            }
            return v;
        };
    } else {
        throw ConfigError(path + "/type", "unknown terminal type '" + type + "'");
    }
    return xi;
}

json witness_json(const Witness& w)
{
    return json{{"t", w.sample.t},   {"y", vec_json(w.sample.y)},   {"y2", vec_json(w.sample.y2)},
                {"z", mat_json(w.sample.z)}, {"z2", mat_json(w.sample.z2)}, {"u", mat_json(w.sample.u)},
                {"u2", mat_json(w.sample.u2)}, {"lhs", w.lhs}, {"rhs", w.rhs}, {"margin", w.margin}, {"c", w.c}};
}

// ---- run-time helpers --------------------------------------------------------

struct RunContext {
    const Scenario& sc;
    bool write;
    std::filesystem::path dir;
    RunManifest manifest;
    std::shared_ptr<const DrivingPaths> paths;
    json results = json::object();
    Table verdicts{{"check", "outcome", "c_found", "c_max", "sup_c_required", "samples", "skipped_undefined",
                    "boundary_layer", "witness_margin", "note"},
                   {}};

    void emit(const std::string& file, const std::string& content)
    {
        if (!write) {
            return;
        }
        write_text((dir / file).string(), content);
        manifest.files.push_back(file);
    }

    const DrivingPaths& get_paths()
    {
        if (!paths) {
            paths = std::make_shared<const DrivingPaths>(
                simulate_paths(sc.grid, sc.marks, sc.brownian_dim, sc.paths, sc.seed));
        }
        return *paths;
    }

    void record(const std::string& check, const ConditionVerdict& v)
    {
        json vj = verdict_to_json(v);
        vj["replay"] = "bsvlab run --config " + (dir / "config.json").string();
        results[check] = vj;
        verdicts.add_row({check, to_string(v.outcome), fmt(v.c_found), fmt(v.c_max), fmt(v.sup_c_required),
                          std::to_string(v.samples), std::to_string(v.skipped_undefined),
                          std::to_string(v.boundary_layer), v.witness ? fmt(v.witness->margin) : "", v.note});
    }

    const Generator& need_gen(const char* check) const
    {
        if (!sc.gen) {
            throw ConfigError("/generator", std::string("check '") + check + "' needs a generator");
        }
        return *sc.gen;
    }
    const Generator& second_gen() const { return sc.gen2 ? *sc.gen2 : *sc.gen; }
    const TerminalCondition& need_xi(const char* check) const
    {
        if (!sc.xi) {
            throw ConfigError("/terminal", std::string("check '") + check + "' needs a terminal condition");
        }
        return *sc.xi;
    }
    const SetSpec& need_set(const char* check) const
    {
        if (!sc.set) {
            throw ConfigError("/set", std::string("check '") + check + "' needs a set");
        }
        return *sc.set;
    }
};

void solution_table(RunContext& ctx, const BsdeSolution& sol, const std::string& stem)
{
    const int m = sol.dim();
    std::vector<std::string> header{"t"};
    for (int k = 0; k < m; ++k) {
        header.push_back("mean_y" + std::to_string(k + 1));
    }
    for (int k = 0; k < m; ++k) {
        header.push_back("std_y" + std::to_string(k + 1));
    }
    const bool with_dist = ctx.sc.set.has_value() && ctx.sc.set->dim() == m;
    if (with_dist) {
        header.emplace_back("mean_dist");
    }
    Table t{header, {}};
    std::optional<DistanceStats> ds;
    if (with_dist) {
        ds = distance_stats(sol, [&](const Vec& y) { return ctx.sc.set->distance(y); });
    }
    std::vector<double> xs;
    std::vector<PlotSeries> series(static_cast<std::size_t>(m));
    for (std::size_t i = 0; i <= sol.steps(); ++i) {
        const Vec mu = sol.mean_y(i);
        const Vec sd = sol.std_y(i);
        std::vector<std::string> row{fmt(sol.paths().grid().node(i))};
        for (int k = 0; k < m; ++k) {
            row.push_back(fmt(mu(k)));
        }
        for (int k = 0; k < m; ++k) {
            row.push_back(fmt(sd(k)));
        }
        if (ds) {
            row.push_back(fmt(ds->mean[i]));
        }
        t.add_row(std::move(row));
        xs.push_back(sol.paths().grid().node(i));
        for (int k = 0; k < m; ++k) {
            auto& s = series[static_cast<std::size_t>(k)];
            s.label = "mean Y" + std::to_string(k + 1) + " +/- 1 sd";
            s.y.push_back(mu(k));
            s.band_low.push_back(mu(k) - sd(k));
            s.band_high.push_back(mu(k) + sd(k));
        }
    }
    ctx.emit(stem + ".csv", t.to_csv());
    ctx.emit(stem + ".svg", svg_line_plot("Y_t across paths", "t", xs, series));
}

void add_acceptance(RunContext& ctx, std::string name, bool pass, std::string detail)
{
    ctx.manifest.acceptance.push_back({std::move(name), pass, std::move(detail)});
    if (!pass) {
        ctx.manifest.failed = true;
    }
}

void evaluate_expectations(RunContext& ctx)
{
    const json& ex = ctx.sc.config.value("expect", json::object());
    const json& r = ctx.results;
    if (ex.contains("y0")) {
        const Vec want = as_vec(ex["y0"]["value"], "/expect/y0/value");
        const double tol = as_number(ex["y0"]["tol"], "/expect/y0/tol");
        bool ok = r.contains("solve");
        std::string detail = "no solve result";
        if (ok) {
            const Vec got = as_vec(r["solve"]["y0"], "/results/solve/y0");
            ok = got.size() == want.size() && (got - want).cwiseAbs().maxCoeff() <= tol;
            detail = "Y0 = " + fmt(got(0)) + ", expected " + fmt(want(0)) + " +/- " + fmt(tol);
        }
        add_acceptance(ctx, "y0", ok, detail);
    }
    if (ex.contains("verdicts")) {
        for (const auto& [check, want] : ex["verdicts"].items()) {
            const bool have = r.contains(check);
            const std::string got = have ? r[check].value("outcome", std::string("?")) : std::string("missing");
            add_acceptance(ctx, "verdict " + check, got == want.get<std::string>(),
                           check + " " + got + ", expected " + want.get<std::string>());
        }
    }
    if (ex.contains("c_found_max")) {
        for (const auto& [check, lim] : ex["c_found_max"].items()) {
            const bool have = r.contains(check);
            const double c = have ? r[check].value("c_found", INFINITY) : INFINITY;
            add_acceptance(ctx, "c_found " + check, have && c <= lim.get<double>(),
                           "C_found = " + fmt(c) + ", limit " + fmt(lim.get<double>()));
        }
    }
    const auto dist_check = [&](const char* key, bool upper) {
        if (!ex.contains(key)) {
            return;
        }
        const double lim = as_number(ex[key], std::string("/expect/") + key);
        const bool have = r.contains("viability-empirical");
        const double v = have ? r["viability-empirical"]["max_mean_dist"].get<double>() : NAN;
        add_acceptance(ctx, key, have && (upper ? v <= lim : v >= lim),
                       "max_t mean d_K(Y_t) = " + fmt(v) + (upper ? " <= " : " >= ") + fmt(lim));
    };
    dist_check("max_mean_dist_max", true);
    dist_check("max_mean_dist_min", false);
    if (ex.contains("min_gap_min")) {
        const double lim = as_number(ex["min_gap_min"], "/expect/min_gap_min");
        const bool have = r.contains("comparison-empirical");
        const double v = have ? r["comparison-empirical"]["min_gap"].get<double>() : NAN;
        add_acceptance(ctx, "min_gap", have && v >= lim, "min gap " + fmt(v) + " >= " + fmt(lim));
    }
    if (ex.contains("violation_fraction")) {
        const auto& vf = ex["violation_fraction"];
        const double t = as_number(vf["t"], "/expect/violation_fraction/t");
        const double want = as_number(vf["value"], "/expect/violation_fraction/value");
        const double tol = as_number(vf["tol"], "/expect/violation_fraction/tol");
        const bool have = r.contains("comparison-empirical");
        double got = NAN;
        if (have) {
            const auto& fs = r["comparison-empirical"]["violation_fraction"];
            got = fs[ctx.sc.grid.nearest_node(t)].get<double>();
        }
        add_acceptance(ctx, "violation_fraction", have && std::fabs(got - want) <= tol,
                       "fraction at t=" + fmt(t) + " is " + fmt(got) + ", expected " + fmt(want) + " +/- " + fmt(tol));
    }
    if (ex.contains("apriori_m_max")) {
        const double lim = as_number(ex["apriori_m_max"], "/expect/apriori_m_max");
        const bool have = r.contains("apriori");
        const double v = have ? r["apriori"]["fitted_m"].get<double>() : NAN;
        add_acceptance(ctx, "apriori_m", have && v <= lim, "fitted M = " + fmt(v) + " <= " + fmt(lim));
    }
    // Without an expectation a falsified verdict counts as a failure.
    for (const auto& [check, res] : r.items()) {
        const bool expected = ex.contains("verdicts") && ex["verdicts"].contains(check);
        if (!expected && res.is_object() && res.value("outcome", std::string()) == "falsified") {
            ctx.manifest.failed = true;
        }
    }
}

}  // namespace

ConfigError::ConfigError(std::string field, const std::string& what)
    : std::runtime_error("invalid config at " + (field.empty() ? std::string("/") : field) + ": " + what),
      field_(std::move(field))
{
}

double SetSpec::distance(const Vec& y) const
{
    if (body) {
        return std::sqrt(dist2(*body, y));
    }
    return dist_to_points(points, y);
}

int SetSpec::dim() const
{
    return body ? body->dim() : static_cast<int>(points.front().size());
}

std::uint64_t fnv1a64(std::string_view data)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

json verdict_to_json(const ConditionVerdict& v)
{
    json j{{"condition", v.condition},
           {"outcome", to_string(v.outcome)},
           {"c_found", v.c_found},
           {"c_max", v.c_max},
           {"sup_c_required", v.sup_c_required},
           {"samples", v.samples},
           {"skipped_undefined", v.skipped_undefined},
           {"boundary_layer", v.boundary_layer},
           {"note", v.note}};
    if (v.witness) {
        j["witness"] = witness_json(*v.witness);
    }
    return j;
}

Scenario parse_scenario(const json& doc)
{
    if (!doc.is_object()) {
        throw ConfigError("", "config must be a JSON object");
    }
    Scenario sc;
    json cfg = doc;
    const auto version = cfg.contains("schema_version") ? as_count(cfg["schema_version"], "/schema_version") : 1;
    if (version != static_cast<std::uint64_t>(kSchemaVersion)) {
        throw ConfigError("/schema_version", "unsupported schema version " + std::to_string(version));
    }
    cfg["schema_version"] = kSchemaVersion;
    sc.name = cfg.value("name", std::string("scenario"));
    cfg["name"] = sc.name;

    const json grid = cfg.value("grid", json::object());
    const double horizon = num_or(grid, "T", 1.0, "/grid");
    const auto steps = grid.contains("steps") ? as_count(grid["steps"], "/grid/steps") : 50;
    if (!(horizon > 0.0)) {
        throw ConfigError("/grid/T", "horizon must be positive");
    }
    if (steps == 0) {
        throw ConfigError("/grid/steps", "empty grid");
    }
    sc.grid = TimeGrid::uniform(horizon, steps);
    cfg["grid"] = {{"T", horizon}, {"steps", steps}};

    const json marks = cfg.value("marks", json{{"atoms", json::array({1.0})}, {"weights", json::array({1.0})}});
    {
        const auto& aj = need(marks, "atoms", "/marks");
        const Vec w = as_vec(need(marks, "weights", "/marks"), "/marks/weights");
        if (!aj.is_array()) {
            throw ConfigError("/marks/atoms", "expected an array");
        }
        std::vector<Vec> atoms;
        for (std::size_t i = 0; i < aj.size(); ++i) {
            atoms.push_back(as_vec(aj[i], "/marks/atoms/" + std::to_string(i)));
        }
        try {
            sc.marks = FiniteMarkMeasure(atoms, std::vector<double>(w.data(), w.data() + w.size()));
        } catch (const std::invalid_argument& e) {
            throw ConfigError("/marks", e.what());
        }
    }
    cfg["marks"] = marks;

    sc.brownian_dim = static_cast<int>(cfg.contains("brownian_dim") ? as_count(cfg["brownian_dim"], "/brownian_dim") : 1);
    if (sc.brownian_dim < 1) {
        throw ConfigError("/brownian_dim", "must be >= 1");
    }
    cfg["brownian_dim"] = sc.brownian_dim;
    sc.matrix_order = static_cast<int>(cfg.contains("matrix_order") ? as_count(cfg["matrix_order"], "/matrix_order") : 0);

    if (cfg.contains("set")) {
        sc.set = build_set(cfg["set"], "/set");
    }
    if (cfg.contains("dim")) {
        sc.dim = static_cast<int>(as_count(cfg["dim"], "/dim"));
    } else if (sc.matrix_order > 0) {
        sc.dim = sym_vec_size(sc.matrix_order);
    } else if (sc.set) {
        sc.dim = sc.set->dim();
    }
    if (sc.dim < 1) {
        throw ConfigError("/dim", "must be >= 1");
    }
    if (sc.matrix_order > 0 && sc.dim != sym_vec_size(sc.matrix_order)) {
        throw ConfigError("/dim", "must equal order(order+1)/2 for matrix scenarios");
    }
    cfg["dim"] = sc.dim;

    if (cfg.contains("generator")) {
        sc.gen = build_generator(cfg["generator"], "/generator", sc);
    }
    if (cfg.contains("generator2")) {
        sc.gen2 = build_generator(cfg["generator2"], "/generator2", sc);
    }
    if (cfg.contains("terminal")) {
        sc.xi = build_terminal(cfg["terminal"], "/terminal", sc);
    }
    if (cfg.contains("terminal2")) {
        sc.xi2 = build_terminal(cfg["terminal2"], "/terminal2", sc);
    }

    const json solver = cfg.value("solver", json::object());
    sc.paths = solver.contains("paths") ? as_count(solver["paths"], "/solver/paths") : 10000;
    if (sc.paths == 0) {
        throw ConfigError("/solver/paths", "zero paths");
    }
    sc.solver.basis.degree =
        static_cast<int>(solver.contains("basis_degree") ? as_count(solver["basis_degree"], "/solver/basis_degree") : 2);
    sc.solver.basis.prune_degenerate = solver.value("prune", true);
    const std::string mode = solver.value("mode", std::string("explicit"));
    if (mode == "explicit") {
        sc.solver.mode = SchemeMode::explicit_euler;
    } else if (mode == "implicit") {
        sc.solver.mode = SchemeMode::implicit;
    } else {
        throw ConfigError("/solver/mode", "expected 'explicit' or 'implicit'");
    }
    cfg["solver"] = {{"paths", sc.paths},
                     {"basis_degree", sc.solver.basis.degree},
                     {"prune", sc.solver.basis.prune_degenerate},
                     {"mode", mode}};

    sc.seed = cfg.contains("seed") ? as_count(cfg["seed"], "/seed") : 1;
    cfg["seed"] = sc.seed;

    const json sampler = cfg.value("sampler", json::object());
    sc.sampler.seed = sampler.contains("seed") ? as_count(sampler["seed"], "/sampler/seed") : sc.seed;
    sc.sampler.samples = sampler.contains("samples") ? as_count(sampler["samples"], "/sampler/samples") : 4000;
    sc.sampler.horizon = horizon;
    sc.sampler.y_range = num_or(sampler, "y_range", 5.0, "/sampler");
    sc.sampler.z_range = num_or(sampler, "z_range", 3.0, "/sampler");
    sc.sampler.u_range = num_or(sampler, "u_range", 3.0, "/sampler");
    sc.sampler.boundary_fraction = num_or(sampler, "boundary_fraction", 0.3, "/sampler");
    if (sc.sampler.samples == 0) {
        throw ConfigError("/sampler/samples", "must be >= 1");
    }
    if (sc.sampler.boundary_fraction < 0.0 || sc.sampler.boundary_fraction > 1.0) {
        throw ConfigError("/sampler/boundary_fraction", "must lie in [0, 1]");
    }
    cfg["sampler"] = {{"seed", sc.sampler.seed},
                      {"samples", sc.sampler.samples},
                      {"y_range", sc.sampler.y_range},
                      {"z_range", sc.sampler.z_range},
                      {"u_range", sc.sampler.u_range},
                      {"boundary_fraction", sc.sampler.boundary_fraction}};
    sc.c_max = num_or(cfg, "c_max", kDefaultCMax, "");
    if (!(sc.c_max >= 0.0)) {
        throw ConfigError("/c_max", "must be >= 0");
    }
    cfg["c_max"] = sc.c_max;

    const json checks = cfg.value("checks", json::array({"solve"}));
    if (!checks.is_array()) {
        throw ConfigError("/checks", "expected an array of check names");
    }
    for (std::size_t i = 0; i < checks.size(); ++i) {
        if (!checks[i].is_string() || !kChecks.contains(checks[i].get<std::string>())) {
            throw ConfigError("/checks/" + std::to_string(i), "unknown check");
        }
        sc.checks.push_back(checks[i].get<std::string>());
    }
    cfg["checks"] = checks;
    sc.output_dir = cfg.value("output_dir", std::string("bsvlab-out/") + sc.name);
    cfg["output_dir"] = sc.output_dir;
    sc.config = std::move(cfg);
    return sc;
}

Scenario load_scenario(const std::string& path)
{
    std::ifstream f(path);
    if (!f) {
        throw ConfigError("", "cannot open " + path);
    }
    json doc;
    try {
        doc = json::parse(f);
    } catch (const json::parse_error& e) {
        throw ConfigError("", std::string("JSON parse error: ") + e.what());
    }
    return parse_scenario(doc);
}

std::vector<std::string> preset_names()
{
    return {"example28", "remark34a", "remark34b", "thm25-demo"};
}

json preset_config(const std::string& name)
{
    const json unit_marks{{"atoms", json::array({1.0})}, {"weights", json::array({1.0})}};
    if (name == "example28") {
        return {{"name", name},
                {"grid", {{"T", 1.0}, {"steps", 50}}},
                {"marks", unit_marks},
                {"brownian_dim", 1},
                {"set", {{"type", "ball"}, {"center", {0.0, 0.0}}, {"radius", 1.0}}},
                {"generator", {{"type", "projection_drift"}}},
                {"terminal", {{"type", "circle"}}},
                {"solver", {{"paths", 100000}, {"basis_degree", 2}}},
                {"seed", 2808},
                {"checks", {"viability", "viability-empirical", "solve"}},
                {"expect", {{"c_found_max", {{"viability", 4.01}}}, {"max_mean_dist_max", 0.05}}}};
    }
    if (name == "remark34a" || name == "remark34b") {
        const bool a = name == "remark34a";
        json expect{{"y0", {{"value", {a ? 0.5 : -1.0}}, {"tol", 0.02}}},
                    {"verdicts",
                     {{"comparison-m1", a ? "certified" : "falsified"},
                      {"comparison", a ? "certified" : "falsified"},
                      {"comparison-stacked", a ? "certified" : "falsified"}}}};
        if (a) {
            expect["min_gap_min"] = -0.02;
            expect["apriori_m_max"] = 0.3;
        } else {
            expect["violation_fraction"] = {{"t", 0.5}, {"value", 0.6065}, {"tol", 0.03}};
        }
        json checks = a ? json{"solve", "apriori", "comparison-m1", "comparison", "comparison-stacked",
                               "comparison-empirical"}
                        : json{"solve", "comparison-m1", "comparison", "comparison-stacked", "comparison-empirical"};
        return {{"name", name},
                {"grid", {{"T", 1.0}, {"steps", 50}}},
                {"marks", unit_marks},
                {"brownian_dim", 1},
                {"dim", 1},
                {"generator", {{"type", "scaled_jump"}, {"c", a ? 0.5 : 2.0}}},
                {"terminal", {{"type", "jump_count"}, {"atom", 0}}},
                {"terminal2", {{"type", "zero"}}},
                {"solver", {{"paths", 200000}, {"basis_degree", 2}}},
                {"seed", a ? 341 : 342},
                {"checks", checks},
                {"expect", expect}};
    }
    if (name == "thm25-demo") {
        return {{"name", name},
                {"grid", {{"T", 1.0}, {"steps", 50}}},
                {"marks", unit_marks},
                {"brownian_dim", 1},
                {"dim", 1},
                {"set", {{"type", "points"}, {"points", {-1.0, 1.0}}}},
                {"generator", {{"type", "zero"}}},
                {"terminal", {{"type", "sign"}}},
                {"solver", {{"paths", 50000}, {"basis_degree", 2}}},
                {"seed", 25},
                {"checks", {"viability-empirical"}},
                {"expect", {{"max_mean_dist_min", 0.9}}}};
    }
    throw std::invalid_argument("unknown preset '" + name + "'");
}

void apply_overrides(json& doc, const Overrides& o)
{
    if (o.seed) {
        doc["seed"] = *o.seed;
        if (doc.contains("sampler")) {
            doc["sampler"].erase("seed");
        }
    }
    if (o.paths) {
        doc["solver"]["paths"] = *o.paths;
    }
    if (o.steps) {
        doc["grid"]["steps"] = *o.steps;
    }
    if (o.out) {
        doc["output_dir"] = *o.out;
    }
    if (o.checks) {
        doc["checks"] = *o.checks;
    }
}

RunManifest run_scenario(const Scenario& sc, bool write_files)
{
    const auto started = std::chrono::steady_clock::now();
    RunContext ctx{sc, write_files, std::filesystem::path(sc.output_dir), {}, nullptr};
    if (write_files) {
        std::filesystem::create_directories(ctx.dir);
        ctx.emit("config.json", sc.config.dump(2) + "\n");
    }

    for (const auto& check : sc.checks) {
        if (check == "simulate") {
            const auto& p = ctx.get_paths();
            Table t{{"step", "t", "mean_dW1", "var_dW1"}, {}};
            for (std::size_t j = 0; j < p.atom_count(); ++j) {
                t.header.push_back("mean_count" + std::to_string(j + 1));
            }
            for (std::size_t i = 0; i < p.steps(); ++i) {
                double s = 0.0, ss = 0.0;
                std::vector<double> cnt(p.atom_count(), 0.0);
                for (std::size_t q = 0; q < p.n_paths(); ++q) {
                    const double w = p.dW(q, i)[0];
                    s += w;
                    ss += w * w;
                    const auto c = p.counts(q, i);
                    for (std::size_t j = 0; j < cnt.size(); ++j) {
                        cnt[j] += c[j];
                    }
                }
                const double n = static_cast<double>(p.n_paths());
                const double mean = s / n;
                std::vector<std::string> row{std::to_string(i), fmt(p.grid().node(i)), fmt(mean),
                                             fmt(n > 1 ? (ss - n * mean * mean) / (n - 1) : 0.0)};
                for (double c : cnt) {
                    row.push_back(fmt(c / n));
                }
                t.add_row(std::move(row));
            }
            ctx.emit("simulate.csv", t.to_csv());
            ctx.results["simulate"] = {{"paths", p.n_paths()}, {"steps", p.steps()}};
        } else if (check == "solve") {
            ctx.get_paths();
            const auto sol = solve_backward(ctx.need_gen("solve"), ctx.need_xi("solve"), ctx.paths, sc.solver);
            solution_table(ctx, sol, "solution");
            ctx.results["solve"] = {{"y0", vec_json(sol.y0)}, {"y0_stderr", vec_json(sol.y0_stderr)},
                                    {"warnings", sol.warnings}};
        } else if (check == "apriori") {
            ctx.get_paths();
            const auto& xi = ctx.need_xi("apriori");
            const auto sol = solve_backward(ctx.need_gen("apriori"), xi, ctx.paths, sc.solver);
            const auto rep = apriori_diagnostics(sol, xi, sc.solver);
            Table t{{"t", "dev_y", "dev_z", "dev_u", "z_energy", "u_energy", "m_times_remaining"}, {}};
            std::vector<double> total, bound;
            for (std::size_t i = 0; i < rep.t.size(); ++i) {
                const double rem = sc.grid.horizon() - rep.t[i];
                t.add_row({fmt(rep.t[i]), fmt(rep.dev_y[i]), fmt(rep.dev_z[i]), fmt(rep.dev_u[i]),
                           fmt(rep.z_energy[i]), fmt(rep.u_energy[i]), fmt(rep.fitted_m * rem)});
                total.push_back(rep.dev_y[i] + rep.dev_z[i] + rep.dev_u[i]);
                bound.push_back(rep.fitted_m * rem);
            }
            ctx.emit("apriori.csv", t.to_csv());
            ctx.emit("apriori.svg", svg_line_plot("deviation from E(xi|F_t)", "t", rep.t,
                                                  {{"deviation", total, {}, {}}, {"M (T - t)", bound, {}, {}}}));
            ctx.results["apriori"] = {{"fitted_m", rep.fitted_m}, {"dev_y0", rep.dev_y.front()}};
        } else if (check == "viability") {
            const auto& set = ctx.need_set("viability");
            if (!set.body) {
                throw ConfigError("/set", "the pointwise viability check needs a convex set");
            }
            ctx.record(check, check_viability_condition(ctx.need_gen("viability"), *set.body, sc.marks, sc.sampler,
                                                        sc.c_max));
        } else if (check == "viability-empirical") {
            const auto& set = ctx.need_set("viability-empirical");
            ctx.get_paths();
            const auto ev = check_viability_empirical(
                ctx.need_gen("viability-empirical"), [&](const Vec& y) { return set.distance(y); },
                ctx.need_xi("viability-empirical"), ctx.paths, sc.solver);
            Table t{{"t", "mean_dist", "stderr_dist", "max_dist"}, {}};
            for (std::size_t i = 0; i < ev.stats.t.size(); ++i) {
                t.add_row({fmt(ev.stats.t[i]), fmt(ev.stats.mean[i]), fmt(ev.stats.stderr_mean[i]),
                           fmt(ev.stats.max[i])});
            }
            ctx.emit("distance.csv", t.to_csv());
            std::vector<double> lo, hi;
            for (std::size_t i = 0; i < ev.stats.t.size(); ++i) {
                lo.push_back(ev.stats.mean[i] - 1.96 * ev.stats.stderr_mean[i]);
                hi.push_back(ev.stats.mean[i] + 1.96 * ev.stats.stderr_mean[i]);
            }
            ctx.emit("distance.svg", svg_line_plot("E d_K(Y_t)", "t", ev.stats.t, {{"mean d_K", ev.stats.mean, lo, hi}}));
            ctx.results["viability-empirical"] = {{"max_mean_dist", ev.max_mean_dist},
                                                  {"pathwise_max_mean", ev.pathwise_max_mean},
                                                  {"pathwise_max_ci", ev.pathwise_max_ci},
                                                  {"tolerance", ev.tolerance},
                                                  {"viable", ev.viable},
                                                  {"warnings", ev.warnings}};
        } else if (check == "comparison") {
            ctx.record(check, check_comparison_multidim(ctx.need_gen("comparison"), ctx.second_gen(), sc.marks,
                                                        sc.sampler, sc.c_max));
        } else if (check == "comparison-m1") {
            ctx.record(check, check_comparison_m1(ctx.need_gen("comparison-m1"), ctx.second_gen(), sc.marks, sc.sampler));
        } else if (check == "comparison-stacked") {
            const auto st = stacked_reduction(ctx.need_gen("comparison-stacked"), ctx.second_gen());
            auto v = check_viability_condition(st.gen, st.body, sc.marks, sc.sampler, sc.c_max);
            v.condition = "stacked-viability";
            ctx.record(check, v);
        } else if (check == "comparison-empirical") {
            if (!sc.xi2) {
                throw ConfigError("/terminal2", "check 'comparison-empirical' needs terminal2");
            }
            ctx.get_paths();
            const auto cs = empirical_comparison(ctx.need_gen("comparison-empirical"), ctx.second_gen(),
                                                 ctx.need_xi("comparison-empirical"), *sc.xi2, ctx.paths, sc.solver);
            Table t{{"t", "min_gap", "violation_fraction", "ci_low", "ci_high"}, {}};
            for (std::size_t i = 0; i < cs.t.size(); ++i) {
                t.add_row({fmt(cs.t[i]), fmt(cs.min_gap[i]), fmt(cs.violation_fraction[i]), fmt(cs.ci_low[i]),
                           fmt(cs.ci_high[i])});
            }
            ctx.emit("comparison.csv", t.to_csv());
            ctx.emit("comparison.svg",
                     svg_line_plot("share of paths with Y1 < Y2", "t", cs.t,
                                   {{"violation fraction", cs.violation_fraction, cs.ci_low, cs.ci_high}}));
            ctx.results["comparison-empirical"] = {{"min_gap", cs.overall_min_gap},
                                                   {"t", cs.t},
                                                   {"violation_fraction", cs.violation_fraction}};
        } else if (check == "structural") {
            const auto rep = check_structural(ctx.need_gen("structural"), sc.marks, sc.sampler, sc.c_max);
            ctx.record("structural-b", rep.b);
            ctx.record("structural-c", rep.c);
            ctx.results["structural"] = {{"a_pass", rep.a_pass},
                                         {"a_offending", rep.a_offending},
                                         {"u_diagonal", rep.u_diagonal},
                                         {"reduced_form_consistent", rep.reduced_form_consistent},
                                         {"comparison_holds", rep.comparison_holds()}};
            if (!rep.a_pass || !rep.reduced_form_consistent) {
                ctx.manifest.failed = true;
            }
        } else if (check == "matrix") {
            if (sc.matrix_order < 1) {
                throw ConfigError("/matrix_order", "check 'matrix' needs matrix_order");
            }
            ctx.record(check, check_comparison_matrix(ctx.need_gen("matrix"), ctx.second_gen(), sc.matrix_order,
                                                      sc.marks, sc.sampler, sc.c_max));
        }
    }

    evaluate_expectations(ctx);
    if (!ctx.verdicts.rows.empty()) {
        ctx.emit("verdicts.csv", ctx.verdicts.to_csv());
    }
    Table acc{{"criterion", "pass", "detail"}, {}};
    for (const auto& a : ctx.manifest.acceptance) {
        acc.add_row({a.name, a.pass ? "PASS" : "FAIL", a.detail});
    }
    if (!acc.rows.empty()) {
        ctx.emit("acceptance.csv", acc.to_csv());
    }

    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    json acc_json = json::array();
    for (const auto& a : ctx.manifest.acceptance) {
        acc_json.push_back({{"name", a.name}, {"pass", a.pass}, {"detail", a.detail}});
    }
    char hash[17];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(fnv1a64(sc.config.dump())));
    ctx.manifest.doc = {{"config_hash", hash},
                        {"seed", sc.seed},
                        {"version", kVersion},
                        {"wall_clock_seconds", wall},
                        {"results", ctx.results},
                        {"acceptance", acc_json},
                        {"passed", !ctx.manifest.failed}};
    if (write_files) {
        ctx.manifest.files.push_back("manifest.json");
        ctx.manifest.doc["files"] = ctx.manifest.files;
        write_text((ctx.dir / "manifest.json").string(), ctx.manifest.doc.dump(2) + "\n");
    } else {
        ctx.manifest.doc["files"] = json::array();
    }
    return std::move(ctx.manifest);
}

}  // namespace bsvlab
