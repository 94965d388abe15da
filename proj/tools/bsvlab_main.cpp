// bsvlab command line: scenario runs, condition checks and preset
// reproductions. Exit status 0 = all pass, 1 = a check failed, 2 = error.

#include <cstdio>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "bsvlab/report.hpp"
#include "bsvlab/scenario.hpp"

namespace {

using bsvlab::Overrides;
using nlohmann::json;

struct Common {
    std::string config;
    std::string format = "csv";
    std::uint64_t seed = 0;
    std::size_t paths = 0;
    std::size_t steps = 0;
    std::string out;
    CLI::Option* seed_opt = nullptr;
    CLI::Option* paths_opt = nullptr;
    CLI::Option* steps_opt = nullptr;
    CLI::Option* out_opt = nullptr;
};

void add_common(CLI::App* app, Common& c, bool needs_config)
{
    auto* cfg = app->add_option("--config", c.config, "scenario JSON file");
    if (needs_config) {
        cfg->required()->check(CLI::ExistingFile);
    }
    c.seed_opt = app->add_option("--seed", c.seed, "master seed");
    c.paths_opt = app->add_option("--paths", c.paths, "number of simulated paths")->check(CLI::PositiveNumber);
    c.steps_opt = app->add_option("--steps", c.steps, "number of time steps")->check(CLI::PositiveNumber);
    c.out_opt = app->add_option("--out", c.out, "output directory");
    app->add_option("--format", c.format, "stdout summary format")->check(CLI::IsMember({"csv", "json"}));
}

Overrides overrides_of(const Common& c)
{
    Overrides o;
    if (c.seed_opt->count()) o.seed = c.seed;
    if (c.paths_opt->count()) o.paths = c.paths;
    if (c.steps_opt->count()) o.steps = c.steps;
    if (c.out_opt->count()) o.out = c.out;
    return o;
}

json read_json(const std::string& path)
{
    std::ifstream f(path);
    if (!f) {
        throw bsvlab::ConfigError("", "cannot open " + path);
    }
    try {
        return json::parse(f);
    } catch (const json::parse_error& e) {
        throw bsvlab::ConfigError("", std::string("JSON parse error: ") + e.what());
    }
}

void print_summary(const std::string& label, const bsvlab::RunManifest& m, const std::string& format)
{
    if (format == "json") {
        std::cout << m.doc.dump(2) << "\n";
        return;
    }
    bsvlab::Table t{{"scenario", "item", "status", "detail"}, {}};
    for (const auto& [check, res] : m.doc["results"].items()) {
        std::string status = "done";
        std::string detail;
        if (res.contains("outcome")) {
            status = res["outcome"].get<std::string>();
            detail = "C_found=" + bsvlab::fmt(res["c_found"].get<double>()) +
                     " sup_C=" + bsvlab::fmt(res["sup_c_required"].get<double>());
        } else if (res.contains("y0")) {
            detail = "Y0=" + res["y0"].dump() + " stderr=" + res["y0_stderr"].dump();
        } else if (res.contains("max_mean_dist")) {
            detail = "max_t mean d_K=" + bsvlab::fmt(res["max_mean_dist"].get<double>());
        } else if (res.contains("min_gap")) {
            detail = "min gap=" + bsvlab::fmt(res["min_gap"].get<double>());
        } else if (res.contains("fitted_m")) {
            detail = "M=" + bsvlab::fmt(res["fitted_m"].get<double>());
        }
        t.add_row({label, check, status, detail});
    }
    for (const auto& a : m.acceptance) {
        t.add_row({label, a.name, a.pass ? "PASS" : "FAIL", a.detail});
    }
    std::cout << t.to_csv();
}

int run_doc(json doc, const Overrides& o, const std::string& format)
{
    bsvlab::apply_overrides(doc, o);
    const auto sc = bsvlab::parse_scenario(doc);
    const auto m = bsvlab::run_scenario(sc);
    print_summary(sc.name, m, format);
    return m.exit_code();
}

int reproduce(const std::string& name, const Common& c)
{
    Overrides o = overrides_of(c);
    const std::string root = o.out.value_or("bsvlab-out");
    if (name == "remark34") {
        int code = 0;
        bsvlab::Table t{{"c", "comparison", "scalar_check", "empirical", "pass"}, {}};
        for (const char* part : {"remark34a", "remark34b"}) {
            json doc = bsvlab::preset_config(part);
            Overrides po = o;
            po.out = (std::filesystem::path(root) / part).string();
            bsvlab::apply_overrides(doc, po);
            const auto sc = bsvlab::parse_scenario(doc);
            const auto m = bsvlab::run_scenario(sc);
            print_summary(part, m, c.format);
            const auto& r = m.doc["results"];
            const auto& emp = r["comparison-empirical"];
            const std::size_t mid = sc.grid.nearest_node(0.5);
            const std::string empirical =
                emp["min_gap"].get<double>() >= -0.02
                    ? "comparison holds (min gap " + bsvlab::fmt(emp["min_gap"].get<double>()) + ")"
                    : "violation fraction at t=0.5: " + bsvlab::fmt(emp["violation_fraction"][mid].get<double>());
            t.add_row({bsvlab::fmt(doc["generator"]["c"].get<double>()), r["comparison"]["outcome"].get<std::string>(),
                       r["comparison-m1"]["outcome"].get<std::string>(), empirical, m.failed ? "FAIL" : "PASS"});
            code = std::max(code, m.exit_code());
        }
        std::filesystem::create_directories(root);
        bsvlab::write_text((std::filesystem::path(root) / "remark34.csv").string(), t.to_csv());
        if (c.format == "csv") {
            std::cout << t.to_csv();
        }
        return code;
    }
    json doc = bsvlab::preset_config(name);
    if (!o.out) {
        o.out = (std::filesystem::path(root) / name).string();
    }
    return run_doc(std::move(doc), o, c.format);
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"bsvlab: BSDEs with jumps, viability and comparison checks"};
    app.require_subcommand(1);
    app.set_version_flag("--version", bsvlab::kVersion);

    struct Sub {
        const char* name;
        const char* help;
        std::vector<std::string> checks;  // empty: keep the config's list
    };
    const std::vector<Sub> subs{
        {"simulate", "simulate driving paths and tabulate increment moments", {"simulate"}},
        {"solve", "solve the BSDE and tabulate Y_t", {"solve"}},
        {"check-viability", "pointwise viability condition (plus simulation when a terminal is set)", {}},
        {"check-comparison", "comparison conditions (plus simulation when both terminals are set)", {}},
        {"check-structural", "componentwise structural comparison clauses", {"structural"}},
        {"check-matrix", "matrix comparison condition on the PSD cone", {"matrix"}},
        {"run", "run every check listed in the config", {}},
    };
    std::vector<Common> commons(subs.size() + 1);
    std::vector<CLI::App*> apps;
    for (std::size_t i = 0; i < subs.size(); ++i) {
        auto* sub = app.add_subcommand(subs[i].name, subs[i].help);
        add_common(sub, commons[i], true);
        apps.push_back(sub);
    }
    auto* rep = app.add_subcommand("reproduce", "run a preset: example28, remark34, remark34a, remark34b, thm25-demo");
    std::string preset;
    rep->add_option("name", preset, "preset name")
        ->required()
        ->check(CLI::IsMember({"example28", "remark34", "remark34a", "remark34b", "thm25-demo"}));
    add_common(rep, commons.back(), false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (rep->parsed()) {
            return reproduce(preset, commons.back());
        }
        for (std::size_t i = 0; i < subs.size(); ++i) {
            if (!apps[i]->parsed()) {
                continue;
            }
            const Common& c = commons[i];
            json doc = read_json(c.config);
            Overrides o = overrides_of(c);
            const std::string name = subs[i].name;
            std::vector<std::string> checks = subs[i].checks;
            if (name == "check-viability") {
                checks = {"viability"};
                if (doc.contains("terminal")) checks.push_back("viability-empirical");
            } else if (name == "check-comparison") {
                checks = {"comparison", "comparison-stacked"};
                if (doc.value("dim", 0) == 1) checks.push_back("comparison-m1");
                if (doc.contains("terminal") && doc.contains("terminal2")) checks.push_back("comparison-empirical");
            }
            if (!checks.empty()) {
                o.checks = checks;
            }
            return run_doc(std::move(doc), o, c.format);
        }
    } catch (const std::exception& e) {
        std::cerr << "bsvlab: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
