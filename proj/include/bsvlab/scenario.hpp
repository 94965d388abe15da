#pragma once

// JSON scenario files, preset experiments and the run manifest.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "bsvlab/conditions.hpp"
#include "bsvlab/generator.hpp"
#include "bsvlab/geometry.hpp"
#include "bsvlab/noise.hpp"
#include "bsvlab/solver.hpp"

namespace bsvlab {

inline constexpr const char* kVersion = "0.3.0";
inline constexpr int kSchemaVersion = 1;

/// Invalid configuration; field is a JSON pointer such as "/solver/paths".
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string field, const std::string& what);
    const std::string& field() const { return field_; }

private:
    std::string field_;
};

/// A convex body or, for demonstrations, a finite point set.
struct SetSpec {
    std::optional<ConvexBody> body;
    std::vector<Vec> points;

    double distance(const Vec& y) const;
    int dim() const;
};

struct Scenario {
    nlohmann::json config;  ///< resolved, defaults filled in
    std::string name;
    int dim = 1;
    int brownian_dim = 1;
    int matrix_order = 0;
    TimeGrid grid = TimeGrid::uniform(1.0, 1);
    FiniteMarkMeasure marks;
    std::optional<SetSpec> set;
    std::optional<Generator> gen;
    std::optional<Generator> gen2;
    std::optional<TerminalCondition> xi;
    std::optional<TerminalCondition> xi2;
    SolverConfig solver;
    std::size_t paths = 10000;
    Sampler sampler;
    double c_max = kDefaultCMax;
    std::uint64_t seed = 1;
    std::string output_dir;
    std::vector<std::string> checks;
};

/// Validates and resolves a config document. Throws ConfigError.
Scenario parse_scenario(const nlohmann::json& doc);
Scenario load_scenario(const std::string& path);

/// Preset names: example28, remark34a, remark34b, thm25-demo.
std::vector<std::string> preset_names();
nlohmann::json preset_config(const std::string& name);

struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> paths;
    std::optional<std::size_t> steps;
    std::optional<std::string> out;
    std::optional<std::vector<std::string>> checks;
};
void apply_overrides(nlohmann::json& doc, const Overrides& o);

struct AcceptanceResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

struct RunManifest {
    nlohmann::json doc;
    std::vector<AcceptanceResult> acceptance;
    std::vector<std::string> files;
    bool failed = false;

    int exit_code() const { return failed ? 1 : 0; }
};

/// Executes the scenario's checks and writes artifacts to its output
/// directory (nothing is written when write_files is false).
RunManifest run_scenario(const Scenario& sc, bool write_files = true);

std::uint64_t fnv1a64(std::string_view data);

nlohmann::json verdict_to_json(const ConditionVerdict& v);

}  // namespace bsvlab
