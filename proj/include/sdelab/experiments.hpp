#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace sdelab {

// Version of the CSV/JSON column layout; written into every output file.
inline constexpr int kSchemaVersion = 1;

class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string field, const std::string& what)
      : std::invalid_argument(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

struct ExperimentConfig {
  std::string experiment;
  std::uint64_t seed = 1;
  std::size_t paths = 0;  // 0: experiment default
  std::size_t steps = 0;
  double horizon = 0.0;
  std::string out;  // empty: standard output
  std::string format = "csv";
  int threads = 1;
  // Experiment and model keys as written in the config; lists have several
  // entries.
  std::map<std::string, std::vector<std::string>> params;
};

using Cell = std::variant<std::monostate, std::int64_t, double, std::string>;

struct ResultTable {
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;

  void add_row(std::vector<Cell> row);
};

struct ExperimentResult {
  std::string experiment;
  std::uint64_t seed = 0;
  // Resolved parameters, including defaults that were not in the config.
  std::map<std::string, std::string> params;
  ResultTable table;
  bool passed = true;
};

struct CatalogEntry {
  std::string name;
  std::string description;
  std::vector<std::string> keys;  // experiment-specific config keys
  std::size_t default_paths;
  std::size_t default_steps;
  double default_horizon;
};

const std::vector<CatalogEntry>& catalog();
const CatalogEntry* find_experiment(const std::string& name);

// Every key the config format knows, across all experiments.
std::set<std::string> known_keys();

// Runs the named experiment. Throws ConfigError for unknown experiments,
// keys the experiment does not use, and invalid values.
ExperimentResult run_experiment(const ExperimentConfig& config);

// Header line first; floats with 9 significant digits.
void write_csv(std::ostream& os, const ExperimentResult& result);
// One object {meta, params, rows}.
void write_json(std::ostream& os, const ExperimentResult& result);

// Command-line entry point. Exit codes: 0 all verdicts passed, 2 some verdict
// failed, 1 usage or configuration error.
int run_cli(int argc, const char* const* argv);

}  // namespace sdelab
