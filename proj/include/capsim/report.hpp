// Copyright 2026 The capsim Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef CAPSIM_REPORT_HPP_
#define CAPSIM_REPORT_HPP_

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <future>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "capsim/attacks.hpp"
#include "capsim/error.hpp"
#include "capsim/machine.hpp"
#include "json.hpp"

namespace capsim {

inline constexpr std::string_view kToolVersion = "0.1.0";
inline constexpr std::string_view kReportSchemaVersion = "1";

enum class ReportFormat { kTable, kJson };

inline ReportFormat report_format_from_name(std::string_view name) {
  if (name == "table") return ReportFormat::kTable;
  if (name == "json") return ReportFormat::kJson;
  throw Fault(Error::kConfigInvalid,
              "unknown report format '" + std::string(name) + "' (valid: table, json)");
}

struct RunConfig {
  std::string profile = "morello-linux";
  // Mitigation names; "no-<name>" turns off a profile default.
  std::vector<std::string> mitigations;
  // Scenario names or "all".
  std::vector<std::string> scenarios = {"all"};
  std::uint64_t seed = 0;
  ReportFormat report_format = ReportFormat::kTable;
  std::optional<std::string> output_path;
};

struct ReportCell {
  std::string scenario;
  std::string profile;
  std::vector<std::string> mitigations;
  ScenarioOutcome outcome;

  bool operator==(const ReportCell&) const = default;
};

struct MatrixReport {
  std::string tool_version = std::string(kToolVersion);
  std::uint64_t seed = 0;
  std::vector<ReportCell> cells;

  bool operator==(const MatrixReport&) const = default;
};

// Expands "all" and removes duplicates; result is sorted.
inline std::vector<std::string> expand_scenarios(const std::vector<std::string>& names) {
  std::vector<std::string> out;
  for (const auto& n : names) {
    if (n == "all") {
      out.insert(out.end(), std::begin(kCoreAttacks), std::end(kCoreAttacks));
    } else {
      out.emplace_back(scenario_def(n).name);
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

struct ResolvedConfig {
  PlatformProfile profile;
  MitigationSet mitigations;
  std::vector<std::string> scenarios;
};

// Rejects unknown names before anything runs.
inline ResolvedConfig resolve(const RunConfig& config) {
  ResolvedConfig r{profile_by_name(config.profile), {}, expand_scenarios(config.scenarios)};
  std::vector<MitigationOverride> overrides;
  for (const auto& name : config.mitigations) overrides.push_back(parse_override(name));
  r.mitigations = apply_overrides(r.profile.defaults, overrides);
  return r;
}

inline std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (const auto& p : parts) {
    if (!out.empty()) out += sep;
    out += p;
  }
  return out;
}

inline void sort_cells(std::vector<ReportCell>& cells) {
  std::sort(cells.begin(), cells.end(), [](const ReportCell& a, const ReportCell& b) {
    return std::tie(a.scenario, a.profile, a.mitigations) <
           std::tie(b.scenario, b.profile, b.mitigations);
  });
}

// Runs every cell on its own machine. Cells run concurrently; the report
// order does not depend on completion order.
inline MatrixReport run(const RunConfig& config) {
  const ResolvedConfig rc = resolve(config);
  MatrixReport report;
  report.seed = config.seed;
  std::vector<std::future<ScenarioOutcome>> pending;
  for (const auto& name : rc.scenarios) {
    pending.push_back(std::async(std::launch::async, [&rc, name, seed = config.seed] {
      return run_scenario(name, rc.profile, rc.mitigations, seed);
    }));
  }
  for (std::size_t i = 0; i < pending.size(); ++i) {
    report.cells.push_back(
        {rc.scenarios[i], rc.profile.name, rc.mitigations.names(), pending[i].get()});
  }
  sort_cells(report.cells);
  return report;
}

inline std::string result_label(const ScenarioOutcome& o) {
  if (o.escaped) return "ESCAPED";
  return "BLOCKED:" + o.blocked_by.value_or("none");
}

inline std::string render_table(const MatrixReport& report) {
  constexpr int kWidths[] = {18, 15, 40, 30};
  std::ostringstream out;
  auto row = [&](const std::string& a, const std::string& b, const std::string& c,
                 const std::string& d, const std::string& e) {
    const std::string* cols[] = {&a, &b, &c, &d};
    std::string line;
    for (int i = 0; i < 4; ++i) {
      line += *cols[i];
      line.append(
          static_cast<std::size_t>(std::max(1, kWidths[i] - static_cast<int>(cols[i]->size()))),
          ' ');
    }
    line += e;
    out << line << '\n';
  };
  row("scenario", "profile", "mitigations", "result", "evidence");
  for (const auto& c : report.cells) {
    row(c.scenario, c.profile, c.mitigations.empty() ? "-" : join(c.mitigations, ","),
        result_label(c.outcome), std::to_string(c.outcome.evidence.size()));
  }
  return out.str();
}

using ordered_json = nlohmann::ordered_json;

inline ordered_json to_json(const MatrixReport& report) {
  ordered_json j;
  j["version"] = kReportSchemaVersion;
  j["tool_version"] = report.tool_version;
  j["seed"] = report.seed;
  j["cells"] = ordered_json::array();
  for (const auto& c : report.cells) {
    const ScenarioOutcome& o = c.outcome;
    ordered_json cell;
    cell["scenario"] = c.scenario;
    cell["profile"] = c.profile;
    cell["mitigations"] = c.mitigations;
    cell["attack"] = o.attack;
    cell["escaped"] = o.escaped;
    cell["blocked_by"] = o.blocked_by ? ordered_json(*o.blocked_by) : ordered_json(nullptr);
    cell["secret_recovered"] =
        o.secret_recovered ? ordered_json(*o.secret_recovered) : ordered_json(nullptr);
    cell["caps_outside_compartment"] = o.caps_outside_compartment;
    cell["evidence"] = o.evidence;
    j["cells"].push_back(std::move(cell));
  }
  return j;
}

inline std::string render_json(const MatrixReport& report) {
  return to_json(report).dump(2) + "\n";
}

inline MatrixReport report_from_json(const ordered_json& j) {
  try {
    if (j.at("version").get<std::string>() != kReportSchemaVersion) {
      throw Fault(Error::kConfigInvalid, "unsupported report version");
    }
    MatrixReport r;
    r.tool_version = j.at("tool_version").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& cell : j.at("cells")) {
      ReportCell c;
      c.scenario = cell.at("scenario").get<std::string>();
      c.profile = cell.at("profile").get<std::string>();
      c.mitigations = cell.at("mitigations").get<std::vector<std::string>>();
      ScenarioOutcome& o = c.outcome;
      o.attack = cell.at("attack").get<std::string>();
      o.escaped = cell.at("escaped").get<bool>();
      if (!cell.at("blocked_by").is_null()) o.blocked_by = cell["blocked_by"].get<std::string>();
      if (!cell.at("secret_recovered").is_null()) {
        o.secret_recovered = cell["secret_recovered"].get<std::string>();
      }
      o.caps_outside_compartment = cell.at("caps_outside_compartment").get<std::size_t>();
      o.evidence = cell.at("evidence").get<std::vector<std::string>>();
      r.cells.push_back(std::move(c));
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Fault(Error::kConfigInvalid, std::string("malformed report: ") + e.what());
  }
}

inline MatrixReport parse_report(std::string_view text) {
  try {
    return report_from_json(ordered_json::parse(text));
  } catch (const nlohmann::json::exception& e) {
    throw Fault(Error::kConfigInvalid, std::string("malformed report: ") + e.what());
  }
}

// Comma-separated list; empty items are dropped.
inline std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  while (!s.empty()) {
    const auto comma = s.find(',');
    std::string_view item = s.substr(0, comma);
    while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
    while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
    if (!item.empty()) out.emplace_back(item);
    if (comma == std::string_view::npos) break;
    s.remove_prefix(comma + 1);
  }
  return out;
}

// A config document uses the flag names as keys: profile, mitigations,
// scenario, seed, report, out. List values may be arrays or comma strings.
inline RunConfig config_from_json(const ordered_json& j, RunConfig base = {}) {
  if (!j.is_object()) throw Fault(Error::kConfigInvalid, "config must be an object");
  auto list = [](const ordered_json& v) {
    if (v.is_string()) return split_list(v.get<std::string>());
    return v.get<std::vector<std::string>>();
  };
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "profile") {
        base.profile = v.get<std::string>();
      } else if (key == "mitigations") {
        base.mitigations = list(v);
      } else if (key == "scenario" || key == "scenarios") {
        base.scenarios = list(v);
      } else if (key == "seed") {
        base.seed = v.get<std::uint64_t>();
      } else if (key == "report") {
        base.report_format = report_format_from_name(v.get<std::string>());
      } else if (key == "out") {
        base.output_path = v.get<std::string>();
      } else {
        throw Fault(Error::kConfigInvalid, "unknown config key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Fault(Error::kConfigInvalid, std::string("bad config value: ") + e.what());
  }
  return base;
}

}  // namespace capsim

#endif  // CAPSIM_REPORT_HPP_
