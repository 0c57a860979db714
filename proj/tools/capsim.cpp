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


// capsim: runs attack scenarios against simulated capability machines.
//
//   capsim run --profile cheribsd --mitigations c18n --scenario all
//   capsim run --config grid.json --report json --out report.json

#include <cstdint>
#include <exception>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "capsim/report.hpp"
#include "json.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitConfig = 2;

capsim::RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw capsim::Fault(capsim::Error::kConfigInvalid, "cannot read " + path);
  std::stringstream text;
  text << in.rdbuf();
  try {
    return capsim::config_from_json(capsim::ordered_json::parse(text.str()));
  } catch (const nlohmann::json::exception& e) {
    throw capsim::Fault(capsim::Error::kConfigInvalid, path + ": " + e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Capability machine compartment-escape simulator"};
  app.set_version_flag("--version", std::string(capsim::kToolVersion));
  app.require_subcommand(1);

  CLI::App* run = app.add_subcommand("run", "Run a scenario grid");
  std::optional<std::string> config_path;
  std::optional<std::string> profile;
  std::optional<std::string> mitigations;
  std::vector<std::string> scenarios;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> report;
  std::optional<std::string> out;
  run->add_option("--config", config_path, "JSON config; flags override its keys");
  run->add_option("--profile", profile, "morello-linux or cheribsd");
  run->add_option("--mitigations", mitigations,
                  "Comma list; prefix a name with no- to disable a profile default");
  run->add_option("--scenario", scenarios, "Scenario name or 'all' (repeatable)");
  run->add_option("--seed", seed, "Layout seed (default 0)");
  run->add_option("--report", report, "table or json");
  run->add_option("--out", out, "Write the report here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    capsim::RunConfig config;
    if (config_path) config = load_config_file(*config_path);
    if (profile) config.profile = *profile;
    if (mitigations) config.mitigations = capsim::split_list(*mitigations);
    if (!scenarios.empty()) {
      config.scenarios.clear();
      for (const auto& s : scenarios) {
        for (auto& item : capsim::split_list(s)) config.scenarios.push_back(item);
      }
    }
    if (seed) config.seed = *seed;
    if (report) config.report_format = capsim::report_format_from_name(*report);
    if (out) config.output_path = *out;

    const capsim::MatrixReport result = capsim::run(config);
    const std::string text = config.report_format == capsim::ReportFormat::kJson
                                 ? capsim::render_json(result)
                                 : capsim::render_table(result);
    if (config.output_path) {
      std::ofstream file(*config.output_path);
      if (!file || !(file << text)) {
        std::cerr << "capsim: cannot write " << *config.output_path << "\n";
        return kExitInternal;
      }
    } else {
      std::cout << text;
    }
    return kExitOk;
  } catch (const capsim::Fault& f) {
    std::cerr << "capsim: " << f.what() << "\n";
    return f.code() == capsim::Error::kConfigInvalid ? kExitConfig : kExitInternal;
  } catch (const std::exception& e) {
    std::cerr << "capsim: internal error: " << e.what() << "\n";
    return kExitInternal;
  }
}
