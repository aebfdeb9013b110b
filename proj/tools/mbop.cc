// Copyright 2026 The MBOP Authors
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

// mbop <collect|train|eval|sweep|bench> --config run.json [overrides]
//
// Prints a JSON summary on stdout. On failure prints
// {"error": <code>, "message": ...} on stderr and exits nonzero.

#include <iostream>
#include <optional>
#include <regex>
#include <string>

#include <CLI11.hpp>

#include "mbop/bench.hpp"

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::vector<std::string> variants;
  std::vector<long long> dataset_sizes;
  std::optional<double> filter_top;
};

mbop::RunConfig Resolve(const Overrides& o) {
  mbop::RunConfig c = o.config.empty() ? mbop::RunConfig{}
                                       : mbop::LoadRunConfig(o.config);
  if (o.seed) c.seed = *o.seed;
  if (o.out) c.out = *o.out;
  if (!o.variants.empty()) c.variants = o.variants;
  if (!o.dataset_sizes.empty()) c.dataset_sizes = o.dataset_sizes;
  if (o.filter_top) c.top_percent = *o.filter_top;
  return c;
}

void PrintError(const std::string& code, const std::string& message) {
  nlohmann::ordered_json j = {{"error", code}, {"message", message}};
  static const std::regex member_re("member ([0-9]+)");
  std::smatch m;
  if (code == "divergence" && std::regex_search(message, m, member_re)) {
    j["member"] = std::stoi(m[1]);
  }
  std::cerr << j.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Offline model-based planning: collect, train, eval, sweep, bench"};
  app.require_subcommand(1, 1);
  Overrides o;
  for (const char* verb : {"collect", "train", "eval", "sweep", "bench"}) {
    CLI::App* sub = app.add_subcommand(verb);
    sub->add_option("--config", o.config, "run config JSON");
    sub->add_option("--seed", o.seed, "master seed");
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--variant", o.variants,
                    "MBOP, NOPP, NOVF, PDDM, BC or DATA (repeatable)");
    sub->add_option("--dataset-size", o.dataset_sizes,
                    "sub-sample size in steps (repeatable)");
    sub->add_option("--filter-top", o.filter_top,
                    "keep the top percent of episodes for bc/value");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    PrintError("usage", e.what());
    return 2;
  }

  const std::string verb = app.get_subcommands().front()->get_name();
  try {
    const mbop::RunConfig c = Resolve(o);
    nlohmann::ordered_json summary;
    if (verb == "collect") {
      summary = mbop::CmdCollect(c);
    } else if (verb == "train") {
      summary = mbop::CmdTrain(c);
    } else if (verb == "eval") {
      const auto res = mbop::CmdEval(c);
      summary = {{"rows", mbop::RowsToJson(res.rows)}, {"paired", res.paired}};
    } else if (verb == "sweep") {
      summary = {{"rows", mbop::RowsToJson(mbop::CmdSweep(c))}};
    } else {
      nlohmann::ordered_json rows = nlohmann::ordered_json::array();
      for (const auto& r : mbop::CmdBench(c)) rows.push_back(r.ToJson());
      summary = {{"rows", rows}};
    }
    std::cout << summary.dump(2) << '\n';
    return 0;
  } catch (const mbop::Error& e) {
    PrintError(std::string(mbop::ErrorCodeName(e.code())), e.what());
  } catch (const nlohmann::json::exception& e) {
    PrintError("invalid_argument", std::string("config: ") + e.what());
  } catch (const std::exception& e) {
    PrintError("internal", e.what());
  }
  return 1;
}
