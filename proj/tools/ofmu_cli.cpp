// Copyright 2026 The ofmu Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// ofmu: command-line front end.
//
//   ofmu run <config> [--seed N] [--out DIR]
//   ofmu verify [--only lemma1,lemma2,lemma3] [--out FILE]
//   ofmu udi <config> [--seed N] [--out FILE]
//   ofmu report <dir>
//
// Exit status: 0 success, 1 check failure, 2 config error, 3 runtime failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "ofmu/harness.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kCheckFailure = 1;
constexpr int kConfigError = 2;
constexpr int kRuntimeFailure = 3;

void emit(const nlohmann::json& j, const std::string& path) {
  const std::string text = j.dump(2) + "\n";
  if (path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << text)) throw std::runtime_error("cannot write " + path);
}

ofmu::ExperimentConfig load(const std::string& path, const std::optional<std::uint64_t>& seed,
                            const std::string& out_dir) {
  ofmu::ExperimentConfig c = ofmu::load_config(path);
  if (seed) c.seed = *seed;
  if (!out_dir.empty()) c.output_dir = out_dir;
  return c;
}

int cmd_run(const std::string& config, const std::optional<std::uint64_t>& seed, const std::string& out_dir) {
  const auto c = load(config, seed, out_dir);
  const auto report = ofmu::run_experiment(c);
  ofmu::write_metrics_csv(std::cout, report.metrics);
  if (report.overall_error) std::cerr << "overall score undefined: " << *report.overall_error << "\n";
  for (const auto& o : report.outcomes) {
    if (o.error) std::cerr << o.label << " diverged: " << *o.error << "\n";
  }
  if (!c.output_dir.empty()) std::cerr << "artifacts written to " << c.output_dir << "\n";
  return kOk;
}

int cmd_verify(const std::string& only, const std::string& out) {
  std::set<ofmu::Lemma> selection{ofmu::Lemma::lemma1, ofmu::Lemma::lemma2, ofmu::Lemma::lemma3};
  if (!only.empty()) {
    selection.clear();
    std::stringstream ss(only);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (!item.empty()) selection.insert(ofmu::parse_lemma(item));
    }
  }
  const auto report = ofmu::run_verify_suite(selection);
  emit(ofmu::to_json(report), out);
  std::cerr << "verify: " << report.count(ofmu::CaseStatus::pass) << " pass, " << report.count(ofmu::CaseStatus::fail)
            << " fail, " << report.count(ofmu::CaseStatus::skipped) << " skipped\n";
  return report.pass() ? kOk : kCheckFailure;
}

int cmd_udi(const std::string& config, const std::optional<std::uint64_t>& seed, const std::string& out) {
  const auto c = load(config, seed, "");
  const auto report = ofmu::udi_coupling_study(c);
  const auto j = ofmu::to_json(report);
  if (out.empty() && !c.output_dir.empty()) {
    std::filesystem::create_directories(c.output_dir);
    emit(j, (std::filesystem::path(c.output_dir) / "udi.json").string());
  } else {
    emit(j, out);
  }
  for (const auto& row : report.rows) {
    std::cerr << row.method << ": tau = " << (row.tau ? std::to_string(*row.tau) : "undefined (" + *row.error + ")")
              << "\n";
  }
  return kOk;
}

/// Re-renders metrics.csv and metrics.json from a run directory's report.json.
int cmd_report(const std::string& dir) {
  const auto path = std::filesystem::path(dir) / "report.json";
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const auto j = nlohmann::json::parse(in);
  ofmu::MetricsReport m = ofmu::metrics_from_json(j.at("metrics"));
  if (const auto err = m.compute_overall()) std::cerr << "overall score undefined: " << *err << "\n";
  std::ostringstream csv;
  ofmu::write_metrics_csv(csv, m);
  std::ofstream(std::filesystem::path(dir) / "metrics.csv", std::ios::binary) << csv.str();
  std::ofstream(std::filesystem::path(dir) / "metrics.json", std::ios::binary) << ofmu::to_json(m).dump(2) << "\n";
  std::cout << csv.str();
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Penalty-based bi-level unlearning lab"};
  app.require_subcommand(1);

  std::string config, only, out, dir;
  std::optional<std::uint64_t> seed;

  auto* run = app.add_subcommand("run", "Run an experiment config");
  run->add_option("config", config, "Experiment config (JSON)")->required();
  run->add_option("--seed", seed, "Override the config seed");
  run->add_option("--out", out, "Override the output directory");

  auto* verify = app.add_subcommand("verify", "Run the lemma checks on the shipped instance bank");
  verify->add_option("--only", only, "Comma-separated subset of lemma1,lemma2,lemma3");
  verify->add_option("--out", out, "Write the JSON report here instead of stdout");

  auto* udi = app.add_subcommand("udi", "UDI / utility-drop rank coupling per method");
  udi->add_option("config", config, "Experiment config (JSON)")->required();
  udi->add_option("--seed", seed, "Override the config seed");
  udi->add_option("--out", out, "Write the JSON report here");

  auto* report = app.add_subcommand("report", "Re-render CSV/JSON from a run directory");
  report->add_option("dir", dir, "Run output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*run) return cmd_run(config, seed, out);
    if (*verify) return cmd_verify(only, out);
    if (*udi) return cmd_udi(config, seed, out);
    if (*report) return cmd_report(dir);
  } catch (const ofmu::config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeFailure;
  }
  return kOk;
}
