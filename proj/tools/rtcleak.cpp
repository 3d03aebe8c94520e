// Scenario runner and small offline utilities.
//
//   rtcleak --scenario scenarios/smoke.scn --pipeline all --out out/
//   rtcleak classify --trace caller.trace --local 198.18.0.10
//   rtcleak harvest --directory data/directory.tsv --first data/first_names.txt --last data/last_names.txt
//   rtcleak series --out out/ --figure fig5

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "rtcleak/rtcleak.hpp"

namespace fs = std::filesystem;
using namespace rtcleak;

namespace {

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);)
    if (!line.empty() && line[0] != '#') out.push_back(line);
  return out;
}

std::string series_file(const std::string& name) { return name + ".csv"; }

struct FigureSource {
  const char* figure;
  const char* pipeline;
  std::vector<const char*> series;
};

const std::vector<FigureSource>& figures() {
  static const std::vector<FigureSource> f = {
      {"fig3-left", "mobility", {"fig3-left-simultaneous", "fig3-left-cumulative"}},
      {"fig3-middle", "mobility", {"fig3-middle"}},
      {"fig3-right", "mobility", {"fig3-right-city", "fig3-right-as", "fig3-right-country"}},
      {"fig4", "linkage", {"fig4"}},
      {"fig5", "linkage", {"fig5"}},
  };
  return f;
}

// Artifacts may carry neither addresses nor 40-hex infohashes.
std::vector<std::string> privacy_scan(const fs::path& dir) {
  static const std::regex quad(R"((^|[^0-9.])(\d{1,3}\.\d{1,3}\.\d{1,3}\.\d{1,3})([^0-9.]|$))");
  static const std::regex hex40(R"((^|[^0-9a-fA-F])[0-9a-fA-F]{40}([^0-9a-fA-F]|$))");
  std::vector<std::string> hits;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path());
    std::string line;
    for (int n = 1; std::getline(in, line); ++n)
      if (std::regex_search(line, quad) || std::regex_search(line, hex40))
        hits.push_back(e.path().filename().string() + ":" + std::to_string(n));
  }
  return hits;
}

int run_pipeline(const std::string& scenario_path, std::optional<std::uint64_t> seed, const std::string& which,
                 const std::string& out_dir) {
  auto sc = scenario::load(scenario_path);
  if (seed) {
    sc.seed = *seed;
    sc.propagate();
  }
  bool all = which == "all";
  pipeline::Report report;
  report.metric("scenario", sc.name);
  report.metric("seed", std::to_string(sc.seed));
  report.metric("pipeline", which);
  auto stage = [&](const char* name, auto&& fn) {
    auto t0 = std::chrono::steady_clock::now();
    report.merge(fn(), std::string(name) + ".");
    std::cerr << name << ": " << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()
              << " s\n";
  };
  if (all || which == "defense-eval")
    stage("defense_eval", [&] {
      return pipeline::report_defense_eval(pipeline::run_defense_eval(sc.call, sc.interval_users, sc.interval_s));
    });
  if (all || which == "mobility")
    stage("mobility", [&] { return pipeline::report_mobility(pipeline::run_mobility(sc.mobility)); });
  if (all || which == "linkage")
    stage("linkage", [&] { return pipeline::report_linkage(pipeline::run_linkage(sc.linkage), sc.linkage); });

  fs::create_directories(out_dir);
  for (const auto& [name, s] : report.series) {
    std::ofstream os(fs::path(out_dir) / series_file(name));
    tracker::write_series(os, s);
  }
  {
    std::ofstream os(fs::path(out_dir) / "report.txt");
    os << report.render();
  }
  auto hits = privacy_scan(out_dir);
  for (const auto& h : hits) std::cerr << "privacy: identifier-like token at " << h << "\n";
  {
    std::ofstream os(fs::path(out_dir) / "report.txt", std::ios::app);
    os << "check.report.privacy = " << (hits.empty() ? "pass" : "FAIL") << "\n";
  }
  bool ok = report.all_passed() && hits.empty();
  for (const auto& [k, pass] : report.checks)
    if (!pass) std::cerr << "FAILED " << k << "\n";
  std::cout << (ok ? "all checks passed" : "some checks failed") << "; report in "
            << (fs::path(out_dir) / "report.txt").string() << "\n";
  return ok ? 0 : 1;
}

int cmd_classify(const std::string& trace_path, const std::string& local, std::uint64_t call_id,
                 const sniffer::ClassifierConfig& cfg) {
  std::ifstream in(trace_path);
  if (!in) throw std::runtime_error("cannot open " + trace_path);
  auto trace = netsim::read_trace(in);
  auto matches = sniffer::classify_trace(trace, Ipv4::must_parse(local), cfg);
  for (const auto& m : matches) std::cout << sniffer::format_match(call_id, m) << "\n";
  return 0;
}

int cmd_harvest(const std::string& dir_path, const std::string& first, const std::string& last,
                const std::string& full) {
  std::ifstream in(dir_path);
  if (!in) throw std::runtime_error("cannot open " + dir_path);
  auto dir = rtcdir::read_directory(in);
  auto r = rtcdir::harvest_ids(dir, first.empty() ? std::vector<std::string>{} : read_lines(first),
                               last.empty() ? std::vector<std::string>{} : read_lines(last),
                               full.empty() ? std::vector<std::string>{} : read_lines(full));
  std::cout << "search_strings = " << r.search_strings.size() << "\n";
  std::cout << "unique_ids = " << r.ids.size() << "\n";
  for (std::size_t f = 0; f < rtcdir::kProfileFieldCount; ++f)
    std::cout << "with_" << rtcdir::kProfileFieldNames[f] << " = "
              << pipeline::fmt(r.fraction_with(static_cast<rtcdir::ProfileField>(f))) << "\n";
  std::cout << "with_identifying_extra = " << pipeline::fmt(r.fraction_with_identifying_extra()) << "\n";
  return 0;
}

int cmd_series(const std::string& out_dir, const std::string& figure) {
  for (const auto& f : figures()) {
    if (figure != f.figure) continue;
    for (const char* s : f.series) {
      auto p = fs::path(out_dir) / series_file(s);
      if (!fs::exists(p))
        throw std::runtime_error("figure " + figure + " needs the " + f.pipeline + " pipeline; run --pipeline " +
                                 f.pipeline + " --out " + out_dir + " first");
      std::ifstream in(p);
      std::cout << "# " << s << "\n" << in.rdbuf();
    }
    return 0;
  }
  throw std::runtime_error("unknown figure " + figure);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Privacy-leak pipelines over a simulated RTC and BitTorrent ecosystem"};
  app.require_subcommand(0, 1);

  std::string scenario_path, pipeline_name = "all", out_dir = "out";
  std::optional<std::uint64_t> seed;
  app.add_option("--scenario", scenario_path, "Scenario file");
  app.add_option("--seed", seed, "Override the scenario seed");
  app.add_option("--pipeline", pipeline_name, "Pipeline to run")
      ->check(CLI::IsMember({"mobility", "linkage", "defense-eval", "all"}));
  app.add_option("--out", out_dir, "Output directory");

  auto* classify = app.add_subcommand("classify", "Classify a caller-side trace file");
  std::string trace_path, local_ip;
  std::uint64_t call_id = 0;
  sniffer::ClassifierConfig ccfg;
  classify->add_option("--trace", trace_path)->required();
  classify->add_option("--local", local_ip, "Caller address")->required();
  classify->add_option("--call-id", call_id);
  classify->add_option("--tolerance", ccfg.timing_tolerance);
  classify->add_option("--min-score", ccfg.min_score);
  classify->add_option("--window", ccfg.pattern_window);

  auto* harvest = app.add_subcommand("harvest", "Harvest IDs from a directory fixture by name search");
  std::string dir_path, first, last, full;
  harvest->add_option("--directory", dir_path)->required();
  harvest->add_option("--first", first, "First-name list");
  harvest->add_option("--last", last, "Last-name list");
  harvest->add_option("--full", full, "Full-name list");

  auto* series = app.add_subcommand("series", "Print the series files of one figure");
  std::string figure;
  series->add_option("--figure", figure)->required();
  series->add_option("--out", out_dir, "Output directory of an earlier run");

  CLI11_PARSE(app, argc, argv);
  try {
    if (classify->parsed()) {
      ccfg.validate();
      return cmd_classify(trace_path, local_ip, call_id, ccfg);
    }
    if (harvest->parsed()) return cmd_harvest(dir_path, first, last, full);
    if (series->parsed()) return cmd_series(out_dir, figure);
    if (scenario_path.empty()) {
      std::cerr << "--scenario is required\n" << app.help();
      return 2;
    }
    return run_pipeline(scenario_path, seed, pipeline_name, out_dir);
  } catch (const scenario::ScenarioError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
