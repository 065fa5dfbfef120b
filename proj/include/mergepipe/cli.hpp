#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mergepipe/dataset.hpp"
#include "mergepipe/error.hpp"
#include "mergepipe/metrics.hpp"
#include "mergepipe/pipeline.hpp"

#ifndef MERGEPIPE_VERSION
#define MERGEPIPE_VERSION "0.0.0"
#endif

namespace mergepipe::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitIo = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitPipeline = 3;
inline constexpr int kReportSchemaVersion = 1;

/// 64-bit FNV-1a, printed as 16 hex digits.
inline std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

struct RunManifest {
  std::string command;
  std::string config_digest;
  std::uint64_t seed = 0;
  std::vector<std::string> artifacts;
  std::optional<double> wall_time;
  std::string version = MERGEPIPE_VERSION;
  nlohmann::json config;
};

inline void to_json(nlohmann::json& j, const RunManifest& m) {
  j = nlohmann::json{{"command", m.command},
                     {"config_digest", m.config_digest},
                     {"seed", m.seed},
                     {"artifacts", m.artifacts},
                     {"version", m.version},
                     {"config", m.config}};
  j["wall_time"] = m.wall_time ? nlohmann::json(*m.wall_time) : nlohmann::json(nullptr);
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::IoFailure, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline nlohmann::json read_json(const fs::path& path) {
  const std::string text = read_text(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::BadConfig, "'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::IoFailure, "cannot write '" + path.string() + "'");
  out << text;
  out.close();
  require(!out.fail(), ErrorKind::IoFailure, "failed writing '" + path.string() + "'");
}

inline void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

/// Maps a library error to an exit code, printing the diagnostic.
inline int report_error(const Error& e, std::ostream& err) {
  err << "error: " << e.what() << '\n';
  if (dynamic_cast<const StageError*>(&e)) return kExitPipeline;
  switch (e.kind()) {
    case ErrorKind::IoFailure: return kExitIo;
    case ErrorKind::BadConfig:
    case ErrorKind::EmptySpace: return kExitConfig;
    default: return kExitPipeline;
  }
}

inline unsigned thread_cap() {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("MERGEPIPE_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) n = std::min<unsigned>(n, static_cast<unsigned>(v));
  }
  return n;
}

// ---------------------------------------------------------------------------
// generate

struct GenerateArgs {
  std::optional<std::string> config_path;
  std::uint64_t seed = 0;
  std::string out = "deals.csv";
  std::string out_dir = ".";
  bool timing = false;
};

/// Writes the deals CSV plus `<stem>.schema.json` and `<stem>.manifest.json`
/// beside it.
inline int cmd_generate(const GenerateArgs& args, std::ostream& err = std::cerr) {
  const auto start = std::chrono::steady_clock::now();
  try {
    GeneratorConfig config;
    nlohmann::json raw = nlohmann::json::object();
    if (args.config_path) {
      raw = read_json(*args.config_path);
      config = raw.get<GeneratorConfig>();
    }
    config.validate();
    const auto deals = generate_synthetic(config, args.seed);
    const auto schema = synthetic_schema(config);

    const fs::path csv_path = fs::path(args.out_dir) / args.out;
    const fs::path schema_path = fs::path(csv_path).replace_extension(".schema.json");
    const fs::path manifest_path = fs::path(csv_path).replace_extension(".manifest.json");
    std::ostringstream body;
    write_deals_csv(body, deals, schema);
    write_text(csv_path, body.str());
    write_json(schema_path, schema);

    RunManifest m;
    m.command = "generate";
    m.config = config;
    m.seed = args.seed;
    m.config_digest = fnv1a_hex(m.config.dump() + "#" + std::to_string(args.seed));
    m.artifacts = {csv_path.filename().string(), schema_path.filename().string(),
                   manifest_path.filename().string()};
    if (args.timing) m.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_json(manifest_path, m);
    return kExitOk;
  } catch (const Error& e) {
    return report_error(e, err);
  }
}

// ---------------------------------------------------------------------------
// run / search shared plumbing

struct DataArgs {
  std::string data;
  std::optional<std::string> schema_path;
  std::optional<std::string> cutoff;
  std::optional<double> train_fraction;
};

/// Schema from --schema, else `<data stem>.schema.json` if present, else
/// inferred from the header and values.
inline DatasetSchema resolve_schema(const DataArgs& a) {
  fs::path p;
  if (a.schema_path) {
    p = *a.schema_path;
  } else {
    p = fs::path(a.data).replace_extension(".schema.json");
    if (!fs::exists(p)) return infer_schema(a.data);
  }
  try {
    auto s = read_json(p).get<DatasetSchema>();
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::BadConfig, "bad schema '" + p.string() + "': " + e.what());
  }
}

/// Split from flags, else the config's "split" object, else the default
/// cutoff 2019-01-01.
inline SplitSpec resolve_split(const DataArgs& a, const nlohmann::json& config) {
  SplitSpec s;
  try {
    if (a.cutoff) {
      s.cutoff_date = Date::parse(*a.cutoff);
    } else if (a.train_fraction) {
      s.train_fraction_override = *a.train_fraction;
    } else if (config.contains("split")) {
      const auto& j = config["split"];
      if (j.contains("cutoff_date")) s.cutoff_date = Date::parse(j["cutoff_date"].get<std::string>());
      if (j.contains("train_fraction")) s.train_fraction_override = j["train_fraction"].get<double>();
    } else {
      s.cutoff_date = Date::from_ymd(2019, 1, 1);
    }
  } catch (const Error& e) {
    throw Error(ErrorKind::BadConfig, std::string("bad split: ") + e.what());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::BadConfig, std::string("bad split: ") + e.what());
  }
  return s;
}

struct LoadedData {
  DatasetSchema schema;
  std::vector<DealRecord> train, test;
};

inline LoadedData load_and_split(const DataArgs& a, const nlohmann::json& config) {
  LoadedData d;
  const SplitSpec split = resolve_split(a, config);
  require(fs::exists(a.data), ErrorKind::IoFailure, "data file '" + a.data + "' does not exist");
  run_stage("load", [&] {
    d.schema = resolve_schema(a);
    const auto deals = load_deals_csv(a.data, d.schema);
    std::tie(d.train, d.test) = temporal_split(deals, split);
  });
  return d;
}

inline nlohmann::json report_json(const FrameworkResult& r, const std::string& command, const std::string& model) {
  nlohmann::json j{{"schema_version", kReportSchemaVersion},
                   {"command", command},
                   {"model", model},
                   {"input_width", r.input_width},
                   {"in_sample", r.in_sample},
                   {"out_of_sample", r.out_of_sample}};
  const auto& o = r.out_of_sample;
  j["accuracy"] = o.accuracy;
  j["precision"] = optional_json(o.precision);
  j["recall"] = optional_json(o.recall);
  j["f1"] = optional_json(o.f1);
  j["auroc"] = optional_json(o.auroc);
  j["aupr"] = optional_json(o.aupr);
  return j;
}

inline std::string curve_text(const CurvePoints& pts, const char* x, const char* y) {
  std::ostringstream s;
  write_curve_csv(s, pts, x, y);
  return s.str();
}

// ---------------------------------------------------------------------------
// run

struct RunArgs {
  DataArgs data;
  std::optional<std::string> framework;
  std::optional<std::string> baseline;
  std::optional<std::string> config_path;
  std::optional<std::string> preset;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "results";
  bool timing = false;
};

inline int cmd_run(const RunArgs& args, std::ostream& err = std::cerr) {
  const auto start = std::chrono::steady_clock::now();
  try {
    nlohmann::json raw = args.config_path ? read_json(*args.config_path) : nlohmann::json::object();
    require(raw.is_object(), ErrorKind::BadConfig, "run config must be a JSON object");
    require(!(args.framework && args.baseline), ErrorKind::BadConfig, "--framework and --baseline are exclusive");
    if (args.preset) raw["preset"] = *args.preset;
    if (args.framework) raw["framework"] = *args.framework;
    if (args.seed) raw["seed"] = *args.seed;
    if (args.baseline)
      require(*args.baseline == "logit" || *args.baseline == "weighted-logit", ErrorKind::BadConfig,
              "unknown baseline '" + *args.baseline + "' (expected logit or weighted-logit)");
    const FrameworkConfig config = raw.get<FrameworkConfig>();

    const LoadedData d = load_and_split(args.data, raw);
    const std::string model = args.baseline ? *args.baseline : to_string(config.framework);
    const FrameworkResult result =
        args.baseline ? fit_logit(d.train, d.test, d.schema, config, *args.baseline == "weighted-logit")
                      : run_framework(d.train, d.test, d.schema, config);

    const fs::path dir(args.out_dir);
    write_json(dir / "report.json", report_json(result, "run", model));
    write_text(dir / "roc.csv", curve_text(result.out_of_sample.roc_points, "fpr", "tpr"));
    write_text(dir / "pr.csv", curve_text(result.out_of_sample.pr_points, "recall", "precision"));
    write_json(dir / "model.json", result.bundle);

    RunManifest m;
    m.command = "run";
    nlohmann::json resolved = config;
    resolved["model"] = model;
    resolved["data"] = fs::path(args.data.data).filename().string();
    m.config = resolved;
    m.seed = config.seed;
    m.config_digest = fnv1a_hex(resolved.dump());
    m.artifacts = {"report.json", "roc.csv", "pr.csv", "model.json", "manifest.json"};
    if (args.timing) m.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_json(dir / "manifest.json", m);
    return kExitOk;
  } catch (const Error& e) {
    return report_error(e, err);
  }
}

// ---------------------------------------------------------------------------
// search

struct SearchArgs {
  DataArgs data;
  std::string space_path;
  int budget = 8;
  std::string objective = "f1";
  std::uint64_t seed = 0;
  std::optional<bool> grid;
  std::string out_dir = "search";
  bool timing = false;
};

inline int cmd_search(const SearchArgs& args, std::ostream& err = std::cerr) {
  const auto start = std::chrono::steady_clock::now();
  try {
    const nlohmann::json raw = read_json(args.space_path);
    SearchSpace space = raw.get<SearchSpace>();
    if (args.grid) space.grid = *args.grid;
    const Objective objective = parse_objective(args.objective);
    const LoadedData d = load_and_split(args.data, raw.value("base", nlohmann::json::object()));
    const SearchResult res =
        hyper_search(d.train, d.test, d.schema, space, args.budget, objective, args.seed, thread_cap());

    const fs::path dir(args.out_dir);
    std::ostringstream trials;
    write_trials_csv(trials, res.trials);
    write_text(dir / "trials.csv", trials.str());
    nlohmann::json report = report_json(res.winner, "search", to_string(res.winner.bundle.framework));
    report["winner_trial"] = res.trials.front().trial;
    report["winner_config"] = res.trials.front().config;
    report["validation"] = res.trials.front().valid_report;
    write_json(dir / "report.json", report);
    write_json(dir / "model.json", res.winner.bundle);

    RunManifest m;
    m.command = "search";
    m.config = {{"space", raw},
                {"budget", args.budget},
                {"objective", args.objective},
                {"grid", space.grid},
                {"data", fs::path(args.data.data).filename().string()}};
    m.seed = args.seed;
    m.config_digest = fnv1a_hex(m.config.dump() + "#" + std::to_string(args.seed));
    m.artifacts = {"trials.csv", "report.json", "model.json", "manifest.json"};
    if (args.timing) m.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_json(dir / "manifest.json", m);
    return kExitOk;
  } catch (const Error& e) {
    return report_error(e, err);
  }
}

// ---------------------------------------------------------------------------
// entry point

inline void add_data_options(CLI::App* cmd, DataArgs& d) {
  cmd->add_option("--data", d.data, "deals CSV")->required();
  cmd->add_option("--schema", d.schema_path, "schema JSON (default: <data>.schema.json, else inferred)");
  cmd->add_option("--cutoff", d.cutoff, "deals before this date (YYYY-MM-DD) train");
  cmd->add_option("--train-fraction", d.train_fraction, "earliest fraction of deals that train");
}

inline int main(int argc, const char* const* argv) {
  CLI::App app{"Takeover outcome prediction pipeline"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(MERGEPIPE_VERSION));

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "write a synthetic deals CSV");
  g->add_option("--config", gen.config_path, "generator JSON");
  g->add_option("--seed", gen.seed, "random seed");
  g->add_option("--out", gen.out, "output CSV name");
  g->add_option("--out-dir", gen.out_dir, "output directory");
  g->add_flag("--timing", gen.timing, "record wall time in the manifest");

  RunArgs run;
  auto* r = app.add_subcommand("run", "train and evaluate one framework or baseline");
  add_data_options(r, run.data);
  r->add_option("--framework", run.framework, "f1, f2 or f3");
  r->add_option("--baseline", run.baseline, "logit or weighted-logit");
  r->add_option("--config", run.config_path, "run config JSON");
  r->add_option("--preset", run.preset, "named preset, e.g. f1/smote-nn-f1");
  r->add_option("--seed", run.seed, "master seed (overrides the config)");
  r->add_option("--out-dir", run.out_dir, "output directory");
  r->add_flag("--timing", run.timing, "record wall time in the manifest");

  SearchArgs search;
  auto* s = app.add_subcommand("search", "seeded hyperparameter search");
  add_data_options(s, search.data);
  s->add_option("--space", search.space_path, "search space JSON")->required();
  s->add_option("--budget", search.budget, "number of trials");
  s->add_option("--objective", search.objective, "recall, accuracy or f1");
  s->add_option("--seed", search.seed, "master seed");
  s->add_option("--grid", search.grid, "enumerate the grid instead of sampling");
  s->add_option("--out-dir", search.out_dir, "output directory");
  s->add_flag("--timing", search.timing, "record wall time in the manifest");

  auto* presets_cmd = app.add_subcommand("presets", "list preset names");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }
  if (g->parsed()) return cmd_generate(gen);
  if (r->parsed()) return cmd_run(run);
  if (s->parsed()) return cmd_search(search);
  if (presets_cmd->parsed()) {
    for (const auto& [name, _] : presets()) std::cout << name << '\n';
    return kExitOk;
  }
  return kExitConfig;
}

}  // namespace mergepipe::cli
