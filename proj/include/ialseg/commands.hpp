#pragma once

// File-level workflows behind the command-line tool: dataset generation,
// training, evaluation, report comparison and the gradient self-check.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>

#include <json.hpp>

#include "ialseg/checkpoint.hpp"
#include "ialseg/data.hpp"
#include "ialseg/gradcheck.hpp"
#include "ialseg/metrics.hpp"
#include "ialseg/network.hpp"
#include "ialseg/train.hpp"

namespace ialseg {

namespace fs = std::filesystem;

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error("'" + path + "' is not valid JSON: " + e.what());
  }
}

inline void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open '" + path.string() + "' for writing");
  os << text;
  if (!os) throw Error("failed writing '" + path.string() + "'");
}

// ---------------------------------------------------------------------------

struct GenDataConfig {
  SceneConfig scene;
  std::size_t train_count = 200;
  std::size_t eval_count = 50;
  std::uint64_t eval_offset = 1000000;  // eval scenes use disjoint indices
  std::string out = "data";
};

inline nlohmann::json to_json(const GenDataConfig& c) {
  return {{"scene", to_json(c.scene)},
          {"train_count", c.train_count},
          {"eval_count", c.eval_count},
          {"eval_offset", c.eval_offset},
          {"out", c.out}};
}

inline GenDataConfig gen_data_config_from_json(const nlohmann::json& j) {
  GenDataConfig c;
  try {
    if (j.contains("scene")) c.scene = scene_config_from_json(j["scene"]);
    if (j.contains("train_count")) c.train_count = j["train_count"].get<std::size_t>();
    if (j.contains("eval_count")) c.eval_count = j["eval_count"].get<std::size_t>();
    if (j.contains("eval_offset")) c.eval_offset = j["eval_offset"].get<std::uint64_t>();
    if (j.contains("out")) c.out = j["out"].get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed gen-data config: ") + e.what());
  }
  return c;
}

/// Writes <out>/train, <out>/eval and <out>/run.json.
inline void cmd_gen_data(const GenDataConfig& c, std::ostream& log) {
  c.scene.validate();
  const fs::path out(c.out);
  fs::create_directories(out);
  write_dataset(out / "train", generate_dataset(c.scene, c.train_count, 0));
  write_dataset(out / "eval", generate_dataset(c.scene, c.eval_count, c.eval_offset));
  write_text_file(out / "run.json", to_json(c).dump(2) + "\n");
  log << "wrote " << c.train_count << " training and " << c.eval_count << " evaluation scenes to " << out.string()
      << "\n";
}

// ---------------------------------------------------------------------------

inline Dataset load_run_dataset(const std::string& dir, const std::optional<std::string>& hierarchy_path) {
  if (hierarchy_path) return read_dataset(dir, hierarchy_from_json(read_json_file(*hierarchy_path)));
  return read_dataset(dir);
}

inline std::string epoch_checkpoint_name(std::size_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%03zu.ckpt", epoch);
  return buf;
}

/// Trains in single precision. Outputs: run.json, loss_curve.csv,
/// epoch_NNN.ckpt after every epoch and final.ckpt.
inline void cmd_train(RunConfig c, std::ostream& log) {
  if (!c.seed) throw Error("train: --seed is required");
  if (c.dataset.empty()) throw Error("train: no dataset given");
  const Dataset data = load_run_dataset(c.dataset, c.hierarchy);
  if (c.net.num_classes != data.hierarchy.num_classes()) c.net.num_classes = data.hierarchy.num_classes();
  c.net.validate();
  const fs::path out(c.out);
  fs::create_directories(out);
  write_text_file(out / "run.json", to_json(c).dump(2) + "\n");

  auto net = make_network<float>(c.net, *c.seed);
  std::ofstream curve(out / "loss_curve.csv", std::ios::binary);
  if (!curve) throw Error("cannot write loss curve in '" + out.string() + "'");
  curve << loss_curve_header(data.hierarchy.num_groups());
  train<float>(*net, data, c, [&](const EpochLog& e) {
    curve << loss_curve_row(e);
    curve.flush();
    save_checkpoint((out / epoch_checkpoint_name(e.epoch)).string(), net->params());
    char buf[160];
    std::snprintf(buf, sizeof buf, "epoch %zu  lr %.1e  total %.5f", e.epoch, e.lr, e.total);
    log << buf;
    for (std::size_t t = 0; t < e.dynamic_weights.size(); ++t)
      log << "  f_" << t + 2 << " " << e.dynamic_weights[t];
    log << "\n";
  });
  save_checkpoint((out / "final.ckpt").string(), net->params());
}

// ---------------------------------------------------------------------------

struct EvalConfig {
  std::string run;  // training output directory holding run.json
  std::optional<std::string> checkpoint;
  std::string dataset;
  std::optional<std::string> hierarchy;
  std::string out = "eval";
};

/// Writes report.json and report.csv for the checkpoint on the dataset.
inline GroupReport cmd_eval(const EvalConfig& c, std::ostream& log) {
  RunConfig run = run_config_from_json(read_json_file((fs::path(c.run) / "run.json").string()));
  const std::string ckpt = c.checkpoint.value_or((fs::path(c.run) / "final.ckpt").string());
  const Dataset data = load_run_dataset(c.dataset, c.hierarchy ? c.hierarchy : run.hierarchy);
  run.net.num_classes = data.hierarchy.num_classes();
  auto net = make_network<float>(run.net, run.seed.value_or(0));
  load_checkpoint(ckpt, net->params());
  const GroupReport r = group_report(evaluate<float>(*net, data), data.hierarchy);
  const fs::path out(c.out);
  fs::create_directories(out);
  const std::string id = fs::path(c.run).filename().string();
  write_text_file(out / "report.json", report_to_json(r, id).dump(2) + "\n");
  write_text_file(out / "report.csv", report_to_csv(r));
  nlohmann::json echo{{"run", c.run}, {"checkpoint", ckpt}, {"dataset", c.dataset}, {"out", c.out}};
  echo["hierarchy"] = c.hierarchy ? nlohmann::json(*c.hierarchy) : nlohmann::json(nullptr);
  write_text_file(out / "run.json", echo.dump(2) + "\n");
  for (std::size_t g = 0; g < r.per_group.size(); ++g) {
    const auto& m = r.per_group[g];
    char buf[128];
    std::snprintf(buf, sizeof buf, "G%zu precision %.4f recall %.4f IoU %.4f\n", g + 1, m.precision.value_or(-1),
                  m.recall.value_or(-1), m.iou.value_or(-1));
    log << buf;
  }
  return r;
}

// ---------------------------------------------------------------------------

/// Candidate minus baseline; writes compare.json and prints one verdict line per group.
inline GroupReport cmd_compare(const std::string& baseline_path, const std::string& candidate_path,
                               const std::string& out_dir, std::ostream& log) {
  const GroupReport base = report_from_json(read_json_file(baseline_path));
  const GroupReport cand = report_from_json(read_json_file(candidate_path));
  if (!(base.hierarchy == cand.hierarchy)) throw Error("compare: reports use different hierarchies");
  const GroupReport d = group_report(cand.confusion, cand.hierarchy, &base);
  const fs::path out(out_dir);
  fs::create_directories(out);
  auto j = report_to_json(d, fs::path(candidate_path).parent_path().filename().string());
  j["baseline"] = baseline_path;
  j["candidate"] = candidate_path;
  write_text_file(out / "compare.json", j.dump(2) + "\n");
  for (const auto& line : verdict_lines(d)) log << line << "\n";
  return d;
}

// ---------------------------------------------------------------------------

/// Returns true when every check passes.
inline bool cmd_grad_check(std::uint64_t seed, std::ostream& log) {
  bool ok = true;
  for (const auto& r : run_grad_check_suite(seed)) {
    char buf[200];
    std::snprintf(buf, sizeof buf, "%-4s %-48s max rel error %.3e (%zu coords)\n", r.passed() ? "ok" : "FAIL",
                  r.name.c_str(), r.max_rel_error, r.coords);
    log << buf;
    ok = ok && r.passed();
  }
  return ok;
}

}  // namespace ialseg
