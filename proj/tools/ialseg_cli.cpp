// ialseg: generate synthetic data, train, evaluate, compare, grad-check.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "ialseg/commands.hpp"

using namespace ialseg;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool needs_seed) {
  cmd->add_option("--config", c.config, "JSON config file")->check(CLI::ExistingFile);
  auto* s = cmd->add_option("--seed", c.seed, "random seed");
  if (needs_seed) s->description("random seed (required here or in the config)");
  cmd->add_option("--out", c.out, "output directory");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Importance-aware semantic segmentation toolkit"};
  app.require_subcommand(1);

  // gen-data
  Common gen;
  std::optional<std::size_t> n_train, n_eval;
  auto* gen_cmd = app.add_subcommand("gen-data", "write synthetic train/eval datasets");
  add_common(gen_cmd, gen, false);
  gen_cmd->add_option("--train", n_train, "training scenes (default 200)");
  gen_cmd->add_option("--eval", n_eval, "evaluation scenes (default 50)");

  // train
  Common tr;
  std::string data_dir, loss, net, hierarchy;
  std::optional<std::size_t> epochs, batch;
  auto* train_cmd = app.add_subcommand("train", "train a network");
  add_common(train_cmd, tr, true);
  train_cmd->add_option("--data", data_dir, "training dataset directory");
  train_cmd->add_option("--hierarchy", hierarchy, "hierarchy JSON overriding the dataset's");
  train_cmd->add_option("--loss", loss, "wce or ial")->check(CLI::IsMember({"wce", "ial"}));
  train_cmd->add_option("--net", net, "erf or bierf")->check(CLI::IsMember({"erf", "bierf"}));
  train_cmd->add_option("--epochs", epochs, "number of epochs");
  train_cmd->add_option("--batch-size", batch, "batch size");

  // eval
  EvalConfig ev;
  std::string ev_hierarchy;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--run", ev.run, "training output directory (holds run.json)")->required();
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "checkpoint (default <run>/final.ckpt)");
  eval_cmd->add_option("--data", ev.dataset, "evaluation dataset directory")->required();
  eval_cmd->add_option("--hierarchy", ev_hierarchy, "hierarchy JSON");
  eval_cmd->add_option("--out", ev.out, "output directory")->required();

  // compare
  std::string baseline, candidate, cmp_out;
  auto* cmp_cmd = app.add_subcommand("compare", "delta report of two evaluations");
  cmp_cmd->add_option("baseline", baseline, "baseline report.json")->required()->check(CLI::ExistingFile);
  cmp_cmd->add_option("candidate", candidate, "candidate report.json")->required()->check(CLI::ExistingFile);
  cmp_cmd->add_option("--out", cmp_out, "output directory")->required();

  // grad-check
  std::uint64_t gc_seed = 0;
  auto* gc_cmd = app.add_subcommand("grad-check", "finite-difference check of every gradient");
  gc_cmd->add_option("--seed", gc_seed, "random seed")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen_cmd->parsed()) {
      GenDataConfig c = gen.config.empty() ? GenDataConfig{} : gen_data_config_from_json(read_json_file(gen.config));
      if (gen.seed) c.scene.seed = *gen.seed;
      if (!gen.out.empty()) c.out = gen.out;
      if (n_train) c.train_count = *n_train;
      if (n_eval) c.eval_count = *n_eval;
      cmd_gen_data(c, std::cout);
    } else if (train_cmd->parsed()) {
      RunConfig c = tr.config.empty() ? RunConfig{} : run_config_from_json(read_json_file(tr.config));
      if (tr.seed) c.seed = tr.seed;
      if (!tr.out.empty()) c.out = tr.out;
      if (!data_dir.empty()) c.dataset = data_dir;
      if (!hierarchy.empty()) c.hierarchy = hierarchy;
      if (!loss.empty()) c.loss = parse_loss_kind(loss);
      if (!net.empty()) c.net.variant = parse_net_variant(net);
      if (epochs) c.optimizer.epochs = *epochs;
      if (batch) c.batch_size = *batch;
      if (!c.seed) {
        std::cerr << "train: a seed is required (--seed or \"seed\" in the config)\n";
        return 2;
      }
      cmd_train(c, std::cout);
    } else if (eval_cmd->parsed()) {
      if (!ev_hierarchy.empty()) ev.hierarchy = ev_hierarchy;
      cmd_eval(ev, std::cout);
    } else if (cmp_cmd->parsed()) {
      cmd_compare(baseline, candidate, cmp_out, std::cout);
    } else if (gc_cmd->parsed()) {
      if (!cmd_grad_check(gc_seed, std::cout)) {
        std::cerr << "grad-check failed\n";
        return 1;
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
