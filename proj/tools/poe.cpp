// poe: generate synthetic ordinal data, train probabilistic ordinal
// embedding models, evaluate their uncertainty, and sweep hyperparameters.

#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "poe/cli.hpp"

namespace {

std::string type_of(const std::exception& e) {
  if (dynamic_cast<const poe::ConfigError*>(&e)) return "config";
  if (dynamic_cast<const poe::CsvError*>(&e)) return "data";
  if (dynamic_cast<const poe::ModelFileError*>(&e)) return "model_file";
  if (dynamic_cast<const poe::ShapeError*>(&e)) return "shape";
  if (dynamic_cast<const poe::TrainingDiverged*>(&e)) return "divergence";
  if (dynamic_cast<const std::invalid_argument*>(&e)) return "argument";
  return "runtime";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Probabilistic ordinal embeddings"};
  app.require_subcommand(1);

  poe::RunRequest req;
  std::ostringstream cmdline;
  for (int i = 0; i < argc; ++i) cmdline << (i ? " " : "") << argv[i];
  req.command_line = cmdline.str();

  std::uint64_t seed = 0;
  std::string mode, head, metric, config, data, model, out;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config, "flat key = value config file");
    sub->add_option("--out", out, "primary output path")->required();
    sub->add_option("--seed", seed, "master seed (overrides config)");
  };
  auto training_flags = [&](CLI::App* sub) {
    sub->add_option("--mode", mode, "deterministic-baseline | p-emb | p-emb+ord | p-emb+vib | full-poe");
    sub->add_option("--head", head, "direct | classification | ranking");
    sub->add_option("--metric", metric, "skl | w2_squared");
  };

  auto* gen = app.add_subcommand("generate", "write a synthetic dataset (train CSV + .test.csv)");
  common(gen);

  auto* trn = app.add_subcommand("train", "train a model on a CSV dataset");
  common(trn);
  training_flags(trn);
  trn->add_option("--data", data, "training CSV")->required();

  auto* evl = app.add_subcommand("eval", "uncertainty analysis of a trained model");
  common(evl);
  evl->add_option("--model", model, "model file")->required();
  evl->add_option("--data", data, "test CSV")->required();
  evl->add_option("--corruption", req.corruption, "extra feature-noise levels")->delimiter(',');
  evl->add_flag("--example-tau", req.example_level_tau, "Kendall tau over examples instead of bins");

  auto* swp = app.add_subcommand("sweep", "train one model per hyperparameter value");
  common(swp);
  training_flags(swp);
  swp->add_option("--data", data, "dataset CSV to split (default: generate from config)");
  swp->add_option("--axis", req.axis, "margin | alpha | beta | T | metric")->required();
  swp->add_option("--values", req.values, "comma-separated values")->required()->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  CLI::App* sub = app.get_subcommands().front();
  req.config = config;
  req.data = data;
  req.model = model;
  req.out = out;
  if (sub->count("--seed")) req.seed = seed;
  if (!mode.empty()) req.mode = mode;
  if (!head.empty()) req.head = head;
  if (!metric.empty()) req.metric = metric;

  try {
    if (sub == gen) {
      const auto r = poe::cmd_generate(req);
      std::cout << "wrote " << r.train_path.string();
      if (!r.test_path.empty()) std::cout << " and " << r.test_path.string();
      std::cout << '\n';
    } else if (sub == trn) {
      const auto r = poe::cmd_train(req);
      std::cout << "trained " << r.steps << " steps, train MAE " << r.final_train_mae << '\n';
    } else if (sub == evl) {
      const auto r = poe::cmd_eval(req);
      std::cout << "MAE " << r.mae << ", accuracy " << r.accuracy << ", tau(uncertainty, MAE) "
                << r.kendall_tau_mae << '\n';
    } else if (sub == swp) {
      std::cout << poe::sweep_csv(req.axis, poe::cmd_sweep(req));
    }
  } catch (const std::exception& e) {
    nlohmann::ordered_json err;
    err["command"] = sub->get_name();
    err["error"] = type_of(e);
    err["message"] = e.what();
    std::cerr << "error: " << err.dump() << '\n';
    return 1;
  }
  return 0;
}
