// Command-line entry point: data generation, training, conversion, probing
// and evaluation over the synthetic accent-conversion benchmark.
//
// Exit codes: 0 success, 1 usage error, 2 data/contract error, 3 numeric
// failure (non-finite loss).

#include <CLI11.hpp>
#include <filesystem>
#include <json.hpp>
#include <string>

#include "psdn/checkpoint.hpp"
#include "psdn/dataset.hpp"
#include "psdn/errors.hpp"
#include "psdn/eval.hpp"
#include "psdn/json_util.hpp"
#include "psdn/log.hpp"
#include "psdn/parallel.hpp"
#include "psdn/synthgen.hpp"
#include "psdn/tensor_io.hpp"
#include "psdn/train.hpp"

namespace {

using psdn::log_info;

struct GenDataArgs {
  std::string config_path;
  std::string out_dir;
  std::int64_t seed = -1;
};

int run_gen_data(const GenDataArgs& args) {
  psdn::GeneratorConfig gen_cfg;
  psdn::DatasetCounts counts;
  if (!args.config_path.empty()) {
    auto doc = psdn::load_json_file(args.config_path);
    psdn::JsonReader r(doc, args.config_path);
    if (r.has("generator"))
      gen_cfg = psdn::GeneratorConfig::from_json(r.sub("generator"));
    if (r.has("counts")) counts = psdn::DatasetCounts::from_json(r.sub("counts"));
    r.finish();
  }
  if (args.seed >= 0) gen_cfg.master_seed = static_cast<std::uint64_t>(args.seed);
  gen_cfg.validate();

  psdn::Generator gen(gen_cfg);
  auto manifest = gen.generate_dataset(counts, args.out_dir);
  log_info("manifest: " + (std::filesystem::path(args.out_dir) /
                           "manifest.jsonl").string() +
           " (" + std::to_string(manifest.entries.size()) + " entries, digest " +
           manifest.generator_config_digest + ")");
  return 0;
}

struct TrainArgs {
  std::string config_path;
  std::string data_path;
  std::string out_dir;
  std::string variant;
  bool no_augment = false;
  std::int64_t seed = -1;
  int workers = -1;
};

int run_train(const TrainArgs& args) {
  psdn::TrainConfig cfg;
  if (!args.config_path.empty())
    cfg = psdn::TrainConfig::from_json(psdn::load_json_file(args.config_path));
  if (!args.variant.empty()) cfg.variant = psdn::variant_from_name(args.variant);
  if (args.no_augment) cfg.augmentation = false;
  if (args.seed >= 0) cfg.seed = static_cast<std::uint64_t>(args.seed);
  if (args.workers >= 0) cfg.workers = args.workers;
  cfg.validate();
  log_info("train config: " + cfg.to_json().dump());

  auto data = psdn::load_dataset(args.data_path);
  psdn::Trainer trainer(data, cfg);
  trainer.train(args.out_dir);
  log_info("final checkpoint: " +
           (std::filesystem::path(args.out_dir) / "final").string());
  return 0;
}

struct ConvertArgs {
  std::string checkpoint_dir;
  std::string data_path;
  std::string out_dir;
  int workers = 0;
};

int run_convert(const ConvertArgs& args) {
  auto ckpt = psdn::load_checkpoint(args.checkpoint_dir);
  auto data = psdn::load_dataset(args.data_path);
  std::filesystem::create_directories(args.out_dir);

  nlohmann::ordered_json index;
  index["checkpoint_step"] = ckpt.step;
  index["variant"] = psdn::variant_name(ckpt.config.variant);
  index["dataset_digest"] = data.manifest.generator_config_digest;
  auto entries = nlohmann::ordered_json::array();

  std::vector<psdn::MatF> outputs(data.utterances.size());
  psdn::parallel_for(static_cast<int>(data.utterances.size()), args.workers,
                     [&](int i) {
                       const psdn::Utterance& u = data.utterances[i];
                       outputs[i] = ckpt.model->convert(u.bnf, u.mel);
                     });
  for (std::size_t i = 0; i < data.utterances.size(); ++i) {
    const psdn::Utterance& u = data.utterances[i];
    const std::string file = u.id + ".psdn";
    psdn::write_tensor(std::filesystem::path(args.out_dir) / file, outputs[i]);
    nlohmann::ordered_json e;
    e["id"] = u.id;
    e["file"] = file;
    e["frames"] = outputs[i].rows();
    entries.push_back(e);
  }
  index["entries"] = entries;
  psdn::save_json_file(std::filesystem::path(args.out_dir) / "index.json",
                       index);
  log_info("converted " + std::to_string(data.utterances.size()) +
           " utterances into " + args.out_dir);
  return 0;
}

struct EvalArgs {
  std::string checkpoint_dir;
  std::string data_path;
  std::string report_path;
  std::int64_t seed = 1;
  int workers = 0;
  bool probe_only = false;
};

int run_eval_cmd(const EvalArgs& args) {
  auto ckpt = psdn::load_checkpoint(args.checkpoint_dir);
  auto data = psdn::load_dataset(args.data_path);
  psdn::EvalConfig cfg;
  cfg.seed = static_cast<std::uint64_t>(args.seed);
  cfg.workers = args.workers;

  psdn::EvalReport report =
      args.probe_only ? psdn::run_probe(*ckpt.model, ckpt.step, data, cfg)
                      : psdn::run_eval(*ckpt.model, ckpt.step, data, cfg);
  psdn::write_report(args.report_path, report);
  log_info("report: " + args.report_path + " " + report.to_json().dump());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic accent-conversion benchmark: pseudo-siamese "
               "disentanglement training, oracle evaluation"};
  app.require_subcommand(1);

  GenDataArgs gen_args;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  gen->add_option("--config", gen_args.config_path,
                  "JSON with {generator, counts}");
  gen->add_option("--out", gen_args.out_dir, "Output directory")->required();
  gen->add_option("--seed", gen_args.seed, "Master seed override");

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--config", train_args.config_path, "TrainConfig JSON");
  train->add_option("--data", train_args.data_path, "Manifest path")
      ->required();
  train->add_option("--out", train_args.out_dir, "Output directory")
      ->required();
  train->add_option("--variant", train_args.variant,
                    "psdn | grl-only (overrides config)");
  train->add_flag("--no-augment", train_args.no_augment,
                  "Disable speaker augmentation");
  train->add_option("--seed", train_args.seed, "Seed override");
  train->add_option("--workers", train_args.workers, "Worker thread cap");

  ConvertArgs convert_args;
  auto* convert = app.add_subcommand("convert",
                                     "Convert utterances to the target accent");
  convert->add_option("--checkpoint", convert_args.checkpoint_dir,
                      "Checkpoint directory")->required();
  convert->add_option("--data", convert_args.data_path, "Manifest path")
      ->required();
  convert->add_option("--out", convert_args.out_dir, "Output directory")
      ->required();
  convert->add_option("--workers", convert_args.workers, "Worker thread cap");

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--checkpoint", eval_args.checkpoint_dir,
                   "Checkpoint directory")->required();
  eval->add_option("--data", eval_args.data_path, "Manifest path")->required();
  eval->add_option("--report", eval_args.report_path, "Report JSON path")
      ->required();
  eval->add_option("--seed", eval_args.seed, "Evaluation seed");
  eval->add_option("--workers", eval_args.workers, "Worker thread cap");

  EvalArgs probe_args;
  probe_args.probe_only = true;
  auto* probe = app.add_subcommand("probe",
                                   "Accent probe on frozen content features");
  probe->add_option("--checkpoint", probe_args.checkpoint_dir,
                    "Checkpoint directory")->required();
  probe->add_option("--data", probe_args.data_path, "Manifest path")
      ->required();
  probe->add_option("--report", probe_args.report_path, "Report JSON path")
      ->required();
  probe->add_option("--seed", probe_args.seed, "Evaluation seed");
  probe->add_option("--workers", probe_args.workers, "Worker thread cap");

  try {
    app.parse(argc, argv);
    if (gen->parsed()) return run_gen_data(gen_args);
    if (train->parsed()) return run_train(train_args);
    if (convert->parsed()) return run_convert(convert_args);
    if (eval->parsed()) return run_eval_cmd(eval_args);
    if (probe->parsed()) return run_eval_cmd(probe_args);
    return 1;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  } catch (const psdn::UsageError& e) {
    psdn::log_error(e.what());
    return 1;
  } catch (const psdn::NumericError& e) {
    psdn::log_error(e.what());
    return 3;
  } catch (const std::exception& e) {
    // DataError, IoError and anything else data-shaped.
    psdn::log_error(e.what());
    return 2;
  }
}
