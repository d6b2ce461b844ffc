#include <CLI11.hpp>

#include <exception>
#include <fstream>
#include <iostream>

#include "mvcc/trainer.hpp"

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

int gen_data(const std::string& config, const std::string& out) {
  const auto kv = mvcc::KeyValueConfig::load(config);
  const auto cfg = mvcc::DatasetConfig::from_config(kv);
  kv.require_all_used();
  mvcc::Dataset train = mvcc::generate_dataset(cfg, cfg.seed);
  train.manifest = mvcc::split(train, cfg.labeled_ratio, cfg.seed);
  const mvcc::Dataset eval = mvcc::generate_eval_dataset(cfg);
  const std::filesystem::path dir(out);
  mvcc::save_dataset(train, dir / "train");
  mvcc::save_dataset(eval, dir / "eval");
  write_text(dir / "dataset.cfg", cfg.to_text());
  std::cout << "wrote " << train.size() << " training images (" << train.labeled_indices().size() << " labeled) and "
            << eval.size() << " evaluation images to " << dir.string() << '\n';
  return 0;
}

int train(const std::string& config, const std::string& out) {
  const auto kv = mvcc::KeyValueConfig::load(config);
  const auto cfg = mvcc::TrainConfig::from_config(kv);
  kv.require_all_used();
  const std::filesystem::path dir(out);
  std::filesystem::create_directories(dir);
  const mvcc::TrainData data = mvcc::TrainData::load(cfg);
  mvcc::TrainState state;
  const mvcc::RunRecord rec = mvcc::run_experiment(cfg, data, &state);
  write_text(dir / "metrics.csv", mvcc::metrics_csv(cfg, rec));
  write_text(dir / "config.txt", rec.config_text);
  if (!rec.ok()) {
    std::cerr << "training aborted: " << rec.status << '\n';
    return 2;
  }
  mvcc::save_checkpoint(state.student, dir / "student.ckpt");
  mvcc::save_checkpoint(state.teacher.net, dir / "teacher.ckpt");
  std::cout << "variant " << mvcc::to_string(cfg.variant) << " seed " << cfg.seed << ": final mIoU " << rec.final_miou
            << " after " << rec.steps.size() << " steps (" << rec.wall_seconds << " s)\n";
  return 0;
}

int eval(const std::string& checkpoint, const std::string& data_dir) {
  const mvcc::SegNet net = mvcc::load_checkpoint(checkpoint);
  std::filesystem::path dir(data_dir);
  if (std::filesystem::exists(dir / "eval" / "manifest.txt")) dir /= "eval";
  const mvcc::Dataset ds = mvcc::load_dataset(dir, net.config.num_classes);
  if (ds.size() == 0) throw std::runtime_error("no images in " + dir.string());
  const mvcc::MiouResult r = mvcc::evaluate(net, ds);
  std::cout << "mIoU " << r.miou << '\n';
  for (std::size_t k = 0; k < r.iou.size(); ++k) {
    std::cout << "class " << k << " IoU ";
    if (r.present[k]) {
      std::cout << r.iou[k] << '\n';
    } else {
      std::cout << "n/a\n";
    }
  }
  return 0;
}

int suite(const std::string& config, std::size_t seeds, const std::string& out) {
  const auto kv = mvcc::KeyValueConfig::load(config);
  const auto cfgs = mvcc::expand_suite(kv);
  kv.require_all_used();
  const auto rows = mvcc::run_suite(cfgs, seeds);
  write_text(out, mvcc::suite_csv(rows));
  for (const auto& r : rows) {
    if (r.kind != "aggregate") continue;
    std::cout << mvcc::to_string(r.cfg.variant) << " w_u=" << r.cfg.weights.unsup << " w_cc=" << r.cfg.weights.cc
              << " eta=" << r.cfg.eta << ": mIoU " << r.final_miou << " ± " << r.miou_std << " over " << r.n_runs
              << " runs\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-view correlation consistency for semi-supervised segmentation"};
  app.require_subcommand(1);

  std::string config, out, checkpoint, data;
  std::size_t seeds = 5;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  gen->add_option("--config", config, "dataset config file")->required();
  gen->add_option("--out", out, "output directory")->required();

  auto* tr = app.add_subcommand("train", "Train one model");
  tr->add_option("--config", config, "training config file")->required();
  tr->add_option("--out", out, "output directory")->required();

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  ev->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  ev->add_option("--data", data, "dataset directory")->required();

  auto* su = app.add_subcommand("suite", "Run a multi-seed experiment suite");
  su->add_option("--config", config, "suite config file")->required();
  su->add_option("--seeds", seeds, "seeds per configuration")->required()->check(CLI::PositiveNumber);
  su->add_option("--out", out, "output CSV")->required();

  CLI11_PARSE(app, argc, argv);
  mvcc::configure_allocator();
  try {
    if (gen->parsed()) return gen_data(config, out);
    if (tr->parsed()) return train(config, out);
    if (ev->parsed()) return eval(checkpoint, data);
    if (su->parsed()) return suite(config, seeds, out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
